//! Per-iteration run instrumentation.

/// One logged iteration. Gap fields are `None` when the problem has no known
/// optimum; counter fields are cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// psi(output iterate) - psi*
    pub psi_gap: Option<f64>,
    /// P(x^t, x*)
    pub p_to_opt: Option<f64>,
    /// Q(output iterate, x*)
    pub q_gap: Option<f64>,
    pub exact_grads: u64,
    pub stochastic_samples: u64,
    pub comm_rounds: u64,
    pub retries: u64,
    pub wall_ns: u128,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    /// Appends a record; iterations must be strictly increasing and counters
    /// monotone.
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                rec.iteration > last.iteration,
                "trace iterations must increase"
            );
            assert!(
                rec.exact_grads >= last.exact_grads
                    && rec.stochastic_samples >= last.stochastic_samples
                    && rec.comm_rounds >= last.comm_rounds
                    && rec.retries >= last.retries,
                "trace counters must be monotone"
            );
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Record at a given iteration, if that iteration was logged.
    pub fn at_iteration(&self, t: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.iteration == t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, grads: u64) -> TraceRecord {
        TraceRecord {
            iteration: t,
            psi_gap: None,
            p_to_opt: None,
            q_gap: None,
            exact_grads: grads,
            stochastic_samples: 0,
            comm_rounds: 0,
            retries: 0,
            wall_ns: 0,
        }
    }

    #[test]
    fn push_enforces_monotonicity() {
        let mut tr = RunTrace::new();
        tr.push(rec(1, 1));
        tr.push(rec(2, 3));
        assert_eq!(tr.len(), 2);
    }

    #[test]
    #[should_panic(expected = "monotone")]
    fn decreasing_counters_panic() {
        let mut tr = RunTrace::new();
        tr.push(rec(1, 5));
        tr.push(rec(2, 3));
    }
}
