//! Experiment configuration: a flat `key = value` text format with a fixed
//! schema. Unknown keys are rejected with their field path; CLI `--set`
//! overrides are applied on top of the file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::distsim::{ReselectRule, SimMode};
use crate::error::{Error, Result};
use crate::problems::{DataFormat, PartitionScheme};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic {
        m: usize,
        n: usize,
        mu: f64,
        lmin: f64,
        lmax: f64,
        seed: u64,
    },
    Logistic {
        dataset: PathBuf,
        m: usize,
        lambda: f64,
        partition: PartitionScheme,
        format: DataFormat,
        shuffle_seed: Option<u64>,
        reference_tol: Option<f64>,
    },
    SymmetricLogistic {
        m: usize,
        n: usize,
        pairs: usize,
        lambda: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Gem,
    Rgem,
    RgemStochastic,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyName {
    StronglyConvex,
    SmoothA,
    SmoothB,
    ZeroInit,
    ExactInit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponsivenessSpec {
    Uniform(f64),
    PerAgent(Vec<f64>),
}

impl ResponsivenessSpec {
    pub fn expand(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            ResponsivenessSpec::Uniform(p) => Ok(vec![*p; m]),
            ResponsivenessSpec::PerAgent(v) => {
                if v.len() != m {
                    return Err(Error::Config(format!(
                        "solver.responsiveness lists {} values for {m} agents",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub policy: PolicyName,
    pub k: usize,
    pub sigma: f64,
    pub responsiveness: ResponsivenessSpec,
    pub retry_cap: usize,
    pub reselect: ReselectRule,
    pub persist_gradients: bool,
    pub mode: SimMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum X0Spec {
    Zeros,
    Ones,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub seeds: Vec<u64>,
    pub x0: X0Spec,
    pub trace_every: usize,
    pub timing: bool,
    pub audit: bool,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub message_log: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub m: Vec<usize>,
    pub cond: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: f64,
    pub n: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub budget_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    pub run: RunSpec,
    pub output: OutputSpec,
    pub sweep: Option<SweepSpec>,
}

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GRADEX_OUT_DIR";

const KNOWN_KEYS: &[&str] = &[
    "problem.family",
    "problem.m",
    "problem.n",
    "problem.mu",
    "problem.cond",
    "problem.lmin",
    "problem.lmax",
    "problem.seed",
    "problem.pairs",
    "problem.dataset",
    "problem.lambda",
    "problem.partition",
    "problem.format",
    "problem.shuffle_seed",
    "problem.reference_tol",
    "solver.kind",
    "solver.policy",
    "solver.k",
    "solver.sigma",
    "solver.responsiveness",
    "solver.retry_cap",
    "solver.reselect",
    "solver.persist_gradients",
    "solver.mode",
    "run.seeds",
    "run.x0",
    "run.trace_every",
    "run.timing",
    "run.audit",
    "run.eps",
    "output.dir",
    "output.message_log",
    "sweep.m",
    "sweep.cond",
    "sweep.sigma",
    "sweep.eps",
    "sweep.n",
    "sweep.k",
    "sweep.seeds",
    "sweep.budget_factor",
];

/// Raw `key = value` map, before typing.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        map.insert(key, value);
    }
    Ok(map)
}

/// Applies `key=value` override strings (from CLI flags) on top of the map.
pub fn apply_overrides(map: &mut BTreeMap<String, String>, sets: &[String]) -> Result<()> {
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set needs key=value, got `{s}`")))?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(())
}

struct Fields<'a> {
    map: &'a BTreeMap<String, String>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn req(&self, key: &str) -> Result<&'a str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse::<T>()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.parse::<f64>(key, v)).transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| self.parse::<usize>(key, v))
            .transpose()
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| self.parse::<u64>(key, v)).transpose()
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "`{key}`: expected true/false, got `{other}`"
            ))),
        }
    }

    fn list_f64(&self, key: &str, raw: &str) -> Result<Vec<f64>> {
        raw.split(',')
            .map(|t| self.parse::<f64>(key, t.trim()))
            .collect()
    }

    fn list_u64(&self, key: &str, raw: &str) -> Result<Vec<u64>> {
        raw.split(',')
            .map(|t| self.parse::<u64>(key, t.trim()))
            .collect()
    }
}

/// Types and validates a raw key/value map into an [`ExperimentConfig`].
pub fn build_config(map: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let f = Fields { map };

    let problem = match f.req("problem.family")? {
        "quadratic" => {
            let m = f.usize_or("problem.m", 4)?;
            let n = f.usize_or("problem.n", 20)?;
            let mu = f.f64_or("problem.mu", 1.0)?;
            let lmax = match (f.f64_opt("problem.lmax")?, f.f64_opt("problem.cond")?) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "`problem.lmax` and `problem.cond` are mutually exclusive".into(),
                    ))
                }
                (Some(l), None) => l,
                (None, Some(c)) => {
                    if mu <= 0.0 {
                        return Err(Error::Config("`problem.cond` needs problem.mu > 0".into()));
                    }
                    c * mu
                }
                (None, None) => {
                    return Err(Error::Config(
                        "quadratic problems need `problem.lmax` or `problem.cond`".into(),
                    ))
                }
            };
            let lmin = f.f64_or("problem.lmin", lmax / 10.0)?;
            if !(lmin > 0.0 && lmax >= lmin) {
                return Err(Error::Config(
                    "need 0 < problem.lmin <= problem.lmax".into(),
                ));
            }
            ProblemSpec::Quadratic {
                m,
                n,
                mu,
                lmin,
                lmax,
                seed: f.u64_opt("problem.seed")?.unwrap_or(0),
            }
        }
        "logistic" => ProblemSpec::Logistic {
            dataset: PathBuf::from(f.req("problem.dataset")?),
            m: f.usize_or("problem.m", 4)?,
            lambda: f.f64_or("problem.lambda", 0.0)?,
            partition: match f.get("problem.partition").unwrap_or("round_robin") {
                "round_robin" => PartitionScheme::RoundRobin,
                "contiguous" => PartitionScheme::Contiguous,
                other => {
                    return Err(Error::Config(format!(
                        "`problem.partition`: unknown scheme `{other}`"
                    )))
                }
            },
            format: match f.get("problem.format").unwrap_or("sparse") {
                "sparse" => DataFormat::SparseText,
                "csv" => DataFormat::DenseCsv,
                other => {
                    return Err(Error::Config(format!(
                        "`problem.format`: unknown `{other}`"
                    )))
                }
            },
            shuffle_seed: f.u64_opt("problem.shuffle_seed")?,
            reference_tol: f.f64_opt("problem.reference_tol")?,
        },
        "logistic_symmetric" => ProblemSpec::SymmetricLogistic {
            m: f.usize_or("problem.m", 4)?,
            n: f.usize_or("problem.n", 10)?,
            pairs: f.usize_or("problem.pairs", 20)?,
            lambda: f.f64_or("problem.lambda", 0.0)?,
            seed: f.u64_opt("problem.seed")?.unwrap_or(0),
        },
        other => {
            return Err(Error::Config(format!(
                "`problem.family`: unknown `{other}`"
            )))
        }
    };

    let kind = match f.req("solver.kind")? {
        "gem" => SolverKind::Gem,
        "rgem" => SolverKind::Rgem,
        "rgem_stochastic" => SolverKind::RgemStochastic,
        "simulate" => SolverKind::Simulate,
        other => return Err(Error::Config(format!("`solver.kind`: unknown `{other}`"))),
    };
    let policy = match f.req("solver.policy")? {
        "strongly_convex" => PolicyName::StronglyConvex,
        "smooth_a" => PolicyName::SmoothA,
        "smooth_b" => PolicyName::SmoothB,
        "zero_init" => PolicyName::ZeroInit,
        "exact_init" => PolicyName::ExactInit,
        other => return Err(Error::Config(format!("`solver.policy`: unknown `{other}`"))),
    };
    match kind {
        SolverKind::Gem => {
            if !matches!(
                policy,
                PolicyName::StronglyConvex | PolicyName::SmoothA | PolicyName::SmoothB
            ) {
                return Err(Error::Config(
                    "`solver.policy`: gem takes strongly_convex | smooth_a | smooth_b".into(),
                ));
            }
        }
        _ => {
            if !matches!(policy, PolicyName::ZeroInit | PolicyName::ExactInit) {
                return Err(Error::Config(
                    "`solver.policy`: randomized solvers take zero_init | exact_init".into(),
                ));
            }
        }
    }
    let k = f
        .usize_opt("solver.k")?
        .ok_or_else(|| Error::Config("missing `solver.k`".into()))?;
    if k == 0 {
        return Err(Error::Config("`solver.k` must be >= 1".into()));
    }
    let responsiveness = match f.get("solver.responsiveness") {
        None => ResponsivenessSpec::Uniform(1.0),
        Some(raw) if raw.contains(',') => {
            ResponsivenessSpec::PerAgent(f.list_f64("solver.responsiveness", raw)?)
        }
        Some(raw) => ResponsivenessSpec::Uniform(f.parse("solver.responsiveness", raw)?),
    };
    let solver = SolverSpec {
        kind,
        policy,
        k,
        sigma: f.f64_or("solver.sigma", 0.0)?,
        responsiveness,
        retry_cap: f.usize_or("solver.retry_cap", 10_000)?,
        reselect: match f.get("solver.reselect").unwrap_or("fresh") {
            "fresh" => ReselectRule::FreshDraw,
            "same" => ReselectRule::SameAgent,
            other => {
                return Err(Error::Config(format!(
                    "`solver.reselect`: unknown `{other}`"
                )))
            }
        },
        persist_gradients: f.bool_or("solver.persist_gradients", true)?,
        mode: match f.get("solver.mode").unwrap_or("deterministic") {
            "deterministic" => SimMode::Deterministic,
            "stochastic" => SimMode::Stochastic,
            other => return Err(Error::Config(format!("`solver.mode`: unknown `{other}`"))),
        },
    };

    let seeds = match f.get("run.seeds") {
        None => vec![0],
        Some(raw) => f.list_u64("run.seeds", raw)?,
    };
    if seeds.is_empty() {
        return Err(Error::Config("`run.seeds` must not be empty".into()));
    }
    let run = RunSpec {
        seeds,
        x0: match f.get("run.x0").unwrap_or("zeros") {
            "zeros" => X0Spec::Zeros,
            "ones" => X0Spec::Ones,
            other => match other.strip_prefix("value:") {
                Some(v) => X0Spec::Constant(f.parse("run.x0", v)?),
                None => return Err(Error::Config(format!("`run.x0`: unknown `{other}`"))),
            },
        },
        trace_every: f.usize_or("run.trace_every", 1)?,
        timing: f.bool_or("run.timing", false)?,
        audit: f.bool_or("run.audit", false)?,
        eps: f.f64_opt("run.eps")?,
    };

    let output = OutputSpec {
        dir: f
            .get("output.dir")
            .map(PathBuf::from)
            .or_else(|| std::env::var(OUTPUT_DIR_ENV).ok().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("gradex-out")),
        message_log: f.bool_or("output.message_log", false)?,
    };

    let sweep = if map.keys().any(|k| k.starts_with("sweep.")) {
        let m = f
            .req("sweep.m")?
            .split(',')
            .map(|t| f.parse::<usize>("sweep.m", t.trim()))
            .collect::<Result<Vec<_>>>()?;
        let cond = f.list_f64("sweep.cond", f.req("sweep.cond")?)?;
        if m.is_empty() || cond.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        Some(SweepSpec {
            m,
            cond,
            sigma: match f.get("sweep.sigma") {
                None => vec![],
                Some(raw) => f.list_f64("sweep.sigma", raw)?,
            },
            eps: f.f64_or("sweep.eps", 1e-6)?,
            n: f.usize_or("sweep.n", 20)?,
            k: f.usize_or("sweep.k", 200)?,
            seeds: match f.get("sweep.seeds") {
                None => (0..5).collect(),
                Some(raw) => f.list_u64("sweep.seeds", raw)?,
            },
            budget_factor: f.f64_or("sweep.budget_factor", 10.0)?,
        })
    } else {
        None
    };

    Ok(ExperimentConfig {
        problem,
        solver,
        run,
        output,
        sweep,
    })
}

/// Parses config text plus overrides into a validated configuration.
pub fn load_config(text: &str, sets: &[String]) -> Result<ExperimentConfig> {
    let mut map = parse_kv(text)?;
    apply_overrides(&mut map, sets)?;
    build_config(&map)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
problem.family = quadratic
problem.m = 4
problem.n = 8
problem.mu = 1.0
problem.cond = 50
solver.kind = rgem
solver.policy = zero_init
solver.k = 100
run.seeds = 1,2,3
output.dir = /tmp/out
";

    #[test]
    fn parses_base_config() {
        let cfg = load_config(BASE, &[]).unwrap();
        match cfg.problem {
            ProblemSpec::Quadratic { m, n, mu, lmax, .. } => {
                assert_eq!((m, n), (4, 8));
                assert_eq!(mu, 1.0);
                assert_eq!(lmax, 50.0);
            }
            _ => panic!("wrong family"),
        }
        assert_eq!(cfg.solver.kind, SolverKind::Rgem);
        assert_eq!(cfg.run.seeds, vec![1, 2, 3]);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn rejects_unknown_keys_with_path() {
        let text = format!("{BASE}solver.bogus = 1\n");
        let err = load_config(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("solver.bogus"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let cfg = load_config(BASE, &["solver.k=7".into()]).unwrap();
        assert_eq!(cfg.solver.k, 7);
    }

    #[test]
    fn gem_policy_pairing_enforced() {
        let bad = BASE.replace("solver.kind = rgem", "solver.kind = gem");
        let err = load_config(&bad, &[]).unwrap_err();
        assert!(err.to_string().contains("solver.policy"), "{err}");
    }

    #[test]
    fn responsiveness_list_expansion() {
        let text = format!("{BASE}solver.responsiveness = 0.5, 1.0, 0.25, 0.75\n");
        let cfg = load_config(&text, &[]).unwrap();
        let ps = cfg.solver.responsiveness.expand(4).unwrap();
        assert_eq!(ps, vec![0.5, 1.0, 0.25, 0.75]);
        assert!(cfg.solver.responsiveness.expand(3).is_err());
    }

    #[test]
    fn sweep_block_requires_grids() {
        let text = format!("{BASE}sweep.eps = 1e-5\n");
        assert!(load_config(&text, &[]).is_err());
        let text = format!("{BASE}sweep.m = 4,16\nsweep.cond = 100,400\n");
        let cfg = load_config(&text, &[]).unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.m, vec![4, 16]);
        assert_eq!(sweep.cond, vec![100.0, 400.0]);
        assert_eq!(sweep.eps, 1e-6);
    }
}
