//! Seeded, stream-separated randomness.
//!
//! Every run derives all of its randomness from one master seed through a
//! counter-based generator with independent streams: agent selection, agent
//! responsiveness, auditing and the per-component oracle noise each get their
//! own stream. Consuming draws from one stream never shifts another, which is
//! what makes the in-process solvers and the protocol simulator reproduce the
//! same sample paths from the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STREAM_SELECTION: u64 = 1;
const STREAM_RESPONSIVENESS: u64 = 2;
const STREAM_PROBLEM: u64 = 3;
const STREAM_ORACLE_BASE: u64 = 16;

fn stream(master: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}

/// Stream that picks the activated agent index each iteration.
pub fn selection_rng(master: u64) -> ChaCha8Rng {
    stream(master, STREAM_SELECTION)
}

/// Stream that decides whether a contacted agent responds.
pub fn responsiveness_rng(master: u64) -> ChaCha8Rng {
    stream(master, STREAM_RESPONSIVENESS)
}

/// Stream for randomized problem construction.
pub fn problem_rng(master: u64) -> ChaCha8Rng {
    stream(master, STREAM_PROBLEM)
}

/// Independent noise stream owned by the oracle of component `i`.
pub fn oracle_rng(master: u64, component: usize) -> ChaCha8Rng {
    stream(master, STREAM_ORACLE_BASE + component as u64)
}

/// Uniform draw of an agent index from `{0, ..., m-1}`.
pub fn draw_agent(rng: &mut ChaCha8Rng, m: usize) -> usize {
    rng.gen_range(0..m)
}
