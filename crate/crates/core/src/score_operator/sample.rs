use serde::{Deserialize, Serialize};

use super::net::ScoreNet;
use super::operator::ScoreOperator;
use crate::distributions::SampleBatch;
use crate::error::Result;
use crate::numerics::{Matrix, ParameterStore};
use crate::sde::{probability_flow_sample, reverse_sde_sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    ProbabilityFlow,
    ReverseSde,
}

/// Generates `n` samples for the distribution embedded as `u`.
#[allow(clippy::too_many_arguments)]
pub fn sample_from_family<N: ScoreNet>(
    op: &ScoreOperator<N>,
    store: &ParameterStore,
    u: &[f64],
    n: usize,
    sampler: Sampler,
    steps: usize,
    seed: u64,
    family_id: &str,
) -> Result<SampleBatch> {
    let mut score = |x: &Matrix, t: f64| op.score_single(store, u, x, t);
    let d = op.net.data_dim();
    let data = match sampler {
        Sampler::ProbabilityFlow => probability_flow_sample(&op.sde, &mut score, n, d, steps, seed)?,
        Sampler::ReverseSde => reverse_sde_sample(&op.sde, &mut score, n, d, steps, seed)?,
    };
    Ok(SampleBatch::new(data, family_id, seed))
}
