//! Path-integral control update: exponentiated-cost weighting of sampled
//! control sequences, plus a cross-entropy variant used as a baseline.

use crate::sampling::RolloutBatch;
use crate::types::ControlSequence;
use crate::{Error, Result};

/// Total sampled cost per rollout: accumulated stage cost, the state
/// constraint violations weighted by `lambda_x`, the learned value at the
/// terminal state, and the terminal-set distance weighted by `lambda_cs`.
/// Diverged rollouts keep an infinite cost regardless of the other terms.
pub fn assemble_costs(
    batch: &RolloutBatch,
    terminal_values: &[f64],
    hull_distances: &[f64],
    lambda_x: f64,
    lambda_cs: f64,
) -> Vec<f64> {
    assert_eq!(batch.len(), terminal_values.len());
    assert_eq!(batch.len(), hull_distances.len());
    batch
        .evals
        .iter()
        .zip(terminal_values.iter().zip(hull_distances))
        .map(|(ev, (&v, &d))| {
            if ev.diverged {
                f64::INFINITY
            } else {
                ev.stage_sum + lambda_x * ev.violation_sum + v + lambda_cs * d
            }
        })
        .collect()
}

/// Exponentiated-cost weights w_i proportional to exp(-(J_i - J_min) / tau).
/// Subtracting the minimum keeps the exponentials in range without changing
/// the normalized result. Infinite (and NaN) costs get weight zero; if no
/// finite cost remains the whole batch is unusable.
pub fn importance_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let j_min = costs.iter().copied().filter(|j| j.is_finite()).fold(f64::INFINITY, f64::min);
    if !j_min.is_finite() {
        return Err(Error::NoFiniteCostSamples);
    }
    let mut weights: Vec<f64> = costs
        .iter()
        .map(|&j| if j.is_finite() { (-(j - j_min) / temperature).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    // total >= 1 because the minimizer contributes exp(0).
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Convex combination of control sequences under the given weights.
pub fn weighted_control_average(
    sequences: &[ControlSequence],
    weights: &[f64],
) -> ControlSequence {
    assert_eq!(sequences.len(), weights.len());
    assert!(!sequences.is_empty());
    let n_u = sequences[0].n_u();
    let horizon = sequences[0].horizon();
    let mut flat = vec![0.0; n_u * horizon];
    for (seq, &w) in sequences.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (acc, &v) in flat.iter_mut().zip(seq.as_flat()) {
            *acc += w * v;
        }
    }
    ControlSequence::from_checked(n_u, flat)
}

/// Mean of the elite fraction (lowest finite costs). Ties are broken toward
/// the lower sample index so the refit is deterministic.
pub fn cem_update(
    sequences: &[ControlSequence],
    costs: &[f64],
    elite_frac: f64,
) -> Result<ControlSequence> {
    assert_eq!(sequences.len(), costs.len());
    let mut order: Vec<usize> = (0..costs.len()).filter(|&i| costs[i].is_finite()).collect();
    if order.is_empty() {
        return Err(Error::NoFiniteCostSamples);
    }
    order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
    let n_elite = ((costs.len() as f64 * elite_frac).ceil() as usize)
        .clamp(1, order.len());
    let elite = &order[..n_elite];
    let w = 1.0 / n_elite as f64;
    let n_u = sequences[0].n_u();
    let mut flat = vec![0.0; sequences[0].as_flat().len()];
    for &i in elite {
        for (acc, &v) in flat.iter_mut().zip(sequences[i].as_flat()) {
            *acc += w * v;
        }
    }
    Ok(ControlSequence::from_checked(n_u, flat))
}

/// Iterated cross-entropy search with a fixed sampling deviation. The
/// evaluator maps a batch of sequences to their costs; the mean is refit to
/// the elites each round.
#[allow(clippy::too_many_arguments)]
pub fn cem_optimize(
    mut mean: ControlSequence,
    sigma: &[f64],
    bounds: &[(f64, f64)],
    n_samples: usize,
    elite_frac: f64,
    rounds: usize,
    master_seed: u64,
    iteration: u64,
    step: u64,
    evaluate: impl Fn(&[ControlSequence]) -> Vec<f64>,
) -> Result<ControlSequence> {
    for round in 0..rounds {
        let samples = crate::sampling::sample_control_sequences(
            &mean,
            sigma,
            bounds,
            n_samples,
            master_seed,
            iteration,
            step,
            round as u64,
        );
        let costs = evaluate(&samples);
        mean = cem_update(&samples, &costs, elite_frac)?;
    }
    Ok(mean)
}
