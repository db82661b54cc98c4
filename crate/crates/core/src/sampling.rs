//! Truncated-normal control sampling and batched open-loop rollouts.
//!
//! Control perturbations are drawn per coordinate through the inverse CDF of
//! the bound-conditioned normal, so every sampled sequence respects the input
//! box exactly and no rejection loop is needed. Each sample index gets its own
//! keyed RNG stream, which makes batches independent of evaluation order and
//! lets a resumed run reproduce them bit for bit.

use crate::rng::{self, role};
use crate::systems::Environment;
use crate::types::ControlSequence;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// One draw from a normal with mean `mean` and deviation `std`, conditioned
/// on the interval [lo, hi].
pub fn truncated_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(lo <= hi, "empty truncation interval");
    if !(std > 0.0) {
        return mean.clamp(lo, hi);
    }
    if lo >= hi {
        return lo;
    }
    let a = (lo - mean) / std;
    let b = (hi - mean) / std;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let (ca, cb) = (unit.cdf(a), unit.cdf(b));
    if cb - ca <= 1e-300 {
        // The interval carries no numerical mass; snap to the nearer bound.
        return if a > 0.0 { lo } else { hi };
    }
    let p = ca + rng.gen_range(0.0..1.0) * (cb - ca);
    let z = unit.inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16));
    (mean + std * z).clamp(lo, hi)
}

/// Draw `n_samples` control sequences around `mean`, one keyed stream per
/// sample. Values are row-major over (step, input coordinate). `round`
/// separates repeated draws within one control step (e.g. refit loops).
pub fn sample_control_sequences(
    mean: &ControlSequence,
    sigma: &[f64],
    bounds: &[(f64, f64)],
    n_samples: usize,
    master_seed: u64,
    iteration: u64,
    step: u64,
    round: u64,
) -> Vec<ControlSequence> {
    let n_u = sigma.len();
    assert_eq!(bounds.len(), n_u);
    let horizon = mean.horizon();
    (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng =
                rng::stream(master_seed, &[role::SAMPLER, iteration, step, round, s as u64]);
            let mut data = Vec::with_capacity(horizon * n_u);
            for k in 0..horizon {
                let row = mean.row(k);
                for j in 0..n_u {
                    data.push(truncated_normal(
                        row[j],
                        sigma[j],
                        bounds[j].0,
                        bounds[j].1,
                        &mut rng,
                    ));
                }
            }
            ControlSequence::from_checked(n_u, data)
        })
        .collect()
}

/// Penalty coefficient pairs drawn uniformly from [0, lambda_max]^2.
pub fn sample_lambda_pairs(rng: &mut impl Rng, p: usize, lambda_max: f64) -> Vec<(f64, f64)> {
    (0..p)
        .map(|_| (rng.gen_range(0.0..=lambda_max), rng.gen_range(0.0..=lambda_max)))
        .collect()
}

/// Result of rolling one control sequence through the planning model.
#[derive(Debug, Clone)]
pub struct RolloutEval {
    /// (horizon + 1) states, flat row-major; zero-filled past a divergence.
    pub states: Vec<f64>,
    /// Sum of stage costs h(x_k, u_k) for k = 0..horizon-1.
    pub stage_sum: f64,
    /// Sum of constraint violation depths d(x_k) for k = 0..horizon-1.
    pub violation_sum: f64,
    /// Violation depth at the terminal state.
    pub terminal_violation: f64,
    /// Largest violation depth over all horizon + 1 states.
    pub max_violation: f64,
    /// True when the dynamics produced a non-finite state or rejected an
    /// input; such samples carry infinite cost and are otherwise ignored.
    pub diverged: bool,
}

impl RolloutEval {
    pub fn state(&self, n_x: usize, k: usize) -> &[f64] {
        &self.states[k * n_x..(k + 1) * n_x]
    }

    pub fn terminal_state(&self, n_x: usize) -> &[f64] {
        let t = self.states.len() / n_x - 1;
        self.state(n_x, t)
    }

    pub fn admissible(&self) -> bool {
        !self.diverged && self.max_violation == 0.0
    }
}

/// Roll a single sequence from `x0` with the noise-free planning model.
pub fn rollout_sequence(env: &dyn Environment, x0: &[f64], seq: &ControlSequence) -> RolloutEval {
    let plant = env.plant();
    let n_x = plant.n_x();
    let horizon = seq.horizon();
    let mut states = vec![0.0; (horizon + 1) * n_x];
    states[..n_x].copy_from_slice(x0);
    let mut stage_sum = 0.0;
    let mut violation_sum = 0.0;
    let mut max_violation: f64 = 0.0;
    for k in 0..horizon {
        let (head, tail) = states.split_at_mut((k + 1) * n_x);
        let x = &head[k * n_x..];
        let u = seq.row(k);
        let d = env.admissible_distance(x);
        violation_sum += d;
        max_violation = max_violation.max(d);
        stage_sum += env.stage_cost(x, u);
        if plant.plan_step(x, u, &mut tail[..n_x]).is_err() {
            for v in &mut states[(k + 1) * n_x..] {
                *v = 0.0;
            }
            return RolloutEval {
                states,
                stage_sum: f64::INFINITY,
                violation_sum: f64::INFINITY,
                terminal_violation: f64::INFINITY,
                max_violation: f64::INFINITY,
                diverged: true,
            };
        }
    }
    let terminal_violation = env.admissible_distance(&states[horizon * n_x..]);
    max_violation = max_violation.max(terminal_violation);
    RolloutEval {
        states,
        stage_sum,
        violation_sum,
        terminal_violation,
        max_violation,
        diverged: false,
    }
}

/// Batch of open-loop rollouts sharing an initial state.
pub struct RolloutBatch {
    pub n_x: usize,
    pub horizon: usize,
    pub evals: Vec<RolloutEval>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.evals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evals.is_empty()
    }

    pub fn terminal_state(&self, i: usize) -> &[f64] {
        self.evals[i].terminal_state(self.n_x)
    }
}

pub fn rollout_batch(
    env: &dyn Environment,
    x0: &[f64],
    sequences: &[ControlSequence],
) -> RolloutBatch {
    let horizon = sequences.first().map_or(0, |s| s.horizon());
    let evals: Vec<RolloutEval> = sequences
        .par_iter()
        .map(|seq| rollout_sequence(env, x0, seq))
        .collect();
    RolloutBatch { n_x: env.plant().n_x(), horizon, evals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{PointMassConfig, PointMassEnv};

    fn unit_normal() -> Normal {
        Normal::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn draws_stay_inside_bounds() {
        let mut rng = crate::rng::stream(7, &[0]);
        for _ in 0..5000 {
            let v = truncated_normal(0.8, 0.5, -1.0, 1.0, &mut rng);
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn zero_std_returns_clamped_mean() {
        let mut rng = crate::rng::stream(7, &[1]);
        assert_eq!(truncated_normal(0.3, 0.0, -1.0, 1.0, &mut rng), 0.3);
        assert_eq!(truncated_normal(5.0, 0.0, -1.0, 1.0, &mut rng), 1.0);
        assert_eq!(truncated_normal(-5.0, 0.0, -1.0, 1.0, &mut rng), -1.0);
    }

    #[test]
    fn far_outside_mean_snaps_to_nearest_bound() {
        let mut rng = crate::rng::stream(7, &[2]);
        assert_eq!(truncated_normal(1e6, 1.0, -1.0, 1.0, &mut rng), 1.0);
        assert_eq!(truncated_normal(-1e6, 1.0, -1.0, 1.0, &mut rng), -1.0);
    }

    #[test]
    fn empirical_cdf_matches_truncated_normal() {
        // Kolmogorov-Smirnov distance between 1e5 draws and the analytic
        // truncated CDF. The 0.1% critical value at this sample size is about
        // 0.0062, so 0.01 gives a comfortable margin.
        let (mean, std, lo, hi) = (0.4, 0.7, -1.0, 1.0);
        let mut rng = crate::rng::stream(11, &[3]);
        let n = 100_000;
        let mut draws: Vec<f64> =
            (0..n).map(|_| truncated_normal(mean, std, lo, hi, &mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let unit = unit_normal();
        let ca = unit.cdf((lo - mean) / std);
        let cb = unit.cdf((hi - mean) / std);
        let cdf = |x: f64| (unit.cdf((x - mean) / std) - ca) / (cb - ca);
        let mut dmax: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let f = cdf(x);
            let lo_emp = i as f64 / n as f64;
            let hi_emp = (i + 1) as f64 / n as f64;
            dmax = dmax.max((f - lo_emp).abs()).max((f - hi_emp).abs());
        }
        assert!(dmax < 0.01, "KS distance {dmax}");
    }

    #[test]
    fn symmetric_truncation_has_zero_mean() {
        let mut rng = crate::rng::stream(13, &[4]);
        let n = 50_000;
        let sum: f64 = (0..n).map(|_| truncated_normal(0.0, 0.6, -1.0, 1.0, &mut rng)).sum();
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn sample_batches_are_reproducible_and_distinct() {
        let mean = ControlSequence::zeros(2, 5);
        let sigma = [0.3, 0.3];
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let a = sample_control_sequences(&mean, &sigma, &bounds, 8, 42, 3, 17, 0);
        let b = sample_control_sequences(&mean, &sigma, &bounds, 8, 42, 3, 17, 0);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_flat(), y.as_flat());
        }
        let c = sample_control_sequences(&mean, &sigma, &bounds, 8, 42, 3, 18, 0);
        assert_ne!(a[0].as_flat(), c[0].as_flat());
        assert_ne!(a[0].as_flat(), a[1].as_flat());
    }

    #[test]
    fn sample_index_streams_are_order_free() {
        // Drawing a wider batch must not change the sequences already drawn:
        // each sample owns its stream.
        let mean = ControlSequence::zeros(2, 4);
        let sigma = [0.2, 0.4];
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let narrow = sample_control_sequences(&mean, &sigma, &bounds, 3, 9, 1, 2, 0);
        let wide = sample_control_sequences(&mean, &sigma, &bounds, 64, 9, 1, 2, 0);
        for i in 0..3 {
            assert_eq!(narrow[i].as_flat(), wide[i].as_flat());
        }
    }

    #[test]
    fn lambda_pairs_cover_the_box() {
        let mut rng = crate::rng::stream(5, &[crate::rng::role::LAMBDA, 0]);
        let pairs = sample_lambda_pairs(&mut rng, 2000, 2500.0);
        assert_eq!(pairs.len(), 2000);
        let mut hi = 0.0_f64;
        for (a, b) in &pairs {
            assert!((0.0..=2500.0).contains(a) && (0.0..=2500.0).contains(b));
            hi = hi.max(*a).max(*b);
        }
        assert!(hi > 2000.0, "uniform draws should approach the upper bound, max {hi}");
    }

    #[test]
    fn rollout_matches_sequential_oracle() {
        let env = PointMassEnv::new(PointMassConfig::default());
        let mean = ControlSequence::zeros(2, 12);
        let sigma = [0.4, 0.4];
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let seqs = sample_control_sequences(&mean, &sigma, &bounds, 6, 31, 0, 0, 0);
        let x0 = [2.0, 1.0, 0.5, -0.25];
        let batch = rollout_batch(&env, &x0, &seqs);
        for (i, seq) in seqs.iter().enumerate() {
            // Independent sequential re-rollout.
            let mut x = x0.to_vec();
            let mut stage = 0.0;
            let mut viol = 0.0;
            for k in 0..seq.horizon() {
                stage += env.stage_cost(&x, seq.row(k));
                viol += env.admissible_distance(&x);
                assert_eq!(batch.evals[i].state(4, k), x.as_slice());
                let mut next = [0.0; 4];
                env.plant().plan_step(&x, seq.row(k), &mut next).unwrap();
                x = next.to_vec();
            }
            assert_eq!(batch.terminal_state(i), x.as_slice());
            assert_eq!(batch.evals[i].stage_sum, stage);
            assert_eq!(batch.evals[i].violation_sum, viol);
            assert_eq!(
                batch.evals[i].terminal_violation,
                env.admissible_distance(&x)
            );
            assert!(!batch.evals[i].diverged);
        }
    }

    #[test]
    fn diverging_rollout_is_flagged_with_infinite_cost() {
        let env = PointMassEnv::new(PointMassConfig::default());
        // A state near the float ceiling overflows on the first update:
        // 1.7e308 + 0.1 * 1.7e308 exceeds f64::MAX.
        let x0 = [1.7e308, 0.0, 1.7e308, 0.0];
        let seqs = vec![ControlSequence::zeros(5, 2)];
        let batch = rollout_batch(&env, &x0, &seqs);
        assert!(batch.evals[0].diverged);
        assert_eq!(batch.evals[0].stage_sum, f64::INFINITY);
        assert!(!batch.evals[0].admissible());
    }

    #[test]
    fn admissibility_reflects_max_violation() {
        let env = PointMassEnv::new(PointMassConfig::default());
        // Straight through the obstacle: inadmissible.
        let through = ControlSequence::zeros(10, 2);
        let hit = rollout_sequence(&env, &[25.0, 0.0, 3.0, 0.0], &through);
        assert!(!hit.admissible());
        assert!(hit.max_violation > 0.0);
        // Far from the obstacle: admissible.
        let clear = rollout_sequence(&env, &[0.0, 20.0, 1.0, 0.0], &through);
        assert!(clear.admissible());
        assert_eq!(clear.max_violation, 0.0);
    }
}
