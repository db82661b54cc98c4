//! Sampled safe set: states from feasible episodes with recorded costs-to-go.
//!
//! The set only ever grows, so the enclosure 𝒮⁰ ⊆ 𝒮¹ ⊆ … holds by
//! construction. Hull distance queries run against the convex hull of the k
//! nearest stored states under a per-coordinate normalized metric; the scale
//! for each coordinate is the dataset standard deviation floored by a fraction
//! of the environment's characteristic magnitude, so near-constant coordinates
//! cannot dominate the metric.

use crate::hull::{min_norm_point, NeighborIndex, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::types::{cost_to_go, IterationRecord, StateVector};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One stored state with its recorded cost-to-go and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSetEntry {
    pub state: StateVector,
    pub cost_to_go: f64,
    /// Iteration the state was recorded in (0 = demonstration).
    pub iteration: usize,
    /// Time index within that iteration's trajectory.
    pub time: usize,
}

/// Metric configuration for hull-distance queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullMetric {
    /// Normalize each coordinate by its dataset standard deviation.
    pub normalize: bool,
    /// Floor on the effective standard deviation per coordinate, as an
    /// absolute value in raw units. Guards against degenerate scales on
    /// coordinates that barely vary in the data.
    pub scale_floor: Vec<f64>,
}

impl HullMetric {
    pub fn normalized(scale_floor: Vec<f64>) -> Self {
        Self { normalize: true, scale_floor }
    }

    pub fn raw(n_x: usize) -> Self {
        Self { normalize: false, scale_floor: vec![1e-9; n_x] }
    }
}

/// File format version for the safe-set JSON artifact.
const SAFESET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SafeSetFile {
    version: u32,
    n_x: usize,
    metric: HullMetric,
    entries: Vec<SafeSetEntry>,
    feasible_iterations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SafeSet {
    n_x: usize,
    metric: HullMetric,
    entries: Vec<SafeSetEntry>,
    feasible_iterations: Vec<usize>,
    index: NeighborIndex,
}

impl SafeSet {
    pub fn new(n_x: usize, metric: HullMetric) -> Self {
        assert_eq!(metric.scale_floor.len(), n_x, "scale floor must match state dimension");
        Self {
            n_x,
            metric,
            entries: Vec::new(),
            feasible_iterations: Vec::new(),
            index: NeighborIndex::build(n_x, &[], &vec![1.0; n_x]),
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SafeSetEntry] {
        &self.entries
    }

    pub fn feasible_iterations(&self) -> &[usize] {
        &self.feasible_iterations
    }

    pub fn metric(&self) -> &HullMetric {
        &self.metric
    }

    /// Inserts every state of a feasible record, annotated with suffix-sum
    /// costs-to-go. Existing entries are never modified. Errors on infeasible
    /// records and leaves the set unchanged.
    pub fn insert_record<H, T>(
        &mut self,
        record: &IterationRecord,
        stage_cost: H,
        in_target: T,
    ) -> Result<()>
    where
        H: Fn(&[f64], &[f64]) -> f64,
        T: Fn(&[f64]) -> bool,
    {
        if !record.feasible {
            return Err(Error::InfeasibleRecord);
        }
        let ctg = cost_to_go(&record.trajectory, stage_cost, in_target)?;
        for (time, (state, ctg)) in record.trajectory.states.iter().zip(&ctg).enumerate() {
            if state.dim() != self.n_x {
                return Err(Error::DimensionMismatch { expected: self.n_x, got: state.dim() });
            }
            self.entries.push(SafeSetEntry {
                state: state.clone(),
                cost_to_go: *ctg,
                iteration: record.iteration,
                time,
            });
        }
        if self.feasible_iterations.last() != Some(&record.iteration) {
            self.feasible_iterations.push(record.iteration);
        }
        self.rebuild_index();
        Ok(())
    }

    fn rebuild_index(&mut self) {
        let mut flat = Vec::with_capacity(self.entries.len() * self.n_x);
        for e in &self.entries {
            flat.extend_from_slice(e.state.as_slice());
        }
        let scales = self.coordinate_scales(&flat);
        self.index = NeighborIndex::build(self.n_x, &flat, &scales);
    }

    /// Multiplicative normalization per coordinate (1/std, floored).
    fn coordinate_scales(&self, flat: &[f64]) -> Vec<f64> {
        if !self.metric.normalize || self.entries.is_empty() {
            return vec![1.0; self.n_x];
        }
        let m = self.entries.len() as f64;
        let mut scales = vec![1.0; self.n_x];
        for j in 0..self.n_x {
            let mean: f64 = flat.iter().skip(j).step_by(self.n_x).sum::<f64>() / m;
            let var: f64 = flat
                .iter()
                .skip(j)
                .step_by(self.n_x)
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / m;
            let std = var.sqrt().max(self.metric.scale_floor[j]).max(1e-12);
            scales[j] = 1.0 / std;
        }
        scales
    }

    /// Distance (in the normalized metric) from `x` to the convex hull of its
    /// `k` nearest stored states. Errors on an empty set.
    pub fn hull_distance(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.hull_projection(x, k)?.distance)
    }

    /// Full projection result; weights refer to the k selected neighbors.
    pub fn hull_projection(&self, x: &[f64], k: usize) -> Result<crate::hull::ProjectionResult> {
        if self.entries.is_empty() {
            return Err(Error::EmptySafeSet);
        }
        if x.len() != self.n_x {
            return Err(Error::DimensionMismatch { expected: self.n_x, got: x.len() });
        }
        let neighbors = self.index.k_nearest(x, k);
        let dim = self.n_x;
        let mut pts = Vec::with_capacity(neighbors.len() * dim);
        for &idx in &neighbors {
            pts.extend_from_slice(self.index.normalized_point(idx as usize));
        }
        let q = self.index.normalize_query(x);
        Ok(min_norm_point(dim, &pts, &q, DEFAULT_MAX_ITER, DEFAULT_TOL))
    }

    /// Neighbor index in the current normalized metric.
    pub fn neighbor_index(&self) -> &NeighborIndex {
        &self.index
    }

    /// Training pairs (state, cost-to-go) in insertion order.
    pub fn build_dataset(&self) -> Vec<(StateVector, f64)> {
        self.entries.iter().map(|e| (e.state.clone(), e.cost_to_go)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SafeSetFile {
            version: SAFESET_FORMAT_VERSION,
            n_x: self.n_x,
            metric: self.metric.clone(),
            entries: self.entries.clone(),
            feasible_iterations: self.feasible_iterations.clone(),
        };
        let json = serde_json::to_string(&file)?;
        crate::fsio::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SafeSetFile = serde_json::from_str(&text)?;
        if file.version != SAFESET_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported safe set format version {}",
                file.version
            )));
        }
        let mut set = SafeSet::new(file.n_x, file.metric);
        set.entries = file.entries;
        set.feasible_iterations = file.feasible_iterations;
        for e in &set.entries {
            if e.state.dim() != set.n_x {
                return Err(Error::DimensionMismatch { expected: set.n_x, got: e.state.dim() });
            }
        }
        set.rebuild_index();
        Ok(set)
    }
}

/// Applies a batch of records to the safe set; any infeasible record aborts
/// with the set unchanged. An empty batch is a no-op.
pub fn update_safe_set<H, T>(
    safe_set: &mut SafeSet,
    records: &[IterationRecord],
    stage_cost: H,
    in_target: T,
) -> Result<()>
where
    H: Fn(&[f64], &[f64]) -> f64 + Copy,
    T: Fn(&[f64]) -> bool + Copy,
{
    if records.iter().any(|r| !r.feasible) {
        return Err(Error::InfeasibleRecord);
    }
    for record in records {
        safe_set.insert_record(record, stage_cost, in_target)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ControlVector, Trajectory};

    fn metric(n_x: usize) -> HullMetric {
        HullMetric::raw(n_x)
    }

    fn record(iteration: usize, xs: &[[f64; 2]]) -> IterationRecord {
        let states = xs.iter().map(|x| StateVector::new(x.to_vec()).unwrap()).collect();
        let inputs = (0..xs.len() - 1)
            .map(|_| ControlVector::new(vec![0.0]).unwrap())
            .collect();
        IterationRecord {
            iteration,
            trajectory: Trajectory::new(states, inputs).unwrap(),
            feasible: true,
            iteration_cost: (xs.len() - 1) as f64,
            violation_count: 0,
            wall_time_s: 0.0,
            diagnostics: Default::default(),
        }
    }

    fn unit_cost(x: &[f64], _u: &[f64]) -> f64 {
        if x[0] >= 2.0 { 0.0 } else { 1.0 }
    }

    fn in_target(x: &[f64]) -> bool {
        x[0] >= 2.0
    }

    #[test]
    fn empty_update_is_noop() {
        let mut set = SafeSet::new(2, metric(2));
        update_safe_set(&mut set, &[], unit_cost, in_target).unwrap();
        assert!(set.is_empty());
        assert!(set.feasible_iterations().is_empty());
    }

    #[test]
    fn insert_appends_all_states_with_costs() {
        let mut set = SafeSet::new(2, metric(2));
        let r0 = record(0, &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        set.insert_record(&r0, unit_cost, in_target).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.entries()[0].cost_to_go, 2.0);
        assert_eq!(set.entries()[2].cost_to_go, 0.0);
        assert_eq!(set.feasible_iterations(), &[0]);

        let before: Vec<_> = set.entries().to_vec();
        let r1 = record(1, &[[0.0, 1.0], [1.0, 1.0], [1.5, 0.5], [2.0, 0.0]]);
        set.insert_record(&r1, unit_cost, in_target).unwrap();
        assert_eq!(set.len(), 7);
        // Existing entries untouched.
        assert_eq!(&set.entries()[..3], &before[..]);
        assert_eq!(set.feasible_iterations(), &[0, 1]);
    }

    #[test]
    fn two_feasible_iterations_accumulate_indices() {
        let mut set = SafeSet::new(2, metric(2));
        for it in 0..3 {
            let r = record(it, &[[0.0, it as f64], [2.0, it as f64]]);
            set.insert_record(
                &r,
                |x, _| if x[0] >= 2.0 { 0.0 } else { 1.0 },
                |x| x[0] >= 2.0,
            )
            .unwrap();
        }
        assert_eq!(set.feasible_iterations(), &[0, 1, 2]);
    }

    #[test]
    fn infeasible_record_rejected_and_set_unchanged() {
        let mut set = SafeSet::new(2, metric(2));
        set.insert_record(&record(0, &[[0.0, 0.0], [2.0, 0.0]]), unit_cost, in_target)
            .unwrap();
        let mut bad = record(1, &[[0.0, 0.0], [2.0, 0.0]]);
        bad.feasible = false;
        let len_before = set.len();
        let err = update_safe_set(
            &mut set,
            std::slice::from_ref(&bad),
            unit_cost,
            in_target,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InfeasibleRecord));
        assert_eq!(set.len(), len_before);
    }

    #[test]
    fn stored_states_have_zero_hull_distance() {
        let mut set = SafeSet::new(2, metric(2));
        let r = record(0, &[[0.0, 0.0], [1.0, 0.3], [1.4, 0.9], [2.0, 0.0]]);
        set.insert_record(&r, unit_cost, in_target).unwrap();
        for e in set.entries() {
            let d = set.hull_distance(e.state.as_slice(), 3).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn single_entry_distance_is_euclidean() {
        let mut set = SafeSet::new(2, metric(2));
        set.insert_record(&record(0, &[[2.0, 0.0]]), unit_cost, in_target).unwrap();
        let d = set.hull_distance(&[2.0, 4.0], 5).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hull_distance_on_empty_set_errors() {
        let set = SafeSet::new(2, metric(2));
        assert!(matches!(set.hull_distance(&[0.0, 0.0], 4), Err(Error::EmptySafeSet)));
    }

    #[test]
    fn dataset_projects_entries_in_order() {
        let mut set = SafeSet::new(2, metric(2));
        set.insert_record(&record(0, &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), unit_cost, in_target)
            .unwrap();
        let data = set.build_dataset();
        assert_eq!(data.len(), 3);
        assert_eq!(data[0].1, 2.0);
        assert_eq!(data[1].1, 1.0);
        assert_eq!(data[2].1, 0.0);
        // Minimum-time data: cost-to-go decreases by exactly one per step.
        for w in data.windows(2) {
            assert_eq!(w[0].1 - w[1].1, 1.0);
        }
    }

    #[test]
    fn save_load_round_trip_preserves_entries_and_queries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("safeset.json");
        let mut set = SafeSet::new(2, HullMetric::normalized(vec![0.1, 0.1]));
        set.insert_record(&record(0, &[[0.0, 0.0], [1.0, 0.7], [2.0, 0.1]]), unit_cost, in_target)
            .unwrap();
        set.save(&path).unwrap();
        let loaded = SafeSet::load(&path).unwrap();
        assert_eq!(loaded.entries(), set.entries());
        assert_eq!(loaded.feasible_iterations(), set.feasible_iterations());
        let q = [0.3, 0.9];
        assert_eq!(
            loaded.hull_distance(&q, 2).unwrap().to_bits(),
            set.hull_distance(&q, 2).unwrap().to_bits()
        );
    }
}
