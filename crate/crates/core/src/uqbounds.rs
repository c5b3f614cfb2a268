//! Bounds from the target distribution of similar samples.
//!
//! A raw bound at cumulative probability `q` is the `q`-quantile of the
//! anchor's neighbor targets. Neighbors are similar but not identical to the
//! anchor, so their targets spread wider than the anchor's own conditional
//! distribution and raw bounds over-cover. [`calibration_sweep`] measures the
//! coverage each requested `q` actually achieves on the training set and
//! inverts that relation; [`corrected_bound_targets`] then yields labels that
//! a per-quantile network ([`train_ub_net`]) learns to predict directly.

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::IntervalSet;
use crate::nnet::{ModelBundle, NetSpec, Role, TrainConfig};
use crate::simsearch::NeighborIndex;

/// Linear-interpolation quantile of ascending `sorted` at `q`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::arg("quantile of an empty vector"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::arg(format!("quantile level {q} outside [0, 1]")));
    }
    Ok(quantile_unchecked(sorted, q))
}

fn quantile_unchecked(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Neighbor targets of every anchor, each list sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTargets {
    lists: Vec<Vec<f64>>,
}

impl NeighborTargets {
    pub fn new(idx: &NeighborIndex, train: &Dataset) -> Result<Self> {
        Self::from_ids(&idx.neighbor_ids, train)
    }

    pub fn from_ids(ids: &[Vec<usize>], train: &Dataset) -> Result<Self> {
        let t = train.targets();
        let lists = ids
            .iter()
            .map(|row| {
                let mut v = row
                    .iter()
                    .map(|&j| t.get(j).copied().ok_or_else(|| Error::arg(format!("neighbor {j} out of range"))))
                    .collect::<Result<Vec<f64>>>()?;
                if v.is_empty() {
                    return Err(Error::arg("anchor without neighbors"));
                }
                v.sort_by(f64::total_cmp);
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(Self { lists })
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn bound(&self, anchor: usize, q: f64) -> Result<f64> {
        let list = self
            .lists
            .get(anchor)
            .ok_or_else(|| Error::arg(format!("anchor {anchor} out of range")))?;
        empirical_quantile(list, q)
    }

    /// Raw bound at `q` for every anchor.
    pub fn bounds(&self, q: f64) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.bound(i, q)).collect()
    }
}

/// Quantile `q` of the targets of `anchor`'s selected neighbors.
pub fn raw_bound(idx: &NeighborIndex, train: &Dataset, anchor: usize, q: f64) -> Result<f64> {
    let ids = idx
        .neighbor_ids
        .get(anchor)
        .ok_or_else(|| Error::arg(format!("anchor {anchor} out of range")))?;
    let mut v: Vec<f64> = ids.iter().map(|&j| train.targets()[j]).collect();
    v.sort_by(f64::total_cmp);
    empirical_quantile(&v, q)
}

/// Nominal grid `0.01, 0.02, ..., 0.99`.
pub fn nominal_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Pool-adjacent-violators projection onto nondecreasing sequences
/// (equal weights).
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    // (sum, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 <= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("len > 1") = (s1 + s2, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Maps a desired cumulative probability to the nominal one to request from
/// the similar-sample bound.
pub trait BoundCorrection {
    fn nominal_for(&self, desired: f64) -> Result<f64>;
}

/// Achieved-versus-requested coverage of raw bounds on a grid, with its
/// monotone inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub grid_nominal: Vec<f64>,
    pub found_raw: Vec<f64>,
    /// `found_raw` after isotonic projection.
    pub grid_found: Vec<f64>,
}

impl CalibrationMap {
    pub fn from_found(grid_nominal: Vec<f64>, found_raw: Vec<f64>) -> Result<Self> {
        if grid_nominal.len() != found_raw.len() || grid_nominal.len() < 2 {
            return Err(Error::DegenerateCalibration("grid needs at least two matching points".into()));
        }
        if grid_nominal.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateCalibration("nominal grid must increase".into()));
        }
        if found_raw.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::DegenerateCalibration("found values outside [0, 1]".into()));
        }
        let grid_found = isotonic_nondecreasing(&found_raw);
        if grid_found.first() == grid_found.last() {
            return Err(Error::DegenerateCalibration(format!(
                "achieved coverage is constant at {}",
                grid_found[0]
            )));
        }
        Ok(Self {
            grid_nominal,
            found_raw,
            grid_found,
        })
    }

    /// Calibration that leaves every request unchanged.
    pub fn identity() -> Self {
        let grid = nominal_grid();
        Self::from_found(grid.clone(), grid).expect("identity grid is valid")
    }

    fn lo(&self) -> f64 {
        self.grid_nominal[0]
    }

    fn hi(&self) -> f64 {
        *self.grid_nominal.last().expect("non-empty grid")
    }

    /// Achieved coverage at nominal `q`, interpolated on the grid.
    pub fn found(&self, q: f64) -> f64 {
        interpolate(&self.grid_nominal, &self.grid_found, q)
    }

    /// Nominal level whose achieved coverage is `p`, clamped to the grid.
    pub fn inverse(&self, p: f64) -> f64 {
        let f = &self.grid_found;
        let x = &self.grid_nominal;
        if p <= f[0] {
            return self.lo();
        }
        if p > f[f.len() - 1] {
            return self.hi();
        }
        // first k with f[k] >= p; f[k-1] < p so the segment is non-flat
        let k = f.partition_point(|&v| v < p);
        let t = (p - f[k - 1]) / (f[k] - f[k - 1]);
        (x[k - 1] + t * (x[k] - x[k - 1])).clamp(self.lo(), self.hi())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("nominal,found_raw,found_isotonic\n");
        for ((n, r), f) in self.grid_nominal.iter().zip(&self.found_raw).zip(&self.grid_found) {
            s.push_str(&format!("{n:?},{r:?},{f:?}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut nominal = Vec::new();
        let mut raw = Vec::new();
        for rec in rdr.deserialize::<(f64, f64, f64)>() {
            let (n, r, _) = rec?;
            nominal.push(n);
            raw.push(r);
        }
        Self::from_found(nominal, raw)
    }
}

impl BoundCorrection for CalibrationMap {
    fn nominal_for(&self, desired: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&desired) {
            return Err(Error::arg(format!("desired probability {desired} outside [0, 1]")));
        }
        Ok(self.inverse(desired))
    }
}

/// Piecewise-linear interpolation with flat extrapolation; `xs` increasing.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v < x);
    if xs[k] == x {
        return ys[k];
    }
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// For each nominal `q` on the grid, the fraction of samples whose own
/// target is at or below the `q`-quantile of their neighbors' targets.
pub fn achieved_coverage(lists: &NeighborTargets, targets: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if lists.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            actual: lists.len(),
        });
    }
    let n = targets.len() as f64;
    Ok(grid
        .iter()
        .map(|&q| {
            let below = lists
                .lists
                .iter()
                .zip(targets)
                .filter(|(list, &t)| t <= quantile_unchecked(list, q))
                .count();
            below as f64 / n
        })
        .collect())
}

/// Measures achieved coverage of raw bounds over the whole training set.
pub fn calibration_sweep(idx: &NeighborIndex, train: &Dataset) -> Result<CalibrationMap> {
    let lists = NeighborTargets::new(idx, train)?;
    let grid = nominal_grid();
    let found = achieved_coverage(&lists, train.targets().as_slice().expect("contiguous"), &grid)?;
    CalibrationMap::from_found(grid, found)
}

/// Per-anchor training labels for the direct bound network at `desired_q`.
pub fn corrected_bound_targets(
    lists: &NeighborTargets,
    correction: &dyn BoundCorrection,
    desired_q: f64,
) -> Result<Vec<f64>> {
    if !(0.01..=0.99).contains(&desired_q) {
        return Err(Error::arg(format!("desired quantile {desired_q} outside [0.01, 0.99]")));
    }
    lists.bounds(correction.nominal_for(desired_q)?)
}

/// Fits a scalar network to corrected bound labels; the bundle records `desired_q`.
pub fn train_ub_net(
    train: &Dataset,
    labels: &[f64],
    desired_q: f64,
    spec: NetSpec,
    cfg: &TrainConfig,
    normalizer: crate::data::Normalizer,
) -> Result<ModelBundle> {
    if labels.len() != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            actual: labels.len(),
        });
    }
    let data = train.with_targets(Array1::from(labels.to_vec()), "bound")?;
    Ok(ModelBundle::fit_mse(spec, Role::Ub, normalizer, &data, cfg)?.with_quantile(desired_q))
}

/// A learned bound-correction map (the network alternative to
/// [`CalibrationMap`]): a one-input network from desired to nominal level,
/// fit on the inverted calibration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetBoundCorrection {
    pub net: ModelBundle,
}

impl NetBoundCorrection {
    pub fn fit(map: &CalibrationMap, spec: NetSpec, cfg: &TrainConfig) -> Result<Self> {
        if spec.input_dim != 1 || spec.output_dim != 1 {
            return Err(Error::arg("bound-correction network maps one input to one output"));
        }
        let x = Array1::from(map.grid_found.clone()).insert_axis(Axis(1));
        let t = Array1::from(map.grid_nominal.clone());
        let data = Dataset::from_arrays(x, t)?;
        let net = ModelBundle::init(spec, Role::BoundCorrection, crate::data::Normalizer::identity(1))?;
        Ok(Self {
            net: net.train_mse(&data, cfg)?,
        })
    }
}

impl BoundCorrection for NetBoundCorrection {
    fn nominal_for(&self, desired: f64) -> Result<f64> {
        Ok(self.net.predict(&[desired])?.clamp(0.01, 0.99))
    }
}

/// Lower and upper cumulative probabilities of a central interval.
pub fn tail_quantiles(nominal: f64) -> (f64, f64) {
    let alpha = 1.0 - nominal;
    (alpha / 2.0, 1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub swapped: bool,
}

fn check_pair(lower_net: &ModelBundle, upper_net: &ModelBundle) -> Result<()> {
    if lower_net.role != Role::Ub || upper_net.role != Role::Ub {
        return Err(Error::arg("interval assembly needs two bound networks"));
    }
    if lower_net.normalizer != upper_net.normalizer {
        return Err(Error::arg("bound networks use different normalizations"));
    }
    Ok(())
}

/// Evaluates both bound networks on normalized `x`, swapping crossed outputs.
pub fn predict_interval(lower_net: &ModelBundle, upper_net: &ModelBundle, x: &[f64]) -> Result<BoundPair> {
    check_pair(lower_net, upper_net)?;
    let lo = lower_net.predict(x)?;
    let hi = upper_net.predict(x)?;
    Ok(order_pair(lo, hi))
}

fn order_pair(lo: f64, hi: f64) -> BoundPair {
    if hi < lo {
        BoundPair {
            lower: hi,
            upper: lo,
            swapped: true,
        }
    } else {
        BoundPair {
            lower: lo,
            upper: hi,
            swapped: false,
        }
    }
}

/// Batch form of [`predict_interval`] for a central interval at `nominal`.
/// The networks' recorded quantiles must be `alpha/2` and `1 - alpha/2`.
/// Returns the intervals (normalized target units) and the number of swaps.
pub fn predict_intervals(
    lower_net: &ModelBundle,
    upper_net: &ModelBundle,
    x: ArrayView2<'_, f64>,
    nominal: f64,
) -> Result<(IntervalSet, usize)> {
    check_pair(lower_net, upper_net)?;
    let (q_lo, q_hi) = tail_quantiles(nominal);
    for (net, want) in [(lower_net, q_lo), (upper_net, q_hi)] {
        match net.quantile {
            Some(q) if (q - want).abs() < 1e-9 => {}
            got => {
                return Err(Error::arg(format!(
                    "bound network quantile {got:?} does not match {want} for nominal {nominal}"
                )))
            }
        }
    }
    let lo = lower_net.predict_batch(x)?;
    let hi = upper_net.predict_batch(x)?;
    let mut lower = Vec::with_capacity(lo.len());
    let mut upper = Vec::with_capacity(lo.len());
    let mut swaps = 0;
    for (&l, &h) in lo.iter().zip(hi.iter()) {
        let p = order_pair(l, h);
        swaps += p.swapped as usize;
        lower.push(p.lower);
        upper.push(p.upper);
    }
    Ok((IntervalSet::new(lower, upper, nominal)?, swaps))
}

pub const DENSITY_EPSILON: f64 = 1e-6;

/// `1 / (threshold + eps)`, min-max scaled to `[0, 1]`. All zeros when every
/// threshold is equal.
pub fn density_targets(thresholds: &[f64], epsilon: f64) -> Vec<f64> {
    let raw: Vec<f64> = thresholds.iter().map(|t| 1.0 / (t + epsilon)).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|r| (r - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityBand {
    Low,
    Medium,
    High,
}

impl DensityBand {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityBand::Low => "low",
            DensityBand::Medium => "medium",
            DensityBand::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub net: ModelBundle,
    pub epsilon: f64,
    /// Tertile cut points of the network's scores on the training set.
    pub band_edges: (f64, f64),
}

impl DensityModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.net.predict(x)
    }

    pub fn band(&self, score: f64) -> DensityBand {
        if score < self.band_edges.0 {
            DensityBand::Low
        } else if score < self.band_edges.1 {
            DensityBand::Medium
        } else {
            DensityBand::High
        }
    }
}

pub fn tertiles(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_unchecked(&v, 1.0 / 3.0), quantile_unchecked(&v, 2.0 / 3.0))
}

pub fn train_density_net(
    train: &Dataset,
    targets: &[f64],
    spec: NetSpec,
    cfg: &TrainConfig,
    normalizer: crate::data::Normalizer,
) -> Result<DensityModel> {
    if targets.len() != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            actual: targets.len(),
        });
    }
    let data = train.with_targets(Array1::from(targets.to_vec()), "density")?;
    let net = ModelBundle::fit_mse(spec, Role::Density, normalizer, &data, cfg)?;
    let scores = net.predict_batch(train.features().view())?;
    Ok(DensityModel {
        band_edges: tertiles(scores.as_slice().expect("contiguous")),
        net,
        epsilon: DENSITY_EPSILON,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simsearch::select_neighbors;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn quantile_cases() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 5.0);
        assert_abs_diff_eq!(empirical_quantile(&v, 0.1).unwrap(), 1.4, epsilon = 1e-12);
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&v, 1.5).is_err());
    }

    fn toy_index(targets: &[f64], n_select: usize) -> (NeighborIndex, Dataset) {
        let n = targets.len();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / (n - 1) as f64);
        let train = Dataset::from_arrays(x.clone(), Array1::from(targets.to_vec())).unwrap();
        let idx = select_neighbors(x.view(), &[1.0], Array2::ones((n, 1)), 0.0, n_select).unwrap();
        (idx, train)
    }

    #[test]
    fn raw_bound_cases() {
        let (idx, train) = toy_index(&[0.5, 0.1, 0.0, 0.3, 0.2, 0.9], 3);
        // neighbors of anchor 0 are 1, 2, 3 -> targets [0.0, 0.1, 0.3]
        assert_abs_diff_eq!(raw_bound(&idx, &train, 0, 0.5).unwrap(), 0.1, epsilon = 1e-12);
        assert!(raw_bound(&idx, &train, 0, 0.95).unwrap() >= raw_bound(&idx, &train, 0, 0.05).unwrap());
        assert!(raw_bound(&idx, &train, 6, 0.5).is_err());
        let lists = NeighborTargets::new(&idx, &train).unwrap();
        assert_eq!(lists.bound(0, 0.5).unwrap(), raw_bound(&idx, &train, 0, 0.5).unwrap());

        let (idx, train) = toy_index(&[0.1, 0.2, 0.3, 0.4], 3);
        // neighbors of anchor 3 are 0, 1, 2
        assert_abs_diff_eq!(raw_bound(&idx, &train, 3, 0.5).unwrap(), 0.2, epsilon = 1e-12);

        let (idx, train) = toy_index(&[0.7; 5], 2);
        for q in [0.0, 0.3, 1.0] {
            assert_eq!(raw_bound(&idx, &train, 2, q).unwrap(), 0.7);
        }
    }

    #[test]
    fn pava_projection() {
        assert_eq!(isotonic_nondecreasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_nondecreasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_nondecreasing(&[0.1, 0.2]), vec![0.1, 0.2]);
    }

    #[test]
    fn inverse_follows_shifted_map() {
        // found(q) = q + 0.05: requesting 0.10 coverage needs nominal 0.05
        let grid = nominal_grid();
        let found: Vec<f64> = grid.iter().map(|q| (q + 0.05).min(1.0)).collect();
        let map = CalibrationMap::from_found(grid, found).unwrap();
        assert_abs_diff_eq!(map.found(0.05), 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(map.inverse(0.10), 0.05, epsilon = 1e-12);
        // below the reachable range the request clamps to the grid edge
        assert_eq!(map.inverse(0.02), 0.01);
    }

    #[test]
    fn inverse_follows_spread_map() {
        // lower bounds come out too low: found(0.10) = 0.05, so a desired
        // 0.05 must be requested as 0.10
        let grid = nominal_grid();
        let found: Vec<f64> = grid.iter().map(|q| (q - 0.05).max(0.0)).collect();
        let map = CalibrationMap::from_found(grid, found).unwrap();
        assert_abs_diff_eq!(map.found(0.10), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(map.nominal_for(0.05).unwrap(), 0.10, epsilon = 1e-12);
    }

    #[test]
    fn identity_map_and_corrected_targets() {
        let map = CalibrationMap::identity();
        for q in [0.01, 0.05, 0.5, 0.95, 0.99] {
            assert_abs_diff_eq!(map.inverse(q), q, epsilon = 1e-12);
        }
        let (idx, train) = toy_index(&[0.5, 0.1, 0.0, 0.3, 0.2, 0.9], 3);
        let lists = NeighborTargets::new(&idx, &train).unwrap();
        let labels = corrected_bound_targets(&lists, &map, 0.05).unwrap();
        assert_eq!(labels.len(), train.len());
        for (i, l) in labels.iter().enumerate() {
            assert_abs_diff_eq!(*l, raw_bound(&idx, &train, i, 0.05).unwrap(), epsilon = 1e-12);
        }
        assert!(corrected_bound_targets(&lists, &map, 0.001).is_err());

        let grid = nominal_grid();
        let found: Vec<f64> = grid.iter().map(|q| (q - 0.05).max(0.0)).collect();
        let spread = CalibrationMap::from_found(grid, found).unwrap();
        let labels = corrected_bound_targets(&lists, &spread, 0.05).unwrap();
        for (i, l) in labels.iter().enumerate() {
            assert_abs_diff_eq!(*l, raw_bound(&idx, &train, i, 0.10).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_makes_found_monotone() {
        let grid = nominal_grid();
        let found: Vec<f64> = grid
            .iter()
            .enumerate()
            .map(|(k, q)| if k % 7 == 3 { q - 0.03 } else { *q })
            .collect();
        let map = CalibrationMap::from_found(grid, found).unwrap();
        assert!(map.grid_found.windows(2).all(|w| w[0] <= w[1]));
        let back = CalibrationMap::from_csv(&map.to_csv()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn constant_found_rejected() {
        let grid = nominal_grid();
        let flat = vec![0.5; grid.len()];
        assert!(matches!(
            CalibrationMap::from_found(grid, flat),
            Err(Error::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn density_target_rules() {
        let d = density_targets(&[0.1, 0.4, 0.2], DENSITY_EPSILON);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
        assert!(d[2] > 0.0 && d[2] < 1.0);
        assert_eq!(density_targets(&[0.1, 0.1], DENSITY_EPSILON), vec![0.0, 0.0]);
    }

    fn ub_net(q: f64, bias: f64) -> ModelBundle {
        let spec = NetSpec::new(1, vec![2], 1, 0);
        let mut m = ModelBundle::init(spec, Role::Ub, crate::data::Normalizer::identity(1)).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        m.layers[1].bias[0] = bias;
        m.with_quantile(q)
    }

    #[test]
    fn interval_assembly() {
        let lo = ub_net(0.05, 0.2);
        let hi = ub_net(0.95, 0.6);
        let p = predict_interval(&lo, &hi, &[0.5]).unwrap();
        assert_eq!((p.lower, p.upper, p.swapped), (0.2, 0.6, false));
        let p = predict_interval(&hi, &lo, &[0.5]).unwrap();
        assert_eq!((p.lower, p.upper, p.swapped), (0.2, 0.6, true));

        let x = array![[0.1], [0.9]];
        let (set, swaps) = predict_intervals(&lo, &hi, x.view(), 0.9).unwrap();
        assert_eq!(swaps, 0);
        assert_eq!(set.lower(), &[0.2, 0.2]);
        assert!(predict_intervals(&lo, &hi, x.view(), 0.8).is_err());

        let mut other = hi.clone();
        other.normalizer.target_max = 2.0;
        assert!(predict_interval(&lo, &other, &[0.5]).is_err());
    }

    #[test]
    fn tail_split() {
        let (lo, hi) = tail_quantiles(0.9);
        assert_abs_diff_eq!(lo, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 0.95, epsilon = 1e-12);
    }
}
