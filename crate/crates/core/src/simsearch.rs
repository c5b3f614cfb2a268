//! Sensitivity-weighted similar-sample search.
//!
//! Each training sample (the anchor) gets its own weighting of the inputs:
//! the magnitude of the point network's gradient blended with the magnitude
//! of the absolute-error network's gradient, mixed by how much of the target
//! variance the errors account for. The deviation between the anchor and
//! another sample is the largest weighted, range-scaled coordinate difference,
//! so inputs that barely move the prediction or its error barely restrict the
//! neighborhood.
//!
//! The search is exact, `O(N^2 n)`, and parallel over anchors. Ties in
//! deviation are broken by ascending sample index, which makes the output a
//! pure function of its inputs. Deviations that agree to a relative
//! [`TIE_RTOL`] count as ties: on gridded inputs (years, category codes)
//! differences that are equal on paper come out an ulp apart, and without
//! the tolerance rescaling every sensitivity by the same constant could
//! reorder them.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::ModelBundle;

/// Per-input sensitivity magnitudes at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub s_p: Vec<f64>,
    pub s_e: Vec<f64>,
    pub s_en: Vec<f64>,
    pub anchor_index: Option<usize>,
}

impl SensitivityProfile {
    pub fn from_parts(s_p: Vec<f64>, s_e: Vec<f64>, r_var: f64) -> Result<Self> {
        if s_p.len() != s_e.len() {
            return Err(Error::DimensionMismatch {
                expected: s_p.len(),
                actual: s_e.len(),
            });
        }
        let s_en = combine(&s_p, &s_e, r_var);
        Ok(Self {
            s_p,
            s_e,
            s_en,
            anchor_index: None,
        })
    }

    /// A profile that weights every input equally, i.e. plain Chebyshev
    /// similarity on range-scaled inputs.
    pub fn uniform(n: usize) -> Self {
        Self {
            s_p: vec![1.0; n],
            s_e: vec![1.0; n],
            s_en: vec![1.0; n],
            anchor_index: None,
        }
    }
}

/// `s_e * r + s_p * (1 - r)` with `r` clamped to `[0, 1]`.
pub fn combine(s_p: &[f64], s_e: &[f64], r_var: f64) -> Vec<f64> {
    let r = r_var.clamp(0.0, 1.0);
    s_p.iter().zip(s_e).map(|(p, e)| e * r + p * (1.0 - r)).collect()
}

/// Same inputs as `train`, targets replaced by `|NN_p(x) - t|`.
pub fn abs_error_dataset(nn_p: &ModelBundle, train: &Dataset) -> Result<Dataset> {
    let pred = nn_p.predict_batch(train.features().view())?;
    let ae: Array1<f64> = (&pred - train.targets()).mapv(f64::abs);
    train.with_targets(ae, "abs_error")
}

fn population_variance(v: ArrayView1<'_, f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// `Var(ae) / Var(t)` (population variances), clamped to `[0, 1]`.
pub fn variance_ratio(ae: ArrayView1<'_, f64>, t: ArrayView1<'_, f64>) -> Result<f64> {
    if ae.len() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            actual: ae.len(),
        });
    }
    if t.is_empty() {
        return Err(Error::arg("variance of an empty vector"));
    }
    let var_t = population_variance(t);
    if var_t <= 0.0 {
        return Err(Error::arg("target variance is zero"));
    }
    Ok((population_variance(ae) / var_t).clamp(0.0, 1.0))
}

/// Gradient magnitudes of both networks at `x` and their blend.
pub fn sensitivities(
    nn_p: &ModelBundle,
    nn_e: &ModelBundle,
    x: &[f64],
    r_var: f64,
) -> Result<SensitivityProfile> {
    let s_p = nn_p.input_gradient(x)?.into_iter().map(f64::abs).collect();
    let s_e = nn_e.input_gradient(x)?.into_iter().map(f64::abs).collect();
    SensitivityProfile::from_parts(s_p, s_e, r_var)
}

/// Combined sensitivities for every row of `x`, one row per sample.
pub fn combined_sensitivities(
    nn_p: &ModelBundle,
    nn_e: &ModelBundle,
    x: ArrayView2<'_, f64>,
    r_var: f64,
) -> Result<Array2<f64>> {
    let gp = nn_p.input_gradients(x)?;
    let ge = nn_e.input_gradients(x)?;
    let r = r_var.clamp(0.0, 1.0);
    Ok(ndarray::Zip::from(&gp)
        .and(&ge)
        .map_collect(|p, e| e.abs() * r + p.abs() * (1.0 - r)))
}

/// `max_k s_en[k] * |x_i[k] - x_j[k]| / range[k]`.
pub fn weighted_deviation(
    profile: &SensitivityProfile,
    x_i: &[f64],
    x_j: &[f64],
    input_ranges: &[f64],
) -> Result<f64> {
    let n = profile.s_en.len();
    for len in [x_i.len(), x_j.len(), input_ranges.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if let Some(k) = input_ranges.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::ZeroRange(format!("input {k}")));
    }
    Ok(deviation(&profile.s_en, x_i, x_j, input_ranges))
}

#[inline]
fn deviation(s_en: &[f64], a: &[f64], b: &[f64], ranges: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..s_en.len() {
        let d = s_en[k] * (a[k] - b[k]).abs() / ranges[k];
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Relative gap below which two deviations are treated as equal.
pub const TIE_RTOL: f64 = 1e-12;

fn by_deviation_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Sorts `(deviation, index)` pairs nearest first. After the exact sort,
/// each run of values within `TIE_RTOL` of the run's first value is
/// reordered by index.
pub fn rank_candidates(all: &mut [(f64, usize)]) {
    all.sort_unstable_by(by_deviation_then_index);
    let mut start = 0;
    while start < all.len() {
        let cap = all[start].0 + TIE_RTOL * all[start].0.abs();
        let mut end = start + 1;
        while end < all.len() && all[end].0 <= cap {
            end += 1;
        }
        all[start..end].sort_unstable_by_key(|p| p.1);
        start = end;
    }
}

/// Selected neighbors and similarity thresholds for every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    /// `neighbor_ids[i]` lists the `n_select` most similar samples to `i`,
    /// nearest first.
    pub neighbor_ids: Vec<Vec<usize>>,
    /// Deviations matching `neighbor_ids`, nondecreasing per row up to
    /// [`TIE_RTOL`].
    pub deviations: Vec<Vec<f64>>,
    /// Largest deviation among the selected neighbors of each anchor.
    pub thresholds: Vec<f64>,
    /// Combined sensitivity per anchor (row) and input (column).
    pub combined: Array2<f64>,
    pub r_var: f64,
    pub n_select: usize,
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    pub fn profile(&self, anchor: usize) -> SensitivityProfile {
        let s_en = self.combined.row(anchor).to_vec();
        SensitivityProfile {
            s_p: Vec::new(),
            s_e: Vec::new(),
            s_en,
            anchor_index: Some(anchor),
        }
    }
}

/// Runs the similar-sample search on a normalized training set.
///
/// Fits nothing: `nn_p` and `nn_e` must already be trained, `nn_e` on the
/// absolute errors of `nn_p`. The variance ratio is recomputed here from
/// `nn_p`'s errors on `train`.
pub fn build_neighbor_index(
    nn_p: &ModelBundle,
    nn_e: &ModelBundle,
    train: &Dataset,
    n_select: usize,
) -> Result<NeighborIndex> {
    let ae = abs_error_dataset(nn_p, train)?;
    let r_var = variance_ratio(ae.targets().view(), train.targets().view())?;
    let combined = combined_sensitivities(nn_p, nn_e, train.features().view(), r_var)?;
    select_neighbors(train.features().view(), &train.input_ranges(), combined, r_var, n_select)
}

/// The selection step given precomputed combined sensitivities.
pub fn select_neighbors(
    features: ArrayView2<'_, f64>,
    input_ranges: &[f64],
    combined: Array2<f64>,
    r_var: f64,
    n_select: usize,
) -> Result<NeighborIndex> {
    let n = features.nrows();
    if n_select == 0 || n_select >= n {
        return Err(Error::arg(format!(
            "n_select must lie in [1, {n}), got {n_select}"
        )));
    }
    if combined.dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: combined.len(),
        });
    }
    if input_ranges.len() != features.ncols() {
        return Err(Error::DimensionMismatch {
            expected: features.ncols(),
            actual: input_ranges.len(),
        });
    }
    if let Some(k) = input_ranges.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::ZeroRange(format!("input {k}")));
    }
    let features = features.as_standard_layout();
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s_en = combined.row(i).to_vec();
            let anchor = features.row(i);
            let anchor = anchor.as_slice().expect("standard layout");
            let candidates = (0..n).filter(|&j| j != i).map(|j| {
                let xj = features.row(j);
                (deviation(&s_en, anchor, xj.as_slice().expect("standard layout"), input_ranges), j)
            });
            take_nearest(candidates, n_select)
        })
        .collect();
    let (neighbor_ids, deviations): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let thresholds = deviations
        .iter()
        .map(|d: &Vec<f64>| d.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(NeighborIndex {
        neighbor_ids,
        deviations,
        thresholds,
        combined,
        r_var,
        n_select,
    })
}

fn take_nearest(candidates: impl Iterator<Item = (f64, usize)>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut all: Vec<(f64, usize)> = candidates.collect();
    rank_candidates(&mut all);
    all.truncate(k);
    all.into_iter().map(|(d, j)| (j, d)).unzip()
}

/// Nearest training samples to an arbitrary normalized point under `profile`.
/// Every training row is a candidate.
pub fn query_neighbors(
    profile: &SensitivityProfile,
    x: &[f64],
    train: &Dataset,
    n_select: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let ranges = train.input_ranges();
    if x.len() != train.num_inputs() || profile.s_en.len() != train.num_inputs() {
        return Err(Error::DimensionMismatch {
            expected: train.num_inputs(),
            actual: x.len(),
        });
    }
    if n_select == 0 || n_select > train.len() {
        return Err(Error::arg(format!(
            "n_select must lie in [1, {}], got {n_select}",
            train.len()
        )));
    }
    let mut devs = Vec::with_capacity(train.len());
    for (j, row) in train.features().axis_iter(Axis(0)).enumerate() {
        devs.push((weighted_deviation(profile, x, &row.to_vec(), &ranges)?, j));
    }
    Ok(take_nearest(devs.into_iter(), n_select))
}

/// One line of a neighbor table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborRow {
    pub rank: usize,
    pub neighbor_index: usize,
    pub deviation: f64,
    pub features: Vec<f64>,
    pub target: f64,
}

/// Stored neighbors of a training anchor, nearest first.
pub fn neighbors_of(idx: &NeighborIndex, train: &Dataset, anchor: usize) -> Result<Vec<NeighborRow>> {
    if anchor >= idx.len() {
        return Err(Error::arg(format!(
            "anchor {anchor} out of range for {} samples",
            idx.len()
        )));
    }
    Ok(neighbor_table(train, &idx.neighbor_ids[anchor], &idx.deviations[anchor]))
}

pub fn neighbor_table(train: &Dataset, ids: &[usize], deviations: &[f64]) -> Vec<NeighborRow> {
    ids.iter()
        .zip(deviations)
        .enumerate()
        .map(|(rank, (&j, &deviation))| NeighborRow {
            rank: rank + 1,
            neighbor_index: j,
            deviation,
            features: train.row(j).to_vec(),
            target: train.targets()[j],
        })
        .collect()
}
