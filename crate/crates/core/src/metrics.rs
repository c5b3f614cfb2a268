//! Interval quality metrics and the coverage/width cost criteria.
//!
//! All functions are pure. Coverage is inclusive at both bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper bounds for a set of samples with the coverage they target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nominal_coverage: f64,
}

impl IntervalSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nominal_coverage: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if !(nominal_coverage > 0.0 && nominal_coverage < 1.0) {
            return Err(Error::arg(format!(
                "nominal coverage must lie in (0, 1), got {nominal_coverage}"
            )));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(j) = lower.iter().zip(&upper).position(|(l, u)| u < l) {
            return Err(Error::arg(format!("interval {j} has upper < lower")));
        }
        Ok(Self {
            lower,
            upper,
            nominal_coverage,
        })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nominal_coverage(&self) -> f64 {
        self.nominal_coverage
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lower.iter().copied().zip(self.upper.iter().copied())
    }
}

/// Hyperparameters of the cost criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Exponential under-coverage penalty of CWC and the mid-interval cost.
    pub eta: f64,
    /// Weight of the failure distance in CWFDC.
    pub rho: f64,
    /// Quadratic coverage penalty factor in CWFDC.
    pub beta: f64,
    /// PICP margin in CWFDC; `None` means `alpha / 20`.
    pub delta: Option<f64>,
    pub epsilon: f64,
    pub beta1_mid: f64,
    pub beta2_mid: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            eta: 50.0,
            rho: 1.0,
            beta: 10.0,
            delta: None,
            epsilon: 1e-10,
            beta1_mid: 1.0,
            beta2_mid: 0.5,
        }
    }
}

impl CostParams {
    pub fn delta_for(&self, nominal: f64) -> f64 {
        self.delta.unwrap_or((1.0 - nominal) / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::arg("eta and epsilon must be positive"));
        }
        Ok(())
    }
}

fn check_len(targets: &[f64], iv: &IntervalSet) -> Result<()> {
    if targets.len() != iv.len() {
        return Err(Error::DimensionMismatch {
            expected: iv.len(),
            actual: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::arg("no samples"));
    }
    Ok(())
}

#[inline]
pub fn covered(t: f64, lower: f64, upper: f64) -> bool {
    lower <= t && t <= upper
}

/// Fraction of targets inside their interval.
pub fn picp(targets: &[f64], iv: &IntervalSet) -> Result<f64> {
    check_len(targets, iv)?;
    let hits = targets
        .iter()
        .zip(iv.pairs())
        .filter(|(&t, (l, u))| covered(t, *l, *u))
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Mean width divided by the target range.
pub fn pinaw(iv: &IntervalSet, target_range: f64) -> Result<f64> {
    if !(target_range > 0.0) {
        return Err(Error::arg("target range must be positive"));
    }
    if iv.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let width: f64 = iv.pairs().map(|(l, u)| u - l).sum();
    Ok(width / (target_range * iv.len() as f64))
}

/// Mean distance from each uncovered target to its nearest bound, over
/// `R * misses + epsilon`.
pub fn pinafd(targets: &[f64], iv: &IntervalSet, target_range: f64, epsilon: f64) -> Result<f64> {
    check_len(targets, iv)?;
    if !(target_range > 0.0) {
        return Err(Error::arg("target range must be positive"));
    }
    let mut dist = 0.0;
    let mut misses = 0usize;
    for (&t, (l, u)) in targets.iter().zip(iv.pairs()) {
        if !covered(t, l, u) {
            dist += (t - u).abs().min((l - t).abs());
            misses += 1;
        }
    }
    Ok(dist / (target_range * misses as f64 + epsilon))
}

/// Coverage width criterion: `PINAW * (1 + gamma * exp(eta * (nominal - PICP)))`
/// with `gamma = 1` only when PICP falls short of the nominal coverage.
pub fn cwc(pinaw: f64, picp: f64, nominal: f64, eta: f64) -> f64 {
    let gamma = if picp < nominal { 1.0 } else { 0.0 };
    if gamma == 0.0 {
        return pinaw;
    }
    pinaw * (1.0 + gamma * (eta * (nominal - picp)).exp())
}

/// `PINAW + rho * PINAFD + beta * (nominal + delta - PICP)^2`.
pub fn cwfdc(pinaw: f64, pinafd: f64, picp: f64, nominal: f64, params: &CostParams) -> f64 {
    let gap = nominal + params.delta_for(nominal) - picp;
    pinaw + params.rho * pinafd + params.beta * gap * gap
}

/// Euclidean norm of target minus interval midpoint.
pub fn mid_interval_norm(targets: &[f64], iv: &IntervalSet) -> Result<f64> {
    check_len(targets, iv)?;
    Ok(targets
        .iter()
        .zip(iv.pairs())
        .map(|(t, (l, u))| (t - (u + l) / 2.0).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Mid-interval deviation cost:
/// `beta1 * PINAW + beta2 * ||e||^2 + exp(-eta * (PICP - nominal))`.
pub fn mid_interval_cost(pinaw: f64, mid_norm: f64, picp: f64, nominal: f64, params: &CostParams) -> f64 {
    params.beta1_mid * pinaw + params.beta2_mid * mid_norm * mid_norm + (-params.eta * (picp - nominal)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub picp: f64,
    pub pinaw: f64,
    pub pinafd: f64,
    pub cwc: f64,
    pub cwfdc: f64,
    pub n: usize,
    pub nominal: f64,
}

impl IntervalMetrics {
    pub fn compute(targets: &[f64], iv: &IntervalSet, target_range: f64, params: &CostParams) -> Result<Self> {
        let nominal = iv.nominal_coverage();
        let picp = picp(targets, iv)?;
        let pinaw = pinaw(iv, target_range)?;
        let pinafd = pinafd(targets, iv, target_range, params.epsilon)?;
        Ok(Self {
            picp,
            pinaw,
            pinafd,
            cwc: cwc(pinaw, picp, nominal, params.eta),
            cwfdc: cwfdc(pinaw, pinafd, picp, nominal, params),
            n: targets.len(),
            nominal,
        })
    }
}

/// Mean and population standard deviation of each metric over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub trials: usize,
    pub nominal: f64,
    pub mean_pinaw: f64,
    pub mean_picp: f64,
    pub std_picp: f64,
    pub mean_pinafd: f64,
    pub mean_cwc: f64,
    pub mean_cwfdc: f64,
    pub std_pinaw: f64,
    pub std_pinafd: f64,
    pub std_cwc: f64,
    pub std_cwfdc: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(trials: &[IntervalMetrics]) -> Result<MetricsSummary> {
    let first = trials.first().ok_or_else(|| Error::arg("no trials to aggregate"))?;
    let field = |f: fn(&IntervalMetrics) -> f64| mean_std(trials.iter().map(f));
    let (mean_pinaw, std_pinaw) = field(|m| m.pinaw);
    let (mean_picp, std_picp) = field(|m| m.picp);
    let (mean_pinafd, std_pinafd) = field(|m| m.pinafd);
    let (mean_cwc, std_cwc) = field(|m| m.cwc);
    let (mean_cwfdc, std_cwfdc) = field(|m| m.cwfdc);
    Ok(MetricsSummary {
        trials: trials.len(),
        nominal: first.nominal,
        mean_pinaw,
        mean_picp,
        std_picp,
        mean_pinafd,
        mean_cwc,
        mean_cwfdc,
        std_pinaw,
        std_pinafd,
        std_cwc,
        std_cwfdc,
    })
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub nominal: f64,
    pub trials: usize,
    pub pinaw: f64,
    pub picp: f64,
    pub sigma_picp: f64,
    pub pinafd: f64,
    pub cwc: f64,
    pub cwfdc: f64,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "dataset", "method", "nominal", "trials", "pinaw", "picp", "sigma_picp", "pinafd", "cwc", "cwfdc",
];

impl ReportRow {
    pub fn from_summary(dataset: &str, method: &str, s: &MetricsSummary) -> Self {
        Self {
            dataset: dataset.to_string(),
            method: method.to_string(),
            nominal: s.nominal,
            trials: s.trials,
            pinaw: s.mean_pinaw,
            picp: s.mean_picp,
            sigma_picp: s.std_picp,
            pinafd: s.mean_pinafd,
            cwc: s.mean_cwc,
            cwfdc: s.mean_cwfdc,
        }
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset, r.method, r.nominal, r.trials, r.pinaw, r.picp, r.sigma_picp, r.pinafd, r.cwc, r.cwfdc
        ));
    }
    out
}

pub fn report_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("report rows serialize")
}

/// Parses a report written by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
