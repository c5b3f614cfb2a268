//! Direct interval networks trained against a coverage/width cost.
//!
//! A two-output network (channel 0 = upper bound, channel 1 = lower bound)
//! is first fit by MSE to rough targets `t ± delta_t`, then fine-tuned on one
//! of three interval costs. The coverage indicator inside those costs is
//! replaced by a product of logistics so that it has a usable gradient;
//! reported metrics are always the exact ones from [`crate::metrics`].

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::{self, CostParams, IntervalMetrics, IntervalSet};
use crate::nnet::{ModelBundle, NetSpec, Role, TrainConfig};

pub const UPPER: usize = 0;
pub const LOWER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Coverage width criterion.
    LubeCwc,
    /// Width plus distance of targets from the interval midpoint.
    MidInterval,
    /// Width, failure distance and a quadratic coverage penalty.
    Cwfdc,
}

impl CostKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lube" | "cwc" | "lube_cwc" => Some(CostKind::LubeCwc),
            "mid" | "mid_interval" => Some(CostKind::MidInterval),
            "cwfdc" => Some(CostKind::Cwfdc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::LubeCwc => "lube",
            CostKind::MidInterval => "mid",
            CostKind::Cwfdc => "cwfdc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub cost_kind: CostKind,
    pub cost_params: CostParams,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    /// Rough-target margin as a fraction of the target range.
    pub delta_t_fraction: f64,
    pub swap_penalty_weight: f64,
    pub sigmoid_sharpness: f64,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
}

impl BaselineConfig {
    /// Small networks and short schedules for laptop-scale runs.
    pub fn desk(cost_kind: CostKind) -> Self {
        Self {
            cost_kind,
            cost_params: CostParams::default(),
            pretrain_epochs: 300,
            finetune_epochs: 600,
            pretrain_lr: 0.05,
            finetune_lr: 2e-3,
            delta_t_fraction: 0.25,
            swap_penalty_weight: 10.0,
            sigmoid_sharpness: 200.0,
            hidden_layers: vec![32, 32],
            seed: 0,
        }
    }

    /// Two 1000-unit layers, 1000 pretraining and 5000 fine-tuning epochs.
    pub fn paper(cost_kind: CostKind) -> Self {
        Self {
            pretrain_epochs: 1000,
            finetune_epochs: 5000,
            pretrain_lr: 5e-2,
            finetune_lr: 5e-5,
            hidden_layers: vec![1000, 1000],
            ..Self::desk(cost_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::arg("epochs must be positive"));
        }
        if !(self.pretrain_lr > 0.0) || !(self.finetune_lr > 0.0) {
            return Err(Error::arg("learning rates must be positive"));
        }
        if !(self.delta_t_fraction > 0.0 && self.delta_t_fraction <= 0.5) {
            return Err(Error::arg(format!(
                "delta_t_fraction must lie in (0, 0.5], got {}",
                self.delta_t_fraction
            )));
        }
        if !(self.swap_penalty_weight > 0.0) || !(self.sigmoid_sharpness > 0.0) {
            return Err(Error::arg("swap penalty and sharpness must be positive"));
        }
        self.cost_params.validate()
    }

    fn train_config(&self, epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: lr,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// `(t + delta, t - delta)` with `delta = fraction * range`.
pub fn rough_targets(t: &[f64], target_range: f64, delta_t_fraction: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(target_range > 0.0) {
        return Err(Error::arg("target range must be positive"));
    }
    if !(delta_t_fraction > 0.0 && delta_t_fraction <= 0.5) {
        return Err(Error::arg(format!("delta_t_fraction {delta_t_fraction} outside (0, 0.5]")));
    }
    let delta = delta_t_fraction * target_range;
    Ok((t.iter().map(|v| v + delta).collect(), t.iter().map(|v| v - delta).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalNet {
    pub net: ModelBundle,
    /// Cost per epoch of the most recent training phase.
    pub cost_trace: Vec<f64>,
    /// Median raw width (upper - lower) per fine-tuning epoch.
    pub width_trace: Vec<f64>,
}

impl IntervalNet {
    pub fn init(input_dim: usize, cfg: &BaselineConfig, normalizer: Normalizer) -> Result<Self> {
        let spec = NetSpec::new(input_dim, cfg.hidden_layers.clone(), 2, cfg.seed);
        Ok(Self {
            net: ModelBundle::init(spec, Role::Interval, normalizer)?,
            cost_trace: Vec::new(),
            width_trace: Vec::new(),
        })
    }

    /// Intervals on normalized inputs, with crossed outputs swapped.
    /// Returns the number of swapped rows.
    pub fn predict(&self, x: ArrayView2<'_, f64>, nominal: f64) -> Result<(IntervalSet, usize)> {
        let out = self.net.forward_batch(x)?;
        let mut lower = Vec::with_capacity(out.nrows());
        let mut upper = Vec::with_capacity(out.nrows());
        let mut swaps = 0;
        for row in out.rows() {
            let (u, l) = (row[UPPER], row[LOWER]);
            if u < l {
                swaps += 1;
                lower.push(u);
                upper.push(l);
            } else {
                lower.push(l);
                upper.push(u);
            }
        }
        Ok((IntervalSet::new(lower, upper, nominal)?, swaps))
    }

    pub fn swap_rate(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let out = self.net.forward_batch(x)?;
        let swaps = out.rows().into_iter().filter(|r| r[UPPER] < r[LOWER]).count();
        Ok(swaps as f64 / out.nrows() as f64)
    }
}

/// MSE fit of both channels to the rough targets.
pub fn pretrain(net: &IntervalNet, train: &Dataset, cfg: &BaselineConfig) -> Result<IntervalNet> {
    cfg.validate()?;
    let t = train.targets().as_slice().expect("contiguous");
    let (up, lo) = rough_targets(t, train.target_range(), cfg.delta_t_fraction)?;
    let mut targets = Array2::zeros((train.len(), 2));
    for (j, (u, l)) in up.iter().zip(&lo).enumerate() {
        targets[[j, UPPER]] = *u;
        targets[[j, LOWER]] = *l;
    }
    let tc = cfg.train_config(cfg.pretrain_epochs, cfg.pretrain_lr, cfg.seed);
    let trained = net
        .net
        .train_mse_multi(train.features().view(), targets.view(), &tc)?;
    let cost_trace = trained.meta.as_ref().map(|m| m.loss_trace.clone()).unwrap_or_default();
    Ok(IntervalNet {
        net: trained,
        cost_trace,
        width_trace: Vec::new(),
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Value of the smoothed cost and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothCost {
    pub value: f64,
    pub smooth_picp: f64,
    pub pinaw: f64,
    pub pinafd: f64,
    pub swap_penalty: f64,
}

/// Smoothed PICP: mean of `sigmoid(k (t - l)) * sigmoid(k (u - t))`.
pub fn smooth_picp(outputs: ArrayView2<'_, f64>, targets: &[f64], sharpness: f64) -> f64 {
    let m = targets.len() as f64;
    outputs
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(r, &t)| sigmoid(sharpness * (t - r[LOWER])) * sigmoid(sharpness * (r[UPPER] - t)))
        .sum::<f64>()
        / m
}

/// Smoothed interval cost of a batch and its gradient with respect to the
/// `(upper, lower)` outputs.
pub fn smooth_cost(
    outputs: ArrayView2<'_, f64>,
    targets: &[f64],
    target_range: f64,
    nominal: f64,
    cfg: &BaselineConfig,
) -> Result<(SmoothCost, Array2<f64>)> {
    let m = targets.len();
    if m == 0 || outputs.nrows() != m || outputs.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: outputs.nrows(),
        });
    }
    if !(target_range > 0.0) {
        return Err(Error::arg("target range must be positive"));
    }
    let p = &cfg.cost_params;
    let k = cfg.sigmoid_sharpness;
    let mf = m as f64;
    let mut grad = Array2::zeros((m, 2));

    // smoothed coverage and d(picp)/d(outputs), accumulated separately
    let mut picp_s = 0.0;
    let mut dpicp = Array2::<f64>::zeros((m, 2));
    let mut width = 0.0;
    let mut swap = 0.0;
    let mut miss_dist = 0.0;
    let mut misses = 0usize;
    let mut mid_sq = 0.0;
    for (j, (row, &t)) in outputs.rows().into_iter().zip(targets).enumerate() {
        let (u, l) = (row[UPPER], row[LOWER]);
        let a = sigmoid(k * (t - l));
        let b = sigmoid(k * (u - t));
        picp_s += a * b;
        dpicp[[j, UPPER]] = a * b * (1.0 - b) * k / mf;
        dpicp[[j, LOWER]] = -b * a * (1.0 - a) * k / mf;
        width += u - l;
        if l > u {
            swap += l - u;
            grad[[j, LOWER]] += cfg.swap_penalty_weight / mf;
            grad[[j, UPPER]] -= cfg.swap_penalty_weight / mf;
        }
        if !metrics::covered(t, l.min(u), u.max(l)) {
            misses += 1;
            miss_dist += (t - u).abs().min((l - t).abs());
        }
        let mid = (u + l) / 2.0;
        mid_sq += (t - mid).powi(2);
    }
    picp_s /= mf;
    let pinaw = width / (target_range * mf);
    let d_pinaw = 1.0 / (target_range * mf);
    let fd_denom = target_range * misses as f64 + p.epsilon;
    let pinafd = miss_dist / fd_denom;
    let swap_penalty = cfg.swap_penalty_weight * swap / mf;

    // dC/dPINAW, dC/dPICP and the direct per-output terms of each cost
    let (value, c_pinaw, c_picp, c_pinafd, c_mid) = match cfg.cost_kind {
        CostKind::LubeCwc => {
            let gamma = if picp_s < nominal { 1.0 } else { 0.0 };
            let e = gamma * (p.eta * (nominal - picp_s)).exp();
            (pinaw * (1.0 + e), 1.0 + e, -pinaw * p.eta * e, 0.0, 0.0)
        }
        CostKind::MidInterval => {
            let e = (-p.eta * (picp_s - nominal)).exp();
            (
                p.beta1_mid * pinaw + p.beta2_mid * mid_sq + e,
                p.beta1_mid,
                -p.eta * e,
                0.0,
                p.beta2_mid,
            )
        }
        CostKind::Cwfdc => {
            let gap = nominal + p.delta_for(nominal) - picp_s;
            (
                pinaw + p.rho * pinafd + p.beta * gap * gap,
                1.0,
                -2.0 * p.beta * gap,
                p.rho,
                0.0,
            )
        }
    };

    for (j, (row, &t)) in outputs.rows().into_iter().zip(targets).enumerate() {
        let (u, l) = (row[UPPER], row[LOWER]);
        grad[[j, UPPER]] += c_pinaw * d_pinaw + c_picp * dpicp[[j, UPPER]];
        grad[[j, LOWER]] += -c_pinaw * d_pinaw + c_picp * dpicp[[j, LOWER]];
        if c_pinafd != 0.0 && !metrics::covered(t, l.min(u), u.max(l)) {
            if (t - u).abs() <= (l - t).abs() {
                grad[[j, UPPER]] += c_pinafd * (u - t).signum() / fd_denom;
            } else {
                grad[[j, LOWER]] += c_pinafd * (l - t).signum() / fd_denom;
            }
        }
        if c_mid != 0.0 {
            // d/du (t - (u + l)/2)^2 = -(t - mid)
            let r = t - (u + l) / 2.0;
            grad[[j, UPPER]] -= c_mid * r;
            grad[[j, LOWER]] -= c_mid * r;
        }
    }

    Ok((
        SmoothCost {
            value: value + swap_penalty,
            smooth_picp: picp_s,
            pinaw,
            pinafd,
            swap_penalty,
        },
        grad,
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub net: IntervalNet,
    /// Exact metrics on the training set after fine-tuning.
    pub train_metrics: IntervalMetrics,
    pub swap_rate: f64,
}

/// Full-batch Adam on [`smooth_cost`].
pub fn finetune(net: &IntervalNet, train: &Dataset, nominal: f64, cfg: &BaselineConfig) -> Result<FinetuneResult> {
    cfg.validate()?;
    let t = train.targets().as_slice().expect("contiguous").to_vec();
    let range = train.target_range();
    let tc = cfg.train_config(cfg.finetune_epochs, cfg.finetune_lr, cfg.seed.wrapping_add(1));
    let mut widths = Vec::with_capacity(cfg.finetune_epochs + 1);
    let mut failure = None;
    let trained = net.net.train_with(train.features().view(), &tc, |out, rows| {
        let tb: Vec<f64> = rows.iter().map(|&r| t[r]).collect();
        widths.push(median(out.rows().into_iter().map(|r| r[UPPER] - r[LOWER]).collect()));
        match smooth_cost(out.view(), &tb, range, nominal, cfg) {
            Ok((c, g)) => (c.value, g),
            Err(e) => {
                failure.get_or_insert(e);
                (f64::NAN, Array2::zeros(out.dim()))
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let trained = trained?;
    // first entry is the initial evaluation, last the final one
    widths.pop();
    let cost_trace = trained.meta.as_ref().map(|m| m.loss_trace.clone()).unwrap_or_default();
    let net = IntervalNet {
        net: trained,
        cost_trace,
        width_trace: widths.split_off(1.min(widths.len())),
    };
    let x = train.features().view();
    let swap_rate = net.swap_rate(x)?;
    if swap_rate >= 1.0 {
        return Err(Error::arg("fine-tuning collapsed: every interval is swapped"));
    }
    let (iv, _) = net.predict(x, nominal)?;
    let train_metrics =
        IntervalMetrics::compute(train.targets().as_slice().expect("contiguous"), &iv, range, &cfg.cost_params)?;
    Ok(FinetuneResult {
        net,
        train_metrics,
        swap_rate,
    })
}

/// Exact metrics of the interval net on a normalized test set.
pub fn evaluate_baseline(net: &IntervalNet, test: &Dataset, nominal: f64, params: &CostParams) -> Result<IntervalMetrics> {
    let (iv, _) = net.predict(test.features().view(), nominal)?;
    IntervalMetrics::compute(
        test.targets().as_slice().expect("contiguous"),
        &iv,
        test.target_range(),
        params,
    )
}

/// Outcome of one baseline training run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrial {
    pub seed: u64,
    pub test: IntervalMetrics,
    pub train: IntervalMetrics,
    pub swap_rate: f64,
    pub test_swaps: usize,
}

/// Normalizes on `train`, pretrains, fine-tunes and evaluates on `test`.
pub fn run_baseline(train: &Dataset, test: &Dataset, nominal: f64, cfg: &BaselineConfig) -> Result<(IntervalNet, BaselineTrial)> {
    let (train_n, norm) = normalize(train)?;
    let test_n = norm.apply(test)?;
    let net = IntervalNet::init(train.num_inputs(), cfg, norm)?;
    let pre = pretrain(&net, &train_n, cfg)?;
    let fine = finetune(&pre, &train_n, nominal, cfg)?;
    let (_, test_swaps) = fine.net.predict(test_n.features().view(), nominal)?;
    let test_metrics = evaluate_baseline(&fine.net, &test_n, nominal, &cfg.cost_params)?;
    Ok((
        fine.net,
        BaselineTrial {
            seed: cfg.seed,
            test: test_metrics,
            train: fine.train_metrics,
            swap_rate: fine.swap_rate,
            test_swaps,
        },
    ))
}

/// Independent trials seeded `base_seed + trial`, run in parallel.
pub fn run_trials(
    train: &Dataset,
    test: &Dataset,
    nominal: f64,
    cfg: &BaselineConfig,
    trials: usize,
) -> Result<Vec<BaselineTrial>> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = BaselineConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            run_baseline(train, test, nominal, &cfg).map(|(_, t)| t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn rough_target_margin() {
        let (u, l) = rough_targets(&[0.5, 0.1], 1.0, 0.25).unwrap();
        assert_eq!(u, vec![0.75, 0.35]);
        assert_eq!(l, vec![0.25, -0.15]);
        assert!(rough_targets(&[0.5], 1.0, 0.0).is_err());
        assert!(rough_targets(&[0.5], 1.0, 0.6).is_err());
    }

    #[test]
    fn config_bounds() {
        let mut cfg = BaselineConfig::desk(CostKind::Cwfdc);
        assert!(cfg.validate().is_ok());
        cfg.delta_t_fraction = 0.0;
        assert!(cfg.validate().is_err());
        assert_eq!(BaselineConfig::paper(CostKind::Cwfdc).hidden_layers, vec![1000, 1000]);
    }

    #[test]
    fn smooth_picp_saturates() {
        let out = array![[0.9, 0.1]];
        assert!(smooth_picp(out.view(), &[0.5], 50.0) > 0.99);
        assert!(smooth_picp(out.view(), &[2.0], 50.0) < 0.01);
    }

    #[test]
    fn swap_penalty_positive() {
        let cfg = BaselineConfig::desk(CostKind::Cwfdc);
        let (c, g) = smooth_cost(array![[0.3, 0.6]].view(), &[0.45], 1.0, 0.9, &cfg).unwrap();
        assert!(c.swap_penalty > 0.0);
        assert!(g[[0, LOWER]] > 0.0);
        let (c, _) = smooth_cost(array![[0.6, 0.3]].view(), &[0.45], 1.0, 0.9, &cfg).unwrap();
        assert_eq!(c.swap_penalty, 0.0);
    }

    fn fd_check(kind: CostKind) {
        let cfg = BaselineConfig {
            sigmoid_sharpness: 8.0,
            ..BaselineConfig::desk(kind)
        };
        let out = array![[0.7, 0.2], [0.55, 0.45], [0.4, 0.5], [0.9, 0.6], [0.35, 0.05]];
        let t = [0.5, 0.8, 0.45, 0.1, 0.3];
        let (_, g) = smooth_cost(out.view(), &t, 1.0, 0.9, &cfg).unwrap();
        let h = 1e-6;
        for j in 0..out.nrows() {
            for c in 0..2 {
                let mut hi = out.clone();
                let mut lo = out.clone();
                hi[[j, c]] += h;
                lo[[j, c]] -= h;
                let fd = (smooth_cost(hi.view(), &t, 1.0, 0.9, &cfg).unwrap().0.value
                    - smooth_cost(lo.view(), &t, 1.0, 0.9, &cfg).unwrap().0.value)
                    / (2.0 * h);
                assert_abs_diff_eq!(g[[j, c]], fd, epsilon = 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cost_gradients_match_finite_differences() {
        fd_check(CostKind::Cwfdc);
        fd_check(CostKind::MidInterval);
        fd_check(CostKind::LubeCwc);
    }
}
