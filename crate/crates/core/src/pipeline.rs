//! The proposed method end to end.
//!
//! Stages run in a fixed order: point network, absolute-error network,
//! similar-sample search, density network, bound calibration, then one
//! direct bound network per requested cumulative probability. The result is
//! a [`TrainedPipeline`] that can be written to and read from a bundle
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Generator, Normalizer, SplitSpec, TargetColumn};
use crate::error::{Error, Result};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::metrics::{CostParams, IntervalMetrics, IntervalSet};
use crate::nnet::{Activation, BatchSize, ModelBundle, NetSpec, Role, TrainConfig};
use crate::simsearch::{self, NeighborIndex, NeighborRow, SensitivityProfile};
use crate::uqbounds::{
    self, CalibrationMap, DensityBand, DensityModel, NeighborTargets,
};

/// Network size and training schedule for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: BatchSize,
}

impl NetProfile {
    /// Two 32-unit tanh layers, 600 full-batch epochs at 0.05.
    pub fn desk() -> Self {
        Self {
            hidden_layers: vec![32, 32],
            activation: Activation::Tanh,
            epochs: 600,
            learning_rate: 0.05,
            batch_size: BatchSize::Full,
        }
    }

    /// Two 500-unit layers, 600 epochs at 0.05.
    pub fn paper() -> Self {
        Self {
            hidden_layers: vec![500, 500],
            ..Self::desk()
        }
    }

    fn spec(&self, input_dim: usize, seed: u64) -> NetSpec {
        NetSpec {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            output_dim: 1,
            activation: self.activation,
            seed,
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub point: NetProfile,
    pub abs_error: NetProfile,
    pub density: NetProfile,
    pub ub: NetProfile,
}

impl Profiles {
    pub fn desk() -> Self {
        Self {
            point: NetProfile::desk(),
            abs_error: NetProfile::desk(),
            density: NetProfile::desk(),
            ub: NetProfile::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            point: NetProfile::paper(),
            abs_error: NetProfile::paper(),
            density: NetProfile::paper(),
            ub: NetProfile::paper(),
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Generator {
        generator: Generator,
        num_samples: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target_column: TargetColumn,
    },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Generator { generator, .. } => match generator {
                Generator::D1 => "d1".into(),
                Generator::D3 => "d3".into(),
            },
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }

    /// Loads or generates the full dataset (raw units).
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        match self {
            DatasetSource::Generator {
                generator,
                num_samples,
                seed,
            } => generator.generate(*num_samples, *seed),
            DatasetSource::Csv {
                path,
                target_column,
            } => Ok(data::load_csv(base_dir.join(path), target_column)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_select: usize,
    /// Fraction of the training set held out for bound calibration;
    /// zero calibrates on the entire training set.
    pub calibration_holdout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub profiles: Profiles,
    pub search: SearchConfig,
    /// Nominal coverages; each yields bound networks at `alpha/2` and
    /// `1 - alpha/2`.
    pub nominals: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub cost: CostParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Generator {
                generator: Generator::D1,
                num_samples: 2000,
                seed: 7,
            },
            split: SplitSpec::default(),
            profiles: Profiles::desk(),
            search: SearchConfig {
                n_select: 40,
                calibration_holdout: 0.0,
            },
            nominals: vec![0.90, 0.95],
            trials: 1,
            base_seed: 0,
            output_dir: PathBuf::from("runs/d1"),
            cost: CostParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nominals.is_empty() {
            return bad("at least one nominal coverage is required".into());
        }
        for &nom in &self.nominals {
            if !(nom > 0.0 && nom < 1.0) {
                return bad(format!("nominal coverage {nom} outside (0, 1)"));
            }
            let (lo, _) = uqbounds::tail_quantiles(nom);
            if lo < 0.01 - 1e-12 {
                return bad(format!("nominal {nom} needs a bound below the 0.01 grid"));
            }
        }
        if self.search.n_select == 0 {
            return bad("n_select must be positive".into());
        }
        if !(0.0..0.9).contains(&self.search.calibration_holdout) {
            return bad("calibration_holdout must lie in [0, 0.9)".into());
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        self.cost.validate()
    }

    /// Cumulative probabilities needing a bound network, ascending, deduplicated.
    pub fn quantiles(&self) -> Vec<f64> {
        let mut qs: Vec<f64> = self
            .nominals
            .iter()
            .flat_map(|&n| {
                let (lo, hi) = uqbounds::tail_quantiles(n);
                [round_q(lo), round_q(hi)]
            })
            .collect();
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        qs
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The config of trial `k`: same data, shifted network seeds.
    pub fn for_trial(&self, k: usize) -> Self {
        Self {
            base_seed: self.base_seed.wrapping_add(k as u64),
            trials: 1,
            ..self.clone()
        }
    }
}

/// Quantiles are stored to 1e-9 so `1 - 0.05` and `0.95` name the same net.
fn round_q(q: f64) -> f64 {
    (q * 1e9).round() / 1e9
}

/// Seeds per role, derived from the base seed.
pub fn role_seed(base: u64, role: Role, k: usize) -> u64 {
    let offset = match role {
        Role::Point => 1,
        Role::AbsError => 2,
        Role::Density => 3,
        Role::BoundCorrection => 4,
        Role::Interval => 5,
        Role::Ub => 100 + k as u64,
    };
    base.wrapping_mul(1000).wrapping_add(offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub normalizer: Normalizer,
    /// Normalized training set the search ran on.
    pub train: Dataset,
    pub point: ModelBundle,
    pub abs_error: ModelBundle,
    pub index: NeighborIndex,
    pub calibration: CalibrationMap,
    pub density: DensityModel,
    /// Bound networks ordered by quantile.
    pub ub_nets: Vec<ModelBundle>,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Per-row predictions in raw target units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub intervals: IntervalSet,
    pub point: Vec<f64>,
    pub density: Vec<f64>,
    pub swaps: usize,
}

fn stage<T>(timings: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::Bundle(format!("stage `{name}` failed: {e}")))?;
    timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

impl TrainedPipeline {
    /// Runs every stage on a raw training set.
    pub fn fit(config: &PipelineConfig, train_raw: &Dataset) -> Result<Self> {
        config.validate()?;
        let mut t = Vec::new();
        let (train, normalizer) = stage(&mut t, "normalize", || data::normalize(train_raw))?;
        let n_in = train.num_inputs();
        let base = config.base_seed;
        let profiles = &config.profiles;
        let fit_net = |profile: &NetProfile, role: Role, k: usize, data: &Dataset| {
            let seed = role_seed(base, role, k);
            ModelBundle::fit_mse(profile.spec(n_in, seed), role, normalizer.clone(), data, &profile.train_config(seed))
        };

        let point = stage(&mut t, "point_net", || fit_net(&profiles.point, Role::Point, 0, &train))?;
        let abs_error = stage(&mut t, "abs_error_net", || {
            let ae = simsearch::abs_error_dataset(&point, &train)?;
            fit_net(&profiles.abs_error, Role::AbsError, 0, &ae)
        })?;

        // with a calibration holdout, the search and bound labels use the fit part only
        let holdout = config.search.calibration_holdout;
        let (search_set, cal_set) = if holdout > 0.0 {
            let spec = SplitSpec {
                train_fraction: 1.0 - holdout,
                seed: role_seed(base, Role::BoundCorrection, 0),
                shuffle: true,
            };
            let (fit, cal) = data::split(&train, &spec)?;
            (fit, Some(cal))
        } else {
            (train.clone(), None)
        };

        let index = stage(&mut t, "similar_samples", || {
            simsearch::build_neighbor_index(&point, &abs_error, &search_set, config.search.n_select)
        })?;

        let density = stage(&mut t, "density_net", || {
            let targets = uqbounds::density_targets(&index.thresholds, uqbounds::DENSITY_EPSILON);
            let p = &profiles.density;
            let seed = role_seed(base, Role::Density, 0);
            uqbounds::train_density_net(
                &search_set,
                &targets,
                p.spec(n_in, seed),
                &p.train_config(seed),
                normalizer.clone(),
            )
        })?;

        let lists = NeighborTargets::new(&index, &search_set)?;
        let calibration = stage(&mut t, "bound_calibration", || match &cal_set {
            None => uqbounds::calibration_sweep(&index, &search_set),
            Some(cal) => holdout_calibration(&point, &abs_error, index.r_var, &search_set, cal, config.search.n_select),
        })?;

        let mut ub_nets = Vec::new();
        for (k, q) in config.quantiles().into_iter().enumerate() {
            let net = stage(&mut t, &format!("ub_net_{q}"), || {
                let labels = uqbounds::corrected_bound_targets(&lists, &calibration, q)?;
                let p = &profiles.ub;
                let seed = role_seed(base, Role::Ub, k);
                uqbounds::train_ub_net(&search_set, &labels, q, p.spec(n_in, seed), &p.train_config(seed), normalizer.clone())
            })?;
            ub_nets.push(net);
        }

        Ok(Self {
            config: config.clone(),
            normalizer,
            train: search_set,
            point,
            abs_error,
            index,
            calibration,
            density,
            ub_nets,
            stage_seconds: t,
        })
    }

    pub fn ub_net(&self, q: f64) -> Result<&ModelBundle> {
        let q = round_q(q);
        self.ub_nets
            .iter()
            .find(|n| n.quantile.map(round_q) == Some(q))
            .ok_or_else(|| Error::Bundle(format!("no bound network for quantile {q}")))
    }

    fn normalize_features(&self, x_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_raw.ncols() != self.normalizer.num_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.normalizer.num_inputs(),
                actual: x_raw.ncols(),
            });
        }
        let mut x = x_raw.to_owned();
        for mut row in x.rows_mut() {
            let v = self.normalizer.normalize_inputs(row.as_slice().expect("standard layout"))?;
            row.assign(&Array1::from(v));
        }
        Ok(x)
    }

    /// Intervals, point predictions and density scores for raw inputs.
    pub fn predict(&self, x_raw: ArrayView2<'_, f64>, nominal: f64) -> Result<Prediction> {
        let x = self.normalize_features(x_raw)?;
        let (lo_q, hi_q) = uqbounds::tail_quantiles(nominal);
        let (iv, swaps) = uqbounds::predict_intervals(
            &self.ub_net(lo_q)?.clone().with_quantile(lo_q),
            &self.ub_net(hi_q)?.clone().with_quantile(hi_q),
            x.view(),
            nominal,
        )?;
        let nz = &self.normalizer;
        let lower: Vec<f64> = iv.lower().iter().map(|&v| nz.denormalize_target(v)).collect();
        let upper: Vec<f64> = iv.upper().iter().map(|&v| nz.denormalize_target(v)).collect();
        let point = self
            .point
            .predict_batch(x.view())?
            .iter()
            .map(|&v| nz.denormalize_target(v))
            .collect();
        let density = self.density.net.predict_batch(x.view())?.to_vec();
        Ok(Prediction {
            intervals: IntervalSet::new(lower, upper, nominal)?,
            point,
            density,
            swaps,
        })
    }

    /// Exact interval metrics on a raw test set for each nominal.
    pub fn evaluate(&self, test_raw: &Dataset, nominals: &[f64]) -> Result<Vec<IntervalMetrics>> {
        let range = test_raw.target_range();
        let t = test_raw.targets().to_vec();
        nominals
            .iter()
            .map(|&nom| {
                let pred = self.predict(test_raw.features().view(), nom)?;
                IntervalMetrics::compute(&t, &pred.intervals, range, &self.config.cost)
            })
            .collect()
    }

    fn raw_rows(&self, rows: Vec<NeighborRow>) -> Vec<NeighborRow> {
        let nz = &self.normalizer;
        rows.into_iter()
            .map(|mut r| {
                for (k, v) in r.features.iter_mut().enumerate() {
                    *v = nz.input_min[k] + *v * (nz.input_max[k] - nz.input_min[k]);
                }
                r.target = nz.denormalize_target(r.target);
                r
            })
            .collect()
    }

    /// Stored neighbors of a training anchor, in raw units.
    pub fn anchor_neighbors(&self, anchor: usize) -> Result<Vec<NeighborRow>> {
        Ok(self.raw_rows(simsearch::neighbors_of(&self.index, &self.train, anchor)?))
    }

    /// Sensitivity profile of the trained networks at a normalized point.
    pub fn profile_at(&self, x_norm: &[f64]) -> Result<SensitivityProfile> {
        simsearch::sensitivities(&self.point, &self.abs_error, x_norm, self.index.r_var)
    }

    /// Neighbors of a raw feature vector, searched over the training set.
    pub fn vector_neighbors(&self, x_raw: &[f64]) -> Result<Vec<NeighborRow>> {
        let x = self.normalizer.normalize_inputs(x_raw)?;
        let profile = self.profile_at(&x)?;
        let (ids, devs) = simsearch::query_neighbors(&profile, &x, &self.train, self.index.n_select)?;
        Ok(self.raw_rows(simsearch::neighbor_table(&self.train, &ids, &devs)))
    }

    pub fn density_score(&self, x_raw: &[f64]) -> Result<(f64, DensityBand)> {
        let x = self.normalizer.normalize_inputs(x_raw)?;
        let s = self.density.predict(&x)?;
        Ok((s, self.density.band(s)))
    }

    /// Writes the bundle into a new directory `dir`, optionally with the
    /// held-out rows as `test.csv`, and finishes with the manifest.
    pub fn save(&self, dir: &Path, manifest: &mut RunManifest, test_raw: Option<&Dataset>) -> Result<()> {
        fs::create_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut write = |name: &str, contents: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
            manifest.add_output(&path, name)
        };
        write("config.toml", self.config.to_toml())?;
        let raw_train = self.normalizer.invert(&self.train)?;
        write("train.csv", dataset_csv(&raw_train))?;
        if let Some(test) = test_raw {
            write("test.csv", dataset_csv(test))?;
        }
        write("point.model", self.point.to_text())?;
        write("abs_error.model", self.abs_error.to_text())?;
        write("density.model", self.density.net.to_text())?;
        write("density.json", serde_json::to_string_pretty(&DensityMeta {
            epsilon: self.density.epsilon,
            band_edges: self.density.band_edges,
        }).expect("serializes"))?;
        write("neighbors.csv", neighbors_csv(&self.index))?;
        write("sensitivity.csv", sensitivity_csv(&self.index))?;
        write("search.json", serde_json::to_string_pretty(&SearchMeta {
            r_var: self.index.r_var,
            n_select: self.index.n_select,
        }).expect("serializes"))?;
        write("calibration.csv", self.calibration.to_csv())?;
        for net in &self.ub_nets {
            let q = net.quantile.expect("bound nets carry a quantile");
            write(&ub_file_name(q), net.to_text())?;
        }
        manifest.stage_seconds = self.stage_seconds.clone();
        manifest.write(&dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::Bundle(format!("missing bundle part {}: {e}", path.display())))
        };
        let config = PipelineConfig::from_toml(&read("config.toml")?)?;
        let point = ModelBundle::from_text(&read("point.model")?)?;
        let normalizer = point.normalizer.clone();
        let (raw_train, _) = data::read_csv(read("train.csv")?.as_bytes(), &TargetColumn::Index(normalizer.num_inputs()))?;
        let train = normalizer.apply(&raw_train)?;
        let abs_error = ModelBundle::from_text(&read("abs_error.model")?)?;
        let density_meta: DensityMeta = serde_json::from_str(&read("density.json")?)
            .map_err(|e| Error::Bundle(format!("density.json: {e}")))?;
        let density = DensityModel {
            net: ModelBundle::from_text(&read("density.model")?)?,
            epsilon: density_meta.epsilon,
            band_edges: density_meta.band_edges,
        };
        let search: SearchMeta = serde_json::from_str(&read("search.json")?)
            .map_err(|e| Error::Bundle(format!("search.json: {e}")))?;
        let index = parse_index(&read("neighbors.csv")?, &read("sensitivity.csv")?, search, train.len())?;
        let calibration = CalibrationMap::from_csv(&read("calibration.csv")?)?;
        let mut ub_nets = Vec::new();
        for q in config.quantiles() {
            let net = ModelBundle::from_text(&read(&ub_file_name(q))?)?;
            if net.role != Role::Ub || net.quantile.map(round_q) != Some(q) {
                return Err(Error::Bundle(format!("{} does not hold the {q} bound", ub_file_name(q))));
            }
            ub_nets.push(net);
        }
        let manifest = RunManifest::read(&dir.join(MANIFEST_FILE)).ok();
        Ok(Self {
            config,
            normalizer,
            train,
            point,
            abs_error,
            index,
            calibration,
            density,
            ub_nets,
            stage_seconds: manifest.map(|m| m.stage_seconds).unwrap_or_default(),
        })
    }
}

/// Achieved coverage measured on a held-out part of the training set, with
/// neighbors searched among the fit part.
fn holdout_calibration(
    point: &ModelBundle,
    abs_error: &ModelBundle,
    r_var: f64,
    fit: &Dataset,
    cal: &Dataset,
    n_select: usize,
) -> Result<CalibrationMap> {
    let combined = simsearch::combined_sensitivities(point, abs_error, cal.features().view(), r_var)?;
    let mut ids = Vec::with_capacity(cal.len());
    for (i, row) in cal.features().rows().into_iter().enumerate() {
        let profile = SensitivityProfile {
            s_p: Vec::new(),
            s_e: Vec::new(),
            s_en: combined.row(i).to_vec(),
            anchor_index: None,
        };
        ids.push(simsearch::query_neighbors(&profile, &row.to_vec(), fit, n_select)?.0);
    }
    let lists = NeighborTargets::from_ids(&ids, fit)?;
    let grid = uqbounds::nominal_grid();
    let found = uqbounds::achieved_coverage(&lists, cal.targets().as_slice().expect("contiguous"), &grid)?;
    CalibrationMap::from_found(grid, found)
}

pub fn ub_file_name(q: f64) -> String {
    format!("ub_q{:.4}.model", q)
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityMeta {
    epsilon: f64,
    band_edges: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SearchMeta {
    r_var: f64,
    n_select: usize,
}

/// CSV text with floats written for an exact round trip.
pub fn dataset_csv(d: &Dataset) -> String {
    let mut s = d.column_names().join(",");
    s.push('\n');
    for (row, t) in d.features().rows().into_iter().zip(d.targets()) {
        for v in row {
            s.push_str(&format!("{v:?},"));
        }
        s.push_str(&format!("{t:?}\n"));
    }
    s
}

fn neighbors_csv(idx: &NeighborIndex) -> String {
    let mut s = String::from("anchor,rank,neighbor_index,deviation\n");
    for (i, (ids, devs)) in idx.neighbor_ids.iter().zip(&idx.deviations).enumerate() {
        for (r, (j, d)) in ids.iter().zip(devs).enumerate() {
            s.push_str(&format!("{i},{},{j},{d:?}\n", r + 1));
        }
    }
    s
}

fn sensitivity_csv(idx: &NeighborIndex) -> String {
    let n = idx.combined.ncols();
    let mut s = String::from("anchor,threshold");
    for k in 1..=n {
        s.push_str(&format!(",s_en_{k}"));
    }
    s.push('\n');
    for (i, row) in idx.combined.rows().into_iter().enumerate() {
        s.push_str(&format!("{i},{:?}", idx.thresholds[i]));
        for v in row {
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
    s
}

fn parse_index(neighbors: &str, sensitivity: &str, meta: SearchMeta, n: usize) -> Result<NeighborIndex> {
    let bad = |m: String| Error::Bundle(format!("neighbor index: {m}"));
    let mut ids = vec![Vec::with_capacity(meta.n_select); n];
    let mut devs = vec![Vec::with_capacity(meta.n_select); n];
    let mut rdr = csv::Reader::from_reader(neighbors.as_bytes());
    for rec in rdr.deserialize::<(usize, usize, usize, f64)>() {
        let (a, rank, j, d) = rec?;
        if a >= n || j >= n || rank != ids[a].len() + 1 {
            return Err(bad(format!("bad row for anchor {a}")));
        }
        ids[a].push(j);
        devs[a].push(d);
    }
    if ids.iter().any(|r| r.len() != meta.n_select) {
        return Err(bad("anchor with wrong neighbor count".into()));
    }
    let mut rdr = csv::Reader::from_reader(sensitivity.as_bytes());
    let mut thresholds = Vec::with_capacity(n);
    let mut combined = Vec::new();
    let mut width = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| bad(format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() < 2 {
            return Err(bad("short sensitivity row".into()));
        }
        width = vals.len() - 1;
        thresholds.push(vals[0]);
        combined.extend_from_slice(&vals[1..]);
    }
    if thresholds.len() != n {
        return Err(bad("sensitivity rows do not match training rows".into()));
    }
    let combined = Array2::from_shape_vec((n, width), combined).map_err(|e| bad(e.to_string()))?;
    Ok(NeighborIndex {
        neighbor_ids: ids,
        deviations: devs,
        thresholds,
        combined,
        r_var: meta.r_var,
        n_select: meta.n_select,
    })
}

/// Loads the configured dataset and splits it.
pub fn load_and_split(config: &PipelineConfig, base_dir: &Path) -> Result<(Dataset, Dataset)> {
    let full = config.dataset.load(base_dir)?;
    data::split(&full, &config.split)
}

/// Seeds recorded in a manifest.
pub fn seed_table(config: &PipelineConfig) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    seeds.insert("base_seed".into(), config.base_seed);
    seeds.insert("split".into(), config.split.seed);
    if let DatasetSource::Generator { seed, .. } = config.dataset {
        seeds.insert("dataset".into(), seed);
    }
    for role in [Role::Point, Role::AbsError, Role::Density] {
        seeds.insert(role.as_str().into(), role_seed(config.base_seed, role, 0));
    }
    for (k, q) in config.quantiles().into_iter().enumerate() {
        seeds.insert(format!("ub_{q}"), role_seed(config.base_seed, Role::Ub, k));
    }
    seeds
}
