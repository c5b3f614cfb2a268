//! Tabular regression data: CSV ingestion, min-max normalization, splitting
//! and the two synthetic benchmark generators.
//!
//! A [`Dataset`] is immutable once built. Every transformation returns a new
//! value, so a dataset can be shared read-only across worker threads.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix (one row per sample) plus a scalar target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    /// `column_names` holds the `n` input names followed by the target name.
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = features.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one row and one input column, got {rows}x{cols}"
            )));
        }
        if targets.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: targets.len(),
            });
        }
        if column_names.len() != cols + 1 {
            return Err(Error::InvalidDataset(format!(
                "expected {} column names, got {}",
                cols + 1,
                column_names.len()
            )));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            features,
            targets,
            column_names,
        })
    }

    /// Builds a dataset with generated names `x1..xn` and `t`.
    pub fn from_arrays(features: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let names = default_names(features.ncols());
        Self::new(features, targets, names)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array1<f64> {
        &self.targets
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn input_names(&self) -> &[String] {
        &self.column_names[..self.num_inputs()]
    }

    pub fn target_name(&self) -> &str {
        &self.column_names[self.num_inputs()]
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Per-input `max - min`.
    pub fn input_ranges(&self) -> Vec<f64> {
        self.features
            .axis_iter(Axis(1))
            .map(|col| span(col.iter().copied()))
            .collect()
    }

    pub fn target_range(&self) -> f64 {
        span(self.targets.iter().copied())
    }

    /// Same inputs, new targets. Used for the absolute-error and density sets.
    pub fn with_targets(&self, targets: Array1<f64>, target_name: &str) -> Result<Self> {
        let mut names = self.input_names().to_vec();
        names.push(target_name.to_string());
        Self::new(self.features.clone(), targets, names)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select(Axis(0), rows),
            self.targets.select(Axis(0), rows),
            self.column_names.clone(),
        )
    }

    /// Writes the dataset as a headered, comma-delimited CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", self.column_names.join(",")).map_err(io)?;
        for (row, t) in self.features.rows().into_iter().zip(self.targets.iter()) {
            for v in row.iter() {
                write!(out, "{v},").map_err(io)?;
            }
            writeln!(out, "{t}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn default_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|k| format!("x{k}"))
        .chain(std::iter::once("t".to_string()))
        .collect()
}

fn span(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = min_max(values);
    hi - lo
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl TargetColumn {
    /// Numeric strings are read as indices, anything else as a header name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        }
    }
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Name("t".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub kept: usize,
    pub dropped: usize,
}

/// Loads a headered CSV. The target column is moved last; every other column
/// becomes an input. Rows with an empty or absent cell are dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target)
}

pub fn read_csv<R: std::io::Read>(reader: R, target: &TargetColumn) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target_idx = match target {
        TargetColumn::Index(i) if *i < header.len() => *i,
        TargetColumn::Index(i) => return Err(Error::UnknownColumn(i.to_string())),
        TargetColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
    };
    if header.len() < 2 {
        return Err(Error::InvalidDataset("need at least one input column".into()));
    }
    let input_cols: Vec<usize> = (0..header.len()).filter(|&c| c != target_idx).collect();

    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row_no = line + 2;
        let cell = |c: usize| record.get(c).filter(|s| !s.is_empty());
        if (0..header.len()).any(|c| cell(c).is_none()) {
            dropped += 1;
            continue;
        }
        let parse = |c: usize| -> Result<f64> {
            let raw = cell(c).unwrap_or_default();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonNumeric {
                    row: row_no,
                    column: header[c].clone(),
                    value: raw.to_string(),
                }),
            }
        };
        for &c in &input_cols {
            feats.push(parse(c)?);
        }
        targets.push(parse(target_idx)?);
    }
    let kept = targets.len();
    if kept == 0 {
        return Err(Error::NoUsableRows);
    }
    let features = Array2::from_shape_vec((kept, input_cols.len()), feats)
        .expect("row-major buffer sized from kept rows");
    let mut names: Vec<String> = input_cols.iter().map(|&c| header[c].clone()).collect();
    names.push(header[target_idx].clone());
    let ds = Dataset::new(features, Array1::from(targets), names)?;
    if ds.target_range() <= 0.0 {
        return Err(Error::DegenerateTargetRange);
    }
    Ok((ds, LoadReport { kept, dropped }))
}

/// Per-column min-max transform to `[0, 1]`, inputs and target alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub target_min: f64,
    pub target_max: f64,
}

impl Normalizer {
    /// Fits the transform to `d`, rejecting any zero-range column.
    pub fn fit(d: &Dataset) -> Result<Self> {
        let mut input_min = Vec::with_capacity(d.num_inputs());
        let mut input_max = Vec::with_capacity(d.num_inputs());
        for (k, col) in d.features.axis_iter(Axis(1)).enumerate() {
            let (lo, hi) = min_max(col.iter().copied());
            if hi <= lo {
                return Err(Error::ZeroRange(d.column_names[k].clone()));
            }
            input_min.push(lo);
            input_max.push(hi);
        }
        let (target_min, target_max) = min_max(d.targets.iter().copied());
        if target_max <= target_min {
            return Err(Error::ZeroRange(d.target_name().to_string()));
        }
        Ok(Self {
            input_min,
            input_max,
            target_min,
            target_max,
        })
    }

    /// Transform that leaves `n` inputs and the target unchanged.
    pub fn identity(n: usize) -> Self {
        Self {
            input_min: vec![0.0; n],
            input_max: vec![1.0; n],
            target_min: 0.0,
            target_max: 1.0,
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.input_min.len()
    }

    pub fn target_scale(&self) -> f64 {
        self.target_max - self.target_min
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        check_dim(self.num_inputs(), d.num_inputs())?;
        let mut features = d.features.clone();
        for mut row in features.rows_mut() {
            self.normalize_inputs_in_place(row.as_slice_mut().expect("standard layout"));
        }
        let targets = d.targets.mapv(|t| self.normalize_target(t));
        Dataset::new(features, targets, d.column_names.clone())
    }

    pub fn invert(&self, d: &Dataset) -> Result<Dataset> {
        check_dim(self.num_inputs(), d.num_inputs())?;
        let mut features = d.features.clone();
        for mut row in features.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.input_min[k] + *v * (self.input_max[k] - self.input_min[k]);
            }
        }
        let targets = d.targets.mapv(|t| self.denormalize_target(t));
        Dataset::new(features, targets, d.column_names.clone())
    }

    pub fn normalize_inputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.num_inputs(), x.len())?;
        let mut out = x.to_vec();
        self.normalize_inputs_in_place(&mut out);
        Ok(out)
    }

    fn normalize_inputs_in_place(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = (*v - self.input_min[k]) / (self.input_max[k] - self.input_min[k]);
        }
    }

    pub fn normalize_target(&self, t: f64) -> f64 {
        (t - self.target_min) / self.target_scale()
    }

    pub fn denormalize_target(&self, t: f64) -> f64 {
        self.target_min + t * self.target_scale()
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Fits a [`Normalizer`] on `d` and applies it.
pub fn normalize(d: &Dataset) -> Result<(Dataset, Normalizer)> {
    let norm = Normalizer::fit(d)?;
    Ok((norm.apply(d)?, norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Partitions rows into train and test. The first `floor(fraction * N)` rows
/// of the (optionally shuffled) order go to train.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = d.len();
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::arg(format!(
            "train_fraction {} leaves an empty part for {n} rows",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    Ok((
        d.select_rows(&order[..n_train])?,
        d.select_rows(&order[n_train..])?,
    ))
}

/// Built-in synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    D1,
    D3,
}

impl Generator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "d1" | "dataset1" => Some(Generator::D1),
            "d3" | "dataset3" => Some(Generator::D3),
            _ => None,
        }
    }

    pub fn generate(self, num_samples: usize, seed: u64) -> Result<Dataset> {
        match self {
            Generator::D1 => gen_dataset1(num_samples, seed),
            Generator::D3 => gen_dataset3(num_samples, seed),
        }
    }
}

pub const DATASET1_NOISE: f64 = 0.08;

/// Noise-free mean of the one-input homoscedastic benchmark.
pub fn dataset1_mean(x: f64) -> f64 {
    0.5 + 0.35 * (4.0 * PI * x).sin()
}

/// One input on `[0, 1]`, sinusoidal mean, constant uniform noise of
/// half-width [`DATASET1_NOISE`].
pub fn gen_dataset1(num_samples: usize, seed: u64) -> Result<Dataset> {
    check_samples(num_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((num_samples, 1));
    let mut t = Array1::zeros(num_samples);
    for i in 0..num_samples {
        let xi: f64 = rng.gen_range(0.0..1.0);
        let noise: f64 = rng.gen_range(-DATASET1_NOISE..DATASET1_NOISE);
        x[[i, 0]] = xi;
        t[i] = dataset1_mean(xi) + noise;
    }
    Dataset::from_arrays(x, t)
}

/// Width of the one-sided noise of the three-input benchmark as a function
/// of the second input.
pub fn dataset3_noise_width(x2: f64) -> f64 {
    0.1 + 0.35 * ((x2 - 1.0) / 2.0).clamp(0.0, 1.0)
}

pub fn dataset3_mean(x1: f64) -> f64 {
    (PI * x1 / 2.0).sin()
}

/// Three inputs on `[0, 4]`: the first drives the mean, the second the width
/// of a downward-only noise term, the third is unrelated to the target.
pub fn gen_dataset3(num_samples: usize, seed: u64) -> Result<Dataset> {
    check_samples(num_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((num_samples, 3));
    let mut t = Array1::zeros(num_samples);
    for i in 0..num_samples {
        let x1: f64 = rng.gen_range(0.0..4.0);
        let x2: f64 = rng.gen_range(0.0..4.0);
        let x3: f64 = rng.gen_range(0.0..4.0);
        let u: f64 = rng.gen_range(0.0..1.0);
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        x[[i, 2]] = x3;
        t[i] = dataset3_mean(x1) - u * dataset3_noise_width(x2);
    }
    Dataset::from_arrays(x, t)
}

fn check_samples(num_samples: usize) -> Result<()> {
    if num_samples < 10 {
        return Err(Error::arg(format!(
            "generators need at least 10 samples, got {num_samples}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column(values: &[f64]) -> Dataset {
        let n = values.len();
        let x = Array2::from_shape_vec((n, 1), values.to_vec()).unwrap();
        let t = Array1::from_iter((0..n).map(|i| i as f64));
        Dataset::from_arrays(x, t).unwrap()
    }

    #[test]
    fn drops_incomplete_rows() {
        let csv = "a,b,t\n1,2,3\n4,,6\n7,8,9\n1.5e1,2,0\n";
        let (d, rep) = read_csv(csv.as_bytes(), &TargetColumn::parse("t")).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(rep, LoadReport { kept: 3, dropped: 1 });
        assert_eq!(d.features()[[2, 0]], 15.0);
    }

    #[test]
    fn short_rows_and_crlf() {
        let csv = "a,t\r\n1,2\r\n3\r\n5,7\r\n";
        let (d, rep) = read_csv(csv.as_bytes(), &TargetColumn::Index(1)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(rep.dropped, 1);
        assert_eq!(d.targets(), &array![2.0, 7.0]);
    }

    #[test]
    fn target_column_moved_last() {
        let csv = "t,a,b\n1,2,3\n4,5,6\n";
        let (d, _) = read_csv(csv.as_bytes(), &TargetColumn::Index(0)).unwrap();
        assert_eq!(d.column_names(), &["a", "b", "t"]);
        assert_eq!(d.targets(), &array![1.0, 4.0]);
        assert_eq!(d.features(), &array![[2.0, 3.0], [5.0, 6.0]]);
    }

    #[test]
    fn constant_target_rejected() {
        let csv = "a,t\n1,2\n3,2\n";
        let err = read_csv(csv.as_bytes(), &TargetColumn::parse("t")).unwrap_err();
        assert_eq!(err.to_string(), "degenerate target range");
    }

    #[test]
    fn csv_errors() {
        let bad = "a,t\n1,2\nx,3\n";
        match read_csv(bad.as_bytes(), &TargetColumn::parse("t")).unwrap_err() {
            Error::NonNumeric { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            read_csv("a,t\n1,2\n".as_bytes(), &TargetColumn::parse("y")),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            read_csv("a,t\n1,\n".as_bytes(), &TargetColumn::parse("t")),
            Err(Error::NoUsableRows)
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &TargetColumn::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn normalize_endpoints() {
        let (n, _) = normalize(&column(&[2.0, 4.0, 6.0])).unwrap();
        assert_eq!(n.features().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.targets().to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_unit_column_is_identity() {
        let (n, _) = normalize(&column(&[0.0, 0.25, 1.0])).unwrap();
        assert_eq!(n.features().column(0).to_vec(), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn normalize_zero_range() {
        assert!(matches!(
            normalize(&column(&[3.0, 3.0])),
            Err(Error::ZeroRange(name)) if name == "x1"
        ));
    }

    #[test]
    fn split_counts_and_order() {
        let d = column(&(0..10).map(f64::from).collect::<Vec<_>>());
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 3,
            shuffle: false,
        };
        let (tr, te) = split(&d, &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(tr.targets().to_vec(), (0..8).map(f64::from).collect::<Vec<_>>());

        let spec = SplitSpec { shuffle: true, ..spec };
        let a = split(&d, &spec).unwrap();
        let b = split(&d, &spec).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<f64> = a.0.targets().iter().chain(a.1.targets()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_empty_part() {
        let d = column(&[1.0, 2.0, 3.0]);
        let spec = SplitSpec {
            train_fraction: 0.2,
            seed: 0,
            shuffle: false,
        };
        assert!(split(&d, &spec).is_err());
        let spec = SplitSpec {
            train_fraction: 1.0,
            ..spec
        };
        assert!(split(&d, &spec).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_dataset1(50, 7).unwrap(), gen_dataset1(50, 7).unwrap());
        assert_ne!(gen_dataset1(50, 7).unwrap(), gen_dataset1(50, 8).unwrap());
        assert_eq!(gen_dataset3(50, 7).unwrap(), gen_dataset3(50, 7).unwrap());
        assert!(gen_dataset1(9, 0).is_err());
    }

    #[test]
    fn dataset1_residuals_bounded() {
        let d = gen_dataset1(2000, 11).unwrap();
        for (x, t) in d.features().column(0).iter().zip(d.targets()) {
            assert!((t - dataset1_mean(*x)).abs() <= DATASET1_NOISE);
        }
    }

    #[test]
    fn dataset3_noise_is_one_sided() {
        let d = gen_dataset3(2000, 5).unwrap();
        for (row, t) in d.features().rows().into_iter().zip(d.targets()) {
            assert!(*t <= dataset3_mean(row[0]) + 1e-9);
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = gen_dataset3(20, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let (back, rep) = load_csv(&path, &TargetColumn::parse("t")).unwrap();
        assert_eq!(rep.dropped, 0);
        assert_eq!(back, d);
    }
}
