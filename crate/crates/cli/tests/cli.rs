use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uqss::data::{self, TargetColumn};
use uqss::manifest::{sha256_hex, RunManifest, MANIFEST_FILE};
use uqss::metrics::{parse_report_csv, ReportRow};
use uqss::pipeline::{DatasetSource, PipelineConfig, TrainedPipeline};
use uqss::simsearch;

fn uqss(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqss"))
        .current_dir(dir)
        .env_remove("UQSS_OUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A fast config: small data, short schedules.
fn quick_config(dir: &Path, name: &str, edit: impl FnOnce(&mut PipelineConfig)) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.dataset = DatasetSource::Generator {
        generator: data::Generator::D1,
        num_samples: 300,
        seed: 3,
    };
    for p in [
        &mut cfg.profiles.point,
        &mut cfg.profiles.abs_error,
        &mut cfg.profiles.density,
        &mut cfg.profiles.ub,
    ] {
        p.hidden_layers = vec![8];
        p.epochs = 80;
    }
    cfg.search.n_select = 15;
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn train_quick(dir: &Path, bundle: &str) -> PathBuf {
    let cfg = quick_config(dir, &format!("{bundle}.toml"), |_| {});
    ok(&uqss(dir, &["train", "--config", cfg.to_str().unwrap(), "--out", bundle]));
    dir.join(bundle)
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn bundle_hashes(dir: &Path) -> BTreeMap<String, String> {
    RunManifest::read(&dir.join(MANIFEST_FILE)).unwrap().output_hashes()
}

#[test]
fn gen_writes_rows_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&uqss(d, &["gen", "--dataset", "d1", "--n", "2000", "--seed", "7", "--out", "a.csv"]));
    ok(&uqss(d, &["gen", "--dataset", "d1", "--n", "2000", "--seed", "7", "--out", "b.csv"]));
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 2001);
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());

    let m = RunManifest::read(&d.join("a.csv.manifest.json")).unwrap();
    assert_eq!(m.command, "gen");
    assert_eq!(m.output_hashes()["a.csv"], sha256_hex(&a));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = uqss(d, &["gen", "--dataset", "d7", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(!d.join("x.csv").exists());

    fs::write(d.join("bad.toml"), "nominals = [1.5]\n").unwrap();
    assert_eq!(uqss(d, &["train", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(uqss(d, &["config", "--check", "bad.toml"]).status.code(), Some(2));
    assert_eq!(uqss(d, &["baseline", "--cost", "hinge", "--out", "r"]).status.code(), Some(2));
}

#[test]
fn dumped_defaults_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = uqss(d, &["config", "--dump-defaults"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::default());
    ok(&uqss(d, &["config", "--dump-defaults", "--profile", "paper", "--out", "paper.toml"]));
    ok(&uqss(d, &["config", "--check", "paper.toml"]));
    assert!(d.join("paper.toml.manifest.json").exists());
}

#[test]
fn train_bundle_contents_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let b1 = train_quick(d, "b1");
    let cfg = d.join("b1.toml");
    ok(&uqss(d, &["train", "--config", cfg.to_str().unwrap(), "--out", "b2"]));

    let ub: Vec<_> = fs::read_dir(&b1)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ub_q"))
        .collect();
    assert_eq!(ub.len(), 4);

    let h1 = bundle_hashes(&b1);
    assert_eq!(h1, bundle_hashes(&d.join("b2")));
    for name in h1.keys() {
        assert!(b1.join(name).exists(), "{name} listed but missing");
    }
    // every file in the bundle is listed
    for e in fs::read_dir(&b1).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        assert!(name == MANIFEST_FILE || h1.contains_key(&name), "{name} not in manifest");
    }

    // no overwrite
    let again = uqss(d, &["train", "--config", cfg.to_str().unwrap(), "--out", "b1"]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn multi_trial_training_writes_trial_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    quick_config(d, "c.toml", |c| c.nominals = vec![0.9]);
    ok(&uqss(d, &["train", "--config", "c.toml", "--trials", "2", "--out", "multi"]));
    let top = bundle_hashes(&d.join("multi"));
    for k in 0..2 {
        let trial = d.join(format!("multi/trial_{k}"));
        for (name, hash) in bundle_hashes(&trial) {
            assert_eq!(top[&format!("trial_{k}/{name}")], hash);
        }
    }
    assert_ne!(
        fs::read(d.join("multi/trial_0/point.model")).unwrap(),
        fs::read(d.join("multi/trial_1/point.model")).unwrap()
    );
}

#[test]
fn stage_failure_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    quick_config(d, "c.toml", |c| c.search.n_select = 5000);
    let out = uqss(d, &["train", "--config", "c.toml", "--out", "never"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("similar_samples"));
    assert!(!d.join("never").exists());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_uqss"))
        .current_dir(d)
        .env("UQSS_OUT_ROOT", d.join("root"))
        .args(["gen", "--dataset", "d3", "--n", "50", "--out", "d3.csv"])
        .output()
        .unwrap();
    ok(&out);
    assert!(d.join("root/d3.csv").exists());
    assert!(d.join("root/d3.csv.manifest.json").exists());
}

#[test]
fn predict_evaluate_neighbors_density_on_a_quick_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bundle = train_quick(d, "b");
    let b = "b";

    // predict
    ok(&uqss(d, &["gen", "--dataset", "d1", "--n", "37", "--seed", "11", "--out", "in.csv"]));
    ok(&uqss(d, &["predict", "--bundle", b, "--input", "in.csv", "--nominal", "0.95", "--out", "p.csv"]));
    let (header, rows) = read_rows(&d.join("p.csv"));
    assert_eq!(header, ["x1", "lower", "upper", "point_prediction", "density"]);
    assert_eq!(rows.len(), 37);
    assert!(rows.iter().all(|r| r[2] >= r[1]));
    fs::write(d.join("wrong.csv"), "z,t\n1,2\n").unwrap();
    let bad = uqss(d, &["predict", "--bundle", b, "--input", "wrong.csv", "--out", "q.csv"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("schema mismatch"));

    // evaluate: one bundle and the same bundle twice as two trials
    let untrained = uqss(d, &["evaluate", "--bundle", b, "--nominal", "0.8", "--out", "ev0"]);
    assert_eq!(untrained.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&untrained.stderr).contains("no bound network"));
    assert!(!d.join("ev0").exists());
    ok(&uqss(d, &["evaluate", "--bundle", b, "--nominal", "0.9,0.95", "--out", "ev"]));
    let csv_rows = parse_report_csv(&fs::read_to_string(d.join("ev/report.csv")).unwrap()).unwrap();
    let json_rows: Vec<ReportRow> =
        serde_json::from_str(&fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(csv_rows.len(), 2);
    assert_eq!(csv_rows, json_rows);
    for r in &csv_rows {
        if r.picp >= r.nominal {
            assert_eq!(r.cwc, r.pinaw);
        }
    }
    ok(&uqss(d, &["evaluate", "--bundle", b, "--bundle", b, "--out", "ev2"]));
    let rows2 = parse_report_csv(&fs::read_to_string(d.join("ev2/report.csv")).unwrap()).unwrap();
    assert_eq!(rows2.len(), 2);
    assert!(rows2.iter().all(|r| r.trials == 2 && r.sigma_picp == 0.0));
    let trials = fs::read_to_string(d.join("ev2/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 4);

    // neighbors of a training anchor = its stored row
    ok(&uqss(d, &["neighbors", "--bundle", b, "--anchor", "5", "--out", "n5.csv"]));
    let (_, table) = read_rows(&d.join("n5.csv"));
    let stored: Vec<Vec<f64>> = read_rows(&bundle.join("neighbors.csv"))
        .1
        .into_iter()
        .filter(|r| r[0] == 5.0)
        .collect();
    assert_eq!(table.len(), stored.len());
    for (t, s) in table.iter().zip(&stored) {
        assert_eq!(t[1], s[2]);
        assert_eq!(t[2], s[3]);
    }
    assert!(table.windows(2).all(|w| w[0][2] <= w[1][2]));
    assert_eq!(uqss(d, &["neighbors", "--bundle", b, "--anchor", "100000"]).status.code(), Some(1));

    // novel vector: equals a brute-force recomputation
    ok(&uqss(d, &["neighbors", "--bundle", b, "--features", "0.4321", "--out", "nv.csv", "--plot-out", "plot.csv"]));
    let (_, table) = read_rows(&d.join("nv.csv"));
    let p = TrainedPipeline::load(&bundle).unwrap();
    let x = p.normalizer.normalize_inputs(&[0.4321]).unwrap();
    let profile = p.profile_at(&x).unwrap();
    let ranges = p.train.input_ranges();
    let mut brute: Vec<(f64, usize)> = (0..p.train.len())
        .map(|j| {
            let xj = p.train.row(j).to_vec();
            (simsearch::weighted_deviation(&profile, &x, &xj, &ranges).unwrap(), j)
        })
        .collect();
    brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let ids: Vec<usize> = table.iter().map(|r| r[1] as usize).collect();
    let expect: Vec<usize> = brute.iter().take(p.index.n_select).map(|b| b.1).collect();
    assert_eq!(ids, expect);
    let plot = fs::read_to_string(d.join("plot.csv")).unwrap();
    assert!(plot.starts_with("x1,target,kind\n"));
    assert_eq!(plot.lines().filter(|l| l.ends_with(",neighbor")).count(), p.index.n_select);
    assert_eq!(plot.lines().filter(|l| l.ends_with(",query")).count(), 1);

    // density
    let run = |out: &str| {
        let o = uqss(d, &["density", "--bundle", b, "--features", "0.5", "--out", out]);
        ok(&o);
        fs::read_to_string(d.join(out)).unwrap()
    };
    let first = run("d1.json");
    assert_eq!(first, run("d2.json"));
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert!(v["score"].as_f64().unwrap() >= 0.0);
    assert!(["low", "medium", "high"].contains(&v["band"].as_str().unwrap()));
    assert_eq!(uqss(d, &["density", "--bundle", b, "--features", "0.1,0.2"]).status.code(), Some(1));

    // nothing was written into the bundle
    let listed = bundle_hashes(&bundle);
    assert_eq!(fs::read_dir(&bundle).unwrap().count(), listed.len() + 1);
}

#[test]
fn dense_cluster_is_high_density() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // two bell-shaped clusters at logistic quantiles: 300 tight points
    // around 0.2, 60 loose ones around 0.7
    let logit = |i: usize, n: usize| {
        let p = (i as f64 + 0.5) / n as f64;
        (p / (1.0 - p)).ln()
    };
    let mut text = String::from("x1,t\n");
    for (centre, scale, n) in [(0.2, 0.01, 300), (0.7, 0.05, 60)] {
        for i in 0..n {
            let x: f64 = centre + scale * logit(i, n);
            text.push_str(&format!("{x},{}\n", (3.0 * x).sin()));
        }
    }
    fs::write(d.join("clusters.csv"), text).unwrap();
    quick_config(d, "c.toml", |c| {
        c.dataset = DatasetSource::Csv {
            path: "clusters.csv".into(),
            target_column: TargetColumn::Name("t".into()),
        };
        c.profiles.density.epochs = 400;
        c.profiles.density.hidden_layers = vec![16, 16];
    });
    ok(&uqss(d, &["train", "--config", "c.toml", "--out", "b"]));
    let out = uqss(d, &["density", "--bundle", "b", "--features", "0.2"]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["band"], "high", "{v}");
    let sparse = uqss(d, &["density", "--bundle", "b", "--features", "0.8"]);
    let s: serde_json::Value = serde_json::from_slice(&sparse.stdout).unwrap();
    assert!(s["score"].as_f64().unwrap() < v["score"].as_f64().unwrap());
}

#[test]
fn baseline_reports_one_row_per_nominal() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = uqss(
        d,
        &["baseline", "--dataset", "d1", "--n", "300", "--cost", "mid", "--nominal", "0.8,0.9", "--out", "bl"],
    );
    ok(&out);
    let rows = parse_report_csv(&fs::read_to_string(d.join("bl/report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.method == "baseline_mid" && r.trials == 1));
    let m = RunManifest::read(&d.join("bl").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.outputs.len(), 3);
}

/// Desk profile on the default d1 setup: the point prediction should sit
/// inside the 90% interval on nearly every test row.
#[test]
fn point_prediction_inside_interval_on_d1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.toml"), PipelineConfig::default().to_toml()).unwrap();
    ok(&uqss(d, &["train", "--config", "c.toml", "--out", "desk"]));
    ok(&uqss(d, &["predict", "--bundle", "desk", "--input", "desk/test.csv", "--nominal", "0.9", "--out", "p.csv"]));
    let (_, rows) = read_rows(&d.join("p.csv"));
    let inside = rows.iter().filter(|r| r[1] <= r[3] && r[3] <= r[2]).count();
    let frac = inside as f64 / rows.len() as f64;
    assert!(frac >= 0.95, "point inside interval on {frac:.3} of rows");
}
