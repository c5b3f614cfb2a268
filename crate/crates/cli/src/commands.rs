use std::fs;
use std::path::{Path, PathBuf};

use uqss::baseline::{self, BaselineConfig, CostKind};
use uqss::data::{self, Generator, TargetColumn};
use uqss::manifest::{FileHash, RunManifest, MANIFEST_FILE};
use uqss::metrics::{self, IntervalMetrics, ReportRow};
use uqss::pipeline::{self, DatasetSource, PipelineConfig, Profiles, TrainedPipeline};
use uqss::simsearch::NeighborRow;

use crate::io::{self, runtime, usage, CliResult, Staging};
use crate::{
    BaselineArgs, ConfigArgs, DensityArgs, EvaluateArgs, GenArgs, NeighborsArgs, PredictArgs, TrainArgs,
};

fn generator(name: &str) -> CliResult<Generator> {
    Generator::parse(name).ok_or_else(|| usage(format!("unknown generator `{name}` (expected d1 or d3)")))
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn gen(args: &GenArgs) -> CliResult {
    let generator = generator(&args.dataset)?;
    let out = io::resolve_out(&args.out);
    let d = generator.generate(args.n, args.seed)?;
    let mut manifest = RunManifest::new(
        "gen",
        serde_json::json!({"dataset": args.dataset, "n": args.n, "seed": args.seed}),
    );
    manifest.seeds.insert("dataset".into(), args.seed);
    io::write_file_output(&out, &pipeline::dataset_csv(&d), &mut manifest)?;
    eprintln!("wrote {} rows to {}", d.len(), out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> CliResult {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
        cfg.validate()?;
    }
    let out = io::resolve_out(args.out.as_ref().unwrap_or(&cfg.output_dir));
    let base = base_dir(&args.config);
    let (train, test) = pipeline::load_and_split(&cfg, &base)?;
    let staging = Staging::begin(&out)?;
    match train_into(&cfg, args, &base, &train, &test, &staging.dir) {
        Ok(()) => {
            staging.commit()?;
            eprintln!("bundle written to {}", out.display());
            Ok(())
        }
        Err(e) => {
            if let Some(q) = staging.quarantine() {
                eprintln!("partial outputs moved to {}", q.display());
            }
            Err(e)
        }
    }
}

fn train_manifest(cfg: &PipelineConfig, args: &TrainArgs, base: &Path) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("train", json(cfg));
    m.seeds = pipeline::seed_table(cfg);
    m.add_input(&args.config)?;
    if let DatasetSource::Csv { path, .. } = &cfg.dataset {
        m.add_input(&base.join(path))?;
    }
    Ok(m)
}

fn fit_one(cfg: &PipelineConfig, train: &data::Dataset, label: &str) -> CliResult<TrainedPipeline> {
    eprintln!("{label}: fitting {} training rows", train.len());
    let p = TrainedPipeline::fit(cfg, train)?;
    for (stage, secs) in &p.stage_seconds {
        eprintln!("{label}: {stage} {secs:.2}s");
    }
    Ok(p)
}

fn train_into(
    cfg: &PipelineConfig,
    args: &TrainArgs,
    base: &Path,
    train: &data::Dataset,
    test: &data::Dataset,
    dir: &Path,
) -> CliResult {
    if cfg.trials == 1 {
        let p = fit_one(cfg, train, "train")?;
        let mut m = train_manifest(cfg, args, base)?;
        return Ok(p.save(dir, &mut m, Some(test))?);
    }
    fs::create_dir(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let mut top = train_manifest(cfg, args, base)?;
    for k in 0..cfg.trials {
        let trial_cfg = cfg.for_trial(k);
        let name = format!("trial_{k}");
        let p = fit_one(&trial_cfg, train, &name)?;
        let mut m = train_manifest(&trial_cfg, args, base)?;
        let trial_dir = dir.join(&name);
        p.save(&trial_dir, &mut m, Some(test))?;
        for f in m.outputs {
            top.outputs.push(FileHash {
                path: format!("{name}/{}", f.path),
                ..f
            });
        }
        top.add_output(&trial_dir.join(MANIFEST_FILE), format!("{name}/{MANIFEST_FILE}"))?;
        for (stage, secs) in m.stage_seconds {
            top.stage_seconds.push((format!("{name}/{stage}"), secs));
        }
        for (role, seed) in m.seeds {
            top.seeds.insert(format!("{name}/{role}"), seed);
        }
    }
    Ok(top.write(&dir.join(MANIFEST_FILE))?)
}

fn load_bundle(dir: &Path) -> CliResult<TrainedPipeline> {
    Ok(TrainedPipeline::load(dir)?)
}

fn bundle_manifest(command: &str, bundle: &Path, config: serde_json::Value) -> CliResult<RunManifest> {
    let mut m = RunManifest::new(command, config);
    m.add_input(&bundle.join(MANIFEST_FILE))?;
    Ok(m)
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn predict(args: &PredictArgs) -> CliResult {
    let p = load_bundle(&args.bundle)?;
    let names = p.train.input_names().to_vec();
    let x = io::read_features(&args.input, &names)?;
    let pred = p.predict(x.view(), args.nominal)?;
    if pred.swaps > 0 {
        eprintln!("repaired {} bound swaps out of {} rows", pred.swaps, x.nrows());
    }
    let mut text = names.join(",");
    text.push_str(",lower,upper,point_prediction,density\n");
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|&v| num(v)).collect();
        fields.push(num(pred.intervals.lower()[i]));
        fields.push(num(pred.intervals.upper()[i]));
        fields.push(num(pred.point[i]));
        fields.push(num(pred.density[i]));
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    let mut m = bundle_manifest(
        "predict",
        &args.bundle,
        serde_json::json!({"bundle": args.bundle, "input": args.input, "nominal": args.nominal, "bound_swaps": pred.swaps}),
    )?;
    m.add_input(&args.input)?;
    io::write_file_output(&io::resolve_out(&args.out), &text, &mut m)
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let mut per_nominal: Vec<Vec<IntervalMetrics>> = Vec::new();
    let mut nominals = args.nominal.clone();
    let mut dataset = String::new();
    let mut trials = String::from("bundle,nominal,picp,pinaw,pinafd,cwc,cwfdc\n");
    let mut m = RunManifest::new("evaluate", serde_json::json!({
        "bundles": args.bundles, "test": args.test, "nominals": args.nominal,
    }));
    for bundle in &args.bundles {
        let p = load_bundle(bundle)?;
        if nominals.is_empty() {
            nominals = p.config.nominals.clone();
        }
        if dataset.is_empty() {
            dataset = p.config.dataset.name();
        }
        let test_path = args.test.clone().unwrap_or_else(|| bundle.join("test.csv"));
        let target = TargetColumn::Name(p.train.target_name().to_string());
        let (test, _) = data::load_csv(&test_path, &target)?;
        m.add_input(&bundle.join(MANIFEST_FILE))?;
        m.add_input(&test_path)?;
        let results = p.evaluate(&test, &nominals)?;
        per_nominal.resize(nominals.len(), Vec::new());
        for (k, r) in results.into_iter().enumerate() {
            trials.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                bundle.display(),
                r.nominal,
                r.picp,
                r.pinaw,
                r.pinafd,
                r.cwc,
                r.cwfdc
            ));
            per_nominal[k].push(r);
        }
    }
    let rows = per_nominal
        .iter()
        .map(|ms| Ok(ReportRow::from_summary(&dataset, "proposed", &metrics::aggregate(ms)?)))
        .collect::<CliResult<Vec<_>>>()?;
    write_report_dir(&io::resolve_out(&args.out), &rows, &trials, m)
}

fn write_report_dir(out: &Path, rows: &[ReportRow], trials: &str, mut m: RunManifest) -> CliResult {
    let staging = Staging::begin(out)?;
    staging.create()?;
    let result = (|| -> CliResult {
        for (name, text) in [
            ("report.csv", metrics::report_csv(rows)),
            ("report.json", metrics::report_json(rows)),
            ("trials.csv", trials.to_string()),
        ] {
            let path = staging.dir.join(name);
            fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            m.add_output(&path, name)?;
        }
        Ok(m.write(&staging.dir.join(MANIFEST_FILE))?)
    })();
    match result {
        Ok(()) => {
            staging.commit()?;
            print!("{}", metrics::report_csv(rows));
            Ok(())
        }
        Err(e) => {
            staging.quarantine();
            Err(e)
        }
    }
}

fn neighbor_csv(rows: &[NeighborRow], names: &[String]) -> String {
    let mut text = String::from("rank,neighbor_index,deviation");
    for n in names {
        text.push(',');
        text.push_str(n);
    }
    text.push('\n');
    for r in rows {
        text.push_str(&format!("{},{},{}", r.rank, r.neighbor_index, r.deviation));
        for v in r.features.iter().chain(std::iter::once(&r.target)) {
            text.push(',');
            text.push_str(&num(*v));
        }
        text.push('\n');
    }
    text
}

pub fn neighbors(args: &NeighborsArgs) -> CliResult {
    let p = load_bundle(&args.bundle)?;
    let (rows, query) = match (args.anchor, &args.features) {
        (Some(a), _) => {
            if a >= p.train.len() {
                return Err(runtime(format!("anchor {a} out of range (training set has {} rows)", p.train.len())));
            }
            (p.anchor_neighbors(a)?, None)
        }
        (None, Some(f)) => (p.vector_neighbors(f)?, Some(f.clone())),
        (None, None) => return Err(usage("give --anchor or --features")),
    };
    let raw_train = p.normalizer.invert(&p.train)?;
    let table = neighbor_csv(&rows, raw_train.column_names());
    let config = serde_json::json!({"bundle": args.bundle, "anchor": args.anchor, "features": args.features});
    match &args.out {
        Some(out) => {
            let mut m = bundle_manifest("neighbors", &args.bundle, config.clone())?;
            io::write_file_output(&io::resolve_out(out), &table, &mut m)?;
        }
        None => print!("{table}"),
    }
    if let Some(plot_out) = &args.plot_out {
        let names = raw_train.input_names();
        let cols: Vec<usize> = if args.plot_columns.is_empty() {
            (0..names.len().min(2)).collect()
        } else {
            args.plot_columns
                .iter()
                .map(|c| {
                    names.iter().position(|n| n == c).ok_or_else(|| usage(format!("unknown input column `{c}`")))
                })
                .collect::<CliResult<_>>()?
        };
        let mut text: Vec<String> = cols.iter().map(|&c| names[c].clone()).collect();
        text.extend(["target".to_string(), "kind".to_string()]);
        let mut csv = text.join(",") + "\n";
        let is_neighbor: std::collections::HashSet<usize> = rows.iter().map(|r| r.neighbor_index).collect();
        let push = |csv: &mut String, x: &[f64], t: Option<f64>, kind: &str| {
            for &c in &cols {
                csv.push_str(&num(x[c]));
                csv.push(',');
            }
            csv.push_str(&t.map(num).unwrap_or_default());
            csv.push(',');
            csv.push_str(kind);
            csv.push('\n');
        };
        for (i, row) in raw_train.features().rows().into_iter().enumerate() {
            let kind = if Some(i) == args.anchor {
                "anchor"
            } else if is_neighbor.contains(&i) {
                "neighbor"
            } else {
                "train"
            };
            push(&mut csv, &row.to_vec(), Some(raw_train.targets()[i]), kind);
        }
        if let Some(q) = &query {
            push(&mut csv, q, None, "query");
        }
        let mut m = bundle_manifest("neighbors", &args.bundle, config)?;
        io::write_file_output(&io::resolve_out(plot_out), &csv, &mut m)?;
    }
    Ok(())
}

pub fn density(args: &DensityArgs) -> CliResult {
    let p = load_bundle(&args.bundle)?;
    let (score, band) = p.density_score(&args.features)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "features": args.features, "score": score, "band": band.as_str(),
    }))
    .expect("serializes")
        + "\n";
    match &args.out {
        Some(out) => {
            let mut m = bundle_manifest(
                "density",
                &args.bundle,
                serde_json::json!({"bundle": args.bundle, "features": args.features}),
            )?;
            io::write_file_output(&io::resolve_out(out), &text, &mut m)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn baseline(args: &BaselineArgs) -> CliResult {
    let cost = CostKind::parse(&args.cost).ok_or_else(|| usage(format!("unknown cost `{}`", args.cost)))?;
    let mut bcfg = match args.profile.as_str() {
        "paper" => BaselineConfig::paper(cost),
        "desk" => BaselineConfig::desk(cost),
        other => return Err(usage(format!("unknown profile `{other}`"))),
    };
    bcfg.seed = args.seed;
    bcfg.validate()?;
    if args.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    for &nom in &args.nominal {
        if !(nom > 0.0 && nom < 1.0) {
            return Err(usage(format!("nominal coverage {nom} outside (0, 1)")));
        }
    }
    let (cfg, base) = match &args.config {
        Some(path) => (PipelineConfig::load(path)?, base_dir(path)),
        None => (
            PipelineConfig {
                dataset: DatasetSource::Generator {
                    generator: generator(&args.dataset)?,
                    num_samples: args.n,
                    seed: args.data_seed,
                },
                ..PipelineConfig::default()
            },
            PathBuf::new(),
        ),
    };
    let (train, test) = pipeline::load_and_split(&cfg, &base)?;
    let mut m = RunManifest::new(
        "baseline",
        serde_json::json!({"baseline": json(&bcfg), "dataset": json(&cfg.dataset), "split": json(&cfg.split),
            "nominals": args.nominal, "trials": args.trials}),
    );
    if let Some(path) = &args.config {
        m.add_input(path)?;
    }
    for k in 0..args.trials {
        m.seeds.insert(format!("trial_{k}"), bcfg.seed.wrapping_add(k as u64));
    }
    let method = format!("baseline_{}", cost.as_str());
    let mut rows = Vec::new();
    let mut trials = String::from("nominal,trial,seed,picp,pinaw,pinafd,cwc,cwfdc,train_swap_rate,test_swaps\n");
    for &nom in &args.nominal {
        eprintln!("{method}: nominal {nom}, {} trials", args.trials);
        let results = baseline::run_trials(&train, &test, nom, &bcfg, args.trials)?;
        for (k, r) in results.iter().enumerate() {
            let t = &r.test;
            trials.push_str(&format!(
                "{nom},{k},{},{},{},{},{},{},{},{}\n",
                r.seed, t.picp, t.pinaw, t.pinafd, t.cwc, t.cwfdc, r.swap_rate, r.test_swaps
            ));
        }
        let tests: Vec<IntervalMetrics> = results.iter().map(|r| r.test.clone()).collect();
        rows.push(ReportRow::from_summary(&cfg.dataset.name(), &method, &metrics::aggregate(&tests)?));
    }
    write_report_dir(&io::resolve_out(&args.out), &rows, &trials, m)
}

pub fn config(args: &ConfigArgs) -> CliResult {
    if let Some(path) = &args.check {
        let cfg = PipelineConfig::load(path)?;
        println!("{}: ok ({} bound networks per trial)", path.display(), cfg.quantiles().len());
        return Ok(());
    }
    let cfg = PipelineConfig {
        dataset: DatasetSource::Generator {
            generator: generator(&args.dataset)?,
            num_samples: 2000,
            seed: 7,
        },
        profiles: Profiles::named(&args.profile).ok_or_else(|| usage(format!("unknown profile `{}`", args.profile)))?,
        output_dir: PathBuf::from(format!("runs/{}", args.dataset)),
        ..PipelineConfig::default()
    };
    let text = cfg.to_toml();
    match &args.out {
        Some(out) => {
            let mut m = RunManifest::new("config", json(&cfg));
            io::write_file_output(&io::resolve_out(out), &text, &mut m)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
