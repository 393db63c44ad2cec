use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use superlinear::checkpoint::{expert_from_bytes, expert_to_bytes, sha256_hex, ExpertFile};
use superlinear::evaluation::{
    bound_report, evaluate, expert_distribution, forecast_series, sine_mixture_experiment, AdaptConfig, EvalOptions,
    EvalReport, SineExperimentConfig,
};
use superlinear::experts::default_frequency_table;
use superlinear::frequency::parse_list;
use superlinear::resampling::ShortMode;
use superlinear::series_data::{chronological_split, load_csv, load_metadata, split_windows, CsvSchema, Scaler};
use superlinear::training::{
    select_k, train_expert_stage1, Architecture, ChannelMode, ExpertCorpusOptions, KSweepEntry, RouterData, Stage,
};
use superlinear::{load_checkpoint, save_checkpoint, Checkpoint, Dataset, Frequency, Scalar, SplitSpec, SuperLinear, TrainConfig, WindowSet};

use crate::args::{
    required, AnalyzeArgs, Channels, EvaluateArgs, ForecastArgs, Precision, Preset, Short, SineExpArgs, TrainExpertsArgs,
    TrainRouterArgs,
};
use crate::failure::Failure;

type Outcome = Result<(), Failure>;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub lookback: usize,
    pub horizon: usize,
    pub precision: Precision,
    pub experts: Vec<ManifestEntry>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frequency: Frequency,
    pub file: String,
    pub sha256: String,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skipped {
    pub frequency: Frequency,
    pub reason: String,
}

fn parse_split(s: &Option<String>, default: SplitSpec) -> Result<SplitSpec, Failure> {
    match s {
        Some(s) => Ok(s.parse()?),
        None => Ok(default),
    }
}

fn load_series<T: Scalar>(path: &Path, truncate: Option<usize>) -> Result<Dataset<T>, Failure> {
    if !path.exists() {
        return Err(Failure::Config(format!("input file {} does not exist", path.display())));
    }
    let d = load_csv::<T>(path, &CsvSchema::default())?;
    Ok(match truncate {
        Some(n) => d.truncated(n),
        None => d,
    })
}

fn channel_mode(c: Option<Channels>, default: ChannelMode) -> ChannelMode {
    match c {
        Some(Channels::Independent) => ChannelMode::Independent,
        Some(Channels::Multivariate) => ChannelMode::Multivariate,
        None => default,
    }
}

fn write_sidecar(path: &Path, value: &serde_json::Value) -> Outcome {
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    fs::write(PathBuf::from(side), serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn cap_option(cap: Option<usize>, default: Option<usize>) -> Option<usize> {
    match cap {
        Some(0) => None,
        Some(c) => Some(c),
        None => default,
    }
}

pub fn train_experts(a: &TrainExpertsArgs, seed: u64) -> Outcome {
    match a.precision.unwrap_or(Precision::F32) {
        Precision::F32 => train_experts_as::<f32>(a, seed),
        Precision::F64 => train_experts_as::<f64>(a, seed),
    }
}

fn train_experts_as<T: Scalar>(a: &TrainExpertsArgs, seed: u64) -> Outcome {
    let out = required(&a.out, "out")?;
    let corpus_paths = required(&a.corpus, "corpus")?;
    let preset = a.preset.unwrap_or(Preset::Zs);
    let lookback = a.lookback.unwrap_or(512);
    let horizon = a.horizon.unwrap_or(96);
    let base = match preset {
        Preset::Zs => TrainConfig::zs(Stage::ExpertPretrain),
        Preset::Fs => TrainConfig::fs(Stage::ExpertPretrain),
    };
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        epochs: a.epochs.unwrap_or(base.epochs),
        patience: a.patience.unwrap_or(base.patience),
        channel_mode: channel_mode(a.channel_mode, base.channel_mode),
        seed,
        ..base
    };
    cfg.validate()?;
    let defaults = ExpertCorpusOptions::default();
    let opts = ExpertCorpusOptions {
        cap_per_dataset: cap_option(a.cap, match preset {
            Preset::Zs => defaults.cap_per_dataset,
            Preset::Fs => None,
        }),
        stride: a.stride.unwrap_or(1),
        ..defaults
    };
    let freqs = match &a.freqs {
        Some(s) => parse_list(s)?,
        None => default_frequency_table(),
    };
    let meta = match &a.metadata {
        Some(p) => load_metadata(p)?,
        None => Vec::new(),
    };
    let split = a.split.as_ref().map(|s| s.parse::<SplitSpec>()).transpose()?;

    let mut corpus = Vec::new();
    for p in &corpus_paths {
        let mut d = load_series::<T>(p, a.truncate)?;
        d.apply_metadata(&meta);
        let Some(_) = d.dominant_frequency else {
            return Err(Failure::Config(format!(
                "dataset `{}` has no dominant frequency; add a row `{},<sampling rate>,1/<period>` to the metadata file passed with --metadata",
                d.name, d.name
            )));
        };
        if let Some(s) = &split {
            d = chronological_split(&d, s)?.0;
        }
        let scaled = Scaler::fit(&d).transform(&d)?;
        corpus.push(scaled);
    }

    fs::create_dir_all(&out)?;
    let manifest_path = out.join(MANIFEST);
    let mut manifest = if manifest_path.exists() && !a.force {
        let m: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        if m.lookback != lookback || m.horizon != horizon {
            return Err(Failure::Config(format!(
                "existing manifest was trained with L={} H={}; rerun with --force to replace it",
                m.lookback, m.horizon
            )));
        }
        m
    } else {
        Manifest {
            seed,
            lookback,
            horizon,
            precision: a.precision.unwrap_or(Precision::F32),
            experts: Vec::new(),
            skipped: Vec::new(),
        }
    };

    for f in freqs {
        if !a.force {
            if let Some(e) = manifest.experts.iter().find(|e| e.frequency == f) {
                let path = out.join(&e.file);
                if path.exists() && sha256_hex(&fs::read(&path)?) == e.sha256 {
                    log::info!("expert {f} already trained; skipping");
                    continue;
                }
                log::warn!("expert {f} is missing or altered on disk; retraining");
            } else if manifest.skipped.iter().any(|s| s.frequency == f) {
                log::info!("expert {f} was skipped before; skipping");
                continue;
            }
        }
        manifest.experts.retain(|e| e.frequency != f);
        manifest.skipped.retain(|s| s.frequency != f);
        match train_expert_stage1(&corpus, f, lookback, horizon, &cfg, &opts) {
            Ok((expert, history)) => {
                let file = format!("expert_{}_{}.slx", f.numer(), f.denom());
                let bytes = expert_to_bytes(&ExpertFile {
                    expert,
                    history: serde_json::to_value(history.without_timing())?,
                })?;
                fs::write(out.join(&file), &bytes)?;
                log::info!(
                    "{}",
                    json!({"event": "expert_saved", "frequency": f, "file": file, "best_val_loss": history.best_val_loss})
                );
                manifest.experts.push(ManifestEntry {
                    frequency: f,
                    file,
                    sha256: sha256_hex(&bytes),
                    best_val_loss: history.best_val_loss,
                    best_epoch: history.best_epoch,
                    config: cfg.clone(),
                });
            }
            Err(e @ (superlinear::Error::Training(_) | superlinear::Error::Data(_) | superlinear::Error::EmptyDataset(_))) => {
                log::warn!("expert {f} skipped: {e}");
                manifest.skipped.push(Skipped {
                    frequency: f,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e.into()),
        }
        manifest.experts.sort_by_key(|e| e.frequency);
        fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    }
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    println!(
        "{} experts in {} ({} skipped)",
        manifest.experts.len(),
        manifest_path.display(),
        manifest.skipped.len()
    );
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Manifest, Failure> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Failure::Config(format!(
            "no stage-1 manifest at {}; run train-experts first",
            path.display()
        )));
    }
    serde_json::from_slice(&fs::read(&path)?).map_err(|e| Failure::Integrity(format!("{}: {e}", path.display())))
}

/// Loads and verifies every expert listed in the manifest.
pub fn load_experts<T: Scalar>(dir: &Path) -> Result<(Manifest, Vec<superlinear::LinearExpert<T>>), Failure> {
    let manifest = read_manifest(dir)?;
    if manifest.experts.is_empty() {
        return Err(Failure::Data("the manifest lists no trained experts".into()));
    }
    let mut experts = Vec::new();
    for e in &manifest.experts {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Failure::Integrity(format!("expert file {}: {err}", path.display())))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Failure::Integrity(format!("{} does not match its manifest checksum", path.display())));
        }
        let mut x = expert_from_bytes::<T>(&bytes)?.expert;
        if x.frequency != Some(e.frequency) || x.lookback() != manifest.lookback || x.horizon() != manifest.horizon {
            return Err(Failure::Integrity(format!("{} does not match its manifest entry", path.display())));
        }
        x.frozen = true;
        experts.push(x);
    }
    Ok((manifest, experts))
}

pub fn train_router(a: &TrainRouterArgs, seed: u64) -> Outcome {
    match a.precision.unwrap_or(Precision::F32) {
        Precision::F32 => train_router_as::<f32>(a, seed),
        Precision::F64 => train_router_as::<f64>(a, seed),
    }
}

fn router_windows<T: Scalar>(a: &TrainRouterArgs, l: usize, h: usize, seed: u64) -> Result<[WindowSet<T>; 3], Failure> {
    let split = parse_split(&a.split, SplitSpec::standard())?;
    let mut parts: [Vec<WindowSet<T>>; 3] = Default::default();
    for p in required(&a.data, "data")? {
        let raw = load_series::<T>(&p, a.truncate)?;
        let (train, _, _) = chronological_split(&raw, &split)?;
        let scaled = Scaler::fit(&train).transform(&raw)?;
        let [tr, va, te] = split_windows(&scaled, &split, l, h, a.stride.unwrap_or(1))?;
        let tr = match cap_option(a.cap, None) {
            Some(c) => tr.capped(c, seed),
            None => tr,
        };
        for (slot, w) in parts.iter_mut().zip([tr, va, te]) {
            slot.push(w);
        }
    }
    let [tr, va, te] = parts;
    Ok([WindowSet::concat(&tr)?, WindowSet::concat(&va)?, WindowSet::concat(&te)?])
}

fn train_router_as<T: Scalar>(a: &TrainRouterArgs, seed: u64) -> Outcome {
    let dir = required(&a.experts, "experts")?;
    let out = required(&a.out, "out")?;
    let (manifest, experts) = load_experts::<T>(&dir)?;
    let preset = a.preset.unwrap_or(Preset::Fs);
    let base_arch = match preset {
        Preset::Zs => Architecture::zs(),
        Preset::Fs => Architecture::fs(),
    };
    let arch = Architecture {
        frequencies: manifest.experts.iter().map(|e| e.frequency).collect(),
        complementary: if a.no_comp { 0 } else { a.complementary.unwrap_or(base_arch.complementary) },
        naive: !a.no_naive_mean,
        mean: !a.no_naive_mean,
        bins: a.bins.unwrap_or(base_arch.bins),
        lookback: manifest.lookback,
        horizon: manifest.horizon,
    };
    let base = match preset {
        Preset::Zs => TrainConfig::zs(Stage::RouterTrain),
        Preset::Fs => TrainConfig::fs(Stage::RouterTrain),
    };
    let k_candidates = match (&a.k_sweep, a.k) {
        (Some(ks), _) => ks.clone(),
        (None, Some(_)) => Vec::new(),
        (None, None) => base.k_candidates.clone(),
    };
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        epochs: a.epochs.unwrap_or(base.epochs),
        patience: a.patience.unwrap_or(base.patience),
        k: a.k.unwrap_or(base.k).min(arch.num_experts()),
        k_candidates,
        sigma_noise: a.noise.unwrap_or(base.sigma_noise),
        channel_mode: channel_mode(a.channel_mode, base.channel_mode),
        seed,
        ..base
    };
    cfg.validate()?;

    let model = arch.assemble(experts, cfg.k, cfg.sigma_noise, seed)?;
    let [tr, va, _] = router_windows::<T>(a, arch.lookback, arch.horizon, seed)?;
    if tr.is_empty() || va.is_empty() {
        return Err(Failure::Data(format!(
            "the data yields {} training and {} validation windows for L={} H={}",
            tr.len(),
            va.len(),
            arch.lookback,
            arch.horizon
        )));
    }
    let sp = model.gate.spectral().clone();
    let (tr, va) = (RouterData::new(tr, &sp)?, RouterData::new(va, &sp)?);
    let (trained, history, sweep) = select_k(&model, &tr, &va, &cfg)?;
    for KSweepEntry { k, val_loss, best_epoch } in &sweep {
        log::info!("{}", json!({"event": "k_sweep", "k": k, "val_loss": val_loss, "best_epoch": best_epoch}));
    }
    let snapshot = TrainRouterArgs { out: None, ..a.clone() };
    let ck = Checkpoint {
        model: trained,
        config: json!({
            "seed": seed,
            "preset": preset,
            "architecture": arch,
            "train": cfg,
            "args": snapshot,
        }),
        history: json!({"history": history.without_timing(), "k_sweep": sweep}),
    };
    save_checkpoint(&out, &ck)?;
    println!(
        "router trained: k={} best validation MSE {:.4} -> {}",
        ck.model.top_k(),
        history.best_val_loss,
        out.display()
    );
    Ok(())
}

fn load_model(path: &Option<PathBuf>) -> Result<Checkpoint<f64>, Failure> {
    let path = required(path, "checkpoint")?;
    if !path.exists() {
        return Err(Failure::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint::<f64>(&path)?)
}

pub fn forecast(a: &ForecastArgs, seed: u64) -> Outcome {
    let ck = load_model(&a.checkpoint)?;
    let model = ck.model;
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let horizon = a.horizon.unwrap_or(model.horizon());
    let mut cfg = AdaptConfig::default();
    if let Some(s) = &a.scales {
        cfg.long.scales = s.clone();
    }
    if let Some(v) = a.lambda {
        cfg.long.lambda = v;
    }
    if let Some(v) = a.max_energy_loss {
        cfg.long.max_energy_loss = v;
    }
    if let Some(v) = a.highest_frequency {
        if !(v > 0.0 && v <= 0.5) {
            return Err(Failure::Config(format!("--highest-frequency must lie in (0, 0.5], got {v}")));
        }
        cfg.long.highest_expert_frequency = Some(v);
    }
    cfg.short_mode = match a.short_mode {
        Some(Short::Exact) => ShortMode::Exact,
        _ => ShortMode::CeilFactor,
    };
    let data = load_series::<f64>(&input, None)?;
    let mut columns = Vec::new();
    let mut adaptations = Vec::new();
    for (name, x) in data.channel_names.iter().zip(&data.channels) {
        let (y, adapt) = forecast_series(&model, x, horizon, &cfg)?;
        let record = json!({
            "event": "lookback_adaptation",
            "channel": name,
            "input_len": x.len(),
            "method": adapt.method,
            "output_rescale": adapt.output_rescale,
        });
        log::info!("{record}");
        adaptations.push(record);
        columns.push(y);
    }
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(&data.channel_names)?;
    for t in 0..horizon {
        w.write_record(columns.iter().map(|c| c[t].to_string()))?;
    }
    w.flush()?;
    write_sidecar(&out, &json!({"seed": seed, "args": a, "adaptations": adaptations}))?;
    println!("{} x {} forecast written to {}", horizon, columns.len(), out.display());
    Ok(())
}

pub fn evaluate_cmd(a: &EvaluateArgs, seed: u64) -> Outcome {
    let ck = load_model(&a.checkpoint)?;
    let metrics: Vec<String> = a
        .metric
        .clone()
        .unwrap_or_else(|| vec!["mse".into(), "mae".into()])
        .into_iter()
        .map(|m| m.to_ascii_lowercase())
        .collect();
    if let Some(m) = metrics.iter().find(|m| !["mse", "mae", "mase"].contains(&m.as_str())) {
        return Err(Failure::Config(format!("unknown metric `{m}`; use mse, mae or mase")));
    }
    if metrics.iter().any(|m| m == "mase") && a.season.is_none() {
        return Err(Failure::Config("--metric mase needs --season".into()));
    }
    let split = parse_split(&a.split, SplitSpec::standard())?;
    let opts = EvalOptions {
        horizons: a.horizons.clone().unwrap_or_else(|| EvalOptions::default().horizons),
        k: a.k,
        season: a.season.filter(|_| metrics.iter().any(|m| m == "mase")),
        stride: a.stride.unwrap_or(1),
    };
    let mut report = EvalReport::default();
    for p in required(&a.data, "data")? {
        let raw = load_series::<f64>(&p, a.truncate)?;
        let r = evaluate(&ck.model, &raw, &split, &opts)?;
        report.records.extend(r.records.into_iter().filter(|r| metrics.contains(&r.metric)));
        report.histograms.extend(r.histograms);
    }
    print!("{report}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        report.write_csv(dir.join("report.csv"))?;
        report.write_histogram_csv(dir.join("histogram.csv"))?;
        write_sidecar(&dir.join("report.csv"), &json!({"seed": seed, "args": a, "options": opts}))?;
    }
    Ok(())
}

fn architecture_of(m: &SuperLinear<f64>) -> Architecture {
    Architecture {
        frequencies: m.bank.frequencies().into_iter().flatten().collect(),
        complementary: m.bank.complementary_experts.len(),
        naive: m.bank.include_naive,
        mean: m.bank.include_mean,
        bins: m.gate.num_bins(),
        lookback: m.lookback(),
        horizon: m.horizon(),
    }
}

pub fn analyze(a: &AnalyzeArgs, seed: u64) -> Outcome {
    let model = match (&a.checkpoint, a.preset) {
        (Some(_), _) => Some(load_model(&a.checkpoint)?.model),
        (None, Some(_)) => None,
        (None, None) => return Err(Failure::Config("analyze needs --checkpoint or --preset".into())),
    };
    let arch = match (&model, a.preset) {
        (Some(m), _) => architecture_of(m),
        (None, Some(Preset::Zs)) => Architecture::zs(),
        (None, _) => Architecture::fs(),
    };
    if a.params || a.data.is_none() {
        let analytic = arch.param_count();
        let reported = model.as_ref().map_or(analytic, SuperLinear::num_params);
        let linear = arch.frequencies.len() + arch.complementary;
        println!("experts           {} ({} frequency, {} complementary, naive {}, mean {})", arch.num_experts(), arch.frequencies.len(), arch.complementary, arch.naive, arch.mean);
        println!("linear experts    {linear} x ({} x {} + {})", arch.lookback, arch.horizon, arch.horizon);
        println!("gate              {} x {} + {}", arch.bins, arch.num_experts(), arch.num_experts());
        println!("parameters        {reported}");
        println!("analytic formula  {analytic}");
        if reported != analytic {
            return Err(Failure::Integrity(format!("parameter count {reported} differs from the analytic {analytic}")));
        }
    }
    let Some(path) = &a.data else {
        return Ok(());
    };
    let Some(model) = model else {
        return Err(Failure::Config("--data needs --checkpoint".into()));
    };
    let split = parse_split(&a.split, SplitSpec::standard())?;
    let raw = load_series::<f64>(path, a.truncate)?;
    let (train, _, _) = chronological_split(&raw, &split)?;
    let scaled = Scaler::fit(&train).transform(&raw)?;
    let [_, _, test] = split_windows(&scaled, &split, model.lookback(), model.horizon(), 1)?;
    if test.is_empty() {
        return Err(Failure::Data(format!("{} has no test windows for L={}", raw.name, model.lookback())));
    }
    let hist = expert_distribution(&model, test.inputs())?;
    println!("{:<24} {:>10} {:>12} {:>10}", "expert", "frequency", "mean weight", "selected");
    for i in 0..hist.names.len() {
        let f = hist.frequencies[i].map_or("-".to_string(), |f| f.to_string());
        println!("{:<24} {:>10} {:>12.4} {:>10.4}", hist.names[i], f, hist.mean_weight[i], hist.selection_rate[i]);
    }

    let n = a.windows.unwrap_or(100).min(test.len());
    let step = (test.len() / n.max(1)).max(1);
    let mut rows = Vec::new();
    for r in (0..test.len()).step_by(step).take(n) {
        let x: Vec<f64> = test.inputs().row(r).to_vec();
        let y: Vec<f64> = test.targets().row(r).to_vec();
        rows.push(bound_report(&model, &x, &y, None, None, a.eps)?);
    }
    let mean = |f: &dyn Fn(&superlinear::evaluation::BoundReport) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let holds = rows.iter().filter(|r| r.empirical_error <= r.bound).count();
    println!(
        "bound over {} windows: mean sqrt(E_perp) {:.4}, estimation {:.4}, bound {:.4}, error {:.4}; holds in {holds}",
        rows.len(),
        mean(&|r| r.e_perp.sqrt()),
        mean(&|r| r.estimation_term),
        mean(&|r| r.bound),
        mean(&|r| r.empirical_error),
    );
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let report = EvalReport {
            records: Vec::new(),
            histograms: vec![(raw.name.clone(), hist)],
        };
        report.write_histogram_csv(dir.join("histogram.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("bound.csv"))?;
        w.write_record(["window", "e_perp", "estimation_term", "bound", "empirical_error", "gamma", "relaxed_bound"])?;
        for (i, r) in rows.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.e_perp.to_string(),
                r.estimation_term.to_string(),
                r.bound.to_string(),
                r.empirical_error.to_string(),
                r.gamma.to_string(),
                r.relaxed_bound.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        write_sidecar(&dir.join("bound.csv"), &json!({"seed": seed, "args": a}))?;
    }
    Ok(())
}

pub fn sine_exp(a: &SineExpArgs, seed: u64) -> Outcome {
    let defaults = SineExperimentConfig::default();
    let counts = a.expert_counts.clone().unwrap_or(defaults.expert_counts.clone());
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::Config("--expert-counts must be strictly ascending".into()));
    }
    let seeds = a.seeds.unwrap_or(5).max(1);
    let mut table: Vec<Vec<f64>> = Vec::new();
    for s in seed..seed + seeds {
        let cfg = SineExperimentConfig {
            num_freqs: a.num_freqs.unwrap_or(defaults.num_freqs),
            noise_scale: a.noise.unwrap_or(defaults.noise_scale),
            expert_counts: counts.clone(),
            length: a.length.unwrap_or(defaults.length),
            seed: s,
            ..defaults.clone()
        };
        let rows = sine_mixture_experiment(&cfg)?;
        log::info!("{}", json!({"event": "sine_seed", "seed": s, "rows": rows}));
        table.push(rows.iter().map(|r| r.test_mse).collect());
    }
    println!("{:>8} {:>12}", "experts", "test MSE");
    let means: Vec<f64> = (0..counts.len())
        .map(|i| table.iter().map(|r| r[i]).sum::<f64>() / table.len() as f64)
        .collect();
    for (c, m) in counts.iter().zip(&means) {
        println!("{c:>8} {m:>12.5}");
    }
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out)?;
        let mut header = vec!["expert_count".to_string(), "mean_test_mse".to_string()];
        header.extend((seed..seed + seeds).map(|s| format!("seed_{s}")));
        w.write_record(&header)?;
        for (i, c) in counts.iter().enumerate() {
            let mut rec = vec![c.to_string(), means[i].to_string()];
            rec.extend(table.iter().map(|r| r[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        write_sidecar(out, &json!({"seed": seed, "args": a}))?;
    }
    Ok(())
}
