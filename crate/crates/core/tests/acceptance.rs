use std::f64::consts::TAU;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use superlinear::checkpoint::{checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint};
use superlinear::evaluation::{autoregressive_forecast, bound_report_with_weights, sine_mixture_experiment, SineExperimentConfig};
use superlinear::experts::ExpertBank;
use superlinear::gating::GatingNetwork;
use superlinear::resampling::{long_lookback_search, LongSearchConfig};
use superlinear::series_data::{chronological_split, load_csv, split_windows, standardize, CsvSchema};
use superlinear::spectral::{normalize_l1, periodogram, SpectralTransform};
use superlinear::training::{
    backward, dataset_mse, mse_loss, select_k, train_expert_on, train_expert_stage1, train_router_stage2, Architecture,
    ChannelMode, ExpertCorpusOptions, RouterData, Stage, TrainConfig,
};
use superlinear::{Frequency, LinearExpert, SplitSpec, SuperLinear, WindowSet};

type Check = superlinear::Result<(bool, String)>;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_expert(rng: &mut ChaCha8Rng, f: Option<Frequency>, l: usize, h: usize) -> LinearExpert<f64> {
    let w = gaussian(rng, l, h, 1.0 / (l as f64).sqrt());
    let b = Array1::from_shape_simple_fn(h, || 0.1 * rng.sample::<f64, _>(StandardNormal));
    match f {
        Some(f) => LinearExpert { weight: w, bias: b, ..LinearExpert::frequency(f, l, h) },
        None => LinearExpert::complementary(w, b),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let m = a.abs().max(b.abs());
    if m < 1e-8 {
        d
    } else {
        d / m
    }
}

fn loss_of(m: &SuperLinear<f64>, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let p = m.predict(x.view()).unwrap();
    mse_loss(p.view(), y.view()).unwrap().0
}

fn gradient_check() -> Check {
    let (l, h, bins) = (16, 4, 32);
    let step = 1e-5;
    let mut worst_tensor = 0.0f64;
    let mut worst_entry = 0.0f64;
    let mut tensors = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let freqs = [4, 8, 16].map(|p| Frequency::per_period(p).unwrap());
        let fe = freqs.iter().map(|f| random_expert(&mut rng, Some(*f), l, h)).collect();
        let ce = vec![random_expert(&mut rng, None, l, h)];
        let bank = ExpertBank::new(fe, ce, true, true, l, h)?;
        let n = bank.len();
        let gate = GatingNetwork::new(gaussian(&mut rng, bins, n, 3.0), gaussian(&mut rng, 1, n, 0.3).row(0).to_owned(), 0.0, 2)?;
        let model = SuperLinear::new(bank, gate)?;
        let x = gaussian(&mut rng, 8, l, 1.0) + 0.5;
        let y = gaussian(&mut rng, 8, h, 1.0);
        let features = model.gate.features(x.view())?;
        let decision = model.gate.infer(x.view())?;
        let (_, grads) = backward(&model, x.view(), features.view(), y.view(), &decision, true)?;

        let fd = |perturb: &dyn Fn(&mut SuperLinear<f64>, f64)| {
            let mut plus = model.clone();
            perturb(&mut plus, step);
            let mut minus = model.clone();
            perturb(&mut minus, -step);
            (loss_of(&plus, &x, &y) - loss_of(&minus, &x, &y)) / (2.0 * step)
        };
        let mut blocks: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (i, g) in grads.experts.iter().enumerate() {
            let g = g.as_ref().expect("all experts are trainable");
            let w = g.weight.indexed_iter().map(|((r, c), _)| fd(&|m, d| m.bank.linear_mut(i).unwrap().weight[[r, c]] += d));
            blocks.push((g.weight.iter().copied().collect(), w.collect()));
            let b = (0..g.bias.len()).map(|c| fd(&|m, d| m.bank.linear_mut(i).unwrap().bias[c] += d));
            blocks.push((g.bias.to_vec(), b.collect()));
        }
        let g = grads.gate.expect("gate gradient requested");
        let w = g.weight.indexed_iter().map(|((r, c), _)| fd(&|m, d| m.gate.weight[[r, c]] += d));
        blocks.push((g.weight.iter().copied().collect(), w.collect()));
        let b = (0..g.bias.len()).map(|c| fd(&|m, d| m.gate.bias[c] += d));
        blocks.push((g.bias.to_vec(), b.collect()));

        for (analytic, numeric) in blocks {
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            worst_tensor = worst_tensor.max(if scale > 0.0 { diff / scale } else { diff });
            for (a, b) in analytic.iter().zip(&numeric) {
                worst_entry = worst_entry.max(rel(*a, *b));
            }
            tensors += 1;
        }
    }
    Ok((
        worst_tensor <= 1e-5,
        format!("{tensors} parameter tensors, max relative error {worst_tensor:.2e} (largest single-entry {worst_entry:.1e})"),
    ))
}

fn dft_oracle(x: &[f64], m: usize) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let n2 = 2 * m;
    (0..m)
        .map(|j| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = TAU * ((j * t) % n2) as f64 / n2 as f64;
                re += (v - mean) * a.cos();
                im -= (v - mean) * a.sin();
            }
            (re * re + im * im) / n2 as f64
        })
        .collect()
}

fn spectral_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut dft, mut parseval, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    for n in [8usize, 64, 512] {
        for m in [n.div_ceil(2), n, 1000, 2500] {
            let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + 2.0).collect();
            let p = periodogram(&x, m)?;
            let oracle = dft_oracle(&x, m);
            let scale = oracle.iter().fold(0.0f64, |a, v| a.max(*v));
            let err = p.bins.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            dft = dft.max(err / scale);

            let mean = x.iter().sum::<f64>() / n as f64;
            let energy: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
            let full: f64 = SpectralTransform::<f64>::new(m)?.full_spectrum(&x)?.iter().sum();
            parseval = parseval.max((full - energy).abs() / energy);

            let total: f64 = normalize_l1(&p).bins.iter().sum();
            norm = norm.max((total - 1.0).abs());
        }
    }
    Ok((
        dft <= 1e-9 && parseval <= 1e-9 && norm <= 1e-12,
        format!("DFT {dft:.1e}, Parseval {parseval:.1e}, normalization {norm:.1e}"),
    ))
}

fn gating_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (l, bins, n) = (64, 64, 10);
    let gate = GatingNetwork::new(gaussian(&mut rng, bins, n, 5.0), gaussian(&mut rng, 1, n, 0.5).row(0).to_owned(), 0.1, 3)?;
    let x = gaussian(&mut rng, 1000, l, 1.0);
    let scores = gate.gate_scores(x.view())?;
    let mut sum_err = 0.0f64;
    let mut failures = Vec::new();
    let mut previous: Option<Vec<Vec<usize>>> = None;
    for k in 1..=n {
        let d = superlinear::gating::sparse_softmax(scores.clone(), k)?;
        for row in d.weights.outer_iter() {
            if row.iter().filter(|v| **v != 0.0).count() != k {
                failures.push(format!("k={k}: wrong support size"));
                break;
            }
            sum_err = sum_err.max((row.sum() - 1.0).abs());
        }
        if let Some(prev) = &previous {
            if prev.iter().zip(&d.active).any(|(a, b)| a.iter().any(|i| !b.contains(i))) {
                failures.push(format!("k={k}: active sets do not nest"));
            }
        }
        previous = Some(d.active.clone());
    }
    let base = gate.infer(x.view())?;
    for c in [1e-3, 0.37, 4.0, 1e4] {
        let scaled = gate.infer((&x * c).view())?;
        let drift = (&scaled.weights - &base.weights).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scaled.active != base.active || drift > 1e-9 {
            failures.push(format!("scale {c}: decision changed (drift {drift:.1e})"));
        }
    }
    if gate.infer(x.view())? != base {
        failures.push("inference is not deterministic".into());
    }
    if sum_err > 1e-9 {
        failures.push(format!("weight sums off by {sum_err:.1e}"));
    }
    let detail = if failures.is_empty() {
        format!("1000 inputs, k = 1..{n}, max sum error {sum_err:.1e}")
    } else {
        failures.join("; ")
    };
    Ok((failures.is_empty(), detail))
}

fn sine_check() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let seeds = 5;
    let mut sums: Vec<f64> = Vec::new();
    for seed in 0..seeds {
        let cfg = SineExperimentConfig { seed, ..Default::default() };
        let rows = pool.install(|| sine_mixture_experiment(&cfg))?;
        sums.resize(rows.len(), 0.0);
        for (s, r) in sums.iter_mut().zip(&rows) {
            *s += r.test_mse / seeds as f64;
        }
    }
    let monotone = sums.windows(2).all(|w| w[1] <= w[0]);
    let ratio = sums[sums.len() - 1] / sums[0];
    let table: Vec<String> = [1, 3, 6, 12].iter().zip(&sums).map(|(c, v)| format!("{c}:{v:.4}")).collect();
    Ok((monotone && ratio < 0.8, format!("mean MSE {} ratio {ratio:.3}", table.join(" "))))
}

fn tone(len: usize, period: f64, seed: u64, noise: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..TAU);
    (0..len)
        .map(|t| (TAU * t as f64 / period + phase).sin() + noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn routing_check() -> Check {
    let (l, h, bins, len) = (64, 16, 64, 4000);
    let periods = [32u64, 8];
    let split = SplitSpec::standard();
    let expert_cfg = SineExperimentConfig::default().expert_train;
    let mut experts = Vec::new();
    let mut sets: Vec<[WindowSet<f64>; 3]> = Vec::new();
    for (i, p) in periods.iter().enumerate() {
        let d = superlinear::Dataset::new(format!("tone_{p}"), vec![tone(len, *p as f64, 40 + i as u64, 0.1)])?;
        let w = split_windows(&d, &split, l, h, 1)?;
        let f = Frequency::per_period(*p)?;
        let (mut e, _) = train_expert_on(LinearExpert::frequency(f, l, h), &w[0], &w[1], &expert_cfg)?;
        e.frozen = true;
        experts.push(e);
        sets.push(w);
    }
    let bank = ExpertBank::new(experts, Vec::new(), false, false, l, h)?;
    let gate = superlinear::training::gate_init(bins, bank.len(), 2, 0.1, 0)?;
    let model = SuperLinear::new(bank, gate)?;
    let sp = model.gate.spectral().clone();
    let pooled = |k: usize| WindowSet::concat(&[sets[0][k].clone(), sets[1][k].clone()]);
    let train = RouterData::new(pooled(0)?, &sp)?;
    let val = RouterData::new(pooled(1)?, &sp)?;
    let router_cfg = TrainConfig { k: 2, ..SineExperimentConfig::default().router_train };
    let (trained, _) = train_router_stage2(model, &train, &val, &router_cfg)?;
    let eval = trained.with_top_k(1)?;
    let mut rates = Vec::new();
    for (i, p) in periods.iter().enumerate() {
        let want = eval.bank.frequencies().iter().position(|f| *f == Some(Frequency::per_period(*p).unwrap())).unwrap();
        let d = eval.gate.infer(sets[i][2].inputs())?;
        let hits = d.active.iter().filter(|a| a[0] == want).count();
        rates.push((p, hits as f64 / d.active.len() as f64));
    }
    let ok = rates.iter().all(|(_, r)| *r >= 0.9);
    let detail = rates.iter().map(|(p, r)| format!("period {p}: {:.1}%", 100.0 * r)).collect::<Vec<_>>().join(", ");
    Ok((ok, detail))
}

fn ett_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ETTh1.csv")
}

fn full_shot_check() -> Check {
    let (l, h) = (512, 96);
    let split = SplitSpec::ett();
    let raw = load_csv::<f32>(ett_path(), &CsvSchema::default())?.truncated(14_400);
    let (train_raw, _, _) = chronological_split(&raw, &split)?;
    let (_, _, mut scaled) = standardize(&train_raw, &[&raw])?;
    let full = scaled.remove(0);
    let (train_part, _, _) = chronological_split(&full, &split)?;
    let corpus = vec![train_part.with_frequency(Frequency::per_period(24)?)];

    let stage1 = TrainConfig {
        learning_rate: 0.001,
        batch_size: 256,
        epochs: 10,
        channel_mode: ChannelMode::Independent,
        ..TrainConfig::fs(Stage::ExpertPretrain)
    };
    let opts = ExpertCorpusOptions {
        cap_per_dataset: Some(20_000),
        ..Default::default()
    };
    let mut arch = Architecture::fs();
    let mut experts = Vec::new();
    let mut kept = Vec::new();
    for f in arch.frequencies.clone() {
        if let Ok((mut e, _)) = train_expert_stage1(&corpus, f, l, h, &stage1, &opts) {
            e.frozen = true;
            experts.push(e);
            kept.push(f);
        }
    }
    arch.frequencies = kept;
    let model = arch.assemble(experts, 12, 0.1, 0)?;
    let [wtr, wva, wte] = split_windows(&full, &split, l, h, 1)?;
    let sp = model.gate.spectral().clone();
    let (tr, va, te) = (RouterData::new(wtr, &sp)?, RouterData::new(wva, &sp)?, RouterData::new(wte, &sp)?);
    let stage2 = TrainConfig::fs(Stage::RouterTrain);
    let (best, _, sweep) = select_k(&model, &tr, &va, &stage2)?;
    let test = dataset_mse(&best, &te)?;
    let ks: Vec<String> = sweep.iter().map(|e| format!("k={}:{:.4}", e.k, e.val_loss)).collect();
    Ok((
        test <= 0.42,
        format!("{} frequency experts, val [{}], chosen k={}, test MSE {test:.4}", arch.frequencies.len(), ks.join(" "), best.top_k()),
    ))
}

fn search_model() -> superlinear::Result<SuperLinear<f64>> {
    let (l, h, bins) = (512, 16, 512);
    let fe = [512u64, 24].map(|p| LinearExpert::frequency(Frequency::per_period(p).unwrap(), l, h)).to_vec();
    let bank = ExpertBank::new(fe, Vec::new(), true, true, l, h)?;
    let n = bank.len();
    let slow = bank.frequencies().iter().position(|f| *f == Some(Frequency::per_period(512).unwrap())).unwrap();
    let mut w = Array2::zeros((bins, n));
    // bin j sits at j / (2 bins) cycles per step
    w[[2, slow]] = 20.0;
    SuperLinear::new(bank, GatingNetwork::new(w, Array1::zeros(n), 0.0, 2)?)
}

fn search_check() -> Check {
    let model = search_model()?;
    let l = model.lookback();
    let mut failures = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let len = rng.random_range(l + 1..=6 * l);
        let comps = rng.random_range(1..=3);
        let spec: Vec<(f64, f64)> = (0..comps).map(|_| (rng.random_range(1e-4..0.5), rng.random_range(0.1..2.0))).collect();
        let noise = rng.random_range(0.0..0.5);
        let x: Vec<f64> = (0..len)
            .map(|t| spec.iter().map(|(f, a)| a * (TAU * f * t as f64).sin()).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cfg = LongSearchConfig {
            highest_expert_frequency: if case % 2 == 0 { None } else { Some(rng.random_range(0.01..0.5)) },
            ..Default::default()
        };
        let (a, trace) = long_lookback_search(&x, &cfg, &model)?;
        let s = a.output_rescale as usize;
        let resampled_len = (len - 1) / s + 1;
        if a.input.len() != l || s > trace.max_scale.max(1) || resampled_len < l {
            failures.push(format!("case {case}: scale {s}, s_max {}, length {len}", trace.max_scale));
        }
    }

    let x = tone(4096, 2048.0, 5, 0.0);
    let (a, trace) = long_lookback_search(&x, &LongSearchConfig::default(), &model)?;
    let chosen = trace.candidates.iter().find(|c| c.0 == 4).and_then(|c| c.2);
    let long_ok = a.output_rescale == 4.0 && chosen.is_some_and(|v| v < trace.baseline_score);
    if !long_ok {
        failures.push(format!("period 2048 tone: scale {} ({:?})", a.output_rescale, trace.candidates));
    }

    let mut refused = 0;
    for (i, hi) in [0.26, 0.3, 0.4, 0.45].iter().enumerate() {
        for override_hi in [None, Some(0.5)] {
            let low = tone(4096, 2048.0, 20 + i as u64, 0.0);
            let high = tone(4096, 1.0 / hi, 30 + i as u64, 0.0);
            let x: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + 1.2 * b).collect();
            let cfg = LongSearchConfig {
                highest_expert_frequency: override_hi,
                ..Default::default()
            };
            let (a, trace) = long_lookback_search(&x, &cfg, &model)?;
            let bad = trace.candidates.iter().any(|(s, p, _)| *p >= 0.5 && a.output_rescale == *s as f64);
            if bad {
                failures.push(format!("high-frequency input {hi}: downsampled by {}", a.output_rescale));
            } else {
                refused += 1;
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("200 random inputs respect s_max and length; period 2048 tone picks s=4; {refused} high-energy inputs stay at full resolution")
    } else {
        failures.join("; ")
    };
    Ok((failures.is_empty(), detail))
}

fn bound_check() -> Check {
    let (l, h, n) = (64usize, 16usize, 3usize);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut violations = 0;
    let mut nonzero_at_beta = 0;
    let mut slack = f64::INFINITY;
    for _ in 0..100 {
        let mut js: Vec<u64> = Vec::new();
        while js.len() < n {
            let j = rng.random_range(1..32u64);
            if !js.contains(&j) {
                js.push(j);
            }
        }
        let basis = |t: usize, j: u64| {
            let a = TAU * j as f64 * t as f64 / l as f64;
            (a.sin(), a.cos())
        };
        let experts: Vec<LinearExpert<f64>> = js
            .iter()
            .map(|&j| {
                let mut w = Array2::zeros((l, h));
                for t in 0..l {
                    let (st, ct) = basis(t, j);
                    for u in 0..h {
                        let (su, cu) = basis(l + u, j);
                        w[[t, u]] = n as f64 * 2.0 / l as f64 * (st * su + ct * cu);
                    }
                }
                LinearExpert { weight: w, ..LinearExpert::frequency(Frequency::new(j, l as u64).unwrap(), l, h) }
            })
            .collect();
        let bank = ExpertBank::new(experts, Vec::new(), false, false, l, h)?;
        let k = rng.random_range(1..=n);
        let gate = GatingNetwork::new(gaussian(&mut rng, l, n, 5.0), Array1::zeros(n), 0.0, k)?;
        let model = SuperLinear::new(bank, gate)?;

        let level = rng.random_range(-2.0..2.0);
        let coefs: Vec<(f64, f64)> = js.iter().map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let series: Vec<f64> = (0..l + h)
            .map(|t| {
                level
                    + js.iter()
                        .zip(&coefs)
                        .map(|(&j, (a, b))| {
                            let (s, c) = basis(t, j);
                            a * s + b * c
                        })
                        .sum::<f64>()
            })
            .collect();
        let (x, y) = series.split_at(l);
        let beta = vec![1.0 / n as f64; n];
        let row = Array2::from_shape_vec((1, l), x.to_vec()).unwrap();
        let g: Vec<f64> = model.gate.infer(row.view())?.weights.row(0).to_vec();
        let r = bound_report_with_weights(&model, x, y, &g, Some(&beta), None, None)?;
        if r.empirical_error > r.bound {
            violations += 1;
        }
        slack = slack.min(r.bound - r.empirical_error);
        let at_beta = bound_report_with_weights(&model, x, y, &beta, Some(&beta), None, None)?;
        if at_beta.estimation_term != 0.0 {
            nonzero_at_beta += 1;
        }
    }
    Ok((
        violations == 0 && nonzero_at_beta == 0,
        format!("100 cases: {violations} violations, min slack {slack:.3e}; {nonzero_at_beta} nonzero estimation terms at G = beta"),
    ))
}

fn plumbing_check() -> Check {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (l, h) = (512, 96);
    let freqs = [24u64, 168, 12].map(|p| Frequency::per_period(p).unwrap());
    let fe: Vec<_> = freqs.iter().map(|f| random_expert(&mut rng, Some(*f), l, h)).collect();
    let arch = Architecture {
        frequencies: freqs.to_vec(),
        complementary: 2,
        bins: 300,
        ..Architecture::fs()
    };
    let model = arch.assemble(fe, 3, 0.1, 9)?;
    let x = Array2::from_shape_fn((4, l), |(r, t)| (TAU * t as f64 / 24.0 + r as f64).sin() + 0.01 * t as f64);

    let dir = tempfile::tempdir().map_err(|e| superlinear::Error::Data(e.to_string()))?;
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint {
        model: model.clone(),
        config: serde_json::json!({"seed": 9}),
        history: serde_json::json!({}),
    };
    save_checkpoint(&path, &ck)?;
    let back: Checkpoint<f64> = load_checkpoint(&path)?;
    if back.model != model || checkpoint_to_bytes(&back)? != checkpoint_to_bytes(&ck)? {
        failures.push("checkpoint round trip changed the model".to_string());
    }
    if back.model.predict(x.view())? != model.predict(x.view())? {
        failures.push("checkpoint round trip changed forecasts".to_string());
    }

    let zs = Architecture::zs();
    let analytic = zs.param_count();
    let built = zs.assemble::<f32>(
        zs.frequencies.iter().map(|f| LinearExpert::frequency(*f, zs.lookback, zs.horizon)).collect(),
        12,
        0.1,
        0,
    )?;
    let reported = built.num_params();
    let off = (reported as f64 - 2.5e6).abs() / 2.5e6;
    if reported != analytic || off > 0.05 {
        failures.push(format!("parameter count {reported} (analytic {analytic}) is {:.1}% from 2.5M", 100.0 * off));
    }

    let longest = autoregressive_forecast(&model, x.view(), 720)?;
    if longest.slice(s![.., ..h]) != model.predict(x.view())? {
        failures.push("first autoregressive block differs from a direct forecast".to_string());
    }
    for total in [192, 336] {
        let short = autoregressive_forecast(&model, x.view(), total)?;
        if short != longest.slice(s![.., ..total]) {
            failures.push(format!("horizon {total} is not a prefix of horizon 720"));
        }
    }
    let detail = if failures.is_empty() {
        format!("bit-exact checkpoint, {reported} parameters for the zero-shot preset, prefix property holds")
    } else {
        failures.join("; ")
    };
    Ok((failures.is_empty(), detail))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 9] = [
        ("1 gradient correctness", 10, gradient_check),
        ("2 spectral correctness", 10, spectral_check),
        ("3 gating invariants", 5, gating_check),
        ("4 expert-count sweep on sine mixtures", 600, sine_check),
        ("5 routing specialization", 120, routing_check),
        ("6 full-shot ETTh1", 1800, full_shot_check),
        ("7 long-lookback search", 60, search_check),
        ("8 error bound validity", 60, bound_check),
        ("9 plumbing", 60, plumbing_check),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let elapsed = t.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.1}s, limit {limit}s{}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
