use std::f64::consts::TAU;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superlinear::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use superlinear::evaluation::mse;
use superlinear::experts::naive_forward;
use superlinear::resampling::frequency_retarget;
use superlinear::series_data::split_windows;
use superlinear::spectral::periodogram;
use superlinear::training::{
    train_expert_stage1, train_router_stage2, ChannelMode, ExpertCorpusOptions, RouterData, Stage,
};
use superlinear::{Architecture, Checkpoint, Dataset, Error, Frequency, SplitSpec, TrainConfig};

fn tone(period: f64, len: usize, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|t| (TAU * t as f64 / period).sin() + noise * (rng.random::<f64>() - 0.5))
        .collect()
}

fn small_cfg(stage: Stage) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 8,
        patience: 3,
        k: 2,
        k_candidates: Vec::new(),
        sigma_noise: 0.0,
        channel_mode: ChannelMode::Independent,
        ..TrainConfig::fs(stage)
    }
}

fn corpus() -> Vec<Dataset<f64>> {
    vec![
        Dataset::new("a", vec![tone(24.0, 1200, 0.2, 1)])
            .unwrap()
            .with_frequency(Frequency::per_period(24).unwrap()),
        Dataset::new("b", vec![tone(12.0, 1200, 0.2, 2)])
            .unwrap()
            .with_frequency(Frequency::per_period(12).unwrap()),
    ]
}

#[test]
fn retargeting_moves_the_spectral_peak() {
    let x = tone(24.0, 960, 0.0, 0);
    let y = frequency_retarget(&x, Frequency::per_period(24).unwrap(), Frequency::per_period(48).unwrap(), 4.0, 64).unwrap();
    let p = periodogram(&y[..1024.min(y.len())], 1024).unwrap();
    let peak = p.bin_frequency(p.peak_bin());
    assert!((peak - 1.0 / 48.0).abs() < 1.0 / 2048.0 + 1e-12, "peak at {peak}");
    assert!(frequency_retarget(&x, Frequency::per_period(24).unwrap(), Frequency::per_period(480).unwrap(), 4.0, 64).is_none());
}

#[test]
fn stage_one_expert_beats_naive_on_held_out_tone() {
    let cfg = small_cfg(Stage::ExpertPretrain);
    let target = Frequency::per_period(24).unwrap();
    let (expert, history) = train_expert_stage1(&corpus(), target, 48, 12, &cfg, &ExpertCorpusOptions::default()).unwrap();
    assert!(history.best_val_loss.is_finite());
    let test = Dataset::new("t", vec![tone(24.0, 600, 0.2, 9)]).unwrap();
    let w = superlinear::series_data::make_windows(&test, 48, 12, 1, None, 0).unwrap();
    let pred = expert.forward(w.inputs()).unwrap();
    let naive = naive_forward(w.inputs(), 12);
    let e = mse(pred.view(), w.targets()).unwrap();
    let n = mse(naive.view(), w.targets()).unwrap();
    assert!(e < 0.5 * n, "expert {e} vs naive {n}");
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let cfg = small_cfg(Stage::ExpertPretrain);
    let target = Frequency::per_period(12).unwrap();
    let run = || train_expert_stage1(&corpus(), target, 48, 12, &cfg, &ExpertCorpusOptions::default()).unwrap();
    let (e1, h1) = run();
    let (e2, h2) = run();
    assert_eq!(e1, e2);
    assert_eq!(h1.without_timing(), h2.without_timing());
    let best = h1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, h1.best_val_loss);
    assert_eq!(h1.epochs[h1.best_epoch - 1].val_loss, best);
    if h1.stopped_early {
        assert_eq!(h1.epochs.len(), h1.best_epoch + cfg.patience);
    } else {
        assert_eq!(h1.epochs.len(), cfg.epochs);
    }
}

#[test]
fn early_stopping_halts_after_patience() {
    let mut cfg = small_cfg(Stage::ExpertPretrain);
    cfg.learning_rate = 50.0;
    cfg.epochs = 30;
    cfg.patience = 2;
    let (_, h) = train_expert_stage1(&corpus(), Frequency::per_period(24).unwrap(), 48, 12, &cfg, &ExpertCorpusOptions::default()).unwrap();
    assert!(h.stopped_early, "ran {} epochs", h.epochs.len());
    assert_eq!(h.epochs.len(), h.best_epoch + 2);
}

fn router_setup() -> (superlinear::SuperLinear<f64>, RouterData<f64>, RouterData<f64>) {
    let cfg = small_cfg(Stage::ExpertPretrain);
    let freqs = [Frequency::per_period(24).unwrap(), Frequency::per_period(12).unwrap()];
    let experts = freqs
        .iter()
        .map(|f| train_expert_stage1(&corpus(), *f, 48, 12, &cfg, &ExpertCorpusOptions::default()).unwrap().0)
        .collect();
    let arch = Architecture {
        frequencies: freqs.to_vec(),
        complementary: 1,
        naive: true,
        mean: true,
        bins: 32,
        lookback: 48,
        horizon: 12,
    };
    let mut model = arch.assemble(experts, 2, 0.1, 3).unwrap();
    model.bank.freeze_frequency_experts();
    let mix: Vec<f64> = tone(24.0, 1500, 0.1, 4).iter().zip(tone(12.0, 1500, 0.0, 5)).map(|(a, b)| a + b).collect();
    let d = Dataset::new("mix", vec![mix]).unwrap();
    let [tr, va, _] = split_windows(&d, &SplitSpec::standard(), 48, 12, 1).unwrap();
    let spectral = model.gate.spectral().clone();
    (model, RouterData::new(tr, &spectral).unwrap(), RouterData::new(va, &spectral).unwrap())
}

#[test]
fn router_training_leaves_frozen_experts_untouched() {
    let (model, tr, va) = router_setup();
    let cfg = small_cfg(Stage::RouterTrain);
    let (trained, h) = train_router_stage2(model.clone(), &tr, &va, &cfg).unwrap();
    assert_eq!(trained.bank.frequency_experts, model.bank.frequency_experts);
    assert_ne!(trained.gate.weight, model.gate.weight);
    assert!(h.best_val_loss <= h.epochs[0].val_loss);

    let mut thawed = model;
    thawed.bank.frequency_experts[0].frozen = false;
    assert!(matches!(train_router_stage2(thawed, &tr, &va, &cfg), Err(Error::Config(_))));
}

#[test]
fn checkpoint_damage_is_rejected_and_round_trip_preserves_forecasts() {
    let (model, _, va) = router_setup();
    let ck = Checkpoint {
        model,
        config: serde_json::json!({"seed": 3}),
        history: serde_json::json!([]),
    };
    let bytes = checkpoint_to_bytes(&ck).unwrap();
    let back = checkpoint_from_bytes::<f64>(&bytes).unwrap();
    let x = va.windows.inputs().select(Axis(0), &[0, 5, 10]);
    assert_eq!(back.model.predict(x.view()).unwrap(), ck.model.predict(x.view()).unwrap());
    assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let mut bad = bytes.clone();
        let i = rng.random_range(0..bad.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        assert!(checkpoint_from_bytes::<f64>(&bad).is_err(), "flip at byte {i} went unnoticed");
    }
    assert!(checkpoint_from_bytes::<f64>(&bytes[..bytes.len() / 2]).is_err());

    let narrow = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    let xf = x.mapv(|v| v as f32);
    let pf = narrow.model.predict(xf.view()).unwrap();
    let pd = ck.model.predict(x.view()).unwrap();
    for (a, b) in pf.iter().zip(pd.iter()) {
        assert!((*a as f64 - b).abs() < 1e-4 * (1.0 + b.abs()));
    }
}
