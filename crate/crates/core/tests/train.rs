use lszone::dsp::{ComplexSpectrogram, StftConfig};
use lszone::gradcheck::check_params;
use lszone::model::{build_model, load_weights, LsZoneModel, ModelConfig};
use lszone::sim::dataset::{build_dataset, write_manifest, SimulateConfig};
use lszone::train::{
    accumulate_grad, checkpoint_path, example_loss, loss_mse_complex, loss_mse_complex_grad, lr_schedule, prepare_example,
    train, train_step, Adam, EpochRecord, Example, TrainConfig, FINAL_WEIGHTS_FILE, LOSS_CURVE_FILE,
};
use lszone::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

fn random_spec(rng: &mut ChaCha8Rng, c: usize, f: usize, t: usize) -> ComplexSpectrogram<f64> {
    let mut s = ComplexSpectrogram::zeros(c, f, t);
    for z in 0..c {
        for k in 0..f {
            for n in 0..t {
                s.set(z, k, n, Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
        }
    }
    s
}

fn random_wave(rng: &mut ChaCha8Rng, ch: usize, n: usize) -> Vec<Vec<f64>> {
    (0..ch).map(|_| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
}

/// Six zones and full mel resolution, minimal network.
fn small6() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        hidden_units: 8,
        blocks: 1,
        ..ModelConfig::default()
    }
}

fn tiny_example(seed: u64) -> (LsZoneModel<f64>, Example<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model::<f64>(&ModelConfig::tiny(), &StftConfig::default(), seed).unwrap();
    for (_, v) in model.store_mut().params_mut().iter_mut() {
        for x in v.iter_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    let mix = random_wave(&mut rng, 2, 2560);
    let target = random_wave(&mut rng, 2, 2560);
    let ex = prepare_example(&model, "g", &mix, &target).unwrap();
    (model, ex)
}

#[test]
fn schedule_values() {
    assert_eq!(lr_schedule(0), 0.001);
    assert!((lr_schedule(1) - 0.00099).abs() < 1e-18);
    assert!((lr_schedule(100) - 3.660323412732292e-4).abs() < 1e-12);
    let oracle: f64 = (0..100).fold(0.001, |lr, _| lr * 0.99);
    assert!((lr_schedule(100) - oracle).abs() < 1e-15);
}

#[test]
fn loss_reference_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = random_spec(&mut rng, 3, 9, 4);
    assert_eq!(loss_mse_complex(&s, &s).unwrap(), 0.0);
    let mut unit = ComplexSpectrogram::zeros(2, 5, 3);
    for z in 0..2 {
        for k in 0..5 {
            for t in 0..3 {
                let ph: f64 = rng.random_range(0.0..6.28);
                unit.set(z, k, t, Complex::new(ph.cos(), ph.sin()));
            }
        }
    }
    let zero = ComplexSpectrogram::zeros(2, 5, 3);
    assert!((loss_mse_complex(&zero, &unit).unwrap() - 0.5).abs() < 1e-15);
    assert!(loss_mse_complex(&zero, &ComplexSpectrogram::<f64>::zeros(2, 5, 4)).is_err());
}

#[test]
fn loss_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let est = random_spec(&mut rng, 2, 5, 3);
    let tgt = random_spec(&mut rng, 2, 5, 3);
    let (_, g) = loss_mse_complex_grad(&est, &tgt).unwrap();
    let h = 1e-6;
    for (z, k, t) in [(0, 0, 0), (1, 4, 2), (0, 3, 1)] {
        for im in [false, true] {
            let bump = |d: f64| {
                let mut e = est.clone();
                let mut v = e.get(z, k, t);
                if im { v.im += d } else { v.re += d }
                e.set(z, k, t, v);
                loss_mse_complex(&e, &tgt).unwrap()
            };
            let num = (bump(h) - bump(-h)) / (2.0 * h);
            let ana = if im { g.get(z, k, t).im } else { g.get(z, k, t).re };
            assert!((num - ana).abs() < 1e-9, "{num} vs {ana}");
        }
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for seed in [3, 4] {
        let (model, ex) = tiny_example(seed);
        let mut grads = model.store().new_grads();
        accumulate_grad(&model, model.params(), &mut grads, &ex, 1.0).unwrap();
        let mut store = model.store().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let r = check_params("model", &mut store, &grads, Some((40, &mut rng)), |p| example_loss(&model, p, &ex).unwrap());
        assert!(r.checked >= 20);
        assert!(r.passed(1e-5), "{r:?}");
    }
}

#[test]
fn decoder_gradient_matches_finite_differences() {
    let (mut model, ex) = tiny_example(9);
    let mut grads = model.store().new_grads();
    accumulate_grad(&model, model.params(), &mut grads, &ex, 1.0).unwrap();
    // freeze everything but the decoder so sampling lands there
    let mut store = model.store_mut().clone();
    let names: Vec<String> = store.params().info().iter().map(|i| i.name.clone()).collect();
    let mut a = Vec::new();
    let mut n = Vec::new();
    for name in names.iter().filter(|n| n.starts_with("decoder")) {
        let id = store.params().id(name).unwrap();
        for i in 0..store.params().get(id).len() {
            let orig = store.params().get(id)[i];
            store.params_mut().get_mut(id)[i] = orig + 1e-5;
            let lp = example_loss(&model, store.params(), &ex).unwrap();
            store.params_mut().get_mut(id)[i] = orig - 1e-5;
            let lm = example_loss(&model, store.params(), &ex).unwrap();
            store.params_mut().get_mut(id)[i] = orig;
            n.push((lp - lm) / 2e-5);
            a.push(grads.get(id)[i]);
        }
    }
    assert!(a.len() > 20);
    let (_, rel) = lszone::gradcheck::rel_error(&a, &n);
    assert!(rel < 1e-5, "{rel}");
}

#[test]
fn adam_with_zero_gradient_is_a_no_op() {
    let mut model = build_model::<f64>(&ModelConfig::tiny(), &StftConfig::default(), 1).unwrap();
    let before = model.params().clone();
    let grads = model.store().new_grads();
    let mut opt = Adam::new(model.params(), 0.9, 0.999, 1e-8);
    opt.step(model.store_mut().params_mut(), &grads, 1e-3);
    for ((_, a), (_, b)) in before.iter().zip(model.params().iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut model = build_model::<f64>(&ModelConfig::tiny(), &StftConfig::default(), 1).unwrap();
    let before = model.params().clone();
    let mut grads = model.store().new_grads();
    let id = model.params().id("decoder.weight").unwrap();
    grads.get_mut(id)[0] = 0.37;
    grads.get_mut(id)[1] = -2.0;
    let mut opt = Adam::new(model.params(), 0.9, 0.999, 1e-8);
    opt.step(model.store_mut().params_mut(), &grads, 1e-3);
    let d0 = model.params().get(id)[0] - before.get(id)[0];
    let d1 = model.params().get(id)[1] - before.get(id)[1];
    assert!((d0 + 1e-3).abs() < 1e-9 && (d1 - 1e-3).abs() < 1e-9, "{d0} {d1}");
}

#[test]
fn short_overfit_reduces_loss() {
    let cfg = SimulateConfig { speakers_range: [2, 2], clip_seconds: 1.0, ..Default::default() };
    let layout = lszone::sim::ZoneLayout::cabin();
    let m = lszone::sim::sample_manifest(&cfg, &layout, None, 0);
    let mix = lszone::sim::render_clip(&m, &layout).unwrap();
    let mut model = build_model::<f64>(&small6(), &StftConfig::default(), 0).unwrap();
    let ex = prepare_example(&model, "o", &mix.mixture, &mix.target).unwrap();
    let mut opt = Adam::new(model.params(), 0.9, 0.999, 1e-8);
    let first = train_step(&mut model, &mut opt, &[&ex], 1e-2).unwrap();
    let mut last = first;
    for _ in 0..120 {
        last = train_step(&mut model, &mut opt, &[&ex], 1e-2).unwrap();
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

fn read_curve(path: &std::path::Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn training_run_is_reproducible() {
    let data = tempfile::tempdir().unwrap();
    let sim = SimulateConfig { count: 3, seed: 5, clip_seconds: 1.0, ..Default::default() };
    build_dataset(&sim, data.path()).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 2, clip_seconds: 1.0, seed: 2, ..Default::default() };
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut curves = Vec::new();
    for out in &runs {
        let mut model = build_model::<f32>(&small6(), &StftConfig::default(), 1).unwrap();
        curves.push(train(&mut model, data.path(), &cfg, out.path()).unwrap());
    }
    assert_eq!(curves[0], curves[1]);
    let file = read_curve(&runs[0].path().join(LOSS_CURVE_FILE));
    assert_eq!(file, curves[0]);
    for r in &file {
        assert_eq!(r.lr, cfg.lr(r.epoch));
        assert!(r.mean_loss.is_finite() && r.mean_loss >= 0.0);
        assert!(checkpoint_path(runs[0].path(), r.epoch).exists());
    }
    for name in [LOSS_CURVE_FILE, FINAL_WEIGHTS_FILE] {
        assert_eq!(
            std::fs::read(runs[0].path().join(name)).unwrap(),
            std::fs::read(runs[1].path().join(name)).unwrap()
        );
    }
    let back: LsZoneModel<f32> =
        load_weights(&runs[0].path().join(FINAL_WEIGHTS_FILE), &small6(), &StftConfig::default()).unwrap();
    assert_eq!(back.params().by_name("decoder.weight"), {
        let mut m = build_model::<f32>(&small6(), &StftConfig::default(), 1).unwrap();
        train(&mut m, data.path(), &cfg, runs[1].path()).unwrap();
        m.params().by_name("decoder.weight").map(|s| s.to_vec())
    }.as_deref());
}

#[test]
fn empty_dataset_is_an_error() {
    let data = tempfile::tempdir().unwrap();
    write_manifest(&data.path().join("manifest.jsonl"), &[]).unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut model = build_model::<f32>(&small6(), &StftConfig::default(), 1).unwrap();
    let err = train(&mut model, data.path(), &TrainConfig::default(), out.path()).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn config_validation() {
    assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { decay: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { decay: 1.0, ..Default::default() }.validate().is_ok());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_target(seed in any::<u64>(), delta in 1e-6f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spec(&mut rng, 2, 4, 3);
        let mut b = a.clone();
        prop_assert_eq!(loss_mse_complex(&a, &b).unwrap(), 0.0);
        let (z, k, t) = (rng.random_range(0..2), rng.random_range(0..4), rng.random_range(0..3));
        let mut v = b.get(z, k, t);
        v.re += delta;
        b.set(z, k, t, v);
        let l = loss_mse_complex(&a, &b).unwrap();
        prop_assert!(l > 0.0);
        prop_assert!((l - delta * delta / 48.0).abs() < 1e-12);
    }
}

#[test]
fn library_end_to_end_check_passes() {
    let r = lszone::gradcheck::end_to_end(21, 24).unwrap();
    assert_eq!(r.checked, 24);
    assert!(r.passed(1e-5), "{r:?}");
}
