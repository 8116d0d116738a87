use std::path::PathBuf;

use lszone::dsp::{apply_mel, ComplexSpectrogram, MelFeature, StftConfig};
use lszone::model::{build_model, LsZoneModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

const GOLDEN_STRIDE: usize = 97;

fn setup() -> (LsZoneModel<f64>, ComplexSpectrogram<f64>) {
    let cfg = ModelConfig { zones: 2, n_mel: 24, hidden: 8, hidden_units: 8, blocks: 1, ..Default::default() };
    let model = build_model::<f64>(&cfg, &StftConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // two tones plus noise, so the mel envelope is not flat
    let wave: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            (0..8000)
                .map(|n| {
                    let t = n as f64 / 16_000.0;
                    0.4 * (2.0 * std::f64::consts::PI * (300.0 + 200.0 * c as f64) * t).sin()
                        + 0.2 * (2.0 * std::f64::consts::PI * 2100.0 * t).sin()
                        + rng.random_range(-0.05..0.05)
                })
                .collect()
        })
        .collect();
    let spec = model.stft().analyze(&wave).unwrap();
    (model, spec)
}

/// Dense reimplementation: mel of |X|, normalized transpose back to bins,
/// input phase, overlap-add.
fn oracle(model: &LsZoneModel<f64>, spec: &ComplexSpectrogram<f64>) -> Vec<Vec<f64>> {
    let fb = model.filterbank();
    let (bins, n_mel) = (spec.bins(), fb.n_mel());
    let area: Vec<f64> = (0..n_mel).map(|m| (0..bins).map(|f| fb.weight(m, f)).sum()).collect();
    let mut est = ComplexSpectrogram::zeros(spec.channels(), bins, spec.frames());
    for z in 0..spec.channels() {
        for t in 0..spec.frames() {
            let mel: Vec<f64> = (0..n_mel).map(|m| (0..bins).map(|f| fb.weight(m, f) * spec.get(z, f, t).norm()).sum()).collect();
            for f in 0..bins {
                let mag: f64 = (0..n_mel).map(|m| fb.weight(m, f) / area[m] * mel[m].max(0.0)).sum();
                let x = spec.get(z, f, t);
                let ph = if x.norm() > 0.0 { x / x.norm() } else { Complex::new(1.0, 0.0) };
                est.set(z, f, t, ph * mag);
            }
        }
    }
    model.stft().synthesize(&est).unwrap()
}

#[test]
fn mel_smoothed_reconstruction_matches_dense_oracle() {
    let (model, spec) = setup();
    let mel = apply_mel(&spec, model.filterbank()).unwrap();
    let y = model.reconstruct(&mel, &spec).unwrap();
    let want = oracle(&model, &spec);
    for (a, b) in y.iter().zip(&want) {
        assert_eq!(a.len(), b.len());
        let err = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }
}

#[test]
fn mel_smoothed_reconstruction_matches_golden_file() {
    let (model, spec) = setup();
    let mel = apply_mel(&spec, model.filterbank()).unwrap();
    let y = model.reconstruct(&mel, &spec).unwrap();
    let sampled: Vec<Vec<f64>> = y.iter().map(|c| c.iter().step_by(GOLDEN_STRIDE).copied().collect()).collect();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/reconstruct_golden.json");
    if std::env::var_os("LSZONE_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string(&sampled).unwrap()).unwrap();
    }
    let golden: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(golden.len(), sampled.len());
    for (g, s) in golden.iter().zip(&sampled) {
        assert_eq!(g.len(), s.len());
        for (a, b) in g.iter().zip(s) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_and_negative_mel_give_silence() {
    let (model, spec) = setup();
    let (n_mel, frames, zones) = (24, spec.frames(), 2);
    let zero = MelFeature::<f64>::zeros(n_mel, frames, zones);
    let mut neg = MelFeature::<f64>::zeros(n_mel, frames, zones);
    for m in 0..n_mel {
        for t in 0..frames {
            for z in 0..zones {
                neg.set(m, t, z, -1.0 - (m + t) as f64);
            }
        }
    }
    for x in [zero, neg] {
        let y = model.reconstruct(&x, &spec).unwrap();
        assert!(y.iter().flatten().all(|&v| v == 0.0));
    }
}
