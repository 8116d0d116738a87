//! Central finite-difference checks for every trainable primitive.
//!
//! Losses are random projections `L = Σ w ⊙ y`, so `∂L/∂y = w` seeds the
//! backward pass. Errors are normwise: `max|a − n| / max(max|a|, max|n|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cnp::{CnpConfig, ConvCrossband, GruNarrowband};
use crate::dsp::{apply_mel, compute_ipd, mel_filterbank, stft, StftConfig};
use crate::error::Result;
use crate::nn::act::{silu_backward, silu_tensor};
use crate::nn::{Conv1d, ConvAxis, ConvSpec, Grads, Gru, LayerNorm, Linear, Padding, ParamStore, Params};
use crate::spaiec::{GateMode, Spaiec};
use crate::tensor::Tensor3;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    pub rel_err: f64,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.rel_err.is_finite() && self.rel_err < tol
    }
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    if scale == 0.0 {
        (diff, 0.0)
    } else {
        (diff, diff / scale)
    }
}

fn report(name: impl Into<String>, analytic: &[f64], numeric: &[f64]) -> GradReport {
    let (max_abs_err, rel_err) = rel_error(analytic, numeric);
    GradReport {
        name: name.into(),
        checked: analytic.len(),
        max_abs_err,
        rel_err,
    }
}

/// `Σ w ⊙ y`
pub fn project(w: &Tensor3<f64>, y: &Tensor3<f64>) -> f64 {
    w.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, b: usize, t: usize) -> Tensor3<f64> {
    Tensor3::from_fn(c, b, t, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Compares `analytic` against central differences of `loss` at the given
/// flat indices of `x`.
pub fn check_values(
    name: &str,
    x: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    let mut a = Vec::with_capacity(indices.len());
    let mut n = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = x[i];
        x[i] = orig + STEP;
        let lp = loss(x);
        x[i] = orig - STEP;
        let lm = loss(x);
        x[i] = orig;
        a.push(analytic[i]);
        n.push((lp - lm) / (2.0 * STEP));
    }
    report(name, &a, &n)
}

/// Checks every parameter entry (or a random sample of `sample` entries).
pub fn check_params(
    name: &str,
    store: &mut ParamStore<f64>,
    analytic: &Grads<f64>,
    sample: Option<(usize, &mut ChaCha8Rng)>,
    mut loss: impl FnMut(&Params<f64>) -> f64,
) -> GradReport {
    let infos: Vec<_> = store.params().info().to_vec();
    let mut slots: Vec<(usize, usize)> = infos
        .iter()
        .enumerate()
        .flat_map(|(k, info)| (0..info.numel()).map(move |i| (k, i)))
        .collect();
    if let Some((count, rng)) = sample {
        let mut picked = Vec::with_capacity(count);
        for _ in 0..count.min(slots.len()) {
            let j = rng.random_range(0..slots.len());
            picked.push(slots.swap_remove(j));
        }
        slots = picked;
    }
    let ids: Vec<_> = infos.iter().map(|i| store.params().id(&i.name).expect("registered")).collect();
    let mut a = Vec::with_capacity(slots.len());
    let mut n = Vec::with_capacity(slots.len());
    for (k, i) in slots {
        let id = ids[k];
        let orig = store.params().get(id)[i];
        store.params_mut().get_mut(id)[i] = orig + STEP;
        let lp = loss(store.params());
        store.params_mut().get_mut(id)[i] = orig - STEP;
        let lm = loss(store.params());
        store.params_mut().get_mut(id)[i] = orig;
        a.push(analytic.get(id)[i]);
        n.push((lp - lm) / (2.0 * STEP));
    }
    report(name, &a, &n)
}

fn all(len: usize) -> Vec<usize> {
    (0..len).collect()
}

/// Randomizes biases and norm parameters so no gradient path is trivially zero.
fn perturb_all(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, v) in store.params_mut().iter_mut() {
        for x in v.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
}

/// Runs a layer through input and parameter checks.
fn layer_case(
    name: &str,
    store: &mut ParamStore<f64>,
    rng: &mut ChaCha8Rng,
    x: Tensor3<f64>,
    forward: impl Fn(&Params<f64>, &Tensor3<f64>) -> Tensor3<f64>,
    backward: impl Fn(&Params<f64>, &mut Grads<f64>, &Tensor3<f64>, &Tensor3<f64>) -> Tensor3<f64>,
) -> Vec<GradReport> {
    let y = forward(store.params(), &x);
    let w = random_tensor(rng, y.channels(), y.bands(), y.frames());
    let mut grads = store.new_grads();
    let gx = backward(store.params(), &mut grads, &x, &w);
    let mut out = Vec::new();
    let mut xv = x.as_slice().to_vec();
    let dims = x.dims();
    let p = store.params().clone();
    out.push(check_values(&format!("{name}/input"), &mut xv, gx.as_slice(), &all(x.as_slice().len()), |v| {
        let xt = Tensor3::from_vec(dims.0, dims.1, dims.2, v.to_vec());
        project(&w, &forward(&p, &xt))
    }));
    if store.count() > 0 {
        out.push(check_params(&format!("{name}/params"), store, &grads, None, |p| {
            project(&w, &forward(p, &x))
        }));
    }
    out
}

fn conv_case(name: &str, spec: ConvSpec, bands: usize, frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let mut st = ParamStore::new();
    let conv = Conv1d::new(&mut st, "conv", spec)?;
    st.initialize(rng.random());
    perturb_all(&mut st, rng);
    let x = random_tensor(rng, conv.spec().in_ch, bands, frames);
    Ok(layer_case(
        name,
        &mut st,
        rng,
        x,
        |p, x| conv.forward(p, x).expect("conv forward"),
        |p, g, x, gy| conv.backward(p, g, x, gy).expect("conv backward"),
    ))
}

/// One randomized pass over every primitive. Shapes are drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let bands = rng.random_range(3..9);
    let frames = rng.random_range(2..6);
    let groups = rng.random_range(1..4);
    let per = rng.random_range(1..3);
    let kernel = [1usize, 3, 5][rng.random_range(0..3)];

    out.extend(conv_case(
        "conv/frequency",
        ConvSpec::frequency(groups * per, groups * rng.random_range(1..3), kernel, groups),
        bands,
        frames,
        &mut rng,
    )?);
    let ch = rng.random_range(2..5);
    out.extend(conv_case("conv/depthwise", ConvSpec::frequency(ch, ch, kernel, ch), bands, frames, &mut rng)?);
    for (label, padding, k) in [("conv/time-same", Padding::Same, kernel), ("conv/time-causal", Padding::Causal, kernel + 1)] {
        let spec = ConvSpec {
            axis: ConvAxis::Time,
            padding,
            kernel: k,
            ..ConvSpec::frequency(per + 1, 2, k | 1, 1)
        };
        out.extend(conv_case(label, spec, bands, frames + 2, &mut rng)?);
    }

    let (din, dout) = (rng.random_range(1..7), rng.random_range(1..7));
    let mut st = ParamStore::new();
    let lin = Linear::new(&mut st, "linear", din, dout)?;
    st.initialize(rng.random());
    perturb_all(&mut st, &mut rng);
    let x = random_tensor(&mut rng, din, bands, frames);
    out.extend(layer_case(
        "linear",
        &mut st,
        &mut rng,
        x,
        |p, x| lin.forward(p, x).expect("linear"),
        |p, g, x, gy| lin.backward(p, g, x, gy).expect("linear backward"),
    ));

    let dim = rng.random_range(2..9);
    let mut st = ParamStore::new();
    let ln = LayerNorm::new(&mut st, "norm", dim)?;
    st.initialize(rng.random());
    perturb_all(&mut st, &mut rng);
    let x = random_tensor(&mut rng, dim, bands, frames);
    out.extend(layer_case(
        "layer-norm",
        &mut st,
        &mut rng,
        x,
        |p, x| ln.forward(p, x).expect("norm"),
        |p, g, x, gy| ln.backward(p, g, x, gy).expect("norm backward"),
    ));

    let mut st = ParamStore::<f64>::new();
    let x = random_tensor(&mut rng, 3, bands, frames).map(|v| 3.0 * v);
    out.extend(layer_case("silu", &mut st, &mut rng, x, |_, x| silu_tensor(x), |_, _, x, gy| silu_backward(x, gy)));

    let (gin, gh) = (rng.random_range(1..6), rng.random_range(1..7));
    let mut st = ParamStore::new();
    let gru = Gru::new(&mut st, "gru", gin, gh)?;
    st.initialize(rng.random());
    perturb_all(&mut st, &mut rng);
    let h0: Vec<f64> = (0..bands * gh).map(|_| rng.random_range(-0.5..0.5)).collect();
    let x = random_tensor(&mut rng, gin, bands, frames + 2);
    out.extend(layer_case(
        "gru",
        &mut st,
        &mut rng,
        x,
        |p, x| gru.forward(p, x, &mut h0.clone()).expect("gru"),
        |p, g, x, gy| {
            let (y, tr) = gru.forward_traced(p, x, &mut h0.clone()).expect("gru traced");
            gru.backward(p, g, x, &y, &tr, gy).expect("gru backward")
        },
    ));

    let cfg = CnpConfig {
        hidden: 8,
        hidden_units: rng.random_range(2..7),
        blocks: 1,
        n_mel: bands,
        kernel: 3,
        groups: [1usize, 2, 4, 8][rng.random_range(0..4)],
    };
    let mut st = ParamStore::new();
    let cb = ConvCrossband::new(&mut st, "crossband", &cfg)?;
    st.initialize(rng.random());
    perturb_all(&mut st, &mut rng);
    let x = random_tensor(&mut rng, 8, bands, frames);
    out.extend(layer_case(
        "crossband",
        &mut st,
        &mut rng,
        x,
        |p, x| cb.forward(p, x).expect("crossband"),
        |p, g, x, gy| {
            let (_, tr) = cb.forward_traced(p, x).expect("crossband traced");
            cb.backward(p, g, x, &tr, gy).expect("crossband backward")
        },
    ));

    let mut st = ParamStore::new();
    let nb = GruNarrowband::new(&mut st, "narrowband", &cfg)?;
    st.initialize(rng.random());
    perturb_all(&mut st, &mut rng);
    let x = random_tensor(&mut rng, 8, bands, frames);
    let state = vec![0.0; bands * cfg.hidden_units];
    out.extend(layer_case(
        "narrowband",
        &mut st,
        &mut rng,
        x,
        |p, x| nb.forward(p, x, &mut state.clone()).expect("narrowband"),
        |p, g, x, gy| {
            let (_, tr) = nb.forward_traced(p, x, &mut state.clone()).expect("narrowband traced");
            nb.backward(p, g, x, &tr, gy).expect("narrowband backward")
        },
    ));

    out.push(spaiec_case(&mut rng, GateMode::Convex)?);
    out.push(spaiec_case(&mut rng, GateMode::MelOnly)?);
    Ok(out)
}

/// SpaIEC parameters only; its inputs are fixed DSP features.
fn spaiec_case(rng: &mut ChaCha8Rng, mode: GateMode) -> Result<GradReport> {
    let zones = rng.random_range(2..4);
    let cfg = StftConfig {
        win_len: 32,
        hop: 16,
        fft_size: 32,
        ..StftConfig::default()
    };
    let n = 32 + 16 * rng.random_range(1..4);
    let wave: Vec<Vec<f64>> = (0..zones).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let spec = stft(&wave, &cfg)?;
    let fb = mel_filterbank(spec.bins(), 6, cfg.sample_rate)?;
    let mel = apply_mel(&spec, &fb)?;
    let ipd = compute_ipd(&spec)?;
    let mut st = ParamStore::new();
    let s = Spaiec::new(&mut st, "spaiec", zones, spec.bins(), 6, 3, mode)?;
    st.initialize(rng.random());
    perturb_all(&mut st, rng);
    let (y, tr) = s.forward_traced(st.params(), &mel, &ipd)?;
    let w = crate::dsp::MelFeature(random_tensor(rng, y.tensor().channels(), y.tensor().bands(), y.tensor().frames()));
    let mut grads = st.new_grads();
    s.backward(st.params(), &mut grads, &mel, &ipd, &tr, &w)?;
    let name = match mode {
        GateMode::Convex => "spaiec/convex",
        GateMode::MelOnly => "spaiec/mel-only",
    };
    Ok(check_params(name, &mut st, &grads, None, |p| {
        project(w.tensor(), s.forward(p, &mel, &ipd).expect("spaiec").tensor())
    }))
}


/// Full tiny model, loss through reconstruction, against central differences
/// on `count` randomly chosen parameters.
pub fn end_to_end(seed: u64, count: usize) -> Result<GradReport> {
    use crate::model::{build_model, ModelConfig};
    use crate::train::{accumulate_grad, example_loss, prepare_example};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model::<f64>(&ModelConfig::tiny(), &StftConfig::default(), seed)?;
    perturb_all(model.store_mut(), &mut rng);
    let mut wave = || -> Vec<Vec<f64>> { (0..2).map(|_| (0..2560).map(|_| rng.random_range(-0.5..0.5)).collect()).collect() };
    let (mix, target) = (wave(), wave());
    let ex = prepare_example(&model, "gradcheck", &mix, &target)?;
    let mut grads = model.store().new_grads();
    accumulate_grad(&model, model.params(), &mut grads, &ex, 1.0)?;
    let mut store = model.store().clone();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Ok(check_params("model.end_to_end", &mut store, &grads, Some((count, &mut pick)), |p| {
        example_loss(&model, p, &ex).expect("shapes fixed above")
    }))
}
