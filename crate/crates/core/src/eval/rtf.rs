use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LsZoneModel;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtfStats {
    pub duration_s: f64,
    pub threads: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub runs: Vec<f64>,
}

/// Runs `wave` through the streaming path block by block and returns the
/// concatenated zone outputs, flush included. The last partial block is
/// zero-padded.
pub fn stream_separate<T: Real>(model: &LsZoneModel<T>, wave: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let hop = model.stft_config().hop;
    let n = wave.first().map_or(0, Vec::len);
    let mut state = model.stream_init();
    let mut out: Vec<Vec<T>> = vec![Vec::with_capacity(n + hop); model.config().zones];
    let mut block = vec![vec![T::zero(); hop]; wave.len()];
    for start in (0..n).step_by(hop) {
        for (b, ch) in block.iter_mut().zip(wave) {
            let end = (start + hop).min(n);
            b[..end - start].copy_from_slice(&ch[start..end]);
            b[end - start..].iter_mut().for_each(|v| *v = T::zero());
        }
        for (o, y) in out.iter_mut().zip(model.stream_step(&mut state, &block)?) {
            o.extend(y);
        }
    }
    for (o, y) in out.iter_mut().zip(model.stream_finish(&mut state)) {
        o.extend(y);
    }
    Ok(out)
}

/// Wall-clock streaming time over audio duration, median of `repeats` runs on
/// seeded noise. One untimed warm-up pass precedes the runs. With `threads`
/// set, everything runs inside a dedicated pool of that size.
pub fn measure_rtf<T: Real>(
    model: &LsZoneModel<T>,
    duration_s: f64,
    repeats: usize,
    threads: usize,
    seed: u64,
) -> Result<RtfStats> {
    if !(duration_s > 0.0) {
        return Err(Error::ZeroDuration);
    }
    if repeats == 0 || threads == 0 {
        return Err(Error::Config("repeats and threads must be positive".into()));
    }
    let fs = model.stft_config().sample_rate as f64;
    let n = ((duration_s * fs).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wave: Vec<Vec<T>> = (0..model.config().zones)
        .map(|_| (0..n).map(|_| T::cst(rng.random_range(-0.1..0.1))).collect())
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs = pool.install(|| -> Result<Vec<f64>> {
        let warm = (n / 4).max(model.stft_config().hop);
        let head: Vec<Vec<T>> = wave.iter().map(|c| c[..warm.min(n)].to_vec()).collect();
        stream_separate(model, &head)?;
        (0..repeats)
            .map(|_| {
                let t0 = Instant::now();
                std::hint::black_box(stream_separate(model, &wave)?);
                Ok(t0.elapsed().as_secs_f64() / (n as f64 / fs))
            })
            .collect()
    })?;
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(RtfStats {
        duration_s: n as f64 / fs,
        threads,
        median,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        runs,
    })
}
