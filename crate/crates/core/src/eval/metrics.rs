use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reported in place of ±∞.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn db(ratio: f64) -> f64 {
    (10.0 * ratio.log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)
}

/// Scale-invariant SDR, capped at ±100 dB.
pub fn si_sdr<T: Real>(estimate: &[T], reference: &[T]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|r| r.as_f64().powi(2)).sum();
    if rr == 0.0 {
        return Err(Error::ZeroReference);
    }
    let er: f64 = estimate.iter().zip(reference).map(|(e, r)| e.as_f64() * r.as_f64()).sum();
    let alpha = er / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let t = alpha * r.as_f64();
        target += t * t;
        noise += (e.as_f64() - t).powi(2);
    }
    Ok(if noise == 0.0 { SI_SDR_CAP_DB } else { db(target / noise) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageReport {
    /// Energy of each output relative to the summed active-zone energy.
    pub per_zone_db: Vec<f64>,
    /// Summed inactive over summed active energy; `-100` when all zones speak.
    pub leakage_db: f64,
}

pub fn leakage_db<T: Real>(separated: &[Vec<T>], active_zones: &[usize]) -> Result<LeakageReport> {
    if let Some(&z) = active_zones.iter().find(|&&z| z >= separated.len()) {
        return Err(Error::shape(format!("active zone {z} but only {} outputs", separated.len())));
    }
    let energy: Vec<f64> = separated
        .iter()
        .map(|c| c.iter().map(|v| v.as_f64().powi(2)).sum())
        .collect();
    let active: f64 = active_zones.iter().map(|&z| energy[z]).sum();
    if active == 0.0 {
        return Err(Error::ZeroReference);
    }
    let inactive: f64 = (0..energy.len())
        .filter(|z| !active_zones.contains(z))
        .map(|z| energy[z])
        .sum();
    Ok(LeakageReport {
        per_zone_db: energy.iter().map(|e| db(e / active)).collect(),
        leakage_db: db(inactive / active),
    })
}
