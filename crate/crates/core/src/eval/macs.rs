use serde::Serialize;

use crate::dsp::StftConfig;
use crate::error::Result;
use crate::model::{LsZoneModel, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMacs {
    pub name: String,
    pub module: String,
    pub per_frame: u64,
    pub per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleMacs {
    pub module: String,
    pub per_frame: u64,
    pub per_second: f64,
}

/// Analytic multiply-accumulates of every learned layer, per frame and per
/// second of audio. Normalizations and activations count zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacsReport {
    pub frames_per_second: f64,
    pub layers: Vec<LayerMacs>,
    pub modules: Vec<ModuleMacs>,
    pub total_per_frame: u64,
    pub total_per_second: f64,
}

impl MacsReport {
    /// Sum over all `cnp.*` modules, per frame.
    pub fn cnp_per_frame(&self) -> u64 {
        self.modules
            .iter()
            .filter(|m| m.module.starts_with("cnp."))
            .map(|m| m.per_frame)
            .sum()
    }

    pub fn module(&self, name: &str) -> Option<&ModuleMacs> {
        self.modules.iter().find(|m| m.module == name)
    }
}

pub fn report_macs(config: &ModelConfig, stft: &StftConfig) -> Result<MacsReport> {
    let model = LsZoneModel::<f32>::uninitialized(config, stft)?;
    let fps = stft.frames_per_second();
    let n_mel = config.n_mel;
    let mut raw: Vec<(String, String, u64)> = Vec::new();
    for (name, m) in model.spaiec().macs_per_frame() {
        raw.push((name, "spaiec".into(), m));
    }
    raw.push(("encoder".into(), "encoder".into(), model.encoder().spec().macs(n_mel, 1)));
    for (i, b) in model.cnp().blocks().iter().enumerate() {
        let module = format!("cnp.{i}");
        for (l, m) in b.crossband.layer_macs(n_mel) {
            raw.push((format!("{module}.crossband.{l}"), module.clone(), m));
        }
        for (l, m) in b.narrowband.layer_macs(n_mel) {
            raw.push((format!("{module}.narrowband.{l}"), module.clone(), m));
        }
    }
    raw.push(("decoder".into(), "decoder".into(), model.decoder().macs(n_mel)));

    let mut modules: Vec<ModuleMacs> = Vec::new();
    for (_, module, m) in &raw {
        match modules.last_mut() {
            Some(last) if &last.module == module => last.per_frame += m,
            _ => modules.push(ModuleMacs {
                module: module.clone(),
                per_frame: *m,
                per_second: 0.0,
            }),
        }
    }
    modules.iter_mut().for_each(|m| m.per_second = m.per_frame as f64 * fps);
    let total_per_frame = raw.iter().map(|r| r.2).sum();
    Ok(MacsReport {
        frames_per_second: fps,
        layers: raw
            .into_iter()
            .map(|(name, module, per_frame)| LayerMacs {
                name,
                module,
                per_frame,
                per_second: per_frame as f64 * fps,
            })
            .collect(),
        modules,
        total_per_frame,
        total_per_second: total_per_frame as f64 * fps,
    })
}
