use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SceneManifest;

/// One ASR result for one zone output of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub clip_id: String,
    pub zone: usize,
    pub transcript: String,
    /// Character error rate computed elsewhere, carried through unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cer: Option<f64>,
}

impl TranscriptRecord {
    pub fn is_nonempty(&self) -> bool {
        !self.transcript.trim().is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptSet {
    entries: BTreeMap<(String, usize), TranscriptRecord>,
}

impl TranscriptSet {
    /// Later records replace earlier ones for the same key.
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        Self {
            entries: records.into_iter().map(|r| ((r.clip_id.clone(), r.zone), r)).collect(),
        }
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", n + 1),
            })?);
        }
        Ok(Self::from_records(records))
    }

    pub fn get(&self, clip_id: &str, zone: usize) -> Option<&TranscriptRecord> {
        self.entries.get(&(clip_id.to_string(), zone))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirCount {
    pub nonempty: usize,
    pub total: usize,
    pub fir: f64,
}

impl FirCount {
    fn new(nonempty: usize, total: usize) -> Self {
        let fir = if total == 0 { 0.0 } else { nonempty as f64 / total as f64 };
        Self { nonempty, total, fir }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirReport {
    /// Unit of the denominator: `(clip, zone)` pairs, or clips.
    pub per_clip: bool,
    pub overall: FirCount,
    /// Keyed by the number of active speakers.
    pub by_speakers: BTreeMap<usize, FirCount>,
    /// Mean of externally supplied CER over active-zone entries that carry one.
    pub mean_active_cer: Option<f64>,
}

/// FIR over `(clip, inactive zone)` pairs.
pub fn compute_fir(transcripts: &TranscriptSet, manifest: &[SceneManifest], zones: usize) -> Result<FirReport> {
    compute_fir_with(transcripts, manifest, zones, false)
}

/// With `per_clip`, a clip counts once: intruding if any of its inactive
/// zones has a non-empty transcript. Clips without inactive zones never count.
pub fn compute_fir_with(
    transcripts: &TranscriptSet,
    manifest: &[SceneManifest],
    zones: usize,
    per_clip: bool,
) -> Result<FirReport> {
    let mut missing = Vec::new();
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut cer = (0.0, 0usize);
    for m in manifest {
        let p = m.active_zones.len();
        let (mut hits, mut inactive) = (0, 0);
        for z in 0..zones {
            let Some(rec) = transcripts.get(&m.clip_id, z) else {
                missing.push((m.clip_id.clone(), z));
                continue;
            };
            if m.active_zones.contains(&z) {
                if let Some(c) = rec.cer {
                    cer.0 += c;
                    cer.1 += 1;
                }
            } else {
                inactive += 1;
                hits += rec.is_nonempty() as usize;
            }
        }
        let e = tally.entry(p).or_default();
        if per_clip {
            if inactive > 0 {
                e.0 += (hits > 0) as usize;
                e.1 += 1;
            }
        } else {
            e.0 += hits;
            e.1 += inactive;
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingTranscripts(missing));
    }
    let (n, t) = tally.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(FirReport {
        per_clip,
        overall: FirCount::new(n, t),
        by_speakers: tally.into_iter().map(|(p, (n, t))| (p, FirCount::new(n, t))).collect(),
        mean_active_cer: (cer.1 > 0).then(|| cer.0 / cer.1 as f64),
    })
}
