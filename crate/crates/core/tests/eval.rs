use lszone::dsp::StftConfig;
use lszone::eval::rtf::stream_separate;
use lszone::eval::{
    compute_fir, compute_fir_with, leakage_db, measure_rtf, report_macs, si_sdr, TranscriptRecord, TranscriptSet,
    SI_SDR_CAP_DB,
};
use lszone::model::{build_model, ModelConfig};
use lszone::sim::{sample_manifest, SceneManifest, SimulateConfig, ZoneLayout};
use lszone::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand count for the default network, per frame.
fn closed_form_macs_per_frame(cfg: &ModelConfig, bins: u64) -> u64 {
    let (z, m, h, u, k, g) = (
        cfg.zones as u64,
        cfg.n_mel as u64,
        cfg.hidden as u64,
        cfg.hidden_units as u64,
        cfg.kernel as u64,
        cfg.groups as u64,
    );
    let merge = bins * z * (z - 1) * k;
    let project = z * bins * m;
    let gate = m * z * 2 * k;
    let encoder = m * h * z * k;
    let crossband = m * h * k + m * h * h + m * h * (h / g) * k;
    let narrowband = m * 3 * (h * u + u * u) + m * u * h;
    let decoder = m * h * z;
    merge + project + gate + encoder + cfg.blocks as u64 * (crossband + narrowband) + decoder
}

#[test]
fn default_config_macs_match_closed_form() {
    let cfg = ModelConfig::default();
    let r = report_macs(&cfg, &StftConfig::default()).unwrap();
    assert_eq!(r.total_per_frame, closed_form_macs_per_frame(&cfg, 257));
    assert_eq!(r.total_per_frame, 43_493_142);
    assert_eq!(r.total_per_second, 2_718_321_375.0);
    assert!((0.28e9..=2.8e9).contains(&r.total_per_second));
    assert_eq!(r.layers.iter().map(|l| l.per_frame).sum::<u64>(), r.total_per_frame);
    assert_eq!(r.modules.iter().map(|l| l.per_frame).sum::<u64>(), r.total_per_frame);
    assert_eq!(r.modules.len(), 3 + cfg.blocks);
    assert_eq!(r.module("cnp.0").unwrap().per_frame, 562_176 + 6_635_520);
    assert_eq!(r, report_macs(&cfg, &StftConfig::default()).unwrap());
}

#[test]
fn doubling_blocks_doubles_cnp_subtotal() {
    for base in [ModelConfig::default(), ModelConfig::desk(), ModelConfig::tiny()] {
        let a = report_macs(&base, &StftConfig::default()).unwrap();
        let b = report_macs(&ModelConfig { blocks: 2 * base.blocks, ..base.clone() }, &StftConfig::default()).unwrap();
        assert_eq!(b.cnp_per_frame(), 2 * a.cnp_per_frame());
        assert_eq!(b.total_per_frame - a.total_per_frame, a.cnp_per_frame());
    }
}

#[test]
fn streaming_output_equals_offline() {
    let cfg = ModelConfig { n_mel: 16, hidden: 16, hidden_units: 16, blocks: 1, ..Default::default() };
    let m = build_model::<f64>(&cfg, &StftConfig::default(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // whole hops and a ragged final block
    for n in [256 * 20, 256 * 20 + 1, 256 * 20 + 131] {
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()).collect();
        let off = m.separate(&x).unwrap();
        let st = stream_separate(&m, &x).unwrap();
        for (s, o) in st.iter().zip(&off) {
            assert_eq!(o.len(), n);
            assert!(s[..256].iter().all(|&v| v == 0.0));
            assert_eq!(&s[256..256 + n], &o[..]);
        }
    }
}

#[test]
fn rtf_guards_and_scaling() {
    let m = build_model::<f32>(&ModelConfig::default(), &StftConfig::default(), 0).unwrap();
    assert!(matches!(measure_rtf(&m, 0.0, 3, 1, 0), Err(Error::ZeroDuration)));
    let six = measure_rtf(&m, 1.0, 3, 1, 0).unwrap();
    assert!(six.median > 0.0 && six.runs.len() == 3 && six.min <= six.median && six.median <= six.max);
    let m12 = build_model::<f32>(&ModelConfig { blocks: 12, ..Default::default() }, &StftConfig::default(), 0).unwrap();
    let twelve = measure_rtf(&m12, 1.0, 3, 1, 0).unwrap();
    let ratio = twelve.median / six.median;
    assert!((1.6..=2.4).contains(&ratio), "M=12/M=6 RTF ratio {ratio}");
}

fn manifests(active: &[&[usize]]) -> Vec<SceneManifest> {
    let base = sample_manifest(&SimulateConfig::default(), &ZoneLayout::cabin(), None, 0);
    active
        .iter()
        .enumerate()
        .map(|(i, a)| SceneManifest {
            clip_id: format!("c{i}"),
            active_zones: a.to_vec(),
            ..base.clone()
        })
        .collect()
}

fn transcripts(m: &[SceneManifest], nonempty: &[(usize, usize)]) -> TranscriptSet {
    TranscriptSet::from_records(m.iter().enumerate().flat_map(|(i, c)| {
        (0..6).map(move |z| TranscriptRecord {
            clip_id: c.clip_id.clone(),
            zone: z,
            transcript: if c.active_zones.contains(&z) || nonempty.contains(&(i, z)) {
                "你好".into()
            } else {
                "  ".into()
            },
            cer: c.active_zones.contains(&z).then_some(0.1 * z as f64),
        })
    }))
}

#[test]
fn fir_three_of_ten() {
    // 10 inactive pairs: 5 + 4 + 1, plus one fully active clip
    let m = manifests(&[&[0], &[0, 1], &[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4, 5]]);
    let t = transcripts(&m, &[(0, 3), (1, 5), (2, 5)]);
    let r = compute_fir(&t, &m, 6).unwrap();
    assert_eq!((r.overall.nonempty, r.overall.total), (3, 10));
    assert_eq!(r.overall.fir, 0.30);
    assert_eq!(r.by_speakers[&6].total, 0);
    assert_eq!(r.by_speakers[&1].nonempty, 1);
    let quiet = compute_fir(&transcripts(&m, &[]), &m, 6).unwrap();
    assert_eq!(quiet.overall.fir, 0.0);
    let clip = compute_fir_with(&t, &m, 6, true).unwrap();
    assert_eq!((clip.overall.nonempty, clip.overall.total), (3, 3));
    let cer = r.mean_active_cer.unwrap();
    let want = [0.0, 0.0 + 0.1, 0.0 + 0.1 + 0.2 + 0.3 + 0.4, 1.5].iter().sum::<f64>() / 14.0;
    assert!((cer - want).abs() < 1e-12);
}

#[test]
fn fir_reports_missing_entries() {
    let m = manifests(&[&[0], &[1]]);
    let mut recs: Vec<TranscriptRecord> = Vec::new();
    for z in 0..6 {
        recs.push(TranscriptRecord { clip_id: "c0".into(), zone: z, transcript: String::new(), cer: None });
    }
    recs.push(TranscriptRecord { clip_id: "c1".into(), zone: 0, transcript: String::new(), cer: None });
    let err = compute_fir(&TranscriptSet::from_records(recs), &m, 6).unwrap_err();
    match &err {
        Error::MissingTranscripts(keys) => assert_eq!(keys.len(), 5),
        other => panic!("{other}"),
    }
    assert!(err.to_string().contains("c1/zone1"));
}

#[test]
fn transcript_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(
        &path,
        "{\"clip_id\":\"a\",\"zone\":0,\"transcript\":\"hi\",\"cer\":0.2}\n\n{\"clip_id\":\"a\",\"zone\":1,\"transcript\":\"\"}\n",
    )
    .unwrap();
    let t = TranscriptSet::read_jsonl(&path).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.get("a", 0).unwrap().cer, Some(0.2));
    assert!(!t.get("a", 1).unwrap().is_nonempty());
    std::fs::write(&path, "{\"clip_id\":\"a\"}\n").unwrap();
    assert!(matches!(TranscriptSet::read_jsonl(&path), Err(Error::Parse { .. })));
}

#[test]
fn si_sdr_reference_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
    let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    assert_eq!(si_sdr(&twice, &r).unwrap(), SI_SDR_CAP_DB);

    // noise made orthogonal to r, scaled to exactly 10 dB below it
    let mut n: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let nr: f64 = n.iter().zip(&r).map(|(a, b)| a * b).sum();
    n.iter_mut().zip(&r).for_each(|(a, b)| *a -= nr / rr * b);
    let nn: f64 = n.iter().map(|v| v * v).sum();
    let g = (rr / nn / 10.0).sqrt();
    let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    assert!((si_sdr(&est, &r).unwrap() - 10.0).abs() < 1e-9);
    let scaled: Vec<f64> = est.iter().map(|v| -0.3 * v).collect();
    assert!((si_sdr(&scaled, &r).unwrap() - si_sdr(&est, &r).unwrap()).abs() < 1e-9);

    assert!(matches!(si_sdr(&r, &vec![0.0; 4000]), Err(Error::ZeroReference)));
    assert!(si_sdr(&r[..10], &r[..11]).is_err());
}

#[test]
fn leakage_reference_values() {
    let out = vec![vec![1.0f32; 100], vec![0.1; 100], vec![0.0; 100], vec![1.0; 100]];
    let r = leakage_db(&out, &[0, 3]).unwrap();
    assert!((r.leakage_db - 10.0 * (1.0f64 / 200.0).log10()).abs() < 1e-5);
    assert!((r.per_zone_db[0] - 10.0 * 0.5f64.log10()).abs() < 1e-9);
    assert_eq!(r.per_zone_db[2], -SI_SDR_CAP_DB);
    assert!(matches!(leakage_db(&out, &[2]), Err(Error::ZeroReference)));
    assert!(leakage_db(&out, &[7]).is_err());
}

proptest! {
    #[test]
    fn fir_ignores_transcript_content(seed in any::<u64>(), text in "[a-z]{1,12}") {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = manifests(&[&[0, 2], &[5], &[1, 3, 4]]);
        let hits: Vec<(usize, usize)> = (0..4).map(|_| (rng.random_range(0..3), rng.random_range(0..6))).collect();
        let a = transcripts(&m, &hits);
        let b = TranscriptSet::from_records(m.iter().flat_map(|c| (0..6).map(|z| {
            let mut r = a.get(&c.clip_id, z).unwrap().clone();
            if r.is_nonempty() { r.transcript = text.clone(); }
            r
        })).collect::<Vec<_>>());
        prop_assert_eq!(compute_fir(&a, &m, 6).unwrap(), compute_fir(&b, &m, 6).unwrap());
    }

    #[test]
    fn si_sdr_is_scale_invariant(seed in any::<u64>(), k in prop_oneof![-10.0f64..-0.01, 0.01f64..10.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = r.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let ke: Vec<f64> = e.iter().map(|v| k * v).collect();
        prop_assert!((si_sdr(&e, &r).unwrap() - si_sdr(&ke, &r).unwrap()).abs() < 1e-9);
    }
}
