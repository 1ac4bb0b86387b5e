use super::*;

fn small() -> GenConfig {
    GenConfig { n: 3, n_t: 2, calibration_scenes: 300, ..GenConfig::default() }
}

#[test]
fn header_matches_config() {
    let (data, meta) = generate(&small(), 7, 1).unwrap();
    let bytes = to_bytes(&data).unwrap();
    assert_eq!(&bytes[..4], b"RISD");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4)], [VERSION, 4, 3, 2, 7]);
    // 2 (6 + 4 (3 + 2)) + 2 * 4 = 60 values per sample
    assert_eq!(bytes.len(), HEADER_LEN + 7 * 60 * 8);
    assert_eq!(meta.ris_usage.iter().sum::<usize>(), 7);
    assert_eq!(meta.ris_usage.len(), 6);
}

#[test]
fn replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let (d1, m1) = generate(&small(), 20, 42).unwrap();
    let (d2, m2) = generate(&small(), 20, 42).unwrap();
    save(&a, &d1, &m1).unwrap();
    save(&b, &d2, &m2).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(sidecar_path(&a)).unwrap(), fs::read(sidecar_path(&b)).unwrap());
    let (d3, _) = generate(&small(), 20, 43).unwrap();
    assert_ne!(d1, d3);
}

#[test]
fn samples_do_not_depend_on_count() {
    let (short, _) = generate(&small(), 5, 9).unwrap();
    let (long, _) = generate(&small(), 12, 9).unwrap();
    assert_eq!(short.samples[..], long.samples[..5]);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.risd");
    let cfg = GenConfig { p_max: 2.5, user_weight: 0.5, ..small() };
    let (data, meta) = generate(&cfg, 9, 3).unwrap();
    save(&path, &data, &meta).unwrap();
    let (back, back_meta) = load(&path).unwrap();
    assert_eq!(back, data);
    assert_eq!(back_meta, meta);
    assert!(back.samples.iter().all(|ch| ch.p_max == 2.5 && ch.user_weight == vec![0.5; 4]));
}

#[test]
fn calibrated_ratio_hits_target() {
    for target in [10.0, 20.0] {
        let cfg = GenConfig { target_db: target, ..GenConfig::default() };
        let (_, meta) = generate(&cfg, 3000, 5).unwrap();
        assert!((meta.empirical_db - target).abs() <= 0.5, "{} dB for target {target}", meta.empirical_db);
    }
}

#[test]
fn ratio_definition_on_fixed_channels() {
    // unit-power entries everywhere over sigma2 = 0.1 is 10 dB
    let one = C64::new(0.6, 0.8);
    let ch = ChannelSet::new(
        CMat::from_fn(2, 2, |_, _| one),
        vec![CVec::new(vec![one; 2]).unwrap()],
        vec![CVec::new(vec![one; 2]).unwrap()],
        vec![0.1],
        vec![1.0],
        1.0,
    )
    .unwrap();
    assert!((empirical_ratio_db(&[ch]) - 10.0).abs() < 1e-12);
}

#[test]
fn malformed_files_rejected() {
    let (data, _) = generate(&small(), 3, 0).unwrap();
    let bytes = to_bytes(&data).unwrap();
    assert!(from_bytes(&bytes, 1.0).is_ok());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(from_bytes(&bad, 1.0), Err(DatasetError::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(from_bytes(&bad, 1.0), Err(DatasetError::Format(_))));
    assert!(matches!(from_bytes(&bytes[..bytes.len() - 8], 1.0), Err(DatasetError::Format(_))));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 8]);
    assert!(matches!(from_bytes(&extra, 1.0), Err(DatasetError::Format(_))));
    // zero noise power violates the channel invariants
    let mut bad = bytes.clone();
    let noise_at = HEADER_LEN + 2 * (6 + 4 * 5) * 8;
    bad[noise_at..noise_at + 8].copy_from_slice(&0.0f64.to_le_bytes());
    assert!(matches!(from_bytes(&bad, 1.0), Err(DatasetError::Transmit(_))));
    assert!(from_bytes(&bytes[..10], 1.0).is_err());
}

#[test]
fn invalid_configs_rejected() {
    assert!(generate(&GenConfig { n: 0, ..small() }, 3, 0).is_err());
    assert!(generate(&GenConfig { sigma2: 0.0, ..small() }, 3, 0).is_err());
    assert!(generate(&GenConfig { calibration_scenes: 0, ..small() }, 3, 0).is_err());
    assert!(generate(&small(), 0, 0).is_err());
}

#[test]
fn config_json_round_trip() {
    let cfg = small();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<GenConfig>(&text).unwrap(), cfg);
    let partial: GenConfig = serde_json::from_str(r#"{"n": 4}"#).unwrap();
    assert_eq!(partial, GenConfig { n: 4, ..GenConfig::default() });
}
