use super::*;

#[test]
fn defaults_match_reference_setup() {
    let c = RunConfig::default();
    assert_eq!((c.users, c.ris_elements, c.antennas, c.candidate_ris), (4, 8, 8, 6));
    assert_eq!((c.p_max, c.ratio_db), (1.0, 20.0));
    assert_eq!((c.train_samples, c.test_samples), (10_000, 200));
    assert_eq!(c.gen_config(), GenConfig::default());
    c.validate().unwrap();
}

#[test]
fn config_round_trip() {
    let mut c = RunConfig { ratio_db: 13.7, ..RunConfig::default() };
    c.seeds.scenes = 99;
    c.train.adam.learning_rate = 3.3e-4;
    let text = c.to_json();
    let back = RunConfig::from_json(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json(), text);
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn partial_config_fills_defaults() {
    let c = RunConfig::from_json(r#"{"users": 2, "seeds": {"test_data": 7}}"#).unwrap();
    assert_eq!(c.users, 2);
    assert_eq!(c.seeds, Seeds { test_data: 7, ..Seeds::default() });
    assert_eq!(c.gen_config().dims(), Dims::new(2, 8, 8));
    assert_ne!(c.hash(), RunConfig::default().hash());
}

#[test]
fn invalid_configs_exit_with_two() {
    let cases = [
        r#"{"users": 0}"#,
        r#"{"sigma2": -1}"#,
        r#"{"ao_short": 30, "ao_long": 20}"#,
        r#"{"detection_threshold": 1.5}"#,
        r#"{"train": {"batch_size": 0}}"#,
        r#"{"unknown_field": 1}"#,
        r#"{"users": 4,"#,
        r#"{"scene": {"ris_layout": [[1, 2]]}}"#,
    ];
    for text in cases {
        let err = RunConfig::from_json(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
}

#[test]
fn malformed_config_reports_line() {
    let err = RunConfig::from_json("{\n  \"users\": 4,\n  \"kappa\": x\n}").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
