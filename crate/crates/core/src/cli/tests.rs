use super::*;

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = RunConfig::default().with_seed(5);
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn unknown_keys_are_usage_errors() {
    let err = RunConfig::from_toml("[train]\nlearning_rate = 1.0\n").unwrap_err();
    assert_eq!(err.kind, ErrorKind::Usage);
    assert!(err.message.contains("learning_rate"), "{}", err.message);
    let err = RunConfig::from_toml("[nonsense]\n").unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn partial_sections_keep_defaults() {
    let cfg = RunConfig::from_toml("[data]\nseed = 11\n[eval]\nranks = [1, 3]\n").unwrap();
    assert_eq!(cfg.data.seed, 11);
    assert_eq!(cfg.eval.ranks, vec![1, 3]);
    assert_eq!(cfg.train, crate::meta::TrainConfig::default());
}

#[test]
fn invalid_values_are_rejected() {
    assert!(RunConfig::from_toml("[eval]\nquery_fraction = 1.5\n").is_err());
    assert!(RunConfig::from_toml("[eval]\ntarget = \"missing\"\n").is_err());
    assert!(RunConfig::from_toml("[train]\nlr_decay_epochs = [5, 3]\n").is_err());
}

#[test]
fn error_line_is_single_line_and_quoted() {
    let e = CliError::data("bad\nthing \"x\"");
    assert_eq!(e.line(), r#"error kind=data code=2 message="bad thing \"x\"""#);
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let non_finite = MetaError::NonFinite { what: "loss".into() };
    let step = MetaError::Step {
        epoch: 0,
        iter: 1,
        source: Box::new(non_finite),
    };
    assert_eq!(CliError::from(step).exit_code(), 3);
    assert_eq!(CliError::from(ModelError::MissingKey("proto1".into())).exit_code(), 2);
    assert_eq!(CliError::from(MetaError::Config("x".into())).exit_code(), 1);
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(main_with(["ramoe", "frobnicate"]), 1);
    assert_eq!(main_with(["ramoe", "eval", "--data", "x.txt"]), 1);
}
