//! Saved models reload bit for bit.

use funcnet::config::RunConfig;
use funcnet::model_file;
use funcnet::models::{fit_model, ModelSpec};
use funcnet_core::simulate::{simulate, MaternParams, Scenario, ScenarioKind};

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.s_grid = 8;
    cfg.model.n_basis = 5;
    cfg.train.max_epochs = 5;
    cfg
}

#[test]
fn every_model_kind_round_trips_exactly() {
    for (scenario, standardize) in [
        (Scenario::continuous(ScenarioKind::Quadratic), false),
        (Scenario::binary(ScenarioKind::Linear), true),
    ] {
        let data = simulate(&scenario, 45, 20, &MaternParams::default(), 1).unwrap();
        let mut cfg = small();
        cfg.data.standardize = standardize;
        let protocol = cfg.protocol().unwrap();
        for spec in ["flm", "fdnn(3,2)", "fbnn", "fnn(3,2)", "mlp(4)"] {
            let spec: ModelSpec = spec.parse().unwrap();
            let (saved, _) = fit_model(&spec, &protocol, &data, 9).unwrap();
            let text = model_file::to_string(&saved);
            let back = model_file::from_str(&text, "memory").unwrap();
            assert_eq!(back, saved, "{spec}");
            assert_eq!(model_file::to_string(&back), text, "{spec}");
            let a = saved.predict(&data).unwrap();
            let b = back.predict(&data).unwrap();
            assert_eq!(a, b, "{spec}");
        }
    }
}

#[test]
fn damaged_files_are_rejected_with_context() {
    let data = simulate(
        &Scenario::continuous(ScenarioKind::Linear),
        30,
        12,
        &MaternParams::default(),
        2,
    )
    .unwrap();
    let (saved, _) = fit_model(&"flm".parse().unwrap(), &small().protocol().unwrap(), &data, 0).unwrap();
    let text = model_file::to_string(&saved);

    let err = model_file::from_str("hello\n{}", "x.json").unwrap_err().to_string();
    assert!(err.contains("x.json") && err.contains("not a model file"), "{err}");

    let err = model_file::from_str(&text.replacen(" 1 ", " 99 ", 1), "x.json")
        .unwrap_err()
        .to_string();
    assert!(err.contains("version 99"), "{err}");

    let err = model_file::from_str(&text.replacen("flm", "fdnn", 1), "x.json")
        .unwrap_err()
        .to_string();
    assert!(err.contains("x.json"), "{err}");

    let scaled = model_file::to_string(&funcnet::models::SavedModel {
        response_scale: Some(funcnet::models::ResponseScale { mean: 0.0, scale: 1.0 }),
        ..saved.clone()
    });
    let err = model_file::from_str(&scaled.replace("\"scale\":1.0", "\"scale\":-1.0"), "x.json")
        .unwrap_err()
        .to_string();
    assert!(err.contains("response scale"), "{err}");

    let truncated = &text[..text.len() / 2];
    assert!(model_file::from_str(truncated, "x.json").is_err());
}
