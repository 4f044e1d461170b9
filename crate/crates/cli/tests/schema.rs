use std::path::{Path, PathBuf};

use dadg_cli::RunConfig;
use serde_json::{json, Value};

type Edit = Box<dyn Fn(&mut Value)>;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load(rel: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(repo_file(rel)).unwrap()).unwrap()
}

fn validator() -> jsonschema::Validator {
    jsonschema::validator_for(&load("docs/config.schema.json")).unwrap()
}

#[test]
fn shipped_configs_validate_and_parse() {
    let v = validator();
    for rel in ["configs/case_study.json", "configs/moving_asset.json"] {
        let cfg = load(rel);
        let errors: Vec<String> = v.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{rel}: {errors:?}");
        RunConfig::from_json(&cfg.to_string()).unwrap();
    }
}

#[test]
fn serialized_config_with_defaults_validates() {
    let mut cfg = load("configs/case_study.json");
    for section in ["grid", "optimizer", "simulation", "output"] {
        cfg.as_object_mut().unwrap().remove(section);
    }
    let parsed = RunConfig::from_json(&cfg.to_string()).unwrap();
    let echoed = serde_json::to_value(&parsed).unwrap();
    assert!(validator().is_valid(&echoed), "{echoed:#}");
}

#[test]
fn schema_and_parser_agree() {
    let v = validator();
    let edits: Vec<(&str, Edit)> = vec![
        ("unknown top-level key", Box::new(|c| c["extra"] = json!(1))),
        ("unknown game key", Box::new(|c| c["game"]["omega_b"] = json!(1.0))),
        ("unknown asset key", Box::new(|c| c["asset"]["speed"] = json!(1.0))),
        ("unknown optimizer key", Box::new(|c| c["optimizer"]["tol"] = json!(1.0))),
        ("unknown output key", Box::new(|c| c["output"]["dpi"] = json!(300))),
        ("bad asset kind", Box::new(|c| c["asset"]["kind"] = json!("orbit"))),
        ("zero trials", Box::new(|c| c["simulation"]["trials"] = json!(0))),
        ("bad schedule", Box::new(|c| c["simulation"]["schedule"] = json!("random"))),
        ("bad format", Box::new(|c| c["output"]["formats"] = json!(["png"]))),
        ("negative eps", Box::new(|c| c["optimizer"]["eps"] = json!(-1.0))),
        (
            "missing game",
            Box::new(|c| {
                c.as_object_mut().unwrap().remove("game");
            }),
        ),
        ("string count", Box::new(|c| c["optimizer"]["count"] = json!("many"))),
        ("zero obs cost in sweep", Box::new(|c| c["optimizer"]["obs_cost_sweep"] = json!([0.0, 1.0]))),
    ];
    for (name, edit) in &edits {
        let mut cfg = load("configs/case_study.json");
        edit(&mut cfg);
        assert!(!v.is_valid(&cfg), "schema accepted: {name}");
        assert!(RunConfig::from_json(&cfg.to_string()).is_err(), "parser accepted: {name}");
    }

    let accepted: Vec<(&str, Edit)> = vec![
        ("auto count", Box::new(|c| c["optimizer"]["count"] = json!("auto"))),
        (
            "sampled asset",
            Box::new(|c| {
                c["asset"] = json!({"kind": "sampled", "times": [0.0, 10.0], "states": [[0.0, 0.0], [1.0, 1.0]]})
            }),
        ),
        (
            "no description",
            Box::new(|c| {
                c.as_object_mut().unwrap().remove("description");
            }),
        ),
        (
            "file schedule",
            Box::new(|c| {
                c["simulation"]["schedule"] = json!("file");
                c["simulation"]["schedule_file"] = json!("s.csv");
            }),
        ),
    ];
    for (name, edit) in &accepted {
        let mut cfg = load("configs/case_study.json");
        edit(&mut cfg);
        assert!(v.is_valid(&cfg), "schema rejected: {name}");
        RunConfig::from_json(&cfg.to_string()).unwrap_or_else(|e| panic!("parser rejected {name}: {e}"));
    }
}
