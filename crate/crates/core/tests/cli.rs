use std::path::Path;
use std::process::{Command, Output};

use attrsim::experiment::{read_artifact, ArtifactHeader};
use attrsim::simulation::{RowKind, SimulationReport};

fn attrsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrsim")).args(args).output().unwrap()
}

fn small_config(dir: &Path, methods: &str) -> String {
    let path = dir.join("cfg.json");
    let text = format!(
        r#"{{
  "setting": "yes-no",
  "seed": 1,
  "dataset": {{ "seed": 1, "train_count": 120, "eval_count": 4 }},
  "model": {{ "layers": 1, "heads": 2, "hidden": 8, "max_seq": 64, "ffn": 16 }},
  "training": {{ "max_epochs": 1, "batch_size": 16 }},
  "variants": ["proper", "shortcut"],
  "methods": [
{methods}
  ],
  "output_dir": {:?}
}}"#,
        dir.join("out").display().to_string()
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const ALL_METHODS: &str = r#"    { "method": "lime", "samples": 100 },
    { "method": "shap", "samples": 100 },
    { "method": "intgrad", "steps": 4 },
    { "method": "diffmask", "steps": 5 },
    { "method": "archip" },
    { "method": "atattr", "steps": 4 },
    { "method": "latattr", "steps": 4 }"#;

#[test]
fn unknown_method_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"    { "method": "intgrad" },
    { "method": "foo" }"#);
    let out = attrsim(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("methods[1].method"), "{err}");
    assert!(err.contains("foo"), "{err}");
    assert!(err.contains("line 10"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_config_exits_2_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"setting\": \"yes-no\",\n  \"methods\": [\n}").unwrap();
    let out = attrsim(&["generate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    let missing = attrsim(&["run", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn stage_without_inputs_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"    { "method": "intgrad" }"#);
    let out = attrsim(&["attribute", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train stage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(attrsim(&["explode"]).status.code(), Some(2));
}

#[test]
fn staged_run_reports_every_method_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ALL_METHODS);
    for stage in ["generate", "train", "attribute", "simulate"] {
        let out = attrsim(&[stage, &cfg]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out_dir = dir.path().join("out");
    let report: SimulationReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let methods: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.kind != RowKind::Baseline || r.method == "conf")
        .map(|r| r.method.as_str())
        .collect();
    assert_eq!(
        methods,
        ["conf", "lime", "shap", "intgrad", "diffmask", "archip", "atattr", "latattr"]
    );
    assert_eq!(report.rows[0].method, "majority");
    assert!(report.provenance.contains_key("config_hash"));

    for file in ["train-proper.jsonl", "eval-shortcut.jsonl", "neighborhoods.jsonl", "attributions.jsonl"] {
        let (head, _): (Option<ArtifactHeader>, Vec<serde_json::Value>) = read_artifact(&out_dir.join(file)).unwrap();
        assert_eq!(head.unwrap().config_hash, report.provenance["config_hash"].as_str().unwrap());
    }
    let ckpt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("checkpoint-proper.json")).unwrap()).unwrap();
    assert_eq!(ckpt["provenance"]["seed"], 1);

    let id = &report.rows[2].factors[0].neighborhood["nb-".len()..];
    let attributions = out_dir.join("attributions.jsonl");
    let svg_path = dir.path().join("map.svg");
    let out = attrsim(&[
        "render",
        attributions.to_str().unwrap(),
        id,
        "--method",
        "latattr",
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.contains("[CLS]") && svg.contains("class=\"cell\""));

    let missing = attrsim(&["render", attributions.to_str().unwrap(), "no-such-id"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_method = attrsim(&["render", attributions.to_str().unwrap(), id, "--method", "foo"]);
    assert_eq!(bad_method.status.code(), Some(2));
}
