use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ExperimentConfig, ExperimentError, Variant};
use crate::attribution::{attribute, AttributionMap, MapKind};
use crate::counterfactuals::{
    build_neighborhood, gen_bridge_with, gen_comparison, gen_comparison_shortcut, gen_distractor,
    gen_distractor_training, label_neighborhood, BridgeOptions, CounterfactualError, Neighborhood, Setting,
};
use crate::model::{
    accuracy, load_checkpoint, save_checkpoint, train, Checkpoint, Instance, MicroTransformer, Vocabulary,
};
use crate::simulation::{build_report, SimulationReport};

pub const REPORT_FILE: &str = "report.json";

/// First line of every JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ArtifactHeader,
}

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train(&self, v: Variant) -> PathBuf {
        self.root.join(format!("train-{}.jsonl", v.name()))
    }

    pub fn eval(&self, v: Variant) -> PathBuf {
        self.root.join(format!("eval-{}.jsonl", v.name()))
    }

    pub fn checkpoint(&self, v: Variant) -> PathBuf {
        self.root.join(format!("checkpoint-{}.json", v.name()))
    }

    pub fn neighborhoods(&self) -> PathBuf {
        self.root.join("neighborhoods.jsonl")
    }

    pub fn attributions(&self) -> PathBuf {
        self.root.join("attributions.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join(REPORT_FILE)
    }
}

fn header(cfg: &ExperimentConfig, artifact: &str) -> ArtifactHeader {
    ArtifactHeader {
        artifact: artifact.to_owned(),
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
    }
}

pub fn write_artifact<T: Serialize>(path: &Path, header: &ArtifactHeader, items: &[T]) -> Result<(), ExperimentError> {
    let io = |e: std::io::Error| ExperimentError::io(path, e);
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    let line = serde_json::to_string(&HeaderLine { header: header.clone() }).expect("header serializes");
    writeln!(out, "{line}").map_err(io)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| ExperimentError::io(path, e))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a JSONL artifact, returning its header (if any) and records.
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<T>), ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut head = None;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| CounterfactualError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        };
        if i == 0 {
            let v: Value = serde_json::from_str(line).map_err(parse_err)?;
            if v.get("header").is_some() {
                head = Some(serde_json::from_value::<HeaderLine>(v).map_err(parse_err)?.header);
                continue;
            }
        }
        items.push(serde_json::from_str(line).map_err(parse_err)?);
    }
    Ok((head, items))
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn variant_tag(v: Variant) -> u64 {
    match v {
        Variant::Proper => 1,
        Variant::Shortcut => 2,
    }
}

fn prefixed(v: Variant, data: Vec<Instance>) -> Vec<Instance> {
    data.into_iter()
        .map(|mut inst| {
            inst.id = format!("{}-{}", v.name(), inst.id);
            inst
        })
        .collect()
}

fn training_data(cfg: &ExperimentConfig, v: Variant) -> Vec<Instance> {
    let seed = mix(cfg.dataset.seed, variant_tag(v));
    let n = cfg.dataset.train_count;
    let shortcut = v == Variant::Shortcut;
    match cfg.setting {
        Setting::YesNo if shortcut => gen_comparison_shortcut(seed, n),
        Setting::YesNo => gen_comparison(seed, n),
        Setting::Bridge => gen_bridge_with(
            seed,
            n,
            &BridgeOptions {
                distractor_rate: cfg.dataset.distractor_rate,
                shortcut,
            },
        ),
        Setting::Distractor => gen_distractor_training(seed, n, if shortcut { 0.0 } else { cfg.dataset.attack_rate }),
    }
}

/// Held-out bases; every variant is probed with the same kind of data.
fn eval_data(cfg: &ExperimentConfig, v: Variant) -> Vec<Instance> {
    let seed = mix(cfg.dataset.seed, 100 + variant_tag(v));
    let n = cfg.dataset.eval_count;
    match cfg.setting {
        Setting::YesNo => gen_comparison(seed, n),
        Setting::Bridge => gen_bridge_with(
            seed,
            n,
            &BridgeOptions {
                distractor_rate: 0.0,
                shortcut: false,
            },
        ),
        Setting::Distractor => gen_distractor(seed, n),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Config {
        line: None,
        field: "output_dir".into(),
        message: format!("{}: {e}", dir.display()),
    })
}

/// Writes `train-*.jsonl` and `eval-*.jsonl` per variant.
pub fn generate_stage(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    ensure_dir(&cfg.output_dir)?;
    let paths = Paths::new(&cfg.output_dir);
    for &v in &cfg.variants {
        let train = prefixed(v, training_data(cfg, v));
        write_artifact(&paths.train(v), &header(cfg, &format!("train-{}", v.name())), &train)?;
        let eval = prefixed(v, eval_data(cfg, v));
        write_artifact(&paths.eval(v), &header(cfg, &format!("eval-{}", v.name())), &eval)?;
    }
    Ok(())
}

fn read_instances(path: &Path) -> Result<Vec<Instance>, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::Missing(format!(
            "{} not found, run the generate stage first",
            path.display()
        )));
    }
    Ok(read_artifact(path)?.1)
}

/// Trains one model per variant and writes `checkpoint-*.json`.
pub fn train_stage(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    ensure_dir(&cfg.output_dir)?;
    let paths = Paths::new(&cfg.output_dir);
    for &v in &cfg.variants {
        let data = read_instances(&paths.train(v))?;
        let mut model = MicroTransformer::new(cfg.model.config(), Vocabulary::synthetic(), mix(cfg.seed, variant_tag(v)))?;
        let metrics = train(&mut model, &data, &cfg.training)?;
        let eval = read_instances(&paths.eval(v))?;
        let eval_accuracy = accuracy(&model, &eval)?;
        let mut ckpt = Checkpoint::from_model(&model);
        ckpt.provenance = cfg.provenance();
        ckpt.provenance.insert("variant".into(), Value::from(v.name()));
        ckpt.provenance.insert(
            "training".into(),
            serde_json::to_value(&metrics).expect("metrics serialize"),
        );
        ckpt.provenance.insert("eval_accuracy".into(), Value::from(eval_accuracy));
        save_checkpoint(&ckpt, &paths.checkpoint(v))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<MicroTransformer, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::Missing(format!(
            "{} not found, run the train stage first",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?.into_model()?)
}

/// Builds and labels neighborhoods, then attributes every base example.
///
/// Bases whose neighborhood would have a single gold answer are skipped.
pub fn attribute_stage(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let paths = Paths::new(&cfg.output_dir);
    let mut neighborhoods = Vec::new();
    let mut maps: Vec<AttributionMap> = Vec::new();
    let mut ordered: Vec<_> = cfg.methods.iter().collect();
    ordered.sort_by_key(|m| (m.method().kind() == MapKind::Pairwise, m.method()));
    for &v in &cfg.variants {
        let model = load_model(&paths.checkpoint(v))?;
        let eval = read_instances(&paths.eval(v))?;
        let mut nbs = Vec::with_capacity(eval.len());
        for (i, inst) in eval.iter().enumerate() {
            let seed = mix(cfg.seed, 1000 * variant_tag(v) + i as u64);
            let mut nb = match build_neighborhood(inst, cfg.setting, seed) {
                Ok(nb) => nb,
                Err(CounterfactualError::IdenticalGroundTruth(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            label_neighborhood(&model, &mut nb)?;
            nbs.push(nb);
        }
        for m in &ordered {
            for nb in &nbs {
                maps.push(attribute(&model, &nb.base, m)?);
            }
        }
        neighborhoods.extend(nbs);
    }
    write_artifact(&paths.neighborhoods(), &header(cfg, "neighborhoods"), &neighborhoods)?;
    write_artifact(&paths.attributions(), &header(cfg, "attributions"), &maps)?;
    Ok(())
}

/// Simulates behavioral labels from the stored maps and writes `report.json`.
pub fn simulate_stage(cfg: &ExperimentConfig) -> Result<SimulationReport, ExperimentError> {
    let paths = Paths::new(&cfg.output_dir);
    for p in [paths.neighborhoods(), paths.attributions()] {
        if !p.exists() {
            return Err(ExperimentError::Missing(format!(
                "{} not found, run the attribute stage first",
                p.display()
            )));
        }
    }
    let (_, neighborhoods): (_, Vec<Neighborhood>) = read_artifact(&paths.neighborhoods())?;
    let (_, maps): (_, Vec<AttributionMap>) = read_artifact(&paths.attributions())?;
    let mut report = build_report(&neighborhoods, &maps, cfg.absolute_factors)?;
    report.provenance = cfg.provenance();
    let variants: Vec<Value> = cfg.variants.iter().map(|v| Value::from(v.name())).collect();
    report.provenance.insert("variants".into(), Value::Array(variants));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(paths.report(), text).map_err(|e| ExperimentError::io(&paths.report(), e))?;
    Ok(report)
}

/// Every stage in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SimulationReport, ExperimentError> {
    generate_stage(cfg)?;
    train_stage(cfg)?;
    attribute_stage(cfg)?;
    simulate_stage(cfg)
}
