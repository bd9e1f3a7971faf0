use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    confidence_factor, confidence_orientation, extract_factor_with, simulate, Factor, FactorMode, SimulationError,
    TIE_HANDLING,
};
use crate::attribution::{attribute, AttributionMap, MapKind, Method, MethodConfig};
use crate::counterfactuals::{Neighborhood, Setting};
use crate::model::MicroTransformer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Baseline,
    Token,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub neighborhood: String,
    pub f: f64,
    pub z: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub kind: RowKind,
    pub s_acc: f64,
    pub s_auc: Option<f64>,
    pub auc_undefined: bool,
    #[serde(with = "super::threshold_serde")]
    pub best_threshold: f64,
    pub degenerate: usize,
    pub factors: Vec<FactorRow>,
}

/// One row per method, in the order Majority, Conf, token methods, pairwise methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub setting: Setting,
    pub hypothesis: String,
    pub label_rule: String,
    pub neighborhoods: usize,
    /// Fraction of neighborhoods with `z = 1`.
    pub positive_rate: f64,
    pub conf_orientation: String,
    pub tie_handling: String,
    pub absolute_factors: bool,
    pub rows: Vec<MethodRow>,
    #[serde(default)]
    pub provenance: serde_json::Map<String, serde_json::Value>,
}

impl SimulationReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn method_row(method: &str, kind: RowKind, factors: Vec<(String, Factor, u8)>) -> Result<MethodRow, SimulationError> {
    if let Some((id, f, _)) = factors.iter().find(|(_, f, _)| !f.degenerate && !f.value.is_finite()) {
        return Err(SimulationError::NonFinite {
            id: id.clone(),
            value: f.value,
        });
    }
    let pairs: Vec<(f64, u8)> = factors.iter().map(|(_, f, z)| (f.value, *z)).collect();
    let sim = simulate(&pairs)?;
    Ok(MethodRow {
        method: method.to_owned(),
        kind,
        s_acc: sim.s_acc,
        s_auc: sim.s_auc,
        auc_undefined: sim.s_auc.is_none(),
        best_threshold: sim.threshold,
        degenerate: factors.iter().filter(|(_, f, _)| f.degenerate).count(),
        factors: factors
            .into_iter()
            .map(|(id, f, z)| FactorRow {
                neighborhood: id,
                f: f.value,
                z,
                degenerate: f.degenerate,
            })
            .collect(),
    })
}

/// Simulation over neighborhoods explained by one model.
pub fn run_setting(
    model: &MicroTransformer,
    neighborhoods: &[Neighborhood],
    methods: &[MethodConfig],
    absolute: bool,
) -> Result<(SimulationReport, Vec<AttributionMap>), SimulationError> {
    run_pooled(&[(model, neighborhoods)], methods, absolute)
}

/// Simulation over neighborhoods pooled from several models, each explained by its own model.
///
/// Only base examples are attributed. Returns the report and every map in
/// method-then-neighborhood order.
pub fn run_pooled(
    groups: &[(&MicroTransformer, &[Neighborhood])],
    methods: &[MethodConfig],
    absolute: bool,
) -> Result<(SimulationReport, Vec<AttributionMap>), SimulationError> {
    let mut pooled = Vec::new();
    for (model, nbs) in groups {
        for nb in nbs.iter() {
            let mut nb = nb.clone();
            if nb.base_confidence.is_none() {
                nb.base_confidence = Some(model.predict_confidence(&nb.base)?);
            }
            pooled.push((*model, nb));
        }
    }
    let mut ordered: Vec<&MethodConfig> = methods.iter().collect();
    ordered.sort_by_key(|m| (m.method().kind() == MapKind::Pairwise, m.method()));
    let mut maps = Vec::with_capacity(ordered.len() * pooled.len());
    for cfg in ordered {
        for (model, nb) in &pooled {
            maps.push(attribute(model, &nb.base, cfg)?);
        }
    }
    let nbs: Vec<Neighborhood> = pooled.into_iter().map(|(_, nb)| nb).collect();
    Ok((build_report(&nbs, &maps, absolute)?, maps))
}

/// Report from labeled neighborhoods and base-example maps.
///
/// Rows follow Majority, Conf, then the methods present in `maps`, token
/// methods before pairwise ones.
pub fn build_report(
    neighborhoods: &[Neighborhood],
    maps: &[AttributionMap],
    absolute: bool,
) -> Result<SimulationReport, SimulationError> {
    let Some(first) = neighborhoods.first() else {
        return Err(SimulationError::Empty);
    };
    let setting = first.setting;
    let mut labels = Vec::with_capacity(neighborhoods.len());
    for nb in neighborhoods {
        if nb.setting != setting {
            return Err(SimulationError::Mismatch {
                map: format!("setting {}", setting.name()),
                neighborhood: nb.id.clone(),
            });
        }
        labels.push(nb.z.ok_or_else(|| SimulationError::Unlabeled(nb.id.clone()))?);
    }

    let mut rows = Vec::new();
    let constant = Factor {
        value: 0.0,
        mode: FactorMode::Confidence,
        targets: Vec::new(),
        normalizer: None,
        method: "majority".into(),
        degenerate: false,
    };
    rows.push(method_row(
        "majority",
        RowKind::Baseline,
        neighborhoods.iter().zip(&labels).map(|(nb, &z)| (nb.id.clone(), constant.clone(), z)).collect(),
    )?);
    let mut conf = Vec::with_capacity(neighborhoods.len());
    for (nb, &z) in neighborhoods.iter().zip(&labels) {
        let c = nb.base_confidence.ok_or_else(|| SimulationError::Unlabeled(nb.id.clone()))?;
        conf.push((nb.id.clone(), confidence_factor(c, setting), z));
    }
    rows.push(method_row("conf", RowKind::Baseline, conf)?);

    let mut methods: Vec<Method> = maps.iter().map(|m| m.method).collect();
    methods.sort_by_key(|m| (m.kind() == MapKind::Pairwise, *m));
    methods.dedup();
    let index: BTreeMap<(Method, &str), &AttributionMap> =
        maps.iter().map(|m| ((m.method, m.instance_id.as_str()), m)).collect();
    for method in methods {
        let mut factors = Vec::with_capacity(neighborhoods.len());
        for (nb, &z) in neighborhoods.iter().zip(&labels) {
            let map = index.get(&(method, nb.base.id.as_str())).ok_or_else(|| SimulationError::Mismatch {
                map: format!("{method} (missing)"),
                neighborhood: nb.id.clone(),
            })?;
            factors.push((nb.id.clone(), extract_factor_with(map, nb, absolute), z));
        }
        let kind = match method.kind() {
            MapKind::Token => RowKind::Token,
            MapKind::Pairwise => RowKind::Pairwise,
        };
        rows.push(method_row(method.name(), kind, factors)?);
    }

    let positives = labels.iter().filter(|&&z| z == 1).count();
    Ok(SimulationReport {
        setting,
        hypothesis: setting.hypothesis().to_owned(),
        label_rule: setting.label_rule().to_owned(),
        neighborhoods: neighborhoods.len(),
        positive_rate: positives as f64 / neighborhoods.len() as f64,
        conf_orientation: confidence_orientation(setting).to_owned(),
        tie_handling: TIE_HANDLING.to_owned(),
        absolute_factors: absolute,
        rows,
        provenance: Default::default(),
    })
}
