use std::fmt::Write;
use std::path::Path;

use super::{read_artifact, ExperimentError};
use crate::attribution::{AttributionMap, MapKind, Method};
use crate::counterfactuals::Neighborhood;
use crate::model::{Instance, Vocabulary, PAD};

/// Fill for a zero score.
pub const NEUTRAL: &str = "#f7f7f7";
const POSITIVE: (f64, f64, f64) = (178.0, 24.0, 43.0);
const NEGATIVE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const CELL: usize = 28;
const MARGIN: usize = 90;

fn color(v: f64, scale: f64) -> String {
    if scale == 0.0 || v == 0.0 {
        return NEUTRAL.to_owned();
    }
    let t = (v.abs() / scale).min(1.0);
    let (r, g, b) = if v > 0.0 { POSITIVE } else { NEGATIVE };
    let lerp = |end: f64| (247.0 + (end - 247.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(r), lerp(g), lerp(b))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Words of the encoded instance up to its last non-PAD position.
pub fn token_labels(instance: &Instance, max_seq: usize) -> Result<Vec<String>, ExperimentError> {
    let seq = Vocabulary::synthetic().encode(instance, max_seq)?;
    let n = seq.ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1);
    Ok(Vocabulary::synthetic().decode(&seq.ids[..n]))
}

/// SVG heatmap of the first `labels.len()` positions (all of them when `labels` is empty).
///
/// Token maps become one row of cells, pairwise maps an `n × n` grid. The
/// color scale is symmetric around zero and shared by every cell.
pub fn render_heatmap(map: &AttributionMap, labels: &[String]) -> String {
    let n = if labels.is_empty() { map.len } else { labels.len().min(map.len) };
    let label = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
    let visible: Vec<f64> = match map.kind {
        MapKind::Token => map.scores[..n].to_vec(),
        MapKind::Pairwise => (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| map.pair(i, j)).collect(),
    };
    let scale = visible.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rows = if map.kind == MapKind::Token { 1 } else { n };
    let width = MARGIN + n * CELL + 10;
    let height = MARGIN + rows * CELL + 10;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="10">"#
    );
    let _ = writeln!(
        out,
        r#"<title>{} {}</title>"#,
        escape(map.method.name()),
        escape(&map.instance_id)
    );
    for i in 0..n {
        let x = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            out,
            r#"<text class="label col" x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            MARGIN - 6,
            MARGIN - 6,
            escape(&label(i))
        );
    }
    match map.kind {
        MapKind::Token => {
            for (i, v) in visible.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" data-i="{i}" x="{}" y="{MARGIN}" width="{CELL}" height="{CELL}" fill="{}"><title>{}: {v}</title></rect>"#,
                    MARGIN + i * CELL,
                    color(*v, scale),
                    escape(&label(i))
                );
            }
        }
        MapKind::Pairwise => {
            for i in 0..n {
                let _ = writeln!(
                    out,
                    r#"<text class="label row" x="{}" y="{}" text-anchor="end">{}</text>"#,
                    MARGIN - 6,
                    MARGIN + i * CELL + CELL / 2 + 3,
                    escape(&label(i))
                );
                for j in 0..n {
                    let v = visible[i * n + j];
                    let _ = writeln!(
                        out,
                        r#"<rect class="cell" data-i="{i}" data-j="{j}" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
                        MARGIN + j * CELL,
                        MARGIN + i * CELL,
                        color(v, scale)
                    );
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Renders the map for `instance_id` from an attributions file.
///
/// Labels come from `neighborhoods.jsonl` next to it when that file holds the
/// base instance; otherwise positions are numbered.
pub fn render_from_files(
    attributions: &Path,
    instance_id: &str,
    method: Option<Method>,
) -> Result<String, ExperimentError> {
    let (_, maps): (_, Vec<AttributionMap>) = read_artifact(attributions)?;
    let map = maps
        .iter()
        .find(|m| m.instance_id == instance_id && method.is_none_or(|want| m.method == want))
        .ok_or_else(|| {
            let what = method.map_or(String::new(), |m| format!(" for method {m}"));
            ExperimentError::Missing(format!(
                "no attribution record for instance {instance_id:?}{what} in {}",
                attributions.display()
            ))
        })?;
    let nb_path = attributions.with_file_name("neighborhoods.jsonl");
    let mut labels = Vec::new();
    if nb_path.exists() {
        let (_, nbs): (_, Vec<Neighborhood>) = read_artifact(&nb_path)?;
        if let Some(nb) = nbs.iter().find(|nb| nb.base.id == instance_id) {
            labels = token_labels(&nb.base, map.len)?;
        }
    }
    Ok(render_heatmap(map, &labels))
}
