//! Evaluation report files and the comparison table.

use std::fmt::Write as _;

use depthq_core::fixturegen::PatternId;
use depthq_core::metrics::{QualityReport, DENSITY_UNIT};
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "fixture,label,rmse_m,density_pts_per_m2,n_inliers,visible_area_m2";
const UNLABELED: &str = "unlabeled";

/// Per-metric medians over the frames of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rmse: f64,
    pub density: f64,
    pub inlier_count: f64,
    pub visible_area: f64,
}

/// What `evaluate` writes: every frame's report plus the medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub pattern_id: PatternId,
    pub tolerance: f64,
    pub density_unit: String,
    pub median: Summary,
    pub frames: Vec<QualityReport>,
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvaluationFile {
    pub fn new(label: Option<String>, pattern_id: PatternId, tolerance: f64, frames: Vec<QualityReport>) -> Self {
        let m = |f: fn(&QualityReport) -> f64| median(frames.iter().map(f).collect());
        let median = Summary {
            rmse: m(|r| r.rmse),
            density: m(|r| r.density),
            inlier_count: m(|r| r.inlier_count as f64),
            visible_area: m(|r| r.visible_area),
        };
        Self { label, pattern_id, tolerance, density_unit: DENSITY_UNIT.into(), median, frames }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    fn label_or_default(&self) -> &str {
        self.label.as_deref().unwrap_or(UNLABELED)
    }

    pub fn summary_row(&self) -> String {
        format!(
            "{}\t{}\tframes={}\trmse_m={:.6e}\tdensity_pts_per_m2={:.6e}\tn_inliers={}\tvisible_area_m2={:.6e}",
            self.pattern_id,
            self.label_or_default(),
            self.frames.len(),
            self.median.rmse,
            self.median.density,
            self.median.inlier_count,
            self.median.visible_area,
        )
    }
}

pub struct CompareOutput {
    pub table: String,
    pub csv: String,
    pub warnings: Vec<String>,
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Rows are fixtures and columns are labels, both in order of first
/// appearance. Reports sharing a fixture and label are combined by median.
/// The lowest RMSE in each row is marked with `*`.
pub fn render_compare(files: &[EvaluationFile]) -> CompareOutput {
    let mut warnings = Vec::new();
    let tolerances = first_seen(files.iter().map(|f| f.tolerance.to_bits()));
    if tolerances.len() > 1 {
        let list: Vec<String> = tolerances.iter().map(|b| f64::from_bits(*b).to_string()).collect();
        warnings.push(format!("reports use different tolerances ({} m); densities are not comparable", list.join(", ")));
    }
    let rows = first_seen(files.iter().map(|f| f.pattern_id));
    let cols = first_seen(files.iter().map(|f| f.label_or_default().to_owned()));

    let cell = |row: PatternId, col: &str| -> Option<Summary> {
        let group: Vec<&EvaluationFile> =
            files.iter().filter(|f| f.pattern_id == row && f.label_or_default() == col).collect();
        if group.is_empty() {
            return None;
        }
        let m = |f: fn(&Summary) -> f64| median(group.iter().map(|g| f(&g.median)).collect());
        Some(Summary {
            rmse: m(|s| s.rmse),
            density: m(|s| s.density),
            inlier_count: m(|s| s.inlier_count),
            visible_area: m(|s| s.visible_area),
        })
    };
    let grid: Vec<Vec<Option<Summary>>> = rows.iter().map(|&r| cols.iter().map(|c| cell(r, c)).collect()).collect();

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (r, row) in rows.iter().zip(&grid) {
        for (c, s) in cols.iter().zip(row) {
            if let Some(s) = s {
                let _ = writeln!(csv, "{r},{c},{},{},{},{}", s.rmse, s.density, s.inlier_count, s.visible_area);
            }
        }
    }

    // Text cells.
    let header_a: Vec<String> = cols.clone();
    let sub = ["RMSE (m)", "Density (pts/m^2)"];
    let body: Vec<Vec<[String; 2]>> = grid
        .iter()
        .map(|row| {
            let best = row.iter().flatten().map(|s| s.rmse).fold(f64::INFINITY, f64::min);
            row.iter()
                .map(|s| match s {
                    Some(s) => {
                        let flag = if s.rmse == best { "*" } else { " " };
                        [format!("{:.6}{flag}", s.rmse), format!("{:.1}", s.density)]
                    }
                    None => ["-".into(), "-".into()],
                })
                .collect()
        })
        .collect();
    let w0 = rows.iter().map(|r| r.as_str().len()).chain(["Fixture".len()]).max().unwrap();
    let mut w = vec![[sub[0].len(), sub[1].len()]; cols.len()];
    for row in &body {
        for (wc, c) in w.iter_mut().zip(row) {
            wc[0] = wc[0].max(c[0].len());
            wc[1] = wc[1].max(c[1].len());
        }
    }
    for (wc, h) in w.iter_mut().zip(&header_a) {
        let need = h.len().saturating_sub(wc[0] + 2 + wc[1]);
        wc[1] += need;
    }

    let mut table = String::new();
    let _ = write!(table, "{:<w0$}", "Fixture");
    for (wc, h) in w.iter().zip(&header_a) {
        let _ = write!(table, " | {:<width$}", h, width = wc[0] + 2 + wc[1]);
    }
    table.push('\n');
    let _ = write!(table, "{:<w0$}", "");
    for wc in &w {
        let _ = write!(table, " | {:>a$}  {:>b$}", sub[0], sub[1], a = wc[0], b = wc[1]);
    }
    table.push('\n');
    let _ = write!(table, "{}", "-".repeat(w0));
    for wc in &w {
        let _ = write!(table, "-+-{}", "-".repeat(wc[0] + 2 + wc[1]));
    }
    table.push('\n');
    for (r, row) in rows.iter().zip(&body) {
        let _ = write!(table, "{:<w0$}", r.as_str());
        for (wc, c) in w.iter().zip(row) {
            let _ = write!(table, " | {:>a$}  {:>b$}", c[0], c[1], a = wc[0], b = wc[1]);
        }
        table.push('\n');
    }
    table.push_str("* lowest RMSE in the row\n");
    CompareOutput { table, csv, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthq_core::geom::RigidTransform;

    fn file(id: PatternId, label: &str, rmse: f64, t: f64) -> EvaluationFile {
        let rep = QualityReport {
            pattern_id: id,
            label: Some(label.into()),
            rmse,
            density: 1.0 / rmse,
            density_unit: DENSITY_UNIT.into(),
            inlier_count: 10,
            total_points: 10,
            raw_points: 20,
            visible_area: 0.01,
            tolerance: t,
            camera_normal: [0.0, 0.0, 1.0],
            rms_residual: 0.0,
            registration: RigidTransform::identity(),
            inputs: Default::default(),
        };
        EvaluationFile::new(Some(label.into()), id, t, vec![rep])
    }

    #[test]
    fn median_of_frames() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
        assert_eq!(median(vec![7.0]), 7.0);
    }

    #[test]
    fn columns_follow_argument_order_and_best_is_flagged() {
        let files = vec![
            file(PatternId::Spheres, "b", 0.002, 0.002),
            file(PatternId::Spheres, "a", 0.001, 0.002),
            file(PatternId::AngledPlates, "a", 0.003, 0.002),
            file(PatternId::AngledPlates, "b", 0.0025, 0.002),
        ];
        let out = render_compare(&files);
        let lines: Vec<&str> = out.table.lines().collect();
        assert!(lines[0].find(" b ").unwrap() < lines[0].find(" a ").unwrap());
        assert!(lines[3].starts_with("spheres") && lines[3].contains("0.001000*"));
        assert!(lines[4].starts_with("angled_plates") && lines[4].contains("0.002500*"));
        assert!(!lines[4].contains("0.003000*"));
        assert!(out.warnings.is_empty());
        assert_eq!(out.csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(out.csv.lines().count(), 5);
    }

    #[test]
    fn mixed_tolerance_warns() {
        let out = render_compare(&[file(PatternId::Spheres, "a", 0.001, 0.002), file(PatternId::Spheres, "b", 0.001, 0.003)]);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.table.contains("spheres"));
    }

    #[test]
    fn file_round_trip() {
        let f = file(PatternId::CylindersVertical, "x", 0.001, 0.002);
        assert_eq!(EvaluationFile::from_json(&f.to_json()).unwrap(), f);
    }
}
