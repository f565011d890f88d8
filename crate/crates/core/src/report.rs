//! Deterministic result files: delimited summary tables, boxplot data and
//! static SVG boxplots.
//!
//! Tables come in two scales. `summary.csv` summarizes the raw scores and
//! `summary_transformed.csv` the Yeo-Johnson transformed scores, each set
//! with its own fitted lambda. Columns of both:
//! `feature, kind, epsilon, n, q1, q2, q3, mean, lambda, outlier_count,
//! zero_baseline_count`. Sets with no scores keep their row with empty
//! statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{AnalysisResult, SensitivitySet};
use crate::error::{Error, Result};
use crate::stats::{boxplot_summary, BoxplotSummary, LambdaFit, TransformedSet};

pub const TABLE_COLUMNS: [&str; 11] = [
    "feature",
    "kind",
    "epsilon",
    "n",
    "q1",
    "q2",
    "q3",
    "mean",
    "lambda",
    "outlier_count",
    "zero_baseline_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Plotdata,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "plotdata" => Ok(Self::Plotdata),
            "svg" => Ok(Self::Svg),
            _ => Err(Error::Config(format!(
                "unknown report format `{s}` (table, plotdata, svg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Raw,
    Transformed,
}

/// Raw and transformed summaries of one sensitivity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub feature: String,
    pub kind: String,
    pub epsilon: Option<f64>,
    pub zero_baseline_count: usize,
    pub fit: Option<LambdaFit>,
    pub raw: Option<BoxplotSummary>,
    pub transformed: Option<BoxplotSummary>,
}

impl SetReport {
    pub fn new(set: &SensitivitySet) -> Result<Self> {
        let (fit, raw, transformed) = if set.scores.is_empty() {
            (None, None, None)
        } else {
            let t = TransformedSet::from_set(set)?;
            (
                Some(t.fit),
                Some(boxplot_summary(&set.scores)?),
                Some(boxplot_summary(&t.values)?),
            )
        };
        Ok(Self {
            feature: set.feature.clone(),
            kind: set.kind.name().to_string(),
            epsilon: set.epsilon,
            zero_baseline_count: set.zero_baseline_count,
            fit,
            raw,
            transformed,
        })
    }

    pub fn summary(&self, scale: Scale) -> Option<&BoxplotSummary> {
        match scale {
            Scale::Raw => self.raw.as_ref(),
            Scale::Transformed => self.transformed.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub sets: Vec<SetReport>,
    pub excluded: Vec<crate::attribution::Excluded>,
}

pub fn plot_data(result: &AnalysisResult) -> Result<PlotData> {
    Ok(PlotData {
        sets: result.sets.iter().map(SetReport::new).collect::<Result<_>>()?,
        excluded: result.excluded.clone(),
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn render_table(data: &PlotData, scale: Scale) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("table encoding: {e}"));
    w.write_record(TABLE_COLUMNS).map_err(csv_err)?;
    for s in &data.sets {
        let mut row = vec![
            s.feature.clone(),
            s.kind.clone(),
            s.epsilon.map(num).unwrap_or_default(),
        ];
        match (s.summary(scale), s.fit) {
            (Some(b), Some(fit)) => row.extend([
                b.n.to_string(),
                num(b.q1),
                num(b.q2),
                num(b.q3),
                num(b.mean),
                num(fit.lambda),
                b.outliers.len().to_string(),
            ]),
            _ => {
                row.push("0".into());
                row.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        row.push(s.zero_baseline_count.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("table encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One boxplot per set on a shared vertical axis, in transformed units.
pub fn render_svg(title: &str, sets: &[&SetReport]) -> String {
    const H: f64 = 420.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 320.0;
    const LEFT: f64 = 70.0;
    const SLOT: f64 = 90.0;
    let width = LEFT + SLOT * sets.len().max(1) as f64 + 20.0;
    let boxes: Vec<Option<&BoxplotSummary>> = sets.iter().map(|s| s.transformed.as_ref()).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for b in boxes.iter().flatten() {
        for v in b.outliers.iter().chain([&b.whisker_low, &b.whisker_high]) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let y = |v: f64| BOTTOM - (v - lo) / (hi - lo) * (BOTTOM - TOP);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{H:.0}" viewBox="0 0 {width:.0} {H:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    for (i, (s, b)) in sets.iter().zip(&boxes).enumerate() {
        let cx = LEFT + SLOT * (i as f64 + 0.5);
        let label = match s.epsilon {
            Some(e) => format!("{} eps={e}", s.feature),
            None => s.feature.clone(),
        };
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="end" transform="rotate(-40 {cx:.1} {:.1})">{}</text>"#,
            BOTTOM + 16.0,
            BOTTOM + 16.0,
            escape(&label)
        );
        let Some(b) = b else { continue };
        let half = SLOT * 0.3;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.1}" y1="{:.2}" x2="{cx:.1}" y2="{:.2}" stroke="black"/>"#,
            y(b.whisker_low),
            y(b.whisker_high)
        );
        for wv in [b.whisker_low, b.whisker_high] {
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                y(wv),
                cx + half / 2.0,
                y(wv)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.2}" width="{:.1}" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="darkred" stroke-width="2"/>"#,
            cx - half,
            y(b.q2),
            cx + half,
            y(b.q2)
        );
        for o in &b.outliers {
            let _ = writeln!(
                out,
                r#"<circle cx="{cx:.1}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#,
                y(*o)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the files of `format` into `dir` and returns their paths.
pub fn emit_report(result: &AnalysisResult, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let data = plot_data(result)?;
    match format {
        ReportFormat::Table => Ok(vec![
            write(dir.join("summary.csv"), &render_table(&data, Scale::Raw)?)?,
            write(
                dir.join("summary_transformed.csv"),
                &render_table(&data, Scale::Transformed)?,
            )?,
        ]),
        ReportFormat::Plotdata => {
            let mut text = serde_json::to_string_pretty(&data).map_err(|e| Error::Validation(e.to_string()))?;
            text.push('\n');
            Ok(vec![write(dir.join("plotdata.json"), &text)?])
        }
        ReportFormat::Svg => {
            let mut groups: BTreeMap<&str, Vec<&SetReport>> = BTreeMap::new();
            for s in &data.sets {
                groups.entry(s.kind.as_str()).or_default().push(s);
            }
            groups
                .into_iter()
                .map(|(kind, sets)| {
                    let svg = render_svg(&format!("{kind} perturbations, Yeo-Johnson scale"), &sets);
                    write(dir.join(format!("boxplot_{kind}.svg")), &svg)
                })
                .collect()
        }
    }
}
