//! Renders replica reports into `results.csv`, `results.json` and per-method
//! equity-curve SVGs (mean path with a +/- one-sigma band per step).
//!
//! Output bytes are a pure function of the inputs so identical runs produce
//! identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ReplicaReport, TTestResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub curves: Vec<PathBuf>,
}

/// The persisted form of an evaluation run; `results.json` round-trips it so
/// reports can be re-rendered without re-running anything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDocument {
    pub methods: Vec<ReplicaReport>,
    pub tests: BTreeMap<String, TTestResult>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

/// Writes all report artifacts for one evaluation run. `tests` maps method
/// names to their significance test against the baseline; methods without an
/// entry get empty test columns.
pub fn emit_report(
    reports: &[ReplicaReport],
    tests: &BTreeMap<String, TTestResult>,
    out_dir: &Path,
) -> Result<ReportFiles> {
    if reports.is_empty() {
        return Err(Error::Usage("nothing to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut csv = String::from("method,mean,std,n,t_stat,p_value_pct\n");
    for r in reports {
        let (t, p) = match tests.get(&r.method) {
            Some(t) => (format!("{:.4}", t.t_stat), format!("{:.4}", t.p_value_pct)),
            None => (String::new(), String::new()),
        };
        writeln!(
            csv,
            "{},{:.6},{:.6},{},{},{}",
            r.method, r.mean, r.std, r.n, t, p
        )
        .expect("string write");
    }
    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, csv)?;

    let doc = ReportDocument {
        methods: reports.to_vec(),
        tests: tests.clone(),
    };
    let json_path = out_dir.join("results.json");
    let mut body = serde_json::to_string_pretty(&doc)?;
    body.push('\n');
    std::fs::write(&json_path, body)?;

    let mut curves = Vec::with_capacity(reports.len());
    for r in reports {
        let path = out_dir.join(format!("equity_curve_{}.svg", sanitize(&r.method)));
        std::fs::write(&path, equity_curve_svg(r))?;
        curves.push(path);
    }

    Ok(ReportFiles {
        csv: csv_path,
        json: json_path,
        curves,
    })
}

/// Per-step mean and sample std across seed paths.
fn per_step_stats(paths: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let steps = paths.iter().map(Vec::len).min().unwrap_or(0);
    let n = paths.len();
    let mut mean = vec![0.0; steps];
    let mut std = vec![0.0; steps];
    for t in 0..steps {
        let m = paths.iter().map(|p| p[t]).sum::<f64>() / n as f64;
        mean[t] = m;
        if n > 1 {
            std[t] = (paths.iter().map(|p| (p[t] - m) * (p[t] - m)).sum::<f64>() / (n - 1) as f64)
                .sqrt();
        }
    }
    (mean, std)
}

fn equity_curve_svg(report: &ReplicaReport) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const ML: f64 = 64.0; // left margin
    const MR: f64 = 16.0;
    const MT: f64 = 36.0;
    const MB: f64 = 44.0;

    let (mean, std) = per_step_stats(&report.paths);
    let steps = mean.len().max(1);
    let lo_band: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - s).collect();
    let hi_band: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + s).collect();
    let y_min = lo_band.iter().cloned().fold(0.0f64, f64::min);
    let y_max = hi_band.iter().cloned().fold(0.0f64, f64::max);
    let y_pad = 0.05 * (y_max - y_min).max(1e-9);
    let (y_lo, y_hi) = (y_min - y_pad, y_max + y_pad);

    let x_of = |t: usize| ML + (W - ML - MR) * t as f64 / (steps.max(2) - 1) as f64;
    let y_of = |v: f64| MT + (H - MT - MB) * (y_hi - v) / (y_hi - y_lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" font-family="monospace" font-size="15">{} test-set cumulative return % (n={})</text>"#,
        ML, report.method, report.n
    );

    // one-sigma band
    if mean.len() > 1 && report.n > 1 {
        let mut band = String::from("M");
        for (t, v) in hi_band.iter().enumerate() {
            let _ = write!(band, " {:.2},{:.2}", x_of(t), y_of(*v));
        }
        for (t, v) in lo_band.iter().enumerate().rev() {
            let _ = write!(band, " {:.2},{:.2}", x_of(t), y_of(*v));
        }
        band.push('Z');
        let _ = writeln!(
            svg,
            r##"<path d="{band}" fill="#88aadd" fill-opacity="0.35" stroke="none"/>"##
        );
    }

    // zero line and axes
    if y_lo < 0.0 && y_hi > 0.0 {
        let y0 = y_of(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{ML}" y1="{y0:.2}" x2="{:.1}" y2="{y0:.2}" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##,
            W - MR
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#,
        H - MB
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    );

    // mean path
    if mean.len() > 1 {
        let mut line = String::from("M");
        for (t, v) in mean.iter().enumerate() {
            let _ = write!(line, " {:.2},{:.2}", x_of(t), y_of(*v));
        }
        let _ = writeln!(
            svg,
            r##"<path d="{line}" fill="none" stroke="#1144aa" stroke-width="1.5"/>"##
        );
    }

    // axis labels
    let _ = writeln!(
        svg,
        r#"<text x="8" y="{:.1}" font-family="monospace" font-size="12">{:.1}</text>"#,
        MT + 10.0,
        y_hi
    );
    let _ = writeln!(
        svg,
        r#"<text x="8" y="{:.1}" font-family="monospace" font-size="12">{:.1}</text>"#,
        H - MB,
        y_lo
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12">step {}</text>"#,
        W - MR - 70.0,
        H - 12.0,
        steps
    );
    svg.push_str("</svg>\n");
    svg
}
