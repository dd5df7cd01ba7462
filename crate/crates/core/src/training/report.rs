//! Comparison tables and accuracy bar plots over finished experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::store::{Summary, SUMMARY_FILE};

/// Summaries matched by a glob; a match may be a `summary.json` or a
/// directory holding one. Sorted by config name, then hash.
pub fn collect_summaries(pattern: &str) -> Result<Vec<(PathBuf, Summary)>> {
    let paths = glob::glob(pattern).map_err(|e| Error::InvalidInput(format!("bad glob {pattern}: {e}")))?;
    let mut out = Vec::new();
    for entry in paths {
        let path = entry.map_err(|e| {
            let p = e.path().to_path_buf();
            Error::io(p, e.into())
        })?;
        let file = if path.is_dir() { path.join(SUMMARY_FILE) } else { path };
        if file.file_name().is_none_or(|n| n != SUMMARY_FILE) || !file.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let summary: Summary = serde_json::from_str(&text)?;
        out.push((file, summary));
    }
    out.sort_by(|a, b| (&a.1.name, &a.1.config_hash).cmp(&(&b.1.name, &b.1.config_hash)));
    out.dedup_by(|a, b| a.1.config_hash == b.1.config_hash);
    Ok(out)
}

fn grouped(summaries: &[Summary]) -> BTreeMap<&str, Vec<&Summary>> {
    let mut groups: BTreeMap<&str, Vec<&Summary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.dataset.as_str()).or_default().push(s);
    }
    groups
}

/// One table per dataset; rows `model, mean ± std`.
pub fn render_markdown(summaries: &[Summary]) -> String {
    let mut out = String::new();
    for (dataset, rows) in grouped(summaries) {
        let _ = writeln!(out, "## {dataset}\n");
        let _ = writeln!(out, "| config | model | label fraction | test accuracy | seeds |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for s in rows {
            let _ = writeln!(
                out,
                "| {} | {} | {}% | {} | {} |",
                s.name,
                s.variant,
                100.0 * s.label_fraction,
                s.mean_std_line(),
                s.n_ok
            );
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(summaries: &[Summary]) -> String {
    let mut out = String::from("dataset,config,model,label_fraction,mean,std,n_ok,n_failed,single_seed\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{},{}",
            csv_field(&s.dataset),
            csv_field(&s.name),
            csv_field(&s.variant),
            s.label_fraction,
            s.mean,
            s.std,
            s.n_ok,
            s.n_failed,
            s.single_seed
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart of `(label, value, error)` with values in `[lo, hi]`.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64, f64)], lo: f64, hi: f64) -> String {
    let row = 22.0;
    let left = 220.0;
    let width = 420.0;
    let height = 40.0 + row * bars.len() as f64 + 20.0;
    let scale = |v: f64| left + width * ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 80.0
    );
    let _ = writeln!(svg, r#"<text x="10" y="20" font-size="14">{}</text>"#, xml_escape(title));
    for (i, (label, value, err)) in bars.iter().enumerate() {
        let y = 36.0 + row * i as f64;
        let x1 = scale(*value);
        let _ = writeln!(svg, r#"<text x="10" y="{}">{}</text>"#, y + 13.0, xml_escape(label));
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{y}" width="{:.2}" height="16" fill="#4c72b0"/>"##,
            (x1 - left).max(0.0)
        );
        if *err > 0.0 {
            let (a, b) = (scale(value - err), scale(value + err));
            let _ = writeln!(
                svg,
                r#"<line x1="{a:.2}" x2="{b:.2}" y1="{}" y2="{}" stroke="black"/>"#,
                y + 8.0,
                y + 8.0
            );
        }
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}">{value:.3}</text>"#, x1.max(left) + 6.0, y + 13.0);
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn accuracy_plot(summaries: &[Summary]) -> String {
    let bars: Vec<(String, f64, f64)> = summaries.iter().map(|s| (s.name.clone(), s.mean, s.std)).collect();
    bar_chart_svg("Test accuracy (mean ± std over seeds)", &bars, 0.0, 1.0)
}

/// Writes `report.md`, `report.csv` and `accuracy.svg` into `out_dir`.
pub fn write_report(summaries: &[Summary], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = [
        ("report.md", render_markdown(summaries)),
        ("report.csv", render_csv(summaries)),
        ("accuracy.svg", accuracy_plot(summaries)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
