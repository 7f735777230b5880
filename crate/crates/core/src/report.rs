//! CSV tables and SVG bar charts for win-rate reports.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::WinRateReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Plot,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    method_a: String,
    method_b: String,
    n: usize,
    wins: usize,
    ties: usize,
    losses: usize,
    p: f64,
    se: f64,
}

pub fn write_csv<W: Write>(reports: &[WinRateReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow {
            method_a: r.method_a.clone(),
            method_b: r.method_b.clone(),
            n: r.n_items,
            wins: r.wins,
            ties: r.ties,
            losses: r.losses,
            p: r.p,
            se: r.se,
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<WinRateReport>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(WinRateReport {
                method_a: row.method_a,
                method_b: row.method_b,
                n_items: row.n,
                wins: row.wins,
                ties: row.ties,
                losses: row.losses,
                p: row.p,
                se: row.se,
                excluded: 0,
            })
        })
        .collect()
}

const BAR_WIDTH: f64 = 60.0;
const GAP: f64 = 30.0;
const PLOT_HEIGHT: f64 = 300.0;
const MARGIN: f64 = 50.0;

/// Bar chart of win rates with ±1 SE error bars and a dashed 50% line.
pub fn render_svg(reports: &[WinRateReport], title: &str) -> String {
    let width = MARGIN * 2.0 + reports.len() as f64 * (BAR_WIDTH + GAP);
    let height = PLOT_HEIGHT + MARGIN * 2.5;
    let y = |p: f64| MARGIN + PLOT_HEIGHT * (1.0 - p.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{:.1}" stroke="black"/>"#,
        y(0.0)
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"#,
            MARGIN - 4.0,
            y(tick) + 4.0,
            tick * 100.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        y(0.5),
        width - MARGIN,
        y(0.5)
    );
    for (i, r) in reports.iter().enumerate() {
        let x = MARGIN + GAP / 2.0 + i as f64 * (BAR_WIDTH + GAP);
        let cx = x + BAR_WIDTH / 2.0;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{BAR_WIDTH}" height="{:.1}" fill="#4c72b0"/>"##,
            y(r.p),
            y(0.0) - y(r.p)
        );
        let (lo, hi) = (y(r.p - r.se), y(r.p + r.se));
        let _ = writeln!(
            s,
            r#"<path d="M{cx:.1} {lo:.1}V{hi:.1}M{:.1} {lo:.1}H{:.1}M{:.1} {hi:.1}H{:.1}" stroke="black"/>"#,
            cx - 6.0,
            cx + 6.0,
            cx - 6.0,
            cx + 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"#,
            hi - 4.0,
            r.p * 100.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y(0.0) + 16.0,
            escape(&r.method_a)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="gray">vs {}</text>"#,
            y(0.0) + 30.0,
            escape(&r.method_b)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Writes `reports` to `path` as CSV or SVG.
pub fn emit_report(reports: &[WinRateReport], format: ReportFormat, path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to report"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut file = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_csv(reports, &mut file)?,
        ReportFormat::Plot => {
            let title = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            file.write_all(render_svg(reports, &title).as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    file.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(a: &str, b: &str, w: usize, t: usize, l: usize) -> WinRateReport {
        let n = w + t + l;
        let p = (w as f64 + 0.5 * t as f64) / n as f64;
        WinRateReport {
            method_a: a.into(),
            method_b: b.into(),
            n_items: n,
            wins: w,
            ties: t,
            losses: l,
            p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
            excluded: 0,
        }
    }

    #[test]
    fn one_report_is_header_plus_row() {
        let mut buf = Vec::new();
        write_csv(&[report("a", "b", 2, 1, 1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "method_a,method_b,n,wins,ties,losses,p,se");
        assert!(lines[1].starts_with("a,b,4,2,1,1,0.625,"));
    }

    #[test]
    fn csv_round_trip() {
        let reports = vec![report("x", "y", 3, 0, 7), report("y, z", "x", 1, 1, 1)];
        let mut buf = Vec::new();
        write_csv(&reports, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), reports);
    }

    #[test]
    fn svg_has_bars_and_error_bars() {
        let svg = render_svg(&[report("a", "b", 2, 1, 1), report("c<d", "b", 0, 1, 0)], "t");
        assert_eq!(svg.matches("<rect").count(), 2);
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("c&lt;d"));
    }

    #[test]
    fn emit_rejects_empty_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], ReportFormat::Csv, &dir.path().join("x.csv")).is_err());
        let bad = dir.path().join("missing").join("x.csv");
        assert!(matches!(
            emit_report(&[report("a", "b", 1, 0, 0)], ReportFormat::Csv, &bad),
            Err(Error::Io { .. })
        ));
        let ok = dir.path().join("x.svg");
        emit_report(&[report("a", "b", 1, 0, 0)], ReportFormat::Plot, &ok).unwrap();
        assert!(std::fs::read_to_string(ok).unwrap().starts_with("<svg"));
    }
}
