//! Sweep summaries: CSV, a text table in the RAF-by-accuracy layout, and an
//! SVG accuracy-versus-epoch chart.

use std::fmt::Write as _;

use crate::error::{FmceError, Result};
use crate::stats::RunStats;

pub const SUMMARY_HEADER: &str = "backbone,dataset,raf,seed_count,mean_acc,std_acc";

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub backbone: String,
    pub dataset: String,
    pub raf: f64,
    pub stats: RunStats,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.backbone,
            r.dataset,
            r.raf,
            r.stats.count(),
            r.stats.mean,
            r.stats.std
        );
    }
    out
}

/// One row of a per-run metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss_base: f64,
    pub loss_fmcs: Option<f64>,
    pub loss_ral: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub fn parse_metrics_csv(origin: &str, text: &str) -> Result<Vec<MetricsRow>> {
    let err = |line: usize, m: String| FmceError::format(origin, format!("line {line}: {m}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == crate::train::METRICS_HEADER => {}
        _ => return Err(err(1, "missing metrics header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(i + 1, format!("{} fields, expected 7", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad number `{s}`")));
        rows.push(MetricsRow {
            epoch: f[0].trim().parse().map_err(|_| err(i + 1, format!("bad epoch `{}`", f[0])))?,
            lr: num(f[1])?,
            loss_base: num(f[2])?,
            loss_fmcs: if f[3].trim().is_empty() { None } else { Some(num(f[3])?) },
            loss_ral: num(f[4])?,
            train_acc: num(f[5])?,
            test_acc: num(f[6])?,
        });
    }
    if rows.is_empty() {
        return Err(err(2, "no epochs recorded".into()));
    }
    Ok(rows)
}

/// Best non-baseline RAF against the `α = 1` baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionCheck {
    pub baseline_mean: f64,
    pub best_raf: f64,
    pub best_mean: f64,
    /// `best_mean − baseline_mean`, percentage points.
    pub delta: f64,
    pub strict_improvement: bool,
}

/// Compares the best row whose RAF lies in `grid` with the RAF = 1 row.
pub fn direction_check(rows: &[SummaryRow], grid: &[f64]) -> Option<DirectionCheck> {
    let baseline = rows.iter().find(|r| r.raf == 1.0)?;
    let best = rows
        .iter()
        .filter(|r| grid.contains(&r.raf))
        .max_by(|a, b| a.stats.mean.total_cmp(&b.stats.mean))?;
    Some(DirectionCheck {
        baseline_mean: baseline.stats.mean,
        best_raf: best.raf,
        best_mean: best.stats.mean,
        delta: best.stats.mean - baseline.stats.mean,
        strict_improvement: best.stats.mean > baseline.stats.mean,
    })
}

/// Fixed-width table, one row per (backbone, dataset, RAF), RAF descending.
pub fn table_text(rows: &[SummaryRow], grid: &[f64]) -> String {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.backbone.as_str(), a.dataset.as_str())
            .cmp(&(b.backbone.as_str(), b.dataset.as_str()))
            .then(b.raf.total_cmp(&a.raf))
    });
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:<12} {:>6} {:>6}  {:<18}", "backbone", "dataset", "RAF", "seeds", "test acc (%)");
    let _ = writeln!(out, "{}", "-".repeat(60));
    for r in &sorted {
        let note = match (r.raf == 1.0, r.stats.single) {
            (true, true) => "  baseline, single seed",
            (true, false) => "  baseline",
            (false, true) => "  single seed",
            (false, false) => "",
        };
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>6.2} {:>6}  {:>6.2} ± {:<6.2}{}",
            r.backbone,
            r.dataset,
            r.raf,
            r.stats.count(),
            r.stats.mean,
            r.stats.std,
            note
        );
    }
    out.push('\n');
    out.push_str("mean ± sample standard deviation (n − 1) over seeds of the final-epoch test accuracy\n");
    out.push_str("RAF = α in L = α·L_base + (1 − α)·L_FMCS; RAF 1 is the classification-only baseline\n");
    out.push_str("runs stop at the epoch budget or after a test-loss plateau (substitute stopping rule)\n");
    match direction_check(rows, grid) {
        Some(d) => {
            let _ = writeln!(
                out,
                "best RAF {:.2}: {:.2} vs baseline {:.2} ({:+.2} pp), strict improvement: {}",
                d.best_raf,
                d.best_mean,
                d.baseline_mean,
                d.delta,
                if d.strict_improvement { "yes" } else { "no" }
            );
        }
        None => out.push_str("no baseline (RAF 1) row or no RAF < 1 rows to compare\n"),
    }
    out
}

/// Accuracy-versus-epoch polylines, one per series.
pub fn svg_chart(title: &str, series: &[(String, Vec<(usize, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 10] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    ];
    let max_epoch = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(e, _)| e))
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let accs = series.iter().flat_map(|(_, p)| p.iter().map(|&(_, a)| a));
    let lo = accs.clone().fold(100.0f64, f64::min).min(100.0);
    let lo = (lo / 10.0).floor() * 10.0;
    let hi = 100.0f64;
    let span = (hi - lo).max(1.0);
    let x = |e: f64| L + (e - 1.0) / (max_epoch - 1.0) * (W - L - R);
    let y = |a: f64| T + (hi - a) / span * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, (W - R + L) / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for i in 0..=5 {
        let a = lo + span * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{a:.0}</text>"##,
            L,
            W - R,
            L - 6.0,
            y(a) + 4.0,
            y = y(a)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">epoch</text>"#, (W - R + L) / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">test accuracy (%)</text>"#, (H - B + T) / 2.0, (H - B + T) / 2.0);
    for (i, (label, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = points
            .iter()
            .map(|&(e, a)| format!("{:.1},{:.1}", x(e as f64), y(a)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = T + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - R + 10.0,
            W - R + 30.0,
            W - R + 35.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
