use std::fmt::Write as _;
use std::path::Path;

use super::protocol::{CmcCurve, EvalReport, REPORTED_RANKS};
use crate::error::{Error, Result};

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `rank,rate` rows, ranks 1-based.
pub fn cmc_csv(curve: &CmcCurve) -> String {
    let mut s = String::from("rank,rate\n");
    for (k, r) in curve.rank_rates.iter().enumerate() {
        writeln!(s, "{},{r:?}", k + 1).unwrap();
    }
    s
}

/// `trial,split_seed,rank,rate` rows for every trial.
pub fn trials_csv(report: &EvalReport) -> String {
    let mut s = String::from("trial,split_seed,rank,rate\n");
    for t in &report.trials {
        for (k, r) in t.curve.rank_rates.iter().enumerate() {
            writeln!(s, "{},{},{},{r:?}", t.trial, t.split_seed, k + 1).unwrap();
        }
    }
    s
}

/// One row per method with rank-1/5/10/20 rates in percent, plus the same
/// columns per trial.
pub fn rank_table_csv(rows: &[(String, &EvalReport)]) -> String {
    let mut s = String::from("method,trial");
    for k in REPORTED_RANKS {
        write!(s, ",rank{k}").unwrap();
    }
    s.push('\n');
    for (name, report) in rows {
        let mut line = |label: &str, c: &CmcCurve| {
            write!(s, "{name},{label}").unwrap();
            for r in c.reported() {
                write!(s, ",{:.2}", 100.0 * r).unwrap();
            }
            s.push('\n');
        };
        line("mean", &report.mean);
        for t in &report.trials {
            line(&t.trial.to_string(), &t.curve);
        }
    }
    s
}

pub fn write_cmc_csv(path: &Path, curve: &CmcCurve) -> Result<()> {
    write_file(path, &cmc_csv(curve))
}

pub fn write_trials_csv(path: &Path, report: &EvalReport) -> Result<()> {
    write_file(path, &trials_csv(report))
}

pub fn write_rank_table(path: &Path, rows: &[(String, &EvalReport)]) -> Result<()> {
    write_file(path, &rank_table_csv(rows))
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Line plot of averaged CMC curves over ranks `1..=max_rank`, rate in
/// percent on the y axis.
pub fn cmc_svg(curves: &[(String, &CmcCurve)], max_rank: usize) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_rank = max_rank.max(2);
    let x = |k: usize| left + pw * (k - 1) as f64 / (max_rank - 1) as f64;
    let y = |r: f64| top + ph * (1.0 - r);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    for i in 0..=5 {
        let r = i as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{4}</text>"##,
            y(r),
            left + pw,
            left - 6.0,
            y(r) + 4.0,
            (100.0 * r).round()
        )
        .unwrap();
    }
    let step = (max_rank / 5).max(1);
    for k in (1..=max_rank).filter(|k| k % step == 0 || *k == 1) {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{k}</text>"#,
            x(k),
            top + ph + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">Rank</text>"#,
        left + pw / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">Matching rate (%)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    )
    .unwrap();
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = (1..=max_rank)
            .map(|k| format!("{:.1},{:.1}", x(k), y(curve.rate(k))))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = top + 10.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4} ({5:.2}%)</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            escape(name),
            100.0 * curve.rank1()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_cmc_svg(path: &Path, curves: &[(String, &CmcCurve)], max_rank: usize) -> Result<()> {
    write_file(path, &cmc_svg(curves, max_rank))
}
