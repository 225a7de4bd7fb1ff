//! Learning curves: rolling-window outcome proportions per seed, drawn as the
//! across-seed mean with a ±std band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{EpisodeRow, Phase, OUTCOMES};
use crate::env::Outcome;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    /// Episode index of the last episode in each window.
    pub x: Vec<usize>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Rolling proportion of `outcome` over the last `window` training episodes.
/// Seeds are aligned by episode index; at each point the band is the sample
/// std over the seeds that reached it (zero with a single seed).
pub fn outcome_curve(rows: &[EpisodeRow], outcome: Outcome, window: usize) -> Result<Curve> {
    if window == 0 {
        return Err(Error::Usage("plot window must be positive".into()));
    }
    let mut per_seed: BTreeMap<u64, Vec<(usize, bool)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.phase == Phase::Train) {
        per_seed
            .entry(r.run_seed)
            .or_default()
            .push((r.episode_index, r.outcome == outcome.as_str()));
    }
    let mut series: Vec<Vec<f64>> = Vec::new();
    for eps in per_seed.values_mut() {
        eps.sort_by_key(|e| e.0);
        let hits: Vec<f64> = eps.iter().map(|e| if e.1 { 1.0 } else { 0.0 }).collect();
        let mut s = Vec::new();
        let mut acc: f64 = hits.iter().take(window).sum();
        if hits.len() >= window {
            s.push(acc / window as f64);
            for k in window..hits.len() {
                acc += hits[k] - hits[k - window];
                s.push(acc / window as f64);
            }
        }
        series.push(s);
    }
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut curve = Curve {
        x: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        lower: Vec::with_capacity(len),
        upper: Vec::with_capacity(len),
    };
    for k in 0..len {
        let vals: Vec<f64> = series.iter().filter_map(|s| s.get(k).copied()).collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        curve.x.push(k + window - 1);
        curve.mean.push(m);
        curve.lower.push(m - sd);
        curve.upper.push(m + sd);
    }
    Ok(curve)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 50.0;

pub fn render_svg(curve: &Curve, title: &str) -> String {
    let plot_w = W - PAD_L - PAD_R;
    let plot_h = H - PAD_T - PAD_B;
    let x_max = curve.x.last().copied().unwrap_or(1).max(1) as f64;
    let sx = |x: usize| PAD_L + plot_w * x as f64 / x_max;
    let sy = |y: f64| PAD_T + plot_h * (1.0 - y.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        W / 2.0
    );
    // axes and ticks
    let (x0, y0, x1, y1) = (PAD_L, PAD_T + plot_h, PAD_L + plot_w, PAD_T);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.2}</text>"#,
            x0 - 6.0,
            sy(v) + 4.0
        );
    }
    for i in 0..=4 {
        let xv = (x_max * i as f64 / 4.0).round() as usize;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv}</text>"#,
            sx(xv),
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">episodes</text>"#,
        PAD_L + plot_w / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">proportion</text>"#,
        PAD_T + plot_h / 2.0,
        PAD_T + plot_h / 2.0
    );

    if !curve.x.is_empty() {
        let mut band = String::new();
        for (i, &x) in curve.x.iter().enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(curve.upper[i]));
        }
        for (i, &x) in curve.x.iter().enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(curve.lower[i]));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, band.trim_end());
        let line: String = curve
            .x
            .iter()
            .zip(&curve.mean)
            .map(|(&x, &m)| format!("{:.2},{:.2}", sx(x), sy(m)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(s, r#"<polyline points="{line}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `outcome_{success,death,timeout}.svg` into `dir`.
pub fn write_outcome_plots(rows: &[EpisodeRow], window: usize, dir: &Path) -> Result<()> {
    for o in OUTCOMES {
        let curve = outcome_curve(rows, o, window)?;
        let svg = render_svg(&curve, &format!("{} proportion (window {window})", o.as_str()));
        std::fs::write(dir.join(format!("outcome_{}.svg", o.as_str())), svg)?;
    }
    Ok(())
}
