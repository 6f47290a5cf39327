//! Minimal SVG line plots and heatmaps rendered from a [`CsvTable`].

use std::fmt::Write;

use anyhow::{bail, Result};

use crate::table::CsvTable;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub enum PlotSpec {
    /// One polyline per `y` column, optionally one per distinct value of
    /// `group`.
    Line { title: String, x: String, y: Vec<String>, group: Option<String> },
    /// One rectangle per `(x, y)` pair coloured by `value` on a diverging
    /// scale centred at zero.
    Heatmap { title: String, x: String, y: String, value: String },
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn axes(out: &mut String, f: &Frame, title: &str, xl: &str, yl: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (x0 + x1) / 2.0, esc(title));
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y1 + 4.0);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#, y1 + 17.0, fmt_tick(xv));
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#, x0 - 7.0, py + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, (x0 + x1) / 2.0, y1 + 36.0, esc(xl));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(yl)
    );
}

fn footer(out: &mut String, table: &CsvTable) {
    let _ = writeln!(
        out,
        r##"<text x="8" y="{:.1}" font-size="9" fill="#555">config sha256 {} seed {}</text>"##,
        H - 8.0,
        esc(&table.provenance.config_sha256),
        table.provenance.seed
    );
}

/// Renders `spec` from `table`. Output depends only on the inputs.
pub fn emit_svg_plot(table: &CsvTable, spec: &PlotSpec) -> Result<String> {
    if table.rows.is_empty() {
        bail!("cannot plot an empty table");
    }
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    match spec {
        PlotSpec::Line { title, x, y, group } => {
            let xs = table.column(x)?;
            let ycols = y.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
            let groups: Vec<f64> = match group {
                Some(g) => table.column(g)?,
                None => vec![0.0; xs.len()],
            };
            let mut keys: Vec<f64> = Vec::new();
            for &g in &groups {
                if !keys.iter().any(|k| k.to_bits() == g.to_bits()) {
                    keys.push(g);
                }
            }
            let xr = range(xs.iter().copied()).ok_or_else(|| anyhow::anyhow!("column `{x}` has no finite values"))?;
            let yr = range(ycols.iter().flatten().copied()).ok_or_else(|| anyhow::anyhow!("y columns have no finite values"))?;
            let f = Frame { x: xr, y: yr };
            axes(&mut out, &f, title, x, &y.join(", "));
            let mut series = 0usize;
            for (ci, col) in ycols.iter().enumerate() {
                for &k in &keys {
                    let mut pts: Vec<(f64, f64)> = xs
                        .iter()
                        .zip(col)
                        .zip(&groups)
                        .filter(|((xv, yv), g)| g.to_bits() == k.to_bits() && xv.is_finite() && yv.is_finite())
                        .map(|((xv, yv), _)| (*xv, *yv))
                        .collect();
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let colour = PALETTE[series % PALETTE.len()];
                    let path: Vec<String> = pts.iter().map(|(a, b)| format!("{:.2},{:.2}", f.px(*a), f.py(*b))).collect();
                    let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
                    for (a, b) in &pts {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#, f.px(*a), f.py(*b));
                    }
                    let label = match group {
                        Some(g) => format!("{} ({}={})", y[ci], g, fmt_tick(k)),
                        None => y[ci].clone(),
                    };
                    let ly = TOP + 10.0 + 16.0 * series as f64;
                    let lx = W - RIGHT + 10.0;
                    let _ = writeln!(out, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#, lx + 16.0);
                    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, lx + 20.0, ly + 3.5, esc(&label));
                    series += 1;
                }
            }
        }
        PlotSpec::Heatmap { title, x, y, value } => {
            let (xs, ys, vs) = (table.column(x)?, table.column(y)?, table.column(value)?);
            let distinct = |v: &[f64]| {
                let mut d: Vec<f64> = v.iter().copied().filter(|a| a.is_finite()).collect();
                d.sort_by(f64::total_cmp);
                d.dedup();
                d
            };
            let (dx, dy) = (distinct(&xs), distinct(&ys));
            if dx.is_empty() || dy.is_empty() {
                bail!("heatmap axes have no finite values");
            }
            let half = |d: &[f64]| if d.len() > 1 { (d[d.len() - 1] - d[0]) / (d.len() - 1) as f64 / 2.0 } else { 0.5 };
            let (hx, hy) = (half(&dx), half(&dy));
            let f = Frame { x: (dx[0] - hx, dx[dx.len() - 1] + hx), y: (dy[0] - hy, dy[dy.len() - 1] + hy) };
            let vmax = vs.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let cw = (W - LEFT - RIGHT) / dx.len() as f64;
            let ch = (H - TOP - BOTTOM) / dy.len() as f64;
            for ((xv, yv), v) in xs.iter().zip(&ys).zip(&vs) {
                let i = dx.iter().position(|d| d == xv);
                let j = dy.iter().position(|d| d == yv);
                let (Some(i), Some(j)) = (i, j) else { continue };
                let fill = diverging(*v / vmax);
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"><title>{}={}, {}={}: {}</title></rect>"#,
                    LEFT + i as f64 * cw,
                    H - BOTTOM - (j + 1) as f64 * ch,
                    cw,
                    ch,
                    esc(x),
                    fmt_tick(*xv),
                    esc(y),
                    fmt_tick(*yv),
                    v
                );
            }
            axes(&mut out, &f, title, x, y);
            let lx = W - RIGHT + 20.0;
            for k in 0..=10 {
                let t = 1.0 - k as f64 / 5.0;
                let _ = writeln!(out, r#"<rect x="{lx:.1}" y="{:.1}" width="18" height="20" fill="{}"/>"#, TOP + 20.0 * k as f64, diverging(t));
            }
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, lx + 22.0, TOP + 12.0, fmt_tick(vmax));
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10">0</text>"#, lx + 22.0, TOP + 112.0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, lx + 22.0, TOP + 212.0, fmt_tick(-vmax));
            let _ = writeln!(out, r#"<text x="{lx:.1}" y="{:.1}" font-size="11">{}</text>"#, TOP + 240.0, esc(value));
        }
    }
    footer(&mut out, table);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Blue for positive, red for negative, white at zero; `t` in `[-1, 1]`.
fn diverging(t: f64) -> String {
    if !t.is_finite() {
        return "#cccccc".into();
    }
    let t = t.clamp(-1.0, 1.0);
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 { (fade(33.0), fade(102.0), fade(172.0)) } else { (fade(178.0), fade(24.0), fade(43.0)) };
    format!("#{r:02x}{g:02x}{b:02x}")
}
