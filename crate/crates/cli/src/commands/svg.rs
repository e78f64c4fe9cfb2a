//! Minimal line plot of an aggregate best-so-far CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    iter: Vec<f64>,
    median: Vec<f64>,
    q25: Vec<f64>,
    q75: Vec<f64>,
}

fn parse(text: &str) -> Result<Vec<(String, Series)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("empty aggregate file"))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| anyhow!("aggregate file lacks a '{name}' column"))
    };
    let (cs, ci, cm, c1, c3) = (col("strategy")?, col("iter")?, col("median")?, col("q25")?, col("q75")?);
    let mut order = Vec::new();
    let mut map: BTreeMap<String, Series> = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let f = |c: usize| -> Result<f64> {
            cells
                .get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| anyhow!("row {}: bad numeric cell in column {}", n + 2, c + 1))
        };
        let name = cells.get(cs).ok_or_else(|| anyhow!("row {}: missing strategy", n + 2))?.to_string();
        if !map.contains_key(&name) {
            order.push(name.clone());
        }
        let s = map.entry(name).or_insert_with(|| Series {
            iter: vec![],
            median: vec![],
            q25: vec![],
            q75: vec![],
        });
        s.iter.push(f(ci)?);
        s.median.push(f(cm)?);
        s.q25.push(f(c1)?);
        s.q75.push(f(c3)?);
    }
    Ok(order.into_iter().map(|k| {
        let s = map.remove(&k).expect("key recorded on insert");
        (k, s)
    }).collect())
}

fn pt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders the median line and shaded IQR band per strategy.
pub fn render_svg(csv_text: &str) -> Result<String> {
    let series = parse(csv_text)?;
    if series.is_empty() {
        bail!("aggregate file has no data rows");
    }
    let all_x = series.iter().flat_map(|(_, s)| s.iter.iter().copied());
    let (x0, x1) = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let all_y = series.iter().flat_map(|(_, s)| s.q25.iter().chain(&s.q75).chain(&s.median).copied());
    let (y0, y1) = all_y.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let yspan = if y1 > y0 { y1 - y0 } else { 1.0 };
    let sx = |v: f64| MARGIN + (v - x0) / xspan * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / yspan * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>
<text x="{m}" y="{ty}" font-size="11">{y1lab}</text>
<text x="{m}" y="{by}" font-size="11">{y0lab}</text>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        ty = MARGIN - 6.0,
        by = HEIGHT - MARGIN + 16.0,
        y1lab = pt(y1),
        y0lab = pt(y0),
    );
    for (k, (name, s)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let band: Vec<String> = s
            .iter
            .iter()
            .zip(&s.q75)
            .map(|(&x, &y)| format!("{},{}", pt(sx(x)), pt(sy(y))))
            .chain(s.iter.iter().zip(&s.q25).rev().map(|(&x, &y)| format!("{},{}", pt(sx(x)), pt(sy(y)))))
            .collect();
        let line: Vec<String> = s
            .iter
            .iter()
            .zip(&s.median)
            .map(|(&x, &y)| format!("{},{}", pt(sx(x)), pt(sy(y))))
            .collect();
        let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            pt(WIDTH - MARGIN - 120.0),
            pt(MARGIN + 14.0 * (k as f64 + 1.0)),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_svg(csv: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let svg = render_svg(&text).with_context(|| format!("rendering {}", csv.display()))?;
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "strategy,iter,median,q25,q75,runs\na,0,3.0,2.0,4.0,2\na,1,1.0,0.5,2.0,2\nb,0,5,4,6,2\nb,1,4,3,5,2\n";

    #[test]
    fn one_polyline_per_strategy() {
        let svg = render_svg(CSV).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg, render_svg(CSV).unwrap());
    }

    #[test]
    fn rejects_missing_columns() {
        assert!(render_svg("strategy,iter\na,0\n").is_err());
        assert!(render_svg("").is_err());
    }
}
