//! Static SVG charts. No scripting, no external assets.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

pub struct BarGroup {
    pub label: String,
    pub values: Vec<(String, f64)>,
}

pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Colour key; the goal cell index.
    pub key: usize,
}

const PALETTE: [&str; 4] = ["#1b6ca8", "#d1495b", "#8f8f8f", "#edae49"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars in [0, 1], one group per solve report.
pub fn bar_chart(title: &str, groups: &[BarGroup]) -> String {
    let bar = 14.0;
    let per = groups.iter().map(|g| g.values.len()).max().unwrap_or(1) as f64 * bar + 40.0;
    let (left, top, height) = (60.0, 40.0, 240.0);
    let width = left + per * groups.len() as f64 + 20.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        top + height + 160.0
    );
    writeln!(s, "<text x=\"{left}\" y=\"20\" font-size=\"14\">{}</text>", escape(title)).unwrap();
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + height * (1.0 - v);
        writeln!(s, "<line x1=\"{left}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"#ddd\"/>", width - 20.0).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>", left - 6.0, y + 3.0).unwrap();
    }
    for (gi, g) in groups.iter().enumerate() {
        let x0 = left + per * gi as f64 + 20.0;
        for (i, (name, v)) in g.values.iter().enumerate() {
            let h = height * v.clamp(0.0, 1.0);
            writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{h}\" fill=\"{}\"><title>{} {v:.3}</title></rect>",
                x0 + bar * i as f64,
                top + height - h,
                bar - 2.0,
                PALETTE[i % PALETTE.len()],
                escape(name)
            )
            .unwrap();
        }
        let lx = x0 + bar * g.values.len() as f64 / 2.0;
        let ly = top + height + 12.0;
        writeln!(s, "<text x=\"{lx}\" y=\"{ly}\" transform=\"rotate(45 {lx} {ly})\">{}</text>", escape(&g.label))
            .unwrap();
    }
    if let Some(g) = groups.first() {
        for (i, (name, _)) in g.values.iter().enumerate() {
            let x = left + 110.0 * i as f64;
            writeln!(s, "<rect x=\"{x}\" y=\"26\" width=\"8\" height=\"8\" fill=\"{}\"/>", PALETTE[i % PALETTE.len()])
                .unwrap();
            writeln!(s, "<text x=\"{}\" y=\"34\">{}</text>", x + 12.0, escape(name)).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter(title: &str, points: &[Point]) -> String {
    let (size, pad) = (360.0, 40.0);
    let range = |f: fn(&Point) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        }
    };
    let ((x0, x1), (y0, y1)) = (range(|p| p.x), range(|p| p.y));
    let keys = points.iter().map(|p| p.key).max().unwrap_or(0) + 1;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        size + 2.0 * pad,
        size + 2.0 * pad
    );
    writeln!(s, "<text x=\"{pad}\" y=\"20\" font-size=\"13\">{}</text>", escape(title)).unwrap();
    writeln!(s, "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#999\"/>")
        .unwrap();
    for p in points {
        let cx = pad + size * (p.x - x0) / (x1 - x0);
        let cy = pad + size * (1.0 - (p.y - y0) / (y1 - y0));
        let hue = 360.0 * p.key as f64 / keys as f64;
        writeln!(
            s,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"hsl({hue:.0},65%,45%)\" fill-opacity=\"0.8\"/>"
        )
        .unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">PC1</text>", pad + size / 2.0, size + pad + 16.0)
        .unwrap();
    writeln!(
        s,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\">PC2</text>",
        pad + size / 2.0,
        pad + size / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// `pc1`, `pc2` and the goal of every row of a PCA table.
pub fn read_pca_points(path: &Path) -> Result<Vec<Point>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).with_context(|| format!("{}: no {name} column", path.display()))
    };
    let (c1, c2, gx, gy) = (col("pc1")?, col("pc2").or_else(|_| col("pc1"))?, col("goal_x")?, col("goal_y")?);
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let goal_x: usize = f[gx].parse()?;
            let goal_y: usize = f[gy].parse()?;
            Ok(Point { x: f[c1].parse()?, y: f[c2].parse()?, key: goal_y * commlab::gridworld::INTERIOR + goal_x })
        })
        .collect()
}
