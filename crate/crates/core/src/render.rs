//! SVG pictures of balls, clusters and sandpile configurations.
//!
//! Vertex `(side, a, b)` is drawn at `(±(a + b/2), b·√3/2)`; reference
//! outlines are convex hulls of `B(r)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Gasket;
use crate::idla::{Cluster, RadiusStats};
use crate::lattice::Vertex;
use crate::sandpile::SandState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    /// In the cluster and inside `B(n)`.
    pub occupied: String,
    /// Inside `B(n)` but not reached.
    pub ball_only: String,
    /// Reached outside `B(n)`.
    pub outside: String,
    pub paused: String,
    pub outline: String,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            occupied: "#1f4e79".into(),
            ball_only: "#f2c14e".into(),
            outside: "#c0392b".into(),
            paused: "#27ae60".into(),
            outline: "#555555".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    pub margin: f64,
    pub palette: Palette,
    pub stroke_width: f64,
    /// Draw `B(r_in)`, `B(n)` and `B(r_out)` around clusters.
    pub reference_outlines: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            width: 800,
            height: 800,
            margin: 10.0,
            palette: Palette::default(),
            stroke_width: 1.0,
            reference_outlines: true,
        }
    }
}

/// Smallest pixel distance between adjacent vertices that still gets drawn.
pub const MIN_EDGE_PIXELS: f64 = 0.5;

#[derive(Debug, Clone)]
struct Marker {
    vertex: Vertex,
    fill: String,
    opacity: f64,
}

#[derive(Debug, Clone)]
struct Outline {
    label: String,
    points: Vec<(f64, f64)>,
}

fn fmt_num(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Convex hull, counter-clockwise, by the monotone chain.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 1e-12 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn ball_outline(gasket: &Gasket, r: u32, label: &str) -> Result<Outline> {
    let ball = gasket.ball(Vertex::ORIGIN, r)?;
    let pts = ball.members().iter().map(|v| v.euclidean()).collect();
    Ok(Outline { label: label.to_owned(), points: convex_hull(pts) })
}

fn document(markers: &[Marker], outlines: &[Outline], spec: &RenderSpec) -> Result<String> {
    if markers.is_empty() {
        return Err(Error::domain("nothing to render"));
    }
    let all = markers.iter().map(|m| m.vertex.euclidean()).chain(outlines.iter().flat_map(|o| o.points.iter().copied()));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let inner_w = spec.width as f64 - 2.0 * spec.margin;
    let inner_h = spec.height as f64 - 2.0 * spec.margin;
    if inner_w <= 0.0 || inner_h <= 0.0 {
        return Err(Error::Resource(format!("viewport {}x{} leaves no drawing area", spec.width, spec.height)));
    }
    let scale = (inner_w / (x1 - x0).max(1.0)).min(inner_h / (y1 - y0).max(1.0));
    if scale < MIN_EDGE_PIXELS {
        return Err(Error::Resource(format!(
            "viewport {}x{} too small for {} vertices ({scale:.3} px per edge)",
            spec.width,
            spec.height,
            markers.len()
        )));
    }
    let ox = spec.margin + (inner_w - (x1 - x0) * scale) / 2.0;
    let oy = spec.margin + (inner_h - (y1 - y0) * scale) / 2.0;
    let map = |(x, y): (f64, f64)| (fmt_num(ox + (x - x0) * scale), fmt_num(oy + (y1 - y) * scale));
    let radius = fmt_num(0.4 * scale);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = spec.width,
        h = spec.height
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<g id="vertices">"#);
    for m in markers {
        let (cx, cy) = map(m.vertex.euclidean());
        let _ = write!(s, r#"<circle cx="{cx}" cy="{cy}" r="{radius}" fill="{}""#, m.fill);
        if m.opacity < 1.0 {
            let _ = write!(s, r#" fill-opacity="{}""#, fmt_num(m.opacity));
        }
        let _ = writeln!(s, "/>");
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="outlines" fill="none" stroke="{}" stroke-width="{}">"#, spec.palette.outline, spec.stroke_width);
    for o in outlines {
        let pts: Vec<String> = o
            .points
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(s, r#"<polygon data-ball="{}" points="{}"/>"#, o.label, pts.join(" "));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

/// `B(n)` with its outline.
pub fn render_ball(gasket: &Gasket, n: u32, spec: &RenderSpec) -> Result<String> {
    let ball = gasket.ball(Vertex::ORIGIN, n)?;
    let markers: Vec<Marker> = ball
        .members()
        .iter()
        .map(|&vertex| Marker { vertex, fill: spec.palette.occupied.clone(), opacity: 1.0 })
        .collect();
    let outlines = if spec.reference_outlines { vec![ball_outline(gasket, n, &format!("n={n}"))?] } else { Vec::new() };
    document(&markers, &outlines, spec)
}

/// Cluster against `B(n)`: occupied sites, holes inside the ball, sites past
/// it and paused particles, with outlines of `B(r_in)`, `B(n)`, `B(r_out)`.
pub fn render_cluster(
    gasket: &Gasket,
    cluster: &Cluster,
    stats: &RadiusStats,
    paused: &[Vertex],
    spec: &RenderSpec,
) -> Result<String> {
    let ball = gasket.ball(Vertex::ORIGIN, stats.n)?;
    let p = &spec.palette;
    let mut markers: Vec<Marker> = ball
        .members()
        .iter()
        .map(|&v| Marker {
            vertex: v,
            fill: if cluster.contains(v) { p.occupied.clone() } else { p.ball_only.clone() },
            opacity: 1.0,
        })
        .collect();
    markers.extend(
        cluster
            .vertices()
            .filter(|&v| !ball.contains(v))
            .map(|vertex| Marker { vertex, fill: p.outside.clone(), opacity: 1.0 }),
    );
    let mut seen = std::collections::BTreeSet::new();
    markers.extend(
        paused
            .iter()
            .filter(|&&v| seen.insert(v))
            .map(|&vertex| Marker { vertex, fill: p.paused.clone(), opacity: 1.0 }),
    );
    let outlines = if spec.reference_outlines {
        vec![
            ball_outline(gasket, stats.r_in.max(0) as u32, &format!("r_in={}", stats.r_in))?,
            ball_outline(gasket, stats.n, &format!("n={}", stats.n))?,
            ball_outline(gasket, stats.r_out.max(0) as u32, &format!("r_out={}", stats.r_out))?,
        ]
    } else {
        Vec::new()
    };
    document(&markers, &outlines, spec)
}

/// Sites carrying mass, shaded by `min(mass, 1)`, with the outline of `B(n)`
/// when `n` is given.
pub fn render_sandpile(gasket: &Gasket, state: &SandState, n: Option<u32>, spec: &RenderSpec) -> Result<String> {
    let markers: Vec<Marker> = state
        .iter()
        .filter(|&(_, m, _)| m > 0.0)
        .map(|(vertex, m, _)| Marker { vertex, fill: spec.palette.occupied.clone(), opacity: m.min(1.0) })
        .collect();
    let outlines = match n {
        Some(n) if spec.reference_outlines => vec![ball_outline(gasket, n, &format!("n={n}"))?],
        _ => Vec::new(),
    };
    document(&markers, &outlines, spec)
}
