//! SVG plots of velocity fields, obstacles and trajectories.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::eval::Rollout;
use crate::field::VelocityField;
use crate::geometry::{Bounds, PointN, Shape};
use crate::metric::{influence_weight, ConstraintSpec};
use crate::policy::Demonstration;

const SIZE: f64 = 600.0;
const GRID: usize = 20;
const STREAM_STEPS: usize = 50;
const OVERLAY_CELLS: usize = 60;
const OVERLAY_THRESHOLD: f64 = 0.05;

/// Everything drawn in one plot besides the field itself.
#[derive(Clone, Debug, Default)]
pub struct PlotLayers<'a> {
    pub obstacles: &'a [Shape],
    /// Constraints whose influence region (any `w > 0.05`) is shaded.
    pub influence: &'a [ConstraintSpec],
    pub rollouts: &'a [Rollout],
    pub demo: Option<&'a Demonstration>,
}

struct Canvas {
    lo: [f64; 2],
    span: [f64; 2],
    scale: f64,
}

impl Canvas {
    fn new(bounds: &Bounds) -> Self {
        let lo = [bounds.min[0], bounds.min[1]];
        let span = [bounds.max[0] - lo[0], bounds.max[1] - lo[1]];
        Self {
            lo,
            span,
            scale: SIZE / span[0].max(span[1]),
        }
    }

    fn x(&self, x: f64) -> f64 {
        (x - self.lo[0]) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        (self.lo[1] + self.span[1] - y) * self.scale
    }

    fn width(&self) -> f64 {
        self.span[0] * self.scale
    }

    fn height(&self) -> f64 {
        self.span[1] * self.scale
    }
}

fn polyline(out: &mut String, c: &Canvas, pts: &[PointN], style: &str) {
    if pts.len() < 2 {
        return;
    }
    out.push_str("<polyline points=\"");
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", c.x(p[0]), c.y(p[1]));
    }
    let _ = writeln!(out, "\" {style}/>");
}

fn draw_shape(out: &mut String, c: &Canvas, shape: &Shape) {
    const STYLE: &str = "fill=\"#444\" fill-opacity=\"0.35\" stroke=\"#222\" stroke-width=\"1.5\"";
    match shape {
        Shape::Circle { center, radius } => {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" {STYLE}/>",
                c.x(center[0]),
                c.y(center[1]),
                radius * c.scale
            );
        }
        Shape::AxisBox {
            min_corner,
            max_corner,
        } => {
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" {STYLE}/>",
                c.x(min_corner[0]),
                c.y(max_corner[1]),
                (max_corner[0] - min_corner[0]) * c.scale,
                (max_corner[1] - min_corner[1]) * c.scale
            );
        }
        Shape::SegmentCapsule { p0, p1, radius } => {
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\" stroke-opacity=\"0.6\" stroke-linecap=\"round\" stroke-width=\"{:.2}\"/>",
                c.x(p0[0]),
                c.y(p0[1]),
                c.x(p1[0]),
                c.y(p1[1]),
                2.0 * radius * c.scale
            );
        }
        Shape::Union { members } => members.iter().for_each(|m| draw_shape(out, c, m)),
        // Unbounded regions are only visible through the influence overlay.
        Shape::Halfspace { .. } => {}
    }
}

fn streamline(field: &dyn VelocityField, t: f64, seed: PointN, bounds: &Bounds, h: f64) -> Result<Vec<PointN>> {
    let mut pts = vec![seed];
    for _ in 0..STREAM_STEPS {
        let p = pts.last().expect("seeded");
        let v = field.velocity(p, t)?;
        let n = v.norm();
        if !(n > 1e-12) || !n.is_finite() {
            break;
        }
        let next = p + v * (h / n);
        let inside = (0..2).all(|k| next[k] >= bounds.min[k] && next[k] <= bounds.max[k]);
        if !inside {
            break;
        }
        pts.push(next);
    }
    Ok(pts)
}

/// Renders the field frozen at flow time `t` as streamlines seeded on a
/// 20x20 grid (50 fixed-length Euler steps each), with the layers on top.
pub fn render_field_svg(
    field: &dyn VelocityField,
    t: f64,
    layers: &PlotLayers<'_>,
    bounds: &Bounds,
) -> Result<String> {
    if field.dim() != 2 || bounds.dim() != 2 {
        return Err(Error::UnsupportedRender(format!(
            "field plots need a 2D field, got {}D",
            field.dim()
        )));
    }
    bounds.validate()?;
    let c = Canvas::new(bounds);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">",
        w = c.width(),
        h = c.height()
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    if !layers.influence.is_empty() {
        out.push_str("<g fill=\"#1f77b4\" fill-opacity=\"0.15\">\n");
        let cw = c.span[0] / OVERLAY_CELLS as f64;
        let ch = c.span[1] / OVERLAY_CELLS as f64;
        for i in 0..OVERLAY_CELLS {
            for j in 0..OVERLAY_CELLS {
                let x = c.lo[0] + (i as f64 + 0.5) * cw;
                let y = c.lo[1] + (j as f64 + 0.5) * ch;
                let p = DVector::from_vec(vec![x, y]);
                let mut w_max = 0.0_f64;
                for spec in layers.influence {
                    let d = spec.field.eval(&p)?.value;
                    w_max = w_max.max(influence_weight(d, spec.kappa, spec.margin));
                }
                if w_max > OVERLAY_THRESHOLD {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\"/>",
                        c.x(x - 0.5 * cw),
                        c.y(y + 0.5 * ch),
                        cw * c.scale,
                        ch * c.scale
                    );
                }
            }
        }
        out.push_str("</g>\n");
    }

    out.push_str("<g class=\"streamlines\">\n");
    let step = 0.1 * c.span[0].min(c.span[1]) / GRID as f64;
    for i in 0..GRID {
        for j in 0..GRID {
            let seed = DVector::from_vec(vec![
                c.lo[0] + (i as f64 + 0.5) * c.span[0] / GRID as f64,
                c.lo[1] + (j as f64 + 0.5) * c.span[1] / GRID as f64,
            ]);
            let line = streamline(field, t, seed, bounds, step)?;
            polyline(&mut out, &c, &line, "fill=\"none\" stroke=\"#999\" stroke-width=\"0.8\"");
        }
    }
    out.push_str("</g>\n");

    for shape in layers.obstacles {
        draw_shape(&mut out, &c, shape);
    }
    if let Some(demo) = layers.demo {
        polyline(
            &mut out,
            &c,
            demo.waypoints(),
            "fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6 4\"",
        );
    }
    for r in layers.rollouts {
        polyline(&mut out, &c, &r.states, "fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"1.5\"");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_field_svg(
    field: &dyn VelocityField,
    t: f64,
    layers: &PlotLayers<'_>,
    bounds: &Bounds,
    path: &Path,
) -> Result<()> {
    let svg = render_field_svg(field, t, layers, bounds)?;
    std::fs::write(path, svg)?;
    Ok(())
}
