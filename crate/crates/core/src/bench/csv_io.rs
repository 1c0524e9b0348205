//! Demonstration and trajectory CSV files (`t,x0,x1,...`).

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::Rollout;
use crate::geometry::PointN;
use crate::policy::Demonstration;

/// Affine map from raw coordinates into the unit box: `x_unit = (x - offset) * scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: f64,
    pub t_offset: f64,
    pub t_scale: f64,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: 1.0,
            t_offset: 0.0,
            t_scale: 1.0,
        }
    }

    pub fn apply(&self, x: &PointN) -> PointN {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.offset).map(|(v, o)| (v - o) * self.scale),
        )
    }

    pub fn invert(&self, x: &PointN) -> PointN {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.offset).map(|(v, o)| v / self.scale + o),
        )
    }

    pub fn invert_time(&self, t: f64) -> f64 {
        t / self.t_scale + self.t_offset
    }
}

/// A demonstration read from disk with the mapping back to its raw frame.
#[derive(Clone, Debug)]
pub struct IngestedDemo {
    pub demo: Demonstration,
    pub normalization: Normalization,
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

/// Reads raw `(times, points)` rows; an optional leading header row whose
/// first field is not numeric is skipped.
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, Vec<PointN>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut times = Vec::new();
    let mut points = Vec::new();
    let mut dim = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first = record.get(0).unwrap_or("");
        if idx == 0 && first.parse::<f64>().is_err() {
            if first != "t" {
                return parse_err(line, "header must start with 't'");
            }
            continue;
        }
        let values: Vec<f64> = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .or_else(|_| parse_err(line, "non-numeric field"))?;
        if values.len() < 2 {
            return parse_err(line, "row needs a time and at least one coordinate");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return parse_err(line, "non-finite value");
        }
        match dim {
            None => dim = Some(values.len() - 1),
            Some(d) if d != values.len() - 1 => {
                return parse_err(line, format!("expected {} columns, found {}", d + 1, values.len()))
            }
            _ => {}
        }
        if let Some(&prev) = times.last() {
            if !(values[0] > prev) {
                return parse_err(line, format!("time {} does not increase", values[0]));
            }
        }
        times.push(values[0]);
        points.push(DVector::from_row_slice(&values[1..]));
    }
    if times.len() < 2 {
        return parse_err(0, "need at least two rows");
    }
    Ok((times, points))
}

/// Reads a demonstration, mapping time onto `[0, 1]` and space uniformly into
/// the unit box.
pub fn ingest_demo_csv(path: &Path) -> Result<IngestedDemo> {
    let (times, points) = read_trajectory_csv(path)?;
    let dim = points[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in &points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let normalization = Normalization {
        offset: lo,
        scale,
        t_offset: t0,
        t_scale: 1.0 / span,
    };
    let unit: Vec<PointN> = points.iter().map(|p| normalization.apply(p)).collect();
    let demo = Demonstration::from_samples(&times, unit)?;
    Ok(IngestedDemo {
        demo,
        normalization,
    })
}

fn write_rows<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (f64, &'a PointN)>,
    norm: Option<&Normalization>,
) -> Result<()> {
    let mut out = String::from("t");
    for k in 0..dim {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for (t, p) in rows {
        let (t, p) = match norm {
            Some(n) => (n.invert_time(t), n.invert(p)),
            None => (t, p.clone()),
        };
        out.push_str(&format!("{t:?}"));
        for x in p.iter() {
            out.push_str(&format!(",{x:?}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a demonstration, mapped back to its raw frame when `norm` is given.
pub fn export_demo_csv(
    demo: &Demonstration,
    norm: Option<&Normalization>,
    path: &Path,
) -> Result<()> {
    write_rows(
        path,
        demo.dim(),
        demo.times().iter().copied().zip(demo.waypoints()),
        norm,
    )
}

pub fn export_rollout_csv(rollout: &Rollout, path: &Path) -> Result<()> {
    if rollout.is_empty() {
        return invalid("cannot export an empty rollout");
    }
    write_rows(
        path,
        rollout.dim(),
        rollout.times.iter().copied().zip(&rollout.states),
        None,
    )
}
