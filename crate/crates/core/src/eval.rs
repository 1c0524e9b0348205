//! Trajectory safety and fidelity metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{min_distance_over, FieldHandle, PointN};

/// Mask rule used by [`masked_frechet`], echoed into reports.
pub const MASK_RULE: &str =
    "unshaped reference samples with signed distance < mask margin to any constraint are dropped";

/// A sampled trajectory on a uniform flow-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<PointN>,
    pub dt: f64,
}

impl Rollout {
    pub fn new(times: Vec<f64>, states: Vec<PointN>, dt: f64) -> Result<Self> {
        if times.len() != states.len() || states.is_empty() {
            return invalid("rollout needs one time per state and at least one state");
        }
        if !(dt > 0.0) {
            return invalid("rollout step must be positive");
        }
        Ok(Self { times, states, dt })
    }

    /// Rollout with times `t0, t0 + dt, ...`.
    pub fn uniform(t0: f64, dt: f64, states: Vec<PointN>) -> Result<Self> {
        let times = (0..states.len()).map(|i| t0 + i as f64 * dt).collect();
        Self::new(times, states, dt)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn last(&self) -> &PointN {
        self.states.last().expect("non-empty rollout")
    }
}

/// Aggregated metrics for one rollout or a mean over several.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` (serialized as `null`) when no shaping was applied.
    pub masked_fd: Option<f64>,
    pub mpd: f64,
    pub int_violation: f64,
    pub path_length: f64,
}

impl MetricReport {
    /// Mean of each metric; `masked_fd` averages only the present values.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let fds: Vec<f64> = reports.iter().filter_map(|r| r.masked_fd).collect();
        Some(MetricReport {
            masked_fd: (!fds.is_empty()).then(|| fds.iter().sum::<f64>() / fds.len() as f64),
            mpd: reports.iter().map(|r| r.mpd).sum::<f64>() / n,
            int_violation: reports.iter().map(|r| r.int_violation).sum::<f64>() / n,
            path_length: reports.iter().map(|r| r.path_length).sum::<f64>() / n,
        })
    }
}

fn dist(a: &PointN, b: &PointN) -> f64 {
    (a - b).norm()
}

/// Discrete Fréchet distance under the Euclidean ground metric.
///
/// Standard O(|P||Q|) dynamic program, keeping one row at a time.
pub fn discrete_frechet(p: &[PointN], q: &[PointN]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return invalid("discrete Fréchet distance needs two non-empty sequences");
    }
    let m = q.len();
    let mut prev = vec![0.0_f64; m];
    let mut cur = vec![0.0_f64; m];
    for (i, pi) in p.iter().enumerate() {
        for j in 0..m {
            let d = dist(pi, &q[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Fréchet distance between a shaped rollout and the unshaped reference with
/// its constraint-adjacent samples removed.
///
/// Returns `None` when `shaped` and `unshaped` are the same rollout object
/// (no shaping was applied) or when the mask removes every reference sample.
pub fn masked_frechet(
    shaped: &Rollout,
    unshaped: &Rollout,
    fields: &[FieldHandle],
    margin: f64,
) -> Result<Option<f64>> {
    if shaped.is_empty() || unshaped.is_empty() {
        return invalid("masked Fréchet needs non-empty rollouts");
    }
    if std::ptr::eq(shaped, unshaped) {
        return Ok(None);
    }
    let mut reference = Vec::with_capacity(unshaped.len());
    for s in &unshaped.states {
        let keep = if fields.is_empty() {
            true
        } else {
            min_distance_over(fields, s)?.1.value >= margin
        };
        if keep {
            reference.push(s.clone());
        }
    }
    if reference.is_empty() {
        return Ok(None);
    }
    discrete_frechet(&shaped.states, &reference).map(Some)
}

fn require_signed(fields: &[FieldHandle]) -> Result<()> {
    if fields.iter().any(|f| !f.is_signed()) {
        return Err(Error::UnsupportedMetric(
            "penetration metrics need signed (analytic) distance fields".into(),
        ));
    }
    Ok(())
}

fn penetration(fields: &[FieldHandle], p: &PointN) -> Result<f64> {
    if fields.is_empty() {
        return Ok(0.0);
    }
    Ok((-min_distance_over(fields, p)?.1.value).max(0.0))
}

/// Worst penetration depth over all samples and constraints.
pub fn max_penetration(r: &Rollout, fields: &[FieldHandle]) -> Result<f64> {
    require_signed(fields)?;
    r.states
        .iter()
        .try_fold(0.0_f64, |acc, s| Ok(acc.max(penetration(fields, s)?)))
}

/// Rectangle-rule integral of penetration depth over flow time.
pub fn integral_violation(r: &Rollout, fields: &[FieldHandle]) -> Result<f64> {
    require_signed(fields)?;
    let mut total = 0.0;
    for s in &r.states {
        total += penetration(fields, s)? * r.dt;
    }
    Ok(total)
}

pub fn path_length(r: &Rollout) -> f64 {
    r.states.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

/// All four metrics for one rollout. `unshaped` is `None` when the rollout
/// is itself the unshaped reference.
pub fn score(
    rollout: &Rollout,
    unshaped: Option<&Rollout>,
    fields: &[FieldHandle],
    mask_margin: f64,
) -> Result<MetricReport> {
    let masked_fd = match unshaped {
        Some(u) => masked_frechet(rollout, u, fields, mask_margin)?,
        None => None,
    };
    Ok(MetricReport {
        masked_fd,
        mpd: max_penetration(rollout, fields)?,
        int_violation: integral_violation(rollout, fields)?,
        path_length: path_length(rollout),
    })
}

/// Convenience for building 2D point lists.
pub fn points2(xy: &[[f64; 2]]) -> Vec<PointN> {
    xy.iter().map(|p| DVector::from_vec(p.to_vec())).collect()
}
