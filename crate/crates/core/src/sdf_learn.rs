//! Neural distance fields fitted with an Eikonal regularizer.
//!
//! The regression target is the distance magnitude `|s|`, so a trained field
//! is unsigned: it reports proximity, not whether a point is inside. Anything
//! that needs penetration depth must use the generating analytic shape.
//!
//! The Eikonal term uses a central finite-difference stencil on the input,
//! which keeps parameter gradients first order: each sample costs `1 + 2n`
//! forward/backward passes.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{eval_sdf, Bounds, DistanceField, DistanceSample, PointN, Shape};
use crate::nn::{MlpParams, MlpSpec, ModelFile, OptimizerState, DEFAULT_HIDDEN};

/// Labeled points for distance regression.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfTrainSet {
    pub points: Vec<PointN>,
    pub distances: Vec<f64>,
}

impl SdfTrainSet {
    pub fn new(points: Vec<PointN>, distances: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != distances.len() {
            return invalid("training set needs equal, non-zero numbers of points and labels");
        }
        if !distances.iter().all(|d| d.is_finite())
            || !points.iter().all(|p| p.iter().all(|x| x.is_finite()))
        {
            return invalid("training set entries must be finite");
        }
        Ok(Self { points, distances })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfTrainConfig {
    pub lambda_mse: f64,
    pub lambda_eik: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub fd_step: f64,
    pub seed: u64,
    pub lr: f64,
    pub hidden_dims: Vec<usize>,
    pub n_surface: usize,
    pub n_volume: usize,
    /// Sampling region; derived from the shape's bounding box when absent.
    pub bounds: Option<Bounds>,
}

impl Default for SdfTrainConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_eik: 0.1,
            epochs: 500,
            batch_size: 256,
            fd_step: 1e-3,
            seed: 0,
            lr: 1e-3,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            n_surface: 2000,
            n_volume: 2000,
            bounds: None,
        }
    }
}

impl SdfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mse > 0.0) || !(self.lambda_eik >= 0.0) {
            return invalid("need lambda_mse > 0 and lambda_eik >= 0");
        }
        if !(self.fd_step > 0.0 && self.fd_step <= 1e-2) {
            return invalid("fd_step must lie in (0, 1e-2]");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return invalid("learning rate must be positive");
        }
        Ok(())
    }
}

/// Default sampling region: the shape's bounding box grown by its largest
/// half-extent on every side.
pub fn default_bounds(shape: &Shape) -> Result<Bounds> {
    let Some((lo, hi)) = shape.bounding_box() else {
        return invalid("unbounded shapes need explicit sampling bounds");
    };
    let pad = 0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    Bounds::new(
        vec![lo[0] - pad, lo[1] - pad],
        vec![hi[0] + pad, hi[1] + pad],
    )
}

fn perimeter(shape: &Shape) -> f64 {
    match shape {
        Shape::Circle { radius, .. } => 2.0 * PI * radius,
        Shape::AxisBox {
            min_corner,
            max_corner,
        } => 2.0 * ((max_corner[0] - min_corner[0]) + (max_corner[1] - min_corner[1])),
        Shape::SegmentCapsule { p0, p1, radius } => {
            2.0 * (p1[0] - p0[0]).hypot(p1[1] - p0[1]) + 2.0 * PI * radius
        }
        Shape::Union { members } => members.iter().map(perimeter).sum(),
        Shape::Halfspace { .. } => 0.0,
    }
}

/// A uniformly distributed boundary point and its outward normal.
fn sample_boundary(shape: &Shape, rng: &mut ChaCha8Rng) -> ([f64; 2], [f64; 2]) {
    match shape {
        Shape::Circle { center, radius } => {
            let th = rng.random_range(0.0..2.0 * PI);
            let n = [th.cos(), th.sin()];
            ([center[0] + radius * n[0], center[1] + radius * n[1]], n)
        }
        Shape::AxisBox {
            min_corner: lo,
            max_corner: hi,
        } => {
            let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
            let mut s = rng.random_range(0.0..2.0 * (w + h));
            if s < w {
                return ([lo[0] + s, lo[1]], [0.0, -1.0]);
            }
            s -= w;
            if s < h {
                return ([hi[0], lo[1] + s], [1.0, 0.0]);
            }
            s -= h;
            if s < w {
                return ([hi[0] - s, hi[1]], [0.0, 1.0]);
            }
            s -= w;
            ([lo[0], hi[1] - s], [-1.0, 0.0])
        }
        Shape::SegmentCapsule { p0, p1, radius } => {
            let seg = [p1[0] - p0[0], p1[1] - p0[1]];
            let len = seg[0].hypot(seg[1]);
            let arc = PI * radius;
            let s = rng.random_range(0.0..2.0 * (len + arc));
            let (dir, perp) = if len > 0.0 {
                ([seg[0] / len, seg[1] / len], [-seg[1] / len, seg[0] / len])
            } else {
                ([1.0, 0.0], [0.0, 1.0])
            };
            let side = |base: &[f64; 2], t: f64, sign: f64| {
                let n = [sign * perp[0], sign * perp[1]];
                (
                    [
                        base[0] + t * dir[0] + radius * n[0],
                        base[1] + t * dir[1] + radius * n[1],
                    ],
                    n,
                )
            };
            let cap = |c: &[f64; 2], phase: f64| {
                // Half-circle around `c` facing away from the segment.
                let base = dir[1].atan2(dir[0]);
                let th = base + phase;
                let n = [th.cos(), th.sin()];
                ([c[0] + radius * n[0], c[1] + radius * n[1]], n)
            };
            if s < len {
                side(p0, s, 1.0)
            } else if s < 2.0 * len {
                side(p0, s - len, -1.0)
            } else if s < 2.0 * len + arc {
                cap(p1, -PI / 2.0 + (s - 2.0 * len) / radius)
            } else {
                cap(p0, PI / 2.0 + (s - 2.0 * len - arc) / radius)
            }
        }
        Shape::Union { members } => {
            let total: f64 = members.iter().map(perimeter).sum();
            let mut s = rng.random_range(0.0..total);
            for m in members {
                let p = perimeter(m);
                if s < p {
                    return sample_boundary(m, rng);
                }
                s -= p;
            }
            sample_boundary(members.last().expect("validated union"), rng)
        }
        Shape::Halfspace { .. } => unreachable!("halfspaces are rejected before sampling"),
    }
}

/// Uniform volume samples plus boundary samples pushed off the surface by a
/// Gaussian normal offset (std 5% of the bounds diagonal), all labeled with
/// the exact signed distance.
pub fn sample_training_set(
    shape: &Shape,
    n_surface: usize,
    n_volume: usize,
    bounds: &Bounds,
    seed: u64,
) -> Result<SdfTrainSet> {
    shape.validate()?;
    bounds.validate()?;
    if bounds.dim() != 2 || shape.dim() != 2 {
        return invalid("sampling is implemented for 2D shapes");
    }
    if n_surface + n_volume == 0 {
        return invalid("need at least one sample");
    }
    let Some((lo, hi)) = shape.bounding_box() else {
        return invalid("cannot sample an unbounded shape");
    };
    if !bounds.contains_box(&lo, &hi) {
        return invalid("sampling bounds must contain the shape");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 0.05 * bounds.diagonal();
    let offset = Normal::new(0.0, sigma).expect("positive std");
    let mut points = Vec::with_capacity(n_surface + n_volume);

    for _ in 0..n_volume {
        let p: Vec<f64> = (0..2)
            .map(|k| rng.random_range(bounds.min[k]..bounds.max[k]))
            .collect();
        points.push(DVector::from_vec(p));
    }
    for _ in 0..n_surface {
        let (b, n) = sample_boundary(shape, &mut rng);
        let e: f64 = offset.sample(&mut rng);
        points.push(DVector::from_vec(vec![b[0] + e * n[0], b[1] + e * n[1]]));
    }
    let distances = points
        .iter()
        .map(|p| eval_sdf(shape, p).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    SdfTrainSet::new(points, distances)
}

/// Mean loss over the batch and its parameter gradient.
///
/// Per sample: `lambda_mse * (phi(a) - |s|)^2 + lambda_eik * (|g(a)| - 1)^2`
/// where `g` is the central-difference input gradient with step `fd_step`.
pub fn sdf_loss(
    params: &MlpParams,
    points: &[PointN],
    distances: &[f64],
    cfg: &SdfTrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if points.is_empty() || points.len() != distances.len() {
        return invalid("batch must be non-empty with one label per point");
    }
    let dim = params.spec().input_dim;
    let scale = 1.0 / points.len() as f64;
    let h = cfg.fd_step;
    let mut grads = vec![0.0; params.as_slice().len()];
    let mut loss = 0.0;
    let mut probe = vec![0.0; dim];

    for (p, s) in points.iter().zip(distances) {
        let center = params.trace(p.as_slice())?;
        let resid = center.output()[0] - s.abs();
        loss += cfg.lambda_mse * resid * resid;
        params.accumulate_param_grad(&center, &[2.0 * cfg.lambda_mse * resid * scale], &mut grads);

        if cfg.lambda_eik == 0.0 {
            continue;
        }
        let mut plus = Vec::with_capacity(dim);
        let mut minus = Vec::with_capacity(dim);
        let mut g = vec![0.0; dim];
        for k in 0..dim {
            probe.copy_from_slice(p.as_slice());
            probe[k] += h;
            let tp = params.trace(&probe)?;
            probe[k] -= 2.0 * h;
            let tm = params.trace(&probe)?;
            g[k] = (tp.output()[0] - tm.output()[0]) / (2.0 * h);
            plus.push(tp);
            minus.push(tm);
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let eik = norm - 1.0;
        loss += cfg.lambda_eik * eik * eik;
        if norm == 0.0 {
            continue;
        }
        // d|g|/dg_k = g_k/|g|, dg_k = (dphi(a+h e_k) - dphi(a-h e_k)) / 2h
        let outer = 2.0 * cfg.lambda_eik * eik * scale / norm;
        for k in 0..dim {
            let c = outer * g[k] / (2.0 * h);
            params.accumulate_param_grad(&plus[k], &[c], &mut grads);
            params.accumulate_param_grad(&minus[k], &[-c], &mut grads);
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence {
            step: 0,
            last_finite_loss: None,
        });
    }
    Ok((loss, grads))
}

/// Where a learned field came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfProvenance {
    pub shape: Shape,
    pub config: SdfTrainConfig,
    pub final_loss: f64,
}

/// A trained network answering distance queries.
#[derive(Clone, Debug)]
pub struct LearnedField {
    pub params: MlpParams,
    pub provenance: Option<SdfProvenance>,
}

impl LearnedField {
    pub fn new(params: MlpParams) -> Result<Self> {
        if params.spec().output_dim != 1 {
            return invalid("a distance network must have a scalar output");
        }
        Ok(Self {
            params,
            provenance: None,
        })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.provenance.as_ref().map(|p| p.final_loss)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&LearnedFieldFile {
            header: self.provenance.clone(),
            model: ModelFile::from(&self.params),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: LearnedFieldFile = serde_json::from_str(s)?;
        let mut field = Self::new(f.model.try_into()?)?;
        field.provenance = f.header;
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Model file plus a provenance header.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnedFieldFile {
    pub header: Option<SdfProvenance>,
    pub model: ModelFile,
}

/// Value is the network output; the gradient is the normalized analytic
/// input gradient.
pub fn learned_field_eval(field: &LearnedField, p: &PointN) -> Result<DistanceSample> {
    let trace = field.params.trace(p.as_slice())?;
    let value = trace.output()[0];
    let jac = field.params.input_gradient_from_trace(&trace);
    let grad = DVector::from_iterator(jac.ncols(), jac.row(0).iter().copied());
    Ok(DistanceSample::normalized(value, grad))
}

impl DistanceField for LearnedField {
    fn dim(&self) -> usize {
        self.params.spec().input_dim
    }

    fn eval(&self, p: &PointN) -> Result<DistanceSample> {
        learned_field_eval(self, p)
    }

    fn is_signed(&self) -> bool {
        false
    }
}

/// Fits a distance network to `shape`.
pub fn train_sdf(shape: &Shape, cfg: &SdfTrainConfig) -> Result<LearnedField> {
    cfg.validate()?;
    let bounds = match &cfg.bounds {
        Some(b) => b.clone(),
        None => default_bounds(shape)?,
    };
    let set = sample_training_set(shape, cfg.n_surface, cfg.n_volume, &bounds, cfg.seed)?;
    let spec = MlpSpec::new(shape.dim(), cfg.hidden_dims.clone(), 1)?;
    let mut params = MlpParams::init(spec, cfg.seed.wrapping_add(1));
    let mut opt = OptimizerState::for_params(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..set.len()).collect();

    let mut last_finite: Option<f64> = None;
    let mut final_loss = f64::NAN;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let pts: Vec<PointN> = chunk.iter().map(|&i| set.points[i].clone()).collect();
            let ds: Vec<f64> = chunk.iter().map(|&i| set.distances[i]).collect();
            let (loss, grads) = sdf_loss(&params, &pts, &ds, cfg).map_err(|e| match e {
                Error::TrainingDivergence { .. } => Error::TrainingDivergence {
                    step,
                    last_finite_loss: last_finite,
                },
                other => other,
            })?;
            opt.apply(params.as_mut_slice(), &grads)
                .map_err(|_| Error::TrainingDivergence {
                    step,
                    last_finite_loss: last_finite,
                })?;
            last_finite = Some(loss);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }
    if cfg.epochs == 0 {
        let (loss, _) = sdf_loss(&params, &set.points, &set.distances, cfg)?;
        final_loss = loss;
    }

    Ok(LearnedField {
        params,
        provenance: Some(SdfProvenance {
            shape: shape.clone(),
            config: cfg.clone(),
            final_loss,
        }),
    })
}
