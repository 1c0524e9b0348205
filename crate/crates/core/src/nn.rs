//! Small tanh multilayer perceptron with hand-written reverse mode and Adam.
//!
//! Parameters live in one flat buffer, layer by layer: the row-major weight
//! matrix (`out x in`) followed by the bias. Gradients and Adam moments use
//! the same layout, so the optimizer never needs to know about layers.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if hidden_dims.is_empty() {
            return invalid("an MLP needs at least one hidden layer");
        }
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
        };
        spec.check_dims()?;
        Ok(spec)
    }

    /// A single affine readout with no hidden layer.
    pub fn linear(input_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
        };
        spec.check_dims()?;
        Ok(spec)
    }

    fn check_dims(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return invalid("all layer widths must be >= 1");
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Network weights in a flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<LayerView>,
    data: Vec<f64>,
}

fn views(spec: &MlpSpec) -> Vec<LayerView> {
    let mut offset = 0;
    spec.layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let v = LayerView {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            v
        })
        .collect()
}

/// Activations recorded by a forward pass, needed for backprop.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l - 1`.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = views(&spec);
        let data = vec![0.0; spec.num_params()];
        Self { spec, layers, data }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut params = Self::zeros(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in params.layers.clone() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for x in &mut params.data[l.w..l.b] {
                *x = rng.random_range(-limit..=limit);
            }
        }
        params
    }

    pub fn from_flat(spec: MlpSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.num_params() {
            return invalid(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                data.len()
            ));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return invalid("parameters must be finite");
        }
        let layers = views(&spec);
        Ok(Self { spec, layers, data })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Row-major weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let v = self.layers[l];
        &self.data[v.w..v.b]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let v = self.layers[l];
        &mut self.data[v.w..v.b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let v = self.layers[l];
        &self.data[v.b..v.b + v.fan_out]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let v = self.layers[l];
        &mut self.data[v.b..v.b + v.fan_out]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return invalid(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.spec.input_dim
            ));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, v) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let w = &self.data[v.w..v.b];
            let mut out = self.data[v.b..v.b + v.fan_out].to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(v.fan_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l != last {
                    *o = o.tanh();
                }
            }
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.acts.pop().expect("non-empty trace"))
    }

    /// Adds `d(upstream . f(x)) / d(params)` into `grads`.
    pub fn accumulate_param_grad(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.data.len());
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let v = self.layers[l];
            let input = &trace.acts[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grads[v.w + o * v.fan_in..v.w + (o + 1) * v.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grads[v.b + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.data[v.w..v.b];
            let mut prev = vec![0.0; v.fan_in];
            for (d, row) in delta.iter().zip(w.chunks_exact(v.fan_in)) {
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Exact gradient of `upstream . forward(x)` with respect to every parameter.
    pub fn backward_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.spec.output_dim {
            return invalid(format!(
                "upstream has length {}, network output is {}",
                upstream.len(),
                self.spec.output_dim
            ));
        }
        let trace = self.trace(x)?;
        let mut grads = vec![0.0; self.data.len()];
        self.accumulate_param_grad(&trace, upstream, &mut grads);
        Ok(grads)
    }

    /// Jacobian of the output with respect to the input (`output_dim x input_dim`).
    pub fn input_gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let trace = self.trace(x)?;
        Ok(self.input_gradient_from_trace(&trace))
    }

    pub fn input_gradient_from_trace(&self, trace: &Trace) -> DMatrix<f64> {
        let out_dim = self.spec.output_dim;
        // Rows of the running product d(out)/d(act_l), one per output.
        let mut rows: Vec<Vec<f64>> = (0..out_dim)
            .map(|i| {
                let mut r = vec![0.0; out_dim];
                r[i] = 1.0;
                r
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            let v = self.layers[l];
            let w = &self.data[v.w..v.b];
            for r in rows.iter_mut() {
                let mut next = vec![0.0; v.fan_in];
                for (coef, wrow) in r.iter().zip(w.chunks_exact(v.fan_in)) {
                    for (n, wi) in next.iter_mut().zip(wrow) {
                        *n += coef * wi;
                    }
                }
                if l > 0 {
                    for (n, a) in next.iter_mut().zip(&trace.acts[l]) {
                        *n *= 1.0 - a * a;
                    }
                }
                *r = next;
            }
        }
        DMatrix::from_fn(out_dim, self.spec.input_dim, |i, j| rows[i][j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk model format: the spec plus row-major plain number arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub spec: MlpSpec,
    pub layers: Vec<LayerFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerFile {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&MlpParams> for ModelFile {
    fn from(p: &MlpParams) -> Self {
        let layers = p
            .layers
            .iter()
            .enumerate()
            .map(|(l, v)| LayerFile {
                rows: v.fan_out,
                cols: v.fan_in,
                weights: p.weights(l).to_vec(),
                bias: p.bias(l).to_vec(),
            })
            .collect();
        Self {
            spec: p.spec.clone(),
            layers,
        }
    }
}

impl TryFrom<ModelFile> for MlpParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        f.spec.check_dims()?;
        let shapes = f.spec.layer_shapes();
        if shapes.len() != f.layers.len() {
            return invalid("layer count does not match the spec");
        }
        let mut data = Vec::with_capacity(f.spec.num_params());
        for ((fan_in, fan_out), layer) in shapes.into_iter().zip(f.layers) {
            if layer.rows != fan_out
                || layer.cols != fan_in
                || layer.weights.len() != fan_in * fan_out
                || layer.bias.len() != fan_out
            {
                return invalid("layer shape does not match the spec");
            }
            data.extend(layer.weights);
            data.extend(layer.bias);
        }
        MlpParams::from_flat(f.spec, data)
    }
}

/// Adam moments and hyperparameters over a flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &MlpParams, lr: f64) -> Self {
        Self::new(params.data.len(), lr)
    }

    /// One bias-corrected Adam update, in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return invalid("parameter, gradient and moment shapes differ");
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::TrainingDivergence {
                step: self.step as usize,
                last_finite_loss: None,
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional Adam step: returns the updated parameters and state.
pub fn adam_step(
    params: &MlpParams,
    grads: &[f64],
    state: &OptimizerState,
) -> Result<(MlpParams, OptimizerState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p.data, grads)?;
    Ok((p, s))
}
