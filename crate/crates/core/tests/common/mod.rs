//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use casf::geometry::PointN;
use casf::nn::MlpParams;
use nalgebra::DVector;
use rand::Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between the analytic parameter gradient of
/// `upstream . mlp(x)` and central differences over every parameter.
pub fn mlp_param_grad_error(params: &MlpParams, x: &[f64], upstream: &[f64]) -> f64 {
    let analytic = params.backward_params(x, upstream).unwrap();
    let numeric = fd_gradient(
        |theta| {
            let p = MlpParams::from_flat(params.spec().clone(), theta.to_vec()).unwrap();
            let y = p.forward(x).unwrap();
            y.iter().zip(upstream).map(|(a, b)| a * b).sum()
        },
        params.as_slice(),
        1e-6,
    );
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

/// Worst relative error of the input Jacobian against central differences.
pub fn mlp_input_grad_error(params: &MlpParams, x: &[f64]) -> f64 {
    let jac = params.input_gradient(x).unwrap();
    let mut worst = 0.0_f64;
    for o in 0..jac.nrows() {
        let numeric = fd_gradient(|xx| params.forward(xx).unwrap()[o], x, 1e-6);
        for (k, n) in numeric.iter().enumerate() {
            worst = worst.max(rel_err(jac[(o, k)], *n));
        }
    }
    worst
}

/// `argmin |u - v|^2` subject to `g . u + gamma d >= 0` in 2D, found without
/// the closed form: keep `v` if feasible, otherwise minimize over the
/// boundary line by golden-section search on its parameter.
pub fn cbf_qp_oracle(v: &[f64; 2], g: &[f64; 2], d: f64, gamma: f64) -> [f64; 2] {
    let h = g[0] * v[0] + g[1] * v[1] + gamma * d;
    if h >= 0.0 {
        return *v;
    }
    let gg = g[0] * g[0] + g[1] * g[1];
    // Any point on the boundary g.u = -gamma d, plus the line direction.
    let base = [-gamma * d * g[0] / gg, -gamma * d * g[1] / gg];
    let dir = [-g[1], g[0]];
    let cost = |s: f64| {
        let u = [base[0] + s * dir[0], base[1] + s * dir[1]];
        (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)
    };
    let span = 10.0 * (1.0 + v[0].abs() + v[1].abs() + base[0].abs() + base[1].abs()) / gg.sqrt();
    let (mut lo, mut hi) = (-span, span);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if cost(m1) <= cost(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let s = 0.5 * (lo + hi);
    [base[0] + s * dir[0], base[1] + s * dir[1]]
}

/// Discrete Fréchet distance by enumerating every monotone coupling.
pub fn frechet_bruteforce(p: &[PointN], q: &[PointN]) -> f64 {
    fn walk(p: &[PointN], q: &[PointN], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max((&p[i] - &q[j]).norm());
        if i + 1 == p.len() && j + 1 == q.len() {
            *best = best.min(worst);
            return;
        }
        if i + 1 < p.len() {
            walk(p, q, i + 1, j, worst, best);
        }
        if j + 1 < q.len() {
            walk(p, q, i, j + 1, worst, best);
        }
        if i + 1 < p.len() && j + 1 < q.len() {
            walk(p, q, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(p, q, 0, 0, 0.0, &mut best);
    best
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<PointN> {
    (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}
