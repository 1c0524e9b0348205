//! Streaming flow policies.
//!
//! Training regresses a history-conditioned velocity network onto the
//! stabilizing conditional flow `xi'(t) - k (a - xi(t))` around each
//! demonstration, sampled from the Gaussian tube that flow induces. At run
//! time the learned field is integrated directly in action space, so flow
//! time doubles as execution time.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::Rollout;
use crate::field::VelocityField;
use crate::geometry::PointN;
use crate::nn::{MlpParams, MlpSpec, ModelFile, OptimizerState, DEFAULT_HIDDEN};

/// A demonstration on unit flow time with piecewise-linear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    times: Vec<f64>,
    waypoints: Vec<PointN>,
    /// Slope of each segment.
    slopes: Vec<DVector<f64>>,
}

impl Demonstration {
    /// Times must be strictly increasing from exactly 0 to exactly 1.
    pub fn new(times: Vec<f64>, waypoints: Vec<PointN>) -> Result<Self> {
        if waypoints.len() < 2 || times.len() != waypoints.len() {
            return invalid("a demonstration needs at least two waypoints, one time each");
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return invalid("demonstration times must start at 0 and end at 1");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("demonstration times must be strictly increasing");
        }
        let dim = waypoints[0].len();
        if dim == 0 || waypoints.iter().any(|w| w.len() != dim || !w.iter().all(|x| x.is_finite())) {
            return invalid("waypoints must be finite and share one non-zero dimension");
        }
        let slopes = (0..waypoints.len() - 1)
            .map(|i| (&waypoints[i + 1] - &waypoints[i]) / (times[i + 1] - times[i]))
            .collect();
        Ok(Self {
            times,
            waypoints,
            slopes,
        })
    }

    /// Rescales arbitrary ascending sample times onto `[0, 1]`.
    pub fn from_samples(raw_times: &[f64], waypoints: Vec<PointN>) -> Result<Self> {
        if raw_times.len() < 2 {
            return invalid("a demonstration needs at least two samples");
        }
        let t0 = raw_times[0];
        let span = raw_times[raw_times.len() - 1] - t0;
        if !(span > 0.0) {
            return invalid("demonstration times must increase");
        }
        let mut times: Vec<f64> = raw_times.iter().map(|t| (t - t0) / span).collect();
        let last = times.len() - 1;
        times[0] = 0.0;
        times[last] = 1.0;
        Self::new(times, waypoints)
    }

    /// Uniformly timed demonstration through `waypoints`.
    pub fn uniform(waypoints: Vec<PointN>) -> Result<Self> {
        let n = waypoints.len();
        if n < 2 {
            return invalid("a demonstration needs at least two waypoints");
        }
        let times = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        Self::new(times, waypoints)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn waypoints(&self) -> &[PointN] {
        &self.waypoints
    }

    pub fn dim(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn start(&self) -> &PointN {
        &self.waypoints[0]
    }

    pub fn end(&self) -> &PointN {
        self.waypoints.last().expect("at least two waypoints")
    }
}

/// Position and velocity of the demonstration at flow time `t`.
///
/// At a knot the velocity is the right segment's slope, except at `t = 1`.
pub fn interpolate_demo(demo: &Demonstration, t: f64) -> Result<(PointN, DVector<f64>)> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("flow time {t} is outside [0, 1]"));
    }
    let n = demo.times.len();
    let seg = demo
        .times
        .partition_point(|&x| x <= t)
        .saturating_sub(1)
        .min(n - 2);
    let slope = &demo.slopes[seg];
    let pos = &demo.waypoints[seg] + slope * (t - demo.times[seg]);
    Ok((pos, slope.clone()))
}

/// The stabilizing conditional flow `xi'(t) - k (a - xi(t))`.
pub fn conditional_target(
    demo: &Demonstration,
    t: f64,
    a: &PointN,
    k: f64,
) -> Result<DVector<f64>> {
    let (pos, vel) = interpolate_demo(demo, t)?;
    if a.len() != pos.len() {
        return invalid("action dimension differs from the demonstration");
    }
    Ok(vel - (a - pos) * k)
}

/// Width of the tube at flow time `t`: deviations decay as `e^{-kt}`.
pub fn tube_std(sigma0: f64, k: f64, t: f64) -> f64 {
    sigma0 * (-k * t).exp()
}

/// One draw from the tube marginal `N(xi(t), (sigma0 e^{-kt})^2 I)`.
pub fn sample_tube<R: Rng + ?Sized>(
    demo: &Demonstration,
    t: f64,
    sigma0: f64,
    k: f64,
    rng: &mut R,
) -> Result<PointN> {
    let (pos, _) = interpolate_demo(demo, t)?;
    let std = tube_std(sigma0, k, t);
    if std == 0.0 {
        return Ok(pos);
    }
    Ok(pos.map(|x| x + std * rng.sample::<f64, _>(StandardNormal)))
}

/// What the history input `h` holds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// The episode's start state (`a_prev` at the first step).
    #[default]
    ConditionOnAPrev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub k_gain: f64,
    pub sigma0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`; decays geometrically.
    pub lr_final_fraction: f64,
    pub hidden_dims: Vec<usize>,
    pub history_mode: HistoryMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            k_gain: 5.0,
            sigma0: 0.02,
            epochs: 2000,
            batch_size: 256,
            seed: 0,
            lr: 1e-3,
            lr_final_fraction: 1.0,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            history_mode: HistoryMode::ConditionOnAPrev,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_gain > 0.0) || !(self.sigma0 > 0.0) {
            return invalid("need k_gain > 0 and sigma0 > 0");
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return invalid("need batch_size > 0 and lr > 0");
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return invalid("lr_final_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A trained velocity network `v(a, t | h)`.
#[derive(Clone, Debug)]
pub struct StreamingPolicy {
    pub net: MlpParams,
    pub config: PolicyConfig,
    action_dim: usize,
}

impl StreamingPolicy {
    pub fn new(net: MlpParams, config: PolicyConfig) -> Result<Self> {
        let spec = net.spec();
        let action_dim = spec.output_dim;
        if spec.input_dim != 2 * action_dim + 1 {
            return invalid("policy network input must be (a, t, h)");
        }
        Ok(Self {
            net,
            config,
            action_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, a: &PointN, t: f64, h: &PointN) -> Result<Vec<f64>> {
        if a.len() != self.action_dim || h.len() != self.action_dim {
            return invalid("action/history dimension does not match the policy");
        }
        let mut x = Vec::with_capacity(2 * self.action_dim + 1);
        x.extend(a.iter());
        x.push(t);
        x.extend(h.iter());
        Ok(x)
    }

    pub fn velocity(&self, a: &PointN, t: f64, h: &PointN) -> Result<DVector<f64>> {
        let out = self.net.forward(&self.input(a, t, h)?)?;
        Ok(DVector::from_vec(out))
    }

    /// The policy with its history fixed, ready to integrate.
    pub fn conditioned(self: &Arc<Self>, history: PointN) -> PolicyField {
        PolicyField {
            policy: Arc::clone(self),
            history,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PolicyFile {
            config: self.config.clone(),
            model: ModelFile::from(&self.net),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PolicyFile = serde_json::from_str(s)?;
        Self::new(f.model.try_into()?, f.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolicyFile {
    config: PolicyConfig,
    model: ModelFile,
}

/// A policy bound to one history.
#[derive(Clone, Debug)]
pub struct PolicyField {
    policy: Arc<StreamingPolicy>,
    history: PointN,
}

impl VelocityField for PolicyField {
    fn dim(&self) -> usize {
        self.policy.action_dim
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        self.policy.velocity(a, t, &self.history)
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Conditional flow matching over the given demonstrations.
///
/// Each epoch draws one fresh batch of `(demo, t ~ U[0,1], a ~ tube)`
/// triples and takes one Adam step on the mean squared velocity error.
pub fn train_policy(
    demos: &[Demonstration],
    cfg: &PolicyConfig,
) -> Result<(StreamingPolicy, TrainingLog)> {
    cfg.validate()?;
    let Some(first) = demos.first() else {
        return invalid("training needs at least one demonstration");
    };
    let dim = first.dim();
    if demos.iter().any(|d| d.dim() != dim) {
        return invalid("all demonstrations must share a dimension");
    }

    let spec = MlpSpec::new(2 * dim + 1, cfg.hidden_dims.clone(), dim)?;
    let mut net = MlpParams::init(spec, cfg.seed);
    let mut opt = OptimizerState::for_params(&net, cfg.lr);
    let decay = if cfg.epochs > 1 {
        cfg.lr_final_fraction.powf(1.0 / (cfg.epochs - 1) as f64)
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let scale = 1.0 / cfg.batch_size as f64;
    let mut log = TrainingLog::default();
    let mut grads = vec![0.0; net.as_slice().len()];
    let mut input = vec![0.0; 2 * dim + 1];

    for epoch in 0..cfg.epochs {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let demo = &demos[rng.random_range(0..demos.len())];
            let t: f64 = rng.random_range(0.0..=1.0);
            let a = sample_tube(demo, t, cfg.sigma0, cfg.k_gain, &mut rng)?;
            let target = conditional_target(demo, t, &a, cfg.k_gain)?;
            input[..dim].copy_from_slice(a.as_slice());
            input[dim] = t;
            input[dim + 1..].copy_from_slice(demo.start().as_slice());
            let trace = net.trace(&input)?;
            let upstream: Vec<f64> = trace
                .output()
                .iter()
                .zip(target.iter())
                .map(|(y, v)| {
                    loss += (y - v) * (y - v);
                    2.0 * (y - v) * scale
                })
                .collect();
            net.accumulate_param_grad(&trace, &upstream, &mut grads);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence {
                step: epoch,
                last_finite_loss: log.final_loss(),
            });
        }
        opt.apply(net.as_mut_slice(), &grads)
            .map_err(|_| Error::TrainingDivergence {
                step: epoch,
                last_finite_loss: log.final_loss(),
            })?;
        opt.lr *= decay;
        log.losses.push(loss);
    }

    Ok((StreamingPolicy::new(net, cfg.clone())?, log))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    #[default]
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub steps: usize,
    pub method: IntegrationMethod,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            method: IntegrationMethod::Euler,
        }
    }
}

fn check_finite(a: &PointN, step: usize) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDivergence { step })
    }
}

/// Integrates `field` over flow time `[0, 1]` from `a(0) ~ N(a_prev, sigma0^2 I)`
/// with `steps` fixed steps, recording every state.
pub fn integrate_stream<F, R>(
    field: &F,
    a_prev: &PointN,
    sigma0: f64,
    steps: usize,
    method: IntegrationMethod,
    rng: &mut R,
) -> Result<Rollout>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if steps == 0 {
        return invalid("integration needs at least one step");
    }
    if a_prev.len() != field.dim() {
        return invalid("start state dimension does not match the field");
    }
    let dt = 1.0 / steps as f64;
    let mut a = if sigma0 > 0.0 {
        a_prev.map(|x| x + sigma0 * rng.sample::<f64, _>(StandardNormal))
    } else {
        a_prev.clone()
    };
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    states.push(a.clone());
    times.push(0.0);

    for step in 0..steps {
        let t = step as f64 * dt;
        let delta = match method {
            IntegrationMethod::Euler => field.velocity(&a, t)? * dt,
            IntegrationMethod::Rk4 => {
                let k1 = field.velocity(&a, t)?;
                let k2 = field.velocity(&(&a + &k1 * (0.5 * dt)), t + 0.5 * dt)?;
                let k3 = field.velocity(&(&a + &k2 * (0.5 * dt)), t + 0.5 * dt)?;
                let k4 = field.velocity(&(&a + &k3 * dt), t + dt)?;
                (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        a += delta;
        check_finite(&a, step + 1)?;
        field.correct_state(&mut a)?;
        check_finite(&a, step + 1)?;
        states.push(a.clone());
        times.push((step + 1) as f64 * dt);
    }
    Rollout::new(times, states, dt)
}
