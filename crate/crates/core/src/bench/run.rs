//! End-to-end runs: train (or load) a policy, wrap it, roll out, score.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{filtered_field, CbfConfig, ProjectionConfig, SafetyFilter};
use crate::error::{Error, Result};
use crate::eval::{score, MetricReport, Rollout, MASK_RULE};
use crate::exec::{self, ExecMode};
use crate::field::VelocityField;
use crate::geometry::{min_distance_over, Bounds, FieldHandle, PointN, Shape};
use crate::metric::{default_kappa, shaped_field, ConstraintSpec, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_MARGIN};
use crate::policy::{
    integrate_stream, train_policy, Demonstration, IntegratorConfig, PolicyConfig,
    StreamingPolicy,
};
use crate::sdf_learn::{train_sdf, LearnedField, SdfTrainConfig};

use super::tasks::{generate_task, TaskFamily, TaskSpec};

/// The four compared methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Projection,
    Cbf,
    Casf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Projection, Method::Cbf, Method::Casf];

    pub fn label(self) -> &'static str {
        match self {
            Method::None => "SFP",
            Method::Projection => "Hard-Projection",
            Method::Cbf => "CBF",
            Method::Casf => "CASF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "sfp" => Ok(Method::None),
            "projection" | "hard-projection" => Ok(Method::Projection),
            "cbf" => Ok(Method::Cbf),
            "casf" => Ok(Method::Casf),
            _ => Err(Error::InvalidInput(format!("unknown method '{s}'"))),
        }
    }
}

/// Metric-shaping parameters shared by every obstacle of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    pub alpha: f64,
    pub beta: f64,
    /// `None` picks the default influence radius for the task's workspace.
    pub kappa: Option<f64>,
    pub margin: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            kappa: None,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl ShapingConfig {
    pub fn specs(&self, fields: &[FieldHandle], bounds: &Bounds) -> Result<Vec<ConstraintSpec>> {
        let kappa = match self.kappa {
            Some(k) => k,
            None => default_kappa(bounds)?,
        };
        fields
            .iter()
            .map(|f| ConstraintSpec::new(f.clone(), self.alpha, self.beta, kappa, self.margin))
            .collect()
    }
}

/// Where shaping and filtering read obstacle distances from. Scoring always
/// uses the analytic shapes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdfSource {
    #[default]
    Analytic,
    Learned,
}

/// Full benchmark configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub tasks: Vec<String>,
    pub methods: Vec<Method>,
    pub rollouts: usize,
    pub policy: PolicyConfig,
    pub integrator: IntegratorConfig,
    pub shaping: ShapingConfig,
    pub projection: ProjectionConfig,
    pub cbf: CbfConfig,
    pub sdf_source: SdfSource,
    pub sdf: SdfTrainConfig,
    pub mask_margin: f64,
    pub cache_dir: Option<PathBuf>,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: TaskFamily::ALL.iter().map(|f| f.name().to_string()).collect(),
            methods: Method::ALL.to_vec(),
            rollouts: 20,
            policy: PolicyConfig::default(),
            integrator: IntegratorConfig::default(),
            shaping: ShapingConfig::default(),
            projection: ProjectionConfig::default(),
            cbf: CbfConfig::default(),
            sdf_source: SdfSource::Analytic,
            sdf: SdfTrainConfig::default(),
            mask_margin: DEFAULT_MARGIN,
            cache_dir: None,
            parallel: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.policy.validate().map_err(cfg_err)?;
        self.projection.validate().map_err(cfg_err)?;
        self.cbf.validate().map_err(cfg_err)?;
        self.sdf.validate().map_err(cfg_err)?;
        if self.rollouts == 0 {
            return Err(Error::Config("rollouts must be positive".into()));
        }
        if self.integrator.steps == 0 {
            return Err(Error::Config("integrator steps must be positive".into()));
        }
        if !(self.mask_margin >= 0.0) {
            return Err(Error::Config("mask_margin must be non-negative".into()));
        }
        for t in &self.tasks {
            t.parse::<TaskFamily>().map_err(cfg_err)?;
        }
        let probe: Vec<FieldHandle> = vec![Arc::new(Shape::circle([0.0, 0.0], 1.0)?)];
        self.shaping
            .specs(&probe, &Bounds::unit_square())
            .map_err(cfg_err)?;
        Ok(())
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    /// The policy configuration actually trained, with the run seed applied.
    pub fn effective_policy(&self) -> PolicyConfig {
        PolicyConfig {
            seed: self.seed,
            ..self.policy.clone()
        }
    }
}

/// Content hash of anything serializable.
fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct PolicyKey<'a> {
    demos: Vec<(&'a [f64], Vec<&'a [f64]>)>,
    config: &'a PolicyConfig,
}

/// Key for a trained policy: hash of the demonstrations and configuration
/// (which carries the seed).
pub fn policy_cache_key(demos: &[Demonstration], cfg: &PolicyConfig) -> Result<String> {
    content_hash(&PolicyKey {
        demos: demos
            .iter()
            .map(|d| (d.times(), d.waypoints().iter().map(|w| w.as_slice()).collect()))
            .collect(),
        config: cfg,
    })
}

/// In-memory and optional on-disk store of trained models.
#[derive(Debug, Default)]
pub struct ModelCache {
    dir: Option<PathBuf>,
    policies: Mutex<HashMap<String, Arc<StreamingPolicy>>>,
    sdfs: Mutex<HashMap<String, Arc<LearnedField>>>,
}

impl ModelCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            ..Default::default()
        }
    }

    fn path(&self, prefix: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{prefix}-{key}.json")))
    }

    pub fn policy(&self, demos: &[Demonstration], cfg: &PolicyConfig) -> Result<Arc<StreamingPolicy>> {
        let key = policy_cache_key(demos, cfg)?;
        if let Some(p) = self.policies.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let path = self.path("policy", &key);
        let policy = match &path {
            Some(p) if p.exists() => StreamingPolicy::load(p)?,
            _ => {
                let (policy, _) = train_policy(demos, cfg)?;
                if let Some(p) = &path {
                    std::fs::create_dir_all(p.parent().expect("cache dir"))?;
                    policy.save(p)?;
                }
                policy
            }
        };
        let policy = Arc::new(policy);
        self.policies
            .lock()
            .expect("cache lock")
            .insert(key, policy.clone());
        Ok(policy)
    }

    pub fn sdf(&self, shape: &Shape, cfg: &SdfTrainConfig) -> Result<Arc<LearnedField>> {
        let key = content_hash(&(shape, cfg))?;
        if let Some(f) = self.sdfs.lock().expect("cache lock").get(&key) {
            return Ok(f.clone());
        }
        let path = self.path("sdf", &key);
        let field = match &path {
            Some(p) if p.exists() => LearnedField::load(p)?,
            _ => {
                let field = train_sdf(shape, cfg)?;
                if let Some(p) = &path {
                    std::fs::create_dir_all(p.parent().expect("cache dir"))?;
                    field.save(p)?;
                }
                field
            }
        };
        let field = Arc::new(field);
        self.sdfs.lock().expect("cache lock").insert(key, field.clone());
        Ok(field)
    }
}

/// Independent RNG for rollout `index`: the same index always sees the same
/// initial noise, whichever method is being evaluated.
pub fn rollout_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Distance fields used for shaping and filtering.
pub fn shaping_fields(task: &TaskSpec, cfg: &BenchConfig, cache: &ModelCache) -> Result<Vec<FieldHandle>> {
    match cfg.sdf_source {
        SdfSource::Analytic => Ok(task.obstacle_fields()),
        SdfSource::Learned => task
            .obstacles
            .iter()
            .map(|s| Ok(cache.sdf(s, &cfg.sdf)? as FieldHandle))
            .collect(),
    }
}

/// Wraps `base` according to `method`.
pub fn method_field<'a, F: VelocityField + 'a>(
    method: Method,
    base: F,
    fields: &[FieldHandle],
    bounds: &Bounds,
    cfg: &BenchConfig,
) -> Result<Box<dyn VelocityField + 'a>> {
    Ok(match method {
        Method::None => Box::new(base),
        Method::Projection => Box::new(filtered_field(
            SafetyFilter::Projection(cfg.projection.clone()),
            fields.to_vec(),
            base,
        )?),
        Method::Cbf => Box::new(filtered_field(
            SafetyFilter::Cbf(cfg.cbf.clone()),
            fields.to_vec(),
            base,
        )?),
        Method::Casf => Box::new(shaped_field(cfg.shaping.specs(fields, bounds)?, base)),
    })
}

/// One `(task, method)` cell of the benchmark grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub rollouts: usize,
    /// Mean over rollouts; `None` when the cell failed.
    pub mean: Option<MetricReport>,
    pub per_rollout: Vec<MetricReport>,
    pub error: Option<String>,
}

/// Rollouts of one method plus their unshaped references.
#[derive(Clone, Debug)]
pub struct CellRollouts {
    pub shaped: Vec<Rollout>,
    pub unshaped: Vec<Rollout>,
}

const MAX_START_DRAWS: usize = 1000;

/// Draws `a(0) ~ N(a_prev, sigma0^2 I)`, redrawing while `is_free` rejects
/// the draw.
pub fn sample_free_start<R, P>(
    a_prev: &PointN,
    sigma0: f64,
    is_free: P,
    rng: &mut R,
) -> Result<PointN>
where
    R: Rng + ?Sized,
    P: Fn(&PointN) -> Result<bool>,
{
    for _ in 0..MAX_START_DRAWS {
        let a = a_prev.map(|x| x + sigma0 * rng.sample::<f64, _>(StandardNormal));
        if is_free(&a)? {
            return Ok(a);
        }
    }
    Err(Error::Config(format!(
        "no collision-free start state in {MAX_START_DRAWS} draws"
    )))
}

/// True when `a` lies outside every field's interior.
pub fn outside_all(fields: &[FieldHandle], a: &PointN) -> Result<bool> {
    if fields.is_empty() {
        return Ok(true);
    }
    Ok(min_distance_over(fields, a)?.1.value >= 0.0)
}

/// Integrates `cfg.rollouts` paired (method, unshaped) rollouts.
pub fn cell_rollouts(
    task: &TaskSpec,
    method: Method,
    policy: &Arc<StreamingPolicy>,
    fields: &[FieldHandle],
    cfg: &BenchConfig,
) -> Result<CellRollouts> {
    let a_prev = task.demos[0].start().clone();
    let base = policy.conditioned(a_prev.clone());
    let field = method_field(method, base.clone(), fields, &task.bounds, cfg)?;
    let sigma0 = policy.config.sigma0;
    let steps = cfg.integrator.steps;
    let integ = cfg.integrator.method;
    let obstacles = task.obstacle_fields();
    let mut out = CellRollouts {
        shaped: Vec::with_capacity(cfg.rollouts),
        unshaped: Vec::with_capacity(cfg.rollouts),
    };
    for i in 0..cfg.rollouts {
        let mut rng = rollout_rng(cfg.seed, i);
        let a0 = sample_free_start(&a_prev, sigma0, |a| outside_all(&obstacles, a), &mut rng)?;
        let unshaped = integrate_stream(&base, &a0, 0.0, steps, integ, &mut rng)?;
        if method != Method::None {
            out.shaped
                .push(integrate_stream(&*field, &a0, 0.0, steps, integ, &mut rng)?);
        }
        out.unshaped.push(unshaped);
    }
    if method == Method::None {
        out.shaped = out.unshaped.clone();
    }
    Ok(out)
}

fn score_cell(
    task: &TaskSpec,
    method: Method,
    policy: &Arc<StreamingPolicy>,
    fields: &[FieldHandle],
    cfg: &BenchConfig,
) -> Result<Vec<MetricReport>> {
    let runs = cell_rollouts(task, method, policy, fields, cfg)?;
    let scoring = task.obstacle_fields();
    runs.shaped
        .iter()
        .zip(&runs.unshaped)
        .map(|(s, u)| {
            let reference = (method != Method::None).then_some(u);
            score(s, reference, &scoring, cfg.mask_margin)
        })
        .collect()
}

/// Runs one cell with an already trained policy. Failures are recorded in
/// the cell rather than returned.
pub fn run_experiment(
    task: &TaskSpec,
    method: Method,
    policy: &Arc<StreamingPolicy>,
    cfg: &BenchConfig,
    cache: &ModelCache,
) -> CellReport {
    let result = shaping_fields(task, cfg, cache)
        .and_then(|fields| score_cell(task, method, policy, &fields, cfg));
    let (mean, per_rollout, error) = match result {
        Ok(reports) => (MetricReport::mean(&reports), reports, None),
        Err(e) => (None, Vec::new(), Some(e.to_string())),
    };
    CellReport {
        task: task.name.clone(),
        method,
        seed: cfg.seed,
        rollouts: cfg.rollouts,
        mean,
        per_rollout,
        error,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_s: f64,
    pub training_s: f64,
    pub rollouts_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub task: String,
    pub cache_key: String,
    pub error: Option<String>,
}

/// The full grid with its configuration echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub mask_rule: String,
    pub policies: Vec<PolicySummary>,
    pub cells: Vec<CellReport>,
    pub timings: Timings,
}

impl BenchReport {
    pub fn empty(config: BenchConfig) -> Self {
        Self {
            config,
            mask_rule: MASK_RULE.to_string(),
            policies: Vec::new(),
            cells: Vec::new(),
            timings: Timings::default(),
        }
    }

    pub fn cell(&self, task: &str, method: Method) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.task == task && c.method == method)
    }

    /// The report with wall-clock timings zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn has_errors(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
            || self.policies.iter().any(|p| p.error.is_some())
    }
}

/// Generates every configured task, trains one policy per task, then runs
/// every `(task, method)` cell. Only configuration problems are returned as
/// errors; run-time failures land in the report.
pub fn run_bench(cfg: &BenchConfig, cache: &ModelCache) -> Result<BenchReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mode = cfg.exec_mode();
    let tasks: Vec<TaskSpec> = cfg
        .tasks
        .iter()
        .map(|t| generate_task(t, cfg.seed))
        .collect::<Result<_>>()?;
    let policy_cfg = cfg.effective_policy();

    let trained: Vec<(Result<Arc<StreamingPolicy>>, String)> = exec::map(mode, tasks.iter().collect(), |task| {
        let key = policy_cache_key(&task.demos, &policy_cfg).unwrap_or_default();
        (cache.policy(&task.demos, &policy_cfg), key)
    });
    if cfg.sdf_source == SdfSource::Learned {
        let _ = exec::map(mode, tasks.iter().collect(), |task| shaping_fields(task, cfg, cache).map(|_| ()));
    }
    let training_s = start.elapsed().as_secs_f64();

    let mut report = BenchReport::empty(cfg.clone());
    let mut jobs = Vec::new();
    for (task, (policy, key)) in tasks.iter().zip(&trained) {
        report.policies.push(PolicySummary {
            task: task.name.clone(),
            cache_key: key.clone(),
            error: policy.as_ref().err().map(|e| e.to_string()),
        });
        for &method in &cfg.methods {
            jobs.push((task, method, policy));
        }
    }
    report.cells = exec::map(mode, jobs, |(task, method, policy)| match policy {
        Ok(p) => run_experiment(task, method, p, cfg, cache),
        Err(e) => CellReport {
            task: task.name.clone(),
            method,
            seed: cfg.seed,
            rollouts: cfg.rollouts,
            mean: None,
            per_rollout: Vec::new(),
            error: Some(format!("policy training failed: {e}")),
        },
    });
    let total_s = start.elapsed().as_secs_f64();
    report.timings = Timings {
        total_s,
        training_s,
        rollouts_s: total_s - training_s,
    };
    Ok(report)
}
