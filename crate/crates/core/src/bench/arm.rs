//! Whole-arm avoidance scenario: a joint-space streaming policy shaped by
//! body-point constraints pulled back through the arm's kinematics.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::eval::Rollout;
use crate::exec::{self, ExecMode};
use crate::geometry::{FieldHandle, Shape};
use crate::kinematics::{
    body_constraints, fk_point, joint_limit_fields, min_body_distance, sample_body_points,
    shaped_joint_field, ArmModel,
};
use crate::metric::{kappa_for_radius, ConstraintSpec};
use crate::policy::{integrate_stream, Demonstration, IntegratorConfig, PolicyConfig};

use super::run::{rollout_rng, sample_free_start, ModelCache};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmScenarioConfig {
    pub arm: ArmModel,
    pub q_start: Vec<f64>,
    pub q_goal: Vec<f64>,
    /// Mid-path joint offset, blended in with `sin^2(pi s)`.
    pub q_via: Vec<f64>,
    /// Obstacle circle center and radius before link-width inflation.
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    pub link_half_width: f64,
    pub points_per_link: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Influence radius beyond the margin (where `w = e^{-1}`).
    pub influence_radius: f64,
    pub margin: f64,
    pub waypoints: usize,
    pub policy: PolicyConfig,
    pub integrator: IntegratorConfig,
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for ArmScenarioConfig {
    fn default() -> Self {
        Self {
            arm: ArmModel {
                link_lengths: vec![0.5, 0.4, 0.3],
                base: [0.0, 0.0],
                joint_limits: None,
            },
            q_start: vec![0.0, 0.8, 0.6],
            q_goal: vec![0.0, -0.4, -0.6],
            q_via: vec![0.6, 0.0, 0.0],
            obstacle_center: [0.27, 0.1305],
            obstacle_radius: 0.04,
            link_half_width: 0.02,
            points_per_link: 15,
            alpha: 300.0,
            beta: 0.0,
            influence_radius: 0.05,
            margin: 0.02,
            waypoints: 200,
            policy: PolicyConfig {
                sigma0: 0.2,
                k_gain: 1.0,
                ..PolicyConfig::default()
            },
            integrator: IntegratorConfig::default(),
            rollouts: 20,
            seed: 0,
        }
    }
}

impl ArmScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        let n = self.arm.num_joints();
        if self.q_start.len() != n || self.q_goal.len() != n || self.q_via.len() != n {
            return invalid("start, goal and via offset need one angle per joint");
        }
        if self.waypoints < 2 || self.rollouts == 0 || self.points_per_link == 0 {
            return invalid("need >= 2 waypoints, >= 1 rollout and >= 1 body point per link");
        }
        self.policy.validate()
    }

    /// The obstacle grown by the link half-width, so centerline points can
    /// stand in for the link surface.
    pub fn inflated_obstacle(&self) -> Result<Shape> {
        Shape::circle(self.obstacle_center, self.obstacle_radius + self.link_half_width)
    }
}

/// Smoothstep-timed line from start to goal in joint space, bent by the via
/// offset.
pub fn joint_demo(cfg: &ArmScenarioConfig) -> Result<Demonstration> {
    let qs = DVector::from_row_slice(&cfg.q_start);
    let qg = DVector::from_row_slice(&cfg.q_goal);
    let via = DVector::from_row_slice(&cfg.q_via);
    let pts = (0..cfg.waypoints)
        .map(|i| {
            let s = i as f64 / (cfg.waypoints - 1) as f64;
            let u = s * s * (3.0 - 2.0 * s);
            let bump = (std::f64::consts::PI * s).sin().powi(2);
            &qs + (&qg - &qs) * u + &via * bump
        })
        .collect();
    Demonstration::uniform(pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmScenarioReport {
    /// Smallest body-point distance over all unshaped rollouts and steps.
    pub unshaped_min_distance: f64,
    pub shaped_min_distance: f64,
    /// Mean end-effector distance to the demonstrated goal.
    pub baseline_goal_error: f64,
    pub shaped_goal_error: f64,
    pub rollouts: usize,
}

impl ArmScenarioReport {
    pub fn avoids(&self) -> bool {
        self.shaped_min_distance >= 0.0
    }
}

/// Paired unshaped and shaped joint-space rollouts for the scenario.
pub struct ArmRollouts {
    pub unshaped: Vec<Rollout>,
    pub shaped: Vec<Rollout>,
}

pub fn arm_rollouts(cfg: &ArmScenarioConfig, cache: &ModelCache, mode: ExecMode) -> Result<ArmRollouts> {
    cfg.validate()?;
    let demo = joint_demo(cfg)?;
    let policy_cfg = PolicyConfig {
        seed: cfg.seed,
        ..cfg.policy.clone()
    };
    let policy = cache.policy(std::slice::from_ref(&demo), &policy_cfg)?;
    let q0 = demo.start().clone();
    let base = policy.conditioned(q0.clone());

    let obstacle: FieldHandle = Arc::new(cfg.inflated_obstacle()?);
    let obstacle_only = [obstacle.clone()];
    let kappa = kappa_for_radius(cfg.influence_radius)?;
    let workspace = [ConstraintSpec::new(obstacle, cfg.alpha, cfg.beta, kappa, cfg.margin)?];
    let body = sample_body_points(&cfg.arm, cfg.points_per_link)?;
    let joint_specs = joint_limit_fields(&cfg.arm)?
        .into_iter()
        .map(|f| ConstraintSpec::new(f, cfg.alpha, cfg.beta, kappa, cfg.margin))
        .collect::<Result<Vec<_>>>()?;
    let shaped = shaped_joint_field(
        cfg.arm.clone(),
        body_constraints(&body, &workspace),
        joint_specs,
        base.clone(),
    )?;

    let sigma0 = policy.config.sigma0;
    let (steps, method) = (cfg.integrator.steps, cfg.integrator.method);
    let pairs = exec::map_range(mode, cfg.rollouts, |i| -> Result<(Rollout, Rollout)> {
        let mut rng = rollout_rng(cfg.seed, i);
        let start = sample_free_start(
            &q0,
            sigma0,
            |q| Ok(min_body_distance(&cfg.arm, &body, &obstacle_only, q)? >= 0.0),
            &mut rng,
        )?;
        let u = integrate_stream(&base, &start, 0.0, steps, method, &mut rng)?;
        let s = integrate_stream(&shaped, &start, 0.0, steps, method, &mut rng)?;
        Ok((u, s))
    });
    let mut out = ArmRollouts {
        unshaped: Vec::new(),
        shaped: Vec::new(),
    };
    for pair in pairs {
        let (u, s) = pair?;
        out.unshaped.push(u);
        out.shaped.push(s);
    }
    Ok(out)
}

/// Runs the scenario and summarizes clearance and goal accuracy.
pub fn run_arm_scenario(cfg: &ArmScenarioConfig, cache: &ModelCache, mode: ExecMode) -> Result<ArmScenarioReport> {
    let runs = arm_rollouts(cfg, cache, mode)?;
    let obstacle: Vec<FieldHandle> = vec![Arc::new(cfg.inflated_obstacle()?)];
    let body = sample_body_points(&cfg.arm, cfg.points_per_link)?;
    let tip = cfg.arm.tip();
    let goal = fk_point(&cfg.arm, &tip, &DVector::from_row_slice(&cfg.q_goal))?;

    let min_dist = |rs: &[Rollout]| -> Result<f64> {
        let mut best = f64::INFINITY;
        for r in rs {
            for q in &r.states {
                best = best.min(min_body_distance(&cfg.arm, &body, &obstacle, q)?);
            }
        }
        Ok(best)
    };
    let goal_err = |rs: &[Rollout]| -> Result<f64> {
        let mut total = 0.0;
        for r in rs {
            total += (fk_point(&cfg.arm, &tip, r.last())? - &goal).norm();
        }
        Ok(total / rs.len() as f64)
    };
    Ok(ArmScenarioReport {
        unshaped_min_distance: min_dist(&runs.unshaped)?,
        shaped_min_distance: min_dist(&runs.shaped)?,
        baseline_goal_error: goal_err(&runs.unshaped)?,
        shaped_goal_error: goal_err(&runs.shaped)?,
        rollouts: cfg.rollouts,
    })
}
