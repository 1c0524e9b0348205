//! Synthetic handwriting-style task families.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::max_penetration;
use crate::field::FnField;
use crate::geometry::{Bounds, FieldHandle, PointN, Shape};
use crate::policy::{
    conditional_target, integrate_stream, Demonstration, IntegrationMethod,
};

/// Waypoints per generated demonstration.
pub const WAYPOINTS: usize = 200;
/// Obstacle radius as a fraction of the workspace diagonal.
pub const OBSTACLE_RADIUS_FRACTION: f64 = 0.08;
/// Generated curves fit inside `[PAD, 1 - PAD]^2`.
const PAD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "Line")]
    Line,
    #[serde(rename = "Khamesh")]
    Khamesh,
    #[serde(rename = "N-Shape")]
    NShape,
    #[serde(rename = "Sine")]
    Sine,
    #[serde(rename = "R-Shape")]
    RShape,
    #[serde(rename = "S-Shape")]
    SShape,
    #[serde(rename = "W-Shape")]
    WShape,
    #[serde(rename = "Worm")]
    Worm,
    #[serde(rename = "Z-Shape")]
    ZShape,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 9] = [
        TaskFamily::Line,
        TaskFamily::Khamesh,
        TaskFamily::NShape,
        TaskFamily::Sine,
        TaskFamily::RShape,
        TaskFamily::SShape,
        TaskFamily::WShape,
        TaskFamily::Worm,
        TaskFamily::ZShape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Line => "Line",
            TaskFamily::Khamesh => "Khamesh",
            TaskFamily::NShape => "N-Shape",
            TaskFamily::Sine => "Sine",
            TaskFamily::RShape => "R-Shape",
            TaskFamily::SShape => "S-Shape",
            TaskFamily::WShape => "W-Shape",
            TaskFamily::Worm => "Worm",
            TaskFamily::ZShape => "Z-Shape",
        }
    }

    /// Dense raw samples of the family's curve, before normalization.
    fn raw_curve(self) -> Vec<[f64; 2]> {
        let n = 2000;
        let param = |f: &dyn Fn(f64) -> [f64; 2]| -> Vec<[f64; 2]> {
            (0..=n).map(|i| f(i as f64 / n as f64)).collect()
        };
        match self {
            TaskFamily::Line => vec![[0.0, 0.0], [1.0, 0.6]],
            TaskFamily::Sine => param(&|s| [s, 0.3 * (2.0 * PI * s).sin()]),
            TaskFamily::Worm => param(&|s| [s, 0.12 * (3.0 * PI * s).sin() + 0.25 * s * s]),
            TaskFamily::SShape => param(&|s| [-0.35 * (2.0 * PI * s).sin(), 1.0 - s]),
            TaskFamily::Khamesh => {
                // Three-quarter loop closed by a straight tail.
                let mut pts = param(&|s| {
                    let th = PI - 1.5 * PI * s;
                    [0.5 + 0.5 * th.cos(), 0.5 + 0.5 * th.sin()]
                });
                pts.push([0.5 - 0.6, 0.0]);
                pts
            }
            TaskFamily::ZShape => {
                chaikin(&[[0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0]], 4)
            }
            TaskFamily::NShape => {
                chaikin(&[[0.0, 0.0], [0.0, 1.0], [0.8, 0.0], [0.8, 1.0]], 4)
            }
            TaskFamily::WShape => chaikin(
                &[[0.0, 1.0], [0.25, 0.0], [0.5, 0.7], [0.75, 0.0], [1.0, 1.0]],
                4,
            ),
            TaskFamily::RShape => chaikin(
                &[
                    [0.0, 0.0],
                    [0.0, 1.0],
                    [0.55, 1.0],
                    [0.7, 0.8],
                    [0.55, 0.55],
                    [0.15, 0.55],
                    [0.7, 0.0],
                ],
                4,
            ),
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let key = key.strip_suffix("shape").unwrap_or(&key);
        TaskFamily::ALL
            .into_iter()
            .find(|f| {
                let name = f.name().to_ascii_lowercase().replace('-', "");
                name.strip_suffix("shape").unwrap_or(&name) == key
            })
            .ok_or_else(|| Error::InvalidInput(format!("unknown task family '{s}'")))
    }
}

/// Chaikin corner cutting with the endpoints held fixed.
fn chaikin(points: &[[f64; 2]], iterations: usize) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    for _ in 0..iterations {
        let mut next = vec![pts[0]];
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push([0.75 * a[0] + 0.25 * b[0], 0.75 * a[1] + 0.25 * b[1]]);
            next.push([0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1]]);
        }
        next.push(*pts.last().unwrap());
        pts = next;
    }
    pts
}

/// Uniformly scales and centers points into `[PAD, 1 - PAD]^2`.
fn normalize(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = (1.0 - 2.0 * PAD) / extent;
    let offset = [
        0.5 - scale * 0.5 * (lo[0] + hi[0]),
        0.5 - scale * 0.5 * (lo[1] + hi[1]),
    ];
    points
        .iter()
        .map(|p| [offset[0] + scale * p[0], offset[1] + scale * p[1]])
        .collect()
}

/// `n` points spaced evenly by arc length along the polyline.
pub fn resample_arc_length(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
    }
    out
}

/// One benchmark task: demonstrations, obstacles and workspace.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub demos: Vec<Demonstration>,
    pub obstacles: Vec<Shape>,
    pub bounds: Bounds,
    pub seed: u64,
}

impl TaskSpec {
    pub fn obstacle_fields(&self) -> Vec<FieldHandle> {
        self.obstacles
            .iter()
            .map(|s| std::sync::Arc::new(s.clone()) as FieldHandle)
            .collect()
    }

    /// Same task without obstacles.
    pub fn obstacle_free(&self) -> TaskSpec {
        TaskSpec {
            obstacles: Vec::new(),
            ..self.clone()
        }
    }
}

fn to_points(xy: &[[f64; 2]]) -> Vec<PointN> {
    xy.iter().map(|p| DVector::from_row_slice(p)).collect()
}

/// Generates the named family: one 200-waypoint demonstration in the unit
/// box with a circle obstacle centered on the curve's arc-length midpoint.
pub fn generate_task(family: &str, seed: u64) -> Result<TaskSpec> {
    let family: TaskFamily = family.parse()?;
    generate_family(family, seed)
}

pub fn generate_family(family: TaskFamily, seed: u64) -> Result<TaskSpec> {
    let curve = resample_arc_length(&normalize(&family.raw_curve()), WAYPOINTS);
    custom_task(family.name(), Demonstration::uniform(to_points(&curve))?, seed)
}

/// Builds a unit-box task around a 2D demonstration, placing the obstacle on
/// its arc-length midpoint as for the generated families.
pub fn custom_task(name: &str, demo: Demonstration, seed: u64) -> Result<TaskSpec> {
    if demo.dim() != 2 {
        return invalid("tasks need 2D demonstrations");
    }
    let xy: Vec<[f64; 2]> = demo.waypoints().iter().map(|p| [p[0], p[1]]).collect();
    let mid = resample_arc_length(&xy, 3)[1];
    let bounds = Bounds::unit_square();
    let radius = OBSTACLE_RADIUS_FRACTION * bounds.diagonal();
    let task = TaskSpec {
        name: name.to_string(),
        demos: vec![demo],
        obstacles: vec![Shape::circle(mid, radius)?],
        bounds,
        seed,
    };
    validate_task(&task)?;
    Ok(task)
}

/// Two demonstrations sharing a start and diverging to opposite corners.
pub fn generate_fork_task(seed: u64) -> Result<TaskSpec> {
    let start = [0.1, 0.5];
    let branch = |sign: f64| -> Vec<[f64; 2]> {
        (0..WAYPOINTS)
            .map(|i| {
                let s = i as f64 / (WAYPOINTS - 1) as f64;
                [start[0] + 0.8 * s, start[1] + sign * 0.4 * s]
            })
            .collect()
    };
    Ok(TaskSpec {
        name: "Fork".into(),
        demos: vec![
            Demonstration::uniform(to_points(&branch(1.0)))?,
            Demonstration::uniform(to_points(&branch(-1.0)))?,
        ],
        obstacles: Vec::new(),
        bounds: Bounds::unit_square(),
        seed,
    })
}

/// Checks that each obstacle is hit by the ideal tracking flow along the
/// first demonstration, so every task exercises shaping.
pub fn validate_task(task: &TaskSpec) -> Result<()> {
    if task.demos.is_empty() {
        return invalid("a task needs at least one demonstration");
    }
    let demo = &task.demos[0];
    let nominal = FnField::new(demo.dim(), |a: &PointN, t: f64| {
        conditional_target(demo, t.clamp(0.0, 1.0), a, 5.0)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let rollout = integrate_stream(
        &nominal,
        demo.start(),
        0.0,
        200,
        IntegrationMethod::Euler,
        &mut rng,
    )?;
    for (i, shape) in task.obstacles.iter().enumerate() {
        let field: FieldHandle = std::sync::Arc::new(shape.clone());
        if !(max_penetration(&rollout, &[field])? > 0.0) {
            return invalid(format!(
                "obstacle {i} of task '{}' is not on the nominal path",
                task.name
            ));
        }
    }
    Ok(())
}
