//! Benchmark harness: task generation, runs, plots and reports.

pub mod arm;
pub mod csv_io;
pub mod render;
pub mod report;
pub mod run;
pub mod tasks;

pub use arm::{run_arm_scenario, ArmScenarioConfig, ArmScenarioReport};
pub use csv_io::{export_demo_csv, export_rollout_csv, ingest_demo_csv, IngestedDemo, Normalization};
pub use render::{render_field_svg, write_field_svg, PlotLayers};
pub use report::{emit_report, ReportFormat};
pub use run::{
    run_bench, run_experiment, BenchConfig, BenchReport, CellReport, Method, ModelCache,
    SdfSource, ShapingConfig,
};
pub use tasks::{custom_task, generate_fork_task, generate_task, TaskFamily, TaskSpec};
