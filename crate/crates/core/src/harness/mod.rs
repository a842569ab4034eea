//! Metrics, experiment orchestration, routing tables and FLOP estimates.

mod experiment;
mod flops;
mod metrics;
mod pipeline;
mod routing;

pub use experiment::{
    curve_csv, evaluate, gen_candidates, load_store, run_experiment, training_triples, Ablation, CurvePoint,
    DataConfig, EvalConfig, EvalOutcome, ExperimentConfig, ExperimentResult,
};
pub use flops::{report_flops, FlopsConfig, FlopsReport};
pub use metrics::{compute_metrics, LangMetrics, MetricsReport};
pub use pipeline::{
    flops_config, paired_effect, read_config, run_ablation, run_pipeline, run_stage, AblationReport, AblationRun,
    Effect, Stage, StageOptions,
};
pub use routing::{expert_agreement, export_routing_analysis, ExpertTable, RoutingTables};
