//! Evaluation metrics, reports, ablations and attention explanations.

mod ablate;
mod explain;
mod metrics;
mod report;

pub use ablate::{ablate, audit_edge_as_node, cell_config, render_ablation, AblationGrid, AblationRow};
pub use explain::{explain, mean_edge_attention, score_edges, sidecar_json, to_dot, EdgeScore, Explanation, GraphExplanation};
pub use metrics::{balanced_accuracy, Confusion};
pub use report::{evaluate, prepare_records, render_table, EvalReport, MissingPolicy, Timing};
