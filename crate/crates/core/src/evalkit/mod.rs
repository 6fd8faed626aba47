pub mod evaluate;
pub mod habitat;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod report;

pub use evaluate::{evaluate, write_responses, EvalItem, EvaluationResult, ResponseRecord};
pub use habitat::{parse_habitat, HabitatReport};
pub use metrics::{enumeration_metrics, recognition_metrics, CountStats, EnumerationMetrics, Prf, RecognitionMetrics};
pub use parse::{parse_species_count, ParseStatus, Prediction};
pub use prompt::{render_prompt, PromptMode};
pub use report::{format_report, write_report, ReportTables};
