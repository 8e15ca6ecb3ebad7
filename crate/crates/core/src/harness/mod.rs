//! Training, evaluation and measurement built on the core modules.

pub mod agent;
pub mod bench;
pub mod config;
pub mod stats;
pub mod train;
pub mod verify;

pub use agent::{ActionArtifacts, Agent, Architecture};
pub use bench::{bench_csv, bench_select, log_log_slope, BenchRow};
pub use config::{load_config, parse_config, FastMode, PolicyConfig, PolicyKind, RunConfig, Selection, TrainConfig};
pub use stats::{compare, paired_t_test, read_scores, ComparisonRow, PairwiseTest};
pub use train::{evaluate, evaluate_theta, train, train_seed, Checkpoint, EvalSummary, RunLog, SeedOutcome};
pub use verify::{verify_csv, verify_es, VerifyRow};
