//! Configuration, artifacts and orchestration for the command line.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{noise_checks, read_manifest, Command, ExecOptions, Outcome, RunManifest, Workspace};
pub use config::{apply_override, parse_seeds, DataSource, FileData, KnowledgeConfig, NoiseConfig, RunConfig, SyntheticData, Task};
pub use pipeline::{candidate_inputs, gather_all, run_pipeline, stage2_examples, stage2_meta, PipelineOutput, PipelineSettings};
