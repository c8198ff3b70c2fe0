//! Experiment harness: dataset ingestion, model presets, attack campaigns,
//! influence sweeps, artifact emission, and the command-line interface.

pub mod binary;
pub mod campaign;
pub mod cli;
pub mod config;
pub mod csvutil;
pub mod data;
pub mod pgm;
pub mod presets;
pub mod report;
pub mod synth;

pub use campaign::{run_campaign, CampaignRow, RunManifest};
pub use config::{AttackChoice, DatasetKind, ExperimentSpec};
pub use data::{load_cifar10, load_mnist, Splits};
pub use presets::Preset;
pub use report::emit_report;
pub use synth::{synth_dataset, synth_splits};
