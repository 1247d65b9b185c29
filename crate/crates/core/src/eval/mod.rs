//! Certificates, metrics, data generation and ingestion, and the run/sweep
//! pipeline.

pub mod certificate;
pub mod config;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod sweep;
pub mod synth;

pub use certificate::{certify, certify_model, check_certificate, positive_violation, Certificate, CertificateCheck};
pub use config::{Family, RunConfig};
pub use ingest::{ingest_csv, split, CsvSchema, Dataset, Split};
pub use metrics::{evaluate, evaluate_sets, EvalReport, LabeledPolicy, SetReport};
pub use pipeline::{run, write_artifacts, RunOutput, RunReport};
pub use sweep::{sweep, write_sweep_outputs, SweepOutcome, SweepRow};
pub use synth::{synth_generate, SynthData, SynthSpec};
