//! Toolchain for remote-sensing instruction corpora.
//!
//! * [`geometry`]: horizontal / oriented boxes, canonical corner order,
//!   normalization, and IoU.
//! * [`ingest`]: annotation parsers (classification CSV, canonical JSONL task
//!   files, DOTA label text) producing [`ingest::SourceSample`]s.
//! * [`compiler`]: conversion of samples into multi-turn instruction records
//!   and per-source corpus statistics.
//! * [`metrics`]: caption, accuracy, grounding and detection metrics.
//! * [`kernels`]: double-precision fusion, attention/RMSNorm, bias-tuning and
//!   AdamW kernels with hand-written backward passes and a gradient checker.
//! * [`cli`]: the `rsinstruct` command-line front end.

pub mod cli;
pub mod compiler;
pub mod geometry;
pub mod ingest;
pub mod kernels;
pub mod metrics;
