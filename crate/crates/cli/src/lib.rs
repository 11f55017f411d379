//! Front end for representative-based training runs: flat config files,
//! run artifacts, comparison tables and representative export.

pub mod export;
pub mod run;
pub mod spec;

pub use export::export_representative;
pub use run::{compare_header, load_data, run, write_comparison, RunOutcome};
pub use spec::{RawConfig, RunSpec, SpecError, KEYS, SEED_ENV};

/// Process exit status for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<SpecError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<repfuse::error::Error>().map(|e| e.category()) {
        Some("input") => 2,
        Some("data") => 3,
        Some("numeric") => 4,
        Some("program") => 5,
        _ => 1,
    }
}
