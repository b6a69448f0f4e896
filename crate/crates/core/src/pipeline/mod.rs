//! End-to-end orchestration of a story run.

mod config;
mod report;
mod run;
mod synth;

pub use config::{LoadedConfig, ReferenceAsset, RunConfig};
pub use report::{
    bank_after_path, bank_before_path, emit_reports, read_run_config, read_script, read_shots,
    shot_dir, write_cost_summary, write_metrics, write_run_dir, write_run_header, write_shot,
    StoredShot, CONFIG_FILE, FINAL_BANK_FILE, INITIAL_BANK_FILE, SCRIPT_FILE,
};
pub use run::{
    collect_observations, compute_metrics, retrieval_token_mask, run_story, CandidateRecord,
    CandidateStatus, Engine, EntityUpdate, Observations, Reference, RunOutcome, ShotResult,
    ShotView,
};
pub use synth::{
    box_blur, laplacian_variance, mock_shot_synthesizer, select_keyframes, SynthOutput,
};
