//! End-to-end orchestration: configuration, staged runs with a manifest, and
//! report emission.

mod config;
mod report;
mod run;

pub use config::{parse_list, DataSource, Method, RelaxedEstimator, RunConfig, Threshold};
pub use report::{
    compare_report, discover_unseen, render_attributes, unseen_prompt_lines, write_comparison_csv,
    write_report_files, write_unseen_csv, ComparisonRow, Evaluation, MetricsDocument, Reference,
    SummaryStat,
};
pub use run::{
    file_sha256, load_metrics, load_split, run_pipeline, Artifact, RunManifest, StageRecord,
    VERSION,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
