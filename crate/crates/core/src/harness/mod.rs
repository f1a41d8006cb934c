//! Experiment orchestration: seeded campaigns, best-instance selection,
//! test evaluation and curve export.
//!
//! A campaign directory looks like
//!
//! ```text
//! <out>/config.toml            resolved configuration
//! <out>/manifest.json          hash, version, wall time, per-seed status
//! <out>/seed_<s>/train_metrics.csv
//! <out>/seed_<s>/lifetimes.csv
//! <out>/seed_<s>/best/checkpoint.json   (+ network files, config.toml)
//! <out>/seed_<s>/final/checkpoint.json
//! ```

mod campaign;
mod evaluate;
mod export;
pub mod stats;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub use campaign::{
    run_campaign, run_seed, select_best, CampaignManifest, CheckpointIndex, SeedStatus,
    LIFETIMES_FILE, MANIFEST_FILE, TRAIN_METRICS_FILE,
};
pub use evaluate::{
    default_eval_dir, evaluate, load_checkpoint, EvalReport, LoadedCheckpoint, EVAL_METRICS_FILE,
    EVAL_SUMMARY_FILE,
};
pub use export::{export_curves, read_delivery_series, CurveExport, ModeCurves, SeedCurve};
pub use stats::{ConvergenceRule, EvalSummary};

use crate::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "MACRL_OUT";

/// Output root from [`OUTPUT_ROOT_VAR`], falling back to `./runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub(crate) type CsvWriter = csv::Writer<BufWriter<File>>;

pub(crate) fn csv_writer(path: &Path) -> Result<CsvWriter> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

pub(crate) fn write_row<I, S>(w: &mut CsvWriter, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_error(path, e))
}

pub(crate) fn flush(w: &mut CsvWriter, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse(format!("{}: missing column {name}", path.display())))
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
) -> Result<T> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Parse(format!("{}: bad value {raw:?}", path.display())))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
