use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, csv_writer, flush, read_json, write_json, write_row, CsvWriter};
use crate::config::{ExperimentConfig, RunMode};
use crate::numcore::{write_checkpoint, CheckpointMeta};
use crate::trainer::{train, LifetimeRecord, TrainEvent, Trainer};
use crate::{Error, Result};

pub const TRAIN_METRICS_FILE: &str = "train_metrics.csv";
pub const LIFETIMES_FILE: &str = "lifetimes.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_INDEX_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Index file of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub mode: RunMode,
    pub seed: u64,
    /// Lifetime after which the networks were saved, from 0.
    pub lifetime: usize,
    pub episodes: usize,
    /// Mean delivery percentage over that lifetime's selection window.
    pub selection_score: f64,
    pub config_hash: String,
    pub policies: Vec<String>,
    pub intrinsics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub lifetimes: usize,
    pub episodes: usize,
    pub converged: bool,
    pub best_lifetime: Option<usize>,
    pub best_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub mode: RunMode,
    pub buffer_size: usize,
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_secs: f64,
    pub seeds: Vec<SeedStatus>,
}

impl CampaignManifest {
    pub fn all_ok(&self) -> bool {
        self.seeds.iter().all(|s| s.ok)
    }
}

pub(crate) fn seed_dir(campaign: &Path, seed: u64) -> PathBuf {
    campaign.join(format!("seed_{seed}"))
}

fn metrics_header(n_agents: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "mode",
        "seed",
        "lifetime",
        "episode_global",
        "pct_delivered",
        "G_ep_ext",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..n_agents).map(|i| format!("G_ep_ov_agent{i}")));
    cols.extend((0..n_agents).map(|i| format!("mean_abs_rin_agent{i}")));
    cols
}

fn lifetimes_header(cfg: &ExperimentConfig) -> Vec<String> {
    let mut cols: Vec<String> = [
        "mode",
        "seed",
        "lifetime",
        "episodes",
        "G_life_ext",
        "selection_score",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if cfg.mode.uses_intrinsic() {
        cols.extend((0..cfg.n_agents).map(|i| format!("meta_grad_norm_agent{i}")));
    }
    cols
}

fn save_networks(trainer: &Trainer, dir: &Path, record: &LifetimeRecord) -> Result<()> {
    create_dir(dir)?;
    let cfg = trainer.config();
    let meta = CheckpointMeta {
        seed: trainer.run_seed(),
        lifetime: record.lifetime as u64,
        episodes: trainer.episodes_done() as u64,
        config_hash: cfg.hash(),
    };
    let mut policies = Vec::new();
    let mut intrinsics = Vec::new();
    for i in 0..cfg.n_agents {
        let name = format!("agent{i}_policy.ckpt");
        write_checkpoint(&dir.join(&name), trainer.acting_policy(i), &meta)?;
        policies.push(name);
        if let Some(eta) = &trainer.bundles()[i].intrinsic {
            let name = format!("agent{i}_intrinsic.ckpt");
            write_checkpoint(&dir.join(&name), eta, &meta)?;
            intrinsics.push(name);
        }
    }
    cfg.save(&dir.join(CONFIG_FILE))?;
    write_json(
        &dir.join(CHECKPOINT_INDEX_FILE),
        &CheckpointIndex {
            mode: cfg.mode,
            seed: trainer.run_seed(),
            lifetime: record.lifetime,
            episodes: trainer.episodes_done(),
            selection_score: record.selection_score,
            config_hash: meta.config_hash,
            policies,
            intrinsics,
        },
    )
}

struct SeedWriters {
    metrics: CsvWriter,
    metrics_path: PathBuf,
    lifetimes: CsvWriter,
    lifetimes_path: PathBuf,
}

/// Trains one seed into `<campaign>/seed_<seed>/`. Learning modes keep
/// the networks of the best lifetime so far and of the latest lifetime.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, campaign: &Path) -> Result<SeedStatus> {
    let dir = seed_dir(campaign, seed);
    create_dir(&dir)?;
    let metrics_path = dir.join(TRAIN_METRICS_FILE);
    let lifetimes_path = dir.join(LIFETIMES_FILE);
    let mut w = SeedWriters {
        metrics: csv_writer(&metrics_path)?,
        metrics_path,
        lifetimes: csv_writer(&lifetimes_path)?,
        lifetimes_path,
    };
    write_row(
        &mut w.metrics,
        &w.metrics_path,
        metrics_header(cfg.n_agents),
    )?;
    write_row(&mut w.lifetimes, &w.lifetimes_path, lifetimes_header(cfg))?;

    let mode = cfg.mode.name();
    let mut best: Option<(usize, f64)> = None;
    let trainer = train(cfg, seed, |trainer, event| {
        match event {
            TrainEvent::Episode(e) => {
                let mut row = vec![
                    mode.to_string(),
                    seed.to_string(),
                    e.lifetime.to_string(),
                    e.episode_global.to_string(),
                    e.pct_delivered.to_string(),
                    e.g_ep_ext.to_string(),
                ];
                row.extend(e.g_ep_ov.iter().map(f64::to_string));
                row.extend(e.mean_abs_rin.iter().map(f64::to_string));
                write_row(&mut w.metrics, &w.metrics_path, row)?;
            }
            TrainEvent::Lifetime(l) => {
                let mut row = vec![
                    mode.to_string(),
                    seed.to_string(),
                    l.lifetime.to_string(),
                    trainer.episodes_done().to_string(),
                    l.g_life_ext.to_string(),
                    l.selection_score.to_string(),
                ];
                row.extend(l.meta_grad_norm.iter().map(f64::to_string));
                write_row(&mut w.lifetimes, &w.lifetimes_path, row)?;
                if cfg.mode.learns() {
                    if best.is_none_or(|(_, s)| l.selection_score > s) {
                        best = Some((l.lifetime, l.selection_score));
                        save_networks(trainer, &dir.join("best"), l)?;
                    }
                    save_networks(trainer, &dir.join("final"), l)?;
                }
            }
        }
        Ok(())
    })?;
    flush(&mut w.metrics, &w.metrics_path)?;
    flush(&mut w.lifetimes, &w.lifetimes_path)?;
    Ok(SeedStatus {
        seed,
        ok: true,
        error: None,
        lifetimes: trainer.lifetimes_done(),
        episodes: trainer.episodes_done(),
        converged: trainer.converged(),
        best_lifetime: best.map(|b| b.0),
        best_score: best.map(|b| b.1),
    })
}

/// Runs every configured seed (in parallel worker slots) into `out`, then
/// writes the manifest. A failing seed is recorded there and does not stop
/// the others.
pub fn run_campaign(cfg: &ExperimentConfig, out: &Path) -> Result<CampaignManifest> {
    cfg.validate()?;
    if cfg.seeds.is_empty() {
        return Err(Error::Config("campaign needs at least one seed".into()));
    }
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let start = Instant::now();
    let seeds: Vec<SeedStatus> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_seed(cfg, seed, out).unwrap_or_else(|e| SeedStatus {
                seed,
                ok: false,
                error: Some(e.to_string()),
                lifetimes: 0,
                episodes: 0,
                converged: false,
                best_lifetime: None,
                best_score: None,
            })
        })
        .collect();
    let manifest = CampaignManifest {
        mode: cfg.mode,
        buffer_size: cfg.buffer_size,
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        seeds,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Checkpoint index file of the best trained instance of a campaign:
/// highest selection score, lower seed on ties.
pub fn select_best(campaign: &Path) -> Result<PathBuf> {
    let entries = std::fs::read_dir(campaign).map_err(|e| Error::io(campaign, e))?;
    let mut best: Option<(f64, u64, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(campaign, e))?;
        let index_path = entry.path().join("best").join(CHECKPOINT_INDEX_FILE);
        let is_seed_dir = entry.file_name().to_str().is_some_and(|n| {
            n.strip_prefix("seed_")
                .is_some_and(|s| s.parse::<u64>().is_ok())
        });
        if !is_seed_dir || !index_path.is_file() {
            continue;
        }
        let index: CheckpointIndex = read_json(&index_path)?;
        let better = match &best {
            None => true,
            Some((score, seed, _)) => {
                index.selection_score > *score
                    || (index.selection_score == *score && index.seed < *seed)
            }
        };
        if better {
            best = Some((index.selection_score, index.seed, index_path));
        }
    }
    best.map(|b| b.2).ok_or_else(|| {
        Error::Protocol(format!(
            "no trained checkpoints under {}",
            campaign.display()
        ))
    })
}
