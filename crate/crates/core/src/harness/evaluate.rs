use std::path::{Path, PathBuf};

use super::campaign::{CheckpointIndex, CONFIG_FILE};
use super::stats::EvalSummary;
use super::{create_dir, csv_writer, flush, read_json, write_row};
use crate::agent::{AgentBundle, ObsEncoder};
use crate::config::{load_config, ExperimentConfig};
use crate::env::{Action, MacEnv, StepOutcome, NUM_ACTIONS};
use crate::numcore::read_checkpoint;
use crate::seed::{stream_rng, stream_seed, Stream};
use crate::trainer::discounted_sum;
use crate::{Error, MlpParams, Result};

pub const EVAL_METRICS_FILE: &str = "eval_metrics.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";

#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub index: CheckpointIndex,
    pub config: ExperimentConfig,
    pub policies: Vec<MlpParams>,
}

/// Reads a checkpoint index file with the configuration and policies next
/// to it, checking the networks against the configuration.
pub fn load_checkpoint(index_path: &Path) -> Result<LoadedCheckpoint> {
    let index: CheckpointIndex = read_json(index_path)?;
    let dir = index_path.parent().unwrap_or(Path::new("."));
    let config = load_config(&dir.join(CONFIG_FILE))?;
    if index.policies.len() != config.n_agents {
        return Err(Error::Layout(format!(
            "checkpoint has {} policies for {} agents",
            index.policies.len(),
            config.n_agents
        )));
    }
    let enc_len = ObsEncoder::new(config.buffer_size, config.memory).len();
    let mut policies = Vec::with_capacity(index.policies.len());
    for name in &index.policies {
        let (policy, _): (MlpParams, _) = read_checkpoint(&dir.join(name))?;
        if policy.input_dim() != enc_len || policy.output_dim() != NUM_ACTIONS {
            return Err(Error::Layout(format!(
                "{name} maps {} -> {} but the configuration needs {enc_len} -> {NUM_ACTIONS}",
                policy.input_dim(),
                policy.output_dim()
            )));
        }
        policies.push(policy);
    }
    Ok(LoadedCheckpoint {
        index,
        config,
        policies,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pct_delivered: Vec<f64>,
    pub g_ep_ext: Vec<f64>,
    pub summary: EvalSummary,
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Plays `episodes` test episodes with the checkpoint's policies, sampling
/// actions from them on evaluation streams disjoint from training. Writes
/// per-episode metrics and the boxplot summary into `out`; with `trace`,
/// also one CSV line per slot.
pub fn evaluate(
    index_path: &Path,
    episodes: usize,
    out: &Path,
    trace: Option<&Path>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let ckpt = load_checkpoint(index_path)?;
    create_dir(out)?;
    let cfg = &ckpt.config;
    let seed = ckpt.index.seed;
    let encoder = ObsEncoder::new(cfg.buffer_size, cfg.memory);
    let mut env = MacEnv::new(cfg.env_config())?;
    let mut agents: Vec<AgentBundle> = ckpt
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            AgentBundle::new(
                i,
                p.clone(),
                None,
                cfg.optimizer,
                stream_rng(seed, Stream::EvalPolicy, &[i as u64]),
            )
        })
        .collect();

    let mut trace_out = match trace {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let mut w = csv_writer(path)?;
            let mut header = vec!["episode".to_string()];
            header.extend(
                StepOutcome::trace_header(cfg.n_agents)
                    .split(',')
                    .map(String::from),
            );
            write_row(&mut w, path, header)?;
            Some((w, path.to_path_buf()))
        }
        None => None,
    };

    let mut pct = Vec::with_capacity(episodes);
    let mut returns = Vec::with_capacity(episodes);
    let mut actions = vec![Action::NOOP; cfg.n_agents];
    let mut rewards = Vec::with_capacity(cfg.episode_len);
    for e in 0..episodes {
        let mut obs = env.reset(stream_seed(seed, Stream::EvalEnvironment, &[e as u64]));
        rewards.clear();
        while !env.is_done() {
            for (i, agent) in agents.iter_mut().enumerate() {
                actions[i] = agent.act(&encoder.encode(&obs[i])?)?.action;
            }
            let outcome = env.step(&actions)?;
            if let Some((w, path)) = trace_out.as_mut() {
                let mut row = vec![e.to_string()];
                row.extend(outcome.trace_row(&actions).split(',').map(String::from));
                write_row(w, path, row)?;
            }
            rewards.push(outcome.r_ext);
            obs = outcome.observations;
        }
        pct.push(env.pct_delivered());
        returns.push(discounted_sum(rewards.iter().copied(), cfg.gamma));
    }
    if let Some((w, path)) = trace_out.as_mut() {
        flush(w, path)?;
    }

    let summary = EvalSummary::from_samples(&pct)?;
    let metrics_path = out.join(EVAL_METRICS_FILE);
    let mut w = csv_writer(&metrics_path)?;
    write_row(
        &mut w,
        &metrics_path,
        ["episode", "pct_delivered", "G_ep_ext"],
    )?;
    for (e, (p, g)) in pct.iter().zip(&returns).enumerate() {
        write_row(
            &mut w,
            &metrics_path,
            [e.to_string(), p.to_string(), g.to_string()],
        )?;
    }
    flush(&mut w, &metrics_path)?;

    let summary_path = out.join(EVAL_SUMMARY_FILE);
    let mut w = csv_writer(&summary_path)?;
    write_row(
        &mut w,
        &summary_path,
        [
            "mode",
            "seed",
            "lifetime",
            "episodes",
            "median",
            "q1",
            "q3",
            "whisker_low",
            "whisker_high",
            "n_outliers",
            "outliers",
        ],
    )?;
    write_row(
        &mut w,
        &summary_path,
        [
            cfg.mode.name().to_string(),
            seed.to_string(),
            ckpt.index.lifetime.to_string(),
            summary.episodes.to_string(),
            summary.median.to_string(),
            summary.q1.to_string(),
            summary.q3.to_string(),
            summary.whisker_low.to_string(),
            summary.whisker_high.to_string(),
            summary.outliers.len().to_string(),
            fmt_list(&summary.outliers),
        ],
    )?;
    flush(&mut w, &summary_path)?;
    Ok(EvalReport {
        pct_delivered: pct,
        g_ep_ext: returns,
        summary,
    })
}

/// Default evaluation directory next to a checkpoint.
pub fn default_eval_dir(index_path: &Path) -> PathBuf {
    index_path.parent().unwrap_or(Path::new(".")).join("eval")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunMode;
    use crate::harness::{run_campaign, select_best};
    use crate::numcore::{write_checkpoint, Activation, CheckpointMeta, FlatParams};

    fn trained(dir: &Path) -> PathBuf {
        let mut cfg = ExperimentConfig::reference(1);
        cfg.mode = RunMode::ExtrinsicNps;
        cfg.seeds = vec![0];
        cfg.episodes_per_lifetime = 4;
        cfg.episode_len = 8;
        cfg.policy_hidden = 8;
        cfg.max_lifetimes = 1;
        cfg.selection_window = 2;
        run_campaign(&cfg, dir).unwrap();
        select_best(dir).unwrap()
    }

    #[test]
    fn evaluation_writes_files_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let index = trained(dir.path());
        let out_a = dir.path().join("eval_a");
        let out_b = dir.path().join("eval_b");
        let trace = dir.path().join("trace.csv");
        let a = evaluate(&index, 20, &out_a, Some(&trace)).unwrap();
        let b = evaluate(&index, 20, &out_b, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pct_delivered.len(), 20);
        for f in [EVAL_METRICS_FILE, EVAL_SUMMARY_FILE] {
            assert_eq!(
                std::fs::read(out_a.join(f)).unwrap(),
                std::fs::read(out_b.join(f)).unwrap()
            );
        }
        let trace_text = std::fs::read_to_string(trace).unwrap();
        assert_eq!(trace_text.lines().count(), 1 + 20 * 8);
        assert!(trace_text.starts_with("episode,t,a0,a1,m0,m1,r_ext,delivered\n"));
    }

    #[test]
    fn mismatched_policy_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        let index = trained(dir.path());
        let wrong = MlpParams::zeros(&[5, 8, 8, 6], Activation::Tanh).unwrap();
        let meta = CheckpointMeta {
            seed: 0,
            lifetime: 0,
            episodes: 0,
            config_hash: String::new(),
        };
        write_checkpoint(
            &index.parent().unwrap().join("agent1_policy.ckpt"),
            &wrong,
            &meta,
        )
        .unwrap();
        assert!(matches!(load_checkpoint(&index), Err(Error::Layout(_))));
    }

    #[test]
    fn fixed_schedule_policy_has_a_flat_box() {
        // UE0 always transmits, UE1 never does: exactly one of two PDUs
        // gets through in every episode
        let dir = tempfile::tempdir().unwrap();
        let index = trained(dir.path());
        let ckpt_dir = index.parent().unwrap();
        let ckpt = load_checkpoint(&index).unwrap();
        let cfg = ckpt.config.clone();
        let mut p0 =
            MlpParams::zeros(&[ckpt.policies[0].input_dim(), 8, 8, 6], Activation::Tanh).unwrap();
        let tx =
            Action::new(crate::env::DataAction::Transmit, crate::env::Signal::Silent).joint_index();
        let (_, bias) = p0.layer_offsets(p0.num_layers() - 1);
        let mut p1 = p0.clone();
        p0.values_mut()[bias + tx] = 200.0;
        p1.values_mut()[bias + Action::NOOP.joint_index()] = 200.0;
        let meta = CheckpointMeta {
            seed: 0,
            lifetime: 0,
            episodes: 0,
            config_hash: cfg.hash(),
        };
        write_checkpoint(&ckpt_dir.join("agent0_policy.ckpt"), &p0, &meta).unwrap();
        write_checkpoint(&ckpt_dir.join("agent1_policy.ckpt"), &p1, &meta).unwrap();
        let r = evaluate(&index, 50, &dir.path().join("eval"), None).unwrap();
        assert_eq!(
            (r.summary.q1, r.summary.median, r.summary.q3),
            (50.0, 50.0, 50.0)
        );
        assert!(r.summary.outliers.is_empty());
    }
}
