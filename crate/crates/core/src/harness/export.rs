use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::campaign::{seed_dir, CONFIG_FILE, TRAIN_METRICS_FILE};
use super::stats::{median, moving_average, ConvergenceRule, Running};
use super::{column, csv_reader, csv_writer, flush, parse_field, write_row};
use crate::config::{load_config, RunMode};
use crate::{Error, Result};

/// One seed's smoothed delivery curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedCurve {
    pub seed: u64,
    pub smoothed: Vec<f64>,
    pub convergence_episode: Option<usize>,
    pub plateau: f64,
    pub best: f64,
}

/// Curves of one mode, merged over every campaign of that mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCurves {
    pub mode: RunMode,
    pub seeds: Vec<SeedCurve>,
    /// Per-episode across-seed mean of the smoothed curves.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Seeds contributing to each episode (runs may stop at different lengths).
    pub counts: Vec<usize>,
}

impl ModeCurves {
    /// Median convergence episode over seeds; seeds that never converge
    /// count as converging after their last episode.
    pub fn median_convergence(&self) -> Option<f64> {
        let eps: Vec<f64> = self
            .seeds
            .iter()
            .map(|s| s.convergence_episode.unwrap_or(s.smoothed.len()) as f64)
            .collect();
        median(&eps)
    }

    /// Highest point of the mean curve once every seed has a full window.
    pub fn best_mean(&self, window: usize) -> f64 {
        let skip = (window.max(1) - 1).min(self.mean.len().saturating_sub(1));
        self.mean[skip..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveExport {
    pub buffer_size: usize,
    pub window: usize,
    pub modes: Vec<ModeCurves>,
}

impl CurveExport {
    pub fn mode(&self, mode: RunMode) -> Option<&ModeCurves> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// `pct_delivered` column of a seed's training metrics, in episode order.
pub fn read_delivery_series(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| super::csv_error(path, e))?
        .clone();
    let idx = column(&headers, "pct_delivered", path)?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| super::csv_error(path, e))?;
            parse_field(&r, idx, path)
        })
        .collect()
}

/// Per-seed delivery series of one mode.
type RawSeries = Vec<(u64, Vec<f64>)>;

fn seeds_in(run: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in std::fs::read_dir(run).map_err(|e| Error::io(run, e))? {
        let entry = entry.map_err(|e| Error::io(run, e))?;
        if let Some(seed) = entry
            .file_name()
            .to_str()
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if entry.path().join(TRAIN_METRICS_FILE).is_file() {
                seeds.push(seed);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

fn curves_for(mode: RunMode, raw: RawSeries, window: usize, rule: &ConvergenceRule) -> ModeCurves {
    let seeds: Vec<SeedCurve> = raw
        .into_iter()
        .map(|(seed, series)| {
            let smoothed = moving_average(&series, window);
            // points before the first full window are not judged
            let skip = (window - 1).min(smoothed.len().saturating_sub(1));
            let judged = &smoothed[skip..];
            SeedCurve {
                seed,
                convergence_episode: rule.episode(judged).map(|e| e + skip),
                plateau: rule.plateau(judged).unwrap_or(0.0),
                best: judged.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                smoothed,
            }
        })
        .collect();
    let len = seeds.iter().map(|s| s.smoothed.len()).max().unwrap_or(0);
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    let mut counts = Vec::with_capacity(len);
    for e in 0..len {
        let mut r = Running::default();
        for s in &seeds {
            if let Some(&x) = s.smoothed.get(e) {
                r.push(x);
            }
        }
        mean.push(r.mean());
        std.push(r.std());
        counts.push(r.count());
    }
    ModeCurves {
        mode,
        seeds,
        mean,
        std,
        counts,
    }
}

/// Reads the campaigns in `runs`, smooths every seed's delivery curve with
/// a trailing window, and writes per-mode across-seed mean and standard
/// deviation to `out`. Per-seed convergence statistics go to
/// `<out stem>_convergence.csv`. Campaigns with different buffer sizes are
/// refused.
pub fn export_curves(
    runs: &[PathBuf],
    out: &Path,
    window: usize,
    rule: &ConvergenceRule,
) -> Result<CurveExport> {
    if runs.is_empty() {
        return Err(Error::Config("export needs at least one campaign".into()));
    }
    if window == 0 {
        return Err(Error::Config("smoothing window must be positive".into()));
    }
    let mut buffer_size = None;
    let mut by_mode: BTreeMap<&'static str, (RunMode, RawSeries)> = BTreeMap::new();
    for run in runs {
        let cfg = load_config(&run.join(CONFIG_FILE))?;
        match buffer_size {
            None => buffer_size = Some(cfg.buffer_size),
            Some(p) if p != cfg.buffer_size => {
                return Err(Error::Config(format!(
                    "refusing to merge buffer size {} from {} with buffer size {p}",
                    cfg.buffer_size,
                    run.display()
                )))
            }
            Some(_) => {}
        }
        let entry = by_mode
            .entry(cfg.mode.name())
            .or_insert_with(|| (cfg.mode, Vec::new()));
        for seed in seeds_in(run)? {
            let series = read_delivery_series(&seed_dir(run, seed).join(TRAIN_METRICS_FILE))?;
            entry.1.push((seed, series));
        }
    }
    let modes: Vec<ModeCurves> = by_mode
        .into_values()
        .map(|(mode, mut raw)| {
            raw.sort_by_key(|(seed, _)| *seed);
            curves_for(mode, raw, window, rule)
        })
        .collect();

    let mut w = csv_writer(out)?;
    write_row(
        &mut w,
        out,
        [
            "mode",
            "episode",
            "smoothing_window",
            "n_seeds",
            "mean_pct_delivered",
            "std_pct_delivered",
        ],
    )?;
    for m in &modes {
        for e in 0..m.mean.len() {
            write_row(
                &mut w,
                out,
                [
                    m.mode.name().to_string(),
                    e.to_string(),
                    window.to_string(),
                    m.counts[e].to_string(),
                    m.mean[e].to_string(),
                    m.std[e].to_string(),
                ],
            )?;
        }
    }
    flush(&mut w, out)?;

    let conv_path = convergence_path(out);
    let mut w = csv_writer(&conv_path)?;
    write_row(
        &mut w,
        &conv_path,
        [
            "mode",
            "seed",
            "episodes",
            "convergence_episode",
            "plateau",
            "best_smoothed",
            "fraction",
            "hold",
            "plateau_window",
        ],
    )?;
    for m in &modes {
        for s in &m.seeds {
            write_row(
                &mut w,
                &conv_path,
                [
                    m.mode.name().to_string(),
                    s.seed.to_string(),
                    s.smoothed.len().to_string(),
                    s.convergence_episode
                        .map_or(String::new(), |e| e.to_string()),
                    s.plateau.to_string(),
                    s.best.to_string(),
                    rule.fraction.to_string(),
                    rule.hold.to_string(),
                    rule.plateau_window.to_string(),
                ],
            )?;
        }
    }
    flush(&mut w, &conv_path)?;
    Ok(CurveExport {
        buffer_size: buffer_size.unwrap_or(0),
        window,
        modes,
    })
}

fn convergence_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("curves");
    out.with_file_name(format!("{stem}_convergence.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::harness::create_dir;

    fn fake_run(dir: &Path, mode: RunMode, buffer: usize, series: &[(u64, Vec<f64>)]) {
        create_dir(dir).unwrap();
        let mut cfg = ExperimentConfig::reference(buffer);
        cfg.mode = mode;
        cfg.save(&dir.join(CONFIG_FILE)).unwrap();
        for (seed, xs) in series {
            let d = seed_dir(dir, *seed);
            create_dir(&d).unwrap();
            let mut text =
                String::from("mode,seed,lifetime,episode_global,pct_delivered,G_ep_ext\n");
            for (e, x) in xs.iter().enumerate() {
                text += &format!("{},{seed},0,{e},{x},0\n", mode.name());
            }
            std::fs::write(d.join(TRAIN_METRICS_FILE), text).unwrap();
        }
    }

    #[test]
    fn mean_of_constant_seeds_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("a");
        let series: Vec<(u64, Vec<f64>)> = (0..10).map(|s| (s, vec![37.3; 250])).collect();
        fake_run(&run, RunMode::Proposed, 2, &series);
        let out = dir.path().join("curves.csv");
        let ex = export_curves(&[run], &out, 100, &ConvergenceRule::default()).unwrap();
        let m = ex.mode(RunMode::Proposed).unwrap();
        assert!(m.mean.iter().all(|&x| x == 37.3));
        assert!(m.std.iter().all(|&x| x == 0.0));
        assert!(m.counts.iter().all(|&c| c == 10));
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 251);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("proposed,0,100,10,37.3,0"));
        assert!(dir.path().join("curves_convergence.csv").is_file());
    }

    #[test]
    fn window_one_passes_series_through() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("a");
        let xs = vec![0.0, 50.0, 100.0, 50.0];
        fake_run(&run, RunMode::ExtrinsicNps, 1, &[(3, xs.clone())]);
        let ex = export_curves(
            &[run],
            &dir.path().join("c.csv"),
            1,
            &ConvergenceRule::default(),
        )
        .unwrap();
        assert_eq!(ex.modes[0].mean, xs);
    }

    #[test]
    fn modes_merge_and_buffer_sizes_do_not() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (
            dir.path().join("a"),
            dir.path().join("b"),
            dir.path().join("c"),
        );
        fake_run(&a, RunMode::Proposed, 2, &[(0, vec![1.0; 5])]);
        fake_run(
            &b,
            RunMode::ExtrinsicNps,
            2,
            &[(0, vec![2.0; 5]), (1, vec![4.0; 3])],
        );
        fake_run(&c, RunMode::Proposed, 1, &[(0, vec![1.0; 5])]);
        let out = dir.path().join("x.csv");
        let ex = export_curves(&[a.clone(), b], &out, 10, &ConvergenceRule::default()).unwrap();
        assert_eq!(ex.modes.len(), 2);
        let nps = ex.mode(RunMode::ExtrinsicNps).unwrap();
        assert_eq!(nps.counts, vec![2, 2, 2, 1, 1]);
        assert_eq!(nps.mean[0], 3.0);
        assert!(matches!(
            export_curves(&[a, c], &out, 10, &ConvergenceRule::default()),
            Err(Error::Config(_))
        ));
    }
}
