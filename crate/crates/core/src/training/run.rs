use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::step::TrainState;
use crate::config::TrainConfig;
use crate::data::{UnpairedDataset, UnpairedSampler};
use crate::error::{io_err, Error, Result};
use crate::image::{write_strip, Domain, Image};
use crate::inference::translate_guided;
use crate::losses::{LossReport, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint directory instead of starting fresh.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed steps (the run stays resumable).
    pub stop_after: Option<u64>,
}

/// A finished or interrupted training run.
pub struct Run {
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub state: TrainState<f32>,
    pub sampler: UnpairedSampler,
    pub last_report: Option<LossReport>,
}

impl Run {
    pub fn checkpoint_dir(dir: &Path, step: u64) -> PathBuf {
        dir.join("checkpoints").join(format!("step_{step:06}"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }
}

/// Keeps the header and the first `rows` data rows of an existing log.
fn truncate_metrics(path: &Path, rows: u64) -> Result<()> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut kept = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if i as u64 > rows {
            break;
        }
        kept.push_str(&line);
        kept.push('\n');
    }
    fs::write(path, kept).map_err(io_err(path))
}

fn write_samples(state: &TrainState<f32>, data: &UnpairedDataset, path: &Path) -> Result<()> {
    let x = &data.domain(Domain::X)[0];
    let y = &data.domain(Domain::Y)[0];
    let v = translate_guided(&state.model, x, y)?;
    let u = translate_guided(&state.model, y, x)?;
    write_strip(path, &[x.clone(), v, y.clone(), u])
}

/// Trains for `config.total_steps` steps, writing into `dir`:
/// `config.toml`, `metrics.csv` (one row per step), checkpoints every
/// `checkpoint_interval` steps and at the end, and sample strips every
/// `sample_interval` steps.
pub fn run_training(config: &TrainConfig, data: &UnpairedDataset, dir: &Path, opts: &RunOptions) -> Result<Run> {
    config.validate()?;
    let (c, s, w) = (config.arch.channels, config.arch.image_size, config.arch.image_size);
    if data.image_shape() != [c, s, w] {
        return Err(Error::Shape {
            context: "dataset images vs. configured architecture".into(),
            expected: vec![c, s, w],
            actual: data.image_shape().to_vec(),
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, config.to_kv_string()).map_err(io_err(&cfg_path))?;
    let metrics_path = dir.join(METRICS_FILE);
    let (nx, ny) = data.sizes();

    let (mut state, mut sampler) = match &opts.resume {
        Some(ckpt) => {
            let (saved, state, sampler_state) = load_checkpoint(ckpt)?;
            if saved != *config {
                return Err(Error::Checkpoint(format!(
                    "{} was written by a different configuration",
                    ckpt.display()
                )));
            }
            truncate_metrics(&metrics_path, state.step())?;
            (state, UnpairedSampler::with_state(config.seed, nx, ny, sampler_state))
        }
        None => {
            fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(io_err(&metrics_path))?;
            (TrainState::<f32>::new(config)?, UnpairedSampler::new(config.seed, nx, ny))
        }
    };

    let file = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    let end = opts.stop_after.map_or(config.total_steps, |s| s.min(config.total_steps));
    let mut last_report = None;

    while state.step() < end {
        let (ix, iy) = sampler.next_batch(config.batch_size);
        let xs: Vec<&Image> = ix.iter().map(|&i| &data.domain(Domain::X)[i]).collect();
        let ys: Vec<&Image> = iy.iter().map(|&i| &data.domain(Domain::Y)[i]).collect();
        let report = match state.train_step(&xs, &ys) {
            Ok(r) => r,
            Err(e) => {
                metrics.flush().map_err(io_err(&metrics_path))?;
                if let Some(r) = &last_report {
                    log::error!("last report: {}", LossReport::csv_row(r, state.step()));
                }
                return Err(e);
            }
        };
        let step = state.step();
        writeln!(metrics, "{}", report.csv_row(step)).map_err(io_err(&metrics_path))?;
        if step % 100 == 0 {
            log::info!("step {step}: total {:.4}", report.total);
        }
        last_report = Some(report);
        if step % config.checkpoint_interval == 0 || step == config.total_steps {
            metrics.flush().map_err(io_err(&metrics_path))?;
            save_checkpoint(&state, config, sampler.state(), &Run::checkpoint_dir(dir, step))?;
        }
        if config.sample_interval > 0 && step % config.sample_interval == 0 {
            let path = dir.join("samples").join(format!("step_{step:06}.png"));
            write_samples(&state, data, &path)?;
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    Ok(Run {
        dir: dir.to_path_buf(),
        config: config.clone(),
        state,
        sampler,
        last_report,
    })
}
