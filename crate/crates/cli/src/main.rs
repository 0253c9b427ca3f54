use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use dispair::data::{
    dataset_from_config, export_synthetic, load_image_file, load_labeled_folder, load_paired_folder,
    make_paired_synthetic, make_synthetic_dataset, synthetic_adaptation, FolderOptions,
};
use dispair::evaluation::{
    diversity_score, domain_adaptation_eval, eval_rng, reconstruction_error, source_only_eval, summary_table,
    write_reports, ClassifierConfig, Distance, DiversityProtocol,
};
use dispair::inference::{interpolate_attributes, translate_guided, translate_random, write_grid};
use dispair::training::{load_checkpoint, run_training, RunOptions};
use dispair::{AttributeCode, DatasetSpec, Domain, Error, Image, Model, TrainConfig, Translator};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "dispair", version, about = "Diverse unpaired image-to-image translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes a run directory named by config hash and seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the config file. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Continue from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate an image with a trained checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Domain of the input image.
        #[arg(long, default_value = "x")]
        domain: String,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Source of the attribute (guided) or of the endpoints (interpolate).
        #[arg(long = "attribute-image")]
        attribute_images: Vec<PathBuf>,
        /// Domain of the attribute images; defaults to the other domain.
        #[arg(long)]
        attribute_domain: Option<String>,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol on a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        /// Dataset root (`testA`/`testB` for recon; labeled `trainA`/`testB` for adapt).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n_images: usize,
        #[arg(long, default_value_t = 1000)]
        n_pairs: usize,
        #[arg(long, default_value = "content_feature_l2")]
        distance: String,
        #[arg(long, default_value_t = 1)]
        multiplier: usize,
        /// Also train the classifier on untranslated source images.
        #[arg(long)]
        source_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the synthetic shape domains to a folder dataset with factors.csv.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        test_count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Random,
    Guided,
    Interpolate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Diversity,
    Recon,
    Adapt,
}

fn parse_domain(s: &str) -> anyhow::Result<Domain> {
    Domain::parse(s).with_context(|| format!("unknown domain `{s}` (use x or y)"))
}

fn cmd_train(config: &Path, overrides: &[String], runs_dir: &Path, resume: Option<PathBuf>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config = TrainConfig::from_kv_str(&text)?.with_overrides(overrides)?;
    if let DatasetSpec::Folder { root } = &config.dataset {
        if !root.is_dir() {
            bail!("dataset path {} does not exist", root.display());
        }
    }
    let data = dataset_from_config(&config)?;
    let dir = runs_dir.join(format!("{}-seed{}", config.hash(), config.seed));
    let opts = RunOptions {
        resume,
        stop_after: None,
    };
    let run = run_training(&config, &data, &dir, &opts)?;
    println!("run directory: {}", run.dir.display());
    if let Some(r) = run.last_report {
        println!("final total objective: {:.6}", r.total);
    }
    Ok(())
}

fn load_model(checkpoint: &Path) -> anyhow::Result<(TrainConfig, Model<f32>)> {
    let (config, state, _) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok((config, state.model))
}

#[allow(clippy::too_many_arguments)]
fn cmd_translate(
    checkpoint: &Path,
    input: &Path,
    domain: Domain,
    mode: Mode,
    samples: usize,
    attribute_images: &[PathBuf],
    attribute_domain: Option<Domain>,
    steps: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let (config, model) = load_model(checkpoint)?;
    let opts = FolderOptions::new(config.arch.image_size, config.arch.channels);
    let x = load_image_file(input, domain, &opts)?;
    let attr_domain = attribute_domain.unwrap_or(domain.other());
    let attrs = attribute_images
        .iter()
        .map(|p| load_image_file(p, attr_domain, &opts))
        .collect::<Result<Vec<Image>, Error>>()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rng = rand_chacha_rng(seed);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "checkpoint: {}", checkpoint.display());
    let _ = writeln!(manifest, "input: {} (domain {domain})", input.display());
    let _ = writeln!(manifest, "seed: {seed}");
    let written = match mode {
        Mode::Random => {
            let outs = translate_random(&model, &x, samples, &mut rng)?;
            let path = out.join("random.png");
            write_grid(&path, &x, &outs)?;
            let _ = writeln!(manifest, "mode: random\nsamples: {samples}\nattribute source: prior N(0, I)");
            path
        }
        Mode::Guided => {
            let [a] = attrs.as_slice() else {
                bail!("guided mode needs exactly one --attribute-image");
            };
            let img = translate_guided(&model, &x, a)?;
            let path = out.join("guided.png");
            img.save_png(&path)?;
            let _ = writeln!(
                manifest,
                "mode: guided\nattribute source: posterior mean of {} (domain {attr_domain})",
                attribute_images[0].display()
            );
            path
        }
        Mode::Interpolate => {
            let (a, b, source) = match attrs.as_slice() {
                [a, b] => (
                    model.encode_posterior(a)?.mean(),
                    model.encode_posterior(b)?.mean(),
                    format!(
                        "posterior means of {} and {}",
                        attribute_images[0].display(),
                        attribute_images[1].display()
                    ),
                ),
                [] => (
                    AttributeCode::sample_prior(model.attr_dim(), attr_domain, &mut rng),
                    AttributeCode::sample_prior(model.attr_dim(), attr_domain, &mut rng),
                    "two prior samples".to_string(),
                ),
                _ => bail!("interpolate mode takes zero or two --attribute-image"),
            };
            let frames = interpolate_attributes(&model, &x, &a, &b, steps)?;
            let path = out.join("interpolate.png");
            dispair::image::write_strip(&path, &frames)?;
            let _ = writeln!(manifest, "mode: interpolate\nsteps: {steps}\nattribute source: {source}");
            path
        }
    };
    let _ = writeln!(manifest, "output: {}", written.display());
    std::fs::write(out.join("manifest.txt"), manifest).context("writing manifest")?;
    println!("wrote {}", written.display());
    Ok(())
}

fn rand_chacha_rng(seed: u64) -> impl rand::Rng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    metric: Metric,
    data: Option<&Path>,
    protocol: DiversityProtocol,
    multiplier: usize,
    source_only: bool,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let (config, model) = load_model(checkpoint)?;
    let variant = config.variant.name();
    let a = &config.arch;
    let opts = FolderOptions::new(a.image_size, a.channels);
    let mut rng = eval_rng(seed);
    let reports = match metric {
        Metric::Diversity => {
            let images: Vec<Image> = match data {
                Some(root) => {
                    let set = load_paired_folder(root, &opts)
                        .map(|p| p.pairs.into_iter().map(|(x, _)| x).collect())
                        .or_else(|_| {
                            dispair::data::load_folder_dataset(root, &opts).map(|d| d.domain(Domain::X).to_vec())
                        })?;
                    set
                }
                None => match &config.dataset {
                    DatasetSpec::Synthetic { .. } => {
                        let (set, _) = make_paired_synthetic(protocol.n_images, a.image_size, seed.wrapping_add(1))?;
                        set.pairs.into_iter().map(|(x, _)| x).collect()
                    }
                    _ => dataset_from_config(&config)?.domain(Domain::X).to_vec(),
                },
            };
            vec![diversity_score(&model, &images, &protocol, variant, seed, &mut rng)?]
        }
        Metric::Recon => {
            let Some(root) = data else {
                bail!(Error::Protocol(
                    "reconstruction error needs a paired test set: pass --data ROOT with testA/ and testB/".into()
                ));
            };
            let paired = load_paired_folder(root, &opts)?;
            vec![reconstruction_error(&model, &paired, variant)?]
        }
        Metric::Adapt => {
            let (source, target_test) = match data {
                Some(root) => (
                    load_labeled_folder(&root.join("trainA"), &opts, Domain::X)?,
                    load_labeled_folder(&root.join("testB"), &opts, Domain::Y)?,
                ),
                None => match &config.dataset {
                    DatasetSpec::Digits { count } => {
                        let ds = synthetic_adaptation(*count, 1000, a.image_size, a.channels, config.seed)?;
                        (ds.source().to_vec(), ds.target_test)
                    }
                    _ => bail!(Error::Protocol(
                        "adaptation needs labeled data: pass --data ROOT with labeled trainA/ and testB/".into()
                    )),
                },
            };
            let clf = ClassifierConfig {
                seed,
                ..ClassifierConfig::default()
            };
            let mut reports = vec![domain_adaptation_eval(
                &model,
                &source,
                &target_test,
                multiplier,
                &clf,
                variant,
                &mut rng,
            )?];
            if source_only {
                reports.push(source_only_eval(&source, &target_test, &clf)?);
            }
            reports
        }
    };
    write_reports(out, &reports)?;
    print!("{}", summary_table(&reports));
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_make_synthetic(out: &Path, count: usize, test_count: usize, size: usize, seed: u64) -> anyhow::Result<()> {
    let ds = make_synthetic_dataset(count, size, seed)?;
    let (test, factors) = make_paired_synthetic(test_count, size, seed.wrapping_add(1))?;
    export_synthetic(&ds, Some((&test, &factors)), out)?;
    println!(
        "wrote {count}+{count} training and {test_count} paired test images to {}",
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            runs_dir,
            resume,
        } => cmd_train(&config, &overrides, &runs_dir, resume),
        Command::Translate {
            checkpoint,
            input,
            domain,
            mode,
            samples,
            attribute_images,
            attribute_domain,
            steps,
            seed,
            out,
        } => {
            let attribute_domain = attribute_domain.as_deref().map(parse_domain).transpose()?;
            cmd_translate(
                &checkpoint,
                &input,
                parse_domain(&domain)?,
                mode,
                samples,
                &attribute_images,
                attribute_domain,
                steps,
                seed,
                &out,
            )
        }
        Command::Eval {
            checkpoint,
            metric,
            data,
            n_images,
            n_pairs,
            distance,
            multiplier,
            source_only,
            seed,
            out,
        } => {
            let protocol = DiversityProtocol {
                n_images,
                n_pairs,
                distance: distance.parse::<Distance>()?,
            };
            cmd_eval(
                &checkpoint,
                metric,
                data.as_deref(),
                protocol,
                multiplier,
                source_only,
                seed,
                &out,
            )
        }
        Command::MakeSynthetic {
            out,
            count,
            test_count,
            size,
            seed,
        } => cmd_make_synthetic(&out, count, test_count, size, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Error::Config { key, msg }) = e.downcast_ref::<Error>() {
                eprintln!("error: invalid config key `{key}`: {msg}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
