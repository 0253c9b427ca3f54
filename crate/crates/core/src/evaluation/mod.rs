//! Quantitative protocols: diversity, paired reconstruction error,
//! translation-based domain adaptation, and variant comparisons.

mod classifier;

pub use classifier::{train_and_score, Classifier, ClassifierConfig};

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::config::{TrainConfig, Variant};
use crate::data::{PairedSet, UnpairedDataset};
use crate::error::{io_err, Error, Result};
use crate::image::Image;
use crate::inference::{translate_guided, translate_random};
use crate::networks::{Model, Translator};
use crate::training::{run_training, RunOptions};

pub const EVAL_HEADER: &str = "metric,variant,value,std,n_images,n_pairs,seed";

/// One evaluated quantity with the parameters needed to reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub variant: String,
    pub value: f64,
    /// Spread of sampled metrics; absent for deterministic ones.
    pub std: Option<f64>,
    pub n_images: usize,
    pub n_pairs: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{},{},{},{}",
            self.metric,
            self.variant,
            self.value,
            self.std.map(|s| format!("{s:?}")).unwrap_or_default(),
            self.n_images,
            self.n_pairs,
            self.seed
        )
    }

    /// `mean ± std`, three decimals, leading zero dropped (e.g. `.448 ± .012`).
    pub fn table_cell(&self) -> String {
        match self.std {
            Some(s) => format!("{} ± {}", short_decimal(self.value), short_decimal(s)),
            None => short_decimal(self.value),
        }
    }
}

fn short_decimal(v: f64) -> String {
    let s = format!("{v:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

/// CSV with header.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, reports_to_csv(reports)).map_err(io_err(path))
}

/// Fixed-width text table of reports.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<34} {:<26} {:>16} {:>9} {:>8}\n", "metric", "variant", "value", "images", "pairs");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<34} {:<26} {:>16} {:>9} {:>8}",
            r.metric,
            r.variant,
            r.table_cell(),
            r.n_images,
            r.n_pairs
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    /// Mean absolute pixel difference.
    PixelL1,
    /// Root-mean-square pixel difference.
    PixelL2,
    /// Root-mean-square difference of the model's own content codes.
    ContentFeatureL2,
}

impl Distance {
    pub fn name(self) -> &'static str {
        match self {
            Distance::PixelL1 => "pixel_l1",
            Distance::PixelL2 => "pixel_l2",
            Distance::ContentFeatureL2 => "content_feature_l2",
        }
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Distance::PixelL1, Distance::PixelL2, Distance::ContentFeatureL2]
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Protocol(format!("unknown distance `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityProtocol {
    pub n_images: usize,
    pub n_pairs: usize,
    pub distance: Distance,
}

impl Default for DiversityProtocol {
    fn default() -> Self {
        Self {
            n_images: 100,
            n_pairs: 1000,
            distance: Distance::ContentFeatureL2,
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Number of outputs needed so that `pairs` distinct unordered pairs exist.
fn outputs_for_pairs(pairs: usize) -> usize {
    let mut k = 2;
    while k * (k - 1) / 2 < pairs {
        k += 1;
    }
    k
}

/// Mean ± std distance between random translations of the same input.
///
/// The first `n_images` images are used. Pairs are split evenly across
/// images; each image gets just enough random translations to supply its
/// share, and its pairs are drawn without replacement from all unordered
/// pairs of those translations.
pub fn diversity_score<M: Translator, R: Rng + ?Sized>(
    model: &M,
    images: &[Image],
    protocol: &DiversityProtocol,
    variant: &str,
    seed: u64,
    rng: &mut R,
) -> Result<EvalReport> {
    let DiversityProtocol {
        n_images,
        n_pairs,
        distance,
    } = *protocol;
    if n_images == 0 || n_pairs == 0 {
        return Err(Error::Protocol("diversity needs at least one image and one pair".into()));
    }
    if images.len() < n_images {
        return Err(Error::Protocol(format!(
            "diversity protocol needs {n_images} source images, got {}",
            images.len()
        )));
    }
    let mut distances = Vec::with_capacity(n_pairs);
    for (i, img) in images[..n_images].iter().enumerate() {
        let share = n_pairs / n_images + usize::from(i < n_pairs % n_images);
        if share == 0 {
            continue;
        }
        let k = outputs_for_pairs(share);
        let outs = translate_random(model, img, k, rng)?;
        let feats = match distance {
            Distance::ContentFeatureL2 => Some(
                outs.iter()
                    .map(|o| model.encode_content(o))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        let all_pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
        for idx in sample(rng, all_pairs.len(), share) {
            let (a, b) = all_pairs[idx];
            let d = match distance {
                Distance::PixelL1 => outs[a].l1_distance(&outs[b])?,
                Distance::PixelL2 => outs[a].l2_distance(&outs[b])?,
                Distance::ContentFeatureL2 => {
                    let f = feats.as_ref().expect("features computed above");
                    let (fa, fb) = (f[a].features().data(), f[b].features().data());
                    let ss: f64 = fa.iter().zip(fb).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
                    (ss / fa.len() as f64).sqrt()
                }
            };
            distances.push(d);
        }
    }
    let (mean, std) = mean_std(&distances);
    Ok(EvalReport {
        metric: format!("diversity_{}", distance.name()),
        variant: variant.to_string(),
        value: mean,
        std: Some(std),
        n_images,
        n_pairs: distances.len(),
        seed,
    })
}

/// Mean over aligned pairs of `‖y − G_Y(E^c_X(x), E^a_Y(y))‖₁` (per-pixel mean).
pub fn reconstruction_error<M: Translator>(model: &M, paired: &PairedSet, variant: &str) -> Result<EvalReport> {
    if paired.pairs.is_empty() {
        return Err(Error::Protocol("reconstruction error needs aligned pairs".into()));
    }
    let errs = paired
        .pairs
        .iter()
        .map(|(x, y)| translate_guided(model, x, y)?.l1_distance(y))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&errs);
    Ok(EvalReport {
        metric: "reconstruction_l1".into(),
        variant: variant.to_string(),
        value: mean,
        std: Some(std),
        n_images: errs.len(),
        n_pairs: errs.len(),
        seed: 0,
    })
}

/// `multiplier` random translations of every labeled source image into the
/// other domain, each keeping its source label.
pub fn translate_labeled<M: Translator, R: Rng + ?Sized>(
    model: &M,
    source: &[Image],
    multiplier: usize,
    rng: &mut R,
) -> Result<Vec<Image>> {
    if multiplier == 0 {
        return Err(Error::Protocol("multiplier must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(source.len() * multiplier);
    for img in source {
        let label = img
            .label()
            .ok_or_else(|| Error::Protocol("source images must be labeled".into()))?;
        for t in translate_random(model, img, multiplier, rng)? {
            out.push(t.with_label(Some(label)));
        }
    }
    Ok(out)
}

fn check_target_labels(target_test: &[Image]) -> Result<()> {
    if target_test.is_empty() || target_test.iter().any(|i| i.label().is_none()) {
        return Err(Error::Protocol("adaptation scoring needs labeled target images".into()));
    }
    Ok(())
}

/// Accuracy (%) on labeled target images of a classifier trained on
/// `multiplier`× translated source images.
pub fn domain_adaptation_eval<M: Translator, R: Rng + ?Sized>(
    model: &M,
    source: &[Image],
    target_test: &[Image],
    multiplier: usize,
    classifier: &ClassifierConfig,
    variant: &str,
    rng: &mut R,
) -> Result<EvalReport> {
    check_target_labels(target_test)?;
    let train = translate_labeled(model, source, multiplier, rng)?;
    let acc = train_and_score(&train, target_test, classifier)?;
    Ok(EvalReport {
        metric: format!("adaptation_accuracy_x{multiplier}"),
        variant: variant.to_string(),
        value: acc,
        std: None,
        n_images: train.len(),
        n_pairs: 0,
        seed: classifier.seed,
    })
}

/// Baseline: the same classifier trained directly on labeled source images.
pub fn source_only_eval(source: &[Image], target_test: &[Image], classifier: &ClassifierConfig) -> Result<EvalReport> {
    check_target_labels(target_test)?;
    let acc = train_and_score(source, target_test, classifier)?;
    Ok(EvalReport {
        metric: "adaptation_accuracy_source_only".into(),
        variant: "none".into(),
        value: acc,
        std: None,
        n_images: source.len(),
        n_pairs: 0,
        seed: classifier.seed,
    })
}

/// A trained variant and its reports.
pub struct AblationResult {
    pub model: Model<f32>,
    pub reports: Vec<EvalReport>,
}

/// Trains `variant` under `base`'s seed and data into `dir`, then reports
/// diversity (on the first X images of `eval_images`) and paired
/// reconstruction error.
pub fn run_ablation(
    base: &TrainConfig,
    variant: Variant,
    train: &UnpairedDataset,
    eval_images: &[Image],
    paired: &PairedSet,
    protocol: &DiversityProtocol,
    dir: &Path,
) -> Result<AblationResult> {
    let mut config = base.clone();
    config.variant = variant;
    let run = run_training(&config, train, dir, &RunOptions::default())?;
    let model = run.state.model;
    let mut rng = eval_rng(base.seed);
    let mut reports = vec![
        diversity_score(&model, eval_images, protocol, variant.name(), base.seed, &mut rng)?,
        reconstruction_error(&model, paired, variant.name())?,
    ];
    for r in &mut reports {
        r.seed = base.seed;
    }
    Ok(AblationResult { model, reports })
}

/// Noise stream for evaluation, independent of the training stream.
pub fn eval_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_budget() {
        assert_eq!(outputs_for_pairs(10), 5);
        assert_eq!(outputs_for_pairs(1), 2);
        assert_eq!(outputs_for_pairs(11), 6);
    }

    #[test]
    fn table_format() {
        let r = EvalReport {
            metric: "m".into(),
            variant: "full".into(),
            value: 0.4481,
            std: Some(0.0123),
            n_images: 100,
            n_pairs: 1000,
            seed: 0,
        };
        assert_eq!(r.table_cell(), ".448 ± .012");
        assert_eq!(r.csv_row(), "m,full,0.4481,0.0123,100,1000,0");
    }
}
