//! Datasets: folder loading, seeded unpaired sampling, synthetic shapes with
//! known factors, and digit domains for adaptation experiments.

mod digits;
mod folder;
mod sampler;
mod synthetic;

pub use digits::{
    colorize_digit, load_adaptation_dataset, load_labeled_folder, make_source_digits, make_target_digits,
    render_digit, AdaptationDataset, DigitSpec,
};
pub use folder::{load_folder_dataset, load_paired_folder, FolderOptions};
pub use sampler::{SamplerState, UnpairedSampler};
pub use synthetic::{
    export_synthetic, extract_factors, hsv_to_rgb, hue_distance_to_range, hue_range, make_paired_synthetic, make_synthetic_dataset, mask_iou,
    render_shape, rgb_to_hsv, Extracted, Shape, ShapeFactors, SyntheticFactorDataset, HUE_RANGE_X, HUE_RANGE_Y,
};

use crate::error::{Error, Result};
use crate::image::{Domain, Image};

/// Two independently indexed image collections.
#[derive(Clone, Debug)]
pub struct UnpairedDataset {
    domains: [Vec<Image>; 2],
    /// Files that could not be decoded while loading.
    pub skipped: usize,
}

impl UnpairedDataset {
    /// Retags images with their collection's domain; both must be non-empty.
    pub fn new(x: Vec<Image>, y: Vec<Image>) -> Result<Self> {
        for (d, v) in [(Domain::X, &x), (Domain::Y, &y)] {
            if v.is_empty() {
                return Err(Error::Dataset(format!("domain {d} has no images")));
            }
        }
        let first = x[0].pixels().shape().to_vec();
        for img in x.iter().chain(&y) {
            if img.pixels().shape() != first.as_slice() {
                return Err(Error::Shape {
                    context: "dataset image".into(),
                    expected: first,
                    actual: img.pixels().shape().to_vec(),
                });
            }
        }
        let x = x.into_iter().map(|i| i.with_domain(Domain::X)).collect();
        let y = y.into_iter().map(|i| i.with_domain(Domain::Y)).collect();
        Ok(Self {
            domains: [x, y],
            skipped: 0,
        })
    }

    pub fn domain(&self, d: Domain) -> &[Image] {
        &self.domains[d.index()]
    }

    pub fn len(&self, d: Domain) -> usize {
        self.domains[d.index()].len()
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.domains[0].len(), self.domains[1].len())
    }

    /// `[channels, height, width]` shared by all images.
    pub fn image_shape(&self) -> &[usize] {
        self.domains[0][0].pixels().shape()
    }
}

/// Aligned evaluation pairs `(x_i, y_i)` sharing content.
#[derive(Clone, Debug)]
pub struct PairedSet {
    pub pairs: Vec<(Image, Image)>,
}

/// Labeled digit domains: plain source digits (X) and colorized target
/// digits (Y), plus a separate labeled target test set.
pub fn synthetic_adaptation(
    count: usize,
    test_count: usize,
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<AdaptationDataset> {
    let spec = |count, seed| DigitSpec {
        count,
        size,
        channels,
        seed,
    };
    let source = make_source_digits(&spec(count, seed))?;
    let target = make_target_digits(&spec(count, seed.wrapping_add(1)))?;
    let test = make_target_digits(&spec(test_count, seed.wrapping_add(2)))?;
    load_adaptation_dataset(source, target, test)
}

/// Training data described by a run configuration.
pub fn dataset_from_config(config: &crate::config::TrainConfig) -> Result<UnpairedDataset> {
    use crate::config::DatasetSpec;
    let a = &config.arch;
    match &config.dataset {
        DatasetSpec::Synthetic { count } => {
            if a.channels != 3 {
                return Err(Error::Config {
                    key: "channels".into(),
                    msg: "synthetic shapes are 3-channel".into(),
                });
            }
            Ok(make_synthetic_dataset(*count, a.image_size, config.seed)?.data)
        }
        DatasetSpec::Digits { count } => {
            Ok(synthetic_adaptation(*count, 1, a.image_size, a.channels, config.seed)?.train)
        }
        DatasetSpec::Folder { root } => load_folder_dataset(root, &FolderOptions::new(a.image_size, a.channels)),
    }
}

/// Decodes one image file at the given size.
pub fn load_image_file(path: &std::path::Path, domain: Domain, opts: &FolderOptions) -> Result<Image> {
    folder::load_image(path, domain, opts)
}
