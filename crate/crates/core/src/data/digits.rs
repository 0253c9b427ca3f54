use std::collections::HashMap;
use std::fs;
use std::path::Path;

use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::folder::{list_files, load_image, FolderOptions};
use super::UnpairedDataset;
use crate::error::{io_err, Error, Result};
use crate::image::{Domain, Image};

const GLYPHS: [[&str; 7]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

fn glyph_on(digit: usize, col: i64, row: i64) -> bool {
    if !(0..5).contains(&col) || !(0..7).contains(&row) {
        return false;
    }
    GLYPHS[digit][row as usize].as_bytes()[col as usize] == b'1'
}

/// Stroke intensity in `[0, 1]` of a randomly scaled, sheared, shifted and
/// thickened glyph, `size × size`, row-major.
pub fn render_digit<R: Rng>(digit: usize, size: usize, rng: &mut R) -> Vec<f32> {
    let s = size as f64;
    let cell = rng.random_range(0.085..0.115) * s;
    let shear = rng.random_range(-0.25..0.25);
    let cx = s / 2.0 + rng.random_range(-0.07..0.07) * s;
    let cy = s / 2.0 + rng.random_range(-0.07..0.07) * s;
    let thick = rng.random_range(0.45..0.8);
    const SUB: usize = 3;
    let mut out = vec![0f32; size * size];
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let x = px as f64 + (sx as f64 + 0.5) / SUB as f64 - cx;
                    let y = py as f64 + (sy as f64 + 0.5) / SUB as f64 - cy;
                    // Glyph coordinates, origin at the glyph center.
                    let gy = y / cell + 3.5;
                    let gx = (x - shear * y) / cell + 2.5;
                    let (col, row) = (gx.floor() as i64, gy.floor() as i64);
                    let mut on = false;
                    'near: for dr in -1..=1 {
                        for dc in -1..=1 {
                            if glyph_on(digit, col + dc, row + dr) {
                                let ux = (gx - (col + dc) as f64 - 0.5).abs();
                                let uy = (gy - (row + dr) as f64 - 0.5).abs();
                                if ux.max(uy) <= thick {
                                    on = true;
                                    break 'near;
                                }
                            }
                        }
                    }
                    hits += on as usize;
                }
            }
            out[py * size + px] = hits as f32 / (SUB * SUB) as f32;
        }
    }
    out
}

fn gray_image(intensity: &[f32], size: usize, channels: usize, domain: Domain) -> Result<Image> {
    let mut data = Vec::with_capacity(channels * size * size);
    for _ in 0..channels {
        data.extend(intensity.iter().map(|&v| 2.0 * v - 1.0));
    }
    Image::new(Tensor::new(&[channels, size, size], data), domain)
}

/// Paints a stroke map onto a random flat color: each channel is
/// `|background − stroke|`, so light backgrounds invert the digit.
pub fn colorize_digit<R: Rng>(intensity: &[f32], size: usize, channels: usize, rng: &mut R) -> Result<Image> {
    let hw = size * size;
    let mut data = vec![0f32; channels * hw];
    for c in 0..channels {
        let bg: f32 = rng.random_range(0.0..1.0);
        for i in 0..hw {
            let v = (bg - intensity[i]).abs();
            data[c * hw + i] = 2.0 * v - 1.0;
        }
    }
    Image::new(Tensor::new(&[channels, size, size], data), Domain::Y)
}

#[derive(Clone, Copy, Debug)]
pub struct DigitSpec {
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
}

/// Plain light-on-dark digits, labeled, domain X.
pub fn make_source_digits(spec: &DigitSpec) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| {
            let label = rng.random_range(0..10);
            let ink = render_digit(label, spec.size, &mut rng);
            Ok(gray_image(&ink, spec.size, spec.channels, Domain::X)?.with_label(Some(label)))
        })
        .collect()
}

/// Digits on flat random colors, labeled, domain Y.
pub fn make_target_digits(spec: &DigitSpec) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    (0..spec.count)
        .map(|_| {
            let label = rng.random_range(0..10);
            let ink = render_digit(label, spec.size, &mut rng);
            Ok(colorize_digit(&ink, spec.size, spec.channels, &mut rng)?.with_label(Some(label)))
        })
        .collect()
}

/// Reads `dir/labels.csv` (`filename,label`) and the images it names.
pub fn load_labeled_folder(dir: &Path, opts: &FolderOptions, domain: Domain) -> Result<Vec<Image>> {
    let csv_path = dir.join("labels.csv");
    let text = fs::read_to_string(&csv_path).map_err(io_err(&csv_path))?;
    let mut labels = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("filename")) {
            continue;
        }
        let (name, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Dataset(format!("{}:{}: expected filename,label", csv_path.display(), n + 1)))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("{}:{}: bad label `{label}`", csv_path.display(), n + 1)))?;
        labels.insert(name.trim().to_string(), label);
    }
    let files: Vec<_> = list_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != "labels.csv"))
        .collect();
    if files.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{}: {} images but {} labels",
            dir.display(),
            files.len(),
            labels.len()
        )));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let label = *labels
                .get(name)
                .ok_or_else(|| Error::Dataset(format!("{} has no label", p.display())))?;
            Ok(load_image(p, domain, opts)?.with_label(Some(label)))
        })
        .collect()
}

/// Source and target domains for translation-based adaptation.
#[derive(Clone, Debug)]
pub struct AdaptationDataset {
    /// X carries source labels; Y labels are stripped.
    pub train: UnpairedDataset,
    /// Labeled target images, used only to score classifiers.
    pub target_test: Vec<Image>,
}

impl AdaptationDataset {
    pub fn source(&self) -> &[Image] {
        self.train.domain(Domain::X)
    }
}

/// Builds the adaptation split. Every source and held-out target image must
/// carry a label; training-side target labels are hidden.
pub fn load_adaptation_dataset(
    source: Vec<Image>,
    target_train: Vec<Image>,
    target_test: Vec<Image>,
) -> Result<AdaptationDataset> {
    if let Some(i) = source.iter().position(|img| img.label().is_none()) {
        return Err(Error::Dataset(format!("source image {i} has no label")));
    }
    if target_test.is_empty() {
        return Err(Error::Dataset("no held-out target images".into()));
    }
    if let Some(i) = target_test.iter().position(|img| img.label().is_none()) {
        return Err(Error::Dataset(format!("held-out target image {i} has no label")));
    }
    let target_train = target_train.into_iter().map(|i| i.with_label(None)).collect();
    let target_test = target_test.into_iter().map(|i| i.with_domain(Domain::Y)).collect();
    Ok(AdaptationDataset {
        train: UnpairedDataset::new(source, target_train)?,
        target_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_distinct() {
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(GLYPHS[a], GLYPHS[b]);
            }
        }
    }

    #[test]
    fn digits_have_ink_and_stay_in_range() {
        let spec = DigitSpec {
            count: 20,
            size: 32,
            channels: 3,
            seed: 5,
        };
        for img in make_source_digits(&spec).unwrap().iter().chain(&make_target_digits(&spec).unwrap()) {
            assert!(img.label().unwrap() < 10);
            let ink = img.pixels().data().iter().filter(|&&v| v > 0.0).count();
            assert!(ink > 0);
        }
    }
}
