use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PairedSet, UnpairedDataset};
use crate::error::{io_err, Result};
use crate::image::{Domain, Image};

/// Hue interval of each domain, as a fraction of the color wheel.
pub const HUE_RANGE_X: (f64, f64) = (0.0, 0.2);
pub const HUE_RANGE_Y: (f64, f64) = (0.5, 0.7);

const BACKGROUND: f64 = 0.25;
const SATURATION: f64 = 0.85;
const VALUE: f64 = 0.95;
/// Minimum chroma (max − min channel, in `[0, 1]` units) of a foreground pixel.
const CHROMA_THRESHOLD: f64 = 0.25;
const POS_RANGE: (f64, f64) = (0.3, 0.7);

pub fn hue_range(d: Domain) -> (f64, f64) {
    match d {
        Domain::X => HUE_RANGE_X,
        Domain::Y => HUE_RANGE_Y,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether `(u, v)`, in image-size units relative to the shape center, is inside.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Circle => u * u + v * v <= 0.2 * 0.2,
            Shape::Square => u.abs() <= 0.17 && v.abs() <= 0.17,
            Shape::Triangle => {
                // Apex up, base at v = 0.17, apex at v = -0.21.
                let (top, bottom, half) = (-0.21, 0.17, 0.22);
                if v < top || v > bottom {
                    return false;
                }
                u.abs() <= half * (v - top) / (bottom - top)
            }
        }
    }
}

/// Ground truth of one rendered image. Content is `(shape, posx, posy)`;
/// the attribute is `hue`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeFactors {
    pub shape: Shape,
    /// Center, as a fraction of the image side.
    pub posx: f64,
    pub posy: f64,
    pub hue: f64,
}

impl ShapeFactors {
    fn sample_content<R: Rng>(rng: &mut R) -> (Shape, f64, f64) {
        let shape = Shape::ALL[rng.random_range(0..3)];
        let posx = rng.random_range(POS_RANGE.0..POS_RANGE.1);
        let posy = rng.random_range(POS_RANGE.0..POS_RANGE.1);
        (shape, posx, posy)
    }

    fn sample_hue<R: Rng>(rng: &mut R, d: Domain) -> f64 {
        let (lo, hi) = hue_range(d);
        rng.random_range(lo..hi)
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// `(hue, saturation, value)`, hue in `[0, 1)`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / c).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / c + 2.0) / 6.0
    } else {
        ((r - g) / c + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { c / max };
    (h, s, max)
}

fn shape_mask(shape: Shape, posx: f64, posy: f64, size: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            let u = (px as f64 + 0.5) / size as f64 - posx;
            let v = (py as f64 + 0.5) / size as f64 - posy;
            m.push(shape.contains(u, v));
        }
    }
    m
}

/// Deterministic rendering of `factors` as a 3-channel image.
pub fn render_shape(f: &ShapeFactors, size: usize, domain: Domain) -> Result<Image> {
    let mask = shape_mask(f.shape, f.posx, f.posy, size);
    let fg = hsv_to_rgb(f.hue, SATURATION, VALUE);
    let hw = size * size;
    let mut data = vec![0f32; 3 * hw];
    for (i, &inside) in mask.iter().enumerate() {
        for c in 0..3 {
            let v = if inside { fg[c] } else { BACKGROUND };
            data[c * hw + i] = (2.0 * v - 1.0) as f32;
        }
    }
    Image::new(Tensor::new(&[3, size, size], data), domain)
}

/// Factors read back from pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Extracted {
    /// Foreground pixels in row-major order.
    pub mask: Vec<bool>,
    /// Hue of the mean foreground color; absent when nothing is foreground.
    pub hue: Option<f64>,
    pub shape: Option<Shape>,
    /// Mask centroid as a fraction of the image side.
    pub center: Option<(f64, f64)>,
}

impl Extracted {
    /// Domain whose hue range is nearest on the color wheel.
    pub fn domain(&self) -> Option<Domain> {
        let h = self.hue?;
        let dx = hue_distance_to_range(h, HUE_RANGE_X);
        let dy = hue_distance_to_range(h, HUE_RANGE_Y);
        Some(if dx <= dy { Domain::X } else { Domain::Y })
    }
}

/// Circular distance from `h` to the interval `range` (0 inside it).
pub fn hue_distance_to_range(h: f64, range: (f64, f64)) -> f64 {
    let h = h.rem_euclid(1.0);
    if h >= range.0 && h <= range.1 {
        return 0.0;
    }
    let circ = |a: f64, b: f64| {
        let d = (a - b).abs();
        d.min(1.0 - d)
    };
    circ(h, range.0).min(circ(h, range.1))
}

/// Foreground mask by chroma, hue of the mean foreground color, and the
/// shape template with the best overlap at the mask centroid.
pub fn extract_factors(img: &Image) -> Extracted {
    let (h, w) = (img.height(), img.width());
    let hw = h * w;
    let d = img.pixels().data();
    let to01 = |v: f32| (v as f64 + 1.0) / 2.0;
    let mut mask = vec![false; hw];
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..hw {
        let rgb = if img.channels() == 3 {
            [to01(d[i]), to01(d[hw + i]), to01(d[2 * hw + i])]
        } else {
            [to01(d[i]); 3]
        };
        let chroma = rgb.iter().cloned().fold(f64::MIN, f64::max) - rgb.iter().cloned().fold(f64::MAX, f64::min);
        if chroma > CHROMA_THRESHOLD {
            mask[i] = true;
            for c in 0..3 {
                sum[c] += rgb[c];
            }
            count += 1;
            cx += (i % w) as f64 + 0.5;
            cy += (i / w) as f64 + 0.5;
        }
    }
    if count == 0 {
        return Extracted {
            mask,
            hue: None,
            shape: None,
            center: None,
        };
    }
    let mean = sum.map(|s| s / count as f64);
    let (hue, _, _) = rgb_to_hsv(mean);
    let center = (cx / count as f64 / w as f64, cy / count as f64 / h as f64);
    let shape = (h == w).then(|| {
        let mut best = (Shape::Circle, -1.0);
        for s in Shape::ALL {
            let iou = mask_iou(&mask, &shape_mask(s, center.0, center.1, h));
            if iou > best.1 {
                best = (s, iou);
            }
        }
        best.0
    });
    Extracted {
        mask,
        hue: Some(hue),
        shape,
        center: Some(center),
    }
}

/// Intersection over union; two empty masks count as identical.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(p, q)| **p && **q).count();
    let union = a.iter().zip(b).filter(|(p, q)| **p || **q).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Unpaired shapes with per-image ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticFactorDataset {
    pub data: UnpairedDataset,
    pub factors: [Vec<ShapeFactors>; 2],
}

/// `n` images per domain. Content factors are drawn independently for each
/// domain from the same distribution; hues come from the domain's range.
pub fn make_synthetic_dataset(n: usize, size: usize, seed: u64) -> Result<SyntheticFactorDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = [Vec::new(), Vec::new()];
    let mut images = [Vec::new(), Vec::new()];
    for d in [Domain::X, Domain::Y] {
        for _ in 0..n {
            let (shape, posx, posy) = ShapeFactors::sample_content(&mut rng);
            let hue = ShapeFactors::sample_hue(&mut rng, d);
            let f = ShapeFactors { shape, posx, posy, hue };
            images[d.index()].push(render_shape(&f, size, d)?);
            factors[d.index()].push(f);
        }
    }
    let [x, y] = images;
    Ok(SyntheticFactorDataset {
        data: UnpairedDataset::new(x, y)?,
        factors,
    })
}

/// Aligned pairs: same shape and position, hue drawn from each domain's range.
pub fn make_paired_synthetic(n: usize, size: usize, seed: u64) -> Result<(PairedSet, Vec<(ShapeFactors, ShapeFactors)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n);
    for _ in 0..n {
        let (shape, posx, posy) = ShapeFactors::sample_content(&mut rng);
        let fx = ShapeFactors {
            shape,
            posx,
            posy,
            hue: ShapeFactors::sample_hue(&mut rng, Domain::X),
        };
        let fy = ShapeFactors {
            hue: ShapeFactors::sample_hue(&mut rng, Domain::Y),
            ..fx
        };
        pairs.push((render_shape(&fx, size, Domain::X)?, render_shape(&fy, size, Domain::Y)?));
        factors.push((fx, fy));
    }
    Ok((PairedSet { pairs }, factors))
}

/// Writes `trainA/`, `trainB/`, optional aligned `testA/`/`testB/`, and
/// `factors.csv` (`filename,domain,shape,posx,posy,hue`; file names are
/// relative to `dir`).
pub fn export_synthetic(
    ds: &SyntheticFactorDataset,
    test: Option<(&PairedSet, &[(ShapeFactors, ShapeFactors)])>,
    dir: &Path,
) -> Result<()> {
    let mut csv = String::from("filename,domain,shape,posx,posy,hue\n");
    let mut row = |name: &str, d: Domain, f: &ShapeFactors| {
        let _ = writeln!(
            csv,
            "{name},{},{},{:.6},{:.6},{:.6}",
            d.tag(),
            f.shape.name(),
            f.posx,
            f.posy,
            f.hue
        );
    };
    for (d, sub) in [(Domain::X, "trainA"), (Domain::Y, "trainB")] {
        for (i, (img, f)) in ds.data.domain(d).iter().zip(&ds.factors[d.index()]).enumerate() {
            let name = format!("{sub}/{:05}.png", i);
            img.save_png(&dir.join(&name))?;
            row(&name, d, f);
        }
    }
    if let Some((set, factors)) = test {
        for (i, ((x, y), (fx, fy))) in set.pairs.iter().zip(factors).enumerate() {
            let a = format!("testA/{:05}.png", i);
            let b = format!("testB/{:05}.png", i);
            x.save_png(&dir.join(&a))?;
            y.save_png(&dir.join(&b))?;
            row(&a, Domain::X, fx);
            row(&b, Domain::Y, fy);
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("factors.csv");
    fs::write(&path, csv).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for i in 0..50 {
            let h = i as f64 / 50.0;
            let (h2, s, v) = rgb_to_hsv(hsv_to_rgb(h, 0.7, 0.8));
            assert!((h - h2).abs() < 1e-9 && (s - 0.7).abs() < 1e-9 && (v - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn extractor_recovers_shape_and_position() {
        let f = ShapeFactors {
            shape: Shape::Triangle,
            posx: 0.4,
            posy: 0.6,
            hue: 0.6,
        };
        let img = render_shape(&f, 64, Domain::Y).unwrap();
        let e = extract_factors(&img);
        assert_eq!(e.shape, Some(Shape::Triangle));
        assert_eq!(e.domain(), Some(Domain::Y));
        assert!((e.hue.unwrap() - 0.6).abs() < 1e-6);
    }

    #[test]
    fn hue_distance_wraps() {
        assert_eq!(hue_distance_to_range(0.1, HUE_RANGE_X), 0.0);
        assert!((hue_distance_to_range(0.97, HUE_RANGE_X) - 0.03).abs() < 1e-12);
        assert!((hue_distance_to_range(0.45, HUE_RANGE_Y) - 0.05).abs() < 1e-12);
    }
}
