use std::fs;
use std::path::{Path, PathBuf};

use ::image::imageops::FilterType;
use sha2::{Digest, Sha256};

use super::{PairedSet, UnpairedDataset};
use crate::error::{io_err, Error, Result};
use crate::image::{Domain, Image};

/// Resize filter used for every decoded file.
const FILTER: FilterType = FilterType::Triangle;
const FILTER_NAME: &str = "bilinear";

#[derive(Clone, Debug)]
pub struct FolderOptions {
    pub image_size: usize,
    /// 1 decodes as grayscale, 3 as RGB.
    pub channels: usize,
    /// Decoded 8-bit arrays are stored here, keyed by path, size and filter.
    pub cache_dir: Option<PathBuf>,
}

impl FolderOptions {
    pub fn new(image_size: usize, channels: usize) -> Self {
        Self {
            image_size,
            channels,
            cache_dir: None,
        }
    }
}

/// Regular files of `dir`, sorted by name.
pub(crate) fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn cache_key(path: &Path, opts: &FolderOptions) -> Option<String> {
    let meta = fs::metadata(path).ok()?;
    let mtime = meta.modified().ok()?.duration_since(std::time::UNIX_EPOCH).ok()?;
    let canon = path.canonicalize().ok()?;
    let mut h = Sha256::new();
    h.update(canon.to_string_lossy().as_bytes());
    h.update(format!(
        "|{}|{}|{}|{}|{}",
        meta.len(),
        mtime.as_nanos(),
        opts.image_size,
        opts.channels,
        FILTER_NAME
    ));
    Some(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn decode(path: &Path, opts: &FolderOptions) -> Result<Vec<u8>> {
    let cached = opts
        .cache_dir
        .as_ref()
        .and_then(|dir| cache_key(path, opts).map(|k| dir.join(format!("{k}.u8"))));
    let expected = opts.image_size * opts.image_size * opts.channels;
    if let Some(c) = &cached {
        if let Ok(bytes) = fs::read(c) {
            if bytes.len() == expected {
                return Ok(bytes);
            }
        }
    }
    let img = ::image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let s = opts.image_size as u32;
    let resized = img.resize_exact(s, s, FILTER);
    let bytes = match opts.channels {
        1 => resized.to_luma8().into_raw(),
        3 => resized.to_rgb8().into_raw(),
        c => return Err(Error::InvalidImage(format!("unsupported channel count {c}"))),
    };
    if let Some(c) = &cached {
        if let Some(dir) = c.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(c, &bytes).map_err(io_err(c))?;
    }
    Ok(bytes)
}

/// Decodes one file into a normalized image.
pub(crate) fn load_image(path: &Path, domain: Domain, opts: &FolderOptions) -> Result<Image> {
    let bytes = decode(path, opts)?;
    Image::from_u8(&bytes, opts.channels, opts.image_size, opts.image_size, domain)
}

/// Loads every decodable file of `dir`; failures are logged and counted.
pub(crate) fn load_dir(dir: &Path, domain: Domain, opts: &FolderOptions) -> Result<(Vec<(PathBuf, Image)>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for path in list_files(dir)? {
        match load_image(&path, domain, opts) {
            Ok(img) => out.push((path, img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

/// Reads `root/trainA` (domain X) and `root/trainB` (domain Y).
pub fn load_folder_dataset(root: &Path, opts: &FolderOptions) -> Result<UnpairedDataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut sides = Vec::new();
    let mut skipped = 0;
    for (sub, d) in [("trainA", Domain::X), ("trainB", Domain::Y)] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            return Err(Error::Dataset(format!("missing {}", dir.display())));
        }
        let (imgs, s) = load_dir(&dir, d, opts)?;
        skipped += s;
        if imgs.is_empty() {
            return Err(Error::Dataset(format!("domain {d} ({}) has no readable images", dir.display())));
        }
        sides.push(imgs.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
    }
    if skipped > 0 {
        log::warn!("{skipped} unreadable files skipped under {}", root.display());
    }
    let y = sides.pop().unwrap_or_default();
    let x = sides.pop().unwrap_or_default();
    let mut ds = UnpairedDataset::new(x, y)?;
    ds.skipped = skipped;
    Ok(ds)
}

/// Pairs `root/testA/NAME` with `root/testB/NAME`.
pub fn load_paired_folder(root: &Path, opts: &FolderOptions) -> Result<PairedSet> {
    let (a, b) = (root.join("testA"), root.join("testB"));
    if !a.is_dir() || !b.is_dir() {
        return Err(Error::Protocol(format!(
            "reconstruction error needs aligned pairs in {} and {}",
            a.display(),
            b.display()
        )));
    }
    let (xs, _) = load_dir(&a, Domain::X, opts)?;
    let (ys, _) = load_dir(&b, Domain::Y, opts)?;
    let mut pairs = Vec::new();
    for (path, x) in xs {
        if let Some((_, y)) = ys.iter().find(|(p, _)| p.file_name() == path.file_name()) {
            pairs.push((x, y.clone()));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Protocol(format!(
            "no file names shared between {} and {}",
            a.display(),
            b.display()
        )));
    }
    Ok(PairedSet { pairs })
}
