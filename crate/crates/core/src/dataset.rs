//! Dataset ingestion: reproducible train/validation manifests, image loading
//! with area-averaging downsampling, and deterministic minibatch sampling.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Normalized image, H x W x 3 with values in [0,1].
pub type ImageTensor = Array3<f64>;

/// 8-bit RGB raster, H x W x 3 with values in [0,255].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    pub data: Array3<u8>,
}

impl PixelImage {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::Shape(format!(
                "PixelImage requires 3 channels, got {}",
                data.dim().2
            )));
        }
        Ok(PixelImage { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    /// Exact normalization to [0,1]: value / 255.
    pub fn normalize(&self) -> ImageTensor {
        self.data.mapv(|v| f64::from(v) / 255.0)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w, _) = self.data.dim();
        let standard = self.data.as_standard_layout();
        let buf: Vec<u8> = standard.iter().copied().collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
            .expect("buffer size matches dimensions");
        img.save(path).map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            other => Error::Decode {
                path: path.to_path_buf(),
                source: other,
            },
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(i, j, c)| {
            img.get_pixel(j as u32, i as u32)[c]
        });
        PixelImage { data }
    }
}

/// Deterministic train/validation split over a directory of images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub train_paths: Vec<PathBuf>,
    pub val_paths: Vec<PathBuf>,
    /// (height, width) every image is resized to when loaded.
    pub target_size: (usize, usize),
    pub seed: u64,
}

/// Scan summary produced while building a manifest.
#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub decodable: usize,
    pub skipped: Vec<PathBuf>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Split the decodable images under `root` into `val_count` validation images
/// and the remainder for training. The split is a pure function of the sorted
/// file list, `val_count`, and `seed`; undecodable files are skipped with a
/// warning and reported.
pub fn build_manifest(
    root: &Path,
    val_count: usize,
    seed: u64,
    target_size: (usize, usize),
) -> Result<(DatasetManifest, ScanReport)> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut candidates: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    candidates.sort();

    let mut report = ScanReport::default();
    let mut usable = Vec::with_capacity(candidates.len());
    for path in candidates {
        // Header-only probe; full decode happens at load time.
        match image::image_dimensions(&path) {
            Ok(_) => {
                report.decodable += 1;
                usable.push(path);
            }
            Err(e) => {
                warn!("skipping undecodable file {}: {e}", path.display());
                report.skipped.push(path);
            }
        }
    }

    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no decodable images found under {}",
            root.display()
        )));
    }
    if usable.len() < val_count + 1 {
        return Err(Error::Config(format!(
            "need at least {} decodable images for a {val_count}-image holdout, found {}",
            val_count + 1,
            usable.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    usable.shuffle(&mut rng);
    let val_paths = usable.split_off(usable.len() - val_count);
    Ok((
        DatasetManifest {
            train_paths: usable,
            val_paths,
            target_size,
            seed,
        },
        report,
    ))
}

impl DatasetManifest {
    /// Line-oriented text format: a header, then one path per line inside
    /// `[train]` / `[val]` sections.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# outpaint dataset manifest v1\n");
        out.push_str(&format!("seed: {}\n", self.seed));
        out.push_str(&format!(
            "target_size: {}x{}\n",
            self.target_size.0, self.target_size.1
        ));
        out.push_str("[train]\n");
        for p in &self.train_paths {
            out.push_str(&format!("{}\n", p.display()));
        }
        out.push_str("[val]\n");
        for p in &self.val_paths {
            out.push_str(&format!("{}\n", p.display()));
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut seed = None;
        let mut target_size = None;
        let mut section = None;
        let mut train_paths = Vec::new();
        let mut val_paths = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim().to_string();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("seed:") {
                seed = Some(rest.trim().parse::<u64>().map_err(|_| {
                    Error::ManifestFormat {
                        line: idx + 1,
                        msg: format!("bad seed {rest:?}"),
                    }
                })?);
            } else if let Some(rest) = line.strip_prefix("target_size:") {
                let parts: Vec<&str> = rest.trim().split('x').collect();
                if parts.len() != 2 {
                    return Err(Error::ManifestFormat {
                        line: idx + 1,
                        msg: format!("bad target_size {rest:?}"),
                    });
                }
                let h = parts[0].parse().map_err(|_| Error::ManifestFormat {
                    line: idx + 1,
                    msg: "bad height".into(),
                })?;
                let w = parts[1].parse().map_err(|_| Error::ManifestFormat {
                    line: idx + 1,
                    msg: "bad width".into(),
                })?;
                target_size = Some((h, w));
            } else if line == "[train]" {
                section = Some(true);
            } else if line == "[val]" {
                section = Some(false);
            } else {
                match section {
                    Some(true) => train_paths.push(PathBuf::from(&line)),
                    Some(false) => val_paths.push(PathBuf::from(&line)),
                    None => {
                        return Err(Error::ManifestFormat {
                            line: idx + 1,
                            msg: format!("path {line:?} outside any section"),
                        })
                    }
                }
            }
        }
        Ok(DatasetManifest {
            train_paths,
            val_paths,
            seed: seed.ok_or(Error::ManifestFormat {
                line: 0,
                msg: "missing seed".into(),
            })?,
            target_size: target_size.ok_or(Error::ManifestFormat {
                line: 0,
                msg: "missing target_size".into(),
            })?,
        })
    }

    /// Manifest for a single image used both for training and evaluation.
    pub fn single_image(path: PathBuf, target_size: (usize, usize), seed: u64) -> Self {
        DatasetManifest {
            train_paths: vec![path.clone()],
            val_paths: vec![path],
            target_size,
            seed,
        }
    }
}

/// Decode an image, replicate grayscale to 3 channels, and resize to
/// `target_size` by area averaging.
pub fn load_and_downsample(path: &Path, target_size: (usize, usize)) -> Result<PixelImage> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let src = PixelImage::from_rgb8(&rgb);
    Ok(area_resize(&src, target_size))
}

/// Area-averaging resample: each output pixel is the mean of the input
/// rectangle it covers, with fractional edge weights. Exact for constant
/// images and the identity at equal sizes.
pub fn area_resize(src: &PixelImage, target_size: (usize, usize)) -> PixelImage {
    let (sh, sw, _) = src.data.dim();
    let (th, tw) = target_size;
    if (sh, sw) == (th, tw) {
        return src.clone();
    }
    let scale_y = sh as f64 / th as f64;
    let scale_x = sw as f64 / tw as f64;
    let mut out = Array3::<u8>::zeros((th, tw, 3));
    for oy in 0..th {
        let y0 = oy as f64 * scale_y;
        let y1 = (oy + 1) as f64 * scale_y;
        for ox in 0..tw {
            let x0 = ox as f64 * scale_x;
            let x1 = (ox + 1) as f64 * scale_x;
            let mut acc = [0.0f64; 3];
            let mut area = 0.0f64;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(sh);
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(sw);
            for iy in iy0..iy1 {
                let wy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                for ix in ix0..ix1 {
                    let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    let w = wy * wx;
                    if w > 0.0 {
                        area += w;
                        for c in 0..3 {
                            acc[c] += w * f64::from(src.data[[iy, ix, c]]);
                        }
                    }
                }
            }
            for c in 0..3 {
                out[[oy, ox, c]] = (acc[c] / area).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    PixelImage { data: out }
}

/// Indices of the training images making up the minibatch at `step`.
///
/// Training is an infinite stream of seeded epoch shuffles: epoch `e` is
/// `train_paths` shuffled by a ChaCha stream derived from `(seed, e)`, and
/// the batch at `step` is the slice `[step*B, (step+1)*B)` of the
/// concatenated stream. Pure in `(manifest.seed, step)`.
pub fn minibatch_indices(manifest: &DatasetManifest, batch_size: usize, step: u64) -> Vec<usize> {
    let n = manifest.train_paths.len();
    let start = step as u128 * batch_size as u128;
    let mut indices = Vec::with_capacity(batch_size);
    let mut epoch = (start / n as u128) as u64;
    let mut offset = (start % n as u128) as usize;
    let mut order = epoch_order(manifest.seed, epoch, n);
    while indices.len() < batch_size {
        if offset == n {
            epoch += 1;
            offset = 0;
            order = epoch_order(manifest.seed, epoch, n);
        }
        indices.push(order[offset]);
        offset += 1;
    }
    indices
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Load the minibatch at `step` as normalized tensors. Sampling is fully
/// determined by `(manifest.seed, step)`; when `batch_size` exceeds the
/// training set the batch spans epochs, repeating images, and a warning is
/// logged.
pub fn sample_minibatch(
    manifest: &DatasetManifest,
    batch_size: usize,
    step: u64,
) -> Result<Vec<ImageTensor>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be at least 1".into()));
    }
    if manifest.train_paths.is_empty() {
        return Err(Error::Argument("manifest has no training images".into()));
    }
    if batch_size > manifest.train_paths.len() {
        warn!(
            "batch size {batch_size} exceeds {} training images; sampling with replacement",
            manifest.train_paths.len()
        );
    }
    minibatch_indices(manifest, batch_size, step)
        .into_iter()
        .map(|idx| {
            let path = &manifest.train_paths[idx];
            Ok(load_and_downsample(path, manifest.target_size)?.normalize())
        })
        .collect()
}
