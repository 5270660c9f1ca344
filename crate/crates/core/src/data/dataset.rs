//! Dataset indexing and loading.
//!
//! Layout: `images/<split>/` and `labels/<split>/` with matching stems.
//! Images may be PPM, PGM or PNG; labels are YOLO text files. Images
//! without a label file are kept as background images and reported.

use std::fs;
use std::path::{Path, PathBuf};

use super::labels::load_labels;
use super::pnm;
use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub stem: String,
    pub image_path: PathBuf,
    pub label_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub split: String,
    pub items: Vec<DatasetItem>,
    pub n_classes: usize,
    /// Non-fatal findings (images without labels).
    pub warnings: Vec<String>,
}

const IMAGE_EXTS: [&str; 3] = ["ppm", "pgm", "png"];

/// Index a split: deterministic lexicographic order by stem.
pub fn load_dataset(root: impl AsRef<Path>, split: &str, n_classes: usize) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let img_dir = root.join("images").join(split);
    if !img_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "missing split directory {}",
            img_dir.display()
        )));
    }
    let label_dir = root.join("labels").join(split);
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(&img_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    entries.sort_by_key(|p| p.file_stem().map(|s| s.to_os_string()));
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("bad image name {}", path.display())))?
            .to_string();
        let label_path = label_dir.join(format!("{stem}.txt"));
        let label_path = if label_path.is_file() {
            Some(label_path)
        } else {
            warnings.push(format!("image '{stem}' has no label file (background)"));
            None
        };
        items.push(DatasetItem {
            stem,
            image_path: path,
            label_path,
        });
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {}",
            img_dir.display()
        )));
    }
    Ok(DatasetIndex {
        split: split.to_string(),
        items,
        n_classes,
        warnings,
    })
}

/// One decoded sample: 3-channel pixels in [0, 1] plus its boxes.
#[derive(Debug, Clone)]
pub struct Sample {
    pub stem: String,
    /// Row-major (3, h, w) values.
    pub pixels: Vec<f64>,
    pub h: usize,
    pub w: usize,
    pub boxes: Vec<BBox>,
}

impl Sample {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 3, self.h, self.w], self.pixels.clone()).unwrap()
    }
}

/// Fully decoded dataset held in memory (desk-scale sizes).
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stack a set of samples (all equal dims) into an (n, 3, h, w) batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<Vec<BBox>>)> {
        if indices.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let (h, w) = (self.samples[indices[0]].h, self.samples[indices[0]].w);
        let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
        let mut boxes = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            if (s.h, s.w) != (h, w) {
                return Err(Error::Dataset(format!(
                    "sample '{}' dims {}x{} differ from batch {}x{}",
                    s.stem, s.h, s.w, h, w
                )));
            }
            data.extend_from_slice(&s.pixels);
            boxes.push(s.boxes.clone());
        }
        Ok((Tensor::new(&[indices.len(), 3, h, w], data)?, boxes))
    }

    pub fn gts(&self) -> Vec<Vec<BBox>> {
        self.samples.iter().map(|s| s.boxes.clone()).collect()
    }
}

/// Decode an image file into (3, h, w) unit-range pixels.
pub fn load_image_pixels(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => {
            let img = pnm::read_ppm(path)?;
            let mut out = vec![0.0; 3 * img.w * img.h];
            for (i, px) in img.data.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * img.w * img.h + i] = px[c] as f64 / 255.0;
                }
            }
            Ok((img.h, img.w, out))
        }
        "pgm" => {
            let img = pnm::read_pgm(path)?;
            let scale = img.maxval as f64;
            let plane: Vec<f64> = img.data.iter().map(|&v| v as f64 / scale).collect();
            let mut out = Vec::with_capacity(3 * plane.len());
            for _ in 0..3 {
                out.extend_from_slice(&plane);
            }
            Ok((img.h, img.w, out))
        }
        "png" => {
            let img = pnm::read_png_rgb(path)?;
            let mut out = vec![0.0; 3 * img.w * img.h];
            for (i, px) in img.data.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * img.w * img.h + i] = px[c] as f64 / 255.0;
                }
            }
            Ok((img.h, img.w, out))
        }
        other => Err(Error::Image(format!("unsupported image extension '{other}'"))),
    }
}

/// Decode every indexed item.
pub fn load_samples(index: &DatasetIndex) -> Result<LoadedDataset> {
    let mut samples = Vec::with_capacity(index.items.len());
    for item in &index.items {
        let (h, w, pixels) = load_image_pixels(&item.image_path)
            .map_err(|e| Error::Dataset(format!("item '{}': {e}", item.stem)))?;
        let boxes = match &item.label_path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                load_labels(&text, index.n_classes)
                    .map_err(|e| Error::Dataset(format!("item '{}': {e}", item.stem)))?
            }
            None => Vec::new(),
        };
        samples.push(Sample {
            stem: item.stem.clone(),
            pixels,
            h,
            w,
            boxes,
        });
    }
    Ok(LoadedDataset {
        samples,
        n_classes: index.n_classes,
    })
}
