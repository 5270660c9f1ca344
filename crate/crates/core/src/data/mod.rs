//! Dataset ingestion: image decoding, YOLO-format labels, multispectral
//! band fusion, dataset indexing and the synthetic dataset generator.

mod dataset;
mod labels;
pub mod pnm;
mod spectral;
mod synth;

pub use dataset::{
    load_dataset, load_image_pixels, load_samples, DatasetIndex, DatasetItem, LoadedDataset,
    Sample,
};
pub use labels::{load_labels, serialize_labels};
pub use spectral::{fuse_bands, Band, SpectralImage};
pub use synth::{synth_dataset, synth_image, Shape, ShapeKind, SynthImage};
