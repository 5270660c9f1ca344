//! Multispectral band stacks and pseudo-RGB fusion.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nominal band wavelengths of the imaging system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Band {
    Green,
    Red,
    RedEdge,
    Nir,
}

impl Band {
    pub fn wavelength_nm(self) -> u32 {
        match self {
            Band::Green => 580,
            Band::Red => 660,
            Band::RedEdge => 730,
            Band::Nir => 820,
        }
    }

    pub fn parse(s: &str) -> Result<Band> {
        match s.to_ascii_lowercase().as_str() {
            "green" => Ok(Band::Green),
            "red" => Ok(Band::Red),
            "rededge" | "red-edge" | "red_edge" => Ok(Band::RedEdge),
            "nir" | "near-infrared" => Ok(Band::Nir),
            _ => Err(Error::value(format!("unknown band '{s}'"))),
        }
    }
}

/// Named single-channel bands sharing one geometry. The near-infrared band
/// may be stored but does not participate in fusion. Free-form sidecar
/// metadata (capture height, crop species) is carried opaquely.
#[derive(Debug, Clone)]
pub struct SpectralImage {
    bands: Vec<(Band, Vec<u16>)>,
    pub bit_depth: u8,
    pub w: usize,
    pub h: usize,
    pub metadata: serde_json::Value,
}

impl SpectralImage {
    pub fn new(w: usize, h: usize, bit_depth: u8) -> Result<SpectralImage> {
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::value(format!(
                "bit depth must be 8 or 16, got {bit_depth}"
            )));
        }
        Ok(SpectralImage {
            bands: Vec::new(),
            bit_depth,
            w,
            h,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn add_band(&mut self, band: Band, data: Vec<u16>) -> Result<()> {
        if data.len() != self.w * self.h {
            return Err(Error::shape(format!(
                "band {band:?}: {} samples for {}x{}",
                data.len(),
                self.w,
                self.h
            )));
        }
        let cap = if self.bit_depth == 8 { 255 } else { 65535 };
        if data.iter().any(|&v| v > cap) {
            return Err(Error::value(format!(
                "band {band:?}: sample exceeds {}-bit depth",
                self.bit_depth
            )));
        }
        if self.bands.iter().any(|(b, _)| *b == band) {
            return Err(Error::value(format!("band {band:?} already present")));
        }
        self.bands.push((band, data));
        Ok(())
    }

    pub fn band(&self, band: Band) -> Option<&[u16]> {
        self.bands
            .iter()
            .find(|(b, _)| *b == band)
            .map(|(_, d)| d.as_slice())
    }

    /// Content hash over geometry and band samples, for cache filenames.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.w.to_le_bytes());
        hasher.update(self.h.to_le_bytes());
        hasher.update([self.bit_depth]);
        let mut sorted: Vec<&(Band, Vec<u16>)> = self.bands.iter().collect();
        sorted.sort_by_key(|(b, _)| b.wavelength_nm());
        for (b, data) in sorted {
            hasher.update(b.wavelength_nm().to_le_bytes());
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

/// Superimpose the Red, RedEdge and Green bands into a (1, 3, h, w) tensor
/// in that channel order, then apply a single min-max normalization jointly
/// over all three channels so values land in [0, 1]. A constant stack maps
/// to all zeros.
pub fn fuse_bands(s: &SpectralImage) -> Result<Tensor> {
    let mut stacked = Vec::with_capacity(3 * s.w * s.h);
    for band in [Band::Red, Band::RedEdge, Band::Green] {
        let data = s
            .band(band)
            .ok_or_else(|| Error::value(format!("missing band {band:?}")))?;
        stacked.extend(data.iter().map(|&v| v as f64));
    }
    let mn = stacked.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = stacked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = mx - mn;
    if range > 0.0 {
        for v in &mut stacked {
            *v = (*v - mn) / range;
        }
    } else {
        stacked.fill(0.0);
    }
    Tensor::new(&[1, 3, s.h, s.w], stacked)
}
