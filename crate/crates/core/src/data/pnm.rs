//! Binary PGM/PPM readers and writers (8- and 16-bit), plus PNG via the
//! `png` crate. These cover the band files, fused pseudo-RGB images and
//! the synthetic dataset with bit-exact, dependency-light round-trips.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with 8- or 16-bit samples stored as u16.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub w: usize,
    pub h: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

fn split_header(bytes: &[u8], n_fields: usize) -> Result<(Vec<usize>, usize)> {
    // header fields separated by whitespace; '#' starts a comment line
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < n_fields {
        if i >= bytes.len() {
            return Err(Error::Image("truncated PNM header".into()));
        }
        match bytes[i] {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let s = std::str::from_utf8(&bytes[start..i])
                    .map_err(|_| Error::Image("non-ascii PNM header".into()))?;
                fields.push(
                    s.parse::<usize>()
                        .map_err(|_| Error::Image(format!("bad PNM header field '{s}'")))?,
                );
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() {
        return Err(Error::Image("truncated PNM file".into()));
    }
    Ok((fields, i + 1))
}

fn read_samples(raw: &[u8], count: usize, maxval: usize) -> Result<Vec<u16>> {
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("unsupported PNM maxval {maxval}")));
    }
    if maxval < 256 {
        if raw.len() < count {
            return Err(Error::Image("truncated PNM raster".into()));
        }
        Ok(raw[..count].iter().map(|&b| b as u16).collect())
    } else {
        if raw.len() < count * 2 {
            return Err(Error::Image("truncated PNM raster".into()));
        }
        Ok(raw[..count * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect())
    }
}

pub fn read_pgm_bytes(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Image("not a binary PGM (P5) file".into()));
    }
    let (fields, raster_at) = split_header(&bytes[2..], 3)?;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    let data = read_samples(&bytes[2 + raster_at..], w * h, maxval)?;
    Ok(GrayImage {
        w,
        h,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pgm_bytes(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    fs::write(path, pgm_bytes(img))?;
    Ok(())
}

pub fn pgm_bytes(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n{}\n", img.w, img.h, img.maxval).unwrap();
    if img.maxval < 256 {
        out.extend(img.data.iter().map(|&v| v as u8));
    } else {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub w: usize,
    pub h: usize,
    /// Interleaved r, g, b rows.
    pub data: Vec<u8>,
}

pub fn read_ppm_bytes(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Image("not a binary PPM (P6) file".into()));
    }
    let (fields, raster_at) = split_header(&bytes[2..], 3)?;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported PPM maxval {maxval}")));
    }
    let raw = &bytes[2 + raster_at..];
    if raw.len() < w * h * 3 {
        return Err(Error::Image("truncated PPM raster".into()));
    }
    Ok(RgbImage {
        w,
        h,
        data: raw[..w * h * 3].to_vec(),
    })
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_ppm_bytes(&fs::read(path)?)
}

pub fn ppm_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    write!(out, "P6\n{} {}\n255\n", img.w, img.h).unwrap();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    fs::write(path, ppm_bytes(img))?;
    Ok(())
}

/// Write an 8-bit RGB PNG. Encoding settings are fixed, so identical
/// pixels produce identical bytes.
pub fn write_png_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), img.w as u32, img.h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(format!("png: {e}")))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| Error::Image(format!("png: {e}")))?;
    Ok(())
}

/// Read a PNG as 8-bit RGB (grayscale and 16-bit inputs are converted).
pub fn read_png_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let file = fs::File::open(path.as_ref())?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let to8 = |hi: u8, _lo: u8| hi;
    let data: Vec<u8> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => bytes.to_vec(),
        (png::ColorType::Rgba, png::BitDepth::Eight) => bytes
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            bytes.iter().flat_map(|&v| [v, v, v]).collect()
        }
        (png::ColorType::Rgb, png::BitDepth::Sixteen) => bytes
            .chunks_exact(2)
            .map(|c| to8(c[0], c[1]))
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => bytes
            .chunks_exact(2)
            .flat_map(|c| [to8(c[0], c[1]); 3])
            .collect(),
        (ct, bd) => {
            return Err(Error::Image(format!(
                "unsupported PNG layout {ct:?}/{bd:?}"
            )))
        }
    };
    if data.len() != w * h * 3 {
        return Err(Error::Image("PNG size mismatch".into()));
    }
    Ok(RgbImage { w, h, data })
}
