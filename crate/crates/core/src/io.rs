//! File formats: grayscale image input, the `FSTK` feature-stack container,
//! palette label images and RGB overlays.
//!
//! `FSTK` layout (little-endian): `b"FSTK"`, version `u32 = 1`, `K`, `H`, `W`
//! as `u32`, then `K*H*W` f32 values, channel-major then row-major. Values are
//! stored in f32 while computation runs in f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::metrics::palette_color;
use crate::model::{FeatureStack, ImageGrid, LabelMap};

const FSTK_MAGIC: &[u8; 4] = b"FSTK";
const FSTK_VERSION: u32 = 1;
const FSTK_HEADER: usize = 20;

/// Rec. 709 luma weights used for color input.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn luma(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

/// Converts a decoded image to grayscale in `[0, 1]` (8- or 16-bit scaling).
pub fn image_to_grid(img: &DynamicImage) -> Result<ImageGrid> {
    let color = img.color();
    let bits = color.bits_per_pixel() / color.channel_count() as u16;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match (color.has_color(), bits > 8) {
        (false, false) => {
            let g = img.to_luma8();
            Array2::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0)
        }
        (false, true) => {
            let g = img.to_luma16();
            Array2::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0)
        }
        (true, false) => {
            let c = img.to_rgb8();
            Array2::from_shape_fn((h, w), |(i, j)| {
                luma(c.get_pixel(j as u32, i as u32).0.map(|v| v as f64 / 255.0))
            })
        }
        (true, true) => {
            let c = img.to_rgb16();
            Array2::from_shape_fn((h, w), |(i, j)| {
                luma(c.get_pixel(j as u32, i as u32).0.map(|v| v as f64 / 65535.0))
            })
        }
    };
    ImageGrid::new(data)
}

/// Loads a PNG or PGM file as a grayscale grid.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    image_to_grid(&img).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes an 8-bit grayscale PNG (values clamped to `[0, 1]`).
pub fn save_gray_png(f: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = f.dim();
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(f.data()[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_fstk(stack: &FeatureStack) -> Vec<u8> {
    let (k, h, w) = stack.dim();
    let mut buf = Vec::with_capacity(FSTK_HEADER + 4 * k * h * w);
    buf.extend_from_slice(FSTK_MAGIC);
    for v in [FSTK_VERSION, k as u32, h as u32, w as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in stack.maps().iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_fstk(bytes: &[u8]) -> std::result::Result<FeatureStack, String> {
    if bytes.len() < FSTK_HEADER {
        return Err(format!("header truncated ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != FSTK_MAGIC {
        return Err("bad magic (expected FSTK)".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != FSTK_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (k, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expected = k
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(4))
        .ok_or("declared size overflows")?;
    let payload = &bytes[FSTK_HEADER..];
    if payload.len() != expected {
        return Err(format!(
            "payload size mismatch: header declares {k}x{h}x{w} ({expected} bytes), found {}",
            payload.len()
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let maps = Array3::from_shape_vec((k, h, w), values).map_err(|e| e.to_string())?;
    FeatureStack::new(maps).map_err(|e| e.to_string())
}

pub fn write_fstk(stack: &FeatureStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fstk(stack)).map_err(|e| Error::io(path, e))
}

pub fn read_fstk(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_fstk(&bytes).map_err(|m| Error::format(path, m))
}

/// Palette for `classes` labels: black for 0, then the overlay colors.
fn label_palette(classes: usize) -> Vec<u8> {
    (0..classes.max(1))
        .flat_map(|c| palette_color(c as u8).unwrap_or([0, 0, 0]))
        .collect()
}

/// Writes labels as an 8-bit indexed PNG; pixel values are class indices.
pub fn write_label_png(labels: &LabelMap, mut out: impl Write) -> Result<()> {
    let (h, w) = labels.dim();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(label_palette(labels.classes()));
    let data: Vec<u8> = labels.labels().iter().copied().collect();
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::validation(format!("PNG encoding failed: {e}")))?;
    writer
        .write_image_data(&data)
        .map_err(|e| Error::validation(format!("PNG encoding failed: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::validation(format!("PNG encoding failed: {e}")))?;
    Ok(())
}

pub fn save_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_label_png(labels, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads class indices from an 8-bit indexed or 8-bit grayscale PNG.
pub fn load_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let ok_color = matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale);
    if !ok_color || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!(
                "label image must be 8-bit indexed or grayscale, got {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let labels = Array2::from_shape_fn((h, w), |(i, j)| buf[i * info.line_size + j]);
    Ok(LabelMap::from_labels(labels))
}

pub fn save_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    img.write_to(&mut w, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}
