//! 8-bit grayscale image files: binary PGM (`P5`) and PNG.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageReader};

use super::Image;
use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Parses a binary PGM. Samples are rescaled by `maxval` into `[0, 1]`.
pub fn read_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |reason: &str| Error::invalid("pgm", reason.to_string());
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if next_token(&mut pos).as_deref() != Some("P5") {
        return Err(bad("missing P5 magic"));
    }
    let num = |pos: &mut usize| -> Result<usize> {
        next_token(pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("malformed header"))
    };
    let width = num(&mut pos)?;
    let height = num(&mut pos)?;
    let maxval = num(&mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < width * height * bytes_per {
        return Err(bad("truncated raster"));
    }
    let scale = maxval as f64;
    let data = (0..width * height)
        .map(|i| {
            let v = if bytes_per == 1 {
                raster[i] as f64
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            };
            (v / scale).min(1.0)
        })
        .collect();
    Image::new(width, height, data)
}

/// Encodes an image as 8-bit binary PGM.
pub fn write_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.intensities().iter().map(|&v| to_u8(v)));
    out
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a grayscale image; `.pgm` files are parsed directly, anything else
/// goes through the PNG decoder and is converted to 8-bit luma.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if is_pgm(path) {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        return read_pgm(&bytes);
    }
    let luma = decode_luma(path)?;
    let (w, h) = luma.dimensions();
    Image::new(
        w as usize,
        h as usize,
        luma.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    if is_pgm(path) {
        let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        return f.write_all(&write_pgm(img)).map_err(|e| io_err(path, e));
    }
    let raw = img.intensities().iter().map(|&v| to_u8(v)).collect();
    let buf = GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|source| Error::Codec {
        path: path.display().to_string(),
        source,
    })
}

fn decode_luma(path: &Path) -> Result<GrayImage> {
    let codec = |source| Error::Codec {
        path: path.display().to_string(),
        source,
    };
    let reader = ImageReader::open(path).map_err(|e| io_err(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| io_err(path, e))?;
    Ok(reader.decode().map_err(codec)?.into_luma8())
}

/// Reads raw 8-bit label values (for indexed masks and 0/255 channels alike).
pub fn load_label_values(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    if is_pgm(path) {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let img = read_pgm(&bytes)?;
        let vals = img.intensities().iter().map(|&v| to_u8(v)).collect();
        return Ok((img.width(), img.height(), vals));
    }
    let luma = decode_luma(path)?;
    let (w, h) = luma.dimensions();
    Ok((w as usize, h as usize, luma.into_raw()))
}

/// Loads one binary mask channel; any non-zero pixel is foreground.
pub fn load_mask_channel(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let (w, h, vals) = load_label_values(path)?;
    Ok((w, h, vals.into_iter().map(|v| v != 0).collect()))
}

/// Writes one mask channel as a 0/255 PNG (or PGM by extension).
pub fn save_mask_channel(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channel: &[bool],
) -> Result<()> {
    let data = channel.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    save_image(path, &Image::new(width, height, data)?)
}
