//! Image and sinogram files, and 16-bit PGM previews.
//!
//! Both binary formats are an ASCII magic line, an ASCII size line and then
//! little-endian `f32` values, row-major. Sinogram files carry the data
//! followed by the same number of weights.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{min_max, Image, Sinogram, SinogramSet};

const IMAGE_MAGIC: &str = "MACEIMG1";
const SINO_MAGIC: &str = "MACESINO1";

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

fn read_header<R: BufRead>(input: &mut R, magic: &str, format: &'static str) -> Result<(usize, usize)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != magic {
        return Err(format_err(format, format!("expected magic {magic}")));
    }
    line.clear();
    input.read_line(&mut line)?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format_err(format, format!("bad size field {t:?}"))))
        .collect::<Result<_>>()?;
    match dims[..] {
        [a, b] => Ok((a, b)),
        _ => Err(format_err(format, "size line needs two integers")),
    }
}

fn write_f32s<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(input: &mut R, count: usize, format: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| format_err(format, format!("expected {count} values")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

pub fn write_image<W: Write>(mut out: W, image: &Image) -> Result<()> {
    write!(out, "{IMAGE_MAGIC}\n{} {}\n", image.side, image.side)?;
    write_f32s(&mut out, &image.data)?;
    out.flush()?;
    Ok(())
}

pub fn read_image<R: BufRead>(mut input: R) -> Result<Image> {
    let (rows, cols) = read_header(&mut input, IMAGE_MAGIC, "image")?;
    if rows != cols {
        return Err(format_err("image", "only square images are supported"));
    }
    let data = read_f32s(&mut input, rows * cols, "image")?;
    Image::from_vec(rows, data)
}

pub fn write_sinogram<W: Write>(mut out: W, sino: &SinogramSet) -> Result<()> {
    write!(out, "{SINO_MAGIC}\n{} {}\n", sino.n_views(), sino.n_channels())?;
    write_f32s(&mut out, &sino.data.values)?;
    write_f32s(&mut out, &sino.weights.values)?;
    out.flush()?;
    Ok(())
}

pub fn read_sinogram<R: BufRead>(mut input: R) -> Result<SinogramSet> {
    let (n_views, n_channels) = read_header(&mut input, SINO_MAGIC, "sinogram")?;
    let m = n_views * n_channels;
    let data = read_f32s(&mut input, m, "sinogram")?;
    let weights = read_f32s(&mut input, m, "sinogram")?;
    SinogramSet::new(
        Sinogram::from_vec(n_views, n_channels, data)?,
        Sinogram::from_vec(n_views, n_channels, weights)?,
    )
}

/// Binary 16-bit PGM, min-max scaled; a constant image maps to zero.
pub fn write_pgm<W: Write>(mut out: W, image: &Image) -> Result<()> {
    let (lo, hi) = min_max(&image.data);
    let span = hi - lo;
    write!(out, "P5\n{} {}\n65535\n", image.side, image.side)?;
    for &v in &image.data {
        let level = if span > 0.0 {
            ((v - lo) / span * 65535.0).round() as u16
        } else {
            0
        };
        out.write_all(&level.to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    write_image(BufWriter::new(File::create(path)?), image)
}

pub fn load_image(path: &Path) -> Result<Image> {
    read_image(BufReader::new(File::open(path)?))
}

pub fn save_sinogram(path: &Path, sino: &SinogramSet) -> Result<()> {
    write_sinogram(BufWriter::new(File::create(path)?), sino)
}

pub fn load_sinogram(path: &Path) -> Result<SinogramSet> {
    read_sinogram(BufReader::new(File::open(path)?))
}

pub fn save_pgm(path: &Path, image: &Image) -> Result<()> {
    write_pgm(BufWriter::new(File::create(path)?), image)
}
