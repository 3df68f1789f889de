//! 2D parallel-beam geometry, the sparse system matrix and view partitioning.
//!
//! The image is a square of `n_side x n_side` pixels centred on the origin.
//! Pixel `j = row * n_side + col` covers
//! `x in [-h + col*pitch, -h + (col+1)*pitch)` and
//! `y in (h - (row+1)*pitch, h - row*pitch]` with `h = n_side*pitch/2`.
//!
//! At view angle `theta` the detector channel with signed offset `s` measures
//! the line integral along `{p : p . (cos theta, sin theta) = s}`. Matrix
//! entries are exact ray/pixel intersection lengths (Siddon's method).

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::image::Sinogram;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub n_side: usize,
    pub pixel_pitch: f64,
    pub n_views: usize,
    pub n_channels: usize,
    pub channel_pitch: f64,
    pub view_angles: Vec<f64>,
}

impl Geometry {
    /// Geometry with `n_views` angles uniformly spaced over `[0, pi)`.
    pub fn new(
        n_side: usize,
        pixel_pitch: f64,
        n_views: usize,
        n_channels: usize,
        channel_pitch: f64,
    ) -> Result<Self> {
        let view_angles = (0..n_views)
            .map(|k| k as f64 * PI / n_views as f64)
            .collect();
        Self::with_angles(n_side, pixel_pitch, n_channels, channel_pitch, view_angles)
    }

    pub fn with_angles(
        n_side: usize,
        pixel_pitch: f64,
        n_channels: usize,
        channel_pitch: f64,
        view_angles: Vec<f64>,
    ) -> Result<Self> {
        let geom = Geometry {
            n_side,
            pixel_pitch,
            n_views: view_angles.len(),
            n_channels,
            channel_pitch,
            view_angles,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidGeometry(msg.to_string()));
        if self.n_side == 0 {
            return bad("n_side must be at least 1");
        }
        if self.n_views == 0 || self.view_angles.len() != self.n_views {
            return bad("need at least one view and one angle per view");
        }
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1");
        }
        if !(self.pixel_pitch > 0.0) || !(self.channel_pitch > 0.0) {
            return bad("pitches must be positive");
        }
        if self.view_angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return bad("view angles must lie in [0, pi)");
        }
        if self.view_angles.windows(2).any(|w| w[1] <= w[0]) {
            return bad("view angles must be strictly increasing");
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Signed detector offset of channel `d`, centred on the rotation axis.
    pub fn channel_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_channels as f64 - 1.0) / 2.0) * self.channel_pitch
    }

    pub fn half_width(&self) -> f64 {
        self.n_side as f64 * self.pixel_pitch / 2.0
    }

    /// Pixels whose centres lie inside the inscribed circle.
    pub fn circular_roi(&self) -> Vec<bool> {
        let h = self.half_width();
        let p = self.pixel_pitch;
        (0..self.n_pixels())
            .map(|j| {
                let (row, col) = (j / self.n_side, j % self.n_side);
                let x = -h + (col as f64 + 0.5) * p;
                let y = h - (row as f64 + 0.5) * p;
                x * x + y * y <= h * h
            })
            .collect()
    }

    /// Intersection lengths of one ray with every pixel it crosses, sorted by
    /// pixel index.
    pub fn trace_ray(&self, theta: f64, offset: f64) -> Vec<(u32, f64)> {
        let h = self.half_width();
        let pitch = self.pixel_pitch;
        let n = self.n_side;
        let (c, s) = (theta.cos(), theta.sin());
        let (px, py) = (offset * c, offset * s);
        let (dx, dy) = (-s, c);
        const PARALLEL: f64 = 1e-12;

        let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (p, d) in [(px, dx), (py, dy)] {
            if d.abs() < PARALLEL {
                if p < -h || p >= h {
                    return Vec::new();
                }
            } else {
                let (a, b) = ((-h - p) / d, (h - p) / d);
                t_lo = t_lo.max(a.min(b));
                t_hi = t_hi.min(a.max(b));
            }
        }
        if !(t_hi > t_lo) {
            return Vec::new();
        }

        let mut ts = Vec::with_capacity(2 * n + 4);
        ts.push(t_lo);
        ts.push(t_hi);
        for (p, d) in [(px, dx), (py, dy)] {
            if d.abs() < PARALLEL {
                continue;
            }
            for k in 0..=n {
                let plane = -h + k as f64 * pitch;
                let t = (plane - p) / d;
                if t > t_lo && t < t_hi {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);

        let min_len = 1e-12 * pitch;
        let mut hits: Vec<(u32, f64)> = Vec::with_capacity(ts.len());
        for w in ts.windows(2) {
            let len = w[1] - w[0];
            if len <= min_len {
                continue;
            }
            let tm = 0.5 * (w[0] + w[1]);
            let (mx, my) = (px + tm * dx, py + tm * dy);
            let col = ((mx + h) / pitch).floor();
            let row = ((h - my) / pitch).floor();
            if col < 0.0 || row < 0.0 || col >= n as f64 || row >= n as f64 {
                continue;
            }
            hits.push(((row as usize * n + col as usize) as u32, len));
        }
        hits.sort_by_key(|&(j, _)| j);
        // A pixel can only be entered once along a straight line, but a
        // vanishing segment split by rounding may repeat it.
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(hits.len());
        for (j, len) in hits {
            match merged.last_mut() {
                Some((last, acc)) if *last == j => *acc += len,
                _ => merged.push((j, len)),
            }
        }
        merged
    }
}

/// Forward operator `A_k` of one view: one sparse row per detector channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseViewMatrix {
    pub view_index: usize,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl SparseViewMatrix {
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, a)| a * x[j as usize]).sum();
        }
    }

    pub fn apply_transpose_add(&self, s: &[f64], out: &mut [f64]) {
        for (&sd, row) in s.iter().zip(&self.rows) {
            if sd != 0.0 {
                for &(j, a) in row {
                    out[j as usize] += a * sd;
                }
            }
        }
    }
}

/// Builds one sparse matrix per view. Views are traced in parallel; the
/// output does not depend on thread scheduling.
pub fn build_system_matrix(geom: &Geometry) -> Result<Vec<SparseViewMatrix>> {
    geom.validate()?;
    let build_view = |k: usize| SparseViewMatrix {
        view_index: k,
        rows: (0..geom.n_channels)
            .map(|d| geom.trace_ray(geom.view_angles[k], geom.channel_offset(d)))
            .collect(),
    };
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(geom.n_views);
    if threads <= 1 {
        return Ok((0..geom.n_views).map(build_view).collect());
    }
    let chunk = geom.n_views.div_ceil(threads);
    let mut out = Vec::with_capacity(geom.n_views);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..geom.n_views)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(geom.n_views);
                scope.spawn(move || (start..end).map(build_view).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("projector thread panicked"));
        }
    });
    Ok(out)
}

/// One agent's share of the views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewSubset {
    pub subset_index: usize,
    pub view_indices: Vec<usize>,
}

/// Interleaved partition: subset `i` holds the views `m` with `m % n_subsets == i`.
pub fn partition_views(n_views: usize, n_subsets: usize) -> Result<Vec<ViewSubset>> {
    if n_subsets == 0 || n_subsets > n_views {
        return Err(Error::TooManySubsets {
            n_views,
            n_subsets,
        });
    }
    Ok((0..n_subsets)
        .map(|i| ViewSubset {
            subset_index: i,
            view_indices: (i..n_views).step_by(n_subsets).collect(),
        })
        .collect())
}

pub(crate) fn check_matrix_dims(matrices: &[SparseViewMatrix], n: usize) -> Result<usize> {
    let n_channels = matrices.first().map_or(0, |m| m.rows.len());
    for m in matrices {
        check_len(n_channels, m.rows.len(), "channels per view")?;
        if let Some(&(j, _)) = m.rows.iter().filter_map(|r| r.last()).max_by_key(|e| e.0) {
            if j as usize >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: j as usize + 1,
                    context: "system matrix pixel index",
                });
            }
        }
    }
    Ok(n_channels)
}

pub fn forward_project(matrices: &[SparseViewMatrix], x: &[f64]) -> Result<Sinogram> {
    let n_channels = check_matrix_dims(matrices, x.len())?;
    let mut sino = Sinogram::zeros(matrices.len(), n_channels);
    for (k, m) in matrices.iter().enumerate() {
        m.apply(x, sino.view_mut(k));
    }
    Ok(sino)
}

/// Exact transpose of [`forward_project`] onto an image with `n` pixels.
pub fn back_project(matrices: &[SparseViewMatrix], sino: &Sinogram, n: usize) -> Result<Vec<f64>> {
    let n_channels = check_matrix_dims(matrices, n)?;
    check_len(matrices.len(), sino.n_views, "sinogram views")?;
    check_len(n_channels, sino.n_channels, "sinogram channels")?;
    let mut out = vec![0.0; n];
    for (k, m) in matrices.iter().enumerate() {
        m.apply_transpose_add(sino.view(k), &mut out);
    }
    Ok(out)
}

const MATRIX_MAGIC: &str = "MACEMAT1";

/// Writes the matrix cache: a magic line, a `n_views n_channels n` header
/// line, then per row a little-endian `u32` count followed by
/// `(u32 index, f32 length)` pairs.
pub fn write_matrix_cache<W: Write>(
    mut out: W,
    matrices: &[SparseViewMatrix],
    n: usize,
) -> Result<()> {
    let n_channels = check_matrix_dims(matrices, n)?;
    writeln!(out, "{MATRIX_MAGIC}")?;
    writeln!(out, "{} {} {}", matrices.len(), n_channels, n)?;
    for m in matrices {
        for row in &m.rows {
            out.write_all(&(row.len() as u32).to_le_bytes())?;
            for &(j, a) in row {
                out.write_all(&j.to_le_bytes())?;
                out.write_all(&(a as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix cache written by [`write_matrix_cache`]; returns the
/// matrices and the pixel count `n`.
pub fn read_matrix_cache<R: BufRead>(mut input: R) -> Result<(Vec<SparseViewMatrix>, usize)> {
    let bad = |reason: &str| Error::Format {
        format: MATRIX_MAGIC,
        reason: reason.to_string(),
    };
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != MATRIX_MAGIC {
        return Err(bad("missing magic line"));
    }
    line.clear();
    input.read_line(&mut line)?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("unparsable header"))?;
    let [n_views, n_channels, n] = dims[..] else {
        return Err(bad("header needs three fields"));
    };
    let mut word = [0u8; 4];
    let mut next_u32 = |input: &mut R| -> Result<[u8; 4]> {
        input.read_exact(&mut word)?;
        Ok(word)
    };
    let mut matrices = Vec::with_capacity(n_views);
    for k in 0..n_views {
        let mut rows = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let count = u32::from_le_bytes(next_u32(&mut input)?) as usize;
            let mut row = Vec::with_capacity(count);
            for _ in 0..count {
                let j = u32::from_le_bytes(next_u32(&mut input)?);
                let a = f32::from_le_bytes(next_u32(&mut input)?);
                if j as usize >= n {
                    return Err(bad("pixel index out of range"));
                }
                row.push((j, a as f64));
            }
            rows.push(row);
        }
        matrices.push(SparseViewMatrix {
            view_index: k,
            rows,
        });
    }
    Ok((matrices, n))
}

pub fn save_matrix_cache(path: &Path, matrices: &[SparseViewMatrix], n: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_matrix_cache(std::io::BufWriter::new(file), matrices, n)
}

pub fn load_matrix_cache(path: &Path) -> Result<(Vec<SparseViewMatrix>, usize)> {
    let file = std::fs::File::open(path)?;
    read_matrix_cache(std::io::BufReader::new(file))
}
