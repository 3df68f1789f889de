//! Synthetic test objects in attenuation units (values in `[0, 0.05]`).

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::image::Image;

pub const PHANTOM_MAX: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhantomKind {
    /// Ten-ellipse head phantom. `symmetric` averages it with its 180 degree
    /// rotation.
    Ellipses { symmetric: bool },
    /// Value `value` on pixels whose centre lies within `radius` of the origin.
    UniformDisk { radius: f64, value: f64 },
    /// `cells x cells` board, `value` on even cells.
    Checker { cells: usize, value: f64 },
}

impl FromStr for PhantomKind {
    type Err = Error;

    /// `ellipses`, `ellipses-symmetric`, `uniform-disk` or `checker`, with
    /// default parameters.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ellipses" | "shepp-logan" => PhantomKind::Ellipses { symmetric: false },
            "ellipses-symmetric" | "shepp-logan-symmetric" => PhantomKind::Ellipses { symmetric: true },
            "uniform-disk" | "disk" => PhantomKind::UniformDisk {
                radius: f64::NAN,
                value: PHANTOM_MAX,
            },
            "checker" => PhantomKind::Checker {
                cells: 8,
                value: PHANTOM_MAX,
            },
            _ => return Err(Error::InvalidParameter(format!("unknown phantom kind {s:?}"))),
        })
    }
}

// (value, a, b, x0, y0, phi in degrees), coordinates relative to the half width.
const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn pixel_centre(geom: &Geometry, j: usize) -> (f64, f64) {
    let h = geom.half_width();
    let p = geom.pixel_pitch;
    let (row, col) = (j / geom.n_side, j % geom.n_side);
    (-h + (col as f64 + 0.5) * p, h - (row as f64 + 0.5) * p)
}

pub fn make_phantom(kind: PhantomKind, geom: &Geometry) -> Result<Image> {
    geom.validate()?;
    let n = geom.n_side;
    let h = geom.half_width();
    let data: Vec<f64> = match kind {
        PhantomKind::Ellipses { symmetric } => {
            let plain: Vec<f64> = (0..n * n)
                .map(|j| {
                    let (x, y) = pixel_centre(geom, j);
                    let (x, y) = (x / h, y / h);
                    let mut v = 0.0;
                    for &(val, a, b, x0, y0, phi) in &ELLIPSES {
                        let (s, c) = phi.to_radians().sin_cos();
                        let (dx, dy) = (x - x0, y - y0);
                        let (u, w) = (dx * c + dy * s, -dx * s + dy * c);
                        if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                            v += val;
                        }
                    }
                    (v * PHANTOM_MAX).clamp(0.0, PHANTOM_MAX)
                })
                .collect();
            if symmetric {
                (0..n * n).map(|j| 0.5 * (plain[j] + plain[n * n - 1 - j])).collect()
            } else {
                plain
            }
        }
        PhantomKind::UniformDisk { radius, value } => {
            let r = if radius.is_nan() { 0.5 * h } else { radius };
            if !(r >= 0.0) {
                return Err(Error::InvalidParameter("disk radius must be nonnegative".into()));
            }
            (0..n * n)
                .map(|j| {
                    let (x, y) = pixel_centre(geom, j);
                    if x * x + y * y <= r * r {
                        value
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        PhantomKind::Checker { cells, value } => {
            if cells == 0 {
                return Err(Error::InvalidParameter("checker needs at least one cell".into()));
            }
            (0..n * n)
                .map(|j| {
                    let (row, col) = (j / n, j % n);
                    if (row * cells / n + col * cells / n).is_multiple_of(2) {
                        value
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    Image::from_vec(n, data)
}
