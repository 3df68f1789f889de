//! Image and sinogram containers.

use crate::error::{check_len, Error, Result};

/// Square pixel grid, row-major with row 0 at the top (largest y).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(side: usize) -> Self {
        Image {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        check_len(side * side, data.len(), "image pixels")?;
        Ok(Image { side, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `max - min` over all pixels; zero for an empty image.
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = min_max(&self.data);
        if self.data.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Per-view detector data, view-major (`values[k * n_channels + d]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_channels: usize,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_channels: usize) -> Self {
        Sinogram {
            n_views,
            n_channels,
            values: vec![0.0; n_views * n_channels],
        }
    }

    pub fn from_vec(n_views: usize, n_channels: usize, values: Vec<f64>) -> Result<Self> {
        check_len(n_views * n_channels, values.len(), "sinogram entries")?;
        Ok(Sinogram {
            n_views,
            n_channels,
            values,
        })
    }

    pub fn view(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_channels..(k + 1) * self.n_channels]
    }

    pub fn view_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_channels..(k + 1) * self.n_channels]
    }

    pub fn get(&self, k: usize, d: usize) -> f64 {
        self.values[k * self.n_channels + d]
    }
}

/// Projection data `y` together with the diagonal inverse-variance weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramSet {
    pub data: Sinogram,
    pub weights: Sinogram,
}

impl SinogramSet {
    pub fn new(data: Sinogram, weights: Sinogram) -> Result<Self> {
        if data.n_views != weights.n_views || data.n_channels != weights.n_channels {
            return Err(Error::DimensionMismatch {
                expected: data.values.len(),
                actual: weights.values.len(),
                context: "sinogram weights",
            });
        }
        if weights.values.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "sinogram weights must be nonnegative".into(),
            ));
        }
        Ok(SinogramSet { data, weights })
    }

    /// Unit weights on every measurement.
    pub fn unweighted(data: Sinogram) -> Self {
        let weights = Sinogram {
            n_views: data.n_views,
            n_channels: data.n_channels,
            values: vec![1.0; data.values.len()],
        };
        SinogramSet { data, weights }
    }

    pub fn n_views(&self) -> usize {
        self.data.n_views
    }

    pub fn n_channels(&self) -> usize {
        self.data.n_channels
    }
}
