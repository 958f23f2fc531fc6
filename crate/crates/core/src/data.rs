//! Labelled samples `(x_i, y_i)` and a few geometric helpers on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite sample of labelled points. All points share one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::InsufficientData("empty dataset".into()));
        }
        let dim = xs[0].len();
        if dim == 0 {
            return Err(Error::invalid("points must have at least one coordinate"));
        }
        for x in &xs {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite input coordinate"));
            }
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite label"));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs
            .iter()
            .map(Vec::as_slice)
            .zip(self.ys.iter().copied())
    }

    /// Coordinate-wise `(min, max)` of the inputs.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounding_box(&self.xs)
    }

    /// Label range `(min, max)`.
    pub fn label_range(&self) -> (f64, f64) {
        self.ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            })
    }
}

pub fn bounding_box(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = points.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    (lo, hi)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Deterministic Halton points in the box `[lo, hi]`, starting at index
/// `1 + skip`. Supports up to 16 dimensions.
pub fn halton_box(lo: &[f64], hi: &[f64], count: usize, skip: u64) -> Result<Vec<Vec<f64>>> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if lo.len() > PRIMES.len() {
        return Err(Error::invalid(format!(
            "quasi-random probes support at most {} dimensions",
            PRIMES.len()
        )));
    }
    Ok((0..count as u64)
        .map(|i| {
            lo.iter()
                .zip(hi)
                .zip(PRIMES)
                .map(|((&a, &b), p)| a + (b - a) * radical_inverse(i + 1 + skip, p as u64))
                .collect()
        })
        .collect())
}
