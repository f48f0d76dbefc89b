//! Gaussian kernel density estimation over sentence embeddings.
//!
//! The density is an equal-weight mixture of isotropic Gaussians centred on
//! the sample points, all sharing one diagonal variance. Densities are only
//! ever evaluated in log space.

use std::f64::consts::PI;

use crate::embedding::SentenceEmbedding;
use crate::error::{Error, Result};

/// Default shared diagonal kernel variance.
pub const DEFAULT_VARIANCE: f64 = 0.01;

/// A fitted KDE. Stores the sample verbatim in a flat row-major buffer.
#[derive(Clone, Debug)]
pub struct KdeModel {
    points: Vec<f64>,
    n: usize,
    dimension: usize,
    variance: f64,
    // -(d/2) ln(2πσ²) - ln n
    log_norm: f64,
}

impl KdeModel {
    /// Validates the sample and builds the model.
    pub fn fit(embeddings: &[SentenceEmbedding], variance: f64) -> Result<Self> {
        Self::fit_rows(embeddings.iter().map(SentenceEmbedding::as_slice), variance)
    }

    /// Same as [`KdeModel::fit`] for anything yielding plain vectors.
    pub fn fit_rows<'a, I>(rows: I, variance: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!("kernel variance must be positive, got {variance}")));
        }
        let mut points = Vec::new();
        let mut dimension = None;
        let mut n = 0;
        for row in rows {
            match dimension {
                None => dimension = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::invalid(format!(
                        "inconsistent embedding dimensions: {d} and {}",
                        row.len()
                    )))
                }
                _ => {}
            }
            points.extend_from_slice(row);
            n += 1;
        }
        let dimension = match dimension {
            Some(d) if d > 0 => d,
            Some(_) => return Err(Error::invalid("zero-dimensional embeddings")),
            None => return Err(Error::invalid("cannot fit a KDE to an empty sample")),
        };
        let log_norm = -0.5 * dimension as f64 * (2.0 * PI * variance).ln() - (n as f64).ln();
        Ok(Self {
            points,
            n,
            dimension,
            variance,
            log_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dimension)
    }

    /// Natural log of the density at `x`.
    pub fn log_density(&self, x: &SentenceEmbedding) -> Result<f64> {
        self.log_density_at(x.as_slice())
    }

    pub fn log_density_at(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::invalid(format!(
                "query has dimension {}, model has {}",
                x.len(),
                self.dimension
            )));
        }
        let scale = -0.5 / self.variance;
        // Two passes: find the largest exponent, then sum shifted exponentials.
        let mut max = f64::NEG_INFINITY;
        for p in self.points() {
            let e = scale * sq_dist(p, x);
            if e > max {
                max = e;
            }
        }
        let sum: f64 = self
            .points()
            .map(|p| (scale * sq_dist(p, x) - max).exp())
            .sum();
        Ok(max + sum.ln() + self.log_norm)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Free-function form of [`KdeModel::fit`].
pub fn kde_fit(embeddings: &[SentenceEmbedding], variance: f64) -> Result<KdeModel> {
    KdeModel::fit(embeddings, variance)
}

/// Free-function form of [`KdeModel::log_density`].
pub fn kde_log_density(model: &KdeModel, x: &SentenceEmbedding) -> Result<f64> {
    model.log_density(x)
}
