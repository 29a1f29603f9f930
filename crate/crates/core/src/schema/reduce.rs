//! Dimensionality reduction behind a small, serializable parameter type.
//!
//! The default is a seeded Gaussian random projection followed by
//! re-normalization. It is data-independent, so the parameters are just the
//! seed and the two dimensions; the projection matrix is regenerated on load.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{self, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    Identity,
    GaussianProjection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReducerParams {
    Identity {
        dimension: usize,
    },
    GaussianProjection {
        seed: u64,
        input_dim: usize,
        output_dim: usize,
        #[serde(skip)]
        matrix: OnceLock<Vec<f64>>,
    },
}

impl Clone for ReducerParams {
    fn clone(&self) -> Self {
        match self {
            ReducerParams::Identity { dimension } => ReducerParams::Identity { dimension: *dimension },
            ReducerParams::GaussianProjection {
                seed,
                input_dim,
                output_dim,
                ..
            } => ReducerParams::gaussian(*seed, *input_dim, *output_dim),
        }
    }
}

impl PartialEq for ReducerParams {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ReducerParams::Identity { dimension: a }, ReducerParams::Identity { dimension: b }) => a == b,
            (
                ReducerParams::GaussianProjection {
                    seed: s1,
                    input_dim: i1,
                    output_dim: o1,
                    ..
                },
                ReducerParams::GaussianProjection {
                    seed: s2,
                    input_dim: i2,
                    output_dim: o2,
                    ..
                },
            ) => (s1, i1, o1) == (s2, i2, o2),
            _ => false,
        }
    }
}

impl ReducerParams {
    pub fn gaussian(seed: u64, input_dim: usize, output_dim: usize) -> Self {
        ReducerParams::GaussianProjection {
            seed,
            input_dim,
            output_dim,
            matrix: OnceLock::new(),
        }
    }

    pub fn new(kind: ReducerKind, seed: u64, input_dim: usize, output_dim: usize) -> Result<Self> {
        match kind {
            ReducerKind::Identity => Ok(ReducerParams::Identity { dimension: input_dim }),
            ReducerKind::GaussianProjection if output_dim == 0 || output_dim >= input_dim => Err(Error::invalid(
                "reducer",
                format!("target dimension {output_dim} must be in 1..{input_dim}"),
            )),
            ReducerKind::GaussianProjection => Ok(ReducerParams::gaussian(seed, input_dim, output_dim)),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ReducerParams::Identity { dimension } => *dimension,
            ReducerParams::GaussianProjection { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ReducerParams::Identity { dimension } => *dimension,
            ReducerParams::GaussianProjection { output_dim, .. } => *output_dim,
        }
    }

    /// Row-major `output_dim x input_dim` matrix with N(0, 1) entries.
    fn matrix(&self) -> Option<&[f64]> {
        match self {
            ReducerParams::Identity { .. } => None,
            ReducerParams::GaussianProjection {
                seed,
                input_dim,
                output_dim,
                matrix,
            } => Some(matrix.get_or_init(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..input_dim * output_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })),
        }
    }

    /// Projects without re-normalizing.
    pub fn project_raw<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        Ok(match self.matrix() {
            None => v.to_vec(),
            Some(m) => m
                .chunks_exact(self.input_dim())
                .map(|row| row.iter().zip(v).map(|(&w, &x)| T::of(w) * x).sum())
                .collect(),
        })
    }

    /// Projects `v` and scales the result to unit length. A projection that
    /// collapses to zero is left as the zero vector. The identity passes its
    /// (already unit) input through untouched.
    pub fn project<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        let mut out = self.project_raw(v)?;
        if let ReducerParams::GaussianProjection { .. } = self {
            num::normalize_in_place(&mut out);
        }
        Ok(out)
    }
}

/// Fits (trivially, for the data-independent reducers) and applies a
/// reduction to `vectors`.
pub fn reduce<T: Scalar, V: AsRef<[T]>>(
    vectors: &[V],
    kind: ReducerKind,
    target_dim: usize,
    seed: u64,
) -> Result<(Vec<Vec<T>>, ReducerParams)> {
    if vectors.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: vectors.len(),
        });
    }
    let input_dim = vectors[0].as_ref().len();
    let params = match kind {
        ReducerKind::Identity if target_dim != input_dim => {
            return Err(Error::invalid("reducer", "identity reducer needs target_dim = D"))
        }
        _ => ReducerParams::new(kind, seed, input_dim, target_dim)?,
    };
    let reduced = vectors
        .iter()
        .map(|v| params.project(v.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok((reduced, params))
}
