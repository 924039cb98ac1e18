//! Flat parameter vectors and seeded randomness.
//!
//! Every model (global `w`, personalized `theta`, prior means, gradients) is
//! flattened into one [`ParamVector`]. All randomness in the simulator is
//! drawn from [`RngStream`], a ChaCha8 generator keyed by a 64-bit seed and a
//! 64-bit stream id. ChaCha8 with `seed_from_u64` is fully specified, so a
//! given `(seed, stream_id, call sequence)` produces the same numbers on
//! every platform.

use std::ops::{Deref, Index};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("parameter vector coordinate {i}")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vector must have dim >= 1");
        ParamVector(vec![0.0; dim])
    }

    /// Builds a vector without the finiteness check. Callers are expected to
    /// validate with [`ParamVector::is_finite`] at their own boundary.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        ParamVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, context: impl FnOnce() -> String) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::non_finite(context()))
        }
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            })
        }
    }

    /// `self += a * x`.
    ///
    /// # Panics
    /// If the dimensions differ.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        assert_eq!(self.dim(), x.dim(), "axpy dimension mismatch");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.0.iter_mut().for_each(|v| *v *= a);
    }

    /// `self - other`, coefficient-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_dim(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(self)
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

/// Coefficient-wise `sum_i a_i * v_i`. Inputs are left untouched.
pub fn linear_combine(terms: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    let (_, first) = terms.first().ok_or(Error::Empty("linear_combine terms"))?;
    for (_, v) in &terms[1..] {
        first.check_dim(v)?;
    }
    let mut out = vec![0.0; first.dim()];
    for (a, v) in terms {
        for (o, x) in out.iter_mut().zip(v.as_slice()) {
            *o += a * x;
        }
    }
    let out = ParamVector(out);
    out.ensure_finite(|| "linear_combine result".into())?;
    Ok(out)
}

pub fn norm_sq(v: &ParamVector) -> f64 {
    v.0.iter().map(|x| x * x).sum()
}

/// Initialization schemes for [`seeded_init`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    Zeros,
    Uniform { low: f64, high: f64 },
    Normal { std: f64 },
}

impl InitScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitScheme::Zeros => Ok(()),
            InitScheme::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) || high <= low {
                    Err(Error::invalid(
                        "init.uniform",
                        format!("need finite low < high, got [{low}, {high}]"),
                    ))
                } else {
                    Ok(())
                }
            }
            InitScheme::Normal { std } => {
                if !std.is_finite() || std <= 0.0 {
                    Err(Error::invalid(
                        "init.normal",
                        format!("std must be > 0, got {std}"),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

pub fn seeded_init(dim: usize, stream: &mut RngStream, scheme: InitScheme) -> Result<ParamVector> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    scheme.validate()?;
    let values = match scheme {
        InitScheme::Zeros => vec![0.0; dim],
        InitScheme::Uniform { low, high } => {
            (0..dim).map(|_| stream.random_range(low..high)).collect()
        }
        InitScheme::Normal { std } => {
            let normal = Normal::new(0.0, std).expect("validated std");
            (0..dim).map(|_| normal.sample(stream)).collect()
        }
    };
    Ok(ParamVector(values))
}

/// A reproducible random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream keyed on this stream's identity and `tag`, independent
    /// of how many values have been drawn from `self`.
    pub fn derive(&self, tag: u64) -> RngStream {
        let mixed = self
            .seed
            .wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        RngStream::new(mixed, self.stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
