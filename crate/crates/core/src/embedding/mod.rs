//! Unit-norm embeddings, cosine similarity, and the support-memory projection.
//!
//! Embeddings are handled in `f64` at the API surface; the support memory
//! stores rows as `f32` and every reduction over it accumulates in `f64`.

pub mod kernels;
mod projection;

pub use projection::{
    project, softmax_weights, ProjectionConfig, ProjectionResult, IMAGE_TEMPERATURE,
    VIDEO_TEMPERATURE,
};

use crate::error::{Error, Result};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance accepted by [`Embedding::from_unit`].
pub const UNIT_TOLERANCE: f64 = 1e-5;

/// A finite, ℓ2-normalized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalize `raw`, returning the unit vector and the input's norm.
    pub fn normalize(raw: &[f64]) -> Result<(Embedding, f64)> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = kernels::l2_norm(raw);
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        Ok((Embedding(raw.iter().map(|x| x / norm).collect()), norm))
    }

    /// Like [`Embedding::normalize`] but rejects vectors whose length is not `dim`.
    pub fn normalize_dim(raw: &[f64], dim: usize) -> Result<(Embedding, f64)> {
        check_dim(dim, raw.len())?;
        Self::normalize(raw)
    }

    /// Wrap values that are already unit-norm (within [`UNIT_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>) -> Result<Embedding> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = kernels::l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "expected a unit vector, norm is {norm}"
            )));
        }
        Ok(Embedding(values))
    }

    pub fn from_f32_unit(values: &[f32]) -> Result<Embedding> {
        Self::from_unit(values.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        kernels::l2_norm(&self.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Encoder output before normalization, with its ℓ2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding {
    pub values: Vec<f64>,
    pub prenorm: f64,
}

impl RawEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        let prenorm = kernels::l2_norm(&values);
        RawEmbedding { values, prenorm }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn normalized(&self) -> Result<Embedding> {
        Embedding::normalize(&self.values).map(|(e, _)| e)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Cosine similarity of two unit vectors: their dot product, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(kernels::dot_f64(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Error-free transformation sum (Knuth TwoSum) and product (Dekker).
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    /// Sum of squares in double-double precision, then sqrt.
    fn extended_norm(xs: &[f64]) -> f64 {
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for &x in xs {
            let (p, pe) = two_prod(x, x);
            let (s, se) = two_sum(hi, p);
            hi = s;
            lo += se + pe;
        }
        let (s, e) = two_sum(hi, lo);
        let root = s.sqrt();
        // one Newton step carrying the low word
        root + (s - root * root + e) / (2.0 * root)
    }

    #[test]
    fn normalize_pythagorean() {
        let (e, n) = Embedding::normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(n, 5.0);
        assert!((e.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((e.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_basis_is_identity() {
        let mut v = vec![0.0; 512];
        v[0] = 1.0;
        let (e, n) = Embedding::normalize_dim(&v, 512).unwrap();
        assert_eq!(n, 1.0);
        assert_eq!(e.as_slice(), v.as_slice());
    }

    #[test]
    fn normalize_gaussian_against_extended_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v: Vec<f64> = (0..512).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (e, n) = Embedding::normalize(&v).unwrap();
            assert!((e.norm() - 1.0).abs() < 1e-6);
            let oracle = extended_norm(&v);
            assert!((n - oracle).abs() / oracle < 1e-14, "{n} vs {oracle}");
        }
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(Embedding::normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(Embedding::normalize(&[1e-13, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            Embedding::normalize_dim(&[1.0, 0.0], 3),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(Embedding::normalize(&[f64::NAN, 1.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn cosine_cases() {
        let a = Embedding::from_unit(vec![1.0, 0.0, 0.0]).unwrap();
        let b = Embedding::from_unit(vec![0.0, 1.0, 0.0]).unwrap();
        let neg = Embedding::from_unit(vec![-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert_eq!(cosine(&a, &neg).unwrap(), -1.0);
        let c = Embedding::from_unit(vec![1.0, 0.0]).unwrap();
        assert!(matches!(cosine(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cosine_is_clamped() {
        let s = 1.0 / 3f64.sqrt();
        let a = Embedding::from_unit(vec![s, s, s]).unwrap();
        let c = cosine(&a, &a).unwrap();
        assert!(c <= 1.0);
    }

    #[test]
    fn raw_embedding_records_prenorm() {
        let r = RawEmbedding::new(vec![0.0, 6.0, 8.0]);
        assert_eq!(r.prenorm, 10.0);
        assert_eq!(r.normalized().unwrap().as_slice(), &[0.0, 0.6, 0.8]);
    }
}
