//! Probability-simplex primitives: distributions, joint and conditional
//! matrices, entropy / cross-entropy / KL, and the seeded random stream.
//!
//! Everything here works in nats. Base-2 quantities live in the coding
//! modules. `0 · log 0` is taken as `0` throughout.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that weights lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("every entry is zero; cannot normalize")]
    AllZero,
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entry {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("distribution must have at least one element")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("p has mass at entry {index} where q is zero")]
    SupportMismatch { index: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    RowNotNormalized { row: usize, sum: f64 },
}

pub type Result<T> = std::result::Result<T, ProbError>;

/// Anything that exposes a flat vector of probability weights.
pub trait Weights {
    fn weights(&self) -> &[f64];
}

impl Weights for [f64] {
    fn weights(&self) -> &[f64] {
        self
    }
}

impl Weights for Vec<f64> {
    fn weights(&self) -> &[f64] {
        self
    }
}

fn check_finite_nonneg(raw: &[f64]) -> Result<()> {
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(ProbError::NegativeEntry { index, value });
        }
    }
    Ok(())
}

fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ProbError::OutOfRange { index, value });
        }
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(ProbError::NotNormalized { sum });
    }
    Ok(())
}

/// Scale a nonnegative vector so it sums to one.
pub fn normalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(ProbError::Empty);
    }
    check_finite_nonneg(raw)?;
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(ProbError::AllZero);
    }
    Ok(raw.iter().map(|x| x / sum).collect())
}

/// Lowest index holding the maximum of `values`. Ties go to the smaller index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// A probability distribution over an indexed finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Dist(Vec<f64>);

impl Dist {
    /// Validate weights that are already on the simplex.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights)?;
        Ok(Self(weights))
    }

    /// Normalize arbitrary nonnegative weights.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        normalize(raw).map(Self)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one element");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, index: usize) -> Self {
        assert!(index < n, "point mass index {index} out of range for {n}");
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0).expect("nonempty by construction")
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Weights for Dist {
    fn weights(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Dist {
    type Error = ProbError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Dist> for Vec<f64> {
    fn from(d: Dist) -> Self {
        d.0
    }
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ProbError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
            return Err(ProbError::ShapeMismatch(format!(
                "row {i} has {} entries, expected {c}",
                row.len()
            )));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Joint distribution over actions × concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct ContextMatrix(Matrix);

impl ContextMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        check_simplex(m.as_slice())?;
        Ok(Self(m))
    }

    /// Normalize a nonnegative matrix into a joint distribution.
    pub fn from_raw(mut m: Matrix) -> Result<Self> {
        let w = normalize(m.as_slice())?;
        m.data = w;
        Ok(Self(m))
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = (rows * cols) as f64;
        Self(Matrix::from_fn(rows, cols, |_, _| 1.0 / n))
    }

    /// Wrap a matrix the caller has already normalized.
    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        debug_assert!(check_simplex(m.as_slice()).is_ok());
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, a: usize, c: usize) -> f64 {
        self.0.get(a, c)
    }

    pub fn row(&self, a: usize) -> &[f64] {
        self.0.row(a)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.max_abs_diff(&other.0)
    }
}

impl Weights for ContextMatrix {
    fn weights(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl TryFrom<Matrix> for ContextMatrix {
    type Error = ProbError;
    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<ContextMatrix> for Matrix {
    fn from(c: ContextMatrix) -> Self {
        c.0
    }
}

/// Matrix of conditionals: every row is a distribution over the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct CondMatrix(Matrix);

impl CondMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for r in 0..m.rows {
            let row = m.row(r);
            for (index, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(ProbError::OutOfRange { index, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(ProbError::RowNotNormalized { row: r, sum });
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0.get(r, c)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.0.row(r)
    }

    pub fn row_dist(&self, r: usize) -> Dist {
        Dist(self.0.row(r).to_vec())
    }
}

impl TryFrom<Matrix> for CondMatrix {
    type Error = ProbError;
    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CondMatrix> for Matrix {
    fn from(c: CondMatrix) -> Self {
        c.0
    }
}

/// Shannon entropy in nats.
pub fn entropy<P: Weights + ?Sized>(p: &P) -> f64 {
    -p.weights()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Shannon entropy in bits.
pub fn entropy_bits<P: Weights + ?Sized>(p: &P) -> f64 {
    entropy(p) / std::f64::consts::LN_2
}

/// Cross entropy `-Σ p log q` in nats.
pub fn cross_entropy<P: Weights + ?Sized, Q: Weights + ?Sized>(p: &P, q: &Q) -> Result<f64> {
    let (p, q) = (p.weights(), q.weights());
    if p.len() != q.len() {
        return Err(ProbError::ShapeMismatch(format!(
            "{} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(ProbError::SupportMismatch { index });
            }
            acc -= pi * qi.ln();
        }
    }
    Ok(acc)
}

/// Kullback-Leibler divergence `KL(p‖q)` in nats.
pub fn kl_divergence<P: Weights + ?Sized, Q: Weights + ?Sized>(p: &P, q: &Q) -> Result<f64> {
    let (pw, qw) = (p.weights(), q.weights());
    if pw.len() != qw.len() {
        return Err(ProbError::ShapeMismatch(format!(
            "{} vs {} entries",
            pw.len(),
            qw.len()
        )));
    }
    let mut acc = 0.0;
    for (index, (&pi, &qi)) in pw.iter().zip(qw).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(ProbError::SupportMismatch { index });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc)
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream.
///
/// The generator is ChaCha8 keyed by `seed_from_u64(seed)`. Child streams
/// are derived by folding a path of integers into the seed with SplitMix64,
/// so `Rng::derive(base, &[cell, trial])` is the same on every platform and
/// independent of the order in which trials are scheduled.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(seed, path))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on `[lo, hi]`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Draw an index with probability proportional to `d`'s weights.
    pub fn sample(&mut self, d: &Dist) -> usize {
        sample(d, self)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Fold `path` into `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Inverse-CDF draw from `d`. Zero-weight entries are never returned.
pub fn sample(d: &Dist, rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in d.as_slice().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        cum += w;
        if u < cum {
            return i;
        }
    }
    last_positive
}
