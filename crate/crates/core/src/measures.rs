//! Probability vectors, signed tangent vectors, linear maps between finite
//! alphabets, and the two norms used throughout: total variation (L1) and the
//! completely bounded norm of a classical linear map.
//!
//! Tensor products index the first factor as the most significant digit, so the
//! pair `(x1, x2)` over alphabets of sizes `k1, k2` sits at `x1 * k2 + x2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum-to-one and sum-to-zero invariants.
pub const SUM_TOL: f64 = 1e-12;
/// Drift below this is silently renormalized; above it the input is rejected.
pub const RENORM_TOL: f64 = 1e-9;
/// Largest table materialized by the tensor and IID extension operations.
pub const MAX_ATOMS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("empty support")]
    Empty,
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entry {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("tangent weights sum to {sum}, not 0")]
    NotZeroSum { sum: f64 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("table of {size} atoms exceeds the limit of {limit}")]
    TooLarge { size: f64, limit: usize },
    #[error("column {column} sums to {sum}, expected {expected}")]
    BadColumn { column: usize, sum: f64, expected: f64 },
}

fn check_finite(v: &[f64]) -> Result<(), MeasureError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(MeasureError::NonFinite { index }),
        None => Ok(()),
    }
}

fn normalize_probs(mut probs: Vec<f64>) -> Result<Vec<f64>, MeasureError> {
    if probs.is_empty() {
        return Err(MeasureError::Empty);
    }
    check_finite(&probs)?;
    if let Some(index) = probs.iter().position(|&x| x < 0.0) {
        return Err(MeasureError::Negative { index, value: probs[index] });
    }
    let sum: f64 = probs.iter().sum();
    let drift = (sum - 1.0).abs();
    if drift > RENORM_TOL {
        return Err(MeasureError::NotNormalized { sum });
    }
    if drift > SUM_TOL {
        probs.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(probs)
}

/// Spreads the sum drift over the entries in proportion to their magnitude, so
/// that exact zeros stay zero.
fn center_weights(mut weights: Vec<f64>) -> Result<Vec<f64>, MeasureError> {
    if weights.is_empty() {
        return Err(MeasureError::Empty);
    }
    check_finite(&weights)?;
    let sum: f64 = weights.iter().sum();
    if sum.abs() > RENORM_TOL {
        return Err(MeasureError::NotZeroSum { sum });
    }
    let mass: f64 = weights.iter().map(|w| w.abs()).sum();
    if sum.abs() > SUM_TOL && mass > 0.0 {
        weights.iter_mut().for_each(|w| *w -= sum * w.abs() / mass);
    }
    Ok(weights)
}

/// A probability vector on `{0, .., k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmfJson", into = "PmfJson")]
pub struct FinitePmf {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PmfJson {
    k: usize,
    probs: Vec<f64>,
}

impl TryFrom<PmfJson> for FinitePmf {
    type Error = MeasureError;
    fn try_from(j: PmfJson) -> Result<Self, MeasureError> {
        if j.probs.len() != j.k {
            return Err(MeasureError::ShapeMismatch { expected: j.k, found: j.probs.len() });
        }
        FinitePmf::new(j.probs)
    }
}

impl From<FinitePmf> for PmfJson {
    fn from(p: FinitePmf) -> Self {
        PmfJson { k: p.k(), probs: p.probs }
    }
}

impl FinitePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self, MeasureError> {
        Ok(FinitePmf { probs: normalize_probs(probs)? })
    }

    pub fn uniform(k: usize) -> Result<Self, MeasureError> {
        if k == 0 {
            return Err(MeasureError::Empty);
        }
        Ok(FinitePmf { probs: vec![1.0 / k as f64; k] })
    }

    pub fn point_mass(k: usize, at: usize) -> Result<Self, MeasureError> {
        if at >= k {
            return Err(MeasureError::ShapeMismatch { expected: k, found: at + 1 });
        }
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Ok(FinitePmf { probs })
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// A signed vector with zero total mass on `{0, .., k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TangentJson", into = "TangentJson")]
pub struct TangentVec {
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TangentJson {
    k: usize,
    weights: Vec<f64>,
}

impl TryFrom<TangentJson> for TangentVec {
    type Error = MeasureError;
    fn try_from(j: TangentJson) -> Result<Self, MeasureError> {
        if j.weights.len() != j.k {
            return Err(MeasureError::ShapeMismatch { expected: j.k, found: j.weights.len() });
        }
        TangentVec::new(j.weights)
    }
}

impl From<TangentVec> for TangentJson {
    fn from(t: TangentVec) -> Self {
        TangentJson { k: t.k(), weights: t.weights }
    }
}

impl TangentVec {
    pub fn new(weights: Vec<f64>) -> Result<Self, MeasureError> {
        Ok(TangentVec { weights: center_weights(weights)? })
    }

    pub fn zeros(k: usize) -> Result<Self, MeasureError> {
        if k == 0 {
            return Err(MeasureError::Empty);
        }
        Ok(TangentVec { weights: vec![0.0; k] })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

/// A probability vector together with a tangent vector on the same support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalJson", into = "LocalJson")]
pub struct LocalData {
    pmf: FinitePmf,
    tangent: TangentVec,
    support_compatible: bool,
}

#[derive(Serialize, Deserialize)]
struct LocalJson {
    k: usize,
    probs: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<LocalJson> for LocalData {
    type Error = MeasureError;
    fn try_from(j: LocalJson) -> Result<Self, MeasureError> {
        for len in [j.probs.len(), j.weights.len()] {
            if len != j.k {
                return Err(MeasureError::ShapeMismatch { expected: j.k, found: len });
            }
        }
        LocalData::from_vecs(j.probs, j.weights)
    }
}

impl From<LocalData> for LocalJson {
    fn from(a: LocalData) -> Self {
        LocalJson { k: a.k(), probs: a.pmf.probs, weights: a.tangent.weights }
    }
}

impl LocalData {
    pub fn new(pmf: FinitePmf, tangent: TangentVec) -> Result<Self, MeasureError> {
        if pmf.k() != tangent.k() {
            return Err(MeasureError::ShapeMismatch { expected: pmf.k(), found: tangent.k() });
        }
        let support_compatible = pmf
            .probs()
            .iter()
            .zip(tangent.weights())
            .all(|(&p, &d)| p > 0.0 || d.abs() <= SUM_TOL);
        Ok(LocalData { pmf, tangent, support_compatible })
    }

    pub fn from_vecs(probs: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        LocalData::new(FinitePmf::new(probs)?, TangentVec::new(weights)?)
    }

    pub fn k(&self) -> usize {
        self.pmf.k()
    }

    pub fn pmf(&self) -> &FinitePmf {
        &self.pmf
    }

    pub fn tangent(&self) -> &TangentVec {
        &self.tangent
    }

    pub fn probs(&self) -> &[f64] {
        self.pmf.probs()
    }

    pub fn weights(&self) -> &[f64] {
        self.tangent.weights()
    }

    /// True when the tangent vanishes wherever the pmf does.
    pub fn support_compatible(&self) -> bool {
        self.support_compatible
    }

    /// Score `delta(x) / p(x)` on the support of the pmf, 0 off it.
    pub fn score(&self) -> Vec<f64> {
        self.probs()
            .iter()
            .zip(self.weights())
            .map(|(&p, &d)| if p > 0.0 { d / p } else { 0.0 })
            .collect()
    }
}

/// The local data of a Gaussian shift: `N(mean, variance)` with tangent
/// `shift_weight` times the derivative of the density in the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLocal {
    pub mean: f64,
    pub variance: f64,
    pub shift_weight: f64,
}

impl GaussianLocal {
    pub fn new(mean: f64, variance: f64, shift_weight: f64) -> Result<Self, MeasureError> {
        check_finite(&[mean, variance, shift_weight])?;
        if variance <= 0.0 {
            return Err(MeasureError::Negative { index: 1, value: variance });
        }
        Ok(GaussianLocal { mean, variance, shift_weight })
    }

    /// `{N(0,1), sqrt(units) dN(0,1)}`, the Gaussian currency carrying `units`
    /// of Fisher information.
    pub fn standard_units(units: f64) -> Result<Self, MeasureError> {
        GaussianLocal::new(0.0, 1.0, units.max(0.0).sqrt())
    }
}

/// A general linear map from `in_size` letters to `out_size` letters. Column
/// `x` is the image of the point mass at `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelJson", into = "KernelJson")]
pub struct LinearKernelMap {
    in_size: usize,
    out_size: usize,
    /// Row-major `out_size x in_size`.
    table: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelJson {
    #[serde(rename = "in")]
    in_size: usize,
    #[serde(rename = "out")]
    out_size: usize,
    cols: Vec<Vec<f64>>,
}

impl TryFrom<KernelJson> for LinearKernelMap {
    type Error = MeasureError;
    fn try_from(j: KernelJson) -> Result<Self, MeasureError> {
        if j.cols.len() != j.in_size {
            return Err(MeasureError::ShapeMismatch { expected: j.in_size, found: j.cols.len() });
        }
        LinearKernelMap::from_columns(j.out_size, &j.cols)
    }
}

impl From<LinearKernelMap> for KernelJson {
    fn from(m: LinearKernelMap) -> Self {
        KernelJson { in_size: m.in_size, out_size: m.out_size, cols: m.columns() }
    }
}

impl LinearKernelMap {
    pub fn zeros(out_size: usize, in_size: usize) -> Self {
        LinearKernelMap { in_size, out_size, table: vec![0.0; in_size * out_size] }
    }

    pub fn from_columns(out_size: usize, cols: &[Vec<f64>]) -> Result<Self, MeasureError> {
        if cols.is_empty() || out_size == 0 {
            return Err(MeasureError::Empty);
        }
        let mut m = LinearKernelMap::zeros(out_size, cols.len());
        for (x, col) in cols.iter().enumerate() {
            if col.len() != out_size {
                return Err(MeasureError::ShapeMismatch { expected: out_size, found: col.len() });
            }
            check_finite(col)?;
            for (y, &v) in col.iter().enumerate() {
                m.set(y, x, v);
            }
        }
        Ok(m)
    }

    pub fn identity(k: usize) -> Self {
        let mut m = LinearKernelMap::zeros(k, k);
        for x in 0..k {
            m.set(x, x, 1.0);
        }
        m
    }

    pub fn in_size(&self) -> usize {
        self.in_size
    }

    pub fn out_size(&self) -> usize {
        self.out_size
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.table[y * self.in_size + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.table[y * self.in_size + x] = v;
    }

    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.out_size).map(|y| self.get(y, x)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.in_size).map(|x| self.column(x)).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, MeasureError> {
        if v.len() != self.in_size {
            return Err(MeasureError::ShapeMismatch { expected: self.in_size, found: v.len() });
        }
        Ok((0..self.out_size)
            .map(|y| {
                let row = &self.table[y * self.in_size..(y + 1) * self.in_size];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &LinearKernelMap) -> Result<LinearKernelMap, MeasureError> {
        if inner.out_size != self.in_size {
            return Err(MeasureError::ShapeMismatch { expected: self.in_size, found: inner.out_size });
        }
        let mut out = LinearKernelMap::zeros(self.out_size, inner.in_size);
        for x in 0..inner.in_size {
            let col = self.apply(&inner.column(x))?;
            for (y, v) in col.into_iter().enumerate() {
                out.set(y, x, v);
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &LinearKernelMap) -> Result<LinearKernelMap, MeasureError> {
        if self.in_size != other.in_size || self.out_size != other.out_size {
            return Err(MeasureError::ShapeMismatch {
                expected: self.table.len(),
                found: other.table.len(),
            });
        }
        let table = self.table.iter().zip(&other.table).map(|(a, b)| a - b).collect();
        Ok(LinearKernelMap { in_size: self.in_size, out_size: self.out_size, table })
    }
}

fn check_columns(m: &LinearKernelMap, expected: f64, nonneg: bool) -> Result<(), MeasureError> {
    for x in 0..m.in_size() {
        let col = m.column(x);
        if nonneg {
            if let Some(y) = col.iter().position(|&v| v < 0.0) {
                return Err(MeasureError::Negative { index: y * m.in_size() + x, value: col[y] });
            }
        }
        let sum: f64 = col.iter().sum();
        if (sum - expected).abs() > RENORM_TOL {
            return Err(MeasureError::BadColumn { column: x, sum, expected });
        }
    }
    Ok(())
}

/// A column-stochastic linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearKernelMap", into = "LinearKernelMap")]
pub struct MarkovKernel(LinearKernelMap);

impl TryFrom<LinearKernelMap> for MarkovKernel {
    type Error = MeasureError;
    fn try_from(m: LinearKernelMap) -> Result<Self, MeasureError> {
        MarkovKernel::new(m)
    }
}

impl From<MarkovKernel> for LinearKernelMap {
    fn from(m: MarkovKernel) -> Self {
        m.0
    }
}

impl MarkovKernel {
    /// Validates nonnegativity and unit column sums; columns drifting by less
    /// than [`RENORM_TOL`] are rescaled.
    pub fn new(mut m: LinearKernelMap) -> Result<Self, MeasureError> {
        check_columns(&m, 1.0, true)?;
        for x in 0..m.in_size() {
            let sum: f64 = m.column(x).iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                for y in 0..m.out_size() {
                    let v = m.get(y, x) / sum;
                    m.set(y, x, v);
                }
            }
        }
        Ok(MarkovKernel(m))
    }

    pub fn from_columns(out_size: usize, cols: &[Vec<f64>]) -> Result<Self, MeasureError> {
        MarkovKernel::new(LinearKernelMap::from_columns(out_size, cols)?)
    }

    pub fn identity(k: usize) -> Self {
        MarkovKernel(LinearKernelMap::identity(k))
    }

    /// The kernel sending every letter to the same output law.
    pub fn constant(in_size: usize, law: &FinitePmf) -> Self {
        let cols = vec![law.probs().to_vec(); in_size];
        MarkovKernel(LinearKernelMap::from_columns(law.k(), &cols).expect("valid shape"))
    }

    /// The deterministic kernel `x -> f[x]`.
    pub fn deterministic(out_size: usize, f: &[usize]) -> Result<Self, MeasureError> {
        let mut m = LinearKernelMap::zeros(out_size, f.len());
        for (x, &y) in f.iter().enumerate() {
            if y >= out_size {
                return Err(MeasureError::ShapeMismatch { expected: out_size, found: y + 1 });
            }
            m.set(y, x, 1.0);
        }
        Ok(MarkovKernel(m))
    }

    pub fn map(&self) -> &LinearKernelMap {
        &self.0
    }

    pub fn in_size(&self) -> usize {
        self.0.in_size()
    }

    pub fn out_size(&self) -> usize {
        self.0.out_size()
    }

    pub fn compose(&self, inner: &MarkovKernel) -> Result<MarkovKernel, MeasureError> {
        Ok(MarkovKernel(self.0.compose(&inner.0)?))
    }
}

/// A linear map whose columns sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearKernelMap", into = "LinearKernelMap")]
pub struct KernelTangent(LinearKernelMap);

impl TryFrom<LinearKernelMap> for KernelTangent {
    type Error = MeasureError;
    fn try_from(m: LinearKernelMap) -> Result<Self, MeasureError> {
        KernelTangent::new(m)
    }
}

impl From<KernelTangent> for LinearKernelMap {
    fn from(m: KernelTangent) -> Self {
        m.0
    }
}

impl KernelTangent {
    pub fn new(m: LinearKernelMap) -> Result<Self, MeasureError> {
        check_columns(&m, 0.0, false)?;
        let cols: Result<Vec<Vec<f64>>, _> =
            m.columns().into_iter().map(center_weights).collect();
        Ok(KernelTangent(LinearKernelMap::from_columns(m.out_size(), &cols?)?))
    }

    pub fn map(&self) -> &LinearKernelMap {
        &self.0
    }
}

/// Sum of absolute entries.
pub fn tv_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// L1 distance between two vectors of equal length.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Completely bounded norm of a classical map: the largest column L1 norm.
///
/// For a map between finite classical alphabets, `p -> ‖(Λ⊗I)(p)‖₁` is convex
/// in `p`, so its supremum over the simplex is reached at a point mass, and an
/// identity tensor factor only adds block-diagonal copies of the same columns.
pub fn cb_norm(m: &LinearKernelMap) -> f64 {
    (0..m.in_size()).map(|x| tv_norm(&m.column(x))).fold(0.0, f64::max)
}

/// Product pmf with the Leibniz tangent `δ1⊗p2 + p1⊗δ2`.
pub fn tensor_local(a: &LocalData, b: &LocalData) -> Result<LocalData, MeasureError> {
    let size = a.k() as f64 * b.k() as f64;
    if size > MAX_ATOMS as f64 {
        return Err(MeasureError::TooLarge { size, limit: MAX_ATOMS });
    }
    let (p1, d1, p2, d2) = (a.probs(), a.weights(), b.probs(), b.weights());
    let mut probs = Vec::with_capacity(size as usize);
    let mut weights = Vec::with_capacity(size as usize);
    for i in 0..a.k() {
        for j in 0..b.k() {
            probs.push(p1[i] * p2[j]);
            weights.push(d1[i] * p2[j] + p1[i] * d2[j]);
        }
    }
    LocalData::from_vecs(probs, weights)
}

/// `{p^⊗n, δ^(n)}` with `δ^(n)` the sum of the `n` placements of `δ`.
pub fn iid_extend(a: &LocalData, n: usize) -> Result<LocalData, MeasureError> {
    if n == 0 {
        return Err(MeasureError::Empty);
    }
    let size = (a.k() as f64).powi(n as i32);
    if size > MAX_ATOMS as f64 {
        return Err(MeasureError::TooLarge { size, limit: MAX_ATOMS });
    }
    let mut out = a.clone();
    for _ in 1..n {
        out = tensor_local(&out, a)?;
    }
    Ok(out)
}

/// Applies a Markov kernel to both halves of the local data.
pub fn pushforward(m: &MarkovKernel, a: &LocalData) -> Result<LocalData, MeasureError> {
    let probs = m.map().apply(a.probs())?;
    let weights = m.map().apply(a.weights())?;
    LocalData::from_vecs(probs, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_norm_examples() {
        assert_eq!(tv_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(tv_norm(&[0.5, -0.5]), 1.0);
        let p = FinitePmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let diff: Vec<f64> = p.probs().iter().map(|x| x - x).collect();
        assert_eq!(tv_norm(&diff), 0.0);
    }

    #[test]
    fn cb_norm_examples() {
        assert_eq!(cb_norm(&LinearKernelMap::identity(4)), 1.0);
        assert_eq!(cb_norm(&LinearKernelMap::zeros(3, 2)), 0.0);
        let a = MarkovKernel::from_columns(2, &[vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        let b = MarkovKernel::from_columns(2, &[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let d = a.map().sub(b.map()).unwrap();
        assert!((cb_norm(&d) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn constructor_renormalizes_small_drift() {
        let p = FinitePmf::new(vec![0.5 + 1e-11, 0.5]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let exact = FinitePmf::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(exact.probs(), &[0.1, 0.2, 0.3, 0.4]);
        assert!(FinitePmf::new(vec![0.5 + 1e-6, 0.5]).is_err());
        assert!(FinitePmf::new(vec![1.1, -0.1]).is_err());
        let t = TangentVec::new(vec![0.5 + 1e-10, -0.5, 0.0]).unwrap();
        assert!(t.weights().iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(t.weights()[2], 0.0);
        assert!(TangentVec::new(vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn support_flag() {
        let a = LocalData::from_vecs(vec![1.0, 0.0], vec![-1.0, 1.0]).unwrap();
        assert!(!a.support_compatible());
        let b = LocalData::from_vecs(vec![0.5, 0.5], vec![0.1, -0.1]).unwrap();
        assert!(b.support_compatible());
    }

    #[test]
    fn iid_extend_two_fair_coins() {
        let a = LocalData::from_vecs(vec![0.5, 0.5], vec![0.5, -0.5]).unwrap();
        let e = iid_extend(&a, 2).unwrap();
        assert_eq!(e.weights(), &[0.5, 0.0, 0.0, -0.5]);
        assert_eq!(e.probs(), &[0.25; 4]);
        assert_eq!(iid_extend(&a, 1).unwrap(), a);
    }

    #[test]
    fn iid_extend_guard() {
        let a = LocalData::from_vecs(vec![0.5, 0.5], vec![0.5, -0.5]).unwrap();
        assert!(matches!(iid_extend(&a, 24), Err(MeasureError::TooLarge { .. })));
    }

    #[test]
    fn pushforward_examples() {
        let a = LocalData::from_vecs(vec![0.2, 0.3, 0.5], vec![0.1, 0.2, -0.3]).unwrap();
        assert_eq!(pushforward(&MarkovKernel::identity(3), &a).unwrap(), a);
        let collapse = MarkovKernel::deterministic(1, &[0, 0, 0]).unwrap();
        let b = pushforward(&collapse, &a).unwrap();
        assert_eq!(b.probs(), &[1.0]);
        assert!(b.weights()[0].abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let a = LocalData::from_vecs(vec![0.1, 0.2, 0.7], vec![0.3, -0.1, -0.2]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"k\":3"));
        let b: LocalData = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        let bad = r#"{"k":2,"probs":[0.5,0.6],"weights":[0.1,-0.1]}"#;
        assert!(serde_json::from_str::<LocalData>(bad).is_err());
        let m = MarkovKernel::from_columns(2, &[vec![0.3, 0.7], vec![1.0, 0.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MarkovKernel>(&s).unwrap(), m);
    }
}
