//! Covariance estimation from observations with missing coordinates.
//!
//! Data model: `Y = Bξ` with independent unit-variance coordinates of ξ, and
//! each coordinate of `Y` observed independently with probability `p_j`.
//! The observed vector is `X = δ∘Y`; masks are kept next to the values so an
//! observed zero can be told apart from a missing entry.

use std::fs;
use std::path::{Path, PathBuf};

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io;
use crate::matrix_norms::{frobenius, frobenius_sq, spectral_norm};
use crate::rng::{chunked_map, RngStream};
use crate::rv_models::DistributionSpec;
use crate::stats::{quantile, MeanAcc, Z95};

/// Largest number of supports `rip_k` will enumerate.
pub const RIP_ENUMERATION_BUDGET: u128 = 1_000_000;

/// Operation budget (`d⁴·m²`) for the exact second moment.
pub const EXACT_MOMENT_BUDGET: u128 = 1_000_000_000;

const SAMPLE_CHUNK: usize = 1024;
const REPLICATE_CHUNK: usize = 64;

/// `Y = Bξ`, coordinate `j` of `Y` retained with probability `p_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultivariateModel {
    b: DMatrix<f64>,
    xi: DistributionSpec,
    p: Vec<f64>,
}

impl MultivariateModel {
    /// Unit-variance symmetric Weibull(α) coordinates.
    pub fn new(b: DMatrix<f64>, alpha: f64, p: Vec<f64>) -> Result<Self> {
        Self::with_distribution(b, DistributionSpec::weibull(alpha)?, p)
    }

    /// Any base law; the unit-variance normalization is always switched on.
    pub fn with_distribution(b: DMatrix<f64>, xi: DistributionSpec, p: Vec<f64>) -> Result<Self> {
        if p.len() != b.nrows() {
            return Err(Error::dims(format!("B has {} rows but p has {} entries", b.nrows(), p.len())));
        }
        check_retention(&p)?;
        xi.validate()?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("B has non-finite entries"));
        }
        Ok(Self {
            b,
            xi: xi.with_unit_variance(true),
            p,
        })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn distribution(&self) -> &DistributionSpec {
        &self.xi
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Latent dimension m.
    pub fn latent_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Σ = BBᵀ.
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose()
    }

    /// Draw one observation into `x` and `mask`; `xi` is scratch of length m.
    /// Returns the number of clamped ξ draws.
    pub fn sample_into(&self, rng: &mut RngStream, xi: &mut [f64], x: &mut [f64], mask: &mut [u8]) -> usize {
        let mut clamps = 0;
        for v in xi.iter_mut() {
            let (z, c) = self.xi.sample_checked(rng);
            clamps += c as usize;
            *v = z;
        }
        let m = self.latent_dim();
        for j in 0..self.dim() {
            let keep = rng.bernoulli(self.p[j]);
            mask[j] = keep as u8;
            x[j] = if keep {
                (0..m).map(|i| self.b[(j, i)] * xi[i]).sum()
            } else {
                0.0
            };
        }
        clamps
    }
}

fn check_retention(p: &[f64]) -> Result<()> {
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            return Err(Error::ZeroRetention(i));
        }
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::invalid(format!("p[{i}] = {pi} outside (0, 1]")));
        }
    }
    Ok(())
}

/// `n` observations, one per row, with their 0/1 masks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSamples {
    pub values: DMatrix<f64>,
    pub masks: DMatrix<u8>,
    pub clamps: usize,
}

impl MaskedSamples {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Fraction of retained entries per coordinate.
    pub fn mask_rates(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        (0..self.dim())
            .map(|j| self.masks.column(j).iter().map(|&m| f64::from(m)).sum::<f64>() / n)
            .collect()
    }
}

pub fn generate_samples(model: &MultivariateModel, n: usize, seed: u64) -> Result<MaskedSamples> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let (d, m) = (model.dim(), model.latent_dim());
    let chunks = chunked_map(n, SAMPLE_CHUNK, seed, "covest.samples", |_, len, rng| {
        let mut xi = vec![0.0; m];
        let mut x = vec![0.0; len * d];
        let mut mask = vec![0u8; len * d];
        let mut clamps = 0;
        for s in 0..len {
            let row = s * d..(s + 1) * d;
            clamps += model.sample_into(rng, &mut xi, &mut x[row.clone()], &mut mask[row]);
        }
        (x, mask, clamps)
    });
    let mut values = Vec::with_capacity(n * d);
    let mut masks = Vec::with_capacity(n * d);
    let mut clamps = 0;
    for (x, mk, c) in chunks {
        values.extend(x);
        masks.extend(mk);
        clamps += c;
    }
    Ok(MaskedSamples {
        values: DMatrix::from_row_slice(n, d, &values),
        masks: DMatrix::from_row_slice(n, d, &masks),
        clamps,
    })
}

/// Inverse probability weighting estimate of Σ.
///
/// Off-diagonal `(j,k)`: `Σ_s x_j x_k / (n p_j p_k)`; diagonal: `Σ_s x_j² / (n p_j)`.
pub fn ipw_estimator(samples: &MaskedSamples, p: &[f64]) -> Result<DMatrix<f64>> {
    if p.len() != samples.dim() {
        return Err(Error::dims(format!("samples have {} columns but p has {} entries", samples.dim(), p.len())));
    }
    check_retention(p)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let x = &samples.values;
    let mut s = x.transpose() * x;
    ipw_scale(&mut s, p, samples.len());
    Ok(s)
}

fn ipw_scale(s: &mut DMatrix<f64>, p: &[f64], n: usize) {
    let n = n as f64;
    let d = p.len();
    for j in 0..d {
        for k in 0..d {
            let w = if j == k { p[j] } else { p[j] * p[k] };
            s[(j, k)] /= n * w;
        }
    }
}

/// Entrywise Monte Carlo check of `E Σ̂ = Σ` over independent replicates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IpwCheck {
    pub mean: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Largest `|mean − Σ| / SE` over entries.
    pub max_z: f64,
    pub tolerance_se: f64,
    pub passed: bool,
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
}

pub fn ipw_unbiasedness(model: &MultivariateModel, n: usize, replicates: usize, seed: u64, tolerance_se: f64) -> Result<IpwCheck> {
    if n == 0 || replicates < 2 {
        return Err(Error::invalid("need n ≥ 1 and at least 2 replicates"));
    }
    let (d, m) = (model.dim(), model.latent_dim());
    let p = model.p();
    let chunks = chunked_map(replicates, REPLICATE_CHUNK, seed, "covest.ipw", |_, len, rng| {
        let mut acc = vec![MeanAcc::default(); d * d];
        let mut xi = vec![0.0; m];
        let mut x = vec![0.0; d];
        let mut mask = vec![0u8; d];
        let mut s = DMatrix::zeros(d, d);
        for _ in 0..len {
            s.fill(0.0);
            for _ in 0..n {
                model.sample_into(rng, &mut xi, &mut x, &mut mask);
                for j in 0..d {
                    for k in 0..d {
                        s[(j, k)] += x[j] * x[k];
                    }
                }
            }
            ipw_scale(&mut s, p, n);
            for (a, v) in acc.iter_mut().zip(s.iter()) {
                a.push(*v);
            }
        }
        acc
    });
    let mut acc = vec![MeanAcc::default(); d * d];
    for c in &chunks {
        for (a, b) in acc.iter_mut().zip(c) {
            a.merge(b);
        }
    }
    let mean = DMatrix::from_iterator(d, d, acc.iter().map(MeanAcc::mean));
    let std_error = DMatrix::from_iterator(d, d, acc.iter().map(MeanAcc::std_error));
    let sigma = model.sigma();
    let mut max_z: f64 = 0.0;
    for ((mu, se), s) in mean.iter().zip(std_error.iter()).zip(sigma.iter()) {
        let diff = (mu - s).abs();
        let z = if *se > 0.0 {
            diff / se
        } else if diff <= 1e-12 * s.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    Ok(IpwCheck {
        mean,
        std_error,
        sigma,
        max_z,
        tolerance_se,
        passed: max_z <= tolerance_se,
        replicates,
        n,
        seed,
    })
}

/// Result of the exhaustive sparse-submatrix search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipValue {
    pub value: f64,
    /// A maximizing support (lexicographically smallest among ties).
    pub support: Vec<usize>,
    pub supports_checked: u128,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

fn sym_spectral(m: &DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// `sup{|θᵀMθ| : ‖θ‖₂ = 1, ‖θ‖₀ ≤ k}`, the largest spectral norm among k×k
/// principal submatrices of a symmetric `M`.
pub fn rip_k(m: &DMatrix<f64>, k: usize) -> Result<RipValue> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::dims(format!("matrix is {}x{}, not square", d, m.ncols())));
    }
    if k == 0 || k > d {
        return Err(Error::invalid(format!("k = {k} outside 1..={d}")));
    }
    let count = binomial(d, k);
    if count > RIP_ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "C({d},{k}) = {count} supports exceeds {RIP_ENUMERATION_BUDGET}; use a randomized search over supports instead"
        )));
    }
    if k == 1 {
        let (j, v) = (0..d).map(|j| (j, m[(j, j)].abs())).fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        return Ok(RipValue {
            value: v,
            support: vec![j],
            supports_checked: d as u128,
        });
    }
    // Partition the supports by their smallest index.
    let best = (0..=d - k)
        .into_par_iter()
        .map(|first| {
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let mut sub = DMatrix::zeros(k, k);
            for rest in (first + 1..d).combinations(k - 1) {
                let support: Vec<usize> = std::iter::once(first).chain(rest).collect();
                for (a, &i) in support.iter().enumerate() {
                    for (b, &j) in support.iter().enumerate() {
                        sub[(a, b)] = m[(i, j)];
                    }
                }
                let v = sym_spectral(&sub);
                if v > best.0 {
                    best = (v, support);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |b, c| if c.0 > b.0 { c } else { b });
    Ok(RipValue {
        value: best.0,
        support: best.1,
        supports_checked: count,
    })
}

/// `|θᵀMθ|`.
pub fn quadratic_deviation(m: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let t = DVector::from_column_slice(theta);
    (t.transpose() * m * &t)[(0, 0)].abs()
}

/// Ω = {θ ∈ ℝ^d : ‖θ‖₂ ≤ 1, ‖θ‖₀ ≤ k}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub d: usize,
    pub k: usize,
}

impl ThetaSet {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::invalid(format!("sparsity k = {k} outside 1..={d}")));
        }
        Ok(Self { d, k })
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.d
            && theta.iter().filter(|v| **v != 0.0).count() <= self.k
            && theta.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12
    }

    pub fn axis(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.d];
        e[j] = 1.0;
        e
    }

    /// Unit vector on a uniformly chosen size-k support with Gaussian direction.
    pub fn random_direction(&self, rng: &mut RngStream) -> Vec<f64> {
        use rand::seq::index::sample;
        use rand_distr::{Distribution, StandardNormal};
        let support = sample(rng, self.d, self.k);
        let mut theta = vec![0.0; self.d];
        loop {
            for j in support.iter() {
                theta[j] = StandardNormal.sample(rng);
            }
            let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                theta.iter_mut().for_each(|v| *v /= norm);
                return theta;
            }
        }
    }
}

/// Diagonal `θ_j²/p_j`, off-diagonal `θ_jθ_k/(p_j p_k)`.
pub fn a_theta_p(theta: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    let (outer, diag_outer, diag_a) = a_theta_p_split(theta, p)?;
    Ok(outer - diag_outer + diag_a)
}

/// The three pieces of `A_{θ,p} = uuᵀ − Diag(uuᵀ) + Diag(A_{θ,p})`, `u = θ∘(1/p)`.
pub fn a_theta_p_split(theta: &[f64], p: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if theta.len() != p.len() {
        return Err(Error::dims(format!("theta has {} entries but p has {}", theta.len(), p.len())));
    }
    check_retention(p)?;
    let d = p.len();
    let u = DVector::from_iterator(d, theta.iter().zip(p).map(|(t, q)| t / q));
    let outer = &u * u.transpose();
    let diag_outer = DMatrix::from_diagonal(&outer.diagonal());
    let diag_a = DMatrix::from_diagonal(&DVector::from_iterator(d, theta.iter().zip(p).map(|(t, q)| t * t / q)));
    Ok((outer, diag_outer, diag_a))
}

fn theta_over_p_sq(theta: &[f64], p: &[f64]) -> f64 {
    theta.iter().zip(p).map(|(t, q)| (t / q).powi(2)).sum()
}

/// `‖B‖₂₂·(‖Diag(√p)B‖_F + ‖B‖₂₂)`, the θ-free factor of K1.
pub fn k1_factor(b: &DMatrix<f64>, p: &[f64]) -> f64 {
    let mut scaled = b.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= p[j].sqrt();
    }
    let s = spectral_norm(b);
    s * (frobenius(&scaled) + s)
}

/// K1(θ) = `‖B‖₂₂·(‖Diag(√p)B‖_F + ‖B‖₂₂)·‖θ∘(1/p)‖₂²`.
pub fn k1(model: &MultivariateModel, theta: &[f64]) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(Error::dims(format!("theta has {} entries, model dimension is {}", theta.len(), model.dim())));
    }
    Ok(k1_factor(model.b(), model.p()) * theta_over_p_sq(theta, model.p()))
}

/// How K2 is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum K2Method {
    MonteCarlo { samples: usize, seed: u64 },
    Exact,
}

impl Default for K2Method {
    fn default() -> Self {
        K2Method::MonteCarlo { samples: 10_000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct K1K2 {
    pub k1: f64,
    pub k2: f64,
    /// Monte Carlo estimate of `E‖BᵀDiag(δ)A_{θ,p}Diag(δ)B‖²_F` and its 95% half-width.
    pub k2_sq: f64,
    pub k2_sq_half_width: Option<f64>,
}

pub fn k1_k2_terms(model: &MultivariateModel, theta: &[f64], method: K2Method) -> Result<K1K2> {
    let k1 = k1(model, theta)?;
    let (k2_sq, hw) = match method {
        K2Method::Exact => (expected_frob_sq_exact(model.b(), theta, model.p())?, None),
        K2Method::MonteCarlo { samples, seed } => {
            let est = expected_frob_sq_mc(model.b(), theta, model.p(), samples, seed)?;
            (est.mean, Some(est.half_width))
        }
    };
    Ok(K1K2 {
        k1,
        k2: k2_sq.max(0.0).sqrt(),
        k2_sq,
        k2_sq_half_width: hw,
    })
}

/// Mean with its standard error and 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_acc(acc: &MeanAcc) -> Self {
        let se = acc.std_error();
        Self {
            mean: acc.mean(),
            std_error: se,
            half_width: Z95 * se,
            samples: acc.n as usize,
        }
    }
}

/// `‖BᵀCB‖²_F = tr(CGCG)` with `G = BBᵀ`; `C` symmetric.
fn conjugated_frob_sq(c: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let h = c * g;
    h.component_mul(&h.transpose()).sum()
}

fn masked(a: &DMatrix<f64>, delta: &[bool], out: &mut DMatrix<f64>) {
    let d = delta.len();
    for j in 0..d {
        for k in 0..d {
            out[(j, k)] = if delta[j] && delta[k] { a[(j, k)] } else { 0.0 };
        }
    }
}

/// Monte Carlo over the mask δ of `‖BᵀDiag(δ)ADiag(δ)B‖_F^r` for symmetric A.
pub fn masked_conjugation_power_mc(b: &DMatrix<f64>, a: &DMatrix<f64>, p: &[f64], r: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    let d = b.nrows();
    if a.shape() != (d, d) || p.len() != d {
        return Err(Error::dims(format!("B is {}x{}, A is {:?}, p has {}", d, b.ncols(), a.shape(), p.len())));
    }
    if samples < 2 {
        return Err(Error::invalid("need at least 2 Monte Carlo samples"));
    }
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid(format!("moment order r = {r} must be positive")));
    }
    let g = b * b.transpose();
    let chunks = chunked_map(samples, SAMPLE_CHUNK, seed, "covest.mask", |_, len, rng| {
        let mut acc = MeanAcc::default();
        let mut delta = vec![false; d];
        let mut c = DMatrix::zeros(d, d);
        for _ in 0..len {
            delta.iter_mut().zip(p).for_each(|(x, &q)| *x = rng.bernoulli(q));
            masked(a, &delta, &mut c);
            let f2 = conjugated_frob_sq(&c, &g).max(0.0);
            acc.push(if r == 2.0 { f2 } else { f2.powf(0.5 * r) });
        }
        acc
    });
    let mut acc = MeanAcc::default();
    chunks.iter().for_each(|c| acc.merge(c));
    Ok(McEstimate::from_acc(&acc))
}

/// Monte Carlo estimate of `E‖BᵀDiag(δ)A_{θ,p}Diag(δ)B‖²_F`.
pub fn expected_frob_sq_mc(b: &DMatrix<f64>, theta: &[f64], p: &[f64], samples: usize, seed: u64) -> Result<McEstimate> {
    let a = a_theta_p(theta, p)?;
    masked_conjugation_power_mc(b, &a, p, 2.0, samples, seed)
}

/// Exact `E‖BᵀDiag(δ)A_{θ,p}Diag(δ)B‖²_F`.
///
/// Expanding the square gives `Σ_{l,k,p,q} G_lp G_kq a_lk a_pq E[δ_lδ_kδ_pδ_q]`
/// with `G = BBᵀ`; the expectation is the product of `p_u` over the distinct
/// indices in `{l,k,p,q}`, which covers all fifteen equality patterns.
pub fn expected_frob_sq_exact(b: &DMatrix<f64>, theta: &[f64], p: &[f64]) -> Result<f64> {
    let (d, m) = b.shape();
    let ops = (d as u128).pow(4) * (m as u128).pow(2);
    if ops > EXACT_MOMENT_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "d⁴·m² = {ops} exceeds {EXACT_MOMENT_BUDGET}; use the Monte Carlo estimate"
        )));
    }
    let a = a_theta_p(theta, p)?;
    let g = b * b.transpose();
    let partial: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|l| {
            let mut s = 0.0;
            for k in 0..d {
                let alk = a[(l, k)];
                if alk == 0.0 {
                    continue;
                }
                for pp in 0..d {
                    let glp = g[(l, pp)];
                    for q in 0..d {
                        s += glp * g[(k, q)] * alk * a[(pp, q)] * distinct_weight([l, k, pp, q], p);
                    }
                }
            }
            s
        })
        .collect();
    Ok(partial.iter().sum())
}

/// Product of `p_u` over the distinct values among the four indices.
#[inline]
fn distinct_weight(idx: [usize; 4], p: &[f64]) -> f64 {
    let mut w = 1.0;
    for i in 0..4 {
        if !idx[..i].contains(&idx[i]) {
            w *= p[idx[i]];
        }
    }
    w
}

/// Right-hand side of the high-probability bound on RIP_n(k), without the
/// α-dependent constant:
/// `L^{1/2}/√n·sup K2 + (L^{3/4}/n^{3/4} + L^{2/α}/n)·sup K1`,
/// `L = t + k·log(48ed/k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipBoundRhs {
    pub value: f64,
    pub log_term: f64,
    pub first: f64,
    pub second: f64,
    pub third: f64,
    /// Exact: `‖B‖₂₂(‖Diag(√p)B‖_F + ‖B‖₂₂)/min_j p_j²`.
    pub sup_k1: f64,
    /// Largest K2 over the sampled directions.
    pub sup_k2: f64,
    pub directions_evaluated: usize,
    pub k2_method: K2Method,
}

/// Budget for approximating `sup_Ω K2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupOptions {
    /// Random k-sparse directions on top of the d coordinate axes.
    pub random_directions: usize,
    pub seed: u64,
    /// Monte Carlo samples per direction when the exact moment is over budget.
    pub mc_samples: usize,
}

impl Default for SupOptions {
    fn default() -> Self {
        Self {
            random_directions: 256,
            seed: 0,
            mc_samples: 10_000,
        }
    }
}

/// `sup_Ω K2` over the coordinate axes plus random k-sparse unit directions.
pub fn sup_k2(model: &MultivariateModel, omega: ThetaSet, opts: &SupOptions) -> Result<(f64, usize, K2Method)> {
    let (d, m) = (model.dim(), model.latent_dim());
    let exact = (d as u128).pow(4) * (m as u128).pow(2) <= EXACT_MOMENT_BUDGET;
    let mut rng = RngStream::for_domain(opts.seed, "covest.directions", 0);
    let mut dirs: Vec<Vec<f64>> = (0..d).map(|j| omega.axis(j)).collect();
    dirs.extend((0..opts.random_directions).map(|_| omega.random_direction(&mut rng)));
    let mut best: f64 = 0.0;
    for (i, theta) in dirs.iter().enumerate() {
        let sq = if exact {
            expected_frob_sq_exact(model.b(), theta, model.p())?
        } else {
            expected_frob_sq_mc(model.b(), theta, model.p(), opts.mc_samples, opts.seed.wrapping_add(i as u64))?.mean
        };
        best = best.max(sq.max(0.0).sqrt());
    }
    let method = if exact {
        K2Method::Exact
    } else {
        K2Method::MonteCarlo {
            samples: opts.mc_samples,
            seed: opts.seed,
        }
    };
    Ok((best, dirs.len(), method))
}

/// Evaluate the bound for `n` observations, sparsity `k` and confidence `t`.
pub fn rip_bound_rhs(t: f64, k: usize, n: usize, model: &MultivariateModel, opts: &SupOptions) -> Result<RipBoundRhs> {
    let omega = ThetaSet::new(model.dim(), k)?;
    let (sup_k2, evaluated, method) = sup_k2(model, omega, opts)?;
    rip_bound_rhs_with(t, k, n, model, sup_k2, evaluated, method)
}

/// Same as [`rip_bound_rhs`] with a precomputed `sup_Ω K2`.
pub fn rip_bound_rhs_with(
    t: f64,
    k: usize,
    n: usize,
    model: &MultivariateModel,
    sup_k2: f64,
    directions_evaluated: usize,
    k2_method: K2Method,
) -> Result<RipBoundRhs> {
    let d = model.dim();
    ThetaSet::new(d, k)?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!("t = {t} must be nonnegative")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let alpha = model.distribution().tail_alpha();
    let min_p = model.p().iter().cloned().fold(f64::INFINITY, f64::min);
    let sup_k1 = k1_factor(model.b(), model.p()) / (min_p * min_p);
    let kf = k as f64;
    let log_term = t + kf * (48.0 * std::f64::consts::E * d as f64 / kf).ln();
    let nf = n as f64;
    let first = (log_term / nf).sqrt() * sup_k2;
    let second = (log_term / nf).powf(0.75) * sup_k1;
    let third = log_term.powf(2.0 / alpha) / nf * sup_k1;
    Ok(RipBoundRhs {
        value: first + second + third,
        log_term,
        first,
        second,
        third,
        sup_k1,
        sup_k2,
        directions_evaluated,
        k2_method,
    })
}

/// Replicated RIP_n(k) quantiles against the bound, one constant held across t.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RipConcentration {
    pub t_grid: Vec<f64>,
    /// Empirical `(1 − 2e^{−t})`-quantile of RIP_n(k) (0 when that level is ≤ 0).
    pub quantiles: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `quantile/rhs` per grid point.
    pub ratios: Vec<f64>,
    /// Grid index where the bound is tightest; the constant is fitted there.
    pub fit_index: usize,
    /// The fitted constant; it dominates every other grid point by construction.
    pub fitted: f64,
    /// Largest admissible constant (the unit default of the other bound constants).
    pub max_constant: f64,
    pub passed: bool,
    pub replicates: usize,
}

pub fn rip_concentration(
    model: &MultivariateModel,
    n: usize,
    k: usize,
    t_grid: &[f64],
    replicates: usize,
    seed: u64,
    opts: &SupOptions,
    max_constant: f64,
) -> Result<RipConcentration> {
    if t_grid.is_empty() || replicates < 2 {
        return Err(Error::invalid("need a nonempty t grid and at least 2 replicates"));
    }
    let sigma = model.sigma();
    let rips: Vec<Result<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let s = generate_samples(model, n, crate::rng::stream_id("covest.rip", r as u64) ^ seed)?;
            let dev = ipw_estimator(&s, model.p())? - &sigma;
            Ok(rip_k(&dev, k)?.value)
        })
        .collect();
    let rips = rips.into_iter().collect::<Result<Vec<_>>>()?;
    let omega = ThetaSet::new(model.dim(), k)?;
    let (s2, evaluated, method) = sup_k2(model, omega, opts)?;
    let mut quantiles = Vec::with_capacity(t_grid.len());
    let mut rhs = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let level = 1.0 - 2.0 * (-t).exp();
        quantiles.push(if level <= 0.0 { 0.0 } else { quantile(&rips, level) });
        rhs.push(rip_bound_rhs_with(t, k, n, model, s2, evaluated, method)?.value);
    }
    let ratios: Vec<f64> = quantiles.iter().zip(&rhs).map(|(q, r)| q / r).collect();
    let fit_index = (0..ratios.len()).fold(0, |b, i| if ratios[i] > ratios[b] { i } else { b });
    let fitted = ratios[fit_index];
    Ok(RipConcentration {
        t_grid: t_grid.to_vec(),
        quantiles,
        rhs,
        ratios,
        fit_index,
        fitted,
        max_constant,
        passed: fitted <= max_constant,
        replicates,
    })
}

/// `‖B‖₂₂·‖A‖₂₂·(‖Diag(√p)B‖_F + √r‖B‖₂₂)` for diagonal `A = Diag(a)`.
pub fn diag_conjugation_rhs(b: &DMatrix<f64>, a: &[f64], p: &[f64], r: f64) -> f64 {
    let a_norm = a.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let s = spectral_norm(b);
    let mut scaled = b.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= p[j].sqrt();
    }
    s * a_norm * (frobenius(&scaled) + r.sqrt() * s)
}

/// `‖B‖²₂₂·‖x‖²₂`, which bounds `‖BᵀDiag(δ)xxᵀDiag(δ)B‖_F` for every mask.
pub fn rank_one_conjugation_rhs(b: &DMatrix<f64>, x: &[f64]) -> f64 {
    spectral_norm(b).powi(2) * x.iter().map(|v| v * v).sum::<f64>()
}

/// `‖BᵀDiag(δ)ADiag(δ)B‖_F` for one mask.
pub fn masked_conjugation_norm(b: &DMatrix<f64>, a: &DMatrix<f64>, delta: &[bool]) -> f64 {
    let d = delta.len();
    let mut c = DMatrix::zeros(d, d);
    masked(a, delta, &mut c);
    frobenius_sq(&(b.transpose() * c * b)).sqrt()
}

/// On-disk description of a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub b: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub distribution: DistributionSpec,
    pub seed: u64,
    pub n: usize,
    pub values_file: String,
    pub mask_file: String,
}

impl SampleManifest {
    pub fn model(&self) -> Result<MultivariateModel> {
        let rows = self.b.len();
        let cols = self.b.first().map_or(0, Vec::len);
        if self.b.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("manifest B has ragged rows".into()));
        }
        let flat: Vec<f64> = self.b.iter().flatten().copied().collect();
        MultivariateModel::with_distribution(DMatrix::from_row_slice(rows, cols, &flat), self.distribution, self.p.clone())
    }
}

pub fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Write `<stem>_values.csv`, `<stem>_mask.csv` and `<stem>.json`; returns the manifest path.
pub fn write_samples(dir: impl AsRef<Path>, stem: &str, samples: &MaskedSamples, model: &MultivariateModel, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let values_file = format!("{stem}_values.csv");
    let mask_file = format!("{stem}_mask.csv");
    matrix_io::write_csv(dir.join(&values_file), &samples.values)?;
    let mut mask_text = String::new();
    for row in samples.masks.row_iter() {
        mask_text.push_str(&row.iter().map(u8::to_string).join(","));
        mask_text.push('\n');
    }
    fs::write(dir.join(&mask_file), mask_text)?;
    let manifest = SampleManifest {
        b: matrix_rows(model.b()),
        p: model.p().to_vec(),
        distribution: *model.distribution(),
        seed,
        n: samples.len(),
        values_file,
        mask_file,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?)?;
    Ok(path)
}

/// Read a manifest and the two CSV files next to it.
pub fn read_samples(manifest_path: impl AsRef<Path>) -> Result<(SampleManifest, MaskedSamples)> {
    let manifest_path = manifest_path.as_ref();
    let manifest: SampleManifest =
        serde_json::from_str(&fs::read_to_string(manifest_path)?).map_err(|e| Error::Parse(e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let values = matrix_io::read_csv(dir.join(&manifest.values_file))?;
    let mask_f = matrix_io::read_csv(dir.join(&manifest.mask_file))?;
    if mask_f.shape() != values.shape() {
        return Err(Error::Parse(format!("mask is {:?} but values are {:?}", mask_f.shape(), values.shape())));
    }
    if mask_f.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Parse("mask entries must be 0 or 1".into()));
    }
    let masks = mask_f.map(|v| v as u8);
    Ok((manifest, MaskedSamples { values, masks, clamps: 0 }))
}
