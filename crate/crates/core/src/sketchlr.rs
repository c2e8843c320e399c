//! Randomized low-rank approximation with sparsified sub-Gaussian sketches.
//!
//! For `X = UΣVᵀ` of rank k, set `Ũ = UΣ^{1/2}`, `Ṽ = VΣ^{1/2}` and draw a
//! k×r matrix Q with i.i.d. entries `r^{-1/2}·δ·ξ`. Then
//! `Y = (1/p)·ŨQQᵀṼᵀ` has rank at most r and `E Y = X`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::rv_models::DistributionSpec;
use crate::stats::{fit_line, median, MeanAcc};

pub const DEFAULT_RANK_TOL: f64 = 1e-12;
const ORTHO_TOL: f64 = 1e-10;

/// Thin SVD truncated at the numerical rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredMatrix {
    pub u: DMatrix<f64>,
    /// Descending, all above the rank tolerance.
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
    /// True when the factors were cut below the numerical rank on request.
    pub truncated: bool,
}

impl FactoredMatrix {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    /// `U·S^{1/2}`.
    pub fn u_tilde(&self) -> DMatrix<f64> {
        scale_columns(&self.u, self.s.iter().map(|s| s.sqrt()))
    }

    /// `V·S^{1/2}`.
    pub fn v_tilde(&self) -> DMatrix<f64> {
        scale_columns(&self.v, self.s.iter().map(|s| s.sqrt()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        scale_columns(&self.u, self.s.iter().copied()) * self.v.transpose()
    }

    /// Keep the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        if k < self.rank() {
            self.u = self.u.columns(0, k).into_owned();
            self.v = self.v.columns(0, k).into_owned();
            self.s.truncate(k);
            self.truncated = true;
        }
        self
    }
}

fn scale_columns(a: &DMatrix<f64>, w: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (mut col, w) in out.column_iter_mut().zip(w) {
        col *= w;
    }
    out
}

/// Numerical rank is the number of `σ_i ≥ rank_tol·σ₁` (a tie keeps the larger rank).
pub fn thin_svd(x: &DMatrix<f64>, rank_tol: f64) -> Result<FactoredMatrix> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if !(rank_tol >= 0.0) {
        return Err(Error::invalid(format!("rank tolerance {rank_tol} must be nonnegative")));
    }
    let (m, n) = x.shape();
    let empty = || FactoredMatrix {
        u: DMatrix::zeros(m, 0),
        s: Vec::new(),
        v: DMatrix::zeros(n, 0),
        truncated: false,
    };
    if m == 0 || n == 0 || x.iter().all(|v| *v == 0.0) {
        return Ok(empty());
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return Vᵀ".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s1 = svd.singular_values[order[0]];
    let keep: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] >= rank_tol * s1 && svd.singular_values[i] > 0.0).collect();
    let k = keep.len();
    let mut uk = DMatrix::zeros(m, k);
    let mut vk = DMatrix::zeros(n, k);
    for (c, &i) in keep.iter().enumerate() {
        uk.set_column(c, &u.column(i));
        vk.set_column(c, &vt.row(i).transpose());
    }
    Ok(FactoredMatrix {
        u: uk,
        s: keep.iter().map(|&i| svd.singular_values[i]).collect(),
        v: vk,
        truncated: false,
    })
}

/// `(m/k)·max_i ‖Wᵀe_i‖²` for `W` (m×k) with orthonormal columns.
pub fn coherence(w: &DMatrix<f64>, ambient: usize, inner: usize) -> Result<f64> {
    if w.shape() != (ambient, inner) {
        return Err(Error::dims(format!("W is {:?}, expected {ambient}x{inner}", w.shape())));
    }
    if inner == 0 {
        return Err(Error::invalid("coherence needs at least one column"));
    }
    let gram = w.transpose() * w;
    let dev = (gram - DMatrix::<f64>::identity(inner, inner)).abs().max();
    if dev > ORTHO_TOL {
        return Err(Error::invalid(format!("columns are not orthonormal (max |WᵀW − I| = {dev:e})")));
    }
    let rows: Vec<f64> = w.row_iter().map(|r| r.norm_squared()).collect();
    let trace: f64 = rows.iter().sum();
    if (trace - inner as f64).abs() > ORTHO_TOL * inner as f64 {
        return Err(Error::Numerical(format!("row norms sum to {trace}, expected {inner}")));
    }
    let max = rows.iter().cloned().fold(0.0, f64::max);
    Ok(ambient as f64 / inner as f64 * max)
}

/// Law of ξ in the sketch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchLaw {
    #[default]
    Gaussian,
    Rademacher,
}

impl SketchLaw {
    pub fn distribution(self) -> DistributionSpec {
        match self {
            SketchLaw::Gaussian => DistributionSpec::gaussian(1.0).expect("unit sigma is valid"),
            SketchLaw::Rademacher => DistributionSpec::rademacher(),
        }
    }

    /// ψ₂ norm of the law (not rescaled to 1).
    pub fn psi2(self) -> f64 {
        self.distribution().psi_alpha_exact().expect("closed form").1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub k: usize,
    pub r: usize,
    pub p: f64,
    pub seed: u64,
    #[serde(default)]
    pub law: SketchLaw,
    /// Permit `r > k`; the construction stays unbiased but leaves the
    /// regime covered by the error bound.
    #[serde(default)]
    pub allow_oversketch: bool,
}

impl SketchSpec {
    pub fn new(k: usize, r: usize, p: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            k,
            r,
            p,
            seed,
            law: SketchLaw::Gaussian,
            allow_oversketch: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::invalid("sketch width r must be at least 1"));
        }
        if self.r > self.k && !self.allow_oversketch {
            return Err(Error::invalid(format!("sketch width r = {} exceeds rank k = {}", self.r, self.k)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("sparsity p = {} outside (0, 1]", self.p)));
        }
        Ok(())
    }
}

/// k×r matrix with i.i.d. `r^{-1/2}·δ·ξ` entries; column j uses its own stream.
pub fn sparsified_sketch(spec: &SketchSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (k, r) = (spec.k, spec.r);
    let scale = 1.0 / (r as f64).sqrt();
    let law = spec.law.distribution();
    let cols: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngStream::for_domain(spec.seed, "sketch.column", j as u64);
            (0..k)
                .map(|_| {
                    let keep = rng.bernoulli(spec.p);
                    let z = law.sample(&mut rng);
                    if keep {
                        scale * z
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(k, r, |i, j| cols[j][i]))
}

/// Knobs for [`low_rank_approx`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchOptions {
    pub law: SketchLaw,
    pub rank_tol: f64,
    /// Cut X to this rank before sketching (for approximately low-rank input).
    pub target_rank: Option<usize>,
    pub allow_oversketch: bool,
    /// Calibration constant of the admissibility condition.
    pub c1: f64,
    /// Failure probability η in `log(mn/η)`.
    pub eta: f64,
}

impl Default for SketchOptions {
    fn default() -> Self {
        Self {
            law: SketchLaw::Gaussian,
            rank_tol: DEFAULT_RANK_TOL,
            target_rank: None,
            allow_oversketch: false,
            c1: 1.0,
            eta: 0.1,
        }
    }
}

/// `Y = (1/p)·left·rightᵀ` with `left = ŨQ`, `right = ṼQ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SketchResult {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub p: f64,
    pub r: usize,
    pub rank: usize,
    pub seed: u64,
    /// `‖X − Y‖_∞` against the (possibly truncated) input X.
    pub max_error: f64,
    pub mu_col: f64,
    pub mu_row: f64,
    pub spectral_norm: f64,
    /// Smallest ε for which r meets the admissibility condition.
    pub eps: f64,
    pub bound: f64,
    pub admissible: bool,
    pub oversketched: bool,
    pub truncated: bool,
    pub psi2: f64,
}

impl SketchResult {
    pub fn materialize(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose() / self.p
    }
}

/// `L = log(mn/η)`.
pub fn log_term(m: usize, n: usize, eta: f64) -> f64 {
    ((m as f64) * (n as f64) / eta).ln()
}

/// Smallest ε with `r ≥ C₁·L·max{p/ε², 1/ε}`: `max{√(C₁Lp/r), C₁L/r}`.
pub fn eps_from_r(r: usize, p: f64, m: usize, n: usize, c1: f64, eta: f64) -> f64 {
    let cl = c1 * log_term(m, n, eta);
    let r = r as f64;
    (cl * p / r).sqrt().max(cl / r)
}

/// `r ≥ C₁·log(mn/η)·max{p/ε², 1/ε}` and `r ≤ k`.
pub fn admissible(k: usize, r: usize, eps: f64, p: f64, m: usize, n: usize, c1: f64, eta: f64) -> bool {
    let need = c1 * log_term(m, n, eta) * (p / (eps * eps)).max(1.0 / eps);
    r <= k && r as f64 >= need * (1.0 - 1e-12)
}

/// `(k·ε/(p·√(mn)))·√(μ_col·μ_row)·‖X‖₂₂`.
pub fn sketch_error_bound(k: usize, eps: f64, p: f64, m: usize, n: usize, mu_col: f64, mu_row: f64, spec_norm: f64) -> f64 {
    k as f64 * eps / (p * ((m as f64) * (n as f64)).sqrt()) * (mu_col * mu_row).sqrt() * spec_norm
}

pub fn low_rank_approx(x: &DMatrix<f64>, r: usize, p: f64, seed: u64, opts: &SketchOptions) -> Result<SketchResult> {
    let (m, n) = x.shape();
    let mut f = thin_svd(x, opts.rank_tol)?;
    if let Some(t) = opts.target_rank {
        f = f.truncate(t);
    }
    let k = f.rank();
    if k == 0 {
        if r == 0 || !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid("need r ≥ 1 and p in (0, 1]"));
        }
        return Ok(SketchResult {
            left: DMatrix::zeros(m, r),
            right: DMatrix::zeros(n, r),
            p,
            r,
            rank: 0,
            seed,
            max_error: 0.0,
            mu_col: 0.0,
            mu_row: 0.0,
            spectral_norm: 0.0,
            eps: 0.0,
            bound: 0.0,
            admissible: false,
            oversketched: false,
            truncated: f.truncated,
            psi2: opts.law.psi2(),
        });
    }
    if r > k && !opts.allow_oversketch {
        return Err(Error::invalid(format!("sketch width r = {r} exceeds detected rank {k}")));
    }
    let spec = SketchSpec {
        k,
        r,
        p,
        seed,
        law: opts.law,
        allow_oversketch: opts.allow_oversketch,
    };
    let q = sparsified_sketch(&spec)?;
    let left = f.u_tilde() * &q;
    let right = f.v_tilde() * &q;
    let target = if f.truncated { f.reconstruct() } else { x.clone() };
    let max_error = max_entry_error(&target, &left, &right, p);
    let mu_col = coherence(&f.u, m, k)?;
    let mu_row = coherence(&f.v, n, k)?;
    let eps = eps_from_r(r, p, m, n, opts.c1, opts.eta);
    Ok(SketchResult {
        bound: sketch_error_bound(k, eps, p, m, n, mu_col, mu_row, f.s[0]),
        admissible: admissible(k, r, eps, p, m, n, opts.c1, opts.eta),
        left,
        right,
        p,
        r,
        rank: k,
        seed,
        max_error,
        mu_col,
        mu_row,
        spectral_norm: f.s[0],
        eps,
        oversketched: r > k,
        truncated: f.truncated,
        psi2: opts.law.psi2(),
    })
}

/// `max_ij |X_ij − (1/p)⟨left_i, right_j⟩|` without forming Y.
fn max_entry_error(x: &DMatrix<f64>, left: &DMatrix<f64>, right: &DMatrix<f64>, p: f64) -> f64 {
    let r = left.ncols();
    let mut worst: f64 = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let y: f64 = (0..r).map(|c| left[(i, c)] * right[(j, c)]).sum::<f64>() / p;
            worst = worst.max((x[(i, j)] - y).abs());
        }
    }
    worst
}

/// Entrywise check of `E Y = X` over independent sketches.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnbiasednessCheck {
    pub mean: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub max_z: f64,
    pub tolerance_se: f64,
    pub passed: bool,
    pub replicates: usize,
    /// Largest `σ_{r+1}/σ₁` of any Y produced.
    pub max_tail_ratio: f64,
}

pub fn unbiasedness_check(
    x: &DMatrix<f64>,
    r: usize,
    p: f64,
    replicates: usize,
    seed: u64,
    opts: &SketchOptions,
    tolerance_se: f64,
) -> Result<UnbiasednessCheck> {
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    let runs: Vec<Result<(DMatrix<f64>, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let res = low_rank_approx(x, r, p, replicate_seed(seed, i), opts)?;
            let y = res.materialize();
            Ok((y.clone(), tail_ratio(&y, r)))
        })
        .collect();
    let (m, n) = x.shape();
    let mut acc = vec![MeanAcc::default(); m * n];
    let mut max_tail_ratio: f64 = 0.0;
    for run in runs {
        let (y, ratio) = run?;
        for (a, v) in acc.iter_mut().zip(y.iter()) {
            a.push(*v);
        }
        max_tail_ratio = max_tail_ratio.max(ratio);
    }
    let mean = DMatrix::from_iterator(m, n, acc.iter().map(MeanAcc::mean));
    let std_error = DMatrix::from_iterator(m, n, acc.iter().map(MeanAcc::std_error));
    let mut max_z: f64 = 0.0;
    for ((mu, se), xv) in mean.iter().zip(std_error.iter()).zip(x.iter()) {
        let diff = (mu - xv).abs();
        let z = if *se > 0.0 {
            diff / se
        } else if diff <= 1e-12 * xv.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    Ok(UnbiasednessCheck {
        mean,
        std_error,
        max_z,
        tolerance_se,
        passed: max_z <= tolerance_se,
        replicates,
        max_tail_ratio,
    })
}

/// `σ_{r+1}(Y)/σ₁(Y)`, or 0 when Y has at most r singular values or is zero.
pub fn tail_ratio(y: &DMatrix<f64>, r: usize) -> f64 {
    let mut s: Vec<f64> = y.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.len() <= r || s[0] == 0.0 {
        0.0
    } else {
        s[r] / s[0]
    }
}

fn replicate_seed(seed: u64, i: usize) -> u64 {
    crate::rng::stream_id("sketch.replicate", i as u64) ^ seed
}

/// Median `‖X − Y‖_∞` per sketch width and the log-log slope against r.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorDecay {
    pub r_grid: Vec<usize>,
    pub median_error: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub seeds: usize,
}

pub fn error_decay(x: &DMatrix<f64>, p: f64, r_grid: &[usize], seeds: usize, seed: u64, opts: &SketchOptions) -> Result<ErrorDecay> {
    if r_grid.len() < 2 || seeds == 0 {
        return Err(Error::invalid("need at least two sketch widths and one seed"));
    }
    let mut medians = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let errs: Vec<Result<f64>> = (0..seeds)
            .into_par_iter()
            .map(|i| Ok(low_rank_approx(x, r, p, replicate_seed(seed, i), opts)?.max_error))
            .collect();
        let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
        medians.push(median(&errs));
    }
    let lx: Vec<f64> = r_grid.iter().map(|&r| (r as f64).ln()).collect();
    let ly: Vec<f64> = medians.iter().map(|e| e.ln()).collect();
    let fit = fit_line(&lx, &ly).ok_or_else(|| Error::InsufficientData("degenerate sketch-width grid".into()))?;
    Ok(ErrorDecay {
        r_grid: r_grid.to_vec(),
        median_error: medians,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        seeds,
    })
}

/// Random m×n matrix of rank k with orthonormal Gaussian factors and the given singular values.
pub fn random_low_rank(m: usize, n: usize, singular_values: &[f64], seed: u64) -> DMatrix<f64> {
    let k = singular_values.len();
    let u = random_orthonormal(m, k, seed, "sketch.instance.u");
    let v = random_orthonormal(n, k, seed, "sketch.instance.v");
    scale_columns(&u, singular_values.iter().copied()) * v.transpose()
}

/// m×k matrix with orthonormal columns from the QR of a Gaussian matrix.
pub fn random_orthonormal(m: usize, k: usize, seed: u64, domain: &str) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = RngStream::for_domain(seed, domain, 0);
    let g = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q().columns(0, k).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_diagonal_and_outer() {
        let f = thin_svd(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.rank(), 1);
        assert!((f.s[0] - 3.0).abs() < 1e-14);
        let u = nalgebra::DVector::from_vec(vec![0.6, 0.8]);
        let v = nalgebra::DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let f = thin_svd(&(&u * v.transpose()), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.rank(), 1);
        assert!((f.s[0] - 1.0).abs() < 1e-14);
        // sign of a singular pair is arbitrary
        let (ut, vt) = (f.u_tilde(), f.v_tilde());
        let sign = ut[(0, 0)].signum();
        assert!((ut.column(0) * sign - &u).norm() < 1e-14);
        assert!((vt.column(0) * sign - &v).norm() < 1e-14);
        assert_eq!(thin_svd(&DMatrix::zeros(3, 2), DEFAULT_RANK_TOL).unwrap().rank(), 0);
    }

    #[test]
    fn coherence_extremes() {
        let w = DMatrix::<f64>::identity(6, 2);
        assert!((coherence(&w, 6, 2).unwrap() - 3.0).abs() < 1e-14);
        let h = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]) / 2.0;
        assert!((coherence(&h, 4, 2).unwrap() - 1.0).abs() < 1e-14);
        assert!(coherence(&(w * 2.0), 6, 2).is_err());
    }

    #[test]
    fn rademacher_full_sketch_entries() {
        let mut spec = SketchSpec::new(5, 4, 1.0, 3).unwrap();
        spec.law = SketchLaw::Rademacher;
        let q = sparsified_sketch(&spec).unwrap();
        assert!(q.iter().all(|v| (v.abs() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn spec_validation() {
        assert!(SketchSpec::new(4, 5, 0.5, 0).is_err());
        assert!(SketchSpec::new(4, 0, 0.5, 0).is_err());
        assert!(SketchSpec::new(4, 2, 0.0, 0).is_err());
        assert!(SketchSpec::new(4, 4, 1.0, 0).is_ok());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let res = low_rank_approx(&DMatrix::zeros(4, 3), 2, 0.5, 1, &SketchOptions::default()).unwrap();
        assert_eq!(res.max_error, 0.0);
        assert!(res.materialize().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_bound_and_oversketch_flag() {
        let x = random_low_rank(8, 8, &[3.0, 2.0, 1.0], 5);
        let opts = SketchOptions::default();
        assert!(low_rank_approx(&x, 4, 0.5, 1, &opts).is_err());
        let res = low_rank_approx(&x, 2, 0.5, 1, &opts).unwrap();
        assert!(tail_ratio(&res.materialize(), 2) <= 1e-9);
        let over = SketchOptions {
            allow_oversketch: true,
            ..opts
        };
        let res = low_rank_approx(&x, 6, 0.5, 1, &over).unwrap();
        assert!(res.oversketched && !res.admissible);
        assert!(tail_ratio(&res.materialize(), 3) <= 1e-9);
    }

    #[test]
    fn bound_examples() {
        let b = sketch_error_bound(4, 0.1, 0.5, 4, 4, 1.0, 1.0, 2.0);
        assert!((b - 0.1 * 2.0 / 0.5).abs() < 1e-15);
        let b2 = sketch_error_bound(4, 0.2, 0.5, 4, 4, 1.0, 1.0, 2.0);
        assert!((b2 - 2.0 * b).abs() < 1e-15);
        let eps = eps_from_r(50, 0.5, 10, 10, 1.0, 0.1);
        assert!(admissible(64, 50, eps, 0.5, 10, 10, 1.0, 0.1));
        assert!(!admissible(64, 50, 0.9 * eps, 0.5, 10, 10, 1.0, 0.1));
    }
}
