//! Matrix norms and the sparse functionals used by the tail bounds.
//!
//! Exponents are plain `f64` values in `[1, ∞]`; `f64::INFINITY` selects the
//! limiting (max) definition. All row-major loops are written out explicitly
//! so that reductions which coincide at `p = 1` (for example γ₁ and ‖A‖²_F)
//! agree bit for bit.

use std::collections::HashMap;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            s += v * v;
        }
    }
    s
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    frobenius_sq(a).sqrt()
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// ℓ₂ norm of every row.
pub fn row_norms(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                s += v * v;
            }
            s.sqrt()
        })
        .collect()
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, f64::max)
}

/// ‖A‖_{l_r(l_2)} = (Σ_i ‖row_i‖₂^r)^{1/r}; `r = ∞` gives the max row norm.
pub fn mixed_norm(a: &DMatrix<f64>, r: f64) -> Result<f64> {
    check_exponent(r)?;
    if r == 2.0 {
        return Ok(frobenius(a));
    }
    let rows = row_norms(a);
    if r.is_infinite() {
        return Ok(max_of(rows));
    }
    let top = max_of(rows.iter().copied());
    if top == 0.0 {
        return Ok(0.0);
    }
    // scaled to avoid overflow for large r
    let s: f64 = rows.iter().map(|&x| (x / top).powf(r)).sum();
    Ok(top * s.powf(1.0 / r))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    max_of(a.singular_values().iter().copied())
}

/// ℓ_q norm of a vector, `q ∈ [1, ∞]`.
pub fn lp_norm(x: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return max_of(x.iter().map(|v| v.abs()));
    }
    if q == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if q == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let top = max_of(x.iter().map(|v| v.abs()));
    if top == 0.0 {
        return 0.0;
    }
    top * x.iter().map(|v| (v.abs() / top).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// Hölder conjugate q* with 1/q + 1/q* = 1.
pub fn conjugate_exponent(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

fn check_exponent(r: f64) -> Result<()> {
    if r.is_nan() || r < 1.0 {
        Err(Error::invalid(format!("norm exponent must lie in [1, inf], got {r}")))
    } else {
        Ok(())
    }
}

/// The unit-ℓ_q-ball maximizer of `⟨w, x⟩`; the maximum is ‖w‖_{q*}.
fn dual_maximizer(w: &[f64], q: f64) -> Vec<f64> {
    let n = w.len();
    let mut x = vec![0.0; n];
    if q == 1.0 {
        let (j, v) = w
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bj, bv), (j, &v)| if v.abs() > bv.abs() { (j, v) } else { (bj, bv) });
        if v != 0.0 {
            x[j] = v.signum();
        }
        return x;
    }
    if q.is_infinite() {
        for (xi, wi) in x.iter_mut().zip(w) {
            *xi = if *wi == 0.0 { 0.0 } else { wi.signum() };
        }
        return x;
    }
    let qs = conjugate_exponent(q);
    let norm = lp_norm(w, qs);
    if norm == 0.0 {
        return x;
    }
    for (xi, wi) in x.iter_mut().zip(w) {
        *xi = wi.signum() * (wi.abs() / norm).powf(qs - 1.0);
    }
    x
}

/// Tuning for the general ℓ_{r1}→ℓ_{r2} search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNormOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OpNormOptions {
    fn default() -> Self {
        Self {
            restarts: 64,
            max_iter: 1000,
            tol: 1e-12,
            seed: 0x5eed,
        }
    }
}

/// A norm value plus how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormValue {
    pub value: f64,
    /// Closed form; otherwise `value` is a certified lower bound.
    pub exact: bool,
    pub restarts: usize,
    /// False when some restart hit the iteration cap.
    pub converged: bool,
}

impl NormValue {
    fn exact(value: f64) -> Self {
        Self {
            value,
            exact: true,
            restarts: 0,
            converged: true,
        }
    }
}

/// ‖A‖_{l_{r1}→l_{r2}} = sup{ yᵀAx : ‖x‖_{r1} ≤ 1, ‖y‖_{r2*} ≤ 1 }.
///
/// Closed forms: (2,2) spectral norm, `r1 = 1` max column ℓ_{r2} norm,
/// `r2 = ∞` max row ℓ_{r1*} norm. Everything else runs alternating
/// maximization from deterministic and random starts and reports the best
/// value found, which is a lower bound on the true norm.
pub fn opnorm(a: &DMatrix<f64>, r1: f64, r2: f64, opts: &OpNormOptions) -> Result<NormValue> {
    check_exponent(r1)?;
    check_exponent(r2)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(NormValue::exact(0.0));
    }
    if r1 == 2.0 && r2 == 2.0 {
        return Ok(NormValue::exact(spectral_norm(a)));
    }
    if r1 == 1.0 {
        let v = max_of((0..n).map(|j| {
            let col: Vec<f64> = a.column(j).iter().copied().collect();
            lp_norm(&col, r2)
        }));
        return Ok(NormValue::exact(v));
    }
    if r2.is_infinite() {
        let qs = conjugate_exponent(r1);
        let v = max_of((0..m).map(|i| {
            let row: Vec<f64> = a.row(i).iter().copied().collect();
            lp_norm(&row, qs)
        }));
        return Ok(NormValue::exact(v));
    }

    let r2s = conjugate_exponent(r2);
    let eval = |x: &[f64]| -> f64 {
        let nx = lp_norm(x, r1);
        if nx == 0.0 {
            return 0.0;
        }
        let z = a * DVector::from_column_slice(x);
        lp_norm(z.as_slice(), r2) / nx
    };

    let ascend = |mut x: Vec<f64>| -> (f64, bool) {
        let nx = lp_norm(&x, r1);
        if nx == 0.0 {
            return (0.0, true);
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let mut best = eval(&x);
        for _ in 0..opts.max_iter {
            let z = a * DVector::from_column_slice(&x);
            let y = dual_maximizer(z.as_slice(), r2s);
            let w = a.transpose() * DVector::from_column_slice(&y);
            let x_next = dual_maximizer(w.as_slice(), r1);
            let val = eval(&x_next);
            if val <= best * (1.0 + opts.tol) {
                return (best.max(val), true);
            }
            best = val;
            x = x_next;
        }
        (best, false)
    };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.restarts + n + 1);
    starts.push(vec![1.0; n]);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        starts.push(e);
    }
    for r in 0..opts.restarts {
        let mut rng = RngStream::for_domain(opts.seed, "opnorm", r as u64);
        starts.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
    }

    let mut best = 0.0f64;
    let mut converged = true;
    for s in starts {
        let (v, c) = ascend(s);
        best = best.max(v);
        converged &= c;
    }
    Ok(NormValue {
        value: best,
        exact: false,
        restarts: opts.restarts,
        converged,
    })
}

fn check_square_p(a: &DMatrix<f64>, p: &[f64]) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dims(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    if p.len() != a.nrows() {
        return Err(Error::dims(format!("matrix is {0}x{0} but p has length {1}", a.nrows(), p.len())));
    }
    Ok(())
}

/// γ₁(A) = Σ_k a²_kk p_k + Σ_{i≠j} a²_ij p_i p_j.
pub fn gamma1(a: &DMatrix<f64>, p: &[f64]) -> Result<f64> {
    check_square_p(a, p)?;
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            let w = if i == j { p[i] } else { p[i] * p[j] };
            s += v * v * w;
        }
    }
    Ok(s)
}

/// γ₂(A) = max_i max{Σ_{j≠i}|a_ij|p_j, Σ_{j≠i}|a_ji|p_j, |a_ii|}.
pub fn gamma2(a: &DMatrix<f64>, p: &[f64]) -> Result<f64> {
    check_square_p(a, p)?;
    let n = a.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            if j != i {
                row += a[(i, j)].abs() * p[j];
                col += a[(j, i)].abs() * p[j];
            }
        }
        best = best.max(row).max(col).max(a[(i, i)].abs());
    }
    Ok(best)
}

/// Spectral norm of (a_ij·sqrt(p_i p_j)).
pub fn weighted_spectral(a: &DMatrix<f64>, p: &[f64]) -> Result<f64> {
    check_square_p(a, p)?;
    let w = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * (p[i] * p[j]).sqrt());
    Ok(spectral_norm(&w))
}

/// max_i (Σ_j a²_ij p_j)^{1/2}.
pub fn row_weighted_max(a: &DMatrix<f64>, p: &[f64]) -> Result<f64> {
    check_square_p(a, p)?;
    let n = a.nrows();
    Ok(max_of((0..n).map(|i| {
        let mut s = 0.0;
        for j in 0..n {
            let v = a[(i, j)];
            s += v * v * p[j];
        }
        s.sqrt()
    })))
}

/// The four sparse functionals of a square matrix under retention vector p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFunctionals {
    pub gamma1: f64,
    pub gamma2: f64,
    pub weighted_spectral: f64,
    pub row_weighted_max: f64,
}

impl SparseFunctionals {
    pub fn compute(a: &DMatrix<f64>, p: &[f64]) -> Result<Self> {
        Ok(Self {
            gamma1: gamma1(a, p)?,
            gamma2: gamma2(a, p)?,
            weighted_spectral: weighted_spectral(a, p)?,
            row_weighted_max: row_weighted_max(a, p)?,
        })
    }
}

pub fn is_symmetric(a: &DMatrix<f64>) -> bool {
    a.is_square() && (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == a[(j, i)]))
}

pub fn is_diagonal_free(a: &DMatrix<f64>) -> bool {
    a.is_square() && (0..a.nrows()).all(|i| a[(i, i)] == 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum NormKey {
    Frobenius,
    MaxAbs,
    Spectral,
    Mixed(u64),
    Op(u64, u64),
}

/// A dense matrix with a lazily filled, thread-safe cache of norms.
///
/// Each norm is computed at most once per instance; the write lock is held
/// while a missing value is computed.
#[derive(Debug)]
pub struct MatrixStats {
    a: DMatrix<f64>,
    symmetric: bool,
    opts: OpNormOptions,
    cache: RwLock<HashMap<NormKey, NormValue>>,
}

impl Clone for MatrixStats {
    fn clone(&self) -> Self {
        Self {
            a: self.a.clone(),
            symmetric: self.symmetric,
            opts: self.opts,
            cache: RwLock::new(self.cache.read().expect("norm cache poisoned").clone()),
        }
    }
}

impl MatrixStats {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self::with_options(a, OpNormOptions::default())
    }

    pub fn with_options(a: DMatrix<f64>, opts: OpNormOptions) -> Self {
        let symmetric = is_symmetric(&a);
        Self {
            a,
            symmetric,
            opts,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn cached(&self, key: NormKey, f: impl FnOnce() -> Result<NormValue>) -> Result<NormValue> {
        if let Some(v) = self.cache.read().expect("norm cache poisoned").get(&key) {
            return Ok(*v);
        }
        let mut guard = self.cache.write().expect("norm cache poisoned");
        if let Some(v) = guard.get(&key) {
            return Ok(*v);
        }
        let v = f()?;
        guard.insert(key, v);
        Ok(v)
    }

    pub fn frobenius(&self) -> f64 {
        self.cached(NormKey::Frobenius, || Ok(NormValue::exact(frobenius(&self.a))))
            .map(|v| v.value)
            .unwrap_or(f64::NAN)
    }

    pub fn max_abs(&self) -> f64 {
        self.cached(NormKey::MaxAbs, || Ok(NormValue::exact(max_abs(&self.a))))
            .map(|v| v.value)
            .unwrap_or(f64::NAN)
    }

    pub fn spectral(&self) -> f64 {
        self.cached(NormKey::Spectral, || Ok(NormValue::exact(spectral_norm(&self.a))))
            .map(|v| v.value)
            .unwrap_or(f64::NAN)
    }

    pub fn mixed(&self, r: f64) -> Result<f64> {
        self.cached(NormKey::Mixed(r.to_bits()), || mixed_norm(&self.a, r).map(NormValue::exact))
            .map(|v| v.value)
    }

    pub fn opnorm(&self, r1: f64, r2: f64) -> Result<NormValue> {
        if r1 == 2.0 && r2 == 2.0 {
            let s = self.spectral();
            return Ok(NormValue::exact(s));
        }
        self.cached(NormKey::Op(r1.to_bits(), r2.to_bits()), || {
            opnorm(&self.a, r1, r2, &self.opts)
        })
    }

    pub fn sparse_functionals(&self, p: &[f64]) -> Result<SparseFunctionals> {
        SparseFunctionals::compute(&self.a, p)
    }

    /// Every cached value so far, for reports.
    pub fn cached_values(&self) -> Vec<(String, NormValue)> {
        let guard = self.cache.read().expect("norm cache poisoned");
        let mut out: Vec<(String, NormValue)> = guard
            .iter()
            .map(|(k, v)| {
                let name = match k {
                    NormKey::Frobenius => "frobenius".to_string(),
                    NormKey::MaxAbs => "max_abs".to_string(),
                    NormKey::Spectral => "spectral".to_string(),
                    NormKey::Mixed(r) => format!("mixed_l{}", f64::from_bits(*r)),
                    NormKey::Op(a, b) => {
                        format!("op_l{}_to_l{}", f64::from_bits(*a), f64::from_bits(*b))
                    }
                };
                (name, *v)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    #[test]
    fn basic_norms() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(frobenius(&i2), 2f64.sqrt());
        assert_eq!(max_abs(&i2), 1.0);
        let z = DMatrix::<f64>::zeros(3, 2);
        assert_eq!(frobenius(&z), 0.0);
        assert_eq!(max_abs(&z), 0.0);
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(frobenius(&a), 10f64.sqrt());
        assert_eq!(max_abs(&a), 2.0);
    }

    #[test]
    fn mixed_norm_cases() {
        let a = m(&[&[1.0, -2.0, 0.5], &[3.0, 0.0, 1.0]]);
        assert_eq!(mixed_norm(&a, 2.0).unwrap(), frobenius(&a));
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((mixed_norm(&i2, 4.0).unwrap() - 2f64.powf(0.25)).abs() < 1e-15);
        let one_row = m(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 0.0]]);
        for r in [1.0, 1.5, 3.0, 7.0, f64::INFINITY] {
            assert!((mixed_norm(&one_row, r).unwrap() - 3.0).abs() < 1e-14);
        }
        assert!(mixed_norm(&a, 0.5).is_err());
    }

    #[test]
    fn opnorm_closed_forms() {
        let d = m(&[&[3.0, 0.0], &[0.0, -4.0]]);
        let o = opnorm(&d, 2.0, 2.0, &OpNormOptions::default()).unwrap();
        assert!((o.value - 4.0).abs() < 1e-12 && o.exact);
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let o = opnorm(&a, 2.0, f64::INFINITY, &OpNormOptions::default()).unwrap();
        assert!((o.value - 5f64.sqrt()).abs() < 1e-15 && o.exact);
        let o = opnorm(&a, 1.0, f64::INFINITY, &OpNormOptions::default()).unwrap();
        assert_eq!(o.value, 2.0);
        let b = m(&[&[1.0, 0.0], &[2.0, 3.0]]);
        let o = opnorm(&b, 1.0, 2.0, &OpNormOptions::default()).unwrap();
        assert_eq!(o.value, 3.0);
        assert!(opnorm(&b, 0.5, 2.0, &OpNormOptions::default()).is_err());
    }

    #[test]
    fn heuristic_recovers_spectral() {
        // run the (2,2) case through the alternating search by nudging r2
        let a = m(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        let o = opnorm(&a, 2.0, 2.0 + 1e-12, &OpNormOptions::default()).unwrap();
        assert!(!o.exact && o.converged);
        assert!((o.value - spectral_norm(&a)).abs() < 1e-6);
    }

    #[test]
    fn sparse_functional_examples() {
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let p = [0.5, 0.25];
        assert!((gamma1(&a, &p).unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(gamma2(&a, &p).unwrap(), 1.0);
        assert_eq!(gamma1(&a, &[1.0, 1.0]).unwrap(), frobenius_sq(&a));
        assert_eq!(gamma1(&a, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(gamma1(&a, &[1.0]).is_err());

        let d = m(&[&[-3.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(gamma2(&d, &[0.3, 0.9]).unwrap(), 3.0);
        assert_eq!(gamma2(&a, &[1.0, 1.0]).unwrap(), 2.0);

        let i3 = DMatrix::<f64>::identity(3, 3);
        let p3 = [1.0, 0.25, 1.0 / 9.0];
        assert!((weighted_spectral(&i3, &p3).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(row_weighted_max(&i3, &p3).unwrap(), 1.0);
        assert_eq!(weighted_spectral(&a, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(row_weighted_max(&a, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(weighted_spectral(&a, &[1.0, 1.0]).unwrap(), spectral_norm(&a));
    }

    #[test]
    fn symmetric_flag_is_exact() {
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(MatrixStats::new(a).is_symmetric());
        let b = m(&[&[1.0, 2.0], &[2.0 + 1e-15, 1.0]]);
        assert!(!MatrixStats::new(b).is_symmetric());
    }

    #[test]
    fn stats_cache_is_stable() {
        let a = m(&[&[0.3, -1.2, 0.4], &[2.0, 0.1, -0.7], &[0.5, 0.9, 1.1]]);
        let s = MatrixStats::new(a);
        let first = s.opnorm(1.5, 3.0).unwrap();
        let second = s.opnorm(1.5, 3.0).unwrap();
        assert_eq!(first, second);
        assert_eq!(s.cached_values().len(), 1);
        let _ = s.spectral();
        let _ = s.frobenius();
        assert_eq!(s.cached_values().len(), 3);
    }
}
