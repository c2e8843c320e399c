//! Tail-bound evaluators and moment formulas.
//!
//! Every tail bound has the shape `prefactor · exp(−c · min_k (t/C_k)^{β_k})`
//! and is represented by a [`TailBound`]. Quadratic-form bounds and the norm
//! concentration bound take the normalized threshold `t`, i.e. they bound
//! `P{|S − ES| ≥ L²t}` where `L` is the ψ_α norm of the base variables; use
//! [`TailBound::at_threshold`] to evaluate at a raw deviation `s`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_norms::{self, MatrixStats};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConstants {
    /// Multiplier of the exponent; stands in for the unspecified c(α).
    pub c_alpha: f64,
    pub prefactor: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            c_alpha: 1.0,
            prefactor: 2.0,
        }
    }
}

impl BoundConstants {
    pub fn new(c_alpha: f64, prefactor: f64) -> Result<Self> {
        let c = Self { c_alpha, prefactor };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_alpha > 0.0 && self.c_alpha.is_finite()) {
            return Err(Error::invalid(format!("c_alpha must be positive, got {}", self.c_alpha)));
        }
        if !(self.prefactor > 0.0 && self.prefactor.is_finite()) {
            return Err(Error::invalid(format!("prefactor must be positive, got {}", self.prefactor)));
        }
        Ok(())
    }
}

/// One term `(t / coefficient)^exponent` of a min-of-regimes bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub name: String,
    pub coefficient: f64,
    pub exponent: f64,
}

impl Regime {
    pub fn new(name: &str, coefficient: f64, exponent: f64) -> Self {
        Self {
            name: name.to_string(),
            coefficient,
            exponent,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        (t / self.coefficient).powf(self.exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub regimes: Vec<Regime>,
    pub constants: BoundConstants,
}

impl TailBound {
    /// Builds the bound, dropping regimes whose coefficient is zero (their
    /// term is +∞). Fails when nothing is left.
    pub fn new(regimes: Vec<Regime>, constants: BoundConstants) -> Result<Self> {
        constants.validate()?;
        for r in &regimes {
            if !(r.exponent > 0.0) || !(r.coefficient >= 0.0) || !r.coefficient.is_finite() {
                return Err(Error::invalid(format!(
                    "regime {} has coefficient {} and exponent {}",
                    r.name, r.coefficient, r.exponent
                )));
            }
        }
        let regimes: Vec<Regime> = regimes.into_iter().filter(|r| r.coefficient > 0.0).collect();
        if regimes.is_empty() {
            return Err(Error::ZeroMatrixOnSupport);
        }
        Ok(Self { regimes, constants })
    }

    /// min over regimes of (t/C_k)^{β_k}.
    pub fn exponent(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.regimes.iter().map(|r| r.value(t)).fold(f64::INFINITY, f64::min)
    }

    /// Index of the regime attaining the minimum at `t`.
    pub fn active_regime(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, r) in self.regimes.iter().enumerate() {
            if r.value(t) < self.regimes[best].value(t) {
                best = k;
            }
        }
        best
    }

    /// Normalized thresholds where the active regime changes, increasing.
    pub fn corners(&self) -> Vec<f64> {
        // as t → 0 the largest exponent gives the smallest term
        let mut cur = 0;
        for (k, r) in self.regimes.iter().enumerate() {
            let c = &self.regimes[cur];
            if r.exponent > c.exponent || (r.exponent == c.exponent && r.coefficient > c.coefficient) {
                cur = k;
            }
        }
        let mut out = Vec::new();
        let mut t = 0.0f64;
        loop {
            let c = &self.regimes[cur];
            let mut next: Option<(f64, usize)> = None;
            for (j, r) in self.regimes.iter().enumerate() {
                if r.exponent >= c.exponent {
                    continue;
                }
                let lt = (c.exponent * c.coefficient.ln() - r.exponent * r.coefficient.ln()) / (c.exponent - r.exponent);
                let tj = lt.exp();
                if tj > t && next.map_or(true, |(tn, _)| tj < tn) {
                    next = Some((tj, j));
                }
            }
            match next {
                Some((tj, j)) => {
                    out.push(tj);
                    t = tj;
                    cur = j;
                }
                None => return out,
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.constants.prefactor * (-self.constants.c_alpha * self.exponent(t)).exp()
    }

    /// Evaluate at a raw deviation `s`, i.e. at normalized `t = s / scale`.
    pub fn at_threshold(&self, s: f64, scale: f64) -> f64 {
        self.eval(s / scale)
    }

    pub fn with_constants(mut self, constants: BoundConstants) -> Self {
        self.constants = constants;
        self
    }
}

fn check_alpha(alpha: f64, lo_open: f64, hi: f64, what: &str) -> Result<()> {
    if alpha > lo_open && alpha <= hi {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} needs alpha in ({lo_open}, {hi}], got {alpha}")))
    }
}

fn check_scale(l: f64) -> Result<()> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale L must be positive, got {l}")))
    }
}

fn require_symmetric(stats: &MatrixStats) -> Result<()> {
    if stats.is_symmetric() {
        Ok(())
    } else {
        Err(Error::invalid("matrix must be exactly symmetric"))
    }
}

/// Regimes of the log-concave bound, `1 ≤ α ≤ 2`.
pub fn f1_bound(stats: &MatrixStats, alpha: f64, constants: BoundConstants) -> Result<TailBound> {
    if !(1.0..=2.0).contains(&alpha) {
        return Err(Error::invalid(format!("f1 needs alpha in [1, 2], got {alpha}")));
    }
    require_symmetric(stats)?;
    let a_star = matrix_norms::conjugate_exponent(alpha);
    TailBound::new(
        vec![
            Regime::new("frobenius", stats.frobenius(), 2.0),
            Regime::new("spectral", stats.spectral(), 1.0),
            Regime::new("mixed_alpha_star", stats.mixed(a_star)?, alpha),
            Regime::new("op_2_to_alpha_star", stats.opnorm(2.0, a_star)?.value, 2.0 * alpha / (2.0 + alpha)),
            Regime::new("op_alpha_to_alpha_star", stats.opnorm(alpha, a_star)?.value, alpha / 2.0),
        ],
        constants,
    )
}

pub fn f1(t: f64, stats: &MatrixStats, alpha: f64) -> Result<f64> {
    Ok(f1_bound(stats, alpha, BoundConstants::default())?.exponent(t))
}

/// Regimes of the log-convex bound, `0 < α ≤ 1`.
pub fn f2_bound(stats: &MatrixStats, alpha: f64, constants: BoundConstants) -> Result<TailBound> {
    check_alpha(alpha, 0.0, 1.0, "f2")?;
    require_symmetric(stats)?;
    TailBound::new(
        vec![
            Regime::new("frobenius", stats.frobenius(), 2.0),
            Regime::new("spectral", stats.spectral(), 1.0),
            Regime::new("op_2_to_inf", stats.opnorm(2.0, f64::INFINITY)?.value, 2.0 * alpha / (2.0 + alpha)),
            Regime::new("max_abs", stats.max_abs(), alpha / 2.0),
        ],
        constants,
    )
}

pub fn f2(t: f64, stats: &MatrixStats, alpha: f64) -> Result<f64> {
    Ok(f2_bound(stats, alpha, BoundConstants::default())?.exponent(t))
}

/// Regimes of the refined sparse bound, `0 < α ≤ 1`.
///
/// The γ₁ regime is stored as `(√γ₁, 2)` so that `(t/√γ₁)² = t²/γ₁`.
pub fn f_sparse_bound(stats: &MatrixStats, p: &[f64], alpha: f64, constants: BoundConstants) -> Result<TailBound> {
    check_alpha(alpha, 0.0, 1.0, "the refined sparse bound")?;
    require_symmetric(stats)?;
    check_p(p)?;
    let sf = stats.sparse_functionals(p)?;
    TailBound::new(
        vec![
            Regime::new("gamma1", sf.gamma1.sqrt(), 2.0),
            Regime::new("weighted_spectral", sf.weighted_spectral, 1.0),
            Regime::new("row_weighted_max", sf.row_weighted_max, 2.0 * alpha / (2.0 + alpha)),
            Regime::new("max_abs", stats.max_abs(), alpha / 2.0),
        ],
        constants,
    )
}

pub fn f_sparse(t: f64, stats: &MatrixStats, p: &[f64], alpha: f64) -> Result<f64> {
    Ok(f_sparse_bound(stats, p, alpha, BoundConstants::default())?.exponent(t))
}

fn check_p(p: &[f64]) -> Result<()> {
    match p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::invalid(format!("p[{i}] = {} outside [0, 1]", p[i]))),
        None => Ok(()),
    }
}

/// Two-regime sparse bound valid for `0 < α ≤ 2`.
pub fn sparse_hw_tail(stats: &MatrixStats, p: &[f64], alpha: f64, constants: BoundConstants) -> Result<TailBound> {
    check_alpha(alpha, 0.0, 2.0, "the sparse bound")?;
    require_symmetric(stats)?;
    check_p(p)?;
    let g1 = matrix_norms::gamma1(stats.matrix(), p)?;
    TailBound::new(
        vec![Regime::new("gamma1", g1.sqrt(), 2.0), Regime::new("spectral", stats.spectral(), alpha / 2.0)],
        constants,
    )
}

/// Bound on `P{|ξᵀAξ − EξᵀAξ| ≥ L²t}` from the two-regime sparse inequality.
pub fn hw_sparse_bound(
    t: f64,
    stats: &MatrixStats,
    p: &[f64],
    alpha: f64,
    l: f64,
    constants: BoundConstants,
) -> Result<f64> {
    check_scale(l)?;
    Ok(sparse_hw_tail(stats, p, alpha, constants)?.eval(t))
}

/// Refined sparse bound on `P{|ξᵀAξ − EξᵀAξ| ≥ L²t}`, `0 < α ≤ 1`.
pub fn hw_sparse_refined_bound(
    t: f64,
    stats: &MatrixStats,
    p: &[f64],
    alpha: f64,
    l: f64,
    constants: BoundConstants,
) -> Result<f64> {
    check_scale(l)?;
    Ok(f_sparse_bound(stats, p, alpha, constants)?.eval(t))
}

/// Sparse Bernstein bound for `P{|Σ aᵢδᵢζᵢ| ≥ t}` at a raw threshold `t`.
pub fn bernstein_sparse_tail(a: &[f64], p: &[f64], alpha: f64, l: f64, constants: BoundConstants) -> Result<TailBound> {
    check_alpha(alpha, 0.0, 1.0, "the sparse Bernstein bound")?;
    check_scale(l)?;
    check_p(p)?;
    if a.len() != p.len() {
        return Err(Error::dims(format!("a has length {} but p has length {}", a.len(), p.len())));
    }
    let var: f64 = a.iter().zip(p).map(|(x, q)| x * x * q).sum();
    let sup = a.iter().zip(p).filter(|(_, q)| **q > 0.0).fold(0.0f64, |m, (x, _)| m.max(x.abs()));
    TailBound::new(
        vec![Regime::new("variance", l * var.sqrt(), 2.0), Regime::new("max_abs", l * sup, alpha)],
        constants,
    )
}

pub fn bernstein_sparse_bound(
    t: f64,
    a: &[f64],
    p: &[f64],
    alpha: f64,
    l: f64,
    constants: BoundConstants,
) -> Result<f64> {
    Ok(bernstein_sparse_tail(a, p, alpha, l, constants)?.eval(t))
}

/// Bound on `P{| ‖Aξ‖₂ − √p‖A‖_F | > L²t}` for a rectangular `A`.
pub fn norm_concentration_tail(stats: &MatrixStats, alpha: f64, constants: BoundConstants) -> Result<TailBound> {
    check_alpha(alpha, 0.0, 2.0, "norm concentration")?;
    let s = stats.spectral();
    TailBound::new(vec![Regime::new("gaussian", s, 2.0), Regime::new("alpha", s, alpha)], constants)
}

pub fn norm_concentration_bound(
    t: f64,
    stats: &MatrixStats,
    alpha: f64,
    l: f64,
    constants: BoundConstants,
) -> Result<f64> {
    check_scale(l)?;
    Ok(norm_concentration_tail(stats, alpha, constants)?.eval(t))
}

/// One entry of [`comparison_bounds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedBound {
    pub name: String,
    /// `None` when the bound does not apply to these parameters.
    pub value: Option<f64>,
    pub note: Option<String>,
}

/// The known bound families, evaluated at the common threshold `L²t` with
/// the default constants. Sparse variants use `p`; the dense ones remain
/// valid for sparse vectors because `|δᵢζᵢ| ≤ |ζᵢ|`, only weaker.
pub fn comparison_bounds(t: f64, stats: &MatrixStats, p: &[f64], alpha: f64, l: f64) -> Result<Vec<NamedBound>> {
    comparison_bounds_with(t, stats, p, alpha, l, BoundConstants::default())
}

pub fn comparison_bounds_with(
    t: f64,
    stats: &MatrixStats,
    p: &[f64],
    alpha: f64,
    l: f64,
    constants: BoundConstants,
) -> Result<Vec<NamedBound>> {
    check_alpha(alpha, 0.0, 2.0, "comparison")?;
    check_scale(l)?;
    check_p(p)?;
    require_symmetric(stats)?;
    Ok(comparison_tails(stats, p, alpha, constants)
        .into_iter()
        .map(|(name, tail)| match tail {
            Ok(b) => NamedBound {
                name,
                value: Some(b.eval(t)),
                note: None,
            },
            Err(e) => NamedBound {
                name,
                value: None,
                note: Some(e.to_string()),
            },
        })
        .collect())
}

/// Every bound family as a [`TailBound`], or the reason it does not apply.
pub fn comparison_tails(
    stats: &MatrixStats,
    p: &[f64],
    alpha: f64,
    constants: BoundConstants,
) -> Vec<(String, Result<TailBound>)> {
    let fro = stats.frobenius();
    let spec = stats.spectral();
    let sf = stats.sparse_functionals(p);
    let g1 = sf.as_ref().map(|s| s.gamma1).unwrap_or(f64::NAN);
    let g2 = sf.as_ref().map(|s| s.gamma2).unwrap_or(f64::NAN);

    let classical = if alpha == 2.0 {
        TailBound::new(vec![Regime::new("frobenius", fro, 2.0), Regime::new("spectral", spec, 1.0)], constants)
    } else {
        Err(Error::invalid("sub-gaussian bound needs alpha = 2"))
    };
    let simplified = TailBound::new(
        vec![Regime::new("frobenius", fro, 2.0), Regime::new("spectral", spec, alpha / 2.0)],
        constants,
    );
    let sparse_subgaussian = if alpha == 2.0 {
        TailBound::new(vec![Regime::new("gamma1", g1.sqrt(), 2.0), Regime::new("spectral", spec, 1.0)], constants)
    } else {
        Err(Error::invalid("sparse sub-gaussian bound needs alpha = 2"))
    };
    let sparse_gamma2 = TailBound::new(
        vec![
            Regime::new("gamma1", g1.sqrt(), 2.0),
            Regime::new("gamma2", g2, 1.0),
            Regime::new("max_abs", stats.max_abs(), (alpha / 2.0).min(0.5)),
        ],
        constants,
    );
    vec![
        ("classical_hw".to_string(), classical),
        ("log_concave_hw".to_string(), f1_bound(stats, alpha, constants)),
        ("log_convex_hw".to_string(), f2_bound(stats, alpha, constants)),
        ("simplified_hw".to_string(), simplified),
        ("sparse_subgaussian_hw".to_string(), sparse_subgaussian),
        ("sparse_gamma2_hw".to_string(), sparse_gamma2),
        ("sparse_hw".to_string(), sparse_hw_tail(stats, p, alpha, constants)),
        ("sparse_hw_refined".to_string(), f_sparse_bound(stats, p, alpha, constants)),
    ]
}

/// Converts `‖ξ‖_{L_r} ≤ Σ_k C_k r^{β_k} + C_{m+1}` (for `r ≥ r0`) into a
/// tail bound. Returns `(threshold, bound)` with threshold `e(mt + C_{m+1})`
/// and bound `e^{r0}·exp(−min_k (t/C_k)^{1/β_k})`.
pub fn moments_to_tail(c: &[f64], beta: &[f64], r0: f64, t: f64) -> Result<(f64, f64)> {
    let m = beta.len();
    if m == 0 || c.len() != m + 1 {
        return Err(Error::dims(format!("need m >= 1 exponents and m + 1 constants, got {} and {}", m, c.len())));
    }
    if c.iter().any(|v| !(*v > 0.0)) || beta.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("moment constants and exponents must be positive"));
    }
    if !(r0 >= 1.0) {
        return Err(Error::invalid(format!("r0 must be at least 1, got {r0}")));
    }
    let threshold = std::f64::consts::E * (m as f64 * t + c[m]);
    let f = if t <= 0.0 {
        0.0
    } else {
        (0..m).map(|k| (t / c[k]).powf(1.0 / beta[k])).fold(f64::INFINITY, f64::min)
    };
    Ok((threshold, r0.exp() * (-f).exp()))
}

/// Right-hand sides of the moment bounds for the decoupled bilinear form
/// `Σ a_ij ξ_i ξ̃_j` with Weibull entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearMoments {
    /// Five-term form, `1 ≤ α ≤ 2`.
    pub five_term: Option<f64>,
    /// Four-term form, `0 < α ≤ 1`.
    pub four_term: Option<f64>,
    /// `√r‖A‖_F + r^{2/α}‖A‖_{2→2}`, any `0 < α ≤ 2`.
    pub simplified: f64,
}

pub fn moment_oracle_bilinear(stats: &MatrixStats, alpha: f64, r: f64) -> Result<BilinearMoments> {
    check_alpha(alpha, 0.0, 2.0, "bilinear moments")?;
    if !(r >= 2.0) {
        return Err(Error::invalid(format!("moment order must be at least 2, got {r}")));
    }
    require_symmetric(stats)?;
    let a = stats.matrix();
    let diag = (0..a.nrows()).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    if diag > 0.0 {
        return Err(Error::NonzeroDiagonal(diag));
    }
    let fro = stats.frobenius();
    let spec = stats.spectral();
    let simplified = r.sqrt() * fro + r.powf(2.0 / alpha) * spec;
    let five_term = if alpha >= 1.0 {
        let a_star = matrix_norms::conjugate_exponent(alpha);
        Some(
            r.sqrt() * fro
                + r * spec
                + r.powf(1.0 / alpha) * stats.mixed(a_star)?
                + r.powf((alpha + 2.0) / (2.0 * alpha)) * stats.opnorm(2.0, a_star)?.value
                + r.powf(2.0 / alpha) * stats.opnorm(alpha, a_star)?.value,
        )
    } else {
        None
    };
    let four_term = if alpha <= 1.0 {
        Some(
            r.sqrt() * fro
                + r * spec
                + r.powf((alpha + 2.0) / (2.0 * alpha)) * stats.opnorm(2.0, f64::INFINITY)?.value
                + r.powf(2.0 / alpha) * stats.max_abs(),
        )
    } else {
        None
    };
    Ok(BilinearMoments {
        five_term,
        four_term,
        simplified,
    })
}

/// Moment expressions for the centered sparse quadratic form: the refined
/// four-term expression and the two-term one it implies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMoments {
    pub refined: f64,
    pub simplified: f64,
}

pub fn sparse_moment_forms(stats: &MatrixStats, p: &[f64], alpha: f64, r: f64) -> Result<SparseMoments> {
    check_alpha(alpha, 0.0, 2.0, "sparse moments")?;
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("moment order must be at least 1, got {r}")));
    }
    let sf = stats.sparse_functionals(p)?;
    let g = sf.gamma1.sqrt();
    Ok(SparseMoments {
        refined: r.powf(2.0 / alpha) * stats.max_abs()
            + r.powf(0.5 + 1.0 / alpha) * sf.row_weighted_max
            + r * sf.weighted_spectral
            + r.sqrt() * g,
        simplified: r.powf(2.0 / alpha) * stats.spectral() + r.sqrt() * g,
    })
}

/// Bound evaluations on a grid, ready for JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t_grid: Vec<f64>,
    /// `None` entries mark a bound that does not apply.
    pub bounds: BTreeMap<String, Option<Vec<f64>>>,
    pub norms: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn build(t_grid: &[f64], stats: &MatrixStats, p: &[f64], alpha: f64, constants: BoundConstants) -> Result<Self> {
        check_alpha(alpha, 0.0, 2.0, "bound report")?;
        check_p(p)?;
        require_symmetric(stats)?;
        let mut bounds = BTreeMap::new();
        for (name, tail) in comparison_tails(stats, p, alpha, constants) {
            bounds.insert(name, tail.ok().map(|b| t_grid.iter().map(|&t| b.eval(t)).collect()));
        }
        let mut norms = BTreeMap::new();
        norms.insert("frobenius".to_string(), stats.frobenius());
        norms.insert("spectral".to_string(), stats.spectral());
        norms.insert("max_abs".to_string(), stats.max_abs());
        norms.insert("op_2_to_inf".to_string(), stats.opnorm(2.0, f64::INFINITY)?.value);
        let sf = stats.sparse_functionals(p)?;
        norms.insert("gamma1".to_string(), sf.gamma1);
        norms.insert("gamma2".to_string(), sf.gamma2);
        norms.insert("weighted_spectral".to_string(), sf.weighted_spectral);
        norms.insert("row_weighted_max".to_string(), sf.row_weighted_max);
        if alpha >= 1.0 {
            let a_star = matrix_norms::conjugate_exponent(alpha);
            norms.insert("mixed_alpha_star".to_string(), stats.mixed(a_star)?);
            norms.insert("op_2_to_alpha_star".to_string(), stats.opnorm(2.0, a_star)?.value);
            norms.insert("op_alpha_to_alpha_star".to_string(), stats.opnorm(alpha, a_star)?.value);
        }
        Ok(Self {
            t_grid: t_grid.to_vec(),
            bounds,
            norms,
        })
    }
}

/// The 2×2 exchange matrix `[[0,1],[1,0]]`.
pub fn exchange_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}
