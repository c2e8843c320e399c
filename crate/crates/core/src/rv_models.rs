//! Sparse α-sub-exponential random vectors.
//!
//! A coordinate of a sparse vector is `δ·ζ` with `δ ~ Bernoulli(p)` and `ζ`
//! drawn from one of the base laws in [`DistKind`]. The symmetric Weibull law
//! `W_s(α)` (survival `exp(-x^α)` of `|ζ|`) is the canonical heavy-tailed base.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Magnitude cap for Weibull draws; only reachable for very small α.
pub const WEIBULL_CLAMP: f64 = 1e300;

/// Tail exponent α ∈ (0, 2].
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlphaParam(f64);

impl AlphaParam {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 2.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::invalid(format!("alpha must lie in (0, 2], got {alpha}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// Conjugate exponent α/(α−1); infinite at α = 1, `None` below 1.
    pub fn conjugate(self) -> Option<f64> {
        if self.0 < 1.0 {
            None
        } else if self.0 == 1.0 {
            Some(f64::INFINITY)
        } else {
            Some(self.0 / (self.0 - 1.0))
        }
    }
}

impl TryFrom<f64> for AlphaParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaParam> for f64 {
    fn from(a: AlphaParam) -> f64 {
        a.0
    }
}

/// Base law of a coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistKind {
    SymmetricWeibull { alpha: AlphaParam, scale: f64 },
    Gaussian { sigma: f64 },
    Rademacher,
}

/// A base law plus the optional unit-variance normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistributionSpec", into = "RawDistributionSpec")]
pub struct DistributionSpec {
    pub kind: DistKind,
    pub unit_variance: bool,
}

/// JSON shape: `{"kind": "...", "alpha": ..., "scale": ..., "unit_variance": bool}`.
/// For the Gaussian kind `scale` carries σ.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistributionSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default)]
    unit_variance: bool,
}

impl TryFrom<RawDistributionSpec> for DistributionSpec {
    type Error = Error;

    fn try_from(raw: RawDistributionSpec) -> Result<Self> {
        let kind = match raw.kind.as_str() {
            "symmetric_weibull" | "weibull" => {
                let alpha = raw
                    .alpha
                    .ok_or_else(|| Error::invalid("symmetric_weibull requires alpha"))?;
                DistKind::SymmetricWeibull {
                    alpha: AlphaParam::new(alpha)?,
                    scale: raw.scale.unwrap_or(1.0),
                }
            }
            "gaussian" => DistKind::Gaussian {
                sigma: raw.scale.unwrap_or(1.0),
            },
            "rademacher" => DistKind::Rademacher,
            other => return Err(Error::invalid(format!("unknown distribution kind {other:?}"))),
        };
        let spec = DistributionSpec {
            kind,
            unit_variance: raw.unit_variance,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<DistributionSpec> for RawDistributionSpec {
    fn from(spec: DistributionSpec) -> Self {
        match spec.kind {
            DistKind::SymmetricWeibull { alpha, scale } => RawDistributionSpec {
                kind: "symmetric_weibull".into(),
                alpha: Some(alpha.get()),
                scale: Some(scale),
                unit_variance: spec.unit_variance,
            },
            DistKind::Gaussian { sigma } => RawDistributionSpec {
                kind: "gaussian".into(),
                alpha: None,
                scale: Some(sigma),
                unit_variance: spec.unit_variance,
            },
            DistKind::Rademacher => RawDistributionSpec {
                kind: "rademacher".into(),
                alpha: None,
                scale: None,
                unit_variance: spec.unit_variance,
            },
        }
    }
}

impl DistributionSpec {
    pub fn weibull(alpha: f64) -> Result<Self> {
        Ok(Self {
            kind: DistKind::SymmetricWeibull {
                alpha: AlphaParam::new(alpha)?,
                scale: 1.0,
            },
            unit_variance: false,
        })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = Self {
            kind: DistKind::Gaussian { sigma },
            unit_variance: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rademacher() -> Self {
        Self {
            kind: DistKind::Rademacher,
            unit_variance: false,
        }
    }

    pub fn with_unit_variance(mut self, on: bool) -> Self {
        self.unit_variance = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DistKind::SymmetricWeibull { scale, .. } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::invalid(format!("Weibull scale must be positive, got {scale}")))
            }
            DistKind::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("Gaussian sigma must be positive, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Variance of the law before normalization.
    pub fn raw_variance(&self) -> f64 {
        match self.kind {
            DistKind::SymmetricWeibull { alpha, scale } => {
                scale * scale * gamma(1.0 + 2.0 / alpha.get())
            }
            DistKind::Gaussian { sigma } => sigma * sigma,
            DistKind::Rademacher => 1.0,
        }
    }

    /// Variance of the samples actually produced.
    pub fn variance(&self) -> f64 {
        if self.unit_variance {
            1.0
        } else {
            self.raw_variance()
        }
    }

    fn normalizer(&self) -> f64 {
        if self.unit_variance {
            1.0 / self.raw_variance().sqrt()
        } else {
            1.0
        }
    }

    /// Closed-form ψ_α norm at the law's natural exponent, when known.
    ///
    /// `W_s(α)·s` has ψ_α norm `s·2^{1/α}`; Rademacher at α = 2 has `(ln 2)^{-1/2}`;
    /// a centered Gaussian has ψ₂ norm `σ·sqrt(8/3)`.
    pub fn psi_alpha_exact(&self) -> Option<(f64, f64)> {
        let norm = self.normalizer();
        match self.kind {
            DistKind::SymmetricWeibull { alpha, scale } => {
                Some((alpha.get(), norm * scale * 2f64.powf(1.0 / alpha.get())))
            }
            DistKind::Gaussian { sigma } => Some((2.0, norm * sigma * (8.0f64 / 3.0).sqrt())),
            DistKind::Rademacher => Some((2.0, norm / std::f64::consts::LN_2.sqrt())),
        }
    }

    /// Tail exponent of the law: α for `W_s(α)`, 2 for the sub-Gaussian kinds.
    pub fn tail_alpha(&self) -> f64 {
        match self.kind {
            DistKind::SymmetricWeibull { alpha, .. } => alpha.get(),
            DistKind::Gaussian { .. } | DistKind::Rademacher => 2.0,
        }
    }

    /// Draw one sample; returns the value and whether it was clamped.
    #[inline]
    pub fn sample_checked(&self, rng: &mut RngStream) -> (f64, bool) {
        let (v, clamped) = match self.kind {
            DistKind::SymmetricWeibull { alpha, scale } => {
                let (w, c) = sample_weibull_checked(alpha, rng);
                (scale * w, c)
            }
            DistKind::Gaussian { sigma } => {
                let g: f64 = StandardNormal.sample(rng);
                (sigma * g, false)
            }
            DistKind::Rademacher => (rng.sign(), false),
        };
        (v * self.normalizer(), clamped)
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        self.sample_checked(rng).0
    }
}

/// One draw of `W_s(α)`: `S·(−ln U)^{1/α}` with U on the open unit interval.
#[inline]
pub fn sample_weibull(alpha: AlphaParam, rng: &mut RngStream) -> f64 {
    sample_weibull_checked(alpha, rng).0
}

#[inline]
pub fn sample_weibull_checked(alpha: AlphaParam, rng: &mut RngStream) -> (f64, bool) {
    let u = rng.open_unit();
    let e = -u.ln();
    let a = alpha.get();
    let mag = if a == 1.0 {
        e
    } else if a == 2.0 {
        e.sqrt()
    } else {
        e.powf(1.0 / a)
    };
    let sign = rng.sign();
    if mag.is_finite() && mag <= WEIBULL_CLAMP {
        (sign * mag, false)
    } else {
        (sign * WEIBULL_CLAMP, true)
    }
}

/// Law of `ξ` with `ξ_i = δ_i·ζ_i`, `δ_i ~ Bernoulli(p_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    p: Vec<f64>,
    base: Vec<DistributionSpec>,
}

impl SparseModel {
    /// Same base law for every coordinate.
    pub fn new(p: Vec<f64>, base: DistributionSpec) -> Result<Self> {
        let n = p.len();
        Self::with_bases(p, vec![base; n])
    }

    pub fn with_bases(p: Vec<f64>, base: Vec<DistributionSpec>) -> Result<Self> {
        if p.len() != base.len() {
            return Err(Error::dims(format!(
                "{} retention probabilities but {} base laws",
                p.len(),
                base.len()
            )));
        }
        if let Some((i, &pi)) = p.iter().enumerate().find(|(_, &pi)| !(0.0..=1.0).contains(&pi)) {
            return Err(Error::invalid(format!("p[{i}] = {pi} outside [0, 1]")));
        }
        for b in &base {
            b.validate()?;
        }
        Ok(Self { p, base })
    }

    pub fn uniform(n: usize, p: f64, base: DistributionSpec) -> Result<Self> {
        Self::new(vec![p; n], base)
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn base(&self, i: usize) -> &DistributionSpec {
        &self.base[i]
    }

    pub fn bases(&self) -> &[DistributionSpec] {
        &self.base
    }

    /// `E ξ_i² = p_i·Var ζ_i`.
    pub fn second_moment(&self, i: usize) -> f64 {
        self.p[i] * self.base[i].variance()
    }

    /// Fill `out` with one draw of ξ; returns the number of clamped coordinates.
    ///
    /// Both δ_i and ζ_i are always drawn so that the stream consumption per
    /// coordinate is fixed.
    #[inline]
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) -> usize {
        debug_assert_eq!(out.len(), self.p.len());
        let mut clamps = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let keep = rng.bernoulli(self.p[i]);
            let (z, c) = self.base[i].sample_checked(rng);
            clamps += c as usize;
            *o = if keep { z } else { 0.0 };
        }
        clamps
    }
}

pub fn sample_sparse_vector(model: &SparseModel, rng: &mut RngStream) -> Vec<f64> {
    let mut out = vec![0.0; model.dim()];
    model.sample_into(rng, &mut out);
    out
}

/// Relative tolerance on t for the ψ_α bisection.
pub const PSI_REL_TOL: f64 = 1e-3;
const PSI_MAX_DOUBLINGS: usize = 200;

/// Result of a Monte Carlo ψ_α evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiAlphaEstimate {
    pub value: f64,
    /// Estimated `E exp(|ξ|^α / value^α)` (≤ 2).
    pub moment_at_value: f64,
    /// Estimated moment at `value/(1+tol)` (> 2).
    pub moment_below: f64,
    pub n_samples: usize,
}

/// Monte Carlo ψ_α norm: the smallest t with `E exp(|ξ|^α/t^α) ≤ 2`, found
/// by bisection on a geometrically expanded bracket over one fixed sample set.
pub fn psi_alpha_norm(
    dist: &DistributionSpec,
    alpha: AlphaParam,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<PsiAlphaEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("psi_alpha_norm needs at least one sample"));
    }
    let a = alpha.get();
    let powers: Vec<f64> = (0..n_samples).map(|_| dist.sample(rng).abs().powf(a)).collect();
    psi_alpha_from_powers(&powers, a)
}

/// Bisection core over precomputed `|ξ|^α` values.
pub fn psi_alpha_from_powers(powers: &[f64], alpha: f64) -> Result<PsiAlphaEstimate> {
    let moment = |t: f64| -> f64 {
        let inv = t.powf(-alpha);
        powers.iter().map(|&y| (y * inv).exp()).sum::<f64>() / powers.len() as f64
    };
    let below = |m: f64| m.is_finite() && m <= 2.0;

    let mut hi = 1.0;
    let mut doublings = 0;
    while !below(moment(hi)) {
        hi *= 2.0;
        doublings += 1;
        if doublings > PSI_MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::BracketExpansion(format!(
                "exp-moment stays above 2 up to t = {hi:e}"
            )));
        }
    }
    let mut lo = hi;
    doublings = 0;
    while below(moment(lo)) {
        lo /= 2.0;
        doublings += 1;
        if doublings > PSI_MAX_DOUBLINGS || lo == 0.0 {
            // all samples are (numerically) zero
            return Ok(PsiAlphaEstimate {
                value: 0.0,
                moment_at_value: 1.0,
                moment_below: 1.0,
                n_samples: powers.len(),
            });
        }
    }
    // invariant: moment(lo) > 2 >= moment(hi)
    while hi > lo * (1.0 + PSI_REL_TOL) {
        let mid = 0.5 * (lo + hi);
        if below(moment(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(PsiAlphaEstimate {
        value: hi,
        moment_at_value: moment(hi),
        moment_below: moment(hi / (1.0 + PSI_REL_TOL)),
        n_samples: powers.len(),
    })
}
