//! Monte Carlo and exact enumeration for sparse quadratic forms.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, TailBound};
use crate::error::{Error, Result};
use crate::hash::json_hash;
use crate::matrix_norms::{self, MatrixStats};
use crate::rng::{chunked_map, RngStream, DEFAULT_CHUNK};
use crate::rv_models::{DistKind, DistributionSpec, SparseModel};
use crate::stats::{self, wilson, LineFit, MeanAcc, Z95};

/// Smallest sample count accepted by the tail simulators.
pub const MIN_SAMPLES: usize = 1000;
/// Largest moment order accepted without an explicit override.
pub const MAX_MOMENT_ORDER: f64 = 16.0;
/// Atom budget for exact enumeration.
pub const ENUMERATION_BUDGET: u64 = 1 << 24;
/// Decoupling constant asserted by the exhaustive check.
pub const DECOUPLING_CONSTANT: f64 = 8.0;

/// `S_A(ξ) = ξᵀAξ` for a symmetric `A` and a sparse model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadFormInstance {
    pub a: DMatrix<f64>,
    pub model: SparseModel,
    /// Subtract the analytic mean `Σ a_ii p_i Var ζ_i`.
    pub center: bool,
}

impl QuadFormInstance {
    pub fn new(a: DMatrix<f64>, model: SparseModel, center: bool) -> Result<Self> {
        if !matrix_norms::is_symmetric(&a) {
            return Err(Error::invalid("quadratic form matrix must be square and exactly symmetric"));
        }
        if a.nrows() != model.dim() {
            return Err(Error::dims(format!("matrix is {0}x{0} but model has dimension {1}", a.nrows(), model.dim())));
        }
        Ok(Self { a, model, center })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `E ξᵀAξ`; zero when centering is off.
    pub fn mean(&self) -> f64 {
        if !self.center {
            return 0.0;
        }
        (0..self.dim()).map(|i| self.a[(i, i)] * self.model.second_moment(i)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|v| *v == 0.0)
    }

    /// Stable hash of (A, model, center).
    pub fn hash(&self) -> String {
        json_hash(&(self.a.nrows(), self.a.ncols(), row_major(&self.a), &self.model, self.center))
    }
}

pub(crate) fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            v.push(a[(i, j)]);
        }
    }
    v
}

/// `xᵀAx` for symmetric `A`, skipping zero coordinates of `x`.
pub fn quadratic_form(a: &DMatrix<f64>, x: &[f64], support: &mut Vec<usize>) -> f64 {
    support.clear();
    support.extend(x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
    let mut s = 0.0;
    for (k, &i) in support.iter().enumerate() {
        let xi = x[i];
        let mut row = 0.5 * a[(i, i)] * xi;
        for &j in &support[k + 1..] {
            row += a[(i, j)] * x[j];
        }
        s += xi * row;
    }
    2.0 * s
}

/// `xᵀAy` for any square `A`.
pub fn bilinear_form(a: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            row += a[(i, j)] * yj;
        }
        s += xi * row;
    }
    s
}

/// Survival estimates on a threshold grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTail {
    pub t_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    /// Number of samples with deviation ≥ t, per grid point.
    pub counts: Vec<u64>,
    pub n_samples: u64,
    pub seed: u64,
    /// Weibull draws clamped at the overflow guard.
    pub clamps: u64,
    pub instance_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailMetadata {
    pub seed: u64,
    pub n_samples: u64,
    pub instance_hash: String,
    pub clamps: u64,
}

impl EmpiricalTail {
    /// Builds a tail from exceedance counts.
    pub fn from_counts(t_grid: Vec<f64>, counts: Vec<u64>, n_samples: u64, seed: u64, instance_hash: String) -> Self {
        let mut survival = Vec::with_capacity(counts.len());
        let mut ci_low = Vec::with_capacity(counts.len());
        let mut ci_high = Vec::with_capacity(counts.len());
        let mut half = Vec::with_capacity(counts.len());
        for &c in &counts {
            let w = wilson(c, n_samples, Z95);
            survival.push(w.estimate);
            ci_low.push(w.low);
            ci_high.push(w.high);
            half.push(w.half_width());
        }
        Self {
            t_grid,
            survival,
            ci_low,
            ci_high,
            ci_half_width: half,
            counts,
            n_samples,
            seed,
            clamps: 0,
            instance_hash,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,survival,ci_low,ci_high\n");
        for k in 0..self.t_grid.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                self.t_grid[k], self.survival[k], self.ci_low[k], self.ci_high[k]
            ));
        }
        s
    }

    pub fn metadata(&self) -> TailMetadata {
        TailMetadata {
            seed: self.seed,
            n_samples: self.n_samples,
            instance_hash: self.instance_hash.clone(),
            clamps: self.clamps,
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.metadata()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid("thresholds must be positive and finite"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("threshold grid must be strictly increasing"));
    }
    Ok(())
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        Err(Error::invalid(format!("need at least {MIN_SAMPLES} samples, got {n}")))
    } else {
        Ok(())
    }
}

/// Output of the generic streaming engine.
#[derive(Clone, Debug)]
pub struct StatisticRun {
    pub tail: EmpiricalTail,
    /// Mean accumulator of the auxiliary value returned by the statistic.
    pub aux: MeanAcc,
}

/// Streams `n_samples` draws of a statistic and counts exceedances of each
/// threshold. `stat` returns `(deviation, auxiliary, clamps)`.
pub fn simulate_statistic<F>(
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
    domain: &str,
    instance_hash: String,
    stat: F,
) -> Result<StatisticRun>
where
    F: Fn(&mut RngStream, &mut Scratch) -> (f64, f64, usize) + Sync,
{
    check_grid(t_grid)?;
    check_samples(n_samples)?;
    let k = t_grid.len();
    let parts = chunked_map(n_samples, DEFAULT_CHUNK, seed, domain, |_, len, rng| {
        let mut hist = vec![0u64; k + 1];
        let mut aux = MeanAcc::default();
        let mut clamps = 0u64;
        let mut scratch = Scratch::default();
        for _ in 0..len {
            let (d, a, c) = stat(rng, &mut scratch);
            hist[t_grid.partition_point(|&t| t <= d)] += 1;
            aux.push(a);
            clamps += c as u64;
        }
        (hist, aux, clamps)
    });
    let mut hist = vec![0u64; k + 1];
    let mut aux = MeanAcc::default();
    let mut clamps = 0;
    for (h, a, c) in &parts {
        hist.iter_mut().zip(h).for_each(|(x, y)| *x += y);
        aux.merge(a);
        clamps += c;
    }
    // counts[k] = #{d ≥ t_k} = Σ_{j > k} hist[j]
    let mut counts = vec![0u64; k];
    let mut acc = 0u64;
    for j in (0..k).rev() {
        acc += hist[j + 1];
        counts[j] = acc;
    }
    let mut tail = EmpiricalTail::from_counts(t_grid.to_vec(), counts, n_samples as u64, seed, instance_hash);
    tail.clamps = clamps;
    Ok(StatisticRun { tail, aux })
}

/// Per-worker buffers reused across draws.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub support: Vec<usize>,
}

impl Scratch {
    fn sized(&mut self, n: usize) {
        if self.x.len() != n {
            self.x = vec![0.0; n];
            self.y = vec![0.0; n];
        }
    }
}

/// Draw one centered deviation `|S − ES|`.
fn draw_deviation(inst: &QuadFormInstance, mean: f64, rng: &mut RngStream, s: &mut Scratch) -> (f64, usize) {
    s.sized(inst.dim());
    let c = inst.model.sample_into(rng, &mut s.x);
    let q = quadratic_form(&inst.a, &s.x, &mut s.support);
    ((q - mean).abs(), c)
}

/// Empirical survival of `|S_A(ξ) − E S_A(ξ)|` on the grid.
pub fn simulate_tail(inst: &QuadFormInstance, t_grid: &[f64], n_samples: usize, seed: u64) -> Result<EmpiricalTail> {
    let mean = inst.mean();
    let run = simulate_statistic(t_grid, n_samples, seed, "quadform", inst.hash(), |rng, s| {
        let (d, c) = draw_deviation(inst, mean, rng, s);
        (d, d, c)
    })?;
    Ok(run.tail)
}

/// All centered deviations in sample order (for moment-based checks).
pub fn simulate_deviations(inst: &QuadFormInstance, n_samples: usize, seed: u64) -> Vec<f64> {
    let mean = inst.mean();
    chunked_map(n_samples, DEFAULT_CHUNK, seed, "quadform", |_, len, rng| {
        let mut s = Scratch::default();
        (0..len).map(|_| draw_deviation(inst, mean, rng, &mut s).0).collect::<Vec<_>>()
    })
    .concat()
}

/// Accumulates `Σ (x/scale)^r` with a running max scale so that high powers
/// of heavy-tailed values neither overflow nor underflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSum {
    pub r: f64,
    pub scale: f64,
    pub sum: f64,
    pub n: u64,
}

impl PowerSum {
    pub fn new(r: f64) -> Self {
        Self {
            r,
            scale: 0.0,
            sum: 0.0,
            n: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let x = x.abs();
        self.n += 1;
        if x > self.scale {
            if self.scale > 0.0 {
                self.sum *= (self.scale / x).powf(self.r);
            }
            self.scale = x;
        }
        if self.scale > 0.0 {
            self.sum += (x / self.scale).powf(self.r);
        }
    }

    pub fn merge(&mut self, o: &PowerSum) {
        if o.scale > self.scale {
            if self.scale > 0.0 {
                self.sum *= (self.scale / o.scale).powf(self.r);
            }
            self.scale = o.scale;
            self.sum += o.sum;
        } else if o.scale > 0.0 {
            self.sum += o.sum * (o.scale / self.scale).powf(self.r);
        }
        self.n += o.n;
    }

    /// `(mean |x|^r)^{1/r}`.
    pub fn lr_norm(&self) -> f64 {
        if self.n == 0 || self.scale == 0.0 {
            return 0.0;
        }
        self.scale * (self.sum / self.n as f64).powf(1.0 / self.r)
    }
}

/// `(mean |x|^r)^{1/r}` of a sample.
pub fn lr_norm(xs: &[f64], r: f64) -> f64 {
    let mut p = PowerSum::new(r);
    xs.iter().for_each(|&x| p.push(x));
    p.lr_norm()
}

fn check_order(r: f64) -> Result<()> {
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("moment order must be at least 1, got {r}")));
    }
    if r > MAX_MOMENT_ORDER {
        return Err(Error::invalid(format!(
            "moment order {r} exceeds the cap {MAX_MOMENT_ORDER}; high empirical moments overflow or are dominated by a few draws"
        )));
    }
    Ok(())
}

/// Empirical `‖S − ES‖_{L_r}`.
pub fn empirical_moment(inst: &QuadFormInstance, r: f64, n_samples: usize, seed: u64) -> Result<f64> {
    check_order(r)?;
    check_samples(n_samples)?;
    let mean = inst.mean();
    let parts = chunked_map(n_samples, DEFAULT_CHUNK, seed, "quadform", |_, len, rng| {
        let mut s = Scratch::default();
        let mut p = PowerSum::new(r);
        for _ in 0..len {
            p.push(draw_deviation(inst, mean, rng, &mut s).0);
        }
        p
    });
    let mut total = PowerSum::new(r);
    parts.iter().for_each(|p| total.merge(p));
    let v = total.lr_norm();
    if !v.is_finite() {
        return Err(Error::Numerical(format!("L_{r} estimate overflowed")));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledEstimate {
    /// Empirical `‖ξᵀAξ̃‖_{L_r}`.
    pub lr_norm: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

fn max_diag(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()))
}

/// L_r norm of the decoupled form `ξᵀAξ̃` with `ξ̃` an independent copy.
pub fn simulate_decoupled(
    a: &DMatrix<f64>,
    model: &SparseModel,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DecoupledEstimate> {
    check_order(r)?;
    check_samples(n_samples)?;
    if !a.is_square() || a.nrows() != model.dim() {
        return Err(Error::dims("decoupled form needs a square matrix matching the model dimension"));
    }
    let d = max_diag(a);
    if d > 0.0 {
        return Err(Error::NonzeroDiagonal(d));
    }
    let parts = chunked_map(n_samples, DEFAULT_CHUNK, seed, "decoupled", |_, len, rng| {
        let mut s = Scratch::default();
        s.sized(model.dim());
        let mut p = PowerSum::new(r);
        let mut m = MeanAcc::default();
        for _ in 0..len {
            model.sample_into(rng, &mut s.x);
            model.sample_into(rng, &mut s.y);
            let v = bilinear_form(a, &s.x, &s.y);
            p.push(v);
            m.push(v);
        }
        (p, m)
    });
    let mut p = PowerSum::new(r);
    let mut m = MeanAcc::default();
    for (pp, mm) in &parts {
        p.merge(pp);
        m.merge(mm);
    }
    Ok(DecoupledEstimate {
        lr_norm: p.lr_norm(),
        mean: m.mean(),
        std_error: m.std_error(),
        n_samples: n_samples as u64,
    })
}

/// Every atom `(ξ, probability)` of a model whose bases are all Rademacher.
pub fn enumerate_atoms(model: &SparseModel) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut supports: Vec<Vec<(f64, f64)>> = Vec::with_capacity(model.dim());
    for i in 0..model.dim() {
        let b = model.base(i);
        if !matches!(b.kind, DistKind::Rademacher) {
            return Err(Error::invalid("exact enumeration needs Rademacher base laws"));
        }
        let p = model.p()[i];
        let mut s = Vec::new();
        if p < 1.0 {
            s.push((0.0, 1.0 - p));
        }
        if p > 0.0 {
            s.push((-1.0, 0.5 * p));
            s.push((1.0, 0.5 * p));
        }
        supports.push(s);
    }
    let total = supports.iter().try_fold(1u64, |acc, s| acc.checked_mul(s.len() as u64));
    match total {
        Some(t) if t <= ENUMERATION_BUDGET => {}
        _ => {
            return Err(Error::BudgetExceeded(format!(
                "enumeration needs more than {ENUMERATION_BUDGET} atoms"
            )))
        }
    }
    let mut atoms = vec![(Vec::with_capacity(model.dim()), 1.0)];
    for s in &supports {
        let mut next = Vec::with_capacity(atoms.len() * s.len());
        for (x, pr) in &atoms {
            for &(v, q) in s {
                let mut y = x.clone();
                y.push(v);
                next.push((y, pr * q));
            }
        }
        atoms = next;
    }
    Ok(atoms)
}

/// Exact survival of `|S − ES|` for a Rademacher instance.
pub fn exact_tail(inst: &QuadFormInstance, t_grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(t_grid)?;
    let mean = inst.mean();
    let atoms = enumerate_atoms(&inst.model)?;
    let mut surv = vec![0.0; t_grid.len()];
    let mut support = Vec::new();
    for (x, pr) in &atoms {
        let d = (quadratic_form(&inst.a, x, &mut support) - mean).abs();
        let k = t_grid.partition_point(|&t| t <= d);
        surv[..k].iter_mut().for_each(|s| *s += pr);
    }
    Ok(surv)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingCheck {
    /// `‖ξᵀAξ‖_r / ‖ξᵀAξ̃‖_r`; 1 for the zero matrix by convention.
    pub ratio: f64,
    pub quadratic_norm: f64,
    pub decoupled_norm: f64,
    pub atoms: u64,
    pub within_constant: bool,
}

/// Exact decoupling ratio by enumerating every outcome of `(ξ, ξ̃)` for
/// Rademacher entries with retention `p`.
pub fn decoupling_check_exhaustive(a: &DMatrix<f64>, p: &[f64], r: f64) -> Result<DecouplingCheck> {
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("moment order must be at least 1, got {r}")));
    }
    if !a.is_square() || a.nrows() != p.len() {
        return Err(Error::dims("decoupling check needs a square matrix matching p"));
    }
    let d = max_diag(a);
    if d > 0.0 {
        return Err(Error::NonzeroDiagonal(d));
    }
    let model = SparseModel::new(p.to_vec(), DistributionSpec::rademacher())?;
    let atoms = enumerate_atoms(&model)?;
    let k = atoms.len() as u64;
    if k.saturating_mul(k) > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "decoupled enumeration needs {} atoms (budget {ENUMERATION_BUDGET})",
            k.saturating_mul(k)
        )));
    }
    let mut quad = 0.0;
    for (x, pr) in &atoms {
        quad += pr * bilinear_form(a, x, x).abs().powf(r);
    }
    let mut dec = 0.0;
    for (x, px) in &atoms {
        for (y, py) in &atoms {
            dec += px * py * bilinear_form(a, x, y).abs().powf(r);
        }
    }
    let qn = quad.powf(1.0 / r);
    let dn = dec.powf(1.0 / r);
    let ratio = if a.iter().all(|v| *v == 0.0) { 1.0 } else { qn / dn };
    Ok(DecouplingCheck {
        ratio,
        quadratic_norm: qn,
        decoupled_norm: dn,
        atoms: k * k,
        within_constant: ratio <= DECOUPLING_CONSTANT,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Fitted slope of `log(−log S)` against `log t`.
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Grid indices where `10/N ≤ S ≤ 0.05`.
pub fn default_slope_window(tail: &EmpiricalTail) -> Range<usize> {
    let lo = 10.0 / tail.n_samples as f64;
    let idx: Vec<usize> = (0..tail.survival.len())
        .filter(|&k| tail.survival[k] >= lo && tail.survival[k] <= 0.05)
        .collect();
    match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) => a..b + 1,
        _ => 0..0,
    }
}

/// Least-squares slope of `log(−log S)` vs `log t` over a window (default:
/// [`default_slope_window`]).
pub fn tail_slope_fit(tail: &EmpiricalTail, window: Option<Range<usize>>) -> Result<SlopeFit> {
    let w = window.unwrap_or_else(|| default_slope_window(tail));
    if w.end > tail.t_grid.len() {
        return Err(Error::invalid("slope window runs past the grid"));
    }
    slope_fit_points(&tail.t_grid[w.clone()], &tail.survival[w])
}

/// Slope fit on raw `(t, survival)` pairs; points outside `(0, 1)` are skipped.
pub fn slope_fit_points(t: &[f64], survival: &[f64]) -> Result<SlopeFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(survival)
        .filter(|(t, s)| **t > 0.0 && **s > 0.0 && **s < 1.0)
        .map(|(t, s)| (t.ln(), (-s.ln()).ln()))
        .unzip();
    if x.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 4 grid points with survival inside (0, 1), got {}",
            x.len()
        )));
    }
    let LineFit { slope, intercept, r2 } =
        stats::fit_line(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate slope window".into()))?;
    Ok(SlopeFit {
        exponent: slope,
        intercept,
        r2,
        points: x.len(),
    })
}

/// Calibrated comparison of an empirical tail with a bound's exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    /// Grid index where the constant was fitted.
    pub fit_index: usize,
    /// `−log S(t_fit) / f(t_fit)`.
    pub calibration: f64,
    /// Grid indices inside the window.
    pub checked: Vec<usize>,
    pub empirical_exponent: Vec<f64>,
    pub calibrated_bound_exponent: Vec<f64>,
    /// Per checked point: `−log(ci_low) ≥ (1 − rel_tol)·calibration·f(t)`.
    pub holds: Vec<bool>,
    pub rel_tol: f64,
    pub passed: bool,
}

/// Fits `c = −log S / f` at one grid point of the window (default:
/// [`default_slope_window`]) and checks `−log S(t) ≥ c·f(t)` at every other
/// window point, allowing for sampling noise through the Wilson lower limit
/// and a relative slack `rel_tol` on the calibrated exponent.
///
/// The fit point is the window point nearest (in log t) to the bound's first
/// regime corner; with no corner it is the deepest point. It depends on the
/// bound only, never on the data. `scale` converts raw thresholds to the
/// bound's normalized `t`.
pub fn dominance_check(
    tail: &EmpiricalTail,
    bound: &TailBound,
    scale: f64,
    window: Option<Range<usize>>,
    rel_tol: f64,
) -> Result<DominanceCheck> {
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::invalid(format!("rel_tol must lie in [0, 1), got {rel_tol}")));
    }
    let w = window.unwrap_or_else(|| default_slope_window(tail));
    if w.end > tail.t_grid.len() {
        return Err(Error::invalid("dominance window runs past the grid"));
    }
    let checked: Vec<usize> = w.filter(|&k| tail.counts[k] > 0 && tail.counts[k] < tail.n_samples).collect();
    if checked.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "dominance check needs at least 2 grid points with survival inside (0, 1), got {}",
            checked.len()
        )));
    }
    let fit_index = match bound.corners().first() {
        Some(&tc) => *checked
            .iter()
            .min_by(|&&a, &&b| {
                let da = ((tail.t_grid[a] / scale) / tc).ln().abs();
                let db = ((tail.t_grid[b] / scale) / tc).ln().abs();
                da.total_cmp(&db)
            })
            .expect("nonempty window"),
        None => *checked.last().expect("nonempty window"),
    };
    let f_at = |k: usize| bound.exponent(tail.t_grid[k] / scale);
    let emp = |k: usize| -tail.survival[k].ln();
    let calibration = emp(fit_index) / f_at(fit_index);
    let mut empirical = Vec::new();
    let mut calibrated = Vec::new();
    let mut holds = Vec::new();
    for &k in &checked {
        let c = calibration * f_at(k);
        empirical.push(emp(k));
        calibrated.push(c);
        holds.push(-tail.ci_low[k].ln() >= c * (1.0 - rel_tol - 1e-12));
    }
    let passed = holds.iter().all(|h| *h);
    Ok(DominanceCheck {
        fit_index,
        calibration,
        checked,
        empirical_exponent: empirical,
        calibrated_bound_exponent: calibrated,
        holds,
        rel_tol,
        passed,
    })
}

/// One moment order in the lower-bound check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub r: f64,
    pub lr: f64,
    pub l2r: f64,
    /// Empirical `P{|S − ES| ≥ ½·L̂_r}`.
    pub probability: f64,
    /// Paley–Zygmund bound `(1 − 2^{−r})² (L̂_r/L̂_{2r})^{2r}`.
    pub paley_zygmund: f64,
    pub pz_holds: bool,
    /// Log-convex exponent `f₂(½L̂_r)` at unit scale.
    pub f2_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub degenerate: bool,
    pub rows: Vec<LowerBoundRow>,
    /// `(L̂₂²/L̂₄²)²/4`, the weak Paley–Zygmund form at r = 2.
    pub pz_weak_r2: Option<f64>,
    /// Fit `log P_r ≈ log κ − c₁ r`.
    pub c1: Option<f64>,
    pub kappa: Option<f64>,
    pub fit_r2: Option<f64>,
    pub passed: bool,
    pub n_samples: u64,
    pub seed: u64,
    pub instance_hash: String,
}

/// Empirical check that the tail of `ηᵀAη` with i.i.d. `W_s(α)` entries
/// decays no faster than exponentially in the moment index.
pub fn lower_bound_check(
    a: &DMatrix<f64>,
    alpha: f64,
    r_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<LowerBoundReport> {
    let model = SparseModel::uniform(a.nrows(), 1.0, DistributionSpec::weibull(alpha)?)?;
    let inst = QuadFormInstance::new(a.clone(), model, true)?;
    let hash = inst.hash();
    if inst.is_zero() {
        return Ok(LowerBoundReport {
            degenerate: true,
            rows: vec![],
            pz_weak_r2: None,
            c1: None,
            kappa: None,
            fit_r2: None,
            passed: true,
            n_samples: n_samples as u64,
            seed,
            instance_hash: hash,
        });
    }
    let d = max_diag(a);
    if d > 0.0 {
        return Err(Error::NonzeroDiagonal(d));
    }
    if r_grid.is_empty() {
        return Err(Error::invalid("moment grid is empty"));
    }
    for &r in r_grid {
        check_order(2.0 * r)?;
    }
    check_samples(n_samples)?;
    let devs = simulate_deviations(&inst, n_samples, seed);
    let stats = MatrixStats::new(a.clone());
    let f2 = if alpha <= 1.0 { Some(bounds::f2_bound(&stats, alpha, Default::default())?) } else { None };

    let mut rows = Vec::new();
    for &r in r_grid {
        let lr = lr_norm(&devs, r);
        let l2r = lr_norm(&devs, 2.0 * r);
        let hits = devs.iter().filter(|&&x| x >= 0.5 * lr).count();
        let probability = hits as f64 / devs.len() as f64;
        let paley_zygmund = (1.0 - 0.5f64.powf(r)).powi(2) * (lr / l2r).powf(2.0 * r);
        rows.push(LowerBoundRow {
            r,
            lr,
            l2r,
            probability,
            paley_zygmund,
            pz_holds: probability >= paley_zygmund,
            f2_exponent: f2.as_ref().map(|b| b.exponent(0.5 * lr)).unwrap_or(f64::NAN),
        });
    }
    let last = rows.last().expect("nonempty grid");
    if ((last.probability * devs.len() as f64).round() as u64) < 10 {
        return Err(Error::InsufficientData(format!(
            "fewer than 10 exceedances at r = {}; increase n_samples",
            last.r
        )));
    }
    let pz_weak_r2 = {
        let l2 = lr_norm(&devs, 2.0);
        let l4 = lr_norm(&devs, 4.0);
        Some((l2 * l2 / (l4 * l4)).powi(2) / 4.0)
    };
    let (c1, kappa, fit_r2) = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.r).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.probability.ln()).collect();
        match stats::fit_line(&x, &y) {
            Some(f) => {
                let c1 = -f.slope;
                let kappa = rows.iter().map(|r| r.probability * (c1 * r.r).exp()).fold(f64::INFINITY, f64::min);
                (Some(c1), Some(kappa), Some(f.r2))
            }
            None => (None, None, None),
        }
    } else {
        (None, None, None)
    };
    let passed = rows.iter().all(|r| r.pz_holds) && c1.map(|c| c.is_finite() && c > 0.0).unwrap_or(true);
    Ok(LowerBoundReport {
        degenerate: false,
        rows,
        pz_weak_r2,
        c1,
        kappa,
        fit_r2,
        passed,
        n_samples: n_samples as u64,
        seed,
        instance_hash: hash,
    })
}

/// Empirical survival of `|Σ aᵢξᵢ|`.
pub fn simulate_linear_tail(
    a: &[f64],
    model: &SparseModel,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalTail> {
    if a.len() != model.dim() {
        return Err(Error::dims(format!("a has length {} but model has dimension {}", a.len(), model.dim())));
    }
    let hash = json_hash(&(a, model));
    let run = simulate_statistic(t_grid, n_samples, seed, "linear", hash, |rng, s| {
        s.sized(a.len());
        let c = model.sample_into(rng, &mut s.x);
        let v: f64 = a.iter().zip(&s.x).map(|(x, y)| x * y).sum();
        (v.abs(), v, c)
    })?;
    Ok(run.tail)
}

/// Result of the norm-concentration simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConcentration {
    /// Survival of `|‖Aξ‖₂ − √p‖A‖_F|`.
    pub tail: EmpiricalTail,
    pub mean_norm: f64,
    pub mean_std_error: f64,
    /// `√(mean p_i)·‖A‖_F` with uniform p this is `√p‖A‖_F`.
    pub center: f64,
}

/// Simulates `‖Aξ‖₂` for a rectangular `A` and sparse `ξ`; the deviation is
/// measured from `√p‖A‖_F` (p uniform) or from `√(Σ_j p_j ‖A e_j‖²)` in general.
pub fn simulate_norm_concentration(
    a: &DMatrix<f64>,
    model: &SparseModel,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<NormConcentration> {
    if a.ncols() != model.dim() {
        return Err(Error::dims(format!("matrix has {} columns but model has dimension {}", a.ncols(), model.dim())));
    }
    let p = model.p();
    let center = (0..a.ncols())
        .map(|j| p[j] * a.column(j).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let hash = json_hash(&(a.nrows(), a.ncols(), row_major(a), model));
    let m = a.nrows();
    let run = simulate_statistic(t_grid, n_samples, seed, "norm", hash, |rng, s| {
        s.sized(a.ncols());
        let c = model.sample_into(rng, &mut s.x);
        if s.y.len() != m {
            s.y = vec![0.0; m];
        }
        s.y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in s.x.iter().enumerate() {
            if xj != 0.0 {
                for i in 0..m {
                    s.y[i] += a[(i, j)] * xj;
                }
            }
        }
        let norm = s.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        ((norm - center).abs(), norm, c)
    })?;
    Ok(NormConcentration {
        mean_norm: run.aux.mean(),
        mean_std_error: run.aux.std_error(),
        tail: run.tail,
        center,
    })
}
