use serde::{Deserialize, Serialize};
use sparse_hw::matrix_io::to_csv;
use sparse_hw::sketchlr::{error_decay, low_rank_approx, tail_ratio, unbiasedness_check, SketchOptions};

use super::check_work;
use crate::config::{load, MatrixSpec};
use crate::report::{csv_table, Builder};
use crate::{CliError, Common, Report};

/// `σ_{r+1}(Y)/σ₁(Y)` above this counts as rank above r.
const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnbiasednessConfig {
    pub replicates: usize,
    #[serde(default = "four")]
    pub tolerance_se: f64,
}

fn four() -> f64 {
    4.0
}

fn fifty() -> usize {
    50
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub seed: u64,
    pub matrix: MatrixSpec,
    pub p: f64,
    /// Single sketch width: writes the factors of Y.
    #[serde(default)]
    pub r: Option<usize>,
    /// Width sweep: median error per width and the log-log slope.
    #[serde(default)]
    pub r_grid: Option<Vec<usize>>,
    #[serde(default = "fifty")]
    pub seeds: usize,
    #[serde(default)]
    pub options: SketchOptions,
    /// Unbiasedness check at width `r`.
    #[serde(default)]
    pub unbiasedness: Option<UnbiasednessConfig>,
    /// Accepted range `[lo, hi]` for the fitted slope.
    #[serde(default)]
    pub expected_slope: Option<[f64; 2]>,
}

pub fn sketch(c: &Common) -> Result<Report, CliError> {
    let loaded = load::<SketchConfig>(c.config.as_deref(), c.seed)?;
    let cfg = &loaded.config;
    let mut b = Builder::new("sketch", loaded.echo.clone());
    if cfg.r.is_none() && cfg.r_grid.is_none() {
        return Err(CliError::Config("give `r`, `r_grid` or both".into()));
    }
    if cfg.unbiasedness.is_some() && cfg.r.is_none() {
        return Err(CliError::Config("the unbiasedness check runs at width `r`".into()));
    }
    let x = cfg.matrix.build(cfg.seed, &loaded.base)?;
    let (m, n) = x.shape();
    if let Some(r) = cfg.r {
        let res = low_rank_approx(&x, r, cfg.p, cfg.seed, &cfg.options)?;
        let y = res.materialize();
        let ratio = tail_ratio(&y, r);
        b.verdict("rank_at_most_r", ratio <= RANK_TOL, format!("σ_(r+1)/σ_1 of Y = {ratio:e}"));
        // Y = left·rightᵀ with the 1/p folded into the left factor
        b.table("y_left", to_csv(&(&res.left / res.p)));
        b.table("y_right", to_csv(&res.right));
        b.put("max_error", res.max_error)?;
        b.put("rank", res.rank)?;
        b.put("mu_col", res.mu_col)?;
        b.put("mu_row", res.mu_row)?;
        b.put("spectral_norm", res.spectral_norm)?;
        b.put("eps", res.eps)?;
        b.put("bound", res.bound)?;
        b.put("admissible", res.admissible)?;
        b.put("oversketched", res.oversketched)?;
        b.put("truncated", res.truncated)?;
        b.put("psi2", res.psi2)?;
        if let Some(u) = &cfg.unbiasedness {
            check_work(u.replicates, m * n * r)?;
            let check = unbiasedness_check(&x, r, cfg.p, u.replicates, cfg.seed, &cfg.options, u.tolerance_se)?;
            b.verdict(
                "unbiased",
                check.passed,
                format!("max |mean − X|/SE = {:.3} over {} sketches", check.max_z, check.replicates),
            );
            b.verdict(
                "rank_at_most_r_every_run",
                check.max_tail_ratio <= RANK_TOL,
                format!("largest σ_(r+1)/σ_1 = {:e}", check.max_tail_ratio),
            );
            b.put("unbiasedness", &check)?;
        }
    }
    if let Some(grid) = &cfg.r_grid {
        let widest = grid.iter().copied().max().unwrap_or(0);
        check_work(cfg.seeds * grid.len(), m * n * widest)?;
        let decay = error_decay(&x, cfg.p, grid, cfg.seeds, cfg.seed, &cfg.options)?;
        let nonincreasing = decay.median_error.windows(2).all(|w| w[1] <= w[0]);
        b.verdict("median_nonincreasing", nonincreasing, "median max-norm error does not grow with r");
        if let Some([lo, hi]) = cfg.expected_slope {
            let ok = decay.slope >= lo && decay.slope <= hi;
            b.verdict("decay_slope", ok, format!("fitted slope {:.4}, accepted [{lo}, {hi}]", decay.slope));
        }
        let rows = decay.r_grid.iter().zip(&decay.median_error).map(|(r, e)| vec![Some(*r as f64), Some(*e)]);
        b.table("errors", csv_table(&["r", "median_error"], rows));
        b.put("decay", &decay)?;
    }
    b.finish(c.out.as_deref())
}
