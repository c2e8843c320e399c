use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sparse_hw::covest::{
    generate_samples, ipw_estimator, ipw_unbiasedness, read_samples, rip_bound_rhs_with, rip_concentration, rip_k, sup_k2, write_samples,
    MultivariateModel, SupOptions, ThetaSet,
};
use sparse_hw::matrix_io::to_csv;
use sparse_hw::rv_models::DistributionSpec;
use sparse_hw::stats::wilson;

use super::check_work;
use crate::config::{load, Grid, MatrixSpec, Retention};
use crate::report::Builder;
use crate::{CliError, Common, Report};

/// z for the two-sided 99.9% Wilson interval on observed mask rates.
const MASK_Z: f64 = 3.29;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovestConfig {
    pub seed: u64,
    pub b: MatrixSpec,
    /// Base law of ξ; always normalized to unit variance.
    pub distribution: DistributionSpec,
    pub p: Retention,
    /// Observations per estimate.
    pub n: usize,
    /// Independent estimates for the unbiasedness check (0 skips it).
    #[serde(default)]
    pub replicates: usize,
    #[serde(default = "four")]
    pub tolerance_se: f64,
    /// Also write the raw observations and masks next to the report.
    #[serde(default)]
    pub write_samples: bool,
}

fn four() -> f64 {
    4.0
}

fn mask_verdict(b: &mut Builder, rates: &[f64], p: &[f64], n: usize) {
    let ok = rates.iter().zip(p).all(|(r, q)| wilson((r * n as f64).round() as u64, n as u64, MASK_Z).contains(*q));
    b.verdict("mask_rate", ok, format!("observed retention inside the {MASK_Z}σ Wilson interval for every coordinate"));
}

pub fn covest(c: &Common) -> Result<Report, CliError> {
    let loaded = load::<CovestConfig>(c.config.as_deref(), c.seed)?;
    let cfg = &loaded.config;
    let mut b = Builder::new("covest", loaded.echo.clone());
    let bm = cfg.b.build(cfg.seed, &loaded.base)?;
    let p = cfg.p.expand(bm.nrows())?;
    let model = MultivariateModel::with_distribution(bm, cfg.distribution, p.clone())?;
    let (d, m) = (model.dim(), model.latent_dim());
    check_work(cfg.n.max(1) * (cfg.replicates + 1), d * (d + m))?;
    let samples = generate_samples(&model, cfg.n, cfg.seed)?;
    let est = ipw_estimator(&samples, &p)?;
    let rates = samples.mask_rates();
    mask_verdict(&mut b, &rates, &p, cfg.n);
    if cfg.replicates > 0 {
        let check = ipw_unbiasedness(&model, cfg.n, cfg.replicates, cfg.seed, cfg.tolerance_se)?;
        b.verdict(
            "ipw_unbiased",
            check.passed,
            format!("max |mean − Σ|/SE = {:.3} over {} replicates (limit {})", check.max_z, check.replicates, check.tolerance_se),
        );
        b.put("unbiasedness", &check)?;
    }
    if cfg.write_samples {
        let dir = c.out.as_deref().ok_or_else(|| CliError::Config("write_samples needs --out".into()))?;
        write_samples(dir, "samples", &samples, &model, cfg.seed)?;
    }
    b.table("sigma_hat", to_csv(&est));
    b.table("sigma", to_csv(&model.sigma()));
    b.put("sigma", model.sigma())?;
    b.put("sigma_hat", &est)?;
    b.put("mask_rates", &rates)?;
    b.put("clamps", samples.clamps)?;
    b.finish(c.out.as_deref())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RipConfig {
    pub seed: u64,
    /// Model, unless `samples` points at a sample manifest.
    #[serde(default)]
    pub b: Option<MatrixSpec>,
    #[serde(default)]
    pub distribution: Option<DistributionSpec>,
    #[serde(default)]
    pub p: Option<Retention>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub samples: Option<PathBuf>,
    pub k: usize,
    #[serde(default = "default_t_grid")]
    pub t_grid: Grid,
    /// Replicates for the quantile check (0 skips it).
    #[serde(default)]
    pub replicates: usize,
    #[serde(default)]
    pub sup: SupOptions,
    /// Largest constant the quantile check may fit.
    #[serde(default = "one")]
    pub max_constant: f64,
}

fn default_t_grid() -> Grid {
    Grid::Values(vec![1.0, 2.0, 4.0])
}

fn one() -> f64 {
    1.0
}

pub fn rip(c: &Common) -> Result<Report, CliError> {
    let loaded = load::<RipConfig>(c.config.as_deref(), c.seed)?;
    let cfg = &loaded.config;
    let mut b = Builder::new("rip", loaded.echo.clone());
    let (model, samples) = match (&cfg.samples, &cfg.b, &cfg.distribution, &cfg.p, cfg.n) {
        (Some(path), None, None, None, None) => {
            let path = if path.is_relative() { loaded.base.join(path) } else { path.clone() };
            let (manifest, samples) = read_samples(&path)?;
            (manifest.model()?, samples)
        }
        (None, Some(bs), Some(dist), Some(p), Some(n)) => {
            let bm = bs.build(cfg.seed, &loaded.base)?;
            let p = p.expand(bm.nrows())?;
            let model = MultivariateModel::with_distribution(bm, *dist, p)?;
            check_work(n * (cfg.replicates + 1), model.dim() * (model.dim() + model.latent_dim()))?;
            let samples = generate_samples(&model, n, cfg.seed)?;
            (model, samples)
        }
        _ => {
            return Err(CliError::Config("give either `samples` or all of `b`, `distribution`, `p`, `n`".into()));
        }
    };
    let n = samples.len();
    let dev = ipw_estimator(&samples, model.p())? - model.sigma();
    let value = rip_k(&dev, cfg.k)?;
    let grid = cfg.t_grid.values()?;
    let omega = ThetaSet::new(model.dim(), cfg.k)?;
    let (s2, evaluated, method) = sup_k2(&model, omega, &cfg.sup)?;
    let rhs = grid
        .iter()
        .map(|&t| rip_bound_rhs_with(t, cfg.k, n, &model, s2, evaluated, method))
        .collect::<Result<Vec<_>, _>>()?;
    if cfg.replicates > 0 {
        let conc = rip_concentration(&model, n, cfg.k, &grid, cfg.replicates, cfg.seed, &cfg.sup, cfg.max_constant)?;
        b.verdict(
            "rip_concentration",
            conc.passed,
            format!(
                "constant {:.4} fitted at the tightest point t = {} (limit {})",
                conc.fitted, conc.t_grid[conc.fit_index], conc.max_constant
            ),
        );
        b.put("concentration", &conc)?;
    }
    b.table("deviation", to_csv(&dev));
    b.put("n", n)?;
    b.put("rip", &value)?;
    b.put("rhs", &rhs)?;
    b.finish(c.out.as_deref())
}
