use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sparse_hw::covest::{generate_samples, write_samples, MultivariateModel};
use sparse_hw::matrix_io::to_csv;
use sparse_hw::rng::chunked_map;
use sparse_hw::rv_models::{DistributionSpec, SparseModel};
use sparse_hw::stats::wilson;

use super::check_work;
use crate::config::{load, MatrixSpec, Retention};
use crate::report::Builder;
use crate::{CliError, Common, Report};

const CHUNK: usize = 4096;
const MASK_Z: f64 = 3.29;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub seed: u64,
    pub distribution: DistributionSpec,
    pub p: Retention,
    pub n: usize,
    /// Length of ξ; ignored when `b` is given.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Draw masked observations of `Bξ` instead of ξ itself.
    #[serde(default)]
    pub b: Option<MatrixSpec>,
}

pub fn sample(c: &Common) -> Result<Report, CliError> {
    let loaded = load::<SampleConfig>(c.config.as_deref(), c.seed)?;
    let cfg = &loaded.config;
    let mut b = Builder::new("sample", loaded.echo.clone());
    let (rates, p, clamps) = match &cfg.b {
        Some(bs) => {
            let bm = bs.build(cfg.seed, &loaded.base)?;
            let p = cfg.p.expand(bm.nrows())?;
            let model = MultivariateModel::with_distribution(bm, cfg.distribution, p.clone())?;
            check_work(cfg.n, model.dim() * model.latent_dim())?;
            let samples = generate_samples(&model, cfg.n, cfg.seed)?;
            let dir = c.out.as_deref().ok_or_else(|| CliError::Config("masked observations need --out".into()))?;
            write_samples(dir, "samples", &samples, &model, cfg.seed)?;
            (samples.mask_rates(), p, samples.clamps as u64)
        }
        None => {
            let dim = cfg.dim.ok_or_else(|| CliError::Config("give `dim` or `b`".into()))?;
            let p = cfg.p.expand(dim)?;
            let model = SparseModel::new(p.clone(), cfg.distribution)?;
            check_work(cfg.n, dim)?;
            let chunks = chunked_map(cfg.n, CHUNK, cfg.seed, "cli.sample", |_, len, rng| {
                let mut rows = Vec::with_capacity(len * dim);
                let mut x = vec![0.0; dim];
                let mut clamps = 0u64;
                for _ in 0..len {
                    clamps += model.sample_into(rng, &mut x) as u64;
                    rows.extend_from_slice(&x);
                }
                (rows, clamps)
            });
            let clamps = chunks.iter().map(|c| c.1).sum();
            let flat: Vec<f64> = chunks.into_iter().flat_map(|c| c.0).collect();
            let xs = DMatrix::from_row_slice(cfg.n, dim, &flat);
            let rates = (0..dim)
                .map(|j| xs.column(j).iter().filter(|v| **v != 0.0).count() as f64 / cfg.n.max(1) as f64)
                .collect();
            b.table("samples", to_csv(&xs));
            (rates, p, clamps)
        }
    };
    let n = cfg.n as u64;
    let ok = rates.iter().zip(&p).all(|(r, q)| wilson((r * n as f64).round() as u64, n, MASK_Z).contains(*q));
    b.verdict("mask_rate", ok, format!("observed retention inside the {MASK_Z}σ Wilson interval for every coordinate"));
    b.put("mask_rates", &rates)?;
    b.put("clamps", clamps)?;
    b.finish(c.out.as_deref())
}
