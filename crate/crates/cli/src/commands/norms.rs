use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sparse_hw::matrix_norms::{conjugate_exponent, MatrixStats, OpNormOptions};

use crate::config::{load, Loaded, MatrixSpec, Retention};
use crate::report::Builder;
use crate::{CliError, NormsArgs, Report};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsConfig {
    pub seed: u64,
    pub matrix: MatrixSpec,
    /// Retention for the sparse functionals (square matrices only).
    #[serde(default)]
    pub p: Option<Retention>,
    /// Adds the ℓ_α → ℓ_α* family for α in [1, 2].
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub opnorm: OpNormOptions,
}

#[derive(Serialize)]
struct Row {
    value: f64,
    exact: bool,
}

pub fn norms(args: &NormsArgs) -> Result<Report, CliError> {
    let c = &args.common;
    let loaded = match (&c.config, &args.matrix) {
        (Some(_), Some(_)) => return Err(CliError::Config("give --config or --matrix, not both".into())),
        (Some(path), None) => {
            if args.p.is_some() || args.alpha.is_some() {
                return Err(CliError::Config("--p and --alpha go in the config when --config is used".into()));
            }
            load::<NormsConfig>(Some(path), c.seed)?
        }
        (None, Some(path)) => {
            let config = NormsConfig {
                seed: c.seed.unwrap_or(0),
                matrix: MatrixSpec::File { path: path.clone() },
                p: args.p.map(Retention::Uniform),
                alpha: args.alpha,
                opnorm: OpNormOptions::default(),
            };
            let echo = serde_json::to_value(&config).map_err(|e| CliError::Run(e.to_string()))?;
            Loaded {
                config,
                echo,
                base: ".".into(),
            }
        }
        (None, None) => return Err(CliError::Config("norms needs --matrix or --config".into())),
    };
    let cfg = &loaded.config;
    let mut b = Builder::new("norms", loaded.echo.clone());
    let a = cfg.matrix.build(cfg.seed, &loaded.base)?;
    let stats = MatrixStats::with_options(a.clone(), cfg.opnorm);
    let mut rows: BTreeMap<String, Row> = BTreeMap::new();
    let mut put = |name: &str, value: f64, exact: bool| {
        rows.insert(name.to_string(), Row { value, exact });
    };
    put("frobenius", stats.frobenius(), true);
    put("spectral", stats.spectral(), true);
    put("max_abs", stats.max_abs(), true);
    put("op_2_to_inf", stats.opnorm(2.0, f64::INFINITY)?.value, true);
    put("op_1_to_2", stats.opnorm(1.0, 2.0)?.value, true);
    if let Some(alpha) = cfg.alpha {
        if !(1.0..=2.0).contains(&alpha) {
            return Err(CliError::Config(format!("alpha must lie in [1, 2] for the operator norms, got {alpha}")));
        }
        let a_star = conjugate_exponent(alpha);
        put("mixed_alpha_star", stats.mixed(a_star)?, true);
        let v = stats.opnorm(2.0, a_star)?;
        put("op_2_to_alpha_star", v.value, v.exact);
        let v = stats.opnorm(alpha, a_star)?;
        put("op_alpha_to_alpha_star", v.value, v.exact);
    }
    if let Some(p) = &cfg.p {
        if !a.is_square() {
            return Err(CliError::Config("sparse functionals need a square matrix".into()));
        }
        let p = p.expand(a.nrows())?;
        let sf = stats.sparse_functionals(&p)?;
        put("gamma1", sf.gamma1, true);
        put("gamma2", sf.gamma2, true);
        put("weighted_spectral", sf.weighted_spectral, true);
        put("row_weighted_max", sf.row_weighted_max, true);
    }
    let chain = rows["max_abs"].value <= rows["spectral"].value * (1.0 + 1e-12)
        && rows["op_2_to_inf"].value <= rows["spectral"].value * (1.0 + 1e-12)
        && rows["spectral"].value <= rows["frobenius"].value * (1.0 + 1e-12);
    b.verdict("norm_chain", chain, "max_abs ≤ ‖A‖_{2→∞} ≤ ‖A‖_{2→2} ≤ ‖A‖_F");
    if let Some(g1) = rows.get("gamma1") {
        let ok = rows["row_weighted_max"].value <= rows["op_2_to_inf"].value * (1.0 + 1e-12)
            && rows["weighted_spectral"].value <= rows["spectral"].value * (1.0 + 1e-12)
            && g1.value <= rows["frobenius"].value.powi(2) * (1.0 + 1e-12);
        b.verdict("sparse_norm_chain", ok, "row_weighted_max ≤ ‖A‖_{2→∞}, weighted_spectral ≤ ‖A‖_{2→2}, γ₁ ≤ ‖A‖_F²");
    }
    let text: String = rows.iter().map(|(k, r)| format!("{k}\t{:e}\n", r.value)).collect();
    if c.out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    let mut table = String::from("name,value,exact\n");
    for (k, r) in &rows {
        table.push_str(&format!("{k},{:e},{}\n", r.value, r.exact));
    }
    b.table("norms", table);
    b.put("norms", &rows)?;
    b.finish(c.out.as_deref())
}
