//! Fit driver: standardizes the data, runs one or more chains, computes
//! convergence diagnostics and posterior summaries, and persists everything.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use esag::mcmc::{
    diagnostics, identified_names, identified_series, run_chain, ChainConfig, ChainOutput,
    ProposalScales,
};
use esag::model::{DataModel, Dataset, ModelState};

use crate::chains::{ChainMeta, FitMeta, LayoutMeta};
use crate::config::RunConfig;
use crate::dataset::{RawDataset, TransformRecord};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub params: Vec<ParamSummary>,
    /// Acceptance rate per block family.
    pub acceptance: BTreeMap<String, f64>,
    pub iterations_per_second: Vec<f64>,
    pub mean_ess_iterations: Vec<f64>,
    pub total_draws: usize,
    pub max_rhat: f64,
    pub min_ess: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Posterior summary over the identified quantities of the fitted chains.
pub fn summarize(outputs: &[ChainOutput]) -> Result<FitSummary> {
    let refs: Vec<&ChainOutput> = outputs.iter().collect();
    let diag = diagnostics(&refs)?;
    let names = identified_names(&outputs[0].layout);
    let per_chain: Vec<Vec<Vec<f64>>> = outputs.iter().map(identified_series).collect();

    let mut params = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let mut merged: Vec<f64> =
            per_chain.iter().flat_map(|chain| chain[pi].iter().copied()).collect();
        let n = merged.len() as f64;
        let mean = merged.iter().sum::<f64>() / n;
        let sd = (merged.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0))
            .sqrt();
        merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
        params.push(ParamSummary {
            name: name.clone(),
            mean,
            sd,
            q025: quantile(&merged, 0.025),
            q975: quantile(&merged, 0.975),
            rhat: diag[pi].rhat,
            ess: diag[pi].ess,
            degenerate: diag[pi].degenerate,
        });
    }

    let mut acc_accum: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for out in outputs {
        for (k, v) in &out.acceptance {
            let e = acc_accum.entry(k.clone()).or_default();
            e.0 += v.accepted;
            e.1 += v.proposed;
        }
    }
    let acceptance =
        acc_accum.into_iter().map(|(k, (a, p))| (k, a as f64 / p.max(1) as f64)).collect();

    let max_rhat = params
        .iter()
        .filter(|p| !p.degenerate && p.rhat.is_finite())
        .map(|p| p.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_ess = params
        .iter()
        .filter(|p| !p.degenerate)
        .map(|p| p.ess)
        .fold(f64::INFINITY, f64::min);

    Ok(FitSummary {
        params,
        acceptance,
        iterations_per_second: outputs.iter().map(|o| o.iterations_per_second).collect(),
        mean_ess_iterations: outputs.iter().map(|o| o.mean_ess_iterations()).collect(),
        total_draws: outputs.iter().map(|o| o.n_draws()).sum(),
        max_rhat,
        min_ess,
    })
}

impl FitSummary {
    /// Plain-text table for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>8} {:>9}\n",
            "param", "mean", "sd", "2.5%", "97.5%", "r_hat", "ess"
        ));
        for p in &self.params {
            // Keep the table readable for large latent fields: skip eta rows.
            if p.name.starts_with("eta[") {
                continue;
            }
            out.push_str(&format!(
                "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>9.1}\n",
                p.name, p.mean, p.sd, p.q025, p.q975, p.rhat, p.ess
            ));
        }
        let eta_count = self.params.iter().filter(|p| p.name.starts_with("eta[")).count();
        if eta_count > 0 {
            let eta_max_rhat = self
                .params
                .iter()
                .filter(|p| p.name.starts_with("eta[") && p.rhat.is_finite())
                .map(|p| p.rhat)
                .fold(f64::NEG_INFINITY, f64::max);
            out.push_str(&format!(
                "({eta_count} latent-field parameters omitted; max eta r_hat {eta_max_rhat:.3})\n"
            ));
        }
        out.push_str(&format!(
            "max r_hat {:.4}, min ess {:.1}, draws {}\n",
            self.max_rhat, self.min_ess, self.total_draws
        ));
        for (k, v) in &self.acceptance {
            out.push_str(&format!("acceptance[{k}] = {v:.3}  "));
        }
        out.push('\n');
        out.push_str(&format!(
            "iterations/second per chain: {:?}; mean slice evaluations per eta update: {:?}\n",
            self.iterations_per_second
                .iter()
                .map(|v| (v * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            self.mean_ess_iterations
                .iter()
                .map(|v| (v * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
        ));
        out
    }
}

pub struct FitResult {
    pub outputs: Vec<ChainOutput>,
    pub meta: FitMeta,
    pub summary: FitSummary,
    /// Compositions renormalized during ingestion (warn when nonzero).
    pub adjusted_rows: usize,
}

/// Builds the model dataset and runs `config.chains` chains with seeds
/// `seed, seed+1, …`. Multiple chains run on worker threads when
/// `config.workers > 1`; outputs are identical either way.
pub fn fit_dataset(raw: RawDataset, config: &RunConfig, as_composition: bool) -> Result<FitResult> {
    config.validate()?;
    let dataset_hash = raw.content_hash();
    let (dataset, transform, adjusted_rows) = raw.into_model_dataset(as_composition)?;
    let mode: DataModel = config.mode.into();
    dataset.validate_for(mode)?;
    let hyper = config.hyperparams();
    hyper.validate(dataset.dim()).map_err(CliError::from)?;

    let outputs = run_chains(&dataset, config)?;
    let summary = summarize(&outputs)?;
    let meta = build_meta(config, &dataset, transform, dataset_hash, &outputs);
    Ok(FitResult { outputs, meta, summary, adjusted_rows })
}

/// Runs the configured chains against an already-validated dataset.
pub fn run_chains(dataset: &Dataset, config: &RunConfig) -> Result<Vec<ChainOutput>> {
    let mode: DataModel = config.mode.into();
    let hyper = config.hyperparams();
    let scales = ProposalScales::from(&config.scales);
    let init = ModelState::initial(
        dataset.dim(),
        dataset.p(),
        dataset.q(),
        dataset.sites.n(),
        &hyper,
    );

    let chain_cfg = |k: usize| {
        let mut cfg = ChainConfig::new(
            config.iterations,
            config.burn_in,
            config.thin,
            config.seed.wrapping_add(k as u64),
            mode,
        );
        cfg.noise = (&config.truncation_noise).into();
        cfg.workers = 1;
        cfg
    };

    let workers = config.workers.max(1).min(config.chains);
    if workers <= 1 || config.chains == 1 {
        let mut outputs = Vec::with_capacity(config.chains);
        for k in 0..config.chains {
            outputs.push(run_chain(init.clone(), dataset, &hyper, &scales, &chain_cfg(k))?);
        }
        return Ok(outputs);
    }

    let results: Vec<esag::Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|k| {
                let init = init.clone();
                let hyper = &hyper;
                let scales = &scales;
                let cfg = chain_cfg(k);
                scope.spawn(move || run_chain(init, dataset, hyper, scales, &cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain worker panicked")).collect()
    });
    let mut outputs = Vec::with_capacity(config.chains);
    for r in results {
        outputs.push(r?);
    }
    Ok(outputs)
}

pub fn build_meta(
    config: &RunConfig,
    dataset: &Dataset,
    transform: TransformRecord,
    dataset_hash: String,
    outputs: &[ChainOutput],
) -> FitMeta {
    FitMeta {
        mode: config.mode,
        spatial: config.spatial,
        layout: LayoutMeta::from(&outputs[0].layout),
        sites: dataset.sites.coords().to_vec(),
        transform,
        dataset_hash,
        chains: outputs
            .iter()
            .map(|o| ChainMeta {
                seed: o.seed,
                iterations: o.iterations,
                burn_in: o.burn_in,
                thin: o.thin,
                draws: o.n_draws(),
                acceptance: o
                    .acceptance
                    .iter()
                    .map(|(k, v)| (k.clone(), (v.accepted, v.proposed)))
                    .collect(),
                wall_seconds: o.wall_seconds,
                iterations_per_second: o.iterations_per_second,
                mean_ess_iterations: o.mean_ess_iterations(),
            })
            .collect(),
        mc_draws: config.mc_draws,
        pred_mc_draws: config.pred_mc_draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{fixtures, Mode};
    use crate::sim::simulate;

    fn tiny_config() -> RunConfig {
        let mut cfg = fixtures::sim_study_config(Mode::EsagPlus, true);
        cfg.iterations = 60;
        cfg.burn_in = 20;
        cfg.thin = 2;
        cfg.chains = 2;
        cfg.mc_draws = 300;
        cfg
    }

    #[test]
    fn fit_produces_summary_and_meta() {
        let mut spec = fixtures::sim_study_spec();
        spec.n = 12;
        spec.truth_grid = None;
        let sim = simulate(&spec, 3).unwrap();
        let result = fit_dataset(sim.dataset, &tiny_config(), false).unwrap();
        assert_eq!(result.outputs.len(), 2);
        assert_eq!(result.summary.total_draws, 2 * 20);
        assert!(result.summary.params.iter().any(|p| p.name == "b[1,0]"));
        assert!(result.summary.acceptance.contains_key("beta"));
        assert_eq!(result.meta.sites.len(), 12);
        let table = result.summary.render();
        assert!(table.contains("b[1,0]"));
    }

    #[test]
    fn non_spatial_fit_skips_latent_blocks() {
        let mut spec = fixtures::second_sim_spec(false);
        spec.n = 10;
        spec.truth_grid = None;
        let sim = simulate(&spec, 5).unwrap();
        let mut cfg = tiny_config();
        cfg.spatial = false;
        let result = fit_dataset(sim.dataset, &cfg, false).unwrap();
        assert!(!result.summary.acceptance.contains_key("eta"));
        assert!(!result.summary.acceptance.contains_key("phi"));
        assert!(result.summary.params.iter().all(|p| !p.name.starts_with("cct[")));
    }
}
