//! Scoring driver: compares two fitted chains on the same dataset with the
//! mean logarithmic score and the mean chi-square compositional distance,
//! both at posterior-mean parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use esag::predict::{mean_csd, mean_log_score, PosteriorDraws};

use crate::chains::{read_chains, FitMeta};
use crate::config::Mode;
use crate::dataset::RawDataset;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelScore {
    pub chain_file: String,
    pub mode: Mode,
    pub spatial: bool,
    pub mean_log_score: f64,
    pub mean_csd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_a: ModelScore,
    pub model_b: ModelScore,
    /// model_a − model_b; negative favors model A on both metrics.
    pub log_score_diff: f64,
    pub csd_diff: f64,
}

impl ScoreReport {
    pub fn render(&self) -> String {
        format!(
            "{:<28} {:>14} {:>10}\n{:<28} {:>14.4} {:>10.4}\n{:<28} {:>14.4} {:>10.4}\n\
             {:<28} {:>14.4} {:>10.4}\n",
            "model",
            "mean logS",
            "mean CSD",
            self.model_a.chain_file,
            self.model_a.mean_log_score,
            self.model_a.mean_csd,
            self.model_b.chain_file,
            self.model_b.mean_log_score,
            self.model_b.mean_csd,
            "difference (A − B)",
            self.log_score_diff,
            self.csd_diff,
        )
    }
}

fn score_one(
    chain_csv: &Path,
    meta: &FitMeta,
    outputs: &[esag::mcmc::ChainOutput],
    data: &esag::model::Dataset,
    mc_draws: usize,
    pred_mc_draws: usize,
    seed: u64,
) -> Result<ModelScore> {
    let refs: Vec<&_> = outputs.iter().collect();
    let draws = PosteriorDraws::from_outputs(&refs)?;
    let state = draws.mean_state();
    let mode = meta.mode.into();
    let baseline = meta.layout.baseline;
    let logs = mean_log_score(&state, data, mode, baseline, mc_draws, seed)?;
    let csd = mean_csd(&state, data, mode, baseline, pred_mc_draws, seed ^ 0x5eed)?;
    Ok(ModelScore {
        chain_file: chain_csv.display().to_string(),
        mode: meta.mode,
        spatial: meta.spatial,
        mean_log_score: logs,
        mean_csd: csd,
    })
}

/// Scores two chains fitted to the same dataset. The dataset content hash must
/// match both chain metadata records.
pub fn score_chains(
    chain_a: &Path,
    chain_b: &Path,
    raw: RawDataset,
    as_composition: bool,
    mc_draws: usize,
    pred_mc_draws: usize,
    seed: u64,
) -> Result<ScoreReport> {
    let hash = raw.content_hash();
    let (outputs_a, meta_a) = read_chains(chain_a)?;
    let (outputs_b, meta_b) = read_chains(chain_b)?;
    for (path, meta) in [(chain_a, &meta_a), (chain_b, &meta_b)] {
        if meta.dataset_hash != hash {
            return Err(CliError::Validation(format!(
                "dataset mismatch: {} was fitted to a different dataset \
                 (hash {} vs {hash})",
                path.display(),
                meta.dataset_hash
            )));
        }
    }
    let (data, transform, _) = raw.into_model_dataset(as_composition)?;
    if transform != meta_a.transform || transform != meta_b.transform {
        return Err(CliError::Validation(
            "covariate transform mismatch between dataset and fitted chains".into(),
        ));
    }

    let a = score_one(chain_a, &meta_a, &outputs_a, &data, mc_draws, pred_mc_draws, seed)?;
    let b = score_one(chain_b, &meta_b, &outputs_b, &data, mc_draws, pred_mc_draws, seed)?;
    Ok(ScoreReport {
        log_score_diff: a.mean_log_score - b.mean_log_score,
        csd_diff: a.mean_csd - b.mean_csd,
        model_a: a,
        model_b: b,
    })
}
