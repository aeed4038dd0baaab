//! Prediction driver: fitted chains + a covariate grid → long-format CSV
//! (site, component, value, std_error), one row per site/component pair.

use std::path::Path;

use esag::predict::{predict_at_sites, CompositionPrediction, PosteriorDraws, SitePredictionConfig};
use esag::spatial::{SiteSet, DEFAULT_JITTER};

use crate::chains::read_chains;
use crate::dataset::{apply_transform, Grid};
use crate::error::{CliError, Result};

/// Predictions for every grid site from a persisted fit.
pub fn predict_grid(
    chain_csv: &Path,
    grid: &Grid,
    pred_mc_draws: usize,
    seed: u64,
) -> Result<Vec<CompositionPrediction>> {
    let (outputs, meta) = read_chains(chain_csv)?;
    if grid.coords.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&_> = outputs.iter().collect();
    let draws = PosteriorDraws::from_outputs(&refs)?;
    let x_std = apply_transform(&grid.x, &meta.transform)?;
    let train_sites = SiteSet::new(meta.sites.clone())?;
    let cfg = SitePredictionConfig {
        mode: meta.mode.into(),
        spatial: meta.spatial,
        mc_draws: pred_mc_draws,
        seed,
        jitter: DEFAULT_JITTER,
    };
    predict_at_sites(&draws, &train_sites, &grid.coords, &x_std, &cfg).map_err(CliError::from)
}

/// Writes the long-format prediction CSV. Returns the number of data rows.
pub fn write_predictions(
    out: &Path,
    predictions: &[CompositionPrediction],
) -> Result<usize> {
    let mut writer = csv::Writer::from_path(out)
        .map_err(|e| CliError::Io(format!("cannot write predictions {}: {e}", out.display())))?;
    writer.write_record(["site", "component", "value", "std_error"])?;
    let mut rows = 0;
    for (site, pred) in predictions.iter().enumerate() {
        for (k, v) in pred.mean_composition.values().iter().enumerate() {
            writer.write_record(&[
                site.to_string(),
                (k + 1).to_string(),
                v.to_string(),
                pred.std_error[k].to_string(),
            ])?;
            rows += 1;
        }
    }
    writer.flush()?;
    Ok(rows)
}
