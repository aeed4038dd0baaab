//! Dataset simulation: uniform sites over the study domain, built-in covariate
//! surfaces standardized to [1, 2], latent fields from the LMC, responses from
//! the truncated data model, and a truth record (including the true location
//! surface on an optional grid) for downstream comparisons.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use esag::dist::EsagParams;
use esag::model::softplus;
use esag::spatial::{component_factors, lmc_sample, LmcParams, SiteSet, DEFAULT_JITTER};
use esag::truncated::esagplus_sample;

use crate::config::{SimSpec, ZFormula};
use crate::dataset::{standardize_covariates, RawDataset, TransformRecord};
use crate::error::{CliError, Result};

/// True surface on the optional evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridTruth {
    pub coords: Vec<[f64; 2]>,
    /// Standardized covariates at the grid sites (training transform).
    pub x: Vec<Vec<f64>>,
    /// Latent fields at the grid sites (d rows).
    pub eta: Vec<Vec<f64>>,
    /// True location surface softplus(Bx + η), column per site.
    pub mu: Vec<Vec<f64>>,
    /// True normalized mean direction per site.
    pub nmd: Vec<Vec<f64>>,
}

/// Everything needed to check a fit against the generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub spatial: bool,
    pub seed: u64,
    pub transform: TransformRecord,
    /// Latent fields at the data sites (d rows, one column per site).
    pub eta: Vec<Vec<f64>>,
    /// Per-observation true locations (n rows of length d).
    pub mu: Vec<Vec<f64>>,
    pub grid: Option<GridTruth>,
}

pub struct SimOutput {
    pub dataset: RawDataset,
    pub truth: SimTruth,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Simulates a dataset per the spec. Deterministic given (spec, seed).
pub fn simulate(spec: &SimSpec, seed: u64) -> Result<SimOutput> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = spec.dim();
    let p = spec.x_formulas.len();
    let q = spec.z_formulas.len();
    let n = spec.n;

    // Uniform sites over the domain.
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                spec.domain[0][0] + rng.gen::<f64>() * (spec.domain[0][1] - spec.domain[0][0]),
                spec.domain[1][0] + rng.gen::<f64>() * (spec.domain[1][1] - spec.domain[1][0]),
            ]
        })
        .collect();

    // Covariates from the built-in surfaces; standardized for the generator.
    let x_raw = DMatrix::from_fn(n, p, |i, k| spec.x_formulas[k].eval(coords[i]));
    let (x_std, transform) = standardize_covariates(&x_raw)?;

    let z = DMatrix::from_fn(n, q, |_, k| match spec.z_formulas[k] {
        ZFormula::Bernoulli => f64::from(rng.gen::<f64>() < 0.5),
        ZFormula::Uniform => rng.gen::<f64>(),
        ZFormula::Constant => 1.0,
    });

    let b = DMatrix::from_fn(d, p, |r, c| spec.truth.b[r][c]);
    let c_mat = DMatrix::from_fn(d, d, |r, c| spec.truth.c[r][c]);
    let phi = DVector::from_iterator(d, spec.truth.phi.iter().copied());
    let alpha = DVector::from_iterator(q, spec.truth.alpha.iter().copied());
    let gamma = DVector::from_iterator(spec.truth.gamma.len(), spec.truth.gamma.iter().copied());

    // Latent fields, drawn jointly over data sites and the truth grid so the
    // recorded grid surface is the same realization the data came from.
    let grid_coords: Vec<[f64; 2]> = match spec.truth_grid {
        Some(g) if g > 0 => {
            let mut out = Vec::with_capacity(g * g);
            for iy in 0..g {
                for ix in 0..g {
                    let fx = (ix as f64 + 0.5) / g as f64;
                    let fy = (iy as f64 + 0.5) / g as f64;
                    out.push([
                        spec.domain[0][0] + fx * (spec.domain[0][1] - spec.domain[0][0]),
                        spec.domain[1][0] + fy * (spec.domain[1][1] - spec.domain[1][0]),
                    ]);
                }
            }
            out
        }
        _ => Vec::new(),
    };

    let h_joint = if spec.spatial {
        let mut joint = coords.clone();
        joint.extend(grid_coords.iter().copied());
        let sites = SiteSet::new(joint)?;
        let lmc = LmcParams::new(c_mat.clone(), phi.clone())?;
        let factors = component_factors(&sites, &phi, DEFAULT_JITTER)?;
        lmc_sample(&lmc, &factors, &mut rng)?
    } else {
        DMatrix::zeros(d, n + grid_coords.len())
    };
    let eta_data = h_joint.columns(0, n).into_owned();
    let eta_grid = h_joint.columns(n, grid_coords.len()).into_owned();

    // Locations and responses.
    let mut mu_rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let shift: f64 = (0..q).map(|k| alpha[k] * z[(i, k)]).sum();
        let mu = DVector::from_fn(d, |l, _| {
            let bx: f64 = (0..p).map(|k| b[(l, k)] * x_std[(i, k)]).sum();
            softplus(bx + eta_data[(l, i)] + shift)
        });
        let params = EsagParams::new(mu.clone(), gamma.clone())?;
        let draw = esagplus_sample(&params, 1, spec.max_tries, &mut rng).map_err(|e| {
            CliError::Numerical(format!("site {i} (coords {:?}): {e}", coords[i]))
        })?;
        mu_rows.push(mu.iter().copied().collect::<Vec<f64>>());
        y.push(draw[0].values().clone());
    }

    let grid = if grid_coords.is_empty() {
        None
    } else {
        let gx_raw = DMatrix::from_fn(grid_coords.len(), p, |i, k| {
            spec.x_formulas[k].eval(grid_coords[i])
        });
        let gx = crate::dataset::apply_transform(&gx_raw, &transform)?;
        let mut mu_cols = Vec::with_capacity(grid_coords.len());
        let mut nmd = Vec::with_capacity(grid_coords.len());
        for i in 0..grid_coords.len() {
            let mu = DVector::from_fn(d, |l, _| {
                let bx: f64 = (0..p).map(|k| b[(l, k)] * gx[(i, k)]).sum();
                softplus(bx + eta_grid[(l, i)])
            });
            let norm = mu.norm();
            nmd.push(mu.iter().map(|v| v / norm).collect());
            mu_cols.push(mu.iter().copied().collect());
        }
        Some(GridTruth {
            coords: grid_coords,
            x: matrix_rows(&gx),
            eta: matrix_rows(&eta_grid),
            mu: mu_cols,
            nmd,
        })
    };

    Ok(SimOutput {
        dataset: RawDataset { coords, y, x: x_raw, z },
        truth: SimTruth {
            b: spec.truth.b.clone(),
            c: spec.truth.c.clone(),
            phi: spec.truth.phi.clone(),
            alpha: spec.truth.alpha.clone(),
            gamma: spec.truth.gamma.clone(),
            spatial: spec.spatial,
            seed,
            transform,
            eta: matrix_rows(&eta_data),
            mu: mu_rows,
            grid,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::fixtures;

    #[test]
    fn simulation_study_fixture_produces_orthant_directions() {
        let spec = fixtures::sim_study_spec();
        let out = simulate(&spec, 42).unwrap();
        assert_eq!(out.dataset.coords.len(), 100);
        for y in &out.dataset.y {
            assert!(y.iter().all(|v| *v >= 0.0));
            assert!((y.norm() - 1.0).abs() < 1e-10);
        }
        let grid = out.truth.grid.as_ref().unwrap();
        assert_eq!(grid.coords.len(), 400);
        for nmd in &grid.nmd {
            let norm: f64 = nmd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn second_fixture_with_eta_disabled_has_zero_fields() {
        let spec = fixtures::second_sim_spec(false);
        let out = simulate(&spec, 7).unwrap();
        assert!(out.truth.eta.iter().flatten().all(|v| *v == 0.0));
        assert!(!out.truth.spatial);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = fixtures::sim_study_spec();
        let a = simulate(&spec, 9).unwrap();
        let b = simulate(&spec, 9).unwrap();
        assert_eq!(a.dataset.y, b.dataset.y);
        assert_eq!(a.dataset.coords, b.dataset.coords);
        assert_eq!(a.truth.eta, b.truth.eta);
        // Different seed, different data.
        let c = simulate(&spec, 10).unwrap();
        assert_ne!(a.dataset.y, c.dataset.y);
    }
}
