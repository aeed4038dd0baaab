//! The Bayesian hierarchical spatial hyperspheric regression.
//!
//! Observation i is a direction y_i ~ ESAG⁺ (or ESAG) with location
//! μ_i = softplus(B x_i + η(s_i) + (α'z_i)·1_d) and per-observation shape
//! V_i assembled from (μ_i, γ). The uncertainty term α'z_i adds the same
//! scalar to every coordinate before the link, attenuating the concentration
//! ‖μ_i‖₂ for observations with noisy upstream classifications. Priors follow
//! the full hierarchy: Gaussian on regression blocks, standard normal on C
//! entries, Gamma (shape–scale) on ranges, LMC on the latent fields.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use statrs::function::gamma::ln_gamma;

use crate::dist::{assemble_shape, esag_logpdf_with_shape, EsagParams};
use crate::error::{Error, Result};
use crate::spatial::{lmc_logpdf, CorrelationFactor, SiteSet};
use crate::truncated::{count_orthant_hits, fill_standard_normal, substream_seed, LOG_ZERO};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Which data model scores the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataModel {
    Esag,
    EsagPlus,
}

/// Observations with covariates and locations. Coincident coordinates share a
/// site index so the latent field has one column per distinct location.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<crate::sphere::Direction>,
    /// n×p design matrix, intercept column included.
    pub x: DMatrix<f64>,
    /// n×q uncertainty covariates (q may be zero).
    pub z: DMatrix<f64>,
    pub sites: SiteSet,
    /// Observation → distinct-site index.
    pub obs_site: Vec<usize>,
}

impl Dataset {
    pub fn new(
        y: Vec<crate::sphere::Direction>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Validation("dataset must contain observations".into()));
        }
        if x.nrows() != n || z.nrows() != n || coords.len() != n {
            return Err(Error::Dimension(format!(
                "row counts disagree: {} directions, {} covariate rows, {} uncertainty rows, {} sites",
                n,
                x.nrows(),
                z.nrows(),
                coords.len()
            )));
        }
        let d = y[0].len();
        if y.iter().any(|yi| yi.len() != d) {
            return Err(Error::Dimension("directions have mixed dimensions".into()));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariates contain non-finite values".into()));
        }

        // Deduplicate coordinates by exact match.
        let mut distinct: Vec<[f64; 2]> = Vec::new();
        let mut obs_site = Vec::with_capacity(n);
        for c in &coords {
            match distinct.iter().position(|u| u == c) {
                Some(i) => obs_site.push(i),
                None => {
                    obs_site.push(distinct.len());
                    distinct.push(*c);
                }
            }
        }
        Ok(Self { y, x, z, sites: SiteSet::new(distinct)?, obs_site })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// The truncated model needs every response inside the orthant.
    pub fn validate_for(&self, mode: DataModel) -> Result<()> {
        if mode == DataModel::EsagPlus {
            if let Some(i) = self.y.iter().position(|y| !y.in_orthant()) {
                return Err(Error::Validation(format!(
                    "observation {i} lies outside the non-negative orthant; \
                     the truncated data model cannot score it"
                )));
            }
        }
        Ok(())
    }
}

/// Prior and structural settings of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub sigma2_alpha: f64,
    pub sigma2_beta: f64,
    pub sigma2_gamma: f64,
    /// Gamma prior on ranges in shape–scale form (mean = shape · scale).
    pub phi_shape: f64,
    pub phi_scale: f64,
    /// Baseline component whose regression row is pinned to zero (truncated
    /// model only).
    pub baseline: Option<usize>,
    /// When false the latent fields are fixed at zero and the C/φ/H terms drop
    /// from the model.
    pub spatial: bool,
    /// Monte Carlo draws for the truncation constant.
    pub mc_draws: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sigma2_alpha: 10.0,
            sigma2_beta: 10.0,
            sigma2_gamma: 10.0,
            phi_shape: 62.0,
            phi_scale: 0.04,
            baseline: Some(0),
            spatial: true,
            mc_draws: crate::truncated::DEFAULT_MC_DRAWS,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, d: usize) -> Result<()> {
        for (name, v) in [
            ("sigma2_alpha", self.sigma2_alpha),
            ("sigma2_beta", self.sigma2_beta),
            ("sigma2_gamma", self.sigma2_gamma),
            ("phi_shape", self.phi_shape),
            ("phi_scale", self.phi_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(b) = self.baseline {
            if b >= d {
                return Err(Error::Validation(format!("baseline index {b} out of range for d = {d}")));
            }
        }
        if self.mc_draws == 0 {
            return Err(Error::Validation("mc_draws must be at least 1".into()));
        }
        Ok(())
    }

    pub fn phi_prior_mean(&self) -> f64 {
        self.phi_shape * self.phi_scale
    }
}

/// One point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// d×p regression coefficients.
    pub b: DMatrix<f64>,
    /// Uncertainty-propagation coefficients (length q).
    pub alpha: DVector<f64>,
    /// Unconstrained shape vector.
    pub gamma: DVector<f64>,
    /// d×d coregionalization coefficients.
    pub c: DMatrix<f64>,
    /// Spatial ranges (length d).
    pub phi: DVector<f64>,
    /// d×m latent field, one column per distinct site.
    pub h: DMatrix<f64>,
}

impl ModelState {
    /// Starting point: intercepts at 1, everything else at zero, C at the
    /// identity, ranges at the prior mean, latent field at zero.
    pub fn initial(d: usize, p: usize, q: usize, m_sites: usize, hyper: &Hyperparams) -> Self {
        let mut b = DMatrix::zeros(d, p);
        if p > 0 {
            for j in 0..d {
                if hyper.baseline != Some(j) {
                    b[(j, 0)] = 1.0;
                }
            }
        }
        Self {
            b,
            alpha: DVector::zeros(q),
            gamma: DVector::zeros(crate::dist::gamma_len(d)),
            c: DMatrix::identity(d, d),
            phi: DVector::from_element(d, hyper.phi_prior_mean()),
            h: DMatrix::zeros(d, m_sites),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Enforce the baseline-row constraint in place.
    pub fn pin_baseline(&mut self, baseline: Option<usize>) {
        if let Some(j) = baseline {
            self.b.row_mut(j).fill(0.0);
        }
    }
}

/// Overflow-safe softplus: log(1 + eˣ).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pre-link linear predictor and softplus location for observation `i`. The
/// baseline row of B is treated as structurally zero, so stale values there can
/// never leak into the likelihood.
pub fn linear_predictor(
    state: &ModelState,
    data: &Dataset,
    i: usize,
    baseline: Option<usize>,
) -> DVector<f64> {
    let d = state.dim();
    let x = data.x.row(i);
    let z = data.z.row(i);
    let shift: f64 = (0..data.q()).map(|k| state.alpha[k] * z[k]).sum();
    let site = data.obs_site[i];
    DVector::from_fn(d, |j, _| {
        if baseline == Some(j) {
            softplus(state.h[(j, site)] + shift)
        } else {
            let bx: f64 = (0..data.p()).map(|k| state.b[(j, k)] * x[k]).sum();
            softplus(bx + state.h[(j, site)] + shift)
        }
    })
}

/// Settings threaded through a likelihood evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodConfig {
    pub mode: DataModel,
    pub baseline: Option<usize>,
    pub mc_draws: usize,
    pub quad_tol: f64,
    pub workers: usize,
}

impl LikelihoodConfig {
    pub fn new(mode: DataModel, hyper: &Hyperparams) -> Self {
        Self {
            mode,
            baseline: if mode == DataModel::EsagPlus { hyper.baseline } else { None },
            mc_draws: hyper.mc_draws,
            quad_tol: crate::dist::DEFAULT_QUAD_TOL,
            workers: 1,
        }
    }
}

fn observation_loglik(
    state: &ModelState,
    data: &Dataset,
    cfg: &LikelihoodConfig,
    w_block: Option<&[f64]>,
    i: usize,
) -> Result<f64> {
    let mu = linear_predictor(state, data, i, cfg.baseline);
    let params = EsagParams::new(mu, state.gamma.clone())?;
    let shape = assemble_shape(&params)?;
    let y = &data.y[i];
    let mut lp = esag_logpdf_with_shape(y.values(), &params.mu, &shape, cfg.quad_tol)?;
    if cfg.mode == DataModel::EsagPlus {
        if !y.in_orthant() {
            return Ok(LOG_ZERO);
        }
        let w = w_block.expect("truncated likelihood needs a normal block");
        let hits = count_orthant_hits(params.mu.as_slice(), &shape.sqrt_factor(), w);
        if hits == 0 {
            return Err(Error::TruncationDegenerate(format!(
                "orthant mass estimate 0/{} at observation {i}",
                cfg.mc_draws
            )));
        }
        lp -= (hits as f64 / cfg.mc_draws as f64).ln();
    }
    Ok(lp)
}

/// Generates the block of standard normals backing one truncated-likelihood
/// evaluation (column-major, `mc_draws` per component).
pub fn truncation_noise_block(noise_seed: u64, mc_draws: usize, d: usize) -> Vec<f64> {
    let mut rng = rand::rngs::SmallRng::seed_from_u64(substream_seed(noise_seed, 0x6f72_7468));
    let mut w = vec![0.0; mc_draws * d];
    fill_standard_normal(&mut w, &mut rng);
    w
}

/// Sum of per-observation log-densities. For the truncated model the
/// normalizing constants reuse one block of standard normals drawn from
/// `noise_seed`, so the value is deterministic given (state, data, seed) and
/// independent of the worker count up to summation order.
pub fn log_likelihood(
    state: &ModelState,
    data: &Dataset,
    cfg: &LikelihoodConfig,
    noise_seed: u64,
) -> Result<f64> {
    let w_block = if cfg.mode == DataModel::EsagPlus {
        Some(truncation_noise_block(noise_seed, cfg.mc_draws, data.dim()))
    } else {
        None
    };
    log_likelihood_with_block(state, data, cfg, w_block.as_deref())
}

/// Likelihood against a caller-held noise block (reused across evaluations in
/// the common-random-numbers mode). `w_block` must hold `mc_draws · d` normals.
pub fn log_likelihood_with_block(
    state: &ModelState,
    data: &Dataset,
    cfg: &LikelihoodConfig,
    w_block: Option<&[f64]>,
) -> Result<f64> {
    let n = data.n();
    if cfg.mode == DataModel::EsagPlus {
        match w_block {
            Some(w) if w.len() == cfg.mc_draws * data.dim() => {}
            Some(_) => {
                return Err(Error::Dimension(
                    "noise block length does not match mc_draws · d".into(),
                ))
            }
            None => {
                return Err(Error::Validation(
                    "truncated likelihood needs a noise block".into(),
                ))
            }
        }
    }
    let w_ref = w_block;

    let workers = cfg.workers.max(1).min(n);
    if workers == 1 {
        let mut total = 0.0;
        for i in 0..n {
            total += observation_loglik(state, data, cfg, w_ref, i)?;
        }
        return Ok(total);
    }

    let chunk = n.div_ceil(workers);
    let partials: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = w * chunk;
                let hi = ((w + 1) * chunk).min(n);
                scope.spawn(move || {
                    let mut acc = 0.0;
                    for i in lo..hi {
                        acc += observation_loglik(state, data, cfg, w_ref, i)?;
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("likelihood worker panicked")).collect()
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total)
}

fn gaussian_logpdf_sum(values: impl Iterator<Item = f64>, variance: f64) -> f64 {
    let mut count = 0usize;
    let mut quad = 0.0;
    for v in values {
        quad += v * v;
        count += 1;
    }
    -0.5 * count as f64 * (LN_2PI + variance.ln()) - 0.5 * quad / variance
}

fn gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return LOG_ZERO;
    }
    (shape - 1.0) * x.ln() - x / scale - shape * scale.ln() - ln_gamma(shape)
}

/// Joint log-prior. Returns the log-zero sentinel for out-of-support states
/// (non-positive ranges). The baseline row of B contributes nothing; the C, φ,
/// and H terms drop when the model is non-spatial.
pub fn log_prior(
    state: &ModelState,
    hyper: &Hyperparams,
    factors: Option<&[CorrelationFactor]>,
) -> Result<f64> {
    let d = state.dim();
    let mut lp = 0.0;

    let free_rows = (0..d).filter(|j| hyper.baseline != Some(*j));
    lp += gaussian_logpdf_sum(
        free_rows.flat_map(|j| state.b.row(j).iter().copied().collect::<Vec<_>>()),
        hyper.sigma2_beta,
    );
    if state.alpha.len() > 0 {
        lp += gaussian_logpdf_sum(state.alpha.iter().copied(), hyper.sigma2_alpha);
    }
    if state.gamma.len() > 0 {
        lp += gaussian_logpdf_sum(state.gamma.iter().copied(), hyper.sigma2_gamma);
    }

    if hyper.spatial {
        for p in state.phi.iter() {
            if !(*p > 0.0) {
                return Ok(LOG_ZERO);
            }
            lp += gamma_logpdf(*p, hyper.phi_shape, hyper.phi_scale);
        }
        lp += gaussian_logpdf_sum(state.c.iter().copied(), 1.0);
        let factors = factors.ok_or_else(|| {
            Error::Validation("spatial prior needs correlation factors for the latent field".into())
        })?;
        let lmc = crate::spatial::LmcParams::new(state.c.clone(), state.phi.clone())?;
        lp += lmc_logpdf(&state.h, &lmc, factors)?;
    }
    Ok(lp)
}

/// Log-posterior: prior + likelihood, with the sentinel short-circuiting the
/// likelihood evaluation.
pub fn log_posterior(
    state: &ModelState,
    data: &Dataset,
    hyper: &Hyperparams,
    cfg: &LikelihoodConfig,
    factors: Option<&[CorrelationFactor]>,
    noise_seed: u64,
) -> Result<f64> {
    let prior = log_prior(state, hyper, factors)?;
    if prior <= LOG_ZERO {
        return Ok(LOG_ZERO);
    }
    Ok(prior + log_likelihood(state, data, cfg, noise_seed)?)
}
