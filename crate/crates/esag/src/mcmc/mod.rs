//! Posterior sampling: blocked random-walk Metropolis for the regression and
//! covariance parameters, a below-zero-truncated walk for the ranges, and an
//! elliptical slice sampler for the latent field.
//!
//! Block order is fixed — α, B rows, γ elements, C entries, φ entries, η — so
//! a chain is fully determined by its seed. The current log-likelihood value
//! is carried between proposals; under `TruncationNoise::Fresh` every new
//! likelihood evaluation re-estimates the truncation constants with fresh
//! Monte Carlo draws, while `CommonRandom` fixes the draw seed for the whole
//! chain, which removes the estimator noise from acceptance ratios at the cost
//! of a fixed approximation.

pub mod diagnostics;
pub mod updates;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    log_likelihood, log_likelihood_with_block, log_prior, truncation_noise_block, DataModel,
    Dataset, Hyperparams, LikelihoodConfig, ModelState,
};
use crate::spatial::{
    component_factors, correlation_matrix, lmc_logpdf, lmc_sample, CorrelationFactor, LmcParams,
    DEFAULT_JITTER, SINGULAR_DET_TOL,
};
use crate::truncated::LOG_ZERO;
use updates::{
    elliptical_slice, mh_accept, propose_truncated_positive, truncated_positive_log_correction,
};

/// Random-walk proposal standard deviations per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalScales {
    pub alpha: f64,
    pub gamma: f64,
    pub c: f64,
    pub phi: f64,
    pub beta: f64,
}

impl Default for ProposalScales {
    /// Square roots of the reference proposal variances
    /// (0.1, 0.1, 0.1, 0.01, 0.5) for α, γ, C, φ, β.
    fn default() -> Self {
        Self {
            alpha: 0.1f64.sqrt(),
            gamma: 0.1f64.sqrt(),
            c: 0.1f64.sqrt(),
            phi: 0.01f64.sqrt(),
            beta: 0.5f64.sqrt(),
        }
    }
}

impl ProposalScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("c", self.c),
            ("phi", self.phi),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "proposal scale {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How the truncation-constant randomness is drawn across likelihood
/// evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationNoise {
    /// A fresh seed per evaluation, drawn from the chain stream.
    Fresh,
    /// One fixed seed for every evaluation in the chain.
    CommonRandom(u64),
}

/// One parameter block of the fixed update cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Alpha,
    BetaRow(usize),
    GammaElem(usize),
    CEntry(usize, usize),
    PhiElem(usize),
}

impl Block {
    fn family(&self) -> &'static str {
        match self {
            Block::Alpha => "alpha",
            Block::BetaRow(_) => "beta",
            Block::GammaElem(_) => "gamma",
            Block::CEntry(_, _) => "c",
            Block::PhiElem(_) => "phi",
        }
    }
}

/// Chain settings.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: DataModel,
    pub noise: TruncationNoise,
    pub workers: usize,
    /// Cap on slice-shrinkage likelihood evaluations per η update.
    pub max_shrink: usize,
    pub jitter: f64,
}

impl ChainConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64, mode: DataModel) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            seed,
            mode,
            noise: TruncationNoise::Fresh,
            workers: 1,
            max_shrink: 200,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Validation(format!(
                "need iterations > burn_in ≥ 0, got {} and {}",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        if (self.iterations - self.burn_in) % self.thin != 0 {
            return Err(Error::Validation(format!(
                "thin {} must divide iterations − burn_in = {}",
                self.thin,
                self.iterations - self.burn_in
            )));
        }
        Ok(())
    }
}

/// Shape of the flattened state vector; carried by chain output so draws can be
/// reconstructed without the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub m_sites: usize,
    pub spatial: bool,
    pub baseline: Option<usize>,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        self.q
            + self.d * self.p
            + crate::dist::gamma_len(self.d)
            + self.d * self.d
            + self.d
            + self.d * self.m_sites
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for k in 0..self.q {
            names.push(format!("alpha[{k}]"));
        }
        for j in 0..self.d {
            for k in 0..self.p {
                names.push(format!("b[{j},{k}]"));
            }
        }
        for g in 0..crate::dist::gamma_len(self.d) {
            names.push(format!("gamma[{g}]"));
        }
        for i in 0..self.d {
            for j in 0..self.d {
                names.push(format!("c[{i},{j}]"));
            }
        }
        for j in 0..self.d {
            names.push(format!("phi[{j}]"));
        }
        for l in 0..self.d {
            for i in 0..self.m_sites {
                names.push(format!("eta[{l},{i}]"));
            }
        }
        names
    }

    pub fn flatten(&self, state: &ModelState) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.len());
        row.extend(state.alpha.iter());
        for j in 0..self.d {
            for k in 0..self.p {
                row.push(state.b[(j, k)]);
            }
        }
        row.extend(state.gamma.iter());
        for i in 0..self.d {
            for j in 0..self.d {
                row.push(state.c[(i, j)]);
            }
        }
        row.extend(state.phi.iter());
        for l in 0..self.d {
            for i in 0..self.m_sites {
                row.push(state.h[(l, i)]);
            }
        }
        row
    }

    pub fn unflatten(&self, row: &[f64]) -> Result<ModelState> {
        if row.len() != self.len() {
            return Err(Error::Dimension(format!(
                "draw has {} entries, layout expects {}",
                row.len(),
                self.len()
            )));
        }
        let mut it = row.iter().copied();
        let alpha = DVector::from_iterator(self.q, it.by_ref().take(self.q));
        let b = DMatrix::from_row_iterator(self.d, self.p, it.by_ref().take(self.d * self.p));
        let g = crate::dist::gamma_len(self.d);
        let gamma = DVector::from_iterator(g, it.by_ref().take(g));
        let c = DMatrix::from_row_iterator(self.d, self.d, it.by_ref().take(self.d * self.d));
        let phi = DVector::from_iterator(self.d, it.by_ref().take(self.d));
        let h = DMatrix::from_row_iterator(
            self.d,
            self.m_sites,
            it.by_ref().take(self.d * self.m_sites),
        );
        Ok(ModelState { b, alpha, gamma, c, phi, h })
    }
}

/// Acceptance counters for one block family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptCount {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptCount {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Thinned draws plus bookkeeping from one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub layout: StateLayout,
    pub names: Vec<String>,
    /// Row per retained draw, flattened per [`StateLayout`].
    pub draws: Vec<Vec<f64>>,
    pub acceptance: BTreeMap<String, AcceptCount>,
    /// Total slice-shrinkage likelihood evaluations across η updates.
    pub ess_evaluations: u64,
    pub eta_updates: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub wall_seconds: f64,
    pub iterations_per_second: f64,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Column of one parameter across the retained draws.
    pub fn series(&self, param: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[param]).collect()
    }

    /// Average slice iterations per η update (cost accounting).
    pub fn mean_ess_iterations(&self) -> f64 {
        if self.eta_updates == 0 {
            0.0
        } else {
            self.ess_evaluations as f64 / self.eta_updates as f64
        }
    }

    /// Posterior means as a state.
    pub fn posterior_mean_state(&self) -> Result<ModelState> {
        if self.draws.is_empty() {
            return Err(Error::Validation("chain holds no retained draws".into()));
        }
        let len = self.layout.len();
        let mut acc = vec![0.0; len];
        for row in &self.draws {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.draws.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        self.layout.unflatten(&acc)
    }
}

/// Names of the identified quantities used for convergence reporting: raw C
/// entries are replaced by the entries of CC' (C itself is only identified up
/// to rotation), and pinned baseline rows are dropped.
pub fn identified_names(layout: &StateLayout) -> Vec<String> {
    let mut names = Vec::new();
    for k in 0..layout.q {
        names.push(format!("alpha[{k}]"));
    }
    for j in 0..layout.d {
        if layout.baseline == Some(j) {
            continue;
        }
        for k in 0..layout.p {
            names.push(format!("b[{j},{k}]"));
        }
    }
    for g in 0..crate::dist::gamma_len(layout.d) {
        names.push(format!("gamma[{g}]"));
    }
    if layout.spatial {
        for i in 0..layout.d {
            for j in i..layout.d {
                names.push(format!("cct[{i},{j}]"));
            }
        }
        for j in 0..layout.d {
            names.push(format!("phi[{j}]"));
        }
        for l in 0..layout.d {
            for i in 0..layout.m_sites {
                names.push(format!("eta[{l},{i}]"));
            }
        }
    }
    names
}

/// Per-parameter series of the identified quantities for one chain:
/// `result[param][draw]`.
pub fn identified_series(output: &ChainOutput) -> Vec<Vec<f64>> {
    let layout = &output.layout;
    let names = identified_names(layout);
    let mut series = vec![Vec::with_capacity(output.n_draws()); names.len()];
    for row in &output.draws {
        let state = layout.unflatten(row).expect("layout matches draws");
        let mut idx = 0;
        for k in 0..layout.q {
            series[idx].push(state.alpha[k]);
            idx += 1;
        }
        for j in 0..layout.d {
            if layout.baseline == Some(j) {
                continue;
            }
            for k in 0..layout.p {
                series[idx].push(state.b[(j, k)]);
                idx += 1;
            }
        }
        for g in 0..state.gamma.len() {
            series[idx].push(state.gamma[g]);
            idx += 1;
        }
        if layout.spatial {
            let cct = &state.c * state.c.transpose();
            for i in 0..layout.d {
                for j in i..layout.d {
                    series[idx].push(cct[(i, j)]);
                    idx += 1;
                }
            }
            for j in 0..layout.d {
                series[idx].push(state.phi[j]);
                idx += 1;
            }
            for l in 0..layout.d {
                for i in 0..layout.m_sites {
                    series[idx].push(state.h[(l, i)]);
                    idx += 1;
                }
            }
        }
    }
    series
}

/// R-hat and ESS over the identified quantities of one or more equal-length
/// chains.
pub fn diagnostics(outputs: &[&ChainOutput]) -> Result<Vec<diagnostics::ParamDiagnostics>> {
    if outputs.is_empty() {
        return Err(Error::Validation("diagnostics need at least one chain".into()));
    }
    let layout = &outputs[0].layout;
    if outputs.iter().any(|o| &o.layout != layout) {
        return Err(Error::Dimension("chains have different state layouts".into()));
    }
    let n = outputs[0].n_draws();
    if outputs.iter().any(|o| o.n_draws() != n) {
        return Err(Error::Dimension("chains have different lengths".into()));
    }
    let names = identified_names(layout);
    let series: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| identified_series(o)).collect();
    Ok(diagnostics::diagnose_series(&names, &series))
}

/// The posterior sampler with cached likelihood, LMC prior, and correlation
/// factors.
pub struct PosteriorSampler<'a> {
    data: &'a Dataset,
    hyper: &'a Hyperparams,
    scales: &'a ProposalScales,
    cfg: &'a ChainConfig,
    lik_cfg: LikelihoodConfig,
    pub state: ModelState,
    loglik: f64,
    lmc_prior: f64,
    factors: Vec<CorrelationFactor>,
    /// Fixed noise block for the common-random-numbers mode.
    crn_block: Option<Vec<f64>>,
    pub ess_evaluations: u64,
    pub eta_updates: u64,
}

impl<'a> PosteriorSampler<'a> {
    pub fn new<R: Rng + ?Sized>(
        mut state: ModelState,
        data: &'a Dataset,
        hyper: &'a Hyperparams,
        scales: &'a ProposalScales,
        cfg: &'a ChainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate(data.dim())?;
        scales.validate()?;
        data.validate_for(cfg.mode)?;
        if cfg.mode == DataModel::EsagPlus {
            state.pin_baseline(hyper.baseline);
        }
        let mut lik_cfg = LikelihoodConfig::new(cfg.mode, hyper);
        lik_cfg.workers = cfg.workers;

        let factors = if hyper.spatial {
            component_factors(&data.sites, &state.phi, cfg.jitter)?
        } else {
            Vec::new()
        };
        let crn_block = match (cfg.mode, cfg.noise) {
            (DataModel::EsagPlus, TruncationNoise::CommonRandom(seed)) => {
                Some(truncation_noise_block(seed, hyper.mc_draws, data.dim()))
            }
            _ => None,
        };
        let mut sampler = Self {
            data,
            hyper,
            scales,
            cfg,
            lik_cfg,
            state,
            loglik: 0.0,
            lmc_prior: 0.0,
            factors,
            crn_block,
            ess_evaluations: 0,
            eta_updates: 0,
        };
        sampler.loglik = sampler.eval_loglik_rng(&sampler.state.clone(), rng)?;
        if hyper.spatial {
            sampler.lmc_prior = sampler.lmc_at(&sampler.state.h, &sampler.state.c)?;
        }
        let lp = sampler.log_posterior_cached()?;
        if !lp.is_finite() {
            return Err(Error::Numerical(format!(
                "log-posterior is {lp} at the initial state; cannot start the chain"
            )));
        }
        Ok(sampler)
    }

    fn eval_loglik_rng<R: Rng + ?Sized>(&self, state: &ModelState, rng: &mut R) -> Result<f64> {
        match &self.crn_block {
            Some(block) => {
                log_likelihood_with_block(state, self.data, &self.lik_cfg, Some(block))
            }
            None => log_likelihood(state, self.data, &self.lik_cfg, rng.gen()),
        }
    }

    fn lmc_at(&self, h: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
        let params = LmcParams::new(c.clone(), self.state.phi.clone())?;
        lmc_logpdf(h, &params, &self.factors)
    }

    /// Current joint log-posterior from the cached pieces.
    pub fn log_posterior_cached(&self) -> Result<f64> {
        let factors = if self.hyper.spatial { Some(self.factors.as_slice()) } else { None };
        let prior = log_prior(&self.state, self.hyper, factors)?;
        Ok(prior + self.loglik)
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    fn gaussian_block_delta(old: &[f64], new: &[f64], variance: f64) -> f64 {
        let old_q: f64 = old.iter().map(|v| v * v).sum();
        let new_q: f64 = new.iter().map(|v| v * v).sum();
        -0.5 * (new_q - old_q) / variance
    }

    /// One Metropolis update of the given block; returns whether the proposal
    /// was accepted.
    pub fn mh_block_update<R: Rng + ?Sized>(&mut self, block: Block, rng: &mut R) -> Result<bool> {
        match block {
            Block::Alpha => {
                let prop = DVector::from_fn(self.state.alpha.len(), |k, _| {
                    self.state.alpha[k] + self.scales.alpha * rng.sample::<f64, _>(StandardNormal)
                });
                let prior_delta = Self::gaussian_block_delta(
                    self.state.alpha.as_slice(),
                    prop.as_slice(),
                    self.hyper.sigma2_alpha,
                );
                let mut cand = self.state.clone();
                cand.alpha = prop;
                let cand_ll = self.eval_loglik_rng(&cand, rng)?;
                if mh_accept(cand_ll - self.loglik + prior_delta, rng) {
                    self.state = cand;
                    self.loglik = cand_ll;
                    return Ok(true);
                }
                Ok(false)
            }
            Block::BetaRow(j) => {
                let old: Vec<f64> = self.state.b.row(j).iter().copied().collect();
                let prop: Vec<f64> = old
                    .iter()
                    .map(|v| v + self.scales.beta * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let prior_delta = Self::gaussian_block_delta(&old, &prop, self.hyper.sigma2_beta);
                let mut cand = self.state.clone();
                for (k, v) in prop.iter().enumerate() {
                    cand.b[(j, k)] = *v;
                }
                let cand_ll = self.eval_loglik_rng(&cand, rng)?;
                if mh_accept(cand_ll - self.loglik + prior_delta, rng) {
                    self.state = cand;
                    self.loglik = cand_ll;
                    return Ok(true);
                }
                Ok(false)
            }
            Block::GammaElem(k) => {
                let old = self.state.gamma[k];
                let prop = old + self.scales.gamma * rng.sample::<f64, _>(StandardNormal);
                let prior_delta =
                    -0.5 * (prop * prop - old * old) / self.hyper.sigma2_gamma;
                let mut cand = self.state.clone();
                cand.gamma[k] = prop;
                let cand_ll = self.eval_loglik_rng(&cand, rng)?;
                if mh_accept(cand_ll - self.loglik + prior_delta, rng) {
                    self.state = cand;
                    self.loglik = cand_ll;
                    return Ok(true);
                }
                Ok(false)
            }
            Block::CEntry(i, j) => {
                let old = self.state.c[(i, j)];
                let prop = old + self.scales.c * rng.sample::<f64, _>(StandardNormal);
                let mut cand_c = self.state.c.clone();
                cand_c[(i, j)] = prop;
                // CC' must stay positive definite, i.e. C nonsingular.
                if cand_c.determinant().abs() <= SINGULAR_DET_TOL {
                    return Ok(false);
                }
                let cand_lmc = self.lmc_at(&self.state.h, &cand_c)?;
                let prior_delta = -0.5 * (prop * prop - old * old);
                if mh_accept(cand_lmc - self.lmc_prior + prior_delta, rng) {
                    self.state.c = cand_c;
                    self.lmc_prior = cand_lmc;
                    return Ok(true);
                }
                Ok(false)
            }
            Block::PhiElem(j) => {
                let old = self.state.phi[j];
                let prop = propose_truncated_positive(old, self.scales.phi, rng);
                let new_factor = correlation_matrix(&self.data.sites, prop, self.cfg.jitter)?;
                let old_factor = std::mem::replace(&mut self.factors[j], new_factor);
                let mut cand_phi = self.state.phi.clone();
                cand_phi[j] = prop;

                let cand_lmc = {
                    let params = LmcParams::new(self.state.c.clone(), cand_phi.clone())?;
                    lmc_logpdf(&self.state.h, &params, &self.factors)?
                };
                let prior_delta = gamma_log_ratio(prop, old, self.hyper);
                let correction = truncated_positive_log_correction(old, prop, self.scales.phi);
                if mh_accept(cand_lmc - self.lmc_prior + prior_delta + correction, rng) {
                    self.state.phi = cand_phi;
                    self.lmc_prior = cand_lmc;
                    Ok(true)
                } else {
                    self.factors[j] = old_factor;
                    Ok(false)
                }
            }
        }
    }

    /// One elliptical slice move of the latent field. Returns whether the
    /// field moved and the number of slice likelihood evaluations.
    pub fn elliptical_slice_eta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(bool, usize)> {
        let params = LmcParams::new(self.state.c.clone(), self.state.phi.clone())?;
        let nu = lmc_sample(&params, &self.factors, rng)?;

        let mut scratch = self.state.clone();
        let data = self.data;
        let lik_cfg = self.lik_cfg;
        let crn: Option<&[f64]> = self.crn_block.as_deref();

        let cur_ll = self.loglik;
        let max_shrink = self.cfg.max_shrink;
        let mut eval_rng = ChaCha20Rng::seed_from_u64(rng.gen());
        let mut loglik_fn = move |h: &DMatrix<f64>| -> Result<f64> {
            scratch.h.copy_from(h);
            match crn {
                Some(block) => log_likelihood_with_block(&scratch, data, &lik_cfg, Some(block)),
                None => log_likelihood(&scratch, data, &lik_cfg, eval_rng.gen()),
            }
        };
        let mv = elliptical_slice(&self.state.h, &nu, cur_ll, &mut loglik_fn, max_shrink, rng)?;
        self.ess_evaluations += mv.evaluations as u64;
        self.eta_updates += 1;
        if mv.moved {
            self.state.h = mv.state;
            self.loglik = mv.loglik;
            self.lmc_prior = self.lmc_at(&self.state.h, &self.state.c)?;
        }
        Ok((mv.moved, mv.evaluations))
    }
}

fn gamma_log_ratio(new: f64, old: f64, hyper: &Hyperparams) -> f64 {
    if new <= 0.0 {
        return LOG_ZERO;
    }
    (hyper.phi_shape - 1.0) * (new.ln() - old.ln()) - (new - old) / hyper.phi_scale
}

/// The fixed block cycle for one model configuration.
pub fn block_cycle(d: usize, q: usize, gamma_len: usize, hyper: &Hyperparams, mode: DataModel) -> Vec<Block> {
    let mut blocks = Vec::new();
    if q > 0 {
        blocks.push(Block::Alpha);
    }
    let baseline = if mode == DataModel::EsagPlus { hyper.baseline } else { None };
    for j in 0..d {
        if baseline != Some(j) {
            blocks.push(Block::BetaRow(j));
        }
    }
    for k in 0..gamma_len {
        blocks.push(Block::GammaElem(k));
    }
    if hyper.spatial {
        for i in 0..d {
            for j in 0..d {
                blocks.push(Block::CEntry(i, j));
            }
        }
        for j in 0..d {
            blocks.push(Block::PhiElem(j));
        }
    }
    blocks
}

/// Runs one chain: deterministic given the seed, with the block order
/// α, B rows, γ, C entries, φ entries, η.
pub fn run_chain(
    init: ModelState,
    data: &Dataset,
    hyper: &Hyperparams,
    scales: &ProposalScales,
    cfg: &ChainConfig,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sampler = PosteriorSampler::new(init, data, hyper, scales, cfg, &mut rng)?;

    let d = data.dim();
    let layout = StateLayout {
        d,
        p: data.p(),
        q: data.q(),
        m_sites: data.sites.n(),
        spatial: hyper.spatial,
        baseline: if cfg.mode == DataModel::EsagPlus { hyper.baseline } else { None },
    };
    let blocks = block_cycle(d, data.q(), crate::dist::gamma_len(d), hyper, cfg.mode);

    let mut acceptance: BTreeMap<String, AcceptCount> = BTreeMap::new();
    let retained = (cfg.iterations - cfg.burn_in) / cfg.thin;
    let mut draws = Vec::with_capacity(retained);

    for it in 1..=cfg.iterations {
        for block in &blocks {
            let accepted = sampler.mh_block_update(*block, &mut rng)?;
            let entry = acceptance.entry(block.family().to_string()).or_default();
            entry.proposed += 1;
            entry.accepted += u64::from(accepted);
        }
        if hyper.spatial {
            let (moved, _evals) = sampler.elliptical_slice_eta(&mut rng)?;
            let entry = acceptance.entry("eta".to_string()).or_default();
            entry.proposed += 1;
            entry.accepted += u64::from(moved);
        }
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(layout.flatten(&sampler.state));
        }
    }

    let wall = start.elapsed().as_secs_f64();
    Ok(ChainOutput {
        names: layout.names(),
        layout,
        draws,
        acceptance,
        ess_evaluations: sampler.ess_evaluations,
        eta_updates: sampler.eta_updates,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed: cfg.seed,
        wall_seconds: wall,
        iterations_per_second: cfg.iterations as f64 / wall.max(1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::Direction;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<Direction> =
            (0..n).map(|_| crate::sphere::sample_uniform_orthant(3, &mut rng).unwrap()).collect();
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 1.0 + rng.gen::<f64>() });
        let z = DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>().round());
        let coords = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        Dataset::new(y, x, z, coords).unwrap()
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            baseline: Some(0),
            spatial: true,
            mc_draws: 400,
            phi_shape: 6.25,
            phi_scale: 0.04,
            ..Default::default()
        }
    }

    #[test]
    fn chains_are_reproducible_given_seed() {
        let data = small_dataset(8, 1);
        let hyper = small_hyper();
        let scales = ProposalScales::default();
        let init = ModelState::initial(3, 2, 1, data.sites.n(), &hyper);
        let cfg = ChainConfig::new(60, 20, 2, 42, DataModel::EsagPlus);

        let a = run_chain(init.clone(), &data, &hyper, &scales, &cfg).unwrap();
        let b = run_chain(init, &data, &hyper, &scales, &cfg).unwrap();
        assert_eq!(a.n_draws(), 20);
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.acceptance, b.acceptance);
    }

    #[test]
    fn baseline_row_never_changes_and_phi_stays_positive() {
        let data = small_dataset(8, 2);
        let hyper = small_hyper();
        let scales = ProposalScales::default();
        let init = ModelState::initial(3, 2, 1, data.sites.n(), &hyper);
        let cfg = ChainConfig::new(100, 0, 1, 7, DataModel::EsagPlus);

        let out = run_chain(init, &data, &hyper, &scales, &cfg).unwrap();
        let names = out.layout.names();
        for row in &out.draws {
            for (name, v) in names.iter().zip(row) {
                if name.starts_with("b[0,") {
                    assert_eq!(*v, 0.0, "baseline row moved: {name}");
                }
                if name.starts_with("phi[") {
                    assert!(*v > 0.0, "non-positive range in draw: {name} = {v}");
                }
            }
        }
    }

    #[test]
    fn common_random_numbers_mode_runs() {
        let data = small_dataset(6, 3);
        let hyper = small_hyper();
        let scales = ProposalScales::default();
        let init = ModelState::initial(3, 2, 1, data.sites.n(), &hyper);
        let mut cfg = ChainConfig::new(40, 0, 1, 9, DataModel::EsagPlus);
        cfg.noise = TruncationNoise::CommonRandom(123);
        let out = run_chain(init, &data, &hyper, &scales, &cfg).unwrap();
        assert_eq!(out.n_draws(), 40);
    }

    #[test]
    fn layout_round_trips_states() {
        let hyper = small_hyper();
        let layout =
            StateLayout { d: 3, p: 2, q: 1, m_sites: 5, spatial: true, baseline: Some(0) };
        let mut state = ModelState::initial(3, 2, 1, 5, &hyper);
        state.gamma[0] = 0.3;
        state.h[(2, 4)] = -1.7;
        let row = layout.flatten(&state);
        assert_eq!(row.len(), layout.len());
        let back = layout.unflatten(&row).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn degenerate_initial_posterior_is_an_error() {
        let data = small_dataset(5, 4);
        let mut hyper = small_hyper();
        hyper.mc_draws = 1; // all-miss orthant estimates are likely, but the
                            // clearer failure is a non-finite initial state:
        let scales = ProposalScales::default();
        let mut init = ModelState::initial(3, 2, 1, data.sites.n(), &hyper);
        init.phi[0] = -1.0;
        let cfg = ChainConfig::new(10, 0, 1, 1, DataModel::EsagPlus);
        assert!(run_chain(init, &data, &hyper, &scales, &cfg).is_err());
    }

    #[test]
    fn identified_series_replace_c_with_cct() {
        let data = small_dataset(6, 5);
        let hyper = small_hyper();
        let scales = ProposalScales::default();
        let init = ModelState::initial(3, 2, 1, data.sites.n(), &hyper);
        let cfg = ChainConfig::new(30, 10, 1, 11, DataModel::EsagPlus);
        let out = run_chain(init, &data, &hyper, &scales, &cfg).unwrap();

        let names = identified_names(&out.layout);
        assert!(names.iter().any(|n| n.starts_with("cct[")));
        assert!(!names.iter().any(|n| n.starts_with("c[")));
        assert!(!names.iter().any(|n| n.starts_with("b[0,")));
        let series = identified_series(&out);
        assert_eq!(series.len(), names.len());
        assert!(series.iter().all(|s| s.len() == out.n_draws()));

        let diag = diagnostics(&[&out]).unwrap();
        assert_eq!(diag.len(), names.len());
    }
}
