//! Run configuration and simulation specifications (JSON), plus the built-in
//! fixtures used by the integration tests and the README examples.

use serde::{Deserialize, Serialize};

use esag::mcmc::{ProposalScales, TruncationNoise};
use esag::model::{DataModel, Hyperparams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Esag,
    EsagPlus,
}

impl From<Mode> for DataModel {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Esag => DataModel::Esag,
            Mode::EsagPlus => DataModel::EsagPlus,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Fresh,
    CommonRandom(u64),
}

impl From<&NoiseSpec> for TruncationNoise {
    fn from(n: &NoiseSpec) -> Self {
        match n {
            NoiseSpec::Fresh => TruncationNoise::Fresh,
            NoiseSpec::CommonRandom(s) => TruncationNoise::CommonRandom(*s),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    pub sigma2_alpha: f64,
    pub sigma2_beta: f64,
    pub sigma2_gamma: f64,
    pub phi_shape: f64,
    pub phi_scale: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            sigma2_alpha: 10.0,
            sigma2_beta: 10.0,
            sigma2_gamma: 10.0,
            phi_shape: 62.0,
            phi_scale: 0.04,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub c: f64,
    pub phi: f64,
    pub beta: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        let s = ProposalScales::default();
        Self { alpha: s.alpha, gamma: s.gamma, c: s.c, phi: s.phi, beta: s.beta }
    }
}

impl From<&ScaleConfig> for ProposalScales {
    fn from(s: &ScaleConfig) -> Self {
        ProposalScales { alpha: s.alpha, gamma: s.gamma, c: s.c, phi: s.phi, beta: s.beta }
    }
}

/// Full run configuration. Every field has a default, so `{}` is a valid
/// config; command-line flags override `mode`, `spatial`, `seed`, and
/// `workers`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub spatial: bool,
    pub baseline_index: usize,
    pub hyper: HyperConfig,
    pub scales: ScaleConfig,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub mc_draws: usize,
    pub truncation_noise: NoiseSpec,
    pub workers: usize,
    pub max_tries: usize,
    /// Monte Carlo draws per composition prediction.
    pub pred_mc_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::EsagPlus,
            spatial: true,
            baseline_index: 0,
            hyper: HyperConfig::default(),
            scales: ScaleConfig::default(),
            iterations: 20_000,
            burn_in: 4_000,
            thin: 10,
            chains: 4,
            seed: 1,
            mc_draws: 5_000,
            truncation_noise: NoiseSpec::Fresh,
            workers: 1,
            max_tries: 1_000,
            pred_mc_draws: 5_000,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate(usize::MAX - 1).map_err(CliError::from)?;
        ProposalScales::from(&self.scales).validate().map_err(CliError::from)?;
        if self.chains == 0 {
            return Err(CliError::Validation("chains must be at least 1".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(CliError::Validation(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 || (self.iterations - self.burn_in) % self.thin != 0 {
            return Err(CliError::Validation(format!(
                "thin ({}) must divide iterations − burn_in ({})",
                self.thin,
                self.iterations - self.burn_in
            )));
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            sigma2_alpha: self.hyper.sigma2_alpha,
            sigma2_beta: self.hyper.sigma2_beta,
            sigma2_gamma: self.hyper.sigma2_gamma,
            phi_shape: self.hyper.phi_shape,
            phi_scale: self.hyper.phi_scale,
            baseline: if self.mode == Mode::EsagPlus { Some(self.baseline_index) } else { None },
            spatial: self.spatial,
            mc_draws: self.mc_draws,
        }
    }
}

/// Built-in covariate surfaces: functions of the planar location only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XFormula {
    /// Intercept column of ones (excluded from standardization).
    Constant,
    /// |s₁ − 0.5|^{1.2}
    AbsS1Centered,
    /// ‖s‖₂
    Norm,
}

impl XFormula {
    pub fn eval(&self, s: [f64; 2]) -> f64 {
        match self {
            XFormula::Constant => 1.0,
            XFormula::AbsS1Centered => (s[0] - 0.5).abs().powf(1.2),
            XFormula::Norm => (s[0] * s[0] + s[1] * s[1]).sqrt(),
        }
    }
}

/// Built-in uncertainty covariates, drawn per observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZFormula {
    /// Indicator with success probability 1/2.
    Bernoulli,
    /// Uniform on [0, 1).
    Uniform,
    /// Constant one.
    Constant,
}

/// True parameter values for a simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueParams {
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Simulation specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    /// Study domain [[x_lo, x_hi], [y_lo, y_hi]].
    pub domain: [[f64; 2]; 2],
    pub x_formulas: Vec<XFormula>,
    pub z_formulas: Vec<ZFormula>,
    pub truth: TrueParams,
    /// Draw the latent fields (false fixes η = 0).
    #[serde(default = "default_true")]
    pub spatial: bool,
    #[serde(default = "default_max_tries")]
    pub max_tries: usize,
    /// Optional side length of a square grid over the domain on which the true
    /// location surface is recorded.
    #[serde(default)]
    pub truth_grid: Option<usize>,
}

fn default_true() -> bool {
    true
}

fn default_max_tries() -> usize {
    1_000
}

impl SimSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read spec {}: {e}", path.display())))?;
        let spec: SimSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid spec {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.truth.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.truth.b.len();
        if self.n == 0 {
            return Err(CliError::Validation("n must be positive".into()));
        }
        if d < 2 {
            return Err(CliError::Validation("need at least two components".into()));
        }
        let p = self.x_formulas.len();
        if self.truth.b.iter().any(|row| row.len() != p) {
            return Err(CliError::Validation(format!(
                "B must be d×p with p = {p} covariate formulas"
            )));
        }
        if self.truth.c.len() != d || self.truth.c.iter().any(|row| row.len() != d) {
            return Err(CliError::Validation("C must be d×d".into()));
        }
        if self.truth.phi.len() != d {
            return Err(CliError::Validation("phi must have one range per component".into()));
        }
        if self.truth.alpha.len() != self.z_formulas.len() {
            return Err(CliError::Validation(
                "alpha must have one coefficient per uncertainty covariate".into(),
            ));
        }
        if self.truth.gamma.len() != esag::dist::gamma_len(d) {
            return Err(CliError::Validation(format!(
                "gamma must have {} entries for d = {d}",
                esag::dist::gamma_len(d)
            )));
        }
        if self.domain.iter().any(|r| !(r[1] > r[0])) {
            return Err(CliError::Validation("domain bounds must be increasing".into()));
        }
        Ok(())
    }
}

/// Fixtures mirroring the simulation-study configurations.
pub mod fixtures {
    use super::*;

    /// Simulation-study truth: printed B and C, φ = (0.12, 0.15, 0.19),
    /// α = −0.31, γ = (0.728, 0.346), covariates (1, |s₁−0.5|^{1.2}, ‖s‖₂)
    /// standardized to [1, 2], one Bernoulli uncertainty indicator.
    pub fn sim_study_spec() -> SimSpec {
        SimSpec {
            n: 100,
            domain: [[0.0, 1.0], [0.0, 1.0]],
            x_formulas: vec![XFormula::Constant, XFormula::AbsS1Centered, XFormula::Norm],
            z_formulas: vec![ZFormula::Bernoulli],
            truth: TrueParams {
                b: vec![
                    vec![1.0, 0.0, 0.0],
                    vec![1.25, 1.15, 0.25],
                    vec![1.1, 0.55, 1.65],
                ],
                c: vec![
                    vec![1.46, -0.91, 0.43],
                    vec![1.15, -0.60, 1.35],
                    vec![1.18, 1.54, 1.09],
                ],
                phi: vec![0.12, 0.15, 0.19],
                alpha: vec![-0.31],
                gamma: vec![0.728, 0.346],
            },
            spatial: true,
            max_tries: 1_000,
            truth_grid: Some(20),
        }
    }

    /// Second simulation fixture: same covariate surfaces with α = 1.0494,
    /// γ = (0.9554, 1.3055), and the alternative B and C; `eta_active = false`
    /// fixes the latent fields at zero.
    pub fn second_sim_spec(eta_active: bool) -> SimSpec {
        SimSpec {
            n: 100,
            domain: [[0.0, 1.0], [0.0, 1.0]],
            x_formulas: vec![XFormula::Constant, XFormula::AbsS1Centered, XFormula::Norm],
            z_formulas: vec![ZFormula::Bernoulli],
            truth: TrueParams {
                b: vec![
                    vec![1.0, 0.8, 0.5],
                    vec![1.25, 1.15, 0.25],
                    vec![1.1, 0.55, 1.65],
                ],
                c: vec![
                    vec![-1.71, -2.59, 1.21],
                    vec![0.63, 0.07, 0.94],
                    vec![-0.33, -0.24, -1.55],
                ],
                phi: vec![0.12, 0.15, 0.19],
                alpha: vec![1.0494],
                gamma: vec![0.9554, 1.3055],
            },
            spatial: eta_active,
            max_tries: 1_000,
            truth_grid: Some(20),
        }
    }

    /// Range prior for unit-square fixtures: Gamma(6.25, 0.04), mean 0.25,
    /// sd 0.1, with ~95% of the mass below half the maximum distance (≈ 0.7).
    pub fn unit_square_phi_prior() -> (f64, f64) {
        (6.25, 0.04)
    }

    /// Fit configuration for the unit-square simulation fixtures.
    pub fn sim_study_config(mode: Mode, spatial: bool) -> RunConfig {
        let (phi_shape, phi_scale) = unit_square_phi_prior();
        RunConfig {
            mode,
            spatial,
            baseline_index: 0,
            hyper: HyperConfig { phi_shape, phi_scale, ..Default::default() },
            ..Default::default()
        }
    }
}
