//! Experiment configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::changepoint::TailBound;
use crate::error::{Error, Result};
use crate::moments::Distribution;
use crate::pmm::MethodChoice;
use crate::regression::Response;
use crate::signals::{SignalKind, DEFAULT_SAMPLE_RATE};
use crate::volterra::AdaptationMethod;

/// Scenario identifiers.
pub const SCENARIOS: [&str; 6] = [
    "g2-validation",
    "pmm-vs-sls",
    "regression-gain",
    "volterra-spectral",
    "cusum-far",
    "dispatch-accuracy",
];

/// One Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Empty means the scenario default.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

fn default_replicates() -> usize {
    1000
}

/// Scenario and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    G2Validation(LocationParams),
    PmmVsSls(RegressionParams),
    RegressionGain(RegressionParams),
    VolterraSpectral(SpectralParams),
    CusumFar(CusumParams),
    DispatchAccuracy(DispatchParams),
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::G2Validation(_) => "g2-validation",
            Scenario::PmmVsSls(_) => "pmm-vs-sls",
            Scenario::RegressionGain(_) => "regression-gain",
            Scenario::VolterraSpectral(_) => "volterra-spectral",
            Scenario::CusumFar(_) => "cusum-far",
            Scenario::DispatchAccuracy(_) => "dispatch-accuracy",
        }
    }

    /// Scenario with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "g2-validation" => Scenario::G2Validation(LocationParams::default()),
            "pmm-vs-sls" => Scenario::PmmVsSls(RegressionParams::default()),
            "regression-gain" => Scenario::RegressionGain(RegressionParams {
                model: Response::Linear,
                ..RegressionParams::default()
            }),
            "volterra-spectral" => Scenario::VolterraSpectral(SpectralParams::default()),
            "cusum-far" => Scenario::CusumFar(CusumParams::default()),
            "dispatch-accuracy" => Scenario::DispatchAccuracy(DispatchParams::default()),
            other => return Err(Error::Config(format!("unknown scenario '{other}'"))),
        })
    }

    pub fn description(&self) -> &'static str {
        match self {
            Scenario::G2Validation(_) => {
                "location of skewed noise: PMM2 vs sample mean variance ratio against the closed-form g2"
            }
            Scenario::PmmVsSls(_) => "nonlinear regression with skewed errors: OLS, PMM2 and SLS per-parameter MSE",
            Scenario::RegressionGain(_) => "regression: PMM2 MSE gain over OLS against the predicted g2",
            Scenario::VolterraSpectral(_) => {
                "Volterra equalisation behind a quadratic memory channel: effective spectral width ratios"
            }
            Scenario::CusumFar(_) => "polynomial CUSUM: empirical false-alarm rate and detection delay",
            Scenario::DispatchAccuracy(_) => "automatic OLS/PMM2/PMM3 choice accuracy per noise family",
        }
    }

    fn default_sample_sizes(&self) -> Vec<usize> {
        match self {
            Scenario::G2Validation(_) => vec![800],
            Scenario::PmmVsSls(_) => vec![30, 200],
            Scenario::RegressionGain(_) => vec![30, 50, 100, 200],
            Scenario::VolterraSpectral(_) => vec![1 << 15],
            Scenario::CusumFar(p) => vec![p.horizon],
            Scenario::DispatchAccuracy(_) => vec![10_000],
        }
    }
}

/// Where the shape (cumulants) used by an estimator comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeSource {
    /// Estimated from the data (sample or least-squares residuals).
    #[default]
    Estimated,
    /// Exact cumulants of the configured noise family.
    Analytic,
}

/// Location experiment. The default uses the exact noise cumulants: with a
/// variance estimated from the same sample the second moment equation holds
/// at the sample mean and PMM2 returns the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocationParams {
    pub noise: Distribution,
    pub location: f64,
    pub shape: ShapeSource,
}

impl Default for LocationParams {
    fn default() -> Self {
        Self {
            noise: Distribution::ChiSquare { k: 3.0 },
            location: 0.0,
            shape: ShapeSource::Analytic,
        }
    }
}

/// Regression experiment. Errors are the centred noise family times
/// `noise_scale`; the regressor is an even grid on `x_range` (plus an
/// intercept column for the linear model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionParams {
    pub model: Response,
    /// Empty means the model default: exponential (2, 0.5), growth
    /// (20, 4, -8), linear (1, 2).
    pub theta: Vec<f64>,
    pub x_range: [f64; 2],
    pub noise: Distribution,
    pub noise_scale: f64,
    pub shape: ShapeSource,
    pub sls_weighting: SlsWeighting,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            model: Response::Exponential,
            theta: Vec::new(),
            x_range: [0.0, 1.0],
            noise: Distribution::ChiSquare { k: 3.0 },
            noise_scale: 1.0,
            shape: ShapeSource::Estimated,
            sls_weighting: SlsWeighting::Optimal,
        }
    }
}

impl RegressionParams {
    pub fn resolved_theta(&self) -> Vec<f64> {
        if !self.theta.is_empty() {
            return self.theta.clone();
        }
        match self.model {
            Response::Exponential => vec![2.0, 0.5],
            Response::Growth => vec![20.0, 4.0, -8.0],
            Response::Linear => vec![1.0, 2.0],
        }
    }
}

/// Weighting of the SLS residual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlsWeighting {
    /// Per-observation inverse covariance at the least-squares fit.
    #[default]
    Optimal,
    /// Scalar `omega` from the sandwich-variance grid.
    DefaultOmega,
    /// Fixed scalar `omega`.
    Omega(f64),
}

/// Linear FIR plus a quadratic product term:
/// `r[n] = sum_k linear[k] s[n-k] + quadratic * s[n] * s[n - quadratic_lag]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub linear: Vec<f64>,
    pub quadratic: f64,
    pub quadratic_lag: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            linear: vec![0.25, 0.5, 0.25],
            quadratic: 0.1,
            quadratic_lag: 1,
        }
    }
}

impl ChannelConfig {
    /// Channel output with zero initial state.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        (0..s.len())
            .map(|n| {
                let lin: f64 = self
                    .linear
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= n)
                    .map(|(k, h)| h * s[n - k])
                    .sum();
                let lagged = if self.quadratic_lag <= n {
                    s[n - self.quadratic_lag]
                } else {
                    0.0
                };
                lin + self.quadratic * s[n] * lagged
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralParams {
    pub signals: Vec<SignalKind>,
    pub sample_rate: f64,
    pub channel: ChannelConfig,
    /// Equaliser memory for both kernels.
    pub memory: usize,
    /// Equaliser target delay in samples (`< memory`).
    pub delay: usize,
    pub ridge: f64,
    pub methods: Vec<AdaptationMethod>,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            signals: vec![
                SignalKind::ofdm(),
                SignalKind::filtered_noise(),
                SignalKind::IidNoise {
                    distribution: Distribution::Normal { mean: 0.0, sd: 1.0 },
                },
            ],
            sample_rate: DEFAULT_SAMPLE_RATE,
            channel: ChannelConfig::default(),
            memory: 5,
            delay: 2,
            ridge: 0.0,
            methods: vec![AdaptationMethod::Mmse, AdaptationMethod::Moment],
        }
    }
}

/// Gaussian mean-shift detection: `N(mean, sd^2) -> N(mean + shift*sd, sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CusumParams {
    pub mean: f64,
    pub sd: f64,
    /// Shift in units of `sd`.
    pub shift: f64,
    pub degree: usize,
    pub epsilons: Vec<f64>,
    pub horizon: usize,
    pub bound: TailBound,
    /// Change index for delay runs; `None` skips them.
    pub change_at: Option<usize>,
    /// Samples after the change before a delay run is declared missed.
    pub delay_cap: usize,
}

impl Default for CusumParams {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sd: 1.0,
            shift: 3.0,
            degree: 1,
            epsilons: vec![0.2, 0.05, 0.01],
            horizon: 1000,
            bound: TailBound::Chebyshev,
            change_at: Some(500),
            delay_cap: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchCase {
    pub distribution: Distribution,
    pub expected: MethodChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispatchParams {
    pub cases: Vec<DispatchCase>,
}

impl Default for DispatchParams {
    fn default() -> Self {
        Self {
            cases: vec![
                DispatchCase {
                    distribution: Distribution::Normal { mean: 0.0, sd: 1.0 },
                    expected: MethodChoice::Ols,
                },
                DispatchCase {
                    distribution: Distribution::ChiSquare { k: 3.0 },
                    expected: MethodChoice::Pmm2,
                },
                DispatchCase {
                    distribution: Distribution::Uniform { a: 0.0, b: 1.0 },
                    expected: MethodChoice::Pmm3,
                },
            ],
        }
    }
}

impl ExperimentConfig {
    /// Config for a scenario with default parameters.
    pub fn for_scenario(name: &str) -> Result<Self> {
        let scenario = Scenario::by_name(name)?;
        let replicates = match scenario {
            Scenario::CusumFar(_) => 2000,
            Scenario::DispatchAccuracy(_) => 200,
            Scenario::VolterraSpectral(_) => 20,
            _ => 1000,
        };
        Ok(Self {
            scenario,
            replicates,
            base_seed: 0,
            sample_sizes: Vec::new(),
            output_path: None,
        })
    }

    /// Parses a config; keys left out take the values of [`Self::for_scenario`].
    pub fn from_json(text: &str) -> Result<Self> {
        let err = |e: serde_json::Error| Error::Config(e.to_string());
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(err)?;
        let name = value
            .get("scenario")
            .and_then(|s| s.as_str())
            .ok_or_else(|| Error::Config("missing \"scenario\"".into()))?
            .to_string();
        let defaults = serde_json::to_value(Self::for_scenario(&name)?).map_err(err)?;
        if let (Some(user), serde_json::Value::Object(mut merged)) = (value.as_object_mut(), defaults) {
            merged.append(user);
            value = serde_json::Value::Object(merged);
        } else {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let cfg: Self = serde_json::from_value(value).map_err(err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Copy with scenario defaults filled in.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.sample_sizes.is_empty() {
            out.sample_sizes = out.scenario.default_sample_sizes();
        }
        match &mut out.scenario {
            Scenario::PmmVsSls(p) | Scenario::RegressionGain(p) => p.theta = p.resolved_theta(),
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be > 0".into());
        }
        let dist = |d: &Distribution| d.validate().map_err(|e| Error::Config(e.to_string()));
        match &self.scenario {
            Scenario::G2Validation(p) => {
                dist(&p.noise)?;
                if !p.location.is_finite() {
                    return bad("location must be finite".into());
                }
            }
            Scenario::PmmVsSls(p) | Scenario::RegressionGain(p) => {
                dist(&p.noise)?;
                let k = match p.model {
                    Response::Linear => 2,
                    Response::Exponential => 2,
                    Response::Growth => 3,
                };
                if p.resolved_theta().len() != k {
                    return bad(format!("model needs {k} parameters"));
                }
                if !(p.x_range[1] > p.x_range[0]) {
                    return bad("x_range must be increasing".into());
                }
                if !(p.noise_scale > 0.0 && p.noise_scale.is_finite()) {
                    return bad("noise_scale must be > 0".into());
                }
                if let SlsWeighting::Omega(w) = p.sls_weighting {
                    if !(w >= 0.0 && w.is_finite()) {
                        return bad("omega must be >= 0".into());
                    }
                }
                if self.sample_sizes.iter().any(|&n| n <= k + 1) {
                    return bad(format!("sample sizes must exceed {}", k + 1));
                }
            }
            Scenario::VolterraSpectral(p) => {
                if p.signals.is_empty() || p.methods.is_empty() {
                    return bad("need at least one signal and one method".into());
                }
                if p.memory == 0 || p.delay >= p.memory {
                    return bad("need memory >= 1 and delay < memory".into());
                }
                if p.channel.linear.is_empty() {
                    return bad("channel needs a linear part".into());
                }
                if !(p.sample_rate > 0.0) || !(p.ridge >= 0.0) {
                    return bad("sample_rate must be > 0 and ridge >= 0".into());
                }
            }
            Scenario::CusumFar(p) => {
                if !(p.sd > 0.0) || p.shift == 0.0 || !(1..=2).contains(&p.degree) {
                    return bad("need sd > 0, shift != 0 and degree 1 or 2".into());
                }
                if p.epsilons.is_empty() || p.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                    return bad("epsilons must lie in (0, 1)".into());
                }
                if p.horizon == 0 {
                    return bad("horizon must be >= 1".into());
                }
            }
            Scenario::DispatchAccuracy(p) => {
                if p.cases.is_empty() {
                    return bad("need at least one dispatch case".into());
                }
                for c in &p.cases {
                    dist(&c.distribution)?;
                }
                if self.sample_sizes.iter().any(|&n| n < crate::pmm::DISPATCH_MIN_LEN) {
                    return bad(format!("dispatch needs samples of at least {}", crate::pmm::DISPATCH_MIN_LEN));
                }
            }
        }
        Ok(())
    }
}
