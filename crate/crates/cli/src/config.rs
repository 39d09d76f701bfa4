//! JSON run configuration: parsing, validation, and resolution into typed
//! values from the core crate.
//!
//! Unknown keys anywhere in the document are rejected with their JSON
//! pointer paths, so a misspelled field can never silently fall back to a
//! default. Numeric fields are validated for positivity where the math
//! requires it.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use kirchhoff_spectral::dynamics::Nonlinearity;
use kirchhoff_spectral::modulus::{ContinuityModulus, MollifierKernel};
use kirchhoff_spectral::spaces::WeightFunction;
use kirchhoff_spectral::spectrum::{CoefficientVector, Spectrum, StatePair};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: String,
    /// Defaults to the modulus declared by the nonlinearity preset.
    #[serde(default)]
    pub omega: Option<String>,
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_nonlinearity() -> String {
    "kirchhoff".into()
}

fn default_phi() -> String {
    "affine".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub modes: Option<usize>,
    /// Ratio of the geometric preset.
    #[serde(default)]
    pub q: Option<f64>,
    /// Explicit eigenvalue roots (overrides the preset).
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub u0: CoefficientsConfig,
    pub u1: CoefficientsConfig,
}

/// Either inline coefficients or a generator over the eigenvalues.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientsConfig {
    Inline(Vec<f64>),
    Generator(GeneratorConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorConfig {
    /// `u_k = amplitude * exp(-lambda_k^p)`.
    ExpPower {
        p: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    Zero,
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub tol: f64,
    pub beta: f64,
    pub rho_seed: f64,
    pub grid_step: f64,
    pub n_max: usize,
    pub max_step: Option<f64>,
    pub trace_step: Option<f64>,
    pub kernel: String,
    /// Event level for `simulate`: first crossing of |coupling|.
    pub threshold_level: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            t_end: 5.0,
            tol: 1e-9,
            beta: 2.0,
            rho_seed: 1.0,
            grid_step: 1.0,
            n_max: 64,
            max_step: None,
            trace_step: None,
            kernel: "bump".into(),
            threshold_level: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub per_mode_columns: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            per_mode_columns: false,
        }
    }
}

/// A fully validated and resolved run: typed core values plus the resolved
/// config echoed into every report.
#[derive(Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub spectrum: Spectrum,
    pub pair: StatePair,
    pub nonlinearity: Nonlinearity,
    pub omega: ContinuityModulus,
    pub phi: WeightFunction,
    pub kernel: MollifierKernel,
}

/// Parses a config document, reporting unknown keys and type errors with
/// JSON pointer paths.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        anyhow!(
            "config error at /{}: {}",
            e.path().to_string().replace('.', "/"),
            e.inner()
        )
    })?;
    Ok(config)
}

impl RunConfig {
    /// Validates numeric constraints, materializes generators, and resolves
    /// every named preset. Overrides from the command line are applied
    /// before calling this.
    pub fn resolve(mut self) -> Result<ResolvedRun> {
        let run = &self.run;
        if !(run.t_end > 0.0) || !run.t_end.is_finite() {
            bail!("/run/T: must be finite and > 0 (got {})", run.t_end);
        }
        if !(run.tol > 0.0) || !run.tol.is_finite() {
            bail!("/run/tol: must be finite and > 0 (got {})", run.tol);
        }
        if !(run.beta >= 0.0) {
            bail!("/run/beta: must be >= 0 (got {})", run.beta);
        }
        if !(run.rho_seed > 0.0) {
            bail!("/run/rho_seed: must be > 0 (got {})", run.rho_seed);
        }
        if !(run.grid_step > 0.0) {
            bail!("/run/grid_step: must be > 0 (got {})", run.grid_step);
        }
        if run.n_max < 2 {
            bail!("/run/n_max: must be >= 2 (got {})", run.n_max);
        }
        if let Some(ms) = run.max_step {
            if !(ms > 0.0) {
                bail!("/run/max_step: must be > 0 (got {ms})");
            }
        }
        if let Some(ts) = run.trace_step {
            if !(ts > 0.0) {
                bail!("/run/trace_step: must be > 0 (got {ts})");
            }
        }
        if let Some(level) = run.threshold_level {
            if !(level > 0.0) {
                bail!("/run/threshold_level: must be > 0 (got {level})");
            }
        }

        let spectrum = self.spectrum.build().context("/spectrum")?;

        let data = self.data.clone().unwrap_or(DataConfig {
            u0: CoefficientsConfig::Generator(GeneratorConfig::Zero),
            u1: CoefficientsConfig::Generator(GeneratorConfig::Zero),
        });
        let u0 = data.u0.build(&spectrum).context("/data/u0")?;
        let u1 = data.u1.build(&spectrum).context("/data/u1")?;
        let pair = StatePair::new(u0, u1).map_err(|e| anyhow!("/data: {e}"))?;
        spectrum
            .check_len(&pair.u0)
            .map_err(|e| anyhow!("/data/u0: {e}"))?;

        let nonlinearity = Nonlinearity::parse(&self.nonlinearity)
            .map_err(|e| anyhow!("/nonlinearity: {e}"))?;
        let omega = match &self.omega {
            Some(name) => ContinuityModulus::parse(name).map_err(|e| anyhow!("/omega: {e}"))?,
            None => nonlinearity.continuity().1,
        };
        let phi = WeightFunction::parse(&self.phi).map_err(|e| anyhow!("/phi: {e}"))?;
        let kernel =
            MollifierKernel::parse(&self.run.kernel).map_err(|e| anyhow!("/run/kernel: {e}"))?;

        // Echo the resolved values back into the config copy embedded in
        // reports: inline data and the effective omega.
        self.omega = Some(omega.name());
        self.data = Some(DataConfig {
            u0: CoefficientsConfig::Inline(pair.u0.coeffs().to_vec()),
            u1: CoefficientsConfig::Inline(pair.u1.coeffs().to_vec()),
        });
        self.spectrum.lambdas = Some(spectrum.lambdas().to_vec());

        Ok(ResolvedRun {
            config: self,
            spectrum,
            pair,
            nonlinearity,
            omega,
            phi,
            kernel,
        })
    }
}

impl SpectrumConfig {
    fn build(&self) -> Result<Spectrum> {
        if let Some(lambdas) = &self.lambdas {
            return Spectrum::new(lambdas.clone()).map_err(|e| anyhow!("lambdas: {e}"));
        }
        let preset = self.preset.as_deref().unwrap_or("interval-laplacian");
        let modes = self.modes.unwrap_or(16);
        if modes == 0 {
            bail!("modes: must be >= 1");
        }
        match preset {
            "interval-laplacian" => Ok(Spectrum::interval_laplacian(modes)),
            "geometric" => {
                let q = self.q.ok_or_else(|| anyhow!("geometric preset needs q"))?;
                Spectrum::geometric(q, modes).map_err(|e| anyhow!("{e}"))
            }
            other => bail!("unknown spectrum preset `{other}`"),
        }
    }
}

impl CoefficientsConfig {
    fn build(&self, spectrum: &Spectrum) -> Result<CoefficientVector> {
        match self {
            CoefficientsConfig::Inline(coeffs) => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    bail!("coefficients must be finite");
                }
                Ok(CoefficientVector::new(coeffs.clone()))
            }
            CoefficientsConfig::Generator(spec) => Ok(spec.build(spectrum)),
        }
    }
}

impl GeneratorConfig {
    fn build(&self, spectrum: &Spectrum) -> CoefficientVector {
        match self {
            GeneratorConfig::ExpPower { p, amplitude } => CoefficientVector::new(
                spectrum
                    .lambdas()
                    .iter()
                    .map(|l| amplitude * (-l.powf(*p)).exp())
                    .collect(),
            ),
            GeneratorConfig::Zero => CoefficientVector::zeros(spectrum.len()),
        }
    }
}
