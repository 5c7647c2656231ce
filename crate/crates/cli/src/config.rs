//! Experiment configuration read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use hamred_core::integrators::NewtonSettings;
use hamred_core::model::{build_sine_gordon, build_wave2d, AffineHamiltonianModel};
use hamred_core::pipeline::Method;
use hamred_core::sampling::uniform_parameters;
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field_error(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("config field `{field}`: {msg}"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub test: TestSection,
    pub methods: MethodsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `wave` or `sine-gordon`.
    pub name: String,
    /// Interior grid points: `[n1, n2]` for the wave, `[n]` for Sine-Gordon.
    pub grid: Vec<usize>,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub mu: Vec<f64>,
    #[serde(default)]
    pub include_initial_state: bool,
    /// Size of the DEIM row dictionary; all snapshots when absent.
    pub row_count: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    #[serde(default)]
    pub mu: Vec<f64>,
    /// Number of uniform random test parameters, drawn with `seed`.
    pub random: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub list: Vec<String>,
    #[serde(default)]
    pub m_s: Vec<usize>,
    #[serde(default)]
    pub n_s: Vec<usize>,
    /// Basis sizes of the standard methods; defaults to the `n_s` grid.
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps_csvd: f64,
    #[serde(default = "default_eps")]
    pub eps_sdeim: f64,
}

fn default_eps() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Dictionary file; `<dir>/dictionary.hamd` when absent.
    pub dictionary: Option<PathBuf>,
    /// Write wall-clock columns; when false they stay empty so repeated runs are byte-identical.
    #[serde(default = "default_true")]
    pub record_timings: bool,
    #[serde(default = "default_true")]
    pub charts: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            dictionary: None,
            record_timings: true,
            charts: true,
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default = "default_newton_tol")]
    pub newton: f64,
    #[serde(default = "default_newton_iter")]
    pub newton_iterations: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection {
            newton: default_newton_tol(),
            newton_iterations: default_newton_iter(),
        }
    }
}

fn default_newton_tol() -> f64 {
    NewtonSettings::default().tolerance
}

fn default_newton_iter() -> usize {
    NewtonSettings::default().max_iterations
}

impl ExperimentConfig {
    /// Parses and validates; relative output paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.output.dir = base.join(&cfg.output.dir);
            cfg.output.dictionary = cfg.output.dictionary.map(|d| base.join(d));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let model = self.build_model()?;
        if self.training.mu.is_empty() {
            return Err(field_error("training.mu", "at least one training parameter is required"));
        }
        for &mu in &self.training.mu {
            if !model.domain.contains(&[mu]) {
                return Err(field_error("training.mu", format!("{mu} outside the parameter domain {}", domain_text(&model))));
            }
        }
        if self.training.row_count == Some(0) {
            return Err(field_error("training.row_count", "must be positive"));
        }
        for &mu in &self.test.mu {
            if !model.domain.contains(&[mu]) {
                return Err(field_error("test.mu", format!("{mu} outside the parameter domain {}", domain_text(&model))));
            }
        }
        match (self.test.random, self.test.seed) {
            (Some(_), None) => return Err(field_error("test.seed", "required when `test.random` is set")),
            (Some(0), _) => return Err(field_error("test.random", "must be positive")),
            _ => {}
        }
        if self.methods.list.is_empty() {
            return Err(field_error("methods.list", "no methods given"));
        }
        let methods = self.methods()?;
        if !model.is_nonlinear() {
            if let Some(m) = methods.iter().find(|m| m.is_hyper_reduced()) {
                return Err(field_error("methods.list", format!("{m} needs a nonlinear model")));
            }
        }
        if methods.iter().any(|m| m.is_dictionary_based()) {
            if self.methods.m_s.is_empty() {
                return Err(field_error("methods.m_s", "dictionary methods need window sizes"));
            }
            if self.methods.n_s.is_empty() {
                return Err(field_error("methods.n_s", "dictionary methods need snapshot counts"));
            }
        }
        if methods.iter().any(|m| *m != Method::Fom && !m.is_dictionary_based()) && self.standard_sizes().is_empty() {
            return Err(field_error("methods.sizes", "standard methods need basis sizes (or an `n_s` grid)"));
        }
        for (name, grid) in [("methods.m_s", &self.methods.m_s), ("methods.n_s", &self.methods.n_s), ("methods.sizes", &self.methods.sizes)] {
            if grid.contains(&0) {
                return Err(field_error(name, "entries must be positive"));
            }
        }
        for (name, v) in [("methods.eps_csvd", self.methods.eps_csvd), ("methods.eps_sdeim", self.methods.eps_sdeim)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(field_error(name, format!("{v} is not in (0, 1)")));
            }
        }
        self.newton().validate().map_err(|e| field_error("tolerances.newton", e))?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<AffineHamiltonianModel, ConfigError> {
        let g = &self.model.grid;
        if self.model.steps == 0 {
            return Err(field_error("model.steps", "must be positive"));
        }
        let built = match self.model.name.as_str() {
            "wave" => {
                if g.len() != 2 {
                    return Err(field_error("model.grid", "the wave model takes two grid sizes"));
                }
                build_wave2d(g[0], g[1], self.model.steps)
            }
            "sine-gordon" => {
                if g.len() != 1 {
                    return Err(field_error("model.grid", "the Sine-Gordon model takes one grid size"));
                }
                build_sine_gordon(g[0], self.model.steps)
            }
            other => return Err(field_error("model.name", format!("unknown model `{other}`; expected `wave` or `sine-gordon`"))),
        };
        built.map_err(|e| field_error("model.grid", e))
    }

    pub fn methods(&self) -> Result<Vec<Method>, ConfigError> {
        self.methods
            .list
            .iter()
            .map(|s| s.parse::<Method>().map_err(|e| field_error("methods.list", e)))
            .collect()
    }

    pub fn standard_sizes(&self) -> &[usize] {
        if self.methods.sizes.is_empty() {
            &self.methods.n_s
        } else {
            &self.methods.sizes
        }
    }

    pub fn training(&self) -> Vec<Vec<f64>> {
        self.training.mu.iter().map(|&m| vec![m]).collect()
    }

    /// Explicit test parameters followed by the random draws; `seed` overrides the config seed.
    pub fn test_parameters(&self, model: &AffineHamiltonianModel, seed: Option<u64>) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.test.mu.iter().map(|&m| vec![m]).collect();
        if let (Some(count), Some(s)) = (self.test.random, seed.or(self.test.seed)) {
            out.extend(uniform_parameters(&model.domain, count, s));
        }
        if out.is_empty() {
            out = self.training();
        }
        out
    }

    pub fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            tolerance: self.tolerances.newton,
            max_iterations: self.tolerances.newton_iterations,
            ..NewtonSettings::default()
        }
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.output
            .dictionary
            .clone()
            .unwrap_or_else(|| self.output.dir.join("dictionary.hamd"))
    }
}

fn domain_text(model: &AffineHamiltonianModel) -> String {
    format!("[{}, {}]", model.domain.lower[0], model.domain.upper[0])
}
