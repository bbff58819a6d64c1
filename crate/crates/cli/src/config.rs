use std::path::{Path, PathBuf};

use kamtori::dynamics::{henon_heiles, ModelConfig, ModelSpec, State};
use kamtori::iteration::SolveConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Overrides the output directory of every command.
pub const OUTPUT_DIR_ENV: &str = "KAMTORI_OUTPUT_DIR";

const DEFAULT_OUTPUT_DIR: &str = "kamtori-out";

/// Everything a command needs, read from TOML and command-line flags.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in model name; ignored when `model_file` is set.
    pub model: String,
    /// TOML file with `hamiltonian` or `vector_field` terms.
    pub model_file: Option<PathBuf>,
    pub energy: f64,
    /// `[x0, y0, p_y0]`; `p_x0` follows from the energy.
    pub initial: Option<[f64; 3]>,
    /// Full `[x, p_x, y, p_y]`, for models without a Hamiltonian.
    pub state: Option<[f64; 4]>,
    /// `[y0, p_y0]` at `x0 = 0`, solved in order with continuation.
    pub probes: Option<Vec<[f64; 2]>>,
    pub solve: SolveConfig,
    /// Earlier `seed.json` to continue from.
    pub seed_solution: Option<PathBuf>,
    /// Integration time of oracle sections.
    pub oracle_t_end: f64,
    /// Integration time of the irregularity test per scan probe; zero skips it.
    pub chaos_t_end: f64,
    /// Nodes per angle of traced level-set tori.
    pub contour_nodes: usize,
    /// Lines across the torus when tracing a section curve.
    pub section_lines: usize,
    /// Extra `y,py` CSV curves copied into the Poincaré output.
    pub overlays: Vec<PathBuf>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "henon-heiles".into(),
            model_file: None,
            energy: 1.0 / 12.0,
            initial: None,
            state: None,
            probes: None,
            solve: SolveConfig::default(),
            seed_solution: None,
            oracle_t_end: 1000.0,
            chaos_t_end: 5000.0,
            contour_nodes: 64,
            section_lines: 256,
            overlays: Vec::new(),
            output_dir: None,
        }
    }
}

/// A configuration problem, located by its field path.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("", format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid("", format!("{}: {}", path.display(), e.message())).with_span(&e))
    }

    pub fn output_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                return dir.into();
            }
        }
        self.output_dir.clone().unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into())
    }

    /// SHA-256 of the configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        if let Some(path) = &self.model_file {
            let text = std::fs::read_to_string(path).map_err(|e| invalid("model_file", format!("{}: {e}", path.display())))?;
            let cfg: ModelConfig = toml::from_str(&text).map_err(|e| invalid("model_file", e.message().to_string()).with_span(&e))?;
            return ModelSpec::from_config(&cfg).map_err(|e| invalid("model_file", e.to_string()));
        }
        match self.model.as_str() {
            "henon-heiles" => Ok(henon_heiles()),
            other => Err(invalid("model", format!("unknown built-in model {other:?}; known: henon-heiles"))),
        }
    }

    fn check_common(&self) -> Result<ModelSpec, ConfigError> {
        if !(self.energy.is_finite() && self.energy > 0.0) {
            return Err(invalid("energy", format!("must be positive, got {}", self.energy)));
        }
        self.model_spec()
    }

    pub fn validate_matrix(&self) -> Result<ModelSpec, ConfigError> {
        if self.solve.n_s == 0 {
            return Err(invalid("solve.n_s", "must be at least 1"));
        }
        self.model_spec()
    }

    pub fn validate_solve(&self) -> Result<(ModelSpec, State), ConfigError> {
        let model = self.check_common()?;
        self.solve.validate().map_err(|e| invalid("solve", e.to_string()))?;
        let state = match (self.state, self.initial) {
            (Some(s), None) => s,
            (None, Some([x, y, py])) => model.initial_state(self.energy, x, y, py).map_err(|e| invalid("initial", e.to_string()))?,
            (Some(_), Some(_)) => return Err(invalid("initial", "give either initial or state, not both")),
            (None, None) => return Err(invalid("initial", "missing; give initial = [x0, y0, py0] or state")),
        };
        if state.iter().any(|v| !v.is_finite()) {
            return Err(invalid("state", "must be finite"));
        }
        Ok((model, state))
    }

    /// Probe list of the Poincaré and scan commands; falls back to the
    /// initial condition when no probes are given.
    pub fn validate_probes(&self) -> Result<(ModelSpec, Vec<(f64, f64)>), ConfigError> {
        let model = self.check_common()?;
        self.solve.validate().map_err(|e| invalid("solve", e.to_string()))?;
        let probes: Vec<(f64, f64)> = match (&self.probes, self.initial) {
            (Some(p), _) => p.iter().map(|p| (p[0], p[1])).collect(),
            (None, Some([x, y, py])) if x == 0.0 => vec![(y, py)],
            (None, Some(_)) => return Err(invalid("initial", "probes sit on x0 = 0")),
            (None, None) => return Err(invalid("probes", "missing; give probes = [[y0, py0], ...]")),
        };
        for (k, p) in probes.iter().enumerate() {
            if !(p.0.is_finite() && p.1.is_finite()) {
                return Err(invalid(&format!("probes[{k}]"), "must be finite"));
            }
        }
        for (name, v) in [("oracle_t_end", self.oracle_t_end), ("chaos_t_end", self.chaos_t_end)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if self.contour_nodes < 8 || self.contour_nodes % 2 != 0 {
            return Err(invalid("contour_nodes", "must be even and at least 8"));
        }
        if self.section_lines < 8 {
            return Err(invalid("section_lines", "must be at least 8"));
        }
        Ok((model, probes))
    }
}

impl ConfigError {
    fn with_span(mut self, e: &toml::de::Error) -> Self {
        if let Some(span) = e.span() {
            self.message = format!("{} (bytes {}..{})", self.message, span.start, span.end);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("energy = 0.08\n[solve]\nns = 5\n").unwrap_err();
        assert!(err.message().contains("ns"), "{}", err.message());
    }

    #[test]
    fn nested_solve_settings() {
        let cfg: RunConfig = toml::from_str("initial = [0.0, 0.0, 0.18]\n[solve]\nn_s = 7\n").unwrap();
        assert_eq!(cfg.solve.n_s, 7);
        assert_eq!(cfg.solve.grid, SolveConfig::default().grid);
        assert!(cfg.validate_solve().is_ok());
    }

    #[test]
    fn field_paths_in_errors() {
        let cfg = RunConfig { solve: SolveConfig { n_s: 0, ..SolveConfig::default() }, ..RunConfig::default() };
        assert_eq!(cfg.validate_matrix().unwrap_err().field, "solve.n_s");
        let cfg = RunConfig { probes: Some(vec![[0.0, f64::NAN]]), ..RunConfig::default() };
        assert_eq!(cfg.validate_probes().unwrap_err().field, "probes[0]");
        let cfg = RunConfig { model: "lorenz".into(), ..RunConfig::default() };
        assert_eq!(cfg.model_spec().unwrap_err().field, "model");
    }

    #[test]
    fn hash_ignores_the_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: Some("elsewhere".into()), ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { energy: 0.1, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }
}
