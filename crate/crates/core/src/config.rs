//! Run configuration: flat TOML with a schema-versioned header. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discretization::{FamilyKind, MappingFamily, ReferenceMesh, DEFAULT_BUMP_AMPLITUDE, DEFAULT_FD_STEP, DEFAULT_STRETCH_END};
use crate::eigensolve::{DEFAULT_DELTA_MULT, DEFAULT_NULL_TOL};
use crate::error::{Error, Result};
use crate::gauge::GaugeStrategy;
use crate::greedy::{equidistant, GreedyConfig, ResidualNorm};
use crate::problem::Problem;
use crate::tracking::{TrackingConfig, DEFAULT_NEAR_DEGENERATE_TOL};

pub const SCHEMA: &str = "rb-maxwell/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Mesh subdivisions per side.
    pub mesh_n: usize,
    pub family: FamilyKind,
    pub stretch_end: f64,
    pub amplitude: f64,
    pub gauge: GaugeStrategy,
    pub k: usize,
    pub tau: usize,
    /// Defaults to `⌈1.5 (K + τ)⌉`.
    pub n_init: Option<usize>,
    pub allow_small_init: bool,
    pub n_pod: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub tol: f64,
    pub n_max: usize,
    pub t_ref: f64,
    pub delta_mult: f64,
    pub null_tol: f64,
    pub fd_step: f64,
    pub residual_norm: ResidualNorm,
    pub h: f64,
    pub rho_min: f64,
    pub max_halvings: usize,
    pub near_degenerate_tol: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bench_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA.into(),
            mesh_n: 16,
            family: FamilyKind::AffineStretch,
            stretch_end: DEFAULT_STRETCH_END,
            amplitude: DEFAULT_BUMP_AMPLITUDE,
            gauge: GaugeStrategy::TreeCotree,
            k: 5,
            tau: 2,
            n_init: None,
            allow_small_init: false,
            n_pod: 20,
            n_train: 100,
            n_test: 200,
            tol: 1e-8,
            n_max: 60,
            t_ref: 0.0,
            delta_mult: DEFAULT_DELTA_MULT,
            null_tol: DEFAULT_NULL_TOL,
            fd_step: DEFAULT_FD_STEP,
            residual_norm: ResidualNorm::Mass,
            h: 0.05,
            rho_min: 0.7,
            max_halvings: 4,
            near_degenerate_tol: DEFAULT_NEAR_DEGENERATE_TOL,
            seed: 20,
            out_dir: PathBuf::from("out"),
            bench_reps: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("schema `{}` is not supported (expected `{SCHEMA}`)", self.schema)));
        }
        let counts = [
            ("mesh_n", self.mesh_n),
            ("k", self.k),
            ("n_pod", self.n_pod),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_max", self.n_max),
            ("bench_reps", self.bench_reps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_init == Some(0) {
            return Err(Error::Config("n_init must be positive".into()));
        }
        if self.bench_reps < 3 {
            return Err(Error::Config(format!("bench_reps must be at least 3, got {}", self.bench_reps)));
        }
        if !(0.0..=1.0).contains(&self.t_ref) {
            return Err(Error::Config(format!("t_ref must lie in [0, 1], got {}", self.t_ref)));
        }
        let positive = [("null_tol", self.null_tol), ("fd_step", self.fd_step), ("delta_mult", self.delta_mult)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
        }
        self.family()?;
        self.greedy_config(equidistant(self.n_train))?.validate()?;
        self.tracking_config().validate()
    }

    pub fn family(&self) -> Result<MappingFamily> {
        MappingFamily::from_kind(self.family, self.stretch_end, self.amplitude).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_init(&self) -> usize {
        self.n_init.unwrap_or_else(|| GreedyConfig::recommended_n_init(self.k, self.tau))
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(ReferenceMesh::new(self.mesh_n)?, self.family()?, self.null_tol, self.fd_step)
    }

    pub fn greedy_config(&self, train: Vec<f64>) -> Result<GreedyConfig> {
        Ok(GreedyConfig {
            k: self.k,
            tau: self.tau,
            n_init: self.n_init(),
            train,
            tol: self.tol,
            n_max: self.n_max,
            g: 1.0,
            delta_mult: self.delta_mult,
            residual_norm: self.residual_norm,
            allow_small_init: self.allow_small_init,
        })
    }

    pub fn tracking_config(&self) -> TrackingConfig {
        TrackingConfig {
            k: self.k,
            tau: self.tau,
            h: self.h,
            rho_min: self.rho_min,
            max_halvings: self.max_halvings,
            delta_mult: self.delta_mult,
            near_degenerate_tol: self.near_degenerate_tol,
            ..TrackingConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.n_init(), 11);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml("schema = \"rb-maxwell/1\"\nmesh_n = 8\ngauge = \"gram-schmidt\"\n").unwrap();
        assert_eq!(cfg.mesh_n, 8);
        assert_eq!(cfg.gauge, GaugeStrategy::GramSchmidt);
        assert_eq!(cfg.k, 5);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\ntoll = 1e-8\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/2\"\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\nk = 0\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\ntol = -1.0\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\ngauge = \"coulomb\"\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\nbench_reps = 2\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\nn_init = 3\n").is_err());
        assert!(RunConfig::from_toml("schema = \"rb-maxwell/1\"\nn_init = 3\nallow_small_init = true\n").is_ok());
    }
}
