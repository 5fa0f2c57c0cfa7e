//! Experiment configuration.
//!
//! A single JSON document describes the grid, the model, the control window,
//! the data profiles and the check parameters. Unknown keys are rejected and
//! a missing key is reported with its full path. The hash of the canonical
//! re-serialization identifies every output file.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use kforq_core::{
    ControlWindow, Domain1D, Field, ForwardSolver, ModelParams, Observer, OptimOptions, TimeGrid,
    WindowValues,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub model: ModelConfig,
    pub window: WindowConfig,
    pub initial: Profile,
    pub control: ControlProfile,
    pub cost: CostConfig,
    pub optimizer: OptimOptions,
    pub checks: ChecksConfig,
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Faults::is_none")]
    pub faults: Faults,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub length: f64,
    pub n_interior: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub epsilon: f64,
    pub k: f64,
}

/// Control window `[x.0, x.1] x [t.0, t.1]` in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub x: (f64, f64),
    pub t: (f64, f64),
}

/// Spatial profile for the initial momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero {},
    /// `amplitude * sin(mode pi x / L)^power`
    SinePower {
        amplitude: f64,
        mode: u32,
        power: u32,
    },
}

/// Space-time profile on the control window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlProfile {
    Zero {},
    /// Product of half sine waves vanishing on the window edges.
    Bump {
        amplitude: f64,
    },
    /// Seeded uniform noise in `[-amplitude, amplitude]`.
    Random {
        amplitude: f64,
    },
}

/// Where the tracking target comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    Zero {},
    /// Spatially and temporally constant.
    Constant {
        value: f64,
    },
    /// Forward run without control.
    Uncontrolled {},
    /// Forward run under the configured control profile.
    Twin {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub delta: f64,
    pub observer: Observer,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Number of random directions in the gradient and Taylor tests.
    pub gradcheck_directions: usize,
    /// Direction family for the gradient check.
    pub direction: ControlProfile,
    pub fd_step: f64,
    pub taylor_steps: Vec<f64>,
    pub transpose_pairs: usize,
    pub coercivity_samples: usize,
    pub embedding_samples: usize,
    /// Regularization weights for the twin sweep; empty skips it.
    pub delta_sweep: Vec<f64>,
    /// Constant for the Gronwall-type bound; `null` calibrates it.
    pub gronwall_c: Option<f64>,
    /// Constant for the smallness hypothesis.
    pub smallness_c: f64,
}

/// Deliberate defects for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Faults {
    #[serde(default)]
    pub corrupt_adjoint: bool,
    /// Perturbs one frame of the forward trajectory before verification.
    #[serde(default)]
    pub corrupt_frame: Option<usize>,
}

impl Faults {
    pub fn is_none(&self) -> bool {
        *self == Faults::default()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::Config(e.inner().to_string())
            } else {
                CliError::Config(format!("{path}: {}", e.inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form. The output directory is left
    /// out, so the same experiment written elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object_mut()
            .expect("config is an object")
            .remove("output");
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: kforq_core::Error| CliError::Config(e.to_string());
        self.setup().map_err(cfg_err)?;
        self.optimizer.validate().map_err(cfg_err)?;
        if !(self.cost.delta.is_finite() && self.cost.delta > 0.0) {
            return Err(CliError::Config(
                "cost.delta: must be finite and > 0".into(),
            ));
        }
        let c = &self.checks;
        if !(c.fd_step.is_finite() && c.fd_step > 0.0) {
            return Err(CliError::Config(
                "checks.fd_step: must be finite and > 0".into(),
            ));
        }
        if c.taylor_steps.len() < 2 || c.taylor_steps.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(CliError::Config(
                "checks.taylor_steps: need at least two positive steps".into(),
            ));
        }
        if c.embedding_samples == 0 {
            return Err(CliError::Config(
                "checks.embedding_samples: must be >= 1".into(),
            ));
        }
        if c.delta_sweep.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(CliError::Config(
                "checks.delta_sweep: entries must be > 0".into(),
            ));
        }
        if c.gronwall_c.is_some_and(|v| !v.is_finite()) {
            return Err(CliError::Config("checks.gronwall_c: must be finite".into()));
        }
        if !(c.smallness_c.is_finite() && c.smallness_c >= 0.0) {
            return Err(CliError::Config(
                "checks.smallness_c: must be finite and >= 0".into(),
            ));
        }
        if let Some(k) = self.faults.corrupt_frame {
            if k == 0 || k > self.time.n_steps {
                return Err(CliError::Config(format!(
                    "faults.corrupt_frame: must lie in 1..={}",
                    self.time.n_steps
                )));
            }
        }
        Ok(())
    }

    /// Grid, solver and window built from the config.
    pub fn setup(&self) -> kforq_core::Result<Setup> {
        let domain = Domain1D::new(self.domain.length, self.domain.n_interior)?;
        let time = TimeGrid::new(self.time.horizon, self.time.n_steps)?;
        let params = ModelParams::new(self.model.epsilon, self.model.k)?;
        let window = ControlWindow::new(domain, time, self.window.x, self.window.t)?;
        Ok(Setup {
            solver: ForwardSolver::new(domain, time, params),
            window,
            domain,
            time,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub solver: ForwardSolver,
    pub window: ControlWindow,
    pub domain: Domain1D,
    pub time: TimeGrid,
}

impl Profile {
    pub fn sample(&self, dom: &Domain1D) -> Field {
        match *self {
            Profile::Zero {} => dom.zeros(),
            Profile::SinePower {
                amplitude,
                mode,
                power,
            } => {
                let l = dom.length();
                dom.sample(|x| amplitude * (mode as f64 * PI * x / l).sin().powi(power as i32))
            }
        }
    }
}

impl ControlProfile {
    pub fn sample(&self, w: &ControlWindow, cfg: &WindowConfig, seed: u64) -> WindowValues {
        match *self {
            ControlProfile::Zero {} => w.zeros(),
            ControlProfile::Bump { amplitude } => {
                let (a, b) = cfg.x;
                let (t0, t1) = cfg.t;
                w.sample(|t, x| {
                    amplitude * (PI * (x - a) / (b - a)).sin() * (PI * (t - t0) / (t1 - t0)).sin()
                })
            }
            ControlProfile::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                WindowValues(
                    (0..w.len())
                        .map(|_| amplitude * rng.gen_range(-1.0..=1.0))
                        .collect(),
                )
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ControlProfile::Zero {} => true,
            ControlProfile::Bump { amplitude } | ControlProfile::Random { amplitude } => {
                amplitude == 0.0
            }
        }
    }
}

/// The configuration used when none is given: a smooth bump on the middle
/// half of the space-time cylinder tracked with `delta = 1e-4`.
pub fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        domain: DomainConfig {
            length: 1.0,
            n_interior: 63,
        },
        time: TimeConfig {
            horizon: 1.0,
            n_steps: 200,
        },
        model: ModelConfig {
            epsilon: 0.1,
            k: 1.0,
        },
        window: WindowConfig {
            x: (0.25, 0.75),
            t: (0.25, 0.75),
        },
        initial: Profile::SinePower {
            amplitude: 0.5,
            mode: 1,
            power: 3,
        },
        control: ControlProfile::Bump { amplitude: 1.0 },
        cost: CostConfig {
            delta: 1e-4,
            observer: Observer::IdentityL2H,
            target: Target::Twin {},
        },
        optimizer: OptimOptions {
            tol_g: 1e-10,
            max_iters: 200,
            memory: 20,
            armijo: 1e-4,
            max_halvings: 40,
        },
        checks: ChecksConfig {
            gradcheck_directions: 5,
            direction: ControlProfile::Random { amplitude: 100.0 },
            fd_step: 1e-5,
            taylor_steps: vec![1e-2, 1e-3, 1e-4, 1e-5],
            transpose_pairs: 20,
            coercivity_samples: 50,
            embedding_samples: 64,
            delta_sweep: vec![1e-2, 1e-3, 1e-4],
            gronwall_c: None,
            smallness_c: 1.0,
        },
        seed: 7,
        output: PathBuf::from("out"),
        faults: Faults::default(),
    }
}
