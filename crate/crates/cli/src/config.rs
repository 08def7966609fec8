//! Scenario configuration loaded from TOML.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use symorb::hamsys::BuiltinSystem;
use symorb::Tolerances;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub system: BuiltinSystem,
    /// Constant potential offset u (fixes the energy level H + u = 0).
    #[serde(default)]
    pub potential_offset: f64,
    pub task: TaskConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    /// Output directory for artifacts; overridable with --out.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_samples() -> usize {
    400
}

fn default_anchors() -> Vec<f64> {
    vec![0.0, 0.33, 0.66]
}

fn default_pairs() -> usize {
    5
}

fn default_bumps() -> usize {
    10
}

fn default_alpha() -> f64 {
    1.5
}

fn default_draws() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    /// Integrate one trajectory and record it with its energy drift.
    Flow {
        q: Vec<f64>,
        p: Vec<f64>,
        t_end: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// Scan for chords from configuration seeds on the critical graph.
    FindChords {
        seeds: Vec<Vec<f64>>,
        t_max: f64,
    },
    /// Locate a periodic orbit and classify its projection.
    ClassifyOrbit {
        q: Vec<f64>,
        p: Vec<f64>,
        t_guess: f64,
    },
    /// Reduced return map spectra at several anchors (period fractions).
    ReturnMap {
        q: Vec<f64>,
        p: Vec<f64>,
        t_guess: f64,
        #[serde(default = "default_anchors")]
        anchors: Vec<f64>,
    },
    /// Reversibility certificates of a round-trip orbit.
    CheckReversibility {
        q: Vec<f64>,
        p: Vec<f64>,
        t_guess: f64,
    },
    /// Conjugate linear-system pairs: three conditions and projections.
    LinsysCheck {
        dim_d: usize,
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default = "default_bumps")]
        bumps: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// Random reversible symplectic matrices and their spectra.
    MatrixLab {
        dim_d: usize,
        #[serde(default = "default_draws")]
        draws: usize,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Flow { .. } => "flow",
            TaskConfig::FindChords { .. } => "find_chords",
            TaskConfig::ClassifyOrbit { .. } => "classify_orbit",
            TaskConfig::ReturnMap { .. } => "return_map",
            TaskConfig::CheckReversibility { .. } => "check_reversibility",
            TaskConfig::LinsysCheck { .. } => "linsys_check",
            TaskConfig::MatrixLab { .. } => "matrix_lab",
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Sanity checks beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        let n = match &self.system {
            BuiltinSystem::Pendulum => 1,
            BuiltinSystem::Harmonic { omegas } => omegas.len(),
            _ => 2,
        };
        let check_point = |q: &Vec<f64>, p: &Vec<f64>| -> Result<(), String> {
            if q.len() != n || p.len() != n {
                return Err(format!(
                    "seed point has dimension {}/{}, system expects {n}",
                    q.len(),
                    p.len()
                ));
            }
            Ok(())
        };
        match &self.task {
            TaskConfig::Flow { q, p, t_end, .. } => {
                check_point(q, p)?;
                if *t_end <= 0.0 {
                    return Err("t_end must be positive".into());
                }
            }
            TaskConfig::FindChords { seeds, t_max } => {
                if seeds.is_empty() {
                    return Err("at least one seed is required".into());
                }
                for s in seeds {
                    if s.len() != n {
                        return Err(format!("seed has dimension {}, expected {n}", s.len()));
                    }
                }
                if *t_max <= 0.0 {
                    return Err("t_max must be positive".into());
                }
            }
            TaskConfig::ClassifyOrbit { q, p, t_guess }
            | TaskConfig::ReturnMap { q, p, t_guess, .. }
            | TaskConfig::CheckReversibility { q, p, t_guess } => {
                check_point(q, p)?;
                if *t_guess <= 0.0 {
                    return Err("t_guess must be positive".into());
                }
            }
            TaskConfig::LinsysCheck { dim_d, alpha, .. } => {
                if *dim_d == 0 {
                    return Err("dim_d must be positive".into());
                }
                if *alpha == 0.0 {
                    return Err("alpha must be nonzero".into());
                }
            }
            TaskConfig::MatrixLab { dim_d, draws } => {
                if *dim_d == 0 || *draws == 0 {
                    return Err("dim_d and draws must be positive".into());
                }
            }
        }
        Ok(())
    }
}
