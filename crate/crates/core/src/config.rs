//! Central tolerance configuration. Every threshold used by the toolkit
//! flows from one [`Tolerances`] value so that experiments can tighten or
//! relax the whole pipeline coherently.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Residual bound on `‖MᵀJM − J‖_∞` for symplecticity checks.
    pub symplectic_tol: f64,
    /// Residual bound for antisymplectic-involution membership.
    pub involution_tol: f64,
    /// Minimal pairwise eigenvalue distance below which a matrix is
    /// reported as having a double eigenvalue.
    pub gap_tol: f64,
    /// Distance to a root of unity below which an eigenvalue is flagged.
    pub root_tol: f64,
    /// Root-of-unity detection horizon (orders 1..=k_max are scanned).
    pub k_max: usize,
    /// Newton residual target for implicit solves.
    pub newton_tol: f64,
    /// Maximum Newton iterations before declaring divergence.
    pub newton_max_iter: usize,
    /// `‖∂_pH‖` below this marks a point as lying on the critical graph Γ.
    pub gamma_tol: f64,
    /// Threshold on `g(t) = ‖∂_pH‖²` local minima for Γ-return events.
    pub gamma_event_tol: f64,
    /// Relative energy drift allowed along an integrated orbit segment.
    pub energy_drift_tol: f64,
    /// Relative local error tolerance of the adaptive integrator.
    pub integrator_tol: f64,
    /// Smallest singular value for a chord to count as transverse.
    pub transv_tol: f64,
    /// Velocity-norm floor excluding fixed points from chord search.
    pub velocity_floor: f64,
    /// Samples per period when scanning projected orbits.
    pub orbit_scan_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symplectic_tol: 1e-9,
            involution_tol: 1e-9,
            gap_tol: 1e-7,
            root_tol: 1e-8,
            k_max: 12,
            newton_tol: 1e-11,
            newton_max_iter: 60,
            gamma_tol: 1e-6,
            gamma_event_tol: 1e-10,
            energy_drift_tol: 1e-8,
            integrator_tol: 1e-11,
            transv_tol: 1e-6,
            velocity_floor: 1e-8,
            orbit_scan_points: 2000,
        }
    }
}
