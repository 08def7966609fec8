//! Hamiltonian system model on flat phase space: oracles with analytic
//! derivatives, potential perturbations `H + u`, flow and variational-flow
//! integration, and derivatives with respect to the potential.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode;

/// Point of the phase space `ℝⁿ × ℝⁿ` (configuration, momentum).
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension(format!(
                "q has length {}, p has length {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite phase point entries".into()));
        }
        Ok(Self { q, p })
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(q),
            DVector::from_column_slice(p),
        )
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Stack into a single vector `(q, p)` of length 2n.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.n();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.q);
        v.rows_mut(n, n).copy_from(&self.p);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 2 != 0 {
            return Err(Error::Dimension("phase vector length must be even".into()));
        }
        let n = v.len() / 2;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }
}

/// Second-derivative blocks of H at a phase point. The mixed block uses
/// the convention `qp[(i, j)] = ∂²H/∂qᵢ∂pⱼ`.
#[derive(Debug, Clone)]
pub struct HessBlocks {
    pub qq: DMatrix<f64>,
    pub qp: DMatrix<f64>,
    pub pp: DMatrix<f64>,
}

/// Hamiltonian oracle with analytic first and second derivatives.
/// Implementations must be reentrant; the fiberwise Hessian `∂²_pp H`
/// must be positive definite everywhere the flow visits.
pub trait Hamiltonian: Sync {
    fn n(&self) -> usize;
    fn eval(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64;
    /// `(∂_q H, ∂_p H)`.
    fn grad(&self, q: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    fn hess(&self, q: &DVector<f64>, p: &DVector<f64>) -> HessBlocks;
}

/// Configuration-space potential with analytic derivatives.
pub trait PotentialFn: Sync {
    fn eval(&self, q: &DVector<f64>) -> f64;
    fn grad(&self, q: &DVector<f64>) -> DVector<f64>;
    fn hess(&self, q: &DVector<f64>) -> DMatrix<f64>;
}

pub struct ZeroPotential;

impl PotentialFn for ZeroPotential {
    fn eval(&self, _q: &DVector<f64>) -> f64 {
        0.0
    }
    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(q.len())
    }
    fn hess(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(q.len(), q.len())
    }
}

pub struct ConstantPotential(pub f64);

impl PotentialFn for ConstantPotential {
    fn eval(&self, _q: &DVector<f64>) -> f64 {
        self.0
    }
    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(q.len())
    }
    fn hess(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(q.len(), q.len())
    }
}

/// Smooth compactly supported bump
/// `A · exp(1/(s − 1))` with `s = |q − c|²/w²`, zero for `s ≥ 1`.
pub struct BumpPotential {
    pub center: DVector<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl BumpPotential {
    pub fn new(center: DVector<f64>, width: f64, amplitude: f64) -> Result<Self> {
        if width <= 0.0 {
            return Err(Error::InvalidInput("bump width must be positive".into()));
        }
        Ok(Self {
            center,
            width,
            amplitude,
        })
    }

    fn s(&self, q: &DVector<f64>) -> f64 {
        (q - &self.center).norm_squared() / (self.width * self.width)
    }
}

impl PotentialFn for BumpPotential {
    fn eval(&self, q: &DVector<f64>) -> f64 {
        let s = self.s(q);
        if s >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 / (s - 1.0)).exp()
        }
    }

    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        let s = self.s(q);
        if s >= 1.0 {
            return DVector::zeros(q.len());
        }
        let f = (1.0 / (s - 1.0)).exp();
        let fp = -f / ((s - 1.0) * (s - 1.0));
        let ds = 2.0 / (self.width * self.width) * (q - &self.center);
        self.amplitude * fp * ds
    }

    fn hess(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let s = self.s(q);
        if s >= 1.0 {
            return DMatrix::zeros(n, n);
        }
        let m = s - 1.0;
        let f = (1.0 / m).exp();
        let fp = -f / (m * m);
        let fpp = f / (m * m * m * m) + 2.0 * f / (m * m * m);
        let w2 = self.width * self.width;
        let ds = 2.0 / w2 * (q - &self.center);
        self.amplitude * (fpp * &ds * ds.transpose() + fp * (2.0 / w2) * DMatrix::identity(n, n))
    }
}

/// `base + eps · bump`, for potential perturbations.
pub struct PerturbedPotential<'a> {
    pub base: &'a dyn PotentialFn,
    pub bump: &'a dyn PotentialFn,
    pub eps: f64,
}

impl PotentialFn for PerturbedPotential<'_> {
    fn eval(&self, q: &DVector<f64>) -> f64 {
        self.base.eval(q) + self.eps * self.bump.eval(q)
    }
    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        self.base.grad(q) + self.eps * self.bump.grad(q)
    }
    fn hess(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.base.hess(q) + self.eps * self.bump.hess(q)
    }
}

/// Built-in Hamiltonian systems, loadable from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinSystem {
    /// `H = ½|p|² + (q₁² − 1)² + ½ω²q₂² + ε q₁²q₂²` (n = 2, reversible).
    DoubleWell { omega: f64, eps: f64 },
    /// `H = ½|p − A(q)|² + ½|q|²`, `A(q) = β(−q₂, q₁)` (n = 2, magnetic).
    Magnetic { beta: f64 },
    /// `H = ½p² − cos q` (n = 1).
    Pendulum,
    /// `H = ½|p|² + (ε/3)p₁³ + ½|q|²` (n = 2, non-mechanical: the scale
    /// of the fiberwise symmetry is not constant). Convex for `|p₁| < 1/(2ε)`.
    CubicMomentum { eps: f64 },
    /// `H = ½|p|² + ½Σωᵢ²qᵢ²`.
    Harmonic { omegas: Vec<f64> },
}

impl BuiltinSystem {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinSystem::DoubleWell { .. } => "double_well",
            BuiltinSystem::Magnetic { .. } => "magnetic",
            BuiltinSystem::Pendulum => "pendulum",
            BuiltinSystem::CubicMomentum { .. } => "cubic_momentum",
            BuiltinSystem::Harmonic { .. } => "harmonic",
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("system config: {e}")))
    }

    /// Vector potential of the magnetic system, `A(q) = β(−q₂, q₁)`.
    pub fn magnetic_vector_potential(beta: f64, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![-beta * q[1], beta * q[0]])
    }
}

impl Hamiltonian for BuiltinSystem {
    fn n(&self) -> usize {
        match self {
            BuiltinSystem::DoubleWell { .. }
            | BuiltinSystem::Magnetic { .. }
            | BuiltinSystem::CubicMomentum { .. } => 2,
            BuiltinSystem::Pendulum => 1,
            BuiltinSystem::Harmonic { omegas } => omegas.len(),
        }
    }

    fn eval(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        match self {
            BuiltinSystem::DoubleWell { omega, eps } => {
                let v = (q[0] * q[0] - 1.0).powi(2)
                    + 0.5 * omega * omega * q[1] * q[1]
                    + eps * q[0] * q[0] * q[1] * q[1];
                0.5 * p.norm_squared() + v
            }
            BuiltinSystem::Magnetic { beta } => {
                let a = Self::magnetic_vector_potential(*beta, q);
                0.5 * (p - a).norm_squared() + 0.5 * q.norm_squared()
            }
            BuiltinSystem::Pendulum => 0.5 * p[0] * p[0] - q[0].cos(),
            BuiltinSystem::CubicMomentum { eps } => {
                0.5 * p.norm_squared() + eps / 3.0 * p[0].powi(3) + 0.5 * q.norm_squared()
            }
            BuiltinSystem::Harmonic { omegas } => {
                let mut v = 0.0;
                for (i, w) in omegas.iter().enumerate() {
                    v += 0.5 * w * w * q[i] * q[i];
                }
                0.5 * p.norm_squared() + v
            }
        }
    }

    fn grad(&self, q: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            BuiltinSystem::DoubleWell { omega, eps } => {
                let gq = DVector::from_vec(vec![
                    4.0 * q[0] * (q[0] * q[0] - 1.0) + 2.0 * eps * q[0] * q[1] * q[1],
                    omega * omega * q[1] + 2.0 * eps * q[0] * q[0] * q[1],
                ]);
                (gq, p.clone())
            }
            BuiltinSystem::Magnetic { beta } => {
                let a = Self::magnetic_vector_potential(*beta, q);
                let pa = p - &a;
                // ∂_q = −dAᵀ(p − A) + q, dA = [[0, −β], [β, 0]]
                let gq = DVector::from_vec(vec![
                    -beta * pa[1] + q[0],
                    beta * pa[0] + q[1],
                ]);
                (gq, pa)
            }
            BuiltinSystem::Pendulum => (
                DVector::from_vec(vec![q[0].sin()]),
                DVector::from_vec(vec![p[0]]),
            ),
            BuiltinSystem::CubicMomentum { eps } => {
                let mut gp = p.clone();
                gp[0] += eps * p[0] * p[0];
                (q.clone(), gp)
            }
            BuiltinSystem::Harmonic { omegas } => {
                let gq = DVector::from_fn(q.len(), |i, _| omegas[i] * omegas[i] * q[i]);
                (gq, p.clone())
            }
        }
    }

    fn hess(&self, q: &DVector<f64>, p: &DVector<f64>) -> HessBlocks {
        let n = self.n();
        match self {
            BuiltinSystem::DoubleWell { omega, eps } => {
                let mut qq = DMatrix::zeros(2, 2);
                qq[(0, 0)] = 12.0 * q[0] * q[0] - 4.0 + 2.0 * eps * q[1] * q[1];
                qq[(0, 1)] = 4.0 * eps * q[0] * q[1];
                qq[(1, 0)] = qq[(0, 1)];
                qq[(1, 1)] = omega * omega + 2.0 * eps * q[0] * q[0];
                HessBlocks {
                    qq,
                    qp: DMatrix::zeros(2, 2),
                    pp: DMatrix::identity(2, 2),
                }
            }
            BuiltinSystem::Magnetic { beta } => {
                let b2 = beta * beta;
                // qq = dAᵀdA + I, qp[(i,j)] = −∂Aⱼ/∂qᵢ
                let qq = DMatrix::from_diagonal_element(2, 2, 1.0 + b2);
                let qp = DMatrix::from_row_slice(2, 2, &[0.0, -beta, *beta, 0.0]);
                HessBlocks {
                    qq,
                    qp,
                    pp: DMatrix::identity(2, 2),
                }
            }
            BuiltinSystem::Pendulum => HessBlocks {
                qq: DMatrix::from_element(1, 1, q[0].cos()),
                qp: DMatrix::zeros(1, 1),
                pp: DMatrix::identity(1, 1),
            },
            BuiltinSystem::CubicMomentum { eps } => {
                let mut pp = DMatrix::identity(2, 2);
                pp[(0, 0)] += 2.0 * eps * p[0];
                HessBlocks {
                    qq: DMatrix::identity(2, 2),
                    qp: DMatrix::zeros(2, 2),
                    pp,
                }
            }
            BuiltinSystem::Harmonic { omegas } => HessBlocks {
                qq: DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        omegas[i] * omegas[i]
                    } else {
                        0.0
                    }
                }),
                qp: DMatrix::zeros(n, n),
                pp: DMatrix::identity(n, n),
            },
        }
    }
}

/// Abort with a convexity error if `∂²_pp H` is not positive definite.
pub fn check_fiber_convexity(h: &dyn Hamiltonian, q: &DVector<f64>, p: &DVector<f64>) -> Result<()> {
    let pp = h.hess(q, p).pp;
    if pp.clone().cholesky().is_none() {
        return Err(Error::Convexity(format!(
            "fiberwise Hessian not positive definite at q = {:?}",
            q.as_slice()
        )));
    }
    Ok(())
}

/// Value of `H + u` at a phase point.
pub fn total_energy(h: &dyn Hamiltonian, u: &dyn PotentialFn, x: &PhasePoint) -> f64 {
    h.eval(&x.q, &x.p) + u.eval(&x.q)
}

/// Hamiltonian vector field of `H + u`: `(∂_pH, −∂_qH − ∇u)`, with the
/// fiberwise-convexity guard applied.
pub fn vector_field(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x: &PhasePoint,
) -> Result<DVector<f64>> {
    check_fiber_convexity(h, &x.q, &x.p)?;
    let n = x.n();
    let (gq, gp) = h.grad(&x.q, &x.p);
    let gu = u.grad(&x.q);
    let mut v = DVector::zeros(2 * n);
    v.rows_mut(0, n).copy_from(&gp);
    v.rows_mut(n, n).copy_from(&(-(gq + gu)));
    Ok(v)
}

fn rhs(h: &dyn Hamiltonian, u: &dyn PotentialFn, z: &DVector<f64>) -> Result<DVector<f64>> {
    vector_field(h, u, &PhasePoint::from_vector(z)?)
}

/// Linearization of the vector field of `H + u` at x:
/// `[[∂²_qpHᵀ, ∂²_ppH], [−(∂²_qqH + ∇²u), −∂²_qpH]]`.
pub fn vector_field_jacobian(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x: &PhasePoint,
) -> DMatrix<f64> {
    let n = x.n();
    let hb = h.hess(&x.q, &x.p);
    let uh = u.hess(&x.q);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&hb.qp.transpose());
    m.view_mut((0, n), (n, n)).copy_from(&hb.pp);
    m.view_mut((n, 0), (n, n)).copy_from(&(-(&hb.qq + uh)));
    m.view_mut((n, n), (n, n)).copy_from(&(-&hb.qp));
    m
}

/// Dense-output trajectory of `H + u` with monitored energy drift.
pub struct OrbitSegment {
    n: usize,
    sol: ode::Solution,
    energy: f64,
    max_drift: f64,
}

impl OrbitSegment {
    pub fn t_start(&self) -> f64 {
        self.sol.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn state(&self, t: f64) -> PhasePoint {
        PhasePoint::from_vector(&self.sol.eval(t)).expect("stored states are valid")
    }

    /// Energy `H + u` at the initial point.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Maximal relative energy drift observed on the sampling grid.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn measure_drift(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    sol: &ode::Solution,
    n: usize,
    energy: f64,
) -> f64 {
    let (t0, t1) = (sol.t_start(), sol.t_end());
    let scale = energy.abs().max(1.0);
    let mut worst: f64 = 0.0;
    let samples = 64;
    for i in 0..=samples {
        let t = t0 + (t1 - t0) * i as f64 / samples as f64;
        let z = sol.eval(t);
        let x = PhasePoint::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
            .expect("finite trajectory state");
        worst = worst.max((total_energy(h, u, &x) - energy).abs() / scale);
    }
    worst
}

/// Integrate the flow of `H + u` from `x0` over `[0, t]` (t may be
/// negative). Fails on blow-up or on energy drift beyond `drift_tol`.
pub fn flow(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x0: &PhasePoint,
    t: f64,
    tol: f64,
    drift_tol: f64,
) -> Result<OrbitSegment> {
    let n = x0.n();
    if n != h.n() {
        return Err(Error::Dimension("phase point does not match system dimension".into()));
    }
    let energy = total_energy(h, u, x0);
    let sol = ode::integrate(|_t, z| rhs(h, u, z), &x0.to_vector(), 0.0, t, tol)?;
    let max_drift = measure_drift(h, u, &sol, n, energy);
    if max_drift > drift_tol {
        return Err(Error::Numerical(format!(
            "energy drift {max_drift:.3e} exceeds tolerance {drift_tol:.3e}"
        )));
    }
    Ok(OrbitSegment {
        n,
        sol,
        energy,
        max_drift,
    })
}

/// Trajectory together with the linearized flow, integrated as one
/// augmented `2n + 4n²` system so both share the step sequence.
pub struct VariationalSegment {
    n: usize,
    sol: ode::Solution,
    energy: f64,
    max_drift: f64,
}

impl VariationalSegment {
    pub fn t_start(&self) -> f64 {
        self.sol.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn state(&self, t: f64) -> PhasePoint {
        let z = self.sol.eval(t);
        let n = self.n;
        PhasePoint::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
            .expect("finite trajectory state")
    }

    /// `∂ₓφ(t)`, the fundamental solution of the linearized equation.
    pub fn dphi(&self, t: f64) -> DMatrix<f64> {
        let z = self.sol.eval(t);
        let n2 = 2 * self.n;
        let mut m = DMatrix::zeros(n2, n2);
        for col in 0..n2 {
            for row in 0..n2 {
                m[(row, col)] = z[n2 + col * n2 + row];
            }
        }
        m
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Integrate the flow and the variational equation over `[0, t]`.
pub fn variational_flow(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x0: &PhasePoint,
    t: f64,
    tol: f64,
    drift_tol: f64,
) -> Result<VariationalSegment> {
    let n = x0.n();
    if n != h.n() {
        return Err(Error::Dimension("phase point does not match system dimension".into()));
    }
    let n2 = 2 * n;
    let energy = total_energy(h, u, x0);
    let mut z0 = DVector::zeros(n2 + n2 * n2);
    z0.rows_mut(0, n2).copy_from(&x0.to_vector());
    for i in 0..n2 {
        z0[n2 + i * n2 + i] = 1.0;
    }
    let f = |_t: f64, z: &DVector<f64>| -> Result<DVector<f64>> {
        let x = PhasePoint::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())?;
        let v = vector_field(h, u, &x)?;
        let dv = vector_field_jacobian(h, u, &x);
        let mut out = DVector::zeros(n2 + n2 * n2);
        out.rows_mut(0, n2).copy_from(&v);
        for col in 0..n2 {
            let phi_col = z.rows(n2 + col * n2, n2);
            let d = &dv * phi_col;
            out.rows_mut(n2 + col * n2, n2).copy_from(&d);
        }
        Ok(out)
    };
    let sol = ode::integrate(f, &z0, 0.0, t, tol)?;
    // drift measured on the base trajectory only
    let base_energy_drift = {
        let scale = energy.abs().max(1.0);
        let mut worst: f64 = 0.0;
        for i in 0..=64 {
            let tt = t * i as f64 / 64.0;
            let z = sol.eval(tt);
            let x = PhasePoint::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())?;
            worst = worst.max((total_energy(h, u, &x) - energy).abs() / scale);
        }
        worst
    };
    if base_energy_drift > drift_tol {
        return Err(Error::Numerical(format!(
            "energy drift {base_energy_drift:.3e} exceeds tolerance {drift_tol:.3e}"
        )));
    }
    Ok(VariationalSegment {
        n,
        sol,
        energy,
        max_drift: base_energy_drift,
    })
}

/// Directional derivative `∂_u φ(t, x0) · v` by Richardson-extrapolated
/// central differences over the given step sizes (largest first).
/// Returns the extrapolated value and an error estimate; `converged` is
/// false when the extrapolation table does not contract.
pub struct DirectionalDerivative {
    pub value: DVector<f64>,
    pub error_estimate: f64,
    pub converged: bool,
}

pub fn directional_derivative_in_u(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    v: &dyn PotentialFn,
    x0: &PhasePoint,
    t: f64,
    eps_list: &[f64],
    tol: f64,
) -> Result<DirectionalDerivative> {
    if eps_list.is_empty() {
        return Err(Error::InvalidInput("empty step-size list".into()));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut diffs: Vec<DVector<f64>> = Vec::new();
    for &e in &eps {
        let up = PerturbedPotential { base: u, bump: v, eps: e };
        let um = PerturbedPotential { base: u, bump: v, eps: -e };
        let fp = flow(h, &up, x0, t, tol, 1e-5)?;
        let fm = flow(h, &um, x0, t, tol, 1e-5)?;
        diffs.push((fp.state(t).to_vector() - fm.state(t).to_vector()) / (2.0 * e));
    }
    // Neville table in ε² (central differences have even error expansion)
    let m = diffs.len();
    let mut table = diffs.clone();
    let mut last_best = table[m - 1].clone();
    let mut prev_best: Option<DVector<f64>> = None;
    for k in 1..m {
        let mut next = Vec::with_capacity(m - k);
        for i in 0..m - k {
            let r = (eps[i] / eps[i + k]).powi(2);
            next.push((r * &table[i + 1] - &table[i]) / (r - 1.0));
        }
        prev_best = Some(last_best.clone());
        last_best = next[next.len() - 1].clone();
        table = next;
    }
    let error_estimate = match &prev_best {
        Some(pb) => (&last_best - pb).norm(),
        None => f64::INFINITY,
    };
    let converged = m >= 2
        && error_estimate <= 1e-4 * last_best.norm().max(1.0);
    Ok(DirectionalDerivative {
        value: last_best,
        error_estimate,
        converged,
    })
}

/// Continuity report for a solution family re-solved under `u + εv`.
#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub eps: Vec<f64>,
    pub displacement: Vec<f64>,
    /// Slope of the through-origin fit `displacement ≈ C·ε`.
    pub fitted_c: f64,
    /// True when the displacements are compatible with an O(ε) law.
    pub continuous: bool,
}

/// Generic parameter-continuity check: `solve(ε)` must re-solve the
/// underlying equation with the potential perturbed by `εv` and return
/// the solution as a vector. Verifies `|x(ε) − x(0)| = O(ε)`.
pub fn check_parameter_continuity<F>(solve: F, eps_list: &[f64]) -> Result<ContinuityReport>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    if eps_list.is_empty() {
        return Err(Error::InvalidInput("empty eps list".into()));
    }
    let base = solve(0.0)?;
    let mut eps = eps_list.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut displacement = Vec::with_capacity(eps.len());
    for &e in &eps {
        let x = solve(e)?;
        if x.len() != base.len() {
            return Err(Error::Dimension("solver returned inconsistent dimensions".into()));
        }
        displacement.push((x - &base).norm());
    }
    // least-squares slope through the origin
    let num: f64 = eps.iter().zip(&displacement).map(|(e, d)| e * d).sum();
    let den: f64 = eps.iter().map(|e| e * e).sum();
    let fitted_c = num / den;
    let continuous = eps
        .iter()
        .zip(&displacement)
        .all(|(e, d)| *d <= 2.0 * fitted_c * e + 1e-9);
    Ok(ContinuityReport {
        eps,
        displacement,
        fitted_c,
        continuous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::sympmat;

    fn harmonic1() -> BuiltinSystem {
        BuiltinSystem::Harmonic { omegas: vec![1.0] }
    }

    #[test]
    fn free_motion_vector_field() {
        let h = BuiltinSystem::Harmonic { omegas: vec![0.0, 0.0] };
        let x = PhasePoint::from_slices(&[1.0, 2.0], &[3.0, -1.0]).unwrap();
        let v = vector_field(&h, &ZeroPotential, &x).unwrap();
        assert_eq!(v.as_slice(), &[3.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rest_point_field_is_minus_grad_v() {
        let h = BuiltinSystem::DoubleWell { omega: 1.0, eps: 0.0 };
        let x = PhasePoint::from_slices(&[0.5, 0.3], &[0.0, 0.0]).unwrap();
        let v = vector_field(&h, &ZeroPotential, &x).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
        assert_abs_diff_eq!(v[2], -4.0 * 0.5 * (0.25 - 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(v[3], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn gamma_point_has_zero_q_velocity() {
        // magnetic system: ∂_pH = 0 at p = A(q)
        let h = BuiltinSystem::Magnetic { beta: 0.7 };
        let q = DVector::from_vec(vec![0.4, -0.2]);
        let a = BuiltinSystem::magnetic_vector_potential(0.7, &q);
        let x = PhasePoint::new(q, a).unwrap();
        let v = vector_field(&h, &ZeroPotential, &x).unwrap();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn harmonic_period_and_time_zero() {
        let h = harmonic1();
        let x0 = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let seg = flow(&h, &ZeroPotential, &x0, 2.0 * std::f64::consts::PI, 1e-12, 1e-8).unwrap();
        let back = seg.state(seg.t_end());
        assert_abs_diff_eq!(back.q[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(back.p[0], 0.0, epsilon = 1e-8);
        assert_eq!(seg.state(0.0), x0);
    }

    #[test]
    fn double_well_energy_conservation_long_run() {
        let h = BuiltinSystem::DoubleWell { omega: 1.3, eps: 0.1 };
        let x0 = PhasePoint::from_slices(&[0.0, 0.1], &[0.3, 0.0]).unwrap();
        let seg = flow(&h, &ZeroPotential, &x0, 50.0, 1e-12, 1e-9).unwrap();
        assert!(seg.max_drift() <= 1e-9);
    }

    #[test]
    fn flow_group_law() {
        let h = BuiltinSystem::DoubleWell { omega: 1.0, eps: 0.2 };
        let x0 = PhasePoint::from_slices(&[0.2, -0.1], &[0.5, 0.4]).unwrap();
        let s = 1.3;
        let t = 2.1;
        let whole = flow(&h, &ZeroPotential, &x0, s + t, 1e-12, 1e-7).unwrap();
        let first = flow(&h, &ZeroPotential, &x0, s, 1e-12, 1e-7).unwrap();
        let mid = first.state(s);
        let second = flow(&h, &ZeroPotential, &mid, t, 1e-12, 1e-7).unwrap();
        let a = whole.state(s + t).to_vector();
        let b = second.state(t).to_vector();
        assert!((a - b).norm() <= 1e-7);
    }

    #[test]
    fn variational_flow_identity_and_rotation() {
        let h = harmonic1();
        let x0 = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let seg = variational_flow(&h, &ZeroPotential, &x0, std::f64::consts::FRAC_PI_2, 1e-12, 1e-8)
            .unwrap();
        let id = seg.dphi(0.0);
        assert!((id - DMatrix::identity(2, 2)).amax() <= 1e-12);
        // fundamental matrix of q'' = −q at t = π/2: [[cos, sin], [−sin, cos]]
        let m = seg.dphi(std::f64::consts::FRAC_PI_2);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((m - expected).amax() <= 1e-8);
    }

    #[test]
    fn variational_flow_is_symplectic() {
        let h = BuiltinSystem::Magnetic { beta: 0.5 };
        let x0 = PhasePoint::from_slices(&[0.7, -0.3], &[0.1, 0.9]).unwrap();
        let seg = variational_flow(&h, &ZeroPotential, &x0, 3.0, 1e-12, 1e-7).unwrap();
        for &t in &[0.5, 1.5, 3.0] {
            let m = seg.dphi(t);
            assert!(sympmat::symplectic_residual(&m).unwrap() <= 1e-7, "t = {t}");
        }
    }

    #[test]
    fn convexity_guard_fires() {
        let h = BuiltinSystem::CubicMomentum { eps: 1.0 };
        // 1 + 2εp₁ < 0 at p₁ = −1
        let x = PhasePoint::from_slices(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!(matches!(
            vector_field(&h, &ZeroPotential, &x),
            Err(Error::Convexity(_))
        ));
    }

    #[test]
    fn directional_derivative_trivial_cases() {
        let h = harmonic1();
        let x0 = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let zero = ZeroPotential;
        let dd = directional_derivative_in_u(&h, &zero, &zero, &x0, 1.0, &[1e-2, 5e-3], 1e-11)
            .unwrap();
        assert!(dd.value.norm() <= 1e-12);
        let bump = BumpPotential::new(DVector::from_vec(vec![0.0]), 0.5, 1.0).unwrap();
        let dd0 = directional_derivative_in_u(&h, &zero, &bump, &x0, 0.0, &[1e-2, 5e-3], 1e-11)
            .unwrap();
        assert!(dd0.value.norm() <= 1e-12);
    }

    #[test]
    fn directional_derivative_matches_variational_for_linear_shift() {
        // for v(q) = q (linear), the perturbed field gains a constant forcing
        // −ε in p'; closed form at the harmonic oscillator:
        // ∂_u φ(t)·v = ∫₀ᵗ Dφ(t−s)·(0, −1) ds = (cos t − 1, −sin t)
        struct LinearV;
        impl PotentialFn for LinearV {
            fn eval(&self, q: &DVector<f64>) -> f64 {
                q[0]
            }
            fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(q.len(), 1.0)
            }
            fn hess(&self, q: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(q.len(), q.len())
            }
        }
        let h = harmonic1();
        let x0 = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let t = 1.7;
        let dd = directional_derivative_in_u(
            &h,
            &ZeroPotential,
            &LinearV,
            &x0,
            t,
            &[1e-1, 5e-2, 2.5e-2],
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(dd.value[0], t.cos() - 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(dd.value[1], -t.sin(), epsilon = 1e-7);
        assert!(dd.converged);
    }

    #[test]
    fn continuity_report_linear_family() {
        // synthetic solver: x(ε) = (1 + 3ε, 2)
        let solve = |e: f64| Ok(DVector::from_vec(vec![1.0 + 3.0 * e, 2.0]));
        let rep = check_parameter_continuity(solve, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!(rep.continuous);
        assert_abs_diff_eq!(rep.fitted_c, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn continuity_far_bump_does_not_move_solution() {
        let solve = |_e: f64| Ok(DVector::from_vec(vec![1.0, 2.0]));
        let rep = check_parameter_continuity(solve, &[1e-2, 1e-3]).unwrap();
        assert!(rep.continuous);
        assert!(rep.displacement.iter().all(|d| *d <= 1e-9));
    }

    #[test]
    fn bump_potential_derivatives_consistent() {
        let bump = BumpPotential::new(DVector::from_vec(vec![0.3, -0.2]), 0.8, 2.0).unwrap();
        let q = DVector::from_vec(vec![0.5, 0.1]);
        let e = 1e-5;
        let g = bump.grad(&q);
        let hm = bump.hess(&q);
        for i in 0..2 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += e;
            qm[i] -= e;
            let fd = (bump.eval(&qp) - bump.eval(&qm)) / (2.0 * e);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-7);
            let gfd = (bump.grad(&qp) - bump.grad(&qm)) / (2.0 * e);
            for j in 0..2 {
                assert_abs_diff_eq!(gfd[j], hm[(j, i)], epsilon = 1e-6);
            }
        }
        // compact support
        let far = DVector::from_vec(vec![5.0, 5.0]);
        assert_eq!(bump.eval(&far), 0.0);
        assert_eq!(bump.grad(&far).norm(), 0.0);
    }

    #[test]
    fn builtin_gradients_match_finite_differences() {
        let systems: Vec<BuiltinSystem> = vec![
            BuiltinSystem::DoubleWell { omega: 1.2, eps: 0.3 },
            BuiltinSystem::Magnetic { beta: 0.6 },
            BuiltinSystem::Pendulum,
            BuiltinSystem::CubicMomentum { eps: 0.2 },
            BuiltinSystem::Harmonic { omegas: vec![1.0, 2.0_f64.sqrt()] },
        ];
        let e = 1e-6;
        for h in &systems {
            let n = h.n();
            let q = DVector::from_fn(n, |i, _| 0.3 + 0.1 * i as f64);
            let p = DVector::from_fn(n, |i, _| -0.2 + 0.15 * i as f64);
            let (gq, gp) = h.grad(&q, &p);
            let hb = h.hess(&q, &p);
            for i in 0..n {
                let mut qp_ = q.clone();
                let mut qm = q.clone();
                qp_[i] += e;
                qm[i] -= e;
                let fd = (h.eval(&qp_, &p) - h.eval(&qm, &p)) / (2.0 * e);
                assert_abs_diff_eq!(fd, gq[i], epsilon = 1e-6);
                let (gq2, gp2) = h.grad(&qp_, &p);
                let (gq1, gp1) = h.grad(&qm, &p);
                for j in 0..n {
                    assert_abs_diff_eq!((gq2[j] - gq1[j]) / (2.0 * e), hb.qq[(j, i)], epsilon = 1e-5);
                    // qp[(i, j)] = ∂²H/∂qᵢ∂pⱼ
                    assert_abs_diff_eq!((gp2[j] - gp1[j]) / (2.0 * e), hb.qp[(i, j)], epsilon = 1e-5);
                }
                let mut pp_ = p.clone();
                let mut pm = p.clone();
                pp_[i] += e;
                pm[i] -= e;
                let fdp = (h.eval(&q, &pp_) - h.eval(&q, &pm)) / (2.0 * e);
                assert_abs_diff_eq!(fdp, gp[i], epsilon = 1e-6);
                let (_, gpp2) = h.grad(&q, &pp_);
                let (_, gpp1) = h.grad(&q, &pm);
                for j in 0..n {
                    assert_abs_diff_eq!(
                        (gpp2[j] - gpp1[j]) / (2.0 * e),
                        hb.pp[(j, i)],
                        epsilon = 1e-5
                    );
                }
            }
        }
    }

    #[test]
    fn system_config_parsing() {
        let s = BuiltinSystem::from_toml("kind = \"double_well\"\nomega = 1.5\neps = 0.1\n").unwrap();
        assert_eq!(s.name(), "double_well");
        let m = BuiltinSystem::from_toml("kind = \"magnetic\"\nbeta = 0.4\n").unwrap();
        assert_eq!(m.name(), "magnetic");
        assert!(BuiltinSystem::from_toml("kind = \"unknown\"").is_err());
    }
}
