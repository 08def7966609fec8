//! Reduced dynamics on energy sections: transverse section frames, the
//! reduced Hamiltonian κ, transition maps, the reduced return map, the
//! reduced symmetry and its reversibility certificates, and the
//! linearized response of section traces to potential perturbations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::hamsys::{
    flow, total_energy, vector_field, Hamiltonian, PerturbedPotential, PhasePoint, PotentialFn,
};
use crate::orbits::{orthonormal_complement, PeriodicOrbit, TimeSymmetry};
use crate::symmetry;
use crate::sympmat::standard_j;

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// A transverse hyperplane section through `anchor`, with orthonormal
/// configuration frame whose first axis is the velocity direction there.
/// Frame coordinates are `q̄ = Oᵀq`, `p̄ = Oᵀp`; the section coordinate is
/// `r = q̄₀` and the transverse coordinates are `x_* = (q̄_*, p̄_*)`.
pub struct SectionFrame {
    pub anchor: PhasePoint,
    /// Pinned value of `H + u` on the section.
    pub energy: f64,
    rot: DMatrix<f64>,
}

impl SectionFrame {
    /// Construct the frame at `anchor`. Fails with `SectionInvalid` when
    /// the velocity vanishes there (points of Γ admit no such frame).
    pub fn build_section(
        h: &dyn Hamiltonian,
        u: &dyn PotentialFn,
        anchor: &PhasePoint,
        tols: &Tolerances,
    ) -> Result<Self> {
        let n = h.n();
        let (_, gp) = h.grad(&anchor.q, &anchor.p);
        if gp.norm() < tols.velocity_floor {
            return Err(Error::SectionInvalid(
                "velocity vanishes at the anchor (Γ point)".into(),
            ));
        }
        let e0 = gp.normalize();
        let e0_col = DMatrix::from_fn(n, 1, |i, _| e0[i]);
        let rest = orthonormal_complement(&e0_col);
        let mut rot = DMatrix::zeros(n, n);
        rot.set_column(0, &e0);
        for j in 0..n - 1 {
            rot.set_column(j + 1, &rest.column(j).into_owned());
        }
        Ok(SectionFrame {
            energy: total_energy(h, u, anchor),
            anchor: anchor.clone(),
            rot,
        })
    }

    pub fn n(&self) -> usize {
        self.rot.nrows()
    }

    /// Section coordinate `r = e₀ · q`.
    pub fn r_of(&self, q: &DVector<f64>) -> f64 {
        self.rot.column(0).dot(q)
    }

    /// `dr/dt = e₀ · ∂_pH` at a phase point.
    pub fn r_velocity(&self, h: &dyn Hamiltonian, x: &PhasePoint) -> f64 {
        let (_, gp) = h.grad(&x.q, &x.p);
        self.rot.column(0).dot(&gp)
    }

    /// Frame coordinates `(q̄, p̄)` of a phase point.
    pub fn to_frame(&self, x: &PhasePoint) -> (DVector<f64>, DVector<f64>) {
        (self.rot.transpose() * &x.q, self.rot.transpose() * &x.p)
    }

    /// Phase point from frame coordinates.
    pub fn from_frame(&self, qbar: &DVector<f64>, pbar: &DVector<f64>) -> PhasePoint {
        PhasePoint {
            q: &self.rot * qbar,
            p: &self.rot * pbar,
        }
    }

    /// Transverse section coordinates `x_* = (q̄_*, p̄_*) ∈ ℝ^{2d}`.
    pub fn section_coords(&self, x: &PhasePoint) -> DVector<f64> {
        let n = self.n();
        let (qb, pb) = self.to_frame(x);
        let mut z = DVector::zeros(2 * (n - 1));
        for i in 0..n - 1 {
            z[i] = qb[i + 1];
            z[n - 1 + i] = pb[i + 1];
        }
        z
    }

    /// Value, gradient and Hessian of `F = H + u − energy` in frame
    /// coordinates `(q̄, p̄)`, evaluated at a phase point.
    fn f_derivs(
        &self,
        h: &dyn Hamiltonian,
        u: &dyn PotentialFn,
        x: &PhasePoint,
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let value = total_energy(h, u, x) - self.energy;
        let (gq, gp) = h.grad(&x.q, &x.p);
        let gu = u.grad(&x.q);
        let mut grad = DVector::zeros(2 * n);
        let gq_f = self.rot.transpose() * (gq + gu);
        let gp_f = self.rot.transpose() * gp;
        grad.rows_mut(0, n).copy_from(&gq_f);
        grad.rows_mut(n, n).copy_from(&gp_f);
        let hb = h.hess(&x.q, &x.p);
        let hu = u.hess(&x.q);
        let ot = self.rot.transpose();
        let mut hess = DMatrix::zeros(2 * n, 2 * n);
        hess.view_mut((0, 0), (n, n))
            .copy_from(&(&ot * (hb.qq + hu) * &self.rot));
        let qp = &ot * &hb.qp * &self.rot;
        hess.view_mut((0, n), (n, n)).copy_from(&qp);
        hess.view_mut((n, 0), (n, n)).copy_from(&qp.transpose());
        hess.view_mut((n, n), (n, n))
            .copy_from(&(&ot * hb.pp * &self.rot));
        (value, grad, hess)
    }

    /// Reduced Hamiltonian: solve `H + u = energy` for `p̄₀ = −κ` at
    /// section coordinate `r = q0` and transverse coordinates `z`, by
    /// 1-D Newton from `kappa_seed`.
    pub fn kappa(
        &self,
        h: &dyn Hamiltonian,
        u: &dyn PotentialFn,
        q0: f64,
        z: &DVector<f64>,
        kappa_seed: f64,
        tols: &Tolerances,
    ) -> Result<f64> {
        let n = self.n();
        let d = n - 1;
        if z.len() != 2 * d {
            return Err(Error::Dimension("section coordinate size mismatch".into()));
        }
        let point = |kappa: f64| -> PhasePoint {
            let mut qb = DVector::zeros(n);
            let mut pb = DVector::zeros(n);
            qb[0] = q0;
            pb[0] = -kappa;
            for i in 0..d {
                qb[i + 1] = z[i];
                pb[i + 1] = z[d + i];
            }
            self.from_frame(&qb, &pb)
        };
        let mut kappa = kappa_seed;
        for _ in 0..tols.newton_max_iter {
            let x = point(kappa);
            let (f, grad, _) = self.f_derivs(h, u, &x);
            if f.abs() <= tols.newton_tol {
                return Ok(kappa);
            }
            let df = -grad[n]; // dF/dκ = −F_{p̄₀}
            if df.abs() < 1e-14 {
                return Err(Error::SectionInvalid(
                    "κ solve hit a fold of the energy level".into(),
                ));
            }
            kappa -= f / df;
        }
        Err(Error::NewtonDiverged("κ solve did not converge".into()))
    }

    /// Analytic `∂²_{x_*x_*}κ` at an on-level phase point, by implicit
    /// differentiation of `F(q̄₀, z, −κ(z)) = 0`.
    pub fn kappa_hess(
        &self,
        h: &dyn Hamiltonian,
        u: &dyn PotentialFn,
        x: &PhasePoint,
    ) -> Result<DMatrix<f64>> {
        let n = self.n();
        let d = n - 1;
        let (f, grad, hess) = self.f_derivs(h, u, x);
        if f.abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "point is off the energy level by {f:.3e}"
            )));
        }
        let fp0 = grad[n];
        if fp0.abs() < 1e-12 {
            return Err(Error::SectionInvalid(
                "section is tangent to the flow here".into(),
            ));
        }
        // frame index of the k-th transverse coordinate
        let zi = |k: usize| if k < d { 1 + k } else { n + 1 + (k - d) };
        let g: Vec<f64> = (0..2 * d).map(|k| grad[zi(k)] / fp0).collect();
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..2 * d {
            for j in 0..2 * d {
                out[(i, j)] = (hess[(zi(i), zi(j))] - hess[(zi(i), n)] * g[j]
                    - hess[(n, zi(j))] * g[i]
                    + hess[(n, n)] * g[i] * g[j])
                    / fp0;
            }
        }
        Ok(out)
    }

    /// Symplectic lift basis of the section at an on-level point with
    /// nonzero `r`-velocity: columns span `{δ : dF·δ = 0, δq̄₀ = 0}` and
    /// satisfy `SᵀJS = J_{2d}` in the `(q̄_*, p̄_*)` parametrization.
    pub fn section_basis(
        &self,
        h: &dyn Hamiltonian,
        u: &dyn PotentialFn,
        x: &PhasePoint,
    ) -> Result<DMatrix<f64>> {
        let n = self.n();
        let d = n - 1;
        let (_, grad, _) = self.f_derivs(h, u, x);
        let fp0 = grad[n];
        if fp0.abs() < 1e-10 {
            return Err(Error::SectionInvalid(
                "section is tangent to the flow here".into(),
            ));
        }
        let mut s = DMatrix::zeros(2 * n, 2 * d);
        for i in 0..d {
            // δq̄_* = eᵢ, δp̄_* = 0, δp̄₀ from dF·δ = 0
            let mut qb = DVector::zeros(n);
            let mut pb = DVector::zeros(n);
            qb[i + 1] = 1.0;
            pb[0] = -grad[1 + i] / fp0;
            let col = self.from_frame(&qb, &pb);
            s.view_mut((0, i), (n, 1)).copy_from(&col.q);
            s.view_mut((n, i), (n, 1)).copy_from(&col.p);
            // δp̄_* = eᵢ, δq̄ = 0
            let qb = DVector::zeros(n);
            let mut pb = DVector::zeros(n);
            pb[i + 1] = 1.0;
            pb[0] = -grad[n + 1 + i] / fp0;
            let col = self.from_frame(&qb, &pb);
            s.view_mut((0, d + i), (n, 1)).copy_from(&col.q);
            s.view_mut((n, d + i), (n, 1)).copy_from(&col.p);
        }
        Ok(s)
    }
}

/// Darboux basis of the ω-orthogonal complement of
/// `span{V_H, ∇(H + u)}` at a non-equilibrium point: a 2n×2d matrix `S`
/// with `SᵀJS = J_{2d}`, columns Euclidean-orthogonal to both `∇(H+u)`
/// and `V_H`. Works at every point of the level, including points of Γ.
pub fn restricted_section_basis(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x: &PhasePoint,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let n = h.n();
    let d = n - 1;
    let v = vector_field(h, u, x)?;
    if v.norm() < tols.velocity_floor {
        return Err(Error::SectionInvalid(
            "equilibrium point has no restricted section".into(),
        ));
    }
    let (gq, gp) = h.grad(&x.q, &x.p);
    let gu = u.grad(&x.q);
    let mut grad_e = DVector::zeros(2 * n);
    grad_e.rows_mut(0, n).copy_from(&(gq + gu));
    grad_e.rows_mut(n, n).copy_from(&gp);
    let mut span = DMatrix::zeros(2 * n, 2);
    span.set_column(0, &grad_e.normalize());
    span.set_column(1, &v.normalize());
    let w = orthonormal_complement(&span); // 2n×2d
    // symplectic Gram-Schmidt into Darboux pairs
    let j = standard_j(n);
    let omega = |a: &DVector<f64>, b: &DVector<f64>| -> f64 { (a.transpose() * &j * b)[(0, 0)] };
    let mut pool: Vec<DVector<f64>> = (0..2 * d).map(|k| w.column(k).into_owned()).collect();
    let mut q_cols: Vec<DVector<f64>> = Vec::new();
    let mut p_cols: Vec<DVector<f64>> = Vec::new();
    for _ in 0..d {
        let u1 = pool.remove(0).normalize();
        // partner with the largest pairing
        let (mut best, mut best_val) = (0usize, 0.0f64);
        for (k, wv) in pool.iter().enumerate() {
            let val = omega(&u1, wv).abs();
            if val > best_val {
                best_val = val;
                best = k;
            }
        }
        if best_val < 1e-10 {
            return Err(Error::Numerical(
                "restricted section is not symplectic here".into(),
            ));
        }
        let v1 = pool.remove(best);
        let v1 = &v1 / omega(&u1, &v1);
        for wv in pool.iter_mut() {
            let a = omega(&u1, wv);
            let b = omega(&v1, wv);
            *wv = &*wv - a * &v1 + b * &u1;
        }
        q_cols.push(u1);
        p_cols.push(v1);
    }
    let mut s = DMatrix::zeros(2 * n, 2 * d);
    for i in 0..d {
        s.set_column(i, &q_cols[i]);
        s.set_column(d + i, &p_cols[i]);
    }
    Ok(s)
}

/// Express columns lying in `ker d(H+u)` at `x_to` in the basis
/// `[S_to, V_H]` and return the `S_to` coefficient block. The residual of
/// the least-squares fit is checked.
pub fn project_to_section(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x_to: &PhasePoint,
    s_to: &DMatrix<f64>,
    cols: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let two_n = s_to.nrows();
    let k = s_to.ncols();
    let v = vector_field(h, u, x_to)?;
    let mut basis = DMatrix::zeros(two_n, k + 1);
    basis.view_mut((0, 0), (two_n, k)).copy_from(s_to);
    basis.set_column(k, &v);
    let svd = basis.clone().svd(true, true);
    let coeff = svd
        .solve(cols, 1e-13)
        .map_err(|e| Error::Numerical(format!("section projection failed: {e}")))?;
    let residual = op_norm(&(&basis * &coeff - cols));
    if residual > 1e-6 * (1.0 + op_norm(cols)) {
        return Err(Error::Numerical(format!(
            "columns do not lie in the energy shell tangent: residual {residual:.3e}"
        )));
    }
    Ok(coeff.rows(0, k).into_owned())
}

/// Reduced linearized flow from time `s` to time `t` along the orbit, in
/// the restricted section bases at the two endpoints.
pub fn reduced_flow(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    s: f64,
    t: f64,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let s_from = restricted_section_basis(h, u, &orbit.state(s), tols)?;
    let s_to = restricted_section_basis(h, u, &orbit.state(t), tols)?;
    let dphi = orbit.transition(s, t)?;
    project_to_section(h, u, &orbit.state(t), &s_to, &(dphi * s_from))
}

/// Reduced return map over one period, anchored at time `anchor`.
pub fn reduced_return_map(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    anchor: f64,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let x = orbit.state(anchor);
    let s = restricted_section_basis(h, u, &x, tols)?;
    let dphi = orbit.transition(anchor, anchor + orbit.period)?;
    project_to_section(h, u, &x, &s, &(dphi * &s))
}

/// Eigenvalues of the reduced return map.
pub fn return_map_spectrum(m: &DMatrix<f64>) -> Vec<Complex64> {
    let mut eig: Vec<Complex64> = m.complex_eigenvalues().iter().cloned().collect();
    eig.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    eig
}

/// Greedy matching distance between two eigenvalue multisets.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut remaining: Vec<Complex64> = b.to_vec();
    let mut worst = 0.0f64;
    for lam in a {
        if remaining.is_empty() {
            return f64::INFINITY;
        }
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(i, mu)| (i, (lam - mu).norm()))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        worst = worst.max(dist);
        remaining.swap_remove(idx);
    }
    if remaining.is_empty() {
        worst
    } else {
        f64::INFINITY
    }
}

/// One sample of the section-linearized dynamics along a transition.
pub struct TransitionSample {
    pub t: f64,
    pub r: f64,
    /// `dτ/dr = 1 / (e₀ · ∂_pH)`.
    pub tau_prime: f64,
    /// `L = J ∂²κ / τ'` as Hamiltonian blocks (A, B, C).
    pub l_blocks: crate::sympmat::HamiltonianBlockMatrix,
}

/// Fundamental solution of `dΨ/dr = J ∂²_{x_*x_*}κ · Ψ` along a branch of
/// the orbit on which the section coordinate is strictly monotone.
pub struct TransitionMap {
    pub psi: DMatrix<f64>,
    pub r_from: f64,
    pub r_to: f64,
    pub samples: Vec<TransitionSample>,
}

pub fn transition_map(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    frame: &SectionFrame,
    t_from: f64,
    t_to: f64,
    tols: &Tolerances,
) -> Result<TransitionMap> {
    let n = h.n();
    let d = n - 1;
    let r_from = frame.r_of(&orbit.state(t_from).q);
    let r_to = frame.r_of(&orbit.state(t_to).q);
    if t_from == t_to {
        return Ok(TransitionMap {
            psi: DMatrix::identity(2 * d, 2 * d),
            r_from,
            r_to,
            samples: Vec::new(),
        });
    }
    // the branch must cross the moving section transversally throughout
    let checks = 200;
    let mut sign = 0.0f64;
    for i in 0..=checks {
        let t = t_from + (t_to - t_from) * i as f64 / checks as f64;
        let rv = frame.r_velocity(h, &orbit.state(t));
        if rv.abs() < tols.velocity_floor {
            return Err(Error::SectionInvalid(format!(
                "section velocity vanishes at t = {t:.6}"
            )));
        }
        if i == 0 {
            sign = rv.signum();
        } else if rv.signum() != sign {
            return Err(Error::SectionInvalid(
                "section coordinate is not monotone on this branch".into(),
            ));
        }
    }
    let j = standard_j(d);
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = orbit.state(t);
        let kh = frame.kappa_hess(h, u, &x)?;
        let rv = frame.r_velocity(h, &x);
        let coeff = rv * (&j * kh);
        let psi = DMatrix::from_column_slice(2 * d, 2 * d, y.as_slice());
        let dpsi = coeff * psi;
        Ok(DVector::from_column_slice(dpsi.as_slice()))
    };
    let y0 = DVector::from_column_slice(DMatrix::<f64>::identity(2 * d, 2 * d).as_slice());
    let sol = crate::ode::integrate(rhs, &y0, t_from, t_to, tols.integrator_tol.max(1e-12))?;
    let psi = DMatrix::from_column_slice(2 * d, 2 * d, sol.eval(t_to).as_slice());
    let mut samples = Vec::new();
    for i in 0..=32 {
        let t = t_from + (t_to - t_from) * i as f64 / 32.0;
        let x = orbit.state(t);
        let rv = frame.r_velocity(h, &x);
        let kh = frame.kappa_hess(h, u, &x)?;
        let l_mat = rv * (&j * kh); // J∂²κ / τ'
        let l_blocks = crate::sympmat::HamiltonianBlockMatrix::from_matrix(&l_mat, 1e-7)?;
        samples.push(TransitionSample {
            t,
            r: frame.r_of(&x.q),
            tau_prime: 1.0 / rv,
            l_blocks,
        });
    }
    Ok(TransitionMap {
        psi,
        r_from,
        r_to,
        samples,
    })
}

/// Reduced symmetry at time `t` of a round-trip orbit: the projection of
/// `d𝔖` onto the restricted sections at `θ(t)` and `θ(σ(t))`.
pub fn reduced_symmetry(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    sigma: &TimeSymmetry,
    t: f64,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let x = orbit.state(t);
    let x_img = orbit.state(sigma.eval(t));
    let s = restricted_section_basis(h, u, &x, tols)?;
    let s_img = restricted_section_basis(h, u, &x_img, tols)?;
    let ds = symmetry::symmetry_jacobian(h, &x, tols)?;
    project_to_section(h, u, &x_img, &s_img, &(ds * s))
}

/// Reduced symmetry in the coordinates of a fixed section frame via the
/// block formula
/// `ℜ = [[I, 0], [(τ̃'B̃)⁻¹(τ'Cᵀ − τ̃'C̃ᵀ), (τ'/τ̃')B̃⁻¹B]]`,
/// assembled from the section-linearized blocks on the two branches of
/// the round trip crossing the same section.
pub fn reduced_symmetry_blocks(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    frame: &SectionFrame,
    sigma: &TimeSymmetry,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = h.n();
    let d = n - 1;
    let j = standard_j(d);
    let blocks_at = |time: f64| -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
        let x = orbit.state(time);
        let rv = frame.r_velocity(h, &x);
        if rv.abs() < 1e-10 {
            return Err(Error::SectionInvalid(
                "branch is tangent to the section".into(),
            ));
        }
        let kh = frame.kappa_hess(h, u, &x)?;
        let l_mat = rv * (&j * kh);
        let hb = crate::sympmat::HamiltonianBlockMatrix::from_matrix(&l_mat, 1e-7)?;
        // tau' = 1/rv; return (τ', B, C)
        Ok((1.0 / rv, hb.b.clone(), hb.c.clone()))
    };
    let (tp, b, c) = blocks_at(t)?;
    let (tpt, bt, ct) = blocks_at(sigma.eval(t))?;
    let bt_inv = (tpt * &bt)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("B̃ block is singular".into()))?;
    let lower_left = &bt_inv * (tp * c.transpose() - tpt * ct.transpose());
    let lower_right = (tp / tpt)
        * bt.lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("B̃ block is singular".into()))?
        * &b;
    let mut r = DMatrix::zeros(2 * d, 2 * d);
    r.view_mut((0, 0), (d, d))
        .copy_from(&DMatrix::identity(d, d));
    r.view_mut((d, 0), (d, d)).copy_from(&lower_left);
    r.view_mut((d, d), (d, d)).copy_from(&lower_right);
    Ok(r)
}

/// Reduced symmetry in the coordinates of a fixed section frame via the
/// differential of 𝔖, for cross-checking the block formula.
pub fn reduced_symmetry_in_frame(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    frame: &SectionFrame,
    sigma: &TimeSymmetry,
    t: f64,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let x = orbit.state(t);
    let x_img = orbit.state(sigma.eval(t));
    let s = frame.section_basis(h, u, &x)?;
    let s_img = frame.section_basis(h, u, &x_img)?;
    let ds = symmetry::symmetry_jacobian(h, &x, tols)?;
    project_to_section(h, u, &x_img, &s_img, &(ds * s))
}

/// Pointwise reversibility residuals at time `t` of a round-trip orbit.
pub struct ReversiblePointReport {
    /// `|d𝓈/dt|` along the orbit.
    pub scale_derivative: f64,
    /// `‖ℜᵀJℜ + 𝓈J‖₂`.
    pub antisymplectic_residual: f64,
    /// Norm of the time derivative of the conjugated symmetry cocycle.
    pub cocycle_residual: f64,
}

pub fn check_reversible_point(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    sigma: &TimeSymmetry,
    t: f64,
    tols: &Tolerances,
) -> Result<ReversiblePointReport> {
    let d = h.n() - 1;
    let j = standard_j(d);
    let scale_at =
        |s: f64| -> Result<f64> { symmetry::symmetry_scale(h, &orbit.state(s), tols) };
    let hfd = 1e-4;
    let scale_derivative = ((scale_at(t + hfd)? - scale_at(t - hfd)?) / (2.0 * hfd)).abs();

    let scale = scale_at(t)?;
    let r = reduced_symmetry(h, u, orbit, sigma, t, tols)?;
    let antisymplectic_residual = op_norm(&(r.transpose() * &j * &r + scale * &j));

    // cocycle K(s) = Φ(σ(s)→σ(t)) ℜ(s) Φ(t→s); constant in s when the
    // orbit is reversible
    let hc = 1e-3;
    let k_at = |s: f64| -> Result<DMatrix<f64>> {
        let x_s = orbit.state(s);
        let x_img = orbit.state(sigma.eval(s));
        let basis_s = restricted_section_basis(h, u, &x_s, tols)?;
        let basis_img = restricted_section_basis(h, u, &x_img, tols)?;
        let basis_t = restricted_section_basis(h, u, &orbit.state(t), tols)?;
        let basis_to = restricted_section_basis(h, u, &orbit.state(sigma.eval(t)), tols)?;
        let phi_fwd = project_to_section(
            h,
            u,
            &x_s,
            &basis_s,
            &(orbit.transition(t, s)? * basis_t),
        )?;
        let ds = symmetry::symmetry_jacobian(h, &x_s, tols)?;
        let r_s = project_to_section(h, u, &x_img, &basis_img, &(ds * &basis_s))?;
        let phi_back = project_to_section(
            h,
            u,
            &orbit.state(sigma.eval(t)),
            &basis_to,
            &(orbit.transition(sigma.eval(s), sigma.eval(t))? * basis_img),
        )?;
        Ok(phi_back * r_s * phi_fwd)
    };
    let cocycle_residual = op_norm(&((k_at(t + hc)? - k_at(t - hc)?) / (2.0 * hc)));
    Ok(ReversiblePointReport {
        scale_derivative,
        antisymplectic_residual,
        cocycle_residual,
    })
}

/// Orbit-level reversibility certificate.
pub struct ReversibleOrbitReport {
    pub turning_times: (f64, f64),
    /// `‖ℜ₀ Φ_{ν₁→ν₀+T} ℜ₁ Φ_{ν₀→ν₁} − I‖₂`.
    pub identity_residual: f64,
    /// `‖ℜᵢᵀJℜᵢ + J‖₂` at the two turning points.
    pub antisymplectic_residuals: (f64, f64),
    /// `|ν₁ − ν₀ − T/2|`.
    pub half_period_defect: f64,
}

pub fn check_reversible_orbit(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    nu0: f64,
    nu1: f64,
    tols: &Tolerances,
) -> Result<ReversibleOrbitReport> {
    let d = h.n() - 1;
    let j = standard_j(d);
    let x0 = orbit.state(nu0);
    let x1 = orbit.state(nu1);
    let s0 = restricted_section_basis(h, u, &x0, tols)?;
    let s1 = restricted_section_basis(h, u, &x1, tols)?;
    // exact block differential of 𝔖 at the turning points
    let r_at = |x: &PhasePoint, s: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let gamma = symmetry::fiber_minimum(h, &x.q, Some(&x.p), tols)?;
        let ds = symmetry::gamma_jacobian_block(h, &gamma);
        project_to_section(h, u, x, s, &(ds * s))
    };
    let r0 = r_at(&x0, &s0)?;
    let r1 = r_at(&x1, &s1)?;
    let phi_a = project_to_section(h, u, &x1, &s1, &(orbit.transition(nu0, nu1)? * &s0))?;
    let phi_b = project_to_section(
        h,
        u,
        &x0,
        &s0,
        &(orbit.transition(nu1, nu0 + orbit.period)? * &s1),
    )?;
    let identity_residual = op_norm(
        &(&r0 * &phi_b * &r1 * &phi_a - DMatrix::identity(2 * d, 2 * d)),
    );
    let anti = |r: &DMatrix<f64>| op_norm(&(r.transpose() * &j * r + &j));
    Ok(ReversibleOrbitReport {
        turning_times: (nu0, nu1),
        identity_residual,
        antisymplectic_residuals: (anti(&r0), anti(&r1)),
        half_period_defect: ((nu1 - nu0) - orbit.period / 2.0).abs(),
    })
}

/// Linearized response of the section trace to a potential perturbation
/// `v` that vanishes along the orbit arc, computed two ways.
pub struct PotentialDerivativeReport {
    /// Solution of `y' = τ'Ly + τ'b`, `b = (0, −∂_{q_*}v)`, at the arc end.
    pub y_ode: DVector<f64>,
    /// Central finite difference of the perturbed section trace.
    pub y_fd: DVector<f64>,
    pub discrepancy: f64,
}

pub fn potential_derivative_in_section(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    v: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    frame: &SectionFrame,
    t_from: f64,
    t_to: f64,
    tols: &Tolerances,
) -> Result<PotentialDerivativeReport> {
    let n = h.n();
    let d = n - 1;
    // route (i): forced linear equation in the time parametrization,
    // dy/dt = ṙ J∂²κ y + (0, −(Oᵀ∇v)_*)
    let j = standard_j(d);
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = orbit.state(t);
        let kh = frame.kappa_hess(h, u, &x)?;
        let rv = frame.r_velocity(h, &x);
        let gv_frame = frame.rot.transpose() * v.grad(&x.q);
        let mut b = DVector::zeros(2 * d);
        for i in 0..d {
            b[d + i] = -gv_frame[1 + i];
        }
        Ok(rv * (&j * kh) * y + b)
    };
    let sol = crate::ode::integrate(
        rhs,
        &DVector::zeros(2 * d),
        t_from,
        t_to,
        tols.integrator_tol.max(1e-12),
    )?;
    let y_ode = sol.eval(t_to);

    // route (ii): finite difference of the perturbed trace through the
    // section r = r(t_to), started from the same point at t_from
    let r_target = frame.r_of(&orbit.state(t_to).q);
    let x0 = orbit.state(t_from);
    let span = t_to - t_from;
    let trace = |eps: f64| -> Result<DVector<f64>> {
        let pert = PerturbedPotential {
            base: u,
            bump: v,
            eps,
        };
        let seg = flow(h, &pert, &x0, 1.5 * span, tols.integrator_tol, 1e-5)?;
        // Newton for the crossing time of the section
        let mut t = span;
        for _ in 0..50 {
            let x = seg.state(t);
            let g = frame.r_of(&x.q) - r_target;
            if g.abs() <= 1e-13 {
                break;
            }
            let rv = frame.r_velocity(h, &x);
            if rv.abs() < 1e-12 {
                return Err(Error::SectionInvalid(
                    "perturbed trajectory grazes the section".into(),
                ));
            }
            t -= g / rv;
        }
        Ok(frame.section_coords(&seg.state(t)))
    };
    let eps = 1e-5;
    let y_fd = (trace(eps)? - trace(-eps)?) / (2.0 * eps);
    let discrepancy = (&y_ode - &y_fd).norm();
    Ok(PotentialDerivativeReport {
        y_ode,
        y_fd,
        discrepancy,
    })
}
