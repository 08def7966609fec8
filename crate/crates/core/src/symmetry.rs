//! The fiberwise symmetry of a convex Hamiltonian: the critical graph Γ
//! (fiberwise minima), the companion map 𝔖 with its positive scale 𝓈,
//! its differential, and the one-fiber model involution.

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::hamsys::{Hamiltonian, PhasePoint};

/// Point of Γ: the fiberwise minimizer `p* = ℘(q)`.
#[derive(Debug, Clone)]
pub struct GammaPoint {
    pub q: DVector<f64>,
    pub p_star: DVector<f64>,
    /// `‖∂_pH(q, p*)‖` at the returned solution.
    pub residual: f64,
}

impl GammaPoint {
    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint::new(self.q.clone(), self.p_star.clone()).expect("finite Γ point")
    }
}

/// Image of a phase point under 𝔖 together with the scale and the
/// residuals of the two defining equations.
#[derive(Debug, Clone)]
pub struct SymmetryResult {
    pub image: PhasePoint,
    pub scale: f64,
    /// `‖∂_pH(𝔖x) + 𝓈·∂_pH(x)‖`.
    pub residual_proportionality: f64,
    /// `|H(𝔖x) − H(x)|`.
    pub residual_energy: f64,
}

/// Minimize `H(q, ·)` over the fiber: Newton on `∂_pH(q, p) = 0` from
/// `p = 0` (or a caller seed), using the positive-definite `∂²_pp H`.
pub fn fiber_minimum(
    h: &dyn Hamiltonian,
    q: &DVector<f64>,
    seed: Option<&DVector<f64>>,
    tols: &Tolerances,
) -> Result<GammaPoint> {
    let n = h.n();
    if q.len() != n {
        return Err(Error::Dimension("configuration dimension mismatch".into()));
    }
    let mut p = seed.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut res = f64::INFINITY;
    for _ in 0..tols.newton_max_iter {
        let (_, gp) = h.grad(q, &p);
        res = gp.norm();
        if res <= tols.newton_tol {
            break;
        }
        let pp = h.hess(q, &p).pp;
        let chol = pp.cholesky().ok_or_else(|| {
            Error::Convexity("fiber Hessian not positive definite during minimization".into())
        })?;
        let step = chol.solve(&gp);
        // damped Newton: backtrack while the gradient norm grows
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &p - lambda * &step;
            let (_, gc) = h.grad(q, &cand);
            if gc.norm() < res {
                p = cand;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res > tols.newton_tol {
        return Err(Error::NewtonDiverged(format!(
            "fiber minimization stalled at residual {res:.3e}"
        )));
    }
    let pp = h.hess(q, &p).pp;
    if pp.cholesky().is_none() {
        return Err(Error::Convexity(
            "fiber Hessian not positive definite at the minimizer".into(),
        ));
    }
    let (_, gp) = h.grad(q, &p);
    Ok(GammaPoint {
        q: q.clone(),
        p_star: p,
        residual: gp.norm(),
    })
}

/// Differential of the section `℘`: `d℘ = −(∂²_ppH)⁻¹ (∂²_qpH)ᵀ`
/// evaluated at `(q, ℘(q))` (the transpose reflects the `qp[(i,j)] =
/// ∂²H/∂qᵢ∂pⱼ` block convention).
pub fn dgamma_section(h: &dyn Hamiltonian, gamma: &GammaPoint) -> Result<DMatrix<f64>> {
    let hb = h.hess(&gamma.q, &gamma.p_star);
    let chol = hb
        .pp
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Convexity("fiber Hessian singular in d℘".into()))?;
    Ok(-chol.solve(&hb.qp.transpose()))
}

/// Apply the fiberwise symmetry: solve
/// `∂_pH(q, p̃) + s·∂_pH(q, p) = 0`, `H(q, p̃) = H(q, p)` by Newton on
/// `(p̃, s)`. Points within `gamma_tol` of Γ are fixed with scale 1 (the
/// C¹ extension).
pub fn apply_symmetry(
    h: &dyn Hamiltonian,
    x: &PhasePoint,
    tols: &Tolerances,
) -> Result<SymmetryResult> {
    let n = h.n();
    if x.n() != n {
        return Err(Error::Dimension("phase point dimension mismatch".into()));
    }
    let (_, gp_x) = h.grad(&x.q, &x.p);
    if gp_x.norm() <= tols.gamma_tol {
        return Ok(SymmetryResult {
            image: x.clone(),
            scale: 1.0,
            residual_proportionality: gp_x.norm(),
            residual_energy: 0.0,
        });
    }
    let h_x = h.eval(&x.q, &x.p);
    // seed on the ray through the fiber minimum
    let gamma = fiber_minimum(h, &x.q, Some(&x.p), tols)?;
    let mut pt = 2.0 * &gamma.p_star - &x.p;
    let mut s = 1.0;
    let residual = |pt: &DVector<f64>, s: f64| -> (DVector<f64>, f64) {
        let (_, gp_t) = h.grad(&x.q, pt);
        ((gp_t + s * &gp_x), h.eval(&x.q, pt) - h_x)
    };
    let mut converged = false;
    for _ in 0..tols.newton_max_iter {
        let (r_prop, r_en) = residual(&pt, s);
        let norm = (r_prop.norm_squared() + r_en * r_en).sqrt();
        if norm <= tols.newton_tol {
            converged = true;
            break;
        }
        // Jacobian [[Hpp(q, p̃), ∂_pH(q,p)], [∂_pH(q, p̃)ᵀ, 0]]
        let hb = h.hess(&x.q, &pt);
        let (_, gp_t) = h.grad(&x.q, &pt);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&hb.pp);
        jac.view_mut((0, n), (n, 1)).copy_from(&gp_x);
        jac.view_mut((n, 0), (1, n)).copy_from(&gp_t.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&r_prop);
        rhs[n] = r_en;
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Jacobian in symmetry solve".into()))?;
        // backtracking on the combined residual
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let pt_c = &pt - lambda * step.rows(0, n);
            let s_c = s - lambda * step[n];
            let (rp_c, re_c) = residual(&pt_c, s_c);
            if (rp_c.norm_squared() + re_c * re_c).sqrt() < norm {
                pt = pt_c;
                s = s_c;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (r_prop, r_en) = residual(&pt, s);
    if !converged && (r_prop.norm_squared() + r_en * r_en).sqrt() > tols.newton_tol {
        return Err(Error::NewtonDiverged(format!(
            "symmetry solve stalled (residuals {:.3e}, {:.3e})",
            r_prop.norm(),
            r_en.abs()
        )));
    }
    if s <= 0.0 {
        return Err(Error::Numerical(format!(
            "symmetry solve converged to non-positive scale {s:.3e}"
        )));
    }
    Ok(SymmetryResult {
        image: PhasePoint::new(x.q.clone(), pt)?,
        scale: s,
        residual_proportionality: r_prop.norm(),
        residual_energy: r_en.abs(),
    })
}

/// Scale 𝓈 only (convenience wrapper).
pub fn symmetry_scale(h: &dyn Hamiltonian, x: &PhasePoint, tols: &Tolerances) -> Result<f64> {
    Ok(apply_symmetry(h, x, tols)?.scale)
}

/// Differential of 𝔖 at x. Off Γ: Richardson-extrapolated central
/// differences of `apply_symmetry`. On Γ (within `gamma_tol`): the exact
/// block formula `[[I, 0], [2d℘, −I]]`.
pub fn symmetry_jacobian(
    h: &dyn Hamiltonian,
    x: &PhasePoint,
    tols: &Tolerances,
) -> Result<DMatrix<f64>> {
    let n = h.n();
    let (_, gp) = h.grad(&x.q, &x.p);
    if gp.norm() <= tols.gamma_tol {
        let gamma = fiber_minimum(h, &x.q, Some(&x.p), tols)?;
        return Ok(gamma_jacobian_block(h, &gamma));
    }
    let xv = x.to_vector();
    let image = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let pt = PhasePoint::from_vector(z)?;
        Ok(apply_symmetry(h, &pt, tols)?.image.to_vector())
    };
    let step = 1e-4;
    let fd = |e: f64| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..2 * n {
            let mut zp = xv.clone();
            let mut zm = xv.clone();
            zp[j] += e;
            zm[j] -= e;
            let col = (image(&zp)? - image(&zm)?) / (2.0 * e);
            m.set_column(j, &col);
        }
        Ok(m)
    };
    let d1 = fd(step)?;
    let d2 = fd(step / 2.0)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Exact differential of 𝔖 at a point of Γ: `[[I, 0], [2d℘, −I]]`.
pub fn gamma_jacobian_block(h: &dyn Hamiltonian, gamma: &GammaPoint) -> DMatrix<f64> {
    let n = h.n();
    let dg = dgamma_section(h, gamma).expect("d℘ at a valid Γ point");
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    m.view_mut((n, 0), (n, n)).copy_from(&(2.0 * dg));
    m.view_mut((n, n), (n, n))
        .copy_from(&(-DMatrix::identity(n, n)));
    m
}

/// One-fiber model involution: for convex `f` with minimum 0 at the
/// origin, find `x̃ = −s·x` with `f(x̃) = f(x)`, `s > 0`; `s = 1` at
/// `x = 0` by continuous extension.
pub fn model_involution<F, G>(
    f: F,
    grad_f: G,
    x: &DVector<f64>,
    tols: &Tolerances,
) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    if x.norm() <= tols.gamma_tol {
        return Ok((-x, 1.0));
    }
    let target = f(x);
    let g = |s: f64| f(&(-s * x)) - target;
    let dg = |s: f64| -grad_f(&(-s * x)).dot(x);
    let mut s = 1.0;
    for _ in 0..tols.newton_max_iter {
        let val = g(s);
        if val.abs() <= tols.newton_tol {
            break;
        }
        let der = dg(s);
        if der.abs() < 1e-300 {
            return Err(Error::NewtonDiverged("flat direction in model involution".into()));
        }
        let mut step = val / der;
        // keep s positive
        while s - step <= 0.0 {
            step *= 0.5;
        }
        s -= step;
    }
    if g(s).abs() > tols.newton_tol.max(1e-10) {
        return Err(Error::NewtonDiverged(format!(
            "model involution stalled, residual {:.3e}",
            g(s).abs()
        )));
    }
    Ok((-s * x, s))
}
