//! Periodic orbits and chords: shooting, Γ-return event detection,
//! projected-orbit classification (neat vs round trip), the time
//! symmetry σ, and self-intersection analysis of projected curves.

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::hamsys::{
    flow, total_energy, variational_flow, vector_field, Hamiltonian, PhasePoint, PotentialFn,
    VariationalSegment,
};
use crate::symmetry::{self, GammaPoint};

/// A closed orbit of `H + u` with its dense segment and linearized flow
/// over one period.
pub struct PeriodicOrbit {
    pub base_point: PhasePoint,
    pub period: f64,
    pub energy: f64,
    pub closure_residual: f64,
    /// True when the divisor scan found no smaller period.
    pub minimal: bool,
    segment: VariationalSegment,
}

impl PeriodicOrbit {
    pub fn n(&self) -> usize {
        self.base_point.n()
    }

    /// State at time t, reduced modulo the period.
    pub fn state(&self, t: f64) -> PhasePoint {
        self.segment.state(t.rem_euclid(self.period))
    }

    /// `∂ₓφ` from time 0 to `t ∈ [0, period]`.
    pub fn dphi(&self, t: f64) -> DMatrix<f64> {
        self.segment.dphi(t)
    }

    pub fn monodromy(&self) -> DMatrix<f64> {
        self.segment.dphi(self.period)
    }

    /// Linearized flow `∂ₓφ` from time `s` to time `t ≥ s`, composed
    /// through whole periods via the monodromy.
    pub fn transition(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let to_zero = |time: f64| -> (f64, i64) {
            let k = (time / self.period).floor();
            (time - k * self.period, k as i64)
        };
        let (ts, ks) = to_zero(s);
        let (tt, kt) = to_zero(t);
        let m = self.monodromy();
        let pow = |mut k: i64| -> Result<DMatrix<f64>> {
            let n = m.nrows();
            let mut acc = DMatrix::identity(n, n);
            let inv;
            let base = if k >= 0 {
                &m
            } else {
                inv = m
                    .clone()
                    .lu()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular monodromy".into()))?;
                k = -k;
                &inv
            };
            for _ in 0..k {
                acc = base * acc;
            }
            Ok(acc)
        };
        // Dφ_{0→τ+kT} = Dφ(τ) · M^k
        let a = self.segment.dphi(tt) * pow(kt)?;
        let b = self.segment.dphi(ts) * pow(ks)?;
        let b_inv = b
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular transition factor".into()))?;
        Ok(a * b_inv)
    }
}

/// Trajectory segment between two Γ points on the zero level of `H + u`.
#[derive(Debug, Clone)]
pub struct Chord {
    pub start: GammaPoint,
    pub duration: f64,
    pub end: GammaPoint,
    /// `‖P(t_end) − ℘(Q(t_end))‖`: how precisely the trajectory hit Γ.
    pub end_momentum_residual: f64,
    pub minimal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrbitKind {
    Neat,
    RoundTrip,
}

/// Verdict of the projected-orbit analysis.
#[derive(Debug, Clone)]
pub struct OrbitClassification {
    pub kind: OrbitKind,
    /// Times with `Q̇ = 0` (two for a round trip, none for a neat orbit).
    pub degenerate_times: Vec<f64>,
    /// Isolated transverse self-intersection parameter pairs `(s, t)`.
    pub self_intersections: Vec<(f64, f64)>,
    /// A certified interval of neat times (Neat verdict only).
    pub neat_interval: Option<(f64, f64)>,
}

/// Newton/Gauss least-squares search for a periodic orbit near `seed`
/// with period near `t_guess`. The energy level of the seed is pinned;
/// the phase condition fixes the parametrization. The minimal period is
/// certified by a divisor scan.
pub fn find_periodic_orbit(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    seed: &PhasePoint,
    t_guess: f64,
    tols: &Tolerances,
) -> Result<PeriodicOrbit> {
    let n = h.n();
    let v_seed = vector_field(h, u, seed)?;
    if v_seed.norm() < tols.velocity_floor {
        return Err(Error::InvalidInput(
            "period collapse: seed is an equilibrium point".into(),
        ));
    }
    let e0 = total_energy(h, u, seed);
    let seed_vec = seed.to_vector();
    let newton = |x_init: &DVector<f64>, t_init: f64| -> Result<(DVector<f64>, f64, f64)> {
        let mut x = x_init.clone();
        let mut t = t_init;
        let mut best_res = f64::INFINITY;
        for _ in 0..tols.newton_max_iter {
            let pt = PhasePoint::from_vector(&x)?;
            let seg = variational_flow(h, u, &pt, t, tols.integrator_tol, 1e-6)?;
            let end = seg.state(t).to_vector();
            let dphi = seg.dphi(t);
            let v_end = vector_field(h, u, &seg.state(t))?;
            let mut f = DVector::zeros(2 * n + 2);
            f.rows_mut(0, 2 * n).copy_from(&(&end - &x));
            f[2 * n] = v_seed.dot(&(&x - &seed_vec));
            f[2 * n + 1] = total_energy(h, u, &pt) - e0;
            let res = f.norm();
            best_res = res;
            if res <= tols.newton_tol {
                break;
            }
            let mut jac = DMatrix::zeros(2 * n + 2, 2 * n + 1);
            jac.view_mut((0, 0), (2 * n, 2 * n))
                .copy_from(&(&dphi - DMatrix::identity(2 * n, 2 * n)));
            jac.view_mut((0, 2 * n), (2 * n, 1)).copy_from(&v_end);
            for j in 0..2 * n {
                jac[(2 * n, j)] = v_seed[j];
            }
            let (gq, gp) = h.grad(&pt.q, &pt.p);
            let gu = u.grad(&pt.q);
            for j in 0..n {
                jac[(2 * n + 1, j)] = gq[j] + gu[j];
                jac[(2 * n + 1, n + j)] = gp[j];
            }
            let svd = jac.svd(true, true);
            let step = svd
                .solve(&f, 1e-12)
                .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
            // backtracking on the residual
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..25 {
                let x_c = &x - lambda * step.rows(0, 2 * n);
                let t_c = t - lambda * step[2 * n];
                if t_c > 1e-6 {
                    let pt_c = PhasePoint::from_vector(&x_c)?;
                    if let Ok(seg_c) = variational_flow(h, u, &pt_c, t_c, tols.integrator_tol, 1e-6)
                    {
                        let end_c = seg_c.state(t_c).to_vector();
                        let mut f_c = DVector::zeros(2 * n + 2);
                        f_c.rows_mut(0, 2 * n).copy_from(&(&end_c - &x_c));
                        f_c[2 * n] = v_seed.dot(&(&x_c - &seed_vec));
                        f_c[2 * n + 1] = total_energy(h, u, &pt_c) - e0;
                        if f_c.norm() < res {
                            x = x_c;
                            t = t_c;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok((x, t, best_res))
    };
    let (mut x, mut t, mut res) = newton(&seed_vec, t_guess)?;
    if res > 100.0 * tols.newton_tol {
        return Err(Error::NewtonDiverged(format!(
            "periodic-orbit shooting stalled at residual {res:.3e}"
        )));
    }
    if t < 1e-4 {
        return Err(Error::InvalidInput(
            "period collapse: Newton converged to a vanishing period".into(),
        ));
    }
    // minimal-period divisor scan
    let mut minimal = true;
    for _ in 0..3 {
        let pt = PhasePoint::from_vector(&x)?;
        let seg = flow(h, u, &pt, t, tols.integrator_tol, 1e-6)?;
        let mut smaller = None;
        for k in 2..=8usize {
            let tau = t / k as f64;
            if (seg.state(tau).to_vector() - &x).norm() <= 1e-6 {
                smaller = Some(tau);
                break;
            }
        }
        match smaller {
            Some(tau) => {
                let (x2, t2, res2) = newton(&x, tau)?;
                if res2 <= 100.0 * tols.newton_tol && t2 > 1e-4 {
                    x = x2;
                    t = t2;
                    res = res2;
                } else {
                    minimal = false;
                    break;
                }
            }
            None => break,
        }
    }
    let base_point = PhasePoint::from_vector(&x)?;
    let segment = variational_flow(h, u, &base_point, t, tols.integrator_tol, 1e-6)?;
    let closure_residual = (segment.state(t).to_vector() - &x).norm();
    let _ = res;
    Ok(PeriodicOrbit {
        energy: total_energy(h, u, &base_point),
        base_point,
        period: t,
        closure_residual,
        minimal,
        segment,
    })
}

/// Move a configuration onto the set `{H(q, ℘(q)) + u(q) = 0}` by Newton
/// along the gradient direction.
pub fn polish_to_zero_level(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    q0: &DVector<f64>,
    tols: &Tolerances,
) -> Result<DVector<f64>> {
    let mut q = q0.clone();
    for _ in 0..tols.newton_max_iter {
        let gamma = symmetry::fiber_minimum(h, &q, None, tols)?;
        let e = total_energy(h, u, &gamma.phase_point());
        if e.abs() <= tols.newton_tol {
            return Ok(q);
        }
        // envelope: d/dq [H(q, ℘(q)) + u] = ∂_qH + ∇u at (q, ℘(q))
        let (gq, _) = h.grad(&q, &gamma.p_star);
        let grad = gq + u.grad(&q);
        let ns = grad.norm_squared();
        if ns < 1e-300 {
            return Err(Error::NewtonDiverged(
                "level polish hit a critical point of the effective potential".into(),
            ));
        }
        q -= (e / ns) * grad;
    }
    Err(Error::NewtonDiverged("level polish did not converge".into()))
}

/// `g(t) = ‖∂_pH(φ(t, x))‖²` and its analytic time derivative.
fn gamma_indicator(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    x: &PhasePoint,
) -> Result<(f64, f64)> {
    let (gq, gp) = h.grad(&x.q, &x.p);
    let gu = u.grad(&x.q);
    let hb = h.hess(&x.q, &x.p);
    let qdot = &gp;
    let pdot = -(gq + gu);
    // d/dt ∂_pH = ∂²_pqH q̇ + ∂²_ppH ṗ; with qp[(i,j)] = ∂²H/∂qᵢ∂pⱼ the
    // first term is qpᵀ q̇
    let dgp = hb.qp.transpose() * qdot + hb.pp * pdot;
    Ok((gp.norm_squared(), 2.0 * gp.dot(&dgp)))
}

/// Refine a local minimum of g on `[t_lo, t_hi]` by bisection on the
/// analytic derivative ġ.
fn refine_gamma_event<F>(state: F, h: &dyn Hamiltonian, u: &dyn PotentialFn, t_lo: f64, t_hi: f64) -> Result<f64>
where
    F: Fn(f64) -> PhasePoint,
{
    let gdot = |t: f64| -> Result<f64> { Ok(gamma_indicator(h, u, &state(t))?.1) };
    let mut lo = t_lo;
    let mut hi = t_hi;
    let mut flo = gdot(lo)?;
    let fhi = gdot(hi)?;
    if flo >= 0.0 || fhi <= 0.0 {
        return Err(Error::Numerical("event bracket does not contain a minimum".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = gdot(mid)?;
        if fm <= 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + t_hi.abs()) {
            break;
        }
    }
    let _ = flo;
    Ok(0.5 * (lo + hi))
}

/// Integrate from each Γ-seed on the zero level and detect returns to Γ
/// as local minima of `g(t) = ‖∂_pH‖²` below `gamma_event_tol`. The
/// first return of each seed is the minimal chord; later returns are
/// reported non-minimal. Seeds that are equilibria or off the level are
/// skipped.
pub fn find_chords(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    seeds: &[DVector<f64>],
    t_max: f64,
    tols: &Tolerances,
) -> Result<Vec<Chord>> {
    let mut chords: Vec<Chord> = Vec::new();
    for q_seed in seeds {
        let q = match polish_to_zero_level(h, u, q_seed, tols) {
            Ok(q) => q,
            Err(_) => continue,
        };
        let start = symmetry::fiber_minimum(h, &q, None, tols)?;
        let x0 = start.phase_point();
        let v = vector_field(h, u, &x0)?;
        if v.norm() < tols.velocity_floor {
            continue; // equilibrium
        }
        let seg = match flow(h, u, &x0, t_max, tols.integrator_tol, tols.energy_drift_tol * 10.0) {
            Ok(s) => s,
            Err(Error::Blowup { .. }) => continue,
            Err(e) => return Err(e),
        };
        let np = tols.orbit_scan_points.max(100);
        let dt = t_max / np as f64;
        let mut g_prev2 = None;
        let mut g_prev = None;
        // ignore the departure region: g starts at 0 on Γ
        let mut armed = false;
        let mut first_for_seed = true;
        for i in 0..=np {
            let t = i as f64 * dt;
            let (g, _) = gamma_indicator(h, u, &seg.state(t))?;
            if g > 1e-4 {
                armed = true;
            }
            if let (Some((t1, g1)), Some((_, g2))) = (g_prev, g_prev2) {
                if armed && g1 < g && g1 < g2 && g1 <= 1e-3 {
                    if let Ok(t_star) =
                        refine_gamma_event(|tt| seg.state(tt), h, u, t1 - dt, t1 + dt)
                    {
                        let (g_star, _) = gamma_indicator(h, u, &seg.state(t_star))?;
                        if g_star <= tols.gamma_event_tol {
                            let xs = seg.state(t_star);
                            let end = symmetry::fiber_minimum(h, &xs.q, Some(&xs.p), tols)?;
                            let end_momentum_residual = (&xs.p - &end.p_star).norm();
                            let duplicate = chords.iter().any(|c| {
                                (&c.start.q - &start.q).norm() <= 1e-6
                                    && (c.duration - t_star).abs() <= 1e-6
                            });
                            if !duplicate {
                                chords.push(Chord {
                                    start: start.clone(),
                                    duration: t_star,
                                    end,
                                    end_momentum_residual,
                                    minimal: first_for_seed,
                                });
                            }
                            first_for_seed = false;
                            armed = false;
                        }
                    }
                }
                let _ = t1;
            }
            g_prev2 = g_prev;
            g_prev = Some((t, g));
        }
    }
    Ok(chords)
}

/// Continue a chord to a (possibly perturbed) effective potential by
/// Gauss-Newton on the start point within Γ ∩ {H + u = 0} and the
/// duration, driving `∂_pH` at the endpoint to zero.
pub fn continue_chord(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    chord: &Chord,
    tols: &Tolerances,
) -> Result<Chord> {
    let n = h.n();
    let mut q = chord.start.q.clone();
    let mut t = chord.duration;
    let endpoint_gp = |q: &DVector<f64>, t: f64| -> Result<(DVector<f64>, PhasePoint)> {
        let start = symmetry::fiber_minimum(h, q, None, tols)?;
        let seg = flow(h, u, &start.phase_point(), t, tols.integrator_tol, 1e-6)?;
        let x_end = seg.state(t);
        let (_, gp) = h.grad(&x_end.q, &x_end.p);
        Ok((gp, x_end))
    };
    let mut res = f64::INFINITY;
    for _ in 0..tols.newton_max_iter {
        q = polish_to_zero_level(h, u, &q, tols)?;
        let (f, x_end) = endpoint_gp(&q, t)?;
        res = f.norm();
        if res <= 1e-11 {
            break;
        }
        // start-point directions tangent to Γ₀ at the current start
        let start = symmetry::fiber_minimum(h, &q, None, tols)?;
        let (gq0, _) = h.grad(&start.q, &start.p_star);
        let c = gq0 + u.grad(&start.q);
        let c_col = DMatrix::from_fn(n, 1, |i, _| c[i]);
        let kernel = orthonormal_complement(&c_col);
        let e = 1e-6;
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n - 1 {
            let q_eps = polish_to_zero_level(
                h,
                u,
                &(&q + e * kernel.column(k).into_owned()),
                tols,
            )?;
            let (f_eps, _) = endpoint_gp(&q_eps, t)?;
            jac.set_column(k, &((f_eps - &f) / e));
        }
        let (_, dg) = gamma_indicator(h, u, &x_end)?;
        // d/dt ∂_pH along the flow (recomputed, not the scalar g')
        let hb = h.hess(&x_end.q, &x_end.p);
        let (gq_e, gp_e) = h.grad(&x_end.q, &x_end.p);
        let pdot = -(gq_e + u.grad(&x_end.q));
        let dgp = hb.qp.transpose() * gp_e + hb.pp * pdot;
        let _ = dg;
        jac.set_column(n - 1, &dgp);
        let svd = jac.svd(true, true);
        let step = svd
            .solve(&f, 1e-12)
            .map_err(|e| Error::Numerical(format!("chord continuation solve failed: {e}")))?;
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let mut q_c = q.clone();
            for k in 0..n - 1 {
                q_c -= lambda * step[k] * kernel.column(k).into_owned();
            }
            let t_c = t - lambda * step[n - 1];
            if t_c > 1e-3 {
                if let Ok(q_c) = polish_to_zero_level(h, u, &q_c, tols) {
                    if let Ok((f_c, _)) = endpoint_gp(&q_c, t_c) {
                        if f_c.norm() < res {
                            q = q_c;
                            t = t_c;
                            moved = true;
                            break;
                        }
                    }
                }
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if res > 1e-9 {
        return Err(Error::NewtonDiverged(format!(
            "chord continuation stalled at residual {res:.3e}"
        )));
    }
    let start = symmetry::fiber_minimum(h, &q, None, tols)?;
    let seg = flow(h, u, &start.phase_point(), t, tols.integrator_tol, 1e-6)?;
    let x_end = seg.state(t);
    let end = symmetry::fiber_minimum(h, &x_end.q, Some(&x_end.p), tols)?;
    let end_momentum_residual = (&x_end.p - &end.p_star).norm();
    Ok(Chord {
        start,
        duration: t,
        end,
        end_momentum_residual,
        minimal: chord.minimal,
    })
}

/// Orthonormal basis of the orthogonal complement of the column span of
/// `basis`, via projection and column-pivoted Gram-Schmidt.
pub(crate) fn orthonormal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let m = basis.nrows();
    let k = basis.ncols();
    if m == k {
        return DMatrix::zeros(m, 0);
    }
    let q = basis.clone().qr().q();
    let mut proj = DMatrix::identity(m, m) - &q * q.transpose();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for _ in 0..m - k {
        let mut best = 0usize;
        let mut best_norm = -1.0;
        for j in 0..m {
            let nj = proj.column(j).norm();
            if nj > best_norm {
                best_norm = nj;
                best = j;
            }
        }
        let v = proj.column(best).normalize();
        for j in 0..m {
            let col = proj.column(j).into_owned();
            let corrected = &col - v.dot(&col) * &v;
            proj.set_column(j, &corrected);
        }
        cols.push(v);
    }
    DMatrix::from_columns(&cols)
}

/// Transversality of the restricted flow map at the chord endpoint:
/// smallest singular value of the projection of
/// `(V_H δt, ∂ₓφ · dΓ₀ · δξ)` onto the orthogonal complement of TΓ.
pub fn chord_transversality(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    chord: &Chord,
    tols: &Tolerances,
) -> Result<(bool, f64)> {
    let n = h.n();
    let x0 = chord.start.phase_point();
    let v0 = vector_field(h, u, &x0)?;
    if v0.norm() < tols.velocity_floor {
        return Err(Error::InvalidInput("chord start is a fixed point".into()));
    }
    let seg = variational_flow(h, u, &x0, chord.duration, tols.integrator_tol, 1e-6)?;
    let dphi = seg.dphi(chord.duration);
    let x_end = seg.state(chord.duration);

    // tangent space of Γ₀ at the start: δq ∈ ker(∂_qH + ∇u), lifted by d℘
    let (gq0, _) = h.grad(&chord.start.q, &chord.start.p_star);
    let c = gq0 + u.grad(&chord.start.q);
    if c.norm() < tols.velocity_floor {
        return Err(Error::InvalidInput(
            "chord start is a critical point of the effective potential".into(),
        ));
    }
    let c_col = DMatrix::from_fn(n, 1, |i, _| c[i]);
    let kernel = orthonormal_complement(&c_col); // n×(n−1)
    let dgamma0 = symmetry::dgamma_section(h, &chord.start)?;

    // orthogonal complement of TΓ at the endpoint
    let dgamma1 = symmetry::dgamma_section(h, &chord.end)?;
    let mut t_gamma = DMatrix::zeros(2 * n, n);
    t_gamma
        .view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    t_gamma.view_mut((n, 0), (n, n)).copy_from(&dgamma1);
    let u_comp = orthonormal_complement(&t_gamma); // 2n×n

    // columns of the restricted flow map, projected onto the complement
    let v_end = vector_field(h, u, &x_end)?;
    let mut map = DMatrix::zeros(n, n);
    let first = u_comp.transpose() * v_end;
    map.set_column(0, &first);
    for k in 0..n - 1 {
        let dq = kernel.column(k).into_owned();
        let mut lift = DVector::zeros(2 * n);
        lift.rows_mut(0, n).copy_from(&dq);
        lift.rows_mut(n, n).copy_from(&(&dgamma0 * dq));
        let img = u_comp.transpose() * (&dphi * lift);
        map.set_column(k + 1, &img);
    }
    let svd_m = map.svd(false, false);
    let sigma_min = svd_m.singular_values.min();
    Ok((sigma_min >= tols.transv_tol, sigma_min))
}

/// Isolated transverse self-intersections of a closed curve
/// `f: ℝ/periodℤ → ℝ²`: spatial hashing of a dense sample, then pairwise
/// Newton refinement. Pairs are reported once with `s < t`.
pub fn curve_self_intersections<F>(
    f: F,
    period: f64,
    n_samples: usize,
    tol: f64,
) -> Vec<(f64, f64)>
where
    F: Fn(f64) -> DVector<f64>,
{
    use std::collections::HashMap;
    let dt = period / n_samples as f64;
    let pts: Vec<DVector<f64>> = (0..n_samples).map(|i| f(i as f64 * dt)).collect();
    let mut max_step: f64 = 0.0;
    for i in 0..n_samples {
        let j = (i + 1) % n_samples;
        max_step = max_step.max((&pts[i] - &pts[j]).norm());
    }
    let cell = (2.0 * max_step).max(1e-12);
    let key = |p: &DVector<f64>| -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    };
    let mut hash: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        hash.entry(key(p)).or_default().push(i);
    }
    let circ_dist = |a: f64, b: f64| -> f64 {
        let d = (a - b).rem_euclid(period);
        d.min(period - d)
    };
    let guard = 8.0 * dt;
    let mut found: Vec<(f64, f64)> = Vec::new();
    let consider = |i: usize, j: usize, found: &mut Vec<(f64, f64)>| {
        let (ti, tj) = (i as f64 * dt, j as f64 * dt);
        if circ_dist(ti, tj) <= guard {
            return;
        }
        if (&pts[i] - &pts[j]).norm() > cell {
            return;
        }
        // Newton on (s, t) ↦ f(s) − f(t), FD Jacobian
        let mut s = ti;
        let mut t = tj;
        let e = dt * 1e-3;
        let mut ok = false;
        for _ in 0..40 {
            let r = f(s) - f(t);
            if r.norm() <= tol {
                ok = true;
                break;
            }
            let ds = (f(s + e) - f(s - e)) / (2.0 * e);
            let dtv = (f(t + e) - f(t - e)) / (2.0 * e);
            let jac = DMatrix::from_columns(&[ds, -dtv]);
            match jac.lu().solve(&r) {
                Some(step) => {
                    if !step[0].is_finite() || step.norm() > 10.0 * max_step.max(1.0) {
                        return; // singular or runaway: not an isolated crossing
                    }
                    s -= step[0];
                    t -= step[1];
                }
                None => return,
            }
        }
        if !ok {
            return;
        }
        let s = s.rem_euclid(period);
        let t = t.rem_euclid(period);
        if circ_dist(s, t) <= guard {
            return;
        }
        // isolation: reject tangential coincidences (retraced arcs)
        let ts_v = (f(s + e) - f(s - e)) / (2.0 * e);
        let tt_v = (f(t + e) - f(t - e)) / (2.0 * e);
        let cross = (ts_v[0] * tt_v[1] - ts_v[1] * tt_v[0]).abs();
        if cross < 1e-3 * ts_v.norm() * tt_v.norm() {
            return;
        }
        let (a, b) = if s < t { (s, t) } else { (t, s) };
        for (fa, fb) in found.iter() {
            let same = (circ_dist(*fa, a) <= guard && circ_dist(*fb, b) <= guard)
                || (circ_dist(*fa, b) <= guard && circ_dist(*fb, a) <= guard);
            if same {
                return;
            }
        }
        found.push((a, b));
    };
    let keys: Vec<(i64, i64)> = hash.keys().cloned().collect();
    for k in keys {
        let mut near: Vec<usize> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = hash.get(&(k.0 + dx, k.1 + dy)) {
                    near.extend_from_slice(v);
                }
            }
        }
        if let Some(bucket) = hash.get(&k) {
            for &i in bucket {
                for &j in &near {
                    if i < j {
                        consider(i, j, &mut found);
                    }
                }
            }
        }
    }
    found.sort_by(|a, b| a.partial_cmp(b).unwrap());
    found
}

/// Number of distinct configuration points that are isolated multiple
/// intersections of the projected curve (each visited by at least two
/// well-separated parameter times; retraced arcs contribute none since
/// their crossings are not isolated).
pub fn count_multiple_intersections<F>(f: F, period: f64, n_samples: usize) -> usize
where
    F: Fn(f64) -> DVector<f64> + Copy,
{
    let pairs = curve_self_intersections(f, period, n_samples, 1e-10);
    let mut points: Vec<DVector<f64>> = Vec::new();
    for (s, _) in &pairs {
        let p = f(*s);
        if !points.iter().any(|q| (q - &p).norm() <= 1e-6) {
            points.push(p);
        }
    }
    points.len()
}

/// Degenerate times of the orbit: local minima of `g(t) = ‖Q̇‖²` below
/// `gamma_event_tol`, refined by the analytic derivative, on the circle
/// `[0, T)`.
pub fn degenerate_times(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    tols: &Tolerances,
) -> Result<Vec<f64>> {
    let np = tols.orbit_scan_points.max(100);
    let t_total = orbit.period;
    let dt = t_total / np as f64;
    let g_at = |i: usize| -> Result<f64> {
        Ok(gamma_indicator(h, u, &orbit.state(i as f64 * dt))?.0)
    };
    let mut gs = Vec::with_capacity(np);
    for i in 0..np {
        gs.push(g_at(i)?);
    }
    let mut times = Vec::new();
    for i in 0..np {
        let gm = gs[(i + np - 1) % np];
        let g0 = gs[i];
        let gp = gs[(i + 1) % np];
        if g0 < gm && g0 <= gp && g0 <= 1e-3 {
            let t1 = i as f64 * dt;
            if let Ok(t_star) =
                refine_gamma_event(|tt| orbit.state(tt), h, u, t1 - dt, t1 + dt)
            {
                let (g_star, _) = gamma_indicator(h, u, &orbit.state(t_star))?;
                if g_star <= tols.gamma_event_tol {
                    let t_star = t_star.rem_euclid(t_total);
                    let fresh = times.iter().all(|&t: &f64| {
                        let d = (t - t_star).rem_euclid(t_total);
                        d.min(t_total - d) > 10.0 * dt
                    });
                    if fresh {
                        times.push(t_star);
                    }
                }
            }
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(times)
}

/// The time symmetry of a round-trip orbit: the orientation-reversing
/// solution of `σ' = −𝓈∘θ` with `σ(ν₀) = ν₀`.
pub struct TimeSymmetry {
    pub nu0: f64,
    pub period: f64,
    sol: crate::ode::Solution,
}

impl TimeSymmetry {
    /// σ(t) for `t ∈ [ν₀, ν₀ + T]`, decreasing from ν₀ to ν₀ − T.
    pub fn eval(&self, t: f64) -> f64 {
        let t = self.nu0 + (t - self.nu0).rem_euclid(self.period);
        self.sol.eval(t)[0]
    }
}

pub fn time_symmetry_sigma(
    h: &dyn Hamiltonian,
    orbit: &PeriodicOrbit,
    nu0: f64,
    tols: &Tolerances,
) -> Result<TimeSymmetry> {
    let period = orbit.period;
    let rhs = |t: f64, _y: &DVector<f64>| -> Result<DVector<f64>> {
        let s = symmetry::apply_symmetry(h, &orbit.state(t), tols)?.scale;
        Ok(DVector::from_vec(vec![-s]))
    };
    let sol = crate::ode::integrate(
        rhs,
        &DVector::from_vec(vec![nu0]),
        nu0,
        nu0 + period,
        tols.integrator_tol.max(1e-12),
    )?;
    let sigma = TimeSymmetry { nu0, period, sol };
    // consistency: σ over one period must sweep exactly −T
    let closure = (sigma.sol.eval(nu0 + period)[0] - (nu0 - period)).abs();
    if closure > 1e-6 * period.max(1.0) {
        return Err(Error::Inconclusive(format!(
            "time symmetry does not close up: defect {closure:.3e}"
        )));
    }
    Ok(sigma)
}

/// Derivative `σ'(t) = −𝓈(θ(t))`.
pub fn sigma_derivative(
    h: &dyn Hamiltonian,
    orbit: &PeriodicOrbit,
    t: f64,
    tols: &Tolerances,
) -> Result<f64> {
    Ok(-symmetry::apply_symmetry(h, &orbit.state(t), tols)?.scale)
}

/// Classify the projected orbit: RoundTrip (two degenerate times, σ
/// certificate) or Neat (certified embedded interval). Ambiguity is an
/// explicit inconclusive error, never a default.
pub fn classify_orbit(
    h: &dyn Hamiltonian,
    u: &dyn PotentialFn,
    orbit: &PeriodicOrbit,
    tols: &Tolerances,
) -> Result<OrbitClassification> {
    let times = degenerate_times(h, u, orbit, tols)?;
    let n = orbit.n();
    let proj = |t: f64| -> DVector<f64> { orbit.state(t).q };
    let self_intersections = if n == 2 {
        curve_self_intersections(proj, orbit.period, tols.orbit_scan_points.max(500), 1e-10)
    } else {
        Vec::new()
    };
    match times.len() {
        2 => {
            let nu0 = times[0];
            let nu1 = times[1];
            let sigma = time_symmetry_sigma(h, orbit, nu0, tols)?;
            // certificate: Q(σ(t)) = Q(t) on a grid, two fixed points,
            // σ'(νᵢ) = −1
            let mut worst = 0.0f64;
            for i in 0..200 {
                let t = nu0 + orbit.period * i as f64 / 200.0;
                let d = (orbit.state(sigma.eval(t)).q - orbit.state(t).q).norm();
                worst = worst.max(d);
            }
            if worst > 1e-6 {
                return Err(Error::Inconclusive(format!(
                    "round-trip certificate failed: max ‖Q∘σ − Q‖ = {worst:.3e}"
                )));
            }
            let fix1 = (sigma.eval(nu1) - (nu1 - orbit.period)).abs();
            if fix1 > 1e-5 {
                return Err(Error::Inconclusive(format!(
                    "second turning time is not σ-fixed (defect {fix1:.3e})"
                )));
            }
            for &nu in &[nu0, nu1] {
                let d = sigma_derivative(h, orbit, nu, tols)?;
                if (d + 1.0).abs() > 1e-4 {
                    return Err(Error::Inconclusive(format!(
                        "σ' at a turning time is {d:.6}, expected −1"
                    )));
                }
            }
            Ok(OrbitClassification {
                kind: OrbitKind::RoundTrip,
                degenerate_times: times,
                self_intersections,
                neat_interval: None,
            })
        }
        0 => {
            // largest circular gap between intersection times
            let mut marks: Vec<f64> = self_intersections
                .iter()
                .flat_map(|(s, t)| [*s, *t])
                .collect();
            marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (gap_start, gap_len) = if marks.is_empty() {
                (0.0, orbit.period)
            } else {
                let mut best = (0.0, 0.0);
                for i in 0..marks.len() {
                    let a = marks[i];
                    let b = if i + 1 < marks.len() {
                        marks[i + 1]
                    } else {
                        marks[0] + orbit.period
                    };
                    if b - a > best.1 {
                        best = (a, b - a);
                    }
                }
                best
            };
            let margin = 20.0 * orbit.period / tols.orbit_scan_points.max(500) as f64;
            if gap_len <= 2.0 * margin {
                return Err(Error::Inconclusive(
                    "no neat interval clear of self-intersections at this resolution".into(),
                ));
            }
            Ok(OrbitClassification {
                kind: OrbitKind::Neat,
                degenerate_times: times,
                self_intersections,
                neat_interval: Some((gap_start + margin, gap_start + gap_len - margin)),
            })
        }
        k => Err(Error::Inconclusive(format!(
            "{k} degenerate times found; neither certificate applies"
        ))),
    }
}
