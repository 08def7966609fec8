//! Non-homogeneous time-varying Hamiltonian linear systems
//! `x' = a(t) L_t x + a(t) b(t)` sharing a forcing channel, the candidate
//! conformal conjugacy ℜ_t, the three-condition equivalence, and the
//! M_n necessary conditions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ode;
use crate::sympmat::HamiltonianBlockMatrix;

/// Finite-difference weights for derivatives 0..=m of a function sampled
/// at `xs`, evaluated at `x0` (Fornberg's algorithm). `weights[k][j]` is
/// the weight of node j in the k-th derivative.
pub fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0f64; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    let mut out = vec![vec![0.0f64; n]; m + 1];
    for (j, row) in c.iter().enumerate() {
        for k in 0..=m {
            out[k][j] = row[k];
        }
    }
    out
}

const STENCIL: usize = 9;

fn stencil_range(n_nodes: usize, idx: usize) -> (usize, usize) {
    let half = STENCIL / 2;
    let size = STENCIL.min(n_nodes);
    let lo = idx.saturating_sub(half).min(n_nodes - size);
    (lo, size)
}

/// Matrix-valued curve on a uniform grid over `[0, t_end]`, with values
/// and derivatives at arbitrary times from local polynomial stencils.
#[derive(Debug, Clone)]
pub struct MatrixCurve {
    t_end: f64,
    nodes: Vec<DMatrix<f64>>,
}

impl MatrixCurve {
    pub fn new(t_end: f64, nodes: Vec<DMatrix<f64>>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("curve needs at least 2 nodes".into()));
        }
        if t_end <= 0.0 {
            return Err(Error::InvalidInput("curve length must be positive".into()));
        }
        let shape = (nodes[0].nrows(), nodes[0].ncols());
        if nodes.iter().any(|m| (m.nrows(), m.ncols()) != shape) {
            return Err(Error::Dimension("inconsistent node shapes".into()));
        }
        Ok(Self { t_end, nodes })
    }

    pub fn from_fn<F: Fn(f64) -> DMatrix<f64>>(t_end: f64, n_nodes: usize, f: F) -> Result<Self> {
        let nodes = (0..n_nodes)
            .map(|i| f(t_end * i as f64 / (n_nodes - 1) as f64))
            .collect();
        Self::new(t_end, nodes)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn grid_t(&self, i: usize) -> f64 {
        self.t_end * i as f64 / (self.nodes.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        &self.nodes[i]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nodes[0].nrows(), self.nodes[0].ncols())
    }

    /// k-th derivative at t (k = 0 gives the interpolated value).
    pub fn derivative(&self, t: f64, k: usize) -> DMatrix<f64> {
        let n = self.nodes.len();
        let dt = self.t_end / (n - 1) as f64;
        let idx = ((t / dt).round() as isize).clamp(0, (n - 1) as isize) as usize;
        let (lo, size) = stencil_range(n, idx);
        let xs: Vec<f64> = (0..size).map(|j| self.grid_t(lo + j)).collect();
        let w = fd_weights(t, &xs, k);
        let (r, c) = self.shape();
        let mut out = DMatrix::zeros(r, c);
        for j in 0..size {
            out += w[k][j] * &self.nodes[lo + j];
        }
        out
    }

    pub fn value(&self, t: f64) -> DMatrix<f64> {
        self.derivative(t, 0)
    }
}

/// Scalar curve on the same uniform-grid representation.
#[derive(Debug, Clone)]
pub struct ScalarCurve {
    t_end: f64,
    values: Vec<f64>,
}

impl ScalarCurve {
    pub fn new(t_end: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("curve needs at least 2 nodes".into()));
        }
        if t_end <= 0.0 {
            return Err(Error::InvalidInput("curve length must be positive".into()));
        }
        Ok(Self { t_end, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(t_end: f64, n_nodes: usize, f: F) -> Result<Self> {
        Self::new(
            t_end,
            (0..n_nodes)
                .map(|i| f(t_end * i as f64 / (n_nodes - 1) as f64))
                .collect(),
        )
    }

    pub fn constant(t_end: f64, v: f64, n_nodes: usize) -> Self {
        Self {
            t_end,
            values: vec![v; n_nodes],
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn grid_t(&self, i: usize) -> f64 {
        self.t_end * i as f64 / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn derivative(&self, t: f64, k: usize) -> f64 {
        let n = self.values.len();
        let dt = self.t_end / (n - 1) as f64;
        let idx = ((t / dt).round() as isize).clamp(0, (n - 1) as isize) as usize;
        let (lo, size) = stencil_range(n, idx);
        let xs: Vec<f64> = (0..size).map(|j| self.grid_t(lo + j)).collect();
        let w = fd_weights(t, &xs, k);
        (0..size).map(|j| w[k][j] * self.values[lo + j]).sum()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    /// True when all node values keep the same sign and stay away from 0.
    pub fn non_vanishing(&self, floor: f64) -> bool {
        let sign = self.values[0].signum();
        self.values.iter().all(|v| v.signum() == sign && v.abs() >= floor)
    }

    /// Total variation over the grid.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Curve of Hamiltonian 2d×2d matrices on a uniform grid; every node is
/// validated for the Hamiltonian block structure and the invertibility
/// of the B block.
#[derive(Debug, Clone)]
pub struct HamiltonianCurve {
    pub d: usize,
    curve: MatrixCurve,
    /// Worst B-block condition number over the grid.
    pub b_condition: f64,
}

impl HamiltonianCurve {
    pub fn new(d: usize, curve: MatrixCurve) -> Result<Self> {
        if curve.shape() != (2 * d, 2 * d) {
            return Err(Error::Dimension("curve nodes must be 2d x 2d".into()));
        }
        let mut b_condition = 0.0f64;
        for i in 0..curve.n_nodes() {
            let blocks = HamiltonianBlockMatrix::from_matrix(curve.node(i), 1e-9)?;
            let svd = blocks.b.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin <= 1e-12 * smax.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "B block singular at node {i}"
                )));
            }
            b_condition = b_condition.max(smax / smin);
        }
        Ok(Self { d, curve, b_condition })
    }

    pub fn from_fn<F: Fn(f64) -> DMatrix<f64>>(
        d: usize,
        t_end: f64,
        n_nodes: usize,
        f: F,
    ) -> Result<Self> {
        Self::new(d, MatrixCurve::from_fn(t_end, n_nodes, f)?)
    }

    pub fn t_end(&self) -> f64 {
        self.curve.t_end()
    }

    pub fn n_nodes(&self) -> usize {
        self.curve.n_nodes()
    }

    pub fn grid_t(&self, i: usize) -> f64 {
        self.curve.grid_t(i)
    }

    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        self.curve.node(i)
    }

    pub fn value(&self, t: f64) -> DMatrix<f64> {
        self.curve.value(t)
    }

    pub fn derivative(&self, t: f64, k: usize) -> DMatrix<f64> {
        self.curve.derivative(t, k)
    }

    pub fn blocks_at_node(&self, i: usize) -> HamiltonianBlockMatrix {
        HamiltonianBlockMatrix::from_matrix(self.curve.node(i), 1e-9)
            .expect("nodes validated at construction")
    }

    pub fn inner(&self) -> &MatrixCurve {
        &self.curve
    }
}

/// Smooth compactly supported forcing valued in `{0}×(ℝᵈ)*`:
/// `b(t) = bump((t−c)/w) · (0, dir)` with support `[c−w, c+w] ⊂ (0, T)`.
#[derive(Debug, Clone)]
pub struct ForcingCurve {
    pub d: usize,
    pub center: f64,
    pub width: f64,
    pub direction: DVector<f64>,
}

impl ForcingCurve {
    pub fn new(d: usize, t_end: f64, center: f64, width: f64, direction: DVector<f64>) -> Result<Self> {
        if direction.len() != d {
            return Err(Error::Dimension("forcing direction must have length d".into()));
        }
        if width <= 0.0 || center - width <= 0.0 || center + width >= t_end {
            return Err(Error::InvalidInput(
                "forcing support must lie strictly inside (0, T)".into(),
            ));
        }
        Ok(Self {
            d,
            center,
            width,
            direction,
        })
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let s = ((t - self.center) / self.width).powi(2);
        let mut v = DVector::zeros(2 * self.d);
        if s < 1.0 {
            let amp = (1.0 / (s - 1.0)).exp();
            for i in 0..self.d {
                v[self.d + i] = amp * self.direction[i];
            }
        }
        v
    }
}

/// Which of the two systems of a pair to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Plain,
    Tilde,
}

/// A pair of Hamiltonian linear systems sharing the time interval.
#[derive(Debug, Clone)]
pub struct LinearSystemPair {
    pub l: HamiltonianCurve,
    pub l_tilde: HamiltonianCurve,
    pub a: ScalarCurve,
    pub a_tilde: ScalarCurve,
}

impl LinearSystemPair {
    pub fn new(
        l: HamiltonianCurve,
        l_tilde: HamiltonianCurve,
        a: ScalarCurve,
        a_tilde: ScalarCurve,
    ) -> Result<Self> {
        if l.d != l_tilde.d {
            return Err(Error::Dimension("half-dimensions differ".into()));
        }
        let t = l.t_end();
        if (l_tilde.t_end() - t).abs() > 1e-12
            || (a.t_end() - t).abs() > 1e-12
            || (a_tilde.t_end() - t).abs() > 1e-12
        {
            return Err(Error::InvalidInput("curves must share the time interval".into()));
        }
        if !a.non_vanishing(1e-9) || !a_tilde.non_vanishing(1e-9) {
            return Err(Error::InvalidInput("scalar factors must be non-vanishing".into()));
        }
        Ok(Self {
            l,
            l_tilde,
            a,
            a_tilde,
        })
    }

    pub fn d(&self) -> usize {
        self.l.d
    }

    pub fn t_end(&self) -> f64 {
        self.l.t_end()
    }

    fn system(&self, which: Which) -> (&HamiltonianCurve, &ScalarCurve) {
        match which {
            Which::Plain => (&self.l, &self.a),
            Which::Tilde => (&self.l_tilde, &self.a_tilde),
        }
    }
}

/// Integrate `x' = a(t)L_t x + a(t)b(t)` from `x0` at time 0 over `[0, T]`.
pub fn solve_forced(
    pair: &LinearSystemPair,
    which: Which,
    b: Option<&ForcingCurve>,
    x0: &DVector<f64>,
    tol: f64,
) -> Result<ode::Solution> {
    let (l, a) = pair.system(which);
    if x0.len() != 2 * pair.d() {
        return Err(Error::Dimension("initial condition must have length 2d".into()));
    }
    if let Some(b) = b {
        if b.d != pair.d() {
            return Err(Error::Dimension("forcing dimension mismatch".into()));
        }
    }
    let f = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let at = a.value(t);
        let mut dx = at * (l.value(t) * x);
        if let Some(b) = b {
            dx += a.value(t) * b.value(t);
        }
        Ok(dx)
    };
    ode::integrate(f, x0, 0.0, pair.t_end(), tol)
}

/// Resolvent `Ψ_s^t` of the selected homogeneous system.
pub fn resolvent(
    pair: &LinearSystemPair,
    which: Which,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let (l, a) = pair.system(which);
    let n2 = 2 * pair.d();
    let mut z0 = DVector::zeros(n2 * n2);
    for i in 0..n2 {
        z0[i * n2 + i] = 1.0;
    }
    let f = |tt: f64, z: &DVector<f64>| -> Result<DVector<f64>> {
        let al = a.value(tt) * l.value(tt);
        let mut out = DVector::zeros(n2 * n2);
        for col in 0..n2 {
            let x = z.rows(col * n2, n2);
            let d = &al * x;
            out.rows_mut(col * n2, n2).copy_from(&d);
        }
        Ok(out)
    };
    let sol = ode::integrate(f, &z0, s, t, tol)?;
    let z = sol.eval(t);
    let mut m = DMatrix::zeros(n2, n2);
    for col in 0..n2 {
        for row in 0..n2 {
            m[(row, col)] = z[col * n2 + row];
        }
    }
    Ok(m)
}

fn upper_right(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    m.view((0, d), (d, d)).into_owned()
}

fn lower_right(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    m.view((d, d), (d, d)).into_owned()
}

fn lower_left(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    m.view((d, 0), (d, d)).into_owned()
}

/// The only possible conjugacy of the conformal form at time t:
/// `ℜ_t = [[I, 0], [(ãB̃)⁻¹(aCᵀ − ãC̃ᵀ), (a/ã)B̃⁻¹B]]`.
pub fn candidate_conjugacy(pair: &LinearSystemPair, t: f64) -> Result<DMatrix<f64>> {
    let d = pair.d();
    let lv = pair.l.value(t);
    let lt = pair.l_tilde.value(t);
    let a = pair.a.value(t);
    let at = pair.a_tilde.value(t);
    let b = upper_right(&lv, d);
    let bt = upper_right(&lt, d);
    let ct = lv.view((0, 0), (d, d)).into_owned(); // Cᵀ block
    let ctt = lt.view((0, 0), (d, d)).into_owned();
    let bt_inv = bt
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("B̃ singular at t = {t}")))?;
    let s = (1.0 / at) * &bt_inv * (a * ct - at * ctt);
    let alpha_block = (a / at) * &bt_inv * b;
    let mut r = DMatrix::identity(2 * d, 2 * d);
    r.view_mut((d, 0), (d, d)).copy_from(&s);
    r.view_mut((d, d), (d, d)).copy_from(&alpha_block);
    Ok(r)
}

/// Residuals of the conjugacy equation for a given curve `R_t`:
/// the ODE form `max ‖R' + aRL − ãL̃R‖` on the grid, and the equivalent
/// resolvent-comparison form `max ‖R_r Ψ_s^r − Ψ̃_s^r R_s‖` over sampled
/// `(s, r)` pairs.
#[derive(Debug, Clone)]
pub struct ConjugacyResiduals {
    pub ode_residual: f64,
    pub resolvent_residual: f64,
}

pub fn conjugacy_ode_residual(
    pair: &LinearSystemPair,
    r_curve: &MatrixCurve,
    tol: f64,
) -> Result<ConjugacyResiduals> {
    let n = r_curve.n_nodes();
    let mut ode_res = 0.0f64;
    for i in 0..n {
        let t = r_curve.grid_t(i);
        let r = r_curve.node(i);
        let rp = r_curve.derivative(t, 1);
        let a = pair.a.value(t);
        let at = pair.a_tilde.value(t);
        let res = rp + a * r * pair.l.value(t) - at * pair.l_tilde.value(t) * r;
        ode_res = ode_res.max(res.amax());
    }
    let t_end = pair.t_end();
    let samples = [0.0, 0.25 * t_end, 0.5 * t_end, 0.75 * t_end];
    let mut resolvent_res = 0.0f64;
    for &s in &samples {
        for &r in &samples {
            if r <= s {
                continue;
            }
            let psi = resolvent(pair, Which::Plain, s, r, tol)?;
            let psi_t = resolvent(pair, Which::Tilde, s, r, tol)?;
            let rr = r_curve.value(r);
            let rs = r_curve.value(s);
            resolvent_res = resolvent_res.max((rr * psi - psi_t * rs).amax());
        }
    }
    Ok(ConjugacyResiduals {
        ode_residual: ode_res,
        resolvent_residual: resolvent_res,
    })
}

/// The recursion `M₁ = I`, `M_{n+1} = M_n' + a M_n L`, returned as the
/// curves `M₂ … M_{n_max}` on the grid of L.
pub fn m_sequence(
    l: &HamiltonianCurve,
    a: &ScalarCurve,
    n_max: usize,
) -> Result<Vec<MatrixCurve>> {
    if n_max < 2 {
        return Err(Error::InvalidInput("n_max must be at least 2".into()));
    }
    if n_max > STENCIL - 2 {
        return Err(Error::Capability(format!(
            "derivative order {} exceeds the stencil capability",
            n_max - 1
        )));
    }
    let n_nodes = l.n_nodes();
    let t_end = l.t_end();
    let two_d = 2 * l.d;
    let mut out: Vec<MatrixCurve> = Vec::new();
    let mut current = MatrixCurve::new(
        t_end,
        vec![DMatrix::identity(two_d, two_d); n_nodes],
    )?;
    for _ in 2..=n_max {
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let t = current.grid_t(i);
            let node = current.derivative(t, 1) + a.node(i) * current.node(i) * l.node(i);
            nodes.push(node);
        }
        let next = MatrixCurve::new(t_end, nodes)?;
        out.push(next.clone());
        current = next;
    }
    Ok(out)
}

/// Upper-right d×d block of `a(t)·M(t)` at grid node i (the observable
/// object of the M_n necessary conditions).
pub fn m_block(a: &ScalarCurve, m: &MatrixCurve, d: usize, i: usize) -> DMatrix<f64> {
    upper_right(&(a.node(i) * m.node(i)), d)
}

/// Residuals of the three structural conditions.
#[derive(Debug, Clone)]
pub struct ThreeConditions {
    /// Total variation of ã/a over the grid.
    pub cond1_residual: f64,
    /// Max over nodes of `‖lower-right(ℜ) − (ã/a)I‖ + ‖𝔰 − 𝔰ᵀ‖`.
    pub cond2_residual: f64,
    /// Conjugacy ODE residual of the assembled ℜ_t curve.
    pub cond3_residual: f64,
    pub cond1_pass: bool,
    pub cond2_pass: bool,
    pub cond3_pass: bool,
}

/// Evaluate the three conditions at decision threshold `threshold`
/// (construction-quality pairs sit several orders below it).
pub fn check_three_conditions(pair: &LinearSystemPair, threshold: f64) -> Result<ThreeConditions> {
    let d = pair.d();
    let n = pair.l.n_nodes();
    let t_end = pair.t_end();
    let ratio = ScalarCurve::new(
        t_end,
        (0..n)
            .map(|i| pair.a_tilde.node(i) / pair.a.node(i))
            .collect(),
    )?;
    let cond1_residual = ratio.total_variation();
    let mut cond2_residual = 0.0f64;
    let mut r_nodes = Vec::with_capacity(n);
    for i in 0..n {
        let t = pair.l.grid_t(i);
        let r = candidate_conjugacy(pair, t)?;
        let alpha = ratio.node(i);
        let lr = lower_right(&r, d);
        let s = lower_left(&r, d);
        let defect = (lr - alpha * DMatrix::identity(d, d)).amax() + (&s - s.transpose()).amax();
        cond2_residual = cond2_residual.max(defect);
        r_nodes.push(r);
    }
    let r_curve = MatrixCurve::new(t_end, r_nodes)?;
    let resid = conjugacy_ode_residual(pair, &r_curve, 1e-10)?;
    let cond3_residual = resid.ode_residual;
    Ok(ThreeConditions {
        cond1_residual,
        cond2_residual,
        cond3_residual,
        cond1_pass: cond1_residual <= threshold,
        cond2_pass: cond2_residual <= threshold,
        cond3_pass: cond3_residual <= threshold,
    })
}

/// Max over the ensemble and over the grid of `‖π(x) − π(x̃)‖`, where
/// both forced systems start from 0 and π keeps the first d components.
pub fn projection_agreement(
    pair: &LinearSystemPair,
    ensemble: &[ForcingCurve],
    tol: f64,
) -> Result<f64> {
    let d = pair.d();
    let x0 = DVector::zeros(2 * d);
    let mut worst = 0.0f64;
    for b in ensemble {
        let x = solve_forced(pair, Which::Plain, Some(b), &x0, tol)?;
        let xt = solve_forced(pair, Which::Tilde, Some(b), &x0, tol)?;
        let samples = 200;
        for i in 0..=samples {
            let t = pair.t_end() * i as f64 / samples as f64;
            let diff = x.eval(t).rows(0, d) - xt.eval(t).rows(0, d);
            worst = worst.max(diff.amax());
        }
    }
    Ok(worst)
}

/// Converse construction: given `(L, a)`, a constant conformal factor α
/// and a symmetric lower-left seed s0 (optionally modulated in time by a
/// smooth scalar), build `ℜ_t = [[I, 0], [𝔰_t, αI]]` and the conjugate
/// system `L̃ = (ℜ'ℜ⁻¹ + aℜLℜ⁻¹)/ã` with `ã = α·a`. The output pair
/// satisfies all three conditions by construction; loss of the
/// Hamiltonian structure of L̃ is reported as an error.
pub fn build_conjugate_pair(
    l: &HamiltonianCurve,
    a: &ScalarCurve,
    alpha: f64,
    s0: &DMatrix<f64>,
    s_mod: Option<&ScalarCurve>,
) -> Result<LinearSystemPair> {
    let d = l.d;
    if alpha == 0.0 {
        return Err(Error::InvalidInput("conformal factor must be nonzero".into()));
    }
    if s0.nrows() != d || s0.ncols() != d {
        return Err(Error::Dimension("s0 must be d×d".into()));
    }
    if (s0 - s0.transpose()).amax() > 1e-12 {
        return Err(Error::InvalidInput("s0 must be symmetric".into()));
    }
    let n = l.n_nodes();
    let t_end = l.t_end();
    let sig = |t: f64| s_mod.map_or(1.0, |c| c.value(t));
    let sig_p = |t: f64| s_mod.map_or(0.0, |c| c.derivative(t, 1));
    let mut lt_nodes = Vec::with_capacity(n);
    for i in 0..n {
        let t = l.grid_t(i);
        let s = sig(t) * s0;
        let sp = sig_p(t) * s0;
        let mut r = DMatrix::identity(2 * d, 2 * d);
        r.view_mut((d, 0), (d, d)).copy_from(&s);
        r.view_mut((d, d), (d, d))
            .copy_from(&(alpha * DMatrix::identity(d, d)));
        // ℜ⁻¹ = [[I, 0], [−𝔰/α, I/α]]
        let mut r_inv = DMatrix::identity(2 * d, 2 * d);
        r_inv.view_mut((d, 0), (d, d)).copy_from(&(-(&s) / alpha));
        r_inv
            .view_mut((d, d), (d, d))
            .copy_from(&(DMatrix::identity(d, d) / alpha));
        let mut rp = DMatrix::zeros(2 * d, 2 * d);
        rp.view_mut((d, 0), (d, d)).copy_from(&sp);
        let at = alpha * a.node(i);
        let lt = (&rp * &r_inv + a.node(i) * &r * l.node(i) * &r_inv) / at;
        // the proof guarantees the Hamiltonian structure; a violation here
        // means the construction is broken
        HamiltonianBlockMatrix::from_matrix(&lt, 1e-8).map_err(|e| {
            Error::Numerical(format!("constructed L̃ lost Hamiltonian structure: {e}"))
        })?;
        lt_nodes.push(lt);
    }
    let l_tilde = HamiltonianCurve::new(d, MatrixCurve::new(t_end, lt_nodes)?)?;
    let a_tilde = ScalarCurve::new(t_end, (0..n).map(|i| alpha * a.node(i)).collect())?;
    LinearSystemPair::new(l.clone(), l_tilde, a.clone(), a_tilde)
}

/// Random smooth Hamiltonian curve for experiments: trigonometric block
/// coefficients with `B = I + small symmetric oscillation` (invertible).
pub fn random_hamiltonian_curve<R: Rng>(
    d: usize,
    t_end: f64,
    n_nodes: usize,
    rng: &mut R,
) -> Result<HamiltonianCurve> {
    let sym_coeffs = |rng: &mut R| -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let mut c0 = DMatrix::zeros(d, d);
        let mut c1 = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v0 = rng.gen_range(-0.5..0.5);
                let v1 = rng.gen_range(-0.3..0.3);
                c0[(i, j)] = v0;
                c0[(j, i)] = v0;
                c1[(i, j)] = v1;
                c1[(j, i)] = v1;
            }
        }
        (c0, c1, rng.gen_range(0.0..std::f64::consts::TAU))
    };
    let (a0, a1, pa) = sym_coeffs(rng);
    let (b0, b1, pb) = sym_coeffs(rng);
    let c0 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5));
    let c1 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3));
    let pc = rng.gen_range(0.0..std::f64::consts::TAU);
    let w = std::f64::consts::TAU / t_end;
    HamiltonianCurve::from_fn(d, t_end, n_nodes, |t| {
        let a = &a0 + (w * t + pa).sin() * &a1;
        let b = DMatrix::identity(d, d) + &b0 * 0.4 + (w * t + pb).sin() * 0.3 * &b1;
        let c = &c0 + (w * t + pc).sin() * &c1;
        HamiltonianBlockMatrix { dim_d: d, a, b, c }.assemble()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sympmat;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = 161;

    fn constant_j_curve(d: usize) -> HamiltonianCurve {
        // L = J is Hamiltonian: J = [[0, I], [−I, 0]] has A = B = I, C = 0
        HamiltonianCurve::from_fn(d, 1.0, N, |_| sympmat::standard_j(d)).unwrap()
    }

    fn self_pair(d: usize) -> LinearSystemPair {
        let l = constant_j_curve(d);
        let a = ScalarCurve::constant(1.0, 1.0, N);
        LinearSystemPair::new(l.clone(), l, a.clone(), a).unwrap()
    }

    #[test]
    fn fd_weights_reproduce_derivatives() {
        // sample sin on a stencil, differentiate at an off-grid point
        let xs: Vec<f64> = (0..9).map(|i| 0.1 * i as f64).collect();
        let w = fd_weights(0.43, &xs, 3);
        let val: f64 = xs.iter().zip(&w[0]).map(|(x, c)| c * x.sin()).sum();
        let d1: f64 = xs.iter().zip(&w[1]).map(|(x, c)| c * x.sin()).sum();
        let d2: f64 = xs.iter().zip(&w[2]).map(|(x, c)| c * x.sin()).sum();
        let d3: f64 = xs.iter().zip(&w[3]).map(|(x, c)| c * x.sin()).sum();
        assert_abs_diff_eq!(val, 0.43f64.sin(), epsilon = 1e-10);
        assert_abs_diff_eq!(d1, 0.43f64.cos(), epsilon = 1e-8);
        assert_abs_diff_eq!(d2, -0.43f64.sin(), epsilon = 1e-6);
        assert_abs_diff_eq!(d3, -0.43f64.cos(), epsilon = 1e-4);
    }

    #[test]
    fn scalar_curve_derivatives() {
        let c = ScalarCurve::from_fn(2.0, 201, |t| (1.5 * t).cos()).unwrap();
        assert_abs_diff_eq!(c.value(0.7), (1.05f64).cos(), epsilon = 1e-10);
        assert_abs_diff_eq!(c.derivative(0.7, 1), -1.5 * (1.05f64).sin(), epsilon = 1e-8);
    }

    #[test]
    fn forced_zero_input_stays_zero() {
        let pair = self_pair(1);
        let x0 = DVector::zeros(2);
        let sol = solve_forced(&pair, Which::Plain, None, &x0, 1e-10).unwrap();
        assert!(sol.eval(1.0).norm() <= 1e-12);
    }

    #[test]
    fn homogeneous_solution_matches_resolvent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::from_fn(1.0, N, |t| 1.0 + 0.3 * t).unwrap();
        let pair = LinearSystemPair::new(l.clone(), l, a.clone(), a).unwrap();
        let x0 = DVector::from_vec(vec![0.4, -0.7]);
        let sol = solve_forced(&pair, Which::Plain, None, &x0, 1e-11).unwrap();
        let psi = resolvent(&pair, Which::Plain, 0.0, 1.0, 1e-11).unwrap();
        assert!((sol.eval(1.0) - psi * x0).norm() <= 1e-8);
    }

    #[test]
    fn superposition_of_forcings() {
        let pair = self_pair(1);
        let b1 = ForcingCurve::new(1, 1.0, 0.3, 0.2, DVector::from_vec(vec![1.0])).unwrap();
        let b2 = ForcingCurve::new(1, 1.0, 0.6, 0.25, DVector::from_vec(vec![-0.7])).unwrap();
        let x0 = DVector::zeros(2);
        let s1 = solve_forced(&pair, Which::Plain, Some(&b1), &x0, 1e-11).unwrap();
        let s2 = solve_forced(&pair, Which::Plain, Some(&b2), &x0, 1e-11).unwrap();
        // same center is not required; sum realized by two separate solves
        // compared against a system forced by both via linearity of eval
        let both = ForcingCurve::new(1, 1.0, 0.3, 0.2, DVector::from_vec(vec![1.0])).unwrap();
        let _ = both;
        // direct superposition check via a third solve on b1 + b2 is not
        // expressible with one ForcingCurve; verify on the shifted sum instead
        let sum_at = |t: f64| s1.eval(t) + s2.eval(t);
        // x1 + x2 solves the system forced by b1 + b2: check the ODE residual
        let (l, a) = (&pair.l, &pair.a);
        for &t in &[0.2, 0.5, 0.8] {
            let h = 1e-5;
            let deriv = (sum_at(t + h) - sum_at(t - h)) / (2.0 * h);
            let expected = a.value(t) * (l.value(t) * sum_at(t) + b1.value(t) + b2.value(t));
            assert!((deriv - expected).norm() <= 1e-5, "t = {t}");
        }
    }

    #[test]
    fn resolvent_identity_and_rotation() {
        let pair = self_pair(1);
        let id = resolvent(&pair, Which::Plain, 0.4, 0.4, 1e-11).unwrap();
        assert!((id - DMatrix::identity(2, 2)).amax() <= 1e-12);
        // L = J constant, a = 1: Ψ_s^t = e^{(t−s)J}, J = [[0,1],[−1,0]]
        let psi = resolvent(&pair, Which::Plain, 0.2, 0.9, 1e-11).unwrap();
        let th: f64 = 0.7;
        let expected = DMatrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
        assert!((psi - expected).amax() <= 1e-9);
    }

    #[test]
    fn resolvent_cocycle_and_symplecticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = random_hamiltonian_curve(2, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::from_fn(1.0, N, |t| -1.0 - 0.2 * (3.0 * t).sin()).unwrap();
        let pair = LinearSystemPair::new(l.clone(), l, a.clone(), a).unwrap();
        let p01 = resolvent(&pair, Which::Plain, 0.0, 0.5, 1e-11).unwrap();
        let p12 = resolvent(&pair, Which::Plain, 0.5, 1.0, 1e-11).unwrap();
        let p02 = resolvent(&pair, Which::Plain, 0.0, 1.0, 1e-11).unwrap();
        assert!((&p12 * &p01 - &p02).amax() <= 1e-8);
        assert!(sympmat::symplectic_residual(&p02).unwrap() <= 1e-8);
    }

    #[test]
    fn candidate_conjugacy_self_pair_is_identity() {
        let pair = self_pair(2);
        let r = candidate_conjugacy(&pair, 0.5).unwrap();
        assert!((r - DMatrix::identity(4, 4)).amax() <= 1e-10);
    }

    #[test]
    fn built_pair_recovers_its_conjugacy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::from_fn(1.0, N, |t| 1.0 + 0.25 * (2.0 * t).cos()).unwrap();
        let s0 = DMatrix::from_element(1, 1, 0.3);
        let pair = build_conjugate_pair(&l, &a, -1.0, &s0, None).unwrap();
        let r = candidate_conjugacy(&pair, 0.37).unwrap();
        let mut expected = DMatrix::identity(2, 2);
        expected[(1, 0)] = 0.3;
        expected[(1, 1)] = -1.0;
        assert!((r - expected).amax() <= 1e-9);
        // B̃ = (a²/ã²) B = B/α²
        let b = upper_right(&pair.l.value(0.37), 1);
        let bt = upper_right(&pair.l_tilde.value(0.37), 1);
        assert!((bt - b).amax() <= 1e-9);
    }

    #[test]
    fn mechanical_sign_case_lower_right_block() {
        // a = −ã: lower-right block of ℜ is −I
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = random_hamiltonian_curve(2, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::constant(1.0, 1.0, N);
        let pair = build_conjugate_pair(&l, &a, -1.0, &DMatrix::zeros(2, 2), None).unwrap();
        let r = candidate_conjugacy(&pair, 0.6).unwrap();
        assert!((lower_right(&r, 2) + DMatrix::identity(2, 2)).amax() <= 1e-9);
    }

    #[test]
    fn conjugacy_residuals_construction_and_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::from_fn(1.0, N, |t| 1.0 + 0.2 * t).unwrap();
        let s0 = DMatrix::from_element(1, 1, -0.4);
        let pair = build_conjugate_pair(&l, &a, 2.0, &s0, None).unwrap();
        let r_nodes: Vec<DMatrix<f64>> = (0..N)
            .map(|i| candidate_conjugacy(&pair, pair.l.grid_t(i)).unwrap())
            .collect();
        let r_curve = MatrixCurve::new(1.0, r_nodes).unwrap();
        let res = conjugacy_ode_residual(&pair, &r_curve, 1e-10).unwrap();
        assert!(res.ode_residual <= 1e-7, "ode {:.3e}", res.ode_residual);
        assert!(
            res.resolvent_residual <= 1e-7,
            "resolvent {:.3e}",
            res.resolvent_residual
        );

        // R ≡ I with L̃ ≠ L: both residual forms bounded away from 0
        let l2 = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let generic =
            LinearSystemPair::new(l.clone(), l2, a.clone(), a.clone()).unwrap();
        let id_curve =
            MatrixCurve::new(1.0, vec![DMatrix::identity(2, 2); N]).unwrap();
        let res2 = conjugacy_ode_residual(&generic, &id_curve, 1e-10).unwrap();
        assert!(res2.ode_residual > 1e-2);
        assert!(res2.resolvent_residual > 1e-4);
    }

    #[test]
    fn m_sequence_first_step_and_constant_case() {
        let l = constant_j_curve(1);
        let a = ScalarCurve::constant(1.0, 1.0, N);
        let ms = m_sequence(&l, &a, 4).unwrap();
        // M₂ = aL = J
        assert!((ms[0].node(N / 2) - sympmat::standard_j(1)).amax() <= 1e-8);
        // constant L, a ≡ 1: M_n = L^{n−1}
        let j = sympmat::standard_j(1);
        assert!((ms[1].node(N / 2) - &j * &j).amax() <= 1e-6);
        assert!((ms[2].node(N / 2) - &j * &j * &j).amax() <= 1e-5);
    }

    #[test]
    fn m_sequence_depth_capability() {
        let l = constant_j_curve(1);
        let a = ScalarCurve::constant(1.0, 1.0, N);
        assert!(matches!(
            m_sequence(&l, &a, 12),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn three_conditions_pass_and_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let l = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::constant(1.0, 1.0, N);
        let good = build_conjugate_pair(&l, &a, 1.5, &DMatrix::from_element(1, 1, 0.2), None)
            .unwrap();
        let c = check_three_conditions(&good, 1e-4).unwrap();
        assert!(c.cond1_pass && c.cond2_pass && c.cond3_pass, "{c:?}");

        // ã/a = 1 + t violates condition 1 with residual ≈ T
        let a_tilde = ScalarCurve::from_fn(1.0, N, |t| 1.0 + t).unwrap();
        let bad1 = LinearSystemPair::new(l.clone(), l.clone(), a.clone(), a_tilde).unwrap();
        let c1 = check_three_conditions(&bad1, 1e-4).unwrap();
        assert!(!c1.cond1_pass);
        assert_abs_diff_eq!(c1.cond1_residual, 1.0, epsilon = 1e-9);

        // L = L̃, a = ã: everything passes with ℜ = I
        let trivial = LinearSystemPair::new(l.clone(), l.clone(), a.clone(), a.clone()).unwrap();
        let ct = check_three_conditions(&trivial, 1e-4).unwrap();
        assert!(ct.cond1_pass && ct.cond2_pass && ct.cond3_pass);
    }

    #[test]
    fn projection_agreement_built_pair_and_empty_ensemble() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = random_hamiltonian_curve(1, 1.0, N, &mut rng).unwrap();
        let a = ScalarCurve::from_fn(1.0, N, |t| 1.0 + 0.1 * (4.0 * t).sin()).unwrap();
        let pair = build_conjugate_pair(&l, &a, -2.0, &DMatrix::from_element(1, 1, 0.5), None)
            .unwrap();
        assert_eq!(projection_agreement(&pair, &[], 1e-10).unwrap(), 0.0);
        let ensemble: Vec<ForcingCurve> = (0..5)
            .map(|_| {
                let c = rng.gen_range(0.25..0.75);
                let w = rng.gen_range(0.1..0.2);
                ForcingCurve::new(1, 1.0, c, w, DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]))
                    .unwrap()
            })
            .collect();
        let disc = projection_agreement(&pair, &ensemble, 1e-10).unwrap();
        assert!(disc <= 1e-7, "discrepancy {disc:.3e}");
    }

    #[test]
    fn forcing_support_validation() {
        assert!(ForcingCurve::new(1, 1.0, 0.05, 0.2, DVector::from_vec(vec![1.0])).is_err());
        assert!(ForcingCurve::new(1, 1.0, 0.95, 0.2, DVector::from_vec(vec![1.0])).is_err());
        let b = ForcingCurve::new(1, 1.0, 0.5, 0.2, DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(b.value(0.1).norm(), 0.0);
        assert_eq!(b.value(0.5)[0], 0.0);
        assert!(b.value(0.5)[1] > 0.0);
    }
}
