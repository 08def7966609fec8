//! Linear algebra of symplectic, Hamiltonian, antisymplectic and
//! R-reversible matrices, and the classifier for the degenerate set Υ
//! (eigenvalue at a root of unity, or a double eigenvalue).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The standard symplectic matrix `J = [[0, I], [-I, 0]]` of size `2d`.
pub fn standard_j(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// `R₀ : (q, p) ↦ (q, -p)`.
pub fn r0(d: usize) -> DMatrix<f64> {
    let mut r = DMatrix::identity(2 * d, 2 * d);
    for i in 0..d {
        r[(d + i, d + i)] = -1.0;
    }
    r
}

/// `R₁ : (q, p) ↦ (p, q)`.
pub fn r1(d: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        r[(i, d + i)] = 1.0;
        r[(d + i, i)] = 1.0;
    }
    r
}

fn check_even_square(m: &DMatrix<f64>) -> Result<usize> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "expected even size, got {}",
            m.nrows()
        )));
    }
    Ok(m.nrows() / 2)
}

/// `‖MᵀJM − J‖_∞ ≤ tol`?
pub fn is_symplectic(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let d = check_even_square(m)?;
    let j = standard_j(d);
    Ok((m.transpose() * &j * m - &j).amax() <= tol)
}

pub fn symplectic_residual(m: &DMatrix<f64>) -> Result<f64> {
    let d = check_even_square(m)?;
    let j = standard_j(d);
    Ok((m.transpose() * &j * m - &j).amax())
}

/// Both defining residuals of 𝐀(2d): `(‖R² − I‖_∞, ‖RᵀJR + J‖_∞)`.
pub fn involution_residuals(r: &DMatrix<f64>) -> Result<(f64, f64)> {
    let d = check_even_square(r)?;
    let n = 2 * d;
    let j = standard_j(d);
    let inv = (r * r - DMatrix::identity(n, n)).amax();
    let anti = (r.transpose() * &j * r + &j).amax();
    Ok((inv, anti))
}

/// Membership in 𝐀(2d): `R² = I`, `RᵀJR = −J`, both eigenspaces of
/// dimension d.
pub fn is_antisymplectic_involution(r: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let d = check_even_square(r)?;
    let (inv, anti) = involution_residuals(r)?;
    if inv > tol || anti > tol {
        return Ok(false);
    }
    let e1 = eigenspace_basis(r, 1.0);
    let em1 = eigenspace_basis(r, -1.0);
    Ok(e1.ncols() == d && em1.ncols() == d)
}

/// A validated element of Sp(2d).
#[derive(Debug, Clone)]
pub struct SymplecticMatrix {
    dim_d: usize,
    entries: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn new(entries: DMatrix<f64>, tol: f64) -> Result<Self> {
        let d = check_even_square(&entries)?;
        let res = symplectic_residual(&entries)?;
        if res > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not symplectic: residual {res:.3e} > {tol:.3e}"
            )));
        }
        if entries.determinant() <= 0.0 {
            return Err(Error::InvalidInput("matrix has non-positive determinant".into()));
        }
        Ok(Self { dim_d: d, entries })
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }
}

/// A validated element of 𝐀(2d).
#[derive(Debug, Clone)]
pub struct AntisymplecticInvolution {
    dim_d: usize,
    entries: DMatrix<f64>,
}

impl AntisymplecticInvolution {
    pub fn new(entries: DMatrix<f64>, tol: f64) -> Result<Self> {
        let d = check_even_square(&entries)?;
        if !is_antisymplectic_involution(&entries, tol)? {
            let (inv, anti) = involution_residuals(&entries)?;
            return Err(Error::InvalidInput(format!(
                "not an antisymplectic involution (residuals {inv:.3e}, {anti:.3e})"
            )));
        }
        Ok(Self { dim_d: d, entries })
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Hamiltonian matrix in block form `[[Cᵀ, B], [−A, −C]]` with A, B
/// symmetric.
#[derive(Debug, Clone)]
pub struct HamiltonianBlockMatrix {
    pub dim_d: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl HamiltonianBlockMatrix {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, tol: f64) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || b.nrows() != d || b.ncols() != d || c.nrows() != d || c.ncols() != d {
            return Err(Error::Dimension("blocks must all be d×d".into()));
        }
        let sym_a = (&a - a.transpose()).amax();
        let sym_b = (&b - b.transpose()).amax();
        if sym_a > tol || sym_b > tol {
            return Err(Error::InvalidInput(format!(
                "A or B block not symmetric (residuals {sym_a:.3e}, {sym_b:.3e})"
            )));
        }
        Ok(Self { dim_d: d, a, b, c })
    }

    /// Assemble the full 2d×2d matrix `[[Cᵀ, B], [−A, −C]]`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let d = self.dim_d;
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.c.transpose());
        m.view_mut((0, d), (d, d)).copy_from(&self.b);
        m.view_mut((d, 0), (d, d)).copy_from(&(-&self.a));
        m.view_mut((d, d), (d, d)).copy_from(&(-&self.c));
        m
    }

    /// Extract blocks from a full 2d×2d Hamiltonian matrix.
    pub fn from_matrix(m: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let d = check_even_square(m)?;
        let ct = m.view((0, 0), (d, d)).into_owned();
        let b = m.view((0, d), (d, d)).into_owned();
        let a = -m.view((d, 0), (d, d)).into_owned();
        let c_low = -m.view((d, d), (d, d)).into_owned();
        let consistency = (&ct.transpose() - &c_low).amax();
        if consistency > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not Hamiltonian: block consistency {consistency:.3e}"
            )));
        }
        Self::new(a, b, ct.transpose(), tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UpsilonReason {
    RootOfUnity { order: usize },
    DoubleEigenvalue,
    None,
}

/// Outcome of the Υ membership test, with the raw distances always
/// reported so that near-threshold cases are visible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpsilonVerdict {
    pub in_upsilon: bool,
    pub reason: UpsilonReason,
    pub min_root_distance: f64,
    pub min_eigenvalue_gap: f64,
    /// Discriminant of the characteristic polynomial, `∏_{i<j} (λᵢ−λⱼ)²`,
    /// reported as a cross-check on the pairwise-gap test.
    pub discriminant: f64,
}

/// Classify a symplectic matrix against Υ.
///
/// An eigenvalue λ is flagged when `|λᵏ − 1| ≤ root_tol` for some
/// `k ≤ k_max` (the minimal such k is reported); a double eigenvalue when
/// the minimal pairwise eigenvalue distance is ≤ `gap_tol`. The scan over
/// root orders is a documented truncation of the full (undecidable) set of
/// roots of unity.
pub fn classify_upsilon(
    m: &DMatrix<f64>,
    root_tol: f64,
    gap_tol: f64,
    k_max: usize,
) -> Result<UpsilonVerdict> {
    check_even_square(m)?;
    let eig = m.complex_eigenvalues();
    Ok(classify_spectrum(eig.as_slice(), root_tol, gap_tol, k_max))
}

/// Same test on an explicitly given spectrum; the pluggable entry point
/// for alternative degeneracy predicates.
pub fn classify_spectrum(
    eigs: &[Complex64],
    root_tol: f64,
    gap_tol: f64,
    k_max: usize,
) -> UpsilonVerdict {
    let mut min_root = f64::INFINITY;
    let mut root_order = None;
    for lam in eigs {
        let mut pw = Complex64::new(1.0, 0.0);
        for k in 1..=k_max.max(1) {
            pw *= lam;
            let dist = (pw - Complex64::new(1.0, 0.0)).norm();
            if dist < min_root {
                min_root = dist;
            }
            if dist <= root_tol {
                root_order = Some(match root_order {
                    Some(prev) if prev <= k => prev,
                    _ => k,
                });
                break;
            }
        }
    }
    let mut min_gap = f64::INFINITY;
    let mut disc = 1.0f64;
    for i in 0..eigs.len() {
        for j in (i + 1)..eigs.len() {
            let d = (eigs[i] - eigs[j]).norm();
            if d < min_gap {
                min_gap = d;
            }
            disc *= ((eigs[i] - eigs[j]) * (eigs[i] - eigs[j])).re;
        }
    }
    if eigs.len() < 2 {
        min_gap = f64::INFINITY;
    }
    let reason = if let Some(k) = root_order {
        UpsilonReason::RootOfUnity { order: k }
    } else if min_gap <= gap_tol {
        UpsilonReason::DoubleEigenvalue
    } else {
        UpsilonReason::None
    };
    UpsilonVerdict {
        in_upsilon: reason != UpsilonReason::None,
        reason,
        min_root_distance: min_root,
        min_eigenvalue_gap: min_gap,
        discriminant: disc,
    }
}

/// Conjugate `R ↦ M⁻¹ R M`; the Sp(2d) action on 𝐀(2d).
pub fn conjugate_involution(
    m: &SymplecticMatrix,
    r: &AntisymplecticInvolution,
) -> Result<AntisymplecticInvolution> {
    if m.dim_d() != r.dim_d() {
        return Err(Error::Dimension("dimension mismatch between M and R".into()));
    }
    let lu = m.entries().clone().lu();
    let m_inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Numerical("conjugating matrix is singular".into()))?;
    // guard against badly conditioned conjugations
    let cond = m.entries().amax() * m_inv.amax();
    if cond > 1e12 {
        return Err(Error::Numerical(format!(
            "conjugating matrix too ill-conditioned (cond ≈ {cond:.3e})"
        )));
    }
    let conj = &m_inv * r.entries() * m.entries();
    AntisymplecticInvolution::new(conj, 1e-6)
}

/// Orthonormal basis of the eigenspace of an involution for `λ = ±1`,
/// from the SVD of the spectral projector `(I ± R)/2`.
pub fn eigenspace_basis(r: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = r.nrows();
    let proj = (DMatrix::identity(n, n) + lambda.signum() * r) / 2.0;
    let svd = proj.svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let mut cols = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > 0.5 {
            cols.push(u.column(i).into_owned());
        }
    }
    DMatrix::from_columns(&cols)
}

/// Basis of the tangent space `{X : RX + XR = 0, RᵀJX + XᵀJR = 0}` of
/// 𝐀(2d) at R, from the SVD null space of the stacked linear system.
/// Its dimension must be d(d+1).
pub fn tangent_basis_a2d(r: &AntisymplecticInvolution) -> Result<Vec<DMatrix<f64>>> {
    let d = r.dim_d();
    let n = 2 * d;
    let nn = n * n;
    let j = standard_j(d);
    let rm = r.entries();
    let rtj = rm.transpose() * &j;
    // rows: the two matrix equations, unknown vec(X) (column-major)
    let mut sys = DMatrix::zeros(2 * nn, nn);
    for col in 0..n {
        for row in 0..n {
            let xi = col * n + row; // index of X[(row, col)]
            // eq 1: (R X)[(a, col)] picks R[(a, row)]; (X R)[(row, b)] picks R[(col, b)]
            for a in 0..n {
                sys[(a * n + col, xi)] += rm[(a, row)];
            }
            for b in 0..n {
                sys[(row * n + b, xi)] += rm[(col, b)];
            }
            // eq 2: RᵀJX + XᵀJR = 0; (RᵀJ X)[(a, col)] and (Xᵀ J R)[(col, a)] = Σ_k X[(k, col)] (JR)[(k, a)]
            let jr = &j * rm;
            for a in 0..n {
                sys[(nn + a * n + col, xi)] += rtj[(a, row)];
                sys[(nn + col * n + a, xi)] += jr[(row, a)];
            }
        }
    }
    let svd = sys.svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let mut basis = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            let v = vt.row(i);
            let mut x = DMatrix::zeros(n, n);
            for col in 0..n {
                for row in 0..n {
                    x[(row, col)] = v[col * n + row];
                }
            }
            basis.push(x);
        }
    }
    // nalgebra's thin SVD of a tall matrix only exposes min(rows, cols)
    // singular values, which is nn here, so every null direction is seen.
    let expected = d * (d + 1);
    if basis.len() != expected {
        return Err(Error::Numerical(format!(
            "tangent space of A(2d) has numerical dimension {} instead of {} — input R is broken",
            basis.len(),
            expected
        )));
    }
    Ok(basis)
}

/// Build a symplectic M with `M⁻¹ R M = R₁` from the Lagrangian eigenspace
/// pair of R (basis of E₁, ω-dual basis of E₋₁, then the fixed rotation
/// taking R₀ to R₁).
pub fn conjugator_to_r1(r: &AntisymplecticInvolution) -> Result<SymplecticMatrix> {
    let d = r.dim_d();
    let n = 2 * d;
    let j = standard_j(d);
    let u = eigenspace_basis(r.entries(), 1.0);
    let w0 = eigenspace_basis(r.entries(), -1.0);
    if u.ncols() != d || w0.ncols() != d {
        return Err(Error::InvalidInput(
            "eigenspace extraction failed: R is not a valid involution".into(),
        ));
    }
    // enforce ω(uᵢ, wⱼ) = δᵢⱼ
    let gram = u.transpose() * &j * &w0;
    let gram_inv = gram
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Lagrangian pair not transverse".into()))?;
    let w = &w0 * gram_inv;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (n, d)).copy_from(&u);
    p.view_mut((0, d), (n, d)).copy_from(&w);
    // P⁻¹ R P = R₀; compose with M₀ = (1/√2) [[I, I], [−I, I]] to reach R₁
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m0 = DMatrix::zeros(n, n);
    for i in 0..d {
        m0[(i, i)] = s;
        m0[(i, d + i)] = s;
        m0[(d + i, i)] = -s;
        m0[(d + i, d + i)] = s;
    }
    SymplecticMatrix::new(p * m0, 1e-7)
}

/// Construct an R-reversible symplectic matrix with prescribed simple
/// spectrum `{xᵢ, 1/xᵢ}` (requires `1 < x₁ < … < x_d`).
pub fn make_r_reversible(
    r: &AntisymplecticInvolution,
    x: &[f64],
) -> Result<SymplecticMatrix> {
    let d = r.dim_d();
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "expected {d} eigenvalue parameters, got {}",
            x.len()
        )));
    }
    for i in 0..d {
        if x[i] <= 1.0 {
            return Err(Error::InvalidInput("eigenvalue parameters must exceed 1".into()));
        }
        if i > 0 && x[i] <= x[i - 1] {
            return Err(Error::InvalidInput(
                "eigenvalue parameters must be strictly increasing".into(),
            ));
        }
    }
    let m = conjugator_to_r1(r)?;
    let n = 2 * d;
    let mut diag = DMatrix::zeros(n, n);
    for i in 0..d {
        diag[(i, i)] = x[i];
        diag[(d + i, d + i)] = 1.0 / x[i];
    }
    let m_inv = m
        .entries()
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("conjugator singular".into()))?;
    SymplecticMatrix::new(m.entries() * diag * m_inv, 1e-7)
}

/// Residual of R-reversibility: `‖(RL)² − I‖_∞`.
pub fn reversibility_residual(r: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let rl = r * l;
    (&rl * &rl - DMatrix::identity(r.nrows(), r.ncols())).amax()
}

/// A random Hamiltonian block matrix with entries uniform in [-1, 1].
pub fn random_hamiltonian_block<R: Rng>(d: usize, rng: &mut R) -> HamiltonianBlockMatrix {
    let sym = |rng: &mut R| {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for k in i..d {
                let v = rng.gen_range(-1.0..1.0);
                m[(i, k)] = v;
                m[(k, i)] = v;
            }
        }
        m
    };
    let a = sym(rng);
    let b = sym(rng);
    let c = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    HamiltonianBlockMatrix { dim_d: d, a, b, c }
}

/// A random symplectic matrix: the exponential of a random Hamiltonian
/// block matrix (exactly symplectic up to the accuracy of the matrix
/// exponential).
pub fn random_symplectic<R: Rng>(d: usize, rng: &mut R) -> SymplecticMatrix {
    let h = random_hamiltonian_block(d, rng).assemble();
    SymplecticMatrix::new(h.exp(), 1e-8).expect("exp of Hamiltonian matrix is symplectic")
}

/// Sampling experiment behind the emptiness-of-interior statement for
/// `Υ ∩ R𝐀(2d)`: draw random R-reversible matrices (spectrum construction
/// composed with random symplectic conjugations that preserve R𝐀(2d)) and
/// report the fraction classified inside Υ.
pub fn sample_upsilon_fraction_in_ra(
    r: &AntisymplecticInvolution,
    n_samples: usize,
    rng_seed: u64,
    root_tol: f64,
    gap_tol: f64,
    k_max: usize,
) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let d = r.dim_d();
    let mut hits = 0usize;
    for _ in 0..n_samples {
        // strictly ordered spectrum parameters > 1
        let mut x: Vec<f64> = (0..d).map(|_| 1.0 + rng.gen_range(0.05..2.0)).collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..d {
            if x[i] - x[i - 1] < 1e-3 {
                x[i] = x[i - 1] + 1e-3;
            }
        }
        let l = make_r_reversible(r, &x)?;
        // group action (M, L) ↦ R M⁻¹ R L M stays in R·A(2d)
        let m = random_symplectic(d, &mut rng);
        let m_inv = m
            .entries()
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("random symplectic singular".into()))?;
        let sample = r.entries() * m_inv * r.entries() * l.entries() * m.entries();
        let verdict = classify_upsilon(&sample, root_tol, gap_tol, k_max)?;
        if verdict.in_upsilon {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_samples.max(1) as f64)
}
