//! Small dense complex matrices: Hermitian eigendecomposition, partial
//! transpose, matrix exponentials and density-matrix validity checks.
//!
//! Everything here works on matrices of dimension at most a few tens, so the
//! algorithms favour robustness over asymptotic speed (cyclic Jacobi for the
//! Hermitian eigenproblem, Taylor series with scaling and squaring for the
//! exponential).

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{validation, Result};

/// Tolerance used when validating user-supplied matrices.
pub const VALIDATION_TOL: f64 = 1e-10;
/// Maximum trace/Hermiticity/positivity drift accepted along trajectories.
pub const TRAJECTORY_TOL: f64 = 1e-9;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries; fails on a non-square length
    /// or non-finite entries.
    pub fn from_rows(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return validation(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            ));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return validation("matrix entries must be finite");
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = c(d);
        }
        m
    }

    /// The matrix unit |row⟩⟨col|.
    pub fn unit(dim: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(row, col)] = ONE;
        m
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &[Complex64], b: &[Complex64]) -> Self {
        assert_eq!(a.len(), b.len());
        let dim = a.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = a[i] * b[j].conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        let n = self.dim;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(j, i)] = self[(i, j)];
            }
        }
        m
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        &(self * other) + &(other * self)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm1(&self) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|j| (0..n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol * self.max_abs().max(1.0)
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim;
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Column-stacked vectorisation: element (k, l) lands at `k + dim * l`.
    pub fn vectorize(&self) -> Vec<Complex64> {
        let n = self.dim;
        let mut v = vec![ZERO; n * n];
        for k in 0..n {
            for l in 0..n {
                v[k + n * l] = self[(k, l)];
            }
        }
        v
    }

    /// Inverse of [`ComplexMatrix::vectorize`].
    pub fn unvectorize(v: &[Complex64]) -> Self {
        let n = (v.len() as f64).sqrt().round() as usize;
        assert_eq!(n * n, v.len(), "vector length is not a square");
        let mut m = Self::zeros(n);
        for k in 0..n {
            for l in 0..n {
                m[(k, l)] = v[k + n * l];
            }
        }
        m
    }

    /// `U · self · U†`
    pub fn conjugate_by(&self, u: &Self) -> Self {
        &(u * self) * &u.dagger()
    }

    /// Solves `self · X = rhs` by LU with partial pivoting. Returns `None` for
    /// a numerically singular matrix.
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        let n = self.dim;
        assert_eq!(rhs.dim, n);
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
                .expect("non-empty range");
            if a[(pivot, k)].norm() <= 1e-14 * scale {
                return None;
            }
            if pivot != k {
                for j in 0..n {
                    a.data.swap(k * n + j, pivot * n + j);
                    b.data.swap(k * n + j, pivot * n + j);
                }
            }
            let inv = ONE / a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] * inv;
                if f == ZERO {
                    continue;
                }
                for j in k..n {
                    let t = a[(k, j)];
                    a[(i, j)] -= f * t;
                }
                for j in 0..n {
                    let t = b[(k, j)];
                    b[(i, j)] -= f * t;
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..n {
                let mut acc = b[(k, j)];
                for i in (k + 1)..n {
                    acc -= a[(k, i)] * b[(i, j)];
                }
                b[(k, j)] = acc / a[(k, k)];
            }
        }
        Some(b)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let n = self.dim;
        assert_eq!(n, rhs.dim);
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.6e}{:+.6e}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns).
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// The i-th eigenvector.
    pub fn vector(&self, i: usize) -> Vec<Complex64> {
        let n = self.vectors.dim();
        (0..n).map(|r| self.vectors[(r, i)]).collect()
    }

    /// `V · diag(λ) · V†`
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = ComplexMatrix::from_real_diagonal(&self.values);
        d.conjugate_by(&self.vectors)
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi sweeps.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_hermitian(VALIDATION_TOL) {
        return validation(format!(
            "hermitian_eigen: matrix is not Hermitian (defect {:e})",
            m.hermiticity_defect()
        ));
    }
    let n = m.dim();
    let mut a = m.clone();
    // symmetrise exactly
    for i in 0..n {
        a[(i, i)] = c(a[(i, i)].re);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = a.max_abs();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let phase = apq / mag;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // J = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let j_pp = c(cs);
                let j_pq = c(sn);
                let j_qp = phase.conj() * (-sn);
                let j_qq = phase.conj() * cs;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * j_pp + akq * j_qp;
                    a[(k, q)] = akp * j_pq + akq * j_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = j_pp.conj() * apk + j_qp.conj() * aqk;
                    a[(q, k)] = j_pq.conj() * apk + j_qq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = c(a[(p, p)].re);
                a[(q, q)] = c(a[(q, q)].re);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * j_pp + vkq * j_qp;
                    v[(k, q)] = vkp * j_pq + vkq * j_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = ComplexMatrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok(HermitianEigen { values, vectors })
}

/// `exp(A)` by scaling and squaring around a truncated Taylor series.
pub fn expm(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let norm = a.norm1();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(c(0.5f64.powi(squarings as i32)));
    let mut result = ComplexMatrix::identity(n);
    let mut term = ComplexMatrix::identity(n);
    for k in 1..40 {
        term = (&term * &scaled).scale(c(1.0 / k as f64));
        result = &result + &term;
        if term.max_abs() <= 1e-18 * result.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `exp(A) · v` without forming the exponential: the interval is split into
/// substeps of norm at most one and a Taylor series is summed on the vector.
pub fn expm_apply(a: &ComplexMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let norm = a.norm1();
    let substeps = norm.ceil().max(1.0) as usize;
    let inv = 1.0 / substeps as f64;
    let mut out = v.to_vec();
    for _ in 0..substeps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..40 {
            term = a.apply(&term);
            let f = inv / k as f64;
            let mut size: f64 = 0.0;
            for (t, s) in term.iter_mut().zip(acc.iter_mut()) {
                *t *= f;
                *s += *t;
                size = size.max(t.norm());
            }
            let total = acc.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if size <= 1e-18 * total.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        out = acc;
    }
    out
}

/// Ordering of the basis a density matrix is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Basis {
    /// |e,0⟩, |g,1⟩, |g,0⟩
    Bare,
    /// |Ω₊⟩, |Ω₋⟩, |Ω₀⟩
    Dressed,
    /// |e,1⟩, |e,0⟩, |g,1⟩, |g,0⟩ (atom ⊗ photon, excited/one first)
    Bare4,
}

impl Basis {
    pub fn dim(self) -> usize {
        match self {
            Basis::Bare | Basis::Dressed => 3,
            Basis::Bare4 => 4,
        }
    }
}

/// Deviations of a matrix from being a valid density matrix.
#[derive(Clone, Copy, Debug)]
pub struct Validity {
    pub trace_drift: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl Validity {
    pub fn within(&self, tol: f64) -> bool {
        self.trace_drift <= tol && self.hermiticity_defect <= tol && self.min_eigenvalue >= -tol
    }
}

/// Trace-one, Hermitian, positive matrix tagged with its basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    basis: Basis,
}

impl DensityMatrix {
    /// Validated constructor.
    pub fn new(matrix: ComplexMatrix, basis: Basis) -> Result<Self> {
        if matrix.dim() != basis.dim() {
            return validation(format!(
                "{:?} basis needs dimension {}, got {}",
                basis,
                basis.dim(),
                matrix.dim()
            ));
        }
        let rho = Self { matrix, basis };
        let v = rho.validity();
        if v.hermiticity_defect > VALIDATION_TOL {
            return validation(format!(
                "density matrix not Hermitian (defect {:e})",
                v.hermiticity_defect
            ));
        }
        if v.trace_drift > VALIDATION_TOL {
            return validation(format!("density matrix trace off by {:e}", v.trace_drift));
        }
        if v.min_eigenvalue < -VALIDATION_TOL {
            return validation(format!(
                "density matrix not positive (min eigenvalue {:e})",
                v.min_eigenvalue
            ));
        }
        Ok(rho)
    }

    /// Skips validation; used for states produced by propagation, which are
    /// checked separately against [`TRAJECTORY_TOL`].
    pub fn new_unchecked(matrix: ComplexMatrix, basis: Basis) -> Self {
        debug_assert_eq!(matrix.dim(), basis.dim());
        Self { matrix, basis }
    }

    /// Projector onto basis state `index`.
    pub fn basis_state(basis: Basis, index: usize) -> Self {
        Self::new_unchecked(ComplexMatrix::unit(basis.dim(), index, index), basis)
    }

    /// The initial condition |e,0⟩⟨e,0| in the bare basis.
    pub fn excited_vacuum() -> Self {
        Self::basis_state(Basis::Bare, 0)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)]
    }

    pub fn population(&self, i: usize) -> f64 {
        self.matrix[(i, i)].re
    }

    pub fn validity(&self) -> Validity {
        let m = &self.matrix;
        let trace_drift = (m.trace() - ONE).norm();
        let hermiticity_defect = m.hermiticity_defect();
        // eigenvalues of the Hermitian part
        let h = (m + &m.dagger()).scale(c(0.5));
        let min_eigenvalue = hermitian_eigen(&h)
            .map(|e| *e.values.last().expect("non-empty spectrum"))
            .unwrap_or(f64::NEG_INFINITY);
        Validity {
            trace_drift,
            hermiticity_defect,
            min_eigenvalue,
        }
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }
}

/// Partial transpose of a two-qubit (atom ⊗ photon) state on the photon
/// index, giving the block layout in which the |e,0⟩–|g,1⟩ coherence moves to
/// the |e,1⟩–|g,0⟩ corners. The spectrum equals that of the atom-index
/// transpose (the two differ by a full transpose).
pub fn partial_transpose(rho4: &ComplexMatrix) -> Result<ComplexMatrix> {
    if rho4.dim() != 4 {
        return validation(format!(
            "partial_transpose needs a 4x4 matrix, got {}x{}",
            rho4.dim(),
            rho4.dim()
        ));
    }
    // index = 2 * atom_bit + photon_bit with bit 1 = first basis vector,
    // so Bare4 order |e1⟩,|e0⟩,|g1⟩,|g0⟩ maps to indices 0..3 as (a, p) =
    // (0,0),(0,1),(1,0),(1,1) in "position" coordinates.
    let mut out = ComplexMatrix::zeros(4);
    for a1 in 0..2 {
        for p1 in 0..2 {
            for a2 in 0..2 {
                for p2 in 0..2 {
                    out[(2 * a1 + p1, 2 * a2 + p2)] = rho4[(2 * a1 + p2, 2 * a2 + p1)];
                }
            }
        }
    }
    Ok(out)
}
