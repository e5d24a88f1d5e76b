//! Small dense complex matrices (dimension 2 to 16) and the Hermitian
//! spectral machinery used for every propagator in the crate.
//!
//! Exponentials are always taken through an eigendecomposition of a
//! Hermitian generator, so the resulting propagators are unitary to the
//! accuracy of the eigensolver and the eigenpairs can be reused for exact
//! derivatives of the exponential.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Relative tolerance for the Hermiticity check.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense row-major square complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
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
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = f(r, c);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries; fails unless `entries.len() == dim²`.
    pub fn from_row_major(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        Ok(Self { dim, data: entries })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = *v;
        }
        m
    }

    pub fn real_diag(values: &[f64]) -> Self {
        let v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::diag(&v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        Self::from_fn(n, |r, c| self.data[c * n + r].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// max |A - B| entrywise.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius inner product tr(A† B).
    pub fn inner(&self, other: &Self) -> C64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut dev: f64 = 0.0;
        for r in 0..n {
            for c in r..n {
                dev = dev.max((self.data[r * n + c] - self.data[c * n + r].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_deviation() <= HERMITIAN_TOL * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// max |U†U - 1| entrywise.
    pub fn unitarity_deviation(&self) -> f64 {
        (&self.adjoint() * self).max_abs_diff(&Self::identity(self.dim))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (n, m) = (self.dim, other.dim);
        Self::from_fn(n * m, |r, c| {
            self.data[(r / m) * n + c / m] * other.data[(r % m) * m + c % m]
        })
    }

    /// Sub-block selected by `indices` (rows and columns in the given order).
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let n = self.dim;
        Self::from_fn(indices.len(), |r, c| self.data[indices[r] * n + indices[c]])
    }

    /// Embeds `block` into a `dim`×`dim` zero matrix at `indices`.
    pub fn embed(block: &Self, dim: usize, indices: &[usize]) -> Self {
        assert_eq!(block.dim, indices.len());
        let mut m = Self::zeros(dim);
        for (r, &ir) in indices.iter().enumerate() {
            for (c, &ic) in indices.iter().enumerate() {
                m.data[ir * dim + ic] = block.data[r * block.dim + c];
            }
        }
        m
    }

    /// `self · v` for a column vector.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim;
        assert_eq!(v.len(), n);
        (0..n)
            .map(|r| (0..n).map(|c| self.data[r * n + c] * v[c]).sum())
            .collect()
    }

    /// Writes `a · b` into `self`, reusing its storage.
    pub fn mul_into(&mut self, a: &Self, b: &Self) {
        let n = a.dim;
        assert!(b.dim == n && self.dim == n);
        for r in 0..n {
            let row = &a.data[r * n..(r + 1) * n];
            for c in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += row[k] * b.data[k * n + c];
                }
                self.data[r * n + c] = acc;
            }
        }
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut out = Self::zeros(self.dim);
        out.mul_into(self, other);
        Ok(out)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.try_mul(rhs).expect("dimension mismatch in matrix product")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  ")?;
            for c in 0..self.dim {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson {
            dim: self.dim,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        if raw.re.len() != raw.im.len() {
            return Err(serde::de::Error::custom("re and im lengths differ"));
        }
        let entries = raw
            .re
            .iter()
            .zip(&raw.im)
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        ComplexMatrix::from_row_major(raw.dim, entries).map_err(serde::de::Error::custom)
    }
}

/// Eigendecomposition `H = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 60;

impl Eigh {
    /// Cyclic complex Jacobi. Eigenvalues are returned in ascending order.
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        let scale = h.max_abs();
        let dev = h.hermiticity_deviation();
        if dev > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NonHermitian { deviation: dev });
        }
        Ok(Self::new_unchecked(h))
    }

    /// Skips the Hermiticity check; the caller guarantees `h` is Hermitian.
    pub fn new_unchecked(h: &ComplexMatrix) -> Self {
        let n = h.dim;
        let mut a = h.data.clone();
        // symmetrize so rounding in the caller cannot bias the rotations
        for r in 0..n {
            a[r * n + r] = C64::new(a[r * n + r].re, 0.0);
            for c in (r + 1)..n {
                let avg = (a[r * n + c] + a[c * n + r].conj()) * 0.5;
                a[r * n + c] = avg;
                a[c * n + r] = avg.conj();
            }
        }
        let mut v = ComplexMatrix::identity(n);

        let diag_norm = |a: &[C64]| (0..n).map(|i| a[i * n + i].re.powi(2)).sum::<f64>();
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p * n + q].norm_sqr();
                }
            }
            if off <= 1e-34 * diag_norm(&a).max(off) || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    let mag = apq.norm();
                    if mag == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p].re;
                    let aqq = a[q * n + q].re;
                    if mag < 1e-300 || mag <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                        a[p * n + q] = ZERO;
                        a[q * n + p] = ZERO;
                        continue;
                    }
                    let ph = apq / mag;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // R: col p = (c, -s ph*), col q = (s ph, c) in the (p, q) plane.
                    let sph = ph * s;
                    let sphc = sph.conj();
                    // A <- A R (columns p, q)
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = akp * c - akq * sphc;
                        a[k * n + q] = akp * sph + akq * c;
                    }
                    // A <- R† A (rows p, q)
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = apk * c - aqk * sph;
                        a[q * n + k] = apk * sphc + aqk * c;
                    }
                    a[p * n + q] = ZERO;
                    a[q * n + p] = ZERO;
                    a[p * n + p] = C64::new(a[p * n + p].re, 0.0);
                    a[q * n + q] = C64::new(a[q * n + q].re, 0.0);
                    for k in 0..n {
                        let vkp = v.data[k * n + p];
                        let vkq = v.data[k * n + q];
                        v.data[k * n + p] = vkp * c - vkq * sphc;
                        v.data[k * n + q] = vkp * sph + vkq * c;
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[i * n + i].re.total_cmp(&a[j * n + j].re));
        let values = order.iter().map(|&i| a[i * n + i].re).collect();
        let vectors = ComplexMatrix::from_fn(n, |r, c| v.data[r * n + order[c]]);
        Self { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V f(λ) V†` for a scalar function of the eigenvalues.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let n = self.dim();
        let fv: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        ComplexMatrix::from_fn(n, |r, c| {
            (0..n).map(|k| v[(r, k)] * fv[k] * v[(c, k)].conj()).sum()
        })
    }

    /// exp(-i H t).
    pub fn propagator(&self, t: f64) -> ComplexMatrix {
        self.map(|l| C64::from_polar(1.0, -l * t))
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map(|l| C64::new(l, 0.0))
    }

    /// Divided differences of `λ ↦ exp(-iλt)`: the kernel Γ with
    /// `d exp(-iHt) = V (Γ ∘ V† dH V) V†`.
    pub fn exp_derivative_kernel(&self, t: f64) -> ComplexMatrix {
        let n = self.dim();
        let ph: Vec<C64> = self
            .values
            .iter()
            .map(|&l| C64::from_polar(1.0, -l * t))
            .collect();
        ComplexMatrix::from_fn(n, |i, j| {
            let (li, lj) = (self.values[i], self.values[j]);
            let d = li - lj;
            if d.abs() <= 1e-9 * (1.0 + li.abs().max(lj.abs())) {
                // derivative of exp(-iλt) at the midpoint
                let mid = C64::from_polar(1.0, -0.5 * (li + lj) * t);
                -I * t * mid
            } else {
                (ph[i] - ph[j]) / d
            }
        })
    }

    /// `V† A V`.
    pub fn to_eigenbasis(&self, a: &ComplexMatrix) -> ComplexMatrix {
        let v = &self.vectors;
        &(&v.adjoint() * a) * v
    }
}

/// exp(-i h t) for Hermitian `h` via its spectral decomposition.
pub fn expm_unitary(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite evolution time {t}")));
    }
    Ok(Eigh::new(h)?.propagator(t))
}

/// Time-ordered product: `ops[0]` acts first, so the result is
/// `ops[n-1] ··· ops[1] · ops[0]`.
pub fn matmul_chain(ops: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let first = ops
        .first()
        .ok_or_else(|| Error::Domain("empty operator chain".into()))?;
    let mut acc = first.clone();
    for op in &ops[1..] {
        acc = op.try_mul(&acc)?;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Half,
    One,
}

/// Spin operators in the Sz eigenbasis, ordered by decreasing magnetic
/// quantum number.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub spin: Spin,
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
}

impl SpinOps {
    pub fn dim(&self) -> usize {
        self.sz.dim()
    }

    pub fn identity(&self) -> ComplexMatrix {
        ComplexMatrix::identity(self.dim())
    }
}

pub fn spin_operators(spin: Spin) -> SpinOps {
    let m: Vec<f64> = match spin {
        Spin::Half => vec![0.5, -0.5],
        Spin::One => vec![1.0, 0.0, -1.0],
    };
    let s = match spin {
        Spin::Half => 0.5,
        Spin::One => 1.0,
    };
    let n = m.len();
    // <m+1| S+ |m> = sqrt(s(s+1) - m(m+1)); row index 0 holds the largest m.
    let mut splus = ComplexMatrix::zeros(n);
    for c in 1..n {
        let mc = m[c];
        splus[(c - 1, c)] = C64::new((s * (s + 1.0) - mc * (mc + 1.0)).sqrt(), 0.0);
    }
    let sminus = splus.adjoint();
    let sx = (&splus + &sminus).scale_real(0.5);
    let sy = (&splus - &sminus).scale(C64::new(0.0, -0.5));
    let sz = ComplexMatrix::real_diag(&m);
    SpinOps { spin, sx, sy, sz }
}


#[cfg(test)]
mod tests {
    use super::testutil::random_hermitian;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn spin_half_sz_and_commutator() {
        let s = spin_operators(Spin::Half);
        assert_eq!(s.sz, ComplexMatrix::real_diag(&[0.5, -0.5]));
        let lhs = s.sx.commutator(&s.sy);
        assert!(lhs.max_abs_diff(&s.sz.scale(I)) <= 1e-12);
    }

    #[test]
    fn spin_one_algebra() {
        let s = spin_operators(Spin::One);
        assert_eq!(s.sz, ComplexMatrix::real_diag(&[1.0, 0.0, -1.0]));
        assert!(s.sx.commutator(&s.sy).max_abs_diff(&s.sz.scale(I)) <= 1e-12);
        assert!(s.sy.commutator(&s.sz).max_abs_diff(&s.sx.scale(I)) <= 1e-12);
        assert!(s.sz.commutator(&s.sx).max_abs_diff(&s.sy.scale(I)) <= 1e-12);
        // Sx for spin one is the 3x3 block of the rotating-frame drive operator
        let r = 1.0 / 2f64.sqrt();
        let hx = ComplexMatrix::from_real_rows(&[&[0.0, r, 0.0], &[r, 0.0, r], &[0.0, r, 0.0]]);
        assert!(s.sx.max_abs_diff(&hx) <= 1e-15);
    }

    #[test]
    fn expm_zero_is_identity() {
        let u = expm_unitary(&ComplexMatrix::zeros(3), 0.7).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(3)) <= 1e-15);
    }

    #[test]
    fn expm_pi_rotation_about_x() {
        let s = spin_operators(Spin::Half);
        let h = s.sx.scale_real(2.0 * PI * 10.0);
        let u = expm_unitary(&h, 0.05).unwrap();
        let expected = s.sx.scale(C64::new(0.0, -2.0));
        assert!(u.max_abs_diff(&expected) <= 1e-12, "{u:?}");
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let mut h = ComplexMatrix::zeros(2);
        h[(0, 1)] = ONE;
        assert!(matches!(expm_unitary(&h, 1.0), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn random_nine_level_propagator_is_unitary() {
        let h = random_hermitian(9, 11);
        let u = expm_unitary(&h, 0.058).unwrap();
        assert!(u.unitarity_deviation() <= 1e-10);
    }

    #[test]
    fn chain_order_and_identities() {
        let id = ComplexMatrix::identity(2);
        assert_eq!(matmul_chain(&[id.clone(), id.clone(), id.clone()]).unwrap(), id);
        let a = random_hermitian(2, 3);
        assert_eq!(matmul_chain(std::slice::from_ref(&a)).unwrap(), a);

        let s = spin_operators(Spin::Half);
        let rx = |theta: f64| expm_unitary(&s.sx, theta).unwrap();
        let two = matmul_chain(&[rx(PI / 2.0), rx(PI / 2.0)]).unwrap();
        assert!(two.max_abs_diff(&rx(PI)) <= 1e-12);

        // first element acts first
        let b = random_hermitian(2, 4);
        let prod = matmul_chain(&[a.clone(), b.clone()]).unwrap();
        assert!(prod.max_abs_diff(&(&b * &a)) <= 1e-12);
    }

    #[test]
    fn chain_dimension_mismatch() {
        let r = matmul_chain(&[ComplexMatrix::identity(2), ComplexMatrix::identity(3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matrix_json_schema() {
        let m = ComplexMatrix::from_fn(2, |r, c| C64::new(r as f64, c as f64));
        let js = serde_json::to_value(&m).unwrap();
        assert_eq!(js["dim"], 2);
        assert_eq!(js["re"], serde_json::json!([0.0, 0.0, 1.0, 1.0]));
        assert_eq!(js["im"], serde_json::json!([0.0, 1.0, 0.0, 1.0]));
        let back: ComplexMatrix = serde_json::from_value(js).unwrap();
        assert_eq!(back, m);
        let bad = serde_json::json!({"dim": 2, "re": [1.0], "im": [0.0]});
        assert!(serde_json::from_value::<ComplexMatrix>(bad).is_err());
    }

    #[test]
    fn derivative_kernel_matches_finite_difference() {
        let h = random_hermitian(4, 21);
        let dh = random_hermitian(4, 22);
        let t = 0.05;
        let eig = Eigh::new(&h).unwrap();
        let k = eig.to_eigenbasis(&dh);
        let g = eig.exp_derivative_kernel(t);
        let inner = ComplexMatrix::from_fn(4, |i, j| g[(i, j)] * k[(i, j)]);
        let analytic = &(&eig.vectors * &inner) * &eig.vectors.adjoint();
        let eps = 1e-6;
        let up = expm_unitary(&(&h + &dh.scale_real(eps)), t).unwrap();
        let dn = expm_unitary(&(&h - &dh.scale_real(eps)), t).unwrap();
        let fd = (&up - &dn).scale_real(0.5 / eps);
        assert!(analytic.max_abs_diff(&fd) <= 1e-6 * fd.max_abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn forward_backward_is_identity(seed in 0u64..10_000, n in 2usize..10, t in -1.0f64..1.0) {
            let h = random_hermitian(n, seed);
            let f = expm_unitary(&h, t).unwrap();
            let b = expm_unitary(&h, -t).unwrap();
            prop_assert!((&f * &b).max_abs_diff(&ComplexMatrix::identity(n)) <= 1e-10);
        }

        #[test]
        fn time_additivity(seed in 0u64..10_000, n in 2usize..10, t1 in -0.5f64..0.5, t2 in -0.5f64..0.5) {
            let h = random_hermitian(n, seed);
            let whole = expm_unitary(&h, t1 + t2).unwrap();
            let parts = &expm_unitary(&h, t2).unwrap() * &expm_unitary(&h, t1).unwrap();
            prop_assert!(whole.max_abs_diff(&parts) <= 1e-10);
        }

        #[test]
        fn spectral_round_trip(seed in 0u64..10_000, n in 2usize..17) {
            let h = random_hermitian(n, seed);
            let eig = Eigh::new(&h).unwrap();
            prop_assert!(eig.reconstruct().max_abs_diff(&h) <= 1e-10 * h.max_abs());
            prop_assert!(eig.vectors.unitarity_deviation() <= 1e-10);
            prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
