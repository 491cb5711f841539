//! Operators on `L(R^d)` and the tensor calculus used to certify contraction.
//!
//! A [`LinOp`] is a d x d real matrix with the Hilbert-Schmidt pairing
//! `<v, w> = sum_ij v_ij w_ij`. A [`SuperOp`] is a linear operator on
//! `L(R^d)`, stored dense as a d^2 x d^2 matrix in the row-major flattening
//! `flat = i*d + j` (fixed; all serialization uses it). The elementary
//! superoperator `g (x) h` sends `m` to `g m h^T`, so products of rotation
//! pairs compose as `(g1 (x) h1)(g2 (x) h2) = (g1 g2) (x) (h1 h2)`.
//!
//! `L(R^d)` splits into multiples of the identity, traceless symmetric
//! matrices and antisymmetric matrices; all three are invariant under
//! `g (x) g`, and the contraction of the second-moment superoperator on the
//! traceless symmetric block is what the diffusion module certifies.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Full SVD below this matrix dimension, power iteration above.
const SVD_MAX_DIM: usize = 4096;

/// An element of `L(R^d)`: a d x d real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinOp {
    mat: DMatrix<f64>,
}

impl LinOp {
    pub fn from_matrix(mat: DMatrix<f64>) -> Self {
        assert!(mat.is_square(), "LinOp must be square");
        assert!(mat.iter().all(|x| x.is_finite()), "LinOp entries must be finite");
        LinOp { mat }
    }

    pub fn zeros(d: usize) -> Self {
        LinOp { mat: DMatrix::zeros(d, d) }
    }

    pub fn identity(d: usize) -> Self {
        LinOp { mat: DMatrix::identity(d, d) }
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        LinOp { mat: DMatrix::identity(d, d) * c }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn op_norm(&self) -> f64 {
        op_norm_mat(&self.mat)
    }

    pub fn hs_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Hilbert-Schmidt pairing `Tr(self^T other)`.
    pub fn hs_dot(&self, other: &LinOp) -> f64 {
        self.mat.dot(&other.mat)
    }

    /// Row-major flattening, `flat = i*d + j`.
    pub fn to_flat_vector(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(d * d, |p, _| self.mat[(p / d, p % d)])
    }

    pub fn from_flat_vector(d: usize, v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), d * d);
        LinOp { mat: DMatrix::from_fn(d, d, |i, j| v[i * d + j]) }
    }
}

/// A linear operator on `L(R^d)`, dense d^2 x d^2.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOp {
    dim: usize,
    mat: DMatrix<f64>,
}

impl SuperOp {
    pub fn from_matrix(dim: usize, mat: DMatrix<f64>) -> Self {
        assert_eq!(mat.nrows(), dim * dim);
        assert_eq!(mat.ncols(), dim * dim);
        SuperOp { dim, mat }
    }

    pub fn zeros(d: usize) -> Self {
        SuperOp { dim: d, mat: DMatrix::zeros(d * d, d * d) }
    }

    pub fn identity(d: usize) -> Self {
        SuperOp { dim: d, mat: DMatrix::identity(d * d, d * d) }
    }

    /// The elementary tensor `g (x) h` acting by `m -> g m h^T`:
    /// entries `A[(ij),(kl)] = g_ik h_jl`.
    pub fn kron(g: &LinOp, h: &LinOp) -> Result<Self> {
        if g.dim() != h.dim() {
            return Err(Error::DimensionMismatch(g.dim(), h.dim()));
        }
        Ok(SuperOp { dim: g.dim(), mat: g.mat.kronecker(&h.mat) })
    }

    /// Composition (matrix product in the flattened indexing).
    pub fn compose(&self, other: &SuperOp) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        Ok(SuperOp { dim: self.dim, mat: &self.mat * &other.mat })
    }

    /// Orthogonal projection onto symmetric operators: `v -> (v + v^T)/2`.
    pub fn gamma(d: usize) -> Self {
        let mut mat = DMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                mat[(i * d + j, i * d + j)] += 0.5;
                mat[(i * d + j, j * d + i)] += 0.5;
            }
        }
        SuperOp { dim: d, mat }
    }

    /// Orthogonal projection onto multiples of the identity:
    /// `v -> Tr(v)/d * I`, i.e. entries `(1/d) delta_ij delta_kl`.
    pub fn pi(d: usize) -> Self {
        let mut mat = DMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for k in 0..d {
                mat[(i * d + i, k * d + k)] = 1.0 / d as f64;
            }
        }
        SuperOp { dim: d, mat }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Apply to an operator: `(A m)_ij = sum_kl A[(ij),(kl)] m_kl`.
    pub fn apply(&self, m: &LinOp) -> Result<LinOp> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, m.dim()));
        }
        let out = &self.mat * m.to_flat_vector();
        Ok(LinOp::from_flat_vector(self.dim, &out))
    }

    pub fn op_norm(&self) -> f64 {
        op_norm_mat(&self.mat)
    }

    pub fn hs_norm(&self) -> f64 {
        self.mat.norm()
    }

    pub fn add(&self, other: &SuperOp) -> Result<SuperOp> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        Ok(SuperOp { dim: self.dim, mat: &self.mat + &other.mat })
    }

    pub fn sub(&self, other: &SuperOp) -> Result<SuperOp> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        Ok(SuperOp { dim: self.dim, mat: &self.mat - &other.mat })
    }

    pub fn scale(&self, c: f64) -> SuperOp {
        SuperOp { dim: self.dim, mat: &self.mat * c }
    }

    /// Matrix of the compression to `block` in its orthonormal basis.
    ///
    /// Errors (unless `force`) when the operator leaks out of the block by
    /// more than 1e-9 in Hilbert-Schmidt norm.
    pub fn restrict(
        &self,
        basis: &SubspaceBasis,
        block: SubspaceBlock,
        force: bool,
    ) -> Result<DMatrix<f64>> {
        if basis.dim != self.dim {
            return Err(Error::DimensionMismatch(self.dim, basis.dim));
        }
        let full = basis.change_of_basis(&self.mat);
        let (lo, hi) = basis.block_range(block);
        let n = self.dim * self.dim;
        let mut leak_sq = 0.0;
        for col in lo..hi {
            for row in (0..lo).chain(hi..n) {
                leak_sq += full[(row, col)] * full[(row, col)];
            }
        }
        let leakage = leak_sq.sqrt();
        if !force && leakage > 1e-9 {
            return Err(Error::SubspaceLeakage { leakage });
        }
        Ok(full.view((lo, lo), (hi - lo, hi - lo)).into_owned())
    }

    /// `{"d": d, "entries": [d^4 numbers, row-major in flattened indices]}`
    pub fn to_json(&self) -> Value {
        let n = self.dim * self.dim;
        let mut entries = Vec::with_capacity(n * n);
        for p in 0..n {
            for q in 0..n {
                entries.push(self.mat[(p, q)]);
            }
        }
        json!({ "d": self.dim, "entries": entries })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let d = v["d"]
            .as_u64()
            .ok_or_else(|| Error::InvalidParameter("SuperOp JSON: missing d".into()))?
            as usize;
        let entries = v["entries"]
            .as_array()
            .ok_or_else(|| Error::InvalidParameter("SuperOp JSON: missing entries".into()))?;
        let n = d * d;
        if entries.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "SuperOp JSON: expected {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        let mut mat = DMatrix::zeros(n, n);
        for (idx, e) in entries.iter().enumerate() {
            mat[(idx / n, idx % n)] = e
                .as_f64()
                .ok_or_else(|| Error::InvalidParameter("SuperOp JSON: non-numeric entry".into()))?;
        }
        Ok(SuperOp { dim: d, mat })
    }
}

/// The three invariant blocks of `L(R^d)` under `g (x) g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceBlock {
    /// Multiples of the identity (dimension 1).
    Identity,
    /// Traceless symmetric matrices (dimension d(d+1)/2 - 1).
    SymTraceless,
    /// Antisymmetric matrices (dimension d(d-1)/2).
    Antisym,
}

/// HS-orthonormal bases of the three blocks, plus the assembled d^2 x d^2
/// change-of-basis matrix (columns ordered Identity | SymTraceless | Antisym).
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    dim: usize,
    h1: Vec<LinOp>,
    hs0: Vec<LinOp>,
    ha: Vec<LinOp>,
    basis_mat: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2);
        let sq2 = std::f64::consts::SQRT_2;

        let h1 = vec![LinOp::from_matrix(DMatrix::identity(d, d) / (d as f64).sqrt())];

        let mut hs0 = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                let mut m = DMatrix::zeros(d, d);
                m[(i, j)] = 1.0 / sq2;
                m[(j, i)] = 1.0 / sq2;
                hs0.push(LinOp::from_matrix(m));
            }
        }
        // Diagonal traceless vectors: Gram-Schmidt of E_kk - E_{k+1,k+1}
        // gives (sum_{m<=k} E_mm - k E_{k+1,k+1}) / sqrt(k(k+1)).
        for k in 1..d {
            let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
            let mut m = DMatrix::zeros(d, d);
            for i in 0..k {
                m[(i, i)] = 1.0 / norm;
            }
            m[(k, k)] = -(k as f64) / norm;
            hs0.push(LinOp::from_matrix(m));
        }

        let mut ha = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                let mut m = DMatrix::zeros(d, d);
                m[(i, j)] = 1.0 / sq2;
                m[(j, i)] = -1.0 / sq2;
                ha.push(LinOp::from_matrix(m));
            }
        }

        let n = d * d;
        let mut basis_mat = DMatrix::zeros(n, n);
        for (c, v) in h1.iter().chain(&hs0).chain(&ha).enumerate() {
            basis_mat.set_column(c, &v.to_flat_vector());
        }
        SubspaceBasis { dim: d, h1, hs0, ha, basis_mat }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, block: SubspaceBlock) -> &[LinOp] {
        match block {
            SubspaceBlock::Identity => &self.h1,
            SubspaceBlock::SymTraceless => &self.hs0,
            SubspaceBlock::Antisym => &self.ha,
        }
    }

    pub fn block_dims(&self) -> (usize, usize, usize) {
        (self.h1.len(), self.hs0.len(), self.ha.len())
    }

    fn block_range(&self, block: SubspaceBlock) -> (usize, usize) {
        let (n1, ns, na) = self.block_dims();
        match block {
            SubspaceBlock::Identity => (0, n1),
            SubspaceBlock::SymTraceless => (n1, n1 + ns),
            SubspaceBlock::Antisym => (n1 + ns, n1 + ns + na),
        }
    }

    /// `B^T A B` with the orthonormal basis matrix `B`.
    fn change_of_basis(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis_mat.transpose() * a * &self.basis_mat
    }

    /// Assemble a superoperator that acts as `blocks[i]` on each subspace
    /// (in the basis order Identity | SymTraceless | Antisym).
    pub fn superop_from_blocks(
        &self,
        b1: &DMatrix<f64>,
        bs: &DMatrix<f64>,
        ba: &DMatrix<f64>,
    ) -> SuperOp {
        let (n1, ns, na) = self.block_dims();
        assert_eq!((b1.nrows(), bs.nrows(), ba.nrows()), (n1, ns, na));
        let n = self.dim * self.dim;
        let mut block = DMatrix::zeros(n, n);
        block.view_mut((0, 0), (n1, n1)).copy_from(b1);
        block.view_mut((n1, n1), (ns, ns)).copy_from(bs);
        block.view_mut((n1 + ns, n1 + ns), (na, na)).copy_from(ba);
        let mat = &self.basis_mat * block * self.basis_mat.transpose();
        SuperOp { dim: self.dim, mat }
    }

    /// Gram matrix of all d^2 basis vectors (identity when orthonormal).
    pub fn gram(&self) -> DMatrix<f64> {
        self.basis_mat.transpose() * &self.basis_mat
    }
}

/// Largest singular value. Full SVD for small matrices, power iteration on
/// `A^T A` beyond `SVD_MAX_DIM`.
pub fn op_norm_mat(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows().max(m.ncols()) <= SVD_MAX_DIM {
        m.clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    } else {
        op_norm_power_iteration(m)
    }
}

fn op_norm_power_iteration(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0_f64;
    for _ in 0..10_000 {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm; // Rayleigh quotient of A^T A at unit v
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

/// Spectral radius report: eigenvalue point estimate plus the certified
/// upper bound `inf_m ||A^m||^(1/m)` over doubling powers `m <= max_power`.
#[derive(Debug, Clone)]
pub struct SpectralRadius {
    pub point: f64,
    pub certified_upper: f64,
    /// `(m, ||A^m||_op^(1/m))` at m = 1, 2, 4, ...
    pub power_norms: Vec<(usize, f64)>,
}

/// Spectral radius of a (possibly nonsymmetric) real matrix.
///
/// The point estimate comes from the eigenvalues of the real Schur form;
/// only moduli are exposed. The certified upper bound uses the
/// submultiplicative sequence `||A^m||_op^(1/m)` along doubling powers.
/// In the rare case that the Schur iteration does not converge, the
/// certified bound doubles as the point estimate.
pub fn spectral_radius(m: &DMatrix<f64>, max_power: usize) -> SpectralRadius {
    assert!(m.is_square());

    let mut power_norms = Vec::new();
    let mut certified = f64::INFINITY;
    if m.nrows() > 0 {
        let mut pow = m.clone();
        let mut mm = 1usize;
        loop {
            let norm = op_norm_mat(&pow);
            let root = if norm == 0.0 { 0.0 } else { norm.powf(1.0 / mm as f64) };
            power_norms.push((mm, root));
            certified = certified.min(root);
            if mm * 2 > max_power.max(1) || norm == 0.0 {
                break;
            }
            pow = &pow * &pow;
            mm *= 2;
        }
    } else {
        certified = 0.0;
    }

    let point = eigen_moduli_max(m).unwrap_or(certified);
    SpectralRadius { point, certified_upper: certified, power_norms }
}

/// Largest eigenvalue modulus via a bounded Schur iteration. The zero
/// matrix short-circuits: the QR iteration of this nalgebra version spins
/// on it forever.
fn eigen_moduli_max(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 || m.norm() == 0.0 {
        return Some(0.0);
    }
    m.clone()
        .try_schur(1e-13, 100_000)
        .map(|s| s.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamDomain};
    use crate::rotgroup::{Rotation, RotationLaw};

    fn random_linop(d: usize, rng: &mut RngStream) -> LinOp {
        LinOp::from_matrix(DMatrix::from_fn(d, d, |_, _| rng.gen_normal()))
    }

    #[test]
    fn kron_identity_acts_trivially() {
        let mut rng = RngStream::new(1, StreamDomain::Thermal, 0);
        let id = LinOp::identity(3);
        let a = SuperOp::kron(&id, &id).unwrap();
        let m = random_linop(3, &mut rng);
        let out = a.apply(&m).unwrap();
        assert!((out.matrix() - m.matrix()).norm() < 1e-14);
    }

    #[test]
    fn kron_of_rotation_fixes_identity() {
        let mut rng = RngStream::new(2, StreamDomain::Thermal, 0);
        for d in [2usize, 3, 4] {
            let law = RotationLaw::haar(d).unwrap();
            let g = law.sample(&mut rng);
            let gl = LinOp::from_matrix(g.matrix().clone());
            let a = SuperOp::kron(&gl, &gl).unwrap();
            let out = a.apply(&LinOp::identity(d)).unwrap();
            assert!((out.matrix() - LinOp::identity(d).matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn kron_quarter_turn_flips_diag_signature() {
        let g = Rotation::rotation_2d(std::f64::consts::FRAC_PI_2);
        let gl = LinOp::from_matrix(g.matrix().clone());
        let a = SuperOp::kron(&gl, &gl).unwrap();
        let m = LinOp::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let out = a.apply(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!((out.matrix() - expect).norm() < 1e-12);
    }

    #[test]
    fn compose_respects_group_structure() {
        // (g1 (x) h1)(g2 (x) h2) = (g1 g2) (x) (h1 h2) on random pairs.
        let mut rng = RngStream::new(3, StreamDomain::Thermal, 0);
        for _ in 0..50 {
            let (g1, h1) = (random_linop(3, &mut rng), random_linop(3, &mut rng));
            let (g2, h2) = (random_linop(3, &mut rng), random_linop(3, &mut rng));
            let lhs = SuperOp::kron(&g1, &h1)
                .unwrap()
                .compose(&SuperOp::kron(&g2, &h2).unwrap())
                .unwrap();
            let g12 = LinOp::from_matrix(g1.matrix() * g2.matrix());
            let h12 = LinOp::from_matrix(h1.matrix() * h2.matrix());
            let rhs = SuperOp::kron(&g12, &h12).unwrap();
            assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-11 * (1.0 + rhs.hs_norm()));
        }
    }

    #[test]
    fn gamma_symmetrizes() {
        let g = SuperOp::gamma(2);
        let m = LinOp::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let out = g.apply(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((out.matrix() - expect).norm() < 1e-15);

        // Idempotent and HS-self-adjoint.
        let gg = g.compose(&g).unwrap();
        assert!((gg.matrix() - g.matrix()).norm() < 1e-14);
        assert!((g.matrix() - g.matrix().transpose()).norm() < 1e-14);
    }

    #[test]
    fn pi_projects_on_identity_span() {
        let p = SuperOp::pi(2);
        let id = LinOp::identity(2);
        assert!((p.apply(&id).unwrap().matrix() - id.matrix()).norm() < 1e-15);

        let traceless = LinOp::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert!(p.apply(&traceless).unwrap().matrix().norm() < 1e-15);

        let g = SuperOp::gamma(2);
        let pg = p.compose(&g).unwrap();
        let gp = g.compose(&p).unwrap();
        assert!((pg.matrix() - p.matrix()).norm() < 1e-14);
        assert!((gp.matrix() - p.matrix()).norm() < 1e-14);
    }

    #[test]
    fn op_norm_examples() {
        let mut rng = RngStream::new(4, StreamDomain::Thermal, 0);
        let g = RotationLaw::haar(3).unwrap().sample(&mut rng);
        assert!((op_norm_mat(g.matrix()) - 1.0).abs() < 1e-12);
        assert_eq!(LinOp::zeros(3).op_norm(), 0.0);

        let a = std::f64::consts::PI / 10.0;
        let rbar = LinOp::scaled_identity(2, a.sin() / a);
        assert!((rbar.op_norm() - a.sin() / a).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let mut rng = RngStream::new(5, StreamDomain::Thermal, 0);
        let m = DMatrix::from_fn(40, 40, |_, _| rng.gen_normal());
        let svd = op_norm_mat(&m);
        let pow = op_norm_power_iteration(&m);
        assert!((svd - pow).abs() < 1e-8 * svd);
    }

    #[test]
    fn hs_norm_examples() {
        assert!((LinOp::identity(3).hs_norm() - 3.0_f64.sqrt()).abs() < 1e-15);
        let mut rng = RngStream::new(6, StreamDomain::Thermal, 0);
        let g = RotationLaw::haar(3).unwrap().sample(&mut rng);
        assert!((LinOp::from_matrix(g.matrix().clone()).hs_norm() - 3.0_f64.sqrt()).abs() < 1e-12);
        for _ in 0..20 {
            let a = random_linop(3, &mut rng);
            assert!(a.op_norm() <= a.hs_norm() + 1e-12);
        }
    }

    #[test]
    fn subspace_basis_counts_and_gram() {
        for (d, dims) in [(2usize, (1usize, 2usize, 1usize)), (3, (1, 5, 3)), (5, (1, 14, 10))] {
            let b = SubspaceBasis::new(d);
            assert_eq!(b.block_dims(), dims);
            let gram = b.gram();
            assert!((gram - DMatrix::identity(d * d, d * d)).norm() < 1e-12);
        }
    }

    #[test]
    fn restrict_pi_to_traceless_is_zero() {
        let basis = SubspaceBasis::new(3);
        let p = SuperOp::pi(3);
        let r = p.restrict(&basis, SubspaceBlock::SymTraceless, false).unwrap();
        assert!(r.norm() < 1e-13);
    }

    #[test]
    fn restrict_rotation_square_on_identity_block_is_one() {
        let mut rng = RngStream::new(7, StreamDomain::Thermal, 0);
        for d in [2usize, 3] {
            let basis = SubspaceBasis::new(d);
            let g = RotationLaw::haar(d).unwrap().sample(&mut rng);
            let gl = LinOp::from_matrix(g.matrix().clone());
            let a = SuperOp::kron(&gl, &gl).unwrap();
            let r = a.restrict(&basis, SubspaceBlock::Identity, false).unwrap();
            assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn restrict_rejects_leaky_operator() {
        // A generic non-rotation kron leaks between symmetric and
        // antisymmetric blocks.
        let mut rng = RngStream::new(8, StreamDomain::Thermal, 0);
        let basis = SubspaceBasis::new(3);
        let a = SuperOp::kron(&random_linop(3, &mut rng), &random_linop(3, &mut rng)).unwrap();
        let err = a.restrict(&basis, SubspaceBlock::SymTraceless, false);
        assert!(matches!(err, Err(Error::SubspaceLeakage { .. })));
        // force=true still returns the compression
        assert!(a.restrict(&basis, SubspaceBlock::SymTraceless, true).is_ok());
    }

    #[test]
    fn spectral_radius_examples() {
        let r = Rotation::rotation_2d(0.7);
        let sp = spectral_radius(r.matrix(), 64);
        assert!((sp.point - 1.0).abs() < 1e-10);
        assert!((sp.certified_upper - 1.0).abs() < 1e-10);

        let c = DMatrix::identity(3, 3) * -0.3;
        let sp = spectral_radius(&c, 64);
        assert!((sp.point - 0.3).abs() < 1e-12);
        assert!((sp.certified_upper - 0.3).abs() < 1e-10);
    }

    #[test]
    fn superop_json_round_trip() {
        let p = SuperOp::pi(2);
        let v = p.to_json();
        let q = SuperOp::from_json(&v).unwrap();
        assert_eq!(p, q);
        assert_eq!(v["d"], 2);
        assert_eq!(v["entries"].as_array().unwrap().len(), 16);
    }
}
