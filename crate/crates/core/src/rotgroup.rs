//! Rotation-group arithmetic, drift control for long products, and noise
//! laws on SO(d).
//!
//! Conventions, fixed once: matrices act on column vectors, products compose
//! left to right as in chain products `R w_1 r_1 ... w_n r_n`, angles are in
//! radians (there is no degree API anywhere), and `e^d` is the last
//! canonical basis vector.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::gauss_legendre;
use crate::rng::RngStream;
use crate::smallmat;
use crate::tensor::{LinOp, SubspaceBasis, SuperOp};

/// Orthonormality / determinant tolerance for the `Rotation` invariants.
pub const ROTATION_TOL: f64 = 1e-10;

/// A d x d real orthogonal matrix with determinant +1.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    mat: DMatrix<f64>,
}

impl Rotation {
    pub fn identity(d: usize) -> Self {
        Rotation { mat: DMatrix::identity(d, d) }
    }

    /// Rotation of the plane by `theta` (radians, counterclockwise).
    pub fn rotation_2d(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation { mat: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) }
    }

    /// Rodrigues rotation about `axis` (normalized internally) by `angle`.
    pub fn from_axis_angle(axis: &[f64; 3], angle: f64) -> Result<Self> {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("axis must be a nonzero finite vector".into()));
        }
        let (x, y, z) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let mat = DMatrix::from_row_slice(
            3,
            3,
            &[
                t * x * x + c,
                t * x * y - s * z,
                t * x * z + s * y,
                t * x * y + s * z,
                t * y * y + c,
                t * y * z - s * x,
                t * x * z - s * y,
                t * y * z + s * x,
                t * z * z + c,
            ],
        );
        Ok(Rotation { mat })
    }

    /// Validates the invariants at the default tolerance.
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        Self::from_matrix_with_tolerance(mat, ROTATION_TOL)
    }

    pub fn from_matrix_with_tolerance(mat: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::NotARotation("matrix is not square".into()));
        }
        let d = mat.nrows();
        if d < 2 {
            return Err(Error::NotARotation("dimension must be at least 2".into()));
        }
        let drift = (mat.transpose() * &mat - DMatrix::identity(d, d)).norm();
        if drift > tol {
            return Err(Error::NotARotation(format!(
                "columns not orthonormal: ||m^T m - I||_hs = {drift:.3e}"
            )));
        }
        let det = mat.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::NotARotation(format!("determinant {det} != +1")));
        }
        Ok(Rotation { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<f64>) -> Self {
        debug_assert!((mat.transpose() * &mat - DMatrix::identity(mat.nrows(), mat.nrows())).norm() < 1e-8);
        Rotation { mat }
    }

    pub(crate) fn from_flat_row_major(d: usize, flat: &[f64]) -> Self {
        Rotation::from_matrix_unchecked(DMatrix::from_row_slice(d, d, flat))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// The inverse rotation.
    pub fn inverse(&self) -> Rotation {
        Rotation { mat: self.mat.transpose() }
    }

    /// Matrix product `self * other` in the left-to-right chain convention.
    /// Re-orthonormalizes when floating-point drift exceeds the invariant
    /// tolerance.
    pub fn compose(&self, other: &Rotation) -> Result<Rotation> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        let d = self.dim();
        let mut flat = vec![0.0; d * d];
        let a = self.flat_row_major();
        let b = other.flat_row_major();
        smallmat::mul(&a, &b, &mut flat, d);
        if smallmat::orthonormality_drift(&flat, d) > ROTATION_TOL {
            smallmat::mgs_orthonormalize(&mut flat, d);
        }
        Ok(Rotation::from_flat_row_major(d, &flat))
    }

    /// Image of a unit vector, renormalized if drift exceeds 1e-12.
    pub fn apply(&self, v: &UnitVector) -> Result<UnitVector> {
        if self.dim() != v.dim() {
            return Err(Error::DimensionMismatch(self.dim(), v.dim()));
        }
        let mut w = &self.mat * v.coords();
        let norm = w.norm();
        if (norm - 1.0).abs() > 1e-12 {
            w /= norm;
        }
        Ok(UnitVector { v: w })
    }

    /// Rotation angle for d = 2.
    pub fn angle_2d(&self) -> Result<f64> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch(self.dim(), 2));
        }
        Ok(self.mat[(1, 0)].atan2(self.mat[(0, 0)]))
    }

    /// Row-major entries, the wire format used by all JSON specs.
    pub fn to_row_major_vec(&self) -> Vec<f64> {
        self.flat_row_major()
    }

    pub(crate) fn flat_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = self.mat[(i, j)];
            }
        }
        flat
    }

    pub fn as_linop(&self) -> LinOp {
        LinOp::from_matrix(self.mat.clone())
    }
}

/// Nearest rotation to `m` via polar decomposition.
///
/// `m` must lie in the SO(d) component (positive determinant) and within
/// operator-norm distance 0.1 of an orthogonal matrix.
pub fn reorthonormalize(m: &DMatrix<f64>) -> Result<Rotation> {
    if !m.is_square() {
        return Err(Error::NotARotation("matrix is not square".into()));
    }
    if m.determinant() <= 0.0 {
        return Err(Error::NotARotation("not in SO(d) component: determinant <= 0".into()));
    }
    let svd = m.clone().svd(true, true);
    let dist = svd.singular_values.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    if dist > 0.1 {
        return Err(Error::NotARotation(format!(
            "too far from orthogonal: singular-value deviation {dist:.3e}"
        )));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    Ok(Rotation { mat: u * vt })
}

/// A unit vector in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    v: DVector<f64>,
}

impl UnitVector {
    /// Validates `||v|| = 1` within 1e-12.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("vector norm {norm} != 1")));
        }
        Ok(UnitVector { v })
    }

    /// Normalizes a nonzero vector.
    pub fn normalized(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("cannot normalize a zero vector".into()));
        }
        Ok(UnitVector { v: v / norm })
    }

    /// The i-th canonical basis vector (0-indexed).
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        UnitVector { v }
    }

    /// The chain's reference direction `e^d` (last canonical basis vector).
    pub fn e_last(d: usize) -> Self {
        Self::basis(d, d - 1)
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.v
    }
}

/// Angle distribution on the circle used by the SO(3) conjugation-invariant
/// law: the rotation angle determines the conjugacy class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AngleDensity {
    /// Uniform on `[lo, hi]`, `0 <= lo < hi <= 2*pi`.
    Window { lo: f64, hi: f64 },
    /// Uniform on `[0, 2*pi)`.
    UniformFullCircle,
    /// Piecewise-linear density sampled on a grid; normalized internally.
    Table { thetas: Vec<f64>, values: Vec<f64> },
}

/// Number of points of the inverse-CDF sampling table.
const CDF_TABLE_LEN: usize = 1 << 14;

impl AngleDensity {
    fn validate(&self) -> Result<()> {
        match self {
            AngleDensity::Window { lo, hi } => {
                let tau = 2.0 * std::f64::consts::PI;
                if !(lo.is_finite() && hi.is_finite()) || lo >= hi || *lo < 0.0 || *hi > tau {
                    return Err(Error::InvalidLaw(format!(
                        "angle window [{lo}, {hi}] must satisfy 0 <= lo < hi <= 2*pi"
                    )));
                }
            }
            AngleDensity::UniformFullCircle => {}
            AngleDensity::Table { thetas, values } => {
                if thetas.len() < 2 || thetas.len() != values.len() {
                    return Err(Error::InvalidLaw("angle table needs matching grids".into()));
                }
                if thetas.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidLaw("angle table grid must increase".into()));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidLaw("angle density must be nonnegative".into()));
                }
                let mass: f64 = thetas
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
                    .sum();
                if mass <= 0.0 || !mass.is_finite() {
                    return Err(Error::InvalidLaw("angle density is not normalizable".into()));
                }
            }
        }
        Ok(())
    }

    /// E cos(j * theta), exact for the closed-form kinds, Gauss-Legendre
    /// quadrature for tables.
    pub fn mean_cos(&self, j: u32) -> f64 {
        if j == 0 {
            return 1.0;
        }
        let jf = j as f64;
        match self {
            AngleDensity::Window { lo, hi } => {
                ((jf * hi).sin() - (jf * lo).sin()) / (jf * (hi - lo))
            }
            AngleDensity::UniformFullCircle => 0.0,
            AngleDensity::Table { .. } => self.integrate(|t| (jf * t).cos()),
        }
    }

    /// Integral of `f` against the normalized density.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            AngleDensity::Window { lo, hi } => {
                let (nodes, weights) = gauss_legendre(64);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(weights) {
                    acc += w * f(mid + half * x);
                }
                acc * half / (hi - lo)
            }
            AngleDensity::UniformFullCircle => {
                let tau = 2.0 * std::f64::consts::PI;
                let (nodes, weights) = gauss_legendre(64);
                let half = 0.5 * tau;
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(weights) {
                    acc += w * f(half + half * x);
                }
                acc * half / tau
            }
            AngleDensity::Table { thetas, values } => {
                let mass: f64 = thetas
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
                    .sum();
                let raw: f64 = thetas
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] * f(t[0]) + v[1] * f(t[1])))
                    .sum();
                raw / mass
            }
        }
    }

    /// Inverse-CDF sampling table (identity map for the uniform kinds).
    fn build_cdf_table(&self) -> Option<Vec<f64>> {
        match self {
            AngleDensity::Window { .. } | AngleDensity::UniformFullCircle => None,
            AngleDensity::Table { thetas, values } => {
                let mut cum = vec![0.0];
                for (t, v) in thetas.windows(2).zip(values.windows(2)) {
                    let inc = 0.5 * (t[1] - t[0]) * (v[0] + v[1]);
                    cum.push(cum.last().unwrap() + inc);
                }
                let total = *cum.last().unwrap();
                let mut table = Vec::with_capacity(CDF_TABLE_LEN);
                let mut seg = 0usize;
                for i in 0..CDF_TABLE_LEN {
                    let target = total * i as f64 / (CDF_TABLE_LEN - 1) as f64;
                    while seg + 2 < cum.len() && cum[seg + 1] < target {
                        seg += 1;
                    }
                    let span = cum[seg + 1] - cum[seg];
                    let frac = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
                    table.push(thetas[seg] + frac * (thetas[seg + 1] - thetas[seg]));
                }
                Some(table)
            }
        }
    }

    fn sample(&self, table: Option<&[f64]>, rng: &mut RngStream) -> f64 {
        match self {
            AngleDensity::Window { lo, hi } => rng.gen_range_f64(*lo, *hi),
            AngleDensity::UniformFullCircle => rng.gen_range_f64(0.0, 2.0 * std::f64::consts::PI),
            AngleDensity::Table { .. } => {
                let table = table.expect("CDF table built at construction");
                let u = rng.gen_f64() * (table.len() - 1) as f64;
                let i = (u as usize).min(table.len() - 2);
                let frac = u - i as f64;
                table[i] + frac * (table[i + 1] - table[i])
            }
        }
    }
}

/// Axis distribution for the axis-angle law on SO(3).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AxisLaw {
    /// Uniform on the unit sphere (normalized Gaussian).
    UniformSphere,
    Fixed { axis: [f64; 3] },
}

/// Angle distribution for the axis-angle law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AngleLaw {
    Uniform { lo: f64, hi: f64 },
    Atoms { angles: Vec<f64>, weights: Vec<f64> },
    Fixed { angle: f64 },
}

impl AngleLaw {
    fn validate(&self) -> Result<()> {
        match self {
            AngleLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                    return Err(Error::InvalidLaw("angle interval must be nonempty".into()));
                }
            }
            AngleLaw::Atoms { angles, weights } => {
                validate_weights(weights)?;
                if angles.len() != weights.len() {
                    return Err(Error::InvalidLaw("angles/weights length mismatch".into()));
                }
            }
            AngleLaw::Fixed { angle } => {
                if !angle.is_finite() {
                    return Err(Error::InvalidLaw("angle must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn mean_trig(&self, j: u32) -> (f64, f64) {
        let jf = j as f64;
        match self {
            AngleLaw::Uniform { lo, hi } => (
                ((jf * hi).sin() - (jf * lo).sin()) / (jf * (hi - lo)),
                ((jf * lo).cos() - (jf * hi).cos()) / (jf * (hi - lo)),
            ),
            AngleLaw::Atoms { angles, weights } => {
                let c = angles.iter().zip(weights).map(|(a, w)| w * (jf * a).cos()).sum();
                let s = angles.iter().zip(weights).map(|(a, w)| w * (jf * a).sin()).sum();
                (c, s)
            }
            AngleLaw::Fixed { angle } => ((jf * angle).cos(), (jf * angle).sin()),
        }
    }

    fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            AngleLaw::Uniform { lo, hi } => rng.gen_range_f64(*lo, *hi),
            AngleLaw::Atoms { angles, weights } => angles[categorical(weights, rng)],
            AngleLaw::Fixed { angle } => *angle,
        }
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidLaw("empty weight vector".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidLaw("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidLaw(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn categorical(weights: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.gen_f64();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Kinds of noise laws `Q` on SO(d).
#[derive(Debug, Clone)]
pub enum LawKind {
    Haar,
    So2Window { a: f64, b: f64 },
    So2Atoms { angles: Vec<f64>, weights: Vec<f64> },
    So3AxisAngle { axis: AxisLaw, angle: AngleLaw },
    So3ConjInvariant { density: AngleDensity },
    FiniteSupport { rotations: Vec<Rotation>, weights: Vec<f64> },
    Dirac { rotation: Rotation },
}

/// Exact first and second moments of a law, when closed forms exist.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub r_bar: LinOp,
    pub second: SuperOp,
}

/// A sampler for a noise law `Q` on SO(d), with exact moments attached
/// whenever a closed form exists.
#[derive(Debug, Clone)]
pub struct RotationLaw {
    dim: usize,
    kind: LawKind,
    exact: Option<Arc<ExactMoments>>,
    cdf_table: Option<Arc<Vec<f64>>>,
    flat_support: Option<Arc<Vec<Vec<f64>>>>,
}

/// JSON mirror of a law specification, e.g.
/// `{"kind": "so2-window", "a": -0.314, "b": 0.314}`.
/// Rotations appear as row-major arrays of d^2 numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawSpec {
    Haar { dim: usize },
    So2Window { a: f64, b: f64 },
    So2Atoms { angles: Vec<f64>, weights: Vec<f64> },
    So3AxisAngle { axis: AxisLaw, angle: AngleLaw },
    So3ConjugationInvariant { density: AngleDensity },
    FiniteSupport { dim: usize, rotations: Vec<Vec<f64>>, weights: Vec<f64> },
    Dirac { dim: usize, rotation: Vec<f64> },
}

impl RotationLaw {
    pub fn from_spec(spec: &LawSpec) -> Result<RotationLaw> {
        match spec {
            LawSpec::Haar { dim } => RotationLaw::haar(*dim),
            LawSpec::So2Window { a, b } => RotationLaw::so2_window(*a, *b),
            LawSpec::So2Atoms { angles, weights } => {
                RotationLaw::so2_atoms(angles.clone(), weights.clone())
            }
            LawSpec::So3AxisAngle { axis, angle } => {
                RotationLaw::so3_axis_angle(axis.clone(), angle.clone())
            }
            LawSpec::So3ConjugationInvariant { density } => {
                RotationLaw::so3_conjugation_invariant(density.clone())
            }
            LawSpec::FiniteSupport { dim, rotations, weights } => {
                let rots = rotations
                    .iter()
                    .map(|flat| rotation_from_flat(*dim, flat))
                    .collect::<Result<Vec<_>>>()?;
                RotationLaw::finite_support(rots, weights.clone())
            }
            LawSpec::Dirac { dim, rotation } => {
                RotationLaw::dirac(rotation_from_flat(*dim, rotation)?)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<RotationLaw> {
        let spec: LawSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidLaw(e.to_string()))?;
        RotationLaw::from_spec(&spec)
    }

    pub fn haar(dim: usize) -> Result<RotationLaw> {
        if dim < 2 {
            return Err(Error::InvalidLaw("haar law needs dim >= 2".into()));
        }
        let basis = SubspaceBasis::new(dim);
        let (n1, ns, na) = basis.block_dims();
        // Second moment of Haar = orthogonal projector onto the matrices
        // fixed by conjugation: span{I} for d >= 3, span{I, J} for d = 2.
        let ha_scalar = if dim == 2 { 1.0 } else { 0.0 };
        let second = basis.superop_from_blocks(
            &DMatrix::identity(n1, n1),
            &DMatrix::zeros(ns, ns),
            &(DMatrix::identity(na, na) * ha_scalar),
        );
        let exact = ExactMoments { r_bar: LinOp::zeros(dim), second };
        Self::build(dim, LawKind::Haar, Some(exact))
    }

    /// Uniform angle on `(a, b)` for d = 2.
    pub fn so2_window(a: f64, b: f64) -> Result<RotationLaw> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidLaw(format!("window ({a}, {b}) is empty")));
        }
        let exact = so2_exact_moments_quadrature(&AngleLaw::Uniform { lo: a, hi: b });
        Self::build(2, LawKind::So2Window { a, b }, Some(exact))
    }

    pub fn so2_atoms(angles: Vec<f64>, weights: Vec<f64>) -> Result<RotationLaw> {
        if angles.len() != weights.len() {
            return Err(Error::InvalidLaw("angles/weights length mismatch".into()));
        }
        validate_weights(&weights)?;
        let exact = so2_exact_moments_quadrature(&AngleLaw::Atoms {
            angles: angles.clone(),
            weights: weights.clone(),
        });
        Self::build(2, LawKind::So2Atoms { angles, weights }, Some(exact))
    }

    pub fn so3_axis_angle(axis: AxisLaw, angle: AngleLaw) -> Result<RotationLaw> {
        angle.validate()?;
        let exact = match &axis {
            // Uniform axis makes the law conjugation invariant: both moments
            // are scalars on the isotypic blocks, with the scalars read off
            // the angle characters.
            AxisLaw::UniformSphere => {
                let c1 = angle.mean_trig(1).0;
                let c2 = angle.mean_trig(2).0;
                Some(so3_conj_inv_moments(c1, c2))
            }
            AxisLaw::Fixed { axis } => Some(fixed_axis_exact_moments(axis, &angle)?),
        };
        Self::build(3, LawKind::So3AxisAngle { axis, angle }, exact)
    }

    /// Conjugation-invariant law on SO(3): axis uniform on the sphere,
    /// angle drawn from `density`.
    pub fn so3_conjugation_invariant(density: AngleDensity) -> Result<RotationLaw> {
        density.validate()?;
        let c1 = density.mean_cos(1);
        let c2 = density.mean_cos(2);
        let exact = so3_conj_inv_moments(c1, c2);
        let cdf = density.build_cdf_table().map(Arc::new);
        let mut law = Self::build(3, LawKind::So3ConjInvariant { density }, Some(exact))?;
        law.cdf_table = cdf;
        Ok(law)
    }

    pub fn finite_support(rotations: Vec<Rotation>, weights: Vec<f64>) -> Result<RotationLaw> {
        if rotations.is_empty() || rotations.len() != weights.len() {
            return Err(Error::InvalidLaw("rotations/weights length mismatch".into()));
        }
        validate_weights(&weights)?;
        let dim = rotations[0].dim();
        for r in &rotations {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch(dim, r.dim()));
            }
        }
        let mut r_bar = DMatrix::zeros(dim, dim);
        let mut second = SuperOp::zeros(dim);
        for (r, w) in rotations.iter().zip(&weights) {
            r_bar += r.matrix() * *w;
            let k = SuperOp::kron(&r.as_linop(), &r.as_linop())?;
            second = second.add(&k.scale(*w))?;
        }
        let exact = ExactMoments { r_bar: LinOp::from_matrix(r_bar), second };
        Self::build(dim, LawKind::FiniteSupport { rotations, weights }, Some(exact))
    }

    pub fn dirac(rotation: Rotation) -> Result<RotationLaw> {
        let dim = rotation.dim();
        let second = SuperOp::kron(&rotation.as_linop(), &rotation.as_linop())?;
        let exact = ExactMoments { r_bar: rotation.as_linop(), second };
        Self::build(dim, LawKind::Dirac { rotation }, Some(exact))
    }

    /// The uniform law on the 24 rotations of the cube.
    pub fn cube_group() -> Result<RotationLaw> {
        let rots = cube_group_rotations();
        let n = rots.len();
        RotationLaw::finite_support(rots, vec![1.0 / n as f64; n])
    }

    fn build(dim: usize, kind: LawKind, exact: Option<ExactMoments>) -> Result<RotationLaw> {
        if let Some(m) = &exact {
            let n1 = m.r_bar.op_norm();
            let n2 = m.second.op_norm();
            if n1 > 1.0 + 1e-9 || n2 > 1.0 + 1e-9 {
                return Err(Error::InvalidLaw(format!(
                    "exact moments violate contraction bounds: ||r_bar|| = {n1}, ||second|| = {n2}"
                )));
            }
        }
        let flat_support = match &kind {
            LawKind::FiniteSupport { rotations, .. } => {
                Some(Arc::new(rotations.iter().map(|r| r.flat_row_major()).collect()))
            }
            LawKind::Dirac { rotation } => Some(Arc::new(vec![rotation.flat_row_major()])),
            _ => None,
        };
        Ok(RotationLaw { dim, kind, exact: exact.map(Arc::new), cdf_table: None, flat_support })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn has_exact_moments(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact_moments(&self) -> Result<&ExactMoments> {
        self.exact.as_deref().ok_or(Error::NoExactMoments)
    }

    /// Exact mean rotation, when available.
    pub fn r_bar(&self) -> Result<&LinOp> {
        Ok(&self.exact_moments()?.r_bar)
    }

    /// One draw. Deterministic given the stream state; the result always
    /// satisfies the `Rotation` invariants.
    pub fn sample(&self, rng: &mut RngStream) -> Rotation {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        let mut scratch = vec![0.0; d * d];
        self.sample_flat(rng, &mut out, &mut scratch);
        Rotation::from_flat_row_major(d, &out)
    }

    /// Hot-path sampler writing the row-major matrix into `out`.
    /// `scratch` must hold d^2 values.
    pub(crate) fn sample_flat(&self, rng: &mut RngStream, out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            LawKind::Haar => {
                // QR of an iid Gaussian matrix with positive diag(R), then a
                // column flip if the determinant landed in O(d) \ SO(d).
                for x in out.iter_mut() {
                    *x = rng.gen_normal();
                }
                smallmat::mgs_orthonormalize(out, d);
                if smallmat::det(out, scratch, d) < 0.0 {
                    for r in 0..d {
                        out[r * d + (d - 1)] = -out[r * d + (d - 1)];
                    }
                }
            }
            LawKind::So2Window { a, b } => {
                write_rotation_2d(out, rng.gen_range_f64(*a, *b));
            }
            LawKind::So2Atoms { angles, weights } => {
                write_rotation_2d(out, angles[categorical(weights, rng)]);
            }
            LawKind::So3AxisAngle { axis, angle } => {
                let ax = match axis {
                    AxisLaw::UniformSphere => random_unit_axis(rng),
                    AxisLaw::Fixed { axis } => *axis,
                };
                let theta = angle.sample(rng);
                write_rotation_axis_angle(out, &ax, theta);
            }
            LawKind::So3ConjInvariant { density } => {
                let ax = random_unit_axis(rng);
                let theta = density.sample(self.cdf_table.as_deref().map(|t| t.as_slice()), rng);
                write_rotation_axis_angle(out, &ax, theta);
            }
            LawKind::FiniteSupport { weights, .. } => {
                let idx = categorical(weights, rng);
                out.copy_from_slice(&self.flat_support.as_ref().unwrap()[idx]);
            }
            LawKind::Dirac { .. } => {
                out.copy_from_slice(&self.flat_support.as_ref().unwrap()[0]);
            }
        }
    }

    /// First and second moments `(E r, E[r (x) r])`.
    ///
    /// `MomentMode::Exact` requires a closed form. Monte Carlo mode also
    /// returns entrywise standard errors.
    pub fn moments(&self, mode: MomentMode) -> Result<Moments> {
        match mode {
            MomentMode::Exact => {
                let m = self.exact_moments()?;
                Ok(Moments {
                    r_bar: m.r_bar.clone(),
                    second: m.second.clone(),
                    r_bar_se: None,
                    second_se: None,
                })
            }
            MomentMode::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(Error::InvalidParameter("MC moments need >= 2 samples".into()));
                }
                let d = self.dim;
                let n = d * d;
                let mut rng = RngStream::new(seed, crate::rng::StreamDomain::Moments, 0);
                let mut flat = vec![0.0; n];
                let mut scratch = vec![0.0; n];
                let mut sum_r = vec![0.0; n];
                let mut sum_r2 = vec![0.0; n];
                let mut sum_k = vec![0.0; n * n];
                let mut sum_k2 = vec![0.0; n * n];
                for _ in 0..samples {
                    self.sample_flat(&mut rng, &mut flat, &mut scratch);
                    for (i, &x) in flat.iter().enumerate() {
                        sum_r[i] += x;
                        sum_r2[i] += x * x;
                    }
                    // kron entry [(i*d+j),(k*d+l)] = g_ik g_jl
                    for i in 0..d {
                        for j in 0..d {
                            let row = i * d + j;
                            for k in 0..d {
                                let gik = flat[i * d + k];
                                for l in 0..d {
                                    let v = gik * flat[j * d + l];
                                    sum_k[row * n + k * d + l] += v;
                                    sum_k2[row * n + k * d + l] += v * v;
                                }
                            }
                        }
                    }
                }
                let nf = samples as f64;
                let mean_se = |sum: &[f64], sum2: &[f64], i: usize| {
                    let mean = sum[i] / nf;
                    let var = (sum2[i] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
                    (mean, (var / nf).sqrt())
                };
                let mut r_bar = DMatrix::zeros(d, d);
                let mut r_se = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let (m, s) = mean_se(&sum_r, &sum_r2, i * d + j);
                        r_bar[(i, j)] = m;
                        r_se[(i, j)] = s;
                    }
                }
                let mut second = DMatrix::zeros(n, n);
                let mut second_se = DMatrix::zeros(n, n);
                for p in 0..n {
                    for q in 0..n {
                        let (m, s) = mean_se(&sum_k, &sum_k2, p * n + q);
                        second[(p, q)] = m;
                        second_se[(p, q)] = s;
                    }
                }
                Ok(Moments {
                    r_bar: LinOp::from_matrix(r_bar),
                    second: SuperOp::from_matrix(d, second),
                    r_bar_se: Some(r_se),
                    second_se: Some(second_se),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum MomentMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub r_bar: LinOp,
    pub second: SuperOp,
    pub r_bar_se: Option<DMatrix<f64>>,
    pub second_se: Option<DMatrix<f64>>,
}

fn rotation_from_flat(dim: usize, flat: &[f64]) -> Result<Rotation> {
    if flat.len() != dim * dim {
        return Err(Error::InvalidLaw(format!(
            "rotation needs {} entries, got {}",
            dim * dim,
            flat.len()
        )));
    }
    Rotation::from_matrix(DMatrix::from_row_slice(dim, dim, flat))
}

fn write_rotation_2d(out: &mut [f64], theta: f64) {
    let (s, c) = theta.sin_cos();
    out[0] = c;
    out[1] = -s;
    out[2] = s;
    out[3] = c;
}

fn write_rotation_axis_angle(out: &mut [f64], axis: &[f64; 3], angle: f64) {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    out[0] = t * x * x + c;
    out[1] = t * x * y - s * z;
    out[2] = t * x * z + s * y;
    out[3] = t * x * y + s * z;
    out[4] = t * y * y + c;
    out[5] = t * y * z - s * x;
    out[6] = t * x * z - s * y;
    out[7] = t * y * z + s * x;
    out[8] = t * z * z + c;
}

fn random_unit_axis(rng: &mut RngStream) -> [f64; 3] {
    loop {
        let v = [rng.gen_normal(), rng.gen_normal(), rng.gen_normal()];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Exact moments of a d = 2 angle law by Gauss-Legendre quadrature of the
/// matrix entries (trigonometric polynomials of degree <= 2, so 64 nodes are
/// exact to machine precision) or finite sums for atomic laws.
fn so2_exact_moments_quadrature(angle: &AngleLaw) -> ExactMoments {
    let kron_at = |theta: f64| {
        let r = Rotation::rotation_2d(theta);
        SuperOp::kron(&r.as_linop(), &r.as_linop()).unwrap()
    };
    match angle {
        AngleLaw::Uniform { lo, hi } => {
            let (nodes, weights) = gauss_legendre(64);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let mut r_bar = DMatrix::zeros(2, 2);
            let mut second = SuperOp::zeros(2);
            for (xn, wn) in nodes.iter().zip(weights) {
                let theta = mid + half * xn;
                let w = wn * half / (hi - lo);
                r_bar += Rotation::rotation_2d(theta).matrix() * w;
                second = second.add(&kron_at(theta).scale(w)).unwrap();
            }
            ExactMoments { r_bar: LinOp::from_matrix(r_bar), second }
        }
        AngleLaw::Atoms { angles, weights } => {
            let mut r_bar = DMatrix::zeros(2, 2);
            let mut second = SuperOp::zeros(2);
            for (a, w) in angles.iter().zip(weights) {
                r_bar += Rotation::rotation_2d(*a).matrix() * *w;
                second = second.add(&kron_at(*a).scale(*w)).unwrap();
            }
            ExactMoments { r_bar: LinOp::from_matrix(r_bar), second }
        }
        AngleLaw::Fixed { angle } => {
            let r = Rotation::rotation_2d(*angle);
            ExactMoments { r_bar: r.as_linop(), second: kron_at(*angle) }
        }
    }
}

/// Moments of a conjugation-invariant law on SO(3) from the block scalars:
/// `E r = c1 I`, and `E[r (x) r]` acts as 1 on span{I}, as `c1` on the
/// antisymmetric block and as `c2` on traceless symmetric matrices, with
/// `c1 = (1 + 2 E cos t)/3` and `c2 = (1 + 2 E cos t + 2 E cos 2t)/5`.
fn so3_conj_inv_moments(mean_cos: f64, mean_cos2: f64) -> ExactMoments {
    let c1 = (1.0 + 2.0 * mean_cos) / 3.0;
    let c2 = (1.0 + 2.0 * mean_cos + 2.0 * mean_cos2) / 5.0;
    let basis = SubspaceBasis::new(3);
    let (n1, ns, na) = basis.block_dims();
    let second = basis.superop_from_blocks(
        &DMatrix::identity(n1, n1),
        &(DMatrix::identity(ns, ns) * c2),
        &(DMatrix::identity(na, na) * c1),
    );
    ExactMoments { r_bar: LinOp::scaled_identity(3, c1), second }
}

fn fixed_axis_exact_moments(axis: &[f64; 3], angle: &AngleLaw) -> Result<ExactMoments> {
    let rot_at = |theta: f64| Rotation::from_axis_angle(axis, theta);
    let accumulate = |pairs: &[(f64, f64)]| -> Result<ExactMoments> {
        let mut r_bar = DMatrix::zeros(3, 3);
        let mut second = SuperOp::zeros(3);
        for (theta, w) in pairs {
            let r = rot_at(*theta)?;
            r_bar += r.matrix() * *w;
            second = second.add(&SuperOp::kron(&r.as_linop(), &r.as_linop())?.scale(*w))?;
        }
        Ok(ExactMoments { r_bar: LinOp::from_matrix(r_bar), second })
    };
    match angle {
        AngleLaw::Uniform { lo, hi } => {
            let (nodes, weights) = gauss_legendre(64);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let pairs: Vec<(f64, f64)> = nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| (mid + half * x, w * half / (hi - lo)))
                .collect();
            accumulate(&pairs)
        }
        AngleLaw::Atoms { angles, weights } => {
            let pairs: Vec<(f64, f64)> =
                angles.iter().cloned().zip(weights.iter().cloned()).collect();
            accumulate(&pairs)
        }
        AngleLaw::Fixed { angle } => accumulate(&[(*angle, 1.0)]),
    }
}

/// The 24 rotations of the cube: signed permutation matrices with
/// determinant +1.
pub fn cube_group_rotations() -> Vec<Rotation> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in perms {
        for signs in 0..8u8 {
            let mut m = DMatrix::<f64>::zeros(3, 3);
            for (row, &col) in perm.iter().enumerate() {
                let s = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                m[(row, col)] = s;
            }
            if (m.determinant() - 1.0).abs() < 1e-12 {
                out.push(Rotation::from_matrix_unchecked(m));
            }
        }
    }
    assert_eq!(out.len(), 24);
    out
}

/// Half-width `a` with `sin(a)/a = target`, unique on `(0, pi)`.
/// Used to tune window laws to a prescribed mean cosine.
pub fn window_halfwidth_for_mean_cos(target: f64) -> Result<f64> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target mean cosine {target} must lie in (0, 1)"
        )));
    }
    let sinc = |a: f64| a.sin() / a;
    let (mut lo, mut hi) = (1e-12, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sinc(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
