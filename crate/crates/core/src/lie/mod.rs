//! Embedded matrix Lie groups.
//!
//! Every group is a subgroup of `GL(n)`: rotations as orthogonal blocks,
//! `SE(n)` and `ℝⁿ` translations as homogeneous `(n+1)×(n+1)` matrices, direct
//! products as block-diagonal matrices. Algebra coordinates are taken in a
//! fixed basis per group:
//!
//! | group            | basis order                                        |
//! |------------------|----------------------------------------------------|
//! | `Translation(n)` | `E_0 … E_{n-1}` (unit translation along axis `i`)  |
//! | `SO2`            | `J = [[0,-1],[1,0]]`                               |
//! | `SO3`            | `L_x, L_y, L_z` (standard skew generators)         |
//! | `SE2`            | `E_x, E_y, J` (translation first, then rotation)   |
//! | `SE3`            | `E_x, E_y, E_z, L_x, L_y, L_z`                     |
//! | `Product`        | concatenation of the member bases, block-embedded  |

mod field;
pub mod matrix;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
pub use field::{check_group_linear, left_trivialize, FieldGKind, VectorFieldG};
use matrix::{expm, nearest_rotation, skew3};

/// Distance to the rotation cut locus below which `log` refuses to answer.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;

/// Relative tolerance for "this matrix lies in the Lie algebra".
pub const ALGEBRA_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    Translation(usize),
    SO2,
    SO3,
    SE2,
    SE3,
    Product(Vec<Arc<LieGroup>>),
}

/// A matrix Lie group together with its algebra basis.
#[derive(Debug)]
pub struct LieGroup {
    kind: GroupKind,
    matrix_dim: usize,
    basis: Vec<DMatrix<f64>>,
    gram_inverse: DMatrix<f64>,
    membership_tolerance: f64,
}

impl PartialEq for LieGroup {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl fmt::Display for LieGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            GroupKind::Translation(n) => write!(f, "R{n}"),
            GroupKind::SO2 => write!(f, "SO2"),
            GroupKind::SO3 => write!(f, "SO3"),
            GroupKind::SE2 => write!(f, "SE2"),
            GroupKind::SE3 => write!(f, "SE3"),
            GroupKind::Product(members) => {
                let names: Vec<String> = members.iter().map(|m| m.to_string()).collect();
                write!(f, "{}", names.join("x"))
            }
        }
    }
}

fn unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m
}

fn so3_basis() -> [DMatrix<f64>; 3] {
    let mk = |w: Vector3<f64>| {
        let k = skew3(&w);
        DMatrix::from_fn(3, 3, |i, j| k[(i, j)])
    };
    [mk(Vector3::x()), mk(Vector3::y()), mk(Vector3::z())]
}

fn embed(block: &DMatrix<f64>, n: usize, offset: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((offset, offset), block.shape()).copy_from(block);
    m
}

impl LieGroup {
    fn build(kind: GroupKind) -> Arc<LieGroup> {
        let (matrix_dim, basis): (usize, Vec<DMatrix<f64>>) = match &kind {
            GroupKind::Translation(n) => (n + 1, (0..*n).map(|i| unit(n + 1, i, *n)).collect()),
            GroupKind::SO2 => (2, vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])]),
            GroupKind::SO3 => (3, so3_basis().to_vec()),
            GroupKind::SE2 => {
                let mut j = DMatrix::zeros(3, 3);
                j[(0, 1)] = -1.0;
                j[(1, 0)] = 1.0;
                (3, vec![unit(3, 0, 2), unit(3, 1, 2), j])
            }
            GroupKind::SE3 => {
                let mut b: Vec<DMatrix<f64>> = (0..3).map(|i| unit(4, i, 3)).collect();
                b.extend(so3_basis().iter().map(|l| embed(l, 4, 0)));
                (4, b)
            }
            GroupKind::Product(members) => {
                let n: usize = members.iter().map(|m| m.matrix_dim).sum();
                let mut basis = Vec::new();
                let mut offset = 0;
                for m in members {
                    basis.extend(m.basis.iter().map(|b| embed(b, n, offset)));
                    offset += m.matrix_dim;
                }
                (n, basis)
            }
        };
        let d = basis.len();
        let gram = DMatrix::from_fn(d, d, |i, j| basis[i].dot(&basis[j]));
        let gram_inverse = gram.try_inverse().expect("algebra basis is linearly independent");
        Arc::new(LieGroup {
            kind,
            matrix_dim,
            basis,
            gram_inverse,
            membership_tolerance: 1e-9,
        })
    }

    pub fn translation(n: usize) -> Arc<LieGroup> {
        assert!(n > 0, "translation group needs n >= 1");
        Self::build(GroupKind::Translation(n))
    }
    pub fn so2() -> Arc<LieGroup> {
        Self::build(GroupKind::SO2)
    }
    pub fn so3() -> Arc<LieGroup> {
        Self::build(GroupKind::SO3)
    }
    pub fn se2() -> Arc<LieGroup> {
        Self::build(GroupKind::SE2)
    }
    pub fn se3() -> Arc<LieGroup> {
        Self::build(GroupKind::SE3)
    }
    pub fn product(members: Vec<Arc<LieGroup>>) -> Arc<LieGroup> {
        assert!(!members.is_empty(), "product of zero groups");
        Self::build(GroupKind::Product(members))
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }
    pub fn matrix_dim(&self) -> usize {
        self.matrix_dim
    }
    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }
    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }
    pub fn membership_tolerance(&self) -> f64 {
        self.membership_tolerance
    }

    pub(crate) fn ensure_same(&self, other: &LieGroup) -> Result<()> {
        if std::ptr::eq(self, other) || self == other {
            Ok(())
        } else {
            Err(Error::DescriptorMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            })
        }
    }

    /// `Σ cᵢ Bᵢ`.
    pub fn hat(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        let n = self.matrix_dim;
        let mut m = DMatrix::zeros(n, n);
        for (c, b) in coords.iter().zip(&self.basis) {
            if *c != 0.0 {
                m += b * *c;
            }
        }
        m
    }

    /// Least-squares algebra coordinates of `m` and the Frobenius distance from
    /// `m` to the algebra.
    pub fn vee(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let rhs = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|b| b.dot(m)));
        let coords = &self.gram_inverse * rhs;
        let residual = (m - self.hat(&coords)).norm();
        (coords, residual)
    }

    pub fn identity_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.matrix_dim, self.matrix_dim)
    }

    /// Residual of the defining constraints (zero exactly on the group).
    pub fn membership_residual(&self, m: &DMatrix<f64>) -> f64 {
        if m.shape() != (self.matrix_dim, self.matrix_dim) {
            return f64::INFINITY;
        }
        if m.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        let rotation = |r: DMatrix<f64>| {
            let k = r.nrows();
            let ortho = (r.transpose() * &r - DMatrix::identity(k, k)).norm();
            if r.determinant() < 0.0 {
                ortho + 2.0
            } else {
                ortho
            }
        };
        let homogeneous_row = |m: &DMatrix<f64>| {
            let n = m.nrows();
            let mut r = 0.0;
            for j in 0..n {
                let want = if j == n - 1 { 1.0 } else { 0.0 };
                r += (m[(n - 1, j)] - want).powi(2);
            }
            r.sqrt()
        };
        match &self.kind {
            GroupKind::SO2 | GroupKind::SO3 => rotation(m.clone()),
            GroupKind::SE2 | GroupKind::SE3 => {
                let k = self.matrix_dim - 1;
                rotation(m.view((0, 0), (k, k)).into_owned()) + homogeneous_row(m)
            }
            GroupKind::Translation(n) => {
                let top = (m.view((0, 0), (*n, *n)).into_owned() - DMatrix::identity(*n, *n)).norm();
                top + homogeneous_row(m)
            }
            GroupKind::Product(members) => {
                let mut total = 0.0;
                let mut offset = 0;
                let mut mask = DMatrix::from_element(self.matrix_dim, self.matrix_dim, 1.0);
                for g in members {
                    let k = g.matrix_dim;
                    total += g.membership_residual(&m.view((offset, offset), (k, k)).into_owned());
                    mask.view_mut((offset, offset), (k, k)).fill(0.0);
                    offset += k;
                }
                total + m.component_mul(&mask).norm()
            }
        }
    }

    /// Nearest group element (polar projection on rotation blocks, homogeneous
    /// patterns restored exactly).
    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.matrix_dim;
        match &self.kind {
            GroupKind::SO2 | GroupKind::SO3 => nearest_rotation(m),
            GroupKind::SE2 | GroupKind::SE3 => {
                let k = n - 1;
                let mut out = m.clone();
                let r = nearest_rotation(&m.view((0, 0), (k, k)).into_owned());
                out.view_mut((0, 0), (k, k)).copy_from(&r);
                out.row_mut(k).fill(0.0);
                out[(k, k)] = 1.0;
                out
            }
            GroupKind::Translation(k) => {
                let mut out = self.identity_matrix();
                for i in 0..*k {
                    out[(i, *k)] = m[(i, *k)];
                }
                out
            }
            GroupKind::Product(members) => {
                let mut out = DMatrix::zeros(n, n);
                let mut offset = 0;
                for g in members {
                    let k = g.matrix_dim;
                    let block = g.project(&m.view((offset, offset), (k, k)).into_owned());
                    out.view_mut((offset, offset), (k, k)).copy_from(&block);
                    offset += k;
                }
                out
            }
        }
    }

    pub(crate) fn exp_matrix(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            GroupKind::Translation(_) => self.identity_matrix() + self.hat(coords),
            GroupKind::SO2 => {
                let (s, c) = coords[0].sin_cos();
                DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
            }
            GroupKind::SO3 => {
                let r = so3_exp(&Vector3::new(coords[0], coords[1], coords[2]));
                DMatrix::from_fn(3, 3, |i, j| r[(i, j)])
            }
            GroupKind::SE2 => {
                let th = coords[2];
                let (s, c) = th.sin_cos();
                let v = se2_v(th);
                let t = v * Vector2::new(coords[0], coords[1]);
                DMatrix::from_row_slice(3, 3, &[c, -s, t.x, s, c, t.y, 0.0, 0.0, 1.0])
            }
            GroupKind::SE3 => {
                let rho = Vector3::new(coords[0], coords[1], coords[2]);
                let w = Vector3::new(coords[3], coords[4], coords[5]);
                let r = so3_exp(&w);
                let t = so3_left_jacobian(&w) * rho;
                let mut m = DMatrix::identity(4, 4);
                m.view_mut((0, 0), (3, 3)).copy_from(&r);
                m.view_mut((0, 3), (3, 1)).copy_from(&t);
                m
            }
            GroupKind::Product(_) => expm(&self.hat(coords)),
        }
    }

    fn log_matrix(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            GroupKind::Translation(n) => Ok(DVector::from_iterator(*n, (0..*n).map(|i| m[(i, *n)]))),
            GroupKind::SO2 => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                check_cut_locus(th)?;
                Ok(DVector::from_element(1, th))
            }
            GroupKind::SO3 => {
                let r = Matrix3::from_fn(|i, j| m[(i, j)]);
                let w = so3_log(&r)?;
                Ok(DVector::from_column_slice(w.as_slice()))
            }
            GroupKind::SE2 => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                check_cut_locus(th)?;
                let v = se2_v(th);
                let rho = v.try_inverse().ok_or(Error::Singular)? * Vector2::new(m[(0, 2)], m[(1, 2)]);
                Ok(DVector::from_column_slice(&[rho.x, rho.y, th]))
            }
            GroupKind::SE3 => {
                let r = Matrix3::from_fn(|i, j| m[(i, j)]);
                let w = so3_log(&r)?;
                let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
                let rho = so3_left_jacobian(&w).try_inverse().ok_or(Error::Singular)? * t;
                Ok(DVector::from_column_slice(&[rho.x, rho.y, rho.z, w.x, w.y, w.z]))
            }
            GroupKind::Product(members) => {
                let mut out = Vec::with_capacity(self.algebra_dim());
                let mut offset = 0;
                for g in members {
                    let k = g.matrix_dim;
                    out.extend(g.log_matrix(&m.view((offset, offset), (k, k)).into_owned())?.iter());
                    offset += k;
                }
                Ok(DVector::from_vec(out))
            }
        }
    }

    pub(crate) fn inverse_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.matrix_dim;
        match &self.kind {
            GroupKind::SO2 | GroupKind::SO3 => m.transpose(),
            GroupKind::SE2 | GroupKind::SE3 => {
                let k = n - 1;
                let rt = m.view((0, 0), (k, k)).transpose();
                let t = m.view((0, k), (k, 1)).into_owned();
                let mut out = DMatrix::identity(n, n);
                out.view_mut((0, k), (k, 1)).copy_from(&(-&rt * t));
                out.view_mut((0, 0), (k, k)).copy_from(&rt);
                out
            }
            GroupKind::Translation(k) => {
                let mut out = m.clone();
                for i in 0..*k {
                    out[(i, *k)] = -m[(i, *k)];
                }
                out
            }
            GroupKind::Product(members) => {
                let mut out = DMatrix::zeros(n, n);
                let mut offset = 0;
                for g in members {
                    let k = g.matrix_dim;
                    let block = g.inverse_matrix(&m.view((offset, offset), (k, k)).into_owned());
                    out.view_mut((offset, offset), (k, k)).copy_from(&block);
                    offset += k;
                }
                out
            }
        }
    }

    /// The identity element `e`.
    pub fn identity(self: &Arc<Self>) -> GroupElement {
        GroupElement {
            group: self.clone(),
            matrix: self.identity_matrix(),
        }
    }
}

fn check_cut_locus(angle: f64) -> Result<()> {
    if std::f64::consts::PI - angle.abs() < CUT_LOCUS_MARGIN {
        Err(Error::OutOfDomain {
            angle,
            margin: CUT_LOCUS_MARGIN,
        })
    } else {
        Ok(())
    }
}

fn se2_v(th: f64) -> Matrix2<f64> {
    let (a, b) = if th.abs() < 1e-5 {
        (1.0 - th * th / 6.0, th / 2.0 - th.powi(3) / 24.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / th)
    };
    Matrix2::new(a, -b, b, a)
}

pub(crate) fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let th = th2.sqrt();
    let (a, b) = if th < 1e-4 {
        (1.0 - th2 / 6.0 + th2 * th2 / 120.0, 0.5 - th2 / 24.0 + th2 * th2 / 720.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / th2)
    };
    let k = skew3(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3): maps the translational part of an se(3) vector to
/// the translation of its exponential.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let th = th2.sqrt();
    let (b, c) = if th < 1e-4 {
        (0.5 - th2 / 24.0 + th2 * th2 / 720.0, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0)
    } else {
        ((1.0 - th.cos()) / th2, (th - th.sin()) / (th2 * th))
    };
    let k = skew3(w);
    Matrix3::identity() + k * b + k * k * c
}

pub(crate) fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = v.norm();
    let th = sin.atan2(cos);
    check_cut_locus(th)?;
    if th < 1e-4 {
        // θ / sin θ ≈ 1 + θ²/6
        return Ok(v * (1.0 + th * th / 6.0));
    }
    if th < 2.5 {
        return Ok(v * (th / sin));
    }
    // Near π the antisymmetric part is tiny; read the axis off the symmetric part.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let i = (0..3).max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)])).unwrap();
    let mut axis: Vector3<f64> = sym.column(i).into_owned();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    Ok(axis * th)
}

/// An element of a matrix Lie group.
#[derive(Debug, Clone)]
pub struct GroupElement {
    group: Arc<LieGroup>,
    matrix: DMatrix<f64>,
}

impl GroupElement {
    /// Validates shape and membership.
    pub fn new(group: Arc<LieGroup>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = group.matrix_dim;
        if matrix.shape() != (n, n) {
            return Err(Error::Dimension {
                what: format!("{group} element matrix"),
                expected: n,
                found: matrix.nrows(),
            });
        }
        let residual = group.membership_residual(&matrix);
        if !(residual <= group.membership_tolerance) {
            return Err(Error::Membership {
                group: group.to_string(),
                residual,
            });
        }
        Ok(Self { group, matrix })
    }

    /// Projects `matrix` onto the group first (used after ambient integration steps).
    pub fn projected(group: Arc<LieGroup>, matrix: &DMatrix<f64>) -> Result<Self> {
        let m = group.project(matrix);
        Self::new(group, m)
    }

    pub(crate) fn from_matrix_unchecked(group: Arc<LieGroup>, matrix: DMatrix<f64>) -> Self {
        Self { group, matrix }
    }

    /// `exp(Σ cᵢ Bᵢ)`.
    pub fn from_coords(group: &Arc<LieGroup>, coords: &[f64]) -> Result<Self> {
        AlgebraVector::new(group.clone(), DVector::from_column_slice(coords))?.exp()
    }

    pub fn group(&self) -> &Arc<LieGroup> {
        &self.group
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        self.group.ensure_same(&other.group)?;
        GroupElement::new(self.group.clone(), &self.matrix * &other.matrix)
    }

    pub fn inverse(&self) -> Result<GroupElement> {
        let inv = self.group.inverse_matrix(&self.matrix);
        if inv.iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(GroupElement {
            group: self.group.clone(),
            matrix: inv,
        })
    }

    /// Principal logarithm; errors within `CUT_LOCUS_MARGIN` of a rotation by π.
    pub fn log(&self) -> Result<AlgebraVector> {
        let coords = self.group.log_matrix(&self.matrix)?;
        Ok(AlgebraVector {
            group: self.group.clone(),
            coords,
        })
    }

    /// Frobenius distance between matrices.
    pub fn distance(&self, other: &GroupElement) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }

    pub fn membership_residual(&self) -> f64 {
        self.group.membership_residual(&self.matrix)
    }

    /// `self · exp(ξ)`, the retraction used by the integrators and solvers.
    pub fn retract(&self, xi: &AlgebraVector) -> Result<GroupElement> {
        let step = xi.exp()?;
        self.group.ensure_same(&step.group)?;
        Ok(GroupElement {
            group: self.group.clone(),
            matrix: &self.matrix * step.matrix,
        })
    }

    /// Integer power `gⁿ` (negative powers through the inverse).
    pub fn pow(&self, n: i32) -> Result<GroupElement> {
        let base = if n < 0 { self.inverse()? } else { self.clone() };
        let mut out = self.group.identity();
        for _ in 0..n.unsigned_abs() {
            out = out.compose(&base)?;
        }
        Ok(out)
    }
}

/// A Lie algebra element in the group's fixed basis.
#[derive(Debug, Clone)]
pub struct AlgebraVector {
    group: Arc<LieGroup>,
    coords: DVector<f64>,
}

impl AlgebraVector {
    pub fn new(group: Arc<LieGroup>, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != group.algebra_dim() {
            return Err(Error::Dimension {
                what: format!("{group} algebra coordinates"),
                expected: group.algebra_dim(),
                found: coords.len(),
            });
        }
        Ok(Self { group, coords })
    }

    pub fn zero(group: &Arc<LieGroup>) -> Self {
        Self {
            group: group.clone(),
            coords: DVector::zeros(group.algebra_dim()),
        }
    }

    pub fn from_slice(group: &Arc<LieGroup>, coords: &[f64]) -> Result<Self> {
        Self::new(group.clone(), DVector::from_column_slice(coords))
    }

    /// Coordinates of a matrix in the algebra; errors if it is not in the algebra.
    pub fn from_matrix(group: &Arc<LieGroup>, m: &DMatrix<f64>) -> Result<Self> {
        let (coords, residual) = group.vee(m);
        if residual > ALGEBRA_TOLERANCE * m.norm().max(1.0) {
            return Err(Error::NotInAlgebra { residual });
        }
        Ok(Self {
            group: group.clone(),
            coords,
        })
    }

    pub fn group(&self) -> &Arc<LieGroup> {
        &self.group
    }
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
    pub fn matrix(&self) -> DMatrix<f64> {
        self.group.hat(&self.coords)
    }

    pub fn exp(&self) -> Result<GroupElement> {
        if self.coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite algebra coordinates".into()));
        }
        Ok(GroupElement {
            group: self.group.clone(),
            matrix: self.group.exp_matrix(&self.coords),
        })
    }

    pub fn scale(&self, s: f64) -> AlgebraVector {
        AlgebraVector {
            group: self.group.clone(),
            coords: &self.coords * s,
        }
    }

    /// The tangent vector at `e` this algebra element identifies with.
    pub fn at_identity(&self) -> TangentVectorG {
        TangentVectorG {
            base: self.group.identity(),
            matrix: self.matrix(),
        }
    }
}

/// A tangent vector at `base`, stored as an ambient matrix.
#[derive(Debug, Clone)]
pub struct TangentVectorG {
    base: GroupElement,
    matrix: DMatrix<f64>,
}

impl TangentVectorG {
    /// Validates that `base⁻¹ · matrix` lies in the algebra.
    pub fn new(base: GroupElement, matrix: DMatrix<f64>) -> Result<Self> {
        let n = base.group.matrix_dim;
        if matrix.shape() != (n, n) {
            return Err(Error::Dimension {
                what: "tangent vector matrix".into(),
                expected: n,
                found: matrix.nrows(),
            });
        }
        let v = Self { base, matrix };
        v.left_trivialized()?;
        Ok(v)
    }

    pub(crate) fn new_unchecked(base: GroupElement, matrix: DMatrix<f64>) -> Self {
        Self { base, matrix }
    }

    pub fn zero(base: GroupElement) -> Self {
        let n = base.group.matrix_dim;
        Self {
            base,
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn base(&self) -> &GroupElement {
        &self.base
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Algebra coordinates of `dL_{g⁻¹} v = g⁻¹ · v`.
    pub fn left_trivialized(&self) -> Result<AlgebraVector> {
        let ginv = self.base.inverse()?;
        AlgebraVector::from_matrix(&self.base.group, &(ginv.matrix * &self.matrix))
    }
}

/// `dL_g v`: base becomes `g · base`, matrix becomes `g · v`.
pub fn d_left(g: &GroupElement, v: &TangentVectorG) -> Result<TangentVectorG> {
    g.group.ensure_same(&v.base.group)?;
    Ok(TangentVectorG {
        base: GroupElement::from_matrix_unchecked(g.group.clone(), &g.matrix * &v.base.matrix),
        matrix: &g.matrix * &v.matrix,
    })
}

/// `dR_h v`: base becomes `base · h`, matrix becomes `v · h`.
pub fn d_right(h: &GroupElement, v: &TangentVectorG) -> Result<TangentVectorG> {
    h.group.ensure_same(&v.base.group)?;
    Ok(TangentVectorG {
        base: GroupElement::from_matrix_unchecked(h.group.clone(), &v.base.matrix * &h.matrix),
        matrix: &v.matrix * &h.matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_groups() -> Vec<Arc<LieGroup>> {
        vec![
            LieGroup::translation(3),
            LieGroup::so2(),
            LieGroup::so3(),
            LieGroup::se2(),
            LieGroup::se3(),
            LieGroup::product(vec![LieGroup::so2(), LieGroup::translation(1)]),
        ]
    }

    #[test]
    fn bases_are_independent_and_exp_stays_on_group() {
        for g in all_groups() {
            let d = g.algebra_dim();
            let n = g.matrix_dim();
            let stack = DMatrix::from_fn(d, n * n, |i, j| g.basis()[i][(j / n, j % n)]);
            assert_eq!(stack.rank(1e-12), d, "{g}");
            for i in 0..d {
                let mut c = DVector::zeros(d);
                c[i] = 1.0;
                let e = AlgebraVector::new(g.clone(), c).unwrap().exp().unwrap();
                assert!(e.membership_residual() < 1e-12, "{g} basis {i}");
            }
        }
    }

    #[test]
    fn so2_angles_add() {
        let g = LieGroup::so2();
        let a = GroupElement::from_coords(&g, &[0.3]).unwrap();
        let b = GroupElement::from_coords(&g, &[0.4]).unwrap();
        let c = a.compose(&b).unwrap();
        assert!(c.distance(&GroupElement::from_coords(&g, &[0.7]).unwrap()) < 1e-15);
    }

    #[test]
    fn so2_exp_defining_formula() {
        let g = LieGroup::so2();
        let r = GroupElement::from_coords(&g, &[0.5]).unwrap();
        let (s, c) = 0.5f64.sin_cos();
        assert!((r.matrix() - DMatrix::from_row_slice(2, 2, &[c, -s, s, c])).norm() < 1e-16);
    }

    #[test]
    fn se2_product_matches_matrix_oracle() {
        let g = LieGroup::se2();
        let a = GroupElement::new(
            g.clone(),
            DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let b = GroupElement::new(g.clone(), DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])).unwrap();
        let c = a.compose(&b).unwrap();
        // R(π/2)·(0,1) = (−1,0), so t = (1,0) + (−1,0) = (0,0); rotation stays π/2.
        let want = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((c.matrix() - want).norm() < 1e-15);
    }

    #[test]
    fn identity_and_zero_exp() {
        for g in all_groups() {
            let e = AlgebraVector::zero(&g).exp().unwrap();
            assert!((e.matrix() - g.identity_matrix()).norm() == 0.0);
            let inv = g.identity().inverse().unwrap();
            assert!(inv.distance(&g.identity()) == 0.0);
        }
    }

    #[test]
    fn log_rejects_cut_locus() {
        let g = LieGroup::so3();
        let x = GroupElement::from_coords(&g, &[std::f64::consts::PI, 0.0, 0.0]).unwrap();
        assert!(matches!(x.log(), Err(Error::OutOfDomain { .. })));
        let near = GroupElement::from_coords(&g, &[0.0, std::f64::consts::PI - 1e-3, 0.0]).unwrap();
        let w = near.log().unwrap();
        assert!((w.coords()[1] - (std::f64::consts::PI - 1e-3)).abs() < 1e-9);
        let s = LieGroup::se2();
        let y = GroupElement::from_coords(&s, &[1.0, 0.0, std::f64::consts::PI]).unwrap();
        assert!(y.log().is_err());
    }

    #[test]
    fn membership_errors() {
        let g = LieGroup::so3();
        let bad = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(GroupElement::new(g.clone(), bad), Err(Error::Membership { .. })));
        let reflect = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.0, -1.0]));
        assert!(GroupElement::new(g.clone(), reflect).is_err());
        let a = GroupElement::from_coords(&g, &[0.1, 0.2, 0.3]).unwrap();
        let b = GroupElement::from_coords(&LieGroup::so2(), &[0.1]).unwrap();
        assert!(matches!(a.compose(&b), Err(Error::DescriptorMismatch { .. })));
        assert!(AlgebraVector::from_slice(&g, &[1.0]).is_err());
    }

    #[test]
    fn tangent_must_left_trivialize_into_algebra() {
        let g = LieGroup::so3();
        let x = GroupElement::from_coords(&g, &[0.4, -0.2, 0.9]).unwrap();
        let sym = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(matches!(
            TangentVectorG::new(x.clone(), x.matrix() * sym),
            Err(Error::NotInAlgebra { .. })
        ));
        let xi = AlgebraVector::from_slice(&g, &[0.1, 0.2, 0.3]).unwrap();
        let v = TangentVectorG::new(x.clone(), x.matrix() * xi.matrix()).unwrap();
        assert!((v.left_trivialized().unwrap().coords() - xi.coords()).norm() < 1e-15);
    }

    #[test]
    fn d_left_identity_and_functoriality() {
        let g = LieGroup::so3();
        let x = GroupElement::from_coords(&g, &[0.4, -0.2, 0.9]).unwrap();
        let y = GroupElement::from_coords(&g, &[-1.0, 0.3, 0.2]).unwrap();
        let v = TangentVectorG::new(y.clone(), y.matrix() * g.basis()[0].clone()).unwrap();
        let same = d_left(&g.identity(), &v).unwrap();
        assert!((same.matrix() - v.matrix()).norm() == 0.0);
        let back = d_left(&x, &d_left(&x.inverse().unwrap(), &v).unwrap()).unwrap();
        assert!((back.matrix() - v.matrix()).norm() < 1e-14);
        assert!(back.base().distance(&y) < 1e-14);
    }

    #[test]
    fn pow_matches_exp_scaling() {
        let g = LieGroup::so3();
        let xi = AlgebraVector::from_slice(&g, &[0.1, -0.2, 0.05]).unwrap();
        let x = xi.exp().unwrap();
        let x5 = x.pow(5).unwrap();
        assert!(x5.distance(&xi.scale(5.0).exp().unwrap()) < 1e-13);
        let xm2 = x.pow(-2).unwrap();
        assert!(xm2.distance(&xi.scale(-2.0).exp().unwrap()) < 1e-14);
    }

    #[test]
    fn product_exp_uses_block_structure() {
        let g = LieGroup::product(vec![LieGroup::so2(), LieGroup::translation(1)]);
        let x = GroupElement::from_coords(&g, &[0.7, 2.0]).unwrap();
        let (s, c) = 0.7f64.sin_cos();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert!((x.matrix() - want).norm() < 1e-14);
        let l = x.log().unwrap();
        assert!((l.coords() - DVector::from_column_slice(&[0.7, 2.0])).norm() < 1e-14);
    }
}
