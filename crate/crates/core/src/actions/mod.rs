//! Smooth group actions `Φ : G × M → M` on embedded manifolds.
//!
//! Points are stored as ambient coordinate vectors; a matrix group viewed as a
//! manifold uses row-major flattened matrices. Every builtin action supplies
//! its differentials analytically:
//!
//! * `dΦ_g`: the differential in the `M` slot, `T_pM → T_{Φ(g,p)}M`;
//! * `dΦ^p`: the differential in the `G` slot, `T_gG → T_{Φ(g,p)}M`.
//!
//! Finite differences are only used to cross-check them.

mod field;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lie::matrix::{flatten_row_major, from_row_major};
use crate::lie::{AlgebraVector, GroupElement, GroupKind, LieGroup, TangentVectorG};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan};
pub use field::{CascadeParams, FieldMKind, VectorFieldM};

/// Constraint residual accepted for manifold points.
pub const POINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldKind {
    Euclidean(usize),
    MatrixGroup(Arc<LieGroup>),
    Product(Vec<Arc<ManifoldDescriptor>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldDescriptor {
    kind: ManifoldKind,
    ambient_dim: usize,
}

impl fmt::Display for ManifoldDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ManifoldKind::Euclidean(n) => write!(f, "R^{n}"),
            ManifoldKind::MatrixGroup(g) => write!(f, "{g} (as manifold)"),
            ManifoldKind::Product(ms) => {
                let names: Vec<String> = ms.iter().map(|m| m.to_string()).collect();
                write!(f, "{}", names.join(" x "))
            }
        }
    }
}

impl ManifoldDescriptor {
    pub fn euclidean(n: usize) -> Arc<Self> {
        Arc::new(Self {
            kind: ManifoldKind::Euclidean(n),
            ambient_dim: n,
        })
    }

    pub fn matrix_group(group: Arc<LieGroup>) -> Arc<Self> {
        let n = group.matrix_dim();
        Arc::new(Self {
            kind: ManifoldKind::MatrixGroup(group),
            ambient_dim: n * n,
        })
    }

    pub fn product(members: Vec<Arc<ManifoldDescriptor>>) -> Arc<Self> {
        let ambient_dim = members.iter().map(|m| m.ambient_dim).sum();
        Arc::new(Self {
            kind: ManifoldKind::Product(members),
            ambient_dim,
        })
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// The group, when this manifold is a matrix group.
    pub fn as_group(&self) -> Option<&Arc<LieGroup>> {
        match &self.kind {
            ManifoldKind::MatrixGroup(g) => Some(g),
            _ => None,
        }
    }

    /// Zero on the manifold; `None` for unconstrained Euclidean space.
    pub fn constraint_residual(&self, coords: &DVector<f64>) -> Option<f64> {
        match &self.kind {
            ManifoldKind::Euclidean(_) => None,
            ManifoldKind::MatrixGroup(g) => {
                Some(g.membership_residual(&from_row_major(g.matrix_dim(), coords.as_slice())))
            }
            ManifoldKind::Product(members) => {
                let mut offset = 0;
                let mut total = None;
                for m in members {
                    let part = coords.rows(offset, m.ambient_dim).into_owned();
                    if let Some(r) = m.constraint_residual(&part) {
                        total = Some(total.unwrap_or(0.0) + r);
                    }
                    offset += m.ambient_dim;
                }
                total
            }
        }
    }

    /// Projects ambient coordinates back onto the manifold.
    pub fn project(&self, coords: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ManifoldKind::Euclidean(_) => coords.clone(),
            ManifoldKind::MatrixGroup(g) => {
                let m = g.project(&from_row_major(g.matrix_dim(), coords.as_slice()));
                DVector::from_vec(flatten_row_major(&m))
            }
            ManifoldKind::Product(members) => {
                let mut out = coords.clone();
                let mut offset = 0;
                for m in members {
                    let part = m.project(&coords.rows(offset, m.ambient_dim).into_owned());
                    out.rows_mut(offset, m.ambient_dim).copy_from(&part);
                    offset += m.ambient_dim;
                }
                out
            }
        }
    }

    /// Residual of `dir` against the tangent space at `base` (zero when tangent).
    pub fn tangent_residual(&self, base: &DVector<f64>, dir: &DVector<f64>) -> f64 {
        match &self.kind {
            ManifoldKind::Euclidean(_) => 0.0,
            ManifoldKind::MatrixGroup(g) => {
                let n = g.matrix_dim();
                let b = from_row_major(n, base.as_slice());
                let v = from_row_major(n, dir.as_slice());
                match b.try_inverse() {
                    Some(binv) => {
                        let x = binv * v;
                        g.vee(&x).1 / x.norm().max(1.0)
                    }
                    None => f64::INFINITY,
                }
            }
            ManifoldKind::Product(members) => {
                let mut offset = 0;
                let mut total = 0.0;
                for m in members {
                    let k = m.ambient_dim;
                    total += m.tangent_residual(
                        &base.rows(offset, k).into_owned(),
                        &dir.rows(offset, k).into_owned(),
                    );
                    offset += k;
                }
                total
            }
        }
    }

    /// Dimension of the unit cube the sampler draws from.
    pub fn sampling_dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Euclidean(n) => *n,
            ManifoldKind::MatrixGroup(g) => g.algebra_dim(),
            ManifoldKind::Product(ms) => ms.iter().map(|m| m.sampling_dim()).sum(),
        }
    }

    pub(crate) fn point_from_unit(&self, u: &[f64], plan: &SamplingPlan) -> Result<DVector<f64>> {
        match &self.kind {
            ManifoldKind::Euclidean(_) => Ok(plan.euclidean_from_unit(u)),
            ManifoldKind::MatrixGroup(g) => {
                let coords: Vec<f64> = u.iter().map(|x| (2.0 * x - 1.0) * plan.box_half_width).collect();
                let e = GroupElement::from_coords(g, &coords)?;
                Ok(DVector::from_vec(flatten_row_major(e.matrix())))
            }
            ManifoldKind::Product(ms) => {
                let mut out = Vec::with_capacity(self.ambient_dim);
                let mut offset = 0;
                for m in ms {
                    let k = m.sampling_dim();
                    out.extend(m.point_from_unit(&u[offset..offset + k], plan)?.iter());
                    offset += k;
                }
                Ok(DVector::from_vec(out))
            }
        }
    }

    /// Ambient basis of the tangent space at `base` (columns), used by the
    /// finite-difference cross-checks.
    pub(crate) fn tangent_basis(&self, base: &DVector<f64>) -> Vec<DVector<f64>> {
        match &self.kind {
            ManifoldKind::Euclidean(n) => (0..*n).map(|i| DVector::from_fn(*n, |j, _| (i == j) as u8 as f64)).collect(),
            ManifoldKind::MatrixGroup(g) => {
                let b = from_row_major(g.matrix_dim(), base.as_slice());
                g.basis()
                    .iter()
                    .map(|e| DVector::from_vec(flatten_row_major(&(&b * e))))
                    .collect()
            }
            ManifoldKind::Product(ms) => {
                let mut out = Vec::new();
                let mut offset = 0;
                for m in ms {
                    let k = m.ambient_dim;
                    for v in m.tangent_basis(&base.rows(offset, k).into_owned()) {
                        let mut full = DVector::zeros(self.ambient_dim);
                        full.rows_mut(offset, k).copy_from(&v);
                        out.push(full);
                    }
                    offset += k;
                }
                out
            }
        }
    }
}

/// A point of a manifold in ambient coordinates.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    manifold: Arc<ManifoldDescriptor>,
    coords: DVector<f64>,
}

impl ManifoldPoint {
    pub fn new(manifold: Arc<ManifoldDescriptor>, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != manifold.ambient_dim {
            return Err(Error::Dimension {
                what: format!("point on {manifold}"),
                expected: manifold.ambient_dim,
                found: coords.len(),
            });
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite point coordinates".into()));
        }
        if let Some(r) = manifold.constraint_residual(&coords) {
            if !(r < POINT_TOLERANCE) {
                return Err(Error::Membership {
                    group: manifold.to_string(),
                    residual: r,
                });
            }
        }
        Ok(Self { manifold, coords })
    }

    pub fn from_slice(manifold: &Arc<ManifoldDescriptor>, coords: &[f64]) -> Result<Self> {
        Self::new(manifold.clone(), DVector::from_column_slice(coords))
    }

    pub(crate) fn new_unchecked(manifold: Arc<ManifoldDescriptor>, coords: DVector<f64>) -> Self {
        Self { manifold, coords }
    }

    /// A group element viewed as a point of the group manifold.
    pub fn from_group_element(manifold: &Arc<ManifoldDescriptor>, g: &GroupElement) -> Result<Self> {
        match manifold.as_group() {
            Some(group) => {
                group.ensure_same(g.group())?;
                Ok(Self {
                    manifold: manifold.clone(),
                    coords: DVector::from_vec(flatten_row_major(g.matrix())),
                })
            }
            None => Err(Error::InvalidConfig(format!("{manifold} is not a matrix group"))),
        }
    }

    pub fn to_group_element(&self) -> Result<GroupElement> {
        let group = self
            .manifold
            .as_group()
            .ok_or_else(|| Error::InvalidConfig(format!("{} is not a matrix group", self.manifold)))?;
        GroupElement::new(group.clone(), from_row_major(group.matrix_dim(), self.coords.as_slice()))
    }

    pub fn manifold(&self) -> &Arc<ManifoldDescriptor> {
        &self.manifold
    }
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn distance(&self, other: &ManifoldPoint) -> f64 {
        (&self.coords - &other.coords).norm()
    }
}

/// A tangent vector `dir ∈ T_pM` in ambient coordinates.
#[derive(Debug, Clone)]
pub struct TangentVectorM {
    base: ManifoldPoint,
    dir: DVector<f64>,
}

/// Tangency tolerance for constrained manifolds.
pub const TANGENT_TOLERANCE: f64 = 1e-8;

impl TangentVectorM {
    pub fn new(base: ManifoldPoint, dir: DVector<f64>) -> Result<Self> {
        if dir.len() != base.manifold.ambient_dim {
            return Err(Error::Dimension {
                what: "tangent vector".into(),
                expected: base.manifold.ambient_dim,
                found: dir.len(),
            });
        }
        let r = base.manifold.tangent_residual(&base.coords, &dir);
        if r > TANGENT_TOLERANCE {
            return Err(Error::NotInAlgebra { residual: r });
        }
        Ok(Self { base, dir })
    }

    pub(crate) fn new_unchecked(base: ManifoldPoint, dir: DVector<f64>) -> Self {
        Self { base, dir }
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let n = base.manifold.ambient_dim;
        Self {
            base,
            dir: DVector::zeros(n),
        }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }
    pub fn dir(&self) -> &DVector<f64> {
        &self.dir
    }
}

/// The raw action map on ambient coordinates. Implementors need not validate
/// inputs; [`GroupAction`] does that.
pub trait ActionMap: Send + Sync {
    /// `Φ(g, p)`.
    fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64>;
    /// `dΦ_g(v)` for `v ∈ T_pM`.
    fn d_phi_g(&self, g: &DMatrix<f64>, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    /// `dΦ^p(w)` for `w ∈ T_gG` given as an ambient matrix.
    fn d_phi_p(&self, p: &DVector<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64>;
}

/// Which builtin action this is, when it is one.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    /// `ℝᵏ` translating the listed coordinate axes of `ℝᴺ`.
    Translation { axes: Vec<usize> },
    /// `G` acting on itself by `L_g(h) = gh`.
    LeftTranslation,
    /// `SO(n)` rotating `ℝⁿ`.
    Rotation,
    /// `SE(n)` acting on `ℝⁿ` by `p ↦ Rp + t`.
    Rigid,
    /// `SO(2) × ℝ` acting on `ℝ²∖{0}` by `p ↦ eˢ R p`.
    ScalingRotation,
    Custom,
}

struct TranslationMap {
    axes: Vec<usize>,
}

impl ActionMap for TranslationMap {
    fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
        let k = self.axes.len();
        let mut out = p.clone();
        for (i, &a) in self.axes.iter().enumerate() {
            out[a] += g[(i, k)];
        }
        out
    }
    fn d_phi_g(&self, _g: &DMatrix<f64>, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }
    fn d_phi_p(&self, p: &DVector<f64>, _g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64> {
        let k = self.axes.len();
        let mut out = DVector::zeros(p.len());
        for (i, &a) in self.axes.iter().enumerate() {
            out[a] = w[(i, k)];
        }
        out
    }
}

struct LeftMap {
    n: usize,
}

impl ActionMap for LeftMap {
    fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(flatten_row_major(&(g * from_row_major(self.n, p.as_slice()))))
    }
    fn d_phi_g(&self, g: &DMatrix<f64>, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(flatten_row_major(&(g * from_row_major(self.n, v.as_slice()))))
    }
    fn d_phi_p(&self, p: &DVector<f64>, _g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_vec(flatten_row_major(&(w * from_row_major(self.n, p.as_slice()))))
    }
}

/// `p ↦ R p + t` with `g` homogeneous of size `n+1` (or `R p` when `homogeneous` is false).
struct LinearMap {
    n: usize,
    homogeneous: bool,
}

impl LinearMap {
    fn split(&self, g: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let r = g.view((0, 0), (self.n, self.n)).into_owned();
        let t = if self.homogeneous {
            g.view((0, self.n), (self.n, 1)).column(0).into_owned()
        } else {
            DVector::zeros(self.n)
        };
        (r, t)
    }
}

impl ActionMap for LinearMap {
    fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
        let (r, t) = self.split(g);
        r * p + t
    }
    fn d_phi_g(&self, g: &DMatrix<f64>, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.split(g).0 * v
    }
    fn d_phi_p(&self, p: &DVector<f64>, _g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64> {
        let (rdot, tdot) = self.split(w);
        rdot * p + tdot
    }
}

/// `SO(2) × ℝ` embedded as `diag(R, [[1, s], [0, 1]])` acting by `eˢ R p`.
struct ScalingRotationMap;

impl ScalingRotationMap {
    fn parts(g: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        (g.view((0, 0), (2, 2)).into_owned(), g[(2, 3)])
    }
}

impl ActionMap for ScalingRotationMap {
    fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
        let (r, s) = Self::parts(g);
        r * p * s.exp()
    }
    fn d_phi_g(&self, g: &DMatrix<f64>, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (r, s) = Self::parts(g);
        r * v * s.exp()
    }
    fn d_phi_p(&self, p: &DVector<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64> {
        let (r, s) = Self::parts(g);
        let (rdot, sdot) = Self::parts(w);
        (rdot * p + r * p * sdot) * s.exp()
    }
}

/// A smooth left action `Φ : G × M → M` with analytic differentials.
#[derive(Clone)]
pub struct GroupAction {
    name: String,
    kind: ActionKind,
    group: Arc<LieGroup>,
    manifold: Arc<ManifoldDescriptor>,
    map: Arc<dyn ActionMap>,
    declared_free: bool,
    declared_effective: bool,
    transitive: bool,
}

impl fmt::Debug for GroupAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupAction")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("group", &self.group.to_string())
            .field("manifold", &self.manifold.to_string())
            .finish()
    }
}

impl GroupAction {
    /// `ℝᵏ` translating the coordinates `axes` of `ℝᴺ`.
    pub fn translation(ambient: usize, axes: Vec<usize>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&a| a >= ambient) {
            return Err(Error::InvalidConfig(format!("translation axes {axes:?} invalid for R^{ambient}")));
        }
        let mut sorted = axes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::InvalidConfig(format!("repeated translation axes {axes:?}")));
        }
        Ok(Self {
            name: format!("translation{axes:?} on R^{ambient}"),
            kind: ActionKind::Translation { axes: axes.clone() },
            group: LieGroup::translation(axes.len()),
            manifold: ManifoldDescriptor::euclidean(ambient),
            map: Arc::new(TranslationMap { axes }),
            declared_free: true,
            declared_effective: true,
            transitive: sorted.len() == ambient,
        })
    }

    /// `G` acting on itself by left translation.
    pub fn left_translation(group: Arc<LieGroup>) -> Self {
        let n = group.matrix_dim();
        Self {
            name: format!("left translation of {group}"),
            kind: ActionKind::LeftTranslation,
            manifold: ManifoldDescriptor::matrix_group(group.clone()),
            group,
            map: Arc::new(LeftMap { n }),
            declared_free: true,
            declared_effective: true,
            transitive: true,
        }
    }

    /// `SO(2)` on `ℝ²` (free away from the origin) or `SO(3)` on `ℝ³` (never free).
    pub fn rotation(group: Arc<LieGroup>) -> Result<Self> {
        let (n, free) = match group.kind() {
            GroupKind::SO2 => (2, true),
            GroupKind::SO3 => (3, false),
            _ => return Err(Error::InvalidConfig(format!("rotation action needs SO2 or SO3, got {group}"))),
        };
        Ok(Self {
            name: format!("{group} rotating R^{n}"),
            kind: ActionKind::Rotation,
            manifold: ManifoldDescriptor::euclidean(n),
            group,
            map: Arc::new(LinearMap { n, homogeneous: false }),
            declared_free: free,
            declared_effective: true,
            transitive: false,
        })
    }

    /// `SE(2)` on `ℝ²` or `SE(3)` on `ℝ³`.
    pub fn rigid(group: Arc<LieGroup>) -> Result<Self> {
        let n = match group.kind() {
            GroupKind::SE2 => 2,
            GroupKind::SE3 => 3,
            _ => return Err(Error::InvalidConfig(format!("rigid action needs SE2 or SE3, got {group}"))),
        };
        Ok(Self {
            name: format!("{group} moving R^{n}"),
            kind: ActionKind::Rigid,
            manifold: ManifoldDescriptor::euclidean(n),
            group,
            map: Arc::new(LinearMap { n, homogeneous: true }),
            declared_free: false,
            declared_effective: true,
            transitive: true,
        })
    }

    /// `SO(2) × ℝ` acting on `ℝ²∖{0}` by rotation and scaling by `eˢ`.
    pub fn scaling_rotation() -> Self {
        let group = LieGroup::product(vec![LieGroup::so2(), LieGroup::translation(1)]);
        Self {
            name: "scaling-rotation of R^2\\{0}".into(),
            kind: ActionKind::ScalingRotation,
            manifold: ManifoldDescriptor::euclidean(2),
            group,
            map: Arc::new(ScalingRotationMap),
            declared_free: true,
            declared_effective: true,
            transitive: true,
        }
    }

    /// Arbitrary action map. The caller declares freeness and effectiveness.
    pub fn custom(
        name: impl Into<String>,
        group: Arc<LieGroup>,
        manifold: Arc<ManifoldDescriptor>,
        map: Arc<dyn ActionMap>,
        declared_free: bool,
        declared_effective: bool,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ActionKind::Custom,
            group,
            manifold,
            map,
            declared_free,
            declared_effective,
            transitive: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kind(&self) -> &ActionKind {
        &self.kind
    }
    pub fn group(&self) -> &Arc<LieGroup> {
        &self.group
    }
    pub fn manifold(&self) -> &Arc<ManifoldDescriptor> {
        &self.manifold
    }
    pub fn declared_free(&self) -> bool {
        self.declared_free
    }
    pub fn declared_effective(&self) -> bool {
        self.declared_effective
    }
    pub fn is_transitive(&self) -> bool {
        self.transitive
    }
    fn check_point(&self, p: &ManifoldPoint) -> Result<()> {
        if p.manifold.as_ref() != self.manifold.as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: self.manifold.to_string(),
                found: p.manifold.to_string(),
            });
        }
        Ok(())
    }

    /// `Φ(g, p)`.
    pub fn apply(&self, g: &GroupElement, p: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.group.ensure_same(g.group())?;
        self.check_point(p)?;
        Ok(ManifoldPoint::new_unchecked(
            self.manifold.clone(),
            self.map.apply(g.matrix(), &p.coords),
        ))
    }

    /// `dΦ_g(v)`, a tangent vector at `Φ(g, v.base)`.
    pub fn d_phi_g(&self, g: &GroupElement, v: &TangentVectorM) -> Result<TangentVectorM> {
        let base = self.apply(g, &v.base)?;
        let dir = self.map.d_phi_g(g.matrix(), &v.base.coords, &v.dir);
        Ok(TangentVectorM::new_unchecked(base, dir))
    }

    /// `dΦ^p(w)`, a tangent vector at `Φ(w.base, p)`.
    pub fn d_phi_p(&self, p: &ManifoldPoint, w: &TangentVectorG) -> Result<TangentVectorM> {
        let base = self.apply(w.base(), p)?;
        let dir = self.map.d_phi_p(&p.coords, w.base().matrix(), w.matrix());
        Ok(TangentVectorM::new_unchecked(base, dir))
    }

    /// Full differential `dΦ(w, v) = dΦ_g(v) + dΦ^p(w)` at `(w.base, v.base)`.
    pub fn d_phi(&self, w: &TangentVectorG, v: &TangentVectorM) -> Result<TangentVectorM> {
        let a = self.d_phi_g(w.base(), v)?;
        let b = self.d_phi_p(&v.base, w)?;
        Ok(TangentVectorM::new_unchecked(a.base, a.dir + b.dir))
    }
}

/// `ξ_M(p) = d/dt Φ(exp(tξ), p)|₀ = dΦ^p(ξ)`.
pub fn infinitesimal_generator(action: &GroupAction, xi: &AlgebraVector, p: &ManifoldPoint) -> Result<TangentVectorM> {
    action.group.ensure_same(xi.group())?;
    action.d_phi_p(p, &xi.at_identity())
}

/// `N × d` matrix whose column `j` is the generator of basis element `j` at `p`.
pub fn generator_matrix(action: &GroupAction, p: &ManifoldPoint) -> Result<DMatrix<f64>> {
    action.check_point(p)?;
    let group = &action.group;
    let e = group.identity_matrix();
    let cols: Vec<DVector<f64>> = group
        .basis()
        .iter()
        .map(|b| action.map.d_phi_p(&p.coords, &e, b))
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

/// Smallest singular value of a matrix (zero for an empty one).
pub(crate) fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Outcome of the infinitesimal freeness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreenessCheck {
    pub free: bool,
    /// Smallest singular value of the generator matrix over the samples.
    pub min_singular: f64,
    pub mean_min_singular: f64,
}

/// Infinitesimal freeness: `dΦ^p` injective (rank `d`) at every sampled point.
pub fn check_free(action: &GroupAction, plan: &SamplingPlan, threshold: f64) -> Result<FreenessCheck> {
    let points = plan.manifold_points(&action.manifold)?;
    let svs = par::try_map(&points, |p| Ok::<f64, Error>(min_singular_value(&generator_matrix(action, p)?)))?;
    let min = svs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = svs.iter().sum::<f64>() / svs.len().max(1) as f64;
    Ok(FreenessCheck {
        free: min >= threshold,
        min_singular: min,
        mean_min_singular: mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomStats {
    /// `‖Φ(e, p) − p‖`.
    pub identity: ResidualStats,
    /// `‖Φ(g, Φ(h, p)) − Φ(gh, p)‖`.
    pub compatibility: ResidualStats,
}

impl AxiomStats {
    pub fn max(&self) -> f64 {
        self.identity.max.max(self.compatibility.max)
    }
}

/// Action axioms over the plan's pairs, each paired with a sampled point.
pub fn check_action_axioms(action: &GroupAction, plan: &SamplingPlan) -> Result<AxiomStats> {
    let pairs = plan.group_pairs(&action.group)?;
    let points = plan.manifold_points_n(&action.manifold, pairs.len(), crate::sampling::Stream::Points)?;
    let e = action.group.identity();
    let items: Vec<_> = pairs.into_iter().zip(points).collect();
    let rows = par::try_map(&items, |((g, h), p)| {
        let id = action.apply(&e, p)?.distance(p);
        let lhs = action.apply(g, &action.apply(h, p)?)?;
        let rhs = action.apply(&GroupElement::from_matrix_unchecked(action.group.clone(), g.matrix() * h.matrix()), p)?;
        Ok::<_, Error>((id, lhs.distance(&rhs)))
    })?;
    Ok(AxiomStats {
        identity: ResidualStats::from_values(rows.iter().map(|r| r.0)),
        compatibility: ResidualStats::from_values(rows.iter().map(|r| r.1)),
    })
}

/// Relative disagreement between analytic differentials and central finite
/// differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferentialStats {
    /// `dΦ_g` against `(Φ(g, p + εv) − Φ(g, p − εv)) / 2ε`.
    pub m_slot: ResidualStats,
    /// `dΦ^p` against `(Φ(g e^{εξ}, p) − Φ(g e^{−εξ}, p)) / 2ε`.
    pub g_slot: ResidualStats,
}

pub const FD_STEP: f64 = 1e-5;

pub fn check_differentials(action: &GroupAction, plan: &SamplingPlan) -> Result<DifferentialStats> {
    let gs = plan.group_elements(&action.group)?;
    let ps = plan.manifold_points_n(&action.manifold, gs.len(), crate::sampling::Stream::Points)?;
    let items: Vec<_> = gs.into_iter().zip(ps).collect();
    let map = action.map.as_ref();
    let rel = |fd: &DVector<f64>, an: &DVector<f64>| (fd - an).norm() / an.norm().max(1.0);
    let rows = par::try_map(&items, |(g, p)| {
        let mut m_slot = Vec::new();
        for v in action.manifold.tangent_basis(&p.coords) {
            let plus = map.apply(g.matrix(), &(&p.coords + &v * FD_STEP));
            let minus = map.apply(g.matrix(), &(&p.coords - &v * FD_STEP));
            let fd = (plus - minus) / (2.0 * FD_STEP);
            m_slot.push(rel(&fd, &map.d_phi_g(g.matrix(), &p.coords, &v)));
        }
        let mut g_slot = Vec::new();
        for b in action.group.basis() {
            let (xi, _) = action.group.vee(b);
            let xi = AlgebraVector::new(action.group.clone(), xi)?;
            let plus = g.retract(&xi.scale(FD_STEP))?;
            let minus = g.retract(&xi.scale(-FD_STEP))?;
            let fd = (map.apply(plus.matrix(), &p.coords) - map.apply(minus.matrix(), &p.coords)) / (2.0 * FD_STEP);
            let w = g.matrix() * b;
            g_slot.push(rel(&fd, &map.d_phi_p(&p.coords, g.matrix(), &w)));
        }
        Ok::<_, Error>((m_slot, g_slot))
    })?;
    Ok(DifferentialStats {
        m_slot: ResidualStats::from_values(rows.iter().flat_map(|r| r.0.iter().copied())),
        g_slot: ResidualStats::from_values(rows.iter().flat_map(|r| r.1.iter().copied())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::d_left;

    fn plan() -> SamplingPlan {
        SamplingPlan {
            min_radius: 0.3,
            ..SamplingPlan::default()
        }
    }

    fn builtins() -> Vec<GroupAction> {
        vec![
            GroupAction::translation(3, vec![2]).unwrap(),
            GroupAction::translation(3, vec![0, 1, 2]).unwrap(),
            GroupAction::left_translation(LieGroup::so3()),
            GroupAction::left_translation(LieGroup::se2()),
            GroupAction::left_translation(LieGroup::se3()),
            GroupAction::left_translation(LieGroup::translation(2)),
            GroupAction::rotation(LieGroup::so2()).unwrap(),
            GroupAction::rotation(LieGroup::so3()).unwrap(),
            GroupAction::rigid(LieGroup::se2()).unwrap(),
            GroupAction::rigid(LieGroup::se3()).unwrap(),
            GroupAction::scaling_rotation(),
        ]
    }

    #[test]
    fn builtin_axioms_hold() {
        for a in builtins() {
            let s = check_action_axioms(&a, &plan()).unwrap();
            assert!(s.identity.max < 1e-12, "{}: {:?}", a.name(), s);
            assert!(s.compatibility.max < 1e-10, "{}: {:?}", a.name(), s);
        }
    }

    #[test]
    fn builtin_differentials_match_finite_differences() {
        for a in builtins() {
            let s = check_differentials(&a, &plan()).unwrap();
            assert!(s.m_slot.max < 1e-5, "{}: {:?}", a.name(), s);
            assert!(s.g_slot.max < 1e-5, "{}: {:?}", a.name(), s);
        }
    }

    #[test]
    fn generator_of_translation_is_constant() {
        let a = GroupAction::translation(1, vec![0]).unwrap();
        let xi = AlgebraVector::from_slice(a.group(), &[2.5]).unwrap();
        for x in [-3.0, 0.0, 7.0] {
            let p = ManifoldPoint::from_slice(a.manifold(), &[x]).unwrap();
            assert_eq!(infinitesimal_generator(&a, &xi, &p).unwrap().dir()[0], 2.5);
        }
        let zero = AlgebraVector::zero(a.group());
        let p = ManifoldPoint::from_slice(a.manifold(), &[1.0]).unwrap();
        assert_eq!(infinitesimal_generator(&a, &zero, &p).unwrap().dir()[0], 0.0);
    }

    #[test]
    fn so3_generator_is_cross_product() {
        let a = GroupAction::rotation(LieGroup::so3()).unwrap();
        let p = ManifoldPoint::from_slice(a.manifold(), &[1.0, 0.0, 0.0]).unwrap();
        let xi = AlgebraVector::from_slice(a.group(), &[0.0, 0.0, 1.0]).unwrap();
        let v = infinitesimal_generator(&a, &xi, &p).unwrap();
        // finite-difference oracle on t ↦ exp(tξ)p
        let h = 1e-6;
        let fwd = a.apply(&xi.scale(h).exp().unwrap(), &p).unwrap();
        let bwd = a.apply(&xi.scale(-h).exp().unwrap(), &p).unwrap();
        let fd = (fwd.coords() - bwd.coords()) / (2.0 * h);
        assert!((v.dir() - DVector::from_column_slice(&[0.0, 1.0, 0.0])).norm() < 1e-15);
        assert!((v.dir() - fd).norm() < 1e-9);
        // every column is e_j × p
        let q = ManifoldPoint::from_slice(a.manifold(), &[0.3, -1.2, 0.7]).unwrap();
        let gm = generator_matrix(&a, &q).unwrap();
        let pv = nalgebra::Vector3::new(0.3, -1.2, 0.7);
        for j in 0..3 {
            let e = nalgebra::Vector3::ith(j, 1.0);
            let c = e.cross(&pv);
            for i in 0..3 {
                assert!((gm[(i, j)] - c[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generator_matrices_of_simple_actions() {
        let t = GroupAction::translation(3, vec![0, 1, 2]).unwrap();
        let p = ManifoldPoint::from_slice(t.manifold(), &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(generator_matrix(&t, &p).unwrap(), DMatrix::identity(3, 3));

        let g = LieGroup::se2();
        let l = GroupAction::left_translation(g.clone());
        let e = ManifoldPoint::from_group_element(l.manifold(), &g.identity()).unwrap();
        let gm = generator_matrix(&l, &e).unwrap();
        for (j, b) in g.basis().iter().enumerate() {
            let col = DVector::from_vec(flatten_row_major(b));
            assert_eq!(gm.column(j).into_owned(), col);
        }
    }

    #[test]
    fn freeness() {
        let t = GroupAction::translation(1, vec![0]).unwrap();
        let f = check_free(&t, &plan(), 1e-8).unwrap();
        assert!(f.free);
        assert!((f.min_singular - 1.0).abs() < 1e-15);

        let r = GroupAction::rotation(LieGroup::so3()).unwrap();
        let f = check_free(&r, &plan(), 1e-8).unwrap();
        assert!(!f.free);
        assert!(f.min_singular < 1e-12);

        for g in [LieGroup::so3(), LieGroup::se3(), LieGroup::se2()] {
            let l = GroupAction::left_translation(g);
            assert!(check_free(&l, &plan(), 1e-8).unwrap().free);
        }
        assert!(check_free(&GroupAction::scaling_rotation(), &plan(), 1e-8).unwrap().free);
    }

    struct BrokenMap;
    impl ActionMap for BrokenMap {
        // p ↦ R p + (sin θ) e₀, which does not respect composition
        fn apply(&self, g: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
            let mut out = g * p;
            out[0] += g[(1, 0)];
            out
        }
        fn d_phi_g(&self, g: &DMatrix<f64>, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
            g * v
        }
        fn d_phi_p(&self, p: &DVector<f64>, _g: &DMatrix<f64>, w: &DMatrix<f64>) -> DVector<f64> {
            w * p
        }
    }

    #[test]
    fn broken_action_fails_compatibility() {
        let g = LieGroup::so2();
        let a = GroupAction::custom("broken", g.clone(), ManifoldDescriptor::euclidean(2), Arc::new(BrokenMap), true, true);
        // Hand oracle: g = h = R(π/2), p = 0. Φ(h, 0) = (1, 0); Φ(g, (1,0)) = (0,1) + (1,0) = (1,1);
        // Φ(gh, 0) = (sin π, 0) = (0, 0). Residual √2.
        let q = GroupElement::from_coords(&g, &[std::f64::consts::FRAC_PI_2]).unwrap();
        let origin = ManifoldPoint::from_slice(a.manifold(), &[0.0, 0.0]).unwrap();
        let lhs = a.apply(&q, &a.apply(&q, &origin).unwrap()).unwrap();
        let rhs = a.apply(&q.compose(&q).unwrap(), &origin).unwrap();
        assert!((lhs.distance(&rhs) - 2f64.sqrt()).abs() < 1e-12);
        let s = check_action_axioms(&a, &plan()).unwrap();
        assert!(s.compatibility.max > 0.1);
    }

    #[test]
    fn left_translation_identities() {
        // dΦ^p ∘ dL_g = dΦ_g ∘ dΦ^p and Ad-consistency of generators.
        let group = LieGroup::so3();
        let a = GroupAction::left_translation(group.clone());
        let pl = plan();
        let gs = pl.group_elements(&group).unwrap();
        let ps = pl.manifold_points(a.manifold()).unwrap();
        for (g, p) in gs.iter().zip(&ps) {
            for b in group.basis() {
                let w = TangentVectorG::new(g.clone(), g.matrix() * b).unwrap();
                let lhs = a.d_phi_p(p, &d_left(g, &w).unwrap()).unwrap();
                let rhs = a.d_phi_g(g, &a.d_phi_p(p, &w).unwrap()).unwrap();
                assert!((lhs.dir() - rhs.dir()).norm() < 1e-10);
                assert!(lhs.base().distance(rhs.base()) < 1e-12);

                let xi = AlgebraVector::from_matrix(&group, b).unwrap();
                let gen = infinitesimal_generator(&a, &xi, p).unwrap();
                let pushed = a.d_phi_g(g, &gen).unwrap();
                let ad = AlgebraVector::from_matrix(&group, &(g.matrix() * b * g.inverse().unwrap().matrix())).unwrap();
                let moved = infinitesimal_generator(&a, &ad, &a.apply(g, p).unwrap()).unwrap();
                assert!((pushed.dir() - moved.dir()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn point_validation() {
        let m = ManifoldDescriptor::matrix_group(LieGroup::so3());
        assert!(ManifoldPoint::from_slice(&m, &[1.0; 9]).is_err());
        assert!(matches!(
            ManifoldPoint::from_slice(&ManifoldDescriptor::euclidean(3), &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
        let a = GroupAction::translation(3, vec![2]).unwrap();
        let wrong = ManifoldPoint::from_slice(&ManifoldDescriptor::euclidean(2), &[1.0, 2.0]).unwrap();
        assert!(a.apply(&a.group().identity(), &wrong).is_err());
        assert!(GroupAction::translation(3, vec![3]).is_err());
        assert!(GroupAction::translation(3, vec![1, 1]).is_err());
    }

    #[test]
    fn product_manifold_sampling_and_constraints() {
        let m = ManifoldDescriptor::product(vec![
            ManifoldDescriptor::euclidean(2),
            ManifoldDescriptor::matrix_group(LieGroup::so2()),
        ]);
        assert_eq!(m.ambient_dim(), 6);
        let pts = plan().manifold_points(&m).unwrap();
        for p in &pts {
            assert!(m.constraint_residual(p.coords()).unwrap() < 1e-12);
            for v in m.tangent_basis(p.coords()) {
                assert!(m.tangent_residual(p.coords(), &v) < 1e-12);
            }
        }
    }
}
