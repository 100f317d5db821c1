use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{AlgebraVector, GroupElement, LieGroup, TangentVectorG};
use crate::error::{Error, Result};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan};

type FieldFn = dyn Fn(&GroupElement) -> Result<TangentVectorG> + Send + Sync;

/// What a [`VectorFieldG`] is known to be.
#[derive(Clone)]
pub enum FieldGKind {
    Zero,
    /// `W(g) = D g − g D`, group linear for `D` in the normalizer of the algebra.
    InnerDerivation(DMatrix<f64>),
    /// `V(g) = D g − g D + g U`.
    GroupAffine { d: DMatrix<f64>, u: AlgebraVector },
    /// `V(g) = g ξ`.
    LeftInvariant(AlgebraVector),
    Custom { name: String, eval: Arc<FieldFn> },
}

impl fmt::Debug for FieldGKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldGKind::Zero => write!(f, "Zero"),
            FieldGKind::InnerDerivation(d) => f.debug_tuple("InnerDerivation").field(d).finish(),
            FieldGKind::GroupAffine { d, u } => f
                .debug_struct("GroupAffine")
                .field("d", d)
                .field("u", u.coords())
                .finish(),
            FieldGKind::LeftInvariant(xi) => f.debug_tuple("LeftInvariant").field(xi.coords()).finish(),
            FieldGKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A vector field on a matrix Lie group.
#[derive(Clone, Debug)]
pub struct VectorFieldG {
    group: Arc<LieGroup>,
    kind: FieldGKind,
}

impl VectorFieldG {
    pub fn zero(group: &Arc<LieGroup>) -> Self {
        Self {
            group: group.clone(),
            kind: FieldGKind::Zero,
        }
    }

    pub fn inner_derivation(group: &Arc<LieGroup>, d: DMatrix<f64>) -> Result<Self> {
        check_square(group, &d)?;
        Ok(Self {
            group: group.clone(),
            kind: FieldGKind::InnerDerivation(d),
        })
    }

    pub fn group_affine(group: &Arc<LieGroup>, d: DMatrix<f64>, u: AlgebraVector) -> Result<Self> {
        check_square(group, &d)?;
        group.ensure_same(u.group())?;
        Ok(Self {
            group: group.clone(),
            kind: FieldGKind::GroupAffine { d, u },
        })
    }

    pub fn left_invariant(xi: AlgebraVector) -> Self {
        Self {
            group: xi.group().clone(),
            kind: FieldGKind::LeftInvariant(xi),
        }
    }

    /// Arbitrary field; outputs are validated as tangent vectors at `g`.
    pub fn custom<F>(group: &Arc<LieGroup>, name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&GroupElement) -> Result<TangentVectorG> + Send + Sync + 'static,
    {
        Self {
            group: group.clone(),
            kind: FieldGKind::Custom {
                name: name.into(),
                eval: Arc::new(eval),
            },
        }
    }

    /// Field given by its left trivialization `g ↦ ξ(g)`, i.e. `W(g) = g ξ(g)`.
    pub fn from_left_trivialization<F>(group: &Arc<LieGroup>, name: impl Into<String>, xi: F) -> Self
    where
        F: Fn(&GroupElement) -> Result<AlgebraVector> + Send + Sync + 'static,
    {
        Self::custom(group, name, move |g| {
            let x = xi(g)?;
            Ok(TangentVectorG::new_unchecked(g.clone(), g.matrix() * x.matrix()))
        })
    }

    pub fn group(&self) -> &Arc<LieGroup> {
        &self.group
    }
    pub fn kind(&self) -> &FieldGKind {
        &self.kind
    }

    pub fn eval(&self, g: &GroupElement) -> Result<TangentVectorG> {
        self.group.ensure_same(g.group())?;
        let m = g.matrix();
        let out = match &self.kind {
            FieldGKind::Zero => return Ok(TangentVectorG::zero(g.clone())),
            FieldGKind::InnerDerivation(d) => d * m - m * d,
            FieldGKind::GroupAffine { d, u } => d * m - m * d + m * u.matrix(),
            FieldGKind::LeftInvariant(xi) => m * xi.matrix(),
            FieldGKind::Custom { eval, .. } => {
                let v = eval(g)?;
                if v.base().distance(g) > 1e-12 * g.matrix().norm().max(1.0) {
                    return Err(Error::InvalidConfig("custom field returned a vector at the wrong base".into()));
                }
                return TangentVectorG::new(g.clone(), v.matrix().clone());
            }
        };
        Ok(TangentVectorG::new_unchecked(g.clone(), out))
    }

    /// Evaluates at an ambient matrix that may sit slightly off the group (RK4
    /// stage points); custom outputs are not validated.
    pub(crate) fn eval_ambient(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(match &self.kind {
            FieldGKind::Zero => DMatrix::zeros(m.nrows(), m.ncols()),
            FieldGKind::InnerDerivation(d) => d * m - m * d,
            FieldGKind::GroupAffine { d, u } => d * m - m * d + m * u.matrix(),
            FieldGKind::LeftInvariant(xi) => m * xi.matrix(),
            FieldGKind::Custom { eval, .. } => {
                let g = GroupElement::from_matrix_unchecked(self.group.clone(), m.clone());
                eval(&g)?.matrix().clone()
            }
        })
    }

    /// `g⁻¹ W(g)` as an algebra matrix, for `g` on the group.
    pub(crate) fn left_trivialized_ambient(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(match &self.kind {
            FieldGKind::Zero => DMatrix::zeros(m.nrows(), m.ncols()),
            FieldGKind::LeftInvariant(xi) => xi.matrix(),
            _ => self.group.inverse_matrix(m) * self.eval_ambient(m)?,
        })
    }

    /// `self − other`, pointwise.
    pub fn minus(&self, other: &VectorFieldG) -> Result<VectorFieldG> {
        self.group.ensure_same(&other.group)?;
        let (a, b) = (self.clone(), other.clone());
        Ok(VectorFieldG::custom(&self.group, "difference", move |g| {
            let va = a.eval(g)?;
            let vb = b.eval(g)?;
            Ok(TangentVectorG::new_unchecked(g.clone(), va.matrix() - vb.matrix()))
        }))
    }

    /// `s · self`, pointwise.
    pub fn scaled(&self, s: f64) -> VectorFieldG {
        let a = self.clone();
        VectorFieldG::custom(&self.group, format!("{s}·field"), move |g| {
            let v = a.eval(g)?;
            Ok(TangentVectorG::new_unchecked(g.clone(), v.matrix() * s))
        })
    }
}

fn check_square(group: &LieGroup, d: &DMatrix<f64>) -> Result<()> {
    let n = group.matrix_dim();
    if d.shape() != (n, n) {
        return Err(Error::Dimension {
            what: "derivation matrix D".into(),
            expected: n,
            found: d.nrows(),
        });
    }
    Ok(())
}

/// `ξ^W(g) = dL_{g⁻¹} W(g)` in algebra coordinates.
pub fn left_trivialize(w: &VectorFieldG, g: &GroupElement) -> Result<AlgebraVector> {
    w.eval(g)?.left_trivialized()
}

/// Frobenius residual of `W(gh) = dL_g W(h) + dR_h W(g)` over the plan's pairs.
pub fn check_group_linear(w: &VectorFieldG, plan: &SamplingPlan) -> Result<ResidualStats> {
    let pairs = plan.group_pairs(w.group())?;
    let residuals = par::try_map(&pairs, |(g, h)| {
        let gh = g.compose(h)?;
        let lhs = w.eval(&gh)?;
        let wh = w.eval(h)?;
        let wg = w.eval(g)?;
        let rhs = g.matrix() * wh.matrix() + wg.matrix() * h.matrix();
        Ok::<f64, Error>((lhs.matrix() - rhs).norm())
    })?;
    Ok(ResidualStats::from_values(residuals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn so3_point(c: [f64; 3]) -> GroupElement {
        GroupElement::from_coords(&LieGroup::so3(), &c).unwrap()
    }

    #[test]
    fn left_invariant_trivializes_to_xi() {
        let g = LieGroup::so3();
        let xi = AlgebraVector::from_slice(&g, &[0.3, -0.1, 0.7]).unwrap();
        let w = VectorFieldG::left_invariant(xi.clone());
        for c in [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [0.0, 0.0, 0.0]] {
            let t = left_trivialize(&w, &so3_point(c)).unwrap();
            assert!((t.coords() - xi.coords()).norm() < 1e-14);
        }
    }

    #[test]
    fn inner_derivation_vanishes_at_identity() {
        let g = LieGroup::so3();
        let w = VectorFieldG::inner_derivation(&g, g.basis()[2].clone()).unwrap();
        let t = left_trivialize(&w, &g.identity()).unwrap();
        assert_eq!(t.coords().norm(), 0.0);
    }

    #[test]
    fn inner_derivation_trivialization_matches_hand_arithmetic() {
        // g = exp(0.7 L_y), D = L_z: ξ^W(g) = g⁻¹ D g − D.
        let g = LieGroup::so3();
        let x = so3_point([0.0, 0.7, 0.0]);
        let w = VectorFieldG::inner_derivation(&g, g.basis()[2].clone()).unwrap();
        let t = left_trivialize(&w, &x).unwrap();
        let (s, c) = 0.7f64.sin_cos();
        // R_yᵀ L_z R_y is the skew matrix of R_yᵀ e_z = (−sin, 0, cos).
        let want = [-s, 0.0, c - 1.0];
        for i in 0..3 {
            assert!((t.coords()[i] - want[i]).abs() < 1e-14, "{i}: {} vs {}", t.coords()[i], want[i]);
        }
    }

    #[test]
    fn zero_and_inner_derivations_are_group_linear() {
        let plan = SamplingPlan::default();
        for group in [LieGroup::so3(), LieGroup::se2(), LieGroup::se3(), LieGroup::so2()] {
            let z = check_group_linear(&VectorFieldG::zero(&group), &plan).unwrap();
            assert_eq!(z.max, 0.0);
            for b in group.basis() {
                let w = VectorFieldG::inner_derivation(&group, b.clone()).unwrap();
                let s = check_group_linear(&w, &plan).unwrap();
                assert!(s.max < 1e-12, "{group}: {}", s.max);
            }
        }
    }

    #[test]
    fn left_invariant_is_not_group_linear() {
        // W(gh) − g W(h) − W(g) h = ghξ − ghξ − gξh = −gξh, whose norm is ‖ξ‖_F = √2
        // for orthogonal g, h and ξ = L_z.
        let group = LieGroup::so3();
        let xi = AlgebraVector::from_slice(&group, &[0.0, 0.0, 1.0]).unwrap();
        let w = VectorFieldG::left_invariant(xi);
        let s = check_group_linear(&w, &SamplingPlan::default()).unwrap();
        assert!(s.max > 0.1);
        assert!((s.max - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn custom_field_rejects_non_tangent() {
        let group = LieGroup::so3();
        let bad = VectorFieldG::custom(&group, "sym", |g| {
            Ok(TangentVectorG::new_unchecked(g.clone(), g.matrix() * DMatrix::<f64>::identity(3, 3)))
        });
        assert!(matches!(bad.eval(&group.identity()), Err(Error::NotInAlgebra { .. })));
    }
}
