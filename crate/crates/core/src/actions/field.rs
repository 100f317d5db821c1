use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ManifoldDescriptor, ManifoldPoint, TangentVectorM};
use crate::error::{Error, Result};
use crate::lie::matrix::{flatten_row_major, from_row_major};
use crate::lie::VectorFieldG;

type RawField = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;

/// Coefficients of the synthetic cascade family on `ℝ³ = {(x, y, z)}`:
///
/// ```text
/// ẋ = q(f1; x, y) + f1_xz · x z
/// ẏ = q(f2; x, y)
/// ż = (c + z_x · x) z + q(h; x, y)
/// ```
///
/// where `q(a; x, y) = a₀ + a₁x + a₂y + a₃x² + a₄xy + a₅y²`. With both coupling
/// coefficients zero the field is weakly invariant under translations in `z`
/// with `W(g) = c g`. `z_x ≠ 0` keeps the residual orbit-tangent but makes it
/// depend on the point; `f1_xz ≠ 0` breaks orbit tangency altogether.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CascadeParams {
    pub f1: [f64; 6],
    pub f2: [f64; 6],
    pub h: [f64; 6],
    pub c: f64,
    pub f1_xz: f64,
    pub z_x: f64,
}

fn quadratic(a: &[f64; 6], x: f64, y: f64) -> f64 {
    a[0] + a[1] * x + a[2] * y + a[3] * x * x + a[4] * x * y + a[5] * y * y
}

impl CascadeParams {
    pub fn eval(&self, p: &DVector<f64>) -> DVector<f64> {
        let (x, y, z) = (p[0], p[1], p[2]);
        DVector::from_column_slice(&[
            quadratic(&self.f1, x, y) + self.f1_xz * x * z,
            quadratic(&self.f2, x, y),
            (self.c + self.z_x * x) * z + quadratic(&self.h, x, y),
        ])
    }
}

#[derive(Clone)]
pub enum FieldMKind {
    /// `V(p) = A p + b` on `ℝⁿ`.
    AffineOnRN { a: DMatrix<f64>, b: DVector<f64> },
    /// A field on a group viewed as a field on the group manifold.
    GroupAffineOnG(VectorFieldG),
    CascadeSynthetic(CascadeParams),
    Custom { name: String, eval: Arc<RawField> },
}

impl fmt::Debug for FieldMKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMKind::AffineOnRN { a, b } => f.debug_struct("AffineOnRN").field("a", a).field("b", b).finish(),
            FieldMKind::GroupAffineOnG(w) => f.debug_tuple("GroupAffineOnG").field(w.kind()).finish(),
            FieldMKind::CascadeSynthetic(p) => f.debug_tuple("CascadeSynthetic").field(p).finish(),
            FieldMKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A vector field on an embedded manifold.
#[derive(Clone, Debug)]
pub struct VectorFieldM {
    manifold: Arc<ManifoldDescriptor>,
    kind: FieldMKind,
}

impl VectorFieldM {
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = b.len();
        if a.shape() != (n, n) {
            return Err(Error::Dimension {
                what: "affine field matrix A".into(),
                expected: n,
                found: a.nrows(),
            });
        }
        Ok(Self {
            manifold: ManifoldDescriptor::euclidean(n),
            kind: FieldMKind::AffineOnRN { a, b },
        })
    }

    /// Views a field on `G` as a field on the manifold `G`.
    pub fn on_group(field: VectorFieldG) -> Self {
        Self {
            manifold: ManifoldDescriptor::matrix_group(field.group().clone()),
            kind: FieldMKind::GroupAffineOnG(field),
        }
    }

    pub fn cascade_synthetic(params: CascadeParams) -> Self {
        Self {
            manifold: ManifoldDescriptor::euclidean(3),
            kind: FieldMKind::CascadeSynthetic(params),
        }
    }

    /// Field given on ambient coordinates.
    pub fn custom<F>(manifold: &Arc<ManifoldDescriptor>, name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            manifold: manifold.clone(),
            kind: FieldMKind::Custom {
                name: name.into(),
                eval: Arc::new(eval),
            },
        }
    }

    pub fn manifold(&self) -> &Arc<ManifoldDescriptor> {
        &self.manifold
    }
    pub fn kind(&self) -> &FieldMKind {
        &self.kind
    }

    /// The underlying group field, when this is a field on a group manifold.
    pub fn as_group_field(&self) -> Option<&VectorFieldG> {
        match &self.kind {
            FieldMKind::GroupAffineOnG(w) => Some(w),
            _ => None,
        }
    }

    /// Evaluates on raw ambient coordinates, which may lie slightly off a
    /// constrained manifold (integrator stages).
    pub fn eval_ambient(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let out = match &self.kind {
            FieldMKind::AffineOnRN { a, b } => a * p + b,
            FieldMKind::GroupAffineOnG(w) => {
                let n = w.group().matrix_dim();
                let m = w.eval_ambient(&from_row_major(n, p.as_slice()))?;
                DVector::from_vec(flatten_row_major(&m))
            }
            FieldMKind::CascadeSynthetic(c) => c.eval(p),
            FieldMKind::Custom { eval, .. } => {
                let v = eval(p)?;
                if v.len() != self.manifold.ambient_dim() {
                    return Err(Error::Dimension {
                        what: "custom field output".into(),
                        expected: self.manifold.ambient_dim(),
                        found: v.len(),
                    });
                }
                v
            }
        };
        Ok(out)
    }

    pub fn eval(&self, p: &ManifoldPoint) -> Result<TangentVectorM> {
        if p.manifold().as_ref() != self.manifold.as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: self.manifold.to_string(),
                found: p.manifold().to_string(),
            });
        }
        let dir = self.eval_ambient(p.coords())?;
        match &self.kind {
            FieldMKind::Custom { .. } => TangentVectorM::new(p.clone(), dir),
            _ => Ok(TangentVectorM::new_unchecked(p.clone(), dir)),
        }
    }

    /// `s · self`.
    pub fn scaled(&self, s: f64) -> VectorFieldM {
        let inner = self.clone();
        VectorFieldM::custom(&self.manifold, format!("{s}·field"), move |p| Ok(inner.eval_ambient(p)? * s))
    }
}
