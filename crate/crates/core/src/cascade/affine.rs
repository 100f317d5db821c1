use crate::actions::VectorFieldM;
use crate::error::{Error, Result};
use crate::lie::{check_group_linear, AlgebraVector, VectorFieldG};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan};

/// The group field behind `v`, when `v` lives on a matrix group.
pub fn as_group_field(v: &VectorFieldM) -> Result<VectorFieldG> {
    v.as_group_field()
        .cloned()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a matrix group manifold", v.manifold())))
}

/// Frobenius residual of `V(gh) − g V(h) − V(g) h + g V(e) h` over the
/// plan's pairs.
pub fn check_group_affine(v: &VectorFieldG, plan: &SamplingPlan) -> Result<ResidualStats> {
    let pairs = plan.group_pairs(v.group())?;
    let ve = v.eval(&v.group().identity())?.matrix().clone();
    let rows = par::try_map(&pairs, |(g, h)| {
        let gh = g.compose(h)?;
        let (g, h) = (g.matrix(), h.matrix());
        let r = v.eval(&gh)?.matrix() - g * v.eval_ambient(h)? - v.eval_ambient(g)? * h + g * &ve * h;
        Ok::<f64, Error>(r.norm())
    })?;
    Ok(ResidualStats::from_values(rows))
}

/// `V(g) = W(g) + g U` with `W` group linear.
#[derive(Debug, Clone)]
pub struct GroupAffineDecomposition {
    pub w: VectorFieldG,
    pub u: AlgebraVector,
    pub affine: ResidualStats,
    pub group_linear: ResidualStats,
}

/// `U` is `V` left-trivialized at `e` and `W = V − gU`. Errors with
/// [`Error::NotGroupAffine`] when `W` fails the group-linear check at `tol`.
pub fn group_affine_decompose(v: &VectorFieldG, plan: &SamplingPlan, tol: f64) -> Result<GroupAffineDecomposition> {
    let affine = check_group_affine(v, plan)?;
    let u = v.eval(&v.group().identity())?.left_trivialized()?;
    let w = v.minus(&VectorFieldG::left_invariant(u.clone()))?;
    let group_linear = check_group_linear(&w, plan)?;
    if !group_linear.passes(tol) {
        return Err(Error::NotGroupAffine {
            residual: group_linear.max,
        });
    }
    Ok(GroupAffineDecomposition {
        w,
        u,
        affine,
        group_linear,
    })
}
