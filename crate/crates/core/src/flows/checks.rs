//! Weak invariance of flows: the flow relation
//! `Φ(φ^W_t(g), φ^V_t(q)) = φ^V_t(Φ(g, q))`, its derivative at `t = 0`, the
//! flow property of `σ_t`, and the small-time extension `σ_{nδ} = (σ_δ)ⁿ`.

use nalgebra::DVector;

use super::FlowHandle;
use crate::actions::{GroupAction, ManifoldPoint, TangentVectorM, FD_STEP};
use crate::error::{Error, Result};
use crate::invariance::{recover_sigma_at, GroupMap};
use crate::lie::{GroupElement, LieGroup};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan, Stream};

fn ensure_flows(vflow: &FlowHandle, wflow: Option<&FlowHandle>, action: &GroupAction) -> Result<()> {
    if vflow.manifold().as_ref() != action.manifold().as_ref() {
        return Err(Error::DescriptorMismatch {
            expected: action.manifold().to_string(),
            found: vflow.manifold().to_string(),
        });
    }
    if let Some(w) = wflow {
        match w.manifold().as_group() {
            Some(g) => action.group().ensure_same(g)?,
            None => {
                return Err(Error::InvalidConfig(format!(
                    "W flow lives on {}, not on {}",
                    w.manifold(),
                    action.group()
                )))
            }
        }
    }
    Ok(())
}

/// Samples `(g, q)`: group elements paired with points from the main stream.
fn sample_pairs(action: &GroupAction, plan: &SamplingPlan) -> Result<Vec<(GroupElement, ManifoldPoint)>> {
    let gs = plan.group_elements(action.group())?;
    let qs = plan.manifold_points_n(action.manifold(), gs.len(), Stream::Points)?;
    Ok(gs.into_iter().zip(qs).collect())
}

/// `max ‖Φ(φ^W_t(g), φ^V_t(q)) − φ^V_t(Φ(g, q))‖` over `times` and sampled `(g, q)`.
pub fn check_flow_weak_invariance(
    vflow: &FlowHandle,
    wflow: &FlowHandle,
    action: &GroupAction,
    times: &[f64],
    plan: &SamplingPlan,
) -> Result<ResidualStats> {
    ensure_flows(vflow, Some(wflow), action)?;
    let pairs = sample_pairs(action, plan)?;
    let items: Vec<(f64, &GroupElement, &ManifoldPoint)> = times
        .iter()
        .flat_map(|&t| pairs.iter().map(move |(g, q)| (t, g, q)))
        .collect();
    let rows = par::try_map(&items, |&(t, g, q)| {
        let lhs = action.apply(&wflow.evaluate_group(t, g)?, &vflow.evaluate(t, q)?)?;
        let rhs = vflow.evaluate(t, &action.apply(g, q)?)?;
        Ok::<f64, Error>(lhs.distance(&rhs))
    })?;
    Ok(ResidualStats::from_values(rows))
}

/// Central differences at `t = 0` of both sides of the flow relation, as
/// tangent vectors at `Φ(g, q)`: `(d/dt Φ(φ^W_t(g), φ^V_t(q)), d/dt φ^V_t(Φ(g, q)))`.
pub fn differentiate_flow_at_zero(
    vflow: &FlowHandle,
    wflow: &FlowHandle,
    action: &GroupAction,
    g: &GroupElement,
    q: &ManifoldPoint,
) -> Result<(TangentVectorM, TangentVectorM)> {
    ensure_flows(vflow, Some(wflow), action)?;
    let gq = action.apply(g, q)?;
    let left = |t: f64| -> Result<DVector<f64>> {
        Ok(action
            .apply(&wflow.evaluate_group(t, g)?, &vflow.evaluate(t, q)?)?
            .coords()
            .clone())
    };
    let right = |t: f64| -> Result<DVector<f64>> { Ok(vflow.evaluate(t, &gq)?.coords().clone()) };
    let dl = (left(FD_STEP)? - left(-FD_STEP)?) / (2.0 * FD_STEP);
    let dr = (right(FD_STEP)? - right(-FD_STEP)?) / (2.0 * FD_STEP);
    Ok((
        TangentVectorM::new_unchecked(gq.clone(), dl),
        TangentVectorM::new_unchecked(gq, dr),
    ))
}

/// Residuals of the differentiated flow relation over sampled `(g, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeStats {
    /// `‖lhs − rhs‖` between the two differentiated sides.
    pub sides: ResidualStats,
    /// Largest gap of either side from its analytic value,
    /// `dΦ(W(g), V(q))` and `V(Φ(g, q))` respectively.
    pub analytic: ResidualStats,
}

/// Runs [`differentiate_flow_at_zero`] over the plan's samples and compares
/// against the vector-field relation `dΦ(W(g), V(q)) = V(Φ(g, q))`.
pub fn check_flow_derivative(
    vflow: &FlowHandle,
    wflow: &FlowHandle,
    action: &GroupAction,
    plan: &SamplingPlan,
) -> Result<DerivativeStats> {
    let w = wflow
        .field()
        .group_field()
        .ok_or_else(|| Error::InvalidConfig("W flow is not a field on a group".into()))?;
    let pairs = sample_pairs(action, plan)?;
    let rows = par::try_map(&pairs, |(g, q)| {
        let (lhs, rhs) = differentiate_flow_at_zero(vflow, wflow, action, g, q)?;
        let vq = TangentVectorM::new_unchecked(q.clone(), vflow.field().eval_ambient(q.coords())?);
        let want_l = action.d_phi(&w.eval(g)?, &vq)?;
        let want_r = vflow.field().eval_ambient(lhs.base().coords())?;
        let sides = (lhs.dir() - rhs.dir()).norm();
        let analytic = (lhs.dir() - want_l.dir()).norm().max((rhs.dir() - want_r).norm());
        Ok::<_, Error>((sides, analytic))
    })?;
    Ok(DerivativeStats {
        sides: ResidualStats::from_values(rows.iter().map(|r| r.0)),
        analytic: ResidualStats::from_values(rows.iter().map(|r| r.1)),
    })
}

/// `σ_t` recovered from `φ^V_t` independently for every requested `t`.
#[derive(Clone, Debug)]
pub struct SigmaFromFlow {
    vflow: FlowHandle,
    action: GroupAction,
    points: Vec<ManifoldPoint>,
}

impl SigmaFromFlow {
    pub fn new(vflow: &FlowHandle, action: &GroupAction, plan: &SamplingPlan) -> Result<Self> {
        ensure_flows(vflow, None, action)?;
        Ok(Self {
            vflow: vflow.clone(),
            action: action.clone(),
            points: plan.manifold_points(action.manifold())?,
        })
    }

    pub fn at(&self, t: f64, g: &GroupElement) -> Result<GroupElement> {
        Ok(recover_sigma_at(&self.vflow.diffeomorphism(t), &self.action, g, &self.points)?.sigma)
    }

    pub fn group_map(&self, t: f64) -> GroupMap {
        let me = self.clone();
        GroupMap::new(&self.action.group().clone(), format!("σ_{t}"), move |g| me.at(t, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaFlowStats {
    /// `‖σ_{t₁}(σ_{t₂}(g)) − σ_{t₁+t₂}(g)‖_F`.
    pub composition: ResidualStats,
    /// `‖σ_0(g) − g‖_F`.
    pub identity: ResidualStats,
}

/// Flow property of a time-indexed family `σ_t`. Evaluation failures count as
/// infinite residuals.
pub fn check_sigma_is_flow<F>(
    sigma: F,
    group: &std::sync::Arc<LieGroup>,
    time_pairs: &[(f64, f64)],
    plan: &SamplingPlan,
) -> Result<SigmaFlowStats>
where
    F: Fn(f64, &GroupElement) -> Result<GroupElement> + Sync,
{
    let gs = plan.group_elements(group)?;
    let identity = par::map(&gs, |g| sigma(0.0, g).map(|s| s.distance(g)).unwrap_or(f64::INFINITY));
    let items: Vec<(f64, f64, &GroupElement)> = time_pairs
        .iter()
        .flat_map(|&(t1, t2)| gs.iter().map(move |g| (t1, t2, g)))
        .collect();
    let composition = par::map(&items, |&(t1, t2, g)| {
        let run = || -> Result<f64> {
            let lhs = sigma(t1, &sigma(t2, g)?)?;
            let rhs = sigma(t1 + t2, g)?;
            Ok(lhs.distance(&rhs))
        };
        run().unwrap_or(f64::INFINITY)
    });
    Ok(SigmaFlowStats {
        composition: ResidualStats::from_values(composition),
        identity: ResidualStats::from_values(identity),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallTimeReport {
    /// Max over `n` and samples of `‖φ_{nδ}(Φ(g, q)) − Φ((σ_δ)ⁿ(g), φ_{nδ}(q))‖`.
    pub residual: ResidualStats,
    /// Worst residual for each `n = 1..=n_max`.
    pub per_n: Vec<f64>,
    /// Sampled `g` at which recovering `σ_δ` failed.
    pub failures: usize,
}

/// Recovers `σ_δ` from `φ^V_δ` and checks that `φ^V_{nδ}` is weakly
/// invariant with respect to `(σ_δ)ⁿ` for `n = 1..=n_max`. Recovery failures
/// are counted and reported as infinite residuals.
pub fn check_small_time_extension(
    vflow: &FlowHandle,
    action: &GroupAction,
    delta: f64,
    n_max: usize,
    plan: &SamplingPlan,
) -> Result<SmallTimeReport> {
    ensure_flows(vflow, None, action)?;
    if !(delta != 0.0 && delta.is_finite()) || n_max == 0 {
        return Err(Error::InvalidConfig("small-time check needs δ ≠ 0 and n_max ≥ 1".into()));
    }
    let f = vflow.diffeomorphism(delta);
    let rec_points = plan.manifold_points(action.manifold())?;
    let qs = plan.manifold_points_n(action.manifold(), plan.points, Stream::PointsAlt)?;
    let gs = plan.group_elements(action.group())?;
    let rows = par::try_map(&gs, |g| {
        // σ_δ applied n times, one recovery per application.
        let mut powers = Vec::with_capacity(n_max);
        let mut s = g.clone();
        for _ in 0..n_max {
            match recover_sigma_at(&f, action, &s, &rec_points) {
                Ok(r) => s = r.sigma,
                Err(Error::RecoveryFailed { .. }) => return Ok::<_, Error>(None),
                Err(e) => return Err(e),
            }
            powers.push(s.clone());
        }
        let mut per_n = Vec::with_capacity(n_max);
        for (i, sn) in powers.iter().enumerate() {
            let t = (i + 1) as f64 * delta;
            let mut worst: f64 = 0.0;
            for q in &qs {
                let lhs = vflow.evaluate(t, &action.apply(g, q)?)?;
                let rhs = action.apply(sn, &vflow.evaluate(t, q)?)?;
                worst = worst.max(lhs.distance(&rhs));
            }
            per_n.push(worst);
        }
        Ok(Some(per_n))
    })?;
    let failures = rows.iter().filter(|r| r.is_none()).count();
    let per_n: Vec<f64> = (0..n_max)
        .map(|i| {
            rows.iter()
                .map(|r| r.as_ref().map_or(f64::INFINITY, |v| v[i]))
                .fold(0.0, f64::max)
        })
        .collect();
    let residual = ResidualStats::from_values(
        rows.iter()
            .flat_map(|r| r.clone().unwrap_or_else(|| vec![f64::INFINITY; n_max])),
    );
    Ok(SmallTimeReport {
        residual,
        per_n,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::VectorFieldM;
    use crate::flows::IntegratorConfig;
    use crate::lie::VectorFieldG;
    use nalgebra::DMatrix;

    fn scalar(a: f64, b: f64) -> (FlowHandle, FlowHandle, GroupAction) {
        let v = VectorFieldM::affine(DMatrix::from_element(1, 1, b), DVector::from_element(1, a)).unwrap();
        let action = GroupAction::translation(1, vec![0]).unwrap();
        // W(g) = b·g in translation coordinates: the field D g − g D with D = diag(b, 0).
        let d = DMatrix::from_row_slice(2, 2, &[b, 0.0, 0.0, 0.0]);
        let w = VectorFieldG::inner_derivation(action.group(), d).unwrap();
        (
            FlowHandle::new(v, IntegratorConfig::default()).unwrap(),
            FlowHandle::new(w, IntegratorConfig::group_default()).unwrap(),
            action,
        )
    }

    #[test]
    fn scalar_flow_relation_holds() {
        let (vf, wf, action) = scalar(1.0, 0.5);
        let s = check_flow_weak_invariance(&vf, &wf, &action, &[0.5, 1.0], &SamplingPlan::default()).unwrap();
        assert!(s.max < 1e-9, "{}", s.max);

        // g = 2, q = 0, t = 1: both sides equal φ_1(0) + 2 e^{0.5}.
        let g = GroupElement::from_coords(action.group(), &[2.0]).unwrap();
        let q = ManifoldPoint::from_slice(action.manifold(), &[0.0]).unwrap();
        let lhs = action.apply(&wf.evaluate_group(1.0, &g).unwrap(), &vf.evaluate(1.0, &q).unwrap()).unwrap();
        let want = 2.0 * (0.5f64.exp() - 1.0) + 2.0 * 0.5f64.exp();
        assert!((lhs.coords()[0] - want).abs() < 1e-10);
    }

    #[test]
    fn derivative_matches_field_and_detects_wrong_w() {
        let (vf, wf, action) = scalar(1.0, 0.5);
        let g = GroupElement::from_coords(action.group(), &[2.0]).unwrap();
        let q = ManifoldPoint::from_slice(action.manifold(), &[0.3]).unwrap();
        let (l, r) = differentiate_flow_at_zero(&vf, &wf, &action, &g, &q).unwrap();
        let want = 1.0 + 0.5 * (0.3 + 2.0);
        assert!((l.dir()[0] - want).abs() < 1e-8 && (r.dir()[0] - want).abs() < 1e-8);

        let d2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let w2 = VectorFieldG::inner_derivation(action.group(), d2).unwrap();
        let wf2 = FlowHandle::new(w2, IntegratorConfig::group_default()).unwrap();
        let (l2, r2) = differentiate_flow_at_zero(&vf, &wf2, &action, &g, &q).unwrap();
        // The wrong W doubles b g, so the sides differ by b g = 1.
        assert!(((l2.dir() - r2.dir()).norm() - 1.0).abs() < 1e-8);
        let stats = check_flow_derivative(&vf, &wf, &action, &SamplingPlan::default()).unwrap();
        assert!(stats.sides.max < 1e-8 && stats.analytic.max < 1e-8);
    }

    #[test]
    fn scalar_sigma_is_exponential_flow() {
        let (vf, _, action) = scalar(1.0, 0.5);
        let plan = SamplingPlan::default();
        let sf = SigmaFromFlow::new(&vf, &action, &plan).unwrap();
        let g = GroupElement::from_coords(action.group(), &[1.5]).unwrap();
        let s = sf.at(0.2, &g).unwrap();
        assert!((s.matrix()[(0, 1)] - 1.5 * 0.1f64.exp()).abs() < 1e-10);
        let st = check_sigma_is_flow(|t, g| sf.at(t, g), action.group(), &[(0.1, 0.2)], &plan).unwrap();
        assert!(st.composition.max < 1e-9 && st.identity.max == 0.0);
        let small = check_small_time_extension(&vf, &action, 0.05, 4, &plan).unwrap();
        assert_eq!(small.failures, 0);
        assert!(small.residual.max < 1e-9);
    }
}
