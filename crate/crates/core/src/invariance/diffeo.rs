//! Diffeomorphisms, maps on the group, and recovery of `σ` from
//! `f ∘ Φ_g ∘ f⁻¹ = Φ_{σ(g)}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Classification, InvarianceReport, SigmaRow};
use crate::actions::{GroupAction, ManifoldDescriptor, ManifoldPoint, TangentVectorM, FD_STEP};
use crate::error::{Error, Result};
use crate::lie::matrix::{flatten_row_major, lstsq};
use crate::lie::{AlgebraVector, GroupElement, LieGroup, TangentVectorG};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan, Stream, Tolerances};

type PointFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type TangentFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type GroupFn = dyn Fn(&GroupElement) -> Result<GroupElement> + Send + Sync;

/// A diffeomorphism of `M` given on ambient coordinates, with its inverse.
#[derive(Clone)]
pub struct Diffeomorphism {
    manifold: Arc<ManifoldDescriptor>,
    name: String,
    forward: Arc<PointFn>,
    inverse: Arc<PointFn>,
    differential: Option<Arc<TangentFn>>,
}

impl fmt::Debug for Diffeomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffeomorphism")
            .field("name", &self.name)
            .field("manifold", &self.manifold.to_string())
            .field("analytic_differential", &self.differential.is_some())
            .finish()
    }
}

impl Diffeomorphism {
    pub fn new<F, G>(manifold: &Arc<ManifoldDescriptor>, name: impl Into<String>, forward: F, inverse: G) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            manifold: manifold.clone(),
            name: name.into(),
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            differential: None,
        }
    }

    /// Supplies `df_p(v)`; without it the differential is a central difference.
    pub fn with_differential<D>(mut self, d: D) -> Self
    where
        D: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.differential = Some(Arc::new(d));
        self
    }

    pub fn identity(manifold: &Arc<ManifoldDescriptor>) -> Self {
        Self::new(manifold, "identity", |p| Ok(p.clone()), |p| Ok(p.clone())).with_differential(|_, v| Ok(v.clone()))
    }

    /// `Φ_h`, with inverse `Φ_{h⁻¹}` and differential `dΦ_h`.
    pub fn from_action(action: &GroupAction, h: &GroupElement) -> Result<Self> {
        action.group().ensure_same(h.group())?;
        let hinv = h.inverse()?;
        let (a1, a2, a3) = (action.clone(), action.clone(), action.clone());
        let (h1, h3) = (h.clone(), h.clone());
        let m = action.manifold().clone();
        let (m1, m2, m3) = (m.clone(), m.clone(), m.clone());
        Ok(Self::new(
            &m,
            format!("Φ_h ({})", action.name()),
            move |p| Ok(a1.apply(&h1, &ManifoldPoint::new_unchecked(m1.clone(), p.clone()))?.coords().clone()),
            move |p| Ok(a2.apply(&hinv, &ManifoldPoint::new_unchecked(m2.clone(), p.clone()))?.coords().clone()),
        )
        .with_differential(move |p, v| {
            let base = ManifoldPoint::new_unchecked(m3.clone(), p.clone());
            Ok(a3.d_phi_g(&h3, &TangentVectorM::new_unchecked(base, v.clone()))?.dir().clone())
        }))
    }

    pub fn manifold(&self) -> &Arc<ManifoldDescriptor> {
        &self.manifold
    }
    pub fn name(&self) -> &str {
        &self.name
    }

    fn wrap(&self, coords: DVector<f64>) -> Result<ManifoldPoint> {
        if coords.len() != self.manifold.ambient_dim() {
            return Err(Error::Dimension {
                what: format!("output of {}", self.name),
                expected: self.manifold.ambient_dim(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("{} produced non-finite coordinates", self.name)));
        }
        Ok(ManifoldPoint::new_unchecked(self.manifold.clone(), coords))
    }

    fn check(&self, p: &ManifoldPoint) -> Result<()> {
        if p.manifold().as_ref() != self.manifold.as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: self.manifold.to_string(),
                found: p.manifold().to_string(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, p: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.check(p)?;
        self.wrap((self.forward)(p.coords())?)
    }

    pub fn inverse(&self, p: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.check(p)?;
        self.wrap((self.inverse)(p.coords())?)
    }

    /// `df(v)`, a tangent vector at `f(v.base)`.
    pub fn differential(&self, v: &TangentVectorM) -> Result<TangentVectorM> {
        let base = self.forward(v.base())?;
        let dir = match &self.differential {
            Some(d) => d(v.base().coords(), v.dir())?,
            None => self.fd_differential(v.base().coords(), v.dir())?,
        };
        Ok(TangentVectorM::new_unchecked(base, dir))
    }

    fn fd_differential(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let plus = (self.forward)(&(p + v * FD_STEP))?;
        let minus = (self.forward)(&(p - v * FD_STEP))?;
        Ok((plus - minus) / (2.0 * FD_STEP))
    }

    /// `‖f⁻¹(f(p)) − p‖` and `‖f(f⁻¹(p)) − p‖` over the plan's points.
    pub fn check_inverse(&self, plan: &SamplingPlan) -> Result<ResidualStats> {
        let pts = plan.manifold_points(&self.manifold)?;
        let rows = par::try_map(&pts, |p| {
            let a = self.inverse(&self.forward(p)?)?.distance(p);
            let b = self.forward(&self.inverse(p)?)?.distance(p);
            Ok::<f64, Error>(a.max(b))
        })?;
        Ok(ResidualStats::from_values(rows))
    }

    /// Relative gap between the differential and central differences of
    /// `forward` along tangent basis directions.
    pub fn check_differential(&self, plan: &SamplingPlan) -> Result<ResidualStats> {
        let pts = plan.manifold_points(&self.manifold)?;
        let rows = par::try_map(&pts, |p| {
            let mut worst: f64 = 0.0;
            for v in self.manifold.tangent_basis(p.coords()) {
                let an = self.differential(&TangentVectorM::new_unchecked(p.clone(), v.clone()))?;
                let fd = self.fd_differential(p.coords(), &v)?;
                worst = worst.max((an.dir() - fd).norm() / an.dir().norm().max(1.0));
            }
            Ok::<f64, Error>(worst)
        })?;
        Ok(ResidualStats::from_values(rows))
    }
}

/// A map `G → G` (σ, σ⁻¹, σ_t).
#[derive(Clone)]
pub struct GroupMap {
    group: Arc<LieGroup>,
    name: String,
    eval: Arc<GroupFn>,
}

impl fmt::Debug for GroupMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupMap({} on {})", self.name, self.group)
    }
}

impl GroupMap {
    pub fn new<F>(group: &Arc<LieGroup>, name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&GroupElement) -> Result<GroupElement> + Send + Sync + 'static,
    {
        Self {
            group: group.clone(),
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn identity(group: &Arc<LieGroup>) -> Self {
        Self::new(group, "identity", |g| Ok(g.clone()))
    }

    /// `g ↦ h g h⁻¹`.
    pub fn conjugation(h: &GroupElement) -> Result<Self> {
        let (h, hinv) = (h.clone(), h.inverse()?);
        Ok(Self::new(&h.group().clone(), "conjugation", move |g| h.compose(g)?.compose(&hinv)))
    }

    pub fn group(&self) -> &Arc<LieGroup> {
        &self.group
    }
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, g: &GroupElement) -> Result<GroupElement> {
        self.group.ensure_same(g.group())?;
        let out = (self.eval)(g)?;
        self.group.ensure_same(out.group())?;
        Ok(out)
    }
}

/// Result of one σ recovery.
#[derive(Debug, Clone)]
pub struct SigmaRecovery {
    pub sigma: GroupElement,
    /// Largest per-point mismatch `‖Φ(σ(g), pᵢ) − f(Φ(g, f⁻¹(pᵢ)))‖`.
    pub match_residual: f64,
    pub iterations: usize,
}

pub const GN_MAX_ITERATIONS: usize = 50;
const GN_GRADIENT_TOL: f64 = 1e-8;
const GN_STEP_TOL: f64 = 1e-13;

/// Recovers `σ(g)` from `f ∘ Φ_g ∘ f⁻¹ = Φ_{σ(g)}` by Gauss–Newton in
/// exponential coordinates `h = h₀ exp(x)`, starting at `h₀ = g`.
pub fn recover_sigma_at(
    f: &Diffeomorphism,
    action: &GroupAction,
    g: &GroupElement,
    points: &[ManifoldPoint],
) -> Result<SigmaRecovery> {
    if !action.declared_effective() {
        return Err(Error::InvalidConfig(format!("action {} is not effective", action.name())));
    }
    let d = action.group().algebra_dim();
    let n = action.manifold().ambient_dim();
    if points.is_empty() || points.len() * n < d {
        return Err(Error::InvalidConfig(format!(
            "σ recovery needs at least {} sample points, got {}",
            d.div_ceil(n.max(1)),
            points.len()
        )));
    }
    let targets: Vec<ManifoldPoint> = points
        .iter()
        .map(|p| f.forward(&action.apply(g, &f.inverse(p)?)?))
        .collect::<Result<_>>()?;
    gauss_newton(action, g.clone(), points, &targets)
}

fn stacked_residual(action: &GroupAction, h: &GroupElement, points: &[ManifoldPoint], targets: &[ManifoldPoint]) -> Result<DVector<f64>> {
    let n = action.manifold().ambient_dim();
    let mut r = DVector::zeros(n * points.len());
    for (i, (p, t)) in points.iter().zip(targets).enumerate() {
        let hp = action.apply(h, p)?;
        r.rows_mut(i * n, n).copy_from(&(hp.coords() - t.coords()));
    }
    Ok(r)
}

fn jacobian(action: &GroupAction, h: &GroupElement, points: &[ManifoldPoint]) -> Result<DMatrix<f64>> {
    let group = action.group();
    let n = action.manifold().ambient_dim();
    let mut jac = DMatrix::zeros(n * points.len(), group.algebra_dim());
    for (i, p) in points.iter().enumerate() {
        for (j, b) in group.basis().iter().enumerate() {
            let w = TangentVectorG::new_unchecked(h.clone(), h.matrix() * b);
            let col = action.d_phi_p(p, &w)?;
            jac.view_mut((i * n, j), (n, 1)).copy_from(col.dir());
        }
    }
    Ok(jac)
}

fn gauss_newton(
    action: &GroupAction,
    h0: GroupElement,
    points: &[ManifoldPoint],
    targets: &[ManifoldPoint],
) -> Result<SigmaRecovery> {
    let group = action.group();
    let n = action.manifold().ambient_dim();
    let mut h = h0;
    let mut r = stacked_residual(action, &h, points, targets)?;
    let mut obj = 0.5 * r.norm_squared();
    let mut iterations = 0;
    while iterations < GN_MAX_ITERATIONS && obj > 0.0 {
        iterations += 1;
        let jac = jacobian(action, &h, points)?;
        let delta = -lstsq(&jac, &r).ok_or(Error::Singular)?;
        if delta.norm() < GN_STEP_TOL {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = h.retract(&AlgebraVector::new(group.clone(), &delta * step)?)?;
            let rc = stacked_residual(action, &cand, points, targets)?;
            let oc = 0.5 * rc.norm_squared();
            if oc < obj {
                (h, r, obj) = (cand, rc, oc);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step * delta.norm() < GN_STEP_TOL {
            break;
        }
    }
    let target_scale = targets.iter().map(|t| t.coords().norm()).fold(1.0, f64::max);
    if r.norm() > 1e-12 * target_scale {
        let gradient = (jacobian(action, &h, points)?.transpose() * &r).norm();
        if !(gradient <= GN_GRADIENT_TOL) {
            return Err(Error::RecoveryFailed {
                best: flatten_row_major(h.matrix()),
                objective: obj,
                gradient,
                iterations,
            });
        }
    }
    let match_residual = (0..points.len())
        .map(|i| r.rows(i * n, n).norm())
        .fold(0.0, f64::max);
    Ok(SigmaRecovery {
        sigma: h,
        match_residual,
        iterations,
    })
}

/// Residuals of the automorphism properties of a map `σ : G → G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutomorphismStats {
    /// `‖σ(g)σ(h) − σ(gh)‖_F` over the plan's pairs.
    pub homomorphism: ResidualStats,
    /// `‖σ(e) − e‖_F`.
    pub identity: f64,
    /// `‖σ(x) − y‖_F` after solving `σ(x) = y` for sampled `y`.
    pub inversion: ResidualStats,
}

impl AutomorphismStats {
    pub fn max(&self) -> f64 {
        self.homomorphism.max.max(self.identity).max(self.inversion.max)
    }
}

/// Checks that `σ` is a homomorphism, fixes `e` and is invertible at samples.
/// Evaluation failures count as infinite residuals.
pub fn check_automorphism(sigma: &GroupMap, plan: &SamplingPlan) -> Result<AutomorphismStats> {
    let group = sigma.group();
    let pairs = plan.group_pairs(group)?;
    let hom = par::map(&pairs, |(g, h)| {
        let run = || -> Result<f64> {
            let lhs = sigma.eval(g)?.matrix() * sigma.eval(h)?.matrix();
            let rhs = sigma.eval(&g.compose(h)?)?;
            Ok((lhs - rhs.matrix()).norm())
        };
        run().unwrap_or(f64::INFINITY)
    });
    let e = group.identity();
    let identity = sigma.eval(&e).map(|s| s.distance(&e)).unwrap_or(f64::INFINITY);
    let ys = plan.group_elements_n(group, plan.groups.min(8), Stream::Groups)?;
    let inv = par::map(&ys, |y| solve_preimage(sigma, y).unwrap_or(f64::INFINITY));
    Ok(AutomorphismStats {
        homomorphism: ResidualStats::from_values(hom),
        identity,
        inversion: ResidualStats::from_values(inv),
    })
}

/// Gauss–Newton for `σ(x) = y` from `x₀ = y`, with a central-difference
/// Jacobian in exponential coordinates. Returns the final mismatch.
fn solve_preimage(sigma: &GroupMap, y: &GroupElement) -> Result<f64> {
    let group = sigma.group();
    let d = group.algebra_dim();
    let mut x = y.clone();
    let flat = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let mut r = flat(&(sigma.eval(&x)?.matrix() - y.matrix()));
    for _ in 0..30 {
        if r.norm() < 1e-14 {
            break;
        }
        let mut cols = Vec::with_capacity(d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = FD_STEP;
            let plus = sigma.eval(&x.retract(&AlgebraVector::new(group.clone(), e.clone())?)?)?;
            let minus = sigma.eval(&x.retract(&AlgebraVector::new(group.clone(), -e)?)?)?;
            cols.push(flat(&((plus.matrix() - minus.matrix()) / (2.0 * FD_STEP))));
        }
        let jac = DMatrix::from_columns(&cols);
        let delta = -lstsq(&jac, &r).ok_or(Error::Singular)?;
        let cand = x.retract(&AlgebraVector::new(group.clone(), delta.clone())?)?;
        let rc = flat(&(sigma.eval(&cand)?.matrix() - y.matrix()));
        if rc.norm() >= r.norm() {
            break;
        }
        x = cand;
        r = rc;
        if delta.norm() < GN_STEP_TOL {
            break;
        }
    }
    Ok(r.norm())
}

/// Classifies a diffeomorphism: Strong when `σ = id` at every sample, Weak
/// when `f ∘ Φ_g ∘ f⁻¹` is matched by some `Φ_h` at every sampled `g`.
pub fn classify_diffeomorphism(
    f: &Diffeomorphism,
    action: &GroupAction,
    plan: &SamplingPlan,
    tol: &Tolerances,
) -> Result<InvarianceReport> {
    if f.manifold().as_ref() != action.manifold().as_ref() {
        return Err(Error::DescriptorMismatch {
            expected: action.manifold().to_string(),
            found: f.manifold().to_string(),
        });
    }
    let mut report = InvarianceReport::new(plan, tol);
    let gs = plan.group_elements(action.group())?;
    let points = plan.manifold_points(action.manifold())?;
    let scale = points.iter().map(|p| p.coords().norm()).fold(1.0, f64::max);
    report.field_scale = scale;

    let recoveries = par::map(&gs, |g| recover_sigma_at(f, action, g, &points));
    let mut matched = Vec::with_capacity(gs.len());
    let mut failures = 0;
    for r in recoveries {
        match r {
            Ok(rec) => matched.push(rec),
            Err(Error::RecoveryFailed { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures > 0 {
        report
            .notes
            .push(format!("σ recovery failed at {failures} of {} sampled g", gs.len()));
        report.classification = Classification::None;
        return Ok(report);
    }
    let match_stats = ResidualStats::from_values(matched.iter().map(|m| m.match_residual / scale));
    report.stats.insert("sigma_match".into(), match_stats);
    report.sigma = gs
        .iter()
        .zip(&matched)
        .map(|(g, m)| SigmaRow {
            g: flatten_row_major(g.matrix()),
            sigma: flatten_row_major(m.sigma.matrix()),
        })
        .collect();
    if !match_stats.passes(tol.sigma_match) {
        report.classification = Classification::None;
        return Ok(report);
    }
    let deviation = ResidualStats::from_values(gs.iter().zip(&matched).map(|(g, m)| m.sigma.distance(g)));
    report.stats.insert("sigma_identity_deviation".into(), deviation);

    let sigma = if deviation.passes(tol.sigma_match) {
        report.classification = Classification::Strong;
        GroupMap::identity(action.group())
    } else {
        report.classification = Classification::Weak;
        let (f, action, points) = (f.clone(), action.clone(), points.clone());
        GroupMap::new(&action.group().clone(), "recovered σ", move |g| {
            Ok(recover_sigma_at(&f, &action, g, &points)?.sigma)
        })
    };
    let auto = check_automorphism(&sigma, plan)?;
    report.stats.insert("automorphism_homomorphism".into(), auto.homomorphism);
    report
        .stats
        .insert("automorphism_identity".into(), ResidualStats::from_values([auto.identity]));
    report.stats.insert("automorphism_inversion".into(), auto.inversion);
    report.recovered_sigma = Some(sigma);
    Ok(report)
}
