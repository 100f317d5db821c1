//! Fixed-step flows of vector fields on embedded manifolds and matrix groups.
//!
//! Ambient fields use classical RK4, optionally followed by projection back
//! onto the constraint set. Fields on a group can instead be integrated with
//! Lie–Euler or RKMK4, which update `g ← g · exp(u)` and so stay on the group
//! up to the accuracy of `exp`.

mod checks;
mod export;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actions::{ManifoldDescriptor, ManifoldPoint, VectorFieldM};
use crate::error::{Error, Result};
use crate::invariance::Diffeomorphism;
use crate::lie::matrix::{bracket, flatten_row_major, from_row_major};
use crate::lie::{GroupElement, LieGroup, VectorFieldG};
use crate::par;

pub use checks::{
    check_flow_derivative, check_flow_weak_invariance, check_sigma_is_flow, check_small_time_extension,
    differentiate_flow_at_zero, DerivativeStats, SigmaFlowStats, SigmaFromFlow, SmallTimeReport,
};
pub use export::{write_csv, write_trajectory_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "rk4")]
    Rk4Ambient,
    #[serde(rename = "lie_euler")]
    LieEulerExp,
    #[serde(rename = "rkmk4")]
    Rkmk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    None,
    Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub step: f64,
    /// Applied after each step of an ambient scheme.
    pub projection: Projection,
    /// State norm above which integration stops with a divergence error.
    pub blowup: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4Ambient,
            step: 1e-3,
            projection: Projection::Constraint,
            blowup: 1e12,
        }
    }
}

impl IntegratorConfig {
    /// RKMK4 with the default step, for fields on a group.
    pub fn group_default() -> Self {
        Self {
            scheme: Scheme::Rkmk4,
            ..Self::default()
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!("integrator step must be positive, got {}", self.step)));
        }
        if !(self.blowup > 0.0) {
            return Err(Error::InvalidConfig(format!("blow-up bound must be positive, got {}", self.blowup)));
        }
        Ok(())
    }

    /// Number of equal steps covering `[0, t]` and their signed size. A ratio
    /// `|t|/step` within 1e-9 of an integer is not rounded up.
    pub(crate) fn grid(&self, t: f64) -> (usize, f64) {
        let ratio = t.abs() / self.step;
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        };
        let n = (n as usize).max(1);
        (n, t / n as f64)
    }
}

/// The field a flow integrates.
#[derive(Clone, Debug)]
pub enum FlowField {
    M(VectorFieldM),
    G(VectorFieldG),
}

impl From<VectorFieldM> for FlowField {
    fn from(v: VectorFieldM) -> Self {
        FlowField::M(v)
    }
}

impl From<VectorFieldG> for FlowField {
    fn from(w: VectorFieldG) -> Self {
        FlowField::G(w)
    }
}

impl FlowField {
    pub fn manifold(&self) -> Arc<ManifoldDescriptor> {
        match self {
            FlowField::M(v) => v.manifold().clone(),
            FlowField::G(w) => ManifoldDescriptor::matrix_group(w.group().clone()),
        }
    }

    /// The field as a field on a group, when it lives on one.
    pub fn group_field(&self) -> Option<&VectorFieldG> {
        match self {
            FlowField::M(v) => v.as_group_field(),
            FlowField::G(w) => Some(w),
        }
    }

    /// Ambient evaluation in manifold coordinates.
    pub fn eval_ambient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            FlowField::M(v) => v.eval_ambient(x),
            FlowField::G(w) => {
                let n = w.group().matrix_dim();
                let m = w.eval_ambient(&from_row_major(n, x.as_slice()))?;
                Ok(DVector::from_vec(flatten_row_major(&m)))
            }
        }
    }
}

/// A field plus integrator settings; `evaluate(t, p)` is the numerical `φ_t(p)`.
#[derive(Clone)]
pub struct FlowHandle {
    field: FlowField,
    config: IntegratorConfig,
    manifold: Arc<ManifoldDescriptor>,
}

impl fmt::Debug for FlowHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowHandle")
            .field("field", &self.field)
            .field("config", &self.config)
            .finish()
    }
}

impl FlowHandle {
    pub fn new(field: impl Into<FlowField>, config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        let field = field.into();
        if config.scheme != Scheme::Rk4Ambient && field.group_field().is_none() {
            return Err(Error::InvalidConfig(format!(
                "{:?} needs a field on a matrix group",
                config.scheme
            )));
        }
        let manifold = field.manifold();
        Ok(Self { field, config, manifold })
    }

    pub fn field(&self) -> &FlowField {
        &self.field
    }
    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }
    pub fn manifold(&self) -> &Arc<ManifoldDescriptor> {
        &self.manifold
    }

    pub fn evaluate(&self, t: f64, start: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.check_point(start)?;
        let x = self.run(t, start.coords(), None)?;
        Ok(ManifoldPoint::new_unchecked(self.manifold.clone(), x))
    }

    /// `φ_t(g)` for a flow on a group.
    pub fn evaluate_group(&self, t: f64, g: &GroupElement) -> Result<GroupElement> {
        let group = self
            .manifold
            .as_group()
            .ok_or_else(|| Error::InvalidConfig(format!("flow lives on {}, not on a group", self.manifold)))?;
        group.ensure_same(g.group())?;
        let x = self.run(t, &DVector::from_vec(flatten_row_major(g.matrix())), None)?;
        Ok(GroupElement::from_matrix_unchecked(
            group.clone(),
            from_row_major(group.matrix_dim(), x.as_slice()),
        ))
    }

    /// `(t_k, x_k)` for every grid time, including the start.
    pub fn trajectory(&self, t: f64, start: &ManifoldPoint) -> Result<Vec<(f64, DVector<f64>)>> {
        self.check_point(start)?;
        let mut rows = Vec::new();
        self.run(t, start.coords(), Some(&mut rows))?;
        Ok(rows)
    }

    /// Independent trajectories, evaluated concurrently.
    pub fn evaluate_batch(&self, t: f64, starts: &[ManifoldPoint]) -> Vec<Result<ManifoldPoint>> {
        par::map(starts, |p| self.evaluate(t, p))
    }

    /// `φ_t` as a diffeomorphism with inverse `φ_{−t}`.
    pub fn diffeomorphism(&self, t: f64) -> Diffeomorphism {
        let (a, b) = (self.clone(), self.clone());
        Diffeomorphism::new(
            &self.manifold,
            format!("flow at t = {t}"),
            move |x| a.run(t, x, None),
            move |x| b.run(-t, x, None),
        )
    }

    fn check_point(&self, p: &ManifoldPoint) -> Result<()> {
        if p.manifold().as_ref() != self.manifold.as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: self.manifold.to_string(),
                found: p.manifold().to_string(),
            });
        }
        Ok(())
    }

    fn run(&self, t: f64, x0: &DVector<f64>, mut record: Option<&mut Vec<(f64, DVector<f64>)>>) -> Result<DVector<f64>> {
        if let Some(rows) = record.as_deref_mut() {
            rows.push((0.0, x0.clone()));
        }
        if t == 0.0 {
            return Ok(x0.clone());
        }
        let (n, h) = self.config.grid(t);
        match self.config.scheme {
            Scheme::Rk4Ambient => {
                let project = self.config.projection == Projection::Constraint;
                let mut x = x0.clone();
                for k in 0..n {
                    let tk = k as f64 * h;
                    x = rk4_step(&x, tk, h, &|_, y: &DVector<f64>| self.field.eval_ambient(y))?;
                    if project {
                        x = self.manifold.project(&x);
                    }
                    self.guard(tk + h, x.norm())?;
                    if let Some(rows) = record.as_deref_mut() {
                        rows.push((tk + h, x.clone()));
                    }
                }
                Ok(x)
            }
            Scheme::LieEulerExp | Scheme::Rkmk4 => {
                let w = self.field.group_field().expect("checked in FlowHandle::new");
                let group = w.group();
                let nd = group.matrix_dim();
                let mut g = from_row_major(nd, x0.as_slice());
                let xi = |_: f64, m: &DMatrix<f64>| w.left_trivialized_ambient(m);
                for k in 0..n {
                    let tk = k as f64 * h;
                    g = match self.config.scheme {
                        Scheme::LieEulerExp => lie_euler_step(group, &g, tk, h, &xi)?,
                        _ => rkmk4_step(group, &g, tk, h, &xi)?,
                    };
                    self.guard(tk + h, g.norm())?;
                    if let Some(rows) = record.as_deref_mut() {
                        rows.push((tk + h, DVector::from_vec(flatten_row_major(&g))));
                    }
                }
                Ok(DVector::from_vec(flatten_row_major(&g)))
            }
        }
    }

    fn guard(&self, t: f64, norm: f64) -> Result<()> {
        if !(norm <= self.config.blowup) {
            return Err(Error::Divergence { t, norm });
        }
        Ok(())
    }
}

/// Integrates `v` from `start` for time `t`.
pub fn integrate(field: impl Into<FlowField>, config: IntegratorConfig, t: f64, start: &ManifoldPoint) -> Result<ManifoldPoint> {
    FlowHandle::new(field, config)?.evaluate(t, start)
}

/// One classical RK4 step for `ẋ = f(t, x)`.
pub(crate) fn rk4_step<F>(x: &DVector<f64>, t: f64, h: f64, f: &F) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn exp_alg(group: &LieGroup, u: &DMatrix<f64>) -> DMatrix<f64> {
    group.exp_matrix(&group.vee(u).0)
}

/// Inverse of the trivialized differential of `exp` for `g = g₀ exp(u)`,
/// truncated after the second bracket: `A + ½[u, A] + (1/12)[u, [u, A]]`.
fn dexpinv(u: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let ua = bracket(u, a);
    let uua = bracket(u, &ua);
    a + ua * 0.5 + uua / 12.0
}

/// `g ← g exp(h ξ(t, g))`.
pub(crate) fn lie_euler_step<F>(group: &LieGroup, g: &DMatrix<f64>, t: f64, h: f64, xi: &F) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    Ok(g * exp_alg(group, &(xi(t, g)? * h)))
}

/// One Runge–Kutta–Munthe-Kaas step of order four for `ġ = g ξ(t, g)`.
pub(crate) fn rkmk4_step<F>(group: &LieGroup, g: &DMatrix<f64>, t: f64, h: f64, xi: &F) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let k1 = xi(t, g)? * h;
    let u2 = &k1 * 0.5;
    let k2 = dexpinv(&u2, &xi(t + 0.5 * h, &(g * exp_alg(group, &u2)))?) * h;
    let u3 = &k2 * 0.5;
    let k3 = dexpinv(&u3, &xi(t + 0.5 * h, &(g * exp_alg(group, &u3)))?) * h;
    let k4 = dexpinv(&k3, &xi(t + h, &(g * exp_alg(group, &k3)))?) * h;
    let v = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
    Ok(g * exp_alg(group, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::AlgebraVector;

    fn scalar_field(a: f64, b: f64) -> VectorFieldM {
        VectorFieldM::affine(DMatrix::from_element(1, 1, b), DVector::from_element(1, a)).unwrap()
    }

    #[test]
    fn grid_rounding() {
        let c = IntegratorConfig::default();
        assert_eq!(c.grid(1.0), (1000, 1e-3));
        assert_eq!(c.grid(0.0005).0, 1);
        let (n, h) = c.grid(-0.0105);
        assert_eq!(n, 11);
        assert!((h * 11.0 + 0.0105).abs() < 1e-15);
    }

    #[test]
    fn scalar_affine_matches_closed_form() {
        let (a, b) = (1.0, 0.5);
        let v = scalar_field(a, b);
        let p = ManifoldPoint::from_slice(v.manifold(), &[0.0]).unwrap();
        let out = integrate(v, IntegratorConfig::default(), 1.0, &p).unwrap();
        let want = (a / b) * (b.exp() - 1.0);
        assert!((out.coords()[0] - want).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_exact() {
        let v = scalar_field(1.0, 0.5);
        let p = ManifoldPoint::from_slice(v.manifold(), &[0.123456789]).unwrap();
        let f = FlowHandle::new(v, IntegratorConfig::default()).unwrap();
        assert_eq!(f.evaluate(0.0, &p).unwrap().coords(), p.coords());
        assert_eq!(f.trajectory(0.0, &p).unwrap().len(), 1);
    }

    #[test]
    fn left_invariant_flow_is_exp() {
        let group = LieGroup::so3();
        let xi = AlgebraVector::from_slice(&group, &[0.3, -0.8, 0.5]).unwrap();
        let want = xi.exp().unwrap();
        let w = VectorFieldG::left_invariant(xi);
        for cfg in [
            IntegratorConfig::group_default(),
            IntegratorConfig {
                scheme: Scheme::LieEulerExp,
                ..Default::default()
            },
            IntegratorConfig::default(),
        ] {
            let f = FlowHandle::new(w.clone(), cfg).unwrap();
            let g = f.evaluate_group(1.0, &group.identity()).unwrap();
            assert!(g.distance(&want) < 1e-9, "{cfg:?}: {}", g.distance(&want));
        }
    }

    #[test]
    fn rkmk4_is_fourth_order_on_conjugation_flow() {
        // φ_t(g) = e^{tD} g e^{-tD} for W(g) = Dg − gD.
        let group = LieGroup::so3();
        let d = group.hat(&DVector::from_column_slice(&[0.2, 0.7, -0.4]));
        let w = VectorFieldG::inner_derivation(&group, d.clone()).unwrap();
        let g = GroupElement::from_coords(&group, &[1.0, 0.3, -0.2]).unwrap();
        let exact = {
            let e = crate::lie::matrix::expm(&(&d * 2.0));
            let einv = crate::lie::matrix::expm(&(&d * -2.0));
            e * g.matrix() * einv
        };
        let err = |h: f64| {
            let f = FlowHandle::new(w.clone(), IntegratorConfig::group_default().with_step(h)).unwrap();
            (f.evaluate_group(2.0, &g).unwrap().matrix() - &exact).norm()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn divergence_reports_time() {
        let v = VectorFieldM::custom(&ManifoldDescriptor::euclidean(1), "blowup", |x| Ok(x.map(|y| y * y)));
        let p = ManifoldPoint::from_slice(v.manifold(), &[1.0]).unwrap();
        match integrate(v, IntegratorConfig::default(), 2.0, &p) {
            Err(Error::Divergence { t, .. }) => assert!(t > 0.9 && t < 1.01, "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lie_schemes_need_group_fields() {
        let v = scalar_field(1.0, 0.0);
        assert!(FlowHandle::new(v, IntegratorConfig::group_default()).is_err());
        assert!(FlowHandle::new(scalar_field(1.0, 0.0), IntegratorConfig::default().with_step(0.0)).is_err());
    }
}
