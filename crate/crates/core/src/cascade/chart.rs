use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::actions::{ActionKind, GroupAction, ManifoldPoint, TangentVectorM};
use crate::error::{Error, Result};
use crate::lie::matrix::{flatten_row_major, from_row_major};
use crate::lie::{GroupElement, GroupKind, LieGroup};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan, Stream};

/// A point of the quotient `M/G` in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientPoint {
    coords: DVector<f64>,
}

/// A tangent vector to `M/G` in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientTangent {
    coords: DVector<f64>,
}

fn finite(coords: &DVector<f64>, what: &str) -> Result<()> {
    if coords.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("non-finite {what} coordinates")))
    }
}

impl QuotientPoint {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        finite(&coords, "quotient point")?;
        Ok(Self { coords })
    }
    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

impl QuotientTangent {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        finite(&coords, "quotient tangent")?;
        Ok(Self { coords })
    }
    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

/// Raw chart maps on ambient coordinates. [`BundleChart`] validates inputs
/// and wraps results.
pub trait ChartMap: Send + Sync {
    fn quotient_dim(&self) -> usize;
    /// `π(p)`.
    fn project(&self, p: &DVector<f64>) -> DVector<f64>;
    /// `s(y)`.
    fn section(&self, y: &DVector<f64>) -> DVector<f64>;
    /// `dπ_p(v)`.
    fn d_project(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    /// `ds_y(w)`.
    fn d_section(&self, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    /// `(g, y)` with `p = Φ(g, s(y))`, `g` as a group matrix.
    fn decompose(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)>;
}

/// Which builtin chart this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Translation,
    Transitive,
    Radial,
    ScalingRotation,
    Custom,
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChartKind::Translation => "translation",
            ChartKind::Transitive => "transitive",
            ChartKind::Radial => "radial",
            ChartKind::ScalingRotation => "scaling_rotation",
            ChartKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Quotient is the complement of the translated axes; `s` sets them to zero.
struct TranslationChart {
    ambient: usize,
    axes: Vec<usize>,
    rest: Vec<usize>,
    group: Arc<LieGroup>,
}

impl TranslationChart {
    fn pick(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rest.len(), self.rest.iter().map(|&i| v[i]))
    }
    fn embed(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient);
        for (k, &i) in self.rest.iter().enumerate() {
            out[i] = y[k];
        }
        out
    }
}

impl ChartMap for TranslationChart {
    fn quotient_dim(&self) -> usize {
        self.rest.len()
    }
    fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        self.pick(p)
    }
    fn section(&self, y: &DVector<f64>) -> DVector<f64> {
        self.embed(y)
    }
    fn d_project(&self, _p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.pick(v)
    }
    fn d_section(&self, _y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.embed(w)
    }
    fn decompose(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let k = self.axes.len();
        let mut g = self.group.identity_matrix();
        for (i, &a) in self.axes.iter().enumerate() {
            g[(i, k)] = p[a];
        }
        Ok((g, self.pick(p)))
    }
}

/// `G` on itself: the quotient is a point and `s ≡ e`.
struct TransitiveChart {
    group: Arc<LieGroup>,
}

impl ChartMap for TransitiveChart {
    fn quotient_dim(&self) -> usize {
        0
    }
    fn project(&self, _p: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn section(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(flatten_row_major(&self.group.identity_matrix()))
    }
    fn d_project(&self, _p: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn d_section(&self, _y: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.group.matrix_dim().pow(2))
    }
    fn decompose(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok((from_row_major(self.group.matrix_dim(), p.as_slice()), DVector::zeros(0)))
    }
}

fn polar(p: &DVector<f64>) -> Result<(f64, f64)> {
    let r = p.norm();
    if !(r > 0.0) {
        return Err(Error::RankDeficient {
            point: p.as_slice().to_vec(),
            min_singular: 0.0,
        });
    }
    Ok((r, p[1].atan2(p[0])))
}

fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `SO(2)` on `ℝ²∖{0}`: `y = |p|`, `s(r) = (r, 0)`.
struct RadialChart;

impl ChartMap for RadialChart {
    fn quotient_dim(&self) -> usize {
        1
    }
    fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, p.norm())
    }
    fn section(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[y[0], 0.0])
    }
    fn d_project(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, p.dot(v) / p.norm())
    }
    fn d_section(&self, _y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[w[0], 0.0])
    }
    fn decompose(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (r, theta) = polar(p)?;
        Ok((rotation2(theta), DVector::from_element(1, r)))
    }
}

/// `SO(2) × ℝ` on `ℝ²∖{0}`: transitive, `s ≡ (1, 0)`.
struct ScalingRotationChart;

impl ChartMap for ScalingRotationChart {
    fn quotient_dim(&self) -> usize {
        0
    }
    fn project(&self, _p: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn section(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[1.0, 0.0])
    }
    fn d_project(&self, _p: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn d_section(&self, _y: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn decompose(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (r, theta) = polar(p)?;
        let mut g = DMatrix::identity(4, 4);
        g.view_mut((0, 0), (2, 2)).copy_from(&rotation2(theta));
        g[(2, 3)] = r.ln();
        Ok((g, DVector::zeros(0)))
    }
}

/// Quotient data `(π, s, dπ, ds)` of a free action with a global section.
#[derive(Clone)]
pub struct BundleChart {
    action: GroupAction,
    kind: ChartKind,
    map: Arc<dyn ChartMap>,
}

impl fmt::Debug for BundleChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BundleChart")
            .field("action", &self.action.name())
            .field("kind", &self.kind)
            .field("quotient_dim", &self.map.quotient_dim())
            .finish()
    }
}

/// Chart invariants over sampled points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChartStats {
    /// `|π(s(y)) − y|`.
    pub project_section: ResidualStats,
    /// `|Φ(g, s(y)) − p|` for `(g, y) = decompose(p)`.
    pub round_trip: ResidualStats,
    /// `|dπ(ds(eᵢ)) − eᵢ|`.
    pub d_project_section: ResidualStats,
}

impl ChartStats {
    pub fn max(&self) -> f64 {
        self.project_section
            .max
            .max(self.round_trip.max)
            .max(self.d_project_section.max)
    }
}

impl BundleChart {
    /// For a translation action: the untranslated coordinates.
    pub fn translation(action: &GroupAction) -> Result<Self> {
        let ActionKind::Translation { axes } = action.kind() else {
            return Err(Error::InvalidConfig(format!("translation chart needs a translation action, got {}", action.name())));
        };
        let ambient = action.manifold().ambient_dim();
        let rest = (0..ambient).filter(|i| !axes.contains(i)).collect();
        Ok(Self {
            action: action.clone(),
            kind: ChartKind::Translation,
            map: Arc::new(TranslationChart {
                ambient,
                axes: axes.clone(),
                rest,
                group: action.group().clone(),
            }),
        })
    }

    /// For the left action of `G` on itself.
    pub fn transitive(action: &GroupAction) -> Result<Self> {
        if *action.kind() != ActionKind::LeftTranslation {
            return Err(Error::InvalidConfig(format!("transitive chart needs left translation, got {}", action.name())));
        }
        Ok(Self {
            action: action.clone(),
            kind: ChartKind::Transitive,
            map: Arc::new(TransitiveChart {
                group: action.group().clone(),
            }),
        })
    }

    /// For `SO(2)` rotating `ℝ²∖{0}`.
    pub fn radial(action: &GroupAction) -> Result<Self> {
        if *action.kind() != ActionKind::Rotation || *action.group().kind() != GroupKind::SO2 {
            return Err(Error::InvalidConfig(format!("radial chart needs SO2 rotating R^2, got {}", action.name())));
        }
        Ok(Self {
            action: action.clone(),
            kind: ChartKind::Radial,
            map: Arc::new(RadialChart),
        })
    }

    /// For `SO(2) × ℝ` rotating and scaling `ℝ²∖{0}`.
    pub fn scaling_rotation(action: &GroupAction) -> Result<Self> {
        if *action.kind() != ActionKind::ScalingRotation {
            return Err(Error::InvalidConfig(format!("scaling-rotation chart needs the scaling-rotation action, got {}", action.name())));
        }
        Ok(Self {
            action: action.clone(),
            kind: ChartKind::ScalingRotation,
            map: Arc::new(ScalingRotationChart),
        })
    }

    /// The action must be free and `map` a global section for it; see
    /// [`BundleChart::check_chart`].
    pub fn custom(action: &GroupAction, map: Arc<dyn ChartMap>) -> Self {
        Self {
            action: action.clone(),
            kind: ChartKind::Custom,
            map,
        }
    }

    pub fn action(&self) -> &GroupAction {
        &self.action
    }
    pub fn kind(&self) -> ChartKind {
        self.kind
    }
    pub fn quotient_dim(&self) -> usize {
        self.map.quotient_dim()
    }

    fn check_point(&self, p: &ManifoldPoint) -> Result<()> {
        let m = self.action.manifold();
        if p.manifold().as_ref() != m.as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: m.to_string(),
                found: p.manifold().to_string(),
            });
        }
        Ok(())
    }

    fn check_quotient(&self, coords: &DVector<f64>, what: &str) -> Result<()> {
        if coords.len() != self.quotient_dim() {
            return Err(Error::Dimension {
                what: what.into(),
                expected: self.quotient_dim(),
                found: coords.len(),
            });
        }
        Ok(())
    }

    pub fn project(&self, p: &ManifoldPoint) -> Result<QuotientPoint> {
        self.check_point(p)?;
        QuotientPoint::new(self.map.project(p.coords()))
    }

    pub fn section(&self, y: &QuotientPoint) -> Result<ManifoldPoint> {
        self.check_quotient(y.coords(), "quotient point")?;
        ManifoldPoint::new(self.action.manifold().clone(), self.map.section(y.coords()))
    }

    pub fn d_project(&self, v: &TangentVectorM) -> Result<QuotientTangent> {
        self.check_point(v.base())?;
        QuotientTangent::new(self.map.d_project(v.base().coords(), v.dir()))
    }

    /// `ds_y(w)`, based at `s(y)`.
    pub fn d_section(&self, y: &QuotientPoint, w: &QuotientTangent) -> Result<TangentVectorM> {
        self.check_quotient(w.coords(), "quotient tangent")?;
        let base = self.section(y)?;
        let dir = self.map.d_section(y.coords(), w.coords());
        TangentVectorM::new(base, dir)
    }

    /// `(g, y)` with `p = Φ(g, s(y))`.
    pub fn decompose(&self, p: &ManifoldPoint) -> Result<(GroupElement, QuotientPoint)> {
        self.check_point(p)?;
        let (g, y) = self.map.decompose(p.coords())?;
        Ok((GroupElement::new(self.action.group().clone(), g)?, QuotientPoint::new(y)?))
    }

    /// Chart invariants on `count` sampled points.
    pub fn check_chart(&self, plan: &SamplingPlan, count: usize) -> Result<ChartStats> {
        let ps = plan.manifold_points_n(self.action.manifold(), count, Stream::Points)?;
        let n = self.quotient_dim();
        let rows = par::try_map(&ps, |p| {
            let y = self.project(p)?;
            let ps_back = (self.project(&self.section(&y)?)?.coords() - y.coords()).norm();
            let (g, yd) = self.decompose(p)?;
            let rt = self.action.apply(&g, &self.section(&yd)?)?.distance(p);
            let mut dps = 0.0f64;
            for i in 0..n {
                let e = DVector::from_fn(n, |j, _| (i == j) as u8 as f64);
                let back = self.d_project(&self.d_section(&y, &QuotientTangent::new(e.clone())?)?)?;
                dps = dps.max((back.coords() - e).norm());
            }
            Ok::<_, Error>((ps_back, rt, dps))
        })?;
        Ok(ChartStats {
            project_section: ResidualStats::from_values(rows.iter().map(|r| r.0)),
            round_trip: ResidualStats::from_values(rows.iter().map(|r| r.1)),
            d_project_section: ResidualStats::from_values(rows.iter().map(|r| r.2)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ManifoldDescriptor;

    #[test]
    fn translation_chart_splits_coordinates() {
        let action = GroupAction::translation(3, vec![2]).unwrap();
        let chart = BundleChart::translation(&action).unwrap();
        let m = ManifoldDescriptor::euclidean(3);
        let p = ManifoldPoint::from_slice(&m, &[1.0, -2.0, 3.5]).unwrap();
        let (g, y) = chart.decompose(&p).unwrap();
        assert_eq!(y.coords().as_slice(), &[1.0, -2.0]);
        assert_eq!(g.matrix()[(0, 1)], 3.5);
        assert_eq!(chart.section(&y).unwrap().coords().as_slice(), &[1.0, -2.0, 0.0]);
    }

    #[test]
    fn builtin_charts_satisfy_invariants() {
        let plan = SamplingPlan::default();
        let charts = [
            BundleChart::translation(&GroupAction::translation(3, vec![2]).unwrap()).unwrap(),
            BundleChart::translation(&GroupAction::translation(4, vec![0, 3]).unwrap()).unwrap(),
            BundleChart::transitive(&GroupAction::left_translation(LieGroup::so3())).unwrap(),
            BundleChart::transitive(&GroupAction::left_translation(LieGroup::se2())).unwrap(),
            BundleChart::radial(&GroupAction::rotation(LieGroup::so2()).unwrap()).unwrap(),
            BundleChart::scaling_rotation(&GroupAction::scaling_rotation()).unwrap(),
        ];
        for chart in charts {
            let s = chart.check_chart(&plan, 100).unwrap();
            assert_eq!(s.round_trip.count, 100);
            assert!(s.project_section.max < 1e-10, "{chart:?} {s:?}");
            assert!(s.round_trip.max < 1e-8, "{chart:?} {s:?}");
            assert!(s.d_project_section.max < 1e-8, "{chart:?} {s:?}");
        }
    }

    #[test]
    fn radial_decompose_at_origin_errors() {
        let action = GroupAction::rotation(LieGroup::so2()).unwrap();
        let chart = BundleChart::radial(&action).unwrap();
        let p = ManifoldPoint::from_slice(action.manifold(), &[0.0, 0.0]).unwrap();
        assert!(matches!(chart.decompose(&p), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn wrong_action_is_rejected() {
        let action = GroupAction::rotation(LieGroup::so2()).unwrap();
        assert!(BundleChart::translation(&action).is_err());
        assert!(BundleChart::transitive(&action).is_err());
        assert!(BundleChart::scaling_rotation(&action).is_err());
        assert!(BundleChart::radial(&GroupAction::rotation(LieGroup::so3()).unwrap()).is_err());
    }
}
