//! Seeded low-discrepancy sampling plans, residual statistics and the
//! tolerance table shared by all checks.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{ManifoldDescriptor, ManifoldPoint};
use crate::error::{Error, Result};
use crate::lie::{AlgebraVector, GroupElement, LieGroup};

const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * f;
        index /= b;
        f *= inv;
    }
    out
}

/// Scrambled Halton sequence: the classic Halton points in `[0,1)^dim` with a
/// seeded Cranley–Patterson shift, so different seeds give different but
/// equally well-spread point sets.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64, stream: u64) -> Result<Self> {
        if dim > PRIMES.len() {
            return Err(Error::InvalidConfig(format!(
                "sampling dimension {dim} exceeds the supported {}",
                PRIMES.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Ok(Self { shift, next: 1 })
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.next;
        self.next += 1;
        self.shift
            .iter()
            .zip(PRIMES.iter())
            .map(|(s, &p)| (radical_inverse(i, p) + s).fract())
            .collect()
    }
}

/// Streams keep the sample sets used for different purposes decorrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Groups = 1,
    Pairs = 2,
    Points = 3,
    PointsAlt = 4,
}

/// Deterministic sampling plan over algebra coordinates (mapped through
/// `exp`) and manifold points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub seed: u64,
    /// Number of group elements `g` at which W or σ is recovered.
    pub groups: usize,
    /// Number of manifold points per batch.
    pub points: usize,
    /// Number of `(g, h)` pairs for homomorphism / group-linearity checks.
    pub pairs: usize,
    /// Algebra coordinates are drawn from `[-box_half_width, box_half_width]^d`.
    pub box_half_width: f64,
    /// Euclidean points are drawn from `[-point_box, point_box]^N`.
    pub point_box: f64,
    /// Euclidean points closer than this to the origin are pushed out radially.
    pub min_radius: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            groups: 8,
            points: 6,
            pairs: 50,
            box_half_width: 1.5,
            point_box: 2.0,
            min_radius: 0.0,
        }
    }
}

impl SamplingPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn algebra_coords(&self, dim: usize, count: usize, stream: Stream) -> Result<Vec<Vec<f64>>> {
        let mut seq = Halton::new(dim, self.seed, stream as u64)?;
        Ok((0..count)
            .map(|_| {
                seq.next_point()
                    .into_iter()
                    .map(|u| (2.0 * u - 1.0) * self.box_half_width)
                    .collect()
            })
            .collect())
    }

    fn elements_from(group: &Arc<LieGroup>, coords: &[f64]) -> Result<GroupElement> {
        AlgebraVector::new(group.clone(), DVector::from_column_slice(coords))?.exp()
    }

    /// `self.groups` group elements.
    pub fn group_elements(&self, group: &Arc<LieGroup>) -> Result<Vec<GroupElement>> {
        self.group_elements_n(group, self.groups, Stream::Groups)
    }

    pub fn group_elements_n(
        &self,
        group: &Arc<LieGroup>,
        count: usize,
        stream: Stream,
    ) -> Result<Vec<GroupElement>> {
        self.algebra_coords(group.algebra_dim(), count, stream)?
            .iter()
            .map(|c| Self::elements_from(group, c))
            .collect()
    }

    /// `self.pairs` pairs `(g, h)` drawn jointly from a `2d`-dimensional sequence.
    pub fn group_pairs(&self, group: &Arc<LieGroup>) -> Result<Vec<(GroupElement, GroupElement)>> {
        let d = group.algebra_dim();
        self.algebra_coords(2 * d, self.pairs, Stream::Pairs)?
            .iter()
            .map(|c| Ok((Self::elements_from(group, &c[..d])?, Self::elements_from(group, &c[d..])?)))
            .collect()
    }

    /// `self.points` points on `manifold`.
    pub fn manifold_points(&self, manifold: &Arc<ManifoldDescriptor>) -> Result<Vec<ManifoldPoint>> {
        self.manifold_points_n(manifold, self.points, Stream::Points)
    }

    pub fn manifold_points_n(
        &self,
        manifold: &Arc<ManifoldDescriptor>,
        count: usize,
        stream: Stream,
    ) -> Result<Vec<ManifoldPoint>> {
        let dim = manifold.sampling_dim();
        let mut seq = Halton::new(dim, self.seed, stream as u64)?;
        (0..count)
            .map(|_| {
                let u = seq.next_point();
                let coords = manifold.point_from_unit(&u, self)?;
                ManifoldPoint::new(manifold.clone(), coords)
            })
            .collect()
    }

    /// Scales a unit-cube sample into the Euclidean point box, honoring `min_radius`.
    pub(crate) fn euclidean_from_unit(&self, u: &[f64]) -> DVector<f64> {
        let mut p = DVector::from_iterator(u.len(), u.iter().map(|x| (2.0 * x - 1.0) * self.point_box));
        if self.min_radius > 0.0 {
            let n = p.norm();
            if n == 0.0 {
                p[0] = self.min_radius;
            } else if n < self.min_radius {
                p *= self.min_radius / n;
            }
        }
        p
    }
}

/// Max / mean of a residual over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl ResidualStats {
    pub const EMPTY: ResidualStats = ResidualStats {
        max: 0.0,
        mean: 0.0,
        count: 0,
    };

    /// Summarizes the values in iteration order. NaN residuals propagate into
    /// `max` so they can never pass a tolerance.
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut count = 0;
        for v in values {
            if v.is_nan() {
                max = f64::NAN;
            } else if v > max {
                max = v;
            }
            sum += v;
            count += 1;
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        Self { max, mean, count }
    }

    pub fn merge(&self, other: &ResidualStats) -> ResidualStats {
        let count = self.count + other.count;
        let mean = if count == 0 {
            0.0
        } else {
            (self.mean * self.count as f64 + other.mean * other.count as f64) / count as f64
        };
        let max = if self.max.is_nan() || other.max.is_nan() {
            f64::NAN
        } else {
            self.max.max(other.max)
        };
        ResidualStats { max, mean, count }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max < tol
    }
}

/// Named tolerances used by classification and verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Group membership / manifold constraint residual.
    pub membership: f64,
    /// Strong invariance: max residual field norm relative to field scale.
    pub strong: f64,
    /// Weak invariance: solver consistency residual relative to field scale.
    pub weak: f64,
    /// Infinitesimal freeness: minimum singular value of the generator matrix.
    pub free: f64,
    pub group_linear: f64,
    pub automorphism: f64,
    pub group_affine: f64,
    /// Match residual certifying a recovered σ(g).
    pub sigma_match: f64,
    pub flow_invariance: f64,
    pub derivative: f64,
    pub sigma_flow: f64,
    pub small_time: f64,
    pub forcing: f64,
    pub cascade: f64,
    pub round_trip: f64,
    pub action_axioms: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            membership: 1e-9,
            strong: 1e-9,
            weak: 1e-8,
            free: 1e-8,
            group_linear: 1e-8,
            automorphism: 1e-8,
            group_affine: 1e-8,
            sigma_match: 1e-8,
            flow_invariance: 1e-6,
            derivative: 1e-4,
            sigma_flow: 1e-7,
            small_time: 1e-7,
            forcing: 1e-8,
            cascade: 1e-6,
            round_trip: 1e-10,
            action_axioms: 1e-10,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 16] = [
        "membership",
        "strong",
        "weak",
        "free",
        "group_linear",
        "automorphism",
        "group_affine",
        "sigma_match",
        "flow_invariance",
        "derivative",
        "sigma_flow",
        "small_time",
        "forcing",
        "cascade",
        "round_trip",
        "action_axioms",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "membership" => &mut self.membership,
            "strong" => &mut self.strong,
            "weak" => &mut self.weak,
            "free" => &mut self.free,
            "group_linear" => &mut self.group_linear,
            "automorphism" => &mut self.automorphism,
            "group_affine" => &mut self.group_affine,
            "sigma_match" => &mut self.sigma_match,
            "flow_invariance" => &mut self.flow_invariance,
            "derivative" => &mut self.derivative,
            "sigma_flow" => &mut self.sigma_flow,
            "small_time" => &mut self.small_time,
            "forcing" => &mut self.forcing,
            "cascade" => &mut self.cascade,
            "round_trip" => &mut self.round_trip,
            "action_axioms" => &mut self.action_axioms,
            _ => return None,
        })
    }

    /// Overrides one tolerance by name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance {name} must be positive, got {value}")));
        }
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown tolerance `{name}`")))?;
        *slot = value;
        Ok(())
    }
}
