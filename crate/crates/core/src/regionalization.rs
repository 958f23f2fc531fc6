//! Splitting the input space into possibly overlapping regions, and the
//! weight schemes that glue local predictors back together.
//!
//! Regions are closed Euclidean balls around k-means centers. Balls in `ℝ^d`
//! are complete separable metric spaces, so the topological requirements on
//! regions hold by construction and are not checked at runtime. Every
//! training point lies in the ball of its own cluster, so the training data
//! are always covered; an unseen point may fall outside every ball, in which
//! case callers fall back to the nearest region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{distance, squared_distance, Dataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::solver::WeightedSample;

const KMEANS_MAX_ITER: usize = 100;

/// Closed ball `{x : ‖x - center‖ ≤ radius}` with a 1-based id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionPredicate {
    pub id: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl RegionPredicate {
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        distance(x, &self.center) <= self.radius
    }

    /// Distance from `x` to the ball (zero inside).
    pub fn gap(&self, x: &[f64]) -> f64 {
        (distance(x, &self.center) - self.radius).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub regions: Vec<RegionPredicate>,
    pub tau: f64,
    pub min_region_size: usize,
}

impl RegionPartition {
    pub fn new(regions: Vec<RegionPredicate>, tau: f64, min_region_size: usize) -> Result<Self> {
        let p = Self {
            regions,
            tau,
            min_region_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::invalid("a partition needs at least one region"));
        }
        let dim = self.regions[0].center.len();
        for (i, r) in self.regions.iter().enumerate() {
            if r.id != i + 1 {
                return Err(Error::invalid(format!(
                    "region ids must be 1..B in order; position {} has id {}",
                    i + 1,
                    r.id
                )));
            }
            if r.center.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.center.len(),
                });
            }
            if !(r.radius.is_finite() && r.radius >= 0.0) {
                return Err(Error::invalid(format!(
                    "region {} has invalid radius",
                    r.id
                )));
            }
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::invalid(format!(
                "overlap factor must be >= 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region(&self, id: usize) -> &RegionPredicate {
        &self.regions[id - 1]
    }

    /// Ids of all regions containing `x`.
    pub fn containing(&self, x: &[f64]) -> Vec<usize> {
        self.regions
            .iter()
            .filter(|r| r.contains(x))
            .map(|r| r.id)
            .collect()
    }

    /// Region whose ball is closest to `x`; ties go to the lowest id.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for r in &self.regions {
            let g = distance(x, &r.center) - r.radius;
            if g < best.0 {
                best = (g, r.id);
            }
        }
        best.1
    }

    /// The points of `data` inside region `id`, as a uniformly weighted
    /// sample, or the null measure when there are none.
    pub fn restrict(&self, data: &Dataset, id: usize) -> Restriction {
        let region = self.region(id);
        let indices: Vec<usize> = data
            .xs()
            .iter()
            .enumerate()
            .filter(|(_, x)| region.contains(x))
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            return Restriction::NullMeasure;
        }
        let xs = indices.iter().map(|&i| data.xs()[i].clone()).collect();
        let ys = indices.iter().map(|&i| data.ys()[i]).collect();
        Restriction::Sample {
            sample: WeightedSample::uniform(xs, ys).expect("restricted sample is valid"),
            indices,
        }
    }
}

/// Result of restricting a dataset to one region.
#[derive(Debug, Clone, PartialEq)]
pub enum Restriction {
    Sample {
        sample: WeightedSample,
        /// Positions of the selected points in the original dataset.
        indices: Vec<usize>,
    },
    NullMeasure,
}

impl Restriction {
    pub fn sample(&self) -> Option<&WeightedSample> {
        match self {
            Restriction::Sample { sample, .. } => Some(sample),
            Restriction::NullMeasure => None,
        }
    }

    pub fn len(&self) -> usize {
        self.sample().map_or(0, WeightedSample::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centers.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // fewer distinct points than requested centers
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if acc > target && w > 0.0 {
                pick = i;
                break;
            }
        }
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut assign = exec::map_slice(points, |p| nearest_center(p, &centers));
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &m) in centers.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s.into_iter().map(|v| v / m as f64).collect();
            }
        }
        let next = exec::map_slice(points, |p| nearest_center(p, &centers));
        if next == assign {
            break;
        }
        assign = next;
    }
    (centers, assign)
}

/// k-means (k-means++ seeding, Lloyd iterations) followed by merging of
/// undersized clusters and ball construction with overlap factor `tau`.
///
/// Region `b` is the ball around center `c_b` with radius `(1 + tau) r_b`,
/// where `r_b` is the largest distance from `c_b` to a point assigned to it.
pub fn regionalize(
    points: &[Vec<f64>],
    b_target: usize,
    tau: f64,
    min_region_size: usize,
    seed: u64,
) -> Result<RegionPartition> {
    if b_target == 0 || min_region_size == 0 {
        return Err(Error::invalid(
            "region count and minimum region size must be positive",
        ));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!(
            "overlap factor must be >= 0, got {tau}"
        )));
    }
    if points.len() < b_target * min_region_size {
        return Err(Error::InsufficientData(format!(
            "{} points cannot fill {b_target} regions of at least {min_region_size}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have inconsistent dimensions"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(points, b_target, &mut rng);
    let (mut centers, mut assign) = lloyd(points, init);

    loop {
        let mut counts = vec![0usize; centers.len()];
        for &a in &assign {
            counts[a] += 1;
        }
        let smallest = (0..centers.len())
            .filter(|&j| counts[j] < min_region_size)
            .min_by_key(|&j| (counts[j], j));
        let Some(drop) = smallest else { break };
        if centers.len() == 1 {
            break;
        }
        centers.remove(drop);
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            if *a == drop {
                *a = nearest_center(p, &centers);
            } else if *a > drop {
                *a -= 1;
            }
        }
    }

    let mut radii = vec![0.0f64; centers.len()];
    for (p, &a) in points.iter().zip(&assign) {
        radii[a] = radii[a].max(distance(p, &centers[a]));
    }
    let regions = centers
        .into_iter()
        .zip(radii)
        .enumerate()
        .map(|(j, (center, r))| RegionPredicate {
            id: j + 1,
            center,
            radius: (1.0 + tau) * r,
        })
        .collect();
    RegionPartition::new(regions, tau, min_region_size)
}

/// How local predictions are weighted at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "KindDoc", try_from = "KindDoc")]
pub enum WeightKind {
    /// `1[x ∈ X_b] / #{b' : x ∈ X_b'}`.
    NormalizedIndicator,
    /// `∝ 1[x ∈ X_b] exp(-‖x - c_b‖² / h²)`.
    SmoothBump { bandwidth: f64 },
}

#[derive(Serialize, Deserialize)]
struct KindDoc {
    kind: String,
    #[serde(default)]
    h: Option<f64>,
}

impl From<WeightKind> for KindDoc {
    fn from(k: WeightKind) -> Self {
        match k {
            WeightKind::NormalizedIndicator => KindDoc {
                kind: "normalized-indicator".into(),
                h: None,
            },
            WeightKind::SmoothBump { bandwidth } => KindDoc {
                kind: "smooth-bump".into(),
                h: Some(bandwidth),
            },
        }
    }
}

impl TryFrom<KindDoc> for WeightKind {
    type Error = Error;

    fn try_from(d: KindDoc) -> Result<Self> {
        let k = match (d.kind.as_str(), d.h) {
            ("normalized-indicator", _) => WeightKind::NormalizedIndicator,
            ("smooth-bump", Some(h)) => WeightKind::SmoothBump { bandwidth: h },
            ("smooth-bump", None) => return Err(Error::invalid("smooth-bump needs a bandwidth h")),
            (other, _) => return Err(Error::invalid(format!("unknown weight scheme {other:?}"))),
        };
        k.validate()?;
        Ok(k)
    }
}

impl WeightKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightKind::SmoothBump { bandwidth } if !(bandwidth.is_finite() && bandwidth > 0.0) => {
                Err(Error::invalid(format!(
                    "bandwidth must be positive, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// A weight scheme over a partition. Serializes as
/// `{regions, tau, min_region_size, kind, h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    #[serde(flatten)]
    pub partition: RegionPartition,
    #[serde(flatten)]
    pub kind: WeightKind,
}

impl WeightScheme {
    pub fn new(partition: RegionPartition, kind: WeightKind) -> Result<Self> {
        partition.validate()?;
        kind.validate()?;
        Ok(Self { partition, kind })
    }

    pub fn num_regions(&self) -> usize {
        self.partition.len()
    }

    /// Weights `(w_1(x), …, w_B(x))`. They sum to one and vanish outside
    /// each region; points outside every region are an error.
    pub fn weights_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let regions = &self.partition.regions;
        let dists: Vec<f64> = regions.iter().map(|r| distance(x, &r.center)).collect();
        let inside: Vec<bool> = regions
            .iter()
            .zip(&dists)
            .map(|(r, &d)| d <= r.radius)
            .collect();
        let count = inside.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::Uncovered);
        }
        let mut w = vec![0.0; regions.len()];
        match self.kind {
            WeightKind::NormalizedIndicator => {
                let share = 1.0 / count as f64;
                for (wb, &ins) in w.iter_mut().zip(&inside) {
                    if ins {
                        *wb = share;
                    }
                }
            }
            WeightKind::SmoothBump { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let dmin = dists
                    .iter()
                    .zip(&inside)
                    .filter(|(_, &ins)| ins)
                    .map(|(&d, _)| d * d)
                    .fold(f64::INFINITY, f64::min);
                let mut total = 0.0;
                for ((wb, &ins), &d) in w.iter_mut().zip(&inside).zip(&dists) {
                    if ins {
                        // floor keeps w_b strictly positive inside X_b
                        *wb = (-(d * d - dmin) / h2).exp().max(1e-300);
                        total += *wb;
                    }
                }
                for wb in &mut w {
                    *wb /= total;
                }
            }
        }
        Ok(w)
    }

    /// Like [`weights_at`](Self::weights_at), but an uncovered point gets
    /// the unit weight of its nearest region. The flag reports coverage.
    pub fn weights_or_nearest(&self, x: &[f64]) -> (Vec<f64>, bool) {
        match self.weights_at(x) {
            Ok(w) => (w, true),
            Err(_) => {
                let mut w = vec![0.0; self.num_regions()];
                w[self.partition.nearest(x) - 1] = 1.0;
                (w, false)
            }
        }
    }

    /// Empirical `sup_{x ∈ X_b} w_b(x)` over the probes lying in region `b`.
    /// Exactly 1 as soon as one probe lies in region `b` alone. Without any
    /// probe in the region the trivial bound 1 is returned.
    pub fn weight_sup_norm(&self, b: usize, probes: &[Vec<f64>]) -> f64 {
        let region = self.partition.region(b);
        let mut best: Option<f64> = None;
        for p in probes.iter().filter(|p| region.contains(p)) {
            if self.partition.containing(p).len() == 1 {
                return 1.0;
            }
            let w = self.weights_at(p).expect("probe inside region")[b - 1];
            best = Some(best.map_or(w, |m: f64| m.max(w)));
        }
        best.unwrap_or(1.0)
    }
}
