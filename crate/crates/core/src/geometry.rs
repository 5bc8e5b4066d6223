//! Bounded domains, the enclosing ball, indicator-defined sets and seeded
//! Monte Carlo measure estimation.
//!
//! Sampling is batched: batch `b` draws from a ChaCha stream selected by
//! `(seed, b)`, so the output depends only on `(region, n, seed)` and not on
//! how rayon schedules the batches.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::mean_and_stderr;
use crate::Vec3;

/// Points drawn per RNG stream.
pub const SAMPLE_BATCH: usize = 1024;

/// Bounded open domain: a ball or an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Ball { center: Vec3, radius: f64 },
    Box { center: Vec3, half_widths: Vec3 },
}

impl Domain {
    pub fn unit_ball() -> Self {
        Domain::Ball {
            center: Vec3::zeros(),
            radius: 1.0,
        }
    }

    pub fn ball(center: Vec3, radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        Domain::Ball { center, radius }
    }

    /// The cube `(-h, h)^3`.
    pub fn cube(half_width: f64) -> Self {
        Self::boxed(Vec3::zeros(), Vec3::repeat(half_width))
    }

    pub fn boxed(center: Vec3, half_widths: Vec3) -> Self {
        assert!(
            half_widths.iter().all(|h| *h > 0.0),
            "box half-widths must be positive"
        );
        Domain::Box {
            center,
            half_widths,
        }
    }

    pub fn center(&self) -> Vec3 {
        match *self {
            Domain::Ball { center, .. } | Domain::Box { center, .. } => center,
        }
    }

    /// Strict interior test; boundary points are outside.
    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        match self {
            Domain::Ball { center, radius } => (x - center).norm_squared() < radius * radius,
            Domain::Box {
                center,
                half_widths,
            } => (0..3).all(|i| (x[i] - center[i]).abs() < half_widths[i]),
        }
    }

    pub fn exact_volume(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Domain::Box { half_widths, .. } => 8.0 * half_widths.x * half_widths.y * half_widths.z,
        }
    }

    /// Radius of the smallest ball about [`Domain::center`] containing the closure.
    pub fn circumscribed_radius(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => *radius,
            Domain::Box { half_widths, .. } => half_widths.norm(),
        }
    }

    /// Euclidean distance from `x` to the closed domain (0 inside).
    pub fn distance_to(&self, x: &Vec3) -> f64 {
        match self {
            Domain::Ball { center, radius } => ((x - center).norm() - radius).max(0.0),
            Domain::Box {
                center,
                half_widths,
            } => {
                let d = Vec3::from_fn(|i, _| ((x[i] - center[i]).abs() - half_widths[i]).max(0.0));
                d.norm()
            }
        }
    }

    /// Axis-aligned bounding box as `(lower, upper)` corners.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match *self {
            Domain::Ball { center, radius } => {
                (center - Vec3::repeat(radius), center + Vec3::repeat(radius))
            }
            Domain::Box {
                center,
                half_widths,
            } => (center - half_widths, center + half_widths),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec3 {
        match *self {
            Domain::Ball { center, radius } => loop {
                let p = Vec3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                if p.norm_squared() < 1.0 {
                    break center + p * radius;
                }
            },
            Domain::Box {
                center,
                half_widths,
            } => loop {
                let p = Vec3::from_fn(|i, _| {
                    center[i] + half_widths[i] * (rng.random::<f64>() * 2.0 - 1.0)
                });
                // the open box excludes the lower face hit by random() == 0
                if self.contains(&p) {
                    break p;
                }
            },
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Ball { center, radius } => write!(
                f,
                "ball(center=({}, {}, {}), radius={})",
                center.x, center.y, center.z, radius
            ),
            Domain::Box {
                center,
                half_widths,
            } => write!(
                f,
                "box(center=({}, {}, {}), half=({}, {}, {}))",
                center.x, center.y, center.z, half_widths.x, half_widths.y, half_widths.z
            ),
        }
    }
}

/// The domain together with an open ball `K` that contains its closure with
/// a margin large enough for every mollification radius in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enclosure {
    pub domain: Domain,
    pub ball_center: Vec3,
    pub ball_radius: f64,
}

impl Enclosure {
    /// `K` is the ball of radius `circumscribed radius + 2 eps_max` about the
    /// domain center.
    pub fn new(domain: Domain, eps_max: f64) -> Self {
        assert!(eps_max >= 0.0);
        // a strictly positive margin is required even when nothing is mollified
        let pad = (2.0 * eps_max).max(1e-3 * domain.circumscribed_radius());
        Enclosure {
            domain,
            ball_center: domain.center(),
            ball_radius: domain.circumscribed_radius() + pad,
        }
    }

    /// Distance between the closed domain and the sphere bounding `K`
    /// along the worst direction.
    pub fn margin(&self) -> f64 {
        self.ball_radius
            - (self.domain.center() - self.ball_center).norm()
            - self.domain.circumscribed_radius()
    }

    /// Mollifying with radius `eps` keeps the support inside `K` iff
    /// `eps` does not exceed the margin.
    pub fn check_eps(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mollification radius must be positive, got {eps}"
            )));
        }
        if eps > self.margin() {
            return Err(Error::EpsExceedsMargin {
                eps,
                margin: self.margin(),
            });
        }
        Ok(())
    }

    pub fn ball(&self) -> Domain {
        Domain::ball(self.ball_center, self.ball_radius)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (x - self.ball_center).norm_squared() < self.ball_radius * self.ball_radius
    }

    /// How far `x` lies outside the open ball (0 inside).
    pub fn overshoot(&self, x: &Vec3) -> f64 {
        ((x - self.ball_center).norm() - self.ball_radius).max(0.0)
    }
}

type Indicator = dyn Fn(&Vec3) -> bool + Send + Sync;

/// A subset of the domain described by a deterministic indicator.
#[derive(Clone)]
pub struct MeasurableSet {
    indicator: Arc<Indicator>,
    pub exact_volume: Option<f64>,
    pub label: String,
    /// Tight enclosing shape, when one is known (used for rejection sampling).
    pub bounding: Option<Domain>,
}

impl fmt::Debug for MeasurableSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasurableSet")
            .field("label", &self.label)
            .field("exact_volume", &self.exact_volume)
            .field("bounding", &self.bounding)
            .finish()
    }
}

impl MeasurableSet {
    pub fn new<F>(label: impl Into<String>, exact_volume: Option<f64>, indicator: F) -> Self
    where
        F: Fn(&Vec3) -> bool + Send + Sync + 'static,
    {
        MeasurableSet {
            indicator: Arc::new(indicator),
            exact_volume,
            label: label.into(),
            bounding: None,
        }
    }

    /// The set is the open shape itself.
    pub fn from_domain(label: impl Into<String>, shape: Domain) -> Self {
        let mut set = Self::new(label, Some(shape.exact_volume()), move |x| {
            shape.contains(x)
        });
        set.bounding = Some(shape);
        set
    }

    pub fn ball(label: impl Into<String>, center: Vec3, radius: f64) -> Self {
        Self::from_domain(label, Domain::ball(center, radius))
    }

    pub fn empty(label: impl Into<String>) -> Self {
        Self::new(label, Some(0.0), |_| false)
    }

    /// The whole domain.
    pub fn full(domain: Domain) -> Self {
        Self::from_domain("full", domain)
    }

    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        (self.indicator)(x)
    }

    /// The sampling region to use for this set: its bounding shape if known,
    /// else `fallback`.
    pub fn sampling_region(&self, fallback: &Domain) -> Domain {
        self.bounding.unwrap_or(*fallback)
    }
}

/// Monte Carlo estimate of a volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
}

impl MeasureEstimate {
    /// Hit-or-miss estimate `V hits / n` with binomial standard error.
    pub fn from_hits(hits: usize, n: usize, reference_volume: f64, seed: u64) -> Self {
        assert!(n > 0);
        let p = hits as f64 / n as f64;
        MeasureEstimate {
            value: p * reference_volume,
            std_error: (p * (1.0 - p) / n as f64).sqrt() * reference_volume,
            samples: n,
            seed,
        }
    }

    /// `V mean(values)` with the standard error of the mean.
    pub fn from_values(values: &[f64], reference_volume: f64, seed: u64) -> Self {
        assert!(!values.is_empty());
        let (mean, se) = mean_and_stderr(values);
        MeasureEstimate {
            value: mean * reference_volume,
            std_error: se * reference_volume,
            samples: values.len(),
            seed,
        }
    }

    /// `|value - target| <= k sigma`.
    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// `n` i.i.d. uniform points in `region`, a pure function of `(region, n, seed)`.
pub fn sample_uniform(region: &Domain, n: usize, seed: u64) -> Vec<Vec3> {
    let batches = n.div_ceil(SAMPLE_BATCH);
    let chunks: Vec<Vec<Vec3>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = SAMPLE_BATCH.min(n - b * SAMPLE_BATCH);
            (0..count).map(|_| region.draw(&mut rng)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Uniform points in the enclosing ball `K`.
pub fn sample_enclosure(enclosure: &Enclosure, n: usize, seed: u64) -> Vec<Vec3> {
    sample_uniform(&enclosure.ball(), n, seed)
}

/// Hit-or-miss estimate of `meas(set)` from uniform samples on `region`.
/// `region` must contain the set.
pub fn estimate_measure(
    set: &MeasurableSet,
    region: &Domain,
    n: usize,
    seed: u64,
) -> MeasureEstimate {
    let points = sample_uniform(region, n, seed);
    estimate_measure_on(set, region.exact_volume(), &points, seed)
}

/// Same as [`estimate_measure`] on caller-supplied samples (common random numbers).
pub fn estimate_measure_on(
    set: &MeasurableSet,
    region_volume: f64,
    points: &[Vec3],
    seed: u64,
) -> MeasureEstimate {
    let hits = points.par_iter().filter(|x| set.contains(x)).count();
    MeasureEstimate::from_hits(hits, points.len(), region_volume, seed)
}
