//! Reynolds transport identities for co-moving volumes, the classical
//! Liouville/Reynolds pair for smooth flows, the change-of-variables
//! formula, and the limit of measures under mollification.
//!
//! Forward images are measured through preimages under the reverse flow:
//! `meas(X(s, t, A)) = meas({x : X(t, s, x) in A})`. The Jacobian-weighted
//! estimator `int_A |det dX(s, t, x)| dx` is the independent cross-check.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{mollify, VectorField, VelocityField};
use crate::flow::FlowEvaluator;
use crate::geometry::{sample_uniform, Domain, MeasurableSet, MeasureEstimate};
use crate::numerics::{mean_and_stderr, trapezoid};
use crate::transport::{mc_l2, InitialDatum, Regularization};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdentityTag {
    Trans0,
    Trans1,
    Trans2,
    Trans3,
    Usi1,
    Usi2,
    Cov,
}

impl IdentityTag {
    pub const ALL: [IdentityTag; 7] = [
        IdentityTag::Trans0,
        IdentityTag::Trans1,
        IdentityTag::Trans2,
        IdentityTag::Trans3,
        IdentityTag::Usi1,
        IdentityTag::Usi2,
        IdentityTag::Cov,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IdentityTag::Trans0 => "trans0",
            IdentityTag::Trans1 => "trans1",
            IdentityTag::Trans2 => "trans2",
            IdentityTag::Trans3 => "trans3",
            IdentityTag::Usi1 => "usi1",
            IdentityTag::Usi2 => "usi2",
            IdentityTag::Cov => "cov",
        }
    }
}

impl fmt::Display for IdentityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IdentityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IdentityTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown identity tag `{s}`")))
    }
}

/// Residual below which the time-quadrature error counts as resolved.
pub const QUADRATURE_FLOOR: f64 = 1e-12;

/// One side-by-side evaluation of an integral identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReynoldsReport {
    pub identity_tag: IdentityTag,
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs|`.
    pub residual: f64,
    /// Root-sum-square of the standard errors of both sides.
    pub mc_sigma: f64,
    /// Deterministic time-quadrature allowance, `2 |rhs_N - rhs_2N|`.
    pub quad_tol: f64,
    /// `4 mc_sigma + quad_tol`.
    pub threshold: f64,
    pub time_quadrature_nodes: usize,
    pub samples: usize,
    pub seed: u64,
    /// The right-hand side with `N`, `2N` and `4N` time intervals.
    pub rhs_refinements: [f64; 3],
}

impl ReynoldsReport {
    fn assemble(
        identity_tag: IdentityTag,
        (s, t): (f64, f64),
        lhs: (f64, f64),
        rhs: ([f64; 3], f64),
        time_quadrature_nodes: usize,
        sampler: &Sampler,
    ) -> Self {
        let mc_sigma = lhs.1.hypot(rhs.1);
        let quad_tol = 2.0 * (rhs.0[0] - rhs.0[1]).abs();
        ReynoldsReport {
            identity_tag,
            s,
            t,
            lhs: lhs.0,
            rhs: rhs.0[0],
            residual: (lhs.0 - rhs.0[0]).abs(),
            mc_sigma,
            quad_tol,
            threshold: 4.0 * mc_sigma + quad_tol,
            time_quadrature_nodes,
            samples: sampler.n,
            seed: sampler.seed,
            rhs_refinements: rhs.0,
        }
    }

    pub fn passes(&self) -> bool {
        self.residual <= self.threshold
    }

    /// `|rhs_N - rhs_2N| / |rhs_2N - rhs_4N|`, or `None` when the finer
    /// difference is below [`QUADRATURE_FLOOR`] (relative to `max(1, |rhs|)`).
    pub fn doubling_ratio(&self) -> Option<f64> {
        let [a, b, c] = self.rhs_refinements;
        let floor = QUADRATURE_FLOOR * self.rhs.abs().max(1.0);
        let coarse = (a - b).abs();
        let fine = (b - c).abs();
        if fine <= floor && coarse <= floor {
            None
        } else {
            Some(coarse / fine)
        }
    }

    /// Doubling ratio in `[3, 5]`, or the quadrature error already resolved.
    pub fn second_order_quadrature(&self) -> bool {
        self.doubling_ratio()
            .is_none_or(|r| (3.0..=5.0).contains(&r))
    }
}

type ScalarFn = Arc<dyn Fn(f64, &Vec3) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(f64, &Vec3) -> Vec3 + Send + Sync>;

/// A `C^1` density `g(t, x)` with its derivatives.
#[derive(Clone)]
pub struct DensityFunction {
    pub g: ScalarFn,
    pub dg_dt: ScalarFn,
    pub grad_g: GradFn,
}

impl fmt::Debug for DensityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DensityFunction")
    }
}

impl DensityFunction {
    pub fn new<G, T, D>(g: G, dg_dt: T, grad_g: D) -> Self
    where
        G: Fn(f64, &Vec3) -> f64 + Send + Sync + 'static,
        T: Fn(f64, &Vec3) -> f64 + Send + Sync + 'static,
        D: Fn(f64, &Vec3) -> Vec3 + Send + Sync + 'static,
    {
        DensityFunction {
            g: Arc::new(g),
            dg_dt: Arc::new(dg_dt),
            grad_g: Arc::new(grad_g),
        }
    }

    pub fn constant(c: f64) -> Self {
        DensityFunction::new(move |_, _| c, |_, _| 0.0, |_, _| Vec3::zeros())
    }

    /// `g(t, x) = f(x)`.
    pub fn stationary<G, D>(g: G, grad_g: D) -> Self
    where
        G: Fn(&Vec3) -> f64 + Send + Sync + 'static,
        D: Fn(&Vec3) -> Vec3 + Send + Sync + 'static,
    {
        DensityFunction::new(move |_, x| g(x), |_, _| 0.0, move |_, x| grad_g(x))
    }

    /// `d_t g + div(g v) = d_t g + g div v + v . grad g`.
    #[inline]
    fn source(&self, r: f64, x: &Vec3, v: &Vec3, div: f64) -> f64 {
        (self.dg_dt)(r, x) + (self.g)(r, x) * div + v.dot(&(self.grad_g)(r, x))
    }

    /// Largest relative mismatch between the supplied derivatives and
    /// central differences with step `h`, over `probes` random points of
    /// `region` with times in `[-1, 1]`.
    pub fn derivative_mismatch(&self, region: &Domain, probes: usize, h: f64, seed: u64) -> f64 {
        let points = sample_uniform(region, probes, seed);
        let mut worst: f64 = 0.0;
        for (k, x) in points.iter().enumerate() {
            let r = -1.0 + 2.0 * (k as f64 + 0.5) / probes as f64;
            let g = |r: f64, x: &Vec3| (self.g)(r, x);
            let dt = (g(r + h, x) - g(r - h, x)) / (2.0 * h);
            let grad = Vec3::from_fn(|i, _| {
                let mut e = Vec3::zeros();
                e[i] = h;
                (g(r, &(x + e)) - g(r, &(x - e))) / (2.0 * h)
            });
            let scale = 1.0 + (self.dg_dt)(r, x).abs() + (self.grad_g)(r, x).norm();
            worst = worst
                .max(((self.dg_dt)(r, x) - dt).abs() / scale)
                .max(((self.grad_g)(r, x) - grad).norm() / scale);
        }
        worst
    }
}

/// Uniform samples on `region`, which must contain every set counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampler {
    pub region: Domain,
    pub n: usize,
    pub seed: u64,
}

impl Sampler {
    pub fn new(region: Domain, n: usize, seed: u64) -> Self {
        Sampler { region, n, seed }
    }

    fn points(&self) -> Vec<Vec3> {
        sample_uniform(&self.region, self.n, self.seed)
    }

    fn volume(&self) -> f64 {
        self.region.exact_volume()
    }
}

/// `meas({x : X(s, t, x) in A})`.
pub fn measure_preimage<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
) -> Result<MeasureEstimate> {
    Ok(preimage_measures(flow, s, t, std::slice::from_ref(set), sampler)?.remove(0))
}

/// [`measure_preimage`] for several sets sharing one flow map.
pub fn preimage_measures<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    sets: &[MeasurableSet],
    sampler: &Sampler,
) -> Result<Vec<MeasureEstimate>> {
    let points = sampler.points();
    let feet = flow.flow_map(s, t, &points)?;
    Ok(sets
        .iter()
        .map(|set| {
            let values: Vec<f64> = feet
                .iter()
                .map(|y| if set.contains(y) { 1.0 } else { 0.0 })
                .collect();
            MeasureEstimate::from_values(&values, sampler.volume(), sampler.seed)
        })
        .collect())
}

/// `meas(X(s, t, A))`, computed as `meas(X(t, s, .)^{-1}(A))`.
pub fn measure_image<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
) -> Result<MeasureEstimate> {
    measure_preimage(flow, t, s, set, sampler)
}

/// `int_A |det dX(s, t, x)| dx`, the Jacobian being `exp` of the
/// accumulated divergence along each trajectory from `t` to `s`.
pub fn measure_image_jacobian<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
) -> Result<MeasureEstimate> {
    Ok(image_jacobian_measures(flow, s, t, std::slice::from_ref(set), sampler)?.remove(0))
}

/// [`measure_image_jacobian`] for several sets; each sample is integrated
/// at most once.
pub fn image_jacobian_measures<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    sets: &[MeasurableSet],
    sampler: &Sampler,
) -> Result<Vec<MeasureEstimate>> {
    let points = sampler.points();
    let jacobians: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if s == t || !sets.iter().any(|a| a.contains(x)) {
                return Ok(1.0);
            }
            flow.endpoint(t, x, s)
                .map(|(_, jac)| jac.exp())
                .map_err(|e| Error::at_point(i, e))
        })
        .collect::<Result<_>>()?;
    Ok(sets
        .iter()
        .map(|set| {
            let values: Vec<f64> = points
                .iter()
                .zip(&jacobians)
                .map(|(x, j)| if set.contains(x) { *j } else { 0.0 })
                .collect();
            MeasureEstimate::from_values(&values, sampler.volume(), sampler.seed)
        })
        .collect())
}

/// `[meas(A) / c, c meas(A)]` with `c = exp(|t - s| sup|div v|)`.
pub fn compressibility_bounds<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    measure: f64,
) -> (f64, f64) {
    let c = ((t - s).abs() * flow.field.div_sup_bound()).exp();
    (measure / c, measure * c)
}

/// Per-sample both sides of
/// `int_{X(s,t,A)} g(s) = int_A g(t) + int_t^s int_{X(r,t,A)} (d_r g + div(g v)) dr`.
/// The right side carries `N`, `2N` and `4N` trapezoid intervals.
fn image_identity<F: VectorField>(
    flow: &FlowEvaluator<F>,
    g: &DensityFunction,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
    intervals: usize,
) -> Result<((f64, f64), ([f64; 3], f64))> {
    let points = sampler.points();
    let vol = sampler.volume();
    let lhs: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let y = if s == t {
                *x
            } else {
                flow.endpoint(s, x, t).map_err(|e| Error::at_point(i, e))?.0
            };
            Ok(if set.contains(&y) { (g.g)(s, x) } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    let rhs: Vec<[f64; 3]> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if !set.contains(x) {
                return Ok([0.0; 3]);
            }
            let start = (g.g)(t, x);
            let steps = flow.step_count(t, s, 4 * intervals);
            if steps == 0 {
                return Ok([start; 3]);
            }
            let mut integrand = Vec::with_capacity(steps + 1);
            flow.integrate(t, x, s, steps, |node| {
                integrand.push(
                    g.source(node.time, &node.position, &node.velocity, node.divergence)
                        * node.jacobian_log.exp(),
                );
            })
            .map_err(|e| Error::at_point(i, e))?;
            let h = (s - t) / steps as f64;
            let mut out = [0.0; 3];
            for (level, slot) in out.iter_mut().enumerate() {
                let stride = steps / (intervals << level);
                let coarse: Vec<f64> = integrand.iter().step_by(stride).copied().collect();
                *slot = start + trapezoid(&coarse, h * stride as f64);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (ml, sl) = mean_and_stderr(&lhs);
    let mut sides = [0.0; 3];
    let mut sr = 0.0;
    for (level, side) in sides.iter_mut().enumerate() {
        let column: Vec<f64> = rhs.iter().map(|r| r[level]).collect();
        let (mean, se) = mean_and_stderr(&column);
        *side = mean * vol;
        if level == 0 {
            sr = se * vol;
        }
    }
    Ok(((ml * vol, sl * vol), (sides, sr)))
}

fn check_nodes(time_nodes: usize) -> Result<usize> {
    if time_nodes < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 time nodes, got {time_nodes}"
        )));
    }
    Ok(time_nodes - 1)
}

/// Density identities. `Trans2`/`Usi1` integrate `g(s)` over the image
/// `X(s, t, A)`; `Trans3` integrates `g(t)` over the preimage
/// `X(s, t, .)^{-1}(A) = X(t, s, A)`, i.e. the same identity with the
/// times exchanged.
pub fn rtt_density_residual<F: VectorField>(
    flow: &FlowEvaluator<F>,
    g: &DensityFunction,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    time_nodes: usize,
    sampler: &Sampler,
    variant: IdentityTag,
) -> Result<ReynoldsReport> {
    let intervals = check_nodes(time_nodes)?;
    let (a, b) = match variant {
        IdentityTag::Trans2 | IdentityTag::Usi1 => (s, t),
        IdentityTag::Trans3 => (t, s),
        other => {
            return Err(Error::InvalidArgument(format!(
                "{other} is not a density identity"
            )))
        }
    };
    let (lhs, rhs) = image_identity(flow, g, a, b, set, sampler, intervals)?;
    Ok(ReynoldsReport::assemble(
        variant,
        (s, t),
        lhs,
        rhs,
        time_nodes,
        sampler,
    ))
}

/// Measure identities: `Trans1`/`Usi2` for `meas(X(s, t, A))`, `Trans0`
/// for `meas(X(s, t, .)^{-1}(A))`. Shares its code path with
/// [`rtt_density_residual`] at `g = 1`.
pub fn rtt_measure_residual<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    time_nodes: usize,
    sampler: &Sampler,
    variant: IdentityTag,
) -> Result<ReynoldsReport> {
    let density_variant = match variant {
        IdentityTag::Trans1 => IdentityTag::Trans2,
        IdentityTag::Usi2 => IdentityTag::Usi1,
        IdentityTag::Trans0 => IdentityTag::Trans3,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{other} is not a measure identity"
            )))
        }
    };
    let mut report = rtt_density_residual(
        flow,
        &DensityFunction::constant(1.0),
        s,
        t,
        set,
        time_nodes,
        sampler,
        density_variant,
    )?;
    report.identity_tag = variant;
    Ok(report)
}

/// `int_K f(X(s, t, x)) dx = int_K f + int_s^t int_K f(X(s, r, x)) div v(r, x) dx dr`
/// over the enclosing ball `K`, each `X(s, r, .)` integrated directly.
pub fn change_of_variables_check<F: VectorField>(
    flow: &FlowEvaluator<F>,
    f: &(dyn Fn(&Vec3) -> f64 + Sync),
    s: f64,
    t: f64,
    time_nodes: usize,
    n: usize,
    seed: u64,
) -> Result<ReynoldsReport> {
    let intervals = check_nodes(time_nodes)?;
    let sampler = Sampler::new(flow.enclosure.ball(), n, seed);
    let points = sampler.points();
    let vol = sampler.volume();
    let finest = 4 * intervals;
    let h = (t - s) / finest as f64;
    let per_sample: Vec<(f64, [f64; 3])> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut integrand = Vec::with_capacity(finest + 1);
            let mut at_t = f(x);
            for k in 0..=finest {
                let r = if k == finest { t } else { s + h * k as f64 };
                let div = flow.field.divergence(r, x);
                let foot = if r == s {
                    *x
                } else {
                    flow.endpoint(r, x, s).map_err(|e| Error::at_point(i, e))?.0
                };
                integrand.push(f(&foot) * div);
                if k == finest {
                    at_t = f(&foot);
                }
            }
            let start = f(x);
            let mut out = [0.0; 3];
            for (level, slot) in out.iter_mut().enumerate() {
                let stride = 4 >> level;
                let coarse: Vec<f64> = integrand.iter().step_by(stride).copied().collect();
                *slot = start + trapezoid(&coarse, h * stride as f64);
            }
            Ok((at_t, out))
        })
        .collect::<Result<_>>()?;
    let lhs: Vec<f64> = per_sample.iter().map(|p| p.0).collect();
    let (ml, sl) = mean_and_stderr(&lhs);
    let mut sides = [0.0; 3];
    let mut sr = 0.0;
    for (level, side) in sides.iter_mut().enumerate() {
        let column: Vec<f64> = per_sample.iter().map(|p| p.1[level]).collect();
        let (mean, se) = mean_and_stderr(&column);
        *side = mean * vol;
        if level == 0 {
            sr = se * vol;
        }
    }
    Ok(ReynoldsReport::assemble(
        IdentityTag::Cov,
        (s, t),
        (ml * vol, sl * vol),
        (sides, sr),
        time_nodes,
        &sampler,
    ))
}

/// Flows of `v^eps` for a decreasing list of radii, evaluated forward
/// (`X^eps(s, t, x)`) and backward (`X^eps(t, s, x)`) on common samples,
/// with the log-Jacobians of both maps.
#[derive(Debug, Clone)]
pub struct MollificationLadder {
    pub eps_list: Vec<f64>,
    pub sampler: Sampler,
    pub points: Vec<Vec3>,
    pub forward: Vec<Vec<Vec3>>,
    pub backward: Vec<Vec<Vec3>>,
    pub forward_jacobian_log: Vec<Vec<f64>>,
    pub backward_jacobian_log: Vec<Vec<f64>>,
}

type MapWithJacobian = (Vec<Vec3>, Vec<f64>);

fn map_with_jacobian<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    points: &[Vec3],
) -> Result<MapWithJacobian> {
    let out: Vec<(Vec3, f64)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if s == t {
                Ok((*x, 0.0))
            } else {
                flow.endpoint(t, x, s).map_err(|e| Error::at_point(i, e))
            }
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

impl MollificationLadder {
    pub fn build(
        base: &VelocityField,
        eps_list: &[f64],
        reg: &Regularization,
        s: f64,
        t: f64,
        sampler: &Sampler,
    ) -> Result<Self> {
        if eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "eps_list must be strictly decreasing".into(),
            ));
        }
        let points = sampler.points();
        let mut ladder = MollificationLadder {
            eps_list: eps_list.to_vec(),
            sampler: *sampler,
            points: Vec::new(),
            forward: Vec::new(),
            backward: Vec::new(),
            forward_jacobian_log: Vec::new(),
            backward_jacobian_log: Vec::new(),
        };
        for &eps in eps_list {
            let smooth = mollify(base, eps, reg.quadrature_order, &reg.enclosure)?;
            let flow = FlowEvaluator::new(smooth, reg.step_size, reg.enclosure)?;
            let (fwd, fj) = map_with_jacobian(&flow, s, t, &points)?;
            let (bwd, bj) = map_with_jacobian(&flow, t, s, &points)?;
            ladder.forward.push(fwd);
            ladder.forward_jacobian_log.push(fj);
            ladder.backward.push(bwd);
            ladder.backward_jacobian_log.push(bj);
        }
        ladder.points = points;
        Ok(ladder)
    }

    fn consecutive<T>(items: &[T], distance: impl Fn(&T, &T) -> f64) -> Vec<f64> {
        items.windows(2).map(|w| distance(&w[0], &w[1])).collect()
    }

    /// `||X^{eps_i}(s, t) - X^{eps_{i+1}}(s, t)||_{L^2}` over the sampling region.
    pub fn flow_distances(&self) -> Vec<f64> {
        let vol = self.sampler.volume();
        Self::consecutive(&self.forward, |a, b| {
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
            mc_l2(&d, vol)
        })
    }

    /// `||rho^{eps_i} - rho^{eps_{i+1}}||_{L^2}` at time `t` for the unmollified datum.
    pub fn rho_distances(&self, rho0: &InitialDatum) -> Vec<f64> {
        let vol = self.sampler.volume();
        Self::consecutive(&self.forward, |a, b| {
            let d: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(p, q)| rho0.evaluate(p) - rho0.evaluate(q))
                .collect();
            mc_l2(&d, vol)
        })
    }

    fn hit_measures(&self, maps: &[Vec<Vec3>], set: &MeasurableSet) -> Vec<MeasureEstimate> {
        maps.iter()
            .map(|m| {
                let hits: Vec<f64> = m
                    .iter()
                    .map(|y| if set.contains(y) { 1.0 } else { 0.0 })
                    .collect();
                MeasureEstimate::from_values(&hits, self.sampler.volume(), self.sampler.seed)
            })
            .collect()
    }

    fn jacobian_measures(&self, logs: &[Vec<f64>], set: &MeasurableSet) -> Vec<MeasureEstimate> {
        logs.iter()
            .map(|l| {
                let w: Vec<f64> = self
                    .points
                    .iter()
                    .zip(l)
                    .map(|(x, j)| if set.contains(x) { j.exp() } else { 0.0 })
                    .collect();
                MeasureEstimate::from_values(&w, self.sampler.volume(), self.sampler.seed)
            })
            .collect()
    }

    /// `meas(X^eps(s, t, .)^{-1}(A))` per radius, by hit counting.
    pub fn preimage_measures(&self, set: &MeasurableSet) -> Vec<MeasureEstimate> {
        self.hit_measures(&self.forward, set)
    }

    /// `meas(X^eps(s, t, A))` per radius, by hit counting under the reverse flow.
    pub fn image_measures(&self, set: &MeasurableSet) -> Vec<MeasureEstimate> {
        self.hit_measures(&self.backward, set)
    }

    /// `meas(X^eps(s, t, .)^{-1}(A)) = int_A |det dX^eps(t, s, x)| dx` per radius.
    pub fn preimage_jacobian_measures(&self, set: &MeasurableSet) -> Vec<MeasureEstimate> {
        self.jacobian_measures(&self.backward_jacobian_log, set)
    }

    /// `meas(X^eps(s, t, A)) = int_A |det dX^eps(s, t, x)| dx` per radius.
    pub fn image_jacobian_measures(&self, set: &MeasurableSet) -> Vec<MeasureEstimate> {
        self.jacobian_measures(&self.forward_jacobian_log, set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRow {
    pub eps: f64,
    pub preimage: MeasureEstimate,
    pub image: MeasureEstimate,
    pub preimage_jacobian: MeasureEstimate,
    pub image_jacobian: MeasureEstimate,
}

/// Measures under a sequence of mollified flows with the successive
/// differences of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitStudy {
    pub rows: Vec<LimitRow>,
    pub preimage_differences: Vec<f64>,
    pub image_differences: Vec<f64>,
    pub preimage_jacobian_differences: Vec<f64>,
    pub image_jacobian_differences: Vec<f64>,
}

pub fn rtt_limit_study(
    base: &VelocityField,
    eps_list: &[f64],
    reg: &Regularization,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
) -> Result<LimitStudy> {
    let ladder = MollificationLadder::build(base, eps_list, reg, s, t, sampler)?;
    Ok(limit_study_from(&ladder, set))
}

pub fn limit_study_from(ladder: &MollificationLadder, set: &MeasurableSet) -> LimitStudy {
    let pre = ladder.preimage_measures(set);
    let img = ladder.image_measures(set);
    let pre_j = ladder.preimage_jacobian_measures(set);
    let img_j = ladder.image_jacobian_measures(set);
    let diffs = |m: &[MeasureEstimate]| {
        MollificationLadder::consecutive(m, |a, b| (a.value - b.value).abs())
    };
    LimitStudy {
        preimage_differences: diffs(&pre),
        image_differences: diffs(&img),
        preimage_jacobian_differences: diffs(&pre_j),
        image_jacobian_differences: diffs(&img_j),
        rows: (0..ladder.eps_list.len())
            .map(|i| LimitRow {
                eps: ladder.eps_list[i],
                preimage: pre[i],
                image: img[i],
                preimage_jacobian: pre_j[i],
                image_jacobian: img_j[i],
            })
            .collect(),
    }
}

/// Sample-level containment: for `x` in `A`, `X(t, s, X(s, t, x))` must
/// lie in `A` or within `delta` of `x`. Returns the number of violations.
pub fn containment_violations<F: VectorField>(
    flow: &FlowEvaluator<F>,
    s: f64,
    t: f64,
    set: &MeasurableSet,
    sampler: &Sampler,
    delta: f64,
) -> Result<usize> {
    let inside: Vec<Vec3> = sampler
        .points()
        .into_iter()
        .filter(|x| set.contains(x))
        .collect();
    let there = flow.flow_map(s, t, &inside)?;
    let back = flow.flow_map(t, s, &there)?;
    Ok(inside
        .iter()
        .zip(&back)
        .filter(|(x, z)| !set.contains(z) && (*z - *x).norm() > delta)
        .count())
}
