//! Flow maps `X(s, t, x)`: the position at time `s` of the trajectory that
//! passes through `x` at time `t`, computed with fixed-step classical RK4.
//!
//! The step grid between `t` and `s` depends only on `|s - t|`, the step
//! size and an alignment factor, so forward and backward passes over the
//! same interval visit the same nodes. Alongside the position each
//! trajectory accumulates `log det DX` as the trapezoid integral of the
//! divergence at the RK4 nodes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::geometry::{sample_uniform, Domain, Enclosure, MeasurableSet, MeasureEstimate};
use crate::numerics::{mean_and_stderr, pairwise_sum, trapezoid};
use crate::Vec3;

/// Node data handed to trajectory visitors.
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub index: usize,
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub divergence: f64,
    pub jacobian_log: f64,
}

/// A stored trajectory, in integration order (from the start time `t`
/// towards the target time `s`; times decrease when `s < t`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub positions: Vec<Vec3>,
    /// Running `int_t^r div v(r', X(r')) dr'`.
    pub jacobian_log: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> Vec3 {
        *self
            .positions
            .last()
            .expect("trajectory has at least one node")
    }

    pub fn final_jacobian_log(&self) -> f64 {
        *self
            .jacobian_log
            .last()
            .expect("trajectory has at least one node")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DefectStats {
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl DefectStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return DefectStats::default();
        }
        DefectStats {
            max: values.iter().copied().fold(0.0, f64::max),
            mean: pairwise_sum(values) / values.len() as f64,
            count: values.len(),
        }
    }
}

/// Trapezoid-vs-endpoint consistency of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralResidual {
    pub residual: f64,
    /// `|s - t| / 12 * max |second difference of v along the path|`, the
    /// leading trapezoid error term `C dt^2`.
    pub expected_bound: f64,
    pub steps: usize,
}

/// Fixed-step RK4 integrator over a velocity field.
#[derive(Debug, Clone)]
pub struct FlowEvaluator<F> {
    pub field: F,
    pub step_size: f64,
    pub enclosure: Enclosure,
}

impl<F: VectorField> FlowEvaluator<F> {
    pub fn new(field: F, step_size: f64, enclosure: Enclosure) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        Ok(FlowEvaluator {
            field,
            step_size,
            enclosure,
        })
    }

    pub fn domain(&self) -> Domain {
        self.enclosure.domain
    }

    /// Number of RK4 steps between `t` and `s`: the smallest multiple of
    /// `align` whose step width does not exceed the step size.
    pub fn step_count(&self, t: f64, s: f64, align: usize) -> usize {
        let align = align.max(1);
        let span = (s - t).abs();
        if span == 0.0 {
            return 0;
        }
        let per_block = (span / (self.step_size * align as f64)).ceil().max(1.0) as usize;
        per_block * align
    }

    /// Drift allowance outside `K` before a trajectory is declared escaped.
    fn escape_allowance(&self, h: f64) -> f64 {
        10.0 * h.abs() * self.field.speed_bound()
    }

    /// Integrates from `(t, x0)` to time `s` over `steps` equal steps,
    /// calling `visit` at every node including both ends.
    pub fn integrate<V: FnMut(&Node)>(
        &self,
        t: f64,
        x0: &Vec3,
        s: f64,
        steps: usize,
        mut visit: V,
    ) -> Result<Vec3> {
        let overshoot = self.enclosure.overshoot(x0);
        if overshoot > 0.0 || !self.enclosure.contains(x0) {
            return Err(Error::escape(t, x0, overshoot, 0.0));
        }
        let (v0, d0) = self.field.velocity_divergence(t, x0);
        let mut node = Node {
            index: 0,
            time: t,
            position: *x0,
            velocity: v0,
            divergence: d0,
            jacobian_log: 0.0,
        };
        visit(&node);
        if steps == 0 {
            return Ok(*x0);
        }
        let h = (s - t) / steps as f64;
        let allowance = self.escape_allowance(h);
        for k in 0..steps {
            let r = node.time;
            let x = node.position;
            let k1 = node.velocity;
            let k2 = self.field.velocity(r + 0.5 * h, &(x + k1 * (0.5 * h)));
            let k3 = self.field.velocity(r + 0.5 * h, &(x + k2 * (0.5 * h)));
            let k4 = self.field.velocity(r + h, &(x + k3 * h));
            let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            let r_next = if k + 1 == steps {
                s
            } else {
                t + (s - t) * ((k + 1) as f64 / steps as f64)
            };
            let overshoot = self.enclosure.overshoot(&next);
            if overshoot > allowance {
                return Err(Error::escape(r_next, &next, overshoot, allowance));
            }
            let (v, d) = self.field.velocity_divergence(r_next, &next);
            node = Node {
                index: k + 1,
                time: r_next,
                position: next,
                velocity: v,
                divergence: d,
                jacobian_log: node.jacobian_log + 0.5 * h * (node.divergence + d),
            };
            visit(&node);
        }
        Ok(node.position)
    }

    /// Full trajectory record from `(t, x0)` to time `s`.
    pub fn advect(&self, t: f64, x0: &Vec3, s: f64) -> Result<TrajectoryRecord> {
        let steps = self.step_count(t, s, 1);
        let mut rec = TrajectoryRecord {
            times: Vec::with_capacity(steps + 1),
            positions: Vec::with_capacity(steps + 1),
            jacobian_log: Vec::with_capacity(steps + 1),
        };
        self.integrate(t, x0, s, steps, |n| {
            rec.times.push(n.time);
            rec.positions.push(n.position);
            rec.jacobian_log.push(n.jacobian_log);
        })?;
        Ok(rec)
    }

    /// `(X(s, t, x0), log det D_x X(s, t, x0))` without storing the path.
    pub fn endpoint(&self, t: f64, x0: &Vec3, s: f64) -> Result<(Vec3, f64)> {
        let mut jac = 0.0;
        let end = self.integrate(t, x0, s, self.step_count(t, s, 1), |n| jac = n.jacobian_log)?;
        Ok((end, jac))
    }

    /// `X(s, t, x)` for every point, in order. Exactly the identity when `s == t`.
    pub fn flow_map(&self, s: f64, t: f64, points: &[Vec3]) -> Result<Vec<Vec3>> {
        if s == t {
            return Ok(points.to_vec());
        }
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                self.endpoint(t, x, s)
                    .map(|(y, _)| y)
                    .map_err(|e| Error::at_point(i, e))
            })
            .collect()
    }

    /// Statistics of `|X(t, s, X(s, t, x)) - x|`.
    pub fn group_defect(&self, s: f64, t: f64, points: &[Vec3]) -> Result<DefectStats> {
        let there = self.flow_map(s, t, points)?;
        let back = self.flow_map(t, s, &there)?;
        let d: Vec<f64> = back
            .iter()
            .zip(points)
            .map(|(b, x)| (b - x).norm())
            .collect();
        Ok(DefectStats::from_values(&d))
    }

    /// Statistics of `|X(s, t, x) - X(s, tau, X(tau, t, x))|`.
    pub fn semigroup_defect(
        &self,
        s: f64,
        tau: f64,
        t: f64,
        points: &[Vec3],
    ) -> Result<DefectStats> {
        let direct = self.flow_map(s, t, points)?;
        let mid = self.flow_map(tau, t, points)?;
        let composed = self.flow_map(s, tau, &mid)?;
        let d: Vec<f64> = direct
            .iter()
            .zip(&composed)
            .map(|(a, b)| (a - b).norm())
            .collect();
        Ok(DefectStats::from_values(&d))
    }

    /// `|X(s, t, x0) - x0 - Q|` with `Q` the trapezoid rule of `v(r, X(r, t, x0))`
    /// over the trajectory nodes. At least `quad_nodes` nodes are used.
    pub fn integral_equation_residual(
        &self,
        t: f64,
        x0: &Vec3,
        s: f64,
        quad_nodes: usize,
    ) -> Result<IntegralResidual> {
        let steps = if s == t {
            0
        } else {
            self.step_count(t, s, 1).max(quad_nodes.saturating_sub(1))
        };
        let mut vel: [Vec<f64>; 3] = Default::default();
        let end = self.integrate(t, x0, s, steps, |n| {
            for i in 0..3 {
                vel[i].push(n.velocity[i]);
            }
        })?;
        if steps == 0 {
            return Ok(IntegralResidual {
                residual: 0.0,
                expected_bound: 0.0,
                steps,
            });
        }
        let h = (s - t) / steps as f64;
        let q = Vec3::from_fn(|i, _| trapezoid(&vel[i], h));
        let mut curvature: f64 = 0.0;
        for k in 1..steps {
            let second = Vec3::from_fn(|i, _| vel[i][k + 1] - 2.0 * vel[i][k] + vel[i][k - 1]);
            curvature = curvature.max(second.norm());
        }
        Ok(IntegralResidual {
            residual: (end - x0 - q).norm(),
            expected_bound: (s - t).abs() / 12.0 * curvature + 1e-14 * (1.0 + x0.norm()),
            steps,
        })
    }

    /// Estimate of `meas(X(t, s, A) \ Omega)`: samples of `A` at time `s`
    /// pushed to time `t` and Jacobian-weighted when they land outside the
    /// domain. `region` must contain `A`.
    pub fn leak_measure(
        &self,
        s: f64,
        t: f64,
        set: &MeasurableSet,
        region: &Domain,
        n: usize,
        seed: u64,
    ) -> Result<MeasureEstimate> {
        let domain = self.domain();
        let points = sample_uniform(region, n, seed);
        let values: Vec<f64> = points
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                if s == t || !set.contains(x) {
                    return Ok(0.0);
                }
                let (y, jac) = self.endpoint(s, x, t).map_err(|e| Error::at_point(i, e))?;
                Ok(if domain.contains(&y) { 0.0 } else { jac.exp() })
            })
            .collect::<Result<_>>()?;
        let vol = region.exact_volume();
        let (mean, se) = mean_and_stderr(&values);
        Ok(MeasureEstimate {
            value: mean * vol,
            std_error: se * vol,
            samples: n,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{mollify, VelocityField};
    use crate::geometry::Domain;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rotate(x: &Vec3, angle: f64) -> Vec3 {
        let (sn, cs) = angle.sin_cos();
        Vec3::new(cs * x.x - sn * x.y, sn * x.x + cs * x.y, x.z)
    }

    fn evaluator(field: VelocityField, step: f64) -> FlowEvaluator<VelocityField> {
        let enc = Enclosure::new(field.domain.unwrap(), 0.1);
        FlowEvaluator::new(field, step, enc).unwrap()
    }

    #[test]
    fn zero_field_is_stationary() {
        let f = evaluator(VelocityField::zero(Domain::unit_ball()), 1e-2);
        let x0 = Vec3::new(0.2, -0.3, 0.1);
        let rec = f.advect(0.3, &x0, -1.2).unwrap();
        assert!(rec.positions.iter().all(|p| *p == x0));
        assert!(rec.jacobian_log.iter().all(|j| *j == 0.0));
        assert_eq!(rec.times[0], 0.3);
        assert_eq!(*rec.times.last().unwrap(), -1.2);
    }

    #[test]
    fn rotation_quarter_turn() {
        let f = evaluator(VelocityField::rotation(), 1e-3);
        let x0 = Vec3::new(0.5, 0.0, 0.0);
        let rec = f.advect(0.0, &x0, PI / 2.0).unwrap();
        assert!((rec.endpoint() - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-6);
        assert!(rec.final_jacobian_log().abs() < 1e-8);
        assert_eq!(rec.positions[0], x0);
        assert_eq!(rec.jacobian_log[0], 0.0);
    }

    #[test]
    fn contraction_decays_exponentially() {
        let f = evaluator(VelocityField::contraction(), 1e-3);
        let x0 = Vec3::repeat(0.1);
        let (end, jac) = f.endpoint(0.0, &x0, 1.0).unwrap();
        assert!((end - x0 * (-1f64).exp()).norm() < 1e-6);
        assert_relative_eq!(jac, -3.0, epsilon = 1e-6);
    }

    #[test]
    fn flow_map_identity_cases() {
        let pts = sample_uniform(&Domain::ball(Vec3::zeros(), 0.6), 50, 3);
        let rot = evaluator(VelocityField::rotation(), 1e-2);
        assert_eq!(rot.flow_map(0.7, 0.7, &pts).unwrap(), pts);
        let zero = evaluator(VelocityField::zero(Domain::unit_ball()), 1e-2);
        assert_eq!(zero.flow_map(1.0, -2.0, &pts).unwrap(), pts);
        let full = rot.flow_map(2.0 * PI, 0.0, &pts).unwrap();
        for (a, b) in full.iter().zip(&pts) {
            assert!((a - b).norm() < 1e-5);
        }
    }

    #[test]
    fn rotation_matches_closed_form_map() {
        let pts = sample_uniform(&Domain::ball(Vec3::zeros(), 0.65), 100, 9);
        let rot = evaluator(VelocityField::rotation(), 1e-3);
        let (s, t) = (0.4, 1.3);
        let mapped = rot.flow_map(s, t, &pts).unwrap();
        for (m, x) in mapped.iter().zip(&pts) {
            assert!((m - rotate(x, s - t)).norm() < 1e-9);
        }
    }

    #[test]
    fn group_and_semigroup_defects() {
        let pts = sample_uniform(&Domain::ball(Vec3::zeros(), 0.65), 1000, 1);
        let zero = evaluator(VelocityField::zero(Domain::unit_ball()), 1e-2);
        assert_eq!(zero.group_defect(1.0, 0.0, &pts).unwrap().max, 0.0);
        let rot = evaluator(VelocityField::rotation(), 1e-3);
        assert_eq!(rot.group_defect(0.5, 0.5, &pts).unwrap().max, 0.0);
        let g = rot.group_defect(1.0, 0.0, &pts).unwrap();
        assert!(g.max <= 1e-6, "{g:?}");
        assert_eq!(g.count, 1000);

        assert_eq!(
            rot.semigroup_defect(1.0, 0.0, 0.0, &pts[..100])
                .unwrap()
                .max,
            0.0
        );
        let via_s = rot.semigroup_defect(1.0, 1.0, 0.0, &pts[..100]).unwrap();
        let grp = rot.group_defect(1.0, 0.0, &pts[..100]);
        // tau = s: X(s, s, X(s, t, x)) is X(s, t, x) itself
        assert_eq!(via_s.max, 0.0);
        assert!(grp.is_ok());
        let sg = rot.semigroup_defect(1.0, 0.5, 0.0, &pts).unwrap();
        assert!(sg.max <= 1e-6, "{sg:?}");
    }

    #[test]
    fn integral_residual_examples() {
        let zero = evaluator(VelocityField::zero(Domain::unit_ball()), 1e-2);
        assert_eq!(
            zero.integral_equation_residual(0.0, &Vec3::repeat(0.1), 1.0, 10)
                .unwrap()
                .residual,
            0.0
        );
        let con = evaluator(VelocityField::contraction(), 1e-3);
        let r = con
            .integral_equation_residual(0.0, &Vec3::repeat(0.1), 1.0, 10)
            .unwrap();
        assert!(
            r.residual <= 1e-5 && r.residual <= 2.0 * r.expected_bound,
            "{r:?}"
        );
        let shear = evaluator(VelocityField::rough_shear(), 1e-3);
        let on_plane = Vec3::new(0.2, 0.0, -0.4);
        let r = shear
            .integral_equation_residual(0.0, &on_plane, 1.0, 10)
            .unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(shear.endpoint(0.0, &on_plane, 1.0).unwrap().0, on_plane);
    }

    #[test]
    fn fourth_order_convergence() {
        let x0 = Vec3::new(0.5, 0.1, 0.2);
        let exact = rotate(&x0, 2.0);
        let err = |h: f64| {
            (evaluator(VelocityField::rotation(), h)
                .endpoint(0.0, &x0, 2.0)
                .unwrap()
                .0
                - exact)
                .norm()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn escape_is_reported() {
        let f = VelocityField::uniform(Vec3::new(1.0, 0.0, 0.0), None);
        let enc = Enclosure::new(Domain::unit_ball(), 0.05);
        let flow = FlowEvaluator::new(f, 1e-2, enc).unwrap();
        let err = flow.endpoint(0.0, &Vec3::zeros(), 5.0).unwrap_err();
        assert!(matches!(err, Error::Escape { .. }));
        let err = flow
            .flow_map(5.0, 0.0, &[Vec3::zeros(), Vec3::zeros()])
            .unwrap_err();
        assert!(matches!(err, Error::AtPoint { index: 0, .. }));
        assert!(flow.endpoint(0.0, &Vec3::new(3.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn time_reversal_on_shared_grid() {
        let zero = evaluator(VelocityField::zero(Domain::unit_ball()), 1e-2);
        let x0 = Vec3::new(0.3, 0.3, 0.3);
        let (y, _) = zero.endpoint(0.0, &x0, 1.0).unwrap();
        assert_eq!(zero.endpoint(1.0, &y, 0.0).unwrap().0, x0);
        let con = evaluator(VelocityField::contraction(), 1e-2);
        let (y, j1) = con.endpoint(0.0, &x0, 1.0).unwrap();
        let (z, j2) = con.endpoint(1.0, &y, 0.0).unwrap();
        assert!((z - x0).norm() < 1e-8);
        assert!((j1 + j2).abs() < 1e-6);
    }

    #[test]
    fn leak_vanishes_for_exact_and_mollified_rotation() {
        let set = MeasurableSet::ball("a", Vec3::new(0.5, 0.0, 0.0), 0.3);
        let region = Domain::unit_ball();
        let exact = evaluator(VelocityField::rotation(), 1e-2);
        assert_eq!(
            exact
                .leak_measure(0.0, 1.0, &set, &region, 2000, 1)
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(
            exact
                .leak_measure(0.5, 0.5, &set, &region, 2000, 1)
                .unwrap()
                .value,
            0.0
        );
        let enc = Enclosure::new(region, 0.2);
        let mut previous = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let m = mollify(&VelocityField::rotation(), eps, 8, &enc).unwrap();
            let flow = FlowEvaluator::new(m, 5e-2, enc).unwrap();
            let leak = flow
                .leak_measure(0.0, 1.0, &set, &region, 200, 1)
                .unwrap()
                .value;
            assert!(leak <= previous);
            previous = leak;
        }
    }
}
