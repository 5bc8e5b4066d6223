//! The linear transport equation `d_t rho + v . grad rho = 0` with initial
//! datum `rho(s, s, .) = rho_0`: Lagrangian solutions along characteristics,
//! a first-order Eulerian upwind scheme, the weak-form residual, the
//! L2-norm evolution law, the mollification commutator and the
//! convergence of regularized solutions.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    convolution_stencil, mollify, Mollifier, StencilNode, VectorField, VelocityField,
};
use crate::flow::FlowEvaluator;
use crate::geometry::{sample_uniform, Domain, Enclosure};
use crate::numerics::{gauss_legendre_on, mean_and_stderr, pairwise_sum, trapezoid};
use crate::Vec3;

/// Smooth bump `exp(1 - 1/(1 - u^2))` on `|u| < 1`, equal to 1 at the center.
#[inline]
fn bump(u2: f64) -> f64 {
    if u2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u2)).exp()
    }
}

/// Derivative of [`bump`] with respect to `u^2`.
#[inline]
fn bump_d_u2(u2: f64) -> f64 {
    if u2 >= 1.0 {
        0.0
    } else {
        let d = 1.0 - u2;
        -bump(u2) / (d * d)
    }
}

#[derive(Debug, Clone)]
pub enum DatumKind {
    /// `rho_0(x) = x_i`.
    Coordinate(usize),
    SmoothBump {
        center: Vec3,
        radius: f64,
        amplitude: f64,
    },
    /// `eta_eps * 1_B` for a ball `B`, by the discrete convolution rule.
    IndicatorMollified {
        center: Vec3,
        radius: f64,
        stencil: Arc<Vec<StencilNode>>,
    },
}

/// Initial datum with a known sup bound.
#[derive(Debug, Clone)]
pub struct InitialDatum {
    pub kind: DatumKind,
    pub sup_bound: f64,
}

impl InitialDatum {
    /// The coordinate function `x_i`, bounded on the enclosing ball.
    pub fn coordinate(axis: usize, enclosure: &Enclosure) -> Self {
        assert!(axis < 3);
        InitialDatum {
            kind: DatumKind::Coordinate(axis),
            sup_bound: enclosure.ball_center[axis].abs() + enclosure.ball_radius,
        }
    }

    pub fn smooth_bump(center: Vec3, radius: f64, amplitude: f64) -> Self {
        InitialDatum {
            kind: DatumKind::SmoothBump {
                center,
                radius,
                amplitude,
            },
            sup_bound: amplitude.abs(),
        }
    }

    pub fn indicator_mollified(center: Vec3, radius: f64, eps: f64, order: usize) -> Result<Self> {
        let m = Mollifier::new(eps)?;
        Ok(InitialDatum {
            kind: DatumKind::IndicatorMollified {
                center,
                radius,
                stencil: Arc::new(convolution_stencil(&m, order)),
            },
            sup_bound: 1.0,
        })
    }

    #[inline]
    pub fn evaluate(&self, x: &Vec3) -> f64 {
        match &self.kind {
            DatumKind::Coordinate(i) => x[*i],
            DatumKind::SmoothBump {
                center,
                radius,
                amplitude,
            } => amplitude * bump((x - center).norm_squared() / (radius * radius)),
            DatumKind::IndicatorMollified {
                center,
                radius,
                stencil,
            } => {
                let r2 = radius * radius;
                let d = x - center;
                stencil
                    .iter()
                    .filter(|n| (d - n.offset).norm_squared() < r2)
                    .map(|n| n.weight)
                    .sum::<f64>()
                    .min(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Lagrangian,
    Eulerian,
}

type SolutionFn<'a> = dyn Fn(f64, &Vec3) -> Result<f64> + Send + Sync + 'a;

/// A solution `rho(s, t, x)` of the transport equation with initial time `s`.
pub struct TransportSolution<'a> {
    pub s: f64,
    pub field_tag: String,
    pub provenance: Provenance,
    eval: Box<SolutionFn<'a>>,
}

impl<'a> TransportSolution<'a> {
    /// `rho(s, t, x) = rho_0(X(s, t, x))`.
    pub fn lagrangian<F: VectorField>(
        flow: &'a FlowEvaluator<F>,
        rho0: &'a InitialDatum,
        s: f64,
    ) -> Self {
        TransportSolution {
            s,
            field_tag: flow.field.name(),
            provenance: Provenance::Lagrangian,
            eval: Box::new(move |t, x| {
                if t == s {
                    return Ok(rho0.evaluate(x));
                }
                flow.endpoint(t, x, s).map(|(y, _)| rho0.evaluate(&y))
            }),
        }
    }

    /// Piecewise-constant interpolation of Eulerian snapshots; each query
    /// uses the snapshot closest in time.
    pub fn eulerian(
        s: f64,
        field_tag: impl Into<String>,
        snapshots: Vec<(f64, GridFunction)>,
    ) -> Self {
        assert!(!snapshots.is_empty());
        TransportSolution {
            s,
            field_tag: field_tag.into(),
            provenance: Provenance::Eulerian,
            eval: Box::new(move |t, x| {
                let (_, g) = snapshots
                    .iter()
                    .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
                    .expect("non-empty");
                Ok(g.sample(x))
            }),
        }
    }

    pub fn evaluate(&self, t: f64, x: &Vec3) -> Result<f64> {
        (self.eval)(t, x)
    }
}

/// Uniform cell-centered grid on a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub bounds: Domain,
    pub cells_per_axis: usize,
}

impl GridSpec {
    pub fn new(bounds: Domain, cells_per_axis: usize) -> Result<Self> {
        if !matches!(bounds, Domain::Box { .. }) {
            return Err(Error::InvalidArgument("grid bounds must be a box".into()));
        }
        if cells_per_axis == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one cell per axis".into(),
            ));
        }
        Ok(GridSpec {
            bounds,
            cells_per_axis,
        })
    }

    /// Grid on the bounding box of `domain`.
    pub fn covering(domain: &Domain, cells_per_axis: usize) -> Self {
        let (lo, hi) = domain.bounds();
        GridSpec {
            bounds: Domain::boxed((lo + hi) * 0.5, (hi - lo) * 0.5),
            cells_per_axis,
        }
    }

    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec3 {
        let (lo, hi) = self.bounds.bounds();
        (hi - lo) / self.cells_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h.x * h.y * h.z
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cells_per_axis + j) * self.cells_per_axis + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.cells_per_axis;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.unravel(idx);
        let (lo, _) = self.bounds.bounds();
        let h = self.spacing();
        lo + Vec3::new(
            (i as f64 + 0.5) * h.x,
            (j as f64 + 0.5) * h.y,
            (k as f64 + 0.5) * h.z,
        )
    }

    pub fn centers(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, if inside the grid box.
    pub fn locate(&self, x: &Vec3) -> Option<usize> {
        let (lo, hi) = self.bounds.bounds();
        let h = self.spacing();
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            if x[a] < lo[a] || x[a] >= hi[a] {
                return None;
            }
            ijk[a] = (((x[a] - lo[a]) / h[a]) as usize).min(self.cells_per_axis - 1);
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }
}

/// Values on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Vec3) -> f64 + Sync) -> Self {
        let values = (0..spec.len())
            .into_par_iter()
            .map(|i| f(&spec.center(i)))
            .collect();
        GridFunction { spec, values }
    }

    /// Nearest-cell lookup; zero outside the grid box.
    pub fn sample(&self, x: &Vec3) -> f64 {
        self.spec.locate(x).map_or(0.0, |i| self.values[i])
    }

    pub fn l1_norm(&self) -> f64 {
        let abs: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        self.spec.cell_volume() * pairwise_sum(&abs)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV rows `index,x1,x2,x3,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x1,x2,x3,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let c = self.spec.center(i);
            out.push_str(&format!("{i},{},{},{},{v}\n", c.x, c.y, c.z));
        }
        out
    }
}

/// Lagrangian solution at the given points: `rho_0(X(s, t, x_i))`.
pub fn solve_lagrangian<F: VectorField>(
    flow: &FlowEvaluator<F>,
    rho0: &InitialDatum,
    s: f64,
    t: f64,
    points: &[Vec3],
) -> Result<Vec<f64>> {
    let feet = flow.flow_map(s, t, points)?;
    Ok(feet.iter().map(|y| rho0.evaluate(y)).collect())
}

/// Dimension-split first-order upwind scheme for the advective form, run
/// from time `s` to time `t` (either direction). Cells where the velocity
/// vanishes, in particular outside the domain, keep their initial value.
/// `dt` defaults to the largest step allowed by `|dt| <= 0.4 h / sup|v|`.
pub fn solve_eulerian<F: VectorField + ?Sized>(
    field: &F,
    rho0: &InitialDatum,
    s: f64,
    t: f64,
    grid: &GridSpec,
    dt: Option<f64>,
) -> Result<GridFunction> {
    let mut rho = GridFunction::from_fn(*grid, |x| rho0.evaluate(x));
    let span = t - s;
    let vmax = field.speed_bound();
    if span == 0.0 || vmax == 0.0 {
        return Ok(rho);
    }
    let h = grid.spacing();
    let hmin = h.x.min(h.y).min(h.z);
    let limit = 0.4 * hmin / vmax;
    let dt_abs = match dt {
        Some(d) if d.abs() > limit => return Err(Error::Cfl { dt: d.abs(), limit }),
        Some(d) if d != 0.0 => d.abs(),
        _ => limit,
    };
    let steps = (span.abs() / dt_abs).ceil().max(1.0) as usize;
    let step = span / steps as f64;
    let n = grid.cells_per_axis;
    let centers = grid.centers();
    let strides = [n * n, n, 1];
    let mut next = vec![0.0; grid.len()];
    for m in 0..steps {
        let r = s + step * m as f64;
        let vel: Vec<Vec3> = centers.par_iter().map(|x| field.velocity(r, x)).collect();
        for axis in 0..3 {
            let stride = strides[axis];
            let old = &rho.values;
            next.par_iter_mut().enumerate().for_each(|(idx, out)| {
                let c = step * vel[idx][axis] / h[axis];
                let here = old[idx];
                let pos = (idx / stride) % n;
                *out = if c > 0.0 {
                    let behind = if pos > 0 { old[idx - stride] } else { here };
                    here - c * (here - behind)
                } else if c < 0.0 {
                    let ahead = if pos + 1 < n { old[idx + stride] } else { here };
                    here - c * (ahead - here)
                } else {
                    here
                };
            });
            std::mem::swap(&mut rho.values, &mut next);
        }
    }
    Ok(rho)
}

/// `L^1(Omega)` distance between an Eulerian grid solution and the
/// Lagrangian solution at the cell centers lying in the domain.
pub fn lagrangian_eulerian_l1<F: VectorField>(
    flow: &FlowEvaluator<F>,
    rho0: &InitialDatum,
    s: f64,
    t: f64,
    eulerian: &GridFunction,
) -> Result<f64> {
    let domain = flow.domain();
    let spec = eulerian.spec;
    let inside: Vec<usize> = (0..spec.len())
        .filter(|&i| domain.contains(&spec.center(i)))
        .collect();
    let pts: Vec<Vec3> = inside.iter().map(|&i| spec.center(i)).collect();
    let lag = solve_lagrangian(flow, rho0, s, t, &pts)?;
    let diffs: Vec<f64> = inside
        .iter()
        .zip(&lag)
        .map(|(&i, l)| (eulerian.values[i] - l).abs())
        .collect();
    Ok(spec.cell_volume() * pairwise_sum(&diffs))
}

/// One time point of the L2-norm evolution check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormResidual {
    pub t: f64,
    /// MC estimate of `||rho(s, t)||^2`.
    pub norm_sq: f64,
    pub initial_norm_sq: f64,
    /// Time-trapezoid of the MC estimates of `int (div v) rho^2`.
    pub divergence_term: f64,
    pub residual: f64,
    /// Root-sum-square of the three MC standard errors.
    pub sigma: f64,
}

/// Sub-intervals per gap between consecutive requested times.
pub const NORM_SUBSTEPS: usize = 4;

/// Checks `||rho(s,t)||^2 = ||rho_0||^2 + int_s^t int (div v) rho^2` on
/// common uniform samples of the domain.
pub fn l2_identity_residual<F: VectorField>(
    flow: &FlowEvaluator<F>,
    rho0: &InitialDatum,
    s: f64,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<NormResidual>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let forward = times.iter().all(|&t| t >= s);
    let backward = times.iter().all(|&t| t <= s);
    let monotone = times
        .windows(2)
        .all(|w| if forward { w[1] >= w[0] } else { w[1] <= w[0] });
    if !(forward || backward) || !monotone {
        return Err(Error::InvalidArgument(
            "times must lie on one side of s and move away from it monotonically".into(),
        ));
    }
    let domain = flow.domain();
    let vol = domain.exact_volume();
    let points = sample_uniform(&domain, n, seed);

    // r-nodes: s, then NORM_SUBSTEPS equal pieces of every gap
    let mut nodes = vec![s];
    let mut marks = Vec::with_capacity(times.len());
    let mut prev = s;
    for &t in times {
        for k in 1..=NORM_SUBSTEPS {
            nodes.push(prev + (t - prev) * k as f64 / NORM_SUBSTEPS as f64);
        }
        marks.push(nodes.len() - 1);
        prev = t;
    }

    // rho(s, r, x_i) for every node
    let rho_at: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&r| solve_lagrangian(flow, rho0, s, r, &points))
        .collect::<Result<_>>()?;
    let integrand: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&rho_at)
        .map(|(&r, rho)| {
            points
                .par_iter()
                .zip(rho)
                .map(|(x, q)| flow.field.divergence(r, x) * q * q)
                .collect()
        })
        .collect();

    let initial: Vec<f64> = rho_at[0].iter().map(|q| q * q).collect();
    let (m0, se0) = mean_and_stderr(&initial);
    let mut out = Vec::with_capacity(times.len());
    let mut start = 0;
    let mut running = vec![0.0; n];
    for (&t, &mark) in times.iter().zip(&marks) {
        // per-sample trapezoid pieces, accumulated gap by gap
        let h = (t - nodes[start]) / (mark - start) as f64;
        for (i, acc) in running.iter_mut().enumerate() {
            let column: Vec<f64> = (start..=mark).map(|k| integrand[k][i]).collect();
            *acc += trapezoid(&column, h);
        }
        start = mark;
        let lhs: Vec<f64> = rho_at[mark].iter().map(|q| q * q).collect();
        let (ml, sel) = mean_and_stderr(&lhs);
        let (mi, sei) = mean_and_stderr(&running);
        let residual_terms: Vec<f64> = (0..n).map(|i| lhs[i] - initial[i] - running[i]).collect();
        out.push(NormResidual {
            t,
            norm_sq: ml * vol,
            initial_norm_sq: m0 * vol,
            divergence_term: mi * vol,
            residual: (pairwise_sum(&residual_terms) / n as f64 * vol).abs(),
            sigma: vol * (sel * sel + se0 * se0 + sei * sei).sqrt(),
        });
    }
    Ok(out)
}

/// The commutator
/// `R = -grad(eta * rho) . v + div(eta * (rho v)) - eta * (rho div v)`
/// on a grid, with `rho` and `v` zero-extended outside the domain. Every
/// convolution uses the discrete kernel of order `order`.
pub fn commutator_field(
    field: &VelocityField,
    rho_snapshot: &(dyn Fn(&Vec3) -> f64 + Sync),
    eps: f64,
    t: f64,
    grid: &GridSpec,
    enclosure: &Enclosure,
    order: usize,
) -> Result<GridFunction> {
    let mollified = mollify(field, eps, order, enclosure)?;
    let stencil = mollified.stencil();
    let domain = enclosure.domain;
    let support = field.support();
    let rho = |z: &Vec3| {
        if domain.contains(z) {
            rho_snapshot(z)
        } else {
            0.0
        }
    };
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.center(idx);
            if let Some(sup) = support {
                if sup.distance_to(&x) >= eps {
                    return 0.0;
                }
            }
            let mut grad_rho = Vec3::zeros();
            let mut div_flux = 0.0;
            let mut smoothed_source = 0.0;
            for node in stencil {
                let z = x - node.offset;
                let q = rho(&z);
                if q == 0.0 {
                    continue;
                }
                let (v, div) = field.velocity_divergence(t, &z);
                grad_rho += node.grad_weight * q;
                div_flux += node.grad_weight.dot(&v) * q;
                smoothed_source += node.weight * q * div;
            }
            -grad_rho.dot(&field.velocity(t, &x)) + div_flux - smoothed_source
        })
        .collect();
    Ok(GridFunction {
        spec: *grid,
        values,
    })
}

/// Product of smooth bumps in time and space, `phi(t, x) = b(t) b(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeBump {
    pub t_center: f64,
    pub t_radius: f64,
    pub x_center: Vec3,
    pub x_radius: f64,
}

impl SpaceTimeBump {
    /// `(phi, d_t phi, grad phi)`.
    pub fn eval(&self, t: f64, x: &Vec3) -> (f64, f64, Vec3) {
        let tau = (t - self.t_center) / self.t_radius;
        let d = x - self.x_center;
        let u2 = d.norm_squared() / (self.x_radius * self.x_radius);
        let bt = bump(tau * tau);
        let bx = bump(u2);
        let dbt = bump_d_u2(tau * tau) * 2.0 * tau / self.t_radius;
        let gbx = d * (bump_d_u2(u2) * 2.0 / (self.x_radius * self.x_radius));
        (bt * bx, dbt * bx, gbx * bt)
    }

    fn in_space_support(&self, x: &Vec3) -> bool {
        (x - self.x_center).norm_squared() < self.x_radius * self.x_radius
    }
}

/// Quadrature setup for [`weak_residual`]: Gauss–Legendre in time on
/// `[s, end]`, midpoint cells of `grid` restricted to the domain in space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub end: f64,
    pub time_nodes: usize,
    pub grid: GridSpec,
}

/// `|int_s^end int_Omega {rho d_t phi + rho v . grad phi + (div v) rho phi}
/// + int_Omega rho_0 phi(s)|`. The test function must vanish at `end`.
pub fn weak_residual<F: VectorField + ?Sized>(
    solution: &TransportSolution<'_>,
    field: &F,
    rho0: &InitialDatum,
    testfn: &SpaceTimeBump,
    window: &TimeWindow,
    domain: &Domain,
) -> Result<f64> {
    let s = solution.s;
    let spec = window.grid;
    let cells: Vec<Vec3> = (0..spec.len())
        .map(|i| spec.center(i))
        .filter(|x| domain.contains(x) && testfn.in_space_support(x))
        .collect();
    let cell_volume = spec.cell_volume();
    let (ts, ws) = gauss_legendre_on(window.time_nodes, s, window.end);
    let mut total = 0.0;
    for (&r, &w) in ts.iter().zip(&ws) {
        let slice: Vec<f64> = cells
            .par_iter()
            .map(|x| {
                let (phi, dphi, grad) = testfn.eval(r, x);
                if phi == 0.0 && dphi == 0.0 {
                    return Ok(0.0);
                }
                let rho = solution.evaluate(r, x)?;
                let (v, div) = field.velocity_divergence(r, x);
                Ok(rho * dphi + rho * v.dot(&grad) + div * rho * phi)
            })
            .collect::<Result<_>>()?;
        total += w * cell_volume * pairwise_sum(&slice);
    }
    let boundary: Vec<f64> = cells
        .iter()
        .map(|x| rho0.evaluate(x) * testfn.eval(s, x).0)
        .collect();
    Ok((total + cell_volume * pairwise_sum(&boundary)).abs())
}

/// Options for building regularized flows `X^eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub enclosure: Enclosure,
    pub quadrature_order: usize,
    pub step_size: f64,
}

/// `X^{eps_i}(s, t, x_j)` for every radius and every point.
pub fn mollified_flow_maps(
    base: &VelocityField,
    eps_list: &[f64],
    reg: &Regularization,
    s: f64,
    t: f64,
    points: &[Vec3],
) -> Result<Vec<Vec<Vec3>>> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "eps_list must be strictly decreasing".into(),
        ));
    }
    eps_list
        .iter()
        .map(|&eps| {
            let m = mollify(base, eps, reg.quadrature_order, &reg.enclosure)?;
            FlowEvaluator::new(m, reg.step_size, reg.enclosure)?.flow_map(s, t, points)
        })
        .collect()
}

/// MC `L^2(region)` norm of per-sample differences.
pub(crate) fn mc_l2(values: &[f64], volume: f64) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    (volume * pairwise_sum(&sq) / values.len().max(1) as f64).sqrt()
}

/// `||rho^{eps_i}(s, t) - rho^{eps_{i+1}}(s, t)||_{L^2(Omega)}` for
/// consecutive radii, on common samples. The initial datum is not mollified.
pub fn rho_convergence_study(
    field: &VelocityField,
    rho0: &InitialDatum,
    s: f64,
    t: f64,
    eps_list: &[f64],
    reg: &Regularization,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let domain = reg.enclosure.domain;
    let points = sample_uniform(&domain, n, seed);
    let maps = mollified_flow_maps(field, eps_list, reg, s, t, &points)?;
    let values: Vec<Vec<f64>> = maps
        .iter()
        .map(|m| m.iter().map(|y| rho0.evaluate(y)).collect())
        .collect();
    Ok(values
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a - b).collect();
            mc_l2(&d, domain.exact_volume())
        })
        .collect())
}
