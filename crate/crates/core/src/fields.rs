//! Velocity fields, their zero extension outside the domain, the standard
//! bump mollifier and mollified fields.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{sample_uniform, Domain, Enclosure};
use crate::numerics::{cutoff, gauss_legendre, gauss_legendre_on, trapezoid};
use crate::Vec3;

/// Anything that can drive a flow: a velocity, its divergence and a few
/// analytic bounds.
pub trait VectorField: Send + Sync {
    fn velocity(&self, t: f64, x: &Vec3) -> Vec3;

    fn divergence(&self, t: f64, x: &Vec3) -> f64;

    /// Velocity and divergence at one point. Implementations that share work
    /// between the two should override this.
    fn velocity_divergence(&self, t: f64, x: &Vec3) -> (Vec3, f64) {
        (self.velocity(t, x), self.divergence(t, x))
    }

    /// Upper bound for `sup |v|`.
    fn speed_bound(&self) -> f64;

    /// Upper bound for `sup_x |div v(t, x)|`, uniform in time.
    fn div_sup_bound(&self) -> f64;

    /// Domain the field is zero-extended from, if any.
    fn domain(&self) -> Option<Domain>;

    fn name(&self) -> String;
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn velocity(&self, t: f64, x: &Vec3) -> Vec3 {
        (**self).velocity(t, x)
    }
    fn divergence(&self, t: f64, x: &Vec3) -> f64 {
        (**self).divergence(t, x)
    }
    fn velocity_divergence(&self, t: f64, x: &Vec3) -> (Vec3, f64) {
        (**self).velocity_divergence(t, x)
    }
    fn speed_bound(&self) -> f64 {
        (**self).speed_bound()
    }
    fn div_sup_bound(&self) -> f64 {
        (**self).div_sup_bound()
    }
    fn domain(&self) -> Option<Domain> {
        (**self).domain()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

// Radial cutoff of the rotation/contraction fields: 1 on [0, 0.7], 0 past 0.9.
const CORE_RADIUS: f64 = 0.7;
const SUPPORT_RADIUS: f64 = 0.9;
// Cutoff of the rough shear: 1 on |u| <= 0.3, 0 for |u| >= 0.9.
const SHEAR_PLATEAU: f64 = 0.3;
const SHEAR_SUPPORT: f64 = 0.9;

// sup_r r phi(r), attained at r ~ 0.72142 (rounded up).
const RADIAL_SPEED_BOUND: f64 = 0.713_920_260_81;
// sup_r |3 phi(r) + r phi'(r)|, attained at r ~ 0.81213 (rounded up).
const CONTRACTION_DIV_BOUND: f64 = 6.229_139_852_7;
// sup_u psi(u) sqrt(u), attained at u ~ 0.41213 (rounded up).
const SHEAR_SPEED_BOUND: f64 = 0.610_940_055_11;
// sup |psi'| * sup psi(u) sqrt(u) = 3.125 * 0.61094...
const SHEAR_DIV_BOUND: f64 = 1.909_187_672_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldKind {
    Zero,
    /// `phi(|x|) (-x2, x1, 0)`.
    Rotation,
    /// `-phi(|x|) x`.
    Contraction,
    /// `(psi(x1) psi(x2) psi(x3) sqrt|x2|, 0, 0)`: in W^{1,1}_0 but not Lipschitz.
    RoughShear,
    /// Constant velocity inside the domain window.
    Uniform(Vec3),
    /// `A x` inside the window.
    Linear(Matrix3<f64>),
}

/// A velocity field on a domain, zero-extended to all of space. A field
/// built with `domain == None` is a synthetic test field with no extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityField {
    pub kind: FieldKind,
    pub domain: Option<Domain>,
}

/// Static facts about a built-in scenario field.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub domain: &'static str,
    pub divergence_free: bool,
    pub description: &'static str,
    pub oracle: &'static str,
}

pub const SCENARIOS: [ScenarioInfo; 3] = [
    ScenarioInfo {
        name: "rotation",
        domain: "unit ball",
        divergence_free: true,
        description: "rigid rotation about the x3 axis with a smooth radial cutoff",
        oracle: "closed-form rotation for |x| <= 0.7; measure preserving",
    },
    ScenarioInfo {
        name: "contraction",
        domain: "unit ball",
        divergence_free: false,
        description: "radial contraction -x with a smooth radial cutoff",
        oracle: "x(s) = x0 exp(-(s - t)) for |x| <= 0.7; divergence -3 in the core",
    },
    ScenarioInfo {
        name: "rough_shear",
        domain: "cube (-1, 1)^3",
        divergence_free: false,
        description: "shear sqrt|x2| along x1: Sobolev W^{1,1}_0 but not Lipschitz",
        oracle: "x2, x3 conserved; stationary on the plane x2 = 0; bounded divergence",
    },
];

impl VelocityField {
    pub fn zero(domain: Domain) -> Self {
        VelocityField {
            kind: FieldKind::Zero,
            domain: Some(domain),
        }
    }

    pub fn rotation() -> Self {
        VelocityField {
            kind: FieldKind::Rotation,
            domain: Some(Domain::unit_ball()),
        }
    }

    pub fn contraction() -> Self {
        VelocityField {
            kind: FieldKind::Contraction,
            domain: Some(Domain::unit_ball()),
        }
    }

    pub fn rough_shear() -> Self {
        VelocityField {
            kind: FieldKind::RoughShear,
            domain: Some(Domain::cube(1.0)),
        }
    }

    pub fn uniform(velocity: Vec3, window: Option<Domain>) -> Self {
        VelocityField {
            kind: FieldKind::Uniform(velocity),
            domain: window,
        }
    }

    pub fn linear(matrix: Matrix3<f64>, window: Option<Domain>) -> Self {
        VelocityField {
            kind: FieldKind::Linear(matrix),
            domain: window,
        }
    }

    /// Built-in scenario field by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "zero" => Some(Self::zero(Domain::unit_ball())),
            "rotation" => Some(Self::rotation()),
            "contraction" => Some(Self::contraction()),
            "rough_shear" => Some(Self::rough_shear()),
            _ => None,
        }
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        matches!(
            self.kind,
            FieldKind::Zero | FieldKind::Rotation | FieldKind::Contraction | FieldKind::RoughShear
        )
    }

    pub fn regularity_note(&self) -> &'static str {
        match self.kind {
            FieldKind::Zero => "identically zero",
            FieldKind::Rotation | FieldKind::Contraction => {
                "C^2, compactly supported in the domain"
            }
            FieldKind::RoughShear => "W^{1,1}_0, gradient ~ |x2|^(-1/2), divergence bounded",
            FieldKind::Uniform(_) | FieldKind::Linear(_) => "synthetic window field",
        }
    }

    /// Closed set outside of which the field vanishes.
    pub fn support(&self) -> Option<Domain> {
        match self.kind {
            FieldKind::Zero => None,
            FieldKind::Rotation | FieldKind::Contraction => {
                Some(Domain::ball(Vec3::zeros(), SUPPORT_RADIUS))
            }
            FieldKind::RoughShear => Some(Domain::cube(SHEAR_SUPPORT)),
            FieldKind::Uniform(_) | FieldKind::Linear(_) => self.domain,
        }
    }

    /// Value of the field formula, without zero extension.
    #[inline]
    fn raw(&self, x: &Vec3) -> (Vec3, f64) {
        match self.kind {
            FieldKind::Zero => (Vec3::zeros(), 0.0),
            FieldKind::Rotation => {
                let (phi, _) = cutoff(x.norm(), CORE_RADIUS, SUPPORT_RADIUS);
                // grad phi(|x|) is radial, hence orthogonal to (-x2, x1, 0)
                (Vec3::new(-x.y * phi, x.x * phi, 0.0), 0.0)
            }
            FieldKind::Contraction => {
                let r = x.norm();
                let (phi, dphi) = cutoff(r, CORE_RADIUS, SUPPORT_RADIUS);
                (-phi * x, -3.0 * phi - r * dphi)
            }
            FieldKind::RoughShear => {
                let (p1, d1) = cutoff(x.x.abs(), SHEAR_PLATEAU, SHEAR_SUPPORT);
                let (p2, _) = cutoff(x.y.abs(), SHEAR_PLATEAU, SHEAR_SUPPORT);
                let (p3, _) = cutoff(x.z.abs(), SHEAR_PLATEAU, SHEAR_SUPPORT);
                let amp = p2 * p3 * x.y.abs().sqrt();
                (Vec3::new(p1 * amp, 0.0, 0.0), d1 * x.x.signum() * amp)
            }
            FieldKind::Uniform(c) => (c, 0.0),
            FieldKind::Linear(a) => (a * x, a.trace()),
        }
    }

    #[inline]
    fn extended(&self, x: &Vec3) -> (Vec3, f64) {
        match &self.domain {
            Some(d) if !d.contains(x) => (Vec3::zeros(), 0.0),
            _ => self.raw(x),
        }
    }
}

impl VectorField for VelocityField {
    #[inline]
    fn velocity(&self, _t: f64, x: &Vec3) -> Vec3 {
        self.extended(x).0
    }

    #[inline]
    fn divergence(&self, _t: f64, x: &Vec3) -> f64 {
        self.extended(x).1
    }

    #[inline]
    fn velocity_divergence(&self, _t: f64, x: &Vec3) -> (Vec3, f64) {
        self.extended(x)
    }

    fn speed_bound(&self) -> f64 {
        match self.kind {
            FieldKind::Zero => 0.0,
            FieldKind::Rotation | FieldKind::Contraction => RADIAL_SPEED_BOUND,
            FieldKind::RoughShear => SHEAR_SPEED_BOUND,
            FieldKind::Uniform(c) => c.norm(),
            FieldKind::Linear(a) => match self.domain {
                Some(d) => a.norm() * (d.center().norm() + d.circumscribed_radius()),
                None => f64::INFINITY,
            },
        }
    }

    fn div_sup_bound(&self) -> f64 {
        match self.kind {
            FieldKind::Zero | FieldKind::Rotation | FieldKind::Uniform(_) => 0.0,
            FieldKind::Contraction => CONTRACTION_DIV_BOUND,
            FieldKind::RoughShear => SHEAR_DIV_BOUND,
            FieldKind::Linear(a) => a.trace().abs(),
        }
    }

    fn domain(&self) -> Option<Domain> {
        self.domain
    }

    fn name(&self) -> String {
        match self.kind {
            FieldKind::Zero => "zero".into(),
            FieldKind::Rotation => "rotation".into(),
            FieldKind::Contraction => "contraction".into(),
            FieldKind::RoughShear => "rough_shear".into(),
            FieldKind::Uniform(_) => "uniform".into(),
            FieldKind::Linear(_) => "linear".into(),
        }
    }
}

/// `eval_zero_extended`: `v(t, x)` inside the domain, zero outside.
pub fn eval_zero_extended(field: &VelocityField, t: f64, x: &Vec3) -> Vec3 {
    field.velocity(t, x)
}

#[inline]
fn bump_exponent(u2: f64) -> f64 {
    (1.0 / (u2 - 1.0)).exp()
}

/// Normalizing constant `C` of the bump `C exp(1/(|x|^2 - 1))` on the unit
/// ball, from a Gauss–Legendre radial rule with `quad_points` nodes checked
/// against a rule with twice as many.
pub fn mollifier_normalizer(quad_points: usize) -> Result<f64> {
    if quad_points < 64 {
        return Err(Error::InvalidArgument(format!(
            "mollifier quadrature needs at least 64 points, got {quad_points}"
        )));
    }
    let radial = |n: usize| {
        let (r, w) = gauss_legendre_on(n, 0.0, 1.0);
        r.iter()
            .zip(&w)
            .map(|(r, w)| w * r * r * bump_exponent(r * r))
            .sum::<f64>()
    };
    let coarse = radial(quad_points);
    let fine = radial(2 * quad_points);
    let gap = ((coarse - fine) / fine).abs();
    if gap > 1e-8 {
        return Err(Error::QuadratureNotConverged { coarse, fine, gap });
    }
    Ok(1.0 / (4.0 * PI * fine))
}

/// The scaled bump `eta_eps(x) = C exp(1/(|x/eps|^2 - 1)) / eps^3` on `|x| < eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub epsilon: f64,
    pub normalizer: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mollifier radius must be positive, got {epsilon}"
            )));
        }
        Ok(Mollifier {
            epsilon,
            normalizer: mollifier_normalizer(128)?,
        })
    }

    pub fn density(&self, y: &Vec3) -> f64 {
        let u2 = y.norm_squared() / (self.epsilon * self.epsilon);
        if u2 >= 1.0 {
            0.0
        } else {
            self.normalizer * bump_exponent(u2) / self.epsilon.powi(3)
        }
    }

    pub fn gradient(&self, y: &Vec3) -> Vec3 {
        let e2 = self.epsilon * self.epsilon;
        let u2 = y.norm_squared() / e2;
        if u2 >= 1.0 {
            Vec3::zeros()
        } else {
            let d = u2 - 1.0;
            y * (-2.0 * self.density(y) / (e2 * d * d))
        }
    }
}

/// One node of a discrete convolution rule over `B_eps(0)`.
#[derive(Debug, Clone, Copy)]
pub struct StencilNode {
    pub offset: Vec3,
    pub weight: f64,
    pub grad_weight: Vec3,
}

/// Product Gauss–Legendre rule of `order` points per axis on the cube
/// `[-eps, eps]^3`, restricted to the open ball. Weights are rescaled so the
/// discrete kernel has unit mass and the discrete gradient kernel satisfies
/// `-sum y_j d_j eta = 1`; with symmetric nodes this reproduces constant and
/// linear fields and their divergence exactly.
pub fn convolution_stencil(mollifier: &Mollifier, order: usize) -> Vec<StencilNode> {
    let eps = mollifier.epsilon;
    let (x, w) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(order * order * order);
    for i in 0..order {
        for j in 0..order {
            for k in 0..order {
                let y = Vec3::new(x[i], x[j], x[k]) * eps;
                let cell = w[i] * w[j] * w[k] * eps.powi(3);
                let density = mollifier.density(&y);
                if density > 0.0 {
                    nodes.push(StencilNode {
                        offset: y,
                        weight: density * cell,
                        grad_weight: mollifier.gradient(&y) * cell,
                    });
                }
            }
        }
    }
    let mass: f64 = nodes.iter().map(|n| n.weight).sum();
    let first_moment: f64 = -nodes
        .iter()
        .map(|n| n.grad_weight.x * n.offset.x)
        .sum::<f64>();
    for n in &mut nodes {
        n.weight /= mass;
        n.grad_weight /= first_moment;
    }
    nodes
}

/// `eta_eps * v` evaluated by quadrature over `B_eps(x)` in space.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    pub base: VelocityField,
    pub mollifier: Mollifier,
    pub quadrature_order: usize,
    stencil: Arc<Vec<StencilNode>>,
}

/// Mollify `field` with radius `eps`. The radius must fit inside the
/// enclosure margin so the mollified support stays in `K`.
pub fn mollify(
    field: &VelocityField,
    eps: f64,
    order: usize,
    enclosure: &Enclosure,
) -> Result<MollifiedField> {
    if order < 8 {
        return Err(Error::InvalidArgument(format!(
            "mollification quadrature order must be at least 8, got {order}"
        )));
    }
    enclosure.check_eps(eps)?;
    let mollifier = Mollifier::new(eps)?;
    Ok(MollifiedField {
        base: *field,
        mollifier,
        quadrature_order: order,
        stencil: Arc::new(convolution_stencil(&mollifier, order)),
    })
}

impl MollifiedField {
    pub fn epsilon(&self) -> f64 {
        self.mollifier.epsilon
    }

    pub fn stencil(&self) -> &[StencilNode] {
        &self.stencil
    }

    #[inline]
    fn outside_support(&self, x: &Vec3) -> bool {
        let eps = self.mollifier.epsilon;
        match (self.base.support(), self.base.domain) {
            (Some(s), _) => s.distance_to(x) >= eps,
            (None, Some(d)) => d.distance_to(x) >= eps,
            (None, None) => false,
        }
    }
}

impl VectorField for MollifiedField {
    fn velocity(&self, t: f64, x: &Vec3) -> Vec3 {
        if self.base.kind == FieldKind::Zero || self.outside_support(x) {
            return Vec3::zeros();
        }
        let mut acc = Vec3::zeros();
        for node in self.stencil.iter() {
            acc += self.base.velocity(t, &(x - node.offset)) * node.weight;
        }
        acc
    }

    /// Divergence of the convolution, differentiating the kernel.
    fn divergence(&self, t: f64, x: &Vec3) -> f64 {
        self.velocity_divergence(t, x).1
    }

    fn velocity_divergence(&self, t: f64, x: &Vec3) -> (Vec3, f64) {
        if self.base.kind == FieldKind::Zero || self.outside_support(x) {
            return (Vec3::zeros(), 0.0);
        }
        let mut v = Vec3::zeros();
        let mut div = 0.0;
        for node in self.stencil.iter() {
            let b = self.base.velocity(t, &(x - node.offset));
            v += b * node.weight;
            div += b.dot(&node.grad_weight);
        }
        (v, div)
    }

    fn speed_bound(&self) -> f64 {
        self.base.speed_bound()
    }

    fn div_sup_bound(&self) -> f64 {
        self.base.div_sup_bound()
    }

    fn domain(&self) -> Option<Domain> {
        self.base.domain
    }

    fn name(&self) -> String {
        format!("{}@eps={}", self.base.name(), self.mollifier.epsilon)
    }
}

/// Sampled and analytic values of `int_{I^{s,t}} sup_x |div v(r, x)| dr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceBudget {
    pub sampled: f64,
    pub analytic_bound: f64,
}

impl DivergenceBudget {
    /// The compressibility constant `c^{s,t}` from the analytic bound.
    pub fn compressibility(&self) -> f64 {
        self.analytic_bound.exp()
    }
}

/// Time-integrated sup-norm of the divergence: trapezoid in time over
/// `time_nodes` nodes, sampled maxima over `space_samples` points in the
/// field's domain.
pub fn div_l1_linf<F: VectorField + ?Sized>(
    field: &F,
    s: f64,
    t: f64,
    time_nodes: usize,
    space_samples: usize,
    seed: u64,
) -> Result<DivergenceBudget> {
    if time_nodes < 2 {
        return Err(Error::InvalidArgument(
            "div_l1_linf needs at least 2 time nodes".into(),
        ));
    }
    let analytic_bound = (t - s).abs() * field.div_sup_bound();
    if s == t {
        return Ok(DivergenceBudget {
            sampled: 0.0,
            analytic_bound,
        });
    }
    let domain = field.domain().ok_or_else(|| {
        Error::InvalidArgument("div_l1_linf needs a field with a domain to sample".into())
    })?;
    let points = sample_uniform(&domain, space_samples.max(1), seed);
    let h = (t - s).abs() / (time_nodes - 1) as f64;
    let lo = s.min(t);
    let maxima: Vec<f64> = (0..time_nodes)
        .map(|k| {
            let r = lo + h * k as f64;
            points
                .iter()
                .map(|x| field.divergence(r, x).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(DivergenceBudget {
        sampled: trapezoid(&maxima, h),
        analytic_bound,
    })
}
