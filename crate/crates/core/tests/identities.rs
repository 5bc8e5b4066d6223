use approx::assert_relative_eq;
use comoving::{
    change_of_variables_check, measure_image, measure_image_jacobian, mollify, sample_uniform,
    Domain, Enclosure, FlowEvaluator, InitialDatum, MeasurableSet, Sampler, TransportSolution,
    Vec3, VelocityField,
};

fn flow_of(field: VelocityField) -> FlowEvaluator<VelocityField> {
    FlowEvaluator::new(field, 1e-2, Enclosure::new(field.domain.unwrap(), 0.1)).unwrap()
}

#[test]
fn lagrangian_solution_is_constant_along_trajectories() {
    let flow = flow_of(VelocityField::contraction());
    let rho0 = InitialDatum::smooth_bump(Vec3::new(0.2, 0.1, 0.0), 0.4, 1.0);
    let sol = TransportSolution::lagrangian(&flow, &rho0, 0.0);
    let points = sample_uniform(&Domain::ball(Vec3::zeros(), 0.6), 200, 3);
    let moved = flow.flow_map(0.7, 0.0, &points).unwrap();
    for (x, y) in points.iter().zip(&moved) {
        assert_relative_eq!(
            sol.evaluate(0.7, y).unwrap(),
            rho0.evaluate(x),
            epsilon = 1e-9
        );
    }
}

#[test]
fn image_estimators_agree_on_contraction() {
    let flow = flow_of(VelocityField::contraction());
    let set = MeasurableSet::ball("core", Vec3::new(0.1, 0.0, 0.0), 0.3);
    let sampler = Sampler::new(Domain::unit_ball(), 50_000, 9);
    let hit = measure_image(&flow, 0.5, 0.0, &set, &sampler).unwrap();
    let jac = measure_image_jacobian(&flow, 0.5, 0.0, &set, &sampler).unwrap();
    let sigma = hit.std_error.hypot(jac.std_error);
    assert!((hit.value - jac.value).abs() <= 4.0 * sigma);
}

#[test]
fn change_of_variables_holds_for_rotation() {
    let flow = flow_of(VelocityField::rotation());
    let f = |x: &Vec3| x.x * x.x + x.z;
    let report = change_of_variables_check(&flow, &f, 0.0, 1.0, 5, 20_000, 4).unwrap();
    assert!(report.passes(), "{report:?}");
}

#[test]
fn mollified_rotation_matches_exact_flow_in_the_core() {
    let field = VelocityField::rotation();
    let enc = Enclosure::new(field.domain.unwrap(), 0.1);
    let smooth = mollify(&field, 0.05, 8, &enc).unwrap();
    let exact = flow_of(field);
    let mollified = FlowEvaluator::new(smooth, 1e-2, enc).unwrap();
    let points = sample_uniform(&Domain::ball(Vec3::zeros(), 0.5), 100, 5);
    let a = exact.flow_map(1.0, 0.0, &points).unwrap();
    let b = mollified.flow_map(1.0, 0.0, &points).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).norm() < 1e-9);
    }
}
