use constrained_hj::parabolic::{run_parabolic, EpsConfig, Form};
use constrained_hj::{GridSpec, InitialData, RateModel};
use nalgebra::DMatrix;

fn resource_at_end(form: Form, n: usize, dt: f64) -> f64 {
    let model = RateModel::canonical_1d();
    let init = InitialData::quadratic(&model, &[0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut cfg = EpsConfig::new(0.1, 0.5);
    cfg.form = form;
    cfg.grid = Some(GridSpec::line(-4.0, 5.0, n).unwrap());
    cfg.dt = Some(dt);
    let run = run_parabolic(&model, &init, &cfg).unwrap();
    run.samples.last().unwrap().resource
}

#[test]
fn halving_h_and_dt_shrinks_the_change_at_least_threefold() {
    for form in [Form::Density, Form::Potential] {
        let i: Vec<f64> = [(91, 1e-3), (181, 5e-4), (361, 2.5e-4)]
            .iter()
            .map(|&(n, dt)| resource_at_end(form, n, dt))
            .collect();
        let first = (i[1] - i[0]).abs();
        let second = (i[2] - i[1]).abs();
        assert!(first >= 3.0 * second, "{form:?}: changes {first:e} then {second:e}");
    }
}
