use spirk::irk_solver::{StageSystem, StageSystemConfig};
use spirk::krylov::GmresConfig;
use spirk::problem::ScalarOde;
use spirk::tableau::radau_iia;

#[test]
fn tableau_in_f32() {
    for q in 1..=4 {
        let t = radau_iia::<f32>(q).unwrap();
        assert!(t.order_condition_defect(2 * q - 1) < 1e-5);
    }
}

#[test]
fn decay_step_in_f32() {
    let cfg = StageSystemConfig { gmres: GmresConfig { rel_tol: 1e-6, max_iter: 50 }, ..Default::default() };
    let sys = StageSystem::new(ScalarOde::<f32>::decay(), 2, 0.1, cfg).unwrap();
    let (u, _) = sys.integrate(vec![1.0], 0.0, 10, |_, _| Ok(None)).unwrap();
    assert!((u[0] - (-1.0f32).exp()).abs() < 1e-5);
}
