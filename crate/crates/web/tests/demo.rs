use dadg_core::riccati::CaseStudyRiccati;
use dadg_web::Demo;

#[test]
fn k_squared_matches_closed_form() {
    let demo = Demo::build(2.0, 3.0, 0.5, 2.0, 10.0).unwrap();
    let cs = CaseStudyRiccati::new(2.0, 3.0, 0.5, 0.5, 10.0).unwrap();
    for (t, k2) in demo.times().into_iter().zip(demo.k_squared_values()) {
        let exact = cs.k(t).powi(2);
        assert!((k2 - exact).abs() <= 1e-8 * exact.max(1.0), "t = {t}: {k2} vs {exact}");
    }
}

#[test]
fn schedule_is_sorted_and_interior() {
    let demo = Demo::build(2.0, 3.0, 0.5, 2.0, 10.0).unwrap();
    let s = demo.schedule_for("attacker", 5).unwrap();
    assert_eq!(s.len(), 5);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert!(s[0] > 0.0 && s[4] < 10.0);
}

#[test]
fn optimal_never_loses_to_periodic() {
    let demo = Demo::build(2.0, 3.0, 0.5, 2.0, 10.0).unwrap();
    let table = demo.cost_table("defender", 4).unwrap();
    assert_eq!(table.len(), 12);
    for row in table.chunks(3) {
        assert!(row[1] <= row[2] + 1e-9, "{row:?}");
    }
}

#[test]
fn bad_inputs_come_back_as_messages() {
    assert!(Demo::build(2.0, 3.0, 0.5, 2.0, -1.0).is_err());
    let demo = Demo::build(2.0, 3.0, 0.5, 2.0, 10.0).unwrap();
    assert!(demo.schedule_for("referee", 2).unwrap_err().contains("referee"));
}
