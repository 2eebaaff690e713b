use billiard_core::dynamics::{orbit, PhasePoint};
use billiard_core::geometry::{validate, TableSpec};
use std::f64::consts::PI;

const TABLES: [&str; 6] = [
    "stadium:l=2,r=1",
    "semi:r=0.25",
    "flower:wall=8",
    "drivebelt:R=1,r=0.5,d=2",
    "disc",
    "square:a=1",
];

#[test]
fn shipped_tables_close_and_validate() {
    for s in TABLES {
        let table = TableSpec::from_shorthand(s).unwrap().build().unwrap();
        assert!(table.closure_residual() < 1e-9, "{s}");
        let report = validate(&table);
        assert!(report.passed, "{s}: {:?}", report.violations);
    }
}

#[test]
fn stadium_mean_free_path_formula() {
    let table = TableSpec::from_shorthand("stadium:l=2,r=1").unwrap().build().unwrap();
    let area = 2.0 * 2.0 + PI;
    let perimeter = 2.0 * 2.0 + 2.0 * PI;
    assert!((table.area() - area).abs() < 1e-12);
    assert!((table.perimeter() - perimeter).abs() < 1e-12);
    assert!((table.mean_free_path() - PI * area / perimeter).abs() < 1e-12);
    assert!((table.mean_free_path() - 2.182).abs() < 5e-4);
}

#[test]
fn square_orbit_keeps_slope() {
    let table = TableSpec::from_shorthand("square:a=1").unwrap().build().unwrap();
    let mut angles = Vec::new();
    orbit(&table, PhasePoint::new(0.3, 0.4), 200, |ev| angles.push(ev.point.phi.abs())).unwrap();
    let first = angles[0];
    assert!(angles.iter().all(|a| (a - first).abs() < 1e-9 || (a - (PI / 2.0 - first)).abs() < 1e-9));
}
