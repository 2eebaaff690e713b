use billiard_core::dynamics::{collision_map, sample_mu, tangent_map, PhasePoint};
use billiard_core::geometry::{Table, TableSpec};
use billiard_core::rng::{par_chunks, stream};
use billiard_core::stats::fit::{fit_power_law, WindowPolicy};
use billiard_core::stats::invariance::ks_uniform;
use billiard_core::stats::tail::SurvivalCurve;
use proptest::prelude::*;
use rand::Rng as _;
use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

fn tables() -> &'static [Table] {
    static TABLES: OnceLock<Vec<Table>> = OnceLock::new();
    TABLES.get_or_init(|| {
        ["stadium:l=2,r=1", "semi:r=0.25", "flower:wall=8", "drivebelt:R=1,r=0.5,d=2"]
            .iter()
            .map(|s| TableSpec::from_shorthand(s).unwrap().build().unwrap())
            .collect()
    })
}

fn circular_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reversal_undoes_a_step(t in 0usize..4, u in 0.0f64..1.0, phi in -1.4f64..1.4) {
        let table = &tables()[t];
        let x = PhasePoint::new(u * table.perimeter(), phi);
        let Ok(y) = collision_map(table, x) else { return Ok(()) };
        prop_assume!(!y.grazing && !y.corner);
        let Ok(z) = collision_map(table, y.point.reversed()) else { return Ok(()) };
        prop_assert!(circular_gap(z.point.r, x.r, table.perimeter()) < 1e-9);
        prop_assert!((z.point.phi + x.phi).abs() < 1e-9);
    }

    #[test]
    fn jacobian_determinant_identity(t in 0usize..4, u in 0.0f64..1.0, phi in -1.4f64..1.4) {
        let table = &tables()[t];
        let x = PhasePoint::new(u * table.perimeter(), phi);
        let (Ok(y), Ok(j)) = (collision_map(table, x), tangent_map(table, x)) else { return Ok(()) };
        prop_assume!(!y.grazing && !y.corner);
        let lhs = j.det().abs() * y.point.phi.cos();
        prop_assert!((lhs - phi.cos()).abs() < 1e-9 * phi.cos());
    }

    #[test]
    fn mu_samples_lie_in_phase_space(t in 0usize..4, seed in any::<u64>()) {
        let table = &tables()[t];
        let mut rng = stream(seed, 0);
        for _ in 0..64 {
            let x = sample_mu(table, &mut rng);
            prop_assert!(x.r >= 0.0 && x.r < table.perimeter());
            prop_assert!(x.phi.abs() < FRAC_PI_2);
        }
    }

    #[test]
    fn ks_distance_is_bounded(mut v in prop::collection::vec(0.0f64..1.0, 1..200)) {
        let d = ks_uniform(&mut v);
        prop_assert!(d > 0.0 && d <= 1.0);
    }

    #[test]
    fn exact_power_law_is_recovered(a in 0.5f64..4.0, c in 0.1f64..10.0) {
        let curve = SurvivalCurve::from_function(|n| c * n.powf(-a), 1e5);
        let fit = fit_power_law(&curve, &WindowPolicy::Fixed { n_lo: 10.0, n_hi: 1e4 }).unwrap();
        prop_assert!((fit.exponent - a).abs() < 1e-9);
        prop_assert!((fit.amplitude - c).abs() < 1e-8 * c);
    }
}

#[test]
fn chunked_streams_ignore_thread_count() {
    let draw = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| par_chunks(11, 5, 1000, 37, |_, _, len, rng| (0..len).fold(0u64, |acc, _| acc ^ rng.gen::<u64>())))
    };
    assert_eq!(draw(1), draw(3));
}
