use kds::angular::{b_kn, b_kn_inverse};
use kds::cli::{parse_config, RunConfig};
use kds::geometry::{build_extreme_params, TortoiseMap};
use kds::potentials::C64;
use kds::scattering::CutoffPair;
use proptest::prelude::*;

fn c64() -> impl Strategy<Value = C64> {
    (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(re, im)| C64::new(re, im))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn horizon_identities_hold(a in 0.05..5.0f64, x in 0.005..0.26f64) {
        let p = build_extreme_params(a, x / a).unwrap();
        for c in p.identity_checks(1e-10) {
            prop_assert!(c.pass, "{} residual {:e} at a = {a}, l = {}", c.name, c.residual, x / a);
        }
        prop_assert!(p.r_minus < 0.0 && 0.0 < p.r_e && p.r_e < p.r_plus);
    }

    #[test]
    fn tortoise_round_trip(a in 0.2..3.0f64, x in 0.01..0.26f64, rs in -1e3..1e3f64) {
        let map = TortoiseMap::from_al(a, x / a).unwrap();
        // the point keeps the horizon gaps, so the trip survives r rounding onto r_+
        let q = map.inverse_point(rs).unwrap();
        prop_assert!(map.params.r_e <= q.r && q.r <= map.params.r_plus);
        let back = map.forward_point(&q);
        prop_assert!((back - rs).abs() <= 1e-9 * (1.0 + rs.abs()), "{rs} -> {} -> {back}", q.r);
    }

    #[test]
    fn cutoffs_partition_unity(lo in -20.0..0.0f64, w in 0.5..40.0f64, r in -100.0..100.0f64) {
        let c = CutoffPair { lo, hi: lo + w };
        let (p, m) = (c.c_plus(r), c.c_minus(r));
        prop_assert!((p * p + m * m - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&m));
        if r <= lo {
            prop_assert_eq!(p, 0.0);
        }
        if r >= lo + w {
            prop_assert!((p - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn b_kn_is_an_isometry(u in prop::array::uniform4(c64())) {
        let v = b_kn(u);
        let n = |w: &[C64; 4]| w.iter().map(|z| z.norm_sqr()).sum::<f64>();
        prop_assert!((n(&v) - n(&u)).abs() <= 1e-13 * (1.0 + n(&u)));
        let w = b_kn_inverse(v);
        for k in 0..4 {
            prop_assert!((w[k] - u[k]).norm() <= 1e-13 * (1.0 + u[k].norm()));
        }
    }

    #[test]
    fn config_text_round_trips(
        a in 0.5..2.0f64,
        x in 0.01..0.25f64,
        seed in any::<u64>(),
        jitter in 0.0..2.0f64,
        dollard in any::<bool>(),
        levels in 2usize..6,
    ) {
        let mut cfg = RunConfig::default();
        cfg.params.a = a;
        cfg.params.l = x / a;
        cfg.run.seed = seed;
        cfg.packet.jitter = jitter;
        cfg.ladder.dollard = dollard;
        cfg.ladder.levels = levels;
        cfg.validate().unwrap();
        let back = parse_config(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
