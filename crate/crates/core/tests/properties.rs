use std::sync::OnceLock;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;

use peel_lab_core::halfplane::{sample_simple_step, Escalation};
use peel_lab_core::peel::map::{build_ball, Explorer, Mode};
use peel_lab_core::peel::{finite_step_masses, tilde_masses, FreeLaw};
use peel_lab_core::percolation::{arm_thresholds, percolate_ball, thresholds_exact, Coloring, Kind};
use peel_lab_core::rng::stream;
use peel_lab_core::stats::{quantile, tv, wilson};
use peel_lab_core::walks::{run_a_core, sum_to_one_residual, WalkKit};
use peel_lab_core::weights::{make_2p_angulation, WeightSequence};

fn quad_kit() -> &'static WalkKit {
    static KIT: OnceLock<WalkKit> = OnceLock::new();
    KIT.get_or_init(|| WalkKit::for_weights(&make_2p_angulation(2).unwrap(), 1500, 4096).unwrap())
}

fn hexa_kit() -> &'static WalkKit {
    static KIT: OnceLock<WalkKit> = OnceLock::new();
    KIT.get_or_init(|| WalkKit::for_weights(&make_2p_angulation(3).unwrap(), 1500, 4096).unwrap())
}

fn kit(hexa: bool) -> &'static WalkKit {
    if hexa { hexa_kit() } else { quad_kit() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_text_round_trip(entries in prop::collection::btree_map(1usize..12, (1i64..50, 1i64..1000), 1..5)) {
        let q = WeightSequence::from_pairs(
            &entries.iter().map(|(k, (a, b))| (*k, BigRational::new((*a).into(), (*b).into()))).collect::<Vec<_>>(),
        ).unwrap();
        let back = WeightSequence::parse(&q.to_text()).unwrap();
        prop_assert_eq!(back, q);
    }

    #[test]
    fn tilde_masses_are_a_law(p in 1usize..300, frac in 0.0f64..1.0, hexa: bool) {
        let k = kit(hexa);
        let pos = 1 + ((p - 1) as f64 * frac) as usize;
        let masses = tilde_masses(&k.nu, &k.h, p, pos);
        prop_assert!(masses.iter().all(|(_, m)| *m >= 0.0));
        let total: f64 = masses.iter().map(|(_, m)| m).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "p {} pos {}: {}", p, pos, total);
    }

    #[test]
    fn sum_to_one_identity(p in 1usize..200, frac in 0.0f64..1.0, hexa: bool) {
        let k = kit(hexa);
        let l = 1 + ((p - 1) as f64 * frac) as usize;
        prop_assert!(sum_to_one_residual(&k.nu, &k.h, p, l).abs() < 1e-10);
    }

    #[test]
    fn finite_step_masses_are_a_law(l in 1usize..1500, hexa: bool) {
        let total: f64 = finite_step_masses(&kit(hexa).disk, l).iter().map(|(_, m)| m).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn statistics_helpers(xs in prop::collection::vec(0.0f64..1.0, 1..20), k in 0usize..100, extra in 0usize..100) {
        let n = k + extra;
        let (lo, hi) = wilson(k, n, 1.96);
        prop_assert!(lo <= hi && lo >= 0.0 && hi <= 1.0);
        if n > 0 {
            let phat = k as f64 / n as f64;
            prop_assert!(lo <= phat + 1e-12 && phat <= hi + 1e-12);
        }
        let total: f64 = xs.iter().sum();
        let p: Vec<f64> = xs.iter().map(|x| x / total).collect();
        let d = tv(&p, &p.iter().rev().copied().collect::<Vec<_>>());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(quantile(&sorted, 0.25) <= quantile(&sorted, 0.75));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn finite_maps_are_valid(seed: u64, l in 1usize..5, hexa: bool) {
        let mut ex = Explorer::new(kit(hexa), Mode::Finite(l), stream(seed, &[1]));
        ex.max_darts = 1 << 20;
        ex.verify = true;
        if ex.fill_all().is_ok() {
            let support = [if hexa { 3 } else { 2 }];
            let rep = ex.map.check_structure(&support);
            prop_assert!(rep.ok, "{:?}", rep.errors);
            prop_assert_eq!(rep.root_degree, Some(2 * l));
            prop_assert!(ex.stats.max_mass_error < 1e-9);
        }
    }

    #[test]
    fn halfplane_balls_are_valid_and_replayable(seed: u64, r in 1u32..5, tilde: bool) {
        let mode = if tilde { Mode::Tilde } else { Mode::General };
        let (a, _) = build_ball(quad_kit(), mode, r, stream(seed, &[2]), 1 << 22).unwrap();
        let (b, _) = build_ball(quad_kit(), mode, r, stream(seed, &[2]), 1 << 22).unwrap();
        prop_assert!(a.check_structure(&[2]).ok);
        prop_assert_eq!(format!("{:?}", a.export()), format!("{:?}", b.export()));
    }

    #[test]
    fn core_runs_end_with_a_core(seed: u64, hexa: bool) {
        let mut rng = stream(seed, &[3]);
        let run = run_a_core(kit(hexa), &mut rng, 1 << 28, false).unwrap();
        prop_assert!(run.core_half_perimeter() >= 1);
    }

    #[test]
    fn simple_step_balance(seed: u64) {
        let esc = Escalation { max_darts: 1 << 24, ..Escalation::default() };
        let (s, r) = sample_simple_step(quad_kit(), stream(seed, &[4]), esc).unwrap();
        prop_assert!(s.exposure >= 1);
        prop_assert!(r >= esc.r0);
        prop_assert_eq!(s.balance(), s.exposure as i64 - 1 - s.gulp_left as i64 - s.gulp_right as i64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn one_arm_is_monotone_in_the_level(seed: u64, kind_index in 0usize..3, levels in prop::collection::vec(0.0f64..1.0, 2..6)) {
        let kind = Kind::ALL[kind_index];
        let (ball, _) = build_ball(quad_kit(), Mode::General, 6, stream(seed, &[5]), 1 << 22).unwrap();
        let color = Coloring::new(&ball, kind, seed, 0);
        let mut levels = levels;
        levels.sort_by(f64::total_cmp);
        let star = arm_thresholds(&ball, &color, &[4]).unwrap()[0];
        let mut prev = false;
        for p in levels {
            let rep = percolate_ball(&ball, &color, p, 4).unwrap();
            prop_assert!(!prev || rep.one_arm);
            prop_assert_eq!(rep.one_arm, p > star);
            prev = rep.one_arm;
        }
    }
}

#[test]
fn threshold_ranges_and_formulas() {
    for p in 2..=6 {
        let rep = thresholds_exact(&make_2p_angulation(p).unwrap()).unwrap();
        let (site, bond, face) = (rep.site.to_f64(), rep.bond.to_f64(), rep.face.to_f64());
        assert!(0.0 < bond && bond < site && site < 1.0, "2p:{p}");
        assert!(0.5 < face && face < 1.0, "2p:{p}");
        let g = rep.gulp.to_f64();
        assert!((bond - (1.0 - 1.0 / (g + 1.0))).abs() < 1e-12);
        assert!((face - 0.5 * (1.0 + 1.0 / (2.0 * g + 1.0))).abs() < 1e-12);
        let (s, nu1) = (rep.s.to_f64(), rep.nu_minus_one.to_f64());
        assert!((site - (1.0 - s * s / (2.0 * nu1 * g))).abs() < 1e-12);
    }
}

#[test]
fn free_law_is_normalized() {
    let law = FreeLaw::new(&quad_kit().disk);
    assert!((law.total() - 1.0).abs() < 1e-9);
    assert!(law.pmf.iter().all(|p| *p >= 0.0));
    assert!(law.prob(1).to_f64().unwrap() > 0.0);
}
