use proptest::prelude::*;
use sasaki_lab::functionals::{functional_i, functional_j, functional_m, linear_l, FunctionalPath};
use sasaki_lab::ma_solver::{s1_to_s2, s2_to_s1};
use sasaki_lab::sampling::{random_potential, seeded_rng, DEFAULT_MARGIN};
use sasaki_lab::{build_model, metric_state, BasicFunction, ModelConfig, SymmetryMode, TransverseModel};
use std::sync::{Arc, OnceLock};

fn model() -> &'static Arc<TransverseModel> {
    static MODEL: OnceLock<Arc<TransverseModel>> = OnceLock::new();
    MODEL.get_or_init(|| {
        build_model(
            ModelConfig::canonical(12, SymmetryMode::Full).with_perturbation(2, 0, 0.04).with_perturbation(3, -2, 0.01),
        )
        .unwrap()
    })
}

fn potential(seed: u64, scale: f64) -> BasicFunction {
    let mut rng = seeded_rng(seed);
    random_potential(model(), &mut rng, DEFAULT_MARGIN).scaled(scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn volume_is_independent_of_potential(seed in any::<u64>(), scale in 0.0..1.0f64) {
        let m = model();
        let st = metric_state(m, potential(seed, scale)).unwrap();
        prop_assert!((st.volume() - m.volume()).abs() / m.volume() < 1e-12);
    }

    #[test]
    fn l_is_a_cocycle(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let m = model();
        let (pa, pb, pc) = (potential(a, 1.0), potential(b, 1.0), potential(c, 1.0));
        let lhs = linear_l(m, &pa, &pb) + linear_l(m, &pb, &pc);
        prop_assert!((lhs - linear_l(m, &pa, &pc)).abs() < 1e-12);
    }

    #[test]
    fn l_shifts_by_constant(a in any::<u64>(), b in any::<u64>(), c in -2.0..2.0f64) {
        let m = model();
        let (pa, pb) = (potential(a, 1.0), potential(b, 1.0));
        let shifted = linear_l(m, &pa, &pb.shifted(c));
        prop_assert!((shifted - linear_l(m, &pa, &pb) - c).abs() < 1e-12);
    }

    #[test]
    fn i_ignores_constants(a in any::<u64>(), b in any::<u64>(), c in -2.0..2.0f64) {
        let m = model();
        let (pa, pb) = (potential(a, 1.0), potential(b, 1.0));
        let i0 = functional_i(m, &pa, &pb).unwrap();
        let i1 = functional_i(m, &pa.shifted(c), &pb).unwrap();
        prop_assert!(i0 >= -1e-14);
        prop_assert!((i0 - i1).abs() < 1e-12);
    }

    /// In complex dimension one the chain `I <= 2(I - J) <= I` closes, so `J = I/2`.
    #[test]
    fn j_is_half_of_i(a in any::<u64>(), b in any::<u64>()) {
        let m = model();
        let (pa, pb) = (potential(a, 1.0), potential(b, 1.0));
        let i = functional_i(m, &pa, &pb).unwrap();
        let j = functional_j(m, &FunctionalPath::linear(&pa, &pb)).unwrap();
        prop_assert!((j - 0.5 * i).abs() < 1e-10);
    }

    #[test]
    fn m_is_path_independent(a in any::<u64>(), b in any::<u64>(), d in any::<u64>()) {
        let m = model();
        let (pa, pb) = (potential(a, 1.0), potential(b, 1.0));
        let straight = functional_m(m, &FunctionalPath::linear(&pa, &pb)).unwrap();
        let bent = functional_m(m, &FunctionalPath::linear(&pa, &pb).with_detour(potential(d, 0.3))).unwrap();
        prop_assert!((straight - bent).abs() < 1e-8);
    }

    #[test]
    fn gauge_shift_round_trips(seed in any::<u64>(), t in 0.05..1.0f64) {
        let m = model();
        let u = potential(seed, 1.0);
        let back = s1_to_s2(m, &s2_to_s1(m, &u, t), t);
        prop_assert!(back.max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn transform_round_trip(seed in any::<u64>()) {
        let m = model();
        let u = potential(seed, 1.0);
        let again = m.project(u.values());
        prop_assert!(again.max_abs_diff(&u) < 1e-12);
    }
}
