use proptest::prelude::*;
use qpreduce::divisors::{
    average_phi, average_phi_x, check_diophantine, check_melnikov, invert_dx, invert_mixed, invert_omega_dphi, omega_dphi,
    FrequencyVector,
};
use qpreduce::lattice::PhaseLattice;
use qpreduce::linalg::{max_abs, CMat};
use qpreduce::mult::Mult;
use qpreduce::symbol::{ClosedSymbol, Symbol, TrigPoly};
use qpreduce::C64;

fn golden() -> FrequencyVector {
    FrequencyVector::new(vec![1.0, (5f64.sqrt() - 1.0) / 2.0], 0.1, 2.0).unwrap()
}

fn lat() -> PhaseLattice {
    PhaseLattice::identity(2, 16)
}

fn symbol_strategy() -> impl Strategy<Value = Symbol> {
    prop::collection::vec((-3i64..=3, -3i64..=3, -3i64..=3, -1.0..1.0f64, -1.0..1.0f64), 1..6).prop_map(|modes| {
        let mut p = TrigPoly::zero(2);
        for (l1, l2, k, re, im) in modes {
            p.add_mode(vec![l1, l2], k, C64::new(re, im));
        }
        ClosedSymbol::product(p, 0.5, Mult::abs_d(0.5)).into()
    })
}

fn mat(a: &Symbol, p: usize) -> CMat {
    a.to_matrix(&lat(), p, 12).unwrap()
}

fn diff(a: &Symbol, b: &Symbol, p: usize) -> f64 {
    max_abs(&(&mat(a, p) - &mat(b, p)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverses_reproduce_data_minus_kernel(a in symbol_strategy(), p in 0usize..256) {
        let f = golden();
        let scale = 1.0 + max_abs(&mat(&a, p));

        // d_x inverse: the x-mean (diagonal entries) is the kernel
        let back = invert_dx(&a).dx(1);
        let mut want = mat(&a, p);
        for i in 0..want.nrows() {
            want[[i, i]] = C64::new(0.0, 0.0);
        }
        prop_assert!(max_abs(&(&mat(&back, p) - &want)) <= 1e-12 * scale);

        let g = invert_omega_dphi(&a, &f).unwrap();
        let want = a.sub(&average_phi(&a)).unwrap();
        prop_assert!(diff(&omega_dphi(&g, &f), &want, p) <= 1e-12 * scale);
        // minimal norm: no angle mean in the solution
        prop_assert!(max_abs(&mat(&average_phi(&g), p)) <= 1e-14 * scale);

        let lambda = 2f64.sqrt();
        let h = invert_mixed(&a, &f, lambda).unwrap();
        let fwd = omega_dphi(&h, &f).add(&h.dx(1).scale(C64::new(lambda, 0.0))).unwrap();
        let want = a.sub(&average_phi_x(&a)).unwrap();
        prop_assert!(diff(&fwd, &want, p) <= 1e-12 * scale);
        prop_assert!(max_abs(&mat(&average_phi_x(&h), p)) <= 1e-14 * scale);
    }

    #[test]
    fn diophantine_margin_is_the_lattice_minimum(w in 0.2..0.9f64, gamma in 0.01..0.5f64, bound in 1usize..12) {
        let f = FrequencyVector::new(vec![1.0, w], gamma, 2.0).unwrap();
        let r = check_diophantine(&f, bound);
        let b = bound as i64;
        let mut min = f64::INFINITY;
        for l1 in -b..=b {
            for l2 in -b..=b {
                if (l1, l2) != (0, 0) {
                    min = min.min((l1 as f64 + w * l2 as f64).abs() * ((l1 * l1 + l2 * l2) as f64) / gamma);
                }
            }
        }
        prop_assert!((r.worst_margin - min).abs() <= 1e-12 * min.max(1e-300));
        prop_assert_eq!(r.passed, r.worst_margin >= 1.0);
        prop_assert!((f.dot(&r.worst_ell).abs() * (r.worst_ell.iter().map(|c| c * c).sum::<i64>() as f64) / gamma - r.worst_margin).abs() <= 1e-12 * min.max(1e-300));
    }

    #[test]
    fn melnikov_witness_attains_the_margin(lambda in -3.0..3.0f64, bound in 1usize..8, j_max in 1usize..8) {
        let f = golden();
        let r = check_melnikov(&f, lambda, bound, j_max);
        let l = &r.worst_ell;
        let j = r.worst_j.unwrap();
        let bracket = (1.0 + l.iter().map(|c| (c * c) as f64).sum::<f64>()).powf(1.0);
        let m = (f.dot(l) + lambda * j as f64).abs() * bracket / f.gamma;
        prop_assert!((m - r.worst_margin).abs() <= 1e-12 * m.max(1.0));
        prop_assert!(j.unsigned_abs() as usize <= j_max);
        prop_assert!(l.iter().all(|c| c.unsigned_abs() as usize <= bound));
    }
}

#[test]
fn constructed_resonances_name_their_witness() {
    let r = check_diophantine(&FrequencyVector::new(vec![1.0, 0.5], 0.1, 2.0).unwrap(), 10);
    assert!(!r.passed);
    assert!(r.worst_ell == [1, -2] || r.worst_ell == [-1, 2]);
    let f = golden();
    for lam in [-1.0, -f.omega[1]] {
        let r = check_melnikov(&f, lam, 6, 6);
        assert_eq!(r.worst_margin, 0.0);
        assert_eq!(r.worst_ell.iter().map(|c| c.abs()).sum::<i64>(), 1);
        assert_eq!(r.worst_j.map(i64::abs), Some(1));
    }
}
