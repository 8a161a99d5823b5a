use ndarray::Array1;
use proptest::prelude::*;
use qpreduce::decay::{column_profile, fit_family};
use qpreduce::grid::FourierState;
use qpreduce::lattice::PhaseLattice;
use qpreduce::linalg::{adjoint, max_abs, CMat};
use qpreduce::mult::{CutoffKind, Mult};
use qpreduce::symbol::{adjoint_expansion, compose_expansion, op_apply, ClosedSymbol, Symbol, Term, TrigPoly};
use qpreduce::C64;

const MODES: [[i64; 2]; 4] = [[0, 0], [1, 0], [0, 1], [1, -1]];

fn poly_strategy(kmax: i64) -> impl Strategy<Value = TrigPoly> {
    prop::collection::vec((0..MODES.len(), -kmax..=kmax, -1.0..1.0f64, -1.0..1.0f64), 1..5).prop_map(|terms| {
        let mut p = TrigPoly::zero(2);
        for (m, k, re, im) in terms {
            p.add_mode(MODES[m].to_vec(), k, C64::new(re, im));
        }
        p
    })
}

fn mult_strategy() -> impl Strategy<Value = (Mult, f64)> {
    prop_oneof![
        Just((Mult::Xi, 1.0)),
        Just((Mult::abs_d(0.5), 0.5)),
        Just((Mult::JapPow { alpha: -1.0 }, -1.0)),
        Just((Mult::cutoff(CutoffKind::Minus), 0.0)),
        (-2.0..2.0f64).prop_map(|c| (Mult::constant(c), 0.0)),
    ]
}

fn symbol_strategy() -> impl Strategy<Value = Symbol> {
    prop::collection::vec((poly_strategy(6), mult_strategy()), 1..4).prop_map(|terms| {
        let order = terms.iter().map(|t| t.1 .1).fold(f64::NEG_INFINITY, f64::max);
        ClosedSymbol::new(2, order, terms.into_iter().map(|(coef, (mult, _))| Term { coef, mult }).collect()).into()
    })
}

fn state_strategy(xi_max: usize) -> impl Strategy<Value = FourierState> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2 * xi_max + 1).prop_map(move |v| {
        let c: Array1<C64> = v.into_iter().map(|(a, b)| C64::new(a, b)).collect();
        FourierState::from_coeffs(xi_max, c).unwrap()
    })
}

fn lat() -> PhaseLattice {
    PhaseLattice::identity(2, 8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn op_apply_is_the_matrix_action(a in symbol_strategy(), u in state_strategy(24), p in 0usize..64) {
        let m = a.to_matrix(&lat(), p, 24).unwrap();
        let v = op_apply(&a, &u, &lat(), p).unwrap();
        let scale = 1.0 + max_abs(&m);
        for (x, y) in v.coeffs.iter().zip(m.dot(&u.coeffs).iter()) {
            prop_assert!((x - y).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn declared_order_adds(a in symbol_strategy(), b in symbol_strategy(), n in 1usize..4) {
        let c = compose_expansion(&a, &b, n).unwrap();
        prop_assert_eq!(c.order(), a.order() + b.order());
        prop_assert_eq!(adjoint_expansion(&a, n).unwrap().order(), a.order());
    }

    #[test]
    fn real_functions_are_self_adjoint_exactly(p in poly_strategy(4)) {
        let real = p.add(&p.conj());
        let a: Symbol = ClosedSymbol::function(real).into();
        let m = a.to_matrix(&lat(), 3, 16).unwrap();
        prop_assert!(max_abs(&(&m - &adjoint(&m))) < 1e-14);
    }
}

/// `<xi>^{m - 0.1} + 0.5 <xi>^{m - 0.6}`: every xi-derivative has exact order.
fn generic(coef: TrigPoly, m: f64) -> Symbol {
    let mult = Mult::Sum {
        terms: vec![
            Mult::JapPow { alpha: m - 0.1 },
            Mult::Prod { factors: vec![Mult::constant(0.5), Mult::JapPow { alpha: m - 0.6 }] },
        ],
    };
    ClosedSymbol::new(2, m, vec![Term { coef, mult }]).into()
}

fn wave(l: [i64; 2], k: i64, c: C64) -> TrigPoly {
    let mut p = TrigPoly::zero(2);
    p.add_mode(l.to_vec(), k, c);
    p
}

fn pair() -> (Symbol, Symbol, f64, f64) {
    let mut pa = wave([1, 0], 1, C64::new(0.7, 0.1));
    pa.add_mode(vec![0, 0], -2, C64::new(0.3, 0.0));
    let mut pb = wave([0, 1], -1, C64::new(0.5, -0.4));
    pb.add_mode(vec![1, -1], 2, C64::new(0.2, 0.2));
    (generic(pa, 0.5), generic(pb, -1.0), 0.5, -1.0)
}

#[test]
fn composition_residual_has_the_predicted_order() {
    let xm = 96;
    let (a, b, ma, mb) = pair();
    let exact = a.to_matrix(&lat(), 5, xm).unwrap().dot(&b.to_matrix(&lat(), 5, xm).unwrap());
    for n in 1..=3 {
        let r = &exact - &compose_expansion(&a, &b, n).unwrap().to_matrix(&lat(), 5, xm).unwrap();
        let prof = column_profile(std::slice::from_ref(&r), xm, (24, 48), &|_, _| true);
        let weighted: Vec<f64> = prof.iter().map(|(xi, v)| v * (*xi as f64).powf(n as f64 - ma - mb)).collect();
        let (lo, hi) = weighted.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        // bounded: the weighted residual neither grows nor collapses across the window
        assert!(hi / lo < 2.0, "n = {n}: {lo:.3e} .. {hi:.3e}");
    }
}

#[test]
fn double_adjoint_returns_the_symbol_to_expansion_order() {
    let xm = 96;
    let (a, _, ma, _) = pair();
    let am = a.to_matrix(&lat(), 2, xm).unwrap();
    for n in 1..=3 {
        let twice = adjoint_expansion(&adjoint_expansion(&a, n).unwrap(), n).unwrap();
        let d = &am - &twice.to_matrix(&lat(), 2, xm).unwrap();
        let fit = fit_family(&[d], xm, (24, 48), max_abs(&am));
        // one term is exact here: conj(conj(a)) = a
        assert!(fit.slope <= ma - n as f64 + 0.2, "n = {n}: slope {}", fit.slope);
    }
}

#[test]
fn multiplier_times_self_adjoint_loses_one_order_of_symmetry() {
    // phi(xi) a with real phi of order 1/2 and real a of order 0
    let xm = 96;
    let mut coef = wave([1, 0], 2, C64::new(0.5, 0.0));
    coef.add_mode(vec![1, 0], -2, C64::new(0.5, 0.0));
    let mult = Mult::Sum { terms: vec![Mult::JapPow { alpha: 0.5 }, Mult::Prod { factors: vec![Mult::constant(0.3), Mult::Xi, Mult::JapPow { alpha: -0.5 }] }] };
    let s: Symbol = ClosedSymbol::new(2, 0.5, vec![Term { coef, mult }]).into();
    let m = s.to_matrix(&lat(), 1, xm).unwrap();
    let defect = &m - &adjoint(&m);
    let fit = fit_family(&[defect], xm, (24, 48), max_abs(&m));
    assert!((fit.slope - (0.5 - 1.0)).abs() < 0.15, "{}", fit.slope);
}

#[test]
fn commutator_with_eventually_constant_multiplier_vanishes_at_high_frequency() {
    let xm = 64;
    let g: Symbol = ClosedSymbol::multiplier(2, 0.0, Mult::cutoff(CutoffKind::Space)).into();
    let mut coef = wave([1, 0], 3, C64::new(0.4, 0.2));
    coef.add_mode(vec![0, 1], -1, C64::new(-0.3, 0.0));
    let a: Symbol = ClosedSymbol::product(coef, 1.0, Mult::Xi).into();
    let (gm, am): (CMat, CMat) = (g.to_matrix(&lat(), 0, xm).unwrap(), a.to_matrix(&lat(), 0, xm).unwrap());
    let c = gm.dot(&am) - am.dot(&gm);
    let prof = column_profile(&[c], xm, (16, 32), &|_, _| true);
    assert!(prof.iter().all(|(_, v)| *v == 0.0), "{prof:?}");
}
