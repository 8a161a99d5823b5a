use ndarray::Array1;
use proptest::prelude::*;
use qpreduce::decay::column_profile;
use qpreduce::family::projector_matrices;
use qpreduce::flows::{diffeo_operator, integrate_flow, invert_diffeo, transport_matrices, Diffeo, FlowScheme};
use qpreduce::lattice::PhaseLattice;
use qpreduce::linalg::{max_abs, CMat};
use qpreduce::symbol::make_hilbert;
use qpreduce::C64;

fn displacement(a: f64, b: f64, k: i64) -> Diffeo {
    displacement_on(a, b, k, 64)
}

fn displacement_on(a: f64, b: f64, k: i64, n_x: usize) -> Diffeo {
    let lat = PhaseLattice::identity(1, 4);
    Diffeo::from_fn(&lat, n_x, |th, x| a * (k as f64 * x + th[0]).sin() + b * (x - th[0]).cos()).unwrap()
}

fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transport_flow_preserves_l2(a in -0.1..0.1f64, b in -0.1..0.1f64, k in 1i64..3, p in 0usize..4,
                                   u in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 33)) {
        let xm = 16;
        let beta = displacement(a, b, k);
        let gen = |t: f64, p: usize| Ok(transport_matrices(&beta, t, xm)?.swap_remove(p));
        let flow = integrate_flow(&gen, 4, 2 * xm + 1, 8, FlowScheme::Magnus4).unwrap();
        let u: Array1<C64> = u.into_iter().map(|(x, y)| C64::new(x, y)).collect();
        let ratio = norm(&flow.forward[p].dot(&u)) / norm(&u);
        prop_assert!((ratio - 1.0).abs() <= 1e-8, "{}", ratio);
        prop_assert!(flow.inverse_defect <= 1e-8);
    }
}

fn inner_coupling(m: &CMat, xm: usize) -> f64 {
    column_profile(std::slice::from_ref(m), xm, (16, 32), &|_, _| true).iter().map(|p| p.1).fold(0.0, f64::max)
}

#[test]
fn conjugated_hilbert_transform_differs_by_a_smoothing_operator() {
    let xm = 128;
    let lat = PhaseLattice::identity(1, 4);
    let h = make_hilbert(1).to_matrix(&lat, 0, xm).unwrap();
    // the inverse is only as smooth as its interpolant: sample it finely
    for d in [displacement_on(0.1, 0.05, 1, 128), displacement_on(0.05, 0.1, 2, 128)] {
        let inv = invert_diffeo(&d).unwrap();
        for p in 0..4 {
            let phi = diffeo_operator(&d, p, xm);
            let phi_inv = diffeo_operator(&inv, p, xm);
            let defect = phi.dot(&h).dot(&phi_inv) - &h;
            // the defect decays to roundoff well inside the band
            assert!(max_abs(&defect) > 1e-3);
            assert!(inner_coupling(&defect, xm) < 1e-10, "{}", inner_coupling(&defect, xm));
        }
    }
}

#[test]
fn diffeomorphisms_nearly_commute_with_the_projectors() {
    let xm = 64;
    let (pp, pm) = projector_matrices(xm);
    let d = displacement(0.1, 0.05, 1);
    for p in 0..4 {
        let phi = diffeo_operator(&d, p, xm);
        for proj in [&pp, &pm] {
            let c = phi.dot(proj) - proj.dot(&phi);
            assert!(max_abs(&c) > 1e-3);
            assert!(inner_coupling(&c, xm) < 1e-12);
        }
    }
}
