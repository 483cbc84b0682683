use proptest::prelude::*;

use rllc::numerics::{self, Matrix};
use rllc::optim::{FixedLaw, Optimizer, Rllc, RllcConfig};
use rllc::propagators::Propagator;

const EXPRS: [&str; 6] = [
    "M(0.9)",
    "M(0.9)+M(0)",
    "Mk(2,0.6)",
    "CM(0.5,0.3)",
    "M(0.9)+M(0.8)+M(0.7)",
    "M(0.9)+M(0.6)+M(0)",
];

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn gradients(n: usize, steps: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), steps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxed_pinv_solves_regularized_normal_equations(m in matrix(7, 3), g in prop::collection::vec(-1.0..1.0f64, 7), eps in 1e-6..1e-1f64) {
        let x = numerics::relaxed_pinv_apply(&m, &g, eps).unwrap();
        // M^T (M x - g) + eps x = 0
        let mx = m.matvec(&x).unwrap();
        let r: Vec<f64> = mx.iter().zip(&g).map(|(a, b)| a - b).collect();
        let mut res = m.tr_matvec(&r).unwrap();
        for (ri, xi) in res.iter_mut().zip(&x) {
            *ri += eps * xi;
        }
        let scale = 1.0 + m.frobenius_norm().powi(2) * numerics::norm(&x) + numerics::norm(&g) * m.frobenius_norm();
        prop_assert!(numerics::norm(&res) <= 1e-10 * scale);
    }

    #[test]
    fn inverse_of_diagonally_dominant(m in matrix(4, 4)) {
        let shifted: Vec<f64> = (0..16).map(|i| m.as_slice()[i] + if i % 5 == 0 { 10.0 } else { 0.0 }).collect();
        let q = Matrix::new(4, 4, shifted).unwrap();
        let inv = numerics::invert(&q).unwrap();
        let prod = numerics::matrix_multiply(&q, &inv).unwrap();
        prop_assert!(prod.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_preserve_trace_and_frobenius(m in matrix(5, 3)) {
        let gram = m.gram();
        let eig = numerics::symmetric_eigenvalues(&gram).unwrap();
        let trace: f64 = (0..3).map(|i| gram.get(i, i)).sum();
        let sum: f64 = eig.iter().sum();
        let sq: f64 = eig.iter().map(|e| e * e).sum();
        prop_assert!((sum - trace).abs() <= 1e-10 * (1.0 + trace));
        prop_assert!((sq - gram.frobenius_norm().powi(2)).abs() <= 1e-9 * (1.0 + sq));
        prop_assert!(eig.windows(2).all(|w| w[0] <= w[1]));
        let sv = numerics::singular_values(&m);
        let sv_sq: f64 = sv.iter().map(|s| s * s).sum();
        prop_assert!((sv_sq - m.frobenius_norm().powi(2)).abs() <= 1e-9 * (1.0 + sv_sq));
    }

    #[test]
    fn memory_is_linear_in_gradients(
        which in 0..EXPRS.len(),
        gs in gradients(4, 12),
        hs in gradients(4, 12),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let p = Propagator::parse(EXPRS[which]).unwrap();
        let k = p.dim();
        let (mut mg, mut mh, mut mc) = (Matrix::zeros(4, k), Matrix::zeros(4, k), Matrix::zeros(4, k));
        for (g, h) in gs.iter().zip(&hs) {
            let c: Vec<f64> = g.iter().zip(h).map(|(x, y)| a * x + b * y).collect();
            p.advance(&mut mg, g).unwrap();
            p.advance(&mut mh, h).unwrap();
            p.advance(&mut mc, &c).unwrap();
        }
        let combo = Matrix::new(4, k, mg.as_slice().iter().zip(mh.as_slice()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        prop_assert!(mc.sub(&combo).unwrap().max_abs() <= 1e-12 * (1.0 + mc.max_abs()));
    }

    #[test]
    fn fixed_law_delta_is_a_convolution_with_the_abstract_rule(
        which in 0..EXPRS.len(),
        gs in gradients(3, 15),
        law in prop::collection::vec(-1.0..1.0f64, 3),
        lr in 0.01..1.0f64,
    ) {
        let p = Propagator::parse(EXPRS[which]).unwrap();
        let k = p.dim();
        let law = law[..k.min(3)].to_vec();
        prop_assume!(law.len() == k);
        let rules = p.abstract_rules(gs.len()).unwrap();
        // kernel[i] = sum_j L_j (a^T B^i)_j
        let kernel: Vec<f64> = (0..gs.len()).map(|i| numerics::dot(rules.row(i), &law)).collect();
        let mut opt = FixedLaw::new(3, p, law, lr).unwrap();
        for t in 0..gs.len() {
            let delta = opt.step(&gs[t]).unwrap();
            for d in 0..3 {
                let expected: f64 = -lr * (0..=t).map(|i| kernel[i] * gs[t - i][d]).sum::<f64>();
                prop_assert!((delta[d] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn exact_correction_never_opposes_the_gradient(
        which in 0..EXPRS.len(),
        gs in gradients(6, 40),
        c1 in 1e-3..0.3f64,
        c2 in 0.0..0.05f64,
    ) {
        let p = Propagator::parse(EXPRS[which]).unwrap();
        let k = p.dim();
        let mut opt = Rllc::new(6, p, RllcConfig::new(c1, c2, 0.0), vec![1.0; k]).unwrap();
        for g in &gs {
            opt.step(g).unwrap();
            let c = opt.last_correction().unwrap();
            if !c.skipped && c.rank_proxy >= 1e-10 {
                prop_assert!(c.alignment >= -1e-9, "alignment {}", c.alignment);
                prop_assert!((c.alignment - c.projection_sq).abs() <= 1e-8 * (1.0 + c.projection_sq));
            }
        }
    }

    #[test]
    fn expressions_round_trip(which in 0..EXPRS.len()) {
        let p = Propagator::parse(EXPRS[which]).unwrap();
        let again = Propagator::parse(&p.to_expr().unwrap()).unwrap();
        prop_assert_eq!(p.transition(), again.transition());
        prop_assert_eq!(p.injection(), again.injection());
    }
}
