//! Property tests for the algebraic invariants of kernels, contractions and
//! chaos integrals, checked against brute-force loops over grid cells.

use poisson_chaos::chaos::{eval_i1, eval_i2, FourthMomentForm, FourthMomentTerms};
use poisson_chaos::contractions::{contraction_norms, product_expand, star, Contraction, ContractionIndex};
use poisson_chaos::kernels::{l2_norm_sq, lp_norm, symmetrize, GridKernel, Kernel};
use poisson_chaos::mc::ks_distance;
use poisson_chaos::point_process::{measure_of, sample_pattern, Atom, ControlMeasure, PointPattern, PositiveFn, Window};
use proptest::prelude::*;

fn cells(n: usize) -> Vec<Window> {
    (0..n).map(|j| Window::time(j as f64, j as f64 + 1.0).unwrap()).collect()
}

fn grid2(m: &[Vec<f64>]) -> Kernel {
    Kernel::grid(GridKernel::dense2(cells(m.len()), m).unwrap())
}

fn grid1(v: &[f64]) -> Kernel {
    Kernel::grid(GridKernel::arity1(cells(v.len()), v.to_vec()).unwrap())
}

fn symmetric(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    (0..n).map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect()).collect()
}

fn centre(k: usize) -> Atom {
    Atom { u: 1.0, x: k as f64 + 0.5 }
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), n))
}

fn control() -> ControlMeasure {
    ControlMeasure::symmetric_bernoulli()
}

fn pattern(n: usize, seed: u64) -> PointPattern {
    sample_pattern(&control(), &Window::time(0.0, n as f64).unwrap(), seed).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetrize_is_idempotent(m in matrix()) {
        let f = grid2(&m);
        let s = symmetrize(&f).unwrap();
        let ss = symmetrize(&s).unwrap();
        for a in 0..m.len() {
            for b in 0..m.len() {
                let (x, y) = (s.eval2(centre(a), centre(b)).unwrap(), ss.eval2(centre(a), centre(b)).unwrap());
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn symmetrization_contracts_the_norm(m in matrix()) {
        let c = control();
        let f = grid2(&m);
        let s = symmetrize(&f).unwrap();
        prop_assert!(l2_norm_sq(&s, &c).unwrap() <= l2_norm_sq(&f, &c).unwrap() * (1.0 + 1e-14));
    }

    #[test]
    fn cauchy_schwarz_for_n11(m in matrix()) {
        let c = control();
        let f = grid2(&symmetric(&m));
        let n = contraction_norms(&f, &c).unwrap();
        let l2 = l2_norm_sq(&f, &c).unwrap();
        prop_assert!(n.n11 <= l2 * l2 * (1.0 + 1e-12));
    }

    #[test]
    fn star11_is_symmetric(m in matrix()) {
        let c = control();
        let f = grid2(&symmetric(&m));
        let k = star(&f, &f, ContractionIndex::new(1, 1), &c).unwrap();
        let k = k.kernel().unwrap();
        for a in 0..m.len() {
            for b in 0..m.len() {
                prop_assert_eq!(k.eval2(centre(a), centre(b)).unwrap(), k.eval2(centre(b), centre(a)).unwrap());
            }
        }
    }

    #[test]
    fn grid_star_matches_brute_force(m in matrix(), seed in 0u64..1000) {
        let c = control();
        let n = m.len();
        let fm = symmetric(&m);
        // a second kernel on the same cells
        let gm: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| fm[i][j] * (1.0 + ((seed + (i * n + j) as u64) % 7) as f64 * 0.1)).collect()).collect();
        let gm = symmetric(&gm);
        let (f, g) = (grid2(&fm), grid2(&gm));
        let w = vec![1.0; n];

        let s11 = star(&f, &g, ContractionIndex::new(1, 1), &c).unwrap();
        let s21 = star(&f, &g, ContractionIndex::new(2, 1), &c).unwrap();
        let s20 = star(&f, &g, ContractionIndex::new(2, 0), &c).unwrap();
        for a in 0..n {
            let want21: f64 = (0..n).map(|k| fm[a][k] * gm[a][k] * w[k]).sum();
            prop_assert!(close(s21.kernel().unwrap().eval1(centre(a)).unwrap(), want21, 1e-12));
            for b in 0..n {
                let want11: f64 = (0..n).map(|k| fm[a][k] * gm[k][b] * w[k]).sum();
                prop_assert!(close(s11.kernel().unwrap().eval2(centre(a), centre(b)).unwrap(), want11, 1e-12));
                prop_assert!(close(s20.kernel().unwrap().eval2(centre(a), centre(b)).unwrap(), fm[a][b] * gm[a][b], 1e-12));
            }
        }
        let s22 = star(&f, &g, ContractionIndex::new(2, 2), &c).unwrap().scalar().unwrap();
        let want22: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| fm[a][b] * gm[a][b]).sum();
        prop_assert!(close(s22, want22, 1e-12));
        let s10 = star(&f, &g, ContractionIndex::new(1, 0), &c).unwrap();
        let mut want10 = 0.0;
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    want10 += (fm[k][a] * gm[k][b]).powi(2);
                }
            }
        }
        prop_assert!(close(s10.norm_sq(&c).unwrap(), want10, 1e-12));
    }

    #[test]
    fn star20_squares_pointwise(m in matrix()) {
        let c = control();
        let f = grid2(&symmetric(&m));
        let s = star(&f, &f, ContractionIndex::new(2, 0), &c).unwrap();
        let k = s.kernel().unwrap();
        for a in 0..m.len() {
            for b in 0..m.len() {
                let v = f.eval2(centre(a), centre(b)).unwrap();
                prop_assert_eq!(k.eval2(centre(a), centre(b)).unwrap(), v * v);
            }
        }
        let l4 = lp_norm(&f, 4, &c).unwrap();
        prop_assert!(close(l2_norm_sq(k, &c).unwrap(), l4, 1e-12));
    }

    #[test]
    fn grid_i2_matches_pathwise_definition(m in matrix(), seed in 0u64..10_000) {
        let c = control();
        let n = m.len();
        let f = grid2(&m);
        let p = pattern(n, seed);
        let idx: Vec<usize> = p.atoms.iter().map(|a| a.x.floor() as usize).collect();
        let mut pairs = 0.0;
        for (i, &a) in idx.iter().enumerate() {
            for (j, &b) in idx.iter().enumerate() {
                if i != j {
                    pairs += m[a][b];
                }
            }
        }
        let row = |a: usize| (0..n).map(|l| m[a][l] + m[l][a]).sum::<f64>();
        let comp: f64 = idx.iter().map(|&a| row(a)).sum();
        let total: f64 = m.iter().flatten().sum();
        let want = pairs - comp + total;
        prop_assert!(close(eval_i2(&f, &p, &c).unwrap(), want, 1e-12));
    }

    #[test]
    fn eval_i2_is_symmetrization_invariant(m in matrix(), seed in 0u64..10_000) {
        let c = control();
        let f = grid2(&m);
        let p = pattern(m.len(), seed);
        let a = eval_i2(&f, &p, &c).unwrap();
        let b = eval_i2(&symmetrize(&f).unwrap(), &p, &c).unwrap();
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn product_formula_first_order(
        g in prop::collection::vec(-2.0f64..2.0, 5),
        h in prop::collection::vec(-2.0f64..2.0, 5),
        seed in 0u64..10_000,
    ) {
        let c = control();
        let (gk, hk) = (grid1(&g), grid1(&h));
        let p = pattern(5, seed);
        let lhs = eval_i1(&gk, &p, &c).unwrap() * eval_i1(&hk, &p, &c).unwrap();
        let e = product_expand(1, 1, &gk, &hk, &c).unwrap();
        let mut rhs = e.constant;
        for t in &e.terms {
            let k = t.kernel.kernel().unwrap();
            rhs += t.coefficient * if t.order == 2 { eval_i2(k, &p, &c).unwrap() } else { eval_i1(k, &p, &c).unwrap() };
        }
        // constant is ⟨g, h⟩ with unit cell masses
        let inner: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
        prop_assert!(close(e.constant, inner, 1e-12));
        prop_assert!(close(lhs, rhs, 1e-9));
    }

    #[test]
    fn fourth_moment_identity_from_raw_norms(m in matrix()) {
        let c = control();
        let f = grid2(&symmetric(&m));
        let t = FourthMomentTerms::compute(&f, &c).unwrap();
        let norm = |r, l| match star(&f, &f, ContractionIndex::new(r, l), &c).unwrap() {
            Contraction::Kernel(k) => l2_norm_sq(&k, &c).unwrap(),
            other => other.norm_sq(&c).unwrap(),
        };
        let n2 = 2.0 * l2_norm_sq(&f, &c).unwrap();
        let printed = 3.0 * n2 * n2 + 48.0 * norm(1, 1) + 96.0 * norm(1, 0) + 4.0 * norm(2, 1);
        prop_assert!(close(t.value(FourthMomentForm::Printed), printed, 1e-9));
    }

    #[test]
    fn ks_shift_and_scale_invariance(
        xs in prop::collection::vec(-3.0f64..3.0, 20..200),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let base = ks_distance(&xs, 0.0, 1.0).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((ks_distance(&shifted, shift, 1.0).unwrap() - base).abs() < 1e-12);
        let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        prop_assert!((ks_distance(&scaled, 0.0, scale * scale).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn measure_is_additive(split in 0.05f64..0.95, ucut in 0.01f64..0.9) {
        let controls = [
            ControlMeasure::symmetric_bernoulli(),
            ControlMeasure::generalized_gamma(0.5, 1.0, 1e-3).unwrap(),
            ControlMeasure::extended_gamma(PositiveFn::SqrtAffine { offset: 1.0, slope: 1.0 }, 1e-3).unwrap(),
            ControlMeasure::beta(PositiveFn::SqrtFloor { floor: 1.0 }, 1e-3).unwrap(),
        ];
        for c in &controls {
            let whole = Window::new(0.0, 1.0, 0.0, 10.0).unwrap();
            let x = 10.0 * split;
            let left = Window::new(0.0, 1.0, 0.0, x).unwrap();
            let right = Window::new(0.0, 1.0, x, 10.0).unwrap();
            let total = measure_of(c, &whole).unwrap();
            let parts = measure_of(c, &left).unwrap() + measure_of(c, &right).unwrap();
            prop_assert!((total - parts).abs() <= 1e-10 * total, "{:?}: {} vs {}", c.marginal(), total, parts);
            let low = Window::new(0.0, ucut, 0.0, 10.0).unwrap();
            let high = Window::new(ucut, 1.0, 0.0, 10.0).unwrap();
            let parts = measure_of(c, &low).unwrap() + measure_of(c, &high).unwrap();
            prop_assert!((total - parts).abs() <= 1e-10 * total, "{:?}: {} vs {}", c.marginal(), total, parts);
        }
    }
}
