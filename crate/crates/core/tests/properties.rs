use fracinv_core::forward::{ForwardProblem, Potential, DEFAULT_KERNEL_TOLERANCE};
use fracinv_core::mesh::{antipodal_set, distance_matrix, observability_constant, DiscreteManifold, ObservationSet};
use fracinv_core::spectral::{mass_norm, SpectralDecomposition, DEFAULT_CLUSTER_TOLERANCE};
use num_complex::Complex64;
use proptest::prelude::*;

fn graph(n: usize, extra: usize, seed: u64) -> (DiscreteManifold, SpectralDecomposition) {
    let m = DiscreteManifold::random_graph(n, extra, seed).unwrap().perturbed(0.3, seed).unwrap();
    let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
    (m, s)
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn triangle_inequality(n in 5usize..25, extra in 0usize..20, seed in 0u64..1000) {
        let m = DiscreteManifold::random_graph(n, extra, seed).unwrap();
        let d = distance_matrix(&m).unwrap();
        for x in 0..n {
            prop_assert_eq!(d[(x, x)], 0.0);
            for y in 0..n {
                prop_assert_eq!(d[(x, y)], d[(y, x)]);
                for z in 0..n {
                    prop_assert!(d[(x, z)] <= d[(x, y)] + d[(y, z)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn antipodes_are_farthest(n in 5usize..25, seed in 0u64..1000, p in 0usize..5) {
        let m = DiscreteManifold::random_graph(n, 4, seed).unwrap();
        let d = distance_matrix(&m).unwrap();
        let a = antipodal_set(&m, p, 0.0).unwrap();
        let far = (0..n).map(|q| d[(p, q)]).fold(0.0, f64::max);
        prop_assert!(!a.is_empty());
        prop_assert!(a.iter().all(|&q| d[(p, q)] == far));
    }

    #[test]
    fn completeness_and_semigroup(seed in 0u64..1000, f in values(18), t in 0.01f64..2.0, s in 0.01f64..2.0) {
        let (_, sp) = graph(18, 10, seed);
        let mut sum = [0.0; 18];
        for k in 0..sp.clusters().len() {
            let p = sp.project(&f, k).unwrap();
            sum.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        let d: Vec<f64> = sum.iter().zip(&f).map(|(a, b)| a - b).collect();
        prop_assert!(mass_norm(sp.mass(), &d) < 1e-10 * (1.0 + mass_norm(sp.mass(), &f)));
        let a = sp.heat_apply(s, &sp.heat_apply(t, &f).unwrap()).unwrap();
        let b = sp.heat_apply(t + s, &f).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn heat_is_linfty_contraction(seed in 0u64..1000, f in values(16), t in 0.0f64..5.0) {
        let (_, sp) = graph(16, 8, seed);
        let h = sp.heat_apply(t, &f).unwrap();
        let before = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let after = h.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn fractional_power_commutes_with_stencil(seed in 0u64..1000, f in values(16), alpha in 0.05f64..0.95) {
        let (m, sp) = graph(16, 8, seed);
        let a = sp.frac_power_apply(alpha, &m.apply_neg_laplacian(&f)).unwrap();
        let b = m.apply_neg_laplacian(&sp.frac_power_apply(alpha, &f).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn canonical_solve_is_linear(seed in 0u64..1000, f in values(16), g in values(16), c in -2.0f64..2.0) {
        let (_, sp) = graph(16, 8, seed);
        let pot: Vec<f64> = (0..16).map(|x| 0.5 + 0.1 * x as f64).collect();
        let p = ForwardProblem::new(&sp, Potential::real(pot).unwrap(), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let to_c = |v: &[f64]| v.iter().map(|&x| Complex64::from(x)).collect::<Vec<_>>();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + c * b).collect();
        let uf = p.solve_canonical(&to_c(&f)).unwrap().u;
        let ug = p.solve_canonical(&to_c(&g)).unwrap().u;
        let uc = p.solve_canonical(&to_c(&combo)).unwrap().u;
        for i in 0..16 {
            prop_assert!((uc[i] - (uf[i] + ug[i] * c)).norm() < 1e-10);
        }
    }

    #[test]
    fn observability_at_least_one(seed in 0u64..1000, size in 1usize..17) {
        let (_, sp) = graph(18, 10, seed);
        let obs = ObservationSet::new((0..size).collect(), 18).unwrap();
        prop_assert!(observability_constant(obs.indices(), &sp).0 >= 1.0 - 1e-12);
    }
}
