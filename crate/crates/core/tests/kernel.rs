use nalgebra::DMatrix;
use proptest::prelude::*;
use scalegp::kernel::{
    eval_composite, eval_k1, eval_k2, kernel_matrix, kernel_matrix_grad, prior_variance, Domain, HyperParams, KernelSpec,
    NUM_HYPER,
};

fn hp_strategy() -> impl Strategy<Value = HyperParams> {
    (prop::array::uniform3(-1.0f64..1.5), prop::array::uniform2(-0.5f64..1.5), 0.0f64..5.0, -3.0f64..0.0)
        .prop_map(|(v, p, se, e)| HyperParams::from_log([v[0], v[1], v[2], p[0], p[1], se, e]))
}

fn grid(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..400.0, n)
}

fn covariance(t: &[f64], hp: &HyperParams, spec: &KernelSpec) -> DMatrix<f64> {
    kernel_matrix(t, t, hp, spec) + DMatrix::identity(t.len(), t.len()) * hp.sigma2_e
}

proptest! {
    #[test]
    fn kernel_is_even_and_bounded(hp in hp_strategy(), tau in -500.0f64..500.0) {
        let spec = KernelSpec::default();
        let k = eval_composite(tau, &hp, &spec);
        prop_assert_eq!(k, eval_composite(-tau, &hp, &spec));
        prop_assert!(k > 0.0);
        prop_assert!(k <= prior_variance(&hp, &spec) * (1.0 + 1e-15));
    }

    #[test]
    fn periodic_terms_repeat(hp in hp_strategy(), tau in 0i32..1000) {
        let spec = KernelSpec::default();
        let t = f64::from(tau);
        prop_assert!((eval_k1(t + 168.0, &hp, &spec) - eval_k1(t, &hp, &spec)).abs() <= 1e-12);
        prop_assert!((eval_k2(t + 24.0, &hp, &spec) - eval_k2(t, &hp, &spec)).abs() <= 1e-12);
    }

    #[test]
    fn regular_grids_give_toeplitz_matrices(hp in hp_strategy(), n in 2usize..40, start in 0i32..100) {
        let spec = KernelSpec::default();
        let t: Vec<f64> = (0..n).map(|i| f64::from(start) + i as f64).collect();
        let k = kernel_matrix(&t, &t, &hp, &spec);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                prop_assert_eq!(k[(i, j)], k[(i + 1, j + 1)]);
            }
        }
    }

    #[test]
    fn covariance_is_positive_semidefinite(hp in hp_strategy(), t in grid(50)) {
        let spec = KernelSpec::default();
        let c = covariance(&t, &hp, &spec);
        let min = c.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8 * prior_variance(&hp, &spec) * 50.0, "min eigenvalue {min}");
    }

    #[test]
    fn matrix_gradient_matches_finite_differences(hp in hp_strategy(), t in grid(6)) {
        let spec = KernelSpec::default();
        let log = hp.to_log();
        let h = 1e-6;
        for which in 0..NUM_HYPER {
            let g = kernel_matrix_grad(&t, &hp, &spec, which, Domain::Log).unwrap();
            let mut up = log;
            let mut down = log;
            up[which] += h;
            down[which] -= h;
            let fd = (covariance(&t, &HyperParams::from_log(up), &spec) - covariance(&t, &HyperParams::from_log(down), &spec)) / (2.0 * h);
            for (a, b) in g.iter().zip(fd.iter()) {
                prop_assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "which {which}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn matrix_matches_elementwise_loop(hp in hp_strategy(), t in grid(5)) {
        let spec = KernelSpec::default();
        let k = kernel_matrix(&t, &t, &hp, &spec);
        for i in 0..5 {
            for j in 0..5 {
                prop_assert_eq!(k[(i, j)], eval_composite(t[i] - t[j], &hp, &spec));
            }
        }
    }
}
