use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scalegp::gp::{default_init, fit_local, nll_and_grad, GpOptions, LocalModel, Proximal, Shard, JITTER};
use scalegp::kernel::{kernel_matrix, prior_variance, HyperParams, KernelSpec, Term};
use scalegp::linalg::spd_factor;
use scalegp::optim::LbfgsConfig;

fn draw_gp(times: &[f64], hp: &HyperParams, spec: &KernelSpec, seed: u64) -> Vec<f64> {
    let mut c = kernel_matrix(times, times, hp, spec);
    for i in 0..times.len() {
        c[(i, i)] += hp.sigma2_e + 1e-10;
    }
    let l = spd_factor(&c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(times.len(), (0..times.len()).map(|_| StandardNormal.sample(&mut rng)));
    (l.lower() * z).iter().copied().collect()
}

#[test]
fn recovers_weekly_variance_from_gp_draw() {
    let spec = KernelSpec::default();
    let truth = HyperParams::new([2.0, 1.0, 0.5, 0.8, 1.2, 400.0, 0.05]).unwrap();
    let times: Vec<f64> = (0..300).map(f64::from).collect();
    let values = draw_gp(&times, &truth, &spec, 3);
    let shard = Shard::new(times, values.clone()).unwrap();
    let init = default_init(&values, truth.sigma2_e);
    let fit = fit_local(&shard, &init, &spec, None, &GpOptions::default()).unwrap();
    let ratio = fit.hp.sigma2_p1 / truth.sigma2_p1;
    assert!((1.0 / 3.0..=3.0).contains(&ratio), "recovered σ²_p1 ratio {ratio}");
}

#[test]
fn prediction_matches_dense_formula() {
    let spec = KernelSpec::default();
    let hp = HyperParams::new([1.3, 0.7, 0.9, 0.6, 1.4, 30.0, 0.2]).unwrap();
    let times: Vec<f64> = (0..30).map(|i| i as f64 * 1.5).collect();
    let values: Vec<f64> = times.iter().map(|t| (t * 0.3).sin() + 0.2 * (t * 0.05).cos()).collect();
    let test = [44.5, 46.0, 51.0, 3.25];
    for toeplitz in [true, false] {
        let opts = GpOptions { toeplitz, ..Default::default() };
        let model = LocalModel::new(Shard::new(times.clone(), values.clone()).unwrap(), hp, spec.clone(), &opts).unwrap();
        let pred = model.predict(&test).unwrap();

        let jitter = JITTER * (prior_variance(&hp, &spec) + hp.sigma2_e);
        let c = kernel_matrix(&times, &times, &hp, &spec) + DMatrix::identity(30, 30) * (hp.sigma2_e + jitter);
        let cinv = c.try_inverse().unwrap();
        let ks = kernel_matrix(&times, &test, &hp, &spec);
        let y = DVector::from_vec(values.clone());
        let mean = ks.transpose() * &cinv * y;
        let cov = kernel_matrix(&test, &test, &hp, &spec) - ks.transpose() * &cinv * &ks;
        for j in 0..test.len() {
            assert!((pred.mean[j] - mean[j]).abs() <= 1e-8 * mean[j].abs().max(1.0));
            assert!((pred.variance[j] - cov[(j, j)]).abs() <= 1e-8 * cov[(j, j)].abs().max(1.0));
        }
    }
}

#[test]
fn optimizer_objective_never_increases() {
    let spec = KernelSpec::default();
    let times: Vec<f64> = (0..120).map(f64::from).collect();
    let values: Vec<f64> = times.iter().map(|t| (t * 0.2618).sin() * 2.0 + (t * 0.037).cos()).collect();
    let shard = Shard::new(times, values.clone()).unwrap();
    let fit = fit_local(&shard, &default_init(&values, 0.05), &spec, None, &GpOptions::default()).unwrap();
    for w in fit.trace.windows(2) {
        assert!(w[1] <= w[0], "objective rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn stationary_point_has_small_gradient() {
    let spec = KernelSpec::new(168.0, 24.0, &[Term::Daily, Term::Se]).unwrap();
    let times: Vec<f64> = (0..60).map(f64::from).collect();
    let values: Vec<f64> = times.iter().map(|t| (t * 0.2618).sin() + 0.3 * (t * 0.11).cos()).collect();
    let shard = Shard::new(times, values.clone()).unwrap();
    let opts = GpOptions {
        optimizer: LbfgsConfig { f_tol: 0.0, max_iter: 1000, ..Default::default() },
        ..Default::default()
    };
    let fit = fit_local(&shard, &default_init(&values, 0.05), &spec, None, &opts).unwrap();
    assert!(fit.grad_norm <= opts.optimizer.grad_tol, "gradient norm {}", fit.grad_norm);
}

#[test]
fn proximal_fit_satisfies_first_order_condition() {
    let spec = KernelSpec::default();
    let times: Vec<f64> = (0..80).map(f64::from).collect();
    let values: Vec<f64> = times.iter().map(|t| (t * 0.2618).sin() * 1.5 + (t * 0.9).cos() * 0.2).collect();
    let shard = Shard::new(times, values.clone()).unwrap();
    let init = default_init(&values, 0.05);
    let free = spec.free_params();
    let prox = Proximal {
        z: init.log_subset(&free),
        zeta: vec![0.1, -0.2, 0.05, 0.0, 0.3, -0.1],
        rho: 1.0,
    };
    let opts = GpOptions {
        optimizer: LbfgsConfig { f_tol: 0.0, max_iter: 1000, ..Default::default() },
        ..Default::default()
    };
    let fit = fit_local(&shard, &init, &spec, Some(&prox), &opts).unwrap();
    let theta = fit.hp.log_subset(&free);
    let (_, g) = nll_and_grad(&shard, &fit.hp, &spec, &opts).unwrap();
    let residual: f64 = free
        .iter()
        .enumerate()
        .map(|(j, h)| g[h.index()] + prox.zeta[j] + prox.rho * (theta[j] - prox.z[j]))
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    assert!(residual <= 1e-4, "first-order residual {residual}");
}

fn hp_strategy() -> impl Strategy<Value = HyperParams> {
    (prop::array::uniform3(-1.0f64..1.5), prop::array::uniform2(-0.5f64..1.5), 1.0f64..5.0, -3.0f64..-0.5)
        .prop_map(|(v, p, se, e)| HyperParams::from_log([v[0], v[1], v[2], p[0], p[1], se, e]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_bounded_by_prior(hp in hp_strategy(), n in 1usize..30, t in 0.0f64..60.0) {
        let spec = KernelSpec::default();
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 2.0).collect();
        let values: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        let model = LocalModel::new(Shard::new(times, values).unwrap(), hp, spec.clone(), &GpOptions::default()).unwrap();
        let p = model.predict(&[t]).unwrap();
        prop_assert!(p.variance[0] <= prior_variance(&hp, &spec) + hp.sigma2_e + 1e-8);
        prop_assert!(p.variance[0] > 0.0);
    }

    #[test]
    fn more_data_never_raises_variance(hp in hp_strategy(), n in 1usize..25, t in 0.0f64..60.0, extra in 50.0f64..80.0) {
        let spec = KernelSpec::default();
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 2.0).collect();
        let values: Vec<f64> = times.iter().map(|t| t.cos()).collect();
        let opts = GpOptions { toeplitz: false, ..Default::default() };
        let small = LocalModel::new(Shard::new(times.clone(), values.clone()).unwrap(), hp, spec.clone(), &opts).unwrap();
        let shard = Shard::new(times, values).unwrap().extended(&[extra], &[0.5]).unwrap();
        let large = LocalModel::new(shard, hp, spec, &opts).unwrap();
        let a = small.predict(&[t]).unwrap().variance[0];
        let b = large.predict(&[t]).unwrap().variance[0];
        prop_assert!(b <= a + 1e-8, "{b} > {a}");
    }
}
