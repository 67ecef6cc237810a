//! Pathwise consistency: chaos-kernel statistics against direct time
//! integration of the simulated paths, plus OU variance limits.

use poisson_chaos::hazard::{cumulative_hazard_of, hazard_values, square_integral_of, HazardModel};
use poisson_chaos::kernels::{l2_norm_sq, HazardKernel, Kernel};
use poisson_chaos::ou_levy::{ou_path_values, OuConfig, OuModel};
use poisson_chaos::point_process::ControlMeasure;

/// Composite Simpson rule of `f` on `[a, b]` with `n` (even) panels, using
/// `fa` / `fb` as the one-sided end values.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = fa + fb;
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Sorted breakpoints in `[0, T]`: the ends plus every jump time inside.
fn breakpoints(horizon: f64, jumps: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut b: Vec<f64> = jumps.filter(|x| *x > 0.0 && *x < horizon).collect();
    b.extend([0.0, horizon]);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

#[test]
fn ou_quadratic_statistic_matches_time_integration() {
    for (lambda, horizon, seed) in [(1.0, 20.0, 3u64), (0.5, 15.0, 11), (2.0, 10.0, 29)] {
        let cfg = OuConfig::new(lambda, ControlMeasure::symmetric_bernoulli(), horizon).unwrap();
        let model = OuModel::new(cfg.clone()).unwrap();
        let p = model.sample(seed);
        let ev = model.evaluators().unwrap();
        let q = ev.quadratic(&p.atoms).unwrap();
        let lin = ev.linear(&p.atoms).unwrap();

        let y = |t: f64| ou_path_values(&cfg, &p, &[t]).unwrap()[0];
        let cuts = breakpoints(horizon, p.atoms.iter().map(|a| a.x));
        let (mut int_y, mut int_y2) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            // Y is smooth between jumps: right value at a, left limit at b
            let left = b - 1e-12 * b.abs().max(1.0);
            let n = 2 * ((b - a) / 0.01).ceil().max(1.0) as usize;
            int_y += simpson(y, a, b, y(a), y(left), n);
            int_y2 += simpson(|t| y(t).powi(2), a, b, y(a).powi(2), y(left).powi(2), n);
        }
        let total = horizon.sqrt() * (int_y2 / horizon - 1.0);
        let linear = int_y / horizon.sqrt();
        assert!((total - q.total).abs() <= 1e-6 * total.abs().max(1.0), "λ = {lambda}: {total} vs {}", q.total);
        assert!((linear - lin).abs() <= 1e-6 * linear.abs().max(1.0), "λ = {lambda}: {linear} vs {lin}");
    }
}

#[test]
fn ou_variance_limit_is_two_over_lambda() {
    let c = ControlMeasure::symmetric_bernoulli();
    for lambda in [0.5, 1.0, 2.0] {
        let t = 800.0;
        let v = 2.0 * t * l2_norm_sq(&Kernel::ou_double_h(lambda, t).unwrap(), &c).unwrap();
        // closed form 2/λ − (1 − e^{−2λT})/(λ²T)
        let exact = 2.0 / lambda - (1.0 - (-2.0 * lambda * t).exp()) / (lambda * lambda * t);
        assert!((v - exact).abs() < 1e-9 * exact, "λ = {lambda}: {v} vs {exact}");
        assert!((v * lambda / 2.0 - 1.0).abs() < 0.02);
    }
}

fn hazard_models() -> Vec<HazardModel> {
    vec![
        HazardModel::new(HazardKernel::Rect { tau: 1.0 }, ControlMeasure::dirac(1.0).unwrap(), 30.0).unwrap(),
        HazardModel::new(HazardKernel::Rect { tau: 0.7 }, ControlMeasure::generalized_gamma(0.5, 1.0, 1e-3).unwrap(), 30.0).unwrap(),
        HazardModel::extended_gamma_case(30.0, 1e-4).unwrap(),
        HazardModel::new(HazardKernel::Ou { lambda: 1.5 }, ControlMeasure::dirac(1.0).unwrap(), 30.0).unwrap(),
        HazardModel::new(HazardKernel::DykstraLaud, ControlMeasure::dirac(0.5).unwrap(), 30.0).unwrap(),
    ]
}

#[test]
fn cumulative_and_square_integrals_match_time_integration() {
    for model in hazard_models() {
        let p = model.sampler().unwrap().sample(5);
        let h = |t: f64| hazard_values(&model, &p.atoms, &[t])[0];
        let jumps: Vec<f64> = match model.kernel {
            HazardKernel::Rect { tau } => p.atoms.iter().flat_map(|a| [a.x - tau, a.x + tau]).collect(),
            _ => p.atoms.iter().map(|a| a.x).collect(),
        };
        let cuts = breakpoints(model.horizon, jumps.into_iter());
        let (mut int_h, mut int_h2) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            // interior values avoid the closed/open convention at the jump points
            let (ra, lb) = (a + 1e-12 * a.abs().max(1.0), b - 1e-12 * b.abs().max(1.0));
            let n = 2 * ((b - a) / 0.01).ceil().max(1.0) as usize;
            int_h += simpson(h, a, b, h(ra), h(lb), n);
            int_h2 += simpson(|t| h(t).powi(2), a, b, h(ra).powi(2), h(lb).powi(2), n);
        }
        let got = cumulative_hazard_of(&model, &p.atoms);
        assert!((got - int_h).abs() <= 1e-6 * int_h.abs().max(1.0), "{:?}: {got} vs {int_h}", model.kernel);
        let sq = square_integral_of(&model, &p.atoms);
        assert!((sq - int_h2).abs() <= 1e-6 * int_h2.abs().max(1.0), "{:?}: {sq} vs {int_h2}", model.kernel);
    }
}

#[test]
fn hazard_is_nonnegative_and_cumulative_hazard_nondecreasing() {
    for model in hazard_models() {
        let p = model.sampler().unwrap().sample(17);
        let times: Vec<f64> = (0..=3000).map(|i| i as f64 * model.horizon / 3000.0).collect();
        assert!(hazard_values(&model, &p.atoms, &times).iter().all(|v| *v >= 0.0));
        let mut last = 0.0;
        for k in 1..=30 {
            let m = model.with_horizon(k as f64).unwrap();
            let v = cumulative_hazard_of(&m, &p.atoms);
            assert!(v >= last, "{:?}: H({k}) = {v} < {last}", model.kernel);
            last = v;
        }
    }
}
