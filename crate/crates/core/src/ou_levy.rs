//! Ornstein–Uhlenbeck Lévy process `Y_t = √(2λ) ∫_{-∞}^t ∫ u e^{-λ(t-x)} N̂(du, dx)`
//! and its linear and quadratic time averages.

use serde::{Deserialize, Serialize};

use crate::chaos::{I1Evaluator, I2Evaluator};
use crate::error::{invalid, Error, Result};
use crate::kernels::{lp_norm, Kernel, OU_DEPTH};
use crate::point_process::{Atom, ControlMeasure, PatternSampler, PointPattern, TimeSupport, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    pub lambda: f64,
    pub control: ControlMeasure,
    pub horizon: f64,
    /// atoms with `x < -depth` are dropped
    pub depth: f64,
}

impl OuConfig {
    pub fn new(lambda: f64, control: ControlMeasure, horizon: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("{lambda} must be positive")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("{horizon} must be positive")));
        }
        if !control.is_homogeneous() || control.time_support() != TimeSupport::Line {
            return Err(invalid("control", "the OU process needs a homogeneous control on the whole line"));
        }
        let k2 = control.u_moment(2, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
        if (k2 - 1.0).abs() > 1e-10 {
            return Err(Error::MomentCondition(format!("∫u²ν(du) = {k2}, must be 1")));
        }
        let k3 = control.u_abs_moment(3, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
        if !k3.is_finite() {
            return Err(Error::MomentCondition("∫|u|³ν(du) is infinite".into()));
        }
        Ok(Self {
            lambda,
            control,
            horizon,
            depth: OU_DEPTH / lambda,
        })
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.lambda, self.control.clone(), horizon)
    }

    pub fn window(&self) -> Window {
        Window::time(-self.depth, self.horizon).expect("validated horizon")
    }

    pub fn sampler(&self) -> Result<PatternSampler> {
        PatternSampler::new(&self.control, &self.window())
    }

    fn moment(&self, k: u32) -> Result<f64> {
        self.control.u_moment(k, 0.0, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// `c_ν² = ∫ u⁴ ν(du)`
    pub fn c_nu_sq(&self) -> Result<f64> {
        self.moment(4)
    }

    /// Quadratic functionals need `∫ u^j ν` finite for j = 2, 4, 6.
    pub fn check_quadratic_moments(&self) -> Result<()> {
        for j in [2, 4, 6] {
            let m = self.control.u_abs_moment(j, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
            if !m.is_finite() {
                return Err(Error::MomentCondition(format!("∫|u|^{j}ν(du) is infinite")));
            }
        }
        Ok(())
    }

    fn drift(&self) -> Result<f64> {
        Ok(self.moment(1)? / self.lambda)
    }
}

/// Finite-`T` variance of `T^{-1/2} ∫_0^T Y_t dt`: `2/λ - 2(1 - e^{-λT})/(λ²T)`.
pub fn linear_variance(lambda: f64, horizon: f64) -> f64 {
    let lt = lambda * horizon;
    2.0 / lambda + 2.0 * (-lt).exp_m1() / (lambda * lt)
}

/// `√(2λ) [Σ_{x_i <= t} u_i e^{-λ(t-x_i)} - K1 ∫_{-L}^t e^{-λ(t-x)} dx]` at each time (sorted ascending).
pub fn ou_path_values(cfg: &OuConfig, pattern: &PointPattern, times: &[f64]) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("times", "must be sorted ascending"));
    }
    let kappa = cfg.drift()?;
    let events = sorted_events(cfg, pattern);
    let lam = cfg.lambda;
    let amp = (2.0 * lam).sqrt();
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut s = 0.0;
    let mut at = -cfg.depth;
    for &t in times {
        if t < -cfg.depth {
            out.push(0.0);
            continue;
        }
        while next < events.len() && events[next].1 <= t {
            let (u, x) = events[next];
            s = s * (-lam * (x - at)).exp() + u;
            at = x;
            next += 1;
        }
        let st = s * (-lam * (t - at)).exp();
        out.push(amp * (st + kappa * (-lam * (t + cfg.depth)).exp_m1()));
    }
    Ok(out)
}

pub fn simulate_ou_path(cfg: &OuConfig, seed: u64, times: &[f64]) -> Result<Vec<f64>> {
    let pattern = cfg.sampler()?.sample(seed);
    ou_path_values(cfg, &pattern, times)
}

/// `(∫_0^T Y_t dt, ∫_0^T Y_t² dt)`, integrated exactly between consecutive atoms.
pub fn ou_path_integrals(cfg: &OuConfig, pattern: &PointPattern) -> Result<(f64, f64)> {
    let kappa = cfg.drift()?;
    let lam = cfg.lambda;
    let events = sorted_events(cfg, pattern);
    let mut s = 0.0;
    let mut at = -cfg.depth;
    let mut first = 0;
    while first < events.len() && events[first].1 <= 0.0 {
        let (u, x) = events[first];
        s = s * (-lam * (x - at)).exp() + u;
        at = x;
        first += 1;
    }
    s *= (-lam * (0.0 - at)).exp();
    let mut t0 = 0.0;
    let (mut lin, mut quad) = (0.0, 0.0);
    let mut segment = |s0: f64, a: f64, b: f64| {
        // Y(t)/√(2λ) = c e^{-λ(t-a)} - κ on [a, b)
        let d = b - a;
        let c = s0 + kappa * (-lam * (a + cfg.depth)).exp();
        let e1 = -(-lam * d).exp_m1() / lam;
        let e2 = -(-2.0 * lam * d).exp_m1() / (2.0 * lam);
        lin += (2.0 * lam).sqrt() * (c * e1 - kappa * d);
        quad += 2.0 * lam * (c * c * e2 - 2.0 * c * kappa * e1 + kappa * kappa * d);
    };
    for &(u, x) in &events[first..] {
        if x > cfg.horizon {
            break;
        }
        segment(s, t0, x);
        s = s * (-lam * (x - t0)).exp() + u;
        t0 = x;
    }
    segment(s, t0, cfg.horizon);
    Ok((lin, quad))
}

fn sorted_events(cfg: &OuConfig, pattern: &PointPattern) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = pattern
        .atoms
        .iter()
        .filter(|a| a.x >= -cfg.depth && a.x <= cfg.horizon)
        .map(|a| (a.u, a.x))
        .collect();
    ev.sort_by(|a, b| a.1.total_cmp(&b.1));
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticStat {
    pub k2: f64,
    pub k1: f64,
    pub total: f64,
}

/// Kernels of the linear and quadratic statistics at one horizon.
#[derive(Debug, Clone)]
pub struct OuModel {
    pub cfg: OuConfig,
    pub sampler: PatternSampler,
    /// `(2λ/T)^{1/2} u ∫_{x∨0}^T e^{-λ(t-x)} dt`
    pub single: Kernel,
    /// `√T H_{λ,T}`
    pub double: Kernel,
    /// `√T u² H*_{λ,T}`
    pub diag: Kernel,
}

impl OuModel {
    pub fn new(cfg: OuConfig) -> Result<Self> {
        let root_t = cfg.horizon.sqrt();
        Ok(Self {
            sampler: cfg.sampler()?,
            single: Kernel::ou_single(cfg.lambda, cfg.horizon)?,
            double: Kernel::ou_double_h(cfg.lambda, cfg.horizon)?.scaled(root_t),
            diag: Kernel::ou_diag_hstar(cfg.lambda, cfg.horizon)?.scaled(root_t),
            cfg,
        })
    }

    pub fn evaluators(&self) -> Result<OuEvaluators<'_>> {
        self.linear_only()?.with_quadratic(self)
    }

    pub fn linear_only(&self) -> Result<OuEvaluators<'_>> {
        let w = self.cfg.window();
        Ok(OuEvaluators {
            horizon: self.cfg.horizon,
            linear: I1Evaluator::new(&self.single, &self.cfg.control, &w)?,
            quadratic: None,
        })
    }

    pub fn sample(&self, seed: u64) -> PointPattern {
        self.sampler.sample(seed)
    }

    /// `(Var K2, Var K1)` at this horizon: `2‖√T H‖²` and `‖√T u² H*‖²`.
    pub fn quadratic_variances(&self) -> Result<(f64, f64)> {
        let c = &self.cfg.control;
        Ok((2.0 * lp_norm(&self.double, 2, c)?, lp_norm(&self.diag, 2, c)?))
    }
}

pub struct OuEvaluators<'a> {
    horizon: f64,
    linear: I1Evaluator<'a>,
    quadratic: Option<(I2Evaluator<'a>, I1Evaluator<'a>)>,
}

impl<'a> OuEvaluators<'a> {
    fn with_quadratic(mut self, model: &'a OuModel) -> Result<Self> {
        model.cfg.check_quadratic_moments()?;
        let w = model.cfg.window();
        let c = &model.cfg.control;
        self.quadratic = Some((I2Evaluator::new(&model.double, c, &w)?, I1Evaluator::new(&model.diag, c, &w)?));
        Ok(self)
    }

    /// `T^{-1/2} ∫_0^T Y_t dt`
    pub fn linear(&self, atoms: &[Atom]) -> Result<f64> {
        self.linear.eval(atoms)
    }

    /// `K2 = I_2(√T H)`, `K1 = I_1(√T u² H*)`, `total = √T (T^{-1} ∫_0^T Y² dt - 1)`
    pub fn quadratic(&self, atoms: &[Atom]) -> Result<QuadraticStat> {
        let (q2, q1) = self
            .quadratic
            .as_ref()
            .ok_or_else(|| Error::Unsupported("evaluators were built for the linear statistic only".into()))?;
        let k2 = q2.eval(atoms)?;
        let k1 = q1.eval(atoms)?;
        Ok(QuadraticStat { k2, k1, total: k2 + k1 })
    }

    /// `√T (T^{-1} ∫ (Y - Ȳ)² dt - 1) = total - T^{-1/2} (linear)²`
    pub fn sample_variance(&self, atoms: &[Atom]) -> Result<f64> {
        let q = self.quadratic(atoms)?;
        let l = self.linear(atoms)?;
        Ok(q.total - l * l / self.horizon.sqrt())
    }

    pub fn correction(&self, atoms: &[Atom]) -> Result<f64> {
        let l = self.linear(atoms)?;
        Ok(l * l / self.horizon.sqrt())
    }
}

pub fn ou_linear_stat(cfg: &OuConfig, seed: u64) -> Result<f64> {
    let model = OuModel::new(cfg.clone())?;
    model.linear_only()?.linear(&model.sample(seed).atoms)
}

pub fn ou_quadratic_stat(cfg: &OuConfig, seed: u64) -> Result<QuadraticStat> {
    let model = OuModel::new(cfg.clone())?;
    model.evaluators()?.quadratic(&model.sample(seed).atoms)
}

pub fn ou_sample_variance_stat(cfg: &OuConfig, seed: u64) -> Result<f64> {
    let model = OuModel::new(cfg.clone())?;
    model.evaluators()?.sample_variance(&model.sample(seed).atoms)
}
