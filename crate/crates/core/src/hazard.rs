//! Random hazard rates `h̃(t) = ∫∫ u k(t, x) N(du, dx)` driven by a
//! non-compensated Poisson measure, their cumulative hazards and the
//! standardized statistics of the hazard CLTs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::HazardKernel;
use crate::point_process::{Atom, ControlMeasure, JumpMarginal, PatternSampler, PointPattern, PositiveFn, Window};
use crate::quadrature::{integrate, Tolerance};

pub const EXTENDED_GAMMA_EPSILON: f64 = 1e-4;
pub const BETA_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thm7Case {
    /// homogeneous `ν(du) dx`, scaling `√T`
    Homogeneous,
    /// extended gamma with `β(x) = 1 + √x`, scaling `√(log T)`
    ExtendedGamma,
    /// beta with `c(x) ~ √x`, scaling `T^{1/4}`
    Beta,
}

impl Thm7Case {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Self::Homogeneous),
            2 => Ok(Self::ExtendedGamma),
            3 => Ok(Self::Beta),
            _ => Err(invalid("case", format!("{i} is not one of 1, 2, 3"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::Homogeneous => 1,
            Self::ExtendedGamma => 2,
            Self::Beta => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thm8Variant {
    Raw,
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub kernel: HazardKernel,
    pub control: ControlMeasure,
    pub horizon: f64,
}

impl HazardModel {
    pub fn new(kernel: HazardKernel, control: ControlMeasure, horizon: f64) -> Result<Self> {
        kernel.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("{horizon} must be positive")));
        }
        if control.u_support().0 < 0.0 {
            return Err(invalid("control", "hazard jumps must be non-negative"));
        }
        Ok(Self { kernel, control, horizon })
    }

    /// Rectangular kernel with `β(x) = 1 + √x`.
    pub fn extended_gamma_case(horizon: f64, epsilon: f64) -> Result<Self> {
        let control = ControlMeasure::extended_gamma(PositiveFn::SqrtAffine { offset: 1.0, slope: 1.0 }, epsilon)?;
        Self::new(HazardKernel::Rect { tau: 1.0 }, control, horizon)
    }

    /// Rectangular kernel with `c(x) = max(√x, 1)`.
    pub fn beta_case(horizon: f64, epsilon: f64) -> Result<Self> {
        let control = ControlMeasure::beta(PositiveFn::SqrtFloor { floor: 1.0 }, epsilon)?;
        Self::new(HazardKernel::Rect { tau: 1.0 }, control, horizon)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.kernel, self.control.clone(), horizon)
    }

    /// Atoms outside this window never reach `[0, T]`.
    pub fn window(&self) -> Window {
        let (lo, hi) = self.kernel.atom_range(self.horizon);
        let (lo, hi) = self.control.time_range(lo, hi);
        Window::time(lo, hi).expect("finite atom range")
    }

    pub fn sampler(&self) -> Result<PatternSampler> {
        PatternSampler::new(&self.control, &self.window())
    }

    fn tau(&self) -> Result<f64> {
        match self.kernel {
            HazardKernel::Rect { tau } => Ok(tau),
            _ => Err(Error::Unsupported("CLT constants are only available for the rectangular kernel".into())),
        }
    }

    fn homogeneous_moments(&self) -> Result<[f64; 5]> {
        if !self.control.is_homogeneous() {
            return Err(Error::MomentCondition("needs a homogeneous control ν(du) dx".into()));
        }
        let mut k = [0.0; 5];
        for (i, slot) in k.iter_mut().enumerate() {
            *slot = self.control.u_moment(i as u32, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
        }
        if k[1..].iter().any(|v| !v.is_finite()) {
            return Err(Error::MomentCondition("K^(1..4) must be finite".into()));
        }
        Ok(k)
    }

    /// Which CLT case this model matches, if any.
    pub fn case(&self) -> Option<Thm7Case> {
        if !matches!(self.kernel, HazardKernel::Rect { .. }) {
            return None;
        }
        match self.control.marginal() {
            _ if self.control.is_homogeneous() => Some(Thm7Case::Homogeneous),
            JumpMarginal::ExtendedGamma {
                beta: PositiveFn::SqrtAffine { offset, slope },
            } if *offset == 1.0 && *slope == 1.0 => Some(Thm7Case::ExtendedGamma),
            JumpMarginal::Beta { c } if c.sqrt_growth() == 1.0 => Some(Thm7Case::Beta),
            _ => None,
        }
    }
}

/// `h̃(t) = Σ_i u_i k(t, x_i)` at each time.
pub fn hazard_values(model: &HazardModel, atoms: &[Atom], times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| atoms.iter().map(|a| a.u * model.kernel.eval(t, a.x)).sum())
        .collect()
}

pub fn simulate_hazard(model: &HazardModel, seed: u64, times: &[f64]) -> Result<Vec<f64>> {
    let p = model.sampler()?.sample(seed);
    Ok(hazard_values(model, &p.atoms, times))
}

/// `H̃(T) = Σ_i u_i ∫_0^T k(s, x_i) ds`
pub fn cumulative_hazard_of(model: &HazardModel, atoms: &[Atom]) -> f64 {
    atoms.iter().map(|a| a.u * model.kernel.time_integral(a.x, model.horizon)).sum()
}

pub fn cumulative_hazard(model: &HazardModel, seed: u64) -> Result<f64> {
    let p = model.sampler()?.sample(seed);
    Ok(cumulative_hazard_of(model, &p.atoms))
}

/// `∫_0^T h̃(t)² dt = Σ_{i,j} u_i u_j ∫_0^T k(t, x_i) k(t, x_j) dt`
pub fn square_integral_of(model: &HazardModel, atoms: &[Atom]) -> f64 {
    let t = model.horizon;
    let k = model.kernel;
    let mut ev: Vec<(f64, f64)> = atoms.iter().filter(|a| a.u != 0.0).map(|a| (a.x, a.u)).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let reach = match k {
        HazardKernel::Rect { tau } => 2.0 * tau,
        _ => f64::INFINITY,
    };
    let mut diag = 0.0;
    let mut off = 0.0;
    for (i, &(xi, ui)) in ev.iter().enumerate() {
        diag += ui * ui * k.pair_time_integral(xi, xi, t);
        let mut row = 0.0;
        for &(xj, uj) in &ev[i + 1..] {
            if xj - xi > reach {
                break;
            }
            row += uj * k.pair_time_integral(xi, xj, t);
        }
        off += ui * row;
    }
    diag + 2.0 * off
}

/// Centering and scale of the standardized cumulative hazard.
pub fn thm7_normalization(case: Thm7Case, model: &HazardModel) -> Result<(f64, f64)> {
    let t = model.horizon;
    match case {
        Thm7Case::Homogeneous => {
            let k = model.homogeneous_moments()?;
            Ok((2.0 * model.tau()? * k[1] * t, t.sqrt()))
        }
        Thm7Case::ExtendedGamma => Ok((4.0 * t.sqrt(), t.ln().sqrt())),
        Thm7Case::Beta => Ok((2.0 * t, t.powf(0.25))),
    }
}

/// Asymptotic variance of the standardized cumulative hazard.
pub fn thm7_target(case: Thm7Case, model: &HazardModel) -> Result<f64> {
    match case {
        Thm7Case::Homogeneous => {
            let tau = model.tau()?;
            Ok(4.0 * tau * tau * model.homogeneous_moments()?[2])
        }
        Thm7Case::ExtendedGamma => Ok(4.0),
        Thm7Case::Beta => Ok(8.0),
    }
}

fn check_case(case: Thm7Case, model: &HazardModel) -> Result<()> {
    if model.case() == Some(case) {
        Ok(())
    } else {
        Err(invalid(
            "case",
            format!("case {} does not match a {:?} kernel with {:?}", case.index(), model.kernel, model.control.marginal()),
        ))
    }
}

pub fn thm7_stat_of(model: &HazardModel, case: Thm7Case, atoms: &[Atom]) -> Result<f64> {
    check_case(case, model)?;
    let (center, scale) = thm7_normalization(case, model)?;
    Ok((cumulative_hazard_of(model, atoms) - center) / scale)
}

pub fn thm7_stat(model: &HazardModel, case: Thm7Case, seed: u64) -> Result<f64> {
    check_case(case, model)?;
    let p = model.sampler()?.sample(seed);
    thm7_stat_of(model, case, &p.atoms)
}

/// Exact `(E H̃(T), Var H̃(T))` from Campbell's formula for the (truncated) control.
pub fn cumulative_hazard_moments(model: &HazardModel) -> Result<(f64, f64)> {
    let c = &model.control;
    let m = |k: u32| move |x: f64| c.u_moment(k, x, f64::NEG_INFINITY, f64::INFINITY).unwrap_or(f64::NAN);
    let mean = campbell_integral(model, 1, m(1))?;
    let var = campbell_integral(model, 2, m(2))?;
    Ok((mean, var))
}

/// Mean and variance of `H̃(T)` carried by the jumps below the truncation
/// level, `∫ ∫_0^eps u^k nu_x(du) w(x)^k dx` for k = 1, 2. Zero for untruncated controls.
pub fn truncation_bias(model: &HazardModel) -> Result<(f64, f64)> {
    let c = &model.control;
    if c.epsilon() == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mean = campbell_integral(model, 1, |x| c.neglected_moment(1, x))?;
    let var = campbell_integral(model, 2, |x| c.neglected_moment(2, x))?;
    Ok((mean, var))
}

/// `∫ density(x) w(x)^k dx` over the atom window, `w` the kernel's time integral up to the horizon.
fn campbell_integral(model: &HazardModel, k: i32, density: impl Fn(f64) -> f64) -> Result<f64> {
    let w = model.window();
    let mut breaks = vec![w.x_lo, w.x_hi, 0.0, model.horizon];
    if let HazardKernel::Rect { tau } = model.kernel {
        breaks.extend([tau, -tau, model.horizon - tau, model.horizon + tau]);
    }
    breaks.retain(|b| *b >= w.x_lo && *b <= w.x_hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-11,
        max_intervals: 20_000,
    };
    let f = |x: f64| density(x) * model.kernel.time_integral(x, model.horizon).powi(k);
    let mut total = 0.0;
    for seg in breaks.windows(2) {
        total += integrate(&f, seg[0], seg[1], tol)?.value;
    }
    if !total.is_finite() {
        return Err(Error::Divergent("Campbell moments of the cumulative hazard".into()));
    }
    Ok(total)
}

/// `E h̃(t) = ∫∫ u k(t, x) μ(du, dx)` by quadrature.
pub fn campbell_mean(model: &HazardModel, t: f64) -> Result<f64> {
    let w = model.window();
    let (lo, hi) = match model.kernel {
        HazardKernel::Rect { tau } => ((t - tau).max(w.x_lo), (t + tau).min(w.x_hi)),
        _ => (w.x_lo.max(0.0), t.min(w.x_hi)),
    };
    if hi <= lo {
        return Ok(0.0);
    }
    let c = &model.control;
    Ok(integrate(
        |x| c.u_moment(1, x, f64::NEG_INFINITY, f64::INFINITY).unwrap_or(f64::NAN) * model.kernel.eval(t, x),
        lo,
        hi,
        Tolerance::default(),
    )?
    .value)
}

/// `(centering, asymptotic variance)` of the quadratic statistic as stated:
/// raw `c1 = 16τ²[K4/4 + τK1K3 + 2τK2²/3 + τ²K2²K1]`, centered `c2 = 4τ²[K4 + 8τK2²/3]`.
pub fn thm8_constants(model: &HazardModel, variant: Thm8Variant) -> Result<(f64, f64)> {
    let tau = model.tau()?;
    let k = model.homogeneous_moments()?;
    Ok(match variant {
        Thm8Variant::Raw => (
            2.0 * tau * k[2] + 4.0 * tau * tau * k[1] * k[1],
            16.0 * tau * tau * (k[4] / 4.0 + tau * k[1] * k[3] + 2.0 * tau * k[2] * k[2] / 3.0 + tau * tau * k[2] * k[2] * k[1]),
        ),
        Thm8Variant::Centered => (2.0 * tau * k[2], 4.0 * tau * tau * (k[4] + 8.0 * tau * k[2] * k[2] / 3.0)),
    })
}

/// Raw-variant variance from integrating `Cov(h̃(0)², h̃(s)²)` over `s` with
/// shot-noise cumulants: `16τ²[K4/4 + 2τK1K3 + 2τK2²/3 + 4τ²K1²K2]`.
pub fn thm8_raw_variance_cumulant(model: &HazardModel) -> Result<f64> {
    let tau = model.tau()?;
    let k = model.homogeneous_moments()?;
    Ok(16.0 * tau * tau * (k[4] / 4.0 + 2.0 * tau * k[1] * k[3] + 2.0 * tau * k[2] * k[2] / 3.0 + 4.0 * tau * tau * k[1] * k[1] * k[2]))
}

pub fn thm8_stat_of(model: &HazardModel, variant: Thm8Variant, atoms: &[Atom]) -> Result<f64> {
    let (center, _) = thm8_constants(model, variant)?;
    let t = model.horizon;
    let mut v = square_integral_of(model, atoms) / t;
    if variant == Thm8Variant::Centered {
        let mean = cumulative_hazard_of(model, atoms) / t;
        v -= mean * mean;
    }
    Ok(t.sqrt() * (v - center))
}

pub fn thm8_stat(model: &HazardModel, variant: Thm8Variant, seed: u64) -> Result<f64> {
    thm8_constants(model, variant)?;
    let p = model.sampler()?.sample(seed);
    thm8_stat_of(model, variant, &p.atoms)
}

/// Hazard path summaries on a pattern, for dumps.
pub fn pattern_summary(model: &HazardModel, pattern: &PointPattern) -> (f64, f64) {
    (cumulative_hazard_of(model, &pattern.atoms), square_integral_of(model, &pattern.atoms))
}
