//! Pathwise first- and second-order Poisson chaos, moment functionals and
//! the CLT criteria built on contraction norms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contractions::{contraction_norms, star10_cross};
use crate::error::{invalid, Error, Result};
use crate::kernels::{integral, lp_norm, GridKernel, GridValues, Kernel, Profile, Repr, Shape1};
use crate::mc::{slope_fit, SlopeFit};
use crate::point_process::{measure_of, Atom, ControlMeasure, JumpMarginal, PointPattern, Window};
use crate::quadrature::{integrate, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosValue {
    pub c: f64,
    pub i1: f64,
    pub i2: f64,
    pub total: f64,
}

impl ChaosValue {
    pub fn new(c: f64, i1: f64, i2: f64) -> Self {
        Self { c, i1, i2, total: c + i1 + i2 }
    }
}

/// `c + I_1(g) + I_2(f)` for one pattern.
pub fn chaos_value(c: f64, g: Option<&Kernel>, f: Option<&Kernel>, pattern: &PointPattern, control: &ControlMeasure) -> Result<ChaosValue> {
    let i1 = g.map(|g| eval_i1(g, pattern, control)).transpose()?.unwrap_or(0.0);
    let i2 = f.map(|f| eval_i2(f, pattern, control)).transpose()?.unwrap_or(0.0);
    Ok(ChaosValue::new(c, i1, i2))
}

enum Mode1 {
    Zero,
    Grid,
    Separable { u_power: i32 },
}

/// `I_1(g)` evaluator with the compensator computed once.
pub struct I1Evaluator<'a> {
    kernel: &'a Kernel,
    mean: f64,
    mode: Mode1,
}

impl<'a> I1Evaluator<'a> {
    pub fn new(g: &'a Kernel, control: &ControlMeasure, window: &Window) -> Result<Self> {
        if g.arity() != 1 {
            return Err(Error::ArityMismatch {
                expected: 1,
                found: g.arity(),
            });
        }
        g.check_support(control, window)?;
        let mode = match g.repr() {
            Repr::Zero { .. } => Mode1::Zero,
            Repr::Grid(_) => Mode1::Grid,
            Repr::Separable(s) => Mode1::Separable {
                u_power: s.u_power as i32,
            },
        };
        let mean = if matches!(mode, Mode1::Zero) { 0.0 } else { integral(g, control)? };
        Ok(Self { kernel: g, mean, mode })
    }

    /// `∫ g dμ`
    pub fn compensator(&self) -> f64 {
        self.mean
    }

    /// `Σ g(z_i)` without the compensator.
    pub fn atom_sum(&self, atoms: &[Atom]) -> Result<f64> {
        Ok(match (&self.mode, self.kernel.repr()) {
            (Mode1::Zero, _) => 0.0,
            (Mode1::Grid, Repr::Grid(g)) => {
                let s: f64 = atoms.iter().filter_map(|z| g.locate(*z)).map(|k| g.value1(k)).sum();
                self.kernel.scale() * s
            }
            (Mode1::Separable { u_power }, Repr::Separable(s)) => {
                let Profile::One(shape) = &s.profile else { unreachable!() };
                let lower = self.kernel.x_support().map(|r| r.0).unwrap_or(s.lower);
                let sum: f64 = atoms.iter().map(|z| z.u.powi(*u_power) * shape.eval(z.x, lower)).sum();
                self.kernel.scale() * sum
            }
            _ => unreachable!(),
        })
    }

    pub fn eval(&self, atoms: &[Atom]) -> Result<f64> {
        Ok(self.atom_sum(atoms)? - self.mean)
    }
}

enum Mode2 {
    Zero,
    Grid { comp: Vec<f64> },
    Separable { u_factor: f64, lower: f64, lo: f64, hi: f64 },
}

/// `I_2(f)` evaluator: `Σ_{i≠j} f(z_i, z_j) - Σ_i [∫ f(z_i, ·) + ∫ f(·, z_i)] dμ + ∫∫ f dμ²`.
pub struct I2Evaluator<'a> {
    kernel: &'a Kernel,
    double: f64,
    mode: Mode2,
}

impl<'a> I2Evaluator<'a> {
    pub fn new(f: &'a Kernel, control: &ControlMeasure, window: &Window) -> Result<Self> {
        if f.arity() != 2 {
            return Err(Error::ArityMismatch {
                expected: 2,
                found: f.arity(),
            });
        }
        f.check_support(control, window)?;
        let mode = match f.repr() {
            Repr::Zero { .. } => Mode2::Zero,
            Repr::Grid(g) => {
                let m = g.masses(control)?;
                let rows = g.rows().unwrap_or_default();
                let mut comp = vec![0.0; m.len()];
                for (k, row) in rows.iter().enumerate() {
                    for &(l, v) in row {
                        comp[k] += v * m[l];
                        comp[l] += v * m[k];
                    }
                }
                Mode2::Grid { comp }
            }
            Repr::Separable(s) => {
                if !f.is_symmetric() {
                    return Err(Error::Unsupported("pathwise I_2 of a non-symmetric analytic kernel".into()));
                }
                if !control.is_homogeneous() {
                    return Err(Error::Unsupported("analytic I_2 under a non-homogeneous control".into()));
                }
                let (lo, hi) = f.x_support().unwrap_or((s.lower, s.lower));
                let (lo, hi) = control.time_range(lo, hi);
                let u_factor = control.u_moment(s.u_power, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
                Mode2::Separable {
                    u_factor,
                    lower: s.lower,
                    lo,
                    hi,
                }
            }
        };
        let double = if matches!(mode, Mode2::Zero) { 0.0 } else { integral(f, control)? / f.scale() };
        Ok(Self { kernel: f, double, mode })
    }

    pub fn eval(&self, atoms: &[Atom]) -> Result<f64> {
        let raw = match (&self.mode, self.kernel.repr()) {
            (Mode2::Zero, _) => return Ok(0.0),
            (Mode2::Grid { comp }, Repr::Grid(g)) => grid_i2(g, comp, atoms),
            (Mode2::Separable { u_factor, lower, lo, hi }, Repr::Separable(s)) => {
                let Profile::Two(shape) = &s.profile else { unreachable!() };
                let k = s.u_power as i32;
                let inside: Vec<(f64, f64)> = atoms
                    .iter()
                    .filter(|z| z.x >= *lo && z.x <= *hi)
                    .map(|z| (z.u.powi(k), z.x))
                    .collect();
                let mut pairs = 0.0;
                for (i, &(ui, xi)) in inside.iter().enumerate() {
                    let mut row = 0.0;
                    for &(uj, xj) in &inside[i + 1..] {
                        row += uj * shape.eval(xi, xj, *lower);
                    }
                    pairs += ui * row;
                }
                let mut comp = 0.0;
                if *u_factor != 0.0 {
                    for &(ui, xi) in &inside {
                        let partial = match shape.slice(xi, *lower) {
                            Some(sl) => sl.integral_over(*lo, *hi),
                            None => return Err(Error::Unsupported("pathwise I_2 of a nested contraction".into())),
                        };
                        comp += ui * partial;
                    }
                }
                2.0 * pairs - 2.0 * u_factor * comp
            }
            _ => unreachable!(),
        };
        Ok(self.kernel.scale() * (raw + self.double))
    }
}

fn grid_i2(g: &GridKernel, comp: &[f64], atoms: &[Atom]) -> f64 {
    let n = g.cells().len();
    let mut counts = vec![0.0f64; n];
    for z in atoms {
        if let Some(k) = g.locate(*z) {
            counts[k] += 1.0;
        }
    }
    let rows = g.rows().unwrap_or_default();
    let mut pairs = 0.0;
    let mut compensator = 0.0;
    for (k, &nk) in counts.iter().enumerate() {
        if nk == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for &(l, v) in &rows[k] {
            row += v * counts[l];
        }
        // distinct atoms only: drop the i = j terms of the cell-diagonal entry
        pairs += nk * row - nk * g.value2(k, k);
        compensator += nk * comp[k];
    }
    pairs - compensator
}

pub fn eval_i1(g: &Kernel, pattern: &PointPattern, control: &ControlMeasure) -> Result<f64> {
    I1Evaluator::new(g, control, &pattern.window)?.eval(&pattern.atoms)
}

pub fn eval_i2(f: &Kernel, pattern: &PointPattern, control: &ControlMeasure) -> Result<f64> {
    I2Evaluator::new(f, control, &pattern.window)?.eval(&pattern.atoms)
}

/// `n^{-1/2} Σ_j 2^{-1/2} (N̂(B_j)^2 - N̂(B_j) - 1)` from block counts; each block must have unit mass.
pub fn charlier_block_oracle(pattern: &PointPattern, blocks: &[Window], control: &ControlMeasure) -> Result<f64> {
    if blocks.is_empty() {
        return Err(invalid("blocks", "need at least one block"));
    }
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if !blocks[i].disjoint(&blocks[j]) {
                return Err(Error::OverlappingBlocks(i, j));
            }
        }
    }
    let mut total = 0.0;
    for (j, b) in blocks.iter().enumerate() {
        let m = measure_of(control, b)?;
        if (m - 1.0).abs() > 1e-12 {
            return Err(invalid("blocks", format!("block {j} has mass {m}, not 1")));
        }
        let nh = pattern.count_in(b) as f64 - 1.0;
        total += nh * nh - nh - 1.0;
    }
    Ok(total / (2.0 * blocks.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourthMomentForm {
    /// `3 N^2 + 48 n11 + 96 n10 + 4 n21` with `N = 2‖f‖^2`
    Printed,
    /// the exact `E[(F^2 - 2 I_2(f^2))^2]`: `3 N^2 + 48 n11 + 32 (n10 + 2 t3) + 16 n21`
    Exact,
}

/// Ingredients of the fourth-moment functionals of `F = I_2(f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourthMomentTerms {
    pub norm2_doubled: f64,
    /// `∫∫ f^4 dμ²`
    pub l4: f64,
    pub n11: f64,
    pub n21: f64,
    pub n10: f64,
    /// `⟨f^2, f ⋆_1^1 f⟩`
    pub t3: f64,
}

impl FourthMomentTerms {
    pub fn compute(f: &Kernel, control: &ControlMeasure) -> Result<Self> {
        let norms = contraction_norms(f, control)?;
        Ok(Self {
            norm2_doubled: 2.0 * lp_norm(f, 2, control)?,
            l4: lp_norm(f, 4, control)?,
            n11: norms.n11,
            n21: norms.n21,
            n10: norms.n10,
            t3: star10_cross(f, control)?,
        })
    }

    pub fn value(&self, form: FourthMomentForm) -> f64 {
        let n = self.norm2_doubled;
        match form {
            FourthMomentForm::Printed => 3.0 * n * n + 48.0 * self.n11 + 96.0 * self.n10 + 4.0 * self.n21,
            FourthMomentForm::Exact => 3.0 * n * n + 48.0 * self.n11 + 32.0 * (self.n10 + 2.0 * self.t3) + 16.0 * self.n21,
        }
    }

    /// `E[F^4] = E[(F^2 - 2 I_2(f^2))^2] + 32 t3 + 8 l4`
    pub fn e_f4(&self) -> f64 {
        self.value(FourthMomentForm::Exact) + 32.0 * self.t3 + 8.0 * self.l4
    }
}

pub fn fourth_moment_chaos(f: &Kernel, control: &ControlMeasure, form: FourthMomentForm) -> Result<f64> {
    if f.arity() != 2 {
        return Err(Error::ArityMismatch {
            expected: 2,
            found: f.arity(),
        });
    }
    if f.is_zero() {
        return Ok(0.0);
    }
    let mut terms = FourthMomentTerms::compute(f, control)?;
    if form == FourthMomentForm::Printed {
        terms.t3 = 0.0;
    }
    Ok(terms.value(form))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub index: f64,
    pub norm2_doubled: f64,
    pub l4: f64,
    pub n11: f64,
    pub n21: f64,
    pub n10: f64,
    /// printed fourth-moment functional
    pub fourth_moment_chaos: f64,
    pub fourth_moment_exact: f64,
    pub e_f4: f64,
    /// integrability failure, if any
    pub flagged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub quantity: String,
    pub limit: f64,
    pub initial: f64,
    pub last: f64,
    pub slope: Option<SlopeFit>,
    pub pass: bool,
}

/// "→ c": the last value is within 5% of `c` and `|value - c|` decays (or is already 0).
pub fn check_limit(quantity: &str, index: &[f64], values: &[f64], c: f64) -> LimitCheck {
    let dev: Vec<f64> = values.iter().map(|v| (v - c).abs()).collect();
    let last = *values.last().unwrap_or(&f64::NAN);
    let initial = *values.first().unwrap_or(&f64::NAN);
    let converged = dev.last().is_some_and(|d| *d <= 1e-12 * c.abs().max(1.0));
    let slope = slope_fit(index, &dev).ok();
    let near = (last - c).abs() <= 0.05 * c.abs();
    let pass = near && (converged || slope.is_some_and(|s| s.slope < 0.0));
    LimitCheck {
        quantity: quantity.into(),
        limit: c,
        initial,
        last,
        slope,
        pass,
    }
}

/// "→ 0": `last < ratio * initial` and the log-log slope is below `max_slope`.
pub fn check_vanishing(quantity: &str, index: &[f64], values: &[f64], ratio: f64, max_slope: f64) -> LimitCheck {
    let last = *values.last().unwrap_or(&f64::NAN);
    let initial = *values.first().unwrap_or(&f64::NAN);
    let slope = slope_fit(index, values).ok();
    let pass = last < ratio * initial && slope.is_some_and(|s| s.slope < max_slope);
    LimitCheck {
        quantity: quantity.into(),
        limit: 0.0,
        initial,
        last,
        slope,
        pass,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceVerdict {
    pub normalization: LimitCheck,
    pub fourth_power: LimitCheck,
    pub contraction_11: LimitCheck,
    pub contraction_21: LimitCheck,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub reports: Vec<CriterionReport>,
    /// absent when fewer than three kernels were given or some kernel is flagged
    pub verdict: Option<SequenceVerdict>,
}

/// Reports for `(index, f_index)` pairs and the sequence verdict.
pub fn clt_criterion(seq: &[(f64, Kernel)], control: &ControlMeasure) -> Result<CriterionOutcome> {
    let mut reports = Vec::with_capacity(seq.len());
    for (index, f) in seq {
        if f.arity() != 2 {
            return Err(Error::ArityMismatch {
                expected: 2,
                found: f.arity(),
            });
        }
        let report = match FourthMomentTerms::compute(f, control) {
            Ok(t) if [t.n21, t.n11, t.l4].iter().all(|v| v.is_finite()) => CriterionReport {
                index: *index,
                norm2_doubled: t.norm2_doubled,
                l4: t.l4,
                n11: t.n11,
                n21: t.n21,
                n10: t.n10,
                fourth_moment_chaos: t.value(FourthMomentForm::Printed),
                fourth_moment_exact: t.value(FourthMomentForm::Exact),
                e_f4: t.e_f4(),
                flagged: None,
            },
            Ok(_) => flagged(*index, "non-finite contraction norm".into()),
            Err(e @ (Error::Divergent(_) | Error::InfiniteMass(_) | Error::MomentCondition(_))) => flagged(*index, e.to_string()),
            Err(e) => return Err(e),
        };
        reports.push(report);
    }
    let verdict = (reports.len() >= 3 && reports.iter().all(|r| r.flagged.is_none())).then(|| {
        let idx: Vec<f64> = reports.iter().map(|r| r.index).collect();
        let col = |f: fn(&CriterionReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        let normalization = check_limit("2‖f‖²", &idx, &col(|r| r.norm2_doubled), 1.0);
        let fourth_power = check_vanishing("∫∫f⁴", &idx, &col(|r| r.l4), 0.05, -0.5);
        let contraction_11 = check_vanishing("‖f⋆₁¹f‖²", &idx, &col(|r| r.n11), 0.05, -0.5);
        let contraction_21 = check_vanishing("‖f⋆₂¹f‖²", &idx, &col(|r| r.n21), 0.05, -0.5);
        let pass = normalization.pass && fourth_power.pass && contraction_11.pass && contraction_21.pass;
        SequenceVerdict {
            normalization,
            fourth_power,
            contraction_11,
            contraction_21,
            pass,
        }
    });
    Ok(CriterionOutcome { reports, verdict })
}

fn flagged(index: f64, why: String) -> CriterionReport {
    CriterionReport {
        index,
        norm2_doubled: f64::NAN,
        l4: f64::NAN,
        n11: f64::NAN,
        n21: f64::NAN,
        n10: f64::NAN,
        fourth_moment_chaos: f64::NAN,
        fourth_moment_exact: f64::NAN,
        e_f4: f64::NAN,
        flagged: Some(why),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleVerdict {
    pub norm: LimitCheck,
    pub cube: LimitCheck,
    pub pass: bool,
}

/// `‖g_n‖² → 1` and `∫ |g_n|³ dμ → 0`. The cube integral typically decays
/// like `n^{-1/2}`, so it passes when the last value is at most a quarter of
/// the first and the log-log slope is below `-1/4`.
pub fn single_clt_check(seq: &[(f64, Kernel)], control: &ControlMeasure) -> Result<SingleVerdict> {
    if seq.len() < 3 {
        return Err(Error::InsufficientData(format!("{} kernels; need at least 3", seq.len())));
    }
    let mut idx = Vec::new();
    let mut l2 = Vec::new();
    let mut l3 = Vec::new();
    for (i, g) in seq {
        if g.arity() != 1 {
            return Err(Error::ArityMismatch {
                expected: 1,
                found: g.arity(),
            });
        }
        idx.push(*i);
        l2.push(lp_norm(g, 2, control)?);
        l3.push(lp_norm(g, 3, control)?);
    }
    let norm = check_limit("‖g‖²", &idx, &l2, 1.0);
    let cube = check_vanishing("∫|g|³", &idx, &l3, 0.25, -0.25);
    let pass = norm.pass && cube.pass;
    Ok(SingleVerdict { norm, cube, pass })
}

/// `E exp(iθ I_1(g)) = exp(∫ (e^{iθg} - 1 - iθg) dμ)`.
pub fn levy_khinchine_cf(g: &Kernel, theta: f64, control: &ControlMeasure) -> Result<Complex64> {
    if g.arity() != 1 {
        return Err(Error::ArityMismatch {
            expected: 1,
            found: g.arity(),
        });
    }
    let phi = |v: f64| {
        let a = theta * v;
        // e^{ia} - 1 - ia, with the real part written to avoid cancellation
        Complex64::new(-2.0 * (0.5 * a).sin().powi(2), a.sin() - a)
    };
    let psi = match g.repr() {
        Repr::Zero { .. } => Complex64::new(0.0, 0.0),
        Repr::Grid(grid) => {
            let m = grid.masses(control)?;
            let GridValues::One(v) = grid.values() else { unreachable!() };
            v.iter().zip(&m).map(|(v, m)| phi(g.scale() * v) * m).sum()
        }
        Repr::Separable(s) => {
            let (JumpMarginal::Discrete(atoms), true) = (control.marginal(), control.is_homogeneous()) else {
                return Err(Error::Unsupported("characteristic function of an analytic kernel under a continuous jump law".into()));
            };
            let Profile::One(shape) = &s.profile else { unreachable!() };
            let (lower, hi) = g.x_support().unwrap_or((s.lower, s.lower));
            let (lo, hi) = control.time_range(lower, hi);
            let breaks = profile_breaks(shape, lower, lo, hi);
            let tol = Tolerance {
                abs: 1e-13,
                rel: 1e-10,
                max_intervals: 4000,
            };
            let mut acc = Complex64::new(0.0, 0.0);
            for &(u, w) in atoms {
                let c = g.scale() * u.powi(s.u_power as i32);
                for seg in breaks.windows(2) {
                    let re = integrate(|x| phi(c * shape.eval(x, lower)).re, seg[0], seg[1], tol)?.value;
                    let im = integrate(|x| phi(c * shape.eval(x, lower)).im, seg[0], seg[1], tol)?.value;
                    acc += w * Complex64::new(re, im);
                }
            }
            acc
        }
    };
    if !(psi.re.is_finite() && psi.im.is_finite()) {
        return Err(Error::Divergent("Lévy–Khinchine exponent".into()));
    }
    Ok(psi.exp())
}

fn profile_breaks(shape: &Shape1, lower: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut b = shape
        .profile(lower)
        .map(|p| p.breakpoints())
        .unwrap_or_default();
    b.push(lo);
    b.push(hi);
    b.retain(|v| v.is_finite() && *v >= lo && *v <= hi);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// `E[F^4 1{F^4 > M}]` estimated from samples, per threshold.
pub fn fourth_power_tail(values: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&m| {
            let s: f64 = values.iter().map(|v| v.powi(4)).filter(|p| *p > m).sum();
            (m, s / n)
        })
        .collect()
}

/// Kernel families used by the criterion engine.
pub mod families {
    use super::*;

    /// `f_n = (2n)^{-1/2} Σ_j 1_{B_j²}` off the diagonal.
    pub fn block(n: usize) -> Result<Kernel> {
        Kernel::block(n)
    }

    /// `2^{-1/2} 1_{B²}` off the diagonal for a fixed unit block; `2‖f‖² = 1` for every index.
    pub fn fixed_support() -> Result<Kernel> {
        Kernel::block_on(vec![Window::time(0.0, 1.0)?], 0.5f64.sqrt())
    }

    /// `c √T H_{λ,T}`.
    pub fn ou_jt(lambda: f64, horizon: f64, c: f64) -> Result<Kernel> {
        Ok(Kernel::ou_double_h(lambda, horizon)?.scaled(c * horizon.sqrt()))
    }

    /// `n^{-1/2} Σ_j 1_{B_j}`.
    pub fn block_single(n: usize) -> Result<Kernel> {
        Kernel::block_single(n)
    }

    /// `σ(λ)^{-1}` times the OU linear-functional kernel, `σ² = 2/λ`.
    pub fn ou_single_normalized(lambda: f64, horizon: f64) -> Result<Kernel> {
        Ok(Kernel::ou_single(lambda, horizon)?.scaled((lambda / 2.0).sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::sample_pattern;

    fn pattern(xs: &[f64], window: Window) -> PointPattern {
        PointPattern::new(xs.iter().map(|&x| Atom { u: 1.0, x }).collect(), window, 0.0, 0).unwrap()
    }

    #[test]
    fn i1_of_indicator() {
        let c = ControlMeasure::dirac(1.0).unwrap();
        let w = Window::time(0.0, 2.0).unwrap();
        let g = Kernel::grid(GridKernel::arity1(vec![Window::time(0.0, 1.0).unwrap()], vec![1.0]).unwrap());
        assert_eq!(eval_i1(&g, &pattern(&[0.1, 0.5, 1.5], w), &c).unwrap(), 1.0);
        assert_eq!(eval_i1(&g, &pattern(&[], w), &c).unwrap(), -1.0);
        let narrow = Window::time(0.0, 0.5).unwrap();
        assert!(matches!(eval_i1(&g, &pattern(&[], narrow), &c), Err(Error::SupportOutsideWindow(_))));
    }

    #[test]
    fn i2_empty_pattern_and_counts() {
        let c = ControlMeasure::dirac(1.0).unwrap();
        let w = Window::time(0.0, 1.0).unwrap();
        let f = Kernel::block_on(vec![w], 1.0).unwrap();
        assert_eq!(eval_i2(&f, &pattern(&[], w), &c).unwrap(), 1.0);
        // three atoms: 6 ordered pairs - 2*3 + 1
        assert_eq!(eval_i2(&f, &pattern(&[0.1, 0.2, 0.3], w), &c).unwrap(), 1.0);
    }

    #[test]
    fn i2_matches_charlier_oracle() {
        let c = ControlMeasure::symmetric_bernoulli();
        let n = 20;
        let f = Kernel::block(n).unwrap();
        let blocks: Vec<Window> = (0..n).map(|j| Window::time(j as f64, j as f64 + 1.0).unwrap()).collect();
        let w = Window::time(0.0, n as f64).unwrap();
        for seed in 0..20 {
            let p = sample_pattern(&c, &w, seed).unwrap();
            let a = eval_i2(&f, &p, &c).unwrap();
            let b = charlier_block_oracle(&p, &blocks, &c).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let p = pattern(&[], Window::time(0.0, 1.0).unwrap());
        let one = charlier_block_oracle(&p, &blocks[..1], &c).unwrap();
        assert!((one - 0.5f64.sqrt()).abs() < 1e-15);
        let overlapping = [blocks[0], Window::time(0.5, 1.5).unwrap()];
        assert!(matches!(charlier_block_oracle(&p, &overlapping, &c), Err(Error::OverlappingBlocks(0, 1))));
    }

    #[test]
    fn block_fourth_moment_forms() {
        let c = ControlMeasure::symmetric_bernoulli();
        for n in [1usize, 5, 50] {
            let f = Kernel::block(n).unwrap();
            let nf = n as f64;
            let printed = fourth_moment_chaos(&f, &c, FourthMomentForm::Printed).unwrap();
            let exact = fourth_moment_chaos(&f, &c, FourthMomentForm::Exact).unwrap();
            assert!((printed - (3.0 + 37.0 / nf)).abs() < 1e-12);
            assert!((exact - (3.0 + 40.0 / nf)).abs() < 1e-12);
            let t = FourthMomentTerms::compute(&f, &c).unwrap();
            assert!((t.e_f4() - (3.0 + 50.0 / nf)).abs() < 1e-12);
        }
        assert_eq!(fourth_moment_chaos(&Kernel::zero(2), &c, FourthMomentForm::Printed).unwrap(), 0.0);
    }

    #[test]
    fn fourth_moment_is_homogeneous_of_degree_four() {
        let c = ControlMeasure::symmetric_bernoulli();
        let f = Kernel::block(7).unwrap();
        let base = fourth_moment_chaos(&f, &c, FourthMomentForm::Printed).unwrap();
        let scaled = fourth_moment_chaos(&f.clone().scaled(1.7), &c, FourthMomentForm::Printed).unwrap();
        assert!((scaled - 1.7f64.powi(4) * base).abs() < 1e-12 * scaled);
    }

    #[test]
    fn criterion_families() {
        let c = ControlMeasure::symmetric_bernoulli();
        let blocks: Vec<(f64, Kernel)> = [10usize, 30, 100, 300, 1000]
            .iter()
            .map(|&n| (n as f64, families::block(n).unwrap()))
            .collect();
        let out = clt_criterion(&blocks, &c).unwrap();
        let v = out.verdict.unwrap();
        assert!(v.pass);
        assert!((v.contraction_11.slope.unwrap().slope + 1.0).abs() < 1e-9);

        let fixed: Vec<(f64, Kernel)> = (1..=5).map(|i| (i as f64, families::fixed_support().unwrap())).collect();
        let v = clt_criterion(&fixed, &c).unwrap().verdict.unwrap();
        assert!(v.normalization.pass);
        assert!(!v.fourth_power.pass);
        assert!(!v.pass);
    }

    #[test]
    fn single_check() {
        let c = ControlMeasure::symmetric_bernoulli();
        let seq: Vec<(f64, Kernel)> = [4usize, 16, 64, 256].iter().map(|&n| (n as f64, families::block_single(n).unwrap())).collect();
        let v = single_clt_check(&seq, &c).unwrap();
        assert!(v.pass);
        assert!((v.cube.last - 1.0 / 16.0).abs() < 1e-15);
        let constant: Vec<(f64, Kernel)> = (1..=4).map(|i| (i as f64, families::block_single(1).unwrap())).collect();
        assert!(!single_clt_check(&constant, &c).unwrap().pass);
    }

    #[test]
    fn cf_of_centered_poisson() {
        let c = ControlMeasure::dirac(1.0).unwrap();
        let g = Kernel::grid(GridKernel::arity1(vec![Window::time(0.0, 2.5).unwrap()], vec![1.0]).unwrap());
        assert_eq!(levy_khinchine_cf(&g, 0.0, &c).unwrap(), Complex64::new(1.0, 0.0));
        for theta in [-2.0, 0.3, 1.7] {
            let want = (2.5 * (Complex64::new(0.0, theta).exp() - 1.0 - Complex64::new(0.0, theta))).exp();
            assert!((levy_khinchine_cf(&g, theta, &c).unwrap() - want).norm() < 1e-14);
        }
    }

    #[test]
    fn cf_of_ou_single_matches_pointwise_sum() {
        // discrete control: the exponent is Σ_w ∫ φ(c ψ(x)) dx, checked against a fine midpoint sum
        let c = ControlMeasure::symmetric_bernoulli();
        let g = Kernel::ou_single(1.0, 5.0).unwrap();
        let got = levy_khinchine_cf(&g, 0.8, &c).unwrap();
        let Repr::Separable(s) = g.repr() else { unreachable!() };
        let Profile::One(shape) = &s.profile else { unreachable!() };
        let (lo, hi) = (-12.0, 5.0);
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let mut psi = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            for u in [-1.0, 1.0] {
                let a = 0.8 * u * shape.eval(x, lo);
                psi += 0.5 * h * (Complex64::new(0.0, a).exp() - 1.0 - Complex64::new(0.0, a));
            }
        }
        assert!((got - psi.exp()).norm() < 1e-8);
    }

    #[test]
    fn tail_estimates() {
        let t = fourth_power_tail(&[1.0, -2.0, 0.5], &[0.0, 2.0, 100.0]);
        assert_eq!(t[0].1, (1.0 + 16.0 + 0.0625) / 3.0);
        assert_eq!(t[1].1, 16.0 / 3.0);
        assert_eq!(t[2].1, 0.0);
    }
}
