//! Control measures on Z = R x R (jump size u, time x) and Poisson point patterns.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};

use crate::config::{parse_f64, parse_f64_list, parse_number, Config};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::rng::rng_from_seed;
use crate::special::exp_int_e1;

/// Rectangle `[u_lo, u_hi] x [x_lo, x_hi)`. The jump axis may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub u_lo: f64,
    pub u_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Window {
    pub fn new(u_lo: f64, u_hi: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        if u_lo.is_nan() || u_hi.is_nan() || u_lo > u_hi {
            return Err(invalid("window", format!("jump range [{u_lo}, {u_hi}] is empty")));
        }
        if !(x_lo.is_finite() && x_hi.is_finite()) || x_lo > x_hi {
            return Err(invalid("window", format!("time range [{x_lo}, {x_hi}) must be finite and ordered")));
        }
        Ok(Self { u_lo, u_hi, x_lo, x_hi })
    }

    /// Full jump axis over `[x_lo, x_hi)`.
    pub fn time(x_lo: f64, x_hi: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, f64::INFINITY, x_lo, x_hi)
    }

    pub fn empty() -> Self {
        Self {
            u_lo: 0.0,
            u_hi: 0.0,
            x_lo: 0.0,
            x_hi: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x_hi <= self.x_lo
    }

    pub fn len_x(&self) -> f64 {
        (self.x_hi - self.x_lo).max(0.0)
    }

    pub fn contains(&self, u: f64, x: f64) -> bool {
        u >= self.u_lo && u <= self.u_hi && x >= self.x_lo && x < self.x_hi
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        other.is_empty()
            || (other.u_lo >= self.u_lo && other.u_hi <= self.u_hi && other.x_lo >= self.x_lo && other.x_hi <= self.x_hi)
    }

    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let w = Window {
            u_lo: self.u_lo.max(other.u_lo),
            u_hi: self.u_hi.min(other.u_hi),
            x_lo: self.x_lo.max(other.x_lo),
            x_hi: self.x_hi.min(other.x_hi),
        };
        (w.u_lo <= w.u_hi && w.x_lo < w.x_hi).then_some(w)
    }

    pub fn disjoint(&self, other: &Window) -> bool {
        self.is_empty()
            || other.is_empty()
            || self.x_hi <= other.x_lo
            || other.x_hi <= self.x_lo
            || self.u_hi < other.u_lo
            || other.u_hi < self.u_lo
    }
}

/// Nondecreasing positive function of the time coordinate, used by the
/// non-homogeneous controls. Negative arguments are clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PositiveFn {
    Constant(f64),
    /// `offset + slope * sqrt(x)`
    SqrtAffine { offset: f64, slope: f64 },
    /// `max(sqrt(x), floor)`
    SqrtFloor { floor: f64 },
}

impl PositiveFn {
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match *self {
            PositiveFn::Constant(c) => c,
            PositiveFn::SqrtAffine { offset, slope } => offset + slope * x.sqrt(),
            PositiveFn::SqrtFloor { floor } => x.sqrt().max(floor),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        let ok = match *self {
            PositiveFn::Constant(c) => c > 0.0 && c.is_finite(),
            PositiveFn::SqrtAffine { offset, slope } => offset > 0.0 && slope >= 0.0 && offset.is_finite() && slope.is_finite(),
            PositiveFn::SqrtFloor { floor } => floor > 0.0 && floor.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(name, format!("{self:?} is not a positive nondecreasing function")))
        }
    }

    /// Coefficient of `sqrt(x)` as `x -> inf`.
    pub fn sqrt_growth(&self) -> f64 {
        match *self {
            PositiveFn::Constant(_) => 0.0,
            PositiveFn::SqrtAffine { slope, .. } => slope,
            PositiveFn::SqrtFloor { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JumpMarginal {
    /// `sum w_i delta_{u_i}`
    Discrete(Vec<(f64, f64)>),
    /// `Gamma(1-sigma)^{-1} u^{-1-sigma} e^{-gamma u} du`
    GeneralizedGamma { sigma: f64, gamma: f64 },
    /// `u^{-1} e^{-beta(x) u} du`
    ExtendedGamma { beta: PositiveFn },
    /// `c(x) u^{-1} (1-u)^{c(x)-1} du` on (0, 1)
    Beta { c: PositiveFn },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeSupport {
    Line,
    PositiveHalfLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMeasure {
    marginal: JumpMarginal,
    epsilon: f64,
    time: TimeSupport,
    /// `K^(i)` for i = 0..=6 over the whole jump support; `None` when infinite
    /// or when the marginal depends on time.
    moments: [Option<f64>; 7],
}

const INNER_TOL: Tolerance = Tolerance {
    abs: 1e-300,
    rel: 1e-12,
    max_intervals: 2000,
};

const OUTER_TOL: Tolerance = Tolerance {
    abs: 1e-300,
    rel: 1e-10,
    max_intervals: 4000,
};

impl ControlMeasure {
    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("atoms", "at least one atom is required"));
        }
        for &(u, w) in &atoms {
            if !u.is_finite() {
                return Err(invalid("atoms", format!("atom location {u} is not finite")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("atoms", format!("weight {w} must be positive and finite")));
            }
        }
        Self::build(JumpMarginal::Discrete(atoms), 0.0, TimeSupport::Line)
    }

    pub fn dirac(u: f64) -> Result<Self> {
        Self::discrete(vec![(u, 1.0)])
    }

    /// `(delta_1 + delta_{-1}) / 2`: unit total mass, every even moment equal to 1.
    pub fn symmetric_bernoulli() -> Self {
        Self::build(JumpMarginal::Discrete(vec![(-1.0, 0.5), (1.0, 0.5)]), 0.0, TimeSupport::Line)
            .expect("valid constant control")
    }

    pub fn generalized_gamma(sigma: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(invalid("sigma", format!("{sigma} not in (0, 1)")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("{gamma} must be positive")));
        }
        Self::check_eps(epsilon)?;
        Self::build(JumpMarginal::GeneralizedGamma { sigma, gamma }, epsilon, TimeSupport::PositiveHalfLine)
    }

    pub fn extended_gamma(beta: PositiveFn, epsilon: f64) -> Result<Self> {
        beta.validate("beta")?;
        Self::check_eps(epsilon)?;
        Self::build(JumpMarginal::ExtendedGamma { beta }, epsilon, TimeSupport::PositiveHalfLine)
    }

    pub fn beta(c: PositiveFn, epsilon: f64) -> Result<Self> {
        c.validate("c")?;
        Self::check_eps(epsilon)?;
        if epsilon >= 1.0 {
            return Err(invalid("epsilon", "must be below 1 for a Beta control"));
        }
        Self::build(JumpMarginal::Beta { c }, epsilon, TimeSupport::PositiveHalfLine)
    }

    pub fn with_time_support(mut self, time: TimeSupport) -> Self {
        self.time = time;
        self
    }

    fn check_eps(epsilon: f64) -> Result<()> {
        if epsilon >= 0.0 && epsilon.is_finite() {
            Ok(())
        } else {
            Err(invalid("epsilon", format!("{epsilon} must be a finite non-negative cutoff")))
        }
    }

    fn build(marginal: JumpMarginal, epsilon: f64, time: TimeSupport) -> Result<Self> {
        let mut c = Self {
            marginal,
            epsilon,
            time,
            moments: [None; 7],
        };
        if c.is_homogeneous() {
            for i in 0..7 {
                c.moments[i] = c.u_moment(i as u32, 0.0, f64::NEG_INFINITY, f64::INFINITY).ok();
            }
        }
        Ok(c)
    }

    pub fn marginal(&self) -> &JumpMarginal {
        &self.marginal
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn time_support(&self) -> TimeSupport {
        self.time
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.marginal, JumpMarginal::Discrete(_) | JumpMarginal::GeneralizedGamma { .. })
    }

    pub fn is_finite_discrete(&self) -> bool {
        matches!(self.marginal, JumpMarginal::Discrete(_))
    }

    /// Cached `K^(i) = ∫ u^i nu(du)` for homogeneous controls (i <= 6).
    pub fn moment(&self, i: usize) -> Option<f64> {
        self.moments.get(i).copied().flatten()
    }

    /// Smallest closed interval carrying the jump marginal after truncation.
    pub fn u_support(&self) -> (f64, f64) {
        match &self.marginal {
            JumpMarginal::Discrete(atoms) => atoms
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(u, _)| (lo.min(u), hi.max(u))),
            JumpMarginal::GeneralizedGamma { .. } | JumpMarginal::ExtendedGamma { .. } => (self.epsilon, f64::INFINITY),
            JumpMarginal::Beta { .. } => (self.epsilon, 1.0),
        }
    }

    /// Time interval on which the control lives, clipped to `[lo, hi)`.
    pub fn time_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self.time {
            TimeSupport::Line => (lo, hi),
            TimeSupport::PositiveHalfLine => (lo.max(0.0), hi.max(0.0)),
        }
    }

    fn continuous_range(&self, u_lo: f64, u_hi: f64) -> Result<(f64, f64)> {
        let (s_lo, s_hi) = self.u_support();
        let a = u_lo.max(s_lo).max(0.0);
        let b = u_hi.min(s_hi);
        Ok((a, b))
    }

    /// `∫ u^k nu_x(du)` over `u ∈ [u_lo, u_hi]` at time `x` (signed moments).
    pub fn u_moment(&self, k: u32, x: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
        if let JumpMarginal::Discrete(atoms) = &self.marginal {
            return Ok(atoms
                .iter()
                .filter(|(u, _)| *u >= u_lo && *u <= u_hi)
                .map(|(u, w)| w * u.powi(k as i32))
                .sum());
        }
        let (a, b) = self.continuous_range(u_lo, u_hi)?;
        if b <= a {
            return Ok(0.0);
        }
        if a == 0.0 && k == 0 {
            return Err(Error::InfiniteMass(format!(
                "{:?} has infinite activity near u = 0; set a positive epsilon",
                self.marginal
            )));
        }
        match &self.marginal {
            JumpMarginal::GeneralizedGamma { sigma, gamma: g } => gen_gamma_moment(k, *sigma, *g, a, b),
            JumpMarginal::ExtendedGamma { beta: bf } => Ok(ext_gamma_moment(k, bf.eval(x), a, b)),
            JumpMarginal::Beta { c } => beta_moment(k, c.eval(x), a, b),
            JumpMarginal::Discrete(_) => unreachable!(),
        }
    }

    /// `∫ |u|^k nu_x(du)` over the jump range.
    pub fn u_abs_moment(&self, k: u32, x: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
        if let JumpMarginal::Discrete(atoms) = &self.marginal {
            return Ok(atoms
                .iter()
                .filter(|(u, _)| *u >= u_lo && *u <= u_hi)
                .map(|(u, w)| w * u.abs().powi(k as i32))
                .sum());
        }
        self.u_moment(k, x, u_lo, u_hi)
    }

    /// Jump moment density `x ↦ ∫ u^k nu_x(du)` integrated over the window's time range.
    pub fn window_moment(&self, k: u32, region: &Window) -> Result<f64> {
        if region.is_empty() {
            return Ok(0.0);
        }
        let (lo, hi) = self.time_range(region.x_lo, region.x_hi);
        if hi <= lo {
            return Ok(0.0);
        }
        if self.is_homogeneous() {
            return Ok(self.u_moment(k, 0.0, region.u_lo, region.u_hi)? * (hi - lo));
        }
        // fail early on infinite mass instead of inside the quadrature closure
        self.u_moment(k, lo, region.u_lo, region.u_hi)?;
        integrate_time(|x| self.u_moment(k, x, region.u_lo, region.u_hi).unwrap_or(f64::NAN), lo, hi)
    }

    /// `∫_0^eps u^j nu_x(du)`: the part removed by the truncation.
    pub fn neglected_moment(&self, j: u32, x: f64) -> f64 {
        let eps = self.epsilon;
        if eps == 0.0 || j == 0 {
            return if eps == 0.0 { 0.0 } else { f64::INFINITY };
        }
        let jf = j as f64;
        match &self.marginal {
            JumpMarginal::Discrete(_) => 0.0,
            JumpMarginal::GeneralizedGamma { sigma, gamma: g } => {
                let s = jf - sigma;
                g.powf(-s) * gamma(s) * gamma_lr(s, g * eps) / gamma(1.0 - sigma)
            }
            JumpMarginal::ExtendedGamma { beta: bf } => {
                let b = bf.eval(x);
                b.powf(-jf) * gamma(jf) * gamma_lr(jf, b * eps)
            }
            JumpMarginal::Beta { c } => {
                let c = c.eval(x);
                c * beta(jf, c) * beta_reg(jf, c, eps)
            }
        }
    }
}

fn integrate_time<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    // the sqrt-shaped densities are only non-smooth at x = 0
    let mut total = 0.0;
    let mut cuts = vec![lo];
    let mut edge = if lo < 1.0 && hi > 1.0 { 1.0 } else { f64::NAN };
    while edge.is_finite() && edge < hi {
        cuts.push(edge);
        edge *= 4.0;
    }
    cuts.push(hi);
    for w in cuts.windows(2) {
        total += integrate(&f, w[0], w[1], OUTER_TOL)?.value;
    }
    if total.is_nan() {
        return Err(Error::Divergent("moment density is not finite on the window".into()));
    }
    Ok(total)
}

fn gen_gamma_moment(k: u32, sigma: f64, g: f64, a: f64, b: f64) -> Result<f64> {
    let norm = gamma(1.0 - sigma);
    if k == 0 {
        let z = g * a;
        if b.is_infinite() && z <= 2.0 {
            // Γ(-σ, z) = (z^{-σ} e^{-z} - Γ(1-σ, z)) / σ
            let upper = gamma_ur(1.0 - sigma, z) * norm;
            return Ok(g.powf(sigma) * (z.powf(-sigma) * (-z).exp() - upper) / (sigma * norm));
        }
        let b_eff = b.min(a + 750.0 / g);
        let e = integrate(
            |t: f64| {
                let u = t.exp();
                u.powf(-sigma) * (-g * u).exp()
            },
            a.ln(),
            b_eff.ln(),
            INNER_TOL,
        )?;
        return Ok(e.value / norm);
    }
    let s = k as f64 - sigma;
    let qa = if a > 0.0 { gamma_ur(s, g * a) } else { 1.0 };
    let qb = if b.is_finite() { gamma_ur(s, g * b) } else { 0.0 };
    Ok(g.powf(-s) * gamma(s) * (qa - qb) / norm)
}

fn ext_gamma_moment(k: u32, b_rate: f64, a: f64, b: f64) -> f64 {
    if k == 0 {
        let upper = if b.is_finite() { exp_int_e1(b_rate * b) } else { 0.0 };
        return exp_int_e1(b_rate * a) - upper;
    }
    let kf = k as f64;
    let qa = if a > 0.0 { gamma_ur(kf, b_rate * a) } else { 1.0 };
    let qb = if b.is_finite() { gamma_ur(kf, b_rate * b) } else { 0.0 };
    b_rate.powf(-kf) * gamma(kf) * (qa - qb)
}

fn beta_moment(k: u32, c: f64, a: f64, b: f64) -> Result<f64> {
    if k == 0 && c < 1.0 {
        // v = (1-u)^c turns c u^{-1}(1-u)^{c-1} du into dv / (1 - v^{1/c})
        let v_lo = (c * (-b.min(1.0)).ln_1p()).exp();
        let v_hi = (c * (-a).ln_1p()).exp();
        let e = integrate(|v: f64| -1.0 / (v.ln() / c).exp_m1(), v_lo, v_hi, INNER_TOL)?;
        return Ok(e.value);
    }
    if k == 0 {
        // ∫_a^b u^{-1}(1-u)^{c-1} du = ln(b/a) + ∫_a^b ((1-u)^{c-1} - 1)/u du
        let smooth = integrate(
            |u: f64| if u == 0.0 { -(c - 1.0) } else { ((c - 1.0) * (-u).ln_1p()).exp_m1() / u },
            a,
            b,
            INNER_TOL,
        )?;
        return Ok(c * ((b / a).ln() + smooth.value));
    }
    let kf = k as f64;
    Ok(c * beta(kf, c) * (beta_reg(kf, c, b.min(1.0)) - beta_reg(kf, c, a)))
}

/// `μ(region)`; errors on infinite mass instead of returning a number.
pub fn measure_of(control: &ControlMeasure, region: &Window) -> Result<f64> {
    control.window_moment(0, region)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub u: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub atoms: Vec<Atom>,
    pub window: Window,
    pub total_mass: f64,
    pub seed: u64,
}

impl PointPattern {
    pub fn new(atoms: Vec<Atom>, window: Window, total_mass: f64, seed: u64) -> Result<Self> {
        if let Some(a) = atoms.iter().find(|a| !window.contains(a.u, a.x)) {
            return Err(invalid("atoms", format!("atom ({}, {}) lies outside the window", a.u, a.x)));
        }
        Ok(Self {
            atoms,
            window,
            total_mass,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn count_in(&self, region: &Window) -> usize {
        self.atoms.iter().filter(|a| region.contains(a.u, a.x)).count()
    }

    /// Writes `# key = value` metadata lines followed by a `u,x` table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let w = &self.window;
        writeln!(out, "# window = {}, {}, {}, {}", fmt_bound(w.u_lo), fmt_bound(w.u_hi), w.x_lo, w.x_hi)?;
        if !self.total_mass.is_nan() {
            writeln!(out, "# total_mass = {}", self.total_mass)?;
        }
        writeln!(out, "# seed = {:#018x}", self.seed)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["u", "x"])?;
        for a in &self.atoms {
            wtr.write_record([a.u.to_string(), a.x.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let meta: String = text
            .lines()
            .filter_map(|l| l.trim_start().strip_prefix('#'))
            // `#!` lines carry an embedded run config, not pattern metadata
            .filter(|l| !l.starts_with('!'))
            .map(|l| format!("{l}\n"))
            .collect();
        let cfg = Config::parse(&meta)?;
        let window_entry = cfg.require("", "window")?;
        let bounds = parse_f64_list(window_entry)?;
        if bounds.len() != 4 {
            return Err(Error::Csv("window needs four bounds".into()));
        }
        let window = Window::new(bounds[0], bounds[1], bounds[2], bounds[3])?;
        let total_mass = match cfg.entry("", "total_mass") {
            Some(e) => parse_f64(e)?,
            None => f64::NAN,
        };
        let seed = cfg.get_u64("", "seed")?.unwrap_or(0);
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "u" || &headers[1] != "x" {
            return Err(Error::Csv(format!("expected header `u,x`, found {headers:?}")));
        }
        let mut atoms = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let get = |j: usize| {
                rec.get(j)
                    .and_then(parse_number)
                    .filter(|v| v.is_finite())
                    .ok_or(Error::NonFinite(i))
            };
            atoms.push(Atom { u: get(0)?, x: get(1)? });
        }
        Self::new(atoms, window, total_mass, seed)
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Sampler for `u^{-1} e^{-b u}` on `[a, h]` (b >= 0) as a thinned two-part
/// envelope: log-uniform below `m = max(a, 1/b)`, exponential above.
#[derive(Debug, Clone, Copy)]
struct InvExpEnvelope {
    a: f64,
    h: f64,
    b: f64,
    m: f64,
    mass_low: f64,
    mass_high: f64,
}

impl InvExpEnvelope {
    fn new(a: f64, h: f64, b: f64) -> Result<Self> {
        if b == 0.0 && h.is_infinite() {
            return Err(Error::InfiniteMass("u^{-1} density without decay on an unbounded jump range".into()));
        }
        let m = if b > 0.0 { a.max(1.0 / b).min(h) } else { h };
        let mass_low = (-b * a).exp() * (m / a).ln();
        let mass_high = if m < h {
            let upper = if h.is_finite() { (-b * (h - m)).exp() } else { 0.0 };
            (-b * m).exp() * (1.0 - upper) / (b * m)
        } else {
            0.0
        };
        Ok(Self {
            a,
            h,
            b,
            m,
            mass_low,
            mass_high,
        })
    }

    fn mass(&self) -> f64 {
        self.mass_low + self.mass_high
    }

    /// Draws a proposal and returns it with its acceptance probability against `u^{-1} e^{-bu}`.
    fn propose(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let pick: f64 = rng.random::<f64>() * self.mass();
        if pick < self.mass_low {
            let v: f64 = rng.random();
            let u = self.a * (self.m / self.a).powf(v);
            (u, (-self.b * (u - self.a)).exp())
        } else {
            let v: f64 = rng.random();
            let span = if self.h.is_finite() {
                -(-self.b * (self.h - self.m)).exp_m1()
            } else {
                1.0
            };
            let u = self.m - (-(v * span)).ln_1p() / self.b;
            (u.min(self.h), self.m / u)
        }
    }
}

#[derive(Debug, Clone)]
enum Proposal {
    Discrete { cumulative: Vec<f64>, atoms: Vec<f64> },
    /// truncated Pareto `e^{-gamma a} u^{-1-sigma} / Γ(1-σ)`, thinned by `e^{-gamma (u - a)}`
    GenGamma { sigma: f64, gamma: f64, a: f64, b: f64 },
    ExtGamma { env: InvExpEnvelope, beta: PositiveFn, beta_min: f64 },
    Beta { env: InvExpEnvelope, c: PositiveFn, c_max: f64, b: f64 },
}

#[derive(Debug, Clone)]
struct Strip {
    x_lo: f64,
    x_hi: f64,
    mass: f64,
    proposal: Proposal,
}

/// Precomputed dominating measures for repeated sampling on one window.
#[derive(Debug, Clone)]
pub struct PatternSampler {
    window: Window,
    total_mass: f64,
    strips: Vec<Strip>,
}

const MAX_STRIPS: usize = 4096;

impl PatternSampler {
    pub fn new(control: &ControlMeasure, window: &Window) -> Result<Self> {
        let (x_lo, x_hi) = control.time_range(window.x_lo, window.x_hi);
        let mut strips = Vec::new();
        if x_hi > x_lo && window.u_lo <= window.u_hi {
            match control.marginal() {
                JumpMarginal::Discrete(atoms) => {
                    let kept: Vec<(f64, f64)> = atoms
                        .iter()
                        .copied()
                        .filter(|(u, _)| *u >= window.u_lo && *u <= window.u_hi)
                        .collect();
                    let mut acc = 0.0;
                    let cumulative = kept.iter().map(|(_, w)| {
                        acc += w;
                        acc
                    });
                    let cumulative: Vec<f64> = cumulative.collect();
                    strips.push(Strip {
                        x_lo,
                        x_hi,
                        mass: acc * (x_hi - x_lo),
                        proposal: Proposal::Discrete {
                            cumulative,
                            atoms: kept.iter().map(|(u, _)| *u).collect(),
                        },
                    });
                }
                JumpMarginal::GeneralizedGamma { sigma, gamma: g } => {
                    let (a, b) = control.continuous_range(window.u_lo, window.u_hi)?;
                    let norm = gamma(1.0 - sigma);
                    let upper = if b.is_finite() { b.powf(-sigma) } else { 0.0 };
                    let density = (-g * a).exp() * (a.powf(-sigma) - upper) / (sigma * norm);
                    strips.push(Strip {
                        x_lo,
                        x_hi,
                        mass: density * (x_hi - x_lo),
                        proposal: Proposal::GenGamma {
                            sigma: *sigma,
                            gamma: *g,
                            a,
                            b,
                        },
                    });
                }
                JumpMarginal::ExtendedGamma { beta: bf } => {
                    let (a, h) = control.continuous_range(window.u_lo, window.u_hi)?;
                    for (lo, hi) in strip_edges(x_lo, x_hi) {
                        let beta_min = bf.eval(lo);
                        let env = InvExpEnvelope::new(a, h, beta_min)?;
                        strips.push(Strip {
                            x_lo: lo,
                            x_hi: hi,
                            mass: env.mass() * (hi - lo),
                            proposal: Proposal::ExtGamma { env, beta: *bf, beta_min },
                        });
                    }
                }
                JumpMarginal::Beta { c } => {
                    let (a, h) = control.continuous_range(window.u_lo, window.u_hi)?;
                    for (lo, hi) in strip_edges(x_lo, x_hi) {
                        let c_min = c.eval(lo);
                        let c_max = c.eval(hi);
                        if c_min < 1.0 {
                            return Err(Error::Unsupported(format!(
                                "Beta control sampling needs c(x) >= 1, found {c_min} at x = {lo}"
                            )));
                        }
                        let env = InvExpEnvelope::new(a, h, c_min - 1.0)?;
                        strips.push(Strip {
                            x_lo: lo,
                            x_hi: hi,
                            mass: c_max * env.mass() * (hi - lo),
                            proposal: Proposal::Beta {
                                env,
                                c: *c,
                                c_max,
                                b: c_min - 1.0,
                            },
                        });
                    }
                }
            }
        }
        let total_mass = measure_of(control, window)?;
        if total_mass == 0.0 {
            strips.clear();
        }
        Ok(Self {
            window: *window,
            total_mass,
            strips,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Mass of the dominating (proposal) measure; equals `total_mass` for exact samplers.
    pub fn proposal_mass(&self) -> f64 {
        self.strips.iter().map(|s| s.mass).sum()
    }

    pub fn sample(&self, seed: u64) -> PointPattern {
        let mut rng = rng_from_seed(seed);
        let mut atoms = Vec::new();
        self.sample_into(&mut rng, &mut atoms);
        PointPattern {
            atoms,
            window: self.window,
            total_mass: self.total_mass,
            seed,
        }
    }

    pub fn sample_into(&self, rng: &mut ChaCha8Rng, atoms: &mut Vec<Atom>) {
        for strip in &self.strips {
            let n = poisson_count(rng, strip.mass);
            atoms.reserve(n as usize);
            let width = strip.x_hi - strip.x_lo;
            for _ in 0..n {
                let x = strip.x_lo + width * rng.random::<f64>();
                let (u, keep) = match &strip.proposal {
                    Proposal::Discrete { cumulative, atoms: us } => {
                        let total = cumulative.last().copied().unwrap_or(0.0);
                        let t = rng.random::<f64>() * total;
                        let idx = cumulative.partition_point(|c| *c <= t).min(us.len() - 1);
                        (us[idx], 1.0)
                    }
                    Proposal::GenGamma { sigma, gamma: g, a, b } => {
                        let v: f64 = rng.random();
                        let top = a.powf(-sigma);
                        let bottom = if b.is_finite() { b.powf(-sigma) } else { 0.0 };
                        let u = (top - v * (top - bottom)).powf(-1.0 / sigma);
                        (u, (-g * (u - a)).exp())
                    }
                    Proposal::ExtGamma { env, beta, beta_min } => {
                        let (u, acc) = env.propose(rng);
                        (u, acc * (-(beta.eval(x) - beta_min) * u).exp())
                    }
                    Proposal::Beta { env, c, c_max, b } => {
                        let (u, acc) = env.propose(rng);
                        let cx = c.eval(x);
                        let shape = if u < 1.0 {
                            ((cx - 1.0) * (-u).ln_1p() + b * u).exp()
                        } else {
                            0.0
                        };
                        (u, acc * (cx / c_max) * shape)
                    }
                };
                if keep < 1.0 && rng.random::<f64>() >= keep {
                    continue;
                }
                if self.window.contains(u, x) {
                    atoms.push(Atom { u, x });
                }
            }
        }
    }
}

fn strip_edges(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let n = ((hi - lo).ceil() as usize).clamp(1, MAX_STRIPS);
    let w = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            let a = lo + i as f64 * w;
            let b = if i + 1 == n { hi } else { lo + (i + 1) as f64 * w };
            (a, b)
        })
        .collect()
}

pub(crate) fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}

pub fn sample_pattern(control: &ControlMeasure, window: &Window, seed: u64) -> Result<PointPattern> {
    Ok(PatternSampler::new(control, window)?.sample(seed))
}

/// Atom count in `region` minus `μ(region)`.
pub fn compensated_count(pattern: &PointPattern, region: &Window, control: &ControlMeasure) -> Result<f64> {
    if !pattern.window.contains_window(region) {
        return Err(Error::RegionOutsideWindow);
    }
    Ok(pattern.count_in(region) as f64 - measure_of(control, region)?)
}

/// Reads a `[section]` describing a control measure:
///
/// ```text
/// kind = discrete | generalized_gamma | extended_gamma | beta
/// atoms = 1:0.5, -1:0.5           # discrete
/// sigma = 0.5 / gamma = 1          # generalized_gamma
/// beta_offset = 1 / beta_slope = 1 # extended_gamma, beta(x) = offset + slope sqrt(x)
/// c_floor = 1                      # beta, c(x) = max(sqrt(x), floor)
/// epsilon = 1e-4
/// time = line | positive
/// ```
pub fn control_from_config(cfg: &Config, section: &str) -> Result<ControlMeasure> {
    let kind = cfg.require(section, "kind")?;
    let eps = cfg.get_f64(section, "epsilon")?.unwrap_or(0.0);
    let control = match kind.value.as_str() {
        "discrete" => {
            let e = cfg.require(section, "atoms")?;
            let atoms = e
                .value
                .split(',')
                .map(|item| {
                    let (u, w) = item.trim().split_once(':').unwrap_or((item.trim(), "1"));
                    match (parse_number(u.trim()), parse_number(w.trim())) {
                        (Some(u), Some(w)) if u.is_finite() && w.is_finite() => Ok((u, w)),
                        _ => Err(Error::Config {
                            line: e.line,
                            msg: format!("bad atom `{}` (expected u:weight)", item.trim()),
                        }),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            ControlMeasure::discrete(atoms)
        }
        "generalized_gamma" => ControlMeasure::generalized_gamma(
            cfg.get_f64(section, "sigma")?.unwrap_or(0.5),
            cfg.get_f64(section, "gamma")?.unwrap_or(1.0),
            eps,
        ),
        "extended_gamma" => ControlMeasure::extended_gamma(
            PositiveFn::SqrtAffine {
                offset: cfg.get_f64(section, "beta_offset")?.unwrap_or(1.0),
                slope: cfg.get_f64(section, "beta_slope")?.unwrap_or(1.0),
            },
            eps,
        ),
        "beta" => ControlMeasure::beta(
            PositiveFn::SqrtFloor {
                floor: cfg.get_f64(section, "c_floor")?.unwrap_or(1.0),
            },
            eps,
        ),
        other => {
            return Err(Error::Config {
                line: kind.line,
                msg: format!("unknown control kind `{other}`"),
            })
        }
    }
    .map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            line: kind.line,
            msg: format!("{name}: {reason}"),
        },
        other => other,
    })?;
    Ok(match cfg.get(section, "time") {
        None => control,
        Some("line") => control.with_time_support(TimeSupport::Line),
        Some("positive") => control.with_time_support(TimeSupport::PositiveHalfLine),
        Some(other) => {
            return Err(Error::Config {
                line: cfg.entry(section, "time").map(|e| e.line).unwrap_or(0),
                msg: format!("unknown time support `{other}`"),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rate() -> ControlMeasure {
        ControlMeasure::dirac(1.0).unwrap()
    }

    #[test]
    fn discrete_mass_is_product_of_masses() {
        let c = ControlMeasure::symmetric_bernoulli();
        let w = Window::time(0.0, 4.0).unwrap();
        assert_eq!(measure_of(&c, &w).unwrap(), 4.0);
        assert_eq!(measure_of(&c, &Window::empty()).unwrap(), 0.0);
        let half = Window::new(0.0, 2.0, 0.0, 4.0).unwrap();
        assert_eq!(measure_of(&c, &half).unwrap(), 2.0);
    }

    #[test]
    fn infinite_activity_without_cutoff_is_an_error() {
        let c = ControlMeasure::generalized_gamma(0.5, 1.0, 0.0).unwrap();
        let w = Window::new(0.0, f64::INFINITY, 0.0, 1.0).unwrap();
        assert!(matches!(measure_of(&c, &w), Err(Error::InfiniteMass(_))));
        let c = ControlMeasure::extended_gamma(PositiveFn::Constant(1.0), 0.0).unwrap();
        assert!(matches!(measure_of(&c, &w), Err(Error::InfiniteMass(_))));
    }

    #[test]
    fn generalized_gamma_mass_matches_reference() {
        // 4e6-point trapezoid rule in t = ln u over u in [0.1, 60]
        let c = ControlMeasure::generalized_gamma(0.5, 1.0, 0.1).unwrap();
        let w = Window::new(0.0, f64::INFINITY, 0.0, 1.0).unwrap();
        let m = measure_of(&c, &w).unwrap();
        assert!((m - 1.919_242_825_393_775).abs() < 1e-8 * m, "{m}");
        // the closed form and the quadrature branch agree
        let q = gen_gamma_moment(0, 0.5, 1.0, 0.1, 1e6).unwrap();
        assert!((q - m).abs() < 1e-10 * m);
    }

    #[test]
    fn cached_moments_match_direct_integration() {
        let c = ControlMeasure::generalized_gamma(0.4, 2.0, 0.05).unwrap();
        for k in 1..=6u32 {
            let direct = integrate(
                |u: f64| u.powi(k as i32) * u.powf(-1.4) * (-2.0 * u).exp() / gamma(0.6),
                0.05,
                f64::INFINITY,
                Tolerance {
                    abs: 1e-300,
                    rel: 1e-13,
                    max_intervals: 4000,
                },
            )
            .unwrap()
            .value;
            let cached = c.moment(k as usize).unwrap();
            assert!(((cached - direct) / direct).abs() < 1e-10, "k={k}: {cached} vs {direct}");
        }
        let b = ControlMeasure::symmetric_bernoulli();
        assert_eq!(b.moment(2), Some(1.0));
        assert_eq!(b.moment(3), Some(0.0));
    }

    #[test]
    fn nonhomogeneous_moments_match_direct_integration() {
        let eg = ControlMeasure::extended_gamma(PositiveFn::SqrtAffine { offset: 1.0, slope: 1.0 }, 1e-3).unwrap();
        let beta_c = ControlMeasure::beta(PositiveFn::SqrtFloor { floor: 1.0 }, 1e-3).unwrap();
        let tol = Tolerance {
            abs: 1e-300,
            rel: 1e-13,
            max_intervals: 4000,
        };
        for x in [0.5f64, 9.0, 400.0] {
            let bx = 1.0 + x.sqrt();
            let cx = x.sqrt().max(1.0);
            for k in 0..=3u32 {
                let d_eg = integrate(|u: f64| u.powi(k as i32 - 1) * (-bx * u).exp(), 1e-3, f64::INFINITY, tol)
                    .unwrap()
                    .value;
                let got = eg.u_moment(k, x, f64::NEG_INFINITY, f64::INFINITY).unwrap();
                assert!(((got - d_eg) / d_eg).abs() < 1e-10, "eg x={x} k={k}");
                let d_b = integrate(|u: f64| cx * u.powi(k as i32 - 1) * (1.0 - u).powf(cx - 1.0), 1e-3, 1.0, tol)
                    .unwrap()
                    .value;
                let got = beta_c.u_moment(k, x, f64::NEG_INFINITY, f64::INFINITY).unwrap();
                assert!(((got - d_b) / d_b).abs() < 1e-10, "beta x={x} k={k}: {got} vs {d_b}");
            }
        }
    }

    #[test]
    fn additivity_over_disjoint_regions() {
        let c = ControlMeasure::extended_gamma(PositiveFn::SqrtAffine { offset: 1.0, slope: 1.0 }, 1e-3).unwrap();
        let whole = measure_of(&c, &Window::new(0.0, f64::INFINITY, 0.0, 50.0).unwrap()).unwrap();
        let a = measure_of(&c, &Window::new(0.0, f64::INFINITY, 0.0, 17.0).unwrap()).unwrap();
        let b = measure_of(&c, &Window::new(0.0, f64::INFINITY, 17.0, 50.0).unwrap()).unwrap();
        assert!(((a + b - whole) / whole).abs() < 1e-10);
    }

    #[test]
    fn zero_mass_gives_empty_pattern() {
        let c = unit_rate();
        let w = Window::new(2.0, 3.0, 0.0, 5.0).unwrap();
        let p = sample_pattern(&c, &w, 1).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.total_mass, 0.0);
    }

    #[test]
    fn sampling_is_deterministic_and_inside_window() {
        let c = ControlMeasure::beta(PositiveFn::SqrtFloor { floor: 1.0 }, 1e-2).unwrap();
        let w = Window::new(0.0, 1.0, 0.0, 30.0).unwrap();
        let s = PatternSampler::new(&c, &w).unwrap();
        let p1 = s.sample(99);
        let p2 = s.sample(99);
        assert_eq!(p1, p2);
        assert!(p1.atoms.iter().all(|a| w.contains(a.u, a.x)));
        assert!(s.proposal_mass() >= s.total_mass());
    }

    #[test]
    fn beta_mass_below_unit_concentration() {
        let c = ControlMeasure::beta(PositiveFn::Constant(0.5), 1e-3).unwrap();
        let got = c.u_moment(0, 0.0, 0.0, 1.0).unwrap();
        // mpmath: 0.5 * quad(u^-1 (1-u)^-0.5, [1e-3, 1])
        assert!((got - 4.146_774_726_248_896).abs() < 1e-10, "{got}");
    }

    #[test]
    fn beta_sampler_rejects_small_c() {
        let c = ControlMeasure::beta(PositiveFn::SqrtFloor { floor: 0.5 }, 1e-2).unwrap();
        let w = Window::new(0.0, 1.0, 0.0, 3.0).unwrap();
        let got = PatternSampler::new(&c, &w);
        assert!(matches!(got, Err(Error::Unsupported(_))), "{got:?}");
    }

    #[test]
    fn compensated_count_examples() {
        let c = unit_rate();
        let w = Window::time(0.0, 4.0).unwrap();
        let region = Window::time(1.0, 2.0).unwrap();
        let empty = PointPattern::new(vec![], w, 4.0, 0).unwrap();
        assert_eq!(compensated_count(&empty, &region, &c).unwrap(), -1.0);
        let three = PointPattern::new(
            vec![Atom { u: 1.0, x: 1.1 }, Atom { u: 1.0, x: 1.5 }, Atom { u: 1.0, x: 1.9 }],
            w,
            4.0,
            0,
        )
        .unwrap();
        assert_eq!(compensated_count(&three, &region, &c).unwrap(), 2.0);
        let outside = Window::time(3.0, 5.0).unwrap();
        assert!(matches!(compensated_count(&three, &outside, &c), Err(Error::RegionOutsideWindow)));
    }

    #[test]
    fn csv_round_trip() {
        let c = ControlMeasure::symmetric_bernoulli();
        let w = Window::time(-1.0, 3.0).unwrap();
        let p = sample_pattern(&c, &w, 5).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = PointPattern::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p, q);

        // embedded `#!` config lines are skipped; an unknown mass stays unknown
        let text = "# tool = pchaos\n#! [run]\n#! seed = 3\n# window = -inf, inf, 0, 2\nu,x\n1,0.5\n";
        let r = PointPattern::read_csv(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r.total_mass.is_nan());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let again = PointPattern::read_csv(buf.as_slice()).unwrap();
        assert_eq!((again.atoms, again.window, again.seed), (r.atoms, r.window, r.seed));
        assert!(again.total_mass.is_nan());
    }

    #[test]
    fn control_from_config_sections() {
        let cfg = Config::parse("[c]\nkind = discrete\natoms = 1:0.5, -1:0.5\n[g]\nkind = extended_gamma\nepsilon = 1e-4\n").unwrap();
        let c = control_from_config(&cfg, "c").unwrap();
        assert_eq!(c.moment(0), Some(1.0));
        assert_eq!(c.moment(1), Some(0.0));
        assert_eq!(c.moment(4), Some(1.0));
        let g = control_from_config(&cfg, "g").unwrap();
        assert!(!g.is_homogeneous());
        let bad = Config::parse("[c]\nkind = discrete\natoms = 1:-2\n").unwrap();
        assert!(matches!(control_from_config(&bad, "c"), Err(Error::Config { line: 2, .. })));
    }
}
