//! Adaptive Gauss–Kronrod integration and fixed Gauss–Legendre panel rules.

use crate::error::{Error, Result};
use crate::special::gauss_legendre;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-14,
            rel: 1e-10,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive G7/K15 on a finite interval, bisecting the worst panel until the
/// summed error estimate meets `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    if !(a.is_finite() && b.is_finite()) {
        return integrate_improper(&f, a, b, tol);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (v, e) = gk15(&f, lo, hi);
    let mut panels = vec![(lo, hi, v, e)];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Divergent(format!("integrand non-finite on [{lo}, {hi}]")));
        }
        if err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok(Estimate {
                value: sign * total,
                error: err,
            });
        }
        if panels.len() >= tol.max_intervals {
            return Err(Error::Divergent(format!(
                "no convergence on [{lo}, {hi}]: estimate {total:e}, error {err:e}"
            )));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&f, pa, mid);
        let (v2, e2) = gk15(&f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

/// Integrals with an infinite endpoint, through x = a + t/(1-t) style maps.
fn integrate_improper(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    match (a.is_finite(), b.is_finite()) {
        (true, false) if b > 0.0 => integrate(
            |t| {
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, true) if a < 0.0 => integrate(
            |t| {
                let s = 1.0 - t;
                f(b - t / s) / (s * s)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, false) if a < b => {
            let left = integrate_improper(f, f64::NEG_INFINITY, 0.0, tol)?;
            let right = integrate_improper(f, 0.0, f64::INFINITY, tol)?;
            Ok(Estimate {
                value: left.value + right.value,
                error: left.error + right.error,
            })
        }
        _ => {
            let flipped = integrate_improper(f, b, a, tol)?;
            Ok(Estimate {
                value: -flipped.value,
                error: flipped.error,
            })
        }
    }
}

/// Composite Gauss–Legendre rule: the breakpoints are kept as panel edges and
/// each gap is cut into panels no wider than `width`.
#[derive(Debug, Clone)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(breaks: &[f64], width: f64, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let mut edges: Vec<f64> = breaks.iter().copied().filter(|v| v.is_finite()).collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for pair in edges.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let count = ((hi - lo) / width).ceil().max(1.0) as usize;
            let h = (hi - lo) / count as f64;
            for k in 0..count {
                let a = lo + k as f64 * h;
                let c = a + 0.5 * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push(c + 0.5 * h * x);
                    weights.push(0.5 * h * w);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
