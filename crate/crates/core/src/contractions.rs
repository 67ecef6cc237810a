//! Contractions `f ⋆_r^l g` of kernels of arity one or two, their squared
//! norms, and the product formula for `I_p(f) I_q(g)` with `p, q <= 2`.
//!
//! `r` variables are identified and `l` of those are integrated out, so the
//! result has arity `p + q - r - l`. Results of arity three or four are never
//! materialized; only their squared norms are computed, by reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    closed_form_double_h_n11, closed_form_double_h_n21, integrate_square_prepared, norm_estimate, GridKernel, GridValues,
    Kernel, Profile, Repr, Route, Separable, Shape1, Shape2,
};
use crate::piecewise::PiecewiseExp;
use crate::point_process::{ControlMeasure, TimeSupport};
use crate::quadrature::PanelRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractionIndex {
    pub r: usize,
    pub l: usize,
}

impl ContractionIndex {
    pub fn new(r: usize, l: usize) -> Self {
        Self { r, l }
    }

    fn check(self, p: usize, q: usize) -> Result<()> {
        if self.l <= self.r && self.r <= p.min(q) {
            Ok(())
        } else {
            Err(Error::ContractionIndex {
                r: self.r,
                l: self.l,
                p,
                q,
            })
        }
    }
}

/// Output of a contraction.
#[derive(Debug, Clone, PartialEq)]
pub enum Contraction {
    Scalar(f64),
    Kernel(Kernel),
    /// arity three or four, represented by its squared norm only
    Implicit { arity: usize, norm_sq: f64 },
}

impl Contraction {
    pub fn arity(&self) -> usize {
        match self {
            Contraction::Scalar(_) => 0,
            Contraction::Kernel(k) => k.arity(),
            Contraction::Implicit { arity, .. } => *arity,
        }
    }

    /// Squared norm in `L^2(μ^arity)`; a scalar's "norm" is its square.
    pub fn norm_sq(&self, control: &ControlMeasure) -> Result<f64> {
        match self {
            Contraction::Scalar(v) => Ok(v * v),
            Contraction::Kernel(k) => Ok(norm_estimate(k, 2, control, None)?.value),
            Contraction::Implicit { norm_sq, .. } => Ok(*norm_sq),
        }
    }

    pub fn kernel(&self) -> Option<&Kernel> {
        match self {
            Contraction::Kernel(k) => Some(k),
            _ => None,
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Contraction::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

fn zero_of_arity(arity: usize) -> Contraction {
    match arity {
        0 => Contraction::Scalar(0.0),
        1 | 2 => Contraction::Kernel(Kernel::zero(arity)),
        _ => Contraction::Implicit { arity, norm_sq: 0.0 },
    }
}

pub fn star(f: &Kernel, g: &Kernel, idx: ContractionIndex, control: &ControlMeasure) -> Result<Contraction> {
    let (p, q) = (f.arity(), g.arity());
    if !(1..=2).contains(&p) || !(1..=2).contains(&q) {
        return Err(Error::Unsupported(format!("contractions of arities {p} and {q}")));
    }
    idx.check(p, q)?;
    let arity = p + q - idx.r - idx.l;
    if f.is_zero() || g.is_zero() {
        return Ok(zero_of_arity(arity));
    }
    if idx.r == 0 {
        let n = norm_estimate(f, 2, control, None)?.value * norm_estimate(g, 2, control, None)?.value;
        return match (arity, f.repr(), g.repr()) {
            (2, Repr::Grid(a), Repr::Grid(b)) => Ok(Contraction::Kernel(Kernel::grid(outer_grid(a, b)?).scaled(f.scale() * g.scale()))),
            (2, _, _) => Err(Error::Unsupported("tensor product of analytic arity-1 kernels".into())),
            _ => Ok(Contraction::Implicit { arity, norm_sq: n }),
        };
    }
    let out = match (f.repr(), g.repr()) {
        (Repr::Grid(a), Repr::Grid(b)) => grid_star(a, b, idx, control)?,
        (Repr::Separable(a), Repr::Separable(b)) => separable_star(a, b, idx, control)?,
        _ => return Err(Error::Unsupported("contraction of a grid kernel with an analytic kernel".into())),
    };
    let s = f.scale() * g.scale();
    Ok(match out {
        Contraction::Scalar(v) => Contraction::Scalar(s * v),
        Contraction::Kernel(k) => Contraction::Kernel(k.scaled(s)),
        Contraction::Implicit { arity, norm_sq } => Contraction::Implicit {
            arity,
            norm_sq: s * s * norm_sq,
        },
    })
}

fn same_cells(a: &GridKernel, b: &GridKernel) -> Result<()> {
    if a.cells() == b.cells() {
        Ok(())
    } else {
        Err(Error::Unsupported("contraction of grids on different partitions".into()))
    }
}

fn outer_grid(a: &GridKernel, b: &GridKernel) -> Result<GridKernel> {
    same_cells(a, b)?;
    let (GridValues::One(x), GridValues::One(y)) = (a.values(), b.values()) else {
        return Err(Error::Unsupported("tensor product of arity-2 grids".into()));
    };
    let entries = x
        .iter()
        .enumerate()
        .flat_map(|(i, u)| y.iter().enumerate().map(move |(j, v)| (i, j, u * v)))
        .collect::<Vec<_>>();
    GridKernel::arity2(a.cells().to_vec(), entries)
}

/// Row `k` of `f` as a dense lookup into row `k` of `g`: `Σ_l f_kl g_kl w_l`.
fn row_dot(fr: &[(usize, f64)], gr: &[(usize, f64)], w: &[f64]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < fr.len() && j < gr.len() {
        match fr[i].0.cmp(&gr[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += fr[i].1 * gr[j].1 * w[fr[i].0];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn grid_star(a: &GridKernel, b: &GridKernel, idx: ContractionIndex, control: &ControlMeasure) -> Result<Contraction> {
    same_cells(a, b)?;
    let m = a.masses(control)?;
    let cells = a.cells().to_vec();
    let n = cells.len();
    let zd = a.zero_diagonal || b.zero_diagonal;
    match (a.values(), b.values(), idx.r, idx.l) {
        (GridValues::Two(f), GridValues::Two(g), 1, 1) => {
            let mut acc = vec![0.0; n];
            let mut touched = Vec::new();
            let mut entries = Vec::new();
            for (k, row) in f.iter().enumerate() {
                for &(j, v) in row {
                    for &(l, w) in &g[j] {
                        if acc[l] == 0.0 {
                            touched.push(l);
                        }
                        acc[l] += v * w * m[j];
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                for &l in &touched {
                    entries.push((k, l, acc[l]));
                    acc[l] = 0.0;
                }
                touched.clear();
            }
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity2(cells, entries)?)))
        }
        (GridValues::Two(f), GridValues::Two(g), 2, 1) => {
            let vals = (0..n).map(|k| row_dot(&f[k], &g[k], &m)).collect();
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity1(cells, vals)?)))
        }
        (GridValues::Two(f), GridValues::Two(g), 2, 2) => Ok(Contraction::Scalar((0..n).map(|k| row_dot(&f[k], &g[k], &m) * m[k]).sum())),
        (GridValues::Two(f), GridValues::Two(g), 2, 0) => {
            let mut entries = Vec::new();
            for k in 0..n {
                let (fr, gr) = (&f[k], &g[k]);
                let (mut i, mut j) = (0, 0);
                while i < fr.len() && j < gr.len() {
                    match fr[i].0.cmp(&gr[j].0) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            entries.push((k, fr[i].0, fr[i].1 * gr[j].1));
                            i += 1;
                            j += 1;
                        }
                    }
                }
            }
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity2(cells, entries)?.with_zero_diagonal(zd))))
        }
        (GridValues::Two(f), GridValues::Two(g), 1, 0) => {
            // ‖f ⋆_1^0 g‖^2 = ∫ (∫ f(z,a)^2 da) (∫ g(z,b)^2 db) μ(dz)
            let sq = |rows: &[Vec<(usize, f64)>], k: usize| rows[k].iter().map(|&(j, v)| v * v * m[j]).sum::<f64>();
            let norm_sq = (0..n).map(|k| m[k] * sq(f, k) * sq(g, k)).sum();
            Ok(Contraction::Implicit { arity: 3, norm_sq })
        }
        (GridValues::Two(f), GridValues::One(h), 1, 1) => {
            let vals = f.iter().map(|row| row.iter().map(|&(j, v)| v * h[j] * m[j]).sum()).collect();
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity1(cells, vals)?)))
        }
        (GridValues::Two(f), GridValues::One(h), 1, 0) => {
            let entries = f
                .iter()
                .enumerate()
                .flat_map(|(k, row)| row.iter().map(move |&(j, v)| (k, j, v * h[j])))
                .collect::<Vec<_>>();
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity2(cells, entries)?)))
        }
        (GridValues::One(h), GridValues::Two(g), 1, 1) => {
            let mut vals = vec![0.0; n];
            for (j, row) in g.iter().enumerate() {
                for &(l, w) in row {
                    vals[l] += h[j] * m[j] * w;
                }
            }
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity1(cells, vals)?)))
        }
        (GridValues::One(h), GridValues::Two(g), 1, 0) => {
            let entries = g
                .iter()
                .enumerate()
                .flat_map(|(k, row)| row.iter().map(move |&(j, v)| (k, j, h[k] * v)))
                .collect::<Vec<_>>();
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity2(cells, entries)?)))
        }
        (GridValues::One(x), GridValues::One(y), 1, 1) => Ok(Contraction::Scalar(x.iter().zip(y).zip(&m).map(|((u, v), w)| u * v * w).sum())),
        (GridValues::One(x), GridValues::One(y), 1, 0) => {
            let vals = x.iter().zip(y).map(|(u, v)| u * v).collect();
            Ok(Contraction::Kernel(Kernel::grid(GridKernel::arity1(cells, vals)?)))
        }
        _ => Err(Error::ContractionIndex {
            r: idx.r,
            l: idx.l,
            p: a.arity(),
            q: b.arity(),
        }),
    }
}

fn separable_star(a: &Separable, b: &Separable, idx: ContractionIndex, control: &ControlMeasure) -> Result<Contraction> {
    if !control.is_homogeneous() {
        return Err(Error::Unsupported("contractions of analytic kernels under a non-homogeneous control".into()));
    }
    if a.lower != b.lower {
        return Err(Error::Unsupported("contraction of analytic kernels with different truncations".into()));
    }
    let moment = |j: u32| control.u_moment(j, 0.0, f64::NEG_INFINITY, f64::INFINITY);
    let (k, j) = (a.u_power, b.u_power);
    let sep = |profile, u_power| {
        Kernel::from_parts(
            Repr::Separable(Separable {
                profile,
                u_power,
                lower: a.lower,
            }),
            1.0,
        )
    };
    match (&a.profile, &b.profile, idx.r, idx.l) {
        (Profile::Two(f), Profile::Two(g), 1, 1) => {
            if k != j {
                return Err(Error::Unsupported("⋆_1^1 of analytic kernels with different jump powers".into()));
            }
            let kernel = sep(Profile::Two(Shape2::Star11(Box::new(f.clone()), Box::new(g.clone()))), k);
            Ok(Contraction::Kernel(kernel.scaled(moment(k + j)?)))
        }
        (Profile::Two(f), Profile::Two(g), 2, 1) => {
            let kernel = sep(Profile::One(Shape1::Star21(Box::new(f.clone()), Box::new(g.clone()))), k + j);
            Ok(Contraction::Kernel(kernel.scaled(moment(k + j)?)))
        }
        (Profile::Two(f), Profile::Two(g), 2, 0) => {
            Ok(Contraction::Kernel(sep(Profile::Two(Shape2::Product(Box::new(f.clone()), Box::new(g.clone()))), k + j)))
        }
        (Profile::Two(f), Profile::Two(g), 2, 2) => {
            let product = sep(Profile::Two(Shape2::Product(Box::new(f.clone()), Box::new(g.clone()))), k + j);
            Ok(Contraction::Scalar(crate::kernels::integral(&product, control)?))
        }
        (Profile::Two(f), Profile::Two(g), 1, 0) => {
            let t = star21_overlap(f, g, a.lower)?;
            let c = control.u_abs_moment(2 * k, 0.0, f64::NEG_INFINITY, f64::INFINITY)?
                * control.u_abs_moment(2 * j, 0.0, f64::NEG_INFINITY, f64::INFINITY)?
                * control.u_abs_moment(2 * k + 2 * j, 0.0, f64::NEG_INFINITY, f64::INFINITY)?;
            Ok(Contraction::Implicit { arity: 3, norm_sq: c * t })
        }
        (Profile::One(f), Profile::One(g), 1, 1) => match (f.profile(a.lower), g.profile(b.lower)) {
            (Some(pf), Some(pg)) => {
                let (lo, hi) = control.time_range(f64::NEG_INFINITY, f64::INFINITY);
                let t = pf.mul(&pg).integral_over(lo, hi);
                Ok(Contraction::Scalar(moment(k + j)? * t))
            }
            _ => Err(Error::Unsupported("⋆_1^1 of derived arity-1 profiles".into())),
        },
        _ => Err(Error::Unsupported(format!(
            "⋆_{}^{} of analytic kernels of arities {} and {}",
            idx.r,
            idx.l,
            a.arity(),
            b.arity()
        ))),
    }
}

/// `∫ (∫ phi(x,y)^2 dy)(∫ psi(x,y)^2 dy) dx`
fn star21_overlap(f: &Shape2, g: &Shape2, lower: f64) -> Result<f64> {
    let shape = Shape1::Star21(Box::new(f.clone()), Box::new(f.clone()));
    let other = Shape1::Star21(Box::new(g.clone()), Box::new(g.clone()));
    let (breaks, width) = time_mesh(f, g, lower)?;
    let rule = PanelRule::new(&breaks, width, 10);
    Ok(rule.integrate(|x| shape.eval(x, lower) * other.eval(x, lower)))
}

fn time_mesh(f: &Shape2, g: &Shape2, lower: f64) -> Result<(Vec<f64>, f64)> {
    let probe = Shape2::Product(Box::new(f.clone()), Box::new(g.clone()));
    if probe.slice(lower, lower).is_none() {
        return Err(Error::Unsupported("nested analytic contractions".into()));
    }
    let s = Separable {
        profile: Profile::Two(probe),
        u_power: 0,
        lower,
    };
    let k = Kernel::from_parts(Repr::Separable(s), 1.0);
    let (lo, hi) = k.x_support().unwrap_or((lower, lower));
    let mut breaks = vec![lo, hi];
    if lo < 0.0 && hi > 0.0 {
        breaks.push(0.0);
    }
    breaks.sort_by(f64::total_cmp);
    Ok((breaks, time_scale(f).min(time_scale(g))))
}

fn time_scale(f: &Shape2) -> f64 {
    match f {
        Shape2::OuDoubleH { lambda, .. } | Shape2::OuInstant { lambda, .. } => 1.0 / lambda,
        Shape2::Product(a, b) | Shape2::Star11(a, b) => time_scale(a).min(time_scale(b)),
    }
}

/// Squared norms of the contractions of a symmetric arity-2 kernel with itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionNorms {
    /// `‖f ⋆_1^1 f‖^2`
    pub n11: f64,
    /// `‖f ⋆_2^1 f‖^2`
    pub n21: f64,
    /// `‖f ⋆_1^0 f‖^2`; equal to `n21` by Fubini
    pub n10: f64,
    pub route: Route,
    /// difference between two mesh levels for quadrature-based values
    pub richardson_gap: f64,
}

pub fn contraction_norms(f: &Kernel, control: &ControlMeasure) -> Result<ContractionNorms> {
    if f.arity() != 2 {
        return Err(Error::ArityMismatch {
            expected: 2,
            found: f.arity(),
        });
    }
    if f.is_zero() {
        return Ok(ContractionNorms {
            n11: 0.0,
            n21: 0.0,
            n10: 0.0,
            route: Route::Exact,
            richardson_gap: 0.0,
        });
    }
    if let Repr::Separable(s) = f.repr() {
        if let Some(n) = closed_form_norms(f, s, control)? {
            return Ok(n);
        }
    }
    let idx = ContractionIndex::new;
    let c11 = star(f, f, idx(1, 1), control)?;
    let c21 = star(f, f, idx(2, 1), control)?;
    let (n11, route, gap) = match &c11 {
        Contraction::Kernel(k) => {
            let e = norm_estimate(k, 2, control, None)?;
            (e.value, e.route, e.richardson_gap)
        }
        other => (other.norm_sq(control)?, Route::Exact, 0.0),
    };
    let n21 = c21.norm_sq(control)?;
    let n10 = match f.repr() {
        Repr::Grid(_) => star(f, f, idx(1, 0), control)?.norm_sq(control)?,
        _ => n21,
    };
    for (name, v) in [("n11", n11), ("n21", n21), ("n10", n10)] {
        if !v.is_finite() {
            return Err(Error::Divergent(format!("{name} of the {} kernel", f.family())));
        }
    }
    Ok(ContractionNorms {
        n11,
        n21,
        n10,
        route,
        richardson_gap: gap,
    })
}

fn closed_form_norms(f: &Kernel, s: &Separable, control: &ControlMeasure) -> Result<Option<ContractionNorms>> {
    let Profile::Two(Shape2::OuDoubleH {
        lambda,
        horizon,
        printed: false,
    }) = s.profile
    else {
        return Ok(None);
    };
    if !control.is_homogeneous() || control.time_support() != TimeSupport::Line {
        return Ok(None);
    }
    let k = s.u_power;
    let m = |j: u32| control.u_abs_moment(j, 0.0, f64::NEG_INFINITY, f64::INFINITY);
    let (k2, k4) = (m(2 * k)?, m(4 * k)?);
    let s4 = f.scale().powi(4);
    let n11 = s4 * k2.powi(4) * closed_form_double_h_n11(lambda, horizon);
    let n21 = s4 * k2 * k2 * k4 * closed_form_double_h_n21(lambda, horizon);
    Ok(Some(ContractionNorms {
        n11,
        n21,
        n10: n21,
        route: Route::ClosedForm,
        richardson_gap: 0.0,
    }))
}

/// `⟨f^2, f ⋆_1^1 f⟩`, the cross term in `‖sym(f ⋆_1^0 f)‖^2 = (n10 + 2 t3) / 3`.
pub fn star10_cross(f: &Kernel, control: &ControlMeasure) -> Result<f64> {
    if f.arity() != 2 {
        return Err(Error::ArityMismatch {
            expected: 2,
            found: f.arity(),
        });
    }
    if f.is_zero() {
        return Ok(0.0);
    }
    let s4 = f.scale().powi(4);
    match f.repr() {
        Repr::Grid(g) => {
            let m = g.masses(control)?;
            let c = match star(f, f, ContractionIndex::new(1, 1), control)? {
                Contraction::Kernel(k) => k,
                _ => unreachable!(),
            };
            let Repr::Grid(cg) = c.repr() else { return Ok(0.0) };
            let rows = g.rows().unwrap_or_default();
            let mut acc = 0.0;
            for (k, row) in rows.iter().enumerate() {
                for &(l, v) in row {
                    acc += v * v * cg.value2(k, l) * m[k] * m[l];
                }
            }
            // `c` carries `scale^2` already; the squared values need the other two
            Ok(f.scale().powi(2) * c.scale() * acc)
        }
        Repr::Separable(s) => {
            if !control.is_homogeneous() {
                return Err(Error::Unsupported("analytic contraction under a non-homogeneous control".into()));
            }
            let Profile::Two(shape) = &s.profile else { unreachable!() };
            let k = s.u_power;
            let m = |j: u32| control.u_moment(j, 0.0, f64::NEG_INFINITY, f64::INFINITY);
            let factor = m(3 * k)?.powi(2) * m(2 * k)?;
            if factor == 0.0 {
                return Ok(0.0);
            }
            let lower = s.lower;
            if shape.slice(lower, lower).is_none() {
                return Err(Error::Unsupported("cross term of a nested analytic contraction".into()));
            }
            let (lo, hi) = f.x_support().unwrap_or((lower, lower));
            let (lo, hi) = control.time_range(lo, hi);
            let mut breaks = vec![lo, hi];
            if lo < 0.0 && hi > 0.0 {
                breaks.push(0.0);
            }
            breaks.sort_by(f64::total_cmp);
            let width = time_scale(shape);
            let prep = |x: f64| shape.slice(x, lower).unwrap_or_default();
            let t = integrate_square_prepared(&breaks, width, prep, |_, da: &PiecewiseExp, b, db: &PiecewiseExp| {
                let v = da.eval(b);
                v * v * da.dot(db)
            });
            Ok(s4 * factor * t)
        }
        Repr::Zero { .. } => Ok(0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub r: usize,
    pub l: usize,
    /// multiple-integral order `p + q - r - l`
    pub order: usize,
    /// `r! C(p,r) C(q,r) C(r,l)`
    pub coefficient: f64,
    pub kernel: Contraction,
    /// whether `kernel` was symmetrized (arity-2 grids always are)
    pub symmetrized: bool,
}

/// `I_p(f) I_q(g) = Σ coefficient · I_order(kernel) + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductExpansion {
    pub terms: Vec<ProductTerm>,
    pub constant: f64,
}

pub fn product_expand(p: usize, q: usize, f: &Kernel, g: &Kernel, control: &ControlMeasure) -> Result<ProductExpansion> {
    if !(1..=2).contains(&p) || !(1..=2).contains(&q) {
        return Err(Error::Unsupported(format!("product formula for orders {p} and {q}")));
    }
    if f.arity() != p || g.arity() != q {
        return Err(Error::ArityMismatch {
            expected: p,
            found: f.arity(),
        });
    }
    let binom = |n: usize, k: usize| crate::special::binomial(n, k) as f64;
    let mut terms = Vec::new();
    let mut constant = 0.0;
    for r in 0..=p.min(q) {
        for l in 0..=r {
            let coefficient = crate::special::factorial(r) as f64 * binom(p, r) * binom(q, r) * binom(r, l);
            let kernel = star(f, g, ContractionIndex::new(r, l), control)?;
            let order = p + q - r - l;
            if order == 0 {
                constant += coefficient * kernel.scalar().unwrap_or(0.0);
                continue;
            }
            let (kernel, symmetrized) = match kernel {
                Contraction::Kernel(k) if k.arity() == 2 => match crate::kernels::symmetrize(&k) {
                    Ok(s) => (Contraction::Kernel(s), true),
                    Err(Error::Unsupported(_)) => (Contraction::Kernel(k), false),
                    Err(e) => return Err(e),
                },
                Contraction::Kernel(k) => (Contraction::Kernel(k), true),
                other => (other, false),
            };
            terms.push(ProductTerm {
                r,
                l,
                order,
                coefficient,
                kernel,
                symmetrized,
            });
        }
    }
    Ok(ProductExpansion { terms, constant })
}
