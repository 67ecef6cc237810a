//! Kernels on Z = R x R (jump size u, time x): cell-constant grids and the
//! analytic families used by the OU and hazard-rate functionals.
//!
//! Analytic kernels are separable, `s * u^k * phi(x)` (arity 1) or
//! `s * u^k u'^k * phi(x, x')` (arity 2), with a nonnegative time profile
//! `phi` built from exponentials. Integrals against a homogeneous control
//! factor into jump moments times time integrals, and the time integrals are
//! done exactly piece by piece where the profile is known in closed form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{parse_f64_list, Config};
use crate::error::{invalid, Error, Result};
use crate::piecewise::{Piece, PiecewiseExp};
use crate::point_process::{measure_of, Atom, ControlMeasure, Window};
use crate::quadrature::{integrate, PanelRule, Tolerance};

/// Default OU truncation depth in units of `1/lambda`; `exp(-2 lambda L)` is about 4e-11.
pub const OU_DEPTH: f64 = 12.0;

const GL_ORDER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HazardKernel {
    /// `1{|t - x| <= tau}`
    Rect { tau: f64 },
    /// `1{0 <= x <= t}`
    DykstraLaud,
    /// `sqrt(2 lambda) exp(-lambda (t - x)) 1{0 <= x <= t}`
    Ou { lambda: f64 },
}

impl HazardKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HazardKernel::Rect { tau } if !(tau > 0.0 && tau.is_finite()) => Err(invalid("tau", format!("{tau} must be positive"))),
            HazardKernel::Ou { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(invalid("lambda", format!("{lambda} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match *self {
            HazardKernel::Rect { tau } => f64::from(u8::from((t - x).abs() <= tau)),
            HazardKernel::DykstraLaud => f64::from(u8::from(0.0 <= x && x <= t)),
            HazardKernel::Ou { lambda } => {
                if 0.0 <= x && x <= t {
                    (2.0 * lambda).sqrt() * (-lambda * (t - x)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `x ↦ k(t, x)` as a piecewise exponential.
    pub fn slice(&self, t: f64) -> PiecewiseExp {
        match *self {
            HazardKernel::Rect { tau } => PiecewiseExp::from_pieces(vec![Piece::new(t - tau, t + tau).with(1.0, 0.0, 0.0)]),
            HazardKernel::DykstraLaud if t > 0.0 => PiecewiseExp::from_pieces(vec![Piece::new(0.0, t).with(1.0, 0.0, 0.0)]),
            HazardKernel::Ou { lambda } if t > 0.0 => {
                PiecewiseExp::from_pieces(vec![Piece::new(0.0, t).with((2.0 * lambda).sqrt(), lambda, t)])
            }
            _ => PiecewiseExp::zero(),
        }
    }

    /// Time range of atoms that can contribute to `k(t, ·)` for some `t ∈ [0, horizon]`.
    pub fn atom_range(&self, horizon: f64) -> (f64, f64) {
        match *self {
            HazardKernel::Rect { tau } => (-tau, horizon + tau),
            HazardKernel::DykstraLaud | HazardKernel::Ou { .. } => (0.0, horizon),
        }
    }

    /// `∫_0^T k(s, x) ds`
    pub fn time_integral(&self, x: f64, horizon: f64) -> f64 {
        match *self {
            HazardKernel::Rect { tau } => ((x + tau).min(horizon) - (x - tau).max(0.0)).max(0.0),
            HazardKernel::DykstraLaud => {
                if x >= 0.0 {
                    (horizon - x).max(0.0)
                } else {
                    0.0
                }
            }
            HazardKernel::Ou { lambda } => {
                if x >= 0.0 && x <= horizon {
                    (2.0 * lambda).sqrt() * -(-lambda * (horizon - x)).exp_m1() / lambda
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_0^T k(s, x) k(s, y) ds`
    pub fn pair_time_integral(&self, x: f64, y: f64, horizon: f64) -> f64 {
        match *self {
            HazardKernel::Rect { tau } => {
                let lo = (x.max(y) - tau).max(0.0);
                let hi = (x.min(y) + tau).min(horizon);
                (hi - lo).max(0.0)
            }
            HazardKernel::DykstraLaud => {
                if x >= 0.0 && y >= 0.0 {
                    (horizon - x.max(y)).max(0.0)
                } else {
                    0.0
                }
            }
            HazardKernel::Ou { lambda } => {
                let m = x.max(y);
                if x >= 0.0 && y >= 0.0 && m <= horizon {
                    // e^{λ(x+y)} (e^{-2λm} - e^{-2λT}), kept in non-positive exponents
                    (lambda * (x + y - 2.0 * m)).exp() * -(-2.0 * lambda * (horizon - m)).exp_m1()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Time profile of an arity-1 analytic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape1 {
    /// `sqrt(2/(λT)) e^{λx} (e^{-λ max(x,0)} - e^{-λT})`, x <= T
    OuSingle { lambda: f64, horizon: f64 },
    /// `(1/T) e^{2λx} (e^{-2λ max(x,0)} - e^{-2λT})`; `printed` uses `1 - e^{-2T}` on x <= 0
    OuDiagHstar { lambda: f64, horizon: f64, printed: bool },
    HazardSlice { kernel: HazardKernel, t: f64 },
    /// `x ↦ ∫ phi(x, z) psi(x, z) dz`
    Star21(Box<Shape2>, Box<Shape2>),
}

/// Time profile of an arity-2 analytic kernel (symmetric unless built from
/// two different factors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape2 {
    /// `(1/T) e^{λ(x+y)} (e^{-2λ max(x,y,0)} - e^{-2λT})`, x, y <= T
    OuDoubleH { lambda: f64, horizon: f64, printed: bool },
    /// `2λ e^{-λ(t-x) - λ(t-y)}`, x, y <= t
    OuInstant { lambda: f64, t: f64 },
    /// pointwise product
    Product(Box<Shape2>, Box<Shape2>),
    /// `(x, y) ↦ ∫ phi(x, z) psi(z, y) dz`
    Star11(Box<Shape2>, Box<Shape2>),
}

fn branch_factor(lambda: f64, horizon: f64, printed: bool) -> f64 {
    let rate = if printed { 1.0 } else { lambda };
    -(-2.0 * rate * horizon).exp_m1()
}

impl Shape1 {
    fn upper(&self) -> f64 {
        match self {
            Shape1::OuSingle { horizon, .. } | Shape1::OuDiagHstar { horizon, .. } => *horizon,
            Shape1::HazardSlice { kernel, t } => kernel.slice(*t).support().map(|s| s.1).unwrap_or(*t),
            Shape1::Star21(f, _) => f.upper(),
        }
    }

    fn natural_lower(&self) -> f64 {
        match self {
            Shape1::HazardSlice { kernel, t } => kernel.slice(*t).support().map(|s| s.0).unwrap_or(*t),
            _ => f64::NEG_INFINITY,
        }
    }

    fn scale_hint(&self) -> f64 {
        match self {
            Shape1::OuSingle { lambda, .. } | Shape1::OuDiagHstar { lambda, .. } => 1.0 / lambda,
            Shape1::HazardSlice { kernel, .. } => match *kernel {
                HazardKernel::Rect { tau } => tau,
                HazardKernel::DykstraLaud => 1.0,
                HazardKernel::Ou { lambda } => 1.0 / lambda,
            },
            Shape1::Star21(f, _) => f.scale_hint(),
        }
    }

    pub fn profile(&self, lower: f64) -> Option<PiecewiseExp> {
        match *self {
            Shape1::OuSingle { lambda, horizon } => {
                let c = (2.0 / (lambda * horizon)).sqrt();
                let mut pieces = Vec::new();
                if lower < 0.0 {
                    pieces.push(Piece::new(lower, 0.0_f64.min(horizon)).with(c * -(-lambda * horizon).exp_m1(), lambda, 0.0));
                }
                let lo = lower.max(0.0);
                if lo < horizon {
                    pieces.push(Piece::new(lo, horizon).with(c, 0.0, 0.0).with(-c, lambda, horizon));
                }
                Some(PiecewiseExp::from_pieces(pieces))
            }
            Shape1::OuDiagHstar { lambda, horizon, printed } => {
                let c = 1.0 / horizon;
                let mut pieces = Vec::new();
                if lower < 0.0 {
                    let f = branch_factor(lambda, horizon, printed);
                    pieces.push(Piece::new(lower, 0.0_f64.min(horizon)).with(c * f, 2.0 * lambda, 0.0));
                }
                let lo = lower.max(0.0);
                if lo < horizon {
                    pieces.push(Piece::new(lo, horizon).with(c, 0.0, 0.0).with(-c, 2.0 * lambda, horizon));
                }
                Some(PiecewiseExp::from_pieces(pieces))
            }
            Shape1::HazardSlice { kernel, t } => Some(kernel.slice(t)),
            Shape1::Star21(..) => None,
        }
    }

    pub fn eval(&self, x: f64, lower: f64) -> f64 {
        if x < lower || x > self.upper() {
            return 0.0;
        }
        match self {
            Shape1::Star21(f, g) => match (f.slice(x, lower), g.slice(x, lower)) {
                (Some(p), Some(q)) => p.dot(&q),
                _ => f64::NAN,
            },
            other => other.profile(lower).map(|p| p.eval(x)).unwrap_or(f64::NAN),
        }
    }

    fn breaks(&self, lower: f64) -> Vec<f64> {
        let mut b = match self {
            Shape1::Star21(f, g) => {
                let mut b = f.breaks(lower);
                b.extend(g.breaks(lower));
                b
            }
            other => other.profile(lower).map(|p| p.breakpoints()).unwrap_or_default(),
        };
        b.push(lower.max(self.natural_lower()));
        b.push(self.upper());
        b.retain(|v| v.is_finite() && *v >= lower && *v <= self.upper());
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `(a0, r)` such that the profile equals `e^{r (x - a0)} psi(a0)` for all `x <= a0`.
    fn left_tail(&self) -> Option<(f64, f64)> {
        match *self {
            Shape1::OuSingle { lambda, horizon } => Some((0.0_f64.min(horizon), lambda)),
            Shape1::OuDiagHstar { lambda, horizon, .. } => Some((0.0_f64.min(horizon), 2.0 * lambda)),
            _ => None,
        }
    }
}

impl Shape2 {
    fn upper(&self) -> f64 {
        match self {
            Shape2::OuDoubleH { horizon, .. } => *horizon,
            Shape2::OuInstant { t, .. } => *t,
            Shape2::Product(f, g) | Shape2::Star11(f, g) => f.upper().min(g.upper()),
        }
    }

    fn scale_hint(&self) -> f64 {
        match self {
            Shape2::OuDoubleH { lambda, .. } | Shape2::OuInstant { lambda, .. } => 1.0 / lambda,
            Shape2::Product(f, g) | Shape2::Star11(f, g) => f.scale_hint().min(g.scale_hint()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Shape2::OuDoubleH { .. } | Shape2::OuInstant { .. } => true,
            Shape2::Product(f, g) => f.is_symmetric() && g.is_symmetric(),
            Shape2::Star11(f, g) => f == g && f.is_symmetric(),
        }
    }

    /// `y ↦ phi(a, y)` restricted to `[lower, upper]`, when it is a piecewise exponential.
    pub fn slice(&self, a: f64, lower: f64) -> Option<PiecewiseExp> {
        match *self {
            Shape2::OuDoubleH { lambda, horizon, printed } => {
                if a < lower || a > horizon {
                    return Some(PiecewiseExp::zero());
                }
                let c = 1.0 / horizon;
                let m0 = a.max(0.0);
                let mut pieces = Vec::new();
                if lower < m0 {
                    let piece = if printed && a <= 0.0 {
                        Piece::new(lower, m0).with(c * (lambda * a).exp() * -(-2.0 * horizon).exp_m1(), lambda, 0.0)
                    } else {
                        Piece::new(lower, m0)
                            .with(c * (lambda * (a - m0)).exp(), lambda, m0)
                            .with(-c * (lambda * (a + m0 - 2.0 * horizon)).exp(), lambda, m0)
                    };
                    pieces.push(piece);
                }
                let lo = lower.max(m0);
                if lo < horizon {
                    pieces.push(
                        Piece::new(lo, horizon)
                            .with(c * (lambda * (a - m0)).exp(), -lambda, m0)
                            .with(-c * (lambda * (a - horizon)).exp(), lambda, horizon),
                    );
                }
                Some(PiecewiseExp::from_pieces(pieces))
            }
            Shape2::OuInstant { lambda, t } => {
                if a < lower || a > t || lower >= t {
                    return Some(PiecewiseExp::zero());
                }
                let c = 2.0 * lambda * (-lambda * (t - a)).exp();
                Some(PiecewiseExp::from_pieces(vec![Piece::new(lower, t).with(c, lambda, t)]))
            }
            Shape2::Product(ref f, ref g) => Some(f.slice(a, lower)?.mul(&g.slice(a, lower)?)),
            Shape2::Star11(..) => None,
        }
    }

    pub fn eval(&self, a: f64, b: f64, lower: f64) -> f64 {
        if a < lower || b < lower || a > self.upper() || b > self.upper() {
            return 0.0;
        }
        match *self {
            Shape2::OuDoubleH { lambda, horizon, printed } => {
                let m = a.max(b);
                if printed && m <= 0.0 {
                    (lambda * (a + b)).exp() * -(-2.0 * horizon).exp_m1() / horizon
                } else {
                    let m = m.max(0.0);
                    ((lambda * (a + b - 2.0 * m)).exp() - (lambda * (a + b - 2.0 * horizon)).exp()) / horizon
                }
            }
            Shape2::OuInstant { lambda, t } => 2.0 * lambda * (-lambda * (2.0 * t - a - b)).exp(),
            Shape2::Product(ref f, ref g) => f.eval(a, b, lower) * g.eval(a, b, lower),
            Shape2::Star11(ref f, ref g) => match (f.slice(a, lower), g.slice(b, lower)) {
                (Some(p), Some(q)) => p.dot(&q),
                _ => f64::NAN,
            },
        }
    }

    fn breaks(&self, lower: f64) -> Vec<f64> {
        let mut b = match self {
            Shape2::OuDoubleH { horizon, .. } => vec![0.0, *horizon],
            Shape2::OuInstant { t, .. } => vec![*t],
            Shape2::Product(f, g) | Shape2::Star11(f, g) => {
                let mut b = f.breaks(lower);
                b.extend(g.breaks(lower));
                b
            }
        };
        b.push(lower);
        b.push(self.upper());
        b.retain(|v| v.is_finite() && *v >= lower && *v <= self.upper());
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `(a0, r)` such that `phi(a, ·) = e^{r (a - a0)} phi(a0, ·)` for all `a <= a0`.
    fn left_tail(&self) -> Option<(f64, f64)> {
        match *self {
            Shape2::OuDoubleH { lambda, horizon, .. } => Some((0.0_f64.min(horizon), lambda)),
            Shape2::OuInstant { lambda, t } => Some((t, lambda)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    One(Shape1),
    Two(Shape2),
}

/// `s * u^k * phi` with the time axis cut at `lower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separable {
    pub profile: Profile,
    pub u_power: u32,
    pub lower: f64,
}

impl Separable {
    pub fn arity(&self) -> usize {
        match self.profile {
            Profile::One(_) => 1,
            Profile::Two(_) => 2,
        }
    }

    pub fn upper(&self) -> f64 {
        match &self.profile {
            Profile::One(s) => s.upper(),
            Profile::Two(s) => s.upper(),
        }
    }

    fn effective_lower(&self) -> f64 {
        match &self.profile {
            Profile::One(s) => self.lower.max(s.natural_lower()),
            Profile::Two(_) => self.lower,
        }
    }

    fn scale_hint(&self) -> f64 {
        match &self.profile {
            Profile::One(s) => s.scale_hint(),
            Profile::Two(s) => s.scale_hint(),
        }
    }
}

/// Cell-constant kernel on a list of disjoint cells of Z (arity 1) or on
/// pairs of cells (arity 2, stored as sparse rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridKernel {
    cells: Vec<Window>,
    values: GridValues,
    /// Evaluation at a point paired with itself returns 0.
    pub zero_diagonal: bool,
    #[serde(skip)]
    index: CellIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridValues {
    One(Vec<f64>),
    /// row k holds `(l, V_kl)` sorted by `l`
    Two(Vec<Vec<(usize, f64)>>),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CellIndex {
    order: Vec<usize>,
    x_lo: Vec<f64>,
    max_hi: Vec<f64>,
}

impl CellIndex {
    fn build(cells: &[Window]) -> Self {
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&a, &b| cells[a].x_lo.total_cmp(&cells[b].x_lo));
        let x_lo = order.iter().map(|&i| cells[i].x_lo).collect();
        let mut acc = f64::NEG_INFINITY;
        let max_hi = order
            .iter()
            .map(|&i| {
                acc = acc.max(cells[i].x_hi);
                acc
            })
            .collect();
        Self { order, x_lo, max_hi }
    }

    fn locate(&self, cells: &[Window], u: f64, x: f64) -> Option<usize> {
        let mut pos = self.x_lo.partition_point(|v| *v <= x);
        while pos > 0 {
            pos -= 1;
            if self.max_hi[pos] <= x {
                return None;
            }
            let id = self.order[pos];
            if cells[id].contains(u, x) {
                return Some(id);
            }
        }
        None
    }

    /// First pair of intersecting cells, if any.
    fn overlap(&self, cells: &[Window]) -> Option<(usize, usize)> {
        for (pos, &i) in self.order.iter().enumerate() {
            for &j in &self.order[pos + 1..] {
                if cells[j].x_lo >= cells[i].x_hi {
                    break;
                }
                if !cells[i].disjoint(&cells[j]) {
                    return Some((i.min(j), i.max(j)));
                }
            }
        }
        None
    }
}

const MAX_GRID_CELLS: usize = 1 << 20;

impl GridKernel {
    fn check_cells(cells: &[Window]) -> Result<CellIndex> {
        if cells.len() > MAX_GRID_CELLS {
            return Err(invalid("cells", format!("{} cells exceed the limit of {MAX_GRID_CELLS}", cells.len())));
        }
        if let Some(c) = cells.iter().find(|c| c.is_empty()) {
            return Err(invalid("cells", format!("empty cell {c:?}")));
        }
        let index = CellIndex::build(cells);
        if let Some((i, j)) = index.overlap(cells) {
            return Err(Error::OverlappingBlocks(i, j));
        }
        Ok(index)
    }

    pub fn arity1(cells: Vec<Window>, values: Vec<f64>) -> Result<Self> {
        if cells.len() != values.len() {
            return Err(invalid("values", format!("{} values for {} cells", values.len(), cells.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let index = Self::check_cells(&cells)?;
        Ok(Self {
            cells,
            values: GridValues::One(values),
            zero_diagonal: false,
            index,
        })
    }

    /// Builds from `(row, col, value)` triplets; repeated positions are rejected.
    pub fn arity2(cells: Vec<Window>, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let index = Self::check_cells(&cells)?;
        let n = cells.len();
        let mut map = BTreeMap::new();
        for (pos, (i, j, v)) in entries.into_iter().enumerate() {
            if i >= n || j >= n {
                return Err(invalid("entries", format!("index ({i}, {j}) out of range for {n} cells")));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(pos));
            }
            if map.insert((i, j), v).is_some() {
                return Err(invalid("entries", format!("duplicate entry ({i}, {j})")));
            }
        }
        let mut rows = vec![Vec::new(); n];
        for ((i, j), v) in map {
            if v != 0.0 {
                rows[i].push((j, v));
            }
        }
        Ok(Self {
            cells,
            values: GridValues::Two(rows),
            zero_diagonal: false,
            index,
        })
    }

    pub fn dense2(cells: Vec<Window>, matrix: &[Vec<f64>]) -> Result<Self> {
        let entries = matrix
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i, j, *v)))
            .collect::<Vec<_>>();
        Self::arity2(cells, entries)
    }

    fn from_rows(cells: Vec<Window>, rows: Vec<Vec<(usize, f64)>>, zero_diagonal: bool, index: CellIndex) -> Self {
        Self {
            cells,
            values: GridValues::Two(rows),
            zero_diagonal,
            index,
        }
    }

    pub fn with_zero_diagonal(mut self, on: bool) -> Self {
        self.zero_diagonal = on;
        self
    }

    pub fn arity(&self) -> usize {
        match self.values {
            GridValues::One(_) => 1,
            GridValues::Two(_) => 2,
        }
    }

    pub fn cells(&self) -> &[Window] {
        &self.cells
    }

    pub fn values(&self) -> &GridValues {
        &self.values
    }

    pub fn locate(&self, z: Atom) -> Option<usize> {
        if self.index.order.len() != self.cells.len() {
            // deserialized without an index
            return self.cells.iter().position(|c| c.contains(z.u, z.x));
        }
        self.index.locate(&self.cells, z.u, z.x)
    }

    pub fn value1(&self, k: usize) -> f64 {
        match &self.values {
            GridValues::One(v) => v[k],
            GridValues::Two(_) => f64::NAN,
        }
    }

    pub fn value2(&self, k: usize, l: usize) -> f64 {
        match &self.values {
            GridValues::Two(rows) => {
                let row = &rows[k];
                match row.binary_search_by(|(j, _)| j.cmp(&l)) {
                    Ok(p) => row[p].1,
                    Err(_) => 0.0,
                }
            }
            GridValues::One(_) => f64::NAN,
        }
    }

    pub fn rows(&self) -> Option<&[Vec<(usize, f64)>]> {
        match &self.values {
            GridValues::Two(rows) => Some(rows),
            GridValues::One(_) => None,
        }
    }

    pub fn masses(&self, control: &ControlMeasure) -> Result<Vec<f64>> {
        self.cells.iter().map(|c| measure_of(control, c)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.values {
            GridValues::One(_) => true,
            GridValues::Two(rows) => rows
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().all(|&(j, v)| self.value2(j, i) == v)),
        }
    }

    fn symmetrized(&self) -> Self {
        let rows = match &self.values {
            GridValues::One(_) => return self.clone(),
            GridValues::Two(rows) => rows,
        };
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                *map.entry((i, j)).or_default() += 0.5 * v;
                *map.entry((j, i)).or_default() += 0.5 * v;
            }
        }
        let mut out = vec![Vec::new(); rows.len()];
        for ((i, j), v) in map {
            if v != 0.0 {
                out[i].push((j, v));
            }
        }
        Self::from_rows(self.cells.clone(), out, self.zero_diagonal, self.index.clone())
    }

    /// Sidecar header: `arity`, `zero_diagonal` and one `cell = u_lo, u_hi, x_lo, x_hi` line per cell.
    pub fn header(&self) -> String {
        let mut s = format!("arity = {}\nzero_diagonal = {}\n", self.arity(), self.zero_diagonal);
        for c in &self.cells {
            s.push_str(&format!("cell = {}, {}, {}, {}\n", fmt_f(c.u_lo), fmt_f(c.u_hi), c.x_lo, c.x_hi));
        }
        s
    }

    /// Value table with columns `row,col,value` (`col` is 0 for arity 1).
    pub fn write_values_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "value"])?;
        match &self.values {
            GridValues::One(v) => {
                for (i, x) in v.iter().enumerate() {
                    w.write_record([i.to_string(), "0".into(), x.to_string()])?;
                }
            }
            GridValues::Two(rows) => {
                for (i, row) in rows.iter().enumerate() {
                    for (j, x) in row {
                        w.write_record([i.to_string(), j.to_string(), x.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse_header(text: &str) -> Result<(usize, bool, Vec<Window>)> {
        let cfg = Config::parse(text)?;
        let arity = cfg
            .get_u64("", "arity")?
            .ok_or_else(|| Error::Config { line: 0, msg: "missing `arity`".into() })?;
        if arity != 1 && arity != 2 {
            let line = cfg.entry("", "arity").map(|e| e.line).unwrap_or(0);
            return Err(Error::Config {
                line,
                msg: format!("arity must be 1 or 2, found {arity}"),
            });
        }
        let zero_diagonal = cfg.get_bool("", "zero_diagonal")?.unwrap_or(false);
        let cell_entries = cfg.get_all("", "cell");
        if cell_entries.len() > MAX_GRID_CELLS {
            return Err(invalid("cells", "too many cells"));
        }
        let mut cells = Vec::with_capacity(cell_entries.len());
        for e in cell_entries {
            let b = parse_f64_list(e)?;
            if b.len() != 4 {
                return Err(Error::Config {
                    line: e.line,
                    msg: format!("cell needs 4 bounds, found {}", b.len()),
                });
            }
            let w = Window::new(b[0], b[1], b[2], b[3]).map_err(|err| Error::Config {
                line: e.line,
                msg: err.to_string(),
            })?;
            cells.push(w);
        }
        Ok((arity as usize, zero_diagonal, cells))
    }

    pub fn from_csv(header: &str, values: &[u8]) -> Result<Self> {
        let (arity, zero_diagonal, cells) = Self::parse_header(header)?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(values);
        let h = rdr.headers()?.clone();
        if h.len() != 3 || &h[0] != "row" || &h[1] != "col" || &h[2] != "value" {
            return Err(Error::Csv(format!("expected header `row,col,value`, found {h:?}")));
        }
        let mut entries = Vec::new();
        for (pos, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let idx = |k: usize| -> Result<usize> {
                rec.get(k)
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Csv(format!("record {pos}: bad index in column {k}")))
            };
            let i = idx(0)?;
            let j = idx(1)?;
            let v = rec
                .get(2)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or(Error::NonFinite(pos))?;
            entries.push((i, j, v));
        }
        let g = if arity == 1 {
            let mut vals = vec![0.0; cells.len()];
            let mut seen = vec![false; cells.len()];
            for (i, j, v) in entries {
                if j != 0 || i >= cells.len() {
                    return Err(invalid("entries", format!("index ({i}, {j}) invalid for an arity-1 grid")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(invalid("entries", format!("duplicate row {i}")));
                }
                vals[i] = v;
            }
            Self::arity1(cells, vals)?
        } else {
            Self::arity2(cells, entries)?
        };
        Ok(g.with_zero_diagonal(zero_diagonal))
    }
}

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Repr {
    Zero { arity: usize },
    Grid(GridKernel),
    Separable(Separable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    repr: Repr,
    scale: f64,
}

impl Kernel {
    pub fn zero(arity: usize) -> Self {
        Self {
            repr: Repr::Zero { arity },
            scale: 1.0,
        }
    }

    pub fn grid(g: GridKernel) -> Self {
        Self {
            repr: Repr::Grid(g),
            scale: 1.0,
        }
    }

    /// `(2n)^{-1/2} sum_j 1_{B_j x B_j}` off the diagonal, with `B_j = R x [j-1, j)`.
    /// The blocks have unit mass under any control whose jump marginal has total mass one.
    pub fn block(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one block"));
        }
        let blocks = (0..n)
            .map(|j| Window::time(j as f64, (j + 1) as f64))
            .collect::<Result<Vec<_>>>()?;
        Self::block_on(blocks, (2.0 * n as f64).powf(-0.5))
    }

    /// `coef * sum_j 1_{B_j x B_j}`, vanishing on the diagonal.
    pub fn block_on(blocks: Vec<Window>, coef: f64) -> Result<Self> {
        let n = blocks.len();
        let g = GridKernel::arity2(blocks, (0..n).map(|j| (j, j, coef)))?.with_zero_diagonal(true);
        Ok(Self::grid(g))
    }

    /// `n^{-1/2} sum_j 1_{B_j}` on unit blocks.
    pub fn block_single(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one block"));
        }
        let blocks = (0..n)
            .map(|j| Window::time(j as f64, (j + 1) as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::grid(GridKernel::arity1(blocks, vec![(n as f64).powf(-0.5); n])?))
    }

    fn separable(profile: Profile, u_power: u32, lambda: f64) -> Self {
        Self {
            repr: Repr::Separable(Separable {
                profile,
                u_power,
                lower: -OU_DEPTH / lambda,
            }),
            scale: 1.0,
        }
    }

    fn check_ou(lambda: f64, horizon: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("{lambda} must be positive")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("{horizon} must be positive")));
        }
        Ok(())
    }

    /// `u (2λ/T)^{1/2} ∫_{x∨0}^T e^{-λ(t-x)} dt` on x <= T.
    pub fn ou_single(lambda: f64, horizon: f64) -> Result<Self> {
        Self::check_ou(lambda, horizon)?;
        Ok(Self::separable(Profile::One(Shape1::OuSingle { lambda, horizon }), 1, lambda))
    }

    /// `H_{λ,T}` with the branch factor `1 - e^{-2λT}`.
    pub fn ou_double_h(lambda: f64, horizon: f64) -> Result<Self> {
        Self::check_ou(lambda, horizon)?;
        Ok(Self::separable(
            Profile::Two(Shape2::OuDoubleH {
                lambda,
                horizon,
                printed: false,
            }),
            1,
            lambda,
        ))
    }

    /// `H_{λ,T}` with the literal `1 - e^{-2T}` on the `x ∨ x' <= 0` branch.
    pub fn ou_double_h_printed(lambda: f64, horizon: f64) -> Result<Self> {
        Self::check_ou(lambda, horizon)?;
        Ok(Self::separable(
            Profile::Two(Shape2::OuDoubleH {
                lambda,
                horizon,
                printed: true,
            }),
            1,
            lambda,
        ))
    }

    /// `H*_{λ,T}`, an arity-1 kernel in `(u, x)` carrying `u^2`.
    pub fn ou_diag_hstar(lambda: f64, horizon: f64) -> Result<Self> {
        Self::check_ou(lambda, horizon)?;
        Ok(Self::separable(
            Profile::One(Shape1::OuDiagHstar {
                lambda,
                horizon,
                printed: false,
            }),
            2,
            lambda,
        ))
    }

    pub fn ou_diag_hstar_printed(lambda: f64, horizon: f64) -> Result<Self> {
        Self::check_ou(lambda, horizon)?;
        Ok(Self::separable(
            Profile::One(Shape1::OuDiagHstar {
                lambda,
                horizon,
                printed: true,
            }),
            2,
            lambda,
        ))
    }

    /// `ĥ_t(u, x; u', x') = 2λ u u' e^{-λ(t-x) - λ(t-x')}` on `x, x' <= t`.
    pub fn ou_instant(lambda: f64, t: f64) -> Result<Self> {
        Self::check_ou(lambda, 1.0)?;
        if !t.is_finite() {
            return Err(invalid("t", "must be finite"));
        }
        Ok(Self::separable(Profile::Two(Shape2::OuInstant { lambda, t }), 1, lambda))
    }

    /// `(u, x) ↦ u k(t, x)`: the integrand of the hazard rate at time `t`.
    pub fn hazard_slice(kernel: HazardKernel, t: f64) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            repr: Repr::Separable(Separable {
                profile: Profile::One(Shape1::HazardSlice { kernel, t }),
                u_power: 1,
                lower: f64::NEG_INFINITY,
            }),
            scale: 1.0,
        })
    }

    /// Cuts the time axis at `-depth` (analytic OU families only).
    pub fn with_truncation(mut self, depth: f64) -> Result<Self> {
        if !(depth > 0.0) {
            return Err(invalid("depth", format!("{depth} must be positive")));
        }
        if let Repr::Separable(s) = &mut self.repr {
            s.lower = -depth;
        }
        Ok(self)
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn repr(&self) -> &Repr {
        &self.repr
    }

    pub(crate) fn from_parts(repr: Repr, scale: f64) -> Self {
        Self { repr, scale }
    }

    pub fn arity(&self) -> usize {
        match &self.repr {
            Repr::Zero { arity } => *arity,
            Repr::Grid(g) => g.arity(),
            Repr::Separable(s) => s.arity(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.repr, Repr::Zero { .. }) || self.scale == 0.0
    }

    pub fn family(&self) -> &'static str {
        match &self.repr {
            Repr::Zero { .. } => "zero",
            Repr::Grid(_) => "grid",
            Repr::Separable(s) => match &s.profile {
                Profile::One(Shape1::OuSingle { .. }) => "ou_single",
                Profile::One(Shape1::OuDiagHstar { .. }) => "ou_diag_hstar",
                Profile::One(Shape1::HazardSlice { .. }) => "hazard_slice",
                Profile::One(Shape1::Star21(..)) => "star21",
                Profile::Two(Shape2::OuDoubleH { .. }) => "ou_double_h",
                Profile::Two(Shape2::OuInstant { .. }) => "ou_instant",
                Profile::Two(Shape2::Product(..)) => "product",
                Profile::Two(Shape2::Star11(..)) => "star11",
            },
        }
    }

    /// Time interval outside which the kernel vanishes (`None` for the zero kernel).
    pub fn x_support(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Zero { .. } => None,
            Repr::Grid(g) => {
                let lo = g.cells.iter().map(|c| c.x_lo).fold(f64::INFINITY, f64::min);
                let hi = g.cells.iter().map(|c| c.x_hi).fold(f64::NEG_INFINITY, f64::max);
                (lo <= hi).then_some((lo, hi))
            }
            Repr::Separable(s) => Some((s.effective_lower(), s.upper())),
        }
    }

    /// Jump range outside which the kernel vanishes.
    pub fn u_support(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Zero { .. } => None,
            Repr::Grid(g) => {
                let lo = g.cells.iter().map(|c| c.u_lo).fold(f64::INFINITY, f64::min);
                let hi = g.cells.iter().map(|c| c.u_hi).fold(f64::NEG_INFINITY, f64::max);
                (lo <= hi).then_some((lo, hi))
            }
            Repr::Separable(_) => Some((f64::NEG_INFINITY, f64::INFINITY)),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.repr {
            Repr::Zero { .. } => true,
            Repr::Grid(g) => g.is_symmetric(),
            Repr::Separable(s) => match &s.profile {
                Profile::One(_) => true,
                Profile::Two(p) => p.is_symmetric(),
            },
        }
    }

    pub fn eval1(&self, z: Atom) -> Result<f64> {
        if self.arity() != 1 {
            return Err(Error::ArityMismatch {
                expected: self.arity(),
                found: 1,
            });
        }
        Ok(self.scale
            * match &self.repr {
                Repr::Zero { .. } => 0.0,
                Repr::Grid(g) => g.locate(z).map(|k| g.value1(k)).unwrap_or(0.0),
                Repr::Separable(s) => match &s.profile {
                    Profile::One(p) => z.u.powi(s.u_power as i32) * p.eval(z.x, s.effective_lower()),
                    Profile::Two(_) => unreachable!(),
                },
            })
    }

    pub fn eval2(&self, a: Atom, b: Atom) -> Result<f64> {
        if self.arity() != 2 {
            return Err(Error::ArityMismatch {
                expected: self.arity(),
                found: 2,
            });
        }
        Ok(self.scale
            * match &self.repr {
                Repr::Zero { .. } => 0.0,
                Repr::Grid(g) => {
                    if g.zero_diagonal && a == b {
                        0.0
                    } else {
                        match (g.locate(a), g.locate(b)) {
                            (Some(k), Some(l)) => g.value2(k, l),
                            _ => 0.0,
                        }
                    }
                }
                Repr::Separable(s) => match &s.profile {
                    Profile::Two(p) => {
                        let k = s.u_power as i32;
                        a.u.powi(k) * b.u.powi(k) * p.eval(a.x, b.x, s.lower)
                    }
                    Profile::One(_) => unreachable!(),
                },
            })
    }

    /// Checks that the kernel vanishes wherever the control charges points outside `window`.
    pub fn check_support(&self, control: &ControlMeasure, window: &Window) -> Result<()> {
        let (Some((xl, xh)), Some((ul, uh))) = (self.x_support(), self.u_support()) else {
            return Ok(());
        };
        let (xl, xh) = control.time_range(xl, xh);
        let (cl, ch) = control.u_support();
        let (ul, uh) = (ul.max(cl), uh.min(ch));
        let x_ok = xh <= xl || (xl >= window.x_lo && xh <= window.x_hi);
        let u_ok = uh < ul || (ul >= window.u_lo && uh <= window.u_hi);
        if x_ok && u_ok {
            Ok(())
        } else {
            Err(Error::SupportOutsideWindow(format!(
                "{} kernel lives on u in [{ul}, {uh}], x in [{xl}, {xh}); window is {window:?}",
                self.family()
            )))
        }
    }
}

/// Evaluates a kernel at one (arity 1) or two (arity 2) points.
pub fn evaluate(k: &Kernel, points: &[Atom]) -> Result<f64> {
    match points {
        [z] => k.eval1(*z),
        [a, b] => k.eval2(*a, *b),
        _ => Err(Error::ArityMismatch {
            expected: k.arity(),
            found: points.len(),
        }),
    }
}

pub fn symmetrize(k: &Kernel) -> Result<Kernel> {
    if k.arity() != 2 {
        return Err(Error::ArityMismatch {
            expected: 2,
            found: k.arity(),
        });
    }
    Ok(match &k.repr {
        Repr::Grid(g) => Kernel {
            repr: Repr::Grid(g.symmetrized()),
            scale: k.scale,
        },
        Repr::Separable(s) => match &s.profile {
            Profile::Two(p) if !p.is_symmetric() => {
                return Err(Error::Unsupported("symmetrization of a non-symmetric analytic contraction".into()))
            }
            _ => k.clone(),
        },
        Repr::Zero { .. } => k.clone(),
    })
}

/// How a norm or integral was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// finite sums over cells, or exact piecewise integration
    Exact,
    /// symbolic formula for the untruncated kernel
    ClosedForm,
    /// Gauss–Legendre panels, checked at two mesh levels
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub route: Route,
    /// bound on the part of the integral cut away by the time truncation
    pub tail_bound: f64,
    /// difference between the two mesh levels (quadrature route)
    pub richardson_gap: f64,
}

impl NormEstimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            route: Route::Exact,
            tail_bound: 0.0,
            richardson_gap: 0.0,
        }
    }
}

fn check_p(p: u32) -> Result<()> {
    if (1..=8).contains(&p) {
        Ok(())
    } else {
        Err(invalid("p", format!("{p} outside 1..=8")))
    }
}

/// Jump factor `∫ |u|^{pk} nu(du)` of a separable kernel under a homogeneous control.
fn abs_u_factor(control: &ControlMeasure, power: u32) -> Result<f64> {
    control.u_abs_moment(power, 0.0, f64::NEG_INFINITY, f64::INFINITY)
}

fn signed_u_factor(control: &ControlMeasure, power: u32) -> Result<f64> {
    control.u_moment(power, 0.0, f64::NEG_INFINITY, f64::INFINITY)
}

fn require_homogeneous(control: &ControlMeasure, what: &str) -> Result<()> {
    if control.is_homogeneous() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} of an analytic arity-2 kernel under a non-homogeneous control")))
    }
}

/// Time restriction of the control intersected with the kernel support.
fn time_window(control: &ControlMeasure, lo: f64, hi: f64) -> (f64, f64) {
    control.time_range(lo, hi)
}

/// `∫ |phi|^p` over time for a separable profile, at one mesh width.
fn time_power_integral(s: &Separable, control: &ControlMeasure, p: u32, width: f64) -> Result<f64> {
    let (lo, hi) = time_window(control, s.effective_lower(), s.upper());
    if hi <= lo {
        return Ok(0.0);
    }
    match &s.profile {
        Profile::One(shape) => {
            if let Some(profile) = shape.profile(lo) {
                let prof = profile.powi(p);
                return Ok(prof.integral_over(lo, hi));
            }
            let mut breaks = shape.breaks(lo);
            breaks.retain(|b| *b >= lo && *b <= hi);
            let rule = PanelRule::new(&breaks, width, GL_ORDER);
            Ok(rule.integrate(|x| shape.eval(x, lo).abs().powi(p as i32)))
        }
        Profile::Two(shape) => {
            let mut breaks = shape.breaks(lo);
            breaks.retain(|b| *b >= lo && *b <= hi);
            let rule = PanelRule::new(&breaks, width, GL_ORDER);
            if shape.slice(lo, lo).is_some() {
                return Ok(rule.integrate(|a| {
                    let sl = shape.slice(a, lo).unwrap_or_default();
                    if sl.is_zero() {
                        0.0
                    } else {
                        sl.powi(p).integral_over(lo, hi)
                    }
                }));
            }
            if let Shape2::Star11(f, g) = shape {
                if f.slice(lo, lo).is_some() && g.slice(lo, lo).is_some() {
                    let prep = |x: f64| (f.slice(x, lo).unwrap_or_default(), g.slice(x, lo).unwrap_or_default());
                    return Ok(integrate_square_prepared(&breaks, width, prep, |_, da, _, db| {
                        da.0.dot(&db.1).abs().powi(p as i32)
                    }));
                }
            }
            Ok(integrate_square(&breaks, width, |a, b| shape.eval(a, b, lo).abs().powi(p as i32)))
        }
    }
}

/// `∫∫ F(a, b)` over `[e_0, e_last]^2`, splitting the diagonal panels into
/// triangles so that kinks along `a = b` sit on element edges.
pub(crate) fn integrate_square<F: Fn(f64, f64) -> f64>(breaks: &[f64], width: f64, f: F) -> f64 {
    integrate_square_prepared(breaks, width, |_| (), |a, _, b, _| f(a, b))
}

/// Same as [`integrate_square`], with per-node data computed once per
/// coordinate value by `prep` and handed to the integrand.
pub(crate) fn integrate_square_prepared<A, P, F>(breaks: &[f64], width: f64, prep: P, f: F) -> f64
where
    P: Fn(f64) -> A,
    F: Fn(f64, &A, f64, &A) -> f64,
{
    let (gx, gw) = crate::special::gauss_legendre(GL_ORDER);
    let mut edges = Vec::new();
    for pair in breaks.windows(2) {
        let count = ((pair[1] - pair[0]) / width).ceil().max(1.0) as usize;
        let h = (pair[1] - pair[0]) / count as f64;
        for k in 0..count {
            edges.push(pair[0] + k as f64 * h);
        }
    }
    if let Some(last) = breaks.last() {
        edges.push(*last);
    }
    let panel_nodes = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        gx.iter().zip(&gw).map(|(x, w)| (c + h * x, h * w)).collect()
    };
    let panels: Vec<Vec<(f64, f64, A)>> = edges
        .windows(2)
        .map(|e| panel_nodes(e[0], e[1]).into_iter().map(|(x, w)| (x, w, prep(x))).collect())
        .collect();
    let mut total = 0.0;
    for (i, pi) in panels.iter().enumerate() {
        for (j, pj) in panels.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut block = 0.0;
            for (a, wa, da) in pi {
                let mut inner = 0.0;
                for (b, wb, db) in pj {
                    inner += wb * f(*a, da, *b, db);
                }
                block += wa * inner;
            }
            total += block;
        }
        // diagonal square as two triangles: b < a and b > a
        let (lo, hi) = (edges[i], edges[i + 1]);
        for (a, wa, da) in pi {
            for (b, wb) in panel_nodes(lo, *a).into_iter().chain(panel_nodes(*a, hi)) {
                total += wa * wb * f(*a, da, b, &prep(b));
            }
        }
    }
    total
}

/// Closed forms for `∫∫ phi^p` of the OU double kernel on `(-∞, T]^2`.
fn closed_form_double_h(lambda: f64, horizon: f64, p: u32) -> Option<f64> {
    let (l, t) = (lambda, horizon);
    let e2 = (-2.0 * l * t).exp();
    let em = -(-2.0 * l * t).exp_m1();
    match p {
        2 => Some((2.0 / l - em / (t * l * l)) / (2.0 * t)),
        4 => {
            let e4 = e2 * e2;
            let e6 = e4 * e2;
            Some((12.0 * t * l - 11.0 + 18.0 * e2 - 9.0 * e4 + 2.0 * e6) / (24.0 * t.powi(4) * l * l))
        }
        _ => None,
    }
}

/// `∫ (∫ phi(a, z)^2 dz)^2 da` for the OU double kernel on `(-∞, T]`.
pub(crate) fn closed_form_double_h_n21(lambda: f64, horizon: f64) -> f64 {
    let (l, t) = (lambda, horizon);
    let e2 = (-2.0 * l * t).exp();
    let e4 = e2 * e2;
    (8.0 * t * l + 8.0 * t * l * e2 - 4.0 * t * l * e4 - 9.0 + 12.0 * e2 - 3.0 * e4) / (8.0 * t.powi(4) * l.powi(3))
}

/// `∫∫ (∫ phi(a, z) phi(z, b) dz)^2 da db` for the OU double kernel on `(-∞, T]`.
pub(crate) fn closed_form_double_h_n11(lambda: f64, horizon: f64) -> f64 {
    let (l, t) = (lambda, horizon);
    let e2 = (-2.0 * l * t).exp();
    let e4 = e2 * e2;
    (20.0 * t * l - 29.0 + (16.0 * t * t * l * l + 40.0 * t * l + 28.0) * e2 + e4) / (8.0 * t.powi(4) * l.powi(4))
}

fn closed_form_time(s: &Separable, p: u32) -> Option<f64> {
    match &s.profile {
        Profile::Two(Shape2::OuDoubleH {
            lambda,
            horizon,
            printed: false,
        }) => closed_form_double_h(*lambda, *horizon, p),
        Profile::One(Shape1::OuSingle { lambda, horizon }) if p == 2 => {
            let (l, t) = (*lambda, *horizon);
            Some(2.0 / l - 2.0 * -(-l * t).exp_m1() / (t * l * l))
        }
        _ => None,
    }
}

/// Bound on `∫ |phi|^p` over the part of the time axis below the truncation point.
fn tail_bound(s: &Separable, p: u32) -> f64 {
    let pf = p as f64;
    match &s.profile {
        Profile::One(shape) => match shape.left_tail() {
            Some((a0, r)) if s.lower < a0 => {
                let v = shape.eval(a0, f64::NEG_INFINITY).abs().powi(p as i32);
                v * (-pf * r * (a0 - s.lower)).exp() / (pf * r)
            }
            Some(_) => 0.0,
            None => f64::NAN,
        },
        Profile::Two(shape) => match shape.left_tail() {
            Some((a0, r)) if s.lower < a0 => {
                let inner = shape
                    .slice(a0, f64::NEG_INFINITY)
                    .map(|sl| sl.powi(p).integral())
                    .unwrap_or(f64::NAN);
                2.0 * inner * (-pf * r * (a0 - s.lower)).exp() / (pf * r)
            }
            Some(_) => 0.0,
            None => f64::NAN,
        },
    }
}

fn separable_norm(k: &Kernel, s: &Separable, p: u32, control: &ControlMeasure, route: Option<Route>) -> Result<NormEstimate> {
    let scale = k.scale.abs().powi(p as i32);
    let tail = tail_bound(s, p);
    if s.arity() == 1 && !control.is_homogeneous() {
        let Profile::One(shape) = &s.profile else { unreachable!() };
        let v = nonhomogeneous_time_integral(shape, s, control, |psi| psi.abs().powi(p as i32), p * s.u_power, true)?;
        return Ok(NormEstimate {
            value: scale * v,
            route: Route::Quadrature,
            tail_bound: scale * tail,
            richardson_gap: 0.0,
        });
    }
    require_homogeneous(control, "norm")?;
    let u = abs_u_factor(control, p * s.u_power)?;
    let u_total = if s.arity() == 2 { u * u } else { u };
    let prefactor = scale * u_total;
    let want_closed = route.is_none() || route == Some(Route::ClosedForm);
    if want_closed && control.time_support() == crate::point_process::TimeSupport::Line {
        if let Some(v) = closed_form_time(s, p) {
            return Ok(NormEstimate {
                value: prefactor * v,
                route: Route::ClosedForm,
                tail_bound: prefactor * tail,
                richardson_gap: 0.0,
            });
        }
    }
    if route == Some(Route::ClosedForm) {
        return Err(Error::Unsupported(format!("no closed form for p = {p} of {}", k.family())));
    }
    let exact_profile = match &s.profile {
        Profile::One(shape) => shape.profile(s.lower).is_some(),
        Profile::Two(_) => false,
    };
    if exact_profile {
        let v = time_power_integral(s, control, p, 1.0)?;
        return Ok(NormEstimate {
            value: prefactor * v,
            route: Route::Exact,
            tail_bound: prefactor * tail,
            richardson_gap: 0.0,
        });
    }
    let h = 2.0 * s.scale_hint();
    let coarse = time_power_integral(s, control, p, h)?;
    let fine = time_power_integral(s, control, p, 0.5 * h)?;
    if !fine.is_finite() {
        return Err(Error::Divergent(format!("{} kernel norm is not finite", k.family())));
    }
    Ok(NormEstimate {
        value: prefactor * fine,
        route: Route::Quadrature,
        tail_bound: prefactor * tail,
        richardson_gap: prefactor * (fine - coarse).abs(),
    })
}

/// `∫ F(psi(x)) M(x) dx` with `M(x) = ∫ u^j nu_x(du)`, for arity-1 profiles under any control.
fn nonhomogeneous_time_integral<F: Fn(f64) -> f64>(
    shape: &Shape1,
    s: &Separable,
    control: &ControlMeasure,
    f: F,
    j: u32,
    absolute: bool,
) -> Result<f64> {
    let (lo, hi) = time_window(control, s.effective_lower(), s.upper());
    if hi <= lo {
        return Ok(0.0);
    }
    let mut breaks = shape.breaks(lo);
    breaks.retain(|b| *b >= lo && *b <= hi);
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let moment = |x: f64| {
        let m = if absolute {
            control.u_abs_moment(j, x, f64::NEG_INFINITY, f64::INFINITY)
        } else {
            control.u_moment(j, x, f64::NEG_INFINITY, f64::INFINITY)
        };
        m.unwrap_or(f64::NAN)
    };
    moment(0.5 * (lo + hi)).is_finite().then_some(()).ok_or_else(|| {
        Error::InfiniteMass("jump moment of the control is not finite; set a positive epsilon".into())
    })?;
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-10,
        max_intervals: 4000,
    };
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate(|x| f(shape.eval(x, lo)) * moment(x), w[0], w[1], tol)?.value;
    }
    Ok(total)
}

/// `∫ |k|^p dμ` (arity 1) or `∫∫ |k|^p dμ^2` (arity 2).
pub fn lp_norm(k: &Kernel, p: u32, control: &ControlMeasure) -> Result<f64> {
    Ok(norm_estimate(k, p, control, None)?.value)
}

/// `‖k‖^2` in `L^2(μ)` or `L^2(μ^2)`, not doubled.
pub fn l2_norm_sq(k: &Kernel, control: &ControlMeasure) -> Result<f64> {
    lp_norm(k, 2, control)
}

/// `lp_norm` with route selection and error diagnostics.
pub fn norm_estimate(k: &Kernel, p: u32, control: &ControlMeasure, route: Option<Route>) -> Result<NormEstimate> {
    check_p(p)?;
    match &k.repr {
        Repr::Zero { .. } => Ok(NormEstimate::exact(0.0)),
        Repr::Grid(g) => {
            let m = g.masses(control)?;
            let scale = k.scale.abs().powi(p as i32);
            let v = match &g.values {
                GridValues::One(v) => v.iter().zip(&m).map(|(v, m)| v.abs().powi(p as i32) * m).sum::<f64>(),
                GridValues::Two(rows) => rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| row.iter().map(|&(j, v)| v.abs().powi(p as i32) * m[j]).sum::<f64>() * m[i])
                    .sum(),
            };
            Ok(NormEstimate::exact(scale * v))
        }
        Repr::Separable(s) => separable_norm(k, s, p, control, route),
    }
}

/// `∫ g dμ` (arity 1) or `∫∫ f dμ^2` (arity 2).
pub fn integral(k: &Kernel, control: &ControlMeasure) -> Result<f64> {
    match &k.repr {
        Repr::Zero { .. } => Ok(0.0),
        Repr::Grid(g) => {
            let m = g.masses(control)?;
            let v = match &g.values {
                GridValues::One(v) => v.iter().zip(&m).map(|(v, m)| v * m).sum::<f64>(),
                GridValues::Two(rows) => rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| row.iter().map(|&(j, v)| v * m[j]).sum::<f64>() * m[i])
                    .sum(),
            };
            Ok(k.scale * v)
        }
        Repr::Separable(s) => match &s.profile {
            Profile::One(shape) => {
                if !control.is_homogeneous() {
                    let v = nonhomogeneous_time_integral(shape, s, control, |psi| psi, s.u_power, false)?;
                    return Ok(k.scale * v);
                }
                let u = signed_u_factor(control, s.u_power)?;
                if u == 0.0 {
                    return Ok(0.0);
                }
                let (lo, hi) = time_window(control, s.effective_lower(), s.upper());
                if hi <= lo {
                    return Ok(0.0);
                }
                let t = match shape.profile(lo) {
                    Some(p) => p.integral_over(lo, hi),
                    None => {
                        let rule = PanelRule::new(&shape.breaks(lo), s.scale_hint(), GL_ORDER);
                        rule.integrate(|x| shape.eval(x, lo))
                    }
                };
                Ok(k.scale * u * t)
            }
            Profile::Two(shape) => {
                require_homogeneous(control, "integral")?;
                let u = signed_u_factor(control, s.u_power)?;
                if u == 0.0 {
                    return Ok(0.0);
                }
                let (lo, hi) = time_window(control, s.lower, s.upper());
                if hi <= lo {
                    return Ok(0.0);
                }
                let mut breaks = shape.breaks(lo);
                breaks.retain(|b| *b >= lo && *b <= hi);
                let rule = PanelRule::new(&breaks, s.scale_hint(), GL_ORDER);
                let t = if shape.slice(lo, lo).is_some() {
                    rule.integrate(|a| shape.slice(a, lo).map(|sl| sl.integral_over(lo, hi)).unwrap_or(0.0))
                } else {
                    integrate_square(&breaks, s.scale_hint(), |a, b| shape.eval(a, b, lo))
                };
                Ok(k.scale * u * u * t)
            }
        },
    }
}

/// `∫ f(a, z) μ(dz)` for an arity-2 kernel.
pub fn partial_integral(f: &Kernel, a: Atom, control: &ControlMeasure) -> Result<f64> {
    if f.arity() != 2 {
        return Err(Error::ArityMismatch {
            expected: 2,
            found: f.arity(),
        });
    }
    match &f.repr {
        Repr::Zero { .. } => Ok(0.0),
        Repr::Grid(g) => {
            let Some(k) = g.locate(a) else { return Ok(0.0) };
            let m = g.masses(control)?;
            let rows = g.rows().unwrap_or_default();
            Ok(f.scale * rows[k].iter().map(|&(j, v)| v * m[j]).sum::<f64>())
        }
        Repr::Separable(s) => {
            require_homogeneous(control, "partial integral")?;
            let u = signed_u_factor(control, s.u_power)?;
            if u == 0.0 {
                return Ok(0.0);
            }
            let Profile::Two(shape) = &s.profile else { unreachable!() };
            let (lo, hi) = time_window(control, s.lower, s.upper());
            let t = match shape.slice(a.x, lo) {
                Some(sl) => sl.integral_over(lo, hi),
                None => {
                    let rule = PanelRule::new(&shape.breaks(lo), s.scale_hint(), GL_ORDER);
                    rule.integrate(|z| shape.eval(a.x, z, lo))
                }
            };
            Ok(f.scale * a.u.powi(s.u_power as i32) * u * t)
        }
    }
}
