//! Piecewise exponential-polynomial functions of one variable.
//!
//! Each piece carries terms `c * exp(r * (x - A))` where the anchor `A` is the
//! right end of the piece for `r > 0` and the left end for `r < 0`. With that
//! convention every exponent stays non-positive on its piece, so products and
//! integrals never overflow even for horizons in the thousands.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub terms: Vec<Term>,
}

fn anchor(lo: f64, hi: f64, rate: f64) -> f64 {
    if rate > 0.0 {
        hi
    } else if rate < 0.0 {
        lo
    } else if lo.is_finite() {
        lo
    } else {
        hi
    }
}

fn term_integral(t: Term, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if t.coef == 0.0 || w <= 0.0 {
        return 0.0;
    }
    if t.rate == 0.0 {
        t.coef * w
    } else if t.rate > 0.0 {
        -t.coef * (-t.rate * w).exp_m1() / t.rate
    } else {
        t.coef * (t.rate * w).exp_m1() / t.rate
    }
}

impl Piece {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self {
            lo,
            hi,
            terms: Vec::new(),
        }
    }

    /// Adds `coef * exp(rate * (x - at))`, re-anchoring to the canonical point.
    pub fn with(mut self, coef: f64, rate: f64, at: f64) -> Self {
        let a = anchor(self.lo, self.hi, rate);
        let c = if rate == 0.0 { coef } else { coef * (rate * (a - at)).exp() };
        self.push(Term { coef: c, rate });
        self
    }

    fn push(&mut self, t: Term) {
        if t.coef == 0.0 {
            return;
        }
        if let Some(existing) = self.terms.iter_mut().find(|e| e.rate == t.rate) {
            existing.coef += t.coef;
        } else {
            self.terms.push(t);
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                if t.rate == 0.0 {
                    t.coef
                } else {
                    t.coef * (t.rate * (x - anchor(self.lo, self.hi, t.rate))).exp()
                }
            })
            .sum()
    }

    pub fn integral(&self) -> f64 {
        self.terms.iter().map(|t| term_integral(*t, self.lo, self.hi)).sum()
    }

    /// Restriction to a sub-interval `[lo, hi]` with re-anchored terms.
    fn restrict(&self, lo: f64, hi: f64) -> Piece {
        let mut p = Piece::new(lo, hi);
        for t in &self.terms {
            let from = anchor(self.lo, self.hi, t.rate);
            p = p.with(t.coef, t.rate, from);
        }
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PiecewiseExp {
    pieces: Vec<Piece>,
}

impl PiecewiseExp {
    pub fn zero() -> Self {
        Self { pieces: Vec::new() }
    }

    /// Builds from pieces given in increasing, non-overlapping order; empty pieces are dropped.
    pub fn from_pieces(pieces: Vec<Piece>) -> Self {
        let pieces: Vec<Piece> = pieces
            .into_iter()
            .filter(|p| p.hi > p.lo && !p.terms.is_empty())
            .collect();
        debug_assert!(pieces.windows(2).all(|w| w[0].hi <= w[1].lo));
        Self { pieces }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        Some((self.pieces.first()?.lo, self.pieces.last()?.hi))
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.pieces.iter().flat_map(|p| [p.lo, p.hi]).collect();
        b.dedup();
        b
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.hi <= x);
        match self.pieces.get(idx) {
            Some(p) if p.lo <= x => p.eval(x),
            _ => match self.pieces.last() {
                Some(p) if x == p.hi => p.eval(x),
                _ => 0.0,
            },
        }
    }

    pub fn integral(&self) -> f64 {
        self.pieces.iter().map(Piece::integral).sum()
    }

    /// Integral over `[lo, hi]` only.
    pub fn integral_over(&self, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .filter_map(|p| {
                let a = p.lo.max(lo);
                let b = p.hi.min(hi);
                (b > a).then(|| p.restrict(a, b).integral())
            })
            .sum()
    }

    pub fn scale(mut self, c: f64) -> Self {
        for p in &mut self.pieces {
            for t in &mut p.terms {
                t.coef *= c;
            }
        }
        self
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        self.for_each_overlap(other, |lo, hi, p, q| {
            let mut piece = Piece::new(lo, hi);
            for s in &p.terms {
                let sa = anchor(p.lo, p.hi, s.rate);
                for t in &q.terms {
                    let ta = anchor(q.lo, q.hi, t.rate);
                    let rate = s.rate + t.rate;
                    let a = anchor(lo, hi, rate);
                    let mut log = 0.0;
                    if s.rate != 0.0 {
                        log += s.rate * (a - sa);
                    }
                    if t.rate != 0.0 {
                        log += t.rate * (a - ta);
                    }
                    piece.push(Term {
                        coef: s.coef * t.coef * log.exp(),
                        rate,
                    });
                }
            }
            out.push(piece);
        });
        Self::from_pieces(out)
    }

    pub fn powi(&self, n: u32) -> Self {
        match n {
            0 => panic!("powi(0) is not representable on an unbounded support"),
            1 => self.clone(),
            _ => {
                let half = self.powi(n / 2);
                let sq = half.mul(&half);
                if n % 2 == 1 {
                    sq.mul(self)
                } else {
                    sq
                }
            }
        }
    }

    /// `∫ self * other` without materializing the product.
    pub fn dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        self.for_each_overlap(other, |lo, hi, p, q| {
            for s in &p.terms {
                let sa = anchor(p.lo, p.hi, s.rate);
                for t in &q.terms {
                    let ta = anchor(q.lo, q.hi, t.rate);
                    let rate = s.rate + t.rate;
                    let a = anchor(lo, hi, rate);
                    let mut log = 0.0;
                    if s.rate != 0.0 {
                        log += s.rate * (a - sa);
                    }
                    if t.rate != 0.0 {
                        log += t.rate * (a - ta);
                    }
                    acc += term_integral(
                        Term {
                            coef: s.coef * t.coef * log.exp(),
                            rate,
                        },
                        lo,
                        hi,
                    );
                }
            }
        });
        acc
    }

    fn for_each_overlap<F: FnMut(f64, f64, &Piece, &Piece)>(&self, other: &Self, mut f: F) {
        let (mut i, mut j) = (0, 0);
        while i < self.pieces.len() && j < other.pieces.len() {
            let p = &self.pieces[i];
            let q = &other.pieces[j];
            let lo = p.lo.max(q.lo);
            let hi = p.hi.min(q.hi);
            if hi > lo {
                f(lo, hi, p, q);
            }
            if p.hi <= q.hi {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PiecewiseExp {
        PiecewiseExp::from_pieces(vec![
            Piece::new(-3.0, 0.0).with(2.0, 1.0, 0.0),
            Piece::new(0.0, 4.0).with(1.0, 0.0, 0.0).with(-0.5, -2.0, 0.0),
        ])
    }

    fn brute(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let rule = crate::quadrature::PanelRule::new(&[lo, 0.0, hi], 0.25, 12);
        rule.integrate(f)
    }

    #[test]
    fn eval_and_integral_match_quadrature() {
        let f = sample();
        assert!((f.eval(-1.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((f.eval(1.0) - (1.0 - 0.5 * (-2.0f64).exp())).abs() < 1e-15);
        assert_eq!(f.eval(5.0), 0.0);
        let want = brute(|x| f.eval(x), -3.0, 4.0);
        assert!((f.integral() - want).abs() < 1e-13);
    }

    #[test]
    fn product_and_dot_agree() {
        let f = sample();
        let g = PiecewiseExp::from_pieces(vec![Piece::new(-1.0, 2.0).with(3.0, -1.0, 2.0).with(1.0, 2.0, -1.0)]);
        let fg = f.mul(&g);
        let want = brute(|x| f.eval(x) * g.eval(x), -3.0, 4.0);
        assert!((fg.integral() - want).abs() < 1e-12);
        assert!((f.dot(&g) - want).abs() < 1e-12);
        for &x in &[-0.7, 0.3, 1.9] {
            assert!((fg.eval(x) - f.eval(x) * g.eval(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn powers() {
        let f = sample();
        let f4 = f.powi(4);
        let want = brute(|x| f.eval(x).powi(4), -3.0, 4.0);
        assert!((f4.integral() - want).abs() < 1e-11);
    }

    #[test]
    fn unbounded_left_tail() {
        let f = PiecewiseExp::from_pieces(vec![Piece::new(f64::NEG_INFINITY, 0.0).with(1.0, 2.0, 0.0)]);
        assert!((f.integral() - 0.5).abs() < 1e-15);
        assert!((f.integral_over(f64::NEG_INFINITY, -1.0) - 0.5 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn large_offsets_do_not_overflow() {
        let f = PiecewiseExp::from_pieces(vec![Piece::new(0.0, 2000.0).with(1.0, -1.0, 0.0).with(-1.0, 1.0, 2000.0)]);
        let sq = f.mul(&f);
        assert!(sq.integral().is_finite());
    }
}
