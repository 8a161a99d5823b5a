//! Closed-form Fourier multipliers m(xi), evaluated together with their
//! xi-derivatives through jets.

use crate::jet::Jet;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// 0 on |xi| <= 1/2, 1 on |xi| >= 1.
    Base,
    /// 0 on |xi| <= 3/2, 1 on |xi| >= 2 (space homological step).
    Space,
    /// Same plateaus as `Space`, used by the M = 1 lower steps.
    Lower,
    /// 1 on xi >= 0, 0 on xi <= -1/2.
    Plus,
    /// 1 on xi <= -1, 0 on xi >= -2/3.
    Minus,
    /// `Lower` restricted to xi > 0.
    LowerPlus,
    /// `Lower` restricted to xi <= 0.
    LowerMinus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mult {
    Const { re: f64, im: f64 },
    Xi,
    /// |xi|^alpha, taken as 0 at xi = 0 unless alpha = 0.
    AbsPow { alpha: f64 },
    /// <xi>^alpha.
    JapPow { alpha: f64 },
    Sign,
    Cutoff { kind: CutoffKind },
    Sum { terms: Vec<Mult> },
    Prod { factors: Vec<Mult> },
    Deriv { n: usize, inner: Box<Mult> },
    Conj { inner: Box<Mult> },
}

fn bump(t: &Jet) -> Jet {
    let t0 = t.value().re;
    let n = t.order();
    if t0.abs() >= 1.0 {
        return Jet::constant(C64::new(0.0, 0.0), n);
    }
    let one = Jet::constant(C64::new(1.0, 0.0), n);
    let q = &one - &(t * t);
    (&one - &q.recip()).exp()
}

/// Smooth step: 0 for s <= 0, 1 for s >= 1, flat at both ends.
fn step(s: &Jet) -> Jet {
    let s0 = s.value().re;
    let n = s.order();
    if s0 <= 0.0 {
        return Jet::constant(C64::new(0.0, 0.0), n);
    }
    if s0 >= 1.0 {
        return Jet::constant(C64::new(1.0, 0.0), n);
    }
    let one = Jet::constant(C64::new(1.0, 0.0), n);
    let a = bump(&(&one - s));
    let b = bump(s);
    &a * &(&a + &b).recip()
}

fn affine(x: &Jet, a: f64, b: f64) -> Jet {
    let mut out = x.scale(C64::new(a, 0.0));
    out.0[0] += b;
    out
}

impl CutoffKind {
    pub fn jet(self, xi: f64, n: usize) -> Jet {
        let x = Jet::variable(xi, n);
        let absx = if xi < 0.0 { x.scale(C64::new(-1.0, 0.0)) } else { x.clone() };
        let zero = Jet::constant(C64::new(0.0, 0.0), n);
        match self {
            CutoffKind::Base => step(&affine(&absx, 2.0, -1.0)),
            CutoffKind::Space | CutoffKind::Lower => step(&affine(&absx, 2.0, -3.0)),
            CutoffKind::Plus => step(&affine(&x, 2.0, 1.0)),
            CutoffKind::Minus => step(&affine(&x, -3.0, -2.0)),
            CutoffKind::LowerPlus => {
                if xi > 0.0 {
                    CutoffKind::Lower.jet(xi, n)
                } else {
                    zero
                }
            }
            CutoffKind::LowerMinus => {
                if xi <= 0.0 {
                    CutoffKind::Lower.jet(xi, n)
                } else {
                    zero
                }
            }
        }
    }
}

impl Mult {
    pub fn constant(c: f64) -> Self {
        Mult::Const { re: c, im: 0.0 }
    }

    pub fn complex(c: C64) -> Self {
        Mult::Const { re: c.re, im: c.im }
    }

    pub fn cutoff(kind: CutoffKind) -> Self {
        Mult::Cutoff { kind }
    }

    /// |xi|^alpha chi(xi).
    pub fn abs_d(alpha: f64) -> Self {
        Mult::Prod { factors: vec![Mult::AbsPow { alpha }, Mult::cutoff(CutoffKind::Base)] }
    }

    pub fn times(self, other: Mult) -> Self {
        let is_one = |m: &Mult| matches!(m, Mult::Const { re, im } if *re == 1.0 && *im == 0.0);
        if is_one(&self) {
            return other;
        }
        if is_one(&other) {
            return self;
        }
        match (self, other) {
            (Mult::Prod { mut factors }, Mult::Prod { factors: f2 }) => {
                factors.extend(f2);
                Mult::Prod { factors }
            }
            (Mult::Prod { mut factors }, m) | (m, Mult::Prod { mut factors }) => {
                factors.push(m);
                Mult::Prod { factors }
            }
            (a, b) => Mult::Prod { factors: vec![a, b] },
        }
    }

    pub fn derivative(self, n: usize) -> Self {
        if n == 0 {
            return self;
        }
        match self {
            Mult::Const { .. } => Mult::constant(0.0),
            Mult::Deriv { n: k, inner } => Mult::Deriv { n: n + k, inner },
            m => Mult::Deriv { n, inner: Box::new(m) },
        }
    }

    pub fn conj(self) -> Self {
        match self {
            Mult::Const { re, im } => Mult::Const { re, im: -im },
            Mult::Conj { inner } => *inner,
            m => Mult::Conj { inner: Box::new(m) },
        }
    }

    pub fn jet(&self, xi: f64, n: usize) -> Jet {
        match self {
            Mult::Const { re, im } => Jet::constant(C64::new(*re, *im), n),
            Mult::Xi => Jet::variable(xi, n),
            Mult::AbsPow { alpha } => {
                if xi == 0.0 {
                    let v = if *alpha == 0.0 { 1.0 } else { 0.0 };
                    Jet::constant(C64::new(v, 0.0), n)
                } else {
                    let x = Jet::variable(xi, n);
                    let ax = if xi < 0.0 { x.scale(C64::new(-1.0, 0.0)) } else { x };
                    ax.powf(*alpha)
                }
            }
            Mult::JapPow { alpha } => {
                let x = Jet::variable(xi, n);
                let mut q = &x * &x;
                q.0[0] += 1.0;
                q.powf(alpha / 2.0)
            }
            Mult::Sign => {
                let v = if xi > 0.0 {
                    1.0
                } else if xi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                Jet::constant(C64::new(v, 0.0), n)
            }
            Mult::Cutoff { kind } => kind.jet(xi, n),
            Mult::Sum { terms } => terms
                .iter()
                .fold(Jet::constant(C64::new(0.0, 0.0), n), |acc, t| &acc + &t.jet(xi, n)),
            Mult::Prod { factors } => factors
                .iter()
                .fold(Jet::constant(C64::new(1.0, 0.0), n), |acc, f| &acc * &f.jet(xi, n)),
            Mult::Deriv { n: k, inner } => inner.jet(xi, n + k).differentiate(*k),
            Mult::Conj { inner } => Jet(inner.jet(xi, n).0.into_iter().map(|c| c.conj()).collect()),
        }
    }

    pub fn eval(&self, xi: f64) -> C64 {
        self.jet(xi, 0).value()
    }

    /// Whether the multiplier is real-valued (no complex constants).
    pub fn is_real(&self) -> bool {
        match self {
            Mult::Const { im, .. } => *im == 0.0,
            Mult::Sum { terms } => terms.iter().all(Mult::is_real),
            Mult::Prod { factors } => factors.iter().all(Mult::is_real),
            Mult::Deriv { inner, .. } | Mult::Conj { inner } => inner.is_real(),
            _ => true,
        }
    }
}
