//! Truncated Taylor arithmetic: a `Jet` holds `f^(j)(x0)/j!` for `j <= n`.
//! Used to get exact frequency derivatives of closed-form multipliers.

use num_complex::Complex64 as C64;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<C64>);

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl Jet {
    pub fn constant(c: C64, n: usize) -> Self {
        let mut v = vec![zero(); n + 1];
        v[0] = c;
        Jet(v)
    }

    /// The independent variable expanded at `x0`.
    pub fn variable(x0: f64, n: usize) -> Self {
        let mut v = vec![zero(); n + 1];
        v[0] = C64::new(x0, 0.0);
        if n >= 1 {
            v[1] = C64::new(1.0, 0.0);
        }
        Jet(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> C64 {
        self.0[0]
    }

    /// `j`-th derivative at the expansion point.
    pub fn derivative(&self, j: usize) -> C64 {
        let fact: f64 = (1..=j).map(|k| k as f64).product();
        self.0.get(j).copied().unwrap_or_default() * fact
    }

    /// Jet of `f^(j)`, of order `n - j`.
    pub fn differentiate(&self, j: usize) -> Jet {
        let n = self.order();
        if j > n {
            return Jet(vec![zero()]);
        }
        Jet((0..=n - j)
            .map(|i| {
                let f: f64 = (i + 1..=i + j).map(|k| k as f64).product();
                self.0[i + j] * f
            })
            .collect())
    }

    pub fn scale(&self, c: C64) -> Jet {
        Jet(self.0.iter().map(|v| v * c).collect())
    }

    pub fn recip(&self) -> Jet {
        let a = &self.0;
        let n = self.order();
        let mut r = vec![zero(); n + 1];
        r[0] = 1.0 / a[0];
        for k in 1..=n {
            let s: C64 = (1..=k).map(|i| a[i] * r[k - i]).sum();
            r[k] = -s / a[0];
        }
        Jet(r)
    }

    pub fn exp(&self) -> Jet {
        let a = &self.0;
        let n = self.order();
        let mut e = vec![zero(); n + 1];
        e[0] = a[0].exp();
        for k in 1..=n {
            let s: C64 = (1..=k).map(|i| a[i] * e[k - i] * i as f64).sum();
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    pub fn ln(&self) -> Jet {
        let a = &self.0;
        let n = self.order();
        let mut l = vec![zero(); n + 1];
        l[0] = a[0].ln();
        for k in 1..=n {
            let s: C64 = (1..k).map(|i| l[i] * a[k - i] * i as f64).sum();
            l[k] = (a[k] - s / k as f64) / a[0];
        }
        Jet(l)
    }

    pub fn powf(&self, p: f64) -> Jet {
        if self.0[0].norm() == 0.0 {
            return Jet::constant(if p == 0.0 { C64::new(1.0, 0.0) } else { zero() }, self.order());
        }
        self.ln().scale(C64::new(p, 0.0)).exp()
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.order().min(o.order());
        Jet((0..=n).map(|k| (0..=k).map(|i| self.0[i] * o.0[k - i]).sum()).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(C64::new(-1.0, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_derivatives() {
        let x = Jet::variable(2.0, 4);
        let p = x.powf(0.5);
        let want = [2f64.sqrt(), 0.5 * 2f64.powf(-0.5), -0.25 * 2f64.powf(-1.5), 0.375 * 2f64.powf(-2.5)];
        for (j, w) in want.iter().enumerate() {
            assert!((p.derivative(j).re - w).abs() < 1e-13);
        }
    }

    #[test]
    fn exp_of_square() {
        let x = Jet::variable(0.3, 5);
        let f = (&x * &x).exp();
        // d/dx e^{x^2} = 2x e^{x^2}, second = (2 + 4x^2) e^{x^2}
        let e = (0.09f64).exp();
        assert!((f.derivative(1).re - 0.6 * e).abs() < 1e-13);
        assert!((f.derivative(2).re - (2.0 + 4.0 * 0.09) * e).abs() < 1e-13);
    }

    #[test]
    fn recip_and_differentiate() {
        let x = Jet::variable(1.5, 4);
        let r = x.recip();
        // 1/x: derivatives (-1)^j j! / x^{j+1}
        assert!((r.derivative(3).re + 6.0 / 1.5f64.powi(4)).abs() < 1e-12);
        let d = r.differentiate(1);
        assert!((d.value().re + 1.0 / 2.25).abs() < 1e-14);
        assert!((d.derivative(2) - r.derivative(3)).norm() < 1e-12);
    }
}
