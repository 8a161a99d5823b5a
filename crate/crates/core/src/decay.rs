//! Measured decay order of an operator family: the column amplitude
//! profile `amp(xi) = max_{phi, x} |sum_k A[xi+k][xi] e^{ikx}|` fitted
//! against `log <xi>` by least squares.

use crate::fft;
use crate::grid::japanese;
use crate::linalg::CMat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Relative noise floor multiplier applied to machine epsilon.
pub const FLOOR_FACTOR: f64 = 1e3;

/// JSON has no infinities: non-finite values are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod float_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
        Null(()),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Null(()) => Ok(f64::NAN),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `log amp` vs `log <xi>`; `-inf` when the
    /// profile sits below the noise floor.
    #[serde(with = "float_serde")]
    pub slope: f64,
    #[serde(with = "float_serde")]
    pub intercept: f64,
    pub points_used: usize,
    pub floor: f64,
    pub floor_limited: bool,
    pub window: (i64, i64),
}

impl DecayFit {
    pub fn slope_or(&self, fallback: f64) -> f64 {
        if self.slope.is_finite() {
            self.slope
        } else {
            fallback
        }
    }
}

/// Default inner window `[xi_max/4, xi_max/2]`.
pub fn inner_window(xi_max: usize) -> (i64, i64) {
    ((xi_max / 4) as i64, (xi_max / 2) as i64)
}

pub fn noise_floor(scale: f64) -> f64 {
    FLOOR_FACTOR * f64::EPSILON * scale.max(1.0)
}

/// `max_x |sum_k A[xi+k][xi] e^{ikx}|` for one column, restricted to rows
/// accepted by `rows`.
pub fn column_amplitude(a: &CMat, xi_max: usize, xi: i64, rows: &dyn Fn(i64) -> bool) -> f64 {
    let n = a.nrows();
    let nx = (4 * n).next_power_of_two();
    let c = (xi + xi_max as i64) as usize;
    let mut buf = vec![C64::new(0.0, 0.0); nx];
    for r in 0..n {
        let xr = r as i64 - xi_max as i64;
        if rows(xr) {
            let k = xr - xi;
            buf[k.rem_euclid(nx as i64) as usize] += a[[r, c]];
        }
    }
    fft::backward(&mut buf);
    buf.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Profile over `|xi|` in the window, maximized over both signs and all
/// matrices of the family.
pub fn column_profile(
    mats: &[CMat],
    xi_max: usize,
    window: (i64, i64),
    rows: &dyn Fn(i64, i64) -> bool,
) -> Vec<(i64, f64)> {
    (window.0..=window.1)
        .map(|xi| {
            let mut amp: f64 = 0.0;
            for m in mats {
                for col in [xi, -xi] {
                    amp = amp.max(column_amplitude(m, xi_max, col, &|r| rows(r, col)));
                }
            }
            (xi, amp)
        })
        .collect()
}

/// Least-squares slope with the noise-floor rule: points at or below
/// `floor` are dropped, and fewer than three survivors give `-inf`.
pub fn fit_profile(profile: &[(i64, f64)], floor: f64) -> DecayFit {
    let window = (
        profile.first().map(|p| p.0).unwrap_or(0),
        profile.last().map(|p| p.0).unwrap_or(0),
    );
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|(_, a)| *a > floor && a.is_finite())
        .map(|(xi, a)| (japanese(*xi as f64).ln(), a.ln()))
        .collect();
    if pts.len() < 3 {
        return DecayFit {
            slope: f64::NEG_INFINITY,
            intercept: f64::NEG_INFINITY,
            points_used: pts.len(),
            floor,
            floor_limited: true,
            window,
        };
    }
    let (slope, intercept) = least_squares(&pts);
    DecayFit {
        slope,
        intercept,
        points_used: pts.len(),
        floor,
        floor_limited: pts.len() < profile.len(),
        window,
    }
}

pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Decay fit of a whole matrix family over the window.
pub fn fit_family(mats: &[CMat], xi_max: usize, window: (i64, i64), scale: f64) -> DecayFit {
    let prof = column_profile(mats, xi_max, window, &|_, _| true);
    fit_profile(&prof, noise_floor(scale))
}

/// Decay of the coupling between non-negative and negative frequencies.
pub fn fit_off_block(mats: &[CMat], xi_max: usize, window: (i64, i64), scale: f64) -> DecayFit {
    let prof = column_profile(mats, xi_max, window, &|r, c| (r >= 0) != (c >= 0));
    fit_profile(&prof, noise_floor(scale))
}
