//! Thin wrappers over rustfft with a per-thread planner cache.
//!
//! Transforms are unnormalized: `forward` computes `sum_j u_j e^{-2 pi i jk/n}`,
//! `backward` the same with the opposite sign.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward(buf: &mut [C64]) {
    if buf.len() <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

pub fn backward(buf: &mut [C64]) {
    if buf.len() <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    plan.process(buf);
}

/// Transform a row-major array of the given shape along one axis.
pub fn along_axis(data: &mut [C64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n <= 1 {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    debug_assert_eq!(data.len(), inner * outer * n);
    let mut line = vec![C64::new(0.0, 0.0); n];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            for (j, v) in line.iter_mut().enumerate() {
                *v = data[base + j * inner + i];
            }
            if inverse {
                backward(&mut line);
            } else {
                forward(&mut line);
            }
            for (j, v) in line.iter().enumerate() {
                data[base + j * inner + i] = *v;
            }
        }
    }
}

/// Signed frequency of FFT bin `j` out of `n`. The Nyquist bin of an even
/// length maps to `+n/2`; callers that need it symmetric treat it separately.
pub fn signed_index(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

pub fn is_nyquist(j: usize, n: usize) -> bool {
    n % 2 == 0 && j == n / 2
}
