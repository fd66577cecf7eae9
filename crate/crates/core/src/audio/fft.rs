//! Mixed-radix decimation-in-time FFT for arbitrary lengths. Radices are the
//! prime factors of the length; a prime length falls back to a direct DFT.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Forward transform `X[k] = Σ x[t]·e^{-2πi·kt/n}` for a fixed length.
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let twiddles = (0..n)
            .map(|t| {
                let a = -2.0 * PI * t as f64 / n as f64;
                Complex::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        Fft { n, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, input: &[Complex]) -> Vec<Complex> {
        assert_eq!(input.len(), self.n);
        self.transform(input, 1)
    }

    /// Real input, returns the `n/2 + 1` non-negative frequency bins.
    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex> {
        let c: Vec<Complex> = input.iter().map(|&x| Complex::new(x, 0.0)).collect();
        let mut out = self.forward(&c);
        out.truncate(self.n / 2 + 1);
        out
    }

    // `stride` maps a sub-transform of length n/stride onto the full twiddle table.
    fn transform(&self, x: &[Complex], stride: usize) -> Vec<Complex> {
        let n = x.len();
        if n == 1 {
            return x.to_vec();
        }
        let p = smallest_factor(n);
        if p == n {
            return (0..n)
                .map(|k| {
                    x.iter().enumerate().fold(Complex::ZERO, |acc, (t, &v)| {
                        acc + v * self.twiddles[(k * t % n) * stride]
                    })
                })
                .collect();
        }
        let m = n / p;
        let subs: Vec<Vec<Complex>> = (0..p)
            .map(|r| {
                let part: Vec<Complex> = x.iter().skip(r).step_by(p).copied().collect();
                self.transform(&part, stride * p)
            })
            .collect();
        let mut out = alloc::vec![Complex::ZERO; n];
        for (idx, o) in out.iter_mut().enumerate() {
            let k = idx % m;
            let mut acc = Complex::ZERO;
            for (r, s) in subs.iter().enumerate() {
                acc = acc + s[k] * self.twiddles[(r * idx % n) * stride];
            }
            *o = acc;
        }
        out
    }
}

fn smallest_factor(n: usize) -> usize {
    let mut f = 2;
    while f * f <= n {
        if n % f == 0 {
            return f;
        }
        f += 1;
    }
    n
}
