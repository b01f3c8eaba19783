//! Complex FFT: iterative radix 2 for powers of two, otherwise mixed radix
//! (4, 2, 3, 5, with a direct DFT for other prime factors), plus its
//! multi-dimensional extension on cubic grids.

use crate::C64;
use alloc::vec;
use alloc::vec::Vec;

/// Precomputed twiddles and factorization for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    factors: Vec<usize>,
    /// exp(-2πi j / n) for j in 0..n
    twiddles: Vec<C64>,
    /// Bit-reversal permutation when `n` is a power of two.
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut factors = Vec::new();
        let mut m = n;
        for p in [4usize, 2, 3, 5] {
            while m % p == 0 {
                factors.push(p);
                m /= p;
            }
        }
        let mut p = 7;
        while m > 1 {
            while m % p == 0 {
                factors.push(p);
                m /= p;
            }
            p += 2;
        }
        let twiddles = (0..n)
            .map(|j| {
                let ang = -2.0 * core::f64::consts::PI * (j as f64) / (n as f64);
                C64::new(libm::cos(ang), libm::sin(ang))
            })
            .collect();
        let bitrev = if n.is_power_of_two() && n > 1 {
            let bits = n.trailing_zeros();
            (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect()
        } else {
            Vec::new()
        };
        FftPlan { n, factors, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized transform: forward uses exp(-2πi jk/n), inverse exp(+2πi jk/n).
    pub fn process(&self, data: &mut [C64], inverse: bool) {
        assert_eq!(data.len(), self.n);
        if self.n == 1 {
            return;
        }
        if !self.bitrev.is_empty() {
            self.radix2(data, inverse);
            return;
        }
        let input: Vec<C64> = data.to_vec();
        self.rec(&input, 0, 1, data, 0, inverse);
    }

    fn radix2(&self, data: &mut [C64], inverse: bool) {
        let n = self.n;
        for (i, &j) in self.bitrev.iter().enumerate() {
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let w = if inverse { w.conj() } else { w };
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len *= 2;
        }
    }

    fn tw(&self, idx: usize, inverse: bool) -> C64 {
        let w = self.twiddles[idx % self.n];
        if inverse {
            w.conj()
        } else {
            w
        }
    }

    // Decimation in time: out[0..len] = DFT of input[offset + j*stride].
    fn rec(&self, input: &[C64], offset: usize, stride: usize, out: &mut [C64], level: usize, inverse: bool) {
        let len = out.len();
        if len == 1 {
            out[0] = input[offset];
            return;
        }
        let p = self.factors[level];
        let m = len / p;
        for r in 0..p {
            self.rec(input, offset + r * stride, stride * p, &mut out[r * m..(r + 1) * m], level + 1, inverse);
        }
        // twiddle factors for this level: W_len^{j} = W_n^{j * n/len}
        let step = self.n / len;
        let mut tmp = [C64::new(0.0, 0.0); 8];
        let mut big: Vec<C64> = if p > 8 { vec![C64::new(0.0, 0.0); p] } else { Vec::new() };
        for k in 0..m {
            let buf: &mut [C64] = if p > 8 { &mut big[..] } else { &mut tmp[..p] };
            for r in 0..p {
                buf[r] = out[r * m + k] * self.tw(r * k * step, inverse);
            }
            match p {
                2 => {
                    let (a, b) = (buf[0], buf[1]);
                    out[k] = a + b;
                    out[m + k] = a - b;
                }
                4 => {
                    let (a, b, c, d) = (buf[0], buf[1], buf[2], buf[3]);
                    let i = if inverse { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                    let (s0, s1) = (a + c, a - c);
                    let (s2, s3) = (b + d, (b - d) * i);
                    out[k] = s0 + s2;
                    out[m + k] = s1 + s3;
                    out[2 * m + k] = s0 - s2;
                    out[3 * m + k] = s1 - s3;
                }
                _ => {
                    let pstep = self.n / p;
                    for q in 0..p {
                        let mut s = C64::new(0.0, 0.0);
                        for (r, v) in buf.iter().enumerate() {
                            s += *v * self.tw((r * q % p) * pstep, inverse);
                        }
                        out[q * m + k] = s;
                    }
                }
            }
        }
    }
}

/// Applies a 1-D plan along every axis of a row-major cube with side `plan.len()`.
pub fn process_nd(plan: &FftPlan, data: &mut [C64], d: usize, inverse: bool) {
    let n = plan.len();
    assert_eq!(data.len(), n.pow(d as u32));
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let outer = data.len() / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                plan.process(&mut line, inverse);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}
