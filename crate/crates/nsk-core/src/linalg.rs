//! Small dense complex matrices (order at most 4) used for per-mode blocks.

use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

pub const MAX: usize = 4;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Row-major square matrix of order `n <= 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub n: usize,
    a: [C64; MAX * MAX],
}

/// Vector companion of [`Block`].
pub type Vec4 = [C64; MAX];

impl Block {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX, "block order {n} unsupported");
        Block { n, a: [ZERO; MAX * MAX] }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n);
        for i in 0..n {
            b.a[i * MAX + i] = ONE;
        }
        b
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let mut b = Self::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), rows.len());
            for (j, v) in r.iter().enumerate() {
                b.a[i * MAX + j] = *v;
            }
        }
        b
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut b = Self::zeros(entries.len());
        for (i, v) in entries.iter().enumerate() {
            b.a[i * MAX + i] = *v;
        }
        b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.a[i * MAX + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.a[i * MAX + j] = v;
    }

    pub fn mul(&self, o: &Block) -> Block {
        debug_assert_eq!(self.n, o.n);
        let n = self.n;
        let mut r = Block::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * MAX + k];
                if aik == ZERO {
                    continue;
                }
                for j in 0..n {
                    r.a[i * MAX + j] += aik * o.a[k * MAX + j];
                }
            }
        }
        r
    }

    pub fn add(&self, o: &Block) -> Block {
        let mut r = *self;
        for (x, y) in r.a.iter_mut().zip(o.a.iter()) {
            *x += *y;
        }
        r
    }

    pub fn sub(&self, o: &Block) -> Block {
        let mut r = *self;
        for (x, y) in r.a.iter_mut().zip(o.a.iter()) {
            *x -= *y;
        }
        r
    }

    pub fn scale(&self, s: C64) -> Block {
        let mut r = *self;
        for x in r.a.iter_mut() {
            *x *= s;
        }
        r
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Block {
        let mut r = Block::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                r.a[j * MAX + i] = self.a[i * MAX + j].conj();
            }
        }
        r
    }

    pub fn apply(&self, x: &Vec4) -> Vec4 {
        let mut y = [ZERO; MAX];
        for i in 0..self.n {
            let mut s = ZERO;
            for j in 0..self.n {
                s += self.a[i * MAX + j] * x[j];
            }
            y[i] = s;
        }
        y
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.a[i * MAX + i]).sum()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.a[i * MAX + j].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Vec4) -> Option<Vec4> {
        let n = self.n;
        let mut m = *self;
        let mut x = *b;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| {
                m.get(i, c).norm().partial_cmp(&m.get(j, c).norm()).unwrap_or(core::cmp::Ordering::Equal)
            })?;
            let piv = m.get(p, c);
            if piv.norm() == 0.0 || !piv.norm().is_finite() {
                return None;
            }
            if p != c {
                for j in 0..n {
                    let t = m.get(c, j);
                    m.set(c, j, m.get(p, j));
                    m.set(p, j, t);
                }
                x.swap(c, p);
            }
            for i in c + 1..n {
                let f = m.get(i, c) / piv;
                if f == ZERO {
                    continue;
                }
                for j in c..n {
                    let v = m.get(i, j) - f * m.get(c, j);
                    m.set(i, j, v);
                }
                x[i] = x[i] - f * x[c];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s / m.get(i, i);
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Block> {
        let n = self.n;
        let mut r = Block::zeros(n);
        for j in 0..n {
            let mut e = [ZERO; MAX];
            e[j] = ONE;
            let col = self.solve(&e)?;
            for i in 0..n {
                r.set(i, j, col[i]);
            }
        }
        Some(r)
    }

    /// Matrix exponential by scaling and squaring with a Taylor kernel.
    pub fn expm(&self) -> Block {
        let norm = self.norm_inf();
        let mut squarings = 0u32;
        if norm > 0.5 {
            squarings = libm::ceil(libm::log2(norm / 0.5)) as u32;
        }
        let scaled = self.scale(C64::new(libm::ldexp(1.0, -(squarings as i32)), 0.0));
        let mut term = Block::identity(self.n);
        let mut sum = term;
        for k in 1..=18u32 {
            term = term.mul(&scaled).scale(C64::new(1.0 / k as f64, 0.0));
            sum = sum.add(&term);
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        sum
    }

    /// Eigenvalues by shifted QR iteration on the Hessenberg form.
    pub fn eigenvalues(&self) -> ([C64; MAX], usize) {
        let n = self.n;
        let mut out = [ZERO; MAX];
        match n {
            1 => out[0] = self.get(0, 0),
            2 => {
                let (l1, l2) = eig2(self.get(0, 0), self.get(0, 1), self.get(1, 0), self.get(1, 1));
                out[0] = l1;
                out[1] = l2;
            }
            _ => {
                let h = qr_eigen(self);
                out[..n].copy_from_slice(&h[..n]);
            }
        }
        (out, n)
    }

    /// Frobenius condition number of a unit-norm eigenvector basis;
    /// infinite when the basis is numerically singular.
    pub fn eigenvector_condition(&self) -> f64 {
        let (lams, n) = self.eigenvalues();
        let scale = self.max_abs().max(1e-300);
        let mut v = Block::zeros(n);
        for (c, lam) in lams.iter().take(n).enumerate() {
            let vec = match null_vector(self, *lam, scale) {
                Some(x) => x,
                None => return f64::INFINITY,
            };
            for i in 0..n {
                v.set(i, c, vec[i]);
            }
        }
        match v.inverse() {
            Some(inv) => {
                let c = v.norm_fro() * inv.norm_fro();
                if c.is_finite() {
                    c
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        }
    }
}

/// Roots of the characteristic polynomial of a 2×2 matrix, ordered by
/// increasing real part.
pub fn eig2(a: C64, b: C64, c: C64, d: C64) -> (C64, C64) {
    let half_tr = (a + d) * 0.5;
    let disc = ((a - d) * 0.5) * ((a - d) * 0.5) + b * c;
    let r = disc.sqrt();
    let (l1, l2) = (half_tr - r, half_tr + r);
    if l1.re <= l2.re {
        (l1, l2)
    } else {
        (l2, l1)
    }
}

fn null_vector(m: &Block, lam: C64, scale: f64) -> Option<Vec4> {
    let n = m.n;
    let shift = lam + C64::new(scale * 1e-10, scale * 1e-10);
    let shifted = m.sub(&Block::identity(n).scale(shift));
    let mut x = [ZERO; MAX];
    for (i, xi) in x.iter_mut().take(n).enumerate() {
        *xi = C64::new(1.0 + 0.1 * i as f64, 0.3 - 0.07 * i as f64);
    }
    for _ in 0..3 {
        let y = shifted.solve(&x)?;
        let nrm = y.iter().take(n).map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return None;
        }
        for i in 0..n {
            x[i] = y[i] / nrm;
        }
    }
    Some(x)
}

fn qr_eigen(m: &Block) -> [C64; MAX] {
    let n = m.n;
    let mut h = hessenberg(m);
    let mut out = [ZERO; MAX];
    let mut hi = n - 1;
    let mut iter = 0;
    let eps = f64::EPSILON;
    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let s = h.get(lo, lo).norm() + h.get(lo - 1, lo - 1).norm();
            if h.get(lo, lo - 1).norm() <= eps * s.max(1e-300) {
                h.set(lo, lo - 1, ZERO);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            out[hi] = h.get(hi, hi);
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        let (a, b, c, d) = (h.get(hi - 1, hi - 1), h.get(hi - 1, hi), h.get(hi, hi - 1), h.get(hi, hi));
        let (l1, l2) = eig2(a, b, c, d);
        let mut mu = if (l1 - d).norm() < (l2 - d).norm() { l1 } else { l2 };
        if iter % 11 == 10 {
            mu += C64::new(h.get(hi, hi - 1).norm(), 0.0);
        }
        if iter > 500 {
            break;
        }
        // one QR step on the active window via Givens rotations
        for i in lo..=hi {
            h.set(i, i, h.get(i, i) - mu);
        }
        let mut rots: [(C64, C64); MAX] = [(ZERO, ZERO); MAX];
        for i in lo..hi {
            let x = h.get(i, i);
            let y = h.get(i + 1, i);
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (cs, sn) = if r == 0.0 { (ONE, ZERO) } else { (x / r, y / r) };
            rots[i] = (cs, sn);
            for j in 0..n {
                let p = h.get(i, j);
                let q = h.get(i + 1, j);
                h.set(i, j, cs.conj() * p + sn.conj() * q);
                h.set(i + 1, j, -sn * p + cs * q);
            }
        }
        for i in lo..hi {
            let (cs, sn) = rots[i];
            for r in 0..n {
                let p = h.get(r, i);
                let q = h.get(r, i + 1);
                h.set(r, i, p * cs + q * sn);
                h.set(r, i + 1, -p * sn.conj() + q * cs.conj());
            }
        }
        for i in lo..=hi {
            h.set(i, i, h.get(i, i) + mu);
        }
    }
    out[0] = if n > 0 && hi == 0 { h.get(0, 0) } else { out[0] };
    if hi > 0 {
        for i in 0..=hi {
            out[i] = h.get(i, i);
        }
    }
    out
}

fn hessenberg(m: &Block) -> Block {
    let n = m.n;
    let mut h = *m;
    for c in 0..n.saturating_sub(2) {
        for r in c + 2..n {
            let x = h.get(c + 1, c);
            let y = h.get(r, c);
            if y.norm() == 0.0 {
                continue;
            }
            let nr = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (cs, sn) = (x / nr, y / nr);
            for j in 0..n {
                let p = h.get(c + 1, j);
                let q = h.get(r, j);
                h.set(c + 1, j, cs.conj() * p + sn.conj() * q);
                h.set(r, j, -sn * p + cs * q);
            }
            for i in 0..n {
                let p = h.get(i, c + 1);
                let q = h.get(i, r);
                h.set(i, c + 1, p * cs + q * sn);
                h.set(i, r, -p * sn.conj() + q * cs.conj());
            }
        }
    }
    h
}
