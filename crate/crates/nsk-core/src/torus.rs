//! Periodic grids, Fourier coefficients of fields, spectral operators,
//! Sobolev norms and dealiased products on the torus of side `L`.
//!
//! Coefficients are stored in FFT order along each axis (row-major, axis 0
//! slowest). The forward transform divides by `N^d`, so the mean square of
//! the grid values equals the sum of squared coefficient moduli.

use crate::fft::{process_nd, FftPlan};
use crate::{Error, Result, C64};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

/// Uniform periodic grid with `n` points (and modes) per axis.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    d: usize,
    n: usize,
    l: f64,
    plan: Arc<FftPlan>,
    pad: Arc<FftPlan>,
}

impl PartialEq for TorusGrid {
    fn eq(&self, o: &Self) -> bool {
        self.d == o.d && self.n == o.n && self.l == o.l
    }
}

impl TorusGrid {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Invalid(alloc::format!("dimension {d} not in 1..=3")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::Invalid(alloc::format!("N = {n} must be even and at least 8")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Invalid(alloc::format!("period L = {l} must be positive")));
        }
        Ok(TorusGrid { d, n, l, plan: Arc::new(FftPlan::new(n)), pad: Arc::new(FftPlan::new(3 * n / 2)) })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.l
    }

    pub fn spacing(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Number of grid points (and coefficients) per component.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same grid with twice the resolution.
    pub fn refined(&self) -> Self {
        TorusGrid::new(self.d, 2 * self.n, self.l).expect("refinement of a valid grid")
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        TorusGrid::new(self.d, n, self.l)
    }

    #[inline]
    fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.n.pow((self.d - 1 - axis) as u32)) % self.n
    }

    /// Integer mode numbers in `[-N/2, N/2)` of coefficient `idx`.
    pub fn modes(&self, idx: usize) -> [i64; 3] {
        let mut m = [0i64; 3];
        for (axis, v) in m.iter_mut().enumerate().take(self.d) {
            let i = self.axis_index(idx, axis) as i64;
            *v = if i < (self.n / 2) as i64 { i } else { i - self.n as i64 };
        }
        m
    }

    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.modes(idx);
        let s = 2.0 * PI / self.l;
        [m[0] as f64 * s, m[1] as f64 * s, m[2] as f64 * s]
    }

    pub fn k2(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    /// True if any axis sits at the unpaired mode `-N/2`.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let m = self.modes(idx);
        m.iter().take(self.d).any(|&v| v == -((self.n / 2) as i64))
    }

    /// Index of the coefficient at `-k`.
    pub fn negated(&self, idx: usize) -> usize {
        let mut out = 0;
        for axis in 0..self.d {
            let i = self.axis_index(idx, axis);
            out = out * self.n + (self.n - i) % self.n;
        }
        out
    }

    /// Index from integer modes (each wrapped into the grid).
    pub fn index_of(&self, modes: &[i64]) -> usize {
        let mut out = 0;
        for m in modes.iter().take(self.d) {
            out = out * self.n + m.rem_euclid(self.n as i64) as usize;
        }
        out
    }

    /// Physical coordinates of grid point `idx`.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (axis, v) in x.iter_mut().enumerate().take(self.d) {
            *v = self.axis_index(idx, axis) as f64 * self.spacing();
        }
        x
    }

    /// Grid values to coefficients (divides by `N^d`).
    pub fn analyze(&self, data: &mut [C64]) {
        process_nd(&self.plan, data, self.d, false);
        let s = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// Coefficients to grid values.
    pub fn synthesize(&self, data: &mut [C64]) {
        process_nd(&self.plan, data, self.d, true);
    }

    /// Grid values of a coefficient array on the 3/2-padded grid. The unpaired
    /// `-N/2` coefficient is split evenly between `±N/2`.
    pub fn to_padded(&self, coeffs: &[C64]) -> Vec<C64> {
        let mut out = embed(coeffs, self.d, self.n, 3 * self.n / 2);
        process_nd(&self.pad, &mut out, self.d, true);
        out
    }

    /// Truncates padded-grid values back to this grid's coefficients, with the
    /// unpaired modes set to zero.
    pub fn from_padded(&self, mut values: Vec<C64>) -> Vec<C64> {
        let big = 3 * self.n / 2;
        process_nd(&self.pad, &mut values, self.d, false);
        let s = 1.0 / values.len() as f64;
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            if self.is_nyquist(idx) {
                continue;
            }
            let m = self.modes(idx);
            let mut j = 0usize;
            for v in m.iter().take(self.d) {
                j = j * big + v.rem_euclid(big as i64) as usize;
            }
            *o = values[j] * s;
        }
        out
    }
}

/// Embeds coefficients of an `n`-grid into a larger `big`-grid, splitting the
/// unpaired mode symmetrically.
pub(crate) fn embed(coeffs: &[C64], d: usize, n: usize, big: usize) -> Vec<C64> {
    debug_assert!(big > n);
    let mut out = vec![C64::new(0.0, 0.0); big.pow(d as u32)];
    let half = (n / 2) as i64;
    for (idx, &c) in coeffs.iter().enumerate() {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        let mut modes = [0i64; 3];
        let mut nyq = 0;
        for axis in 0..d {
            let i = ((idx / n.pow((d - 1 - axis) as u32)) % n) as i64;
            modes[axis] = if i < half { i } else { i - n as i64 };
            if modes[axis] == -half {
                nyq += 1;
            }
        }
        let copies = 1usize << nyq;
        let w = c / copies as f64;
        for mask in 0..copies {
            let mut bit = 0;
            let mut j = 0usize;
            for &m in modes.iter().take(d) {
                let mut mm = m;
                if m == -half {
                    if mask >> bit & 1 == 1 {
                        mm = half;
                    }
                    bit += 1;
                }
                j = j * big + mm.rem_euclid(big as i64) as usize;
            }
            out[j] += w;
        }
    }
    out
}

/// Differential operators with exact Fourier symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Grad,
    Div,
    Laplacian,
}

/// Fourier coefficients of a scalar (rank 1) or vector (rank d) field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    comps: Vec<Vec<C64>>,
    real: bool,
}

impl SpectralField {
    pub fn zeros(grid: &TorusGrid, rank: usize, real: bool) -> Self {
        SpectralField { grid: grid.clone(), comps: vec![vec![C64::new(0.0, 0.0); grid.len()]; rank], real }
    }

    pub fn from_coeffs(grid: &TorusGrid, comps: Vec<Vec<C64>>, real: bool) -> Result<Self> {
        if comps.is_empty() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::ShapeMismatch(alloc::format!("coefficients must have length {}", grid.len())));
        }
        let mut f = SpectralField { grid: grid.clone(), comps, real };
        if real {
            f.symmetrize();
        }
        Ok(f)
    }

    /// Real field from grid values, one slice per component.
    pub fn from_values(grid: &TorusGrid, values: &[Vec<f64>]) -> Result<Self> {
        let comps = values
            .iter()
            .map(|v| {
                if v.len() != grid.len() {
                    return Err(Error::ShapeMismatch(alloc::format!("expected {} grid values", grid.len())));
                }
                let mut c: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
                grid.analyze(&mut c);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        SpectralField::from_coeffs(grid, comps, true)
    }

    /// Complex-valued field from grid values.
    pub fn from_complex_values(grid: &TorusGrid, values: &[Vec<C64>]) -> Result<Self> {
        let comps = values
            .iter()
            .map(|v| {
                if v.len() != grid.len() {
                    return Err(Error::ShapeMismatch(alloc::format!("expected {} grid values", grid.len())));
                }
                let mut c = v.clone();
                grid.analyze(&mut c);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        SpectralField::from_coeffs(grid, comps, false)
    }

    /// Real field sampled from a function of the grid point.
    pub fn from_fn<F: Fn(&[f64; 3]) -> f64>(grid: &TorusGrid, f: F) -> Self {
        let v: Vec<f64> = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        SpectralField::from_values(grid, &[v]).expect("length matches grid")
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.comps.len()
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn comp(&self, i: usize) -> &[C64] {
        &self.comps[i]
    }

    pub fn comp_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.comps[i]
    }

    pub fn comps(&self) -> &[Vec<C64>] {
        &self.comps
    }

    pub fn into_comps(self) -> Vec<Vec<C64>> {
        self.comps
    }

    /// Marks the field as complex-valued (no symmetry enforcement).
    pub fn into_complex(mut self) -> Self {
        self.real = false;
        self
    }

    pub fn component(&self, i: usize) -> SpectralField {
        SpectralField { grid: self.grid.clone(), comps: vec![self.comps[i].clone()], real: self.real }
    }

    pub fn stack(parts: &[&SpectralField]) -> Result<Self> {
        let grid = parts.first().ok_or(Error::RankMismatch("empty stack"))?.grid.clone();
        let mut comps = Vec::new();
        let mut real = true;
        for p in parts {
            if p.grid != grid {
                return Err(Error::GridMismatch);
            }
            real &= p.real;
            comps.extend(p.comps.iter().cloned());
        }
        Ok(SpectralField { grid, comps, real })
    }

    /// Complex grid values per component.
    pub fn complex_values(&self) -> Vec<Vec<C64>> {
        self.comps
            .iter()
            .map(|c| {
                let mut v = c.clone();
                self.grid.synthesize(&mut v);
                v
            })
            .collect()
    }

    /// Real parts of the grid values per component.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.complex_values().into_iter().map(|v| v.into_iter().map(|z| z.re).collect()).collect()
    }

    /// Enforces `c(-k) = conj(c(k))`.
    pub fn symmetrize(&mut self) {
        let g = &self.grid;
        for c in self.comps.iter_mut() {
            for idx in 0..g.len() {
                let j = g.negated(idx);
                if j < idx {
                    continue;
                }
                let avg = (c[idx] + c[j].conj()) * 0.5;
                c[idx] = avg;
                c[j] = avg.conj();
            }
        }
    }

    /// Zeroes the unpaired `-N/2` modes.
    pub fn zero_nyquist(&mut self) {
        for idx in 0..self.grid.len() {
            if self.grid.is_nyquist(idx) {
                for c in self.comps.iter_mut() {
                    c[idx] = C64::new(0.0, 0.0);
                }
            }
        }
    }

    fn check(&self, o: &SpectralField) -> Result<()> {
        if self.grid != o.grid {
            return Err(Error::GridMismatch);
        }
        if self.rank() != o.rank() {
            return Err(Error::RankMismatch("operands have different ranks"));
        }
        Ok(())
    }

    pub fn add(&self, o: &SpectralField) -> Result<Self> {
        self.axpy(C64::new(1.0, 0.0), o)
    }

    pub fn sub(&self, o: &SpectralField) -> Result<Self> {
        self.axpy(C64::new(-1.0, 0.0), o)
    }

    /// `self + alpha * o`.
    pub fn axpy(&self, alpha: C64, o: &SpectralField) -> Result<Self> {
        self.check(o)?;
        let mut r = self.clone();
        for (c, oc) in r.comps.iter_mut().zip(o.comps.iter()) {
            for (x, y) in c.iter_mut().zip(oc.iter()) {
                *x += alpha * *y;
            }
        }
        r.real = self.real && o.real && alpha.im == 0.0;
        Ok(r)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut r = self.clone();
        for c in r.comps.iter_mut() {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
        r
    }

    /// Real part of the L² pairing, `Re Σ conj(f̂) ĝ` summed over components.
    pub fn inner(&self, o: &SpectralField) -> Result<f64> {
        self.check(o)?;
        Ok(self
            .comps
            .iter()
            .zip(o.comps.iter())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>())
            .sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// `(Σ_k (1+|k|²)^σ |f̂(k)|²)^{1/2}` over all components.
    pub fn sobolev_norm(&self, sigma: f64) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for idx in 0..g.len() {
            let w = if sigma == 0.0 { 1.0 } else { (1.0 + g.k2(idx)).powf(sigma) };
            for c in self.comps.iter() {
                s += w * c[idx].norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Maximum modulus of the grid values.
    pub fn sup_norm(&self) -> f64 {
        self.complex_values().iter().flat_map(|v| v.iter().map(|z| z.norm())).fold(0.0, f64::max)
    }

    pub fn differentiate(&self, op: DiffOp) -> Result<Self> {
        let g = &self.grid;
        let d = g.dim();
        let i = C64::new(0.0, 1.0);
        match op {
            DiffOp::Grad => {
                if self.rank() != 1 {
                    return Err(Error::RankMismatch("grad needs a scalar field"));
                }
                let mut comps = vec![vec![C64::new(0.0, 0.0); g.len()]; d];
                for idx in 0..g.len() {
                    if g.is_nyquist(idx) {
                        continue;
                    }
                    let k = g.wavevector(idx);
                    for (a, comp) in comps.iter_mut().enumerate() {
                        comp[idx] = i * k[a] * self.comps[0][idx];
                    }
                }
                Ok(SpectralField { grid: g.clone(), comps, real: self.real })
            }
            DiffOp::Div => {
                if self.rank() != d {
                    return Err(Error::RankMismatch("div needs a vector field"));
                }
                let mut out = vec![C64::new(0.0, 0.0); g.len()];
                for (idx, o) in out.iter_mut().enumerate() {
                    if g.is_nyquist(idx) {
                        continue;
                    }
                    let k = g.wavevector(idx);
                    *o = (0..d).map(|a| i * k[a] * self.comps[a][idx]).sum();
                }
                Ok(SpectralField { grid: g.clone(), comps: vec![out], real: self.real })
            }
            DiffOp::Laplacian => {
                let mut r = self.clone();
                for c in r.comps.iter_mut() {
                    for (idx, x) in c.iter_mut().enumerate() {
                        *x *= -g.k2(idx);
                    }
                }
                Ok(r)
            }
        }
    }

    pub fn grad(&self) -> Result<Self> {
        self.differentiate(DiffOp::Grad)
    }

    pub fn div(&self) -> Result<Self> {
        self.differentiate(DiffOp::Div)
    }

    pub fn laplacian(&self) -> Result<Self> {
        self.differentiate(DiffOp::Laplacian)
    }

    /// Pointwise product on the 3/2-padded grid. A scalar factor broadcasts
    /// against a vector one.
    pub fn dealiased_product(&self, o: &SpectralField) -> Result<Self> {
        if self.grid != o.grid {
            return Err(Error::GridMismatch);
        }
        let (r1, r2) = (self.rank(), o.rank());
        let rank = if r1 == r2 || r2 == 1 {
            r1
        } else if r1 == 1 {
            r2
        } else {
            return Err(Error::RankMismatch("product of vectors with different ranks"));
        };
        let a: Vec<Vec<C64>> = self.comps.iter().map(|c| self.grid.to_padded(c)).collect();
        let b: Vec<Vec<C64>> = o.comps.iter().map(|c| self.grid.to_padded(c)).collect();
        let comps = (0..rank)
            .map(|c| {
                let x = &a[if r1 == 1 { 0 } else { c }];
                let y = &b[if r2 == 1 { 0 } else { c }];
                self.grid.from_padded(x.iter().zip(y.iter()).map(|(p, q)| p * q).collect())
            })
            .collect();
        let mut f = SpectralField { grid: self.grid.clone(), comps, real: self.real && o.real };
        if f.real {
            f.symmetrize();
        }
        Ok(f)
    }

    /// Dot product of two vector fields, dealiased.
    pub fn dot(&self, o: &SpectralField) -> Result<Self> {
        self.check(o)?;
        let mut acc: Option<SpectralField> = None;
        for c in 0..self.rank() {
            let p = self.component(c).dealiased_product(&o.component(c))?;
            acc = Some(match acc {
                None => p,
                Some(a) => a.add(&p)?,
            });
        }
        acc.ok_or(Error::RankMismatch("empty field"))
    }
}
