//! Physical model, linearization constants and classification of the
//! coupling matrix of the (σ, q) adjoint subsystem.

use crate::linalg::Block;
use crate::{Error, Result, C64};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

/// Real polynomial in the shifted variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Poly { coeffs: if coeffs.is_empty() { vec![0.0] } else { coeffs } }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::new(vec![0.0]);
        }
        Poly::new(self.coeffs.iter().enumerate().skip(1).map(|(j, &c)| j as f64 * c).collect())
    }

    /// `k`-th derivative evaluated at `x`.
    pub fn eval_derivative(&self, k: usize, x: f64) -> f64 {
        let mut p = self.clone();
        for _ in 0..k {
            p = p.derivative();
        }
        p.eval(x)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
}

/// Coefficient function stored as a polynomial in `ρ − ρ⋆`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFunction {
    poly: Poly,
}

impl CoefficientFunction {
    /// Coefficients of powers of `ρ − ρ⋆`, padded with zeros up to `min_degree`.
    pub fn shifted(mut coeffs: Vec<f64>, min_degree: usize) -> Self {
        while coeffs.len() < min_degree + 1 {
            coeffs.push(0.0);
        }
        CoefficientFunction { poly: Poly::new(coeffs) }
    }

    /// Coefficients of powers of `ρ`, re-expanded around `ρ⋆`.
    pub fn monomial(coeffs: &[f64], rho_star: f64, min_degree: usize) -> Self {
        let n = coeffs.len();
        let mut out = vec![0.0; n.max(1)];
        // Σ c_j ρ^j with ρ = ρ⋆ + x: binomial expansion
        for (j, &c) in coeffs.iter().enumerate() {
            let mut binom = 1.0;
            for i in 0..=j {
                if i > 0 {
                    binom = binom * (j + 1 - i) as f64 / i as f64;
                }
                out[i] += c * binom * rho_star.powi((j - i) as i32);
            }
        }
        Self::shifted(out, min_degree)
    }

    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    pub fn degree(&self) -> usize {
        self.poly.degree()
    }

    /// Value at density `rho`.
    pub fn at(&self, rho: f64, rho_star: f64) -> f64 {
        self.poly.eval(rho - rho_star)
    }

    /// `k`-th derivative at density `rho`.
    pub fn derivative_at(&self, k: usize, rho: f64, rho_star: f64) -> f64 {
        self.poly.eval_derivative(k, rho - rho_star)
    }
}

/// Physical model around the constant state `(ρ⋆, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rho_star: f64,
    pub pressure: CoefficientFunction,
    pub kappa: CoefficientFunction,
    pub mu: CoefficientFunction,
    pub nu: CoefficientFunction,
    pub eta: f64,
}

impl ModelParams {
    /// Validates and pads degrees (at least 3 for pressure and capillarity,
    /// at least 2 for the viscosities).
    pub fn new(
        rho_star: f64,
        pressure: CoefficientFunction,
        kappa: CoefficientFunction,
        mu: CoefficientFunction,
        nu: CoefficientFunction,
        eta: f64,
    ) -> Result<Self> {
        if !(rho_star > 0.0 && rho_star.is_finite()) {
            return Err(Error::Invalid(alloc::format!("rho_star = {rho_star} must be positive")));
        }
        if !(eta > 0.0 && eta < rho_star) {
            return Err(Error::Invalid(alloc::format!("eta = {eta} must lie in (0, rho_star)")));
        }
        let pad = |f: CoefficientFunction, m: usize| CoefficientFunction::shifted(f.poly.coeffs, m);
        Ok(ModelParams {
            rho_star,
            pressure: pad(pressure, 3),
            kappa: pad(kappa, 3),
            mu: pad(mu, 2),
            nu: pad(nu, 2),
            eta,
        })
    }

    /// Model with constant κ, μ, ν and a linear pressure law of slope `p_slope`.
    pub fn constant(rho_star: f64, kappa: f64, mu: f64, nu: f64, p_slope: f64) -> Result<Self> {
        ModelParams::new(
            rho_star,
            CoefficientFunction::shifted(vec![p_slope * rho_star, p_slope], 3),
            CoefficientFunction::shifted(vec![kappa], 3),
            CoefficientFunction::shifted(vec![mu], 2),
            CoefficientFunction::shifted(vec![nu], 2),
            0.5 * rho_star,
        )
    }
}

/// Constants of the linearized system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub kappa_star: f64,
    pub mu_star: f64,
    pub nu_star: f64,
    pub p_star: f64,
}

impl DerivedConstants {
    /// `2μ⋆ + ν⋆`.
    pub fn viscosity_sum(&self) -> f64 {
        2.0 * self.mu_star + self.nu_star
    }
}

pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants> {
    let r = params.rho_star;
    let kappa = params.kappa.at(r, r);
    let mu = params.mu.at(r, r);
    let nu = params.nu.at(r, r);
    if !(kappa > 0.0) {
        return Err(Error::H1Violation { quantity: "kappa(rho_star)", value: kappa });
    }
    if !(mu > 0.0) {
        return Err(Error::H1Violation { quantity: "mu(rho_star)", value: mu });
    }
    if !(2.0 * mu + nu > 0.0) {
        return Err(Error::H1Violation { quantity: "2 mu(rho_star) + nu(rho_star)", value: 2.0 * mu + nu });
    }
    Ok(DerivedConstants {
        kappa_star: r * kappa,
        mu_star: mu / r,
        nu_star: nu / r,
        p_star: params.pressure.derivative_at(1, r, r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    RealDistinct,
    ComplexPair,
    Jordan,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::RealDistinct => "RealDistinct",
            Regime::ComplexPair => "ComplexPair",
            Regime::Jordan => "Jordan",
        }
    }
}

/// Default relative tolerance of the Jordan test.
pub const JORDAN_TOL: f64 = 1e-9;

/// Classification of `ᵗA = [[0, κ⋆], [−1, −(2μ⋆+ν⋆)]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureClassification {
    pub regime: Regime,
    pub discriminant: f64,
    pub d: C64,
    pub zeta_plus: C64,
    pub zeta_minus: C64,
    /// Maps `(σ, q)` to the decoupled (or triangular) pair `(y⁺, y⁻)`.
    pub transform: Block,
    pub transform_inv: Block,
    /// Coupling coefficients in their closed form (α₁..α₄ or β₁..β₄).
    pub couplings: [C64; 4],
    /// Couplings produced by the transform itself, `T·P·T⁻¹` row-major,
    /// where `P` carries the pressure term of the (σ, q) subsystem.
    pub effective_couplings: [C64; 4],
    /// Set when the discriminant is within 1e3·tol of the Jordan threshold
    /// but the regime is diagonalizable.
    pub ill_conditioned: bool,
    /// Determinant of the closed-form change of variables quoted alongside
    /// the α coefficients; it vanishes identically.
    pub closed_form_q_det: C64,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Principal 2×2 matrix `B` of the backward (σ, q) system written as
/// `−∂_t Y − Δ(BY) = g + PY`; `B = −ᵗA`.
pub fn principal_matrix(dc: &DerivedConstants) -> Block {
    Block::from_rows(&[&[c(0.0), c(-dc.kappa_star)], &[c(1.0), c(dc.viscosity_sum())]])
}

/// Lower-order matrix `P` of the same system.
pub fn lower_order_matrix(dc: &DerivedConstants) -> Block {
    Block::from_rows(&[&[c(0.0), c(dc.p_star)], &[c(0.0), c(0.0)]])
}

/// `sqrt(x)` with `sqrt(x) = i·sqrt(−x)` for `x ≤ 0`.
pub fn branch_sqrt(x: f64) -> C64 {
    if x > 0.0 {
        c(x.sqrt())
    } else {
        C64::new(0.0, (-x).sqrt())
    }
}

pub fn classify(dc: &DerivedConstants, tol: f64) -> StructureClassification {
    let s = dc.viscosity_sum();
    let kappa = dc.kappa_star;
    let disc = s * s - 4.0 * kappa;
    let scale = 1f64.max(s * s);
    let regime = if disc > tol * scale {
        Regime::RealDistinct
    } else if disc < -tol * scale {
        Regime::ComplexPair
    } else {
        Regime::Jordan
    };
    let ill_conditioned = regime != Regime::Jordan && disc.abs() <= 1e3 * tol * scale;
    let p = lower_order_matrix(dc);
    let (d, zp, zm, transform) = match regime {
        Regime::Jordan => {
            let z = c(s / 2.0);
            let r = Block::from_rows(&[&[c(1.0), c(0.0)], &[c(1.0) / z, c(1.0)]]);
            (c(0.0), z, z, r)
        }
        _ => {
            let d = branch_sqrt(disc);
            let zm = (c(s) + d) * 0.5;
            // the smaller real root is taken from the product to avoid cancellation
            let zp = if d.re > 0.0 { c(kappa) / zm } else { (c(s) - d) * 0.5 };
            let q = Block::from_rows(&[&[c(1.0), zp], &[c(1.0), zm]]);
            (d, zp, zm, q)
        }
    };
    let transform_inv = transform.inverse().expect("transform is invertible by construction");
    let eff = transform.mul(&p).mul(&transform_inv);
    let effective_couplings = [eff.get(0, 0), eff.get(0, 1), eff.get(1, 0), eff.get(1, 1)];
    let mut cls = StructureClassification {
        regime,
        discriminant: disc,
        d,
        zeta_plus: zp,
        zeta_minus: zm,
        transform,
        transform_inv,
        couplings: [c(0.0); 4],
        effective_couplings,
        ill_conditioned,
        closed_form_q_det: closed_form_q_det(zp, kappa, d),
    };
    cls.couplings = coupling_coefficients(&cls, dc);
    cls
}

fn closed_form_q_det(zp: C64, kappa: f64, d: C64) -> C64 {
    if d.norm() == 0.0 {
        return c(0.0);
    }
    // rows (ζ₊/D, −κ⋆/D) and (−ζ₊/D, κ⋆/D)
    let a = zp / d;
    let b = c(-kappa) / d;
    a * (-b) - b * (-a)
}

/// Closed-form couplings: α₁..α₄ for diagonalizable regimes, β₁..β₄ with
/// `ζ = (2μ⋆+ν⋆)/2` in the Jordan regime.
pub fn coupling_coefficients(cls: &StructureClassification, dc: &DerivedConstants) -> [C64; 4] {
    let p = c(dc.p_star);
    let kappa = c(dc.kappa_star);
    match cls.regime {
        Regime::Jordan => {
            let z = c(dc.viscosity_sum() / 2.0);
            [-p / z, p, -p / z, p / z]
        }
        _ => {
            let (zp, zm) = (cls.zeta_plus, cls.zeta_minus);
            let sum = zp + zm;
            [zp * zm * p / (sum * kappa), zm * zm * p / (sum * kappa), zp * p / sum, -(zp * p / sum)]
        }
    }
}

impl StructureClassification {
    /// Principal matrix after the change of variables: diagonal
    /// `diag(ζ₊, ζ₋)` or the triangular `[[ζ, −κ⋆], [0, ζ]]`.
    pub fn transformed_principal(&self, dc: &DerivedConstants) -> Block {
        self.transform.mul(&principal_matrix(dc)).mul(&self.transform_inv)
    }

    /// Eigenvalues of `ᵗA`, which are `−ζ₊` and `−ζ₋`.
    pub fn eigenvalues(&self) -> (C64, C64) {
        (-self.zeta_plus, -self.zeta_minus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dc(s: f64, kappa: f64, p: f64) -> DerivedConstants {
        DerivedConstants { kappa_star: kappa, mu_star: s / 2.0, nu_star: 0.0, p_star: p }
    }

    #[test]
    fn derive_identity_example() {
        let m = ModelParams::constant(1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let d = derive_constants(&m).unwrap();
        assert_eq!((d.kappa_star, d.mu_star, d.nu_star, d.p_star), (1.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn derive_polynomial_example() {
        let r = 2.0;
        let m = ModelParams::new(
            r,
            CoefficientFunction::monomial(&[0.0, 0.0, 1.0], r, 3),
            CoefficientFunction::monomial(&[0.0, 1.0], r, 3),
            CoefficientFunction::monomial(&[0.0, 0.0, 1.0], r, 2),
            CoefficientFunction::monomial(&[0.0], r, 2),
            1.0,
        )
        .unwrap();
        let d = derive_constants(&m).unwrap();
        assert_eq!((d.kappa_star, d.mu_star, d.nu_star, d.p_star), (4.0, 2.0, 0.0, 4.0));
    }

    #[test]
    fn negative_capillarity_violates_h1() {
        let m = ModelParams::constant(1.0, -1.0, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(derive_constants(&m), Err(Error::H1Violation { .. })));
    }

    #[test]
    fn monomial_shift_matches_direct_evaluation() {
        let f = CoefficientFunction::monomial(&[1.0, -2.0, 0.5, 3.0], 1.7, 3);
        for &rho in &[0.3, 1.7, 2.9] {
            let direct = 1.0 - 2.0 * rho + 0.5 * rho * rho + 3.0 * rho * rho * rho;
            assert!((f.at(rho, 1.7) - direct).abs() < 1e-12);
        }
        assert!((f.derivative_at(1, 1.7, 1.7) - (-2.0 + 1.7 + 9.0 * 1.7 * 1.7)).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let cl = classify(&dc(2.0, 0.75, 1.0), JORDAN_TOL);
        assert_eq!(cl.regime, Regime::RealDistinct);
        assert!((cl.d - c(1.0)).norm() < 1e-15);
        assert!((cl.zeta_plus - c(0.5)).norm() < 1e-15);
        assert!((cl.zeta_minus - c(1.5)).norm() < 1e-15);
        assert!((cl.couplings[0] - c(0.5)).norm() < 1e-15);

        let cl = classify(&dc(2.0, 1.0, 1.0), JORDAN_TOL);
        assert_eq!(cl.regime, Regime::Jordan);
        assert_eq!(cl.d, c(0.0));

        let cl = classify(&dc(2.0, 2.0, 1.0), JORDAN_TOL);
        assert_eq!(cl.regime, Regime::ComplexPair);
        assert!((cl.d - C64::new(0.0, 2.0)).norm() < 1e-15);
        assert!((cl.zeta_plus - C64::new(1.0, -1.0)).norm() < 1e-15);
        assert!((cl.zeta_minus - C64::new(1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn jordan_couplings_example() {
        let cl = classify(&dc(2.0, 1.0, 3.0), JORDAN_TOL);
        let want = [c(-3.0), c(3.0), c(-3.0), c(3.0)];
        for (a, b) in cl.couplings.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
        // the transform reproduces the closed form except in the (2,1) slot
        // unless ζ = 1
        for (a, b) in cl.effective_couplings.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn transform_diagonalizes_or_triangularizes() {
        for (s, k) in [(2.0, 0.75), (2.0, 2.0), (2.0, 1.0), (0.3, 5.0)] {
            let d = dc(s, k, 0.7);
            let cl = classify(&d, JORDAN_TOL);
            let t = cl.transformed_principal(&d);
            assert!(t.get(1, 0).norm() < 1e-13);
            if cl.regime != Regime::Jordan {
                assert!(t.get(0, 1).norm() < 1e-13);
                assert!((t.get(0, 0) - cl.zeta_plus).norm() < 1e-13);
                assert!((t.get(1, 1) - cl.zeta_minus).norm() < 1e-13);
            } else {
                assert!((t.get(0, 1) - c(-k)).norm() < 1e-13);
            }
            assert!(cl.closed_form_q_det.norm() < 1e-15);
        }
    }
}
