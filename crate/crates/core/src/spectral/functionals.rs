use super::green::{diag_green_with, DiagGreen, GreenMethod};
use super::point::SpectralPoint;
use crate::error::{invalid, Result};
use crate::field::Field;
use num_complex::Complex64;

/// Multiplier `2k/(ξ² + 4k²)`: convolution with `½e^{-2k|x|}`, periodized.
pub fn exp_kernel_symbol(k: Complex64) -> impl Fn(f64) -> Complex64 {
    move |xi| 2.0 * k / (xi * xi + 4.0 * k * k)
}

/// `ρ = k - 1/(2g) + m_k q`.
pub fn rho_field(q: &Field, point: &SpectralPoint, green: &DiagGreen) -> Result<Field> {
    q.check_grid(green.field())?;
    let k = point.k();
    let conv = q.multiplier(exp_kernel_symbol(k), false);
    let half_recip = green.reciprocal() * 0.5;
    Ok(&(&Field::complex_constant(*q.grid(), k) - &half_recip) + &conv)
}

/// `α = ∫ρ` from a precomputed Green's function.
pub fn alpha_from_green(q: &Field, point: &SpectralPoint, green: &DiagGreen) -> Result<Complex64> {
    q.check_grid(green.field())?;
    let k = point.k();
    let recip = green.reciprocal().integral();
    Ok(k * q.grid().period() - 0.5 * recip + q.integral() / (2.0 * k))
}

pub fn alpha_with(q: &Field, point: &SpectralPoint, method: GreenMethod) -> Result<Complex64> {
    let green = diag_green_with(q, point, method)?;
    alpha_from_green(q, point, &green)
}

/// `α(q, k)` through the Riccati route, which resolves every `|k|` for smooth `q`.
pub fn alpha(q: &Field, point: &SpectralPoint) -> Result<Complex64> {
    alpha_with(q, point, GreenMethod::Riccati)
}

/// `Re{-16k⁵α + 2k²∫q²}` from a known `α`.
pub fn hamiltonian_from_alpha(q: &Field, point: &SpectralPoint, alpha: Complex64) -> f64 {
    let k = point.k();
    let q2 = q.pairing(q).expect("same grid").re;
    (-16.0 * k.powi(5) * alpha + 2.0 * k * k * q2).re
}

pub fn hamiltonian_hk_with(q: &Field, point: &SpectralPoint, method: GreenMethod) -> Result<f64> {
    Ok(hamiltonian_from_alpha(q, point, alpha_with(q, point, method)?))
}

pub fn hamiltonian_hk(q: &Field, point: &SpectralPoint) -> Result<f64> {
    hamiltonian_hk_with(q, point, GreenMethod::Riccati)
}

/// `q = a' + a² + 1/(4g²) - k²` with `a = g'/(2g)`.
pub fn recover_potential(green: &DiagGreen, point: &SpectralPoint) -> Result<Field> {
    let grid = *green.grid();
    let a_nodal: Vec<Complex64> = green
        .derivative()
        .nodal()
        .iter()
        .zip(green.values())
        .map(|(d, g)| d / (2.0 * g))
        .collect();
    let a = Field::from_nodal(grid, &a_nodal)?;
    let half_recip = green.reciprocal() * 0.5;
    let total = &(&(&a.derivative() + &a.dealiased_product(&a)?) + &half_recip.dealiased_product(&half_recip)?)
        - &Field::complex_constant(grid, point.k2());
    let real = total.real_part();
    let imag = total.imag_part().l2_norm();
    if imag > 1e-6 * real.l2_norm().max(1e-300) && imag > 1e-12 {
        return invalid(format!(
            "recovered potential has relative imaginary part {:e}",
            imag / real.l2_norm().max(1e-300)
        ));
    }
    Ok(real)
}

/// Mass, momentum and KdV energy: `∫q`, `½∫q²`, `∫½(q')² + q³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conserved {
    pub mass: f64,
    pub momentum: f64,
    pub kdv_energy: f64,
}

pub fn conserved_basics(q: &Field) -> Conserved {
    let g = *q.grid();
    let mass = q.integral().re;
    let momentum = 0.5 * q.l2_norm().powi(2);
    let kinetic: f64 = q
        .coeffs()
        .iter()
        .enumerate()
        .map(|(s, c)| c.norm_sqr() * g.frequency_of_slot(s).powi(2))
        .sum::<f64>()
        * 0.5;
    let sq = q.dealiased_product(q).expect("same grid");
    let cubic = sq.pairing(q).expect("same grid").re;
    Conserved { mass, momentum, kdv_energy: kinetic + cubic }
}
