//! Diagonal Green's function of the periodic line operator via Weyl m-functions.
//!
//! The Weyl solutions `ψ±` of `-ψ'' + qψ = -k²ψ` decaying at `±∞` have periodic
//! logarithmic derivatives `m± = ∓k + μ±`, which solve `m' + m² = q + k²`, and
//! `g = 1/(m₋ - m₊)`.

use super::green::DiagGreen;
use super::point::SpectralPoint;
use crate::error::{invalid, LabError, Result};
use crate::field::Field;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

const PICARD_MAX: usize = 400;
const NEWTON_MAX: usize = 40;
const TOL: f64 = 1e-14;

/// The periodic parts `μ₋`, `μ₊` of the two Weyl m-functions.
#[derive(Debug, Clone)]
pub struct WeylPair {
    pub minus: Field,
    pub plus: Field,
}

/// `μ' + 2sk·μ + μ² - q` for branch `s = ±1`.
fn residual(mu: &Field, q: &Field, sk: Complex64) -> Result<Field> {
    let sq = mu.dealiased_product(mu)?;
    let lin = mu.multiplier(|xi| Complex64::new(0.0, xi) + 2.0 * sk, true);
    let mut r = &(&lin + &sq) - q;
    r = r.multiplier(|_| Complex64::new(1.0, 0.0), true);
    Ok(r)
}

fn picard(q: &Field, sk: Complex64) -> Result<(Field, bool)> {
    let mut mu = Field::zeros(*q.grid());
    let mut prev_step = f64::INFINITY;
    for _ in 0..PICARD_MAX {
        let src = q - &mu.dealiased_product(&mu)?;
        let next = src.multiplier(|xi| 1.0 / (Complex64::new(0.0, xi) + 2.0 * sk), true);
        let step = (&next - &mu).l2_norm();
        mu = next;
        if step <= TOL * (1.0 + mu.l2_norm()) {
            return Ok((mu, true));
        }
        if !step.is_finite() || (step > prev_step && step > 1.0) {
            return Ok((Field::zeros(*q.grid()), false));
        }
        prev_step = step;
    }
    Ok((mu, false))
}

/// Newton iteration on the Galerkin-truncated equation, dense Jacobian.
fn newton(q: &Field, sk: Complex64, start: Field) -> Result<Field> {
    let g = *q.grid();
    let n = g.len();
    let ny = g.nyquist_slot();
    let scale = 1.0 / g.period().sqrt();
    let unknowns: Vec<usize> = (0..n).filter(|&s| s != ny).collect();
    let mut mu = start;
    let q_norm = q.l2_norm().max(1.0);
    let mut res_norm = f64::INFINITY;
    for _ in 0..NEWTON_MAX {
        let r = residual(&mu, q, sk)?;
        res_norm = r.l2_norm();
        if res_norm <= 1e-13 * q_norm {
            return Ok(mu);
        }
        let m = unknowns.len();
        let jac = DMatrix::from_fn(m, m, |a, b| {
            let (sa, sb) = (unknowns[a], unknowns[b]);
            let diff = g.mode_of_slot(sa) - g.mode_of_slot(sb);
            let mut v = if diff.unsigned_abs() < (n / 2) as u64 {
                mu.coeffs()[g.slot_of_mode(diff)] * (2.0 * scale)
            } else {
                Complex64::new(0.0, 0.0)
            };
            if a == b {
                v += Complex64::new(0.0, g.frequency_of_slot(sa)) + 2.0 * sk;
            }
            v
        });
        let rhs = DVector::from_iterator(m, unknowns.iter().map(|&s| -r.coeffs()[s]));
        let delta = jac.lu().solve(&rhs).ok_or(LabError::RiccatiDiverged { residual: res_norm })?;
        let mut c = mu.coeffs().to_vec();
        for (i, &s) in unknowns.iter().enumerate() {
            c[s] += delta[i];
        }
        mu = Field::from_coeffs(g, c, false)?;
    }
    Err(LabError::RiccatiDiverged { residual: res_norm })
}

fn solve_branch(q: &Field, sk: Complex64) -> Result<Field> {
    let (mu, converged) = picard(q, sk)?;
    if converged {
        return Ok(mu);
    }
    newton(q, sk, mu)
}

pub fn solve_weyl(q: &Field, point: &SpectralPoint) -> Result<WeylPair> {
    if !q.is_real() {
        return invalid("the potential must be a real field");
    }
    let k = point.k();
    if !(k.re > 0.0) {
        return invalid(format!("Weyl branches need Re k > 0, got k = {k}"));
    }
    let minus = solve_branch(q, k)?;
    let plus = solve_branch(q, -k)?;
    // The two branches must carry Floquet exponents of opposite sign.
    let mean = |f: &Field| f.coeffs()[0] / q.grid().period().sqrt();
    let (em, ep) = (k + mean(&minus), -k + mean(&plus));
    if !(em.re > 0.0 && ep.re < 0.0) {
        return Err(LabError::RiccatiDiverged { residual: f64::NAN });
    }
    Ok(WeylPair { minus, plus })
}

pub fn riccati_green(q: &Field, point: &SpectralPoint) -> Result<DiagGreen> {
    let pair = solve_weyl(q, point)?;
    let k = point.k();
    let g = *q.grid();
    let reciprocal = &(&pair.minus - &pair.plus) + &Field::complex_constant(g, 2.0 * k);
    let values: Vec<Complex64> = reciprocal.nodal().into_iter().map(|r| 1.0 / r).collect();
    let sum = (&pair.minus + &pair.plus).nodal();
    let d: Vec<Complex64> = values.iter().zip(sum).map(|(g, s)| g * s).collect();
    let derivative = Field::from_nodal(g, &d)?;
    DiagGreen::from_parts(*point, values, reciprocal, derivative)
}
