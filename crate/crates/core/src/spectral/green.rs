use super::operator::{resolvent_diagonal_direct, Resolvent, SchrodingerOp};
use super::point::SpectralPoint;
use super::riccati;
use crate::error::{LabError, Result};
use crate::field::Field;
use crate::grid::TorusGrid;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// How the diagonal Green's function is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GreenMethod {
    /// Diagonal of the dense resolvent plus the analytic out-of-band tail.
    #[default]
    Resolvent,
    /// Periodic Weyl m-functions from the Riccati equation.
    Riccati,
}

/// `g(x; q, k)` at the nodes, with `1/g` and `g'`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGreen {
    point: SpectralPoint,
    values: Vec<Complex64>,
    field: Field,
    reciprocal: Field,
    derivative: Field,
}

/// Out-of-band tail of the free lattice sum, `τ0(k)` and its `k²`-derivative `τ1(k)`.
///
/// `τ0 = coth(kL0)/(2k) - (1/2L0) Σ_band 1/(ξ² + k²)` is exactly the part of the free
/// diagonal Green's function carried by unresolved modes; `τ1` is its response to a
/// constant shift of the potential.
pub fn band_tail(grid: &TorusGrid, point: &SpectralPoint) -> (Complex64, Complex64) {
    let k = point.k();
    let z = point.k2();
    let l0 = grid.half_period();
    let coth = 1.0 / (k * l0).tanh();
    let csch2 = coth * coth - 1.0;
    let full = coth / (2.0 * k);
    let full_prime = (-l0 * csch2 / (2.0 * k) - coth / (2.0 * k * k)) / (2.0 * k);
    let mut band = Complex64::new(0.0, 0.0);
    let mut band_prime = Complex64::new(0.0, 0.0);
    for xi in grid.frequencies() {
        let d = 1.0 / (xi * xi + z);
        band += d;
        band_prime -= d * d;
    }
    let scale = 1.0 / (2.0 * l0);
    (full - band * scale, full_prime - band_prime * scale)
}

impl DiagGreen {
    pub(crate) fn from_nodal(point: SpectralPoint, grid: TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        Self::check(&values)?;
        let field = Field::from_nodal(grid, &values)?;
        let recip: Vec<Complex64> = values.iter().map(|g| 1.0 / g).collect();
        let reciprocal = Field::from_nodal(grid, &recip)?;
        let derivative = field.derivative();
        Ok(Self { point, values, field, reciprocal, derivative })
    }

    pub(crate) fn from_parts(
        point: SpectralPoint,
        values: Vec<Complex64>,
        reciprocal: Field,
        derivative: Field,
    ) -> Result<Self> {
        Self::check(&values)?;
        let field = Field::from_nodal(*reciprocal.grid(), &values)?;
        Ok(Self { point, values, field, reciprocal, derivative })
    }

    fn check(values: &[Complex64]) -> Result<()> {
        for (node, g) in values.iter().enumerate() {
            if !(g.norm() >= 1e-12) {
                return Err(LabError::NonVanishingViolated { node, modulus: g.norm() });
            }
        }
        Ok(())
    }

    pub fn point(&self) -> &SpectralPoint {
        &self.point
    }

    pub fn grid(&self) -> &TorusGrid {
        self.field.grid()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn reciprocal(&self) -> &Field {
        &self.reciprocal
    }

    pub fn derivative(&self) -> &Field {
        &self.derivative
    }
}

/// Diagonal Green's function from a dense resolvent: `R_jj / h + τ0 + τ1·q(x_j)`.
pub fn diag_green(r: &Resolvent) -> Result<DiagGreen> {
    let grid = *r.grid();
    let h = grid.spacing();
    let (t0, t1) = band_tail(&grid, r.point());
    let values = (0..grid.len())
        .map(|j| r.nodal()[(j, j)] / h + t0 + t1 * r.potential_nodal()[j])
        .collect();
    DiagGreen::from_nodal(*r.point(), grid, values)
}

/// Same as [`diag_green`] from an eigendecomposition, without forming the resolvent.
pub fn diag_green_from_op(op: &SchrodingerOp, point: &SpectralPoint) -> Result<DiagGreen> {
    let grid = *op.grid();
    let h = grid.spacing();
    let (t0, t1) = band_tail(&grid, point);
    let d = op.resolvent_diagonal(point)?;
    let values = d
        .iter()
        .zip(op.potential_nodal())
        .map(|(r, q)| r / h + t0 + t1 * q)
        .collect();
    DiagGreen::from_nodal(*point, grid, values)
}

pub fn diag_green_with(q: &Field, point: &SpectralPoint, method: GreenMethod) -> Result<DiagGreen> {
    match method {
        GreenMethod::Resolvent => {
            let grid = *q.grid();
            let h = grid.spacing();
            let (t0, t1) = band_tail(&grid, point);
            let d = resolvent_diagonal_direct(q, point)?;
            let values = d.iter().zip(q.nodal_real()).map(|(r, qj)| r / h + t0 + t1 * qj).collect();
            DiagGreen::from_nodal(*point, grid, values)
        }
        GreenMethod::Riccati => riccati::riccati_green(q, point),
    }
}

/// Directional derivative of [`diag_green`] along `f`: `-diag(R f R)/h + τ1·f`.
pub fn green_response(r: &Resolvent, f: &Field) -> Result<Vec<Complex64>> {
    f.check_grid(r.potential())?;
    let grid = *r.grid();
    let n = grid.len();
    let h = grid.spacing();
    let fv = f.nodal();
    let (_, t1) = band_tail(&grid, r.point());
    let m = r.nodal();
    Ok((0..n)
        .map(|j| {
            let s: Complex64 = (0..n).map(|l| m[(j, l)] * fv[l] * m[(l, j)]).sum();
            -s / h + t1 * fv[j]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSampler;
    use std::f64::consts::PI;

    fn k2pi8() -> SpectralPoint {
        SpectralPoint::from_polar(2.0, PI / 8.0).unwrap()
    }

    #[test]
    fn free_green_matches_continuum() {
        let g = TorusGrid::new(8.0, 256).unwrap();
        let p = k2pi8();
        let r = SchrodingerOp::new(&Field::zeros(g)).unwrap().resolvent(&p).unwrap();
        let green = diag_green(&r).unwrap();
        let target = 1.0 / (2.0 * p.k());
        assert!((target - Complex64::new(0.23097, -0.09567)).norm() < 1e-5);
        for v in green.values() {
            assert!((v - target).norm() < 1e-5);
        }
    }

    #[test]
    fn band_sum_matches_lattice_closed_form() {
        // Without the tail the lattice sum is an independent check of the closed form.
        let g = TorusGrid::new(2.0, 64).unwrap();
        let p = SpectralPoint::from_polar(1.3, 0.2).unwrap();
        let terms: Complex64 = (-4_000_000i64..4_000_000)
            .map(|n| 1.0 / (g.frequency(n).powi(2) + p.k2()))
            .sum::<Complex64>()
            / 4.0;
        let coth = 1.0 / (p.k() * 2.0).tanh();
        assert!((terms - coth / (2.0 * p.k())).norm() < 1e-6);
    }

    #[test]
    fn constant_potential_green() {
        let g = TorusGrid::new(8.0, 256).unwrap();
        let p = k2pi8();
        let green = diag_green_with(&Field::constant(g, 3.0), &p, GreenMethod::Resolvent).unwrap();
        let target = 1.0 / (2.0 * (p.k2() + 3.0).sqrt());
        assert!(target.re > 0.0);
        for v in green.values() {
            assert!((v - target).norm() < 1e-5);
        }
    }

    #[test]
    fn sign_invariants_on_white_noise() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let p = SpectralPoint::from_polar(4.0, PI / 8.0).unwrap();
        for i in 0..3 {
            let q = NoiseSampler::new(g, 71).sample(i);
            let op = SchrodingerOp::new(&q).unwrap();
            let green = diag_green_from_op(&op, &p).unwrap();
            for v in green.values() {
                assert!(v.im < 0.0);
                if p.energy() > -op.ground_energy() {
                    assert!(v.re > 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_and_eigen_paths_agree() {
        let g = TorusGrid::new(4.0, 64).unwrap();
        let q = NoiseSampler::new(g, 3).sample(2);
        let p = SpectralPoint::from_polar(3.0, 0.35).unwrap();
        let op = SchrodingerOp::new(&q).unwrap();
        let a = diag_green(&op.resolvent(&p).unwrap()).unwrap();
        let b = diag_green_from_op(&op, &p).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn first_order_response() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let p = SpectralPoint::from_polar(3.0, PI / 8.0).unwrap();
        let q = &NoiseSampler::new(g, 12).with_cutoff(12).sample(0) * 0.5;
        let f = NoiseSampler::new(g, 13).with_cutoff(12).sample(0);
        let r = SchrodingerOp::new(&q).unwrap().resolvent(&p).unwrap();
        let base = diag_green(&r).unwrap();
        let lin = green_response(&r, &f).unwrap();
        let err_at = |eps: f64| {
            let qe = &q + &(&f * eps);
            let ge = diag_green_with(&qe, &p, GreenMethod::Resolvent).unwrap();
            ge.values()
                .iter()
                .zip(base.values())
                .zip(&lin)
                .map(|((a, b), l)| (a - b - l * eps).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err_at(1e-4), err_at(5e-5));
        assert!(e1 < 1e-7, "{e1}");
        // Quadratic remainder: halving ε quarters the error.
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{}", e1 / e2);
    }

    #[test]
    fn matches_the_riccati_route() {
        let g = TorusGrid::new(8.0, 256).unwrap();
        let q = Field::from_fn(g, |x| 2.0 * (-x * x).exp());
        let p = SpectralPoint::from_polar(4.0, PI / 8.0).unwrap();
        let a = diag_green_with(&q, &p, GreenMethod::Resolvent).unwrap();
        let b = diag_green_with(&q, &p, GreenMethod::Riccati).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-8, "{x} {y}");
        }
    }
}
