use crate::error::{invalid, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

pub const DEFAULT_C_STRICT: f64 = 1.0;

/// Complex spectral parameter `k` with the derived quantities `κ = |k|`, `E = Re k²`, `σ = Im k²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    k: Complex64,
    c_strict: f64,
}

impl SpectralPoint {
    pub fn new(k: Complex64) -> Result<Self> {
        if !(k.norm() > 0.0 && k.re.is_finite() && k.im.is_finite()) {
            return invalid(format!("spectral parameter must be finite and nonzero, got {k}"));
        }
        Ok(Self { k, c_strict: DEFAULT_C_STRICT })
    }

    pub fn from_polar(modulus: f64, arg: f64) -> Result<Self> {
        Self::new(Complex64::from_polar(modulus, arg))
    }

    pub fn real(kappa: f64) -> Result<Self> {
        Self::new(Complex64::new(kappa, 0.0))
    }

    pub fn with_c_strict(mut self, c: f64) -> Self {
        self.c_strict = c;
        self
    }

    pub fn k(&self) -> Complex64 {
        self.k
    }

    pub fn k2(&self) -> Complex64 {
        self.k * self.k
    }

    pub fn kappa(&self) -> f64 {
        self.k.norm()
    }

    pub fn energy(&self) -> f64 {
        self.k2().re
    }

    pub fn sigma(&self) -> f64 {
        self.k2().im
    }

    pub fn arg(&self) -> f64 {
        self.k.arg()
    }

    pub fn c_strict(&self) -> f64 {
        self.c_strict
    }

    pub fn is_admissible(&self) -> bool {
        let a = self.arg();
        (0.0..PI / 4.0).contains(&a)
    }

    pub fn is_strictly_admissible(&self) -> bool {
        self.sigma() >= self.c_strict && (PI / 8.0 - self.arg()).abs() < PI / 16.0
    }

    pub fn conj(&self) -> Self {
        Self { k: self.k.conj(), c_strict: self.c_strict }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { k: self.k * factor, c_strict: self.c_strict }
    }

    pub(crate) fn require_admissible(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            invalid(format!("k = {} is not admissible (need 0 <= arg k < pi/4)", self.k))
        }
    }

    pub(crate) fn require_strict(&self) -> Result<()> {
        if self.is_strictly_admissible() {
            Ok(())
        } else {
            invalid(format!("k = {} is not strictly admissible", self.k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let p = SpectralPoint::from_polar(2.0, PI / 8.0).unwrap();
        assert!((p.kappa() - 2.0).abs() < 1e-15);
        assert!((p.energy() - 4.0 * (PI / 4.0).cos()).abs() < 1e-14);
        assert!((p.sigma() - 4.0 * (PI / 4.0).sin()).abs() < 1e-14);
        assert!(p.is_admissible() && p.is_strictly_admissible());
    }

    #[test]
    fn admissibility_flags() {
        assert!(SpectralPoint::real(3.0).unwrap().is_admissible());
        assert!(!SpectralPoint::real(3.0).unwrap().is_strictly_admissible());
        assert!(!SpectralPoint::from_polar(1.0, PI / 4.0).unwrap().is_admissible());
        assert!(!SpectralPoint::from_polar(1.0, -0.1).unwrap().is_admissible());
        // sigma = sin(pi/4)/4 is below the default constant
        assert!(!SpectralPoint::from_polar(0.5, PI / 8.0).unwrap().is_strictly_admissible());
        assert!(SpectralPoint::from_polar(0.5, PI / 8.0).unwrap().with_c_strict(0.1).is_strictly_admissible());
        assert!(SpectralPoint::new(Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn strict_implies_admissible() {
        for i in 0..200 {
            let arg = -0.5 + i as f64 * 0.01;
            for m in [0.5, 1.0, 2.0, 8.0] {
                let p = SpectralPoint::from_polar(m, arg).unwrap();
                assert!(!p.is_strictly_admissible() || p.is_admissible());
            }
        }
    }
}
