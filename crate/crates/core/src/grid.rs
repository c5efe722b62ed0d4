use crate::error::{invalid, Result};
use std::f64::consts::PI;

/// Uniform discretization of the circle of circumference `2·L0` with `N` nodes.
///
/// Nodes are `x_j = -L0 + j·h`, `h = 2L0/N`. Modes are stored in FFT slot order:
/// slot `s < N/2` holds mode `s`, slot `s ≥ N/2` holds mode `s - N`, so slot `N/2`
/// is the unpaired mode `-N/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    half_period: f64,
    modes: usize,
}

impl TorusGrid {
    pub fn new(half_period: f64, modes: usize) -> Result<Self> {
        if !(half_period.is_finite() && half_period > 0.0) {
            return invalid(format!("half-period must be positive, got {half_period}"));
        }
        if modes < 8 || modes % 2 != 0 {
            return invalid(format!("mode count must be even and at least 8, got {modes}"));
        }
        Ok(Self { half_period, modes })
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    pub fn period(&self) -> f64 {
        2.0 * self.half_period
    }

    pub fn len(&self) -> usize {
        self.modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.period() / self.modes as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_period + j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.modes).map(|j| self.node(j)).collect()
    }

    pub fn nyquist_slot(&self) -> usize {
        self.modes / 2
    }

    pub fn mode_of_slot(&self, slot: usize) -> i64 {
        let n = self.modes as i64;
        let s = slot as i64;
        if s < n / 2 {
            s
        } else {
            s - n
        }
    }

    /// Slot of mode `n`, reduced modulo `N`.
    pub fn slot_of_mode(&self, mode: i64) -> usize {
        mode.rem_euclid(self.modes as i64) as usize
    }

    /// Slot holding mode `-n` for the mode stored at `slot` (the Nyquist slot maps to itself).
    pub fn mirror_slot(&self, slot: usize) -> usize {
        (self.modes - slot) % self.modes
    }

    pub fn frequency(&self, mode: i64) -> f64 {
        PI * mode as f64 / self.half_period
    }

    pub fn frequency_of_slot(&self, slot: usize) -> f64 {
        self.frequency(self.mode_of_slot(slot))
    }

    /// Frequencies in slot order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.modes).map(|s| self.frequency_of_slot(s)).collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequency(self.modes as i64 / 2)
    }

    /// Torus distance between two nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let d = (a as i64 - b as i64).unsigned_abs() as usize % self.modes;
        d.min(self.modes - d) as f64 * self.spacing()
    }

    /// Same grid up to rounding in the half-period.
    pub fn compatible(&self, other: &TorusGrid) -> bool {
        self.modes == other.modes
            && (self.half_period - other.half_period).abs() <= 1e-12 * self.half_period
    }
}
