use crate::error::{invalid, LabError, Result};
use crate::fft;
use crate::grid::TorusGrid;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::{Add, Mul, Neg, Sub};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Spectral weight `(4κ² + ξ²)^s` of the `H^s_κ` norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevWeight {
    pub exponent: f64,
    pub kappa: f64,
}

impl SobolevWeight {
    pub fn new(exponent: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return invalid(format!("kappa must be positive, got {kappa}"));
        }
        Ok(Self { exponent, kappa })
    }

    pub fn at(&self, xi: f64) -> f64 {
        (4.0 * self.kappa * self.kappa + xi * xi).powf(self.exponent)
    }

    pub fn norm(&self, f: &Field) -> f64 {
        f.coeffs
            .iter()
            .enumerate()
            .map(|(s, c)| c.norm_sqr() * self.at(f.grid.frequency_of_slot(s)))
            .sum::<f64>()
            .sqrt()
    }
}

/// Periodic field stored as coefficients against `e_n(x) = exp(iξ_n x)/√(2L0)`, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
    real: bool,
}

fn sign(mode: i64) -> f64 {
    if mode.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn mode_of(slot: usize, len: usize) -> i64 {
    if slot < len / 2 {
        slot as i64
    } else {
        slot as i64 - len as i64
    }
}

/// Slot-ordered coefficients (any even length) to nodal values on the matching uniform grid.
fn coeffs_to_nodal(half_period: f64, coeffs: &[Complex64]) -> Vec<Complex64> {
    let len = coeffs.len();
    let scale = 1.0 / (2.0 * half_period).sqrt();
    let mut buf: Vec<Complex64> = coeffs
        .iter()
        .enumerate()
        .map(|(s, c)| c * (sign(mode_of(s, len)) * scale))
        .collect();
    fft::inverse(&mut buf);
    buf
}

fn nodal_to_coeffs(half_period: f64, values: &[Complex64]) -> Vec<Complex64> {
    let len = values.len();
    let scale = (2.0 * half_period).sqrt() / len as f64;
    let mut buf = values.to_vec();
    fft::forward(&mut buf);
    for (s, c) in buf.iter_mut().enumerate() {
        *c *= sign(mode_of(s, len)) * scale;
    }
    buf
}

impl Field {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, coeffs: vec![Complex64::new(0.0, 0.0); grid.len()], real: true }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex64::new(value * grid.period().sqrt(), 0.0);
        f
    }

    pub fn complex_constant(grid: TorusGrid, value: Complex64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = value * grid.period().sqrt();
        f.real = value.im == 0.0;
        f
    }

    /// Field from slot-ordered coefficients. Real-flagged input is projected onto Hermitian symmetry.
    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex64>, real: bool) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return invalid(format!("expected {} coefficients, got {}", grid.len(), coeffs.len()));
        }
        let f = Self { grid, coeffs, real: false };
        Ok(if real { f.real_part() } else { f })
    }

    /// Single orthonormal mode `e_n`.
    pub fn basis(grid: TorusGrid, mode: i64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[grid.slot_of_mode(mode)] = Complex64::new(1.0, 0.0);
        f.real = mode == 0;
        f
    }

    pub fn from_nodal_real(grid: TorusGrid, values: &[f64]) -> Result<Self> {
        let v: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Ok(Self::from_nodal(grid, &v)?.real_part())
    }

    pub fn from_nodal(grid: TorusGrid, values: &[Complex64]) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!("expected {} nodal values, got {}", grid.len(), values.len()));
        }
        Ok(Self { grid, coeffs: nodal_to_coeffs(grid.half_period(), values), real: false })
    }

    /// Real field sampled from `f` at the nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let v: Vec<f64> = grid.nodes().into_iter().map(f).collect();
        Self::from_nodal_real(grid, &v).expect("length matches grid")
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, mode: i64) -> Complex64 {
        self.coeffs[self.grid.slot_of_mode(mode)]
    }

    pub fn nodal(&self) -> Vec<Complex64> {
        coeffs_to_nodal(self.grid.half_period(), &self.coeffs)
    }

    pub fn nodal_real(&self) -> Vec<f64> {
        self.nodal().into_iter().map(|z| z.re).collect()
    }

    /// Projection onto real fields: `Re f`.
    pub fn real_part(&self) -> Self {
        let g = self.grid;
        let coeffs = (0..g.len())
            .map(|s| 0.5 * (self.coeffs[s] + self.coeffs[g.mirror_slot(s)].conj()))
            .collect();
        Self { grid: g, coeffs, real: true }
    }

    /// `Im f` as a real field.
    pub fn imag_part(&self) -> Self {
        (self * Complex64::new(0.0, -1.0)).real_part()
    }

    pub fn conj(&self) -> Self {
        let g = self.grid;
        let coeffs = (0..g.len()).map(|s| self.coeffs[g.mirror_slot(s)].conj()).collect();
        Self { grid: g, coeffs, real: self.real }
    }

    /// Pointwise map of nodal values; the result is complex-flagged.
    pub fn map_nodal(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let v: Vec<Complex64> = self.nodal().into_iter().map(f).collect();
        Self::from_nodal(self.grid, &v).expect("length matches grid")
    }

    /// Fourier multiplier `c_n ↦ m(ξ_n)·c_n`; the Nyquist slot is zeroed when `drop_nyquist`.
    pub fn multiplier(&self, symbol: impl Fn(f64) -> Complex64, drop_nyquist: bool) -> Self {
        let g = self.grid;
        let mut coeffs: Vec<Complex64> =
            self.coeffs.iter().enumerate().map(|(s, c)| c * symbol(g.frequency_of_slot(s))).collect();
        if drop_nyquist {
            coeffs[g.nyquist_slot()] = Complex64::new(0.0, 0.0);
        }
        Self { grid: g, coeffs, real: false }
    }

    /// Same as [`Field::multiplier`] for symbols with `m(-ξ) = conj m(ξ)`, keeping the reality flag.
    pub fn real_multiplier(&self, symbol: impl Fn(f64) -> Complex64) -> Self {
        let mut out = self.multiplier(symbol, true);
        if self.real {
            out = out.real_part();
        }
        out
    }

    pub fn derivative(&self) -> Self {
        let g = self.grid;
        let mut coeffs: Vec<Complex64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(s, c)| c * I * g.frequency_of_slot(s))
            .collect();
        coeffs[g.nyquist_slot()] = Complex64::new(0.0, 0.0);
        Self { grid: g, coeffs, real: self.real }
    }

    /// Mean-free antiderivative; the mean and the Nyquist mode are dropped.
    pub fn antiderivative(&self) -> Self {
        let g = self.grid;
        let mut coeffs: Vec<Complex64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(s, c)| {
                let xi = g.frequency_of_slot(s);
                if s == 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    c / (I * xi)
                }
            })
            .collect();
        coeffs[g.nyquist_slot()] = Complex64::new(0.0, 0.0);
        Self { grid: g, coeffs, real: self.real }
    }

    /// `f(· + shift)`, exact for every resolved mode.
    pub fn translate(&self, shift: f64) -> Self {
        let g = self.grid;
        let ny = g.nyquist_slot();
        let mut out = self.multiplier(|xi| Complex64::from_polar(1.0, xi * shift), false);
        if self.real {
            // The unpaired mode cannot be shifted by a non-node amount and stay real.
            let c = self.coeffs[ny];
            out.coeffs[ny] = c * (g.frequency_of_slot(ny) * shift).cos();
            out = out.real_part();
        }
        out
    }

    pub fn sobolev_norm(&self, exponent: f64, kappa: f64) -> f64 {
        SobolevWeight { exponent, kappa }.norm(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.nodal().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Period integral `∫ f`.
    pub fn integral(&self) -> Complex64 {
        self.coeffs[0] * self.grid.period().sqrt()
    }

    /// Bilinear pairing `∫ f g = Σ_n c_f(-n) c_g(n)`.
    pub fn pairing(&self, other: &Field) -> Result<Complex64> {
        self.check_grid(other)?;
        let g = self.grid;
        Ok((0..g.len()).map(|s| self.coeffs[g.mirror_slot(s)] * other.coeffs[s]).sum())
    }

    /// Sesquilinear inner product `∫ conj(f) g`.
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.check_grid(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum())
    }

    /// Product evaluated on a 3/2-padded grid and truncated back, with the Nyquist mode zeroed.
    pub fn dealiased_product(&self, other: &Field) -> Result<Field> {
        self.check_grid(other)?;
        let g = self.grid;
        let n = g.len();
        let m = 3 * n / 2;
        let pad = |f: &Field| {
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for s in 0..n {
                let mode = g.mode_of_slot(s);
                if s == g.nyquist_slot() {
                    let half = f.coeffs[s] * 0.5;
                    buf[(n / 2) % m] += half;
                    buf[m - n / 2] += half;
                } else {
                    buf[mode.rem_euclid(m as i64) as usize] = f.coeffs[s];
                }
            }
            coeffs_to_nodal(g.half_period(), &buf)
        };
        let a = pad(self);
        let b = if std::ptr::eq(self, other) { a.clone() } else { pad(other) };
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let fine = nodal_to_coeffs(g.half_period(), &prod);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for (s, c) in coeffs.iter_mut().enumerate() {
            if s != g.nyquist_slot() {
                *c = fine[g.mode_of_slot(s).rem_euclid(m as i64) as usize];
            }
        }
        let out = Field { grid: g, coeffs, real: false };
        Ok(if self.real && other.real { out.real_part() } else { out })
    }

    /// Largest coefficient modulus among `|n| ≥ 3N/8`, relative to the largest overall.
    pub fn spectral_tail(&self) -> f64 {
        let g = self.grid;
        let top = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if top == 0.0 {
            return 0.0;
        }
        let tail = (0..g.len())
            .filter(|&s| 4 * g.mode_of_slot(s).unsigned_abs() as usize >= 3 * g.len() / 2)
            .map(|s| self.coeffs[s].norm())
            .fold(0.0, f64::max);
        tail / top
    }

    pub fn check_grid(&self, other: &Field) -> Result<()> {
        if self.grid.compatible(&other.grid) {
            Ok(())
        } else {
            Err(LabError::GridMismatch)
        }
    }

    pub fn to_json(&self) -> FieldJson {
        let g = self.grid;
        let half = g.len() as i64 / 2;
        FieldJson {
            half_period: g.half_period(),
            modes: g.len(),
            real: self.real,
            coeffs: (-half..half).map(|n| {
                let c = self.coeff(n);
                [c.re, c.im]
            })
            .collect(),
        }
    }

    pub fn from_json(json: &FieldJson) -> Result<Self> {
        let grid = TorusGrid::new(json.half_period, json.modes)?;
        if json.coeffs.len() != grid.len() {
            return invalid("coefficient count does not match N");
        }
        let half = grid.len() as i64 / 2;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (n, c) in (-half..half).zip(&json.coeffs) {
            coeffs[grid.slot_of_mode(n)] = Complex64::new(c[0], c[1]);
        }
        Ok(Self { grid, coeffs, real: json.real })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(s)?)
    }

    /// Nodal values as CSV with header `x,re,im`.
    pub fn write_nodal_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "x,re,im")?;
        for (x, v) in self.grid.nodes().into_iter().zip(self.nodal()) {
            writeln!(out, "{x},{},{}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// Serialized field: coefficients listed by mode from `-N/2` to `N/2 - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldJson {
    #[serde(rename = "L0")]
    pub half_period: f64,
    #[serde(rename = "N")]
    pub modes: usize,
    pub real: bool,
    pub coeffs: Vec<[f64; 2]>,
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert!(self.grid.compatible(&rhs.grid), "grid mismatch");
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect();
        Field { grid: self.grid, coeffs, real: self.real && rhs.real }
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert!(self.grid.compatible(&rhs.grid), "grid mismatch");
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect();
        Field { grid: self.grid, coeffs, real: self.real && rhs.real }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        Field { grid: self.grid, coeffs: self.coeffs.iter().map(|c| c * rhs).collect(), real: self.real }
    }
}

impl Mul<Complex64> for &Field {
    type Output = Field;
    fn mul(self, rhs: Complex64) -> Field {
        Field {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * rhs).collect(),
            real: self.real && rhs.im == 0.0,
        }
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self * -1.0
    }
}
