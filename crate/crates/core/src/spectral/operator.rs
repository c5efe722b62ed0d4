use super::point::SpectralPoint;
use crate::error::{invalid, LabError, Result};
use crate::fft;
use crate::field::Field;
use crate::grid::TorusGrid;
use nalgebra::{DMatrix, DVector, SymmetricEigen, SymmetricTridiagonal};
use num_complex::Complex64;
use std::io::{Read, Write};

pub const SPECTRUM_GUARD: f64 = 1e-8;

/// `H = -∂² + q` on the grid, with its eigendecomposition.
///
/// The matrix is held in the nodal orthonormal basis `√h·δ_{x_j}`, where it is real
/// symmetric: the circulant `-D²` plus `diag(q(x_j))`. In the Fourier basis the same
/// operator reads `diag(ξ²) + V` with `V_{mn} = q̂((m - n) mod N)/√(2L0)`.
#[derive(Debug, Clone)]
pub struct SchrodingerOp {
    grid: TorusGrid,
    potential: Field,
    potential_nodal: Vec<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

/// First column of the circulant `-D²` in the nodal orthonormal basis.
pub(crate) fn laplacian_column(grid: &TorusGrid) -> Vec<f64> {
    let n = grid.len();
    let mut buf: Vec<Complex64> =
        grid.frequencies().iter().map(|xi| Complex64::new(xi * xi / n as f64, 0.0)).collect();
    fft::inverse(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

pub(crate) fn nodal_matrix(grid: &TorusGrid, potential_nodal: &[f64]) -> DMatrix<f64> {
    let n = grid.len();
    let col = laplacian_column(grid);
    DMatrix::from_fn(n, n, |j, l| {
        let d = col[(j + n - l) % n];
        if j == l {
            d + potential_nodal[j]
        } else {
            d
        }
    })
}

impl SchrodingerOp {
    pub fn new(q: &Field) -> Result<Self> {
        if !q.is_real() {
            return invalid("the potential must be a real field");
        }
        let grid = *q.grid();
        let potential_nodal = q.nodal_real();
        let h = nodal_matrix(&grid, &potential_nodal);
        let eig = SymmetricEigen::new(h);
        let n = grid.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { grid, potential: q.clone(), potential_nodal, eigenvalues, eigenvectors })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn potential(&self) -> &Field {
        &self.potential
    }

    pub fn potential_nodal(&self) -> &[f64] {
        &self.potential_nodal
    }

    /// Eigenvalues in ascending order.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn nodal_matrix(&self) -> DMatrix<f64> {
        nodal_matrix(&self.grid, &self.potential_nodal)
    }

    /// The operator in the Fourier basis, slot ordered.
    pub fn fourier_matrix(&self) -> DMatrix<Complex64> {
        let g = self.grid;
        let n = g.len();
        let scale = 1.0 / g.period().sqrt();
        DMatrix::from_fn(n, n, |m, l| {
            let v = self.potential.coeffs()[(m + n - l) % n] * scale;
            if m == l {
                v + g.frequency_of_slot(m).powi(2)
            } else {
                v
            }
        })
    }

    /// `⟨ψ, Hψ⟩ = ‖ψ'‖² + ∫ q|ψ|²`, the potential term by nodal quadrature.
    pub fn quadratic_form(&self, psi: &Field) -> Result<f64> {
        psi.check_grid(&self.potential)?;
        let kinetic = psi.derivative().l2_norm().powi(2);
        let potential: f64 = psi
            .nodal()
            .iter()
            .zip(&self.potential_nodal)
            .map(|(z, q)| z.norm_sqr() * q)
            .sum::<f64>()
            * self.grid.spacing();
        // The unpaired mode carries kinetic energy even though the derivative drops it.
        let ny = psi.coeffs()[self.grid.nyquist_slot()].norm_sqr() * self.grid.max_frequency().powi(2);
        Ok(kinetic + ny + potential)
    }

    /// Distance from `-k²` to the spectrum.
    pub fn spectral_distance(&self, point: &SpectralPoint) -> f64 {
        let k2 = point.k2();
        self.eigenvalues.iter().map(|&l| (l + k2).norm()).fold(f64::INFINITY, f64::min)
    }

    fn weights(&self, point: &SpectralPoint) -> Result<Vec<Complex64>> {
        let distance = self.spectral_distance(point);
        if distance < SPECTRUM_GUARD {
            return Err(LabError::SpectrumCollision { distance });
        }
        let k2 = point.k2();
        Ok(self.eigenvalues.iter().map(|&l| 1.0 / (l + k2)).collect())
    }

    /// Diagonal of the nodal resolvent, `Σ_n U_jn² / (λ_n + k²)`, without forming the matrix.
    pub fn resolvent_diagonal(&self, point: &SpectralPoint) -> Result<Vec<Complex64>> {
        let w = self.weights(point)?;
        let u = &self.eigenvectors;
        Ok((0..self.grid.len())
            .map(|j| u.row(j).iter().zip(&w).map(|(x, wn)| wn * (x * x)).sum())
            .collect())
    }

    pub fn resolvent(&self, point: &SpectralPoint) -> Result<Resolvent> {
        let w = self.weights(point)?;
        let u = &self.eigenvectors;
        let n = self.grid.len();
        let scaled_re = DMatrix::from_fn(n, n, |r, c| u[(r, c)] * w[c].re);
        let scaled_im = DMatrix::from_fn(n, n, |r, c| u[(r, c)] * w[c].im);
        let re = &scaled_re * u.transpose();
        let im = &scaled_im * u.transpose();
        let nodal = DMatrix::from_fn(n, n, |r, c| Complex64::new(re[(r, c)], im[(r, c)]));
        let mags: Vec<f64> = w.iter().map(|z| z.norm()).collect();
        let big = mags.iter().cloned().fold(0.0, f64::max);
        let small = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Resolvent {
            point: *point,
            grid: self.grid,
            potential: self.potential.clone(),
            potential_nodal: self.potential_nodal.clone(),
            nodal,
            distance: 1.0 / big,
            condition: big / small,
        })
    }
}

/// Diagonal of the nodal resolvent through a Householder tridiagonalization `H = Q T Qᵀ`.
///
/// The complex symmetric system `(T + k²) X = Qᵀ` is factored as `LDLᵀ` without pivoting;
/// every pivot has imaginary part of modulus at least `|Im k²|`. Points too close to the
/// real axis fall back to the eigendecomposition, which carries the spectrum guard.
pub fn resolvent_diagonal_direct(q: &Field, point: &SpectralPoint) -> Result<Vec<Complex64>> {
    let k2 = point.k2();
    if k2.im.abs() < SPECTRUM_GUARD {
        return SchrodingerOp::new(q)?.resolvent_diagonal(point);
    }
    if !q.is_real() {
        return invalid("the potential must be a real field");
    }
    let grid = *q.grid();
    let n = grid.len();
    let (qm, d, e) = SymmetricTridiagonal::new(nodal_matrix(&grid, &q.nodal_real())).unpack();
    let mut pivots = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n.saturating_sub(1));
    pivots.push(d[0] + k2);
    for i in 0..n - 1 {
        let l = e[i] / pivots[i];
        lower.push(l);
        pivots.push(d[i + 1] + k2 - e[i] * l);
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    Ok((0..n)
        .map(|j| {
            x[0] = Complex64::new(qm[(j, 0)], 0.0);
            for i in 1..n {
                x[i] = qm[(j, i)] - lower[i - 1] * x[i - 1];
            }
            x[n - 1] /= pivots[n - 1];
            for i in (0..n - 1).rev() {
                x[i] = x[i] / pivots[i] - lower[i] * x[i + 1];
            }
            (0..n).map(|a| x[a] * qm[(j, a)]).sum()
        })
        .collect())
}

/// `R(k) = (H + k²)^{-1}` as a dense matrix in the nodal orthonormal basis.
#[derive(Debug, Clone)]
pub struct Resolvent {
    point: SpectralPoint,
    grid: TorusGrid,
    potential: Field,
    potential_nodal: Vec<f64>,
    nodal: DMatrix<Complex64>,
    distance: f64,
    condition: f64,
}

impl Resolvent {
    pub fn point(&self) -> &SpectralPoint {
        &self.point
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn potential(&self) -> &Field {
        &self.potential
    }

    pub fn potential_nodal(&self) -> &[f64] {
        &self.potential_nodal
    }

    pub fn nodal(&self) -> &DMatrix<Complex64> {
        &self.nodal
    }

    /// Distance from `-k²` to the spectrum, equal to `1/‖R‖` since `H` is symmetric.
    pub fn spectral_distance(&self) -> f64 {
        self.distance
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Integral kernel at nodes, `G(x_j, x_l) = R_jl / h`.
    pub fn kernel(&self, j: usize, l: usize) -> Complex64 {
        self.nodal[(j, l)] / self.grid.spacing()
    }

    pub fn fourier(&self) -> DMatrix<Complex64> {
        nodal_to_fourier(&self.nodal)
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        f.check_grid(&self.potential)?;
        let v = DVector::from_vec(f.nodal());
        let out = &self.nodal * v;
        Field::from_nodal(self.grid, out.as_slice())
    }

    /// `max |((H + k²)R - I)_{jl}|`.
    pub fn residual_max(&self) -> f64 {
        let h = nodal_matrix(&self.grid, &self.potential_nodal).map(|x| Complex64::new(x, 0.0));
        let n = self.grid.len();
        let k2 = self.point.k2();
        let mut a = &h * &self.nodal + &self.nodal * k2;
        for i in 0..n {
            a[(i, i)] -= 1.0;
        }
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest singular value, the `L² → L²` norm.
    pub fn operator_norm(&self) -> f64 {
        self.nodal.clone().singular_values().max()
    }
}

/// `F A F*` where `F` maps nodal orthonormal coordinates to Fourier coefficients.
pub fn nodal_to_fourier(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    let transform_columns = |m: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let mut out = m.clone();
        let scale = 1.0 / (n as f64).sqrt();
        for mut col in out.column_iter_mut() {
            let mut buf: Vec<Complex64> = col.iter().cloned().collect();
            fft::forward(&mut buf);
            for (s, v) in buf.iter().enumerate() {
                let mode = if s < n / 2 { s as i64 } else { s as i64 - n as i64 };
                let sign = if mode.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                col[s] = v * (sign * scale);
            }
        }
        out
    };
    let c = transform_columns(a);
    transform_columns(&c.adjoint()).adjoint()
}

/// Inverse of [`nodal_to_fourier`].
pub fn fourier_to_nodal(b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = b.nrows();
    let transform_columns = |m: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let mut out = m.clone();
        let scale = 1.0 / (n as f64).sqrt();
        for mut col in out.column_iter_mut() {
            let mut buf: Vec<Complex64> = col
                .iter()
                .enumerate()
                .map(|(s, v)| {
                    let mode = if s < n / 2 { s as i64 } else { s as i64 - n as i64 };
                    let sign = if mode.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    v * sign
                })
                .collect();
            fft::inverse(&mut buf);
            for (j, v) in buf.iter().enumerate() {
                col[j] = v * scale;
            }
        }
        out
    };
    let c = transform_columns(b);
    transform_columns(&c.adjoint()).adjoint()
}

/// Writes a header `{N: u64, L0: f64}` followed by row-major complex128 entries, little-endian.
pub fn write_matrix_binary(mut out: impl Write, grid: &TorusGrid, m: &DMatrix<Complex64>) -> Result<()> {
    if m.nrows() != grid.len() || m.ncols() != grid.len() {
        return invalid("matrix shape does not match the grid");
    }
    out.write_all(&(grid.len() as u64).to_le_bytes())?;
    out.write_all(&grid.half_period().to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_all(&m[(r, c)].re.to_le_bytes())?;
            out.write_all(&m[(r, c)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_binary(mut input: impl Read) -> Result<(TorusGrid, DMatrix<Complex64>)> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let grid = TorusGrid::new(f64::from_le_bytes(word), n)?;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            input.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            input.read_exact(&mut word)?;
            m[(r, c)] = Complex64::new(re, f64::from_le_bytes(word));
        }
    }
    Ok((grid, m))
}
