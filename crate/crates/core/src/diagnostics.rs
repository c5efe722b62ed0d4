//! Exact identity checks and decay measurements for resolvents.

use crate::error::{invalid, LabError, Result};
use crate::field::Field;
use crate::grid::TorusGrid;
use crate::noise::truncate_potential;
use crate::spectral::{nodal_to_fourier, Resolvent, SchrodingerOp, SpectralPoint};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::Write;

/// A real weight exponent `ρ` sampled at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    grid: TorusGrid,
    values: Vec<f64>,
    slope: f64,
}

impl WeightProfile {
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("weight values must be finite");
        }
        let h = grid.spacing();
        let n = values.len();
        let slope = (0..n).map(|j| (values[(j + 1) % n] - values[j]).abs() / h).fold(0.0, f64::max);
        Ok(Self { grid, values, slope })
    }

    /// Samples `ρ` at the nodes; `ρ(-L0)` and `ρ(L0)` must agree.
    pub fn from_fn(grid: TorusGrid, rho: impl Fn(f64) -> f64) -> Result<Self> {
        let l = grid.half_period();
        if (rho(-l) - rho(l)).abs() >= 1e-12 {
            return invalid("weight is not periodic");
        }
        Self::from_values(grid, grid.nodes().into_iter().map(rho).collect())
    }

    pub fn flat(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()], slope: 0.0 }
    }

    /// `ρ(x) = -slope·d(x, 0)` with `d` the torus distance.
    pub fn sawtooth(grid: TorusGrid, slope: f64) -> Result<Self> {
        if !(slope >= 0.0 && slope.is_finite()) {
            return invalid(format!("slope must be finite and non-negative, got {slope}"));
        }
        let center = grid.len() / 2;
        Self::from_values(grid, (0..grid.len()).map(|j| -slope * grid.node_distance(j, center)).collect())
    }

    /// Steepest sawtooth in the class with parameter `lambda`; `λ = ∞` is the flat weight.
    pub fn for_lambda(grid: TorusGrid, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return invalid(format!("lambda must be positive, got {lambda}"));
        }
        Self::sawtooth(grid, lambda.powf(-0.5))
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest difference quotient between neighbouring nodes, wrap included.
    pub fn max_slope(&self) -> f64 {
        self.slope
    }

    pub fn in_class(&self, lambda: f64) -> bool {
        self.slope <= lambda.powf(-0.5) * (1.0 + 1e-12)
    }
}

/// Max-entry norm of `R_L - R_1 + Σ_ℓ R_{2ℓ}(q_{2ℓ} - q_ℓ)R_ℓ` over the dyadic `scales`.
pub fn multiscale_residual(q: &Field, point: &SpectralPoint, scales: &[f64]) -> Result<f64> {
    let g = *q.grid();
    if scales.is_empty() {
        return invalid("need at least one scale");
    }
    for w in scales.windows(2) {
        if (w[1] - 2.0 * w[0]).abs() > 1e-12 * w[1] {
            return invalid(format!("scales must double: {} then {}", w[0], w[1]));
        }
    }
    if *scales.last().expect("nonempty") > g.half_period() * (1.0 + 1e-12) {
        return invalid("largest scale exceeds the half period");
    }
    let rs: Vec<Resolvent> = scales
        .par_iter()
        .map(|&l| SchrodingerOp::new(&truncate_potential(q, l)?)?.resolvent(point))
        .collect::<Result<_>>()?;
    let mut acc = rs.last().expect("nonempty").nodal() - rs[0].nodal();
    for w in rs.windows(2) {
        let (small, big) = (&w[0], &w[1]);
        let mut right = small.nodal().clone();
        for (j, mut row) in right.row_iter_mut().enumerate() {
            row *= Complex64::new(big.potential_nodal()[j] - small.potential_nodal()[j], 0.0);
        }
        acc += big.nodal() * right;
    }
    Ok(acc.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn sobolev_weights(grid: &TorusGrid, kappa: f64) -> Vec<f64> {
    grid.frequencies().iter().map(|xi| (4.0 * kappa * kappa + xi * xi).sqrt()).collect()
}

/// `H^{-1}_κ → H^1_κ` norm of an operator given in nodal orthonormal coordinates.
pub fn hm1_to_h1_norm(a: &DMatrix<Complex64>, grid: &TorusGrid, kappa: f64) -> Result<f64> {
    if a.nrows() != grid.len() || a.ncols() != grid.len() {
        return Err(LabError::GridMismatch);
    }
    let w = sobolev_weights(grid, kappa);
    let mut f = nodal_to_fourier(a);
    for ((i, j), z) in f.iter_mut().enumerate().map(|(idx, z)| ((idx % grid.len(), idx / grid.len()), z)) {
        *z *= w[i] * w[j];
    }
    Ok(f.singular_values().max())
}

/// Largest singular value of `W₊·F·D(e^ρ)·R·D(e^{-ρ})·F*·W₊`.
pub fn weighted_resolvent_norm(r: &Resolvent, rho: &WeightProfile, kappa: f64) -> Result<f64> {
    if !r.grid().compatible(rho.grid()) {
        return Err(LabError::GridMismatch);
    }
    let e: Vec<f64> = rho.values().iter().map(|v| v.exp()).collect();
    let m = DMatrix::from_fn(e.len(), e.len(), |j, l| r.nodal()[(j, l)] * (e[j] / e[l]));
    hm1_to_h1_norm(&m, r.grid(), kappa)
}

/// `L² → L²` norm of `χ_a R χ_b` for nodal indicator masks.
pub fn localized_norm(a: &DMatrix<Complex64>, left: &[bool], right: &[bool]) -> f64 {
    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |j, l| {
        if left[j] && right[l] {
            a[(j, l)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    m.singular_values().max()
}

/// `Σσ²` from the singular values and `Σ|a_jl|²` from the entries.
pub fn hilbert_schmidt_sq(a: &DMatrix<Complex64>) -> (f64, f64) {
    let sv: f64 = a.clone().singular_values().iter().map(|s| s * s).sum();
    let entries: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    (sv, entries)
}

/// Fourier matrix of `√R₀ f √R₀` with `R₀ = (-∂² + κ²)^{-1}`, modes coupled without wrap-around.
pub fn sandwiched_multiplier(f: &Field, kappa: f64) -> DMatrix<Complex64> {
    let g = *f.grid();
    let n = g.len();
    let scale = 1.0 / g.period().sqrt();
    let k2 = kappa * kappa;
    DMatrix::from_fn(n, n, |a, b| {
        let d = g.mode_of_slot(a) - g.mode_of_slot(b);
        if d.unsigned_abs() >= (n / 2) as u64 {
            return Complex64::new(0.0, 0.0);
        }
        let (xa, xb) = (g.frequency_of_slot(a), g.frequency_of_slot(b));
        f.coeffs()[g.slot_of_mode(d)] * scale / ((xa * xa + k2) * (xb * xb + k2)).sqrt()
    })
}

/// `‖√R₀ f √R₀‖²_{I2}` summed over the lattice without forming the matrix.
pub fn i2h1_trace(f: &Field, kappa: f64) -> f64 {
    let g = *f.grid();
    let n = g.len() as i64;
    let w = 1.0 / g.period();
    let k2 = kappa * kappa;
    let modes: Vec<i64> = (-n / 2..n / 2).collect();
    modes
        .par_iter()
        .map(|&a| {
            let xa = g.frequency(a);
            modes
                .iter()
                .filter(|&&b| (a - b).abs() < n / 2)
                .map(|&b| {
                    let xb = g.frequency(b);
                    f.coeff(a - b).norm_sqr() * w / ((xa * xa + k2) * (xb * xb + k2))
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r2: f64,
    pub intercept: f64,
    /// `(d, log|G(x0, y)|)` used in the fit.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares fit of `log|G(x0, y)| ≈ a - c·d(x0, y)` over `d ∈ [2, L0/2]`.
pub fn offdiag_decay(r: &Resolvent, x0: usize) -> Result<DecayFit> {
    offdiag_decay_window(r, x0, 2.0, r.grid().half_period() / 2.0)
}

pub fn offdiag_decay_window(r: &Resolvent, x0: usize, d_min: f64, d_max: f64) -> Result<DecayFit> {
    r.point().require_strict()?;
    let g = *r.grid();
    if x0 >= g.len() {
        return invalid(format!("node {x0} outside 0..{}", g.len()));
    }
    let points: Vec<(f64, f64)> = (0..g.len())
        .filter_map(|l| {
            let d = g.node_distance(x0, l);
            let v = r.kernel(x0, l).norm();
            (d >= d_min - 1e-12 && d <= d_max + 1e-12 && v > 0.0 && v.is_finite()).then(|| (d, v.ln()))
        })
        .collect();
    if points.len() < 8 {
        return Err(LabError::DegenerateFit { usable: points.len(), needed: 8 });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::DegenerateFit { usable: 1, needed: 8 });
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(DecayFit { rate: -slope, r2, intercept: my - slope * mx, points })
}

/// Log-linear plot of the fitted points and line.
pub fn decay_svg(fit: &DecayFit) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let xmin = fit.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = fit.points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let ymin = fit.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = fit.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1e-300) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin).max(1e-300) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for &(x, y) in &fit.points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#, sx(x), sy(y));
    }
    let line = |x: f64| fit.intercept - fit.rate * x;
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="crimson"/>"#,
        sx(xmin),
        sy(line(xmin)),
        sx(xmax),
        sy(line(xmax))
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-size="13">log|G| vs distance: rate {:.5}, r² {:.5}</text>"#,
        fit.rate, fit.r2
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub value: f64,
    pub aux: f64,
}

/// Weighted norm for the steepest sawtooth weight of each `λ`; `aux` is the weight slope.
pub fn ct_weight_sweep(q: &Field, point: &SpectralPoint, lambdas: &[f64], kappa: f64) -> Result<Vec<SweepRow>> {
    let r = SchrodingerOp::new(q)?.resolvent(point)?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let rho = if lambda.is_infinite() {
                WeightProfile::flat(*q.grid())
            } else {
                WeightProfile::for_lambda(*q.grid(), lambda)?
            };
            Ok(SweepRow { param: lambda, value: weighted_resolvent_norm(&r, &rho, kappa)?, aux: rho.max_slope() })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "param,value,aux")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.param, r.value, r.aux)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{window_mask, NoiseSampler};
    use std::f64::consts::PI;

    fn kpi8(m: f64) -> SpectralPoint {
        SpectralPoint::from_polar(m, PI / 8.0).unwrap()
    }

    #[test]
    fn weight_profiles() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let w = WeightProfile::sawtooth(g, 0.5).unwrap();
        assert!((w.max_slope() - 0.5).abs() < 1e-12);
        assert!(w.in_class(4.0));
        assert!(!w.in_class(5.0));
        assert!(WeightProfile::from_fn(g, |x| x).is_err());
        assert!(WeightProfile::from_fn(g, |x| (PI * x / 8.0).cos()).is_ok());
        assert_eq!(WeightProfile::for_lambda(g, 1e300).unwrap().max_slope(), WeightProfile::sawtooth(g, 1e-150).unwrap().max_slope());
    }

    #[test]
    fn multiscale_trivial_cases() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let scales = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(multiscale_residual(&Field::zeros(g), &kpi8(4.0), &scales).unwrap(), 0.0);
        let bump = Field::from_fn(g, |x| if x.abs() <= 1.0 { 1.0 - x * x } else { 0.0 });
        assert!(multiscale_residual(&bump, &kpi8(4.0), &scales).unwrap() < 1e-12);
        assert!(multiscale_residual(&bump, &kpi8(4.0), &[1.0, 3.0]).is_err());
        assert!(multiscale_residual(&bump, &kpi8(4.0), &[8.0, 16.0]).is_err());
    }

    #[test]
    fn multiscale_identity_on_white_noise() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let q = NoiseSampler::new(g, 4).sample(0);
        let r = multiscale_residual(&q, &kpi8(4.0), &[0.5, 1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn flat_weight_free_norm_matches_scalar_oracle() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let kappa = 2.0;
        let r = SchrodingerOp::new(&Field::zeros(g)).unwrap().resolvent(&SpectralPoint::real(kappa).unwrap()).unwrap();
        let oracle = g
            .frequencies()
            .iter()
            .map(|xi| (4.0 * kappa * kappa + xi * xi) / (xi * xi + kappa * kappa))
            .fold(0.0, f64::max);
        let flat = weighted_resolvent_norm(&r, &WeightProfile::flat(g), kappa).unwrap();
        assert!((flat - oracle).abs() < 1e-8 * oracle);
        assert!((1.0..=4.0 + 1e-12).contains(&flat));
        let shifted = WeightProfile::from_values(g, vec![3.0; 64]).unwrap();
        assert!((weighted_resolvent_norm(&r, &shifted, kappa).unwrap() - flat).abs() < 1e-10 * flat);
    }

    #[test]
    fn gentle_weight_is_a_small_perturbation() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let p = kpi8(2.0);
        let r = SchrodingerOp::new(&Field::zeros(g)).unwrap().resolvent(&p).unwrap();
        let flat = weighted_resolvent_norm(&r, &WeightProfile::flat(g), p.kappa()).unwrap();
        for lambda in [100.0, 1e4] {
            let w = weighted_resolvent_norm(&r, &WeightProfile::for_lambda(g, lambda).unwrap(), p.kappa()).unwrap();
            assert!(w <= 2.0 * flat && w >= 0.5 * flat, "λ = {lambda}: {w} vs {flat}");
        }
    }

    #[test]
    fn sweep_is_monotone_and_starts_flat() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let q = NoiseSampler::new(g, 9).sample(0);
        let p = kpi8(4.0);
        let lambdas = [f64::INFINITY, 1e4, 100.0, 10.0, 4.0, 1.0];
        let rows = ct_weight_sweep(&q, &p, &lambdas, p.kappa()).unwrap();
        let r = SchrodingerOp::new(&q).unwrap().resolvent(&p).unwrap();
        let flat = weighted_resolvent_norm(&r, &WeightProfile::flat(g), p.kappa()).unwrap();
        assert_eq!(rows[0].value, flat);
        for w in rows.windows(2) {
            assert!(w[1].value >= w[0].value * (1.0 - 1e-12), "{w:?}");
        }
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("param,value,aux\n"));
    }

    #[test]
    fn norm_contract_is_self_dual() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        let q = NoiseSampler::new(g, 2).sample(1);
        let r = SchrodingerOp::new(&q).unwrap().resolvent(&kpi8(3.0)).unwrap();
        let a = r.nodal().map(|z| z * Complex64::new(1.0, 0.3)) + DMatrix::from_fn(32, 32, |j, l| Complex64::new((j * l) as f64 * 1e-3, 0.0));
        let n1 = hm1_to_h1_norm(&a, &g, 2.0).unwrap();
        let n2 = hm1_to_h1_norm(&a.transpose(), &g, 2.0).unwrap();
        assert!((n1 - n2).abs() < 1e-10 * n1);
    }

    #[test]
    fn localized_blocks_are_transposes() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let q = NoiseSampler::new(g, 6).sample(0);
        let r = SchrodingerOp::new(&q).unwrap().resolvent(&kpi8(2.0)).unwrap();
        let m = window_mask(&g, 1.0);
        let n: Vec<bool> = g.nodes().iter().map(|x| (x - 4.0).abs() <= 1.0).collect();
        let a = localized_norm(r.nodal(), &m, &n);
        let b = localized_norm(&r.nodal().transpose(), &n, &m);
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn hilbert_schmidt_trace_identity() {
        let g = TorusGrid::new(4.0, 64).unwrap();
        let f = Field::from_fn(g, |x| (-x * x).exp() * (2.0 + x));
        let (sv, entries) = hilbert_schmidt_sq(&sandwiched_multiplier(&f, 2.0));
        assert!((sv - entries).abs() < 1e-10 * entries);
        assert!((entries - i2h1_trace(&f, 2.0)).abs() < 1e-12 * entries);
    }

    #[test]
    fn discrete_trace_matches_h_minus_one_norm() {
        let kappa = 4.0;
        let err = |l0: f64, n: usize| {
            let g = TorusGrid::new(l0, n).unwrap();
            let f = Field::from_fn(g, |x| (-x * x).exp() * (1.0 + 0.5 * x));
            let target = f.sobolev_norm(-1.0, kappa).powi(2) / kappa;
            (i2h1_trace(&f, kappa) - target).abs() / target
        };
        let e16 = err(16.0, 512);
        assert!(e16 < 0.05, "{e16}");
        // Doubling L0 at fixed resolution leaves the error unchanged: the finite-volume part is
        // exponentially small and the remainder is the band cutoff, which shrinks as N grows.
        let e32 = err(32.0, 1024);
        assert!((e32 - e16).abs() < 1e-3 * e16, "{e32} vs {e16}");
        let fine = err(16.0, 1024);
        assert!(fine < e16 / 4.0, "{fine} vs {e16}");
    }

    #[test]
    fn free_and_constant_decay_rates() {
        let g = TorusGrid::new(8.0, 256).unwrap();
        let p = kpi8(2.0);
        let r = SchrodingerOp::new(&Field::zeros(g)).unwrap().resolvent(&p).unwrap();
        let fit = offdiag_decay(&r, 128).unwrap();
        assert!((fit.rate / p.k().re - 1.0).abs() < 0.02 && fit.r2 > 0.999, "{} {}", fit.rate, fit.r2);
        let c = 3.0;
        let r = SchrodingerOp::new(&Field::constant(g, c)).unwrap().resolvent(&p).unwrap();
        let fit = offdiag_decay(&r, 0).unwrap();
        let expected = (p.k2() + c).sqrt().re;
        assert!((fit.rate / expected - 1.0).abs() < 0.02, "{} vs {expected}", fit.rate);
        assert!(decay_svg(&fit).starts_with("<svg"));
    }

    #[test]
    fn degenerate_fit_is_reported() {
        let g = TorusGrid::new(4.0, 16).unwrap();
        let r = SchrodingerOp::new(&Field::zeros(g)).unwrap().resolvent(&kpi8(2.0)).unwrap();
        assert!(matches!(offdiag_decay(&r, 0), Err(LabError::DegenerateFit { .. })));
    }
}
