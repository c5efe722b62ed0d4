use crate::error::{invalid, LabError, Result};
use crate::field::Field;
use crate::grid::TorusGrid;
use crate::stats::summarize;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Truncated white noise: i.i.d. standard Gaussian coordinates in the real orthonormal basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSampler {
    grid: TorusGrid,
    master_seed: u64,
    mode_cutoff: usize,
}

impl NoiseSampler {
    /// Sampler over every paired mode `|n| ≤ N/2 - 1`.
    pub fn new(grid: TorusGrid, master_seed: u64) -> Self {
        Self { grid, master_seed, mode_cutoff: grid.len() / 2 - 1 }
    }

    /// Restrict to modes `|n| ≤ cutoff`; the unpaired mode is never sampled.
    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.mode_cutoff = cutoff.min(self.grid.len() / 2 - 1);
        self
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    /// Sample `index` of the ensemble; a pure function of `(master_seed, index)`.
    pub fn sample(&self, index: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        let g = self.grid;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); g.len()];
        let draw = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        coeffs[0] = Complex64::new(draw(&mut rng), 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for n in 1..=self.mode_cutoff as i64 {
            let c = Complex64::new(draw(&mut rng), draw(&mut rng)) * r;
            coeffs[g.slot_of_mode(n)] = c;
            coeffs[g.slot_of_mode(-n)] = c.conj();
        }
        Field::from_coeffs(g, coeffs, true).expect("length matches grid")
    }
}

/// Nodes kept by the sharp window `|x_j| ≤ ell`.
pub fn window_mask(grid: &TorusGrid, ell: f64) -> Vec<bool> {
    let tol = 1e-12 * grid.half_period();
    grid.nodes().into_iter().map(|x| x.abs() <= ell + tol).collect()
}

/// `q·1_{[-ell, ell]}` on the nodes.
pub fn truncate_potential(q: &Field, ell: f64) -> Result<Field> {
    let g = *q.grid();
    if !(ell > 0.0) || ell > g.half_period() * (1.0 + 1e-12) {
        return invalid(format!("window half-width {ell} must lie in (0, L0]"));
    }
    let mask = window_mask(&g, ell);
    if mask.iter().all(|&k| k) {
        return Ok(q.clone());
    }
    let v: Vec<Complex64> = q
        .nodal()
        .into_iter()
        .zip(mask)
        .map(|(z, k)| if k { z } else { Complex64::new(0.0, 0.0) })
        .collect();
    let f = Field::from_nodal(g, &v)?;
    Ok(if q.is_real() { f.real_part() } else { f })
}

/// Nodal values on `[-L, L)` read as one period of a `2L`-periodic field.
pub fn restrict_periodize(q: &Field, half_period: f64) -> Result<Field> {
    let g = *q.grid();
    let non_commensurate =
        || LabError::NonCommensurate { target: half_period, source_half_period: g.half_period() };
    if !(half_period > 0.0) || half_period > g.half_period() * (1.0 + 1e-12) {
        return Err(non_commensurate());
    }
    let cells = 2.0 * half_period / g.spacing();
    let n = cells.round();
    if (cells - n).abs() > 1e-9 * cells || n < 8.0 || n as usize % 2 != 0 {
        return Err(non_commensurate());
    }
    let n = n as usize;
    if n == g.len() {
        return Ok(q.clone());
    }
    let target = TorusGrid::new(half_period, n)?;
    let offset = (g.len() - n) / 2;
    let v = q.nodal();
    let f = Field::from_nodal(target, &v[offset..offset + n])?;
    Ok(if q.is_real() { f.real_part() } else { f })
}

/// Monte Carlo estimate of `E exp(i⟨f, q⟩)` with componentwise standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfEstimate {
    pub estimate: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

pub fn characteristic_functional_mc(sampler: &NoiseSampler, f: &Field, samples: usize) -> Result<CfEstimate> {
    if samples < 2 {
        return invalid("need at least two samples");
    }
    f.check_grid(&Field::zeros(*sampler.grid()))?;
    let phases: Vec<Complex64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let q = sampler.sample(i);
            let t = f.pairing(&q).expect("grids checked").re;
            Complex64::new(t.cos(), t.sin())
        })
        .collect();
    let re: Vec<f64> = phases.iter().map(|z| z.re).collect();
    let im: Vec<f64> = phases.iter().map(|z| z.im).collect();
    let (mr, sr) = summarize(&re);
    let (mi, si) = summarize(&im);
    Ok(CfEstimate { estimate: Complex64::new(mr, mi), stderr_re: sr, stderr_im: si })
}
