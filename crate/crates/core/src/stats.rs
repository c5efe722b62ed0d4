//! Monte Carlo batteries: flow invariance of white noise and Gaussian integration-by-parts identities.
//!
//! Every estimator evaluates samples in parallel, collects them in index order and reduces with
//! pairwise summation, so reports do not depend on the worker count.

use crate::error::{invalid, Result};
use crate::field::Field;
use crate::flows::{evolve_hk, FlowConfig};
use crate::grid::TorusGrid;
use crate::noise::NoiseSampler;
use crate::spectral::{diag_green_with, GreenMethod, SpectralPoint};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Two-sided family-wise error rate of a single 3σ band.
pub const FAMILY_ALPHA: f64 = 0.0027;

pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and standard error of the mean.
pub fn summarize(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(x) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-observable `|z|` threshold that keeps the family-wise rate of `m` tests at `family_alpha`.
pub fn bonferroni_threshold(family_alpha: f64, m: usize) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - family_alpha / (2.0 * m.max(1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub z: f64,
}

impl Observable {
    pub fn new(name: impl Into<String>, estimate: f64, stderr: f64, target: f64) -> Self {
        let diff = estimate - target;
        let z = if stderr > 0.0 {
            diff / stderr
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        Self { name: name.into(), estimate, stderr, target, z }
    }

    pub fn from_samples(name: impl Into<String>, samples: &[f64], target: f64) -> Self {
        let (m, se) = summarize(samples);
        Self::new(name, m, se, target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub test: String,
    pub samples: usize,
    pub seed: u64,
    pub family_alpha: f64,
    pub z_threshold: f64,
    /// How `pass` is decided when it is not the z-score band.
    pub pass_rule: String,
    pub observables: Vec<Observable>,
    pub pass: bool,
    pub failed_samples: usize,
    pub extra: BTreeMap<String, f64>,
    /// Wall time; kept out of the serialized results so reruns are byte-identical.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl McReport {
    fn new(test: &str, samples: usize, seed: u64, observables: Vec<Observable>) -> Self {
        let z_threshold = bonferroni_threshold(FAMILY_ALPHA, observables.len());
        let pass = observables.iter().all(|o| o.z.abs() <= z_threshold);
        Self {
            schema_version: SCHEMA_VERSION,
            test: test.to_string(),
            samples,
            seed,
            family_alpha: FAMILY_ALPHA,
            z_threshold,
            pass_rule: "bonferroni-z".into(),
            observables,
            pass,
            failed_samples: 0,
            extra: BTreeMap::new(),
            runtime_s: 0.0,
        }
    }

    fn timed(mut self, start: Instant) -> Self {
        self.runtime_s = start.elapsed().as_secs_f64();
        self
    }

    pub fn max_abs_z(&self) -> f64 {
        self.observables.iter().map(|o| o.z.abs()).fold(0.0, f64::max)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: {} (M = {}, seed = {}, |z| ≤ {:.3})",
            self.test,
            if self.pass { "PASS" } else { "FAIL" },
            self.samples,
            self.seed,
            self.z_threshold
        );
        for o in &self.observables {
            let _ = writeln!(
                s,
                "  {:<28} {:>14.6e} ± {:<11.3e} target {:>12.6e}  z = {:+.3}",
                o.name, o.estimate, o.stderr, o.target, o.z
            );
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "  {k:<28} {v:.6e}");
        }
        if self.failed_samples > 0 {
            let _ = writeln!(s, "  excluded samples: {}", self.failed_samples);
        }
        s
    }
}

fn cos_sin_observables(name: &str, phases: &[f64], target: f64) -> [Observable; 2] {
    let c: Vec<f64> = phases.iter().map(|t| t.cos()).collect();
    let s: Vec<f64> = phases.iter().map(|t| t.sin()).collect();
    [Observable::from_samples(format!("{name}.re"), &c, target), Observable::from_samples(format!("{name}.im"), &s, 0.0)]
}

/// Characteristic functional of the sampler against `exp(-‖f‖²/2)`.
pub fn characteristic_functional_test(sampler: &NoiseSampler, samples: usize, test_fns: &[Field]) -> Result<McReport> {
    let start = Instant::now();
    for f in test_fns {
        f.check_grid(&Field::zeros(*sampler.grid()))?;
    }
    let pairings: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let q = sampler.sample(i);
            test_fns.iter().map(|f| f.pairing(&q).expect("grids checked").re).collect()
        })
        .collect();
    let mut obs = Vec::new();
    for (j, f) in test_fns.iter().enumerate() {
        let t: Vec<f64> = pairings.iter().map(|p| p[j]).collect();
        obs.extend(cos_sin_observables(&format!("cf[{j}]"), &t, (-0.5 * f.l2_norm().powi(2)).exp()));
    }
    Ok(McReport::new("characteristic-functional", samples, sampler.master_seed(), obs).timed(start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceConfig {
    pub point: SpectralPoint,
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    pub green: GreenMethod,
    /// Also measure the truncation bias with `N/2` modes.
    pub refine_bias: bool,
}

impl InvarianceConfig {
    pub fn new(point: SpectralPoint, horizon: f64, samples: usize, seed: u64) -> Self {
        Self { point, horizon, dt: 1e-3, samples, seed, green: GreenMethod::Resolvent, refine_bias: true }
    }
}

struct Evolved {
    phases: Vec<f64>,
    /// `½|1 - exp(-(P(T) - P(0)))|` with `P = ½‖q‖²`.
    tv: f64,
}

fn evolve_sample(q0: &Field, cfg: &InvarianceConfig, test_fns: &[Field]) -> Result<Evolved> {
    let q = if cfg.horizon == 0.0 {
        q0.clone()
    } else {
        let flow = FlowConfig::hk(cfg.point, cfg.dt, cfg.horizon)
            .with_green(cfg.green)
            .with_alpha_guard(None)
            .with_stride(usize::MAX);
        evolve_hk(q0, &flow)?.last().clone()
    };
    let dp = 0.5 * (q.l2_norm().powi(2) - q0.l2_norm().powi(2));
    let phases = test_fns.iter().map(|f| f.pairing(&q).expect("grids checked").re).collect();
    Ok(Evolved { phases, tv: 0.5 * (1.0 - (-dp).exp()).abs() })
}

fn evolve_ensemble(
    grid: TorusGrid,
    cfg: &InvarianceConfig,
    test_fns: &[Field],
) -> (Vec<Evolved>, usize) {
    let sampler = NoiseSampler::new(grid, cfg.seed);
    let results: Vec<Result<Evolved>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| evolve_sample(&sampler.sample(i), cfg, test_fns))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    (results.into_iter().filter_map(|r| r.ok()).collect(), failed)
}

/// Law of `q(T)` under the discrete `H_k` flow started from truncated white noise.
///
/// The discrete flow is volume preserving, so the density of `q(T)` relative to the initial law
/// is `exp(-ΔP)`; its total-variation distance is reported as the truncation bias.
pub fn invariance_test(grid: TorusGrid, test_fns: &[Field], cfg: &InvarianceConfig) -> Result<McReport> {
    let start = Instant::now();
    cfg.point.require_strict()?;
    if cfg.samples < 2 {
        return invalid("need at least two samples");
    }
    if cfg.horizon < 0.0 {
        return invalid("horizon must be non-negative");
    }
    for f in test_fns {
        f.check_grid(&Field::zeros(grid))?;
    }
    let (done, failed) = evolve_ensemble(grid, cfg, test_fns);
    let mut obs = Vec::new();
    for (j, f) in test_fns.iter().enumerate() {
        let t: Vec<f64> = done.iter().map(|e| e.phases[j]).collect();
        obs.extend(cos_sin_observables(&format!("cf[{j}]"), &t, (-0.5 * f.l2_norm().powi(2)).exp()));
    }
    let mut report = McReport::new("invariance", cfg.samples, cfg.seed, obs);
    report.failed_samples = failed;
    let tv: Vec<f64> = done.iter().map(|e| e.tv).collect();
    let (bias, bias_se) = summarize(&tv);
    report.extra.insert("tv_bias".into(), bias);
    report.extra.insert("tv_bias_stderr".into(), bias_se);
    report.extra.insert("modes".into(), grid.len() as f64);
    if cfg.refine_bias && grid.len() >= 16 {
        let coarse = TorusGrid::new(grid.half_period(), grid.len() / 2)?;
        let (done, failed) = evolve_ensemble(coarse, cfg, &[]);
        let tv: Vec<f64> = done.iter().map(|e| e.tv).collect();
        let (b, se) = summarize(&tv);
        report.extra.insert("tv_bias_half_modes".into(), b);
        report.extra.insert("tv_bias_half_modes_stderr".into(), se);
        report.extra.insert("failed_samples_half_modes".into(), failed as f64);
    }
    report.pass = report.pass && failed == 0;
    Ok(report.timed(start))
}

/// Invariance at `k` plus the median `H^{-1}` increment `‖q_k(T) - q_{2k}(T)‖` on 20 samples.
pub fn kdv_invariance_probe(grid: TorusGrid, test_fns: &[Field], cfg: &InvarianceConfig) -> Result<McReport> {
    let start = Instant::now();
    if cfg.point.kappa() < 8.0 {
        return invalid("the probe needs |k| ≥ 8");
    }
    let mut report = invariance_test(grid, test_fns, &InvarianceConfig { refine_bias: false, ..cfg.clone() })?;
    report.test = "kdv-invariance-probe".into();
    let inc = median_increment(grid, cfg, 20)?;
    report.extra.insert("median_increment".into(), inc);
    Ok(report.timed(start))
}

/// Median over `count` noise samples of `‖q_k(T) - q_{2k}(T)‖_{H^{-1}}`.
pub fn median_increment(grid: TorusGrid, cfg: &InvarianceConfig, count: usize) -> Result<f64> {
    let sampler = NoiseSampler::new(grid, cfg.seed);
    let run = |q0: &Field, p: SpectralPoint| -> Result<Field> {
        if cfg.horizon == 0.0 {
            return Ok(q0.clone());
        }
        let flow =
            FlowConfig::hk(p, cfg.dt, cfg.horizon).with_green(cfg.green).with_alpha_guard(None).with_stride(usize::MAX);
        Ok(evolve_hk(q0, &flow)?.last().clone())
    };
    let mut inc: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let q0 = sampler.sample(i);
            let a = run(&q0, cfg.point)?;
            let b = run(&q0, cfg.point.scaled(2.0))?;
            Ok((&a - &b).sobolev_norm(-1.0, 1.0))
        })
        .collect::<Result<_>>()?;
    inc.sort_by(f64::total_cmp);
    let m = inc.len();
    Ok(if m % 2 == 1 { inc[m / 2] } else { 0.5 * (inc[m / 2 - 1] + inc[m / 2]) })
}

/// `E{⟨φ,q⟩^{n-1}⟨φ',g⟩} = 0` for truncated white noise, real and imaginary parts.
pub fn ibp_identity_test(
    sampler: &NoiseSampler,
    samples: usize,
    phis: &[Field],
    powers: &[u32],
    point: &SpectralPoint,
) -> Result<McReport> {
    let start = Instant::now();
    point.require_admissible()?;
    if powers.iter().any(|&n| n == 0) {
        return invalid("powers must be at least 1");
    }
    let grid = *sampler.grid();
    for f in phis {
        f.check_grid(&Field::zeros(grid))?;
    }
    let derivs: Vec<Field> = phis.iter().map(|f| f.derivative()).collect();
    let values: Vec<Vec<(f64, Complex64)>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let q = sampler.sample(i);
            let g = diag_green_with(&q, point, GreenMethod::Resolvent)?;
            Ok(phis
                .iter()
                .zip(&derivs)
                .map(|(f, d)| (f.pairing(&q).expect("grids checked").re, d.pairing(g.field()).expect("grids checked")))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut obs = Vec::new();
    for (j, _) in phis.iter().enumerate() {
        for &n in powers {
            let x: Vec<Complex64> = values.iter().map(|v| v[j].0.powi(n as i32 - 1) * v[j].1).collect();
            let re: Vec<f64> = x.iter().map(|z| z.re).collect();
            let im: Vec<f64> = x.iter().map(|z| z.im).collect();
            obs.push(Observable::from_samples(format!("phi[{j}].n{n}.re"), &re, 0.0));
            obs.push(Observable::from_samples(format!("phi[{j}].n{n}.im"), &im, 0.0));
        }
    }
    Ok(McReport::new("ibp-identity", samples, sampler.master_seed(), obs).timed(start))
}

/// Test functionals `F = ⟨ψ,q⟩^d` with closed-form derivative `d⟨ψ,q⟩^{d-1}ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WickFunctional {
    Constant,
    Linear,
    Quadratic,
    Cubic,
}

impl WickFunctional {
    pub fn degree(self) -> i32 {
        match self {
            Self::Constant => 0,
            Self::Linear => 1,
            Self::Quadratic => 2,
            Self::Cubic => 3,
        }
    }

    pub fn all() -> [Self; 4] {
        [Self::Constant, Self::Linear, Self::Quadratic, Self::Cubic]
    }
}

/// `E{⟨q,φ⟩F(q)} - E{⟨δF/δq, φ⟩} = 0`, estimated sample by sample.
pub fn wick_ibp_test(
    sampler: &NoiseSampler,
    samples: usize,
    phi: &Field,
    psi: &Field,
    families: &[WickFunctional],
) -> Result<McReport> {
    let start = Instant::now();
    let grid = *sampler.grid();
    phi.check_grid(&Field::zeros(grid))?;
    psi.check_grid(phi)?;
    let psi_phi = psi.pairing(phi)?.re;
    let pairs: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let q = sampler.sample(i);
            (phi.pairing(&q).expect("grids checked").re, psi.pairing(&q).expect("grids checked").re)
        })
        .collect();
    let obs = families
        .iter()
        .map(|fam| {
            let d = fam.degree();
            let x: Vec<f64> = pairs
                .iter()
                .map(|&(a, b)| {
                    let lhs = a * b.powi(d);
                    let rhs = if d == 0 { 0.0 } else { d as f64 * b.powi(d - 1) * psi_phi };
                    lhs - rhs
                })
                .collect();
            Observable::from_samples(format!("{fam:?}").to_lowercase(), &x, 0.0)
        })
        .collect();
    Ok(McReport::new("wick-ibp", samples, sampler.master_seed(), obs).timed(start))
}

/// Real orthonormal coordinates of the `rank` lowest frequencies: mode 0, then `cos`, `sin` pairs.
fn low_coordinates(q: &Field, rank: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rank);
    out.push(q.coeff(0).re);
    let r = std::f64::consts::SQRT_2;
    let mut n = 1;
    while out.len() < rank {
        let c = q.coeff(n);
        out.push(r * c.re);
        if out.len() < rank {
            out.push(r * c.im);
        }
        n += 1;
    }
    out
}

/// Exponential moments `E exp(θQ/ÊQ)` of `Q = ‖Pq‖²` for a rank-`r` spectral projection `P`.
///
/// Passes iff every estimate stays below `(1 - 2θ)^{-1/2}·(1 + 5·stderr)`. The z-scores compare
/// against the exact value `(1 - 2θ/r)^{-r/2}`, with the normalization by `ÊQ` linearized into
/// the standard error.
pub fn quadform_tail_test(sampler: &NoiseSampler, samples: usize, thetas: &[f64], rank: usize) -> Result<McReport> {
    let start = Instant::now();
    let grid = *sampler.grid();
    if rank == 0 || rank > grid.len() - 1 || rank > 2 * sampler.mode_cutoff() + 1 {
        return invalid(format!("rank must lie in 1..={}", (grid.len() - 1).min(2 * sampler.mode_cutoff() + 1)));
    }
    if let Some(t) = thetas.iter().find(|t| !(0.0..=0.45).contains(*t)) {
        return invalid(format!("theta {t} outside [0, 0.45]"));
    }
    if samples < 2 {
        return invalid("need at least two samples");
    }
    let q: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| low_coordinates(&sampler.sample(i), rank).iter().map(|x| x * x).sum())
        .collect();
    let (qbar, _) = summarize(&q);
    let mut obs = Vec::new();
    let mut pass = true;
    let mut extra = BTreeMap::new();
    for &theta in thetas {
        let e: Vec<f64> = q.iter().map(|v| (theta * v / qbar).exp()).collect();
        let qe: Vec<f64> = q.iter().zip(&e).map(|(a, b)| a * b).collect();
        let c = theta * pairwise_sum(&qe) / samples as f64 / (qbar * qbar);
        let infl: Vec<f64> = e.iter().zip(&q).map(|(e, q)| e - c * q).collect();
        let (est, _) = summarize(&e);
        let (_, se) = summarize(&infl);
        let r = rank as f64;
        let exact = (1.0 - 2.0 * theta / r).powf(-r / 2.0);
        let bound = (1.0 - 2.0 * theta).powf(-0.5);
        pass &= est <= bound * (1.0 + 5.0 * se);
        extra.insert(format!("bound[theta={theta}]"), bound);
        obs.push(Observable::new(format!("theta={theta}"), est, se, exact));
    }
    let mut report = McReport::new("quadform-tail", samples, sampler.master_seed(), obs);
    report.pass = pass;
    report.pass_rule = "estimate <= (1-2theta)^(-1/2) * (1 + 5 stderr)".into();
    report.extra = extra;
    report.extra.insert("rank".into(), rank as f64);
    Ok(report.timed(start))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSplitSummary {
    pub repetitions: usize,
    pub passes: usize,
    pub worst_z: f64,
    pub pass: bool,
}

/// Compares the characteristic functional on the two halves of one ensemble, `reps` times.
pub fn null_split_test(
    grid: TorusGrid,
    samples: usize,
    reps: usize,
    seed: u64,
    test_fns: &[Field],
) -> Result<NullSplitSummary> {
    if samples < 4 {
        return invalid("need at least four samples");
    }
    let mut passes = 0;
    let mut worst: f64 = 0.0;
    for r in 0..reps as u64 {
        let sampler = NoiseSampler::new(grid, seed.wrapping_add(r));
        let half = samples / 2;
        let pairings: Vec<Vec<f64>> = (0..(2 * half) as u64)
            .into_par_iter()
            .map(|i| {
                let q = sampler.sample(i);
                test_fns.iter().map(|f| f.pairing(&q).expect("grids checked").re).collect()
            })
            .collect();
        let mut obs = Vec::new();
        for j in 0..test_fns.len() {
            for (part, map) in [("re", f64::cos as fn(f64) -> f64), ("im", f64::sin)] {
                let v: Vec<f64> = pairings.iter().map(|p| map(p[j])).collect();
                let (a, sa) = summarize(&v[..half]);
                let (b, sb) = summarize(&v[half..]);
                obs.push(Observable::new(format!("split[{j}].{part}"), a - b, sa.hypot(sb), 0.0));
            }
        }
        let rep = McReport::new("null-split", samples, sampler.master_seed(), obs);
        worst = worst.max(rep.max_abs_z());
        passes += rep.pass as usize;
    }
    Ok(NullSplitSummary { repetitions: reps, passes, worst_z: worst, pass: 100 * passes >= 99 * reps })
}

/// Smooth zero-mean test functions of unit `L²` norm scaled by `amplitude`, resolved on `grid`.
pub fn standard_test_functions(grid: TorusGrid, amplitude: f64) -> Vec<Field> {
    let l = grid.half_period();
    let w = std::f64::consts::PI / l;
    let raw = [
        Field::from_fn(grid, |x| (w * x).cos()),
        Field::from_fn(grid, |x| (2.0 * w * x).sin() + 0.5 * (3.0 * w * x).cos()),
        Field::from_fn(grid, |x| (-x * x).exp() * (1.0 + x)),
    ];
    raw.into_iter().map(|f| &f * (amplitude / f.l2_norm())).collect()
}
