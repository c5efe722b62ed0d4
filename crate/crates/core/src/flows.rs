//! Time integration of the `H_k` flows and of KdV.
//!
//! Both integrators are integrating-factor RK4 in Fourier space: the linearization at
//! `q = 0` is applied exactly as a Fourier multiplier and only the remainder is stepped.

use crate::error::{invalid, LabError, Result};
use crate::field::Field;
use crate::grid::TorusGrid;
use crate::spectral::{
    alpha_from_green, band_tail, conserved_basics, diag_green_with, hamiltonian_from_alpha, DiagGreen,
    GreenMethod, SpectralPoint,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Lawson RK4 with the exact linear propagator.
    IntegratingFactorRk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Spectral parameter of the `H_k` flow; for KdV an optional point at which `α` is monitored.
    pub k: Option<SpectralPoint>,
    pub dt: f64,
    /// Signed horizon; negative values integrate backwards.
    pub horizon: f64,
    pub scheme: Scheme,
    pub record_stride: usize,
    pub green: GreenMethod,
    /// Largest accepted relative change of `α` over one step.
    pub alpha_guard: Option<f64>,
    /// Abort when `sup ‖q(t)‖_{H^{-1}}` leaves `10(‖q0‖ + ‖q0‖³)`.
    pub monitor_bound: bool,
}

impl FlowConfig {
    pub fn hk(k: SpectralPoint, dt: f64, horizon: f64) -> Self {
        Self {
            k: Some(k),
            dt,
            horizon,
            scheme: Scheme::IntegratingFactorRk4,
            record_stride: 1,
            green: GreenMethod::Resolvent,
            alpha_guard: Some(1e-6),
            monitor_bound: true,
        }
    }

    pub fn kdv(dt: f64, horizon: f64) -> Self {
        Self { k: None, alpha_guard: None, ..Self::hk(SpectralPoint::real(1.0).expect("nonzero"), dt, horizon) }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_green(mut self, method: GreenMethod) -> Self {
        self.green = method;
        self
    }

    pub fn with_alpha_guard(mut self, guard: Option<f64>) -> Self {
        self.alpha_guard = guard;
        self
    }

    pub fn with_monitor_point(mut self, k: SpectralPoint) -> Self {
        self.k = Some(k);
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon.abs() / self.dt).round() as usize
    }

    fn signed_dt(&self) -> f64 {
        if self.horizon < 0.0 {
            -self.dt
        } else {
            self.dt
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("time step must be positive, got {}", self.dt));
        }
        if !self.horizon.is_finite() {
            return invalid("horizon must be finite");
        }
        let steps = self.horizon.abs() / self.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return invalid(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
        }
        if self.record_stride == 0 {
            return invalid("record stride must be at least 1");
        }
        Ok(())
    }
}

/// Conserved quantities at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub time: f64,
    pub mass: f64,
    pub momentum: f64,
    pub alpha: Option<[f64; 2]>,
    pub hk: Option<f64>,
    pub kdv_energy: Option<f64>,
    pub hminus1: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: TorusGrid,
    times: Vec<f64>,
    snapshots: Vec<Field>,
    records: Vec<Record>,
    green: GreenMethod,
}

impl Trajectory {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Field] {
        &self.snapshots
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn green_method(&self) -> GreenMethod {
        self.green
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("trajectories hold the initial state")
    }

    /// Snapshot recorded at `t`, matched to within a small fraction of the spacing.
    pub fn at(&self, t: f64) -> Result<&Field> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .map(|i| &self.snapshots[i])
            .ok_or_else(|| LabError::InvalidInput(format!("no snapshot recorded at t = {t}")))
    }

    /// Largest relative deviation of a recorded quantity from its initial value.
    pub fn max_relative_drift(&self, f: impl Fn(&Record) -> f64) -> f64 {
        let r0 = f(&self.records[0]);
        let scale = r0.abs().max(1e-300);
        self.records.iter().map(|r| (f(r) - r0).abs() / scale).fold(0.0, f64::max)
    }

    pub fn max_alpha_drift(&self) -> Option<f64> {
        let a0 = self.records[0].alpha?;
        let a0 = Complex64::new(a0[0], a0[1]);
        let scale = a0.norm().max(1e-300);
        Some(
            self.records
                .iter()
                .filter_map(|r| r.alpha)
                .map(|a| (Complex64::new(a[0], a[1]) - a0).norm() / scale)
                .fold(0.0, f64::max),
        )
    }

    /// Writes `conserved.csv` and one Field JSON per snapshot into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::fs::File::create(dir.join("conserved.csv"))?;
        writeln!(csv, "time,mass,momentum,alpha_re,alpha_im,hk,kdv_energy,hminus1")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.time,
                r.mass,
                r.momentum,
                opt(r.alpha.map(|a| a[0])),
                opt(r.alpha.map(|a| a[1])),
                opt(r.hk),
                opt(r.kdv_energy),
                r.hminus1
            )?;
        }
        for (i, f) in self.snapshots.iter().enumerate() {
            std::fs::write(dir.join(format!("snapshot_{i:05}.json")), f.to_json_string()?)?;
        }
        Ok(())
    }
}

/// `Re{16k⁵g' + 4k²q'}` from a known Green's function.
pub fn hk_vector_field(q: &Field, point: &SpectralPoint, green: &DiagGreen) -> Field {
    let k = point.k();
    let a = green.derivative() * (16.0 * k.powi(5));
    let b = &q.derivative() * (4.0 * k * k);
    (&a + &b).real_part()
}

pub fn hk_rhs_with(q: &Field, point: &SpectralPoint, method: GreenMethod) -> Result<Field> {
    point.require_strict()?;
    let green = diag_green_with(q, point, method)?;
    Ok(hk_vector_field(q, point, &green))
}

/// The `H_k` vector field with `g` from the dense resolvent.
pub fn hk_rhs(q: &Field, point: &SpectralPoint) -> Result<Field> {
    hk_rhs_with(q, point, GreenMethod::Resolvent)
}

/// `δH_k/δq = Re{16k⁵g - 8k⁴} + 4Re(k²)q`.
pub fn hk_gradient(q: &Field, point: &SpectralPoint, green: &DiagGreen) -> Field {
    let k = point.k();
    let c = Field::complex_constant(*q.grid(), 8.0 * k.powi(4));
    let a = &(green.field() * (16.0 * k.powi(5))) - &c;
    &a.real_part() + &(q * (4.0 * point.energy()))
}

/// Symbol of `g` linearized at `q = 0`: `g ≈ 1/(2k) + s(ξ)q̂(ξ)`.
fn green_linear_symbol(grid: &TorusGrid, point: &SpectralPoint, method: GreenMethod) -> Vec<Complex64> {
    let k = point.k();
    match method {
        GreenMethod::Riccati => grid.frequencies().iter().map(|xi| -1.0 / (k * (xi * xi + 4.0 * k * k))).collect(),
        GreenMethod::Resolvent => {
            // -diag(R0 V R0)/h is a convolution of q with the squared free kernel.
            let n = grid.len();
            let h = grid.spacing();
            let k2 = point.k2();
            let mut r: Vec<Complex64> =
                grid.frequencies().iter().map(|xi| 1.0 / ((xi * xi + k2) * n as f64)).collect();
            crate::fft::inverse(&mut r);
            let mut sq: Vec<Complex64> = r.iter().map(|z| z * z).collect();
            crate::fft::forward(&mut sq);
            let (_, t1) = band_tail(grid, point);
            sq.into_iter().map(|z| -z / h + t1).collect()
        }
    }
}

trait Evolution {
    fn linear(&self) -> &[Complex64];
    fn nonlinear(&self, q: &Field) -> Result<(Field, Option<DiagGreen>)>;
}

struct HkSystem {
    point: SpectralPoint,
    method: GreenMethod,
    linear: Vec<Complex64>,
}

impl HkSystem {
    fn new(grid: &TorusGrid, point: SpectralPoint, method: GreenMethod) -> Self {
        let k = point.k();
        let s = green_linear_symbol(grid, &point, method);
        let mut linear: Vec<Complex64> = grid
            .frequencies()
            .iter()
            .zip(&s)
            .map(|(xi, s)| I * xi * (16.0 * k.powi(5) * s + 4.0 * k * k).re)
            .collect();
        linear[grid.nyquist_slot()] = Complex64::new(0.0, 0.0);
        Self { point, method, linear }
    }

    fn green(&self, q: &Field) -> Result<DiagGreen> {
        diag_green_with(q, &self.point, self.method)
    }
}

impl Evolution for HkSystem {
    fn linear(&self) -> &[Complex64] {
        &self.linear
    }

    fn nonlinear(&self, q: &Field) -> Result<(Field, Option<DiagGreen>)> {
        let green = self.green(q)?;
        let full = hk_vector_field(q, &self.point, &green);
        let lin = apply_symbol(q, &self.linear);
        Ok((&full - &lin, Some(green)))
    }
}

struct KdvSystem {
    linear: Vec<Complex64>,
}

impl KdvSystem {
    fn new(grid: &TorusGrid) -> Self {
        let mut linear: Vec<Complex64> = grid.frequencies().iter().map(|xi| I * xi.powi(3)).collect();
        linear[grid.nyquist_slot()] = Complex64::new(0.0, 0.0);
        Self { linear }
    }
}

impl Evolution for KdvSystem {
    fn linear(&self) -> &[Complex64] {
        &self.linear
    }

    fn nonlinear(&self, q: &Field) -> Result<(Field, Option<DiagGreen>)> {
        Ok((&q.dealiased_product(q)?.derivative() * 3.0, None))
    }
}

fn apply_symbol(q: &Field, symbol: &[Complex64]) -> Field {
    let c = q.coeffs().iter().zip(symbol).map(|(a, b)| a * b).collect();
    Field::from_coeffs(*q.grid(), c, q.is_real()).expect("length matches grid")
}

fn axpy(a: &Field, t: f64, b: &Field) -> Field {
    a + &(b * t)
}

/// One Lawson RK4 step; returns the new state and the stage-one Green's function.
fn lawson_step(sys: &dyn Evolution, q: &Field, dt: f64, half: &[Complex64]) -> Result<(Field, Option<DiagGreen>)> {
    let e = |f: &Field| apply_symbol(f, half);
    let (a, green) = sys.nonlinear(q)?;
    let eq = e(q);
    let (b, _) = sys.nonlinear(&e(&axpy(q, dt / 2.0, &a)))?;
    let (c, _) = sys.nonlinear(&axpy(&eq, dt / 2.0, &b))?;
    let (d, _) = sys.nonlinear(&e(&axpy(&eq, dt, &c)))?;
    let inner = &e(&axpy(q, dt / 6.0, &a)) + &(&(&b + &c) * (dt / 3.0));
    Ok((axpy(&e(&inner), dt / 6.0, &d), green))
}

fn record(q: &Field, t: f64, point: Option<&SpectralPoint>, green: Option<&DiagGreen>, kdv: bool) -> Result<Record> {
    let c = conserved_basics(q);
    let (alpha, hk) = match (point, green) {
        (Some(p), Some(g)) => {
            let a = alpha_from_green(q, p, g)?;
            (Some([a.re, a.im]), Some(hamiltonian_from_alpha(q, p, a)))
        }
        _ => (None, None),
    };
    Ok(Record {
        time: t,
        mass: c.mass,
        momentum: c.momentum,
        alpha,
        hk,
        kdv_energy: kdv.then_some(c.kdv_energy),
        hminus1: q.sobolev_norm(-1.0, 1.0),
    })
}

struct Monitor {
    point: Option<SpectralPoint>,
    method: GreenMethod,
    kdv: bool,
}

impl Monitor {
    fn green_for(&self, q: &Field, stage_one: Option<DiagGreen>) -> Result<Option<DiagGreen>> {
        match (stage_one, self.point) {
            (Some(g), _) => Ok(Some(g)),
            (None, Some(p)) => Ok(Some(diag_green_with(q, &p, self.method)?)),
            (None, None) => Ok(None),
        }
    }
}

fn integrate(sys: &dyn Evolution, q0: &Field, cfg: &FlowConfig, monitor: Monitor) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = *q0.grid();
    let dt = cfg.signed_dt();
    let half: Vec<Complex64> = sys.linear().iter().map(|l| (l * (dt / 2.0)).exp()).collect();
    let steps = cfg.steps();
    let h0 = q0.sobolev_norm(-1.0, 1.0);
    let envelope = 10.0 * (h0 + h0.powi(3));
    let l2_start = q0.l2_norm();

    let mut q = q0.clone();
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut prev_alpha: Option<Complex64> = None;
    let mut carried: Option<DiagGreen> = None;

    for n in 0..=steps {
        let t = n as f64 * dt;
        let (next, green) = if n < steps {
            let (next, green) = lawson_step(sys, &q, dt, &half)?;
            (Some(next), green)
        } else {
            (None, None)
        };
        let green = monitor.green_for(&q, green.or(carried.take()))?;

        if let (Some(guard), Some(p), Some(g)) = (cfg.alpha_guard, monitor.point.as_ref(), green.as_ref()) {
            let a = alpha_from_green(&q, p, g)?;
            if let Some(prev) = prev_alpha {
                // α is a difference of terms of size 2L0|k|, which sets its rounding floor.
                let floor = 1e-6 * grid.period() * p.kappa();
                let drift = (a - prev).norm() / prev.norm().max(floor);
                if drift > guard {
                    return Err(LabError::StepRejected { time: t, drift, limit: guard });
                }
            }
            prev_alpha = Some(a);
        }
        if cfg.monitor_bound && !monitor.kdv {
            let hm = q.sobolev_norm(-1.0, 1.0);
            if hm > envelope * (1.0 + 1e-9) + 1e-12 {
                return Err(LabError::BlowupDetected {
                    time: t,
                    reason: format!("H^-1 norm {hm:e} left the envelope {envelope:e}"),
                });
            }
        }
        if monitor.kdv && l2_start > 0.0 && q.l2_norm() > 10.0 * l2_start {
            return Err(LabError::BlowupDetected { time: t, reason: "L2 norm grew tenfold".into() });
        }
        if !q.coeffs().iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(LabError::BlowupDetected { time: t, reason: "non-finite state".into() });
        }
        if n % cfg.record_stride == 0 || n == steps {
            times.push(t);
            snapshots.push(q.clone());
            records.push(record(&q, t, monitor.point.as_ref(), green.as_ref(), monitor.kdv)?);
        }
        match next {
            Some(nq) => q = nq,
            None => break,
        }
        carried = None;
    }
    Ok(Trajectory { grid, times, snapshots, records, green: monitor.method })
}

/// Integrates `q̇ = Re{16k⁵g' + 4k²q'}`.
pub fn evolve_hk(q0: &Field, cfg: &FlowConfig) -> Result<Trajectory> {
    let point = cfg.k.ok_or_else(|| LabError::InvalidInput("the H_k flow needs a spectral point".into()))?;
    point.require_strict()?;
    if !q0.is_real() {
        return invalid("initial data must be real");
    }
    let sys = HkSystem::new(q0.grid(), point, cfg.green);
    integrate(&sys, q0, cfg, Monitor { point: Some(point), method: cfg.green, kdv: false })
}

/// Integrates `q_t = -q''' + 6qq'`.
pub fn evolve_kdv(q0: &Field, cfg: &FlowConfig) -> Result<Trajectory> {
    if !q0.is_real() {
        return invalid("initial data must be real");
    }
    let tail = q0.spectral_tail();
    if tail > 1e-10 {
        return invalid(format!("initial data is under-resolved (spectral tail {tail:e})"));
    }
    let cfl = 0.5 / (6.0 * q0.max_abs() * q0.grid().max_frequency());
    if cfg.dt > cfl {
        return invalid(format!("dt = {} exceeds the nonlinear stability limit {cfl:e}", cfg.dt));
    }
    let sys = KdvSystem::new(q0.grid());
    integrate(&sys, q0, cfg, Monitor { point: cfg.k, method: cfg.green, kdv: true })
}

fn same_point(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= 1e-12 * a.norm().max(b.norm())
}

/// `H^{-2}_{|ϰ|}` norm of `∂_t 1/(2g(ϰ))` (centered difference) minus the spatial derivative
/// of `(k² + k̄²)/g(ϰ) - 2k⁵g(k)/((k² - ϰ²)g(ϰ)) - 2k̄⁵g(k̄)/((k̄² - ϰ²)g(ϰ))`.
pub fn dtg_residual(
    traj: &Trajectory,
    k: &SpectralPoint,
    vk: &SpectralPoint,
    t: f64,
    dt_fd: f64,
) -> Result<f64> {
    k.require_strict()?;
    vk.require_strict()?;
    let (kk, vv) = (k.k(), vk.k());
    if same_point(kk, vv) || same_point(kk, -vv) || same_point(kk.conj(), vv) || same_point(kk.conj(), -vv) {
        return invalid("the two spectral parameters must differ (up to sign and conjugation)");
    }
    let method = traj.green_method();
    let (qm, q, qp) = (traj.at(t - dt_fd)?, traj.at(t)?, traj.at(t + dt_fd)?);
    let rm = diag_green_with(qm, vk, method)?;
    let rp = diag_green_with(qp, vk, method)?;
    let lhs = &(&(rp.reciprocal() - rm.reciprocal()) * 0.5) * (1.0 / (2.0 * dt_fd));

    let gv = diag_green_with(q, vk, method)?;
    let gk = diag_green_with(q, k, method)?;
    let gkb = diag_green_with(q, &k.conj(), method)?;
    let (k2, kb2, v2) = (kk * kk, kk.conj() * kk.conj(), vv * vv);
    let bracket: Vec<Complex64> = (0..q.grid().len())
        .map(|j| {
            let inv = 1.0 / gv.values()[j];
            (k2 + kb2) * inv
                - 2.0 * kk.powi(5) * gk.values()[j] * inv / (k2 - v2)
                - 2.0 * kk.conj().powi(5) * gkb.values()[j] * inv / (kb2 - v2)
        })
        .collect();
    let rhs = Field::from_nodal(*q.grid(), &bracket)?.derivative();
    Ok((&lhs - &rhs).sobolev_norm(-2.0, vk.kappa()))
}

/// `H^{-2}_{|ϰ|}` norm of `1/(2g(t)) - 1/(2g(0)) - ∂ₓ∫₀ᵗ (q - 2ϰ²)/g ds`, trapezoid in time.
pub fn green_solution_residual(traj: &Trajectory, vk: &SpectralPoint, t: f64) -> Result<f64> {
    vk.require_strict()?;
    let end = traj
        .times()
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or_else(|| LabError::InvalidInput(format!("no snapshot recorded at t = {t}")))?;
    let method = traj.green_method();
    let grid = *traj.grid();
    let two_v2 = Field::complex_constant(grid, 2.0 * vk.k2());
    let greens: Vec<DiagGreen> = traj.snapshots()[..=end]
        .par_iter()
        .map(|q| diag_green_with(q, vk, method))
        .collect::<Result<_>>()?;
    let integrand: Vec<Field> = traj.snapshots()[..=end]
        .iter()
        .zip(&greens)
        .map(|(q, g)| (q - &two_v2).dealiased_product(g.reciprocal()))
        .collect::<Result<_>>()?;
    let mut integral = Field::zeros(grid);
    for i in 0..end {
        let w = 0.5 * (traj.times()[i + 1] - traj.times()[i]);
        integral = &integral + &(&(&integrand[i] + &integrand[i + 1]) * w);
    }
    let lhs = &(greens[end].reciprocal() - greens[0].reciprocal()) * 0.5;
    Ok((&lhs - &integral.derivative()).sobolev_norm(-2.0, vk.kappa()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: [f64; 2],
    pub sup_gap: f64,
}

/// `sup_t ‖q_KdV(t) - q_k(t)‖_{H^{-1}}` for each `k`, Riccati route, every step recorded.
pub fn hk_to_kdv_convergence(q0: &Field, ks: &[SpectralPoint], horizon: f64, dt: f64) -> Result<Vec<ConvergenceRow>> {
    let kdv = evolve_kdv(q0, &FlowConfig::kdv(dt, horizon))?;
    ks.par_iter()
        .map(|p| {
            let cfg = FlowConfig::hk(*p, dt, horizon).with_green(GreenMethod::Riccati);
            let traj = evolve_hk(q0, &cfg)?;
            let gap = traj
                .snapshots()
                .iter()
                .zip(kdv.snapshots())
                .map(|(a, b)| (a - b).sobolev_norm(-1.0, 1.0))
                .fold(0.0, f64::max);
            Ok(ConvergenceRow { k: [p.k().re, p.k().im], sup_gap: gap })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSampler;
    use crate::spectral::{alpha_with, hamiltonian_hk_with};
    use std::f64::consts::PI;

    fn kpi8(m: f64) -> SpectralPoint {
        SpectralPoint::from_polar(m, PI / 8.0).unwrap()
    }

    fn bump(g: TorusGrid) -> Field {
        Field::from_fn(g, |x| 2.0 * (-x * x).exp())
    }

    fn soliton(g: TorusGrid, t: f64) -> Field {
        Field::from_fn(g, |x| -2.0 / (x - 4.0 * t).cosh().powi(2))
    }

    #[test]
    fn rhs_vanishes_on_constants() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        for q in [Field::zeros(g), Field::constant(g, 1.7)] {
            for m in [GreenMethod::Resolvent, GreenMethod::Riccati] {
                assert!(hk_rhs_with(&q, &kpi8(2.0), m).unwrap().l2_norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rhs_is_the_hamiltonian_vector_field() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let q = bump(g);
        let p = kpi8(2.0);
        let f = Field::from_fn(g, |x| (0.5 * x + 0.3).cos() * (-x * x / 8.0).exp());
        let green = diag_green_with(&q, &p, GreenMethod::Riccati).unwrap();
        let grad = hk_gradient(&q, &p, &green);
        let eps = 1e-3;
        let h = |s: f64| hamiltonian_hk_with(&(&q + &(&f * s)), &p, GreenMethod::Riccati).unwrap();
        let central = |e: f64| (h(e) - h(-e)) / (2.0 * e);
        let fd = (4.0 * central(eps / 2.0) - central(eps)) / 3.0;
        let exact = grad.pairing(&f).unwrap().re;
        assert!((fd - exact).abs() < 1e-6 * exact.abs(), "{fd} vs {exact}");
        // The same directional derivative in the α form.
        let a = |s: f64| alpha_with(&(&q + &(&f * s)), &p, GreenMethod::Riccati).unwrap();
        let ca = |e: f64| (a(e) - a(-e)) / (2.0 * e);
        let da = (4.0 * ca(eps / 2.0) - ca(eps)) / 3.0;
        let form = (-16.0 * p.k().powi(5) * da).re + 4.0 * p.energy() * q.pairing(&f).unwrap().re;
        assert!((form - exact).abs() < 1e-6 * exact.abs());
        // The vector field is the derivative of the gradient.
        let rhs = hk_vector_field(&q, &p, &green);
        assert!((&rhs - &grad.derivative()).l2_norm() < 1e-10 * rhs.l2_norm());
    }

    #[test]
    fn trivial_data_are_fixed_points() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        for q0 in [Field::zeros(g), Field::constant(g, 0.8)] {
            let cfg = FlowConfig::hk(kpi8(3.0), 1e-2, 0.2).with_stride(5);
            let t = evolve_hk(&q0, &cfg).unwrap();
            assert!((t.last() - &q0).l2_norm() < 1e-12);
            let t = evolve_kdv(&q0, &FlowConfig::kdv(1e-3, 0.05)).unwrap();
            assert!((t.last() - &q0).l2_norm() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::hk(kpi8(2.0), 0.0, 1.0).validate().is_err());
        assert!(FlowConfig::hk(kpi8(2.0), 0.1, f64::INFINITY).validate().is_err());
        assert!(FlowConfig::hk(kpi8(2.0), 0.3, 1.0).validate().is_err());
        assert!(FlowConfig::kdv(0.1, 1.0).with_stride(0).validate().is_err());
        let g = TorusGrid::new(8.0, 128).unwrap();
        assert!(evolve_kdv(&bump(g), &FlowConfig::kdv(0.01, 0.1)).is_err());
        let rough = NoiseSampler::new(g, 1).sample(0);
        assert!(evolve_kdv(&rough, &FlowConfig::kdv(1e-4, 1e-3)).is_err());
        let weak = SpectralPoint::real(3.0).unwrap();
        assert!(evolve_hk(&bump(g), &FlowConfig::hk(weak, 1e-3, 1e-3)).is_err());
    }

    #[test]
    fn linear_symbols_match_finite_differences() {
        // The exact propagator must agree with the linearization of the full vector field.
        let g = TorusGrid::new(8.0, 64).unwrap();
        let p = kpi8(2.0);
        let f = Field::from_fn(g, |x| (-x * x).exp());
        let eps = 1e-3;
        for m in [GreenMethod::Resolvent, GreenMethod::Riccati] {
            let sys = HkSystem::new(&g, p, m);
            let lin = apply_symbol(&f, sys.linear());
            // The centered difference cancels the quadratic part of the vector field.
            let plus = hk_rhs_with(&(&f * eps), &p, m).unwrap();
            let minus = hk_rhs_with(&(&f * -eps), &p, m).unwrap();
            let fd = &(&plus - &minus) * (0.5 / eps);
            let err = (&lin - &fd).l2_norm() / fd.l2_norm();
            assert!(err < 1e-5, "{m:?}: {err}");
        }
    }

    #[test]
    fn hk_conservation_on_bump_data() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let cfg = FlowConfig::hk(kpi8(4.0), 1e-3, 0.25).with_green(GreenMethod::Riccati).with_stride(50);
        let t = evolve_hk(&bump(g), &cfg).unwrap();
        assert!(t.max_alpha_drift().unwrap() < 1e-6);
        assert!(t.max_relative_drift(|r| r.mass) < 1e-9);
        assert!(t.max_relative_drift(|r| r.momentum) < 1e-6);
        assert!(t.max_relative_drift(|r| r.hk.unwrap()) < 1e-6);
    }

    #[test]
    fn time_reversal() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let q0 = bump(g);
        let p = kpi8(3.0);
        let fwd = evolve_hk(&q0, &FlowConfig::hk(p, 1e-3, 0.1).with_green(GreenMethod::Riccati).with_stride(100)).unwrap();
        let back =
            evolve_hk(fwd.last(), &FlowConfig::hk(p, 1e-3, -0.1).with_green(GreenMethod::Riccati).with_stride(100)).unwrap();
        assert!((back.last() - &q0).sobolev_norm(-1.0, 1.0) < 1e-7);
        assert!(back.times().last().unwrap() < &0.0);
    }

    #[test]
    fn flows_commute() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let q0 = bump(g);
        let (a, b) = (kpi8(2.0), SpectralPoint::from_polar(3.0, PI / 8.0 + 0.1).unwrap());
        let run = |p: SpectralPoint, q: &Field| {
            evolve_hk(q, &FlowConfig::hk(p, 1e-3, 0.1).with_green(GreenMethod::Riccati).with_stride(100))
                .unwrap()
                .last()
                .clone()
        };
        let ab = run(b, &run(a, &q0));
        let ba = run(a, &run(b, &q0));
        assert!((&ab - &ba).sobolev_norm(-1.0, 1.0) < 1e-5);
    }

    #[test]
    fn fourth_order_in_time() {
        let g = TorusGrid::new(8.0, 64).unwrap();
        let q0 = bump(g);
        let p = kpi8(2.0);
        let hk = |dt: f64| {
            let cfg = FlowConfig::hk(p, dt, 0.2).with_green(GreenMethod::Riccati).with_stride(100_000);
            evolve_hk(&q0, &cfg).unwrap().last().clone()
        };
        let (a, b, c) = (hk(0.02), hk(0.01), hk(0.005));
        let ratio = (&a - &b).l2_norm() / (&b - &c).l2_norm();
        assert!((ratio - 16.0).abs() < 3.0, "H_k ratio {ratio}");

        let g = TorusGrid::new(16.0, 256).unwrap();
        let s0 = soliton(g, 0.0);
        let kdv = |dt: f64| evolve_kdv(&s0, &FlowConfig::kdv(dt, 0.16).with_stride(100_000)).unwrap().last().clone();
        let (a, b, c) = (kdv(8e-4), kdv(4e-4), kdv(2e-4));
        let ratio = (&a - &b).l2_norm() / (&b - &c).l2_norm();
        assert!((ratio - 16.0).abs() < 3.0, "KdV ratio {ratio}");
    }

    #[test]
    fn kdv_soliton_travels_right_at_speed_four() {
        let g = TorusGrid::new(16.0, 256).unwrap();
        let traj = evolve_kdv(&soliton(g, 0.0), &FlowConfig::kdv(1e-3, 1.0).with_stride(250)).unwrap();
        let err = (traj.last() - &soliton(g, 1.0)).l2_norm();
        assert!(err < 1e-6, "{err}");
        assert!(traj.max_relative_drift(|r| r.mass) < 1e-12);
        assert!(traj.max_relative_drift(|r| r.momentum) < 1e-8);
        assert!(traj.max_relative_drift(|r| r.kdv_energy.unwrap()) < 1e-8);
    }

    #[test]
    fn dtg_identity_vanishes_for_zero_data() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        let traj = evolve_hk(&Field::zeros(g), &FlowConfig::hk(kpi8(1.5), 1e-3, 0.01)).unwrap();
        let r = dtg_residual(&traj, &kpi8(1.5), &kpi8(2.0), 0.005, 1e-3).unwrap();
        assert!(r < 1e-10);
        assert!(dtg_residual(&traj, &kpi8(1.5), &kpi8(1.5), 0.005, 1e-3).is_err());
    }

    #[test]
    fn green_solution_trivial_cases() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        let cfg = FlowConfig::kdv(1e-3, 0.02).with_green(GreenMethod::Riccati);
        let traj = evolve_kdv(&Field::constant(g, 0.5), &cfg).unwrap();
        assert!(green_solution_residual(&traj, &kpi8(2.0), 0.02).unwrap() < 1e-10);
        let g = TorusGrid::new(16.0, 256).unwrap();
        let traj = evolve_kdv(&soliton(g, 0.0), &FlowConfig::kdv(1e-3, 0.01).with_green(GreenMethod::Riccati)).unwrap();
        assert_eq!(green_solution_residual(&traj, &kpi8(2.0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn convergence_of_trivial_data() {
        let g = TorusGrid::new(4.0, 32).unwrap();
        let ks = [kpi8(4.0), kpi8(8.0)];
        for q0 in [Field::zeros(g), Field::constant(g, 1.0)] {
            for row in hk_to_kdv_convergence(&q0, &ks, 0.05, 1e-3).unwrap() {
                assert!(row.sup_gap < 1e-9);
            }
        }
    }

    #[test]
    fn export_writes_csv_and_snapshots() {
        let g = TorusGrid::new(4.0, 16).unwrap();
        let traj = evolve_hk(&Field::zeros(g), &FlowConfig::hk(kpi8(2.0), 0.01, 0.02)).unwrap();
        let dir = std::env::temp_dir().join(format!("wnkdv-export-{}", std::process::id()));
        traj.export(&dir).unwrap();
        let csv = std::fs::read_to_string(dir.join("conserved.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + traj.records().len());
        assert!(dir.join("snapshot_00002.json").exists());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
