//! Defect experiments: sharpening fronts from phase mismatch, director twisting near
//! stagnation points of steady flows, and eigenvalues leaving the physical interval
//! when the flow also stretches (`ξ ≠ 0`).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::beris::{bulk_integral, eigen_range};
use crate::bulk_ode::integrate_r0;
use crate::diag::{fmt_f64, DiagRecord};
use crate::error::{Error, Result};
use crate::flows::{PrescribedFlow, StationaryFlow};
use crate::limit::{
    backward_characteristic, lagrangian_oracle_series, manifold_distance, FieldSource, LimitSolver,
    TensorSource, TAIL_TOLERANCE,
};
use crate::qtensor::{stationary_scalars, Params, QTensor};
use crate::spectral::{grad_l2_sq, max_gradient, Field, Grid, Kind};
use crate::trotter::reaction_flow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagnationKind {
    /// Local extremum of the stream function.
    Elliptic,
    /// Saddle of the stream function.
    Hyperbolic,
    /// Singular stream-function Hessian, e.g. a point on a line of zeros.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagnationPoint {
    pub position: [f64; 2],
    pub kind: StagnationKind,
    pub omega: f64,
    /// `|v|` at the refined position.
    pub residual: f64,
    /// Vorticity differs from its value here at points arbitrarily close by.
    pub standard: bool,
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn torus_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |u: f64, v: f64| {
        let e = (u - v).rem_euclid(2.0 * PI);
        e.min(2.0 * PI - e)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

/// Zeros of the velocity located from grid minima of `|v|²` and refined by Newton
/// iteration with a pseudo-inverse step.
pub fn find_stagnation_points(
    flow: &StationaryFlow,
    grid: &Arc<Grid>,
) -> Result<Vec<StagnationPoint>> {
    if flow.is_zero() {
        return Err(Error::DegenerateFlow(format!(
            "flow '{}' vanishes identically: every point stagnates",
            flow.name
        )));
    }
    let n = grid.n();
    let speed2: Vec<f64> = (0..grid.len())
        .map(|i| {
            let (x, y) = grid.point(i);
            let v = flow.velocity(x, y, 0.0);
            v[0] * v[0] + v[1] * v[1]
        })
        .collect();
    let vmax = speed2.iter().cloned().fold(0.0, f64::max).sqrt();
    let idx = |ix: usize, iy: usize| grid.index(ix % n, iy % n);
    let mut found: Vec<StagnationPoint> = Vec::new();
    for ix in 0..n {
        for iy in 0..n {
            let here = speed2[idx(ix, iy)];
            let is_min = (0..3).all(|dx| {
                (0..3).all(|dy| {
                    (dx == 1 && dy == 1) || here <= speed2[idx(ix + n + dx - 1, iy + n + dy - 1)]
                })
            });
            if !is_min {
                continue;
            }
            let (x, y) = grid.point(idx(ix, iy));
            match newton(flow, [x, y], 1e-12 * vmax.max(1.0)) {
                Some(pt) => {
                    if found.iter().all(|f| torus_dist(f.position, pt) > 1e-6) {
                        found.push(classify(flow, pt));
                    }
                }
                None => log::warn!(
                    "stagnation search from ({x:.4}, {y:.4}) did not converge; point dropped"
                ),
            }
        }
    }
    Ok(found)
}

fn newton(flow: &StationaryFlow, start: [f64; 2], tol: f64) -> Option<[f64; 2]> {
    let mut p = Vector2::new(start[0], start[1]);
    for _ in 0..60 {
        let v = flow.velocity(p[0], p[1], 0.0);
        let r = Vector2::new(v[0], v[1]);
        if r.norm() <= tol {
            return Some([wrap(p[0]), wrap(p[1])]);
        }
        let g = flow.gradient(p[0], p[1], 0.0);
        let j = Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
        let step = j.svd(true, true).pseudo_inverse(1e-10).ok()? * r;
        if !step.iter().all(|s| s.is_finite()) {
            return None;
        }
        p -= step;
    }
    None
}

fn classify(flow: &StationaryFlow, pt: [f64; 2]) -> StagnationPoint {
    let h = flow.stream_hessian(pt[0], pt[1]);
    let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
    let scale = (h[0][0].abs() + h[1][1].abs() + h[0][1].abs()).max(1e-300);
    let kind = if det.abs() <= 1e-8 * scale * scale {
        StagnationKind::Degenerate
    } else if det > 0.0 {
        StagnationKind::Elliptic
    } else {
        StagnationKind::Hyperbolic
    };
    let v = flow.velocity(pt[0], pt[1], 0.0);
    let omega = flow.vorticity(pt[0], pt[1], 0.0);
    // vorticity must vary at every scale of a shrinking sequence, in some direction
    let standard = (0..8).all(|k| {
        let r = 0.5 * 0.5f64.powi(k);
        (0..8).any(|d| {
            let a = d as f64 * PI / 4.0;
            (flow.vorticity(pt[0] + r * a.cos(), pt[1] + r * a.sin(), 0.0) - omega).abs() > 1e-13
        })
    });
    StagnationPoint {
        position: pt,
        kind,
        omega,
        residual: v[0].hypot(v[1]),
        standard,
    }
}

/// One row of a defect time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectRow {
    pub t: f64,
    pub max_grad_r: f64,
    pub resolved: bool,
    pub probe_angle: Option<f64>,
}

pub const DEFECT_CSV_HEADER: &str = "t,max_grad_R,resolved,probe_angle";

pub fn write_defect_csv<W: Write>(mut w: W, rows: &[DefectRow]) -> std::io::Result<()> {
    writeln!(w, "{DEFECT_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.max_grad_r),
            u8::from(r.resolved),
            r.probe_angle.map(fmt_f64).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Ratio of a series' values at the samples nearest `t_late` and `t_early`.
fn ratio_at(ts: &[(f64, f64)], t_early: f64, t_late: f64) -> Option<f64> {
    let near = |t: f64| {
        ts.iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .filter(|s| (s.0 - t).abs() < 1e-9 * (1.0 + t))
            .map(|s| s.1)
    };
    Some(near(t_late)? / near(t_early)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// Step of the per-point eigenframe integrator.
    pub dt: f64,
    pub sample_dt: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            sample_dt: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseReport {
    pub records: Vec<DiagRecord>,
    pub field: Field,
    /// Initial amplitude `x e^{-x²}` at each grid point.
    pub initial_amplitude: Vec<f64>,
}

impl PhaseReport {
    pub fn rows(&self) -> Vec<DefectRow> {
        self.records
            .iter()
            .map(|r| DefectRow {
                t: r.t,
                max_grad_r: r.max_grad_q,
                resolved: r.resolved,
                probe_angle: None,
            })
            .collect()
    }

    /// `max|∇R|(t_late) / max|∇R|(t_early)` from the recorded samples.
    pub fn growth_ratio(&self, t_early: f64, t_late: f64) -> Option<f64> {
        let s: Vec<(f64, f64)> = self.records.iter().map(|r| (r.t, r.max_grad_q)).collect();
        ratio_at(&s, t_early, t_late)
    }

    /// Largest `|s - s₊|` over points with initial amplitude `≥ 0.1 max`, and largest
    /// `|s - s₋|` over points with amplitude `≤ -0.1 max`, for the final field.
    pub fn bulk_deviation(&self, p: &Params) -> Result<(f64, f64)> {
        let st = stationary_scalars(p)?;
        let amax = self
            .initial_amplitude
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let (mut plus, mut minus) = (0.0f64, 0.0f64);
        for (i, &a0) in self.initial_amplitude.iter().enumerate() {
            let s = uniaxial_amplitude(&self.field.q_at(i));
            if a0 >= 0.1 * amax {
                plus = plus.max((s - st.s_plus).abs());
            } else if a0 <= -0.1 * amax {
                minus = minus.max((s - st.s_minus).abs());
            }
        }
        Ok((plus, minus))
    }
}

/// `s` such that `Q = s(e₁⊗e₁ - I/3)` for tensors of that form.
pub fn uniaxial_amplitude(q: &QTensor) -> f64 {
    1.5 * q.q11
}

/// `x e^{-x²}(e₁⊗e₁ - I/3)` on the grid.
pub fn phase_mismatch_initial(grid: &Arc<Grid>) -> (Field, Vec<f64>) {
    let amp: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.point(i).0;
            x * (-x * x).exp()
        })
        .collect();
    let e1 = QTensor::uniaxial(1.0, nalgebra::Vector3::x());
    let mut f = Field::zeros(grid, Kind::QTensor);
    for (i, a) in amp.iter().enumerate() {
        f.set_q(i, *a * e1);
    }
    (f, amp)
}

fn phase_record(r: &Field, p: &Params, t: f64) -> DiagRecord {
    let rs = r.to_spectral();
    let (min_eig, max_eig) = eigen_range(r);
    DiagRecord {
        t,
        min_eig,
        max_eig,
        linf_q: r.linf_norm(),
        kinetic: 0.0,
        free_energy: 0.5 * p.eps * p.eps * grad_l2_sq(&rs) + p.eps * bulk_integral(r, p),
        max_grad_q: max_gradient(&rs),
        div_u: 0.0,
        y: None,
        resolved: rs.tail_fraction() <= TAIL_TOLERANCE,
    }
}

/// Bulk relaxation without flow from the phase-mismatched profile; `max|∇R|` is
/// measured spectrally at every sample.
pub fn phase_mismatch_run(
    p: &Params,
    grid: &Arc<Grid>,
    t_end: f64,
    cfg: &PhaseConfig,
) -> Result<PhaseReport> {
    p.validate()?;
    if !(p.a < 0.0) {
        return Err(Error::Validation(format!(
            "phase mismatch needs a < 0 (a = {})",
            p.a
        )));
    }
    if !(cfg.dt > 0.0 && cfg.sample_dt > 0.0 && t_end >= 0.0) {
        return Err(Error::Validation(
            "need dt > 0, sample_dt > 0, t_end >= 0".into(),
        ));
    }
    let (mut r, amp) = phase_mismatch_initial(grid);
    let mut records = vec![phase_record(&r, p, 0.0)];
    let n_samples = (t_end / cfg.sample_dt - 1e-9).ceil().max(0.0) as usize;
    let mut t = 0.0;
    for k in 1..=n_samples {
        let t_next = (k as f64 * cfg.sample_dt).min(t_end);
        r = reaction_flow(&r, p, t_next - t, cfg.dt)?;
        t = t_next;
        records.push(phase_record(&r, p, t));
    }
    Ok(PhaseReport {
        records,
        field: r,
        initial_amplitude: amp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexConfig {
    /// Step of the transport solver.
    pub dt: f64,
    /// Step of the backward characteristics.
    pub oracle_dt: f64,
    /// Distances of the probe points from the stagnation point.
    pub probe_radii: Vec<f64>,
}

impl Default for VortexConfig {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            oracle_dt: 2.5e-3,
            probe_radii: vec![1.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VortexRow {
    pub t: f64,
    pub max_grad_r: f64,
    pub oracle_max_grad: Option<f64>,
    pub tail: f64,
    /// Every step up to `t` stayed resolved.
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub center: [f64; 2],
    pub probe: [f64; 2],
    pub delta_omega: f64,
    /// `π / |Δω|`, when the directors have turned by `π/2` relative to each other.
    pub t_star: f64,
    pub predicted_angle: f64,
    pub oracle_angle: Option<f64>,
    /// Measured on the transport solution when `t_star` lies within the run.
    pub pde_angle: Option<f64>,
    pub pde_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexReport {
    pub rows: Vec<VortexRow>,
    pub probes: Vec<ProbeResult>,
    pub stagnation: Vec<StagnationPoint>,
}

impl VortexReport {
    pub fn growth_ratio(&self, t_early: f64, t_late: f64) -> Option<f64> {
        let s: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.t, r.max_grad_r)).collect();
        ratio_at(&s, t_early, t_late)
    }

    pub fn oracle_growth_ratio(&self, t_early: f64, t_late: f64) -> Option<f64> {
        let s: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.t, r.oracle_max_grad?)))
            .collect();
        ratio_at(&s, t_early, t_late)
    }

    /// Largest relative gap between solver and oracle `max|∇R|` over resolved rows.
    pub fn max_oracle_discrepancy(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.resolved)
            .filter_map(|r| {
                r.oracle_max_grad
                    .map(|o| (r.max_grad_r - o).abs() / o.max(1e-300))
            })
            .reduce(f64::max)
    }

    pub fn defect_rows(&self) -> Vec<DefectRow> {
        let mut rows: Vec<DefectRow> = self
            .rows
            .iter()
            .map(|r| DefectRow {
                t: r.t,
                max_grad_r: r.max_grad_r,
                resolved: r.resolved,
                probe_angle: self
                    .probes
                    .iter()
                    .find(|p| (p.t_star - r.t).abs() < 1e-9 * (1.0 + r.t))
                    .and_then(|p| p.pde_angle),
            })
            .collect();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        rows
    }
}

/// Angle in `[0, π/2]` between the leading eigenvectors of two tensors.
pub fn director_angle(a: &QTensor, b: &QTensor) -> f64 {
    let (_, fa) = a.eigen_decomposition();
    let (_, fb) = b.eigen_decomposition();
    fa.column(2).dot(&fb.column(2)).abs().min(1.0).acos()
}

fn nearest_grid_point(grid: &Grid, x: [f64; 2]) -> usize {
    (0..grid.len())
        .min_by(|&i, &j| {
            let (a, b) = (grid.point(i), grid.point(j));
            torus_dist([a.0, a.1], x).total_cmp(&torus_dist([b.0, b.1], x))
        })
        .expect("non-empty grid")
}

/// Co-rotational transport under a steady flow from `q0`, with `max|∇R|` at `times`
/// and director-angle probes around the elliptic standard stagnation point nearest
/// the origin. Oracle columns are filled when `q0` lies on the `s₊` manifold.
pub fn vortex_defect_run(
    flow: &StationaryFlow,
    p: &Params,
    q0: &Field,
    times: &[f64],
    cfg: &VortexConfig,
) -> Result<VortexReport> {
    if p.xi != 0.0 {
        return Err(Error::Validation(format!(
            "vortex defects need xi = 0 (xi = {})",
            p.xi
        )));
    }
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "times must be positive and strictly ascending".into(),
        ));
    }
    let grid = q0.grid.clone();
    let st = stationary_scalars(p)?;
    let on_manifold = manifold_distance(q0, st.m) <= 1e-8;
    let stagnation = if flow.is_zero() {
        Vec::new()
    } else {
        find_stagnation_points(flow, &grid)?
    };
    let center = stagnation
        .iter()
        .filter(|s| s.kind == StagnationKind::Elliptic && s.standard)
        .min_by(|a, b| {
            a.position[0]
                .hypot(a.position[1])
                .total_cmp(&b.position[0].hypot(b.position[1]))
        });

    let t_last = *times.last().unwrap();
    let source = FieldSource::new(q0);
    let mut probes = Vec::new();
    let mut probe_idx = Vec::new();
    if let Some(c) = center {
        let ci = nearest_grid_point(&grid, c.position);
        let cp = grid.point(ci);
        for &r in &cfg.probe_radii {
            let pi = nearest_grid_point(&grid, [c.position[0] + r, c.position[1]]);
            let pp = grid.point(pi);
            let delta_omega = flow.vorticity(pp.0, pp.1, 0.0) - flow.vorticity(cp.0, cp.1, 0.0);
            if delta_omega == 0.0 {
                continue;
            }
            let t_star = PI / delta_omega.abs();
            let oracle_angle = on_manifold.then(|| {
                let at = |x: (f64, f64)| {
                    let (a, b) = backward_characteristic(flow, [x.0, x.1], t_star, cfg.oracle_dt);
                    source.at(a[0], a[1]).rotate(&b)
                };
                director_angle(&at(cp), &at(pp))
            });
            probes.push(ProbeResult {
                center: [cp.0, cp.1],
                probe: [pp.0, pp.1],
                delta_omega,
                t_star,
                predicted_angle: PI / 2.0,
                oracle_angle,
                pde_angle: None,
                pde_resolved: false,
            });
            probe_idx.push((ci, pi));
        }
    }

    let oracle_fields = if on_manifold {
        Some(lagrangian_oracle_series(q0, flow, p, times, cfg.oracle_dt)?)
    } else {
        None
    };

    let mut schedule: Vec<f64> = times.to_vec();
    schedule.extend(probes.iter().map(|p| p.t_star).filter(|t| *t <= t_last));
    schedule.sort_by(f64::total_cmp);
    let mut sol = LimitSolver::with_flow(flow, q0, *p, 0.0)?;
    let mut resolved = sol.r_spectrum().tail_fraction() <= TAIL_TOLERANCE;
    let mut rows = Vec::new();
    for t in schedule {
        let (n, h) = crate::bulk_ode::steps_for(t - sol.time(), cfg.dt);
        for _ in 0..n {
            sol.step(h)?;
            resolved &= sol.r_spectrum().tail_fraction() <= TAIL_TOLERANCE;
        }
        if let Some(k) = times.iter().position(|x| *x == t) {
            rows.push(VortexRow {
                t,
                max_grad_r: max_gradient(sol.r_spectrum()),
                oracle_max_grad: oracle_fields
                    .as_ref()
                    .map(|o| max_gradient(&o[k].field.to_spectral())),
                tail: sol.r_spectrum().tail_fraction(),
                resolved,
            });
        }
        for (pr, (ci, pi)) in probes.iter_mut().zip(&probe_idx) {
            if pr.t_star == t {
                let r = sol.r();
                pr.pde_angle = Some(director_angle(&r.q_at(*ci), &r.q_at(*pi)));
                pr.pde_resolved = resolved;
            }
        }
    }
    Ok(VortexReport {
        rows,
        probes,
        stagnation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeConfig {
    pub lambda: f64,
    pub xi: f64,
    pub t_end: f64,
    pub dt: f64,
    pub sample_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    /// Coefficients after the `λ` scaling.
    pub params: Params,
    pub m: f64,
    pub width: f64,
    /// First step at which some grid eigenvalue lies outside `[-m, 2m]`.
    pub exit_time: Option<f64>,
    /// Largest distance outside the interval reached over the run.
    pub margin: f64,
    pub margin_fraction: f64,
    /// First exit of the pointwise leading-order ODE at the point of largest strain.
    pub ode_exit_time: Option<f64>,
    pub records: Vec<DiagRecord>,
}

impl EscapeReport {
    pub fn escaped(&self) -> bool {
        self.exit_time.is_some()
    }
}

/// Coefficients `(λa₀, √λ b₀, c₀)` from a base set.
pub fn scaled_params(p0: &Params, lambda: f64) -> Result<Params> {
    if !(lambda > 0.0) {
        return Err(Error::Validation(format!(
            "lambda > 0 violated (lambda = {lambda})"
        )));
    }
    if !(p0.b > 0.0 && p0.c > 0.0) {
        return Err(Error::Validation(format!(
            "need b0 > 0 and c0 > 0 (b0 = {}, c0 = {})",
            p0.b, p0.c
        )));
    }
    if !((lambda * p0.a).abs() < lambda * p0.b * p0.b / (3.0 * p0.c)) {
        return Err(Error::Validation(format!(
            "|lambda a0| < lambda b0^2 / (3 c0) violated (a0 = {}, b0 = {}, c0 = {})",
            p0.a, p0.b, p0.c
        )));
    }
    Ok(p0.with_bulk(lambda * p0.a, lambda.sqrt() * p0.b, p0.c))
}

/// The non-co-rotational limit transport from `Q = 0` under a steady flow; reports when
/// the eigenvalues first leave the interval of the scaled coefficients.
pub fn xi_escape_run(
    p0: &Params,
    flow: &StationaryFlow,
    grid: &Arc<Grid>,
    cfg: &EscapeConfig,
) -> Result<EscapeReport> {
    let p = scaled_params(p0, cfg.lambda)?.with_xi(cfg.xi);
    if !(cfg.dt > 0.0 && cfg.t_end > 0.0 && cfg.sample_dt > 0.0) {
        return Err(Error::Validation(
            "need dt > 0, t_end > 0, sample_dt > 0".into(),
        ));
    }
    let st = stationary_scalars(&p)?;
    let mut sol = LimitSolver::with_flow(flow, &Field::zeros(grid, Kind::QTensor), p, cfg.xi)?;
    let (n, h) = crate::bulk_ode::steps_for(cfg.t_end, cfg.dt);
    let stride = ((cfg.sample_dt / h).round() as usize).max(1);
    let mut records = vec![sol.monitor()];
    let (mut exit_time, mut margin) = (None, 0.0f64);
    for k in 1..=n {
        sol.step(h)?;
        let (lo, hi) = eigen_range(&sol.r());
        let ex = st.excursion(lo, hi);
        if ex > 0.0 && exit_time.is_none() {
            exit_time = Some(sol.time());
        }
        margin = margin.max(ex);
        if k % stride == 0 || k == n {
            records.push(sol.monitor());
        }
    }

    let strain = |x: f64, y: f64| {
        let g = flow.gradient(x, y, 0.0);
        0.5 * (g + g.transpose())
    };
    let peak = (0..grid.len())
        .map(|i| grid.point(i))
        .max_by(|a, b| strain(a.0, a.1).norm().total_cmp(&strain(b.0, b.1).norm()))
        .expect("non-empty grid");
    let d: Matrix3<f64> = strain(peak.0, peak.1);
    let mut ode_exit_time = None;
    integrate_r0(&QTensor::ZERO, &d, h, cfg.t_end, |t, r| {
        let e = r.eigenvalues();
        if st.excursion(e.l1, e.l3) > 0.0 {
            ode_exit_time = Some(t);
            return false;
        }
        true
    })?;

    Ok(EscapeReport {
        params: p,
        m: st.m,
        width: st.width(),
        exit_time,
        margin_fraction: margin / st.width(),
        margin,
        ode_exit_time,
        records,
    })
}
