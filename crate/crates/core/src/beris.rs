//! Time stepping for the coupled flow/order-parameter system
//!
//! ```text
//! u_t + (u·∇)u + ∇P = εΔu + ∇·T(Q),   ∇·u = 0,
//! Q_t + u·∇Q - S(∇u, Q) = εΔQ - G(Q),
//! ```
//!
//! with `G` the bulk gradient and `T` the elastic stress. The velocity is three
//! dimensional but depends on `(x, y)` only; the pressure acts on the in-plane part.
//! Conventions: `(∇u)_ij = ∂_j u_i`, `(∇·T)_i = Σ_j ∂_j T_ij`.
//!
//! Steps use the two-stage IMEX scheme ARS(2,2,2): diffusion implicit (diagonal in
//! Fourier space), everything else explicit. The velocity is Leray-projected and both
//! unknowns are dealiased after each stage.

use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diag::DiagRecord;
use crate::error::{Error, Result};
use crate::qtensor::{bulk_energy, bulk_gradient, bulk_stress_scalar, Params, QTensor};
use crate::spectral::{
    derive_slice, divergence, grad_l2_sq, laplacian_slice, leray_project_spectral, max_gradient,
    Axis, Field, Grid, Kind, SpectralField,
};

/// Coupled state in physical space.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: Field,
    pub q: Field,
    pub t: f64,
    pub step: u64,
}

impl SimState {
    pub fn new(u: Field, q: Field) -> Result<SimState> {
        if u.kind != Kind::Vec3 || q.kind != Kind::QTensor {
            return Err(Error::Validation(
                "state needs a vec3 velocity and a qtensor field".into(),
            ));
        }
        if u.grid.n() != q.grid.n() {
            return Err(Error::GridMismatch(format!(
                "u on n = {}, Q on n = {}",
                u.grid.n(),
                q.grid.n()
            )));
        }
        Ok(SimState {
            u,
            q,
            t: 0.0,
            step: 0,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> SimState {
        SimState {
            u: Field::zeros(grid, Kind::Vec3),
            q: Field::zeros(grid, Kind::QTensor),
            t: 0.0,
            step: 0,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.u.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Imex2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Advisory Courant bound; exceeding it logs a warning.
    pub cfl_max: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Imex2,
            cfl_max: 0.5,
        }
    }
}

impl StepConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!(
                "dt > 0 violated (dt = {})",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Velocity gradient `(∇u)_ij = ∂_j u_i` from the two in-plane derivatives.
#[inline]
pub fn velocity_gradient(ux: [f64; 3], uy: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(
        ux[0], uy[0], 0.0, //
        ux[1], uy[1], 0.0, //
        ux[2], uy[2], 0.0,
    )
}

/// `(ξD + Ω)M + M(ξD - Ω) - 2ξ M tr(Q∇u)` with `M = Q + I/3`.
#[inline]
pub fn s_term_point(grad_u: &Matrix3<f64>, q: &QTensor, xi: f64) -> QTensor {
    let d = 0.5 * (grad_u + grad_u.transpose());
    let w = 0.5 * (grad_u - grad_u.transpose());
    let qm = q.to_matrix();
    if xi == 0.0 {
        return QTensor::from_matrix(&(w * qm - qm * w));
    }
    let m = qm + Matrix3::identity() / 3.0;
    let tr = (qm * grad_u).trace();
    let s = (xi * d + w) * m + m * (xi * d - w) - 2.0 * xi * tr * m;
    QTensor::from_matrix(&s)
}

/// Pointwise [`s_term_point`] over a field of velocity gradients.
pub fn s_term(grad_u: &[Matrix3<f64>], q: &Field, xi: f64) -> Field {
    assert_eq!(grad_u.len(), q.grid.len());
    let vals: Vec<QTensor> = (0..q.grid.len())
        .into_par_iter()
        .map(|i| s_term_point(&grad_u[i], &q.q_at(i), xi))
        .collect();
    let mut out = Field::zeros(&q.grid, Kind::QTensor);
    for (i, v) in vals.into_iter().enumerate() {
        out.set_q(i, v);
    }
    out
}

/// Velocity gradients of a physical velocity field at every grid point.
pub fn velocity_gradients(u: &Field) -> Vec<Matrix3<f64>> {
    let s = u.to_spectral();
    let ux = s.derivative(Axis::X, 1).to_physical();
    let uy = s.derivative(Axis::Y, 1).to_physical();
    (0..u.grid.len())
        .map(|i| {
            velocity_gradient(
                [ux.data[0][i], ux.data[1][i], ux.data[2][i]],
                [uy.data[0][i], uy.data[1][i], uy.data[2][i]],
            )
        })
        .collect()
}

/// Elastic stress block `T_ij`, `i ∈ {1,2,3}`, `j ∈ {1,2}`, returned as
/// `[T11, T12, T21, T22, T31, T32]`.
#[inline]
pub fn stress_point(
    q: &QTensor,
    qx: &QTensor,
    qy: &QTensor,
    lap: &QTensor,
    p: &Params,
) -> [f64; 6] {
    let e2 = p.eps * p.eps;
    let qm = q.to_matrix();
    let lm = lap.to_matrix();
    let mut t = -e2 * (lm * qm - qm * lm);
    t[(0, 0)] -= e2 * qx.ddot(qx);
    t[(0, 1)] -= e2 * qx.ddot(qy);
    t[(1, 0)] -= e2 * qy.ddot(qx);
    t[(1, 1)] -= e2 * qy.ddot(qy);
    if p.xi != 0.0 {
        let m = qm + Matrix3::identity() / 3.0;
        let b = lm * m + m * lm - 2.0 * q.ddot(lap) * m;
        let g = bulk_gradient(q, p).to_matrix();
        let phi = bulk_stress_scalar(q, p);
        let k = 2.0 * p.eps * p.xi * p.kappa;
        t += -e2 * p.xi * b + k * (m * g - phi * m);
    }
    [
        t[(0, 0)],
        t[(0, 1)],
        t[(1, 0)],
        t[(1, 1)],
        t[(2, 0)],
        t[(2, 1)],
    ]
}

/// Spectral divergence of a flux stored as `[T11, T12, T21, T22, T31, T32]`.
fn flux_divergence(flux: &SpectralField) -> SpectralField {
    let g = &flux.grid;
    let mut out = SpectralField::zeros(g, Kind::Vec3);
    for i in 0..3 {
        let mut a = flux.data[2 * i].clone();
        derive_slice(g, &mut a, Axis::X, 1);
        let mut b = flux.data[2 * i + 1].clone();
        derive_slice(g, &mut b, Axis::Y, 1);
        for ((o, x), y) in out.data[i].iter_mut().zip(a).zip(b) {
            *o = x + y;
        }
    }
    out
}

/// Physical-space derivative data for a tensor field.
struct QDerivs {
    q: Field,
    qx: Field,
    qy: Field,
    lap: Field,
}

fn q_derivs(qh: &SpectralField) -> QDerivs {
    let mut lap = qh.clone();
    for c in lap.data.iter_mut() {
        laplacian_slice(&qh.grid, c);
    }
    QDerivs {
        q: qh.to_physical(),
        qx: qh.derivative(Axis::X, 1).to_physical(),
        qy: qh.derivative(Axis::Y, 1).to_physical(),
        lap: lap.to_physical(),
    }
}

/// `∇·T(Q)` assembled spectrally and dealiased (no advection, no projection).
pub fn elastic_stress_divergence(q: &Field, p: &Params) -> Field {
    let d = q_derivs(&q.to_spectral());
    let g = &q.grid;
    let rows: Vec<[f64; 6]> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            stress_point(
                &d.q.q_at(i),
                &d.qx.q_at(i),
                &d.qy.q_at(i),
                &d.lap.q_at(i),
                p,
            )
        })
        .collect();
    let mut flux = Field::zeros(g, Kind::Scalar);
    flux.data = (0..6)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    let mut div = flux_divergence(&flux.to_spectral());
    div.dealias();
    div.to_physical()
}

const GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// Owns the spectral state and advances it.
#[derive(Debug, Clone)]
pub struct BerisSolver {
    grid: Arc<Grid>,
    params: Params,
    cfg: StepConfig,
    uh: SpectralField,
    qh: SpectralField,
    t: f64,
    step: u64,
}

impl BerisSolver {
    pub fn new(state: &SimState, params: Params, cfg: StepConfig) -> Result<BerisSolver> {
        params.validate()?;
        cfg.validate()?;
        if !(state.u.is_finite() && state.q.is_finite()) {
            return Err(Error::Validation(
                "initial state has non-finite entries".into(),
            ));
        }
        let mut uh = state.u.to_spectral();
        leray_project_spectral(&mut uh);
        uh.dealias();
        let mut qh = state.q.to_spectral();
        qh.dealias();
        Ok(BerisSolver {
            grid: state.grid().clone(),
            params,
            cfg,
            uh,
            qh,
            t: state.t,
            step: state.step,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn velocity_spectrum(&self) -> &SpectralField {
        &self.uh
    }

    pub fn q_spectrum(&self) -> &SpectralField {
        &self.qh
    }

    pub fn state(&self) -> SimState {
        SimState {
            u: self.uh.to_physical(),
            q: self.qh.to_physical(),
            t: self.t,
            step: self.step,
        }
    }

    /// Explicit tendencies `(P[∇·(T - u⊗u)], -u·∇Q + S - G)`, dealiased.
    fn explicit(&self, uh: &SpectralField, qh: &SpectralField) -> (SpectralField, SpectralField) {
        let g = &self.grid;
        let p = self.params;
        let u = uh.to_physical();
        let ux = uh.derivative(Axis::X, 1).to_physical();
        let uy = uh.derivative(Axis::Y, 1).to_physical();
        let d = q_derivs(qh);
        let pts: Vec<([f64; 6], QTensor)> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let uv = [u.data[0][i], u.data[1][i], u.data[2][i]];
                let gu = velocity_gradient(
                    [ux.data[0][i], ux.data[1][i], ux.data[2][i]],
                    [uy.data[0][i], uy.data[1][i], uy.data[2][i]],
                );
                let q = d.q.q_at(i);
                let qx = d.qx.q_at(i);
                let qy = d.qy.q_at(i);
                let mut t = stress_point(&q, &qx, &qy, &d.lap.q_at(i), &p);
                for r in 0..3 {
                    t[2 * r] -= uv[r] * uv[0];
                    t[2 * r + 1] -= uv[r] * uv[1];
                }
                let rhs =
                    s_term_point(&gu, &q, p.xi) - bulk_gradient(&q, &p) - (uv[0] * qx + uv[1] * qy);
                (t, rhs)
            })
            .collect();
        let mut flux = Field::zeros(g, Kind::Scalar);
        flux.data = (0..6)
            .map(|c| pts.iter().map(|r| r.0[c]).collect())
            .collect();
        let mut fu = flux_divergence(&flux.to_spectral());
        leray_project_spectral(&mut fu);
        fu.dealias();
        let mut nq = Field::zeros(g, Kind::QTensor);
        for (i, (_, r)) in pts.iter().enumerate() {
            nq.set_q(i, *r);
        }
        let mut fq = nq.to_spectral();
        fq.dealias();
        (fu, fq)
    }

    /// One ARS(2,2,2) step of size `cfg.dt`.
    pub fn step(&mut self) -> Result<()> {
        let h = self.cfg.dt;
        let eps = self.params.eps;
        let delta = 1.0 - 1.0 / (2.0 * GAMMA);
        if self.cfg.cfl_max > 0.0 {
            let u = self.uh.to_physical();
            let umax = (0..self.grid.len())
                .map(|i| u.data[0][i].abs().max(u.data[1][i].abs()))
                .fold(0.0, f64::max);
            let cfl = umax * h / self.grid.dx();
            if cfl > self.cfg.cfl_max {
                log::warn!(
                    "CFL number {cfl:.3} exceeds advisory bound {}",
                    self.cfg.cfl_max
                );
            }
        }
        let (k1u, k1q) = self.explicit(&self.uh, &self.qh);
        let stage = |y: &SpectralField, k1: &SpectralField| -> SpectralField {
            let mut out = y.clone();
            for (c, oc) in out.data.iter_mut().enumerate() {
                for (s, v) in oc.iter_mut().enumerate() {
                    let den = 1.0 + GAMMA * h * eps * self.grid.k2(s);
                    *v = (*v + h * GAMMA * k1.data[c][s]) / den;
                }
            }
            out
        };
        let y2u = stage(&self.uh, &k1u);
        let y2q = stage(&self.qh, &k1q);
        let (k2u, k2q) = self.explicit(&y2u, &y2q);
        let finish =
            |y: &SpectralField, k1: &SpectralField, k2: &SpectralField, y2: &SpectralField| {
                let mut out = y.clone();
                for (c, oc) in out.data.iter_mut().enumerate() {
                    for (s, v) in oc.iter_mut().enumerate() {
                        let ek2 = eps * self.grid.k2(s);
                        let den = 1.0 + GAMMA * h * ek2;
                        let expl: Complex64 = delta * k1.data[c][s] + (1.0 - delta) * k2.data[c][s];
                        *v = (*v + h * expl - h * (1.0 - GAMMA) * ek2 * y2.data[c][s]) / den;
                    }
                }
                out
            };
        let mut uh = finish(&self.uh, &k1u, &k2u, &y2u);
        let mut qh = finish(&self.qh, &k1q, &k2q, &y2q);
        leray_project_spectral(&mut uh);
        uh.dealias();
        qh.dealias();
        let t_next = self.t + h;
        if !(uh.is_finite() && qh.is_finite()) {
            return Err(Error::Divergence {
                time: t_next,
                reason: format!("non-finite field at step {}", self.step + 1),
            });
        }
        self.uh = uh;
        self.qh = qh;
        self.t = t_next;
        self.step += 1;
        Ok(())
    }

    pub fn monitor(&self) -> DiagRecord {
        monitor_spectral(&self.uh, &self.qh, &self.params, self.t)
    }
}

/// Advances `state` by one step.
pub fn step(state: &SimState, p: &Params, cfg: &StepConfig) -> Result<SimState> {
    let mut s = BerisSolver::new(state, *p, *cfg)?;
    s.step()?;
    Ok(s.state())
}

pub fn monitor(state: &SimState, p: &Params) -> DiagRecord {
    monitor_spectral(&state.u.to_spectral(), &state.q.to_spectral(), p, state.t)
}

/// Eigenvalue range `(min λ₁, max λ₃)` over all grid points.
pub fn eigen_range(q: &Field) -> (f64, f64) {
    let ev: Vec<(f64, f64)> = (0..q.grid.len())
        .into_par_iter()
        .map(|i| {
            let e = q.q_at(i).eigenvalues();
            (e.l1, e.l3)
        })
        .collect();
    ev.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, b)| {
            (lo.min(a), hi.max(b))
        })
}

/// `ε ∫ f_B(Q)` by the trapezoid rule.
pub fn bulk_integral(q: &Field, p: &Params) -> f64 {
    let dx = q.grid.dx();
    (0..q.grid.len())
        .map(|i| bulk_energy(&q.q_at(i), p))
        .sum::<f64>()
        * dx
        * dx
}

fn monitor_spectral(uh: &SpectralField, qh: &SpectralField, p: &Params, t: f64) -> DiagRecord {
    let q = qh.to_physical();
    let (min_eig, max_eig) = eigen_range(&q);
    let kinetic = 0.5 * uh.sobolev_sq(0);
    let free_energy = 0.5 * p.eps * p.eps * grad_l2_sq(qh) + p.eps * bulk_integral(&q, p);
    let resolved = uh.tail_fraction() <= 1e-8 && qh.tail_fraction() <= 1e-8;
    DiagRecord {
        t,
        min_eig,
        max_eig,
        linf_q: q.linf_norm(),
        kinetic,
        free_energy,
        max_grad_q: max_gradient(qh),
        div_u: divergence(uh).sobolev_norm(0),
        y: None,
        resolved,
    }
}
