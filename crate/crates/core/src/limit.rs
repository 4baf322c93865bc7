//! The inviscid limit: 2-D Euler in vorticity form with a passive out-of-plane
//! velocity, the order parameter transported and rotated by it, the exact
//! rotation-conjugation solution along particle paths, and the distance functional
//! between a viscous run and the limit.

use std::io::Write;
use std::sync::Arc;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beris::{bulk_integral, eigen_range, s_term_point, BerisSolver, SimState, StepConfig};
use crate::bulk_ode::steps_for;
use crate::diag::{fmt_f64, DiagRecord};
use crate::error::{Error, Result};
use crate::flows::{sample_gradients, sample_velocity, PrescribedFlow};
use crate::qtensor::{bulk_gradient, stationary_scalars, Params, QTensor};
use crate::rates::loglog_slope;
use crate::spectral::{
    divergence, grad_l2_sq, max_gradient, poisson_solve, Axis, Field, Grid, Kind, SpectralField,
};

/// Runs whose spectral tail carries more than this fraction of the energy are flagged
/// unresolved.
pub const TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitState {
    /// In-plane vorticity `∂x v2 - ∂y v1`, mean free.
    pub omega: Field,
    pub v3: Field,
    pub r: Field,
    /// Spatial mean of the in-plane velocity (conserved).
    pub mean: [f64; 2],
    pub t: f64,
}

impl LimitState {
    pub fn new(omega: Field, v3: Field, r: Field) -> Result<LimitState> {
        if omega.kind != Kind::Scalar || v3.kind != Kind::Scalar || r.kind != Kind::QTensor {
            return Err(Error::Validation(
                "limit state needs scalar omega, scalar v3, qtensor R".into(),
            ));
        }
        if omega.grid.n() != r.grid.n() || v3.grid.n() != r.grid.n() {
            return Err(Error::GridMismatch(
                "limit state fields on different grids".into(),
            ));
        }
        let mean = omega.mean(0);
        if mean.abs() > 1e-10 * (1.0 + omega.linf_norm()) {
            return Err(Error::Validation(format!(
                "vorticity must be mean free (mean = {mean:e})"
            )));
        }
        Ok(LimitState {
            omega,
            v3,
            r,
            mean: [0.0; 2],
            t: 0.0,
        })
    }

    /// From a divergence-free velocity; its mean is kept as a constant drift.
    pub fn from_velocity(u: &Field, r: Field) -> Result<LimitState> {
        if u.kind != Kind::Vec3 {
            return Err(Error::Validation("velocity must be a vec3 field".into()));
        }
        let us = u.to_spectral();
        let vx = us.derivative(Axis::X, 1).to_physical();
        let uy = us.derivative(Axis::Y, 1).to_physical();
        let omega = Field::from_components(&u.grid, Kind::Scalar, vec![vx.data[1].clone()])?.sub(
            &Field::from_components(&u.grid, Kind::Scalar, vec![uy.data[0].clone()])?,
        );
        let v3 = Field::from_components(&u.grid, Kind::Scalar, vec![u.data[2].clone()])?;
        let mut s = LimitState::new(omega, v3, r)?;
        s.mean = [u.mean(0), u.mean(1)];
        Ok(s)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.r.grid
    }

    pub fn velocity(&self) -> Field {
        let mut w = self.omega.to_spectral();
        w.dealias();
        kinematics(&w, &self.v3.to_spectral(), self.mean).0
    }
}

/// Velocity and its gradient recovered from vorticity and `v3`.
fn kinematics(w: &SpectralField, v3: &SpectralField, mean: [f64; 2]) -> (Field, Vec<Matrix3<f64>>) {
    // Δφ = ω, ψ = -φ, v = (ψ_y, -ψ_x)
    let phi = poisson_solve(w);
    let px = phi.derivative(Axis::X, 1).to_physical();
    let py = phi.derivative(Axis::Y, 1).to_physical();
    let pxx = phi.derivative(Axis::X, 2).to_physical();
    let pyy = phi.derivative(Axis::Y, 2).to_physical();
    let pxy = phi
        .derivative(Axis::X, 1)
        .derivative(Axis::Y, 1)
        .to_physical();
    let v3p = v3.to_physical();
    let v3x = v3.derivative(Axis::X, 1).to_physical();
    let v3y = v3.derivative(Axis::Y, 1).to_physical();
    let g = &w.grid;
    let mut u = Field::zeros(g, Kind::Vec3);
    let mut grads = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        u.data[0][i] = mean[0] - py.data[0][i];
        u.data[1][i] = mean[1] + px.data[0][i];
        u.data[2][i] = v3p.data[0][i];
        grads.push(Matrix3::new(
            -pxy.data[0][i],
            -pyy.data[0][i],
            0.0,
            pxx.data[0][i],
            pxy.data[0][i],
            0.0,
            v3x.data[0][i],
            v3y.data[0][i],
            0.0,
        ));
    }
    (u, grads)
}

/// `-v·∇f` for scalar spectra, dealiased.
fn advect_scalar(f: &SpectralField, u: &Field) -> SpectralField {
    let fx = f.derivative(Axis::X, 1).to_physical();
    let fy = f.derivative(Axis::Y, 1).to_physical();
    let mut out = Field::zeros(&f.grid, Kind::Scalar);
    for i in 0..f.grid.len() {
        out.data[0][i] = -(u.data[0][i] * fx.data[0][i] + u.data[1][i] * fy.data[0][i]);
    }
    let mut s = out.to_spectral();
    s.dealias();
    s
}

/// `-v·∇R + S(∇v, R) - G(R)`, dealiased.
fn transport_rhs(
    r: &SpectralField,
    u: &Field,
    grads: &[Matrix3<f64>],
    p: &Params,
    xi: f64,
) -> SpectralField {
    let rp = r.to_physical();
    let rx = r.derivative(Axis::X, 1).to_physical();
    let ry = r.derivative(Axis::Y, 1).to_physical();
    let vals: Vec<QTensor> = (0..r.grid.len())
        .into_par_iter()
        .map(|i| {
            let q = rp.q_at(i);
            s_term_point(&grads[i], &q, xi)
                - bulk_gradient(&q, p)
                - (u.data[0][i] * rx.q_at(i) + u.data[1][i] * ry.q_at(i))
        })
        .collect();
    let mut out = Field::zeros(&r.grid, Kind::QTensor);
    for (i, v) in vals.into_iter().enumerate() {
        out.set_q(i, v);
    }
    let mut s = out.to_spectral();
    s.dealias();
    s
}

fn shifted(y: &[SpectralField], k: &[SpectralField], h: f64) -> Vec<SpectralField> {
    y.iter()
        .zip(k)
        .map(|(a, b)| {
            let mut o = a.clone();
            o.axpy(h, b);
            o
        })
        .collect()
}

fn rk4<F>(y: &[SpectralField], h: f64, f: F) -> Vec<SpectralField>
where
    F: Fn(&[SpectralField]) -> Vec<SpectralField>,
{
    let k1 = f(y);
    let k2 = f(&shifted(y, &k1, 0.5 * h));
    let k3 = f(&shifted(y, &k2, 0.5 * h));
    let k4 = f(&shifted(y, &k3, h));
    let mut out = y.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        o.axpy(h / 6.0, &k1[i]);
        o.axpy(h / 3.0, &k2[i]);
        o.axpy(h / 3.0, &k3[i]);
        o.axpy(h / 6.0, &k4[i]);
    }
    out
}

/// Damping `exp(-alpha (max(|kx|,|ky|)/(n/2))^order)` applied after each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFilter {
    pub alpha: f64,
    pub order: i32,
}

impl Default for ExpFilter {
    fn default() -> Self {
        Self {
            alpha: 36.0,
            order: 36,
        }
    }
}

impl ExpFilter {
    fn apply(&self, f: &mut SpectralField) {
        let g = f.grid.clone();
        let half = g.n() as f64 / 2.0;
        f.apply(|s| {
            let (kx, ky) = g.wavenumber(s);
            (-self.alpha * (kx.abs().max(ky.abs()) / half).powi(self.order)).exp()
        });
    }
}

/// Transport tolerates any finite bulk coefficients, including all zero.
fn check_finite(p: &Params, xi: f64) -> Result<()> {
    let all = [p.eps, p.kappa, p.a, p.b, p.c, xi];
    if all.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "non-finite coefficients in {p:?} (xi = {xi})"
        )))
    }
}

enum Velocity {
    Euler {
        w: SpectralField,
        v3: SpectralField,
        mean: [f64; 2],
    },
    Frozen {
        u: Field,
        grads: Vec<Matrix3<f64>>,
        omega: Field,
    },
}

/// Explicit RK4 stepper for the limit system.
pub struct LimitSolver {
    grid: Arc<Grid>,
    vel: Velocity,
    r: SpectralField,
    params: Params,
    xi: f64,
    filter: Option<ExpFilter>,
    t: f64,
    step: u64,
}

impl LimitSolver {
    /// Coupled Euler + transport from a state; `xi` selects the rotation/stretching model.
    pub fn new(state: &LimitState, params: Params, xi: f64) -> Result<LimitSolver> {
        check_finite(&params, xi)?;
        let mut w = state.omega.to_spectral();
        let mut v3 = state.v3.to_spectral();
        let mut r = state.r.to_spectral();
        for f in [&mut w, &mut v3, &mut r] {
            f.dealias();
        }
        Ok(LimitSolver {
            grid: state.grid().clone(),
            vel: Velocity::Euler {
                w,
                v3,
                mean: state.mean,
            },
            r,
            params,
            xi,
            filter: None,
            t: state.t,
            step: 0,
        })
    }

    /// Transport under a stationary prescribed flow, sampled once on the grid.
    pub fn with_flow(
        flow: &dyn PrescribedFlow,
        r0: &Field,
        params: Params,
        xi: f64,
    ) -> Result<LimitSolver> {
        check_finite(&params, xi)?;
        if !flow.is_stationary() {
            return Err(Error::Validation(
                "frozen-velocity transport needs a stationary flow".into(),
            ));
        }
        let g = r0.grid.clone();
        let mut r = r0.to_spectral();
        r.dealias();
        let omega = Field::scalar_fn(&g, |x, y| flow.vorticity(x, y, 0.0));
        Ok(LimitSolver {
            vel: Velocity::Frozen {
                u: sample_velocity(flow, &g, 0.0),
                grads: sample_gradients(flow, &g, 0.0),
                omega,
            },
            grid: g,
            r,
            params,
            xi,
            filter: None,
            t: 0.0,
            step: 0,
        })
    }

    pub fn set_filter(&mut self, filter: Option<ExpFilter>) {
        self.filter = filter;
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn r_spectrum(&self) -> &SpectralField {
        &self.r
    }

    pub fn r(&self) -> Field {
        self.r.to_physical()
    }

    pub fn velocity(&self) -> Field {
        match &self.vel {
            Velocity::Euler { w, v3, mean } => kinematics(w, v3, *mean).0,
            Velocity::Frozen { u, .. } => u.clone(),
        }
    }

    pub fn vorticity(&self) -> Field {
        match &self.vel {
            Velocity::Euler { w, .. } => w.to_physical(),
            Velocity::Frozen { omega, .. } => omega.clone(),
        }
    }

    pub fn state(&self) -> LimitState {
        let (v3, mean) = match &self.vel {
            Velocity::Euler { v3, mean, .. } => (v3.to_physical(), *mean),
            Velocity::Frozen { u, .. } => (
                Field::from_components(&self.grid, Kind::Scalar, vec![u.data[2].clone()])
                    .expect("scalar"),
                [u.mean(0), u.mean(1)],
            ),
        };
        LimitState {
            omega: self.vorticity(),
            v3,
            r: self.r(),
            mean,
            t: self.t,
        }
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        let (p, xi) = (self.params, self.xi);
        match &mut self.vel {
            Velocity::Euler { w, v3, mean } => {
                let mean = *mean;
                let y = vec![w.clone(), v3.clone(), self.r.clone()];
                let mut out = rk4(&y, dt, |s| {
                    let (u, grads) = kinematics(&s[0], &s[1], mean);
                    vec![
                        advect_scalar(&s[0], &u),
                        advect_scalar(&s[1], &u),
                        transport_rhs(&s[2], &u, &grads, &p, xi),
                    ]
                });
                if let Some(f) = &self.filter {
                    out.iter_mut().for_each(|s| f.apply(s));
                }
                let r = out.pop().unwrap();
                *v3 = out.pop().unwrap();
                *w = out.pop().unwrap();
                self.r = r;
            }
            Velocity::Frozen { u, grads, .. } => {
                let mut out = rk4(std::slice::from_ref(&self.r), dt, |s| {
                    vec![transport_rhs(&s[0], u, grads, &p, xi)]
                });
                if let Some(f) = &self.filter {
                    f.apply(&mut out[0]);
                }
                self.r = out.pop().unwrap();
            }
        }
        self.t += dt;
        self.step += 1;
        let finite = self.r.is_finite()
            && match &self.vel {
                Velocity::Euler { w, v3, .. } => w.is_finite() && v3.is_finite(),
                Velocity::Frozen { .. } => true,
            };
        if !finite {
            return Err(Error::Divergence {
                time: self.t,
                reason: format!("non-finite limit state at step {}", self.step),
            });
        }
        Ok(())
    }

    /// Advances to `t_end` with steps of at most `dt`.
    pub fn advance_to(&mut self, t_end: f64, dt: f64) -> Result<()> {
        let (n, h) = steps_for(t_end - self.t, dt);
        for _ in 0..n {
            self.step(h)?;
        }
        Ok(())
    }

    pub fn monitor(&self) -> DiagRecord {
        let r = self.r();
        let (min_eig, max_eig) = eigen_range(&r);
        let u = self.velocity();
        let us = u.to_spectral();
        let p = &self.params;
        DiagRecord {
            t: self.t,
            min_eig,
            max_eig,
            linf_q: r.linf_norm(),
            kinetic: 0.5 * us.sobolev_sq(0),
            free_energy: 0.5 * p.eps * p.eps * grad_l2_sq(&self.r) + p.eps * bulk_integral(&r, p),
            max_grad_q: max_gradient(&self.r),
            div_u: divergence(&us).sobolev_norm(0),
            y: None,
            resolved: self.r.tail_fraction() <= TAIL_TOLERANCE,
        }
    }
}

/// One RK4 step of the vorticity and `v3` transport; `R` is left unchanged.
pub fn euler_step(state: &LimitState, dt: f64) -> Result<LimitState> {
    let mut w = state.omega.to_spectral();
    w.dealias();
    let mut v3 = state.v3.to_spectral();
    v3.dealias();
    let mean = state.mean;
    let out = rk4(&[w, v3], dt, |s| {
        let (u, _) = kinematics(&s[0], &s[1], mean);
        vec![advect_scalar(&s[0], &u), advect_scalar(&s[1], &u)]
    });
    if !(out[0].is_finite() && out[1].is_finite()) {
        return Err(Error::Divergence {
            time: state.t + dt,
            reason: "non-finite vorticity".into(),
        });
    }
    Ok(LimitState {
        omega: out[0].to_physical(),
        v3: out[1].to_physical(),
        r: state.r.clone(),
        mean,
        t: state.t + dt,
    })
}

/// One RK4 step of the order-parameter transport with the state's velocity held fixed.
pub fn transport_q_step(state: &LimitState, p: &Params, xi: f64, dt: f64) -> Result<LimitState> {
    let mut w = state.omega.to_spectral();
    w.dealias();
    let (u, grads) = kinematics(&w, &state.v3.to_spectral(), state.mean);
    let mut r = state.r.to_spectral();
    r.dealias();
    let out = rk4(&[r], dt, |s| vec![transport_rhs(&s[0], &u, &grads, p, xi)]);
    if !out[0].is_finite() {
        return Err(Error::Divergence {
            time: state.t + dt,
            reason: "non-finite order parameter".into(),
        });
    }
    Ok(LimitState {
        r: out[0].to_physical(),
        t: state.t + dt,
        ..state.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Particle paths with their rotation matrices, sampled at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub seeds: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    /// `positions[k][j]`: seed `j` at `times[k]`.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub rotations: Vec<Vec<Matrix3<f64>>>,
    pub omega: Vec<Vec<f64>>,
}

impl TrajectorySet {
    pub fn final_positions(&self) -> &[[f64; 2]] {
        self.positions.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn final_rotations(&self) -> &[Matrix3<f64>] {
        self.rotations.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// `max ‖BᵀB - I‖_F` over seeds and samples.
    pub fn orthogonality_error(&self) -> f64 {
        self.rotations
            .iter()
            .flatten()
            .map(|b| (b.transpose() * b - Matrix3::identity()).norm())
            .fold(0.0, f64::max)
    }

    /// `max |ω(X(α,t)) - ω(α)|` over seeds and samples.
    pub fn vorticity_deviation(&self) -> f64 {
        let Some(first) = self.omega.first() else {
            return 0.0;
        };
        self.omega
            .iter()
            .flat_map(|row| row.iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    /// Rows `seed_id,t,x,y,omega,b11,...,b33`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "seed_id,t,x,y,omega,b11,b12,b13,b21,b22,b23,b31,b32,b33")?;
        for j in 0..self.seeds.len() {
            for (k, t) in self.times.iter().enumerate() {
                let [x, y] = self.positions[k][j];
                let b = &self.rotations[k][j];
                let mut row = format!(
                    "{j},{},{},{},{}",
                    fmt_f64(*t),
                    fmt_f64(x),
                    fmt_f64(y),
                    fmt_f64(self.omega[k][j])
                );
                for r in 0..3 {
                    for c in 0..3 {
                        row.push(',');
                        row.push_str(&fmt_f64(b[(r, c)]));
                    }
                }
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}

fn spin(flow: &dyn PrescribedFlow, x: [f64; 2], t: f64) -> Matrix3<f64> {
    let g = flow.gradient(x[0], x[1], t);
    0.5 * (g - g.transpose())
}

fn vel2(flow: &dyn PrescribedFlow, x: [f64; 2], t: f64) -> [f64; 2] {
    let v = flow.velocity(x[0], x[1], t);
    [v[0], v[1]]
}

/// One RK4 step of `dX/dσ = s v(X, t₀ + sσ)`, `dB/dσ = s Ω(X) B`.
fn path_step(
    flow: &dyn PrescribedFlow,
    x: [f64; 2],
    b: &Matrix3<f64>,
    t: f64,
    h: f64,
    s: f64,
) -> ([f64; 2], Matrix3<f64>) {
    let f = |x: [f64; 2], b: &Matrix3<f64>, t: f64| {
        let v = vel2(flow, x, t);
        ([s * v[0], s * v[1]], s * spin(flow, x, t) * b)
    };
    let add = |x: [f64; 2], k: [f64; 2], c: f64| [x[0] + c * k[0], x[1] + c * k[1]];
    let (k1x, k1b) = f(x, b, t);
    let (k2x, k2b) = f(add(x, k1x, 0.5 * h), &(b + 0.5 * h * k1b), t + 0.5 * s * h);
    let (k3x, k3b) = f(add(x, k2x, 0.5 * h), &(b + 0.5 * h * k2b), t + 0.5 * s * h);
    let (k4x, k4b) = f(add(x, k3x, h), &(b + h * k3b), t + s * h);
    let xn = [
        x[0] + h / 6.0 * (k1x[0] + 2.0 * k2x[0] + 2.0 * k3x[0] + k4x[0]),
        x[1] + h / 6.0 * (k1x[1] + 2.0 * k2x[1] + 2.0 * k3x[1] + k4x[1]),
    ];
    (xn, b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b))
}

/// Integrates particle paths and `dB/dt = Ω(X) B`, `B(0) = I`, forward or backward in
/// time. At most about 200 samples are kept per seed.
pub fn trace_particles(
    flow: &dyn PrescribedFlow,
    seeds: &[[f64; 2]],
    t_end: f64,
    dt: f64,
    direction: Direction,
) -> Result<TrajectorySet> {
    if !(t_end >= 0.0 && dt > 0.0) {
        return Err(Error::Validation(format!(
            "need t_end >= 0 and dt > 0 (t_end = {t_end}, dt = {dt})"
        )));
    }
    let s = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let (n, h) = steps_for(t_end, dt);
    let stride = n.div_ceil(200).max(1);
    let mut xs: Vec<[f64; 2]> = seeds.to_vec();
    let mut bs = vec![Matrix3::identity(); seeds.len()];
    let record = |xs: &[[f64; 2]], t: f64| -> Vec<f64> {
        xs.iter().map(|x| flow.vorticity(x[0], x[1], t)).collect()
    };
    let mut set = TrajectorySet {
        seeds: seeds.to_vec(),
        times: vec![0.0],
        positions: vec![xs.clone()],
        rotations: vec![bs.clone()],
        omega: vec![record(&xs, 0.0)],
    };
    for k in 0..n {
        let t = s * k as f64 * h;
        let next: Vec<([f64; 2], Matrix3<f64>)> = xs
            .par_iter()
            .zip(bs.par_iter())
            .map(|(x, b)| path_step(flow, *x, b, t, h, s))
            .collect();
        for (j, (x, b)) in next.into_iter().enumerate() {
            xs[j] = x;
            bs[j] = b;
        }
        if (k + 1) % stride == 0 || k + 1 == n {
            let tk = s * (k + 1) as f64 * h;
            set.times.push(tk);
            set.omega.push(record(&xs, tk));
            set.positions.push(xs.clone());
            set.rotations.push(bs.clone());
        }
    }
    Ok(set)
}

/// For a stationary flow, the foot `α = X(x, -t)` of the path through `x` and the
/// rotation `B(α, t)` accumulated along it.
pub fn backward_characteristic(
    flow: &dyn PrescribedFlow,
    x: [f64; 2],
    t: f64,
    dt: f64,
) -> ([f64; 2], Matrix3<f64>) {
    backward_segment(flow, x, Matrix3::identity(), t, dt)
}

/// Continues a backward characteristic by `span`. `C(σ) = B(α,t) B(α,t-σ)ᵀ` obeys
/// `dC/dσ = C Ω(Y(σ))` with `Y(σ) = X(α, t-σ)`, independently of `t`.
fn backward_segment(
    flow: &dyn PrescribedFlow,
    y0: [f64; 2],
    c0: Matrix3<f64>,
    span: f64,
    dt: f64,
) -> ([f64; 2], Matrix3<f64>) {
    let (n, h) = steps_for(span, dt);
    let f = |y: [f64; 2], c: &Matrix3<f64>| {
        let v = vel2(flow, y, 0.0);
        ([-v[0], -v[1]], c * spin(flow, y, 0.0))
    };
    let add = |x: [f64; 2], k: [f64; 2], c: f64| [x[0] + c * k[0], x[1] + c * k[1]];
    let (mut y, mut c) = (y0, c0);
    for _ in 0..n {
        let (k1y, k1c) = f(y, &c);
        let (k2y, k2c) = f(add(y, k1y, 0.5 * h), &(c + 0.5 * h * k1c));
        let (k3y, k3c) = f(add(y, k2y, 0.5 * h), &(c + 0.5 * h * k2c));
        let (k4y, k4c) = f(add(y, k3y, h), &(c + h * k3c));
        y = [
            y[0] + h / 6.0 * (k1y[0] + 2.0 * k2y[0] + 2.0 * k3y[0] + k4y[0]),
            y[1] + h / 6.0 * (k1y[1] + 2.0 * k2y[1] + 2.0 * k3y[1] + k4y[1]),
        ];
        c += h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
    }
    (y, c)
}

/// Initial order parameter evaluated at arbitrary points.
pub trait TensorSource: Sync {
    fn at(&self, x: f64, y: f64) -> QTensor;
}

impl TensorSource for QTensor {
    fn at(&self, _: f64, _: f64) -> QTensor {
        *self
    }
}

/// Trigonometric interpolant of a grid field.
pub struct FieldSource(SpectralField);

impl FieldSource {
    pub fn new(q: &Field) -> FieldSource {
        FieldSource(q.to_spectral())
    }
}

impl TensorSource for FieldSource {
    fn at(&self, x: f64, y: f64) -> QTensor {
        QTensor::from_components(std::array::from_fn(|c| self.0.eval(c, x, y)))
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub field: Field,
    /// `max ‖BᵀB - I‖_F` over grid points.
    pub orthogonality: f64,
    /// `max |ω(X(α,t)) - ω(α)|` over grid points.
    pub vorticity_deviation: f64,
    /// Largest distance of an eigenvalue from `(-m, -m, 2m)`.
    pub spectrum_spread: f64,
}

/// Largest distance of the eigenvalues at any grid point from `(-m, -m, 2m)`.
pub fn manifold_distance(q: &Field, m: f64) -> f64 {
    (0..q.grid.len())
        .into_par_iter()
        .map(|i| {
            let e = q.q_at(i).eigenvalues();
            (e.l1 + m)
                .abs()
                .max((e.l2 + m).abs())
                .max((e.l3 - 2.0 * m).abs())
        })
        .reduce(|| 0.0, f64::max)
}

/// Exact solution `R(X(α,t),t) = B(α,t) Q0(α) B(α,t)ᵀ` of the co-rotational transport on
/// a stationary flow, for data on the uniaxial `s₊` manifold.
pub fn lagrangian_oracle(
    q0: &Field,
    flow: &dyn PrescribedFlow,
    p: &Params,
    t: f64,
    dt: f64,
) -> Result<OracleReport> {
    Ok(lagrangian_oracle_series(q0, flow, p, &[t], dt)?.remove(0))
}

/// [`lagrangian_oracle`] at several ascending times from one backward sweep per point.
pub fn lagrangian_oracle_series(
    q0: &Field,
    flow: &dyn PrescribedFlow,
    p: &Params,
    times: &[f64],
    dt: f64,
) -> Result<Vec<OracleReport>> {
    if !flow.is_stationary() {
        return Err(Error::Validation(
            "the Lagrangian oracle needs a stationary flow".into(),
        ));
    }
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) || !(dt > 0.0) {
        return Err(Error::Validation(
            "oracle times must be non-empty, non-negative, ascending; dt > 0".into(),
        ));
    }
    let st = stationary_scalars(p)?;
    let off = manifold_distance(q0, st.m);
    if off > 1e-8 {
        return Err(Error::Domain(format!(
            "initial data is {off:e} off the s+ manifold (tolerance 1e-8)"
        )));
    }
    let first = q0.q_at(0);
    let uniform = (0..q0.grid.len()).all(|i| q0.q_at(i) == first);
    let spectral;
    let source: &dyn TensorSource = if uniform {
        &first
    } else {
        spectral = FieldSource::new(q0);
        &spectral
    };
    let g = q0.grid.clone();
    // per point, per time: (R, orthogonality, vorticity deviation)
    let sweeps: Vec<Vec<(QTensor, f64, f64)>> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = g.point(i);
            let w0 = flow.vorticity(x, y, 0.0);
            let (mut a, mut c) = ([x, y], Matrix3::identity());
            let mut prev = 0.0;
            times
                .iter()
                .map(|&t| {
                    (a, c) = backward_segment(flow, a, c, t - prev, dt);
                    prev = t;
                    let r = source.at(a[0], a[1]).rotate(&c);
                    let orth = (c.transpose() * c - Matrix3::identity()).norm();
                    (r, orth, (flow.vorticity(a[0], a[1], 0.0) - w0).abs())
                })
                .collect()
        })
        .collect();
    Ok((0..times.len())
        .map(|k| {
            let mut field = Field::zeros(&g, Kind::QTensor);
            let (mut orthogonality, mut vorticity_deviation) = (0.0f64, 0.0f64);
            for (i, sw) in sweeps.iter().enumerate() {
                let (r, o, w) = sw[k];
                field.set_q(i, r);
                orthogonality = orthogonality.max(o);
                vorticity_deviation = vorticity_deviation.max(w);
            }
            let spectrum_spread = manifold_distance(&field, st.m);
            OracleReport {
                field,
                orthogonality,
                vorticity_deviation,
                spectrum_spread,
            }
        })
        .collect())
}

/// `‖w‖² + ε²‖∇S‖² + ε‖S‖²` in `L²`.
pub fn error_functional(w: &Field, s: &Field, eps: f64) -> f64 {
    let ws = w.to_spectral();
    let ss = s.to_spectral();
    ws.sobolev_sq(0) + eps * eps * grad_l2_sq(&ss) + eps * ss.sobolev_sq(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EricksenRow {
    pub eps: f64,
    pub sup_y: f64,
    pub t_at_sup: f64,
    pub slope_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EricksenStudy {
    pub rows: Vec<EricksenRow>,
    /// Least-squares slope of `log sup Y` against `log ε`.
    pub slope: Option<f64>,
    /// `sup Y(ε/2) / sup Y(ε)` for every adjacent pair related by a factor two.
    pub halving_ratios: Vec<f64>,
    /// Per-ε time series of `Y`, sampled at the common diagnostic times.
    pub series: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Diagnostic sampling interval.
    pub sample_dt: f64,
}

/// Runs the viscous system at each `ε` and the limit once, from the same data, and
/// records `sup_t Y(t)` over the sampled times.
pub fn ericksen_study(
    u0: &Field,
    q0: &Field,
    p: &Params,
    eps_list: &[f64],
    cfg: &StudyConfig,
) -> Result<EricksenStudy> {
    p.validate()?;
    if eps_list.is_empty() {
        return Err(Error::Validation("eps list must be non-empty".into()));
    }
    let up = eps_list.windows(2).all(|w| w[1] > w[0]);
    let down = eps_list.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) || eps_list.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Validation(
            "eps list must be strictly monotone and non-negative".into(),
        ));
    }
    if !(cfg.dt > 0.0 && cfg.sample_dt >= cfg.dt && cfg.t_end > 0.0) {
        return Err(Error::Validation(
            "need dt > 0, sample_dt >= dt, t_end > 0".into(),
        ));
    }
    let stride = (cfg.sample_dt / cfg.dt).round().max(1.0) as usize;
    let (n_steps, h) = steps_for(cfg.t_end, cfg.dt);

    let mut limit = LimitSolver::new(&LimitState::from_velocity(u0, q0.clone())?, *p, p.xi)?;
    let mut reference = vec![(0.0, limit.velocity(), limit.r())];
    for k in 1..=n_steps {
        limit.step(h)?;
        if k % stride == 0 || k == n_steps {
            reference.push((limit.time(), limit.velocity(), limit.r()));
        }
    }

    let state = SimState::new(u0.clone(), q0.clone())?;
    let series: Vec<Vec<(f64, f64)>> = eps_list
        .par_iter()
        .map(|&eps| -> Result<Vec<(f64, f64)>> {
            let pe = p.with_eps(eps);
            let mut sol = BerisSolver::new(
                &state,
                pe,
                StepConfig {
                    cfl_max: 0.0,
                    ..StepConfig::with_dt(h)
                },
            )?;
            let mut out = Vec::with_capacity(reference.len());
            let mut idx = 0;
            for k in 0..=n_steps {
                if k > 0 {
                    sol.step()?;
                }
                if k == 0 || k % stride == 0 || k == n_steps {
                    let (t, v, r) = &reference[idx];
                    let s = sol.state();
                    out.push((*t, error_functional(&s.u.sub(v), &s.q.sub(r), eps)));
                    idx += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<EricksenRow> = Vec::new();
    for (&eps, ser) in eps_list.iter().zip(&series) {
        let (t_at_sup, sup_y) = ser
            .iter()
            .copied()
            .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let es: Vec<f64> = rows.iter().map(|r| r.eps).chain([eps]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.sup_y).chain([sup_y]).collect();
        rows.push(EricksenRow {
            eps,
            sup_y,
            t_at_sup,
            slope_so_far: loglog_slope(&es, &ys),
        });
    }
    let halving_ratios = rows
        .windows(2)
        .filter_map(|w| {
            let (big, small) = if w[0].eps > w[1].eps {
                (&w[0], &w[1])
            } else {
                (&w[1], &w[0])
            };
            ((small.eps * 2.0 - big.eps).abs() <= 1e-12 * big.eps).then(|| small.sup_y / big.sup_y)
        })
        .collect();
    Ok(EricksenStudy {
        slope: rows.last().and_then(|r| r.slope_so_far),
        rows,
        halving_ratios,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulk_ode::{integrate_reaction, OdeConfig};
    use crate::flows::{StationaryFlow, StreamMode};
    use crate::init::{fit_into_interval, random_state, InitConfig};
    use nalgebra::Vector3;

    fn p0() -> Params {
        Params::default()
    }

    fn tg_state(g: &Arc<Grid>, r: Field) -> LimitState {
        let u = sample_velocity(&StationaryFlow::taylor_green(), g, 0.0);
        LimitState::from_velocity(&u, r).unwrap()
    }

    fn s_plus_uniform(g: &Arc<Grid>, p: &Params) -> Field {
        let s = stationary_scalars(p).unwrap().s_plus;
        Field::uniform_q(g, QTensor::uniaxial(s, Vector3::x()))
    }

    #[test]
    fn taylor_green_vorticity_is_stationary() {
        let g = Grid::new(64).unwrap();
        let s0 = tg_state(&g, Field::zeros(&g, Kind::QTensor));
        let w0 = Field::scalar_fn(&g, |x, y| 2.0 * x.cos() * y.cos());
        assert!(s0.omega.sub(&w0).linf_norm() < 1e-12);
        let mut s = s0.clone();
        for _ in 0..100 {
            s = euler_step(&s, 1e-2).unwrap();
        }
        assert!(s.omega.sub(&w0).l2_norm() <= 1e-8);
        assert!(s.velocity().sub(&s0.velocity()).linf_norm() < 1e-8);
    }

    #[test]
    fn enstrophy_is_conserved_and_constant_v3_unchanged() {
        let g = Grid::new(32).unwrap();
        let (u, _) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 4,
                ..InitConfig::seeded(4)
            },
        )
        .unwrap();
        let mut s = LimitState::from_velocity(&u, Field::zeros(&g, Kind::QTensor)).unwrap();
        s.v3 = Field::scalar_fn(&g, |_, _| 0.7);
        let z0 = s.omega.l2_norm();
        for _ in 0..100 {
            s = euler_step(&s, 5e-3).unwrap();
        }
        assert!((s.omega.l2_norm() - z0).abs() <= 1e-6 * 0.5);
        assert!(s.v3.data[0].iter().all(|v| (v - 0.7).abs() < 1e-13));
    }

    #[test]
    fn vorticity_must_be_mean_free() {
        let g = Grid::new(8).unwrap();
        let w = Field::scalar_fn(&g, |_, _| 1.0);
        let z = Field::zeros(&g, Kind::Scalar);
        assert!(LimitState::new(w, z.clone(), Field::zeros(&g, Kind::QTensor)).is_err());
    }

    #[test]
    fn zero_flow_reduces_to_reaction_ode() {
        let g = Grid::new(32).unwrap();
        let p = p0();
        let (_, q) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 2,
                ..InitConfig::seeded(2)
            },
        )
        .unwrap();
        let mut sol = LimitSolver::new(
            &LimitState::from_velocity(&Field::zeros(&g, Kind::Vec3), q.clone()).unwrap(),
            p,
            0.0,
        )
        .unwrap();
        sol.advance_to(1.0, 1e-2).unwrap();
        let r = sol.r();
        let cfg = OdeConfig::new(1e-3, 1.0);
        for i in (0..g.len()).step_by(23) {
            let expect = integrate_reaction(&q.q_at(i), &p, &cfg).unwrap();
            assert!((r.q_at(i) - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn rigid_rotation_keeps_eigenvalues_along_paths() {
        let g = Grid::new(64).unwrap();
        let flow = StationaryFlow::from_modes(
            "cell",
            vec![StreamMode {
                kx: 1.0,
                ky: 0.0,
                a: 1.0,
                b: 0.0,
            }],
        );
        let (_, mut q) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 2,
                ..InitConfig::seeded(6)
            },
        )
        .unwrap();
        fit_into_interval(&mut q, &p0(), 0.9).unwrap();
        let bulk_off = p0().with_bulk(0.0, 0.0, 0.0);
        let mut sol = LimitSolver::with_flow(&flow, &q, bulk_off, 0.0).unwrap();
        sol.advance_to(0.5, 2e-3).unwrap();
        let r = sol.r();
        let src = FieldSource::new(&q);
        for i in (0..g.len()).step_by(97) {
            let (x, y) = g.point(i);
            let (a, _) = backward_characteristic(&flow, [x, y], 0.5, 1e-3);
            let e0 = src.at(a[0], a[1]).eigenvalues().as_array();
            let e1 = r.q_at(i).eigenvalues().as_array();
            for k in 0..3 {
                assert!((e0[k] - e1[k]).abs() < 1e-6, "{e0:?} {e1:?}");
            }
        }
    }

    #[test]
    fn trajectories_trivial_and_constant_spin() {
        let z = StationaryFlow::zero();
        let seeds = [[0.1, 0.2], [-1.0, 2.0]];
        let set = trace_particles(&z, &seeds, 1.0, 0.1, Direction::Forward).unwrap();
        assert_eq!(set.final_positions(), &seeds);
        assert!(set
            .final_rotations()
            .iter()
            .all(|b| *b == Matrix3::identity()));

        // shear v = (sin y, 0): Ω is constant along each (horizontal) path
        let sh = StationaryFlow::shear();
        let seeds = [[0.3, 0.4], [1.0, -2.0]];
        let t = 2.0;
        let set = trace_particles(&sh, &seeds, t, 1e-3, Direction::Forward).unwrap();
        for (j, s) in seeds.iter().enumerate() {
            let w = spin(&sh, *s, 0.0);
            let expect = (w * t).exp();
            assert!((set.final_rotations()[j] - expect).norm() < 1e-8);
            assert!((set.final_positions()[j][0] - (s[0] + t * s[1].sin())).abs() < 1e-10);
        }
        let back = trace_particles(&sh, &seeds, t, 1e-3, Direction::Backward).unwrap();
        assert!((back.final_positions()[0][0] - (0.3 - t * 0.4f64.sin())).abs() < 1e-10);
    }

    #[test]
    fn taylor_green_paths_carry_vorticity() {
        let tg = StationaryFlow::taylor_green();
        let seeds: Vec<[f64; 2]> = (0..100)
            .map(|k| [-3.0 + 0.06 * k as f64, 2.9 - 0.057 * k as f64])
            .collect();
        let set = trace_particles(&tg, &seeds, 5.0, 1e-3, Direction::Forward).unwrap();
        assert!(set.vorticity_deviation() <= 1e-6);
        assert!(set.orthogonality_error() <= 1e-8);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            1 + 100 * set.times.len()
        );
    }

    #[test]
    fn oracle_trivial_cases_and_precondition() {
        let g = Grid::new(16).unwrap();
        let p = p0();
        let q0 = s_plus_uniform(&g, &p);
        let tg = StationaryFlow::taylor_green();
        let r = lagrangian_oracle(&q0, &tg, &p, 0.0, 1e-3).unwrap();
        assert_eq!(r.field, q0);
        let r = lagrangian_oracle(&q0, &StationaryFlow::zero(), &p, 3.0, 1e-2).unwrap();
        assert_eq!(r.field, q0);
        let off = q0.scaled(0.9);
        assert!(matches!(
            lagrangian_oracle(&off, &tg, &p, 1.0, 1e-3),
            Err(Error::Domain(_))
        ));
        let series = lagrangian_oracle_series(&q0, &tg, &p, &[0.4, 1.0], 1e-3).unwrap();
        let direct = lagrangian_oracle(&q0, &tg, &p, 1.0, 1e-3).unwrap();
        assert!(series[1].field.sub(&direct.field).linf_norm() < 1e-12);
        assert!(lagrangian_oracle_series(&q0, &tg, &p, &[1.0, 0.5], 1e-3).is_err());
    }

    #[test]
    fn oracle_preserves_spectrum_and_matches_transport() {
        let g = Grid::new(32).unwrap();
        let p = p0();
        let q0 = s_plus_uniform(&g, &p);
        let tg = StationaryFlow::taylor_green();
        let rep = lagrangian_oracle(&q0, &tg, &p, 1.0, 1e-3).unwrap();
        assert!(rep.spectrum_spread <= 1e-6);
        assert!(rep.orthogonality <= 1e-8);
        assert!(rep.vorticity_deviation <= 1e-6);
        let mut sol = LimitSolver::with_flow(&tg, &q0, p, 0.0).unwrap();
        sol.advance_to(1.0, 2e-3).unwrap();
        let rel = sol.r().sub(&rep.field).l2_norm() / rep.field.l2_norm();
        assert!(rel < 1e-3, "relative discrepancy {rel:e}");
    }

    #[test]
    fn coupled_and_frozen_transport_agree_on_stationary_flow() {
        let g = Grid::new(32).unwrap();
        let p = p0();
        let tg = StationaryFlow::taylor_green();
        let (_, mut q) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 2,
                ..InitConfig::seeded(1)
            },
        )
        .unwrap();
        fit_into_interval(&mut q, &p, 0.9).unwrap();
        let mut a = LimitSolver::new(&tg_state(&g, q.clone()), p, 0.6).unwrap();
        let mut b = LimitSolver::with_flow(&tg, &q, p, 0.6).unwrap();
        a.advance_to(0.3, 1e-2).unwrap();
        b.advance_to(0.3, 1e-2).unwrap();
        assert!(a.r().sub(&b.r()).linf_norm() < 1e-10);
        let single = transport_q_step(&tg_state(&g, q.clone()), &p, 0.6, 1e-2).unwrap();
        let mut c = LimitSolver::with_flow(&tg, &q, p, 0.6).unwrap();
        c.step(1e-2).unwrap();
        assert!(single.r.sub(&c.r()).linf_norm() < 1e-12);
    }

    #[test]
    fn error_functional_structure() {
        let g = Grid::new(16).unwrap();
        let w0 = Field::zeros(&g, Kind::Vec3);
        let s0 = Field::zeros(&g, Kind::QTensor);
        assert_eq!(error_functional(&w0, &s0, 0.3), 0.0);
        let c = 1.0 / (2.0 * std::f64::consts::PI);
        let w1 = Field::vec3_fn(&g, |_, _| [c, 0.0, 0.0]);
        assert!((error_functional(&w1, &s0, 0.3) - 1.0).abs() < 1e-12);
        let s = Field::qtensor_fn(&g, |x, y| {
            QTensor::new(x.sin(), 0.2, 0.0, (x + y).cos(), 0.1)
        });
        let (a1, a2) = (
            error_functional(&w0, &s, 0.1),
            error_functional(&w0, &s, 0.2),
        );
        let ss = s.to_spectral();
        let (gr, l2) = (grad_l2_sq(&ss), ss.sobolev_sq(0));
        assert!((a1 - (0.01 * gr + 0.1 * l2)).abs() < 1e-12);
        assert!((a2 - (4.0 * 0.01 * gr + 2.0 * 0.1 * l2)).abs() < 1e-12);
    }

    #[test]
    fn ericksen_study_sanity_mode_and_validation() {
        let g = Grid::new(16).unwrap();
        let p = p0();
        let u = sample_velocity(&StationaryFlow::taylor_green(), &g, 0.0);
        let (_, mut q) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 2,
                ..InitConfig::seeded(3)
            },
        )
        .unwrap();
        fit_into_interval(&mut q, &p, 0.5).unwrap();
        let cfg = StudyConfig {
            t_end: 0.2,
            dt: 1e-3,
            sample_dt: 0.05,
        };
        let st = ericksen_study(&u, &q, &p, &[0.0], &cfg).unwrap();
        assert!(st.rows[0].sup_y <= 1e-8, "{:?}", st.rows);
        assert_eq!(st.series[0].len(), 5);
        assert!(ericksen_study(&u, &q, &p, &[], &cfg).is_err());
        assert!(ericksen_study(&u, &q, &p, &[0.1, 0.2, 0.1], &cfg).is_err());
    }

    #[test]
    fn filter_is_off_by_default_and_damps_top_modes() {
        let g = Grid::new(16).unwrap();
        let mut f = Field::scalar_fn(&g, |x, y| x.cos() + (7.0 * y).cos()).to_spectral();
        ExpFilter::default().apply(&mut f);
        let out = f.to_physical();
        let damp = (-36.0 * (7.0f64 / 8.0).powi(36)).exp();
        let low = (-36.0 * (1.0f64 / 8.0).powi(36)).exp();
        let expect = Field::scalar_fn(&g, |x, y| low * x.cos() + damp * (7.0 * y).cos());
        assert!(out.sub(&expect).linf_norm() < 1e-14);
        assert!(damp < 0.8);
        let g8 = Grid::new(8).unwrap();
        let sol = LimitSolver::with_flow(
            &StationaryFlow::zero(),
            &Field::zeros(&g8, Kind::QTensor),
            p0(),
            0.0,
        )
        .unwrap();
        assert!(sol.filter.is_none());
    }
}
