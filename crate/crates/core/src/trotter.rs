//! Lie-Trotter splitting of the order-parameter equation with a prescribed velocity:
//! the bulk reaction flow alternated with the linear transport/rotation/diffusion
//! evolution, and the convergence study against an unsplit reference.

use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bulk_ode::{rk4_eigen_step, steps_for, EigenPair};
use crate::error::{Error, Result};
use crate::flows::{sample_gradients, sample_velocity, PrescribedFlow};
use crate::qtensor::{bulk_gradient, Params, QTensor};
use crate::rates::loglog_slope;
use crate::spectral::{Axis, Field, Grid, Kind, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Number of composition intervals over `[0, t_end]`.
    pub n_split: usize,
    pub t_end: f64,
    /// Largest step used inside each half-flow.
    pub dt: f64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_split < 1 {
            return Err(Error::Validation("n_split >= 1 violated".into()));
        }
        if !(self.t_end >= 0.0 && self.dt > 0.0) {
            return Err(Error::Validation(format!(
                "need t_end >= 0 and dt > 0 (t_end = {}, dt = {})",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }
}

/// Evaluates `-v·∇R + ΩR - RΩ` (optionally `- G(R)`) with diffusion handled by the
/// integrating factor.
struct Transport<'a> {
    grid: Arc<Grid>,
    flow: &'a dyn PrescribedFlow,
    eps: f64,
    bulk: Option<Params>,
    frozen: Option<(Field, Vec<Matrix3<f64>>)>,
}

impl<'a> Transport<'a> {
    fn new(grid: &Arc<Grid>, flow: &'a dyn PrescribedFlow, eps: f64, bulk: Option<Params>) -> Self {
        let frozen = flow.is_stationary().then(|| {
            (
                sample_velocity(flow, grid, 0.0),
                sample_gradients(flow, grid, 0.0),
            )
        });
        Transport {
            grid: grid.clone(),
            flow,
            eps,
            bulk,
            frozen,
        }
    }

    fn rhs(&self, t: f64, rh: &SpectralField) -> SpectralField {
        let sampled;
        let (u, grads) = match &self.frozen {
            Some((u, g)) => (u, g),
            None => {
                sampled = (
                    sample_velocity(self.flow, &self.grid, t),
                    sample_gradients(self.flow, &self.grid, t),
                );
                (&sampled.0, &sampled.1)
            }
        };
        let r = rh.to_physical();
        let rx = rh.derivative(Axis::X, 1).to_physical();
        let ry = rh.derivative(Axis::Y, 1).to_physical();
        let bulk = self.bulk;
        let vals: Vec<QTensor> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let q = r.q_at(i);
                let w = 0.5 * (grads[i] - grads[i].transpose());
                let qm = q.to_matrix();
                let mut out = QTensor::from_matrix(&(w * qm - qm * w))
                    - (u.data[0][i] * rx.q_at(i) + u.data[1][i] * ry.q_at(i));
                if let Some(p) = &bulk {
                    out -= bulk_gradient(&q, p);
                }
                out
            })
            .collect();
        let mut f = Field::zeros(&self.grid, Kind::QTensor);
        for (i, v) in vals.into_iter().enumerate() {
            f.set_q(i, v);
        }
        let mut s = f.to_spectral();
        s.dealias();
        s
    }

    /// Integrating-factor RK4 from `s` to `t` in steps of at most `dt`.
    fn evolve(&self, r0: &SpectralField, s: f64, t: f64, dt: f64) -> Result<SpectralField> {
        let (n, h) = steps_for(t - s, dt);
        let g = &self.grid;
        let half: Vec<f64> = (0..g.spec_len())
            .map(|k| (-self.eps * g.k2(k) * 0.5 * h).exp())
            .collect();
        let full: Vec<f64> = half.iter().map(|e| e * e).collect();
        let combine =
            |a: &SpectralField, fa: &[f64], b: &SpectralField, fb: Option<&[f64]>, c: f64| {
                let mut out = a.clone();
                for (oc, bc) in out.data.iter_mut().zip(&b.data) {
                    for (k, (v, w)) in oc.iter_mut().zip(bc).enumerate() {
                        let wb: Complex64 = match fb {
                            Some(f) => *w * f[k],
                            None => *w,
                        };
                        *v = *v * fa[k] + c * wb;
                    }
                }
                out
            };
        let mut r = r0.clone();
        for i in 0..n {
            let t0 = s + i as f64 * h;
            let k1 = self.rhs(t0, &r);
            let k2 = self.rhs(t0 + 0.5 * h, &combine(&r, &half, &k1, Some(&half), 0.5 * h));
            let k3 = self.rhs(t0 + 0.5 * h, &combine(&r, &half, &k2, None, 0.5 * h));
            let k4 = self.rhs(t0 + h, &combine(&r, &full, &k3, Some(&half), h));
            let mut next = r.clone();
            for c in 0..next.data.len() {
                for k in 0..g.spec_len() {
                    next.data[c][k] = r.data[c][k] * full[k]
                        + h / 6.0
                            * (k1.data[c][k] * full[k]
                                + 2.0 * (k2.data[c][k] + k3.data[c][k]) * half[k]
                                + k4.data[c][k]);
                }
            }
            if !next.is_finite() {
                return Err(Error::Divergence {
                    time: t0 + h,
                    reason: "non-finite order parameter in transport".into(),
                });
            }
            r = next;
        }
        Ok(r)
    }
}

/// Solves `∂_t R - εΔR = -v·∇R + ΩR - RΩ` from `s` to `t`.
pub fn advection_diffusion_substep(
    r: &Field,
    flow: &dyn PrescribedFlow,
    s: f64,
    t: f64,
    eps: f64,
    dt: f64,
) -> Result<Field> {
    if !(t >= s) {
        return Err(Error::Validation(format!(
            "substep needs t >= s (s = {s}, t = {t})"
        )));
    }
    let tr = Transport::new(&r.grid, flow, eps, None);
    let mut rh = r.to_spectral();
    rh.dealias();
    Ok(tr.evolve(&rh, s, t, dt)?.to_physical())
}

/// Pointwise bulk flow over time `tau`, each point integrated in its own eigenframe.
pub fn reaction_flow(q: &Field, p: &Params, tau: f64, dt: f64) -> Result<Field> {
    let (n, h) = steps_for(tau, dt);
    let vals: Vec<Option<QTensor>> = (0..q.grid.len())
        .into_par_iter()
        .map(|i| {
            let (ev, frame) = q.q_at(i).eigen_decomposition();
            let mut e = EigenPair::new(ev[0], ev[1]);
            for _ in 0..n {
                e = rk4_eigen_step(&e, p, h);
            }
            (e.l1.is_finite() && e.l2.is_finite())
                .then(|| QTensor::from_eigenframe(&frame, e.l1, e.l2))
        })
        .collect();
    let mut out = Field::zeros(&q.grid, Kind::QTensor);
    for (i, v) in vals.into_iter().enumerate() {
        out.set_q(
            i,
            v.ok_or_else(|| Error::Divergence {
                time: tau,
                reason: "non-finite eigenvalues in reaction flow".into(),
            })?,
        );
    }
    Ok(out)
}

/// `U_n = Π_k V(kT/n, (k-1)T/n) F^{T/n}` applied to `q0`, reaction first in every interval.
pub fn splitting_solve(
    q0: &Field,
    flow: &dyn PrescribedFlow,
    p: &Params,
    cfg: &SplitConfig,
) -> Result<Field> {
    cfg.validate()?;
    let tr = Transport::new(&q0.grid, flow, p.eps, None);
    let tau = cfg.t_end / cfg.n_split as f64;
    let mut q = q0.clone();
    for k in 0..cfg.n_split {
        q = reaction_flow(&q, p, tau, cfg.dt)?;
        let mut qh = q.to_spectral();
        qh.dealias();
        q = tr
            .evolve(&qh, k as f64 * tau, (k + 1) as f64 * tau, cfg.dt)?
            .to_physical();
    }
    Ok(q)
}

/// Unsplit solve of `∂_t Q - εΔQ = -v·∇Q + ΩQ - QΩ - G(Q)`.
pub fn direct_solve(
    q0: &Field,
    flow: &dyn PrescribedFlow,
    p: &Params,
    t_end: f64,
    dt: f64,
) -> Result<Field> {
    let tr = Transport::new(&q0.grid, flow, p.eps, Some(*p));
    let mut qh = q0.to_spectral();
    qh.dealias();
    Ok(tr.evolve(&qh, 0.0, t_end, dt)?.to_physical())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub h2_error: f64,
    /// `log₂(e(n_prev) / e(n))`.
    pub log2_ratio: Option<f64>,
    pub slope_so_far: Option<f64>,
    /// `‖U_n - U_{n_prev}‖_{H²}`.
    pub successive_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log e` against `log n`.
    pub slope: Option<f64>,
    pub dt_ref: f64,
    /// `‖ref(dt_ref) - ref(dt_ref/2)‖_{H²}`.
    pub reference_error: f64,
}

impl RateStudy {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].h2_error < w[0].h2_error)
    }

    /// Reference self-error as a fraction of the coarsest splitting error.
    pub fn reference_fraction(&self) -> f64 {
        self.rows
            .first()
            .map(|r| self.reference_error / r.h2_error)
            .unwrap_or(f64::INFINITY)
    }
}

/// Splitting error in `H²` against a fine unsplit reference for each `n` in `n_list`.
pub fn rate_study(
    q0: &Field,
    flow: &dyn PrescribedFlow,
    p: &Params,
    t_end: f64,
    n_list: &[usize],
    dt_sub: f64,
) -> Result<RateStudy> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "n_list must be non-empty and ascending".into(),
        ));
    }
    let n_max = *n_list.last().unwrap();
    let dt_ref = (t_end / (16.0 * n_max as f64)).min(dt_sub);
    let reference = direct_solve(q0, flow, p, t_end, dt_ref)?;
    let finer = direct_solve(q0, flow, p, t_end, 0.5 * dt_ref)?;
    let reference_error = finer.sub(&reference).to_spectral().sobolev_norm(2);
    let mut rows: Vec<RateRow> = Vec::new();
    let mut prev: Option<Field> = None;
    for &n in n_list {
        let u = splitting_solve(
            q0,
            flow,
            p,
            &SplitConfig {
                n_split: n,
                t_end,
                dt: dt_sub,
            },
        )?;
        let e = u.sub(&finer).to_spectral().sobolev_norm(2);
        let successive_diff = prev
            .as_ref()
            .map(|pu| u.sub(pu).to_spectral().sobolev_norm(2));
        let log2_ratio = rows.last().map(|r| (r.h2_error / e).log2());
        let mut ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let mut es: Vec<f64> = rows.iter().map(|r| r.h2_error).collect();
        ns.push(n as f64);
        es.push(e);
        rows.push(RateRow {
            n,
            h2_error: e,
            log2_ratio,
            slope_so_far: loglog_slope(&ns, &es),
            successive_diff,
        });
        prev = Some(u);
    }
    let slope = rows.last().and_then(|r| r.slope_so_far);
    Ok(RateStudy {
        rows,
        slope,
        dt_ref,
        reference_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beris::eigen_range;
    use crate::flows::StationaryFlow;
    use crate::init::{fit_into_interval, random_state, InitConfig};
    use crate::qtensor::stationary_scalars;

    fn p0() -> Params {
        Params::default().with_bulk(-0.2, 1.0, 1.0).with_eps(0.5)
    }

    fn q_data(n: usize, seed: u64) -> Field {
        let g = Grid::new(n).unwrap();
        let (_, mut q) = random_state(
            &g,
            &InitConfig {
                kmax_sq: 5,
                ..InitConfig::seeded(seed)
            },
        )
        .unwrap();
        fit_into_interval(&mut q, &p0(), 0.95).unwrap();
        q
    }

    struct Rotation(f64);

    impl PrescribedFlow for Rotation {
        fn velocity(&self, _: f64, _: f64, _: f64) -> [f64; 3] {
            [0.0; 3]
        }
        fn gradient(&self, _: f64, _: f64, _: f64) -> Matrix3<f64> {
            Matrix3::new(0.0, -self.0, 0.0, self.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        }
    }

    #[test]
    fn zero_flow_is_heat_semigroup() {
        let g = Grid::new(16).unwrap();
        let q = Field::qtensor_fn(&g, |x, y| {
            QTensor::new((2.0 * x).sin(), (x + y).cos(), 0.0, y.cos(), 0.0)
        });
        let out =
            advection_diffusion_substep(&q, &StationaryFlow::zero(), 0.2, 0.7, 0.5, 1e-2).unwrap();
        let d = (-0.5f64 * 0.5).exp();
        let expect = Field::qtensor_fn(&g, |x, y| {
            QTensor::new(
                (-0.5f64 * 4.0 * 0.5).exp() * (2.0 * x).sin(),
                (-0.5f64 * 2.0 * 0.5).exp() * (x + y).cos(),
                0.0,
                d * y.cos(),
                0.0,
            )
        });
        assert!(out.sub(&expect).linf_norm() < 1e-10);
    }

    #[test]
    fn constant_rotation_conjugates_by_exponential() {
        let q = q_data(16, 3);
        let w = 0.7;
        let t = 0.9;
        let out = advection_diffusion_substep(&q, &Rotation(w), 0.0, t, 0.0, 1e-3).unwrap();
        // Ω = [[0, -w], [w, 0]] generates rotation by angle w t
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), w * t);
        let expect = q.map_q(|x| x.rotate(r.matrix()));
        assert!(out.sub(&expect).linf_norm() < 1e-10);
        let (a, b) = (eigen_range(&q), eigen_range(&out));
        assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
    }

    #[test]
    fn transport_does_not_increase_l2() {
        let q = q_data(32, 5);
        let tg = StationaryFlow::taylor_green();
        let out = advection_diffusion_substep(&q, &tg, 0.0, 0.5, 0.5, 1e-3).unwrap();
        assert!(out.l2_norm() <= q.l2_norm() + 1e-10);
        let inviscid = advection_diffusion_substep(&q, &tg, 0.0, 0.5, 0.0, 1e-3).unwrap();
        assert!(inviscid.l2_norm() <= q.l2_norm() + 1e-10);
    }

    #[test]
    fn no_bulk_splitting_equals_transport() {
        let q = q_data(16, 7);
        let p = p0().with_bulk(0.0, 0.0, 0.0);
        let tg = StationaryFlow::taylor_green();
        let split = splitting_solve(
            &q,
            &tg,
            &p,
            &SplitConfig {
                n_split: 8,
                t_end: 0.5,
                dt: 1e-3,
            },
        )
        .unwrap();
        let direct = advection_diffusion_substep(&q, &tg, 0.0, 0.5, p.eps, 1e-3).unwrap();
        assert!(split.sub(&direct).linf_norm() < 1e-12);
    }

    #[test]
    fn splitting_keeps_eigenvalues_in_interval() {
        let q = q_data(32, 8);
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let tg = StationaryFlow::taylor_green();
        let tau = 0.125;
        let tr = Transport::new(&q.grid, &tg, p.eps, None);
        let mut r = q.clone();
        for k in 0..8 {
            r = reaction_flow(&r, &p, tau, 1e-3).unwrap();
            let (lo, hi) = eigen_range(&r);
            assert!(lo >= -st.m - 1e-3 && hi <= 2.0 * st.m + 1e-3);
            r = tr
                .evolve(&r.to_spectral(), k as f64 * tau, (k + 1) as f64 * tau, 1e-3)
                .unwrap()
                .to_physical();
            let (lo, hi) = eigen_range(&r);
            assert!(lo >= -st.m - 1e-3 && hi <= 2.0 * st.m + 1e-3);
        }
    }

    #[test]
    fn zero_flow_splitting_converges_to_direct_solve() {
        let q = q_data(16, 9);
        let p = p0();
        let z = StationaryFlow::zero();
        let study = rate_study(&q, &z, &p, 0.5, &[2, 4, 8, 16], 1e-3).unwrap();
        assert!(study.strictly_decreasing(), "{study:?}");
        assert!(study.slope.unwrap() < -0.4);
    }

    #[test]
    fn rate_study_singleton_and_validation() {
        let q = q_data(16, 10);
        let s = rate_study(&q, &StationaryFlow::zero(), &p0(), 0.1, &[4], 1e-2).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert!(s.slope.is_none());
        assert!(rate_study(&q, &StationaryFlow::zero(), &p0(), 0.1, &[], 1e-2).is_err());
        assert!(rate_study(&q, &StationaryFlow::zero(), &p0(), 0.1, &[4, 2], 1e-2).is_err());
    }
}
