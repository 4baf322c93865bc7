//! Prescribed velocity fields.
//!
//! Built-in flows come from trigonometric stream functions `ψ`, with velocity
//! `v = (∂_y ψ, -∂_x ψ, 0)` and vorticity `ω = ∂_x v₂ - ∂_y v₁ = -Δψ`.

use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Axis, Field, Grid, Kind};

/// A velocity known at arbitrary points and times.
pub trait PrescribedFlow: Sync + Send {
    fn velocity(&self, x: f64, y: f64, t: f64) -> [f64; 3];

    /// `(∇v)_ij = ∂_j v_i`; the third column is zero.
    fn gradient(&self, x: f64, y: f64, t: f64) -> Matrix3<f64>;

    fn vorticity(&self, x: f64, y: f64, t: f64) -> f64 {
        let g = self.gradient(x, y, t);
        g[(1, 0)] - g[(0, 1)]
    }

    fn is_stationary(&self) -> bool {
        true
    }
}

pub fn sample_velocity(flow: &dyn PrescribedFlow, grid: &Arc<Grid>, t: f64) -> Field {
    Field::vec3_fn(grid, |x, y| flow.velocity(x, y, t))
}

pub fn sample_gradients(flow: &dyn PrescribedFlow, grid: &Arc<Grid>, t: f64) -> Vec<Matrix3<f64>> {
    (0..grid.len())
        .map(|i| {
            let (x, y) = grid.point(i);
            flow.gradient(x, y, t)
        })
        .collect()
}

pub fn sample_vorticity(flow: &dyn PrescribedFlow, grid: &Arc<Grid>, t: f64) -> Field {
    Field::scalar_fn(grid, |x, y| flow.vorticity(x, y, t))
}

/// One term `a cos(k·x) + b sin(k·x)` of a stream function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamMode {
    pub kx: f64,
    pub ky: f64,
    pub a: f64,
    pub b: f64,
}

/// Trigonometric stream-function flow with an optional out-of-plane velocity built the
/// same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryFlow {
    pub name: String,
    pub modes: Vec<StreamMode>,
    #[serde(default)]
    pub v3_modes: Vec<StreamMode>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Derivs {
    f: f64,
    fx: f64,
    fy: f64,
    fxx: f64,
    fxy: f64,
    fyy: f64,
}

fn trig_derivs(modes: &[StreamMode], x: f64, y: f64) -> Derivs {
    let mut d = Derivs::default();
    for m in modes {
        let (s, c) = (m.kx * x + m.ky * y).sin_cos();
        let v = m.a * c + m.b * s;
        let dv = -m.a * s + m.b * c;
        d.f += v;
        d.fx += m.kx * dv;
        d.fy += m.ky * dv;
        d.fxx -= m.kx * m.kx * v;
        d.fxy -= m.kx * m.ky * v;
        d.fyy -= m.ky * m.ky * v;
    }
    d
}

impl StationaryFlow {
    pub fn taylor_green() -> Self {
        // cos x cos y = (cos(x + y) + cos(x - y)) / 2
        Self::from_modes(
            "taylor_green",
            vec![
                StreamMode {
                    kx: 1.0,
                    ky: 1.0,
                    a: 0.5,
                    b: 0.0,
                },
                StreamMode {
                    kx: 1.0,
                    ky: -1.0,
                    a: 0.5,
                    b: 0.0,
                },
            ],
        )
    }

    pub fn shear() -> Self {
        Self::from_modes(
            "shear",
            vec![StreamMode {
                kx: 0.0,
                ky: 1.0,
                a: -1.0,
                b: 0.0,
            }],
        )
    }

    /// `ψ = cos x + 0.6 sin y` with a passive `v3 = 0.3 sin x + 0.2 cos y`; every mode has
    /// `|k| = 1`, so the in-plane part is a steady Euler flow.
    pub fn cellular() -> Self {
        Self::from_modes(
            "cellular",
            vec![
                StreamMode {
                    kx: 1.0,
                    ky: 0.0,
                    a: 1.0,
                    b: 0.0,
                },
                StreamMode {
                    kx: 0.0,
                    ky: 1.0,
                    a: 0.0,
                    b: 0.6,
                },
            ],
        )
        .with_v3(vec![
            StreamMode {
                kx: 1.0,
                ky: 0.0,
                a: 0.0,
                b: 0.3,
            },
            StreamMode {
                kx: 0.0,
                ky: 1.0,
                a: 0.2,
                b: 0.0,
            },
        ])
    }

    pub fn zero() -> Self {
        Self::from_modes("zero", vec![])
    }

    pub fn from_modes(name: &str, modes: Vec<StreamMode>) -> Self {
        Self {
            name: name.to_string(),
            modes,
            v3_modes: vec![],
        }
    }

    pub fn with_v3(mut self, v3_modes: Vec<StreamMode>) -> Self {
        self.v3_modes = v3_modes;
        self
    }

    pub fn stream(&self, x: f64, y: f64) -> f64 {
        trig_derivs(&self.modes, x, y).f
    }

    /// Hessian `[[ψ_xx, ψ_xy], [ψ_xy, ψ_yy]]` of the stream function.
    pub fn stream_hessian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let d = trig_derivs(&self.modes, x, y);
        [[d.fxx, d.fxy], [d.fxy, d.fyy]]
    }

    /// `∇ω` computed from third derivatives of the stream function.
    pub fn vorticity_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let k2 = m.kx * m.kx + m.ky * m.ky;
            let (s, c) = (m.kx * x + m.ky * y).sin_cos();
            let dv = -m.a * s + m.b * c;
            g[0] += k2 * m.kx * dv;
            g[1] += k2 * m.ky * dv;
        }
        g
    }

    /// `max |v·∇ω|` over the grid (zero for stationary Euler flows).
    pub fn stationarity_residual(&self, grid: &Arc<Grid>) -> f64 {
        (0..grid.len())
            .map(|i| {
                let (x, y) = grid.point(i);
                let v = self.velocity(x, y, 0.0);
                let g = self.vorticity_gradient(x, y);
                (v[0] * g[0] + v[1] * g[1]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.a == 0.0 && m.b == 0.0)
            && self.v3_modes.iter().all(|m| m.a == 0.0 && m.b == 0.0)
    }
}

impl PrescribedFlow for StationaryFlow {
    fn velocity(&self, x: f64, y: f64, _t: f64) -> [f64; 3] {
        let d = trig_derivs(&self.modes, x, y);
        let v3 = if self.v3_modes.is_empty() {
            0.0
        } else {
            trig_derivs(&self.v3_modes, x, y).f
        };
        [d.fy, -d.fx, v3]
    }

    fn gradient(&self, x: f64, y: f64, _t: f64) -> Matrix3<f64> {
        let d = trig_derivs(&self.modes, x, y);
        let w = if self.v3_modes.is_empty() {
            Derivs::default()
        } else {
            trig_derivs(&self.v3_modes, x, y)
        };
        Matrix3::new(
            d.fxy, d.fyy, 0.0, //
            -d.fxx, -d.fxy, 0.0, //
            w.fx, w.fy, 0.0,
        )
    }
}

/// Looks up `taylor_green`, `shear`, `cellular` or `zero`.
pub fn builtin_flow(name: &str) -> Result<StationaryFlow> {
    match name {
        "taylor_green" => Ok(StationaryFlow::taylor_green()),
        "shear" => Ok(StationaryFlow::shear()),
        "cellular" => Ok(StationaryFlow::cellular()),
        "zero" => Ok(StationaryFlow::zero()),
        other => Err(Error::Validation(format!(
            "unknown flow '{other}' (expected taylor_green, shear, cellular or zero)"
        ))),
    }
}

/// A frozen velocity sampled on a grid; off-grid values by Fourier summation.
#[derive(Debug, Clone)]
pub struct SampledFlow {
    u: crate::spectral::SpectralField,
    ux: crate::spectral::SpectralField,
    uy: crate::spectral::SpectralField,
}

impl SampledFlow {
    pub fn new(u: &Field) -> Result<SampledFlow> {
        if u.kind != Kind::Vec3 {
            return Err(Error::Validation("sampled flow needs a vec3 field".into()));
        }
        let s = u.to_spectral();
        Ok(SampledFlow {
            ux: s.derivative(Axis::X, 1),
            uy: s.derivative(Axis::Y, 1),
            u: s,
        })
    }
}

impl PrescribedFlow for SampledFlow {
    fn velocity(&self, x: f64, y: f64, _t: f64) -> [f64; 3] {
        std::array::from_fn(|c| self.u.eval(c, x, y))
    }

    fn gradient(&self, x: f64, y: f64, _t: f64) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for i in 0..3 {
            g[(i, 0)] = self.ux.eval(i, x, y);
            g[(i, 1)] = self.uy.eval(i, x, y);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtin_formulas() {
        let tg = builtin_flow("taylor_green").unwrap();
        let (x, y) = (0.3f64, -1.2f64);
        let v = tg.velocity(x, y, 0.0);
        assert_abs_diff_eq!(v[0], -x.cos() * y.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], x.sin() * y.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            tg.vorticity(x, y, 0.0),
            2.0 * x.cos() * y.cos(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(tg.stream(x, y), x.cos() * y.cos(), epsilon = 1e-15);

        let sh = builtin_flow("shear").unwrap();
        assert_eq!(sh.velocity(x, y, 0.0), [y.sin(), 0.0, 0.0]);
        assert_abs_diff_eq!(sh.vorticity(x, y, 0.0), -y.cos(), epsilon = 1e-15);

        let z = builtin_flow("zero").unwrap();
        assert_eq!(z.vorticity(x, y, 0.0), 0.0);
        assert!(z.is_zero());
        assert!(builtin_flow("vortex").is_err());
    }

    #[test]
    fn builtins_are_stationary() {
        let g = Grid::new(32).unwrap();
        for name in ["taylor_green", "shear", "zero"] {
            assert!(builtin_flow(name).unwrap().stationarity_residual(&g) <= 1e-10);
        }
        assert!(StationaryFlow::cellular().stationarity_residual(&g) <= 1e-10);
    }

    #[test]
    fn gradient_matches_spectral_derivative() {
        let g = Grid::new(32).unwrap();
        let f = StationaryFlow::from_modes(
            "mix",
            vec![
                StreamMode {
                    kx: 1.0,
                    ky: 0.0,
                    a: 1.0,
                    b: 0.0,
                },
                StreamMode {
                    kx: 0.0,
                    ky: 1.0,
                    a: 0.0,
                    b: 0.6,
                },
                StreamMode {
                    kx: 2.0,
                    ky: -1.0,
                    a: 0.2,
                    b: 0.1,
                },
            ],
        )
        .with_v3(vec![StreamMode {
            kx: 1.0,
            ky: 1.0,
            a: 0.3,
            b: 0.0,
        }]);
        let u = sample_velocity(&f, &g, 0.0);
        let grads = sample_gradients(&f, &g, 0.0);
        let s = u.to_spectral();
        let ux = s.derivative(Axis::X, 1).to_physical();
        let uy = s.derivative(Axis::Y, 1).to_physical();
        for i in (0..g.len()).step_by(37) {
            for c in 0..3 {
                assert_abs_diff_eq!(grads[i][(c, 0)], ux.data[c][i], epsilon = 1e-12);
                assert_abs_diff_eq!(grads[i][(c, 1)], uy.data[c][i], epsilon = 1e-12);
            }
        }
        let sf = SampledFlow::new(&u).unwrap();
        let (x, y) = (0.77, 2.1);
        let a = f.velocity(x, y, 0.0);
        let b = sf.velocity(x, y, 0.0);
        for c in 0..3 {
            assert_abs_diff_eq!(a[c], b[c], epsilon = 1e-12);
        }
        assert!((f.gradient(x, y, 0.0) - sf.gradient(x, y, 0.0)).norm() < 1e-12);
    }
}
