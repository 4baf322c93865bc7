//! Seed-deterministic band-limited initial data.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beris::eigen_range;
use crate::error::{Error, Result};
use crate::qtensor::{stationary_scalars, Params, QTensor};
use crate::spectral::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub seed: u64,
    /// Modes with `|k|² <= kmax_sq` are populated.
    pub kmax_sq: i64,
    /// Target `max |u|` (in-plane and out-of-plane components together).
    pub u_amp: f64,
    /// Target `max |Q|` before any interval fitting.
    pub q_amp: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kmax_sq: 16,
            u_amp: 1.0,
            q_amp: 0.3,
        }
    }
}

impl InitConfig {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Wavevectors of one half-plane with `0 < |k|² <= kmax_sq`.
fn half_plane_modes(kmax_sq: i64) -> Vec<(i64, i64)> {
    let r = (kmax_sq as f64).sqrt() as i64;
    let mut out = Vec::new();
    for kx in 0..=r {
        for ky in -r..=r {
            let k2 = kx * kx + ky * ky;
            if k2 == 0 || k2 > kmax_sq || (kx == 0 && ky < 0) {
                continue;
            }
            out.push((kx, ky));
        }
    }
    out
}

struct Mode {
    k: (f64, f64),
    a: f64,
    b: f64,
}

fn random_modes(rng: &mut ChaCha8Rng, modes: &[(i64, i64)], decay: f64) -> Vec<Mode> {
    modes
        .iter()
        .map(|&(kx, ky)| {
            let kk = ((kx * kx + ky * ky) as f64).powf(decay);
            Mode {
                k: (kx as f64, ky as f64),
                a: rng.random_range(-1.0..1.0) / kk,
                b: rng.random_range(-1.0..1.0) / kk,
            }
        })
        .collect()
}

/// Value and gradient of `Σ a cos(k·x) + b sin(k·x)`.
fn eval(modes: &[Mode], x: f64, y: f64) -> (f64, f64, f64) {
    let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for m in modes {
        let ph = m.k.0 * x + m.k.1 * y;
        let (s, c) = ph.sin_cos();
        v += m.a * c + m.b * s;
        let d = -m.a * s + m.b * c;
        gx += m.k.0 * d;
        gy += m.k.1 * d;
    }
    (v, gx, gy)
}

/// Random divergence-free, mean-free velocity and symmetric traceless order parameter.
pub fn random_state(grid: &Arc<Grid>, cfg: &InitConfig) -> Result<(Field, Field)> {
    if cfg.kmax_sq < 1 {
        return Err(Error::Validation(format!(
            "kmax_sq >= 1 required, got {}",
            cfg.kmax_sq
        )));
    }
    if 3.0 * (cfg.kmax_sq as f64).sqrt() > grid.n() as f64 {
        log::warn!(
            "initial modes up to |k|^2 = {} are close to the dealiasing cutoff",
            cfg.kmax_sq
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let modes = half_plane_modes(cfg.kmax_sq);
    let psi = random_modes(&mut rng, &modes, 1.0);
    let w3 = random_modes(&mut rng, &modes, 0.5);
    let qm: Vec<Vec<Mode>> = (0..5)
        .map(|_| random_modes(&mut rng, &modes, 0.5))
        .collect();
    let qmean: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));

    let mut u = Field::vec3_fn(grid, |x, y| {
        let (_, px, py) = eval(&psi, x, y);
        let (v3, _, _) = eval(&w3, x, y);
        [py, -px, v3]
    });
    let mut q = Field::qtensor_fn(grid, |x, y| {
        QTensor::from_components(std::array::from_fn(|c| qmean[c] + eval(&qm[c], x, y).0))
    });
    let umax = u.linf_norm();
    if umax > 0.0 {
        u = u.scaled(cfg.u_amp / umax);
    }
    let qmax = q.linf_norm();
    if qmax > 0.0 {
        q = q.scaled(cfg.q_amp / qmax);
    }
    Ok((u, q))
}

/// Rescales `q` so that its eigenvalues fill `fill` (in `(0, 1]`) of the tighter side of
/// `[-m, 2m]`. Returns the factor applied.
pub fn fit_into_interval(q: &mut Field, p: &Params, fill: f64) -> Result<f64> {
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(Error::Validation(format!(
            "fill must lie in (0, 1], got {fill}"
        )));
    }
    let st = stationary_scalars(p)?;
    let (lo, hi) = eigen_range(q);
    let mut theta = f64::INFINITY;
    if lo < 0.0 {
        theta = theta.min(st.m / -lo);
    }
    if hi > 0.0 {
        theta = theta.min(2.0 * st.m / hi);
    }
    if !theta.is_finite() {
        return Ok(1.0);
    }
    theta *= fill;
    *q = q.scaled(theta);
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{divergence, Kind};

    #[test]
    fn random_data_is_admissible_and_reproducible() {
        let g = Grid::new(32).unwrap();
        let (u, q) = random_state(&g, &InitConfig::seeded(42)).unwrap();
        let (u2, q2) = random_state(&g, &InitConfig::seeded(42)).unwrap();
        assert_eq!(u, u2);
        assert_eq!(q, q2);
        assert_eq!(u.kind, Kind::Vec3);
        assert!(divergence(&u.to_spectral()).sobolev_norm(0) < 1e-12);
        assert!(u.mean(0).abs() < 1e-14 && u.mean(1).abs() < 1e-14);
        assert!((u.linf_norm() - 1.0).abs() < 1e-12);
        let (u3, _) = random_state(&g, &InitConfig::seeded(43)).unwrap();
        assert_ne!(u, u3);
    }

    #[test]
    fn data_is_band_limited() {
        let g = Grid::new(32).unwrap();
        let (u, q) = random_state(&g, &InitConfig::seeded(1)).unwrap();
        for f in [u.to_spectral(), q.to_spectral()] {
            for c in &f.data {
                for (s, v) in c.iter().enumerate() {
                    if g.k2(s) > 16.0 {
                        assert!(v.norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn fitting_lands_inside_interval() {
        let g = Grid::new(16).unwrap();
        let p = Params::default().with_bulk(-0.2, 1.0, 1.0);
        let st = stationary_scalars(&p).unwrap();
        let (_, mut q) = random_state(
            &g,
            &InitConfig {
                q_amp: 3.0,
                ..InitConfig::seeded(9)
            },
        )
        .unwrap();
        fit_into_interval(&mut q, &p, 0.95).unwrap();
        let (lo, hi) = eigen_range(&q);
        assert!(lo >= -st.m && hi <= 2.0 * st.m);
        assert!((lo + 0.95 * st.m).abs() < 1e-12 || (hi - 1.9 * st.m).abs() < 1e-12);
    }
}
