use std::sync::Arc;

use beris_core::beris::{BerisSolver, SimState, StepConfig};
use beris_core::init::{fit_into_interval, random_state, InitConfig};
use beris_core::snapshot;
use beris_core::spectral::Grid;
use beris_core::Params;

/// Radius beyond which the bulk reaction pulls `|Q|` inwards, using `tr Q³ ≤ |Q|³/√6`.
fn inward_radius(p: &Params) -> f64 {
    let r6 = 6f64.sqrt();
    (p.b / r6 + (p.b * p.b / 6.0 - 4.0 * p.a * p.c).sqrt()) / (2.0 * p.c)
}

fn m_of(p: &Params) -> f64 {
    (p.b + (p.b * p.b - 24.0 * p.a * p.c).sqrt()) / (12.0 * p.c)
}

fn fitted_state(g: &Arc<Grid>, p: &Params, seed: u64) -> SimState {
    let (u, mut q) = random_state(
        g,
        &InitConfig {
            kmax_sq: 8,
            ..InitConfig::seeded(seed)
        },
    )
    .unwrap();
    fit_into_interval(&mut q, p, 0.9).unwrap();
    SimState::new(u, q).unwrap()
}

#[test]
fn corotational_run_keeps_interval_bound_energy_and_divergence() {
    let g = Grid::new(32).unwrap();
    let p = Params::default();
    let m = m_of(&p);
    let state = fitted_state(&g, &p, 1);
    let dt = 5e-3;
    let mut s = BerisSolver::new(&state, p, StepConfig::with_dt(dt)).unwrap();
    let r0 = s.monitor();
    let bound = r0.linf_q.max(inward_radius(&p)) + 1e-3;
    let mut prev = r0.energy();
    for _ in 0..200 {
        s.step().unwrap();
        let r = s.monitor();
        assert!(
            r.min_eig >= -m - 1e-3 && r.max_eig <= 2.0 * m + 1e-3,
            "{r:?}"
        );
        assert!(r.linf_q <= bound, "{} > {bound}", r.linf_q);
        assert!(r.div_u <= 1e-10);
        assert!(
            r.energy() - prev <= 1e-6 * r0.energy() * dt,
            "energy rose at t = {}",
            r.t
        );
        prev = r.energy();
    }
}

#[test]
fn restarting_from_a_snapshot_continues_the_run() {
    let g = Grid::new(16).unwrap();
    let p = Params::default();
    let cfg = StepConfig::with_dt(1e-2);
    let state = fitted_state(&g, &p, 4);
    let mut straight = BerisSolver::new(&state, p, cfg).unwrap();
    for _ in 0..40 {
        straight.step().unwrap();
    }

    let mut first = BerisSolver::new(&state, p, cfg).unwrap();
    for _ in 0..20 {
        first.step().unwrap();
    }
    let mid = first.state();
    let (mut ub, mut qb) = (Vec::new(), Vec::new());
    snapshot::write_snapshot(&mut ub, &mid.u, mid.t, Some(&p)).unwrap();
    snapshot::write_snapshot(&mut qb, &mid.q, mid.t, Some(&p)).unwrap();
    let (u, q) = (
        snapshot::read_snapshot(ub.as_slice()).unwrap(),
        snapshot::read_snapshot(qb.as_slice()).unwrap(),
    );
    assert_eq!(u.params, Some(p));
    let mut resumed = SimState::new(u.field, q.field).unwrap();
    resumed.t = u.time;
    let mut second = BerisSolver::new(&resumed, p, cfg).unwrap();
    for _ in 0..20 {
        second.step().unwrap();
    }
    let (a, b) = (straight.state(), second.state());
    assert!((a.t - b.t).abs() < 1e-12);
    assert!(a.u.sub(&b.u).linf_norm() < 1e-12);
    assert!(a.q.sub(&b.q).linf_norm() < 1e-12);
}

#[test]
fn equal_seeds_give_identical_runs() {
    let g = Grid::new(16).unwrap();
    let p = Params::default().with_xi(0.7);
    let run = || {
        let mut s =
            BerisSolver::new(&fitted_state(&g, &p, 8), p, StepConfig::with_dt(1e-2)).unwrap();
        for _ in 0..10 {
            s.step().unwrap();
        }
        s.monitor().csv_row()
    };
    assert_eq!(run(), run());
}
