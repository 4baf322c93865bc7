//! The experiment registry. Each experiment appends to an [`Artifacts`] as it goes, so
//! that a run stopped by an error still leaves its partial output behind.

use std::sync::Arc;

use beris_core::beris::{BerisSolver, SimState, StepConfig};
use beris_core::bulk_ode::{
    eigenvalue_flow, hessian_spectrum, integrate_reaction, linearization_at_uniaxial, EigenPair,
    OdeConfig,
};
use beris_core::defects::{
    phase_mismatch_run, vortex_defect_run, write_defect_csv, xi_escape_run, EscapeConfig,
    PhaseConfig, VortexConfig,
};
use beris_core::diag::{fmt_f64, write_csv, DiagRecord, CSV_HEADER};
use beris_core::flows::{builtin_flow, sample_velocity, StationaryFlow};
use beris_core::init::{fit_into_interval, random_state, InitConfig};
use beris_core::limit::{ericksen_study, lagrangian_oracle, LimitSolver, LimitState, StudyConfig};
use beris_core::qtensor::stationary_scalars;
use beris_core::spectral::{Field, Grid, Kind};
use beris_core::trotter::rate_study;
use beris_core::{Error, Params, QTensor, Result};
use nalgebra::Vector3;

use crate::config::{Experiment, Initial, RunConfig};
use crate::output::{opt_f64, Artifacts, Table};

pub fn run_experiment(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    match cfg.experiment {
        Experiment::FullBeris => full_beris(cfg, art),
        Experiment::TrotterRate => trotter_rate(cfg, art),
        Experiment::EricksenLimit => ericksen_limit(cfg, art),
        Experiment::XiEscape => xi_escape(cfg, art),
        Experiment::PhaseMismatch => phase_mismatch(cfg, art),
        Experiment::VortexDefects => vortex_defects(cfg, art),
        Experiment::OdePortrait => ode_portrait(cfg, art),
    }
}

fn flow_option(cfg: &RunConfig, default: &str) -> Result<StationaryFlow> {
    builtin_flow(cfg.options.flow.as_deref().unwrap_or(default))
}

fn s_plus_uniform(grid: &Arc<Grid>, p: &Params) -> Result<Field> {
    let s = stationary_scalars(p)?.s_plus;
    Ok(Field::uniform_q(grid, QTensor::uniaxial(s, Vector3::x())))
}

/// Initial `(u, Q)`; random data uses the configured seed, bandwidth and fill.
fn initial_fields(
    cfg: &RunConfig,
    grid: &Arc<Grid>,
    default_kmax_sq: i64,
) -> Result<(Field, Field)> {
    let o = &cfg.options;
    match o.initial.unwrap_or(Initial::Random) {
        Initial::Zero => Ok((
            Field::zeros(grid, Kind::Vec3),
            Field::zeros(grid, Kind::QTensor),
        )),
        Initial::SPlusUniform => Ok((
            Field::zeros(grid, Kind::Vec3),
            s_plus_uniform(grid, &cfg.params)?,
        )),
        Initial::Random => {
            let base = InitConfig::seeded(cfg.seed);
            let init = InitConfig {
                kmax_sq: o.kmax_sq.unwrap_or(default_kmax_sq),
                u_amp: o.u_amp.unwrap_or(base.u_amp),
                q_amp: o.q_amp.unwrap_or(base.q_amp),
                ..base
            };
            let (u, mut q) = random_state(grid, &init)?;
            if let Some(fill) = o.fill {
                fit_into_interval(&mut q, &cfg.params, fill)?;
            }
            Ok((u, q))
        }
    }
}

fn steps(t_end: f64, dt: f64) -> (u64, f64) {
    if t_end <= 0.0 {
        return (0, dt);
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as u64;
    (n, t_end / n as f64)
}

fn beris_trajectory(
    state: &SimState,
    p: Params,
    t_end: f64,
    dt: f64,
    mut visit: impl FnMut(&BerisSolver, u64) -> Result<()>,
) -> Result<BerisSolver> {
    let (n, h) = steps(t_end, dt);
    let mut solver = BerisSolver::new(state, p, StepConfig::with_dt(h))?;
    visit(&solver, 0)?;
    for k in 1..=n {
        solver.step()?;
        visit(&solver, k)?;
    }
    Ok(solver)
}

/// `sqrt(‖u - u'‖² + ‖Q - Q'‖²)`.
fn state_distance(a: &SimState, b: &SimState) -> f64 {
    a.u.sub(&b.u).l2_norm().hypot(a.q.sub(&b.q).l2_norm())
}

fn full_beris(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let p = cfg.params;
    let grid = Grid::new(cfg.n)?;
    let (u0, q0) = initial_fields(cfg, &grid, 16)?;
    let state = SimState::new(u0, q0)?;
    let sample_every = cfg.options.sample_every.unwrap_or(10).max(1);
    let (n, _) = steps(cfg.t_end, cfg.dt);
    art.tables.push(Table::new("diagnostics.csv", CSV_HEADER));
    art.headline = Some("energy_final");

    let mut samples: Vec<DiagRecord> = Vec::new();
    let solver = {
        let art = &mut *art;
        let samples = &mut samples;
        beris_trajectory(&state, p, cfg.t_end, cfg.dt, |s, k| {
            if k % sample_every == 0 || k == n {
                let rec = s.monitor();
                art.diagnostics().push(rec.csv_row());
                samples.push(rec);
                if !rec.kinetic.is_finite() || !rec.free_energy.is_finite() {
                    return Err(Error::Divergence {
                        time: rec.t,
                        reason: format!("non-finite energy at step {k}"),
                    });
                }
            }
            if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 {
                let st = s.state();
                art.snapshot(format!("u_{k:08}"), &st.u, st.t);
                art.snapshot(format!("q_{k:08}"), &st.q, st.t);
            }
            Ok(())
        })?
    };
    let last = solver.state();
    if cfg.snapshot_every == 0 || n % cfg.snapshot_every != 0 {
        art.snapshot(format!("u_{n:08}"), &last.u, last.t);
        art.snapshot(format!("q_{n:08}"), &last.q, last.t);
    }

    let e0 = samples.first().map(DiagRecord::energy).unwrap_or(0.0);
    let growth = samples
        .windows(2)
        .map(|w| (w[1].energy() - w[0].energy()) / (w[1].t - w[0].t))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_eig = samples
        .iter()
        .map(|r| r.min_eig)
        .fold(f64::INFINITY, f64::min);
    let max_eig = samples
        .iter()
        .map(|r| r.max_eig)
        .fold(f64::NEG_INFINITY, f64::max);
    art.set("steps", solver.steps_taken());
    art.set_f64("t_final", solver.time());
    art.set_f64("min_eig", min_eig);
    art.set_f64("max_eig", max_eig);
    art.set_f64("energy_initial", e0);
    art.set_f64(
        "energy_final",
        samples.last().map(DiagRecord::energy).unwrap_or(0.0),
    );
    art.set_f64("max_energy_growth_rate", growth.max(0.0));
    art.set_f64(
        "max_div_u",
        samples.iter().map(|r| r.div_u).fold(0.0, f64::max),
    );
    if let Ok(st) = stationary_scalars(&p) {
        art.set_f64("m", st.m);
        art.set_f64("interval_excursion", st.excursion(min_eig, max_eig));
    }

    if cfg.options.self_convergence.unwrap_or(false) {
        let runs: Vec<SimState> = [1.0, 0.5, 0.25]
            .iter()
            .map(|f| Ok(beris_trajectory(&state, p, cfg.t_end, cfg.dt * f, |_, _| Ok(()))?.state()))
            .collect::<Result<_>>()?;
        let e1 = state_distance(&runs[0], &runs[1]);
        let e2 = state_distance(&runs[1], &runs[2]);
        let mut t = Table::new("convergence.csv", "dt,difference_to_half_step");
        t.push(format!("{},{}", fmt_f64(cfg.dt), fmt_f64(e1)));
        t.push(format!("{},{}", fmt_f64(0.5 * cfg.dt), fmt_f64(e2)));
        art.tables.push(t);
        art.set_f64("self_convergence_order", (e1 / e2).log2());
    }
    Ok(())
}

fn trotter_rate(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let grid = Grid::new(cfg.n)?;
    let flow = flow_option(cfg, "taylor_green")?;
    let (_, q0) = initial_fields(cfg, &grid, 5)?;
    let n_list = cfg
        .options
        .n_list
        .clone()
        .unwrap_or_else(|| vec![8, 16, 32, 64]);
    art.tables.push(Table::new(
        "diagnostics.csv",
        "n,h2_error,log2_ratio,slope_so_far,successive_diff",
    ));
    art.headline = Some("finest_error");
    let study = rate_study(&q0, &flow, &cfg.params, cfg.t_end, &n_list, cfg.dt)?;
    for r in &study.rows {
        art.diagnostics().push(format!(
            "{},{},{},{},{}",
            r.n,
            fmt_f64(r.h2_error),
            opt_f64(r.log2_ratio),
            opt_f64(r.slope_so_far),
            opt_f64(r.successive_diff)
        ));
    }
    art.set_opt("slope", study.slope);
    art.set("strictly_decreasing", study.strictly_decreasing());
    art.set_f64("dt_ref", study.dt_ref);
    art.set_f64("reference_error", study.reference_error);
    art.set_f64("reference_fraction", study.reference_fraction());
    art.set_opt("finest_error", study.rows.last().map(|r| r.h2_error));
    Ok(())
}

fn ericksen_limit(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let grid = Grid::new(cfg.n)?;
    let flow = flow_option(cfg, "cellular")?;
    let u0 = sample_velocity(&flow, &grid, 0.0);
    let q0 = match cfg.options.initial.unwrap_or(Initial::Random) {
        Initial::Random => {
            let mut c = cfg.clone();
            c.options.fill.get_or_insert(0.9);
            initial_fields(&c, &grid, 2)?.1
        }
        _ => initial_fields(cfg, &grid, 2)?.1,
    };
    let eps_list = cfg
        .options
        .eps_list
        .clone()
        .unwrap_or_else(|| vec![cfg.params.eps]);
    let study_cfg = StudyConfig {
        t_end: cfg.t_end,
        dt: cfg.dt,
        sample_dt: cfg.options.sample_dt.unwrap_or(0.05),
    };
    art.tables.push(Table::new(
        "diagnostics.csv",
        "eps,sup_y,t_at_sup,slope_so_far",
    ));
    art.headline = Some("sup_y");
    let study = ericksen_study(&u0, &q0, &cfg.params, &eps_list, &study_cfg)?;
    for r in &study.rows {
        art.diagnostics().push(format!(
            "{},{},{},{}",
            fmt_f64(r.eps),
            fmt_f64(r.sup_y),
            fmt_f64(r.t_at_sup),
            opt_f64(r.slope_so_far)
        ));
    }
    let mut series = Table::new("series.csv", "eps,t,y");
    for (r, s) in study.rows.iter().zip(&study.series) {
        for (t, y) in s {
            series.push(format!(
                "{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(*t),
                fmt_f64(*y)
            ));
        }
    }
    art.tables.push(series);
    art.set_opt("slope", study.slope);
    art.set("halving_ratios", study.halving_ratios.clone());
    art.set_opt("sup_y", study.rows.last().map(|r| r.sup_y));
    Ok(())
}

fn xi_escape(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let grid = Grid::new(cfg.n)?;
    let flow = flow_option(cfg, "shear")?;
    let esc = EscapeConfig {
        lambda: cfg.options.lambda.unwrap_or(1e-3),
        xi: cfg.params.xi,
        t_end: cfg.t_end,
        dt: cfg.dt,
        sample_dt: cfg.options.sample_dt.unwrap_or(0.05),
    };
    art.tables.push(Table::new("diagnostics.csv", CSV_HEADER));
    art.headline = Some("exit_time");
    let rep = xi_escape_run(&cfg.params, &flow, &grid, &esc)?;
    art.tables[0] = Table::capture("diagnostics.csv", |w| write_csv(w, &rep.records));
    art.set("escaped", rep.escaped());
    art.set_opt("exit_time", rep.exit_time);
    art.set_f64("margin", rep.margin);
    art.set_f64("margin_fraction", rep.margin_fraction);
    art.set_f64("width", rep.width);
    art.set_f64("m", rep.m);
    art.set_opt("ode_exit_time", rep.ode_exit_time);
    if cfg.options.control.unwrap_or(true) {
        let ctl = xi_escape_run(&cfg.params, &flow, &grid, &EscapeConfig { xi: 0.0, ..esc })?;
        art.set("control_escaped", ctl.escaped());
        art.set_f64("control_margin", ctl.margin);
    }
    Ok(())
}

fn phase_mismatch(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let grid = Grid::new(cfg.n)?;
    let pc = PhaseConfig {
        dt: cfg.dt,
        sample_dt: cfg
            .options
            .sample_dt
            .unwrap_or(PhaseConfig::default().sample_dt),
    };
    art.tables.push(Table::new(
        "diagnostics.csv",
        beris_core::defects::DEFECT_CSV_HEADER,
    ));
    art.headline = Some("growth_ratio");
    let rep = phase_mismatch_run(&cfg.params, &grid, cfg.t_end, &pc)?;
    art.tables[0] = Table::capture("diagnostics.csv", |w| write_defect_csv(w, &rep.rows()));
    art.set_opt("growth_ratio", rep.growth_ratio(1.0, 10.0));
    let (plus, minus) = rep.bulk_deviation(&cfg.params)?;
    art.set_f64("bulk_deviation_plus", plus);
    art.set_f64("bulk_deviation_minus", minus);
    art.snapshot("q_final".into(), &rep.field, cfg.t_end);
    Ok(())
}

fn vortex_defects(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let grid = Grid::new(cfg.n)?;
    let flow = flow_option(cfg, "taylor_green")?;
    let q0 = match cfg.options.initial.unwrap_or(Initial::SPlusUniform) {
        Initial::SPlusUniform => s_plus_uniform(&grid, &cfg.params)?,
        _ => initial_fields(cfg, &grid, 16)?.1,
    };
    if cfg.options.oracle_check.unwrap_or(false) {
        return oracle_check(cfg, &flow, &q0, art);
    }
    let times = cfg
        .options
        .times
        .clone()
        .unwrap_or_else(|| [8.0, 4.0, 2.0, 1.0].iter().map(|d| cfg.t_end / d).collect());
    let vc = VortexConfig {
        dt: cfg.dt,
        oracle_dt: cfg.options.oracle_dt.unwrap_or(0.5 * cfg.dt),
        probe_radii: cfg
            .options
            .probe_radii
            .clone()
            .unwrap_or_else(|| VortexConfig::default().probe_radii),
    };
    art.tables.push(Table::new(
        "diagnostics.csv",
        beris_core::defects::DEFECT_CSV_HEADER,
    ));
    art.headline = Some("growth_ratio");
    let rep = vortex_defect_run(&flow, &cfg.params, &q0, &times, &vc)?;
    art.tables[0] = Table::capture("diagnostics.csv", |w| {
        write_defect_csv(w, &rep.defect_rows())
    });

    let mut oracle = Table::new("oracle.csv", "t,max_grad_R,oracle_max_grad,tail,resolved");
    for r in &rep.rows {
        oracle.push(format!(
            "{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.max_grad_r),
            opt_f64(r.oracle_max_grad),
            fmt_f64(r.tail),
            u8::from(r.resolved)
        ));
    }
    art.tables.push(oracle);
    let mut probes = Table::new(
        "probes.csv",
        "center_x,center_y,probe_x,probe_y,delta_omega,t_star,predicted_angle,oracle_angle,pde_angle,pde_resolved",
    );
    for p in &rep.probes {
        probes.push(format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(p.center[0]),
            fmt_f64(p.center[1]),
            fmt_f64(p.probe[0]),
            fmt_f64(p.probe[1]),
            fmt_f64(p.delta_omega),
            fmt_f64(p.t_star),
            fmt_f64(p.predicted_angle),
            opt_f64(p.oracle_angle),
            opt_f64(p.pde_angle),
            u8::from(p.pde_resolved)
        ));
    }
    art.tables.push(probes);

    let (first, last) = (
        times.first().copied().unwrap_or(0.0),
        times.last().copied().unwrap_or(0.0),
    );
    art.set_opt("growth_ratio", rep.growth_ratio(first, last));
    art.set_opt("oracle_growth_ratio", rep.oracle_growth_ratio(first, last));
    art.set_opt("max_oracle_discrepancy", rep.max_oracle_discrepancy());
    art.set("all_resolved", rep.rows.iter().all(|r| r.resolved));
    art.set("stagnation_points", rep.stagnation.len());
    Ok(())
}

/// Coupled limit solve against the characteristic oracle at `t_end`.
fn oracle_check(
    cfg: &RunConfig,
    flow: &StationaryFlow,
    q0: &Field,
    art: &mut Artifacts,
) -> Result<()> {
    let grid = q0.grid.clone();
    let p = cfg.params;
    let sample_every = cfg.options.sample_every.unwrap_or(100).max(1);
    let state = LimitState::from_velocity(&sample_velocity(flow, &grid, 0.0), q0.clone())?;
    let mut sol = LimitSolver::new(&state, p, p.xi)?;
    art.tables.push(Table::new("diagnostics.csv", CSV_HEADER));
    art.headline = Some("relative_l2_error");
    let (n, h) = steps(cfg.t_end, cfg.dt);
    art.diagnostics().push(sol.monitor().csv_row());
    for k in 1..=n {
        sol.step(h)?;
        if k % sample_every == 0 || k == n {
            art.diagnostics().push(sol.monitor().csv_row());
        }
    }
    let rep = lagrangian_oracle(q0, flow, &p, cfg.t_end, cfg.dt)?;
    let r = sol.r();
    art.set_f64(
        "relative_l2_error",
        r.sub(&rep.field).l2_norm() / rep.field.l2_norm(),
    );
    art.set_f64("orthogonality", rep.orthogonality);
    art.set_f64("vorticity_deviation", rep.vorticity_deviation);
    art.set_f64("spectrum_spread", rep.spectrum_spread);
    art.snapshot("r_final".into(), &r, sol.time());
    art.snapshot("r_oracle".into(), &rep.field, cfg.t_end);
    Ok(())
}

fn sorted(mut e: [f64; 3]) -> [f64; 3] {
    e.sort_by(f64::total_cmp);
    e
}

fn linf(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn ode_portrait(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let p = cfg.params;
    let st = stationary_scalars(&p)?;
    let k = cfg.options.pairs.unwrap_or(10).max(1);
    let segments = 20;
    let seg = cfg.t_end / segments as f64;
    let ode = OdeConfig::new(cfg.dt, seg);
    let uniaxial = |s: f64| sorted([-s / 3.0, -s / 3.0, 2.0 * s / 3.0]);

    art.tables
        .push(Table::new("diagnostics.csv", "pair_id,t,l1,l2,l3"));
    art.headline = Some("fraction_s_plus");
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let l1 = -1.0 / 3.0 + (i as f64 + 0.5) / k as f64;
            let l2 = -1.0 / 3.0 + (j as f64 + 0.5) / k as f64;
            let l3 = -l1 - l2;
            if l3 > -1.0 / 3.0 && l3 < 2.0 / 3.0 {
                pairs.push(EigenPair::new(l1, l2));
            }
        }
    }
    let (mut to_plus, mut to_minus, mut to_zero, mut flow_gap) = (0usize, 0usize, 0usize, 0.0f64);
    for (id, &l0) in pairs.iter().enumerate() {
        let mut e = l0;
        art.diagnostics().push(pair_row(id, 0.0, e));
        for s in 1..=segments {
            e = eigenvalue_flow(e, &p, &ode)?;
            art.diagnostics().push(pair_row(id, s as f64 * seg, e));
        }
        let full = integrate_reaction(
            &QTensor::diag(l0.l1, l0.l2),
            &p,
            &OdeConfig::new(cfg.dt, cfg.t_end),
        )?;
        let fe = full.eigenvalues();
        let end = sorted([e.l1, e.l2, e.l3()]);
        flow_gap = flow_gap.max(linf(end, [fe.l1, fe.l2, fe.l3]));
        if linf(end, uniaxial(st.s_plus)) <= 1e-6 {
            to_plus += 1;
        } else if linf(end, uniaxial(st.s_minus)) <= 1e-6 {
            to_minus += 1;
        } else if linf(end, [0.0; 3]) <= 1e-6 {
            to_zero += 1;
        }
    }
    let (h1, h2) = hessian_spectrum(&p)?;
    let (j1, j2) = linearization_at_uniaxial(&p)?;
    art.set("pairs", pairs.len());
    art.set("to_s_plus", to_plus);
    art.set("to_s_minus", to_minus);
    art.set("to_isotropic", to_zero);
    art.set_f64(
        "fraction_s_plus",
        to_plus as f64 / pairs.len().max(1) as f64,
    );
    art.set_f64("max_flow_discrepancy", flow_gap);
    art.set("hessian_spectrum", vec![h1, h2]);
    art.set("linearization_at_uniaxial", vec![j1, j2]);
    art.set_f64("s_plus", st.s_plus);
    art.set_f64("s_minus", st.s_minus);
    Ok(())
}

fn pair_row(id: usize, t: f64, e: EigenPair) -> String {
    format!(
        "{id},{},{},{},{}",
        fmt_f64(t),
        fmt_f64(e.l1),
        fmt_f64(e.l2),
        fmt_f64(e.l3())
    )
}
