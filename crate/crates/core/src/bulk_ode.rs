//! Pointwise bulk dynamics `dQ/dt = -G(Q)`, its reduction to two eigenvalues, the
//! long-time map onto the uniaxial minimum, and the leading-order ODE used to show
//! eigenvalue escape for the non-corotational system.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qtensor::{bulk_gradient, stationary_scalars, Params, QTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    /// Classical RK4 on all five components.
    #[default]
    Rk4,
    /// Diagonalize once, run RK4 on the two free eigenvalues, rotate back.
    Eigenframe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub dt: f64,
    pub method: OdeMethod,
    pub t_end: f64,
    /// Residual `|rhs|` below which [`relax`] stops early.
    pub tol: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            method: OdeMethod::Rk4,
            t_end: 1.0,
            tol: 1e-10,
        }
    }
}

impl OdeConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn with_method(mut self, method: OdeMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Validation(format!(
                "dt > 0 violated (dt = {})",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Validation(format!(
                "t_end >= 0 violated (t_end = {})",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Number of equal steps covering `[0, t_end]` with step at most `dt`, and that step.
    pub fn steps(&self) -> (usize, f64) {
        steps_for(self.t_end, self.dt)
    }
}

pub(crate) fn steps_for(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

/// The two free eigenvalues; the third is `-l1 - l2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EigenPair {
    pub l1: f64,
    pub l2: f64,
}

impl EigenPair {
    pub fn new(l1: f64, l2: f64) -> Self {
        Self { l1, l2 }
    }

    pub fn l3(&self) -> f64 {
        -self.l1 - self.l2
    }
}

/// `-aQ + b(Q² - tr(Q²) I/3) - c tr(Q²) Q`.
#[inline]
pub fn reaction_rhs(q: &QTensor, p: &Params) -> QTensor {
    -bulk_gradient(q, p)
}

#[inline]
pub fn rk4_reaction_step(q: &QTensor, p: &Params, h: f64) -> QTensor {
    let k1 = reaction_rhs(q, p);
    let k2 = reaction_rhs(&(*q + (0.5 * h) * k1), p);
    let k3 = reaction_rhs(&(*q + (0.5 * h) * k2), p);
    let k4 = reaction_rhs(&(*q + h * k3), p);
    *q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

#[inline]
pub fn eigen_rhs(e: &EigenPair, p: &Params) -> EigenPair {
    let (x, y) = (e.l1, e.l2);
    let quad = 2.0 * p.c * (x * x + y * y + x * y) + p.a;
    EigenPair {
        l1: -x * quad + p.b * (x * x / 3.0 - 2.0 * y * y / 3.0 - 2.0 * x * y / 3.0),
        l2: -y * quad + p.b * (y * y / 3.0 - 2.0 * x * x / 3.0 - 2.0 * x * y / 3.0),
    }
}

#[inline]
pub fn rk4_eigen_step(e: &EigenPair, p: &Params, h: f64) -> EigenPair {
    let add =
        |a: &EigenPair, k: &EigenPair, s: f64| EigenPair::new(a.l1 + s * k.l1, a.l2 + s * k.l2);
    let k1 = eigen_rhs(e, p);
    let k2 = eigen_rhs(&add(e, &k1, 0.5 * h), p);
    let k3 = eigen_rhs(&add(e, &k2, 0.5 * h), p);
    let k4 = eigen_rhs(&add(e, &k3, h), p);
    EigenPair::new(
        e.l1 + h / 6.0 * (k1.l1 + 2.0 * k2.l1 + 2.0 * k3.l1 + k4.l1),
        e.l2 + h / 6.0 * (k1.l2 + 2.0 * k2.l2 + 2.0 * k3.l2 + k4.l2),
    )
}

fn diverged(t: f64, what: &str) -> Error {
    Error::Divergence {
        time: t,
        reason: format!("non-finite {what}"),
    }
}

pub fn eigenvalue_flow(l0: EigenPair, p: &Params, cfg: &OdeConfig) -> Result<EigenPair> {
    cfg.validate()?;
    let (n, h) = cfg.steps();
    let mut e = l0;
    for i in 0..n {
        e = rk4_eigen_step(&e, p, h);
        if !(e.l1.is_finite() && e.l2.is_finite()) {
            return Err(diverged((i + 1) as f64 * h, "eigenvalues"));
        }
    }
    Ok(e)
}

/// Approximates the bulk flow `S(t_end, q0)`.
pub fn integrate_reaction(q0: &QTensor, p: &Params, cfg: &OdeConfig) -> Result<QTensor> {
    cfg.validate()?;
    match cfg.method {
        OdeMethod::Rk4 => {
            let (n, h) = cfg.steps();
            let mut q = *q0;
            for i in 0..n {
                q = rk4_reaction_step(&q, p, h);
                if !q.is_finite() {
                    return Err(diverged((i + 1) as f64 * h, "Q"));
                }
            }
            Ok(q)
        }
        OdeMethod::Eigenframe => {
            let (vals, frame) = q0.eigen_decomposition();
            let e = eigenvalue_flow(EigenPair::new(vals[0], vals[1]), p, cfg)?;
            Ok(QTensor::from_eigenframe(&frame, e.l1, e.l2))
        }
    }
}

/// Integrates with RK4 until `|rhs| <= cfg.tol` or `t_end` is reached. Returns the state
/// and the time reached.
pub fn relax(q0: &QTensor, p: &Params, cfg: &OdeConfig) -> Result<(QTensor, f64)> {
    cfg.validate()?;
    let (n, h) = cfg.steps();
    let mut q = *q0;
    for i in 0..n {
        if reaction_rhs(&q, p).norm() <= cfg.tol {
            return Ok((q, i as f64 * h));
        }
        q = rk4_reaction_step(&q, p, h);
        if !q.is_finite() {
            return Err(diverged((i + 1) as f64 * h, "Q"));
        }
    }
    Ok((q, cfg.t_end))
}

/// `s₊ (n⊗n - I/3)` with `n` the leading eigenvector of `q0`.
pub fn long_time_limit(q0: &QTensor, p: &Params) -> Result<QTensor> {
    if !(p.a < 0.0 && p.b > 0.0 && p.c > 0.0) {
        return Err(Error::Domain(format!(
            "long-time limit needs a < 0, b > 0, c > 0 (got a = {}, b = {}, c = {})",
            p.a, p.b, p.c
        )));
    }
    let st = stationary_scalars(p)?;
    let (vals, frame) = q0.eigen_decomposition();
    if vals[2] - vals[1] <= 1e-10 {
        return Err(Error::Domain(format!(
            "degenerate input: top eigenvalues {} and {} coincide",
            vals[1], vals[2]
        )));
    }
    Ok(QTensor::uniaxial(st.s_plus, frame.column(2).into_owned()))
}

/// Closed-form pair `(-a - 2bs₊ - 18cs₊², -a + 2bs₊ - 6cs₊²)`.
pub fn hessian_spectrum(p: &Params) -> Result<(f64, f64)> {
    let s = stationary_scalars(p)?.s_plus;
    Ok((
        -p.a - 2.0 * p.b * s - 18.0 * p.c * s * s,
        -p.a + 2.0 * p.b * s - 6.0 * p.c * s * s,
    ))
}

/// Analytic Jacobian of [`eigen_rhs`].
pub fn eigen_jacobian(e: &EigenPair, p: &Params) -> Matrix2<f64> {
    let (x, y) = (e.l1, e.l2);
    let quad = 2.0 * p.c * (x * x + y * y + x * y) + p.a;
    let j11 = -quad - x * 2.0 * p.c * (2.0 * x + y) + p.b * (2.0 * x / 3.0 - 2.0 * y / 3.0);
    let j12 = -x * 2.0 * p.c * (2.0 * y + x) + p.b * (-4.0 * y / 3.0 - 2.0 * x / 3.0);
    let j21 = -y * 2.0 * p.c * (2.0 * x + y) + p.b * (-4.0 * x / 3.0 - 2.0 * y / 3.0);
    let j22 = -quad - y * 2.0 * p.c * (2.0 * y + x) + p.b * (2.0 * y / 3.0 - 2.0 * x / 3.0);
    Matrix2::new(j11, j12, j21, j22)
}

fn sorted_eigs(m: &Matrix2<f64>) -> (f64, f64) {
    let e = nalgebra::SymmetricEigen::new(0.5 * (m + m.transpose())).eigenvalues;
    (e[0].min(e[1]), e[0].max(e[1]))
}

/// Eigenvalues (ascending) of the linearized eigenvalue flow at the uniaxial minimum
/// `(-s₊/3, -s₊/3)`: `(-b s₊, (b/3) s₊ - (4/3) c s₊²)` up to order.
pub fn linearization_at_uniaxial(p: &Params) -> Result<(f64, f64)> {
    let m = stationary_scalars(p)?.m;
    Ok(sorted_eigs(&eigen_jacobian(&EigenPair::new(-m, -m), p)))
}

/// Right-hand side `D R + R D + (2/3) D - 2 (R + I/3) tr(R D)` of the leading-order
/// escape ODE with a frozen symmetric rate-of-strain `d`.
pub fn r0_counterexample_rhs(r: &QTensor, d: &Matrix3<f64>) -> QTensor {
    let rm = r.to_matrix();
    let tr_rd = (rm * d).trace();
    let m = d * rm + rm * d + (2.0 / 3.0) * d - 2.0 * tr_rd * (rm + Matrix3::identity() / 3.0);
    QTensor::from_matrix(&m)
}

/// RK4 for [`r0_counterexample_rhs`]; `visit` sees every accepted `(t, R)` and may stop
/// the integration by returning `false`.
pub fn integrate_r0<F>(
    r0: &QTensor,
    d: &Matrix3<f64>,
    dt: f64,
    t_end: f64,
    mut visit: F,
) -> Result<QTensor>
where
    F: FnMut(f64, &QTensor) -> bool,
{
    let (n, h) = steps_for(t_end, dt);
    let mut r = *r0;
    if !visit(0.0, &r) {
        return Ok(r);
    }
    for i in 0..n {
        let k1 = r0_counterexample_rhs(&r, d);
        let k2 = r0_counterexample_rhs(&(r + (0.5 * h) * k1), d);
        let k3 = r0_counterexample_rhs(&(r + (0.5 * h) * k2), d);
        let k4 = r0_counterexample_rhs(&(r + h * k3), d);
        r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = (i + 1) as f64 * h;
        if !r.is_finite() {
            return Err(diverged(t, "R"));
        }
        if !visit(t, &r) {
            break;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::in_physical_interval;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p0() -> Params {
        Params::default().with_bulk(-0.2, 1.0, 1.0)
    }

    fn e1() -> Vector3<f64> {
        Vector3::new(1.0, 0.0, 0.0)
    }

    fn random_q(rng: &mut ChaCha8Rng, r: f64) -> QTensor {
        QTensor::from_components(std::array::from_fn(|_| rng.random_range(-r..r)))
    }

    /// Random tensor with eigenvalues drawn uniformly from the physical interval.
    fn random_in_interval(rng: &mut ChaCha8Rng, p: &Params) -> QTensor {
        let st = stationary_scalars(p).unwrap();
        loop {
            let l1 = rng.random_range(st.lower()..st.upper());
            let l2 = rng.random_range(st.lower()..st.upper());
            let l3 = -l1 - l2;
            if l3 >= st.lower() && l3 <= st.upper() {
                let rot = nalgebra::Rotation3::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                return QTensor::from_eigenframe(rot.matrix(), l1, l2);
            }
        }
    }

    #[test]
    fn reaction_fixed_points() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        assert_eq!(reaction_rhs(&QTensor::ZERO, &p), QTensor::ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
            for s in [st.s_minus, st.s_plus] {
                assert!(reaction_rhs(&QTensor::uniaxial(s, n), &p).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn reaction_is_minus_gradient() {
        let p = p0();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = random_q(&mut rng, 1.0);
            assert_eq!(reaction_rhs(&q, &p), -bulk_gradient(&q, &p));
        }
    }

    #[test]
    fn zero_stays_zero() {
        let q = integrate_reaction(&QTensor::ZERO, &p0(), &OdeConfig::new(1e-3, 3.0)).unwrap();
        assert_eq!(q, QTensor::ZERO);
    }

    #[test]
    fn half_amplitude_relaxes_to_s_plus() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let target = QTensor::uniaxial(st.s_plus, e1());
        let q0 = QTensor::uniaxial(0.5 * st.s_plus, e1());
        let q = integrate_reaction(&q0, &p, &OdeConfig::new(1e-3, 50.0)).unwrap();
        assert!((q - target).norm() < 1e-8);
        // reduced 2-D oracle
        let e = eigenvalue_flow(
            EigenPair::new(-st.s_plus / 6.0, -st.s_plus / 6.0),
            &p,
            &OdeConfig::new(1e-3, 50.0),
        )
        .unwrap();
        assert_abs_diff_eq!(e.l1, -st.m, epsilon = 1e-8);
        assert_abs_diff_eq!(q.q11, e.l3(), epsilon = 1e-10);
    }

    #[test]
    fn eigenframe_and_rk4_agree() {
        let p = p0();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q0 = random_q(&mut rng, 0.4);
            let cfg = OdeConfig::new(1e-3, 2.0);
            let a = integrate_reaction(&q0, &p, &cfg).unwrap();
            let b = integrate_reaction(&q0, &p, &cfg.with_method(OdeMethod::Eigenframe)).unwrap();
            assert!((a - b).norm() < 1e-8, "{}", (a - b).norm());
        }
    }

    #[test]
    fn eigen_flow_fixed_points() {
        let p = p0();
        let m = stationary_scalars(&p).unwrap().m;
        let cfg = OdeConfig::new(1e-3, 5.0);
        assert_eq!(
            eigenvalue_flow(EigenPair::default(), &p, &cfg).unwrap(),
            EigenPair::default()
        );
        let r = eigen_rhs(&EigenPair::new(-m, -m), &p);
        assert!(r.l1.abs() < 1e-15 && r.l2.abs() < 1e-15);
        let e = eigenvalue_flow(EigenPair::new(-m, -m), &p, &cfg).unwrap();
        assert_abs_diff_eq!(e.l1, -m, epsilon = 1e-14);
    }

    #[test]
    fn eigen_flow_matches_diagonal_full_matrix() {
        let p = p0();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = OdeConfig::new(1e-3, 5.0);
        for _ in 0..100 {
            let l = EigenPair::new(rng.random_range(-0.3..0.5), rng.random_range(-0.3..0.5));
            let e = eigenvalue_flow(l, &p, &cfg).unwrap();
            let q = integrate_reaction(&QTensor::diag(l.l1, l.l2), &p, &cfg).unwrap();
            assert!(q.q12.abs() + q.q13.abs() + q.q23.abs() < 1e-12);
            assert!((q.q11 - e.l1).abs() <= 1e-10);
            assert!((q.q22 - e.l2).abs() <= 1e-10);
        }
    }

    #[test]
    fn long_time_limit_examples() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let q = QTensor::uniaxial(st.s_plus, e1());
        assert!((long_time_limit(&q, &p).unwrap() - q).norm() < 1e-14);

        let q0 = QTensor::diag(0.3, 0.1);
        let lim = long_time_limit(&q0, &p).unwrap();
        assert!((lim - QTensor::uniaxial(st.s_plus, e1())).norm() < 1e-12);
        let integ = integrate_reaction(&q0, &p, &OdeConfig::new(1e-3, 100.0)).unwrap();
        assert!((lim - integ).norm() < 1e-6);

        assert!(matches!(
            long_time_limit(&QTensor::diag(0.1, 0.1), &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn long_time_limit_matches_integration_near_manifold() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                1.0,
            );
            let q0 = QTensor::uniaxial(st.s_plus, n) + random_q(&mut rng, 0.05);
            let lim = long_time_limit(&q0, &p).unwrap();
            let cfg = OdeConfig::new(1e-3, 100.0).with_method(OdeMethod::Eigenframe);
            let integ = integrate_reaction(&q0, &p, &cfg).unwrap();
            assert!((lim - integ).norm() <= 1e-6);
        }
    }

    #[test]
    fn hessian_closed_form() {
        let p = p0();
        let (h1, h2) = hessian_spectrum(&p).unwrap();
        // independent evaluation: s₊ from the quadratic (2c/3)s² - (b/3)s + a = 0
        let s = (1.0 + (1.0f64 + 4.8).sqrt()) / 4.0;
        assert_abs_diff_eq!(h1, 0.2 - 2.0 * s - 18.0 * s * s, epsilon = 1e-6);
        assert_abs_diff_eq!(h2, 0.2 + 2.0 * s - 6.0 * s * s, epsilon = 1e-6);
        // six-decimal figures, computed from s₊ rounded to 0.852080
        assert_abs_diff_eq!(h1, -14.572880, epsilon = 5e-6);
        assert_abs_diff_eq!(h2, -2.452080, epsilon = 1e-6);
    }

    #[test]
    fn hessian_negative_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = Params::default().with_bulk(
                -rng.random_range(1e-3..3.0),
                rng.random_range(1e-2..3.0),
                rng.random_range(1e-2..3.0),
            );
            let (h1, h2) = hessian_spectrum(&p).unwrap();
            assert!(h1 < 0.0 && h2 < 0.0, "{p:?}");
        }
    }

    fn fd_jacobian(e: EigenPair, p: &Params, h: f64) -> Matrix2<f64> {
        let mut j = Matrix2::zeros();
        for col in 0..2 {
            let mut ep = e;
            let mut em = e;
            if col == 0 {
                ep.l1 += h;
                em.l1 -= h;
            } else {
                ep.l2 += h;
                em.l2 -= h;
            }
            let (fp, fm) = (eigen_rhs(&ep, p), eigen_rhs(&em, p));
            j[(0, col)] = (fp.l1 - fm.l1) / (2.0 * h);
            j[(1, col)] = (fp.l2 - fm.l2) / (2.0 * h);
        }
        j
    }

    #[test]
    fn closed_form_matches_finite_difference_jacobian() {
        // the closed form is the Jacobian of the eigenvalue flow at (s₊, s₊)
        let p = p0();
        let s = stationary_scalars(&p).unwrap().s_plus;
        let (lo, hi) = sorted_eigs(&fd_jacobian(EigenPair::new(s, s), &p, 1e-5));
        let (h1, h2) = hessian_spectrum(&p).unwrap();
        assert_abs_diff_eq!(lo, h1, epsilon = 1e-5);
        assert_abs_diff_eq!(hi, h2, epsilon = 1e-5);
    }

    #[test]
    fn uniaxial_minimum_is_linearly_stable() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let (lo, hi) = linearization_at_uniaxial(&p).unwrap();
        let fd = fd_jacobian(EigenPair::new(-st.m, -st.m), &p, 1e-5);
        let (flo, fhi) = sorted_eigs(&fd);
        assert_abs_diff_eq!(lo, flo, epsilon = 1e-8);
        assert_abs_diff_eq!(hi, fhi, epsilon = 1e-8);
        let s = st.s_plus;
        let mut expect = [-p.b * s, p.b * s / 3.0 - 4.0 / 3.0 * p.c * s * s];
        expect.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(lo, expect[0], epsilon = 1e-12);
        assert_abs_diff_eq!(hi, expect[1], epsilon = 1e-12);
        assert!(hi < 0.0);
    }

    #[test]
    fn r0_rhs_examples() {
        let z = Matrix3::zeros();
        assert_eq!(r0_counterexample_rhs(&QTensor::ZERO, &z), QTensor::ZERO);
        let d = Matrix3::from_diagonal(&Vector3::new(0.5, -0.5, 0.0));
        let r = r0_counterexample_rhs(&QTensor::ZERO, &d);
        assert!((r - QTensor::diag(1.0 / 3.0, -1.0 / 3.0)).norm() < 1e-15);
    }

    #[test]
    fn r0_escapes_scaled_interval() {
        let lam = 1e-3;
        let p = Params::default().with_bulk(-0.2 * lam, lam.sqrt(), 1.0);
        let st = stationary_scalars(&p).unwrap();
        let d = Matrix3::from_diagonal(&Vector3::new(0.5, -0.5, 0.0));
        let mut exit = None;
        integrate_r0(&QTensor::ZERO, &d, 1e-4, 10.0, |t, r| {
            let e = r.eigenvalues();
            if st.excursion(e.l1, e.l3) > 0.0 {
                exit = Some(t);
                false
            } else {
                true
            }
        })
        .unwrap();
        let t = exit.expect("no exit");
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn set_preservation_over_long_horizon() {
        let p = p0();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = OdeConfig::new(1e-3, 20.0);
        for _ in 0..500 {
            let q0 = random_in_interval(&mut rng, &p);
            let q = integrate_reaction(&q0, &p, &cfg).unwrap();
            assert!(in_physical_interval(&q, &p, 1e-9).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_equivariance(
            c in prop::array::uniform5(-0.5f64..0.5),
            ang in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let p = p0();
            let r = *nalgebra::Rotation3::from_euler_angles(ang[0], ang[1], ang[2]).matrix();
            let q0 = QTensor::from_components(c);
            let cfg = OdeConfig::new(1e-3, 2.0);
            let a = integrate_reaction(&q0.rotate(&r), &p, &cfg).unwrap();
            let b = integrate_reaction(&q0, &p, &cfg).unwrap().rotate(&r);
            prop_assert!((a - b).norm() <= 1e-9);
        }

        #[test]
        fn diagonal_data_stays_diagonal(l1 in -0.4f64..0.6, l2 in -0.4f64..0.6) {
            let q = integrate_reaction(&QTensor::diag(l1, l2), &p0(), &OdeConfig::new(1e-3, 3.0)).unwrap();
            prop_assert!(q.q12.abs() <= 1e-12 && q.q13.abs() <= 1e-12 && q.q23.abs() <= 1e-12);
        }
    }
}
