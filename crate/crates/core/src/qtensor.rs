//! Pointwise algebra of symmetric traceless 3×3 tensors.
//!
//! A [`QTensor`] stores the five independent entries `(q11, q12, q13, q22, q23)`;
//! `q33 = -q11 - q22` and the lower triangle are implied, so the reconstructed
//! matrix is symmetric and traceless by construction.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this Frobenius norm a tensor is treated as exactly zero by [`QTensor::eigenvalues`].
pub const DEGENERATE_NORM: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QTensor {
    pub q11: f64,
    pub q12: f64,
    pub q13: f64,
    pub q22: f64,
    pub q23: f64,
}

/// Eigenvalues sorted ascending. They sum to zero up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl EigenTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn sum(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

impl QTensor {
    pub const ZERO: QTensor = QTensor {
        q11: 0.0,
        q12: 0.0,
        q13: 0.0,
        q22: 0.0,
        q23: 0.0,
    };

    pub fn new(q11: f64, q12: f64, q13: f64, q22: f64, q23: f64) -> Self {
        Self {
            q11,
            q12,
            q13,
            q22,
            q23,
        }
    }

    pub fn from_components(c: [f64; 5]) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4])
    }

    pub fn components(&self) -> [f64; 5] {
        [self.q11, self.q12, self.q13, self.q22, self.q23]
    }

    pub fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2, 0.0)
    }

    /// `s (n ⊗ n - I/3)` for a (not necessarily normalised) axis `n`.
    pub fn uniaxial(s: f64, n: Vector3<f64>) -> Self {
        let n = n.normalize();
        Self::new(
            s * (n.x * n.x - 1.0 / 3.0),
            s * n.x * n.y,
            s * n.x * n.z,
            s * (n.y * n.y - 1.0 / 3.0),
            s * n.y * n.z,
        )
    }

    #[inline]
    pub fn q33(&self) -> f64 {
        -self.q11 - self.q22
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.q11,
            self.q12,
            self.q13, //
            self.q12,
            self.q22,
            self.q23, //
            self.q13,
            self.q23,
            self.q33(),
        )
    }

    /// Projects an arbitrary matrix onto the symmetric traceless subspace.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr3 = m.trace() / 3.0;
        Self::new(
            m[(0, 0)] - tr3,
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)] - tr3,
            0.5 * (m[(1, 2)] + m[(2, 1)]),
        )
    }

    /// Frobenius inner product `Q:P`.
    #[inline]
    pub fn ddot(&self, o: &QTensor) -> f64 {
        self.q11 * o.q11
            + self.q22 * o.q22
            + self.q33() * o.q33()
            + 2.0 * (self.q12 * o.q12 + self.q13 * o.q13 + self.q23 * o.q23)
    }

    /// `tr(Q²)`.
    #[inline]
    pub fn tr2(&self) -> f64 {
        self.ddot(self)
    }

    /// `tr(Q³) = 3 det Q` for traceless `Q`.
    #[inline]
    pub fn tr3(&self) -> f64 {
        3.0 * self.det()
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let (a, b, c, d, e, f) = (self.q11, self.q12, self.q13, self.q22, self.q23, self.q33());
        a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.tr2().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }

    /// `Q² - tr(Q²) I / 3`, the traceless part of the square.
    #[inline]
    pub fn square_traceless(&self) -> QTensor {
        let (a, b, c, d, e, f) = (self.q11, self.q12, self.q13, self.q22, self.q23, self.q33());
        let s11 = a * a + b * b + c * c;
        let s12 = a * b + b * d + c * e;
        let s13 = a * c + b * e + c * f;
        let s22 = b * b + d * d + e * e;
        let s23 = b * c + d * e + e * f;
        let s33 = c * c + e * e + f * f;
        let t = (s11 + s22 + s33) / 3.0;
        QTensor::new(s11 - t, s12, s13, s22 - t, s23)
    }

    /// Rotated tensor `R Q Rᵀ`.
    pub fn rotate(&self, r: &Matrix3<f64>) -> QTensor {
        QTensor::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }

    /// Eigenvalues via the trigonometric solution of `λ³ - (tr Q²/2) λ - det Q = 0`.
    pub fn eigenvalues(&self) -> EigenTriple {
        if self.q12 == 0.0 && self.q13 == 0.0 && self.q23 == 0.0 {
            let mut d = [self.q11, self.q22, self.q33()];
            d.sort_by(|x, y| x.total_cmp(y));
            return EigenTriple {
                l1: d[0],
                l2: d[1],
                l3: d[2],
            };
        }
        let tr2 = self.tr2();
        if tr2.sqrt() < DEGENERATE_NORM {
            return EigenTriple {
                l1: 0.0,
                l2: 0.0,
                l3: 0.0,
            };
        }
        let p = (tr2 / 6.0).sqrt();
        let r = (self.det() / (2.0 * p * p * p)).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let l3 = 2.0 * p * phi.cos();
        let l1 = 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        let l2 = -l1 - l3;
        EigenTriple { l1, l2, l3 }
    }

    /// Full eigen-decomposition: ascending eigenvalues with the matching unit eigenvectors
    /// as the columns of the returned matrix.
    pub fn eigen_decomposition(&self) -> ([f64; 3], Matrix3<f64>) {
        let eig = nalgebra::SymmetricEigen::new(self.to_matrix());
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vals = [
            eig.eigenvalues[idx[0]],
            eig.eigenvalues[idx[1]],
            eig.eigenvalues[idx[2]],
        ];
        let vecs = Matrix3::from_columns(&[
            eig.eigenvectors.column(idx[0]).into_owned(),
            eig.eigenvectors.column(idx[1]).into_owned(),
            eig.eigenvectors.column(idx[2]).into_owned(),
        ]);
        (vals, vecs)
    }

    /// `V diag(l1, l2, -l1-l2) Vᵀ`.
    pub fn from_eigenframe(frame: &Matrix3<f64>, l1: f64, l2: f64) -> QTensor {
        let d = Matrix3::from_diagonal(&Vector3::new(l1, l2, -l1 - l2));
        QTensor::from_matrix(&(frame * d * frame.transpose()))
    }
}

impl Add for QTensor {
    type Output = QTensor;
    #[inline]
    fn add(self, o: QTensor) -> QTensor {
        QTensor::new(
            self.q11 + o.q11,
            self.q12 + o.q12,
            self.q13 + o.q13,
            self.q22 + o.q22,
            self.q23 + o.q23,
        )
    }
}

impl Sub for QTensor {
    type Output = QTensor;
    #[inline]
    fn sub(self, o: QTensor) -> QTensor {
        QTensor::new(
            self.q11 - o.q11,
            self.q12 - o.q12,
            self.q13 - o.q13,
            self.q22 - o.q22,
            self.q23 - o.q23,
        )
    }
}

impl Mul<QTensor> for f64 {
    type Output = QTensor;
    #[inline]
    fn mul(self, q: QTensor) -> QTensor {
        QTensor::new(
            self * q.q11,
            self * q.q12,
            self * q.q13,
            self * q.q22,
            self * q.q23,
        )
    }
}

impl Mul<f64> for QTensor {
    type Output = QTensor;
    #[inline]
    fn mul(self, s: f64) -> QTensor {
        s * self
    }
}

impl Neg for QTensor {
    type Output = QTensor;
    #[inline]
    fn neg(self) -> QTensor {
        -1.0 * self
    }
}

impl AddAssign for QTensor {
    #[inline]
    fn add_assign(&mut self, o: QTensor) {
        *self = *self + o;
    }
}

impl SubAssign for QTensor {
    #[inline]
    fn sub_assign(&mut self, o: QTensor) {
        *self = *self - o;
    }
}

/// Coefficients of the non-dimensional system.
///
/// `eps` is the inverse Ericksen (and Reynolds) number, `xi` the tumbling/aligning ratio,
/// `kappa` the bulk-stress weight and `(a, b, c)` the Landau-de Gennes bulk coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub eps: f64,
    pub xi: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            eps: 0.5,
            xi: 0.0,
            kappa: 1.0,
            a: -0.2,
            b: 1.0,
            c: 1.0,
        }
    }
}

/// The nonzero stationary amplitudes `s∓` and `m = s₊/3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationary {
    pub s_minus: f64,
    pub s_plus: f64,
    pub m: f64,
}

impl Params {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_bulk(mut self, a: f64, b: f64, c: f64) -> Self {
        self.a = a;
        self.b = b;
        self.c = c;
        self
    }

    /// Checks the hard constraints `eps ≥ 0`, `kappa > 0`, `b > 0`, `c > 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("eps", self.eps),
            ("xi", self.xi),
            ("kappa", self.kappa),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be finite, got {v}")));
            }
        }
        if self.eps < 0.0 {
            return Err(Error::Validation(format!(
                "eps must be >= 0, got {}",
                self.eps
            )));
        }
        if self.kappa <= 0.0 {
            return Err(Error::Validation(format!(
                "kappa > 0 violated (kappa = {})",
                self.kappa
            )));
        }
        if self.b <= 0.0 {
            return Err(Error::Validation(format!(
                "b > 0 violated (b = {})",
                self.b
            )));
        }
        if self.c <= 0.0 {
            return Err(Error::Validation(format!(
                "c > 0 violated (c = {})",
                self.c
            )));
        }
        Ok(())
    }

    /// `|a| < b²/(3c)`, the coefficient range under which the eigenvalue interval is invariant.
    pub fn satisfies_restriction(&self) -> bool {
        self.a.abs() < self.b * self.b / (3.0 * self.c)
    }

    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 24.0 * self.a * self.c
    }

    pub fn stationary(&self) -> Result<Stationary> {
        stationary_scalars(self)
    }
}

/// `f_B(Q) = (a/2) tr(Q²) - (b/3) tr(Q³) + (c/4) tr²(Q²)`.
pub fn bulk_energy(q: &QTensor, p: &Params) -> f64 {
    let t2 = q.tr2();
    0.5 * p.a * t2 - p.b / 3.0 * q.tr3() + 0.25 * p.c * t2 * t2
}

/// Trace-free gradient of the bulk energy: `aQ - b(Q² - tr(Q²) I/3) + c tr(Q²) Q`.
#[inline]
pub fn bulk_gradient(q: &QTensor, p: &Params) -> QTensor {
    let t2 = q.tr2();
    (p.a + p.c * t2) * *q - p.b * q.square_traceless()
}

/// The scalar `a tr(Q²) - b tr(Q³) + c tr²(Q²)` that multiplies `Q + I/3` in the bulk stress.
#[inline]
pub fn bulk_stress_scalar(q: &QTensor, p: &Params) -> f64 {
    let t2 = q.tr2();
    p.a * t2 - p.b * q.tr3() + p.c * t2 * t2
}

pub fn stationary_scalars(p: &Params) -> Result<Stationary> {
    let disc = p.discriminant();
    if !(disc >= 0.0) {
        return Err(Error::Domain(format!(
            "b^2 - 24ac = {disc} < 0: no nonzero uniaxial stationary states"
        )));
    }
    if p.c <= 0.0 {
        return Err(Error::Domain(format!("c > 0 required, got {}", p.c)));
    }
    let root = disc.sqrt();
    let s_plus = (p.b + root) / (4.0 * p.c);
    let s_minus = (p.b - root) / (4.0 * p.c);
    Ok(Stationary {
        s_minus,
        s_plus,
        m: s_plus / 3.0,
    })
}

impl Stationary {
    /// Lower end `-m` of the invariant eigenvalue interval.
    pub fn lower(&self) -> f64 {
        -self.m
    }

    /// Upper end `2m` of the invariant eigenvalue interval.
    pub fn upper(&self) -> f64 {
        2.0 * self.m
    }

    pub fn width(&self) -> f64 {
        3.0 * self.m
    }

    /// Distance by which `[lo, hi]` sticks out of `[-m, 2m]`; zero when contained.
    pub fn excursion(&self, lo: f64, hi: f64) -> f64 {
        (self.lower() - lo).max(hi - self.upper()).max(0.0)
    }
}

pub fn in_physical_interval(q: &QTensor, p: &Params, tol: f64) -> Result<bool> {
    let st = stationary_scalars(p)?;
    let e = q.eigenvalues();
    Ok(e.l1 >= st.lower() - tol && e.l3 <= st.upper() + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p0() -> Params {
        Params::default().with_bulk(-0.2, 1.0, 1.0)
    }

    fn e1() -> Vector3<f64> {
        Vector3::new(1.0, 0.0, 0.0)
    }

    fn random_rotation(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_euler_angles(a, b, c).into_inner()
    }

    #[test]
    fn eigenvalues_of_zero_and_diagonal() {
        let z = QTensor::ZERO.eigenvalues();
        assert_eq!(z.as_array(), [0.0, 0.0, 0.0]);
        let d = QTensor::diag(-1.0 / 3.0, -1.0 / 3.0).eigenvalues();
        assert_eq!(
            d.as_array(),
            [-1.0 / 3.0, -1.0 / 3.0, -(-1.0 / 3.0 - 1.0 / 3.0)]
        );
    }

    #[test]
    fn eigenvalues_uniaxial_s_plus() {
        let st = stationary_scalars(&p0()).unwrap();
        // rotate so the diagonal shortcut is bypassed
        let r = random_rotation(0.3, -0.7, 1.1);
        let q = QTensor::uniaxial(st.s_plus, e1()).rotate(&r);
        let e = q.eigenvalues();
        assert_abs_diff_eq!(e.l1, -0.284027, epsilon = 1e-6);
        assert_abs_diff_eq!(e.l2, -0.284027, epsilon = 1e-6);
        assert_abs_diff_eq!(e.l3, 0.568053, epsilon = 1e-6);
        // iterative oracle
        let (vals, _) = q.eigen_decomposition();
        for (a, b) in e.as_array().iter().zip(vals) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bulk_energy_values() {
        assert_eq!(bulk_energy(&QTensor::ZERO, &p0()), 0.0);
        let s = 1.0 / 2f64.sqrt();
        let q = QTensor::diag(s, -s);
        let p = Params::default().with_bulk(1.0, 0.0, 1.0);
        assert_abs_diff_eq!(q.tr2(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bulk_energy(&q, &p), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn s_plus_state_is_global_minimum_on_samples() {
        use rand::{Rng, SeedableRng};
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        let fmin = bulk_energy(&QTensor::uniaxial(st.s_plus, e1()), &p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let c: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let mut q = QTensor::from_components(c);
            let r: f64 = rng.random_range(0.0..2.0);
            q = (r / q.norm().max(1e-300)) * q;
            assert!(bulk_energy(&q, &p) >= fmin - 1e-14);
        }
    }

    #[test]
    fn stationary_scalar_values() {
        let st = stationary_scalars(&p0()).unwrap();
        assert_abs_diff_eq!(st.s_minus, -0.352080, epsilon = 1e-6);
        assert_abs_diff_eq!(st.s_plus, 0.852080, epsilon = 1e-6);
        assert_abs_diff_eq!(st.m, 0.284027, epsilon = 1e-6);
        let st0 = stationary_scalars(&Params::default().with_bulk(0.0, 1.0, 1.0)).unwrap();
        assert_eq!(st0.s_minus, 0.0);
        assert_eq!(st0.s_plus, 0.5);
        assert_eq!(st0.m, 1.0 / 6.0);
    }

    #[test]
    fn negative_discriminant_is_domain_error() {
        let p = Params::default().with_bulk(1.0, 1.0, 1.0);
        assert!(matches!(stationary_scalars(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn interval_endpoints_match_closed_forms() {
        for (a, b, c) in [(-0.2, 1.0, 1.0), (0.1, 2.0, 0.5), (-3.0, 0.3, 2.0)] {
            let p = Params::default().with_bulk(a, b, c);
            let st = stationary_scalars(&p).unwrap();
            let root = (b * b - 24.0 * a * c).sqrt();
            assert_eq!(st.m, st.s_plus / 3.0);
            assert_abs_diff_eq!(st.lower(), -(b + root) / (12.0 * c), epsilon = 1e-15);
            assert_abs_diff_eq!(st.upper(), (b + root) / (6.0 * c), epsilon = 1e-15);
        }
    }

    #[test]
    fn physical_interval_membership() {
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        assert!(in_physical_interval(&QTensor::ZERO, &p, 0.0).unwrap());
        let q = QTensor::uniaxial(st.s_plus, e1());
        assert!(in_physical_interval(&q, &p, 1e-12).unwrap());
        let q = QTensor::uniaxial(1.1 * st.s_plus, e1());
        assert!(!in_physical_interval(&q, &p, 1e-9).unwrap());
    }

    #[test]
    fn gradient_vanishes_on_uniaxial_manifolds() {
        use rand::{Rng, SeedableRng};
        let p = p0();
        let st = stationary_scalars(&p).unwrap();
        assert_eq!(bulk_gradient(&QTensor::ZERO, &p), QTensor::ZERO);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            for s in [st.s_minus, st.s_plus] {
                let g = bulk_gradient(&QTensor::uniaxial(s, n), &p);
                assert!(g.norm() <= 1e-12, "{g:?}");
            }
        }
    }

    /// Centered finite differences of f_B along each symmetric traceless basis direction.
    fn fd_gradient(q: &QTensor, p: &Params, h: f64) -> [f64; 5] {
        std::array::from_fn(|i| {
            let mut c = q.components();
            c[i] += h;
            let fp = bulk_energy(&QTensor::from_components(c), p);
            c[i] -= 2.0 * h;
            let fm = bulk_energy(&QTensor::from_components(c), p);
            (fp - fm) / (2.0 * h)
        })
    }

    /// Derivative of f_B along the component direction e_i equals G:dQ/dq_i.
    fn analytic_directional(q: &QTensor, p: &Params) -> [f64; 5] {
        let g = bulk_gradient(q, p);
        std::array::from_fn(|i| {
            let mut c = [0.0; 5];
            c[i] = 1.0;
            g.ddot(&QTensor::from_components(c))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn eigenvalues_sum_to_zero_and_are_rotation_invariant(
            c in prop::array::uniform5(-2.0f64..2.0),
            angles in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let q = QTensor::from_components(c);
            let e = q.eigenvalues();
            prop_assert!(e.sum().abs() <= 1e-12 * (1.0 + q.norm()));
            prop_assert!(e.l1 <= e.l2 && e.l2 <= e.l3);
            let r = random_rotation(angles[0], angles[1], angles[2]);
            let er = q.rotate(&r).eigenvalues();
            for (a, b) in e.as_array().iter().zip(er.as_array()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }

        #[test]
        fn bulk_gradient_matches_finite_differences(
            c in prop::array::uniform5(-1.0f64..1.0),
            r in 0.05f64..2.0,
            a in -1.0f64..1.0,
            b in 0.1f64..2.0,
            cc in 0.1f64..2.0,
        ) {
            let mut q = QTensor::from_components(c);
            q = (r / q.norm().max(1e-12)) * q;
            let p = Params::default().with_bulk(a, b, cc);
            let fd = fd_gradient(&q, &p, 1e-5);
            let an = analytic_directional(&q, &p);
            let scale = an.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
            for (x, y) in fd.iter().zip(an) {
                prop_assert!((x - y).abs() <= 1e-6 * scale, "fd {x} an {y}");
            }
        }

        #[test]
        fn bulk_gradient_is_traceless_symmetric(c in prop::array::uniform5(-2.0f64..2.0)) {
            let q = QTensor::from_components(c);
            let g = bulk_gradient(&q, &p0()).to_matrix();
            prop_assert!(g.trace().abs() < 1e-12);
            prop_assert!((g - g.transpose()).norm() == 0.0);
        }
    }
}
