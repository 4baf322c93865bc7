//! Fourier machinery on the periodic square `[-π, π]²`.
//!
//! Physical arrays are `n × n`, row-major with `y` as the slow index:
//! the value at `(x_i, y_j) = (-π + i·dx, -π + j·dx)` lives at `j * n + i`.
//! Spectra keep the non-negative `kx` half only and are stored column-major,
//! `ikx * n + iy`, so that the `y` transforms run over contiguous memory. The forward
//! transform carries the `1/n²` factor, so a coefficient is the amplitude of its mode.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::qtensor::QTensor;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub struct Grid {
    n: usize,
    nh: usize,
    dx: f64,
    /// Signed wavenumbers per `iy`, Nyquist row carrying `-n/2`.
    ky: Vec<f64>,
    /// Wavenumbers used by odd derivatives: Nyquist entries zeroed.
    kx_odd: Vec<f64>,
    ky_odd: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Grid {
    /// `n` must be an even number of at least 8.
    pub fn new(n: usize) -> Result<Arc<Grid>> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "grid n must be even and >= 8, got {n}"
            )));
        }
        let nh = n / 2 + 1;
        let half = (n / 2) as i64;
        let signed = |i: usize| -> i64 {
            let i = i as i64;
            if i < half {
                i
            } else {
                i - n as i64
            }
        };
        let ky: Vec<f64> = (0..n).map(|i| signed(i) as f64).collect();
        let ky_odd: Vec<f64> = (0..n)
            .map(|i| if i == n / 2 { 0.0 } else { signed(i) as f64 })
            .collect();
        let kx_odd: Vec<f64> = (0..nh)
            .map(|i| if i == n / 2 { 0.0 } else { i as f64 })
            .collect();
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Ok(Arc::new(Grid {
            n,
            nh,
            dx: 2.0 * std::f64::consts::PI / n as f64,
            ky,
            kx_odd,
            ky_odd,
            r2c: rp.plan_fft_forward(n),
            c2r: rp.plan_fft_inverse(n),
            col_fwd: cp.plan_fft_forward(n),
            col_inv: cp.plan_fft_inverse(n),
        }))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spec_len(&self) -> usize {
        self.nh * self.n
    }

    #[inline]
    pub fn nh(&self) -> usize {
        self.nh
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -std::f64::consts::PI + i as f64 * self.dx
    }

    /// `(x, y)` of flat physical index `idx`.
    #[inline]
    pub fn point(&self, idx: usize) -> (f64, f64) {
        (self.coord(idx % self.n), self.coord(idx / self.n))
    }

    /// Flat physical index of `(x_ix, y_iy)`.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    /// Signed `(kx, ky)` of flat spectral index `s`.
    #[inline]
    pub fn wavenumber(&self, s: usize) -> (f64, f64) {
        ((s / self.n) as f64, self.ky[s % self.n])
    }

    #[inline]
    pub fn k2(&self, s: usize) -> f64 {
        let (kx, ky) = self.wavenumber(s);
        kx * kx + ky * ky
    }

    /// Wavenumbers used for first derivatives (Nyquist zeroed).
    #[inline]
    pub fn k_odd(&self, s: usize) -> (f64, f64) {
        (self.kx_odd[s / self.n], self.ky_odd[s % self.n])
    }

    /// Parseval weight of a half-spectrum column: 1 for `kx = 0` and `kx = n/2`, 2 otherwise.
    #[inline]
    pub fn half_weight(&self, s: usize) -> f64 {
        let ikx = s / self.n;
        if ikx == 0 || ikx == self.n / 2 {
            1.0
        } else {
            2.0
        }
    }

    /// Whether `s` survives the two-thirds rule `max(|kx|, |ky|) <= n/3`.
    #[inline]
    pub fn resolved(&self, s: usize) -> bool {
        let (kx, ky) = self.wavenumber(s);
        3.0 * kx.abs().max(ky.abs()) <= self.n as f64
    }

    pub fn forward(&self, phys: &[f64], spec: &mut [Complex64]) {
        let (n, nh) = (self.n, self.nh);
        assert_eq!(phys.len(), n * n);
        assert_eq!(spec.len(), n * nh);
        let mut row_in = vec![0.0; n];
        let mut row_out = vec![ZERO; nh];
        let mut scratch = self.r2c.make_scratch_vec();
        let scale = 1.0 / (n * n) as f64;
        for j in 0..n {
            row_in.copy_from_slice(&phys[j * n..(j + 1) * n]);
            self.r2c
                .process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
                .expect("r2c length");
            for (ikx, v) in row_out.iter().enumerate() {
                spec[ikx * n + j] = v * scale;
            }
        }
        let mut cs = vec![ZERO; self.col_fwd.get_inplace_scratch_len()];
        self.col_fwd.process_with_scratch(spec, &mut cs);
    }

    pub fn inverse(&self, spec: &[Complex64], phys: &mut [f64]) {
        let (n, nh) = (self.n, self.nh);
        assert_eq!(phys.len(), n * n);
        assert_eq!(spec.len(), n * nh);
        let mut cols = spec.to_vec();
        let mut cs = vec![ZERO; self.col_inv.get_inplace_scratch_len()];
        self.col_inv.process_with_scratch(&mut cols, &mut cs);
        let mut row_in = vec![ZERO; nh];
        let mut row_out = vec![0.0; n];
        let mut scratch = self.c2r.make_scratch_vec();
        for j in 0..n {
            for (ikx, v) in row_in.iter_mut().enumerate() {
                *v = cols[ikx * n + j];
            }
            row_in[0].im = 0.0;
            row_in[nh - 1].im = 0.0;
            self.c2r
                .process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
                .expect("c2r length");
            phys[j * n..(j + 1) * n].copy_from_slice(&row_out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scalar,
    Vec3,
    #[serde(rename = "qtensor")]
    QTensor,
}

impl Kind {
    pub fn components(self) -> usize {
        match self {
            Kind::Scalar => 1,
            Kind::Vec3 => 3,
            Kind::QTensor => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Scalar => "scalar",
            Kind::Vec3 => "vec3",
            Kind::QTensor => "qtensor",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        match s {
            "scalar" => Some(Kind::Scalar),
            "vec3" => Some(Kind::Vec3),
            "qtensor" => Some(Kind::QTensor),
            _ => None,
        }
    }
}

/// Componentwise weights of the Frobenius norm in the 5-component storage; the cross
/// term between `q11` and `q22` comes from the implied `q33`.
fn frob_sq<T: Copy>(c: &[T], sq: impl Fn(T) -> f64, add: impl Fn(T, T) -> T) -> f64 {
    sq(c[0]) + sq(c[3]) + sq(add(c[0], c[3])) + 2.0 * (sq(c[1]) + sq(c[2]) + sq(c[4]))
}

/// Physical-space field: one `n × n` array per component.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Arc<Grid>,
    pub kind: Kind,
    pub data: Vec<Vec<f64>>,
}

impl PartialEq for Field {
    fn eq(&self, o: &Self) -> bool {
        self.grid.n == o.grid.n && self.kind == o.kind && self.data == o.data
    }
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>, kind: Kind) -> Field {
        Field {
            grid: grid.clone(),
            kind,
            data: vec![vec![0.0; grid.len()]; kind.components()],
        }
    }

    pub fn from_fn<F>(grid: &Arc<Grid>, kind: Kind, f: F) -> Field
    where
        F: Fn(f64, f64) -> Vec<f64>,
    {
        let mut out = Field::zeros(grid, kind);
        for idx in 0..grid.len() {
            let (x, y) = grid.point(idx);
            let v = f(x, y);
            assert_eq!(v.len(), kind.components());
            for (c, val) in v.into_iter().enumerate() {
                out.data[c][idx] = val;
            }
        }
        out
    }

    pub fn scalar_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::from_fn(grid, Kind::Scalar, |x, y| vec![f(x, y)])
    }

    pub fn vec3_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> [f64; 3]) -> Field {
        Field::from_fn(grid, Kind::Vec3, |x, y| f(x, y).to_vec())
    }

    pub fn qtensor_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> QTensor) -> Field {
        Field::from_fn(grid, Kind::QTensor, |x, y| f(x, y).components().to_vec())
    }

    pub fn uniform_q(grid: &Arc<Grid>, q: QTensor) -> Field {
        Field::qtensor_fn(grid, |_, _| q)
    }

    pub fn from_components(grid: &Arc<Grid>, kind: Kind, data: Vec<Vec<f64>>) -> Result<Field> {
        if data.len() != kind.components() || data.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "{} field on n = {} needs {} arrays of {} values",
                kind.name(),
                grid.n,
                kind.components(),
                grid.len()
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            kind,
            data,
        })
    }

    #[inline]
    pub fn q_at(&self, idx: usize) -> QTensor {
        debug_assert_eq!(self.kind, Kind::QTensor);
        let d = &self.data;
        QTensor::new(d[0][idx], d[1][idx], d[2][idx], d[3][idx], d[4][idx])
    }

    #[inline]
    pub fn set_q(&mut self, idx: usize, q: QTensor) {
        let c = q.components();
        for (k, v) in c.into_iter().enumerate() {
            self.data[k][idx] = v;
        }
    }

    pub fn map_q(&self, f: impl Fn(QTensor) -> QTensor + Sync) -> Field {
        let qs: Vec<QTensor> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| f(self.q_at(i)))
            .collect();
        let mut out = Field::zeros(&self.grid, Kind::QTensor);
        for (i, q) in qs.into_iter().enumerate() {
            out.set_q(i, q);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn to_spectral(&self) -> SpectralField {
        let data = self
            .data
            .par_iter()
            .map(|c| {
                let mut s = vec![ZERO; self.grid.spec_len()];
                self.grid.forward(c, &mut s);
                s
            })
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            kind: self.kind,
            data,
        }
    }

    /// Pointwise squared magnitude (Frobenius for tensors) at `idx`.
    #[inline]
    pub fn norm_sq_at(&self, idx: usize) -> f64 {
        match self.kind {
            Kind::QTensor => self.q_at(idx).tr2(),
            _ => self.data.iter().map(|c| c[idx] * c[idx]).sum(),
        }
    }

    /// `‖f‖_{L²}` by the trapezoid rule (exact for resolved trigonometric polynomials).
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = (0..self.grid.len()).map(|i| self.norm_sq_at(i)).sum();
        (s * self.grid.dx * self.grid.dx).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.norm_sq_at(i).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self, comp: usize) -> f64 {
        self.data[comp].iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn axpy(&mut self, a: f64, x: &Field) {
        for (c, xc) in self.data.iter_mut().zip(&x.data) {
            for (v, w) in c.iter_mut().zip(xc) {
                *v += a * w;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        for c in out.data.iter_mut() {
            for v in c.iter_mut() {
                *v *= a;
            }
        }
        out
    }

    pub fn sub(&self, o: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }
}

/// Half-spectrum representation of a [`Field`].
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub grid: Arc<Grid>,
    pub kind: Kind,
    pub data: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>, kind: Kind) -> SpectralField {
        SpectralField {
            grid: grid.clone(),
            kind,
            data: vec![vec![ZERO; grid.spec_len()]; kind.components()],
        }
    }

    pub fn to_physical(&self) -> Field {
        let data = self
            .data
            .par_iter()
            .map(|s| {
                let mut p = vec![0.0; self.grid.len()];
                self.grid.inverse(s, &mut p);
                p
            })
            .collect();
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            data,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &SpectralField) {
        for (c, xc) in self.data.iter_mut().zip(&x.data) {
            for (v, w) in c.iter_mut().zip(xc) {
                *v += a * w;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }

    /// Multiplies every component by the real symbol `m(s)` of spectral index `s`.
    pub fn apply(&mut self, m: impl Fn(usize) -> f64 + Sync) {
        for c in self.data.iter_mut() {
            for (s, v) in c.iter_mut().enumerate() {
                *v *= m(s);
            }
        }
    }

    pub fn dealias(&mut self) {
        let g = self.grid.clone();
        for c in self.data.iter_mut() {
            dealias_slice(&g, c);
        }
    }

    /// Spectral derivative of every component.
    pub fn derivative(&self, axis: Axis, order: u32) -> SpectralField {
        let mut out = self.clone();
        for c in out.data.iter_mut() {
            derive_slice(&self.grid, c, axis, order);
        }
        out
    }

    /// `Σ_k (1 + |k|²)^s |f̂_k|²` over components, Frobenius weighting for tensors.
    pub fn sobolev_sq(&self, s: u32) -> f64 {
        let g = &self.grid;
        let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
        let mut total = 0.0;
        for idx in 0..g.spec_len() {
            let w = g.half_weight(idx) * (1.0 + g.k2(idx)).powi(s as i32);
            let amp = match self.kind {
                Kind::QTensor => {
                    let c: Vec<Complex64> = self.data.iter().map(|d| d[idx]).collect();
                    frob_sq(&c, |z| z.norm_sqr(), |a, b| a + b)
                }
                _ => self.data.iter().map(|d| d[idx].norm_sqr()).sum(),
            };
            total += w * amp;
        }
        four_pi2 * total
    }

    pub fn sobolev_norm(&self, s: u32) -> f64 {
        self.sobolev_sq(s).sqrt()
    }

    /// Energy fraction in modes with `max(|kx|, |ky|) > n/4`.
    pub fn tail_fraction(&self) -> f64 {
        let g = &self.grid;
        let cut = g.n as f64 / 4.0;
        let (mut tail, mut total) = (0.0, 0.0);
        for idx in 0..g.spec_len() {
            let (kx, ky) = g.wavenumber(idx);
            let w = g.half_weight(idx);
            let e: f64 = self.data.iter().map(|d| d[idx].norm_sqr()).sum::<f64>() * w;
            total += e;
            if kx.abs().max(ky.abs()) > cut {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Evaluates component `comp` at an arbitrary point by direct Fourier summation.
    pub fn eval(&self, comp: usize, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let n = g.n;
        let (xs, ys) = (x + std::f64::consts::PI, y + std::f64::consts::PI);
        let ex: Vec<Complex64> = (0..g.nh)
            .map(|k| Complex64::from_polar(1.0, k as f64 * xs))
            .collect();
        let ey: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, g.ky[i] * ys))
            .collect();
        let d = &self.data[comp];
        let mut acc = 0.0;
        for ikx in 0..g.nh {
            let mut col = ZERO;
            for iy in 0..n {
                if iy == n / 2 {
                    continue;
                }
                col += d[ikx * n + iy] * ey[iy];
            }
            // Nyquist in y contributes its cosine part only
            col += d[ikx * n + n / 2] * (g.ky[n / 2] * ys).cos();
            let w = if ikx == 0 || ikx == n / 2 { 1.0 } else { 2.0 };
            let term = if ikx == n / 2 {
                (col * (ikx as f64 * xs).cos()).re
            } else {
                (col * ex[ikx]).re
            };
            acc += w * term;
        }
        acc
    }
}

pub fn dealias_slice(g: &Grid, c: &mut [Complex64]) {
    for (s, v) in c.iter_mut().enumerate() {
        if !g.resolved(s) {
            *v = ZERO;
        }
    }
}

pub fn derive_slice(g: &Grid, c: &mut [Complex64], axis: Axis, order: u32) {
    match order {
        0 => {}
        1 => {
            for (s, v) in c.iter_mut().enumerate() {
                let (kx, ky) = g.k_odd(s);
                let k = if axis == Axis::X { kx } else { ky };
                *v = Complex64::new(-k * v.im, k * v.re);
            }
        }
        2 => {
            for (s, v) in c.iter_mut().enumerate() {
                let (kx, ky) = g.wavenumber(s);
                let k = if axis == Axis::X { kx } else { ky };
                *v *= -k * k;
            }
        }
        _ => panic!("derivative order must be 0, 1 or 2, got {order}"),
    }
}

/// Spectral derivative of a physical field.
pub fn derivative(f: &Field, axis: Axis, order: u32) -> Field {
    f.to_spectral().derivative(axis, order).to_physical()
}

/// Spectral Laplacian of each component, in place.
pub fn laplacian_slice(g: &Grid, c: &mut [Complex64]) {
    for (s, v) in c.iter_mut().enumerate() {
        *v *= -g.k2(s);
    }
}

/// Projects the in-plane components onto divergence-free fields; the third component is
/// left alone.
pub fn leray_project_spectral(u: &mut SpectralField) {
    assert_eq!(u.kind, Kind::Vec3);
    let g = u.grid.clone();
    let (a, rest) = u.data.split_at_mut(1);
    let (u1, u2) = (&mut a[0], &mut rest[0]);
    for s in 0..g.spec_len() {
        let (kx, ky) = g.k_odd(s);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            continue;
        }
        let dot = kx * u1[s] + ky * u2[s];
        u1[s] -= kx / k2 * dot;
        u2[s] -= ky / k2 * dot;
    }
}

pub fn leray_project(u: &Field) -> Field {
    let mut s = u.to_spectral();
    leray_project_spectral(&mut s);
    s.to_physical()
}

/// Spectral divergence `∂x u1 + ∂y u2` of a vector field.
pub fn divergence(u: &SpectralField) -> SpectralField {
    let g = &u.grid;
    let mut out = SpectralField::zeros(g, Kind::Scalar);
    let mut a = u.data[0].clone();
    derive_slice(g, &mut a, Axis::X, 1);
    let mut b = u.data[1].clone();
    derive_slice(g, &mut b, Axis::Y, 1);
    for ((o, x), y) in out.data[0].iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
    out
}

/// Mean-free solution of `Δψ = f`.
pub fn poisson_solve(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    let g = f.grid.clone();
    for c in out.data.iter_mut() {
        for (s, v) in c.iter_mut().enumerate() {
            let k2 = g.k2(s);
            *v = if k2 == 0.0 { ZERO } else { -*v / k2 };
        }
    }
    out
}

pub fn sobolev_norm(f: &Field, s: u32) -> f64 {
    f.to_spectral().sobolev_norm(s)
}

pub fn dealias(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    out.dealias();
    out
}

/// Physical-space gradient `(∂x f, ∂y f)` of every component.
pub fn gradient(f: &SpectralField) -> (Field, Field) {
    (
        f.derivative(Axis::X, 1).to_physical(),
        f.derivative(Axis::Y, 1).to_physical(),
    )
}

/// Pointwise `sqrt(|∂x f|² + |∂y f|²)` maximum, Frobenius for tensors.
pub fn max_gradient(f: &SpectralField) -> f64 {
    let (gx, gy) = gradient(f);
    (0..f.grid.len())
        .map(|i| (gx.norm_sq_at(i) + gy.norm_sq_at(i)).sqrt())
        .fold(0.0, f64::max)
}

/// `‖∇f‖²_{L²}` computed spectrally.
pub fn grad_l2_sq(f: &SpectralField) -> f64 {
    f.sobolev_sq(1) - f.sobolev_sq(0)
}
