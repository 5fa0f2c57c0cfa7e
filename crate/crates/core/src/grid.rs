//! Uniform finite-difference discretization of `Omega x (0,T)`.
//!
//! Fields live on the interior nodes `x_i = i*h`, `i = 1..=n`, of a uniform
//! mesh of `[0, L]`; the two boundary nodes carry the homogeneous Dirichlet
//! value 0 and are never stored. Spatial integrals use the composite
//! trapezoid rule with those zero end values, which reduces to `h * sum`.
//! Time integrals of trajectories use the right-endpoint rule (weight `dt` on
//! frames `1..=N`), matching the implicit half of the time stepper.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::helmholtz::HelmholtzOperator;

/// Uniform mesh of `[0, L]` with `n_interior` unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain1D {
    length: f64,
    n_interior: usize,
    h: f64,
}

impl Domain1D {
    pub fn new(length: f64, n_interior: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(invalid("length", format!("must be positive, got {length}")));
        }
        if n_interior < 3 {
            return Err(invalid(
                "n_interior",
                format!("must be at least 3, got {n_interior}"),
            ));
        }
        Ok(Self {
            length,
            n_interior,
            h: length / (n_interior as f64 + 1.0),
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Coordinate of interior node `i` (0-based).
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_interior).map(|i| self.x(i))
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.nodes().map(f).collect())
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.n_interior)
    }

    /// `sin(j*pi*x/L)`, the j-th continuous Dirichlet eigenfunction, which is
    /// also an exact eigenvector of the discrete `d2`.
    pub fn mode(&self, j: usize) -> Field {
        let k = j as f64 * std::f64::consts::PI / self.length;
        self.sample(|x| (k * x).sin())
    }

    /// Eigenvalue of `-d2` belonging to [`Domain1D::mode`].
    pub fn laplacian_eigenvalue(&self, j: usize) -> f64 {
        let s = (j as f64 * std::f64::consts::PI * self.h / (2.0 * self.length)).sin();
        4.0 * s * s / (self.h * self.h)
    }

    pub fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_interior {
            return Err(Error::DimensionMismatch {
                expected: self.n_interior,
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Centered first difference with zero boundary extension.
    pub fn d1(&self, f: &[f64]) -> Field {
        Field(d1(f, self.h))
    }

    /// Three-point second difference with zero boundary extension.
    pub fn d2(&self, f: &[f64]) -> Field {
        Field(d2(f, self.h))
    }

    pub fn inner_h(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.h * dot(f, g))
    }

    pub fn norm_h(&self, f: &[f64]) -> Result<f64> {
        self.check(f)?;
        Ok(self.norm_h_unchecked(f))
    }

    pub(crate) fn norm_h_unchecked(&self, f: &[f64]) -> f64 {
        (self.h * dot(f, f)).sqrt()
    }

    /// `sqrt(|f|_H^2 + |d1 f|_H^2)`.
    pub fn norm_v(&self, f: &[f64]) -> Result<f64> {
        self.check(f)?;
        Ok(self.norm_v_sq(f).sqrt())
    }

    pub(crate) fn norm_v_sq(&self, f: &[f64]) -> f64 {
        let fx = d1(f, self.h);
        self.h * (dot(f, f) + dot(&fx, &fx))
    }

    /// Wall values of `f_x` by one-sided second-order differences, using
    /// `f = 0` on the boundary.
    pub fn wall_slopes(&self, f: &[f64]) -> (f64, f64) {
        let n = f.len();
        let h = self.h;
        let left = (4.0 * f[0] - f[1]) / (2.0 * h);
        let right = -(4.0 * f[n - 1] - f[n - 2]) / (2.0 * h);
        (left, right)
    }

    /// `|f_x|_H^2` by the trapezoid rule over the closed interval: centered
    /// differences inside and [`Domain1D::wall_slopes`] at the ends.
    pub fn norm_dx_sq(&self, f: &[f64]) -> Result<f64> {
        self.check(f)?;
        let fx = d1(f, self.h);
        let (l, r) = self.wall_slopes(f);
        Ok(self.h * (dot(&fx, &fx) + 0.5 * (l * l + r * r)))
    }

    /// Discrete dual norm: `sqrt((f, w)_H)` with `(I - d2) w = f`.
    pub fn norm_vstar(&self, f: &[f64]) -> Result<f64> {
        self.check(f)?;
        let helm = HelmholtzOperator::new(*self);
        self.norm_vstar_with(&helm, f)
    }

    pub(crate) fn norm_vstar_with(&self, helm: &HelmholtzOperator, f: &[f64]) -> Result<f64> {
        Ok(self.norm_vstar_sq_with(helm, f)?.sqrt())
    }

    pub(crate) fn norm_vstar_sq_with(&self, helm: &HelmholtzOperator, f: &[f64]) -> Result<f64> {
        let w = helm.solve(f);
        let back = helm.apply(&w);
        let scale = dot(f, f).sqrt();
        if scale > 0.0 {
            let res: f64 = back
                .iter()
                .zip(f)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if res > 1e-10 * scale {
                return Err(Error::SolverResidual {
                    residual: res / scale,
                    tolerance: 1e-10,
                });
            }
        }
        Ok((self.h * dot(f, &w)).max(0.0))
    }

    /// Maximum nodal magnitude.
    pub fn norm_sup(&self, f: &[f64]) -> f64 {
        f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be at least 1"));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Right-endpoint quadrature weight of frame `n`.
    pub fn weight(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.dt
        }
    }
}

/// Nodal values at one time level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field(self.0.iter().map(|v| a * v).collect())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(s, o)| s + a * o).collect())
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Time history: frame `n` holds the field at `t_n`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    frames: Vec<Field>,
}

impl Trajectory {
    pub fn new(frames: Vec<Field>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let n = first.len();
            if let Some(bad) = frames.iter().find(|f| f.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: bad.len(),
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn zeros(n_frames: usize, n: usize) -> Self {
        Self {
            frames: vec![Field::zeros(n); n_frames],
        }
    }

    /// Trajectory with frames `0..=N` sampled from `f(t, x)`.
    pub fn sample(dom: &Domain1D, tg: &TimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            frames: (0..=tg.n_steps())
                .map(|n| {
                    let t = tg.t(n);
                    dom.sample(|x| f(t, x))
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Field] {
        &mut self.frames
    }

    pub fn frame(&self, n: usize) -> &Field {
        &self.frames[n]
    }

    pub fn last(&self) -> &Field {
        self.frames.last().expect("empty trajectory")
    }

    pub fn into_frames(self) -> Vec<Field> {
        self.frames
    }

    pub fn map2(&self, other: &Trajectory, f: impl Fn(f64, f64) -> f64) -> Trajectory {
        assert_eq!(self.len(), other.len());
        Trajectory {
            frames: self
                .frames
                .iter()
                .zip(&other.frames)
                .map(|(a, b)| Field(a.iter().zip(b.iter()).map(|(x, y)| f(*x, *y)).collect()))
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Trajectory {
        Trajectory {
            frames: self.frames.iter().map(|f| f.scaled(a)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(Field::is_finite)
    }
}

/// Trajectory norms on a fixed space-time grid.
#[derive(Debug, Clone)]
pub struct TrajectoryNorms {
    pub domain: Domain1D,
    pub time: TimeGrid,
    helm: HelmholtzOperator,
}

impl TrajectoryNorms {
    pub fn helmholtz(&self) -> &HelmholtzOperator {
        &self.helm
    }

    pub fn new(domain: Domain1D, time: TimeGrid) -> Self {
        Self {
            domain,
            time,
            helm: HelmholtzOperator::new(domain),
        }
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if traj.len() != self.time.n_steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.time.n_steps() + 1,
                got: traj.len(),
            });
        }
        traj.frames().iter().try_for_each(|f| self.domain.check(f))
    }

    /// `max_n |phi_n|_H`
    pub fn norm_ct_h(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        Ok(traj
            .frames()
            .iter()
            .map(|f| self.domain.norm_h_unchecked(f))
            .fold(0.0, f64::max))
    }

    /// `(int_0^T |phi|_H^2 dt)^(1/2)`
    pub fn norm_l2h(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        let s: f64 = traj
            .frames()
            .iter()
            .enumerate()
            .map(|(n, f)| self.time.weight(n) * self.domain.h() * dot(f, f))
            .sum();
        Ok(s.sqrt())
    }

    /// `(int_0^T |phi|_V^2 dt)^(1/2)`
    pub fn norm_l2v(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        let s: f64 = traj
            .frames()
            .iter()
            .enumerate()
            .map(|(n, f)| self.time.weight(n) * self.domain.norm_v_sq(f))
            .sum();
        Ok(s.sqrt())
    }

    /// `(int_0^T |phi|_{V*}^2 dt)^(1/2)`
    pub fn norm_l2vstar(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        let mut s = 0.0;
        for (n, f) in traj.frames().iter().enumerate() {
            let w = self.time.weight(n);
            if w > 0.0 {
                s += w * self.domain.norm_vstar_sq_with(&self.helm, f)?;
            }
        }
        Ok(s.sqrt())
    }

    /// `(int_0^T |phi_t|_{V*}^2 dt)^(1/2)` with forward difference quotients.
    pub fn norm_dt_vstar(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        let dt = self.time.dt();
        let mut s = 0.0;
        for pair in traj.frames().windows(2) {
            let d: Vec<f64> = pair[1]
                .iter()
                .zip(pair[0].iter())
                .map(|(b, a)| (b - a) / dt)
                .collect();
            s += dt * self.domain.norm_vstar_sq_with(&self.helm, &d)?;
        }
        Ok(s.sqrt())
    }

    /// `|phi|_{L2(V)} + |phi_t|_{L2(V*)}`
    pub fn norm_wv(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self.norm_l2v(traj)? + self.norm_dt_vstar(traj)?)
    }

    /// Space-time pairing `int_0^T (a, b)_H dt`.
    pub fn inner_l2h(&self, a: &Trajectory, b: &Trajectory) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(a.frames()
            .iter()
            .zip(b.frames())
            .enumerate()
            .map(|(n, (f, g))| self.time.weight(n) * self.domain.h() * dot(f, g))
            .sum())
    }
}

/// Lower estimate of the embedding constant `c_E` in
/// `|phi|_{C(H)} <= c_E |phi|_{W(V)}`, as the largest ratio seen over a
/// seeded family of random trajectories.
pub fn estimate_embedding_constant(
    domain: Domain1D,
    time: TimeGrid,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let norms = TrajectoryNorms::new(domain, time);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_modes = domain.n().min(8);
    let modes: Vec<Field> = (1..=n_modes).map(|j| domain.mode(j)).collect();
    let mut best = 0.0_f64;
    for s in 0..samples {
        let coeffs: Vec<(f64, f64, f64)> = (0..n_modes)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..4.0),
                )
            })
            .collect();
        let concentrate = s % 2 == 1;
        let t_peak: f64 = rng.gen_range(0.0..1.0) * time.horizon();
        let width = 0.05 * time.horizon();
        let frames = (0..=time.n_steps())
            .map(|n| {
                let t = time.t(n);
                let envelope = if concentrate {
                    (-((t - t_peak) / width).powi(2)).exp()
                } else {
                    1.0
                };
                let mut f = vec![0.0; domain.n()];
                for (mode, (a, b, freq)) in modes.iter().zip(&coeffs) {
                    let amp = envelope
                        * (a + b * (std::f64::consts::PI * freq * t / time.horizon()).cos());
                    for (fi, mi) in f.iter_mut().zip(mode.iter()) {
                        *fi += amp * mi;
                    }
                }
                Field(f)
            })
            .collect();
        let traj = Trajectory { frames };
        let wv = norms.norm_wv(&traj)?;
        if wv > 0.0 {
            best = best.max(norms.norm_ct_h(&traj)? / wv);
        }
    }
    Ok(best)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn d1(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            0.0
        } else {
            f[i as usize]
        }
    };
    (0..n as isize)
        .map(|i| (at(i + 1) - at(i - 1)) / (2.0 * h))
        .collect()
}

pub(crate) fn d2(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            0.0
        } else {
            f[i as usize]
        }
    };
    (0..n as isize)
        .map(|i| (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h))
        .collect()
}
