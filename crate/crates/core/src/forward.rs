//! Controlled viscous k-FORQ/MCH equation in momentum form,
//!
//! ```text
//! y_t - eps*y_xx + (u^2 - u_x^2) y_x + 2 u_x y^2 + k u_x = B omega,   y = u - u_xx,
//! ```
//!
//! on `(0, L) x (0, T)` with `y = 0` on the boundary, integrated by IMEX
//! Euler: the diffusion is implicit, transport, the `k` term and the control
//! are explicit.
//!
//! Controls are piecewise constant in time: control frame `k` acts on the
//! step from `t_k` to `t_{k+1}`, so a control carries `n_steps` frames.

use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::banded::SymTridiagonal;
use crate::error::{invalid, Error, Result};
use crate::grid::{self, Domain1D, Field, TimeGrid, Trajectory};
use crate::helmholtz::{HelmholtzOperator, Velocity};

/// Viscosity and the constant of the linear `k u_x` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epsilon: f64,
    pub k: f64,
}

impl ModelParams {
    pub fn new(epsilon: f64, k: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        if !k.is_finite() {
            return Err(invalid("k", "must be finite"));
        }
        Ok(Self { epsilon, k })
    }
}

/// Rectangular control region `[a, b] x [t0, t1]` snapped to the grid.
///
/// A node belongs to the window when `a <= x_i <= b`; a control frame `k`
/// belongs to it when its step `[t_k, t_{k+1}]` lies inside `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlWindow {
    domain: Domain1D,
    time: TimeGrid,
    nodes: Range<usize>,
    steps: Range<usize>,
}

/// Control values on the window only, stored step-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowValues(pub Vec<f64>);

impl WindowValues {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn axpy(&self, a: f64, other: &WindowValues) -> WindowValues {
        WindowValues(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(s, o)| s + a * o)
                .collect(),
        )
    }

    pub fn scaled(&self, a: f64) -> WindowValues {
        WindowValues(self.0.iter().map(|v| a * v).collect())
    }
}

impl ControlWindow {
    pub fn new(domain: Domain1D, time: TimeGrid, x: (f64, f64), t: (f64, f64)) -> Result<Self> {
        let (a, b) = x;
        let (t0, t1) = t;
        if !(a <= b && a >= 0.0 && b <= domain.length()) {
            return Err(invalid(
                "window.x",
                format!(
                    "[{a}, {b}] is not a subinterval of [0, {}]",
                    domain.length()
                ),
            ));
        }
        if !(t0 <= t1 && t0 >= 0.0 && t1 <= time.horizon() * (1.0 + 1e-12)) {
            return Err(invalid(
                "window.t",
                format!(
                    "[{t0}, {t1}] is not a subinterval of [0, {}]",
                    time.horizon()
                ),
            ));
        }
        let tol_x = 1e-12 * domain.length();
        let tol_t = 1e-12 * time.horizon();
        let inside: Vec<usize> = (0..domain.n())
            .filter(|&i| domain.x(i) >= a - tol_x && domain.x(i) <= b + tol_x)
            .collect();
        let steps: Vec<usize> = (0..time.n_steps())
            .filter(|&k| time.t(k) >= t0 - tol_t && time.t(k + 1) <= t1 + tol_t)
            .collect();
        if inside.is_empty() || steps.is_empty() {
            return Err(invalid(
                "window",
                "window must contain at least one interior node and one time step",
            ));
        }
        Ok(Self {
            domain,
            time,
            nodes: inside[0]..inside[inside.len() - 1] + 1,
            steps: steps[0]..steps[steps.len() - 1] + 1,
        })
    }

    /// The whole cylinder `Q`.
    pub fn full(domain: Domain1D, time: TimeGrid) -> Self {
        Self {
            domain,
            time,
            nodes: 0..domain.n(),
            steps: 0..time.n_steps(),
        }
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn nodes(&self) -> Range<usize> {
        self.nodes.clone()
    }

    pub fn steps(&self) -> Range<usize> {
        self.steps.clone()
    }

    /// Number of window unknowns.
    pub fn len(&self) -> usize {
        self.nodes.len() * self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, step: usize, node: usize) -> bool {
        self.steps.contains(&step) && self.nodes.contains(&node)
    }

    pub fn zeros(&self) -> WindowValues {
        WindowValues(vec![0.0; self.len()])
    }

    /// Window values sampled from `f(t_k, x_i)`.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> WindowValues {
        let mut out = Vec::with_capacity(self.len());
        for k in self.steps() {
            for i in self.nodes() {
                out.push(f(self.time.t(k), self.domain.x(i)));
            }
        }
        WindowValues(out)
    }

    /// The controller `B`: zero extension to the whole grid.
    pub fn extend(&self, q: &WindowValues) -> Control {
        assert_eq!(q.len(), self.len(), "window value count mismatch");
        let mut frames = vec![Field::zeros(self.domain.n()); self.time.n_steps()];
        let width = self.nodes.len();
        for (row, k) in self.steps().enumerate() {
            frames[k][self.nodes.clone()].copy_from_slice(&q.0[row * width..(row + 1) * width]);
        }
        Control { frames }
    }

    /// `B*`: restriction of per-step fields (at least `n_steps` frames) to
    /// the window.
    pub fn restrict(&self, frames: &[Field]) -> WindowValues {
        let mut out = Vec::with_capacity(self.len());
        for k in self.steps() {
            out.extend_from_slice(&frames[k][self.nodes.clone()]);
        }
        WindowValues(out)
    }

    /// `L2(Q0)` inner product: `sum dt*h*p*q`.
    pub fn inner(&self, p: &WindowValues, q: &WindowValues) -> f64 {
        self.time.dt() * self.domain.h() * grid::dot(&p.0, &q.0)
    }

    pub fn norm(&self, q: &WindowValues) -> f64 {
        self.inner(q, q).sqrt()
    }
}

/// Forcing on the whole grid, one frame per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    frames: Vec<Field>,
}

impl Control {
    pub fn zeros(n_steps: usize, n: usize) -> Self {
        Self {
            frames: vec![Field::zeros(n); n_steps],
        }
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Field {
        &self.frames[k]
    }

    /// `L2(Q)` inner product against per-step fields.
    pub fn inner_q(&self, dom: &Domain1D, tg: &TimeGrid, psi: &[Field]) -> f64 {
        self.frames
            .iter()
            .zip(psi)
            .map(|(a, b)| tg.dt() * dom.h() * grid::dot(a, b))
            .sum()
    }
}

/// State trajectory with the velocity of every frame.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub y: Trajectory,
    pub velocity: Vec<Velocity>,
    /// Steps on which the advective bound was exceeded.
    pub stability_warnings: usize,
}

impl ForwardTrajectory {
    pub fn u(&self) -> Trajectory {
        Trajectory::new(self.velocity.iter().map(|v| v.u.clone()).collect())
            .expect("frames share one grid")
    }

    pub fn u_x(&self) -> Trajectory {
        Trajectory::new(self.velocity.iter().map(|v| v.u_x.clone()).collect())
            .expect("frames share one grid")
    }
}

/// Result of one time step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub y: Field,
    /// False when `dt` exceeded the configured advective bound.
    pub stable: bool,
}

/// Which viscous term the weak residual tests with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViscousForm {
    /// `eps (y_x, eta_x)`, consistent with the strong equation.
    #[default]
    Strong,
    /// `eps (u, eta)_V`, the alternative weak formulation.
    VelocityV,
}

/// IMEX Euler integrator on a fixed grid.
#[derive(Debug, Clone)]
pub struct ForwardSolver {
    domain: Domain1D,
    time: TimeGrid,
    params: ModelParams,
    helm: HelmholtzOperator,
    implicit: SymTridiagonal,
    cfl: f64,
    transport: bool,
}

impl ForwardSolver {
    pub fn new(domain: Domain1D, time: TimeGrid, params: ModelParams) -> Self {
        let r = time.dt() * params.epsilon / (domain.h() * domain.h());
        Self {
            domain,
            time,
            params,
            helm: HelmholtzOperator::new(domain),
            implicit: SymTridiagonal::new(domain.n(), 1.0 + 2.0 * r, -r),
            cfl: 0.5,
            transport: true,
        }
    }

    /// Advective bound `dt <= c * h / max|u^2 - u_x^2|` (default 0.5).
    pub fn with_cfl(mut self, c: f64) -> Self {
        self.cfl = c;
        self
    }

    /// Drops every explicit term except the control.
    #[cfg(test)]
    pub(crate) fn diffusion_only(mut self) -> Self {
        self.transport = false;
        self
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn helmholtz(&self) -> &HelmholtzOperator {
        &self.helm
    }

    pub(crate) fn implicit(&self) -> &SymTridiagonal {
        &self.implicit
    }

    pub(crate) fn transport_enabled(&self) -> bool {
        self.transport
    }

    /// `-(u^2 - u_x^2) y_x - 2 u_x y^2 - k u_x`
    pub(crate) fn transport_term(&self, y: &[f64], vel: &Velocity) -> Vec<f64> {
        if !self.transport {
            return vec![0.0; y.len()];
        }
        let y_x = grid::d1(y, self.domain.h());
        let k = self.params.k;
        (0..y.len())
            .map(|i| {
                let (u, ux) = (vel.u[i], vel.u_x[i]);
                -(u * u - ux * ux) * y_x[i] - 2.0 * ux * y[i] * y[i] - k * ux
            })
            .collect()
    }

    /// Full right-hand side `eps*d2(y) + transport + omega`.
    pub fn rhs(&self, y: &[f64], omega: &[f64]) -> Result<Field> {
        self.domain.check(y)?;
        self.domain.check(omega)?;
        let vel = self.helm.velocity(y);
        let diff = grid::d2(y, self.domain.h());
        let tr = self.transport_term(y, &vel);
        let out: Vec<f64> = (0..y.len())
            .map(|i| self.params.epsilon * diff[i] + tr[i] + omega[i])
            .collect();
        let out = Field::from(out);
        if !out.is_finite() {
            return Err(Error::NonFinite { time_index: 0 });
        }
        Ok(out)
    }

    /// Largest `dt` allowed by the advective bound for this velocity.
    pub fn stable_dt(&self, vel: &Velocity) -> f64 {
        let speed = vel
            .u
            .iter()
            .zip(vel.u_x.iter())
            .map(|(u, ux)| (u * u - ux * ux).abs())
            .fold(0.0, f64::max);
        if speed == 0.0 {
            f64::INFINITY
        } else {
            self.cfl * self.domain.h() / speed
        }
    }

    fn step_with(&self, y: &[f64], vel: &Velocity, omega: &[f64]) -> StepOutcome {
        let dt = self.time.dt();
        let stable = dt <= self.stable_dt(vel);
        let tr = self.transport_term(y, vel);
        let mut b: Vec<f64> = (0..y.len())
            .map(|i| y[i] + dt * (tr[i] + omega[i]))
            .collect();
        self.implicit.solve_in_place(&mut b);
        StepOutcome {
            y: Field::from(b),
            stable,
        }
    }

    /// One IMEX Euler step from `y_n` with the control frame of that step.
    pub fn step(&self, y: &[f64], omega: &[f64]) -> Result<StepOutcome> {
        self.domain.check(y)?;
        self.domain.check(omega)?;
        let vel = self.helm.velocity(y);
        let out = self.step_with(y, &vel, omega);
        if !out.stable {
            warn!(
                "dt = {} exceeds advective bound {}",
                self.time.dt(),
                self.stable_dt(&vel)
            );
        }
        if !out.y.is_finite() {
            return Err(Error::NonFinite { time_index: 1 });
        }
        Ok(out)
    }

    pub fn solve(&self, y0: &[f64], omega: &Control) -> Result<ForwardTrajectory> {
        self.domain.check(y0)?;
        if omega.frames().len() != self.time.n_steps() {
            return Err(Error::DimensionMismatch {
                expected: self.time.n_steps(),
                got: omega.frames().len(),
            });
        }
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { time_index: 0 });
        }
        let n_steps = self.time.n_steps();
        let mut frames = Vec::with_capacity(n_steps + 1);
        let mut velocity = Vec::with_capacity(n_steps + 1);
        let mut warnings = 0;
        frames.push(Field::from(y0.to_vec()));
        velocity.push(self.helm.velocity(y0));
        for n in 0..n_steps {
            let out = self.step_with(&frames[n], &velocity[n], omega.frame(n));
            if !out.stable {
                warnings += 1;
            }
            if !out.y.is_finite() {
                return Err(Error::NonFinite { time_index: n + 1 });
            }
            velocity.push(self.helm.velocity(&out.y));
            frames.push(out.y);
        }
        if warnings > 0 {
            warn!("advective bound exceeded on {warnings} of {n_steps} steps");
        }
        Ok(ForwardTrajectory {
            y: Trajectory::new(frames)?,
            velocity,
            stability_warnings: warnings,
        })
    }

    /// Max over the first five Dirichlet modes and the interior time levels
    /// of the weak-form defect, with `d/dt` by central differences.
    pub fn weak_residual(&self, y: &Trajectory, omega: &Control, form: ViscousForm) -> f64 {
        let n_steps = self.time.n_steps();
        let dom = &self.domain;
        let h = dom.h();
        let dt = self.time.dt();
        let eps = self.params.epsilon;
        let tests: Vec<(Field, Vec<f64>)> = (1..=dom.n().min(5))
            .map(|j| {
                let eta = dom.mode(j);
                let eta_x = grid::d1(&eta, h);
                (eta, eta_x)
            })
            .collect();
        let mut worst = 0.0_f64;
        for n in 1..n_steps {
            let yn = y.frame(n);
            let vel = self.helm.velocity(yn);
            let tr = self.transport_term(yn, &vel);
            let dydt: Vec<f64> = y
                .frame(n + 1)
                .iter()
                .zip(y.frame(n - 1).iter())
                .map(|(a, b)| (a - b) / (2.0 * dt))
                .collect();
            for (eta, eta_x) in &tests {
                let viscous = match form {
                    ViscousForm::Strong => eps * compact_gradient_pairing(yn, eta, h),
                    ViscousForm::VelocityV => {
                        eps * h * (grid::dot(&vel.u, eta) + grid::dot(&vel.u_x, eta_x))
                    }
                };
                let r = h * grid::dot(&dydt, eta) + viscous
                    - h * grid::dot(&tr, eta)
                    - h * grid::dot(omega.frame(n), eta);
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

/// `(y_x, eta_x)` with one-sided differences on the `n + 1` cells, walls
/// included. Equals `-(d2 y, eta)_H` exactly, so it is consistent with the
/// implicit diffusion step up to the boundary.
fn compact_gradient_pairing(y: &[f64], eta: &[f64], h: f64) -> f64 {
    let at = |f: &[f64], i: usize| if i == 0 || i > f.len() { 0.0 } else { f[i - 1] };
    (0..=y.len())
        .map(|i| (at(y, i + 1) - at(y, i)) * (at(eta, i + 1) - at(eta, i)))
        .sum::<f64>()
        / h
}
