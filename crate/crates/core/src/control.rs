//! Tracking-type optimal control of the momentum equation.
//!
//! The cost is `J = 1/2 |G y - z_d|_S^2 + delta/2 |omega|^2_{L2(Q0)}`. Its
//! reduced gradient is `delta*omega - B* lambda` with `lambda` from the
//! discrete adjoint, which makes it exact for the discretized problem. The
//! second-order part of the module evaluates the quadratic form of the
//! Lagrangian on kernel directions and the sufficient coercivity margins.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{ControlWindow, ForwardSolver, ForwardTrajectory, WindowValues};
use crate::grid::{self, Field, Trajectory, TrajectoryNorms};
use crate::tangent_adjoint::{AdjointForm, AdjointState};

/// How the state enters the tracking term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observer {
    /// `|y - z_d|` in `L2(0,T;H)`.
    #[default]
    #[serde(rename = "identity_l2h")]
    IdentityL2H,
    /// `|y - z_d|` in the `W(V)` norm.
    #[serde(rename = "identity_wv")]
    IdentityWV,
}

#[derive(Debug, Clone)]
pub struct CostParams {
    pub delta: f64,
    pub z_d: Trajectory,
    pub observer: Observer,
}

impl CostParams {
    pub fn new(delta: f64, z_d: Trajectory, observer: Observer) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid(
                "delta",
                format!("must be finite and > 0, got {delta}"),
            ));
        }
        if !z_d.is_finite() {
            return Err(invalid("z_d", "target contains non-finite values"));
        }
        Ok(Self {
            delta,
            z_d,
            observer,
        })
    }
}

/// Everything computed at one control: state, cost, multipliers, gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: ForwardTrajectory,
    pub cost: f64,
    /// Adjoint source `C*(Cy - z_d)` paired through `sum_n w_n (., .)_H`.
    pub source: Trajectory,
    pub adjoint: AdjointState,
    pub gradient: WindowValues,
}

/// The reduced problem `min_omega J(y(omega), omega)`.
#[derive(Debug, Clone)]
pub struct TrackingProblem {
    solver: ForwardSolver,
    window: ControlWindow,
    y0: Field,
    cost: CostParams,
    norms: TrajectoryNorms,
}

impl TrackingProblem {
    pub fn new(
        solver: ForwardSolver,
        window: ControlWindow,
        y0: Field,
        cost: CostParams,
    ) -> Result<Self> {
        let dom = *solver.domain();
        let tg = *solver.time();
        dom.check(&y0)?;
        if window.domain() != &dom || window.time() != &tg {
            return Err(invalid(
                "window",
                "built on a different grid than the solver",
            ));
        }
        if cost.z_d.len() != tg.n_steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: tg.n_steps() + 1,
                got: cost.z_d.len(),
            });
        }
        cost.z_d.frames().iter().try_for_each(|f| dom.check(f))?;
        Ok(Self {
            solver,
            window,
            y0,
            cost,
            norms: TrajectoryNorms::new(dom, tg),
        })
    }

    pub fn solver(&self) -> &ForwardSolver {
        &self.solver
    }

    pub fn window(&self) -> &ControlWindow {
        &self.window
    }

    pub fn y0(&self) -> &Field {
        &self.y0
    }

    pub fn cost_params(&self) -> &CostParams {
        &self.cost
    }

    pub fn norms(&self) -> &TrajectoryNorms {
        &self.norms
    }

    fn check_omega(&self, omega: &WindowValues) -> Result<()> {
        if omega.len() != self.window.len() {
            return Err(Error::DimensionMismatch {
                expected: self.window.len(),
                got: omega.len(),
            });
        }
        Ok(())
    }

    pub fn solve_state(&self, omega: &WindowValues) -> Result<ForwardTrajectory> {
        self.check_omega(omega)?;
        self.solver.solve(&self.y0, &self.window.extend(omega))
    }

    /// `1/2 |G y - z_d|_S^2`
    pub fn tracking(&self, y: &Trajectory) -> Result<f64> {
        let e = y.map2(&self.cost.z_d, |a, b| a - b);
        Ok(match self.cost.observer {
            Observer::IdentityL2H => 0.5 * self.norms.norm_l2h(&e)?.powi(2),
            Observer::IdentityWV => 0.5 * self.norms.norm_wv(&e)?.powi(2),
        })
    }

    /// `J(y, omega)` for a given state, feasible or not.
    pub fn cost_of(&self, omega: &WindowValues, y: &Trajectory) -> Result<f64> {
        self.check_omega(omega)?;
        Ok(self.tracking(y)? + 0.5 * self.cost.delta * self.window.norm(omega).powi(2))
    }

    /// Reduced cost `J(y(omega), omega)`.
    pub fn cost(&self, omega: &WindowValues) -> Result<f64> {
        let state = self.solve_state(omega)?;
        self.cost_of(omega, &state.y)
    }

    /// Source `s` with `D_y(tracking) m = sum_n w_n (s_n, m_n)_H`.
    pub fn observer_source(&self, y: &Trajectory) -> Result<Trajectory> {
        let e = y.map2(&self.cost.z_d, |a, b| a - b);
        match self.cost.observer {
            Observer::IdentityL2H => Ok(e),
            Observer::IdentityWV => self.wv_source(&e),
        }
    }

    /// Gradient of `1/2 (a + b)^2`, `a = |e|_{L2(V)}`, `b = |e_t|_{L2(V*)}`,
    /// converted from Euclidean to the weighted pairing.
    fn wv_source(&self, e: &Trajectory) -> Result<Trajectory> {
        let dom = self.norms.domain;
        let tg = self.norms.time;
        let (h, dt, n_steps) = (dom.h(), tg.dt(), tg.n_steps());
        let a = self.norms.norm_l2v(e)?;
        let b = self.norms.norm_dt_vstar(e)?;
        let helm = self.norms.helmholtz();
        // M^{-1} d_k for the difference quotients d_k = (e_k - e_{k-1})/dt
        let md: Vec<Field> = (1..=n_steps)
            .map(|k| {
                let d: Vec<f64> = e
                    .frame(k)
                    .iter()
                    .zip(e.frame(k - 1).iter())
                    .map(|(x, y)| (x - y) / dt)
                    .collect();
                helm.solve(&d)
            })
            .collect();
        let mut frames = vec![Field::zeros(dom.n()); n_steps + 1];
        for (n, out) in frames.iter_mut().enumerate().skip(1) {
            let en = e.frame(n);
            let mut g = vec![0.0; dom.n()];
            if a > 0.0 {
                let dd = grid::d1(&grid::d1(en, h), h);
                for i in 0..dom.n() {
                    g[i] += tg.weight(n) * h * (en[i] - dd[i]) / a;
                }
            }
            if b > 0.0 {
                for i in 0..dom.n() {
                    let next = if n < n_steps { md[n][i] } else { 0.0 };
                    g[i] += h * (md[n - 1][i] - next) / b;
                }
            }
            *out = Field::from(
                g.iter()
                    .map(|gi| (a + b) * gi / (dt * h))
                    .collect::<Vec<_>>(),
            );
        }
        Trajectory::new(frames)
    }

    /// Forward solve, cost, discrete adjoint and reduced gradient at `omega`.
    pub fn evaluate(&self, omega: &WindowValues) -> Result<Evaluation> {
        let state = self.solve_state(omega)?;
        let cost = self.cost_of(omega, &state.y)?;
        let source = self.observer_source(&state.y)?;
        let adjoint = self.solver.solve_adjoint_discrete(&state, &source)?;
        let gradient = self.gradient_from(omega, adjoint.lambda.frames());
        Ok(Evaluation {
            state,
            cost,
            source,
            adjoint,
            gradient,
        })
    }

    /// `delta*omega - B* lambda`, Riesz representative in `L2(Q0)`.
    pub fn gradient_from(&self, omega: &WindowValues, lambda: &[Field]) -> WindowValues {
        omega
            .scaled(self.cost.delta)
            .axpy(-1.0, &self.window.restrict(lambda))
    }

    pub fn reduced_gradient(&self, omega: &WindowValues) -> Result<WindowValues> {
        Ok(self.evaluate(omega)?.gradient)
    }

    /// Reduced gradient built from the continuous adjoint equation instead
    /// of the exact transpose.
    pub fn reduced_gradient_continuous(
        &self,
        omega: &WindowValues,
        form: AdjointForm,
    ) -> Result<WindowValues> {
        let state = self.solve_state(omega)?;
        let source = self.observer_source(&state.y)?;
        let lambda = self
            .solver
            .solve_adjoint_continuous(&state, &source, form)?;
        Ok(self.gradient_from(omega, lambda.frames()))
    }

    /// Central difference of the reduced cost along `q`.
    pub fn fd_directional(&self, omega: &WindowValues, q: &WindowValues, step: f64) -> Result<f64> {
        let plus = self.cost(&omega.axpy(step, q))?;
        let minus = self.cost(&omega.axpy(-step, q))?;
        Ok((plus - minus) / (2.0 * step))
    }

    /// Per-step state-equation defect
    /// `e1_n = (y_{n+1} - y_n)/dt - eps d2 y_{n+1} - N(y_n) - omega_n`
    /// and initial defect `e2 = y_0 - y0`.
    pub fn constraint_residual(
        &self,
        omega: &WindowValues,
        y: &Trajectory,
    ) -> Result<(Vec<Field>, Field)> {
        self.check_omega(omega)?;
        let dom = self.norms.domain;
        let tg = self.norms.time;
        if y.len() != tg.n_steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: tg.n_steps() + 1,
                got: y.len(),
            });
        }
        let ctrl = self.window.extend(omega);
        let eps = self.solver.params().epsilon;
        let dt = tg.dt();
        let e1 = (0..tg.n_steps())
            .map(|n| {
                let (cur, next) = (y.frame(n), y.frame(n + 1));
                let vel = self.solver.helmholtz().velocity(cur);
                let tr = self.solver.transport_term(cur, &vel);
                let diff = grid::d2(next, dom.h());
                let w = ctrl.frame(n);
                Field::from(
                    (0..dom.n())
                        .map(|i| (next[i] - cur[i]) / dt - eps * diff[i] - tr[i] - w[i])
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let e2 = y.frame(0).axpy(-1.0, &self.y0);
        Ok((e1, e2))
    }

    /// `|e|_Y^2 = sum_n dt |e1_n|_{V*}^2 + |e2|_H^2`
    pub fn constraint_norm_sq(&self, e1: &[Field], e2: &Field) -> Result<f64> {
        let dom = self.norms.domain;
        let dt = self.norms.time.dt();
        let mut s = dom.norm_h(e2)?.powi(2);
        for f in e1 {
            s += dt * dom.norm_vstar_with(self.norms.helmholtz(), f)?.powi(2);
        }
        Ok(s)
    }

    /// Augmented Lagrangian
    /// `J + sum_n dt (e1_n, lambda_n)_H + (e2, mu)_H + c/2 |e|_Y^2`.
    pub fn lagrangian(
        &self,
        omega: &WindowValues,
        y: &Trajectory,
        lambda: &Trajectory,
        mu: &Field,
        c: f64,
    ) -> Result<f64> {
        if !(c >= 0.0) {
            return Err(invalid("c", format!("penalty must be >= 0, got {c}")));
        }
        let dom = self.norms.domain;
        let dt = self.norms.time.dt();
        let (e1, e2) = self.constraint_residual(omega, y)?;
        let mut l = self.cost_of(omega, y)?;
        for (n, f) in e1.iter().enumerate() {
            l += dt * dom.inner_h(f, lambda.frame(n))?;
        }
        l += dom.inner_h(&e2, mu)?;
        if c > 0.0 {
            l += 0.5 * c * self.constraint_norm_sq(&e1, &e2)?;
        }
        Ok(l)
    }

    /// Residuals of the first-order optimality system at `omega`.
    pub fn first_order_residuals(&self, omega: &WindowValues) -> Result<FirstOrderResiduals> {
        let ev = self.evaluate(omega)?;
        let (e1, e2) = self.constraint_residual(omega, &ev.state.y)?;
        let lam = &ev.adjoint.lambda;
        let mu_mismatch = ev
            .adjoint
            .mu
            .iter()
            .zip(lam.frame(0).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(FirstOrderResiduals {
            gradient_norm: self.window.norm(&ev.gradient),
            state_residual: self.constraint_norm_sq(&e1, &e2)?.sqrt(),
            adjoint_residual: self.continuous_adjoint_residual(
                &ev.state,
                lam,
                &ev.source,
                AdjointForm::Consistent,
            )?,
            adjoint_residual_flipped: self.continuous_adjoint_residual(
                &ev.state,
                lam,
                &ev.source,
                AdjointForm::FlippedCoupling,
            )?,
            mu_mismatch,
            terminal_multiplier: self.norms.domain.norm_sup(lam.last()),
            multiplier_gap: self.multiplier_gap(omega, lam),
        })
    }

    /// `|delta*omega - B* lambda|_{Q0} / |B* lambda|_{Q0}`.
    pub fn multiplier_gap(&self, omega: &WindowValues, lambda: &Trajectory) -> f64 {
        let r = self.window.restrict(lambda.frames());
        let num = self
            .window
            .norm(&self.gradient_from(omega, lambda.frames()));
        let den = self.window.norm(&r);
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `L2(0,T;V*)` size of the defect of `lambda` in the continuous adjoint
    /// equation `lambda_t + eps lambda_xx = s - K lambda`, discretized
    /// backward in time on the solver grid.
    pub fn continuous_adjoint_residual(
        &self,
        base: &ForwardTrajectory,
        lambda: &Trajectory,
        source: &Trajectory,
        form: AdjointForm,
    ) -> Result<f64> {
        let dom = self.norms.domain;
        let tg = self.norms.time;
        let (h, dt) = (dom.h(), tg.dt());
        let eps = self.solver.params().epsilon;
        let mut s = 0.0;
        for n in 0..tg.n_steps() {
            let next = lambda.frame(n + 1);
            let cur = lambda.frame(n);
            let k = self.solver.adjoint_coupling_at(
                base.y.frame(n + 1),
                &base.velocity[n + 1],
                next,
                form,
            );
            let diff = grid::d2(cur, h);
            let src = source.frame(n + 1);
            let res: Vec<f64> = (0..dom.n())
                .map(|i| (next[i] - cur[i]) / dt + eps * diff[i] - src[i] + k[i])
                .collect();
            s += dt * dom.norm_vstar_with(self.norms.helmholtz(), &res)?.powi(2);
        }
        Ok(s.sqrt())
    }

    /// Evaluates the quadratic form of the Lagrangian on the kernel
    /// direction `(m, q)`, `m` the tangent response to `q`.
    pub fn hessian_vec(&self, ev: &Evaluation, q: &WindowValues) -> Result<QuadraticForm> {
        self.check_omega(q)?;
        let dom = self.norms.domain;
        let tg = self.norms.time;
        let h = dom.h();
        let tan = self
            .solver
            .solve_tangent(&ev.state, &self.window.extend(q))?;
        let lam = &ev.adjoint.lambda;
        let mut b_integral = 0.0;
        for n in 0..=tg.n_steps() {
            let w = tg.weight(n);
            if w == 0.0 {
                continue;
            }
            let y = ev.state.y.frame(n);
            let vel = &ev.state.velocity[n];
            let (m, v) = (tan.m.frame(n), tan.v.frame(n));
            let v_x = grid::d1(v, h);
            let lam_x = grid::d1(lam.frame(n), h);
            let frame: f64 = (0..dom.n())
                .map(|i| b_form(y[i], vel.u[i], vel.u_x[i], m[i], v[i], v_x[i], lam_x[i]))
                .sum();
            b_integral += w * h * frame;
        }
        let state_wv_sq = self.norms.norm_wv(&tan.m)?.powi(2);
        let control_sq = self.window.norm(q).powi(2);
        Ok(QuadraticForm {
            state_wv_sq,
            state_l2h_sq: self.norms.norm_l2h(&tan.m)?.powi(2),
            control_sq,
            b_integral,
            total: state_wv_sq + self.cost.delta * control_sq + b_integral,
        })
    }

    /// `|m|^2_{W(V)} / |q|^2_{Q0}` for the tangent response to `q`.
    pub fn kernel_bound_ratio(&self, ev: &Evaluation, q: &WindowValues) -> Result<f64> {
        let qq = self.window.norm(q).powi(2);
        if qq == 0.0 {
            return Ok(0.0);
        }
        let tan = self
            .solver
            .solve_tangent(&ev.state, &self.window.extend(q))?;
        Ok(self.norms.norm_wv(&tan.m)?.powi(2) / qq)
    }

    /// Both sides of the multiplier bound
    /// `|lambda|^2_{L2(V)} <= 4/(3 eps) exp(c0 T) |s|_{L2(V*)}`.
    pub fn lambda_bound(&self, ev: &Evaluation) -> Result<InequalityCheck> {
        let eps = self.solver.params().epsilon;
        let t = self.norms.time.horizon();
        let consts = Constants::from_trajectory(&self.norms, &ev.state.y, eps, t)?;
        let lhs = self.norms.norm_l2v(&ev.adjoint.lambda)?.powi(2);
        let s = self.norms.norm_l2vstar(&ev.source)?;
        let rhs = scaled_exp(4.0 / (3.0 * eps) * s, consts.c0 * t);
        Ok(InequalityCheck::new(lhs, rhs))
    }

    /// Sufficient second-order conditions, their `kappa` constants and an
    /// empirical sample of the quadratic form on random kernel directions.
    pub fn coercivity_check(
        &self,
        omega: &WindowValues,
        embedding_constant: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<SecondOrderReport> {
        if !(embedding_constant.is_finite() && embedding_constant > 0.0) {
            return Err(invalid(
                "embedding_constant",
                format!("must be finite and > 0, got {embedding_constant}"),
            ));
        }
        let ev = self.evaluate(omega)?;
        let eps = self.solver.params().epsilon;
        let t = self.norms.time.horizon();
        let delta = self.cost.delta;
        let ce = embedding_constant;
        let consts = Constants::from_trajectory(&self.norms, &ev.state.y, eps, t)?;
        let y_ch = self.norms.norm_ct_h(&ev.state.y)?;
        let mismatch = self
            .norms
            .norm_l2h(&ev.state.y.map2(&self.cost.z_d, |a, b| a - b))?;
        let source_l2h = self.norms.norm_l2h(&ev.source)?;

        // (1): |y|_{C(H)} |y - z|_{L2(H)} < 3 eps / (4 C_E) exp(-c0 T)
        let lhs1 = y_ch * mismatch;
        let cond1 = InequalityCheck::new(lhs1, scaled_exp(3.0 * eps / (4.0 * ce), -consts.c0 * t));
        let kappa1 = (1.0 - scaled_exp(4.0 * ce / (3.0 * eps) * lhs1, consts.c0 * t)).min(delta);
        // (2): |y|_{C(H)} |C*(Cy - z)|_{L2(H)} < 3 delta eps / (8 C_E c1) exp(-c0 T)
        let lhs2 = y_ch * source_l2h;
        let cond2 = InequalityCheck::new(
            lhs2,
            scaled_exp(3.0 * delta * eps / (8.0 * ce * consts.c1), -consts.c0 * t),
        );
        let kappa2 = (delta / (2.0 * consts.c1)
            - scaled_exp(4.0 * ce / (3.0 * eps) * lhs2, consts.c0 * t))
        .min(delta / 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let directions: Vec<WindowValues> = (0..n_samples)
            .map(|_| {
                WindowValues(
                    (0..self.window.len())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
            })
            .collect();
        let samples: Vec<QuadraticForm> = directions
            .par_iter()
            .map(|q| self.hessian_vec(&ev, q))
            .collect::<Result<_>>()?;
        let kernel: Vec<f64> = directions
            .par_iter()
            .map(|q| self.kernel_bound_ratio(&ev, q))
            .collect::<Result<_>>()?;
        let empirical_min_ratio = samples
            .iter()
            .map(QuadraticForm::ratio)
            .fold(f64::INFINITY, f64::min);
        let lambda_bound = self.lambda_bound(&ev)?;
        debug!(
            "coercivity: c0={} c1={} c2={}",
            consts.c0, consts.c1, consts.c2
        );
        Ok(SecondOrderReport {
            c0: consts.c0,
            c2: consts.c2,
            c1: consts.c1,
            embedding_constant: ce,
            state_ch_norm: y_ch,
            condition1: cond1,
            condition2: cond2,
            kappa1,
            kappa2,
            empirical_min_ratio: if n_samples == 0 {
                f64::NAN
            } else {
                empirical_min_ratio
            },
            lambda_bound,
            kernel_bound_max_ratio: kernel.iter().cloned().fold(0.0, f64::max),
            kernel_bound_violations: kernel.iter().filter(|r| **r > consts.c1).count(),
            samples,
        })
    }
}

/// Integrand `b(y, m, lambda)` of the second-order form.
#[allow(clippy::too_many_arguments)]
pub fn b_form(y: f64, u: f64, u_x: f64, m: f64, v: f64, v_x: f64, lam_x: f64) -> f64 {
    (-2.0 * v * v * y - 4.0 * u * v * m + 2.0 * v_x * v_x * y + 4.0 * u_x * v_x * m) * lam_x
}

/// `a * exp(b)` without the `0 * inf` trap when `a = 0`.
fn scaled_exp(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderResiduals {
    /// `|dL/d omega|_{Q0}`, identical to the reduced gradient norm.
    pub gradient_norm: f64,
    /// `|e(y, omega)|_Y`
    pub state_residual: f64,
    /// Defect of the discrete multiplier in the continuous adjoint equation.
    pub adjoint_residual: f64,
    /// Same defect with the opposite sign of the `u y lambda_x` coupling.
    pub adjoint_residual_flipped: f64,
    /// `max |mu - lambda(0)|`
    pub mu_mismatch: f64,
    /// `max |lambda(T)|`
    pub terminal_multiplier: f64,
    /// `|delta*omega - B* lambda| / |B* lambda|`
    pub multiplier_gap: f64,
}

/// One sided inequality `lhs <= rhs` (or `<` where the caller says so).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs < rhs,
        }
    }
}

/// Constants of the second-order analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c0: f64,
    pub c2: f64,
    pub c1: f64,
}

impl Constants {
    /// From `Y = |y|_{C(H)}`, viscosity and horizon.
    pub fn new(y_ch: f64, epsilon: f64, horizon: f64) -> Self {
        let y2 = y_ch * y_ch;
        let c0 = (8.0 + 1.0 / 16.0) / epsilon * y2 * y2;
        let c2 = y2 / (12.0 * epsilon);
        let g = (c2 * horizon).exp();
        let c1 = ((epsilon + 6.0 * y_ch) * (2.0 / epsilon) * g + 1.0).powi(2)
            + 4.0 / (epsilon * epsilon) * g * g;
        Self { c0, c2, c1 }
    }

    pub fn from_trajectory(
        norms: &TrajectoryNorms,
        y: &Trajectory,
        epsilon: f64,
        horizon: f64,
    ) -> Result<Self> {
        Ok(Self::new(norms.norm_ct_h(y)?, epsilon, horizon))
    }
}

/// Components of the quadratic form on one kernel direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub state_wv_sq: f64,
    pub state_l2h_sq: f64,
    pub control_sq: f64,
    pub b_integral: f64,
    pub total: f64,
}

impl QuadraticForm {
    /// `total / |(m, q)|_X^2`
    pub fn ratio(&self) -> f64 {
        let x = self.state_wv_sq + self.control_sq;
        if x > 0.0 {
            self.total / x
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub c0: f64,
    pub c2: f64,
    pub c1: f64,
    pub embedding_constant: f64,
    pub state_ch_norm: f64,
    pub condition1: InequalityCheck,
    pub condition2: InequalityCheck,
    pub kappa1: f64,
    pub kappa2: f64,
    pub empirical_min_ratio: f64,
    pub lambda_bound: InequalityCheck,
    pub kernel_bound_max_ratio: f64,
    pub kernel_bound_violations: usize,
    pub samples: Vec<QuadraticForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimOptions {
    /// Stop when `|g| <= tol_g (1 + |g_0|)`.
    pub tol_g: f64,
    pub max_iters: usize,
    /// Number of stored correction pairs; 0 gives steepest descent.
    pub memory: usize,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            tol_g: 1e-6,
            max_iters: 200,
            memory: 10,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_g.is_finite() && self.tol_g > 0.0) {
            return Err(invalid("tol_g", "must be finite and > 0"));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(invalid("armijo", "must lie in (0, 0.5)"));
        }
        if self.max_halvings == 0 {
            return Err(invalid("max_halvings", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    #[serde(rename = "J")]
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub feasibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    MaxIters,
    /// Armijo backtracking failed even along steepest descent.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub omega: WindowValues,
    pub history: Vec<IterRecord>,
    pub status: OptimStatus,
    pub initial_grad_norm: f64,
    /// Evaluation at the returned iterate.
    pub last: Evaluation,
}

impl OptimState {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// L-BFGS with Armijo backtracking in the `L2(Q0)` geometry.
pub fn optimize(
    problem: &TrackingProblem,
    omega0: &WindowValues,
    opts: &OptimOptions,
) -> Result<OptimState> {
    opts.validate()?;
    let w = problem.window();
    let mut omega = omega0.clone();
    let mut ev = problem.evaluate(&omega)?;
    let feas = |ev: &Evaluation, omega: &WindowValues| -> Result<f64> {
        let (e1, e2) = problem.constraint_residual(omega, &ev.state.y)?;
        Ok(problem.constraint_norm_sq(&e1, &e2)?.sqrt())
    };
    let g0 = w.norm(&ev.gradient);
    let target = opts.tol_g * (1.0 + g0);
    let mut history = vec![IterRecord {
        iter: 0,
        cost: ev.cost,
        grad_norm: g0,
        step: 0.0,
        feasibility: feas(&ev, &omega)?,
    }];
    let mut pairs: Vec<(WindowValues, WindowValues, f64)> = Vec::new();
    let mut status = OptimStatus::MaxIters;
    let mut gnorm = g0;
    for iter in 1..=opts.max_iters {
        if gnorm <= target {
            status = OptimStatus::Converged;
            break;
        }
        let mut dir = two_loop(w, &ev.gradient, &pairs);
        let mut slope = w.inner(&ev.gradient, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = ev.gradient.scaled(-1.0);
            slope = -gnorm * gnorm;
        }
        let mut accepted = None;
        let mut restarted = false;
        loop {
            let mut alpha = if pairs.is_empty() && iter == 1 {
                (1.0 / gnorm).min(1.0)
            } else {
                1.0
            };
            for _ in 0..opts.max_halvings {
                let trial = omega.axpy(alpha, &dir);
                match problem.evaluate(&trial) {
                    Ok(t) if t.cost <= ev.cost + opts.armijo * alpha * slope => {
                        accepted = Some((trial, t, alpha));
                        break;
                    }
                    Ok(_) | Err(Error::NonFinite { .. }) => alpha *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            if accepted.is_some() || restarted {
                break;
            }
            // retry once from steepest descent before declaring a stall
            restarted = true;
            pairs.clear();
            dir = ev.gradient.scaled(-1.0);
            slope = -gnorm * gnorm;
        }
        let Some((next, next_ev, alpha)) = accepted else {
            status = OptimStatus::Stalled;
            info!("line search stalled at iteration {iter}");
            break;
        };
        let s = next.axpy(-1.0, &omega);
        let yv = next_ev.gradient.axpy(-1.0, &ev.gradient);
        let sy = w.inner(&s, &yv);
        if opts.memory > 0 && sy > 1e-12 * w.norm(&s) * w.norm(&yv) {
            if pairs.len() == opts.memory {
                pairs.remove(0);
            }
            pairs.push((s, yv, 1.0 / sy));
        }
        omega = next;
        ev = next_ev;
        gnorm = w.norm(&ev.gradient);
        history.push(IterRecord {
            iter,
            cost: ev.cost,
            grad_norm: gnorm,
            step: alpha,
            feasibility: feas(&ev, &omega)?,
        });
        debug!("iter {iter}: J={} |g|={gnorm} step={alpha}", ev.cost);
    }
    if status == OptimStatus::MaxIters && gnorm <= target {
        status = OptimStatus::Converged;
    }
    Ok(OptimState {
        omega,
        history,
        status,
        initial_grad_norm: g0,
        last: ev,
    })
}

/// `-H g` from the stored curvature pairs.
fn two_loop(
    w: &ControlWindow,
    g: &WindowValues,
    pairs: &[(WindowValues, WindowValues, f64)],
) -> WindowValues {
    let mut q = g.clone();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alphas[i] = rho * w.inner(s, &q);
        q = q.axpy(-alphas[i], y);
    }
    if let Some((s, y, _)) = pairs.last() {
        q = q.scaled(w.inner(s, y) / w.inner(y, y));
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * w.inner(y, &q);
        q = q.axpy(alphas[i] - beta, s);
    }
    q.scaled(-1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{Control, ModelParams};
    use crate::grid::{Domain1D, TimeGrid};
    use std::f64::consts::PI;

    fn base(n: usize, steps: usize) -> (ForwardSolver, ControlWindow, Field) {
        let dom = Domain1D::new(1.0, n).unwrap();
        let tg = TimeGrid::new(0.5, steps).unwrap();
        let s = ForwardSolver::new(dom, tg, ModelParams::new(0.1, 1.0).unwrap());
        let w = ControlWindow::new(dom, tg, (0.25, 0.75), (0.0, 0.5)).unwrap();
        let y0 = dom.sample(|x| (PI * x).sin().powi(3));
        (s, w, y0)
    }

    fn problem(n: usize, steps: usize, observer: Observer, delta: f64) -> TrackingProblem {
        let (s, w, y0) = base(n, steps);
        let z = Trajectory::sample(s.domain(), s.time(), |t, x| {
            0.5 * (2.0 * PI * x).sin() * (1.0 + t)
        });
        TrackingProblem::new(s, w, y0, CostParams::new(delta, z, observer).unwrap()).unwrap()
    }

    fn random_values(rng: &mut ChaCha8Rng, n: usize) -> WindowValues {
        WindowValues((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn cost_params_validated() {
        let z = Trajectory::zeros(3, 4);
        assert!(CostParams::new(0.0, z.clone(), Observer::IdentityL2H).is_err());
        assert!(CostParams::new(f64::NAN, z, Observer::IdentityL2H).is_err());
    }

    #[test]
    fn zero_cost_on_exact_target() {
        let (s, w, y0) = base(16, 20);
        let traj = s.solve(&y0, &Control::zeros(20, 16)).unwrap();
        let p = TrackingProblem::new(
            s,
            w.clone(),
            y0,
            CostParams::new(1.0, traj.y.clone(), Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        assert_eq!(p.cost(&w.zeros()).unwrap(), 0.0);
        let g = p.reduced_gradient(&w.zeros()).unwrap();
        assert!(g.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_target_offset_quadrature() {
        // y = 0 and z_d = c: 1/2 c^2 * (n h) * T with the zero-end rule,
        // i.e. 1/2 c^2 (L - h) T, which tends to 1/2 c^2 L T.
        let dom = Domain1D::new(2.0, 15).unwrap();
        let tg = TimeGrid::new(0.5, 10).unwrap();
        let s = ForwardSolver::new(dom, tg, ModelParams::new(0.1, 1.0).unwrap());
        let w = ControlWindow::full(dom, tg);
        let c = 3.0;
        let z = Trajectory::sample(&dom, &tg, |_, _| c);
        let p = TrackingProblem::new(
            s,
            w.clone(),
            dom.zeros(),
            CostParams::new(1.0, z, Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let j = p.cost(&w.zeros()).unwrap();
        let exact = 0.5 * c * c * (2.0 - dom.h()) * 0.5;
        assert!((j - exact).abs() < 1e-12 * exact, "{j} {exact}");
    }

    #[test]
    fn cost_dominates_control_penalty() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let om = random_values(&mut rng, p.window().len());
            let pen = 0.5 * 0.3 * p.window().norm(&om).powi(2);
            assert!(p.cost(&om).unwrap() >= pen);
        }
    }

    fn gradient_check(observer: Observer) {
        let p = problem(16, 40, observer, 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let om = random_values(&mut rng, p.window().len());
        let g = p.reduced_gradient(&om).unwrap();
        for _ in 0..3 {
            let q = random_values(&mut rng, p.window().len());
            let fd = p.fd_directional(&om, &q, 1e-5).unwrap();
            let an = p.window().inner(&g, &q);
            assert!(
                (fd - an).abs() <= 1e-6 * fd.abs(),
                "{observer:?}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn gradient_matches_fd_l2h() {
        gradient_check(Observer::IdentityL2H);
    }

    #[test]
    fn gradient_matches_fd_wv() {
        gradient_check(Observer::IdentityWV);
    }

    #[test]
    fn continuous_gradient_converges_only_with_consistent_coupling() {
        let gap = |n: usize, steps: usize, form: AdjointForm| {
            let p = problem(n, steps, Observer::IdentityL2H, 1e-2);
            let w = p.window().clone();
            let om = w.sample(|t, x| (2.0 * PI * x).sin() * (1.0 + t));
            let gd = p.reduced_gradient(&om).unwrap();
            let gc = p.reduced_gradient_continuous(&om, form).unwrap();
            w.norm(&gd.axpy(-1.0, &gc)) / w.norm(&gd)
        };
        let c1 = gap(31, 40, AdjointForm::Consistent);
        let c2 = gap(63, 40, AdjointForm::Consistent);
        assert!((c1 / c2).log2() >= 1.0, "{c1} {c2}");
        let f1 = gap(31, 40, AdjointForm::FlippedCoupling);
        let f2 = gap(63, 40, AdjointForm::FlippedCoupling);
        assert!((f1 / f2).log2() < 0.5, "{f1} {f2}");
    }

    #[test]
    fn lagrangian_reduces_to_cost_when_feasible() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let om = random_values(&mut rng, p.window().len());
        let ev = p.evaluate(&om).unwrap();
        let lam = Trajectory::new(
            (0..=20)
                .map(|_| {
                    Field::from(
                        (0..16)
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        )
        .unwrap();
        let mu = Field::from(vec![0.7; 16]);
        for c in [0.0, 1.0, 10.0] {
            let l = p.lagrangian(&om, &ev.state.y, &lam, &mu, c).unwrap();
            assert!((l - ev.cost).abs() <= 1e-9 * ev.cost, "{l} {}", ev.cost);
        }
        let zero = Trajectory::zeros(21, 16);
        let l0 = p
            .lagrangian(&om, &ev.state.y, &zero, &Field::zeros(16), 0.0)
            .unwrap();
        assert_eq!(l0, ev.cost);
    }

    #[test]
    fn lagrangian_penalty_is_quadratic() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.1);
        let om = p.window().zeros();
        let ev = p.evaluate(&om).unwrap();
        let mut y = ev.state.y.clone();
        let bump = p.solver().domain().mode(2).scaled(0.1);
        y.frames_mut()[7] = y.frame(7).axpy(1.0, &bump);
        let lam = &ev.adjoint.lambda;
        let mu = &ev.adjoint.mu;
        let (e1, e2) = p.constraint_residual(&om, &y).unwrap();
        let e_sq = p.constraint_norm_sq(&e1, &e2).unwrap();
        assert!(e_sq > 0.0);
        let l0 = p.lagrangian(&om, &y, lam, mu, 0.0).unwrap();
        for c in [0.5, 2.0] {
            let lc = p.lagrangian(&om, &y, lam, mu, c).unwrap();
            assert!(((lc - l0) - 0.5 * c * e_sq).abs() <= 1e-10 * (1.0 + lc.abs()));
        }
    }

    #[test]
    fn lagrangian_control_derivative_is_reduced_gradient() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let om = random_values(&mut rng, p.window().len());
        let ev = p.evaluate(&om).unwrap();
        let q = random_values(&mut rng, p.window().len());
        let hstep = 1e-5;
        let l = |o: &WindowValues| {
            p.lagrangian(o, &ev.state.y, &ev.adjoint.lambda, &ev.adjoint.mu, 0.0)
                .unwrap()
        };
        let fd = (l(&om.axpy(hstep, &q)) - l(&om.axpy(-hstep, &q))) / (2.0 * hstep);
        let an = p.window().inner(&ev.gradient, &q);
        assert!((fd - an).abs() <= 1e-8 * an.abs().max(1e-12), "{fd} {an}");
    }

    #[test]
    fn first_order_record_is_consistent() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let om = random_values(&mut rng, p.window().len());
        let r = p.first_order_residuals(&om).unwrap();
        let g = p.reduced_gradient(&om).unwrap();
        assert_eq!(r.gradient_norm, p.window().norm(&g));
        assert_eq!(r.terminal_multiplier, 0.0);
        assert_eq!(r.mu_mismatch, 0.0);
        assert!(r.state_residual < 1e-10);
        assert!(r.adjoint_residual.is_finite() && r.adjoint_residual_flipped.is_finite());
    }

    #[test]
    fn constants_reference_values() {
        let a = Constants::new(0.0, 1.0, 1.0);
        assert_eq!((a.c0, a.c2), (0.0, 0.0));
        assert!((a.c1 - 13.0).abs() < 1e-12);
        assert!((Constants::new(6f64.sqrt(), 0.5, 1.0).c2 - 1.0).abs() < 1e-12);
        assert!((Constants::new(1.0, 1.0, 1.0).c0 - 8.0625).abs() < 1e-12);
    }

    #[test]
    fn constants_monotone_in_state_size() {
        let mut prev = Constants::new(0.0, 0.3, 2.0);
        for i in 1..50 {
            let c = Constants::new(0.05 * i as f64, 0.3, 2.0);
            assert!(c.c0 >= prev.c0 && c.c1 >= prev.c1 && c.c2 >= prev.c2);
            prev = c;
        }
    }

    #[test]
    fn b_form_oracle() {
        // brute-force pointwise evaluation on 8 nodes
        let p = problem(8, 10, Observer::IdentityL2H, 0.1);
        let w = p.window().clone();
        let om = w.sample(|t, x| (x + t).cos());
        let ev = p.evaluate(&om).unwrap();
        let q = w.sample(|t, x| (3.0 * x * t).sin() + 0.5);
        let form = p.hessian_vec(&ev, &q).unwrap();
        let dom = *p.solver().domain();
        let tg = *p.solver().time();
        let tan = p.solver().solve_tangent(&ev.state, &w.extend(&q)).unwrap();
        let h = dom.h();
        let at = |f: &[f64], i: isize| {
            if i < 0 || i as usize >= f.len() {
                0.0
            } else {
                f[i as usize]
            }
        };
        let mut b = 0.0;
        for n in 1..=10 {
            let y = ev.state.y.frame(n);
            let m = tan.m.frame(n);
            let u = p.solver().helmholtz().solve(y);
            let v = p.solver().helmholtz().solve(m);
            let lam = ev.adjoint.lambda.frame(n);
            for i in 0..8isize {
                let d = |f: &[f64]| (at(f, i + 1) - at(f, i - 1)) / (2.0 * h);
                let iu = i as usize;
                let (vx, ux, lx) = (d(&v), d(&u), d(lam));
                b += tg.dt()
                    * h
                    * (-2.0 * v[iu] * v[iu] * y[iu] * lx - 4.0 * u[iu] * v[iu] * m[iu] * lx
                        + 2.0 * vx * vx * y[iu] * lx
                        + 4.0 * ux * vx * m[iu] * lx);
            }
        }
        assert!(
            (form.b_integral - b).abs() <= 1e-12 * (1.0 + b.abs()),
            "{} {b}",
            form.b_integral
        );
    }

    #[test]
    fn quadratic_form_without_residual() {
        let (s, w, y0) = base(16, 20);
        let traj = s.solve(&y0, &Control::zeros(20, 16)).unwrap();
        let delta = 0.05;
        let p = TrackingProblem::new(
            s,
            w.clone(),
            y0,
            CostParams::new(delta, traj.y, Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let ev = p.evaluate(&w.zeros()).unwrap();
        assert_eq!(p.hessian_vec(&ev, &w.zeros()).unwrap().total, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let q = random_values(&mut rng, w.len());
            let f = p.hessian_vec(&ev, &q).unwrap();
            assert_eq!(f.b_integral, 0.0);
            assert!(f.total >= delta.min(1.0) * (f.state_wv_sq + f.control_sq));
        }
        let rep = p.coercivity_check(&w.zeros(), 1.0, 4, 7).unwrap();
        assert!(rep.condition2.holds && rep.condition2.margin > 0.0);
        assert!(rep.empirical_min_ratio >= delta.min(1.0) * (1.0 - 1e-8));
    }

    #[test]
    fn zero_data_condition_one() {
        let dom = Domain1D::new(1.0, 8).unwrap();
        let tg = TimeGrid::new(0.5, 10).unwrap();
        let s = ForwardSolver::new(dom, tg, ModelParams::new(0.1, 0.0).unwrap());
        let w = ControlWindow::full(dom, tg);
        let p = TrackingProblem::new(
            s,
            w.clone(),
            dom.zeros(),
            CostParams::new(0.3, Trajectory::zeros(11, 8), Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let rep = p.coercivity_check(&w.zeros(), 2.0, 2, 1).unwrap();
        assert_eq!(rep.condition1.lhs, 0.0);
        assert!(rep.condition1.holds);
        assert_eq!(rep.kappa1, 0.3_f64.min(1.0));
    }

    #[test]
    fn large_residual_flags_condition() {
        let p = problem(16, 20, Observer::IdentityL2H, 1e-3);
        let z = Trajectory::sample(p.solver().domain(), p.solver().time(), |_, x| {
            50.0 * (PI * x).sin()
        });
        let p = TrackingProblem::new(
            p.solver().clone(),
            p.window().clone(),
            p.y0().clone(),
            CostParams::new(1e-3, z, Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let rep = p.coercivity_check(&p.window().zeros(), 1.0, 3, 2).unwrap();
        assert!(!rep.condition1.holds && !rep.condition2.holds);
        assert!(rep.kappa2 < 0.0);
    }

    #[test]
    fn kernel_bound_linear_diffusion() {
        // u = 0, k = 0: the tangent is the heat equation, |m|_{L2(V)} <= |q|/eps
        let dom = Domain1D::new(1.0, 24).unwrap();
        let tg = TimeGrid::new(0.5, 40).unwrap();
        let eps = 0.2;
        let s = ForwardSolver::new(dom, tg, ModelParams::new(eps, 0.0).unwrap());
        let w = ControlWindow::full(dom, tg);
        let p = TrackingProblem::new(
            s,
            w.clone(),
            dom.zeros(),
            CostParams::new(1.0, Trajectory::zeros(41, 24), Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let ev = p.evaluate(&w.zeros()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let q = random_values(&mut rng, w.len());
            let m = p
                .solver()
                .solve_tangent(&ev.state, &w.extend(&q))
                .unwrap()
                .m;
            assert!(p.norms().norm_l2v(&m).unwrap() <= w.norm(&q) / eps);
        }
        assert_eq!(p.kernel_bound_ratio(&ev, &w.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn lambda_bound_scaling() {
        let p = problem(16, 20, Observer::IdentityL2H, 0.1);
        let om = p.window().zeros();
        let ev = p.evaluate(&om).unwrap();
        let b1 = p.lambda_bound(&ev).unwrap();
        let mut ev2 = ev.clone();
        ev2.source = ev.source.scaled(2.0);
        ev2.adjoint = p
            .solver()
            .solve_adjoint_discrete(&ev.state, &ev2.source)
            .unwrap();
        let b2 = p.lambda_bound(&ev2).unwrap();
        assert!((b2.rhs / b1.rhs - 2.0).abs() < 1e-12);
        assert!((b2.lhs / b1.lhs - 4.0).abs() < 1e-10);
    }

    #[test]
    fn optimizer_returns_immediately_at_optimum() {
        let (s, w, y0) = base(16, 20);
        let traj = s.solve(&y0, &Control::zeros(20, 16)).unwrap();
        let p = TrackingProblem::new(
            s,
            w.clone(),
            y0,
            CostParams::new(1e-3, traj.y, Observer::IdentityL2H).unwrap(),
        )
        .unwrap();
        let st = optimize(&p, &w.zeros(), &OptimOptions::default()).unwrap();
        assert_eq!(st.iterations(), 0);
        assert_eq!(st.status, OptimStatus::Converged);
    }

    #[test]
    fn optimizer_decreases_cost_monotonically() {
        let p = problem(16, 20, Observer::IdentityL2H, 1e-2);
        let opts = OptimOptions {
            max_iters: 30,
            ..OptimOptions::default()
        };
        let st = optimize(&p, &p.window().zeros(), &opts).unwrap();
        assert!(st.iterations() > 0);
        for pair in st.history.windows(2) {
            assert!(pair[1].cost < pair[0].cost);
        }
        assert!(st.history.iter().all(|r| r.feasibility < 1e-10));
    }

    #[test]
    fn optimizer_options_validated() {
        let p = problem(8, 10, Observer::IdentityL2H, 1e-2);
        let bad = OptimOptions {
            tol_g: 0.0,
            ..OptimOptions::default()
        };
        assert!(optimize(&p, &p.window().zeros(), &bad).is_err());
    }
}
