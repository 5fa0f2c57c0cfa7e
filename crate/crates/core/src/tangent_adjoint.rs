//! Linearization of the discrete forward map and its transpose.
//!
//! The tangent step is the exact derivative of [`ForwardSolver::step`], and
//! the discrete adjoint is its exact transpose, so reduced gradients are
//! correct to rounding. A second adjoint integrates the continuous backward
//! equation in reversed time `tau = T - t` as an independent cross-check.
//!
//! Sign convention: the multiplier `lambda` solves
//! `lambda_t + eps lambda_xx = s - K lambda`, `lambda(T) = 0`, for a source
//! `s = C*(Cy - z)`, and the reduced gradient is `delta*omega - B* lambda`.
//! Consequently `<T q, s> = -<q, B* lambda>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Control, ForwardSolver, ForwardTrajectory};
use crate::grid::{self, Field, Trajectory};
use crate::helmholtz::Velocity;

/// Linearized momentum `m` and its velocity `v = (I - d2)^{-1} m`.
#[derive(Debug, Clone)]
pub struct TangentState {
    pub m: Trajectory,
    pub v: Trajectory,
}

/// Multipliers of the state equation and of the initial condition.
#[derive(Debug, Clone)]
pub struct AdjointState {
    /// `N + 1` frames; the last one is identically zero.
    pub lambda: Trajectory,
    /// Equal to frame 0 of `lambda`.
    pub mu: Field,
}

/// Which form of the coupling term the continuous adjoint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointForm {
    /// `(1 - d_xx)^{-1}(+2 u y rho_x + ...)`: the transpose of the
    /// linearized conservative flux `((u^2 - u_x^2) y + k u)_x`.
    #[default]
    Consistent,
    /// `(1 - d_xx)^{-1}(-2 u y rho_x + ...)`, the alternative sign of the
    /// `u y rho_x` coupling.
    FlippedCoupling,
}

/// Base-state quantities frozen at one time level.
struct BaseFrame<'a> {
    y: &'a [f64],
    y_x: Vec<f64>,
    vel: &'a Velocity,
}

impl<'a> BaseFrame<'a> {
    fn new(y: &'a [f64], vel: &'a Velocity, h: f64) -> Self {
        Self {
            y,
            y_x: grid::d1(y, h),
            vel,
        }
    }
}

impl ForwardSolver {
    fn base_frame<'a>(&self, base: &'a ForwardTrajectory, n: usize) -> BaseFrame<'a> {
        BaseFrame::new(base.y.frame(n), &base.velocity[n], self.domain().h())
    }

    /// Derivative of the explicit transport term in direction `m`.
    fn transport_tangent(&self, b: &BaseFrame<'_>, m: &[f64]) -> Vec<f64> {
        let n = m.len();
        if !self.transport_enabled() {
            return vec![0.0; n];
        }
        let h = self.domain().h();
        let k = self.params().k;
        let v = self.helmholtz().solve(m);
        let v_x = grid::d1(&v, h);
        let m_x = grid::d1(m, h);
        (0..n)
            .map(|i| {
                let (u, ux, y) = (b.vel.u[i], b.vel.u_x[i], b.y[i]);
                -(2.0 * u * v[i] - 2.0 * ux * v_x[i]) * b.y_x[i]
                    - (u * u - ux * ux) * m_x[i]
                    - 2.0 * v_x[i] * y * y
                    - 4.0 * ux * y * m[i]
                    - k * v_x[i]
            })
            .collect()
    }

    /// Euclidean transpose of [`Self::transport_tangent`]. Uses
    /// `d1^T = -d1` and the symmetry of the Helmholtz matrix.
    fn transport_tangent_transpose(&self, b: &BaseFrame<'_>, xi: &[f64]) -> Vec<f64> {
        let n = xi.len();
        if !self.transport_enabled() {
            return vec![0.0; n];
        }
        let h = self.domain().h();
        let k = self.params().k;
        let (u, ux, y) = (&b.vel.u, &b.vel.u_x, b.y);
        let c_xi: Vec<f64> = (0..n)
            .map(|i| (u[i] * u[i] - ux[i] * ux[i]) * xi[i])
            .collect();
        let direct = grid::d1(&c_xi, h);
        let a: Vec<f64> = (0..n).map(|i| ux[i] * b.y_x[i] * xi[i]).collect();
        let da = grid::d1(&a, h);
        let y2: Vec<f64> = (0..n).map(|i| y[i] * y[i] * xi[i]).collect();
        let dy2 = grid::d1(&y2, h);
        let dxi = grid::d1(xi, h);
        let inner: Vec<f64> = (0..n)
            .map(|i| -2.0 * u[i] * b.y_x[i] * xi[i] - 2.0 * da[i] + 2.0 * dy2[i] + k * dxi[i])
            .collect();
        let smoothed = self.helmholtz().solve(&inner);
        (0..n)
            .map(|i| direct[i] - 4.0 * ux[i] * y[i] * xi[i] + smoothed[i])
            .collect()
    }

    /// Continuous linearized right-hand side
    /// `eps m_xx - (2uv - 2u_x v_x) y_x - (u^2 - u_x^2) m_x - 2 v_x y^2 - 4 u_x y m - k v_x + q`.
    pub fn tangent_rhs(&self, y: &[f64], m: &[f64], q: &[f64]) -> Result<Field> {
        let dom = self.domain();
        dom.check(y)?;
        dom.check(m)?;
        dom.check(q)?;
        let vel = self.helmholtz().velocity(y);
        let b = BaseFrame::new(y, &vel, dom.h());
        let tr = self.transport_tangent(&b, m);
        let diff = grid::d2(m, dom.h());
        let eps = self.params().epsilon;
        let out = Field::from(
            (0..m.len())
                .map(|i| eps * diff[i] + tr[i] + q[i])
                .collect::<Vec<_>>(),
        );
        if !out.is_finite() {
            return Err(Error::NonFinite { time_index: 0 });
        }
        Ok(out)
    }

    /// Tangent of the discrete forward map at `base` in control direction
    /// `q`, with `m(0) = 0`.
    pub fn solve_tangent(&self, base: &ForwardTrajectory, q: &Control) -> Result<TangentState> {
        let n_steps = self.time().n_steps();
        let dt = self.time().dt();
        let n = self.domain().n();
        let mut m = Vec::with_capacity(n_steps + 1);
        let mut v = Vec::with_capacity(n_steps + 1);
        m.push(Field::zeros(n));
        v.push(Field::zeros(n));
        for step in 0..n_steps {
            let b = self.base_frame(base, step);
            let tr = self.transport_tangent(&b, &m[step]);
            let qf = q.frame(step);
            let mut rhs: Vec<f64> = (0..n).map(|i| m[step][i] + dt * (tr[i] + qf[i])).collect();
            self.implicit().solve_in_place(&mut rhs);
            let next = Field::from(rhs);
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    time_index: step + 1,
                });
            }
            v.push(self.helmholtz().solve(&next));
            m.push(next);
        }
        Ok(TangentState {
            m: Trajectory::new(m)?,
            v: Trajectory::new(v)?,
        })
    }

    /// Backward sweep of the exact transpose of [`Self::solve_tangent`]
    /// for the space-time source `s`, paired through
    /// `<m, s> = sum_n w_n (m_n, s_n)_H`.
    pub fn solve_adjoint_discrete(
        &self,
        base: &ForwardTrajectory,
        source: &Trajectory,
    ) -> Result<AdjointState> {
        let xi = self.adjoint_sensitivities(base, source)?;
        let h = self.domain().h();
        let n_steps = self.time().n_steps();
        let n = self.domain().n();
        let mut lambda: Vec<Field> = xi[1..].iter().map(|x| x.scaled(-1.0 / h)).collect();
        lambda.push(Field::zeros(n));
        debug_assert_eq!(lambda.len(), n_steps + 1);
        let mu = lambda[0].clone();
        Ok(AdjointState {
            lambda: Trajectory::new(lambda)?,
            mu,
        })
    }

    /// Euclidean sensitivities `xi_n = dJ/d(A y_n)`; index 0 is unused.
    fn adjoint_sensitivities(
        &self,
        base: &ForwardTrajectory,
        source: &Trajectory,
    ) -> Result<Vec<Field>> {
        let tg = self.time();
        let n_steps = tg.n_steps();
        let h = self.domain().h();
        let dt = tg.dt();
        let n = self.domain().n();
        if source.len() != n_steps + 1 {
            return Err(Error::DimensionMismatch {
                expected: n_steps + 1,
                got: source.len(),
            });
        }
        let forcing = |k: usize| -> Vec<f64> {
            let w = tg.weight(k) * h;
            source.frame(k).iter().map(|s| w * s).collect()
        };
        let mut xi = vec![Field::zeros(n); n_steps + 1];
        let mut a = forcing(n_steps);
        for k in (1..=n_steps).rev() {
            self.implicit().solve_in_place(&mut a);
            let cur = Field::from(a);
            if !cur.is_finite() {
                return Err(Error::NonFinite { time_index: k });
            }
            if k > 1 {
                let b = self.base_frame(base, k - 1);
                let back = self.transport_tangent_transpose(&b, &cur);
                let f = forcing(k - 1);
                a = (0..n).map(|i| f[i] + cur[i] + dt * back[i]).collect();
            } else {
                a = Vec::new();
            }
            xi[k] = cur;
        }
        Ok(xi)
    }

    /// Continuous adjoint in reversed time:
    /// `rho_tau - eps rho_xx = -s + (u^2 - u_x^2) rho_x
    ///   + (1 - d_xx)^{-1}(+-2 u y rho_x + 2 u_xx y rho_x + 2 u_x y_x rho_x + 2 u_x y rho_xx + k rho_x)`
    /// with `rho(0) = 0`, integrated by the same IMEX scheme; returns
    /// `lambda(t_n) = rho(T - t_n)`.
    pub fn solve_adjoint_continuous(
        &self,
        base: &ForwardTrajectory,
        source: &Trajectory,
        form: AdjointForm,
    ) -> Result<Trajectory> {
        let n_steps = self.time().n_steps();
        let dt = self.time().dt();
        let n = self.domain().n();
        if source.len() != n_steps + 1 {
            return Err(Error::DimensionMismatch {
                expected: n_steps + 1,
                got: source.len(),
            });
        }
        let mut rho = vec![Field::zeros(n); n_steps + 1];
        for j in 0..n_steps {
            let t_idx = n_steps - j;
            let b = self.base_frame(base, t_idx);
            let coupling = self.adjoint_coupling(&b, &rho[j], form);
            let s = source.frame(t_idx);
            let mut rhs: Vec<f64> = (0..n)
                .map(|i| rho[j][i] + dt * (-s[i] + coupling[i]))
                .collect();
            self.implicit().solve_in_place(&mut rhs);
            let next = Field::from(rhs);
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    time_index: t_idx - 1,
                });
            }
            rho[j + 1] = next;
        }
        rho.reverse();
        Trajectory::new(rho)
    }

    /// `K rho = (u^2 - u_x^2) rho_x + (1 - d_xx)^{-1}(...)`, the continuous
    /// adjoint coupling operator without diffusion.
    pub(crate) fn adjoint_coupling_at(
        &self,
        y: &[f64],
        vel: &Velocity,
        rho: &[f64],
        form: AdjointForm,
    ) -> Vec<f64> {
        let b = BaseFrame::new(y, vel, self.domain().h());
        self.adjoint_coupling(&b, rho, form)
    }

    fn adjoint_coupling(&self, b: &BaseFrame<'_>, rho: &[f64], form: AdjointForm) -> Vec<f64> {
        let n = rho.len();
        if !self.transport_enabled() {
            return vec![0.0; n];
        }
        let h = self.domain().h();
        let k = self.params().k;
        let rho_x = grid::d1(rho, h);
        let rho_xx = grid::d2(rho, h);
        let sign = match form {
            AdjointForm::Consistent => 1.0,
            AdjointForm::FlippedCoupling => -1.0,
        };
        let (u, ux, uxx, y) = (&b.vel.u, &b.vel.u_x, &b.vel.u_xx, b.y);
        let inner: Vec<f64> = (0..n)
            .map(|i| {
                sign * 2.0 * u[i] * y[i] * rho_x[i]
                    + 2.0 * uxx[i] * y[i] * rho_x[i]
                    + 2.0 * ux[i] * b.y_x[i] * rho_x[i]
                    + 2.0 * ux[i] * y[i] * rho_xx[i]
                    + k * rho_x[i]
            })
            .collect();
        let smoothed = self.helmholtz().solve(&inner);
        (0..n)
            .map(|i| (u[i] * u[i] - ux[i] * ux[i]) * rho_x[i] + smoothed[i])
            .collect()
    }
}
