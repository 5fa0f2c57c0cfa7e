//! Subcommand implementations.
//!
//! Each runner writes its files into the output directory and returns an
//! [`Outcome`]; `passed == false` maps to exit code 1. Configuration problems
//! surface before any computation starts, numerical failures afterwards.

use std::fmt::Write as _;

use kforq_core::analysis::{
    calibrate_growth_rate, energy_identity, gronwall_bound, momentum_identity, smallness_margin,
    wv_bound,
};
use kforq_core::grid::estimate_embedding_constant;
use kforq_core::{
    optimize, AdjointForm, CostParams, Field, FirstOrderResiduals, ForwardTrajectory,
    HelmholtzOperator, OptimOptions, OptimState, OptimStatus, TrackingProblem, Trajectory,
    TrajectoryMeta, TrajectoryNorms, ViscousForm, WindowValues,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Setup, Target};
use crate::error::CliError;
use crate::output::{OutputDir, SCHEMA_VERSION};

/// Pass thresholds. They are fixed here, not read from the config.
pub mod thresholds {
    /// Relative mismatch between adjoint and central-difference derivatives.
    pub const GRADIENT_RTOL: f64 = 1e-6;
    /// Below this absolute mismatch (times `1 + J`) the comparison is
    /// roundoff and the direction is left out of the relative error.
    pub const GRADIENT_ATOL: f64 = 1e-13;
    pub const TAYLOR_MIN_ORDER: f64 = 1.9;
    /// Remainders below this multiple of `eps |y|_{C(H)}` are roundoff.
    pub const TAYLOR_FLOOR: f64 = 100.0;
    pub const TRANSPOSE_RTOL: f64 = 1e-10;
    pub const HELMHOLTZ_RTOL: f64 = 1e-10;
    /// Weak-form defect budget `C (h^2 + dt) (1 + |y|_inf + |omega|_inf)`.
    pub const WEAK_RESIDUAL_C: f64 = 10.0;
    /// Momentum identity budget `C h^2`.
    pub const MOMENTUM_C: f64 = 5.0;
    pub const ENERGY_GROWTH_RTOL: f64 = 1e-12;
    /// Twin recovery: cost reduction, gradient target and multiplier gap.
    pub const TWIN_MIN_DROP: f64 = 100.0;
    pub const TWIN_GRAD_RTOL: f64 = 1e-6;
    pub const TWIN_MAX_GAP: f64 = 1e-4;
    /// Relative slack for the coercivity lower bound.
    pub const COERCIVITY_SLACK: f64 = 1e-8;
    /// Size of the single-frame perturbation injected by `faults.corrupt_frame`.
    pub const CORRUPTION: f64 = 5e-2;
}

/// Offsets that split one user seed into independent streams.
mod stream {
    pub const CONTROL: u64 = 0;
    pub const DIRECTIONS: u64 = 1_000;
    pub const TRANSPOSE: u64 = 2_000;
    pub const HELMHOLTZ: u64 = 3_000;
    pub const COERCIVITY: u64 = 4_000;
    pub const EMBEDDING: u64 = 5_000;
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    /// Human-readable report printed to stdout.
    pub text: String,
}

/// Parsed config with grid objects and data profiles.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub setup: Setup,
    pub hash: String,
    pub y0: Field,
    /// The configured control profile on the window.
    pub omega: WindowValues,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        let setup = cfg.setup().map_err(|e| CliError::Config(e.to_string()))?;
        let y0 = cfg.initial.sample(&setup.domain);
        let omega = cfg.control.sample(
            &setup.window,
            &cfg.window,
            cfg.seed.wrapping_add(stream::CONTROL),
        );
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            setup,
            hash,
            y0,
            omega,
        })
    }

    pub fn norms(&self) -> TrajectoryNorms {
        TrajectoryNorms::new(self.setup.domain, self.setup.time)
    }

    pub fn solve(&self, omega: &WindowValues) -> Result<ForwardTrajectory, CliError> {
        Ok(self
            .setup
            .solver
            .solve(&self.y0, &self.setup.window.extend(omega))?)
    }

    pub fn target(&self) -> Result<Trajectory, CliError> {
        let (dom, tg) = (&self.setup.domain, &self.setup.time);
        Ok(match self.cfg.cost.target {
            Target::Zero {} => Trajectory::zeros(tg.n_steps() + 1, dom.n()),
            Target::Constant { value } => Trajectory::sample(dom, tg, |_, _| value),
            Target::Uncontrolled {} => self.solve(&self.setup.window.zeros())?.y,
            Target::Twin {} => self.solve(&self.omega)?.y,
        })
    }

    pub fn problem(&self, z_d: Trajectory, delta: f64) -> Result<TrackingProblem, CliError> {
        let cost = CostParams::new(delta, z_d, self.cfg.cost.observer)?;
        Ok(TrackingProblem::new(
            self.setup.solver.clone(),
            self.setup.window.clone(),
            self.y0.clone(),
            cost,
        )?)
    }

    pub fn directions(&self) -> Result<Vec<WindowValues>, CliError> {
        let c = &self.cfg.checks;
        if c.direction.is_zero() {
            return Err(CliError::Config(
                "checks.direction: the zero direction carries no derivative information".into(),
            ));
        }
        let base = self.cfg.seed.wrapping_add(stream::DIRECTIONS);
        Ok((0..c.gradcheck_directions as u64)
            .map(|i| {
                c.direction
                    .sample(&self.setup.window, &self.cfg.window, base.wrapping_add(i))
            })
            .collect())
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            schema_version: SCHEMA_VERSION,
            config_hash: self.hash.clone(),
            columns: kforq_core::io::TRAJECTORY_COLUMNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            length: self.setup.domain.length(),
            n_interior: self.setup.domain.n(),
            horizon: self.setup.time.horizon(),
            n_steps: self.setup.time.n_steps(),
            epsilon: self.cfg.model.epsilon,
            k: self.cfg.model.k,
        }
    }
}

/// A named check. Hard checks gate the exit code; soft ones are reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<=`, `<` or `>=`; `info` for values without a threshold.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, "<=", threshold, value <= threshold)
    }

    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, "<", threshold, value < threshold)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, ">=", threshold, value >= threshold)
    }

    pub fn info(name: &str, value: f64) -> Self {
        Self::new(name, value, "info", f64::NAN, true)
    }

    fn new(name: &str, value: f64, relation: &'static str, threshold: f64, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            relation,
            threshold,
            pass,
        }
    }

    fn line(&self) -> String {
        let status = match (self.relation, self.pass) {
            ("info", _) => "INFO",
            (_, true) => "PASS",
            (_, false) => "FAIL",
        };
        if self.relation == "info" {
            format!("{status:<5} {:<34} {:>14.6e}", self.name, self.value)
        } else {
            format!(
                "{status:<5} {:<34} {:>14.6e} {} {:.6e}",
                self.name, self.value, self.relation, self.threshold
            )
        }
    }
}

// ---------------------------------------------------------------- forward

pub fn run_forward(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let traj = ctx.solve(&ctx.omega)?;
    out.trajectory("trajectory.csv", &ctx.setup, &traj)?;
    out.json("trajectory.json", &ctx.meta())?;
    let norms = ctx.norms();
    let mut text = String::new();
    writeln!(
        text,
        "forward: {} frames x {} nodes",
        traj.y.len(),
        ctx.setup.domain.n()
    )
    .unwrap();
    writeln!(text, "|y|_C(H) = {:.6e}", norms.norm_ct_h(&traj.y)?).unwrap();
    if traj.stability_warnings > 0 {
        writeln!(
            text,
            "advective bound exceeded on {} steps",
            traj.stability_warnings
        )
        .unwrap();
    }
    Ok(Outcome { passed: true, text })
}

// ---------------------------------------------------------------- adjoint

#[derive(Debug, Serialize)]
struct AdjointSummary {
    cost: f64,
    gradient_norm: f64,
    terminal_multiplier: f64,
    mu_mismatch: f64,
}

pub fn run_adjoint(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let problem = ctx.problem(ctx.target()?, ctx.cfg.cost.delta)?;
    let ev = problem.evaluate(&ctx.omega)?;
    let lam = &ev.adjoint.lambda;
    let summary = AdjointSummary {
        cost: ev.cost,
        gradient_norm: problem.window().norm(&ev.gradient),
        terminal_multiplier: ctx.setup.domain.norm_sup(lam.last()),
        mu_mismatch: ev
            .adjoint
            .mu
            .iter()
            .zip(lam.frame(0).iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
    };
    out.field_csv("adjoint.csv", "lambda", &ctx.setup, lam)?;
    out.control_csv("gradient.csv", &ctx.setup, problem.window(), &ev.gradient)?;
    out.json("adjoint.json", &summary)?;
    let checks = [
        Check::at_most("terminal_multiplier", summary.terminal_multiplier, 0.0),
        Check::at_most("mu_minus_lambda0", summary.mu_mismatch, 0.0),
    ];
    let mut text = format!(
        "J = {:.6e}, |g| = {:.6e}\n",
        summary.cost, summary.gradient_norm
    );
    for c in &checks {
        writeln!(text, "{}", c.line()).unwrap();
    }
    Ok(Outcome {
        passed: checks.iter().all(|c| c.pass),
        text,
    })
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone, Serialize)]
pub struct GradientRow {
    pub direction: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
    /// Both derivatives are below the roundoff floor.
    pub at_roundoff: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorRow {
    pub direction: usize,
    pub h: f64,
    pub remainder: f64,
    /// Observed order against the previous step; empty for the first step or
    /// when either remainder is at roundoff level.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub corrupt_adjoint: bool,
    pub fd_step: f64,
    pub rows: Vec<GradientRow>,
    pub max_rel_error: f64,
    pub min_taylor_order: Option<f64>,
    pub pass: bool,
}

/// Adjoint-versus-finite-difference comparison at `omega`.
pub fn gradient_rows(
    problem: &TrackingProblem,
    omega: &WindowValues,
    directions: &[WindowValues],
    fd_step: f64,
    corrupt_adjoint: bool,
) -> Result<Vec<GradientRow>, CliError> {
    let g = if corrupt_adjoint {
        problem.reduced_gradient_continuous(omega, AdjointForm::FlippedCoupling)?
    } else {
        problem.reduced_gradient(omega)?
    };
    let scale = 1.0 + problem.cost(omega)?.abs();
    directions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let ad = problem.window().inner(&g, q);
            let fd = problem.fd_directional(omega, q, fd_step)?;
            let diff = (ad - fd).abs();
            let den = ad.abs().max(fd.abs());
            let rel_error = if den > 0.0 { diff / den } else { 0.0 };
            Ok(GradientRow {
                direction: i,
                adjoint: ad,
                finite_difference: fd,
                rel_error,
                at_roundoff: diff <= thresholds::GRADIENT_ATOL * scale,
            })
        })
        .collect()
}

/// Tangent Taylor test `|S(w + h q) - S(w) - h S'(w) q|_{C(H)}`.
pub fn taylor_rows(
    ctx: &Context,
    omega: &WindowValues,
    directions: &[WindowValues],
) -> Result<Vec<TaylorRow>, CliError> {
    let norms = ctx.norms();
    let base = ctx.solve(omega)?;
    let floor = thresholds::TAYLOR_FLOOR * f64::EPSILON * norms.norm_ct_h(&base.y)?;
    let mut rows = Vec::new();
    for (d, q) in directions.iter().enumerate() {
        let m = ctx
            .setup
            .solver
            .solve_tangent(&base, &ctx.setup.window.extend(q))?
            .m;
        let mut prev: Option<(f64, f64)> = None;
        for &h in &ctx.cfg.checks.taylor_steps {
            let yh = ctx.solve(&omega.axpy(h, q))?.y;
            let lin = Trajectory::new(
                base.y
                    .frames()
                    .iter()
                    .zip(m.frames())
                    .map(|(y, mm)| y.axpy(h, mm))
                    .collect(),
            )?;
            let remainder = norms.norm_ct_h(&yh.map2(&lin, |a, b| a - b))?;
            let order = prev.and_then(|(h0, r0)| {
                (r0 > floor && remainder > floor).then(|| (r0 / remainder).ln() / (h0 / h).ln())
            });
            rows.push(TaylorRow {
                direction: d,
                h,
                remainder,
                order,
            });
            prev = Some((h, remainder));
        }
    }
    Ok(rows)
}

fn gradient_report(ctx: &Context) -> Result<(GradientReport, Vec<TaylorRow>), CliError> {
    let directions = ctx.directions()?;
    let problem = ctx.problem(ctx.target()?, ctx.cfg.cost.delta)?;
    let omega = ctx.setup.window.zeros();
    let corrupt = ctx.cfg.faults.corrupt_adjoint;
    let rows = gradient_rows(
        &problem,
        &omega,
        &directions,
        ctx.cfg.checks.fd_step,
        corrupt,
    )?;
    let taylor = taylor_rows(ctx, &omega, &directions)?;
    let max_rel_error = rows
        .iter()
        .filter(|r| !r.at_roundoff)
        .map(|r| r.rel_error)
        .fold(0.0, f64::max);
    let min_taylor_order = taylor
        .iter()
        .filter_map(|r| r.order)
        .fold(None, |m: Option<f64>, o| Some(m.map_or(o, |m| m.min(o))));
    let pass = max_rel_error <= thresholds::GRADIENT_RTOL
        && min_taylor_order.is_none_or(|o| o >= thresholds::TAYLOR_MIN_ORDER);
    let report = GradientReport {
        corrupt_adjoint: corrupt,
        fd_step: ctx.cfg.checks.fd_step,
        rows,
        max_rel_error,
        min_taylor_order,
        pass,
    };
    Ok((report, taylor))
}

pub fn run_gradcheck(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (report, taylor) = gradient_report(ctx)?;
    out.csv("taylor.csv", taylor.iter())?;
    out.json("gradcheck.json", &report)?;
    let mut text = String::from("direction  adjoint         fd              rel_error\n");
    for r in &report.rows {
        writeln!(
            text,
            "{:<10} {:>+.8e} {:>+.8e} {:.3e}",
            r.direction, r.adjoint, r.finite_difference, r.rel_error
        )
        .unwrap();
    }
    writeln!(text, "h          remainder       order").unwrap();
    for r in &taylor {
        let order = r.order.map_or("-".to_string(), |o| format!("{o:.4}"));
        writeln!(text, "{:<10.1e} {:.8e} {order}", r.h, r.remainder).unwrap();
    }
    let checks = [
        Check::at_most(
            "max_rel_gradient_error",
            report.max_rel_error,
            thresholds::GRADIENT_RTOL,
        ),
        Check::at_least(
            "min_taylor_order",
            report.min_taylor_order.unwrap_or(f64::INFINITY),
            thresholds::TAYLOR_MIN_ORDER,
        ),
    ];
    for c in &checks {
        writeln!(text, "{}", c.line()).unwrap();
    }
    Ok(Outcome {
        passed: report.pass,
        text,
    })
}

// ---------------------------------------------------------------- optimize

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeSummary {
    pub status: OptimStatus,
    pub iterations: usize,
    pub delta: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
    pub multiplier_gap: f64,
    pub tracking_error: f64,
}

fn summarize(problem: &TrackingProblem, st: &OptimState) -> Result<OptimizeSummary, CliError> {
    let first = st.history.first().expect("history has the start point");
    let last = st.history.last().expect("history has the start point");
    let y = &st.last.state.y;
    Ok(OptimizeSummary {
        status: st.status,
        iterations: st.iterations(),
        delta: problem.cost_params().delta,
        initial_cost: first.cost,
        final_cost: last.cost,
        initial_grad_norm: st.initial_grad_norm,
        final_grad_norm: last.grad_norm,
        multiplier_gap: problem.multiplier_gap(&st.omega, &st.last.adjoint.lambda),
        tracking_error: problem
            .norms()
            .norm_l2h(&y.map2(&problem.cost_params().z_d, |a, b| a - b))?,
    })
}

fn solve_problem(
    problem: &TrackingProblem,
    opts: &OptimOptions,
) -> Result<(OptimState, OptimizeSummary), CliError> {
    let st = optimize(problem, &problem.window().zeros(), opts)?;
    let summary = summarize(problem, &st)?;
    Ok((st, summary))
}

pub fn run_optimize(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let problem = ctx.problem(ctx.target()?, ctx.cfg.cost.delta)?;
    let (st, summary) = solve_problem(&problem, &ctx.cfg.optimizer)?;
    out.optimizer_log("optimizer_log.csv", &st.history)?;
    out.control_csv("control.csv", &ctx.setup, problem.window(), &st.omega)?;
    out.json("optimize.json", &summary)?;
    let text = format!(
        "status {:?} after {} iterations\nJ {:.6e} -> {:.6e}\n|g| {:.6e} -> {:.6e}\n",
        summary.status,
        summary.iterations,
        summary.initial_cost,
        summary.final_cost,
        summary.initial_grad_norm,
        summary.final_grad_norm
    );
    Ok(Outcome {
        passed: summary.status == OptimStatus::Converged,
        text,
    })
}

// ---------------------------------------------------------------- twin

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub tracking_error: f64,
    pub status: OptimStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwinReport {
    pub optimizer: OptimizeSummary,
    /// `J(0) / J(omega*)`; infinite when the optimum cost is zero.
    pub cost_drop: f64,
    pub grad_target: f64,
    pub control_rel_error: f64,
    pub sweep: Vec<SweepPoint>,
    pub sweep_monotone: bool,
    pub checks: Vec<Check>,
}

/// Twin experiment: the target is the state under the configured control,
/// which the optimizer then recovers from `omega = 0`.
pub fn twin_report(ctx: &Context) -> Result<(TwinReport, OptimState), CliError> {
    let z = ctx.solve(&ctx.omega)?.y;
    let problem = ctx.problem(z.clone(), ctx.cfg.cost.delta)?;
    let (st, summary) = solve_problem(&problem, &ctx.cfg.optimizer)?;
    let w = problem.window();
    let cost_drop = if summary.final_cost > 0.0 {
        summary.initial_cost / summary.final_cost
    } else {
        f64::INFINITY
    };
    let truth = w.norm(&ctx.omega);
    let miss = w.norm(&st.omega.axpy(-1.0, &ctx.omega));
    let control_rel_error = if truth > 0.0 { miss / truth } else { miss };

    let mut deltas = ctx.cfg.checks.delta_sweep.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let sweep = deltas
        .iter()
        .map(|&d| {
            let p = ctx.problem(z.clone(), d)?;
            let (_, s) = solve_problem(&p, &ctx.cfg.optimizer)?;
            Ok(SweepPoint {
                delta: d,
                tracking_error: s.tracking_error,
                status: s.status,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let sweep_monotone = sweep
        .windows(2)
        .all(|p| p[1].tracking_error <= p[0].tracking_error);

    let grad_target = thresholds::TWIN_GRAD_RTOL * (1.0 + summary.initial_grad_norm);
    let needs_drop = summary.initial_cost > 0.0;
    let checks = vec![
        if needs_drop {
            Check::at_least("cost_drop", cost_drop, thresholds::TWIN_MIN_DROP)
        } else {
            Check::info("cost_drop", cost_drop)
        },
        Check::at_most("final_grad_norm", summary.final_grad_norm, grad_target),
        Check::at_most(
            "iterations",
            summary.iterations as f64,
            ctx.cfg.optimizer.max_iters as f64,
        ),
        Check::at_most(
            "multiplier_gap",
            summary.multiplier_gap,
            thresholds::TWIN_MAX_GAP,
        ),
        Check::at_most(
            "sweep_nonmonotone",
            if sweep_monotone { 0.0 } else { 1.0 },
            0.0,
        ),
        Check::info("control_rel_error", control_rel_error),
        Check::info("tracking_error", summary.tracking_error),
    ];
    Ok((
        TwinReport {
            optimizer: summary,
            cost_drop,
            grad_target,
            control_rel_error,
            sweep,
            sweep_monotone,
            checks,
        },
        st,
    ))
}

pub fn run_twin(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (report, st) = twin_report(ctx)?;
    out.optimizer_log("optimizer_log.csv", &st.history)?;
    out.control_csv("control.csv", &ctx.setup, &ctx.setup.window, &st.omega)?;
    out.json("twin.json", &report)?;
    let mut text = format!(
        "twin: {:?} after {} iterations\n",
        report.optimizer.status, report.optimizer.iterations
    );
    for p in &report.sweep {
        writeln!(
            text,
            "delta {:.1e}: tracking error {:.6e} ({:?})",
            p.delta, p.tracking_error, p.status
        )
        .unwrap();
    }
    for c in &report.checks {
        writeln!(text, "{}", c.line()).unwrap();
    }
    Ok(Outcome {
        passed: report.checks.iter().all(|c| c.pass),
        text,
    })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub hard: Vec<Check>,
    pub soft: Vec<Check>,
    pub optimizer: OptimizeSummary,
    pub first_order: FirstOrderResiduals,
    pub second_order_file: String,
    pub pass: bool,
}

fn helmholtz_roundtrip(ctx: &Context) -> f64 {
    let dom = ctx.setup.domain;
    let helm = HelmholtzOperator::new(dom);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(stream::HELMHOLTZ));
    (0..20)
        .map(|_| {
            let y = Field::from(
                (0..dom.n())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect::<Vec<_>>(),
            );
            let back = helm.apply(&helm.solve(&y));
            let num: f64 = back
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let den: f64 = y.iter().map(|v| v * v).sum();
            (num / den).sqrt()
        })
        .fold(0.0, f64::max)
}

fn transpose_defect(ctx: &Context, base: &ForwardTrajectory) -> Result<f64, CliError> {
    let (dom, tg) = (ctx.setup.domain, ctx.setup.time);
    let norms = ctx.norms();
    let w = &ctx.setup.window;
    let solver = &ctx.setup.solver;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(stream::TRANSPOSE));
    let mut worst = 0.0_f64;
    for _ in 0..ctx.cfg.checks.transpose_pairs {
        let q = WindowValues((0..w.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let src = Trajectory::new(
            (0..=tg.n_steps())
                .map(|_| {
                    Field::from(
                        (0..dom.n())
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        )?;
        let m = solver.solve_tangent(base, &w.extend(&q))?.m;
        let lam = solver.solve_adjoint_discrete(base, &src)?.lambda;
        let lhs = norms.inner_l2h(&m, &src)?;
        let rhs = -w.inner(&q, &w.restrict(lam.frames()));
        let scale = w.norm(&q) * norms.norm_l2h(&src)?;
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}

/// Copy of `y` with frame `k` shifted by a multiple of the first mode.
fn corrupt(ctx: &Context, y: &Trajectory, k: usize) -> Result<Trajectory, CliError> {
    let dom = ctx.setup.domain;
    let mut frames = y.clone().into_frames();
    let amp = thresholds::CORRUPTION * dom.norm_sup(&frames[k]).max(1.0);
    frames[k] = frames[k].axpy(amp, &dom.mode(1));
    Ok(Trajectory::new(frames)?)
}

pub fn run_verify(ctx: &Context, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let dom = ctx.setup.domain;
    let tg = ctx.setup.time;
    let solver = &ctx.setup.solver;
    let helm = HelmholtzOperator::new(dom);
    let norms = ctx.norms();
    let (h, dt) = (dom.h(), tg.dt());
    let control = ctx.setup.window.extend(&ctx.omega);
    let traj = ctx.solve(&ctx.omega)?;
    let y = match ctx.cfg.faults.corrupt_frame {
        Some(k) => corrupt(ctx, &traj.y, k)?,
        None => traj.y.clone(),
    };

    let mut hard = Vec::new();
    let mut soft = Vec::new();

    hard.push(Check::at_most(
        "helmholtz_roundtrip",
        helmholtz_roundtrip(ctx),
        thresholds::HELMHOLTZ_RTOL,
    ));

    let y_sup = y
        .frames()
        .iter()
        .map(|f| dom.norm_sup(f))
        .fold(0.0, f64::max);
    let w_sup = ctx.omega.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    hard.push(Check::at_most(
        "weak_residual",
        solver.weak_residual(&y, &control, ViscousForm::Strong),
        thresholds::WEAK_RESIDUAL_C * (h * h + dt) * (1.0 + y_sup + w_sup),
    ));

    let mut momentum = 0.0_f64;
    for f in y.frames() {
        momentum = momentum.max(momentum_identity(&dom, &helm, f)?.relerr);
    }
    hard.push(Check::at_most(
        "momentum_identity",
        momentum,
        thresholds::MOMENTUM_C * h * h,
    ));

    let energy = energy_identity(solver, &traj, &control)?;
    let e_max = energy.energy.iter().fold(0.0_f64, |m, e| m.max(*e));
    hard.push(Check::at_most(
        "energy_excess_growth",
        energy.worst_excess_growth(dt),
        thresholds::ENERGY_GROWTH_RTOL * e_max.max(1.0),
    ));
    soft.push(Check::info(
        "energy_increment_defect_max",
        energy.max_increment_defect(dt),
    ));
    soft.push(Check::info("energy_residual_max", energy.max_abs()));
    soft.push(Check::info(
        "energy_residual_max_without_flux",
        energy.max_abs_without_flux(),
    ));

    hard.push(Check::at_most(
        "transpose_identity",
        transpose_defect(ctx, &traj)?,
        thresholds::TRANSPOSE_RTOL,
    ));

    let (grad, _) = gradient_report(ctx)?;
    hard.push(Check::at_most(
        "gradient_fd_rel_error",
        grad.max_rel_error,
        thresholds::GRADIENT_RTOL,
    ));
    hard.push(Check::at_least(
        "tangent_taylor_order",
        grad.min_taylor_order.unwrap_or(f64::INFINITY),
        thresholds::TAYLOR_MIN_ORDER,
    ));

    let problem = ctx.problem(ctx.target()?, ctx.cfg.cost.delta)?;
    let (st, summary) = solve_problem(&problem, &ctx.cfg.optimizer)?;
    let fo = problem.first_order_residuals(&st.omega)?;
    hard.push(Check::at_most(
        "optimizer_not_converged",
        if st.status == OptimStatus::Converged {
            0.0
        } else {
            1.0
        },
        0.0,
    ));
    hard.push(Check::at_most(
        "terminal_multiplier",
        fo.terminal_multiplier,
        0.0,
    ));
    hard.push(Check::at_most("mu_minus_lambda0", fo.mu_mismatch, 0.0));
    soft.push(Check::at_most(
        "multiplier_gap",
        fo.multiplier_gap,
        thresholds::TWIN_MAX_GAP,
    ));
    soft.push(Check::info("state_residual", fo.state_residual));
    soft.push(Check::info("adjoint_residual", fo.adjoint_residual));
    soft.push(Check::info(
        "adjoint_residual_flipped",
        fo.adjoint_residual_flipped,
    ));

    let times: Vec<f64> = (0..=tg.n_steps()).map(|n| tg.t(n)).collect();
    let c_gron = match ctx.cfg.checks.gronwall_c {
        Some(c) => c,
        None => calibrate_growth_rate(&dom, dt, &traj.y)?,
    };
    let gron = gronwall_bound(&dom, &times, &traj.y, c_gron)?;
    soft.push(Check::info("gronwall_c", c_gron));
    soft.push(Check::at_most(
        "gronwall_violations",
        if gron.holds() { 0.0 } else { 1.0 },
        0.0,
    ));
    let wv = wv_bound(&norms, &traj.y, ctx.setup.window.norm(&ctx.omega))?;
    soft.push(Check::info("wv_bound_implied_min_c", wv.implied_min_c));
    let small = smallness_margin(
        &dom,
        &helm,
        tg.horizon(),
        &ctx.y0,
        &control,
        ctx.cfg.checks.smallness_c,
    )?;
    soft.push(Check::below("smallness", small.lhs, small.rhs));

    let ce = estimate_embedding_constant(
        dom,
        tg,
        ctx.cfg.checks.embedding_samples,
        ctx.cfg.seed.wrapping_add(stream::EMBEDDING),
    )?;
    let so = problem.coercivity_check(
        &st.omega,
        ce,
        ctx.cfg.checks.coercivity_samples,
        ctx.cfg.seed.wrapping_add(stream::COERCIVITY),
    )?;
    soft.push(Check::below(
        "second_order_condition_1",
        so.condition1.lhs,
        so.condition1.rhs,
    ));
    soft.push(Check::below(
        "second_order_condition_2",
        so.condition2.lhs,
        so.condition2.rhs,
    ));
    soft.push(Check::info("kappa1", so.kappa1));
    soft.push(Check::info("kappa2", so.kappa2));
    let floor = ctx.cfg.cost.delta.min(1.0) * (1.0 - thresholds::COERCIVITY_SLACK);
    if so.samples.is_empty() {
        soft.push(Check::info("coercivity_min_ratio", so.empirical_min_ratio));
    } else {
        soft.push(Check::at_least(
            "coercivity_min_ratio",
            so.empirical_min_ratio,
            floor,
        ));
    }
    soft.push(Check::at_most(
        "lambda_bound",
        so.lambda_bound.lhs,
        so.lambda_bound.rhs,
    ));
    soft.push(Check::at_most(
        "kernel_bound_violations",
        so.kernel_bound_violations as f64,
        0.0,
    ));

    out.json("second_order.json", &so)?;
    let pass = hard.iter().all(|c| c.pass);
    let report = VerifyReport {
        hard,
        soft,
        optimizer: summary,
        first_order: fo,
        second_order_file: "second_order.json".into(),
        pass,
    };
    out.optimizer_log("optimizer_log.csv", &st.history)?;
    out.json("verify.json", &report)?;

    let mut text = String::from("hard checks\n");
    for c in &report.hard {
        writeln!(text, "{}", c.line()).unwrap();
    }
    text.push_str("soft checks (reported only)\n");
    for c in &report.soft {
        writeln!(text, "{}", c.line()).unwrap();
    }
    writeln!(text, "verify: {}", if pass { "PASS" } else { "FAIL" }).unwrap();
    Ok(Outcome { passed: pass, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::below("a", 1.0, 1.0).pass);
        assert!(Check::at_least("a", 2.0, 1.9).pass);
        assert!(!Check::at_least("a", f64::NAN, 1.9).pass);
        assert!(Check::info("a", f64::NAN).pass);
        assert!(Check::at_most("a", 2.0, 1.0).line().starts_with("FAIL"));
    }
}
