//! One-step prediction losses, their gradients and the parameter fit.
//!
//! Deterministic data are scored on the scaled residual
//! `(S_theta(X_i) - X_{i+1}) / delta`, stochastic data on the undivided
//! residual `diag(1, e^{-gamma delta}) S_theta(X_i) + (0, xi_i) - X_{i+1}`.
//! Each residual component is weighted by the inverse of a diagonal matrix
//! built from the data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{fpu_initials, generate_ensemble, sample_stationary_initial, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::integrators::{derive_coefficients, NystromParams, SchemeSpec};
use crate::models::{ForceField, Model, State};
use crate::optimize::{minimize_multistart, Bounds, OptimOptions, OptimResult, StopReason};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Deterministic,
    Stochastic,
}

/// Diagonal of the weight matrix over `(q, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub diag: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if let Some(i) = diag.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::DegenerateData(format!(
                "weight entry {i} is {}, coordinates must not be frozen",
                diag[i]
            )));
        }
        Ok(WeightMatrix { diag })
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        WeightMatrix::new(self.diag.iter().map(|x| c * x).collect())
    }
}

/// Per-coordinate mean of squared increments, divided by `delta^2` in
/// deterministic mode.
pub fn weight_matrix(ens: &TrajectoryEnsemble, mode: LossMode) -> Result<WeightMatrix> {
    ens.validate()?;
    let d = ens.dim();
    let mut acc = vec![0.0; 2 * d];
    for traj in &ens.states {
        for w in traj.windows(2) {
            for k in 0..d {
                acc[k] += (w[1].q[k] - w[0].q[k]).powi(2);
                acc[d + k] += (w[1].p[k] - w[0].p[k]).powi(2);
            }
        }
    }
    let count = (ens.n_trajectories() * ens.n_transitions()) as f64;
    let scale = match mode {
        LossMode::Deterministic => 1.0 / (count * ens.delta().powi(2)),
        LossMode::Stochastic => 1.0 / count,
    };
    WeightMatrix::new(acc.into_iter().map(|x| x * scale).collect())
}

/// Scratch space for the differentiated step.
struct GradScratch {
    x1: Vec<f64>,
    x2: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
    v: Vec<f64>,
    dl1: [Vec<f64>; 2],
    dl2: [Vec<f64>; 2],
}

impl GradScratch {
    fn new(d: usize) -> Self {
        let z = || vec![0.0; d];
        GradScratch {
            x1: z(),
            x2: z(),
            l1: z(),
            l2: z(),
            v: z(),
            dl1: [z(), z()],
            dl2: [z(), z()],
        }
    }
}

fn check_mode(ens: &TrajectoryEnsemble, sigma: &WeightMatrix, mode: LossMode) -> Result<()> {
    ens.validate()?;
    if sigma.diag.len() != 2 * ens.dim() {
        return Err(Error::invalid("weight matrix does not match the state dimension"));
    }
    if mode == LossMode::Stochastic {
        if ens.noise.is_none() {
            return Err(Error::invalid(
                "stochastic loss needs the coarsened noise increments",
            ));
        }
        if ens.meta.generator.langevin.is_none() {
            return Err(Error::invalid("stochastic loss needs friction and noise parameters"));
        }
    }
    Ok(())
}

/// Loss and, when `with_grad`, its gradient with respect to `(b1, beta1)`.
fn evaluate(
    theta: NystromParams,
    ens: &TrajectoryEnsemble,
    sigma: &WeightMatrix,
    mode: LossMode,
    with_grad: bool,
) -> Result<(f64, [f64; 2])> {
    check_mode(ens, sigma, mode)?;
    let c = derive_coefficients(theta)?;
    let dc = c.partials();
    let model = &ens.meta.model;
    let d = ens.dim();
    let delta = ens.delta();
    let d2 = delta * delta;
    let decay = match mode {
        LossMode::Deterministic => 1.0,
        LossMode::Stochastic => ens.meta.generator.langevin.map_or(1.0, |l| l.decay(delta)),
    };
    // residual scale: 1/delta for the deterministic form
    let rs = match mode {
        LossMode::Deterministic => 1.0 / delta,
        LossMode::Stochastic => 1.0,
    };
    let inv_w: Vec<f64> = sigma.diag.iter().map(|x| 1.0 / x).collect();

    let per_traj: Vec<(f64, [f64; 2])> = (0..ens.n_trajectories())
        .into_par_iter()
        .map(|m| {
            let mut s = GradScratch::new(d);
            let traj = &ens.states[m];
            let noise = match mode {
                LossMode::Stochastic => ens.noise.as_ref().map(|n| &n[m]),
                LossMode::Deterministic => None,
            };
            let (mut loss, mut grad) = (0.0, [0.0; 2]);
            for i in 0..traj.len() - 1 {
                let (x, y) = (&traj[i], &traj[i + 1]);
                let xi = noise.map(|n| n[i].as_slice());
                let (l, g) = transition(model, &c, &dc, delta, d2, decay, rs, x, y, xi, &inv_w, &mut s, with_grad);
                loss += l;
                grad[0] += g[0];
                grad[1] += g[1];
            }
            (loss, grad)
        })
        .collect();
    let count = (ens.n_trajectories() * ens.n_transitions()) as f64;
    let (mut loss, mut grad) = (0.0, [0.0; 2]);
    for (l, g) in per_traj {
        loss += l;
        grad[0] += g[0];
        grad[1] += g[1];
    }
    Ok((loss / count, [grad[0] / count, grad[1] / count]))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn transition(
    model: &Model,
    c: &crate::integrators::NystromCoefficients,
    dc: &crate::integrators::CoefficientPartials,
    delta: f64,
    d2: f64,
    decay: f64,
    rs: f64,
    x: &State,
    y: &State,
    xi: Option<&[f64]>,
    inv_w: &[f64],
    s: &mut GradScratch,
    with_grad: bool,
) -> (f64, [f64; 2]) {
    let d = x.q.len();
    for k in 0..d {
        s.x1[k] = x.q[k] + delta * c.c1 * x.p[k];
    }
    model.force_into(&s.x1, &mut s.l1);
    for k in 0..d {
        s.x2[k] = x.q[k] + delta * c.c2 * x.p[k] + d2 * c.a21 * s.l1[k];
    }
    model.force_into(&s.x2, &mut s.l2);
    if with_grad {
        for a in 0..2 {
            for k in 0..d {
                s.v[k] = delta * dc.c1[a] * x.p[k];
            }
            model.force_jvp_into(&s.x1, &s.v, &mut s.dl1[a]);
            for k in 0..d {
                s.v[k] = delta * dc.c2[a] * x.p[k]
                    + d2 * (dc.a21[a] * s.l1[k] + c.a21 * s.dl1[a][k]);
            }
            model.force_jvp_into(&s.x2, &s.v, &mut s.dl2[a]);
        }
    }
    let (mut loss, mut grad) = (0.0, [0.0; 2]);
    for k in 0..d {
        let qn = x.q[k] + delta * x.p[k] + d2 * (c.beta1 * s.l1[k] + c.beta2 * s.l2[k]);
        let mut pn = x.p[k] + delta * (c.b1 * s.l1[k] + c.b2 * s.l2[k]);
        pn *= decay;
        if let Some(xi) = xi {
            pn += xi[k];
        }
        let rq = (qn - y.q[k]) * rs;
        let rp = (pn - y.p[k]) * rs;
        loss += rq * rq * inv_w[k] + rp * rp * inv_w[d + k];
        if with_grad {
            for a in 0..2 {
                let dq = d2
                    * (dc.beta1[a] * s.l1[k]
                        + c.beta1 * s.dl1[a][k]
                        + dc.beta2[a] * s.l2[k]
                        + c.beta2 * s.dl2[a][k]);
                let dp = decay
                    * delta
                    * (dc.b1[a] * s.l1[k] + c.b1 * s.dl1[a][k] + dc.b2[a] * s.l2[k] + c.b2 * s.dl2[a][k]);
                grad[a] += 2.0 * rs * (rq * dq * inv_w[k] + rp * dp * inv_w[d + k]);
            }
        }
    }
    (loss, grad)
}

/// Mean weighted squared residual of `(S_theta(X_i) - X_{i+1}) / delta`.
pub fn loss_deterministic(theta: NystromParams, ens: &TrajectoryEnsemble, sigma: &WeightMatrix) -> Result<f64> {
    Ok(evaluate(theta, ens, sigma, LossMode::Deterministic, false)?.0)
}

/// Mean weighted squared residual of the stochastic one-step prediction.
pub fn loss_stochastic(theta: NystromParams, ens: &TrajectoryEnsemble, sigma: &WeightMatrix) -> Result<f64> {
    Ok(evaluate(theta, ens, sigma, LossMode::Stochastic, false)?.0)
}

pub fn loss(theta: NystromParams, ens: &TrajectoryEnsemble, sigma: &WeightMatrix, mode: LossMode) -> Result<f64> {
    Ok(evaluate(theta, ens, sigma, mode, false)?.0)
}

/// Analytic gradient `(d/db1, d/dbeta1)` of the selected loss.
pub fn loss_gradient(
    theta: NystromParams,
    ens: &TrajectoryEnsemble,
    sigma: &WeightMatrix,
    mode: LossMode,
) -> Result<[f64; 2]> {
    Ok(evaluate(theta, ens, sigma, mode, true)?.1)
}

pub fn loss_and_gradient(
    theta: NystromParams,
    ens: &TrajectoryEnsemble,
    sigma: &WeightMatrix,
    mode: LossMode,
) -> Result<(f64, [f64; 2])> {
    evaluate(theta, ens, sigma, mode, true)
}

/// Settings of [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Also start from four points near the corners of the box.
    pub multistart: bool,
    /// Distance kept from the open ends of `b1 in (0, 1)`.
    pub b1_margin: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimOptions::default(),
            multistart: true,
            b1_margin: 1e-3,
        }
    }
}

impl FitOptions {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            lo: [self.b1_margin, 0.0],
            hi: [1.0 - self.b1_margin, 0.5],
        }
    }
}

/// Extra starts near the corners of the box.
const CORNER_STARTS: [[f64; 2]; 4] = [[0.1, 0.0], [0.1, 0.5], [0.9, 0.0], [0.9, 0.5]];

/// Outcome of one local search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: NystromParams,
    pub theta: NystromParams,
    pub loss: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: NystromParams,
    pub loss: f64,
    pub iterations: usize,
    /// Norm of the projected gradient at `theta`.
    pub gradient_norm: f64,
    pub converged: bool,
    pub mode: LossMode,
    pub weight: WeightMatrix,
    pub options: FitOptions,
    pub starts: Vec<StartSummary>,
}

/// Box-constrained minimizer of the selected loss, with the weight matrix
/// computed from the data.
pub fn estimate(
    ens: &TrajectoryEnsemble,
    mode: LossMode,
    theta0: NystromParams,
    options: &FitOptions,
) -> Result<FitResult> {
    let sigma = weight_matrix(ens, mode)?;
    estimate_with_weight(ens, mode, &sigma, theta0, options)
}

pub fn estimate_with_weight(
    ens: &TrajectoryEnsemble,
    mode: LossMode,
    sigma: &WeightMatrix,
    theta0: NystromParams,
    options: &FitOptions,
) -> Result<FitResult> {
    check_mode(ens, sigma, mode)?;
    theta0.validate()?;
    let bounds = options.bounds();
    let mut starts = vec![bounds.project(theta0.as_array())];
    if options.multistart {
        starts.extend(CORNER_STARTS.iter().map(|x| bounds.project(*x)));
    }
    let f = |x: [f64; 2]| {
        evaluate(NystromParams { b1: x[0], beta1: x[1] }, ens, sigma, mode, true)
            .unwrap_or((f64::INFINITY, [f64::NAN; 2]))
    };
    let (best, all) = minimize_multistart(f, &starts, &bounds, &options.optim);
    Ok(fit_result(best, &all, &starts, mode, sigma.clone(), *options))
}

fn to_params(x: [f64; 2]) -> NystromParams {
    NystromParams { b1: x[0], beta1: x[1] }
}

fn fit_result(
    best: OptimResult,
    all: &[OptimResult],
    starts: &[[f64; 2]],
    mode: LossMode,
    weight: WeightMatrix,
    options: FitOptions,
) -> FitResult {
    FitResult {
        theta: to_params(best.x),
        loss: best.f,
        iterations: all.iter().map(|r| r.iterations).sum(),
        gradient_norm: best.projected_grad_norm,
        converged: best.converged,
        mode,
        weight,
        options,
        starts: all
            .iter()
            .zip(starts)
            .map(|(r, s)| StartSummary {
                start: to_params(*s),
                theta: to_params(r.x),
                loss: r.f,
                iterations: r.iterations,
                reason: r.reason,
            })
            .collect(),
    }
}

/// Where the initial states of a convergence study come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSampler {
    /// Harmonic-regime FPU states.
    Fpu,
    /// Uniform draws from a pool of stationary states.
    Pool(Vec<State>),
}

impl InitialSampler {
    fn draw(&self, model: &Model, count: usize, seed: u64) -> Result<Vec<State>> {
        match self {
            InitialSampler::Fpu => {
                let fpu = model
                    .as_fpu()
                    .ok_or_else(|| Error::invalid("harmonic-regime sampling needs the FPU model"))?;
                Ok(fpu_initials(fpu, count, seed))
            }
            InitialSampler::Pool(pool) => {
                sample_stationary_initial(pool, count, &mut rng::stream(seed, 0, Purpose::Resample))
            }
        }
    }
}

/// Settings of [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub model: Model,
    pub generator: SchemeSpec,
    pub gap: usize,
    pub n_coarse: usize,
    pub initial: InitialSampler,
    pub mode: LossMode,
    pub m_list: Vec<usize>,
    pub reference_m: usize,
    pub repeats: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    /// Mean over repeats of `|b1_M - b1_ref|` and `|beta1_M - beta1_ref|`.
    pub mean_abs_error: [f64; 2],
    /// Mean over repeats of the Euclidean distance to the reference.
    pub mean_error: f64,
    pub estimates: Vec<NystromParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reference: NystromParams,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log mean_error` against `log M`; `None` when
    /// the errors are at round-off level.
    pub slope: Option<f64>,
}

/// Seed for the data set `(tag, index)`, so every data set in a study is
/// independent of the others.
pub fn derived_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Error of the estimator against a large-`M` reference fit, as a function
/// of `M`. Every data set, including the reference, is drawn independently.
pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceStudy> {
    if cfg.m_list.is_empty() || cfg.repeats == 0 {
        return Err(Error::invalid("need at least one sample size and one repeat"));
    }
    if cfg.m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample sizes must be strictly increasing"));
    }
    if cfg.reference_m <= *cfg.m_list.last().unwrap() {
        return Err(Error::invalid("reference size must exceed every sample size"));
    }
    let fit = |m: usize, seed: u64| -> Result<NystromParams> {
        let init = cfg.initial.draw(&cfg.model, m, seed)?;
        let ens = generate_ensemble(&cfg.model, &cfg.generator, &init, cfg.gap, cfg.n_coarse, seed)?;
        Ok(estimate(&ens, cfg.mode, NystromParams::VERLET, &cfg.fit)?.theta)
    };
    let reference = fit(cfg.reference_m, derived_seed(cfg.seed, 0, 0))?;
    let mut rows = Vec::with_capacity(cfg.m_list.len());
    for (mi, &m) in cfg.m_list.iter().enumerate() {
        let mut estimates = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            estimates.push(fit(m, derived_seed(cfg.seed, 1 + mi as u64, r as u64))?);
        }
        let n = estimates.len() as f64;
        let mut abs = [0.0; 2];
        let mut dist = 0.0;
        for e in &estimates {
            let (a, b) = ((e.b1 - reference.b1).abs(), (e.beta1 - reference.beta1).abs());
            abs[0] += a / n;
            abs[1] += b / n;
            dist += a.hypot(b) / n;
        }
        rows.push(ConvergenceRow {
            m,
            mean_abs_error: abs,
            mean_error: dist,
            estimates,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_error).collect();
    let slope = if ys.iter().all(|e| *e > 1e-12) && rows.len() >= 2 {
        Some(log_log_slope(&xs, &ys.iter().map(|y| y.ln()).collect::<Vec<_>>()))
    } else {
        None
    };
    Ok(ConvergenceStudy {
        reference,
        rows,
        slope,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
