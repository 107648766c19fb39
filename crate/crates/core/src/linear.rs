//! Closed-form analysis on the scalar oscillator `q'' = -Omega q - gamma q' + sigma W'`.
//!
//! One Nyström step on a linear force is a 2x2 matrix `B`, so the loss
//! against the exact flow, the optimal parameters and the stability bound can
//! all be evaluated without simulation.
//!
//! Two weightings of the matrix discrepancy `Y = e^{A delta} - B` are offered.
//! [`linear_loss`] scores `Y` on states of equal kinetic and potential energy
//! (`E[X X^T] = diag(1/Omega, 1)`) with the weight `diag(1, Omega)` those
//! states produce in the data-driven fit; its minimizer depends on `delta`
//! only through `delta omega`. [`linear_loss_isotropic`] is the plain trace
//! norm `Tr(Y^T diag(1, Omega^2)^{-1} Y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{log_log_slope, FitOptions};
use crate::integrators::{derive_coefficients, CoefficientPartials, NystromCoefficients, NystromParams};
use crate::mat2::Mat2;
use crate::models::LangevinParams;
use crate::optimize::minimize_multistart;
use crate::rng::{self, Purpose};

/// Scalar linear system with `Omega = omega^2` and friction `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub omega_sq: f64,
    pub gamma: f64,
}

impl LinearSystem {
    pub fn new(omega_sq: f64, gamma: f64) -> Result<Self> {
        check_system(omega_sq, gamma)?;
        Ok(LinearSystem { omega_sq, gamma })
    }
}

fn check_system(omega_sq: f64, gamma: f64) -> Result<()> {
    if !(omega_sq > 0.0 && omega_sq.is_finite()) {
        return Err(Error::invalid(format!("Omega must be positive, got {omega_sq}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("friction must be >= 0, got {gamma}")));
    }
    Ok(())
}

fn check_step(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {delta}")));
    }
    Ok(())
}

fn propagator_of(c: &NystromCoefficients, delta: f64, w: f64) -> Mat2 {
    let d2 = delta * delta;
    let z = d2 * w;
    let d4w2 = d2 * d2 * w * w;
    Mat2::new(
        1.0 - 0.5 * z + d4w2 * c.beta2 * c.a21,
        delta - delta * z * (c.beta1 * c.c1 + c.beta2 * c.c2) + delta * d4w2 * c.beta2 * c.a21 * c.c1,
        -delta * w + delta * z * w * c.b2 * c.a21,
        1.0 - 0.5 * z + d4w2 * c.b2 * c.a21 * c.c1,
    )
}

/// Derivative of the propagator along parameter direction `a`
/// (0 for `b1`, 1 for `beta1`).
fn propagator_partial(c: &NystromCoefficients, dc: &CoefficientPartials, a: usize, delta: f64, w: f64) -> Mat2 {
    let d2 = delta * delta;
    let z = d2 * w;
    let d4w2 = d2 * d2 * w * w;
    Mat2::new(
        d4w2 * (dc.beta2[a] * c.a21 + c.beta2 * dc.a21[a]),
        -delta * z * (dc.beta1[a] * c.c1 + c.beta1 * dc.c1[a] + dc.beta2[a] * c.c2 + c.beta2 * dc.c2[a])
            + delta
                * d4w2
                * (dc.beta2[a] * c.a21 * c.c1 + c.beta2 * dc.a21[a] * c.c1 + c.beta2 * c.a21 * dc.c1[a]),
        delta * z * w * (dc.b2[a] * c.a21 + c.b2 * dc.a21[a]),
        d4w2 * (dc.b2[a] * c.a21 * c.c1 + c.b2 * dc.a21[a] * c.c1 + c.b2 * c.a21 * dc.c1[a]),
    )
}

/// One-step matrix `B` of the Nyström method on `g(q) = -Omega q`.
pub fn nystrom_propagator(params: NystromParams, delta: f64, omega_sq: f64) -> Result<Mat2> {
    check_system(omega_sq, 0.0)?;
    check_step(delta)?;
    Ok(propagator_of(&derive_coefficients(params)?, delta, omega_sq))
}

/// `diag(1, e^{-gamma delta}) B`: the Nyström step followed by the OU decay.
pub fn stochastic_propagator(params: NystromParams, delta: f64, omega_sq: f64, gamma: f64) -> Result<Mat2> {
    check_system(omega_sq, gamma)?;
    let b = nystrom_propagator(params, delta, omega_sq)?;
    Ok(Mat2::diag(1.0, (-gamma * delta).exp()) * b)
}

/// `exp(A_gamma delta)` with `A_gamma = [0 1; -Omega -gamma]`, in closed form.
///
/// Uses `e^{At} = e^{-mu t} (c(t) I + s(t) (A + mu I))`, `mu = gamma / 2`,
/// with `c, s` the cos/sin, cosh/sinh or polynomial pair according to the
/// sign of `Omega - mu^2`.
pub fn exact_propagator(omega_sq: f64, gamma: f64, delta: f64) -> Result<Mat2> {
    check_system(omega_sq, gamma)?;
    check_step(delta)?;
    let mu = 0.5 * gamma;
    let disc = omega_sq - mu * mu;
    let (c, s) = if disc > 0.0 {
        let nu = disc.sqrt();
        ((nu * delta).cos(), (nu * delta).sin() / nu)
    } else if disc < 0.0 {
        let k = (-disc).sqrt();
        ((k * delta).cosh(), (k * delta).sinh() / k)
    } else {
        (1.0, delta)
    };
    let shifted = Mat2::new(mu, 1.0, -omega_sq, -gamma + mu);
    Ok((Mat2::IDENTITY.scale(c) + shifted.scale(s)).scale((-mu * delta).exp()))
}

/// Entry weights `w_ij` of the two loss forms, `loss = sum w_ij Y_ij^2`.
fn loss_weights(omega_sq: f64, isotropic: bool) -> Mat2 {
    if isotropic {
        Mat2::new(1.0, 1.0, 1.0 / (omega_sq * omega_sq), 1.0 / (omega_sq * omega_sq))
    } else {
        Mat2::new(1.0 / omega_sq, 1.0, 1.0 / (omega_sq * omega_sq), 1.0 / omega_sq)
    }
}

fn loss_and_grad(
    params: NystromParams,
    delta: f64,
    sys: LinearSystem,
    isotropic: bool,
) -> Result<(f64, [f64; 2])> {
    check_step(delta)?;
    let c = derive_coefficients(params)?;
    let dc = c.partials();
    let e = exact_propagator(sys.omega_sq, sys.gamma, delta)?;
    let s = Mat2::diag(1.0, (-sys.gamma * delta).exp());
    let y = e - s * propagator_of(&c, delta, sys.omega_sq);
    let w = loss_weights(sys.omega_sq, isotropic);
    let mut loss = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            loss += w.get(i, j) * y.get(i, j).powi(2);
        }
    }
    let mut grad = [0.0; 2];
    for (a, g) in grad.iter_mut().enumerate() {
        let db = s * propagator_partial(&c, &dc, a, delta, sys.omega_sq);
        for i in 0..2 {
            for j in 0..2 {
                *g -= 2.0 * w.get(i, j) * y.get(i, j) * db.get(i, j);
            }
        }
    }
    Ok((loss, grad))
}

/// Equal-energy weighted discrepancy between the exact flow and `B` (see
/// the module docs). Behaves like `delta^6 Omega^2 f_leading / 36` for small
/// `delta omega`.
pub fn linear_loss(params: NystromParams, delta: f64, omega_sq: f64) -> Result<f64> {
    Ok(loss_and_grad(params, delta, LinearSystem::new(omega_sq, 0.0)?, false)?.0)
}

/// `Tr(Y^T diag(1, Omega^2)^{-1} Y)` with `Y = e^{A delta} - B`.
pub fn linear_loss_isotropic(params: NystromParams, delta: f64, omega_sq: f64) -> Result<f64> {
    Ok(loss_and_grad(params, delta, LinearSystem::new(omega_sq, 0.0)?, true)?.0)
}

/// Weighted discrepancy between `e^{A_gamma delta}` and the stochastic
/// propagator, with its gradient in `(b1, beta1)`.
pub fn linear_loss_damped(
    params: NystromParams,
    delta: f64,
    sys: LinearSystem,
    isotropic: bool,
) -> Result<(f64, [f64; 2])> {
    loss_and_grad(params, delta, sys, isotropic)
}

/// Leading-order coefficient of the loss as `delta -> 0`:
/// `(6 beta1^2/b1 + 6 beta2^2/b2 - 2)^2 + (6 b2 beta1 - 6 b1 beta2 - 1)^2`.
pub fn f_leading(params: NystromParams) -> Result<f64> {
    params.validate()?;
    let NystromParams { b1, beta1 } = params;
    let (b2, beta2) = (1.0 - b1, 0.5 - beta1);
    let u = 6.0 * beta1 * beta1 / b1 + 6.0 * beta2 * beta2 / b2 - 2.0;
    let v = 6.0 * b2 * beta1 - 6.0 * b1 * beta2 - 1.0;
    Ok(u * u + v * v)
}

/// Grid search of [`f_leading`] over the box with spacing `step`, polished
/// by a local quasi-Newton search.
pub fn f_leading_minimizer(step: f64) -> Result<NystromParams> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::invalid("grid spacing must lie in (0, 1/2)"));
    }
    let n_b = (1.0 / step).round() as usize;
    let n_beta = (0.5 / step).round() as usize;
    let mut best = (f64::INFINITY, NystromParams::VERLET);
    for i in 1..n_b {
        for j in 0..=n_beta {
            let p = NystromParams {
                b1: i as f64 * step,
                beta1: (j as f64 * step).min(0.5),
            };
            let f = f_leading(p)?;
            if f < best.0 {
                best = (f, p);
            }
        }
    }
    let opts = FitOptions::default();
    let eval = |x: [f64; 2]| -> (f64, [f64; 2]) {
        let p = NystromParams { b1: x[0], beta1: x[1] };
        let h = 1e-7;
        let f = |q: NystromParams| f_leading(q).unwrap_or(f64::INFINITY);
        let g0 = (f(NystromParams { b1: x[0] + h, ..p }) - f(NystromParams { b1: x[0] - h, ..p })) / (2.0 * h);
        let g1 = (f(NystromParams { beta1: (x[1] + h).min(0.5), ..p })
            - f(NystromParams { beta1: (x[1] - h).max(0.0), ..p }))
            / ((x[1] + h).min(0.5) - (x[1] - h).max(0.0));
        (f(p), [g0, g1])
    };
    let (r, _) = minimize_multistart(eval, &[best.1.as_array()], &opts.bounds(), &opts.optim);
    Ok(NystromParams { b1: r.x[0], beta1: r.x[1] })
}

/// Minimizer over the parameter box of the weighted discrepancy between the
/// exact damped flow and the stochastic propagator, from `(1/2, 1/2)` and
/// four corner starts.
pub fn optimal_linear_params(delta: f64, omega_sq: f64, gamma: f64) -> Result<NystromParams> {
    optimal_linear_params_with(delta, LinearSystem::new(omega_sq, gamma)?, false)
}

pub fn optimal_linear_params_with(delta: f64, sys: LinearSystem, isotropic: bool) -> Result<NystromParams> {
    check_step(delta)?;
    let opts = FitOptions::default();
    let bounds = opts.bounds();
    let starts = [[0.5, 0.5], [0.1, 0.0], [0.1, 0.5], [0.9, 0.0], [0.9, 0.5]];
    let eval = |x: [f64; 2]| {
        loss_and_grad(NystromParams { b1: x[0], beta1: x[1] }, delta, sys, isotropic)
            .unwrap_or((f64::INFINITY, [f64::NAN; 2]))
    };
    let (r, _) = minimize_multistart(eval, &starts, &bounds, &opts.optim);
    Ok(NystromParams { b1: r.x[0], beta1: r.x[1] })
}

/// `kappa` in `trace(B) / 2 = 1 - z/2 + kappa z^2`, `z = delta^2 Omega`.
fn half_trace_curvature(c: &NystromCoefficients) -> f64 {
    0.5 * c.a21 * (c.beta2 + c.b2 * c.c1)
}

/// Half trace `a(z)` of the propagator as a function of `z = delta^2 Omega`.
pub fn half_trace(params: NystromParams, z: f64) -> Result<f64> {
    let c = derive_coefficients(params)?;
    Ok(1.0 - 0.5 * z + half_trace_curvature(&c) * z * z)
}

/// Right end `z*` of the stability interval `[0, z*]` on which `|a(z)| <= 1`.
pub fn max_stable_z(params: NystromParams) -> Result<f64> {
    let k = half_trace_curvature(&derive_coefficients(params)?);
    // roots of a(z) = -1: k z^2 - z/2 + 2 = 0; of a(z) = 1: z (k z - 1/2) = 0
    if k == 0.0 {
        return Ok(4.0);
    }
    let disc = 0.25 - 8.0 * k;
    if k < 0.0 {
        return Ok((0.5 - disc.sqrt()) / (2.0 * k));
    }
    if disc >= 0.0 {
        // smaller root, written to avoid cancellation
        Ok(4.0 / (0.5 + disc.sqrt()))
    } else {
        Ok(0.5 / k)
    }
}

/// Largest `delta` with `|trace(B)/2| <= 1` on the whole of `[0, delta]`.
pub fn max_stable_step(params: NystromParams, omega_sq: f64) -> Result<f64> {
    check_system(omega_sq, 0.0)?;
    Ok((max_stable_z(params)? / omega_sq).sqrt())
}

/// All maximal intervals of `z >= 0` where `|a(z)| <= 1`, the last one
/// possibly unbounded (`f64::INFINITY`).
pub fn stability_intervals(params: NystromParams) -> Result<Vec<(f64, f64)>> {
    let k = half_trace_curvature(&derive_coefficients(params)?);
    // crossing points of a(z) with +-1 for z > 0
    let mut pts = vec![0.0];
    if k != 0.0 {
        let disc = 0.25 - 8.0 * k;
        if disc >= 0.0 {
            pts.push((0.5 - disc.sqrt()) / (2.0 * k));
            pts.push((0.5 + disc.sqrt()) / (2.0 * k));
        }
        pts.push(0.5 / k);
    } else {
        pts.push(4.0);
    }
    pts.retain(|z| *z >= 0.0);
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    pts.push(f64::INFINITY);
    let inside = |z: f64| {
        let a = 1.0 - 0.5 * z + k * z * z;
        a.abs() <= 1.0
    };
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in pts.windows(2) {
        let mid = if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { w[0] + 1.0 };
        if inside(mid) {
            match out.last_mut() {
                Some(last) if last.1 == w[0] => last.1 = w[1],
                _ => out.push((w[0], w[1])),
            }
        }
    }
    Ok(out)
}

/// Initial states for the strong-order experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongOrderStart {
    Zero,
    /// Draws from the invariant Gaussian, `q ~ N(0, T/Omega)`, `p ~ N(0, T)`.
    Stationary,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongOrderResult {
    pub deltas: Vec<f64>,
    /// RMS one-step error in the norm `sqrt(q^2 + p^2 / Omega)`.
    pub rms_errors: Vec<f64>,
    pub order: f64,
}

/// Settings of [`local_strong_order_check`] that rarely change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongOrderOptions {
    pub start: StrongOrderStart,
    /// Fine substeps per coarse step for the reference solution.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for StrongOrderOptions {
    fn default() -> Self {
        StrongOrderOptions {
            start: StrongOrderStart::Zero,
            substeps: 200,
            seed: 0,
        }
    }
}

/// Monte-Carlo RMS one-step error of the stochastic Nyström step against the
/// exact solution driven by the same Brownian path, and its fitted order in
/// `delta`.
///
/// The reference is propagated exactly over each of `substeps` fine
/// intervals, with the stochastic integral over an interval taken at its
/// midpoint. The scheme's increment is the coarsened OU increment built from
/// the same normals.
pub fn local_strong_order_check(
    params: NystromParams,
    omega_sq: f64,
    gamma: f64,
    sigma: f64,
    deltas: &[f64],
    n_samples: usize,
    opts: &StrongOrderOptions,
) -> Result<StrongOrderResult> {
    let sys = LinearSystem::new(omega_sq, gamma)?;
    let langevin = LangevinParams::new(gamma, sigma)?;
    if gamma <= 0.0 {
        return Err(Error::invalid("strong-order check needs positive friction"));
    }
    if deltas.len() < 2 || n_samples == 0 || opts.substeps == 0 {
        return Err(Error::invalid("need two or more steps, samples and substeps"));
    }
    let temperature = langevin.temperature().unwrap_or(0.0);
    let mut rms = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        check_step(delta)?;
        let n = opts.substeps;
        let h = delta / n as f64;
        let fine = exact_propagator(sys.omega_sq, gamma, h)?;
        let half = exact_propagator(sys.omega_sq, gamma, 0.5 * h)?;
        // column of e^{A h/2} hit by the noise (0, sigma sqrt(h) R)
        let kick = [half.get(0, 1) * sigma * h.sqrt(), half.get(1, 1) * sigma * h.sqrt()];
        let weights = crate::datagen::noise_weights(&langevin, h, n);
        let b = stochastic_propagator(params, delta, omega_sq, gamma)?;
        let sq: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|s| {
                let id = (di * n_samples + s) as u64;
                let mut init_rng = rng::stream(opts.seed, id, Purpose::Initial);
                let x0 = match opts.start {
                    StrongOrderStart::Zero => [0.0, 0.0],
                    StrongOrderStart::Fixed(x) => x,
                    StrongOrderStart::Stationary => [
                        (temperature / omega_sq).sqrt() * rng::normal(&mut init_rng),
                        temperature.sqrt() * rng::normal(&mut init_rng),
                    ],
                };
                let mut noise_rng = rng::stream(opts.seed, id, Purpose::Noise);
                let mut x = x0;
                let mut xi = 0.0;
                for w in &weights {
                    let r = rng::normal(&mut noise_rng);
                    let y = fine.apply(x);
                    x = [y[0] + kick[0] * r, y[1] + kick[1] * r];
                    xi += w * r;
                }
                let y = b.apply(x0);
                let (eq, ep) = (y[0] - x[0], y[1] + xi - x[1]);
                eq * eq + ep * ep / omega_sq
            })
            .collect();
        rms.push((sq.iter().sum::<f64>() / n_samples as f64).sqrt());
    }
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = rms.iter().map(|e| e.ln()).collect();
    Ok(StrongOrderResult {
        deltas: deltas.to_vec(),
        order: log_log_slope(&lx, &ly),
        rms_errors: rms,
    })
}
