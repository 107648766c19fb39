//! Training and reference data: initial conditions, fine-step runs,
//! down-sampling and coarsening of the Brownian increments.
//!
//! All stochastic runs are driven by standard normals `R` drawn from the
//! trajectory's noise stream. A scheme that takes `k` base normals per step
//! combines them with the weights of [`noise_weights`], which makes a coarse
//! run at `delta = Gap h` see exactly the OU increment accumulated by a fine
//! BAOAB run at `h` from the same seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{SchemeSpec, Stepper, Workspace};
use crate::models::{FpuModel, ForceField, LangevinParams, Model, State, StiffCoordinates};
use crate::rng::{self, Purpose};

/// Provenance of a [`TrajectoryEnsemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub model: Model,
    /// Fine-step generator; its `step` is `h`.
    pub generator: SchemeSpec,
    pub gap: usize,
    pub seed: u64,
}

impl EnsembleMeta {
    pub fn h(&self) -> f64 {
        self.generator.step
    }

    /// Coarse step `delta = Gap h`.
    pub fn delta(&self) -> f64 {
        self.gap as f64 * self.generator.step
    }
}

/// `M` trajectories on the coarse grid `t_i = i Gap h`, `i = 0..=N_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    /// `states[m][i]`.
    pub states: Vec<Vec<State>>,
    /// `noise[m][i]` is the coarsened increment over `[t_i, t_{i+1}]`.
    pub noise: Option<Vec<Vec<Vec<f64>>>>,
    pub meta: EnsembleMeta,
}

impl TrajectoryEnsemble {
    pub fn n_trajectories(&self) -> usize {
        self.states.len()
    }

    /// Number of coarse transitions per trajectory, `N_t`.
    pub fn n_transitions(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn delta(&self) -> f64 {
        self.meta.delta()
    }

    pub fn dim(&self) -> usize {
        self.states
            .first()
            .and_then(|t| t.first())
            .map_or(0, State::dim)
    }

    /// Checks shapes and the presence of noise for stochastic generators.
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.times.len() < 2 {
            return Err(Error::DegenerateData(
                "ensemble needs at least one trajectory and one transition".into(),
            ));
        }
        let d = self.dim();
        for traj in &self.states {
            if traj.len() != self.times.len() || traj.iter().any(|s| s.dim() != d) {
                return Err(Error::invalid("ragged trajectory ensemble"));
            }
        }
        if self.meta.generator.is_stochastic() != self.noise.is_some() {
            return Err(Error::invalid(
                "noise increments must be present exactly for stochastic generators",
            ));
        }
        if let Some(noise) = &self.noise {
            if noise.len() != self.states.len()
                || noise
                    .iter()
                    .any(|n| n.len() != self.n_transitions() || n.iter().any(|x| x.len() != d))
            {
                return Err(Error::invalid("noise increments do not match the states"));
            }
        }
        Ok(())
    }

    /// Keeps the first `n` trajectories.
    pub fn take(&self, n: usize) -> TrajectoryEnsemble {
        let n = n.min(self.states.len());
        TrajectoryEnsemble {
            times: self.times.clone(),
            states: self.states[..n].to_vec(),
            noise: self.noise.as_ref().map(|v| v[..n].to_vec()),
            meta: self.meta.clone(),
        }
    }

    /// Keeps the first `n_t` transitions.
    pub fn truncate_time(&self, n_t: usize) -> TrajectoryEnsemble {
        let n_t = n_t.min(self.n_transitions());
        TrajectoryEnsemble {
            times: self.times[..=n_t].to_vec(),
            states: self.states.iter().map(|t| t[..=n_t].to_vec()).collect(),
            noise: self
                .noise
                .as_ref()
                .map(|v| v.iter().map(|t| t[..n_t].to_vec()).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Keeps every `k`-th coarse state, turning `Gap` into `k Gap`. Trailing
    /// transitions that do not fill a block are dropped. Noise increments are
    /// combined as `sum_j e^{-gamma (k-1-j) delta} xi_j`, the OU increment
    /// over the longer interval driven by the same path.
    pub fn subsample(&self, k: usize) -> Result<TrajectoryEnsemble> {
        if k == 0 {
            return Err(Error::invalid("subsampling factor must be at least 1"));
        }
        let n_t = self.n_transitions() / k;
        if n_t == 0 {
            return Err(Error::invalid(format!(
                "{} transitions cannot be grouped in blocks of {k}",
                self.n_transitions()
            )));
        }
        let decay = self
            .meta
            .generator
            .langevin
            .map_or(1.0, |l| l.decay(self.delta()));
        let noise = self.noise.as_ref().map(|v| {
            v.iter()
                .map(|traj| {
                    (0..n_t)
                        .map(|i| {
                            let mut acc = vec![0.0; self.dim()];
                            for xi in &traj[i * k..(i + 1) * k] {
                                for (a, x) in acc.iter_mut().zip(xi) {
                                    *a = decay * *a + x;
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        });
        let mut meta = self.meta.clone();
        meta.gap *= k;
        Ok(TrajectoryEnsemble {
            times: (0..=n_t).map(|i| (i * meta.gap) as f64 * meta.h()).collect(),
            states: self
                .states
                .iter()
                .map(|t| (0..=n_t).map(|i| t[i * k].clone()).collect())
                .collect(),
            noise,
            meta,
        })
    }
}

/// Harmonic-regime FPU initial state with given perturbations of the stiff
/// coordinates: `x0 = y0 = 1`, `x1 = 1/omega + zeta`, `y1 = 1 + eta`.
pub fn fpu_initial_from_perturbation(model: &FpuModel, zeta: &[f64], eta: &[f64]) -> Result<State> {
    let m = model.springs();
    if zeta.len() != m || eta.len() != m {
        return Err(Error::invalid("one perturbation per stiff spring expected"));
    }
    let c = StiffCoordinates {
        x0: vec![1.0; m],
        x1: zeta.iter().map(|z| 1.0 / model.omega() + z).collect(),
        y0: vec![1.0; m],
        y1: eta.iter().map(|e| 1.0 + e).collect(),
    };
    model.from_stiff_coordinates(&c)
}

/// Draws the harmonic-regime initial state with `zeta, eta ~ N(0, 1) / omega`.
pub fn sample_fpu_initial<R: Rng + ?Sized>(model: &FpuModel, rng: &mut R) -> State {
    let m = model.springs();
    let w = model.omega();
    let zeta: Vec<f64> = (0..m).map(|_| rng::normal(rng) / w).collect();
    let eta: Vec<f64> = (0..m).map(|_| rng::normal(rng) / w).collect();
    fpu_initial_from_perturbation(model, &zeta, &eta).expect("lengths match by construction")
}

/// `count` harmonic-regime initial states, one independent stream each.
pub fn fpu_initials(model: &FpuModel, count: usize, seed: u64) -> Vec<State> {
    (0..count)
        .map(|m| sample_fpu_initial(model, &mut rng::stream(seed, m as u64, Purpose::Initial)))
        .collect()
}

/// Uniform draws with replacement from stored long-run states.
pub fn sample_stationary_initial<R: Rng + ?Sized>(
    long_run: &[State],
    count: usize,
    rng: &mut R,
) -> Result<Vec<State>> {
    if long_run.is_empty() {
        return Err(Error::invalid("long run has no stored states"));
    }
    Ok((0..count)
        .map(|_| long_run[rng.random_range(0..long_run.len())].clone())
        .collect())
}

/// Settings of the long BAOAB run used for stationary initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongRunConfig {
    pub h: f64,
    pub total_time: f64,
    /// Fraction of the run discarded as burn-in.
    pub burn_in: f64,
    /// Time between stored states.
    pub store_interval: f64,
}

impl Default for LongRunConfig {
    fn default() -> Self {
        LongRunConfig {
            h: 1e-3,
            total_time: 2500.0,
            burn_in: 0.1,
            store_interval: 0.1,
        }
    }
}

/// Stationary samples from one long BAOAB run started at `initial`.
pub fn long_run(
    model: &Model,
    langevin: LangevinParams,
    initial: &State,
    cfg: &LongRunConfig,
    seed: u64,
) -> Result<Vec<State>> {
    if !(cfg.h > 0.0 && cfg.total_time > 0.0 && (0.0..1.0).contains(&cfg.burn_in)) {
        return Err(Error::invalid("long run needs h > 0, T > 0 and burn-in in [0, 1)"));
    }
    let every = ((cfg.store_interval / cfg.h).round() as usize).max(1);
    let n_rec = (cfg.total_time / cfg.h / every as f64).floor() as usize;
    let stepper = Stepper::new(&SchemeSpec::baoab(langevin, cfg.h))?;
    let mut rng = rng::stream(seed, 0, Purpose::LongRun);
    let out = run(model, &stepper, initial, n_rec * every, every, 1, false, &mut rng)?;
    if let Some(i) = out.diverged_at {
        return Err(Error::DegenerateData(format!("long run diverged at step {i}")));
    }
    let skip = (cfg.burn_in * n_rec as f64).ceil() as usize;
    Ok(out.states.into_iter().skip(skip + 1).collect())
}

/// Weights `w_j`, `j = 1..=gap`, turning `gap` standard normals drawn at fine
/// step `h` into the OU increment over `gap h`:
/// `xi = sum_j w_j R_j`, `w_j = sigma sqrt((1 - e^{-2 gamma h}) / (2 gamma)) e^{-gamma (gap - j) h}`.
///
/// With `gamma = 0` this is `sigma sqrt(h)` for every `j`.
pub fn noise_weights(langevin: &LangevinParams, h: f64, gap: usize) -> Vec<f64> {
    let s = langevin.ou_increment_std(h);
    (1..=gap)
        .map(|j| s * (-langevin.gamma * (gap - j) as f64 * h).exp())
        .collect()
}

/// Coarsened increments from per-fine-step standard normals `r[n]` (each of
/// length `d`), summed over consecutive blocks of `gap`.
pub fn coarsen_noise(
    r: &[Vec<f64>],
    langevin: &LangevinParams,
    h: f64,
    gap: usize,
) -> Result<Vec<Vec<f64>>> {
    if gap == 0 || r.len() % gap != 0 {
        return Err(Error::invalid(format!(
            "{} fine increments cannot be split into blocks of {gap}",
            r.len()
        )));
    }
    let w = noise_weights(langevin, h, gap);
    r.chunks(gap)
        .map(|block| {
            let d = block[0].len();
            let mut xi = vec![0.0; d];
            for (wj, rj) in w.iter().zip(block) {
                if rj.len() != d {
                    return Err(Error::invalid("fine increments have unequal lengths"));
                }
                for k in 0..d {
                    xi[k] += wj * rj[k];
                }
            }
            Ok(xi)
        })
        .collect()
}

/// Every `gap`-th state, starting with the first.
pub fn downsample<T: Clone>(fine: &[T], gap: usize) -> Result<Vec<T>> {
    if fine.is_empty() || gap == 0 || (fine.len() - 1) % gap != 0 {
        return Err(Error::invalid(format!(
            "{} steps are not a multiple of Gap = {gap}",
            fine.len().saturating_sub(1)
        )));
    }
    Ok(fine.iter().step_by(gap).cloned().collect())
}

/// Full-resolution trajectory, with the standard normals that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTrajectory {
    pub states: Vec<State>,
    /// `increments[n]` drove step `n -> n+1`; present for stochastic schemes.
    pub increments: Option<Vec<Vec<f64>>>,
    pub diverged_at: Option<usize>,
}

/// Runs `spec` for `n_steps` from `initial`, keeping every state.
pub fn generate_fine<F: ForceField + ?Sized, R: Rng + ?Sized>(
    force: &F,
    spec: &SchemeSpec,
    initial: &State,
    n_steps: usize,
    rng: &mut R,
) -> Result<FineTrajectory> {
    if initial.dim() != force.dim() {
        return Err(Error::invalid("initial state does not match the model"));
    }
    let stepper = Stepper::new(spec)?;
    let d = initial.dim();
    let s = spec.langevin.map_or(0.0, |l| l.ou_increment_std(spec.step));
    let mut ws = Workspace::new(d);
    let mut cur = initial.clone();
    stepper.prime(force, &cur.q, &mut ws);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(cur.clone());
    let mut increments = stepper.is_stochastic().then(|| Vec::with_capacity(n_steps));
    let mut r = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut diverged_at = None;
    for n in 0..n_steps {
        if let Some(inc) = increments.as_mut() {
            rng::fill_normals(rng, &mut r);
            for k in 0..d {
                xi[k] = s * r[k];
            }
            inc.push(r.clone());
        }
        stepper.step(force, &mut cur.q, &mut cur.p, &xi, &mut ws);
        states.push(cur.clone());
        if !cur.is_finite() {
            diverged_at = Some(n + 1);
            break;
        }
    }
    Ok(FineTrajectory {
        states,
        increments,
        diverged_at,
    })
}

/// Recorded output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// States at steps `0, every, 2 every, ...`; cut short at divergence,
    /// in which case the last entry is the first recorded non-finite state.
    pub states: Vec<State>,
    /// OU increment accumulated over each recorded interval.
    pub noise: Option<Vec<Vec<f64>>>,
    /// Step index of the first non-finite state.
    pub diverged_at: Option<usize>,
}

/// Streaming driver shared by data generation and coarse simulation.
///
/// Each step of a stochastic stepper consumes `noise_gap` standard-normal
/// vectors, combined with [`noise_weights`] at the base step
/// `stepper.step / noise_gap`. With `record_noise` the increments over each
/// recorded interval are accumulated with the weights for
/// `every * noise_gap` base steps, in the same order.
#[allow(clippy::too_many_arguments)]
pub fn run<F: ForceField + ?Sized, R: Rng + ?Sized>(
    force: &F,
    stepper: &Stepper,
    initial: &State,
    n_steps: usize,
    every: usize,
    noise_gap: usize,
    record_noise: bool,
    rng: &mut R,
) -> Result<RunOutput> {
    if every == 0 || n_steps % every != 0 {
        return Err(Error::invalid(format!(
            "{n_steps} steps cannot be recorded every {every}"
        )));
    }
    if noise_gap == 0 {
        return Err(Error::invalid("noise_gap must be at least 1"));
    }
    if initial.dim() != force.dim() {
        return Err(Error::invalid("initial state does not match the model"));
    }
    let d = initial.dim();
    let spec = *stepper.spec();
    let stochastic = stepper.is_stochastic();
    let base_h = spec.step / noise_gap as f64;
    let (step_w, rec_w) = match (stochastic, spec.langevin) {
        (true, Some(l)) => (
            noise_weights(&l, base_h, noise_gap),
            if record_noise {
                noise_weights(&l, base_h, every * noise_gap)
            } else {
                Vec::new()
            },
        ),
        _ => (Vec::new(), Vec::new()),
    };
    let record_noise = record_noise && stochastic;

    let mut ws = Workspace::new(d);
    let mut cur = initial.clone();
    stepper.prime(force, &cur.q, &mut ws);
    let mut states = Vec::with_capacity(n_steps / every + 1);
    states.push(cur.clone());
    let mut noise = record_noise.then(|| Vec::with_capacity(n_steps / every));
    let mut r = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut diverged_at = None;
    for n in 0..n_steps {
        let in_block = n % every;
        if stochastic {
            xi.fill(0.0);
            for (j, wj) in step_w.iter().enumerate() {
                rng::fill_normals(rng, &mut r);
                for k in 0..d {
                    xi[k] += wj * r[k];
                }
                if record_noise {
                    let w = rec_w[in_block * noise_gap + j];
                    for k in 0..d {
                        acc[k] += w * r[k];
                    }
                }
            }
        }
        stepper.step(force, &mut cur.q, &mut cur.p, &xi, &mut ws);
        let finite = cur.is_finite();
        if in_block + 1 == every || !finite {
            states.push(cur.clone());
            if let Some(nv) = noise.as_mut() {
                nv.push(std::mem::replace(&mut acc, vec![0.0; d]));
            }
        }
        if !finite {
            diverged_at = Some(n + 1);
            break;
        }
    }
    Ok(RunOutput {
        states,
        noise,
        diverged_at,
    })
}

/// Fine-step ensemble down-sampled to `delta = gap h`, `n_coarse`
/// transitions per trajectory. Trajectory `m` starts at `initial[m]` and uses
/// the noise stream `(seed, m)`.
pub fn generate_ensemble(
    model: &Model,
    generator: &SchemeSpec,
    initial: &[State],
    gap: usize,
    n_coarse: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if initial.is_empty() || n_coarse == 0 || gap == 0 {
        return Err(Error::invalid("need at least one trajectory, one transition and Gap >= 1"));
    }
    let stepper = Stepper::new(generator)?;
    let runs: Vec<Result<RunOutput>> = initial
        .par_iter()
        .enumerate()
        .map(|(m, x0)| {
            let mut rng = rng::stream(seed, m as u64, Purpose::Noise);
            run(model, &stepper, x0, n_coarse * gap, gap, 1, true, &mut rng)
        })
        .collect();
    let mut states = Vec::with_capacity(runs.len());
    let mut noise = Vec::with_capacity(runs.len());
    for (m, out) in runs.into_iter().enumerate() {
        let out = out?;
        if let Some(i) = out.diverged_at {
            return Err(Error::DegenerateData(format!(
                "trajectory {m} diverged at fine step {i}"
            )));
        }
        states.push(out.states);
        if let Some(n) = out.noise {
            noise.push(n);
        }
    }
    let h = generator.step;
    Ok(TrajectoryEnsemble {
        times: (0..=n_coarse).map(|i| (i * gap) as f64 * h).collect(),
        states,
        noise: generator.is_stochastic().then_some(noise),
        meta: EnsembleMeta {
            model: *model,
            generator: *generator,
            gap,
            seed,
        },
    })
}

/// Runs `scheme` from every initial state in parallel, recording every
/// `every` steps. Trajectory `m` draws from the noise stream `(seed, m)`, so a
/// coarse run with `noise_gap = Gap` is driven by the same Brownian path as
/// [`generate_ensemble`] at the fine step with the same seed. Divergence is
/// reported per trajectory, not as an error.
pub fn simulate_ensemble(
    model: &Model,
    scheme: &SchemeSpec,
    initial: &[State],
    n_steps: usize,
    every: usize,
    noise_gap: usize,
    seed: u64,
) -> Result<Vec<RunOutput>> {
    let stepper = Stepper::new(scheme)?;
    initial
        .par_iter()
        .enumerate()
        .map(|(m, x0)| {
            let mut rng = rng::stream(seed, m as u64, Purpose::Noise);
            run(model, &stepper, x0, n_steps, every, noise_gap, false, &mut rng)
        })
        .collect()
}
