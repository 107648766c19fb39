//! Subcommand implementations. Each writes its outputs into `out` and
//! returns the file names, which end up in `run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nystrom_fit::datagen::{fpu_initials, generate_ensemble, long_run, run, sample_stationary_initial, EnsembleMeta, TrajectoryEnsemble};
use nystrom_fit::inference::{derived_seed, estimate, FitOptions, FitResult, LossMode};
use nystrom_fit::integrators::{NystromParams, Stepper};
use nystrom_fit::io::{read_ensemble, read_json, write_columns, write_ensemble, write_json};
use nystrom_fit::linear::{
    f_leading, f_leading_minimizer, linear_loss_damped, max_stable_z, optimal_linear_params_with, stability_intervals,
    LinearSystem,
};
use nystrom_fit::metrics::{
    acf, avg_relative_rmse, empirical_pdf, l1_angle_error, l1_energy_error, phase_angles, relative_rmse, rmse, tvd,
    ScalarSeries,
};
use nystrom_fit::models::{ForceField, Model, State};
use nystrom_fit::rng::{self, Purpose};

use crate::config::{ExperimentConfig, InitialKind, SchemeChoice, SchemeName};
use crate::error::CliError;

// data-set tags for derived_seed
const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_POOL: u64 = 3;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Number of steps of size `step` covering `t`, rejecting grids that do not
/// divide it.
fn steps_for(t: f64, step: f64, what: &str) -> Result<usize, CliError> {
    let n = (t / step).round();
    if n < 1.0 || (n * step - t).abs() > 1e-9 * t {
        return Err(bad(format!("{what}: {t} is not a whole number of steps of {step}")));
    }
    Ok(n as usize)
}

/// Scalar observable tracked by the statistics: the total stiff energy for
/// the FPU chain, the oscillator energy for the linear model.
fn observable(model: &Model, s: &State) -> f64 {
    match model {
        Model::Fpu(f) => f.total_stiff_energy(s),
        Model::Linear(l) => 0.5 * s.q.iter().zip(&s.p).map(|(q, p)| l.omega_sq() * q * q + p * p).sum::<f64>(),
    }
}

fn gaussian_initials(model: &Model, count: usize, seed: u64) -> Result<Vec<State>, CliError> {
    let Model::Linear(l) = model else {
        return Err(bad("gaussian initial states are only defined for the linear model"));
    };
    let sq = 1.0 / l.omega_sq().sqrt();
    let d = model.dim();
    (0..count)
        .map(|m| {
            let mut r = rng::stream(seed, m as u64, Purpose::Initial);
            let q = (0..d).map(|_| sq * rng::normal(&mut r)).collect();
            let p = (0..d).map(|_| rng::normal(&mut r)).collect();
            State::new(q, p).map_err(CliError::from)
        })
        .collect()
}

fn initial_states(cfg: &ExperimentConfig, count: usize, seed: u64) -> Result<Vec<State>, CliError> {
    let model = cfg.model()?;
    match cfg.data.initial {
        InitialKind::Harmonic => {
            let fpu = model.as_fpu().ok_or_else(|| bad("harmonic initial states need the FPU model"))?;
            Ok(fpu_initials(fpu, count, seed))
        }
        InitialKind::Gaussian => gaussian_initials(&model, count, seed),
        InitialKind::Stationary => {
            let lp = cfg.langevin()?;
            let pool_seed = derived_seed(cfg.seed, TAG_POOL, 0);
            let start = match model {
                Model::Fpu(f) => fpu_initials(&f, 1, pool_seed).remove(0),
                Model::Linear(_) => gaussian_initials(&model, 1, pool_seed)?.remove(0),
            };
            let pool = long_run(&model, lp, &start, &cfg.long_run_config(), pool_seed)?;
            let mut r = rng::stream(seed, 0, Purpose::Resample);
            Ok(sample_stationary_initial(&pool, count, &mut r)?)
        }
    }
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let model = cfg.model()?;
    let spec = cfg.generator()?;
    let d = &cfg.data;
    let n_coarse = steps_for(d.t_train, d.gap as f64 * d.h, "data.t_train")?;
    let init = initial_states(cfg, d.trajectories, derived_seed(cfg.seed, TAG_TRAIN, 0))?;
    let ens = generate_ensemble(&model, &spec, &init, d.gap, n_coarse, derived_seed(cfg.seed, TAG_TRAIN, 1))?;
    write_ensemble(&out.join("ensemble"), &ens)?;
    Ok(vec!["ensemble".into()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    /// Stochastic when the config has a [langevin] section.
    Auto,
    Deterministic,
    Stochastic,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub data: String,
    pub delta: f64,
    pub gap: usize,
    pub subsample: usize,
    pub result: FitResult,
}

pub fn infer(cfg: &ExperimentConfig, data: &Path, mode: ModeArg, subsample: usize, out: &Path) -> Result<Vec<String>, CliError> {
    let mut ens = read_ensemble(data)?;
    if subsample > 1 {
        ens = ens.subsample(subsample)?;
    }
    let mode = match mode {
        ModeArg::Auto if cfg.is_stochastic() => LossMode::Stochastic,
        ModeArg::Auto | ModeArg::Deterministic => LossMode::Deterministic,
        ModeArg::Stochastic => LossMode::Stochastic,
    };
    if mode == LossMode::Stochastic && ens.noise.is_none() {
        return Err(bad("stochastic fitting needs noise columns (xi) in the data"));
    }
    let options = FitOptions {
        multistart: cfg.fit.multistart,
        ..FitOptions::default()
    };
    let theta0 = NystromParams::new(cfg.fit.theta0[0], cfg.fit.theta0[1])?;
    let result = estimate(&ens, mode, theta0, &options)?;
    let file = FitFile {
        data: data.display().to_string(),
        delta: ens.delta(),
        gap: ens.meta.gap,
        subsample,
        result,
    };
    write_json(&out.join("fit.json"), &file)?;
    Ok(vec!["fit.json".into()])
}

/// Where the Nyström parameters for `simulate` come from.
pub enum ThetaSource {
    Given(NystromParams),
    FitFile(PathBuf),
    Config,
}

fn resolve_theta(cfg: &ExperimentConfig, src: &ThetaSource) -> Result<Option<NystromParams>, CliError> {
    Ok(match src {
        ThetaSource::Given(p) => Some(*p),
        ThetaSource::FitFile(path) => Some(read_json::<FitFile>(path)?.result.theta),
        ThetaSource::Config => cfg.simulate.theta.map(|t| NystromParams { b1: t[0], beta1: t[1] }),
    })
}

pub fn simulate(cfg: &ExperimentConfig, theta: &ThetaSource, out: &Path) -> Result<Vec<String>, CliError> {
    let model = cfg.model()?;
    let s = &cfg.simulate;
    let theta = resolve_theta(cfg, theta)?;
    if s.scheme == SchemeChoice::Named(SchemeName::Nystrom) && theta.is_none() {
        return Err(bad("the nystrom scheme needs parameters: --theta, --fit or simulate.theta"));
    }
    let step = s.gap as f64 * cfg.data.h;
    let spec = cfg.scheme_spec(s.scheme, theta, step)?;
    let n_rec = steps_for(s.t_test, step * s.record_every as f64, "simulate.t_test")?;
    let n_steps = n_rec * s.record_every;
    let init = initial_states(cfg, s.trajectories, derived_seed(cfg.seed, TAG_TEST, 0))?;
    let noise_seed = derived_seed(cfg.seed, TAG_TEST, 1);
    let stepper = Stepper::new(&spec)?;
    // the noise stream is shared across gaps: each coarse step consumes
    // `gap` fine-step normals
    let runs = init
        .par_iter()
        .enumerate()
        .map(|(m, x0)| {
            let mut r = rng::stream(noise_seed, m as u64, Purpose::Noise);
            run(&model, &stepper, x0, n_steps, s.record_every, s.gap, spec.is_stochastic(), &mut r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((m, i)) = runs
        .iter()
        .enumerate()
        .filter_map(|(m, r)| r.diverged_at.map(|i| (m, i)))
        .min_by_key(|&(_, i)| i)
    {
        return Err(CliError::Diverged { trajectory: m, step: i });
    }
    let dt = step * s.record_every as f64;
    let times: Vec<f64> = (0..=n_rec).map(|i| i as f64 * dt).collect();
    let mut states = Vec::with_capacity(runs.len());
    let mut noise = Vec::with_capacity(runs.len());
    for r in runs {
        states.push(r.states);
        if let Some(n) = r.noise {
            noise.push(n);
        }
    }
    let ens = TrajectoryEnsemble {
        times,
        states,
        noise: spec.is_stochastic().then_some(noise),
        meta: EnsembleMeta {
            model,
            generator: spec,
            gap: s.record_every,
            seed: noise_seed,
        },
    };
    write_ensemble(&out.join("ensemble"), &ens)?;

    let (mean, std) = moments(&ens, &model);
    write_columns(&out.join("energies.csv"), &["t", "mean_energy", "std_energy"], &[&ens.times, &mean, &std])?;
    Ok(vec!["ensemble".into(), "energies.csv".into()])
}

/// Mean and standard deviation of the observable over trajectories.
fn moments(ens: &TrajectoryEnsemble, model: &Model) -> (Vec<f64>, Vec<f64>) {
    let m = ens.n_trajectories() as f64;
    (0..ens.times.len())
        .map(|i| {
            let v: Vec<f64> = ens.states.iter().map(|t| observable(model, &t[i])).collect();
            let mean = v.iter().sum::<f64>() / m;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
            (mean, var.sqrt())
        })
        .unzip()
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub test: String,
    pub delta: f64,
    /// Test step over reference step.
    pub ratio: usize,
    pub n_trajectories: usize,
    pub n_times: usize,
    pub rel_rmse_energy: f64,
    /// Time integrals of the pointwise L1 errors (FPU only).
    pub l1_energy: Option<f64>,
    pub l1_angle: Option<f64>,
    pub acf_rmse: f64,
    pub tvd: f64,
}

/// Reference on the test grid, both cut to common sizes.
fn align(reference: &TrajectoryEnsemble, test: &TrajectoryEnsemble) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble, usize), CliError> {
    if reference.meta.model != test.meta.model {
        return Err(bad("reference and test use different models"));
    }
    let (dr, dt) = (reference.delta(), test.delta());
    let k = (dt / dr).round();
    if k < 1.0 || (k * dr - dt).abs() > 1e-9 * dt {
        return Err(bad(format!("test step {dt} is not a multiple of the reference step {dr}")));
    }
    let k = k as usize;
    let r = reference.subsample(k)?;
    let n = r.n_transitions().min(test.n_transitions());
    let m = r.n_trajectories().min(test.n_trajectories());
    let r = r.truncate_time(n).take(m);
    let t = test.truncate_time(n).take(m);
    let scale = r.times.last().copied().unwrap_or(1.0).abs().max(1.0);
    if r.times.iter().zip(&t.times).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
        return Err(bad("reference and test time grids do not line up"));
    }
    Ok((r, t, k))
}

fn column_mean(rows: &[ScalarSeries]) -> Vec<f64> {
    let n = rows[0].len();
    (0..n).map(|i| rows.iter().map(|r| r.values[i]).sum::<f64>() / rows.len() as f64).collect()
}

pub fn analyze(cfg: &ExperimentConfig, reference: &Path, tests: &[PathBuf], out: &Path) -> Result<Vec<String>, CliError> {
    if tests.is_empty() {
        return Err(bad("analyze needs at least one --test ensemble"));
    }
    let full_ref = read_ensemble(reference)?;
    let a = &cfg.analysis;
    let mut rows = Vec::with_capacity(tests.len());
    let mut outputs = vec!["metrics.csv".to_string(), "metrics.json".to_string()];
    for (idx, path) in tests.iter().enumerate() {
        let test = read_ensemble(path)?;
        let (r, t, ratio) = align(&full_ref, &test)?;
        let model = r.meta.model;
        let delta = t.delta();
        let obs = |e: &TrajectoryEnsemble| -> Vec<Vec<f64>> {
            e.states.iter().map(|tr| tr.iter().map(|s| observable(&model, s)).collect()).collect()
        };
        let (or, ot) = (obs(&r), obs(&t));

        let per_traj = or
            .iter()
            .zip(&ot)
            .map(|(x, y)| {
                relative_rmse(
                    &ScalarSeries::new(r.times.clone(), x.clone())?,
                    &ScalarSeries::new(t.times.clone(), y.clone())?,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rel = avg_relative_rmse(&per_traj)?;

        let mut l1 = (None, None);
        if let Model::Fpu(f) = model {
            let energies = |e: &TrajectoryEnsemble| -> Result<Vec<Vec<_>>, CliError> {
                e.states
                    .iter()
                    .map(|tr| tr.iter().map(|s| f.stiff_energies(s).map_err(CliError::from)).collect())
                    .collect()
            };
            let (er, et) = (energies(&r)?, energies(&t)?);
            let e_series = er
                .iter()
                .zip(&et)
                .map(|(x, y)| l1_energy_error(&r.times, x, y, delta))
                .collect::<Result<Vec<_>, _>>()?;
            let e_mean = column_mean(&e_series);
            let mut cols: Vec<(&str, Vec<f64>)> = vec![("t", r.times.clone()), ("l1_energy", e_mean.clone())];
            l1.0 = Some(e_mean.iter().sum());
            if f.springs() == 3 {
                let angles = |es: &[Vec<_>]| -> Result<Vec<Vec<(f64, f64)>>, CliError> {
                    es.iter()
                        .map(|tr| tr.iter().map(|e| phase_angles(e).map_err(CliError::from)).collect())
                        .collect()
                };
                let (ar, at) = (angles(&er)?, angles(&et)?);
                let a_series = ar
                    .iter()
                    .zip(&at)
                    .map(|(x, y)| l1_angle_error(&r.times, x, y, delta))
                    .collect::<Result<Vec<_>, _>>()?;
                let a_mean = column_mean(&a_series);
                l1.1 = Some(a_mean.iter().sum());
                cols.push(("l1_angle", a_mean));
            }
            let name = format!("errors_{idx}.csv");
            let header: Vec<&str> = cols.iter().map(|c| c.0).collect();
            let data: Vec<&[f64]> = cols.iter().map(|c| c.1.as_slice()).collect();
            write_columns(&out.join(&name), &header, &data)?;
            outputs.push(name);
        }

        // the lag window cannot exceed the recorded span
        let max_lag = a.max_lag.min(delta * t.n_transitions() as f64);
        let acf_r = acf(&or, max_lag, delta)?;
        let acf_t = acf(&ot, max_lag, delta)?;
        let name = format!("acf_{idx}.csv");
        write_columns(&out.join(&name), &["lag", "reference", "test"], &[&acf_r.times, &acf_r.values, &acf_t.values])?;
        outputs.push(name);

        let flat = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
        let range = (a.range[0], a.range[1]);
        let pdf_r = empirical_pdf(&flat(&or), a.bins, range)?;
        let pdf_t = empirical_pdf(&flat(&ot), a.bins, range)?;
        let name = format!("pdf_{idx}.csv");
        write_columns(&out.join(&name), &["center", "reference", "test"], &[&pdf_r.bin_centers(), &pdf_r.masses, &pdf_t.masses])?;
        outputs.push(name);

        rows.push(MetricsRow {
            test: path.display().to_string(),
            delta,
            ratio,
            n_trajectories: t.n_trajectories(),
            n_times: t.times.len(),
            rel_rmse_energy: rel,
            l1_energy: l1.0,
            l1_angle: l1.1,
            acf_rmse: rmse(&acf_r, &acf_t)?,
            tvd: tvd(&pdf_r, &pdf_t)?,
        });
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    write_json(&out.join("metrics.json"), &rows)?;
    Ok(outputs)
}

fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("test,delta,ratio,n_trajectories,n_times,rel_rmse_energy,l1_energy,l1_angle,acf_rmse,tvd\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.test),
            r.delta,
            r.ratio,
            r.n_trajectories,
            r.n_times,
            r.rel_rmse_energy,
            opt(r.l1_energy),
            opt(r.l1_angle),
            r.acf_rmse,
            r.tvd
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Contents of `leading.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadingSummary {
    pub minimizer: NystromParams,
    pub f_min: f64,
    pub f_verlet: f64,
    pub max_stable_z: f64,
    /// Stable step over the Verlet one at equal `Omega`.
    pub step_ratio: f64,
    pub stability_intervals: Vec<(f64, f64)>,
}

pub fn linear(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let lc = cfg.linear.as_ref().ok_or_else(|| bad("the linear command needs a [linear] section"))?;
    let omega_sq = match cfg.model()? {
        Model::Linear(l) => l.omega_sq(),
        Model::Fpu(f) => f.omega() * f.omega(),
    };
    let omega = omega_sq.sqrt();
    let jobs: Vec<(f64, f64)> = lc
        .delta_omega
        .iter()
        .flat_map(|&dw| lc.gammas.iter().map(move |&g| (dw, g)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(dw, gamma)| -> Result<[f64; 8], CliError> {
            let delta = dw / omega;
            let sys = LinearSystem::new(omega_sq, gamma)?;
            let p = optimal_linear_params_with(delta, sys, false)?;
            let iso = optimal_linear_params_with(delta, sys, true)?;
            let (loss, _) = linear_loss_damped(p, delta, sys, false)?;
            Ok([dw, delta, gamma, p.b1, p.beta1, loss, iso.b1, iso.beta1])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let cols: Vec<Vec<f64>> = (0..8).map(col).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_columns(
        &out.join("linear_optimal.csv"),
        &["delta_omega", "delta", "gamma", "b1", "beta1", "loss", "b1_isotropic", "beta1_isotropic"],
        &refs,
    )?;

    // stability of the undamped optima
    let verlet_z = max_stable_z(NystromParams::VERLET)?;
    let mut st: [Vec<f64>; 6] = Default::default();
    for r in rows.iter().filter(|r| r[2] == 0.0) {
        let p = NystromParams { b1: r[3], beta1: r[4] };
        let z = max_stable_z(p)?;
        for (c, v) in st.iter_mut().zip([r[0], p.b1, p.beta1, z, z.sqrt() / omega, (z / verlet_z).sqrt()]) {
            c.push(v);
        }
    }
    let refs: Vec<&[f64]> = st.iter().map(Vec::as_slice).collect();
    write_columns(
        &out.join("stability.csv"),
        &["delta_omega", "b1", "beta1", "max_stable_z", "max_stable_step", "ratio_to_verlet"],
        &refs,
    )?;

    let p = f_leading_minimizer(0.01)?;
    let z = max_stable_z(p)?;
    let summary = LeadingSummary {
        minimizer: p,
        f_min: f_leading(p)?,
        f_verlet: f_leading(NystromParams::VERLET)?,
        max_stable_z: z,
        step_ratio: (z / verlet_z).sqrt(),
        stability_intervals: stability_intervals(p)?,
    };
    write_json(&out.join("leading.json"), &summary)?;
    Ok(vec!["linear_optimal.csv".into(), "stability.csv".into(), "leading.json".into()])
}

/// Contents of `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub version: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub outputs: Vec<String>,
}

pub fn write_run_record(cfg: &ExperimentConfig, command: &str, outputs: Vec<String>, out: &Path) -> Result<(), CliError> {
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let record = RunRecord {
        command,
        args: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg,
        outputs,
    };
    write_json(&out.join("run.json"), &record)?;
    Ok(())
}
