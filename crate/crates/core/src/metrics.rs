//! Error measures and ensemble statistics for comparing coarse runs with a
//! fine reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EnergyDecomposition;

/// A scalar observable on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        Ok(ScalarSeries { times, values })
    }

    /// Values at `t_i = t0 + i dt`.
    pub fn uniform(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|i| t0 + i as f64 * dt).collect();
        Self::new(times, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_aligned(a: &ScalarSeries, b: &ScalarSeries) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let scale = a.times.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    if a.times.iter().zip(&b.times).any(|(s, t)| (s - t).abs() > 1e-9 * scale) {
        return Err(Error::invalid("series are on different time grids"));
    }
    Ok(())
}

/// `sqrt(mean_i ((ref_i - test_i) / ref_i)^2)` over `i = 1..N_t`.
///
/// The initial point is skipped: both runs start from the same state, so it
/// only dilutes the average.
pub fn relative_rmse(reference: &ScalarSeries, test: &ScalarSeries) -> Result<f64> {
    check_aligned(reference, test)?;
    if reference.len() < 2 {
        return Err(Error::invalid("need at least one step after the initial point"));
    }
    let mut acc = 0.0;
    for i in 1..reference.len() {
        let r = reference.values[i];
        if r == 0.0 {
            return Err(Error::ZeroReference { index: i });
        }
        acc += ((r - test.values[i]) / r).powi(2);
    }
    Ok((acc / (reference.len() - 1) as f64).sqrt())
}

/// Mean of per-trajectory relative RMSEs.
pub fn avg_relative_rmse(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("no trajectories to average"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Plain RMSE between two aligned series, e.g. two autocovariance curves.
pub fn rmse(a: &ScalarSeries, b: &ScalarSeries) -> Result<f64> {
    check_aligned(a, b)?;
    if a.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// `(delta / I^F(t_i)) sum_j |I_j^C(t_i) - I_j^F(t_i)|` at each time.
pub fn l1_energy_error(
    times: &[f64],
    reference: &[EnergyDecomposition],
    test: &[EnergyDecomposition],
    delta: f64,
) -> Result<ScalarSeries> {
    if reference.len() != test.len() || reference.len() != times.len() {
        return Err(Error::invalid("energy series are not aligned"));
    }
    let mut out = Vec::with_capacity(times.len());
    for (i, (r, t)) in reference.iter().zip(test).enumerate() {
        if r.per_spring.len() != t.per_spring.len() {
            return Err(Error::invalid(format!("spring counts differ at index {i}")));
        }
        if r.total == 0.0 {
            return Err(Error::ZeroReference { index: i });
        }
        let s: f64 = r.per_spring.iter().zip(&t.per_spring).map(|(a, b)| (a - b).abs()).sum();
        out.push(s * delta / r.total);
    }
    ScalarSeries::new(times.to_vec(), out)
}

/// `(theta, phi)` with `theta = arccos(sqrt(I_3 / I))`, `phi = arctan(sqrt(I_2 / I_1))`.
///
/// `phi = pi/2` when `I_1 = 0`.
pub fn phase_angles(e: &EnergyDecomposition) -> Result<(f64, f64)> {
    if e.per_spring.len() != 3 {
        return Err(Error::invalid(format!("phase angles need 3 springs, got {}", e.per_spring.len())));
    }
    let [i1, i2, i3] = [e.per_spring[0], e.per_spring[1], e.per_spring[2]];
    if !(e.total > 0.0) {
        return Err(Error::Domain(format!("total stiff energy must be positive, got {}", e.total)));
    }
    let theta = (i3 / e.total).sqrt().min(1.0).acos();
    let phi = if i1 == 0.0 {
        std::f64::consts::FRAC_PI_2
    } else {
        (i2 / i1).sqrt().atan()
    };
    Ok((theta, phi))
}

/// `|theta^C - theta^F| delta + |phi^C - phi^F| delta` at each time.
pub fn l1_angle_error(
    times: &[f64],
    reference: &[(f64, f64)],
    test: &[(f64, f64)],
    delta: f64,
) -> Result<ScalarSeries> {
    if reference.len() != test.len() || reference.len() != times.len() {
        return Err(Error::invalid("angle series are not aligned"));
    }
    let v = reference
        .iter()
        .zip(test)
        .map(|(r, t)| ((r.0 - t.0).abs() + (r.1 - t.1).abs()) * delta)
        .collect();
    ScalarSeries::new(times.to_vec(), v)
}

/// Autocovariance at lags `tau = k delta <= max_lag`, averaged over
/// trajectories and time origins:
/// `mean(I_t I_{t+k}) - mean(I_t) mean(I_{t+k})`, the means taken over the
/// same pairs.
pub fn acf(series: &[Vec<f64>], max_lag: f64, delta: f64) -> Result<ScalarSeries> {
    if series.is_empty() {
        return Err(Error::invalid("no trajectories"));
    }
    if !(delta > 0.0) || !(max_lag >= 0.0) {
        return Err(Error::invalid("lag spacing must be positive and max_lag >= 0"));
    }
    let n = series[0].len();
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("trajectories have different lengths"));
    }
    let k_max = (max_lag / delta + 1e-9).floor() as usize;
    if k_max >= n {
        return Err(Error::invalid(format!(
            "max_lag {max_lag} needs {} points, series has {n}",
            k_max + 1
        )));
    }
    // per-trajectory sums, combined in order
    let parts: Vec<Vec<[f64; 3]>> = series
        .par_iter()
        .map(|s| {
            (0..=k_max)
                .map(|k| {
                    let mut acc = [0.0; 3];
                    for t in 0..n - k {
                        acc[0] += s[t] * s[t + k];
                        acc[1] += s[t];
                        acc[2] += s[t + k];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let mut acc = [0.0; 3];
        for p in &parts {
            for j in 0..3 {
                acc[j] += p[k][j];
            }
        }
        let count = (series.len() * (n - k)) as f64;
        values.push(acc[0] / count - (acc[1] / count) * (acc[2] / count));
    }
    ScalarSeries::uniform(0.0, delta, values)
}

/// Equal-width histogram as probability masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    /// Fraction of samples outside `[lo, hi]`.
    pub out_of_range: f64,
    pub n_samples: usize,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.masses.len()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.n_bins() as f64;
        (0..self.n_bins()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }
}

/// Bins `[lo + i w, lo + (i+1) w)`, the last one closed on the right.
/// Masses are counts over the total number of samples, so they add up to the
/// in-range fraction. Non-finite samples count as out of range.
pub fn empirical_pdf(samples: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("bad histogram range [{lo}, {hi}]")));
    }
    let mut counts = vec![0usize; n_bins];
    let mut outside = 0usize;
    let w = (hi - lo) / n_bins as f64;
    for &x in samples {
        if !(x >= lo && x <= hi) {
            outside += 1;
            continue;
        }
        let i = (((x - lo) / w).floor() as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let total = samples.len().max(1) as f64;
    Ok(Histogram {
        lo,
        hi,
        masses: counts.iter().map(|c| *c as f64 / total).collect(),
        out_of_range: outside as f64 / total,
        n_samples: samples.len(),
    })
}

/// `0.5 * sum |P_i - Q_i|` over the in-range bins.
pub fn tvd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.n_bins() != q.n_bins() || p.lo != q.lo || p.hi != q.hi {
        return Err(Error::invalid("histograms use different binning"));
    }
    Ok(0.5 * p.masses.iter().zip(&q.masses).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
