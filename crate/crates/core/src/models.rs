//! Benchmark dynamical systems and their observables.
//!
//! All systems are separable, `H(q, p) = |p|^2 / 2 + V(q)`, so a model only
//! has to provide the force `g(q) = -grad V(q)` and, for gradient-based
//! parameter fitting, the action of the force Jacobian on a vector.
//!
//! Phase-space points are stored as two contiguous arrays (`q` then `p`),
//! never interleaved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::Mat2;

/// A phase-space point `(q, p)` of dimension `2d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    /// Builds a state, checking that `q` and `p` have the same nonzero length
    /// and finite entries.
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(Error::invalid(format!(
                "position and momentum lengths must match and be nonzero (got {} and {})",
                q.len(),
                p.len()
            )));
        }
        if !q.iter().chain(p.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("state entries must be finite"));
        }
        Ok(State { q, p })
    }

    pub fn zeros(dim: usize) -> Self {
        State {
            q: vec![0.0; dim],
            p: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }

    /// Concatenated `(q, p)` vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::invalid("phase-space vector must have even length"));
        }
        let d = x.len() / 2;
        State::new(x[..d].to_vec(), x[d..].to_vec())
    }
}

/// Force field of a separable Hamiltonian.
///
/// The `_into` methods write into caller-owned buffers and do not validate
/// lengths beyond debug assertions; they are the inner-loop entry points.
pub trait ForceField: Sync {
    /// Configuration-space dimension `d`.
    fn dim(&self) -> usize;

    fn potential(&self, q: &[f64]) -> f64;

    /// `out = g(q) = -grad V(q)`.
    fn force_into(&self, q: &[f64], out: &mut [f64]);

    /// `out = (grad g)(q) v = -Hess V(q) v`.
    fn force_jvp_into(&self, q: &[f64], v: &[f64], out: &mut [f64]);

    fn force(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q.len())?;
        let mut out = vec![0.0; q.len()];
        self.force_into(q, &mut out);
        Ok(out)
    }

    fn hamiltonian(&self, state: &State) -> Result<f64> {
        check_dim(self.dim(), state.q.len())?;
        check_dim(self.dim(), state.p.len())?;
        let kinetic = 0.5 * state.p.iter().map(|p| p * p).sum::<f64>();
        Ok(kinetic + self.potential(&state.q))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

/// Fermi-Pasta-Ulam chain: `m` stiff linear springs of stiffness `omega`
/// alternating with `m + 1` soft quartic springs, ends fixed
/// (`q_0 = q_{2m+1} = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpuModel {
    m: usize,
    omega: f64,
}

impl FpuModel {
    pub fn new(m: usize, omega: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("FPU chain needs at least one stiff spring"));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::invalid(format!("stiffness must be positive, got {omega}")));
        }
        Ok(FpuModel { m, omega })
    }

    pub fn springs(&self) -> usize {
        self.m
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    fn check_state(&self, state: &State) -> Result<()> {
        check_dim(2 * self.m, state.q.len())?;
        check_dim(2 * self.m, state.p.len())
    }

    /// Orthogonal change of variables to stiff-spring coordinates.
    pub fn stiff_coordinates(&self, state: &State) -> Result<StiffCoordinates> {
        self.check_state(state)?;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut c = StiffCoordinates::zeros(self.m);
        for i in 0..self.m {
            let (a, b) = (2 * i, 2 * i + 1);
            c.x0[i] = (state.q[b] + state.q[a]) * r;
            c.x1[i] = (state.q[b] - state.q[a]) * r;
            c.y0[i] = (state.p[b] + state.p[a]) * r;
            c.y1[i] = (state.p[b] - state.p[a]) * r;
        }
        Ok(c)
    }

    /// Inverse of [`FpuModel::stiff_coordinates`].
    pub fn from_stiff_coordinates(&self, c: &StiffCoordinates) -> Result<State> {
        for v in [&c.x0, &c.x1, &c.y0, &c.y1] {
            check_dim(self.m, v.len())?;
        }
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut s = State::zeros(2 * self.m);
        for i in 0..self.m {
            let (a, b) = (2 * i, 2 * i + 1);
            s.q[a] = (c.x0[i] - c.x1[i]) * r;
            s.q[b] = (c.x0[i] + c.x1[i]) * r;
            s.p[a] = (c.y0[i] - c.y1[i]) * r;
            s.p[b] = (c.y0[i] + c.y1[i]) * r;
        }
        Ok(s)
    }

    /// Harmonic energies `I_j = (y1_j^2 + omega^2 x1_j^2) / 2` of the stiff springs.
    pub fn stiff_energies(&self, state: &State) -> Result<EnergyDecomposition> {
        self.check_state(state)?;
        Ok(self.stiff_energies_unchecked(&state.q, &state.p))
    }

    pub(crate) fn stiff_energies_unchecked(&self, q: &[f64], p: &[f64]) -> EnergyDecomposition {
        let w2 = self.omega * self.omega;
        let per_spring: Vec<f64> = (0..self.m)
            .map(|i| {
                let (a, b) = (2 * i, 2 * i + 1);
                // x1^2 = (q_b - q_a)^2 / 2, same for y1
                let dx = q[b] - q[a];
                let dy = p[b] - p[a];
                0.25 * (dy * dy + w2 * dx * dx)
            })
            .collect();
        let total = per_spring.iter().sum();
        EnergyDecomposition { per_spring, total }
    }

    /// Total stiff energy `I` only.
    pub fn total_stiff_energy(&self, state: &State) -> f64 {
        self.stiff_energies_unchecked(&state.q, &state.p).total
    }
}

impl ForceField for FpuModel {
    fn dim(&self) -> usize {
        2 * self.m
    }

    fn potential(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), 2 * self.m);
        let n = 2 * self.m;
        let stiff: f64 = (0..self.m)
            .map(|i| {
                let e = q[2 * i + 1] - q[2 * i];
                e * e
            })
            .sum();
        // soft spring i joins q_{2i} and q_{2i+1} (1-based), i = 0..=m
        let soft: f64 = (0..=self.m)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { q[2 * i - 1] };
                let right = if 2 * i < n { q[2 * i] } else { 0.0 };
                let s = right - left;
                let s2 = s * s;
                s2 * s2
            })
            .sum();
        0.25 * self.omega * self.omega * stiff + soft
    }

    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), 2 * self.m);
        debug_assert_eq!(out.len(), 2 * self.m);
        let n = 2 * self.m;
        let half_w2 = 0.5 * self.omega * self.omega;
        for i in 0..self.m {
            let (a, b) = (2 * i, 2 * i + 1);
            let f = half_w2 * (q[b] - q[a]);
            out[a] = f;
            out[b] = -f;
        }
        for i in 0..=self.m {
            let left = if i == 0 { 0.0 } else { q[2 * i - 1] };
            let right = if 2 * i < n { q[2 * i] } else { 0.0 };
            let s = right - left;
            let f = 4.0 * s * s * s;
            if i > 0 {
                out[2 * i - 1] += f;
            }
            if 2 * i < n {
                out[2 * i] -= f;
            }
        }
    }

    fn force_jvp_into(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), 2 * self.m);
        let n = 2 * self.m;
        let half_w2 = 0.5 * self.omega * self.omega;
        for i in 0..self.m {
            let (a, b) = (2 * i, 2 * i + 1);
            let f = half_w2 * (v[b] - v[a]);
            out[a] = f;
            out[b] = -f;
        }
        for i in 0..=self.m {
            let (ql, vl) = if i == 0 { (0.0, 0.0) } else { (q[2 * i - 1], v[2 * i - 1]) };
            let (qr, vr) = if 2 * i < n { (q[2 * i], v[2 * i]) } else { (0.0, 0.0) };
            let s = qr - ql;
            let f = 12.0 * s * s * (vr - vl);
            if i > 0 {
                out[2 * i - 1] += f;
            }
            if 2 * i < n {
                out[2 * i] -= f;
            }
        }
    }
}

/// Scaled displacements and velocities of the stiff springs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffCoordinates {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl StiffCoordinates {
    pub fn zeros(m: usize) -> Self {
        StiffCoordinates {
            x0: vec![0.0; m],
            x1: vec![0.0; m],
            y0: vec![0.0; m],
            y1: vec![0.0; m],
        }
    }
}

/// Per-spring stiff energies and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub per_spring: Vec<f64>,
    pub total: f64,
}

/// Uncoupled harmonic oscillators `q'' = -Omega q` in `d` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOscillator {
    omega_sq: f64,
    dim: usize,
}

impl LinearOscillator {
    pub fn new(omega_sq: f64, dim: usize) -> Result<Self> {
        if !(omega_sq > 0.0 && omega_sq.is_finite()) {
            return Err(Error::invalid(format!("Omega must be positive, got {omega_sq}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(LinearOscillator { omega_sq, dim })
    }

    pub fn omega_sq(&self) -> f64 {
        self.omega_sq
    }
}

impl ForceField for LinearOscillator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, q: &[f64]) -> f64 {
        0.5 * self.omega_sq * q.iter().map(|x| x * x).sum::<f64>()
    }

    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(q) {
            *o = -self.omega_sq * x;
        }
    }

    fn force_jvp_into(&self, _q: &[f64], v: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = -self.omega_sq * x;
        }
    }
}

/// Any of the supported benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Fpu(FpuModel),
    Linear(LinearOscillator),
}

impl Model {
    pub fn as_fpu(&self) -> Option<&FpuModel> {
        match self {
            Model::Fpu(m) => Some(m),
            Model::Linear(_) => None,
        }
    }
}

impl ForceField for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Fpu(m) => m.dim(),
            Model::Linear(m) => m.dim(),
        }
    }

    fn potential(&self, q: &[f64]) -> f64 {
        match self {
            Model::Fpu(m) => m.potential(q),
            Model::Linear(m) => m.potential(q),
        }
    }

    #[inline]
    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        match self {
            Model::Fpu(m) => m.force_into(q, out),
            Model::Linear(m) => m.force_into(q, out),
        }
    }

    #[inline]
    fn force_jvp_into(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            Model::Fpu(m) => m.force_jvp_into(q, v, out),
            Model::Linear(m) => m.force_jvp_into(q, v, out),
        }
    }
}

/// Friction and scalar diffusion of the Langevin thermostat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub sigma: f64,
}

impl LangevinParams {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("friction must be >= 0, got {gamma}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("diffusion must be >= 0, got {sigma}")));
        }
        Ok(LangevinParams { gamma, sigma })
    }

    /// Momentum decay factor `exp(-gamma dt)` of the exact OU flow.
    pub fn decay(&self, dt: f64) -> f64 {
        (-self.gamma * dt).exp()
    }

    /// `(1 - exp(-2 gamma dt)) / (2 gamma)`, with the `gamma -> 0` limit `dt`.
    pub fn ou_variance_factor(&self, dt: f64) -> f64 {
        if self.gamma == 0.0 {
            dt
        } else {
            -(-2.0 * self.gamma * dt).exp_m1() / (2.0 * self.gamma)
        }
    }

    /// Standard deviation of the exact OU increment over `dt`.
    pub fn ou_increment_std(&self, dt: f64) -> f64 {
        self.sigma * self.ou_variance_factor(dt).sqrt()
    }

    /// Stationary momentum variance `sigma^2 / (2 gamma)` (the temperature).
    pub fn temperature(&self) -> Option<f64> {
        (self.gamma > 0.0).then(|| self.sigma * self.sigma / (2.0 * self.gamma))
    }
}

/// Drift matrices `A = [0 1; -Omega 0]` and `A_gamma = [0 1; -Omega -gamma]`
/// of the scalar linear oscillator.
pub fn linear_matrices(omega_sq: f64, gamma: f64) -> Result<(Mat2, Mat2)> {
    if !(omega_sq > 0.0) {
        return Err(Error::invalid(format!("Omega must be positive, got {omega_sq}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("friction must be >= 0, got {gamma}")));
    }
    Ok((
        Mat2::new(0.0, 1.0, -omega_sq, 0.0),
        Mat2::new(0.0, 1.0, -omega_sq, -gamma),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_force(model: &FpuModel, q: &[f64], eps: f64) -> Vec<f64> {
        (0..q.len())
            .map(|k| {
                let mut qp = q.to_vec();
                let mut qm = q.to_vec();
                qp[k] += eps;
                qm[k] -= eps;
                -(model.potential(&qp) - model.potential(&qm)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn force_vanishes_at_origin() {
        let model = FpuModel::new(3, 50.0).unwrap();
        assert_eq!(model.force(&[0.0; 6]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn force_matches_finite_differences() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let q = [0.3, -0.2, 0.5, 0.45, -0.1, 0.7];
        let g = model.force(&q).unwrap();
        let fd = fd_force(&model, &q, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn single_spring_force_by_hand() {
        // m = 1: V = (q2-q1)^2/4 + q1^4 + (0 - q2)^4; at q = (1, 1) the stiff
        // term vanishes and g = (-4 q1^3, -4 q2^3) = (-4, -4).
        let model = FpuModel::new(1, 1.0).unwrap();
        let g = model.force(&[1.0, 1.0]).unwrap();
        assert_eq!(g, vec![-4.0, -4.0]);
        let g = model.force(&[0.5, 2.0]).unwrap();
        // stiff: d/dq1 = -(q2-q1)/2 -> force +0.75 on q1, -0.75 on q2
        // soft: -4 q1^3 = -0.5 on q1; -4 q2^3 = -32 on q2
        assert_relative_eq!(g[0], 0.75 - 0.5, epsilon = 1e-15);
        assert_relative_eq!(g[1], -0.75 - 32.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = FpuModel::new(3, 50.0).unwrap();
        assert!(matches!(model.force(&[0.0; 5]), Err(Error::InvalidArgument(_))));
        assert!(model.hamiltonian(&State::zeros(4)).is_err());
        assert!(model.stiff_energies(&State::zeros(2)).is_err());
        assert!(State::new(vec![1.0], vec![]).is_err());
        assert!(State::new(vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn jvp_matches_finite_difference_of_force() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let q = [0.3, -0.2, 0.5, 0.45, -0.1, 0.7];
        let v = [1.0, -0.5, 0.25, 0.3, 2.0, -1.0];
        let mut jv = [0.0; 6];
        model.force_jvp_into(&q, &v, &mut jv);
        let eps = 1e-6;
        let qp: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let qm: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let gp = model.force(&qp).unwrap();
        let gm = model.force(&qm).unwrap();
        for k in 0..6 {
            let fd = (gp[k] - gm[k]) / (2.0 * eps);
            assert!((jv[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn stiff_coordinates_of_symmetric_pair() {
        let model = FpuModel::new(2, 50.0).unwrap();
        let a = 0.7;
        let s = State::new(vec![a, a, -a, -a], vec![0.0; 4]).unwrap();
        let c = model.stiff_coordinates(&s).unwrap();
        assert_eq!(c.x1, vec![0.0, 0.0]);
        assert_relative_eq!(c.x0[0], a * 2f64.sqrt(), epsilon = 1e-15);
        let zero = model.stiff_coordinates(&State::zeros(4)).unwrap();
        assert_eq!(zero, StiffCoordinates::zeros(2));
    }

    #[test]
    fn unit_stiff_energies_from_harmonic_start() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let c = StiffCoordinates {
            x0: vec![1.0; 3],
            x1: vec![1.0 / 50.0; 3],
            y0: vec![1.0; 3],
            y1: vec![1.0; 3],
        };
        let s = model.from_stiff_coordinates(&c).unwrap();
        let e = model.stiff_energies(&s).unwrap();
        for ij in &e.per_spring {
            assert_relative_eq!(*ij, 1.0, epsilon = 1e-13);
        }
        assert_relative_eq!(e.total, 3.0, epsilon = 1e-13);
        let zero = model.stiff_energies(&State::zeros(6)).unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn hamiltonian_two_ways() {
        // direct evaluation against stiff coordinates plus the soft quartic part
        let model = FpuModel::new(3, 50.0).unwrap();
        let c = StiffCoordinates {
            x0: vec![1.0; 3],
            x1: vec![1.0 / 50.0; 3],
            y0: vec![1.0; 3],
            y1: vec![1.0; 3],
        };
        let s = model.from_stiff_coordinates(&c).unwrap();
        let direct = model.hamiltonian(&s).unwrap();
        let kinetic: f64 = 0.5 * (0..3).map(|i| c.y0[i].powi(2) + c.y1[i].powi(2)).sum::<f64>();
        let stiff: f64 = 0.5 * 2500.0 * (0..3).map(|i| c.x1[i].powi(2)).sum::<f64>();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // q_{2i-1} = (x0 - x1)/sqrt2, q_{2i} = (x0 + x1)/sqrt2
        let mut q = vec![0.0];
        for i in 0..3 {
            q.push((c.x0[i] - c.x1[i]) * r);
            q.push((c.x0[i] + c.x1[i]) * r);
        }
        q.push(0.0);
        let soft: f64 = (0..=3).map(|i| (q[2 * i + 1] - q[2 * i]).powi(4)).sum();
        assert_relative_eq!(direct, kinetic + stiff + soft, max_relative = 1e-12);
        assert_eq!(model.hamiltonian(&State::zeros(6)).unwrap(), 0.0);
    }

    #[test]
    fn linear_matrices_construction() {
        let (a, ag) = linear_matrices(2500.0, 0.0).unwrap();
        assert_eq!(a, Mat2::new(0.0, 1.0, -2500.0, 0.0));
        assert_eq!(a, ag);
        let (_, ag) = linear_matrices(4.0, 0.5).unwrap();
        assert_eq!(ag.get(1, 1), -0.5);
        assert!(linear_matrices(0.0, 0.0).is_err());
        assert!(linear_matrices(-1.0, 0.0).is_err());
    }

    #[test]
    fn ou_variance_limit() {
        let lp = LangevinParams::new(0.0, 2.0).unwrap();
        assert_eq!(lp.ou_variance_factor(0.3), 0.3);
        let lp = LangevinParams::new(1e-12, 1.0).unwrap();
        assert_relative_eq!(lp.ou_variance_factor(0.3), 0.3, max_relative = 1e-10);
        assert!(LangevinParams::new(-1.0, 0.0).is_err());
    }
}
