//! Explicit two-stage symplectic Nyström steps, the Langevin splitting built
//! on them, and a BAOAB baseline.
//!
//! The family is parametrized by `(b1, beta1)`; every other coefficient is
//! derived so that the method is symplectic and second order. Verlet is the
//! member `(1/2, 1/2)`, there is no separate code path for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ForceField, LangevinParams, State};

/// Free parameters `(b1, beta1)` in `(0, 1) x [0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NystromParams {
    pub b1: f64,
    pub beta1: f64,
}

impl NystromParams {
    /// Störmer-Verlet.
    pub const VERLET: NystromParams = NystromParams { b1: 0.5, beta1: 0.5 };

    pub fn new(b1: f64, beta1: f64) -> Result<Self> {
        let p = NystromParams { b1, beta1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b1 > 0.0 && self.b1 < 1.0) {
            return Err(Error::Domain(format!("b1 must lie in (0, 1), got {}", self.b1)));
        }
        if !(0.0..=0.5).contains(&self.beta1) {
            return Err(Error::Domain(format!(
                "beta1 must lie in [0, 1/2], got {}",
                self.beta1
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.b1, self.beta1]
    }
}

/// Full coefficient set of a two-stage explicit Nyström method
/// (`a11 = a12 = a22 = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NystromCoefficients {
    pub b1: f64,
    pub b2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub c1: f64,
    pub c2: f64,
    pub a21: f64,
}

/// Derivatives of the derived coefficients with respect to `b1` (index 0)
/// and `beta1` (index 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientPartials {
    pub b1: [f64; 2],
    pub b2: [f64; 2],
    pub beta1: [f64; 2],
    pub beta2: [f64; 2],
    pub c1: [f64; 2],
    pub c2: [f64; 2],
    pub a21: [f64; 2],
}

pub fn derive_coefficients(params: NystromParams) -> Result<NystromCoefficients> {
    params.validate()?;
    let NystromParams { b1, beta1 } = params;
    let b2 = 1.0 - b1;
    let beta2 = 0.5 - beta1;
    let c1 = 1.0 - beta1 / b1;
    let c2 = 1.0 - beta2 / b2;
    Ok(NystromCoefficients {
        b1,
        b2,
        beta1,
        beta2,
        c1,
        c2,
        a21: b1 * (c2 - c1),
    })
}

impl NystromCoefficients {
    pub fn params(&self) -> NystromParams {
        NystromParams {
            b1: self.b1,
            beta1: self.beta1,
        }
    }

    pub fn partials(&self) -> CoefficientPartials {
        let (b1, b2, beta1, beta2) = (self.b1, self.b2, self.beta1, self.beta2);
        // a21 = b1 (c2 - c1) = beta1 - b1 beta2 / b2
        CoefficientPartials {
            b1: [1.0, 0.0],
            b2: [-1.0, 0.0],
            beta1: [0.0, 1.0],
            beta2: [0.0, -1.0],
            c1: [beta1 / (b1 * b1), -1.0 / b1],
            c2: [-beta2 / (b2 * b2), 1.0 / b2],
            a21: [-beta2 / (b2 * b2), 1.0 + b1 / b2],
        }
    }
}

/// Which integrator a [`SchemeSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Nystrom,
    StochasticNystrom,
    Baoab,
}

/// Integrator choice, its parameters and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<NystromParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langevin: Option<LangevinParams>,
    pub step: f64,
}

impl SchemeSpec {
    pub fn nystrom(params: NystromParams, step: f64) -> Self {
        SchemeSpec {
            kind: SchemeKind::Nystrom,
            params: Some(params),
            langevin: None,
            step,
        }
    }

    pub fn stochastic_nystrom(params: NystromParams, langevin: LangevinParams, step: f64) -> Self {
        SchemeSpec {
            kind: SchemeKind::StochasticNystrom,
            params: Some(params),
            langevin: Some(langevin),
            step,
        }
    }

    pub fn baoab(langevin: LangevinParams, step: f64) -> Self {
        SchemeSpec {
            kind: SchemeKind::Baoab,
            params: None,
            langevin: Some(langevin),
            step,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self.kind, SchemeKind::Nystrom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        match self.kind {
            SchemeKind::Nystrom => {
                self.params
                    .ok_or_else(|| Error::invalid("nystrom scheme needs parameters"))?
                    .validate()?;
            }
            SchemeKind::StochasticNystrom => {
                self.params
                    .ok_or_else(|| Error::invalid("stochastic nystrom scheme needs parameters"))?
                    .validate()?;
                self.langevin
                    .ok_or_else(|| Error::invalid("stochastic scheme needs friction and noise"))?;
            }
            SchemeKind::Baoab => {
                self.langevin
                    .ok_or_else(|| Error::invalid("BAOAB needs friction and noise"))?;
            }
        }
        if let Some(l) = self.langevin {
            LangevinParams::new(l.gamma, l.sigma)?;
        }
        Ok(())
    }
}

/// Scratch buffers for in-place stepping, sized to the model dimension.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) x: Vec<f64>,
    pub(crate) l1: Vec<f64>,
    pub(crate) l2: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Workspace {
            x: vec![0.0; dim],
            l1: vec![0.0; dim],
            l2: vec![0.0; dim],
        }
    }
}

/// One deterministic Nyström step, in place. Two force evaluations.
///
/// On return `ws.l1`, `ws.l2` hold the stage forces of this step.
pub fn nystrom_step_in_place<F: ForceField + ?Sized>(
    force: &F,
    c: &NystromCoefficients,
    delta: f64,
    q: &mut [f64],
    p: &mut [f64],
    ws: &mut Workspace,
) {
    let d2 = delta * delta;
    for k in 0..q.len() {
        ws.x[k] = q[k] + delta * c.c1 * p[k];
    }
    force.force_into(&ws.x, &mut ws.l1);
    for k in 0..q.len() {
        ws.x[k] = q[k] + delta * c.c2 * p[k] + d2 * c.a21 * ws.l1[k];
    }
    force.force_into(&ws.x, &mut ws.l2);
    for k in 0..q.len() {
        q[k] += delta * p[k] + d2 * (c.beta1 * ws.l1[k] + c.beta2 * ws.l2[k]);
        p[k] += delta * (c.b1 * ws.l1[k] + c.b2 * ws.l2[k]);
    }
}

/// One Nyström step of size `delta`. Blow-up shows up as non-finite entries.
pub fn nystrom_step<F: ForceField + ?Sized>(
    state: &State,
    coeffs: &NystromCoefficients,
    delta: f64,
    force: &F,
) -> Result<State> {
    check_len(force.dim(), state.dim())?;
    let mut out = state.clone();
    let mut ws = Workspace::new(state.dim());
    nystrom_step_in_place(force, coeffs, delta, &mut out.q, &mut out.p, &mut ws);
    Ok(out)
}

/// Exact Ornstein-Uhlenbeck update `p' = exp(-gamma delta) p + xi`.
pub fn ou_step(p: &[f64], langevin: &LangevinParams, delta: f64, xi: &[f64]) -> Result<Vec<f64>> {
    check_len(p.len(), xi.len())?;
    let decay = langevin.decay(delta);
    Ok(p.iter().zip(xi).map(|(p, x)| decay * p + x).collect())
}

/// Nyström step followed by the OU update of the momentum.
///
/// `xi` should be distributed as `N(0, sigma^2 (1 - exp(-2 gamma delta)) / (2 gamma) I)`;
/// see [`crate::datagen::coarsen_noise`] for the pathwise construction.
pub fn stochastic_nystrom_step<F: ForceField + ?Sized>(
    state: &State,
    coeffs: &NystromCoefficients,
    langevin: &LangevinParams,
    delta: f64,
    xi: &[f64],
    force: &F,
) -> Result<State> {
    check_len(state.dim(), xi.len())?;
    let mut out = nystrom_step(state, coeffs, delta, force)?;
    let decay = langevin.decay(delta);
    for (p, x) in out.p.iter_mut().zip(xi) {
        *p = decay * *p + x;
    }
    Ok(out)
}

/// BAOAB step, in place, with an already scaled OU increment `xi`.
///
/// `g` must hold `g(q)` on entry and holds `g(q')` on return, so a run costs
/// one force evaluation per step.
pub(crate) fn baoab_step_in_place<F: ForceField + ?Sized>(
    force: &F,
    h: f64,
    decay: f64,
    q: &mut [f64],
    p: &mut [f64],
    g: &mut [f64],
    xi: &[f64],
) {
    let half = 0.5 * h;
    for k in 0..q.len() {
        p[k] += half * g[k];
        q[k] += half * p[k];
        p[k] = decay * p[k] + xi[k];
        q[k] += half * p[k];
    }
    force.force_into(q, g);
    for k in 0..q.len() {
        p[k] += half * g[k];
    }
}

/// One BAOAB step driven by a standard-normal vector `noise` (one per step).
pub fn baoab_step<F: ForceField + ?Sized>(
    state: &State,
    langevin: &LangevinParams,
    force: &F,
    h: f64,
    noise: &[f64],
) -> Result<State> {
    check_len(force.dim(), state.dim())?;
    check_len(state.dim(), noise.len())?;
    let mut out = state.clone();
    let mut g = force.force(&state.q)?;
    let s = langevin.ou_increment_std(h);
    let xi: Vec<f64> = noise.iter().map(|r| s * r).collect();
    baoab_step_in_place(force, h, langevin.decay(h), &mut out.q, &mut out.p, &mut g, &xi);
    Ok(out)
}

/// A [`SchemeSpec`] prepared for repeated in-place stepping.
#[derive(Debug, Clone, Copy)]
pub struct Stepper {
    spec: SchemeSpec,
    coeffs: Option<NystromCoefficients>,
    decay: f64,
}

impl Stepper {
    pub fn new(spec: &SchemeSpec) -> Result<Self> {
        spec.validate()?;
        let coeffs = spec.params.map(derive_coefficients).transpose()?;
        let decay = spec.langevin.map_or(1.0, |l| l.decay(spec.step));
        Ok(Stepper {
            spec: *spec,
            coeffs,
            decay,
        })
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn is_stochastic(&self) -> bool {
        self.spec.is_stochastic()
    }

    /// Prepares per-run state; must be called after any external change to `q`.
    pub(crate) fn prime<F: ForceField + ?Sized>(&self, force: &F, q: &[f64], ws: &mut Workspace) {
        if self.spec.kind == SchemeKind::Baoab {
            force.force_into(q, &mut ws.l2);
        }
    }

    /// Advances `(q, p)` by one step. `xi` is the scaled OU increment and is
    /// ignored by the deterministic scheme.
    pub(crate) fn step<F: ForceField + ?Sized>(
        &self,
        force: &F,
        q: &mut [f64],
        p: &mut [f64],
        xi: &[f64],
        ws: &mut Workspace,
    ) {
        let h = self.spec.step;
        match self.spec.kind {
            SchemeKind::Nystrom => {
                nystrom_step_in_place(force, self.coeffs.as_ref().unwrap(), h, q, p, ws)
            }
            SchemeKind::StochasticNystrom => {
                nystrom_step_in_place(force, self.coeffs.as_ref().unwrap(), h, q, p, ws);
                for k in 0..p.len() {
                    p[k] = self.decay * p[k] + xi[k];
                }
            }
            SchemeKind::Baoab => {
                // l2 caches g(q) between steps
                baoab_step_in_place(force, h, self.decay, q, p, &mut ws.l2, xi)
            }
        }
    }
}

/// Index of the first state with a non-finite entry.
pub fn first_non_finite<'a, I>(states: I) -> Option<usize>
where
    I: IntoIterator<Item = &'a State>,
{
    states.into_iter().position(|s| !s.is_finite())
}

/// `max |M^T J M - J|` for the finite-difference Jacobian `M` of one Nyström
/// step at `state`, with `J = [0 I; -I 0]`.
///
/// Uses central differences with step `1e-6` scaled by `max(1, |x_k|)`.
pub fn symplecticity_defect<F: ForceField + ?Sized>(
    coeffs: &NystromCoefficients,
    delta: f64,
    force: &F,
    state: &State,
) -> Result<f64> {
    symplecticity_defect_with_step(coeffs, delta, force, state, 1e-6)
}

/// [`symplecticity_defect`] with a chosen relative difference step. For a
/// linear force any step gives the exact Jacobian, and a large one keeps
/// rounding out of the result.
pub fn symplecticity_defect_with_step<F: ForceField + ?Sized>(
    coeffs: &NystromCoefficients,
    delta: f64,
    force: &F,
    state: &State,
    fd_step: f64,
) -> Result<f64> {
    check_len(force.dim(), state.dim())?;
    if !(fd_step > 0.0) {
        return Err(Error::invalid("difference step must be positive"));
    }
    let d = state.dim();
    let n = 2 * d;
    let x0 = state.to_vec();
    let mut ws = Workspace::new(d);
    let mut jac = vec![vec![0.0; n]; n]; // jac[row][col]
    let mut xp = x0.clone();
    for col in 0..n {
        let eps = fd_step * x0[col].abs().max(1.0);
        let mut eval = |shift: f64, buf: &mut Vec<f64>| {
            buf.copy_from_slice(&x0);
            buf[col] += shift;
            let (q, p) = buf.split_at_mut(d);
            nystrom_step_in_place(force, coeffs, delta, q, p, &mut ws);
        };
        let mut xm = x0.clone();
        eval(eps, &mut xp);
        eval(-eps, &mut xm);
        for row in 0..n {
            jac[row][col] = (xp[row] - xm[row]) / (2.0 * eps);
        }
    }
    // (J M)[r][c]: J = [0 I; -I 0]
    let jm = |r: usize, c: usize| -> f64 {
        if r < d {
            jac[r + d][c]
        } else {
            -jac[r - d][c]
        }
    };
    let jmat = |r: usize, c: usize| -> f64 {
        if r < d && c == r + d {
            1.0
        } else if r >= d && c + d == r {
            -1.0
        } else {
            0.0
        }
    };
    let mut worst = 0.0_f64;
    for r in 0..n {
        for c in 0..n {
            let v: f64 = (0..n).map(|k| jac[k][r] * jm(k, c)).sum();
            worst = worst.max((v - jmat(r, c)).abs());
        }
    }
    Ok(worst)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FpuModel, LinearOscillator};
    use approx::assert_relative_eq;

    #[test]
    fn verlet_coefficients() {
        let c = derive_coefficients(NystromParams::VERLET).unwrap();
        assert_eq!((c.b2, c.beta2, c.c1, c.c2, c.a21), (0.5, 0.0, 0.0, 1.0, 0.5));
    }

    #[test]
    fn coefficients_at_half_and_point_four() {
        let c = derive_coefficients(NystromParams { b1: 0.5, beta1: 0.4 }).unwrap();
        assert_relative_eq!(c.b2, 0.5);
        assert_relative_eq!(c.beta2, 0.1, epsilon = 1e-15);
        assert_relative_eq!(c.c1, 0.2, epsilon = 1e-15);
        assert_relative_eq!(c.c2, 0.8, epsilon = 1e-15);
        assert_relative_eq!(c.a21, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn box_edges_are_rejected() {
        for (b1, beta1) in [(0.0, 0.2), (1.0, 0.2), (0.5, -0.1), (0.5, 0.6), (f64::NAN, 0.1)] {
            assert!(matches!(
                derive_coefficients(NystromParams { b1, beta1 }),
                Err(Error::Domain(_))
            ));
        }
        assert!(derive_coefficients(NystromParams { b1: 0.1, beta1: 0.0 }).is_ok());
    }

    #[test]
    fn partials_match_finite_differences() {
        let p = NystromParams { b1: 0.37, beta1: 0.21 };
        let c = derive_coefficients(p).unwrap();
        let dc = c.partials();
        let eps = 1e-7;
        for k in 0..2 {
            let mut pp = p.as_array();
            let mut pm = p.as_array();
            pp[k] += eps;
            pm[k] -= eps;
            let cp = derive_coefficients(NystromParams { b1: pp[0], beta1: pp[1] }).unwrap();
            let cm = derive_coefficients(NystromParams { b1: pm[0], beta1: pm[1] }).unwrap();
            let fd = |a: f64, b: f64| (a - b) / (2.0 * eps);
            assert!((fd(cp.c1, cm.c1) - dc.c1[k]).abs() < 1e-6);
            assert!((fd(cp.c2, cm.c2) - dc.c2[k]).abs() < 1e-6);
            assert!((fd(cp.a21, cm.a21) - dc.a21[k]).abs() < 1e-6);
            assert!((fd(cp.beta2, cm.beta2) - dc.beta2[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn free_flight() {
        struct Free;
        impl ForceField for Free {
            fn dim(&self) -> usize {
                2
            }
            fn potential(&self, _q: &[f64]) -> f64 {
                0.0
            }
            fn force_into(&self, _q: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
            fn force_jvp_into(&self, _q: &[f64], _v: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
        }
        let s = State::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let c = derive_coefficients(NystromParams { b1: 0.3, beta1: 0.1 }).unwrap();
        let out = nystrom_step(&s, &c, 0.25, &Free).unwrap();
        assert_eq!(out.q, vec![1.0 + 0.25 * 0.5, -2.0 + 0.25 * 3.0]);
        assert_eq!(out.p, s.p);
    }

    /// Textbook kick-drift-kick leapfrog, written independently of the
    /// Nyström kernel.
    fn leapfrog(model: &FpuModel, s: &mut State, h: f64) {
        let g = model.force(&s.q).unwrap();
        for k in 0..s.dim() {
            s.p[k] += 0.5 * h * g[k];
            s.q[k] += h * s.p[k];
        }
        let g = model.force(&s.q).unwrap();
        for k in 0..s.dim() {
            s.p[k] += 0.5 * h * g[k];
        }
    }

    #[test]
    fn verlet_member_matches_leapfrog() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let c = derive_coefficients(NystromParams::VERLET).unwrap();
        let init = State::new(
            vec![0.3, 0.32, -0.1, -0.08, 0.5, 0.51],
            vec![0.2, -0.4, 1.0, 0.9, -0.3, 0.1],
        )
        .unwrap();
        let mut a = init.clone();
        let mut b = init;
        for _ in 0..1000 {
            a = nystrom_step(&a, &c, 1e-3, &model).unwrap();
            leapfrog(&model, &mut b, 1e-3);
        }
        for k in 0..6 {
            assert!((a.q[k] - b.q[k]).abs() < 1e-12);
            assert!((a.p[k] - b.p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn ou_step_values() {
        let lp = LangevinParams::new(0.0, 0.0).unwrap();
        assert_eq!(ou_step(&[1.5, -2.0], &lp, 0.1, &[0.0, 0.0]).unwrap(), vec![1.5, -2.0]);
        let lp = LangevinParams::new(0.01, 0.05).unwrap();
        let p = ou_step(&[1.0], &lp, 0.02, &[0.0]).unwrap();
        assert_relative_eq!(p[0], 0.999_800_019_998_666_7, epsilon = 1e-15);
        assert!(ou_step(&[1.0], &lp, 0.02, &[]).is_err());
    }

    #[test]
    fn ou_stationary_variance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let lp = LangevinParams::new(0.5, 1.0).unwrap();
        let dt = 0.1;
        let s = lp.ou_increment_std(dt);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut p = vec![0.0];
        let (mut sum, mut sum2) = (0.0, 0.0);
        let n = 100_000;
        for i in 0..(n + 1000) {
            let xi = [s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)];
            p = ou_step(&p, &lp, dt, &xi).unwrap();
            if i >= 1000 {
                sum += p[0];
                sum2 += p[0] * p[0];
            }
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        let target = lp.temperature().unwrap();
        // successive samples are correlated with rho = exp(-gamma dt), which
        // inflates the standard error by sqrt((1 + rho) / (1 - rho))
        let rho = lp.decay(dt);
        let se = target * (2.0 / n as f64).sqrt() * ((1.0 + rho * rho) / (1.0 - rho * rho)).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target} se {se}");
    }

    #[test]
    fn stochastic_step_degenerates_to_deterministic() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let c = derive_coefficients(NystromParams { b1: 0.45, beta1: 0.43 }).unwrap();
        let lp = LangevinParams::new(0.0, 0.0).unwrap();
        let s = State::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1.0; 6]).unwrap();
        let a = stochastic_nystrom_step(&s, &c, &lp, 0.02, &[0.0; 6], &model).unwrap();
        let b = nystrom_step(&s, &c, 0.02, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baoab_without_noise_is_verlet() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let lp = LangevinParams::new(0.0, 0.0).unwrap();
        let c = derive_coefficients(NystromParams::VERLET).unwrap();
        let mut a = State::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1.0; 6]).unwrap();
        let mut b = a.clone();
        for _ in 0..100 {
            a = baoab_step(&a, &lp, &model, 1e-3, &[0.0; 6]).unwrap();
            b = nystrom_step(&b, &c, 1e-3, &model).unwrap();
        }
        for k in 0..6 {
            assert!((a.q[k] - b.q[k]).abs() < 1e-12);
            assert!((a.p[k] - b.p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn symplectic_for_linear_and_fpu_forces() {
        let lin = LinearOscillator::new(2500.0, 1).unwrap();
        let c = derive_coefficients(NystromParams { b1: 0.3, beta1: 0.2 }).unwrap();
        let s = State::new(vec![0.7], vec![-1.3]).unwrap();
        assert!(symplecticity_defect_with_step(&c, 0.02, &lin, &s, 0.5).unwrap() < 1e-9);

        let model = FpuModel::new(3, 50.0).unwrap();
        let s = State::new(
            vec![0.3, 0.32, -0.1, -0.08, 0.5, 0.51],
            vec![0.2, -0.4, 1.0, 0.9, -0.3, 0.1],
        )
        .unwrap();
        assert!(symplecticity_defect(&c, 0.02, &model, &s).unwrap() < 1e-6);
    }

    #[test]
    fn broken_coefficients_are_not_symplectic() {
        let model = FpuModel::new(3, 50.0).unwrap();
        let mut c = derive_coefficients(NystromParams { b1: 0.5, beta1: 0.4 }).unwrap();
        c.a21 += 0.1;
        let s = State::new(
            vec![0.3, 0.32, -0.1, -0.08, 0.5, 0.51],
            vec![0.2, -0.4, 1.0, 0.9, -0.3, 0.1],
        )
        .unwrap();
        assert!(symplecticity_defect(&c, 0.02, &model, &s).unwrap() > 1e-3);
    }

    #[test]
    fn scheme_spec_validation() {
        let lp = LangevinParams::new(0.01, 0.05).unwrap();
        assert!(SchemeSpec::baoab(lp, 1e-4).validate().is_ok());
        assert!(SchemeSpec::baoab(lp, 0.0).validate().is_err());
        let mut s = SchemeSpec::nystrom(NystromParams::VERLET, 0.01);
        s.params = None;
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&SchemeSpec::stochastic_nystrom(NystromParams::VERLET, lp, 0.02)).unwrap();
        assert!(json.contains("stochastic-nystrom"));
    }
}
