//! Projected quasi-Newton minimization on a 2-D box.
//!
//! The parameter problems here are two-dimensional and smooth, so a dense
//! BFGS inverse-Hessian with an active-set projection and Armijo
//! backtracking is enough. Multi-start guards against local minima.

use serde::{Deserialize, Serialize};

/// Closed box `lo <= x <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Bounds {
    pub fn project(&self, x: [f64; 2]) -> [f64; 2] {
        [
            x[0].clamp(self.lo[0], self.hi[0]),
            x[1].clamp(self.lo[1], self.hi[1]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when `|projected gradient| <= gtol * max(|f(x0)|, tiny)`.
    pub gtol: f64,
    /// Length of the first trial step.
    pub initial_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 200,
            gtol: 1e-8,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    /// No further decrease possible at working precision.
    Stagnation,
    MaxIterations,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: [f64; 2],
    pub f: f64,
    pub grad: [f64; 2],
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
}

fn projected_gradient(x: [f64; 2], g: [f64; 2], b: &Bounds) -> [f64; 2] {
    // componentwise, not `x - P(x - g)`: that rounds tiny gradients to zero
    [0, 1].map(|i| {
        let pinned = (x[i] <= b.lo[i] && g[i] > 0.0) || (x[i] >= b.hi[i] && g[i] < 0.0);
        if pinned {
            0.0
        } else {
            g[i]
        }
    })
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Minimizes `f` over the box from `x0`. `f` returns the value and gradient.
pub fn minimize_box<F>(mut f: F, x0: [f64; 2], bounds: &Bounds, opts: &OptimOptions) -> OptimResult
where
    F: FnMut([f64; 2]) -> (f64, [f64; 2]),
{
    let mut x = bounds.project(x0);
    let (mut fx, mut g) = f(x);
    let tol = opts.gtol * fx.abs().max(f64::MIN_POSITIVE);
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    let mut first = true;
    let mut iterations = 0;
    let finish = |x, fx, g: [f64; 2], it, reason| {
        let pg = norm(projected_gradient(x, g, bounds));
        OptimResult {
            x,
            f: fx,
            grad: g,
            projected_grad_norm: pg,
            iterations: it,
            converged: matches!(reason, StopReason::Gradient | StopReason::Stagnation),
            reason,
        }
    };
    if !fx.is_finite() || !g[0].is_finite() || !g[1].is_finite() {
        return finish(x, fx, g, 0, StopReason::NonFinite);
    }
    loop {
        let pg = projected_gradient(x, g, bounds);
        if norm(pg) <= tol {
            return finish(x, fx, g, iterations, StopReason::Gradient);
        }
        if iterations >= opts.max_iter {
            return finish(x, fx, g, iterations, StopReason::MaxIterations);
        }
        iterations += 1;

        // variables pinned at a bound with the gradient pushing outwards
        let active = [0, 1].map(|i| {
            (x[i] <= bounds.lo[i] && g[i] > 0.0) || (x[i] >= bounds.hi[i] && g[i] < 0.0)
        });
        let mut d = [0.0; 2];
        for i in 0..2 {
            if active[i] {
                continue;
            }
            for j in 0..2 {
                if !active[j] {
                    d[i] -= h[i][j] * g[j];
                }
            }
        }
        if dot(d, g) >= 0.0 {
            d = [-pg[0], -pg[1]];
        }
        if first {
            let n = norm(d);
            if n > 0.0 {
                d = [d[0] * opts.initial_step / n, d[1] * opts.initial_step / n];
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = bounds.project([x[0] + alpha * d[0], x[1] + alpha * d[1]]);
            let s = [xn[0] - x[0], xn[1] - x[1]];
            if norm(s) == 0.0 {
                break;
            }
            let (fn_, gn) = f(xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * dot(g, s) {
                accepted = Some((xn, fn_, gn, s));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            return finish(x, fx, g, iterations, StopReason::Stagnation);
        };
        let y = [gn[0] - g[0], gn[1] - g[1]];
        let sy = dot(s, y);
        if sy > 1e-12 * norm(s) * norm(y) && sy > 0.0 {
            if first {
                let scale = sy / dot(y, y);
                h = [[scale, 0.0], [0.0, scale]];
            }
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy = [
                h[0][0] * y[0] + h[0][1] * y[1],
                h[1][0] * y[0] + h[1][1] * y[1],
            ];
            let yhy = dot(y, hy);
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            first = false;
        }
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if !g[0].is_finite() || !g[1].is_finite() {
            return finish(x, fx, g, iterations, StopReason::NonFinite);
        }
        if decrease <= 1e-15 * fx.abs() && norm(s) <= 1e-12 {
            return finish(x, fx, g, iterations, StopReason::Stagnation);
        }
    }
}

/// Runs [`minimize_box`] from each start and keeps the lowest final value;
/// ties go to the earlier start. Also returns every individual result.
pub fn minimize_multistart<F>(
    mut f: F,
    starts: &[[f64; 2]],
    bounds: &Bounds,
    opts: &OptimOptions,
) -> (OptimResult, Vec<OptimResult>)
where
    F: FnMut([f64; 2]) -> (f64, [f64; 2]),
{
    assert!(!starts.is_empty(), "at least one start point is needed");
    let all: Vec<OptimResult> = starts
        .iter()
        .map(|x0| minimize_box(&mut f, *x0, bounds, opts))
        .collect();
    let mut best = all[0];
    for r in &all[1..] {
        if r.f < best.f || (!best.f.is_finite() && r.f.is_finite()) {
            best = *r;
        }
    }
    (best, all)
}
