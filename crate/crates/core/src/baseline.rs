//! Deterministic per-sample OPF: an augmented Lagrangian over the dispatch
//! `x`, with gradients from the same power flow sensitivities the trainer
//! uses.
//!
//! Variables are normalized to `ξ ∈ [−1, 1]` (`x = mid + half ⊙ ξ`) and each
//! inner problem is solved by damped projected Newton steps with Armijo
//! backtracking. Hessian columns are directional differences of the adjoint
//! gradient along the power flow sensitivity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acpf::{
    constraint_values, constraint_vjp, generation, pf_jacobian, sensitivity_vjp,
    slack_injection_gradient, solve_pf, Dispatch, LoadVector, Network, PfSettings, VoltageState,
};
use crate::linalg::factor;
use crate::ccsopf::{Metrics, MetricsBuilder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpfSettings {
    /// Largest allowed scaled constraint excess, p.u.
    pub tol_feas: f64,
    /// Bound on the projected gradient of the Lagrangian in normalized units.
    pub tol_grad: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho0: f64,
    pub rho_max: f64,
    /// Power flow settings; tighter than the default so merit differences
    /// and the difference Hessian stay above the solver noise.
    pub pf: PfSettings,
}

impl Default for OpfSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-4,
            tol_grad: 1e-5,
            max_outer: 30,
            max_inner: 300,
            rho0: 10.0,
            rho_max: 1e9,
            pf: PfSettings {
                tol: 1e-11,
                ..PfSettings::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub dispatch: Dispatch,
    pub state: VoltageState,
    pub cost: f64,
    /// Largest scaled constraint excess `max_i max(0, s_i (y_i − ȳ_i))`.
    pub max_residual: f64,
    pub projected_gradient: f64,
    pub iterations: usize,
    pub outer_rounds: usize,
    pub converged: bool,
    /// Multiplier estimates, one per constraint row.
    pub multipliers: Vec<f64>,
    pub rho: f64,
    /// Divisor applied to the cost inside the solver; multipliers are
    /// relative to it.
    pub cost_scale: f64,
}

struct Problem<'a> {
    net: &'a Network,
    phi: &'a LoadVector,
    mid: Vec<f64>,
    half: Vec<f64>,
    cost_scale: f64,
    /// Limits are tightened by this much so converged points are strictly
    /// feasible.
    margin: f64,
    pf: PfSettings,
}

struct Point {
    xi: Vec<f64>,
    dispatch: Dispatch,
    state: VoltageState,
    cost: f64,
    residuals: Vec<f64>,
}

impl Problem<'_> {
    fn dispatch(&self, xi: &[f64]) -> Dispatch {
        let x: Vec<f64> = xi
            .iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(z, (m, h))| m + h * z)
            .collect();
        Dispatch::from_x(&x, &self.net.index)
    }

    fn point(&self, xi: Vec<f64>, warm: Option<&VoltageState>) -> Result<Point> {
        let dispatch = self.dispatch(&xi);
        let state = match solve_pf(self.net, &dispatch, self.phi, warm, &self.pf) {
            Err(Error::PfDivergence { .. } | Error::SingularJacobian) if warm.is_some() => {
                solve_pf(self.net, &dispatch, self.phi, None, &self.pf)?
            }
            r => r?,
        };
        let cost = self.net.cost(&dispatch, &state, self.phi);
        let y = constraint_values(self.net, &state, self.phi);
        Ok(Point {
            residuals: y.residuals().into_iter().map(|r| r + self.margin).collect(),
            xi,
            dispatch,
            state,
            cost,
        })
    }

    /// Augmented Lagrangian `c/c_s + Σ (max(0, μ + ρr)² − μ²) / 2ρ`.
    fn merit(&self, p: &Point, mu: &[f64], rho: f64) -> f64 {
        let pen: f64 = p
            .residuals
            .iter()
            .zip(mu)
            .map(|(r, m)| {
                let t = (m + rho * r).max(0.0);
                t * t - m * m
            })
            .sum();
        p.cost / self.cost_scale + pen / (2.0 * rho)
    }

    /// Gradient of the merit with respect to `u` (for the adjoint solve) and
    /// its direct part with respect to `x`, both unscaled by `half`.
    fn partials(
        &self,
        dispatch: &Dispatch,
        state: &VoltageState,
        mu: &[f64],
        rho: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let net = self.net;
        let index = &net.index;
        let y = constraint_values(net, state, self.phi);
        let weights: Vec<f64> = y
            .residuals()
            .iter()
            .zip(mu)
            .zip(&y.scales)
            .map(|((r, m), s)| (m + rho * (r + self.margin)).max(0.0) * s)
            .collect();
        let mut grad_u = constraint_vjp(net, state, &weights);
        let base = net.case.base_mva;
        let p_gen = generation(net, dispatch, state, self.phi);
        let slack = net.case.generators[index.gen_of[0]]
            .cost
            .marginal(p_gen[0], base)
            / self.cost_scale;
        for (g, d) in grad_u.iter_mut().zip(slack_injection_gradient(net, state)) {
            *g += slack * d;
        }
        let mut direct = vec![0.0; index.dim_x()];
        for j in 1..index.n_gen() {
            let c = &net.case.generators[index.gen_of[j]].cost;
            direct[index.p_slot(j)] = c.marginal(p_gen[j], base) / self.cost_scale;
        }
        (grad_u, direct)
    }

    fn gradient(&self, p: &Point, mu: &[f64], rho: f64) -> Result<Vec<f64>> {
        let net = self.net;
        let (grad_u, direct) = self.partials(&p.dispatch, &p.state, mu, rho);
        let grad_x = sensitivity_vjp(&p.state, &net.ybus, &net.index, &grad_u)?;
        Ok(grad_x
            .iter()
            .zip(&direct)
            .zip(&self.half)
            .map(|((g, d), h)| (g + d) * h)
            .collect())
    }

    /// Hessian of the merit in `ξ`, one column per directional difference of
    /// the adjoint gradient. The state moves along the sensitivity instead of
    /// being re-solved, so one factorization of the power flow Jacobian and
    /// one of its transpose serve every column.
    fn hessian(&self, p: &Point, mu: &[f64], rho: f64) -> Result<DMatrix<f64>> {
        let net = self.net;
        let index = &net.index;
        let n = p.xi.len();
        let jac = pf_jacobian(&p.state, &net.ybus, index);
        let forward = factor(jac.clone())?;
        let adjoint = factor(jac.transpose())?;
        let (a0, direct0) = self.partials(&p.dispatch, &p.state, mu, rho);
        let lambda = adjoint.solve_vec(&DVector::from_column_slice(&a0))?;
        let jt_lambda = jac.tr_mul(&lambda);
        let rhs = DMatrix::from_fn(index.dim_u(), n, |r, c| if r == c { 1.0 } else { 0.0 });
        let sens = forward.solve(&rhs)?;
        let u0 = p.state.to_u(index);
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            if self.half[j] == 0.0 {
                h[(j, j)] = 1.0;
                continue;
            }
            let t = FD_STEP;
            let mut xi = p.xi.clone();
            xi[j] += t;
            let dispatch = self.dispatch(&xi);
            let u: Vec<f64> = u0
                .iter()
                .enumerate()
                .map(|(r, v)| v + t * self.half[j] * sens[(r, j)])
                .collect();
            let state = VoltageState::from_u(&u, index);
            let (a1, direct1) = self.partials(&dispatch, &state, mu, rho);
            let jt1_lambda = pf_jacobian(&state, &net.ybus, index).tr_mul(&lambda);
            let r = DVector::from_iterator(
                a1.len(),
                (0..a1.len()).map(|k| a1[k] - a0[k] - (jt1_lambda[k] - jt_lambda[k])),
            );
            let dl = adjoint.solve_vec(&r)?;
            for i in 0..n {
                h[(i, j)] = self.half[i] * (dl[i] + direct1[i] - direct0[i]) / t;
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

const FD_STEP: f64 = 1e-6;
/// Inner rounds stop once the merit falls by less than this (relative) over
/// `STALL_WINDOW` steps.
const STALL_DECREASE: f64 = 1e-7;
/// Outer rounds stop, unconverged, after two feasible rounds that each move
/// the cost by less than this (relative).
const STALL_COST: f64 = 1e-6;
const STALL_WINDOW: usize = 10;

fn project(xi: &mut [f64], half: &[f64]) {
    for (z, h) in xi.iter_mut().zip(half) {
        *z = if *h > 0.0 { z.clamp(-1.0, 1.0) } else { 0.0 };
    }
}

fn projected_gradient_norm(xi: &[f64], g: &[f64]) -> f64 {
    xi.iter()
        .zip(g)
        .map(|(z, gi)| ((z - gi).clamp(-1.0, 1.0) - z).abs())
        .fold(0.0, f64::max)
}

fn max_excess(residuals: &[f64]) -> f64 {
    residuals.iter().fold(0.0f64, |m, r| m.max(*r))
}

/// Solve the OPF for one load realization, optionally starting from a
/// dispatch.
pub fn solve_opf(
    net: &Network,
    phi: &LoadVector,
    start: Option<&Dispatch>,
    settings: &OpfSettings,
) -> Result<OpfSolution> {
    solve(net, phi, start, None, None, settings)
}

/// Like [`solve_opf`], reusing the dispatch, voltages and multipliers of a
/// previous solution.
pub fn solve_opf_warm(
    net: &Network,
    phi: &LoadVector,
    previous: &OpfSolution,
    settings: &OpfSettings,
) -> Result<OpfSolution> {
    solve(
        net,
        phi,
        Some(&previous.dispatch),
        Some(&previous.state),
        Some((&previous.multipliers, previous.cost_scale)),
        settings,
    )
}

fn solve(
    net: &Network,
    phi: &LoadVector,
    start: Option<&Dispatch>,
    warm_state: Option<&VoltageState>,
    warm_duals: Option<(&Vec<f64>, f64)>,
    settings: &OpfSettings,
) -> Result<OpfSolution> {
    let index = &net.index;
    let mid: Vec<f64> = index
        .x_lower
        .iter()
        .zip(&index.x_upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let half: Vec<f64> = index
        .x_lower
        .iter()
        .zip(&index.x_upper)
        .map(|(l, u)| 0.5 * (u - l))
        .collect();
    let mut xi: Vec<f64> = match start {
        Some(d) => d
            .to_x()
            .iter()
            .zip(mid.iter().zip(&half))
            .map(|(x, (m, h))| if *h > 0.0 { (x - m) / h } else { 0.0 })
            .collect(),
        None => vec![0.0; index.dim_x()],
    };
    project(&mut xi, &half);

    let mut problem = Problem {
        net,
        phi,
        mid,
        half,
        cost_scale: 1.0,
        margin: settings.tol_feas,
        pf: settings.pf,
    };
    let mut current = problem.point(xi, warm_state)?;
    let m = net.layout.len();
    let (mut mu, mut rho) = match warm_duals {
        Some((mu, scale)) if mu.len() == m => {
            problem.cost_scale = scale;
            (mu.clone(), settings.rho0)
        }
        _ => {
            problem.cost_scale = current.cost.abs().max(1.0);
            (vec![0.0; m], settings.rho0)
        }
    };

    let mut iterations = 0;
    let mut outer_rounds = 0;
    let mut last_excess = f64::INFINITY;
    let mut pg = f64::INFINITY;
    let mut converged = false;
    let mut omega = settings.tol_grad.max(1e-2);
    let mut last_cost = f64::INFINITY;
    let mut previous_settled = false;

    while outer_rounds < settings.max_outer {
        outer_rounds += 1;
        // inner: projected Newton on the augmented Lagrangian
        let mut f = problem.merit(&current, &mu, rho);
        let mut g = problem.gradient(&current, &mu, rho)?;
        let mut damping = 1e-3;
        let mut window_start = f;
        for inner in 0..settings.max_inner {
            pg = projected_gradient_norm(&current.xi, &g);
            if pg < omega {
                break;
            }
            let free = free_set(&current.xi, &g, &problem.half, pg.min(0.05));
            let b = problem.hessian(&current, &mu, rho)?;
            let d = newton_direction(&b, &g, &free, &mut damping);
            let Some((next, f_next, full)) = line_search(&problem, &current, f, &g, &d, &mu, rho)
            else {
                break;
            };
            damping = if full { damping * 0.25 } else { (damping * 4.0).max(1e-6) };
            iterations += 1;
            let g_next = problem.gradient(&next, &mu, rho)?;
            let mut stalled = (f - f_next).abs() <= 1e-15 * f.abs().max(1.0);
            current = next;
            f = f_next;
            g = g_next;
            if (inner + 1) % STALL_WINDOW == 0 {
                stalled |= window_start - f <= STALL_DECREASE * f.abs().max(1.0);
                window_start = f;
            }
            if stalled {
                break;
            }
        }

        let excess = max_excess(&current.residuals);
        // gradient of the Lagrangian after the multiplier update
        for (mi, r) in mu.iter_mut().zip(&current.residuals) {
            *mi = (*mi + rho * r).max(0.0);
        }
        let g_lag = problem.gradient(&current, &mu, 0.0)?;
        pg = projected_gradient_norm(&current.xi, &g_lag);
        if excess < settings.tol_feas && pg < settings.tol_grad {
            converged = true;
            break;
        }
        let settled = (current.cost - last_cost).abs() <= STALL_COST * current.cost.abs();
        if excess < settings.tol_feas && settled && previous_settled {
            break;
        }
        previous_settled = settled;
        last_cost = current.cost;
        if excess >= settings.tol_feas && excess > 0.25 * last_excess {
            rho = (rho * 10.0).min(settings.rho_max);
        }
        last_excess = excess;
        omega = if excess < settings.tol_feas {
            settings.tol_grad
        } else {
            settings.tol_grad.max(0.1 * omega)
        };
    }

    Ok(OpfSolution {
        max_residual: max_excess(
            &current
                .residuals
                .iter()
                .map(|r| r - problem.margin)
                .collect::<Vec<_>>(),
        ),
        projected_gradient: pg,
        dispatch: current.dispatch,
        state: current.state,
        cost: current.cost,
        iterations,
        outer_rounds,
        converged,
        multipliers: mu,
        rho,
        cost_scale: problem.cost_scale,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinates not within `eps` of a bound the gradient pushes against.
fn free_set(xi: &[f64], g: &[f64], half: &[f64], eps: f64) -> Vec<bool> {
    xi.iter()
        .zip(g)
        .zip(half)
        .map(|((z, gi), h)| {
            *h > 0.0 && !((*z <= -1.0 + eps && *gi > 0.0) || (*z >= 1.0 - eps && *gi < 0.0))
        })
        .collect()
}

/// Solve `(B_FF + τD) d_F = −g_F` with `D = diag|B_ii|` and `τ` the damping,
/// raising the damping until the matrix is positive definite; the other
/// coordinates take a diagonally scaled gradient step.
fn newton_direction(b: &DMatrix<f64>, g: &[f64], free: &[bool], damping: &mut f64) -> Vec<f64> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| free[i]).collect();
    let k = idx.len();
    let mut d: Vec<f64> = (0..g.len())
        .map(|i| {
            let bii = b[(i, i)];
            if bii > 0.0 { -g[i] / bii } else { -g[i] }
        })
        .collect();
    if k == 0 {
        return d;
    }
    let sub = DMatrix::from_fn(k, k, |i, j| b[(idx[i], idx[j])]);
    let rhs = DVector::from_iterator(k, idx.iter().map(|&i| -g[i]));
    let scale = (0..k).map(|i| sub[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    loop {
        let mut shifted = sub.clone();
        for i in 0..k {
            shifted[(i, i)] += *damping * sub[(i, i)].abs().max(1e-6 * scale);
        }
        if let Some(chol) = shifted.cholesky() {
            let sol = chol.solve(&rhs);
            for (n, &i) in idx.iter().enumerate() {
                d[i] = sol[n];
            }
            return d;
        }
        *damping = (*damping * 10.0).max(1e-8);
    }
}

fn line_search(
    problem: &Problem<'_>,
    current: &Point,
    f: f64,
    g: &[f64],
    d: &[f64],
    mu: &[f64],
    rho: f64,
) -> Option<(Point, f64, bool)> {
    let mut t = 1.0;
    for _ in 0..40 {
        let mut xi: Vec<f64> = current.xi.iter().zip(d).map(|(z, di)| z + t * di).collect();
        project(&mut xi, &problem.half);
        let step: Vec<f64> = xi.iter().zip(&current.xi).map(|(a, b)| a - b).collect();
        if step.iter().all(|s| *s == 0.0) {
            return None;
        }
        if let Ok(p) = problem.point(xi, Some(&current.state)) {
            let f_new = problem.merit(&p, mu, rho);
            if f_new <= f + 1e-4 * dot(g, &step) {
                return Some((p, f_new, t == 1.0));
            }
        }
        t *= 0.5;
    }
    None
}

/// Solve the OPF on every sample in order, warm-starting each solve from the
/// previous solution, and score the dispatches like a policy.
pub fn evaluate_baseline(
    net: &Network,
    samples: &[LoadVector],
    settings: &OpfSettings,
) -> Result<Metrics> {
    let mut builder = MetricsBuilder::new(net, "baseline");
    let mut previous: Option<OpfSolution> = None;
    for phi in samples {
        let attempt = match &previous {
            Some(prev) => solve_opf_warm(net, phi, prev, settings),
            None => solve_opf(net, phi, None, settings),
        };
        match attempt {
            Ok(sol) => {
                if !sol.converged {
                    builder.record_unconverged();
                }
                builder.record(sol.cost, &constraint_values(net, &sol.state, phi));
                previous = Some(sol);
            }
            Err(Error::PfDivergence { .. } | Error::SingularJacobian) => {
                builder.record_failure();
                previous = None;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::parse_case;

    fn with_problem<T>(text: &str, body: impl FnOnce(&Problem<'_>, Vec<f64>) -> T) -> T {
        let net = Network::new(parse_case(text).unwrap()).unwrap();
        let phi = net.case.nominal_loads();
        let index = &net.index;
        let mid: Vec<f64> = (0..index.dim_x())
            .map(|i| 0.5 * (index.x_lower[i] + index.x_upper[i]))
            .collect();
        let half: Vec<f64> = (0..index.dim_x())
            .map(|i| 0.5 * (index.x_upper[i] - index.x_lower[i]))
            .collect();
        let problem = Problem {
            net: &net,
            phi: &phi,
            mid,
            half: half.clone(),
            cost_scale: 1000.0,
            margin: 0.0,
            pf: PfSettings {
                tol: 1e-12,
                ..PfSettings::default()
            },
        };
        let xi: Vec<f64> = (0..half.len())
            .map(|i| if half[i] > 0.0 { 0.3 * ((i as f64) * 1.7).sin() } else { 0.0 })
            .collect();
        body(&problem, xi)
    }

    fn multipliers(m: usize) -> Vec<f64> {
        (0..m).map(|i| if i % 3 == 0 { 0.5 } else { 0.0 }).collect()
    }

    fn merit_gradient_error(text: &str) -> f64 {
        with_problem(text, |problem, xi| {
        let half = problem.half.clone();
        let p = problem.point(xi.clone(), None).unwrap();
        let mu = multipliers(p.residuals.len());
        let rho = 10.0;
        let g = problem.gradient(&p, &mu, rho).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..xi.len() {
            if half[j] == 0.0 {
                continue;
            }
            let h = 1e-6;
            let mut up = xi.clone();
            up[j] += h;
            let mut dn = xi.clone();
            dn[j] -= h;
            let fu = problem.merit(&problem.point(up, Some(&p.state)).unwrap(), &mu, rho);
            let fd = problem.merit(&problem.point(dn, Some(&p.state)).unwrap(), &mu, rho);
            let num = (fu - fd) / (2.0 * h);
            worst = worst.max((num - g[j]).abs() / g[j].abs().max(1e-2));
        }
        worst
        })
    }

    fn hessian_error(text: &str) -> f64 {
        with_problem(text, |problem, xi| {
            let p = problem.point(xi.clone(), None).unwrap();
            let mu = multipliers(p.residuals.len());
            let rho = 10.0;
            let h = problem.hessian(&p, &mu, rho).unwrap();
            let n = xi.len();
            let mut num = DMatrix::<f64>::identity(n, n);
            for j in (0..n).filter(|&j| problem.half[j] > 0.0) {
                let step = 1e-5;
                let mut up = xi.clone();
                up[j] += step;
                let mut dn = xi.clone();
                dn[j] -= step;
                let grad = |z: Vec<f64>| {
                    problem.gradient(&problem.point(z, Some(&p.state)).unwrap(), &mu, rho).unwrap()
                };
                let (gu, gd) = (grad(up), grad(dn));
                for i in 0..n {
                    num[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
                }
            }
            let num = (&num + num.transpose()) * 0.5;
            let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (&h - &num).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
        })
    }

    #[test]
    fn hessian_matches_differences_of_resolved_gradients() {
        for text in [
            include_str!("../fixtures/case14_ieee.m"),
            include_str!("../fixtures/case118.m"),
        ] {
            let err = hessian_error(text);
            assert!(err < 1e-4, "relative error {err:e}");
        }
    }

    #[test]
    fn merit_gradient_matches_differences() {
        for text in [
            include_str!("../fixtures/case14_ieee.m"),
            include_str!("../fixtures/case118.m"),
        ] {
            let err = merit_gradient_error(text);
            assert!(err < 1e-4, "relative error {err:e}");
        }
    }

    #[test]
    fn projection_fixes_degenerate_coordinates() {
        let mut xi = vec![2.0, -3.0, 0.4, 0.7];
        project(&mut xi, &[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(xi, vec![1.0, -1.0, 0.4, 0.0]);
    }

    #[test]
    fn projected_gradient_ignores_blocked_directions() {
        assert_eq!(projected_gradient_norm(&[1.0, -1.0], &[-5.0, 3.0]), 0.0);
        assert_eq!(projected_gradient_norm(&[0.0], &[0.25]), 0.25);
    }

    #[test]
    fn newton_direction_scales_pinned_and_regularizes() {
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let mut damping = 0.0;
        let d = newton_direction(&b, &[1.0, 4.0], &[false, true], &mut damping);
        assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12);
        let d = newton_direction(&b, &[1.0, 4.0], &[true, true], &mut damping);
        assert!(d[0] < 0.0 && d[1] < 0.0);
        assert!(damping > 0.5);
    }
}
