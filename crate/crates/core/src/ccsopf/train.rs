use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logistic, logistic_grad, split_samples, TrainConfig};
use crate::acpf::{
    constraint_values, constraint_vjp, generation, sensitivity_vjp, slack_injection_gradient,
    solve_pf, ConstraintVector, Dispatch, LoadVector, Network, VoltageState,
};
use crate::policy::{init_policy, PolicyParams};
use crate::{Error, Result};

/// Everything the primal and dual updates need from one load realization.
#[derive(Debug, Clone)]
pub struct LagrangianTerms {
    pub dispatch: Dispatch,
    pub state: VoltageState,
    /// Total generation cost, $/h.
    pub cost: f64,
    pub constraints: ConstraintVector,
    /// `1̃_ε(s_i (y_i − ȳ_i))` per constraint row.
    pub satisfaction: Vec<f64>,
    /// Single-sample Lagrangian `c + λᵀ((1 − α)1 − 1̃)`.
    pub lagrangian: f64,
    /// Gradient of `lagrangian` with respect to the policy parameters.
    pub grad_w: Vec<f64>,
}

/// Forward pass, power flow, and the gradient of the single-sample Lagrangian
/// by back-substitution through the power flow sensitivities.
pub fn lagrangian_terms(
    net: &Network,
    params: &PolicyParams,
    lambda: &[f64],
    phi: &LoadVector,
    cfg: &TrainConfig,
    warm: Option<&VoltageState>,
) -> Result<LagrangianTerms> {
    let index = &net.index;
    if lambda.len() != net.layout.len() {
        return Err(Error::Dimension(format!(
            "{} multipliers for {} constraints",
            lambda.len(),
            net.layout.len()
        )));
    }
    let cache = params.forward_cached(phi)?;
    let dispatch = Dispatch::from_x(&cache.x, index);
    let state = solve_pf(net, &dispatch, phi, warm, &cfg.pf)?;
    let cost = net.cost(&dispatch, &state, phi);
    let constraints = constraint_values(net, &state, phi);
    let residuals = constraints.residuals();
    let satisfaction: Vec<f64> = residuals.iter().map(|&r| logistic(r, cfg.epsilon)).collect();

    let lagrangian = cost
        + lambda
            .iter()
            .zip(&satisfaction)
            .map(|(l, s)| l * ((1.0 - cfg.alpha) - s))
            .sum::<f64>();

    // ∂L/∂y_i = −λ_i · 1̃'(r_i) · s_i
    let weights: Vec<f64> = lambda
        .iter()
        .zip(residuals.iter().zip(&constraints.scales))
        .map(|(&l, (&r, &s))| if l == 0.0 { 0.0 } else { -l * logistic_grad(r, cfg.epsilon) * s })
        .collect();
    let mut grad_u = constraint_vjp(net, &state, &weights);

    let base = net.case.base_mva;
    let p_gen = generation(net, &dispatch, &state, phi);
    let slack_marginal = net.case.generators[index.gen_of[0]]
        .cost
        .marginal(p_gen[0], base);
    for (g, d) in grad_u
        .iter_mut()
        .zip(slack_injection_gradient(net, &state))
    {
        *g += slack_marginal * d;
    }

    let mut grad_x = sensitivity_vjp(&state, &net.ybus, index, &grad_u)?;
    for j in 1..index.n_gen() {
        let c = &net.case.generators[index.gen_of[j]].cost;
        grad_x[index.p_slot(j)] += c.marginal(p_gen[j], base);
    }
    let grad_w = params.backprop(&cache, &grad_x);

    Ok(LagrangianTerms {
        dispatch,
        state,
        cost,
        constraints,
        satisfaction,
        lagrangian,
        grad_w,
    })
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64, cfg: &super::AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((w, g), m), v) in w.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.delta);
        }
    }
}

/// Mutable state of the primal-dual iteration.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    pub lambda: Vec<f64>,
    pub adam: Adam,
    /// Completed SPD updates.
    pub k: u64,
    pub epoch: usize,
    /// Samples skipped because the power flow failed.
    pub skipped: u64,
    pub rng: ChaCha8Rng,
    /// Last power flow solution, used as the next warm start.
    pub warm: Option<VoltageState>,
}

impl TrainState {
    pub fn new(net: &Network, cfg: &TrainConfig) -> Self {
        Self::from_params(net, init_policy(&net.index, cfg.mode, cfg.seed), cfg.seed)
    }

    pub fn from_params(net: &Network, params: PolicyParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self {
            adam: Adam::new(params.dim_w()),
            params,
            lambda: vec![0.0; net.layout.len()],
            k: 0,
            epoch: 0,
            skipped: 0,
            rng,
            warm: None,
        }
    }

    /// Primal step `μ0 · 0.5^epoch`.
    pub fn primal_step(&self, cfg: &TrainConfig) -> f64 {
        cfg.mu0 * 0.5f64.powi(self.epoch as i32)
    }
}

/// Dual step `ν0 / √k` for the `k`-th update (1-based).
pub fn dual_step(cfg: &TrainConfig, k: u64) -> f64 {
    cfg.nu0 / (k as f64).sqrt()
}

#[derive(Debug)]
pub enum StepOutcome {
    Updated {
        cost: f64,
        satisfaction: Vec<f64>,
        violated: Vec<bool>,
    },
    /// The power flow failed; nothing but the skip counter changed.
    Skipped(Error),
}

fn is_pf_failure(e: &Error) -> bool {
    matches!(e, Error::PfDivergence { .. } | Error::SingularJacobian)
}

/// One stochastic primal-dual update on a single load realization.
pub fn spd_step(
    state: &mut TrainState,
    net: &Network,
    phi: &LoadVector,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let mut attempt = lagrangian_terms(net, &state.params, &state.lambda, phi, cfg, state.warm.as_ref());
    if state.warm.is_some() && matches!(&attempt, Err(e) if is_pf_failure(e)) {
        attempt = lagrangian_terms(net, &state.params, &state.lambda, phi, cfg, None);
    }
    let terms = match attempt {
        Ok(t) => t,
        Err(e) if is_pf_failure(&e) => {
            state.skipped += 1;
            return Ok(StepOutcome::Skipped(e));
        }
        Err(e) => return Err(e),
    };

    state.k += 1;
    let mu = state.primal_step(cfg);
    let nu = dual_step(cfg, state.k);
    state
        .adam
        .step(&mut state.params.weights, &terms.grad_w, mu, &cfg.adam);
    for (l, s) in state.lambda.iter_mut().zip(&terms.satisfaction) {
        *l = (*l + nu * ((1.0 - cfg.alpha) - s)).max(0.0);
    }
    state.warm = Some(terms.state);
    Ok(StepOutcome::Updated {
        cost: terms.cost,
        violated: terms.constraints.violated().collect(),
        satisfaction: terms.satisfaction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub epoch: usize,
    /// Position of the sample in the training set.
    pub sample: usize,
    pub cost: f64,
    pub lambda_norm: f64,
    pub lambda_min: f64,
    /// Running maximum over constraints of the hard violation frequency
    /// within the current epoch.
    pub epoch_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub skipped: usize,
    pub mean_cost: f64,
    pub max_violation: f64,
    pub lambda_start: Vec<f64>,
    pub lambda_end: Vec<f64>,
    /// Smallest smoothed satisfaction seen per constraint during the epoch.
    pub min_satisfaction: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn iterations_csv(&self) -> String {
        let mut out = String::from("iteration,epoch,sample,cost,lambda_norm,lambda_min,epoch_violation\n");
        for r in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration, r.epoch, r.sample, r.cost, r.lambda_norm, r.lambda_min, r.epoch_violation
            ));
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,steps,skipped,mean_cost,max_violation,lambda_norm,lambda_max\n");
        for r in &self.epochs {
            let norm = r.lambda_end.iter().map(|l| l * l).sum::<f64>().sqrt();
            let max = r.lambda_end.iter().copied().fold(0.0, f64::max);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.steps, r.skipped, r.mean_cost, r.max_violation, norm, max
            ));
        }
        out
    }
}

/// Run `cfg.epochs` passes over `samples` from `state`.
pub fn train_from(
    net: &Network,
    cfg: &TrainConfig,
    state: &mut TrainState,
    samples: &[LoadVector],
) -> Result<History> {
    cfg.validate()?;
    state.params.check_network(&net.index)?;
    let m = net.layout.len();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        order.shuffle(&mut state.rng);
        let lambda_start = state.lambda.clone();
        let mut counts = vec![0usize; m];
        let mut min_sat = vec![1.0f64; m];
        let mut steps = 0usize;
        let mut skipped = 0usize;
        let mut cost_sum = 0.0;
        let mut worst = 0usize;

        for &s in &order {
            match spd_step(state, net, &samples[s], cfg)? {
                StepOutcome::Skipped(_) => skipped += 1,
                StepOutcome::Updated {
                    cost,
                    satisfaction,
                    violated,
                } => {
                    steps += 1;
                    cost_sum += cost;
                    for i in 0..m {
                        if violated[i] {
                            counts[i] += 1;
                            worst = worst.max(counts[i]);
                        }
                        min_sat[i] = min_sat[i].min(satisfaction[i]);
                    }
                    history.iterations.push(IterationRecord {
                        iteration: state.k,
                        epoch,
                        sample: s,
                        cost,
                        lambda_norm: state.lambda.iter().map(|l| l * l).sum::<f64>().sqrt(),
                        lambda_min: state.lambda.iter().copied().fold(f64::INFINITY, f64::min),
                        epoch_violation: worst as f64 / steps as f64,
                    });
                }
            }
            if skipped as f64 > cfg.max_failure_fraction * samples.len() as f64 {
                return Err(Error::TrainingAborted(format!(
                    "{skipped} of {} samples in epoch {epoch} had no power flow solution",
                    samples.len()
                )));
            }
        }

        history.epochs.push(EpochRecord {
            epoch,
            steps,
            skipped,
            mean_cost: if steps > 0 { cost_sum / steps as f64 } else { f64::NAN },
            max_violation: if steps > 0 { worst as f64 / steps as f64 } else { f64::NAN },
            lambda_start,
            lambda_end: state.lambda.clone(),
            min_satisfaction: min_sat,
        });
    }
    Ok(history)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub state: TrainState,
    pub history: History,
}

/// Train a fresh policy on the training half of the seeded sample split.
pub fn train(net: &Network, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = split_samples(&net.case, cfg.radius, cfg.n_train, cfg.n_test, cfg.seed);
    let mut state = TrainState::new(net, cfg);
    let history = train_from(net, cfg, &mut state, &split.train)?;
    Ok(TrainOutcome {
        params: state.params.clone(),
        state,
        history,
    })
}
