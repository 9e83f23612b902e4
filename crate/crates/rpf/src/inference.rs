//! Mean-field variational inference for the full dynamic-social model, which
//! subsumes every variant: multinomial trigger responsibilities, conjugate
//! gamma coordinate updates, and ELBO tracking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BasisTable, EventHistory, SocialNetwork};
use crate::error::{Result, RpfError};
use crate::model::{ModelConfig, ModelParams};
use crate::special::{digamma, ln_gamma};

/// Rates are clamped above this floor to keep expectations finite.
const RATE_FLOOR: f64 = 1e-12;

/// A flat array of independent gamma surrogates in shape/rate form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaVec {
    pub shape: Vec<f64>,
    pub rate: Vec<f64>,
}

impl GammaVec {
    fn with_len(n: usize) -> Self {
        GammaVec { shape: vec![1.0; n], rate: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.shape[i] / self.rate[i]
    }

    /// E[ln x] under Gamma(shape, rate).
    #[inline]
    pub fn e_log(&self, i: usize) -> f64 {
        digamma(self.shape[i]) - self.rate[i].ln()
    }

    fn set(&mut self, i: usize, shape: f64, rate: f64) {
        self.shape[i] = shape;
        self.rate[i] = rate.max(RATE_FLOOR);
    }

    fn entropy_sum(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let a = self.shape[i];
                let b = self.rate[i];
                a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
            })
            .sum()
    }
}

/// Per-event categorical responsibilities over base factors (flattened
/// `(k, i, j)` triples) and admissible prior events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Responsibility {
    pub base: Vec<f64>,
    pub trig: Vec<f64>,
}

/// An admissible triggering event for some later event, together with the
/// influence edge it would act through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub event: usize,
    pub edge: usize,
}

/// Admissible prior events per event: same item, followee author, strictly
/// earlier, and within the kernel truncation window.
#[derive(Debug, Clone)]
pub struct TriggerCandidates {
    pub per_event: Vec<Vec<Candidate>>,
}

impl TriggerCandidates {
    pub fn build(history: &EventHistory, network: &SocialNetwork, config: &ModelConfig) -> Self {
        let window = config.kernel.truncation_window();
        let events = history.events();
        let per_event: Vec<Vec<Candidate>> = (0..events.len())
            .map(|n| {
                let e = events[n];
                let on_item = history.events_on_item(e.item);
                let pos = on_item.partition_point(|&idx| idx < n);
                let mut cands = Vec::new();
                for &m in on_item[..pos].iter().rev() {
                    let prior = events[m];
                    if e.time - prior.time > window {
                        break;
                    }
                    if prior.time >= e.time {
                        continue; // ties cannot trigger
                    }
                    if let Some(edge) = network.edge_id(prior.user, e.user) {
                        cands.push(Candidate { event: m, edge });
                    }
                }
                cands.reverse();
                cands
            })
            .collect();
        TriggerCandidates { per_event }
    }
}

/// Gamma surrogates for every latent variable plus per-event responsibilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub user_basis_dim: usize,
    pub item_basis_dim: usize,
    pub theta: GammaVec,
    pub beta: GammaVec,
    pub tau: GammaVec,
    pub eta: GammaVec,
    pub xi: GammaVec,
    pub mu: GammaVec,
    pub resp: Vec<Responsibility>,
}

impl VariationalState {
    /// Gamma parameters start at the prior hyperparameters, each entry
    /// perturbed by an independent Uniform(0.9, 1.1) factor to break the
    /// symmetry between latent dimensions.
    pub fn init(
        history: &EventHistory,
        network: &SocialNetwork,
        config: &ModelConfig,
        seed: u64,
    ) -> Self {
        let (num_users, num_items) = (history.num_users(), history.num_items());
        let (k, i_dim, j_dim) = (config.latent_dim, config.basis.user_dim(), config.basis.item_dim());
        let h = &config.hyper;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perturb = |base: f64| base * rng.gen_range(0.9..1.1);

        let mut state = VariationalState {
            num_users,
            num_items,
            latent_dim: k,
            user_basis_dim: i_dim,
            item_basis_dim: j_dim,
            theta: GammaVec::with_len(num_users * k * i_dim),
            beta: GammaVec::with_len(num_items * k * j_dim),
            tau: GammaVec::with_len(network.num_edges()),
            eta: GammaVec::with_len(num_users),
            xi: GammaVec::with_len(num_items),
            mu: GammaVec::with_len(num_users),
            resp: vec![Responsibility::default(); history.len()],
        };
        let eta_mean = h.eta_shape / h.eta_rate;
        let xi_mean = h.xi_shape / h.xi_rate;
        let mu_mean = h.mu_shape / h.mu_rate;
        for i in 0..state.theta.len() {
            let (s, r) = (perturb(h.theta_shape), perturb(eta_mean));
            state.theta.set(i, s, r);
        }
        for i in 0..state.beta.len() {
            let (s, r) = (perturb(h.beta_shape), perturb(xi_mean));
            state.beta.set(i, s, r);
        }
        for i in 0..state.tau.len() {
            let (s, r) = (perturb(h.tau_shape), perturb(mu_mean));
            state.tau.set(i, s, r);
        }
        for u in 0..num_users {
            let (s, r) = (perturb(h.eta_shape), perturb(h.eta_rate));
            state.eta.set(u, s, r);
            let (s, r) = (perturb(h.mu_shape), perturb(h.mu_rate));
            state.mu.set(u, s, r);
        }
        for p in 0..num_items {
            let (s, r) = (perturb(h.xi_shape), perturb(h.xi_rate));
            state.xi.set(p, s, r);
        }
        state
    }

    #[inline]
    pub fn theta_idx(&self, u: usize, k: usize, i: usize) -> usize {
        (u * self.latent_dim + k) * self.user_basis_dim + i
    }

    #[inline]
    pub fn beta_idx(&self, p: usize, k: usize, j: usize) -> usize {
        (p * self.latent_dim + k) * self.item_basis_dim + j
    }

    #[inline]
    fn base_factor_idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.user_basis_dim + i) * self.item_basis_dim + j
    }

    pub fn num_base_factors(&self) -> usize {
        self.latent_dim * self.user_basis_dim * self.item_basis_dim
    }

    /// Variational means as point estimates.
    pub fn point_estimates(&self) -> ModelParams {
        ModelParams {
            num_users: self.num_users,
            num_items: self.num_items,
            latent_dim: self.latent_dim,
            user_basis_dim: self.user_basis_dim,
            item_basis_dim: self.item_basis_dim,
            theta: (0..self.theta.len()).map(|i| self.theta.mean(i)).collect(),
            beta: (0..self.beta.len()).map(|i| self.beta.mean(i)).collect(),
            tau: (0..self.tau.len()).map(|i| self.tau.mean(i)).collect(),
            eta: (0..self.eta.len()).map(|i| self.eta.mean(i)).collect(),
            xi: (0..self.xi.len()).map(|i| self.xi.mean(i)).collect(),
            mu: (0..self.mu.len()).map(|i| self.mu.mean(i)).collect(),
        }
    }
}

/// Precomputed per-fit quantities: candidate sets, basis integrals, and each
/// user's accumulated kernel mass `sum_{e in E_v} G(T - t_e)`.
pub struct InferenceContext<'a> {
    pub history: &'a EventHistory,
    pub network: &'a SocialNetwork,
    pub config: &'a ModelConfig,
    pub candidates: TriggerCandidates,
    pub basis_table: BasisTable,
    pub kernel_mass: Vec<f64>,
}

impl<'a> InferenceContext<'a> {
    pub fn new(history: &'a EventHistory, network: &'a SocialNetwork, config: &'a ModelConfig) -> Self {
        let candidates = TriggerCandidates::build(history, network, config);
        let basis_table = BasisTable::new(&config.basis, history.horizon());
        let mut kernel_mass = vec![0.0; history.num_users()];
        for e in history.events() {
            kernel_mass[e.user] += config.kernel.integral_nn(history.horizon() - e.time);
        }
        InferenceContext { history, network, config, candidates, basis_table, kernel_mass }
    }
}

/// Updates every event's trigger responsibilities from the current gamma
/// surrogates. Events are independent given a frozen snapshot of the global
/// parameters, so this fans out across a thread pool deterministically.
pub fn local_step(state: &mut VariationalState, ctx: &InferenceContext) {
    let elog_theta: Vec<f64> = (0..state.theta.len()).map(|i| state.theta.e_log(i)).collect();
    let elog_beta: Vec<f64> = (0..state.beta.len()).map(|i| state.beta.e_log(i)).collect();
    let elog_tau: Vec<f64> = (0..state.tau.len()).map(|i| state.tau.e_log(i)).collect();
    let (k_dim, i_dim, j_dim) = (state.latent_dim, state.user_basis_dim, state.item_basis_dim);
    let basis = &ctx.config.basis;
    let omega = ctx.config.kernel.decay();
    let events = ctx.history.events();

    let snapshot = &*state; // immutable view for closures
    let new_resp: Vec<Responsibility> = (0..events.len())
        .into_par_iter()
        .map(|n| {
            let e = events[n];
            let h_vals: Vec<f64> = (0..i_dim).map(|i| basis.user_value(i, e.time)).collect();
            let l_vals: Vec<f64> = (0..j_dim).map(|j| basis.item_value(j, e.time)).collect();
            let cands = &ctx.candidates.per_event[n];
            let n_base = snapshot.num_base_factors();
            // Log-domain weights with a max shift for stability.
            let mut log_w = Vec::with_capacity(n_base + cands.len());
            for k in 0..k_dim {
                for i in 0..i_dim {
                    for j in 0..j_dim {
                        let hl = h_vals[i] * l_vals[j];
                        if hl > 0.0 {
                            log_w.push(
                                elog_theta[snapshot.theta_idx(e.user, k, i)]
                                    + elog_beta[snapshot.beta_idx(e.item, k, j)]
                                    + hl.ln(),
                            );
                        } else {
                            log_w.push(f64::NEG_INFINITY);
                        }
                    }
                }
            }
            for c in cands {
                let dt = e.time - events[c.event].time;
                log_w.push(elog_tau[c.edge] - omega * dt);
            }
            let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> =
                log_w.iter().map(|&lw| if lw.is_finite() { (lw - max).exp() } else { 0.0 }).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let trig = weights.split_off(n_base);
            Responsibility { base: weights, trig }
        })
        .collect();
    state.resp = new_resp;
}

/// One full sweep of conjugate gamma updates in the fixed order: per user
/// mu, eta, tau, theta; then per item xi, beta. Expected counts come from the
/// responsibilities produced by the preceding local step.
pub fn global_step(state: &mut VariationalState, ctx: &InferenceContext) {
    let h = &ctx.config.hyper;
    let events = ctx.history.events();
    let (k_dim, i_dim, j_dim) = (state.latent_dim, state.user_basis_dim, state.item_basis_dim);

    // Expected counts.
    let mut theta_count = vec![0.0; state.theta.len()];
    let mut beta_count = vec![0.0; state.beta.len()];
    let mut tau_count = vec![0.0; state.tau.len()];
    for (n, e) in events.iter().enumerate() {
        let resp = &state.resp[n];
        for k in 0..k_dim {
            for i in 0..i_dim {
                for j in 0..j_dim {
                    let g = resp.base[state.base_factor_idx(k, i, j)];
                    theta_count[state.theta_idx(e.user, k, i)] += g;
                    beta_count[state.beta_idx(e.item, k, j)] += g;
                }
            }
        }
        for (c, &g) in ctx.candidates.per_event[n].iter().zip(&resp.trig) {
            tau_count[c.edge] += g;
        }
    }

    // sum_p E[beta_pkj], from the current (pre-update) item surrogates.
    let mut beta_colsum = vec![0.0; k_dim * j_dim];
    for p in 0..state.num_items {
        for k in 0..k_dim {
            for j in 0..j_dim {
                beta_colsum[k * j_dim + j] += state.beta.mean(state.beta_idx(p, k, j));
            }
        }
    }

    for u in 0..state.num_users {
        // q(mu_u)
        let followers = ctx.network.num_followers(u);
        let mu_shape = h.mu_shape + followers as f64 * h.tau_shape;
        let mu_rate = h.mu_rate
            + ctx.network.outgoing_edges(u).iter().map(|&eid| state.tau.mean(eid)).sum::<f64>();
        state.mu.set(u, mu_shape, mu_rate);

        // q(eta_u)
        let eta_shape = h.eta_shape + (k_dim * i_dim) as f64 * h.theta_shape;
        let eta_rate = h.eta_rate
            + (0..k_dim)
                .flat_map(|k| (0..i_dim).map(move |i| (k, i)))
                .map(|(k, i)| state.theta.mean(state.theta_idx(u, k, i)))
                .sum::<f64>();
        state.eta.set(u, eta_shape, eta_rate);

        // q(tau_vu) for every followee v of u
        for eid in ctx.network.incoming_edge_range(u) {
            let (v, _) = ctx.network.edge(eid);
            let shape = h.tau_shape + tau_count[eid];
            let rate = ctx.kernel_mass[v] + state.mu.mean(v);
            state.tau.set(eid, shape, rate);
        }

        // q(theta_uk^i)
        let eta_mean = state.eta.mean(u);
        for k in 0..k_dim {
            for i in 0..i_dim {
                let idx = state.theta_idx(u, k, i);
                let shape = h.theta_shape + theta_count[idx];
                let rate = (0..j_dim)
                    .map(|j| ctx.basis_table.get(i, j) * beta_colsum[k * j_dim + j])
                    .sum::<f64>()
                    + eta_mean;
                state.theta.set(idx, shape, rate);
            }
        }
    }

    // sum_u E[theta_uk^i], from the just-updated user surrogates.
    let mut theta_colsum = vec![0.0; k_dim * i_dim];
    for u in 0..state.num_users {
        for k in 0..k_dim {
            for i in 0..i_dim {
                theta_colsum[k * i_dim + i] += state.theta.mean(state.theta_idx(u, k, i));
            }
        }
    }

    for p in 0..state.num_items {
        // q(xi_p)
        let xi_shape = h.xi_shape + (k_dim * j_dim) as f64 * h.beta_shape;
        let xi_rate = h.xi_rate
            + (0..k_dim)
                .flat_map(|k| (0..j_dim).map(move |j| (k, j)))
                .map(|(k, j)| state.beta.mean(state.beta_idx(p, k, j)))
                .sum::<f64>();
        state.xi.set(p, xi_shape, xi_rate);

        // q(beta_pk^j)
        let xi_mean = state.xi.mean(p);
        for k in 0..k_dim {
            for j in 0..j_dim {
                let idx = state.beta_idx(p, k, j);
                let shape = h.beta_shape + beta_count[idx];
                let rate = (0..i_dim)
                    .map(|i| ctx.basis_table.get(i, j) * theta_colsum[k * i_dim + i])
                    .sum::<f64>()
                    + xi_mean;
                state.beta.set(idx, shape, rate);
            }
        }
    }
}

/// Evidence lower bound of the current state: expected complete-data
/// log-density plus the entropy of the surrogate.
pub fn elbo(state: &VariationalState, ctx: &InferenceContext) -> Result<f64> {
    let h = &ctx.config.hyper;
    let events = ctx.history.events();
    let basis = &ctx.config.basis;
    let omega = ctx.config.kernel.decay();
    let (k_dim, i_dim, j_dim) = (state.latent_dim, state.user_basis_dim, state.item_basis_dim);

    // Expected event term plus responsibility entropy.
    let mut event_term = 0.0;
    let mut resp_entropy = 0.0;
    for (n, e) in events.iter().enumerate() {
        let resp = &state.resp[n];
        for k in 0..k_dim {
            for i in 0..i_dim {
                let hv = basis.user_value(i, e.time);
                for j in 0..j_dim {
                    let g = resp.base[state.base_factor_idx(k, i, j)];
                    if g <= 0.0 {
                        continue;
                    }
                    let hl = hv * basis.item_value(j, e.time);
                    event_term += g
                        * (state.theta.e_log(state.theta_idx(e.user, k, i))
                            + state.beta.e_log(state.beta_idx(e.item, k, j))
                            + hl.ln());
                    resp_entropy -= g * g.ln();
                }
            }
        }
        for (c, &g) in ctx.candidates.per_event[n].iter().zip(&resp.trig) {
            if g <= 0.0 {
                continue;
            }
            let dt = e.time - events[c.event].time;
            event_term += g * (state.tau.e_log(c.edge) - omega * dt);
            resp_entropy -= g * g.ln();
        }
    }

    // Expected survival integral.
    let mut survival = 0.0;
    for k in 0..k_dim {
        for i in 0..i_dim {
            let theta_sum: f64 =
                (0..state.num_users).map(|u| state.theta.mean(state.theta_idx(u, k, i))).sum();
            for j in 0..j_dim {
                let beta_sum: f64 =
                    (0..state.num_items).map(|p| state.beta.mean(state.beta_idx(p, k, j))).sum();
                survival += theta_sum * beta_sum * ctx.basis_table.get(i, j);
            }
        }
    }
    for v in 0..state.num_users {
        let outflow: f64 =
            ctx.network.outgoing_edges(v).iter().map(|&eid| state.tau.mean(eid)).sum();
        survival += outflow * ctx.kernel_mass[v];
    }

    // Expected gamma log-priors.
    let fixed_prior = |gv: &GammaVec, shape: f64, rate: f64| -> f64 {
        (0..gv.len())
            .map(|i| shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * gv.e_log(i) - rate * gv.mean(i))
            .sum()
    };
    let mut prior = fixed_prior(&state.eta, h.eta_shape, h.eta_rate)
        + fixed_prior(&state.xi, h.xi_shape, h.xi_rate)
        + fixed_prior(&state.mu, h.mu_shape, h.mu_rate);
    for u in 0..state.num_users {
        let e_eta = state.eta.mean(u);
        let elog_eta = state.eta.e_log(u);
        for k in 0..k_dim {
            for i in 0..i_dim {
                let idx = state.theta_idx(u, k, i);
                prior += h.theta_shape * elog_eta - ln_gamma(h.theta_shape)
                    + (h.theta_shape - 1.0) * state.theta.e_log(idx)
                    - e_eta * state.theta.mean(idx);
            }
        }
    }
    for p in 0..state.num_items {
        let e_xi = state.xi.mean(p);
        let elog_xi = state.xi.e_log(p);
        for k in 0..k_dim {
            for j in 0..j_dim {
                let idx = state.beta_idx(p, k, j);
                prior += h.beta_shape * elog_xi - ln_gamma(h.beta_shape)
                    + (h.beta_shape - 1.0) * state.beta.e_log(idx)
                    - e_xi * state.beta.mean(idx);
            }
        }
    }
    for eid in 0..state.tau.len() {
        let (v, _) = ctx.network.edge(eid);
        prior += h.tau_shape * state.mu.e_log(v) - ln_gamma(h.tau_shape)
            + (h.tau_shape - 1.0) * state.tau.e_log(eid)
            - state.mu.mean(v) * state.tau.mean(eid);
    }

    let entropy = state.theta.entropy_sum()
        + state.beta.entropy_sum()
        + state.tau.entropy_sum()
        + state.eta.entropy_sum()
        + state.xi.entropy_sum()
        + state.mu.entropy_sum();

    let value = event_term - survival + prior + entropy + resp_entropy;
    if !value.is_finite() {
        return Err(RpfError::Numerical(format!("non-finite ELBO {value}")));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Relative ELBO-change convergence threshold.
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { epsilon: 1e-4, max_iters: 500, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub state: VariationalState,
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Runs coordinate ascent until the relative ELBO change drops below
/// `epsilon` or `max_iters` sweeps elapse. A non-converged result is still
/// returned, flagged.
pub fn fit(
    history: &EventHistory,
    network: &SocialNetwork,
    config: &ModelConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    if history.is_empty() {
        return Err(RpfError::Data("cannot fit an empty history".into()));
    }
    config.validate(network)?;
    let ctx = InferenceContext::new(history, network, config);
    let mut state = VariationalState::init(history, network, config, opts.seed);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..opts.max_iters {
        local_step(&mut state, &ctx);
        global_step(&mut state, &ctx);
        let value = elbo(&state, &ctx)?;
        trace.push(value);
        if prev.is_finite() && (value - prev).abs() <= opts.epsilon * value.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = value;
    }
    Ok(FitResult { params: state.point_estimates(), state, trace, converged })
}
