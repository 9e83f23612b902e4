//! Parameter containers, intensity functions for the RPF variants, the
//! complete-data intensity with an explicit trigger factor, and the point
//! process log-likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::domain::{BasisTable, EventHistory, SocialNetwork, TimeBasis, TriggerKernel};
use crate::error::{Result, RpfError};

/// Model variants. All share the DSRPF intensity machinery; the variant
/// controls which structure (basis, network) is admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Hierarchical: static basis, self-excitation only.
    Hrpf,
    /// Social: static basis, peer influence over the follow graph.
    Srpf,
    /// Dynamic: time-varying basis, self-excitation only.
    Drpf,
    /// Dynamic social: time-varying basis plus peer influence.
    Dsrpf,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_uppercase().as_str() {
            "HRPF" => Ok(Variant::Hrpf),
            "SRPF" => Ok(Variant::Srpf),
            "DRPF" => Ok(Variant::Drpf),
            "DSRPF" => Ok(Variant::Dsrpf),
            other => Err(RpfError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Gamma hyperparameters, shape/rate parameterization throughout
/// (mean = shape / rate).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub theta_shape: f64,
    pub beta_shape: f64,
    pub eta_shape: f64,
    pub eta_rate: f64,
    pub xi_shape: f64,
    pub xi_rate: f64,
    pub tau_shape: f64,
    pub mu_shape: f64,
    pub mu_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        // Sparse-inducing defaults common in hierarchical Poisson factorization.
        Hyperparams {
            theta_shape: 0.3,
            beta_shape: 0.3,
            eta_shape: 0.3,
            eta_rate: 1.0,
            xi_shape: 0.3,
            xi_rate: 1.0,
            tau_shape: 0.3,
            mu_shape: 0.3,
            mu_rate: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.theta_shape,
            self.beta_shape,
            self.eta_shape,
            self.eta_rate,
            self.xi_shape,
            self.xi_rate,
            self.tau_shape,
            self.mu_shape,
            self.mu_rate,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(RpfError::Config("hyperparameters must all be positive".into()));
        }
        Ok(())
    }
}

/// Variant, latent dimension, time basis, kernel, and hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    pub basis: TimeBasis,
    pub kernel: TriggerKernel,
    pub hyper: Hyperparams,
}

impl ModelConfig {
    /// Constraints checkable without a network: hyperparameters, latent
    /// dimension, and variant/basis compatibility.
    pub fn validate_standalone(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.latent_dim == 0 {
            return Err(RpfError::Config("latent dimension must be at least 1".into()));
        }
        if matches!(self.variant, Variant::Hrpf | Variant::Srpf) && !self.basis.is_static() {
            return Err(RpfError::Config(format!(
                "{:?} requires the static basis",
                self.variant
            )));
        }
        Ok(())
    }

    /// Variant-specific structural constraints.
    pub fn validate(&self, network: &SocialNetwork) -> Result<()> {
        self.validate_standalone()?;
        let static_basis = self.basis.is_static();
        let social = (0..network.num_users()).any(|u| network.followees(u).iter().any(|&v| v != u));
        match self.variant {
            Variant::Hrpf | Variant::Srpf if !static_basis => {
                Err(RpfError::Config(format!("{:?} requires the static basis", self.variant)))
            }
            Variant::Hrpf | Variant::Drpf if social => Err(RpfError::Config(format!(
                "{:?} admits self-loops only, but the network has peer edges",
                self.variant
            ))),
            _ => Ok(()),
        }
    }
}

/// Point estimates of all latent factors.
///
/// `theta` is U x K x I (user, latent dim, user-basis fn), `beta` is
/// P x K x J, and `tau` holds one influence weight per directed network edge,
/// indexed by the network's edge ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub user_basis_dim: usize,
    pub item_basis_dim: usize,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_users: usize, num_items: usize, config: &ModelConfig, network: &SocialNetwork) -> Self {
        let (k, i_dim, j_dim) = (config.latent_dim, config.basis.user_dim(), config.basis.item_dim());
        ModelParams {
            num_users,
            num_items,
            latent_dim: k,
            user_basis_dim: i_dim,
            item_basis_dim: j_dim,
            theta: vec![0.0; num_users * k * i_dim],
            beta: vec![0.0; num_items * k * j_dim],
            tau: vec![0.0; network.num_edges()],
            eta: vec![0.0; num_users],
            xi: vec![0.0; num_items],
            mu: vec![0.0; num_users],
        }
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
    pub fn theta_at(&self, u: usize, k: usize, i: usize) -> f64 {
        self.theta[self.theta_idx(u, k, i)]
    }

    #[inline]
    pub fn beta_at(&self, p: usize, k: usize, j: usize) -> f64 {
        self.beta[self.beta_idx(p, k, j)]
    }

    /// User preference for latent dim `k` at time `t` (basis-weighted sum).
    pub fn theta_value(&self, basis: &TimeBasis, u: usize, k: usize, t: f64) -> f64 {
        (0..self.user_basis_dim)
            .map(|i| self.theta_at(u, k, i) * basis.user_value(i, t))
            .sum()
    }

    /// Item attribute for latent dim `k` at time `t`.
    pub fn beta_value(&self, basis: &TimeBasis, p: usize, k: usize, t: f64) -> f64 {
        (0..self.item_basis_dim)
            .map(|j| self.beta_at(p, k, j) * basis.item_value(j, t))
            .sum()
    }
}

/// One summand of the intensity: either an intrinsic base factor (latent dim
/// and basis pair) or a past triggering event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerFactor {
    Base { k: usize, i: usize, j: usize },
    Event { index: usize },
}

fn check_pair(params: &ModelParams, u: usize, p: usize) -> Result<()> {
    if u >= params.num_users || p >= params.num_items {
        return Err(RpfError::Data(format!(
            "pair ({u}, {p}) outside index space {}x{}",
            params.num_users, params.num_items
        )));
    }
    Ok(())
}

/// Conditional intensity of the (u, p) process at time `t`. Only events
/// strictly before `t` contribute to the trigger sum.
pub fn intensity(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    p: usize,
    t: f64,
) -> Result<f64> {
    check_pair(params, u, p)?;
    let mut total = 0.0;
    for k in 0..params.latent_dim {
        total += params.theta_value(&config.basis, u, k, t) * params.beta_value(&config.basis, p, k, t);
    }
    for &idx in history.events_on_item(p) {
        let e = history.events()[idx];
        if e.time >= t {
            break;
        }
        if let Some(eid) = network.edge_id(e.user, u) {
            total += params.tau[eid] * config.kernel.value(e.time, t);
        }
    }
    Ok(total)
}

/// The summand of [`intensity`] selected by one trigger factor. Summing over
/// all admissible factors recovers the intensity exactly.
pub fn complete_intensity(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    p: usize,
    t: f64,
    factor: TriggerFactor,
) -> Result<f64> {
    check_pair(params, u, p)?;
    match factor {
        TriggerFactor::Base { k, i, j } => {
            if k >= params.latent_dim || i >= params.user_basis_dim || j >= params.item_basis_dim {
                return Err(RpfError::Data(format!("base factor ({k}, {i}, {j}) out of range")));
            }
            Ok(params.theta_at(u, k, i)
                * params.beta_at(p, k, j)
                * config.basis.user_value(i, t)
                * config.basis.item_value(j, t))
        }
        TriggerFactor::Event { index } => {
            let e = *history
                .events()
                .get(index)
                .ok_or_else(|| RpfError::Data(format!("event factor {index} out of range")))?;
            if e.item != p {
                return Err(RpfError::Data(format!("event {index} is on item {}, not {p}", e.item)));
            }
            if e.time >= t {
                return Err(RpfError::Data(format!("event {index} does not precede t = {t}")));
            }
            let eid = network.edge_id(e.user, u).ok_or_else(|| {
                RpfError::Data(format!("user {} is not a followee of {u}", e.user))
            })?;
            Ok(params.tau[eid] * config.kernel.value(e.time, t))
        }
    }
}

/// All factors admissible for the (u, p) process at time `t`.
pub fn admissible_factors(
    params: &ModelParams,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    p: usize,
    t: f64,
) -> Vec<TriggerFactor> {
    let mut out = Vec::new();
    for k in 0..params.latent_dim {
        for i in 0..params.user_basis_dim {
            for j in 0..params.item_basis_dim {
                out.push(TriggerFactor::Base { k, i, j });
            }
        }
    }
    for &idx in history.events_on_item(p) {
        let e = history.events()[idx];
        if e.time >= t {
            break;
        }
        if network.edge_id(e.user, u).is_some() {
            out.push(TriggerFactor::Event { index: idx });
        }
    }
    out
}

/// Point-process log-likelihood of the history: event log-intensities minus
/// the closed-form survival integral over every (u, p) pair.
pub fn log_likelihood(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
) -> Result<f64> {
    let horizon = history.horizon();
    let table = BasisTable::new(&config.basis, horizon);

    let mut event_term = 0.0;
    for e in history.events() {
        let lambda = intensity(params, config, history, network, e.user, e.item, e.time)?;
        if lambda <= 0.0 {
            return Err(RpfError::Numerical(format!(
                "zero intensity at observed event (t = {}, u = {}, p = {})",
                e.time, e.user, e.item
            )));
        }
        event_term += lambda.ln();
    }

    // Base survival factorizes over (k, i, j): sum_u theta * sum_p beta * F_ij.
    let mut survival = 0.0;
    for k in 0..params.latent_dim {
        for i in 0..params.user_basis_dim {
            let theta_sum: f64 = (0..params.num_users).map(|u| params.theta_at(u, k, i)).sum();
            for j in 0..params.item_basis_dim {
                let beta_sum: f64 = (0..params.num_items).map(|p| params.beta_at(p, k, j)).sum();
                survival += theta_sum * beta_sum * table.get(i, j);
            }
        }
    }
    // Each event contributes tau_vu * G(T - t_e) for every follower u of its
    // author.
    for e in history.events() {
        let outflow: f64 = network.outgoing_edges(e.user).iter().map(|&eid| params.tau[eid]).sum();
        survival += outflow * config.kernel.integral_nn(horizon - e.time);
    }

    let ll = event_term - survival;
    if !ll.is_finite() {
        return Err(RpfError::Numerical(format!("non-finite log-likelihood {ll}")));
    }
    Ok(ll)
}

/// Draws a full parameter set from the generative model's priors.
/// Deterministic for a fixed seed.
pub fn sample_params_from_prior(
    config: &ModelConfig,
    network: &SocialNetwork,
    num_items: usize,
    seed: u64,
) -> Result<ModelParams> {
    config.hyper.validate()?;
    let num_users = network.num_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = &config.hyper;
    let mut params = ModelParams::zeros(num_users, num_items, config, network);

    let draw = |rng: &mut ChaCha8Rng, shape: f64, rate: f64| -> Result<f64> {
        let g = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| RpfError::Config(format!("invalid gamma({shape}, {rate}): {e}")))?;
        Ok(g.sample(rng))
    };

    for u in 0..num_users {
        params.eta[u] = draw(&mut rng, h.eta_shape, h.eta_rate)?;
        params.mu[u] = draw(&mut rng, h.mu_shape, h.mu_rate)?;
    }
    for p in 0..num_items {
        params.xi[p] = draw(&mut rng, h.xi_shape, h.xi_rate)?;
    }
    for u in 0..num_users {
        for k in 0..params.latent_dim {
            for i in 0..params.user_basis_dim {
                let idx = params.theta_idx(u, k, i);
                params.theta[idx] = draw(&mut rng, h.theta_shape, params.eta[u])?;
            }
        }
    }
    for p in 0..num_items {
        for k in 0..params.latent_dim {
            for j in 0..params.item_basis_dim {
                let idx = params.beta_idx(p, k, j);
                params.beta[idx] = draw(&mut rng, h.beta_shape, params.xi[p])?;
            }
        }
    }
    for eid in 0..network.num_edges() {
        let (v, _) = network.edge(eid);
        params.tau[eid] = draw(&mut rng, h.tau_shape, params.mu[v])?;
    }
    Ok(params)
}

/// Serializes a parameter snapshot as JSON. `serde_json` emits the shortest
/// round-trippable representation of every f64, so load/store is bit-exact.
pub fn write_params(params: &ModelParams) -> String {
    serde_json::to_string_pretty(params).expect("params serialize")
}

pub fn read_params(text: &str) -> Result<ModelParams> {
    serde_json::from_str(text).map_err(|e| RpfError::Data(format!("bad params snapshot: {e}")))
}
