//! Exact simulation of event streams via Ogata's thinning, run on the
//! superposed process with a single global clock. Accepted candidates are
//! attributed to a (user, item) pair proportionally to that pair's share of
//! the total intensity, which is exact by the superposition property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Event, EventHistory, SocialNetwork};
use crate::error::{Result, RpfError};
use crate::model::{ModelConfig, ModelParams};

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub network: SocialNetwork,
    pub horizon: f64,
    pub seed: u64,
    pub max_events: usize,
    pub intensity_ceiling: f64,
}

impl SimulationSpec {
    pub fn new(config: ModelConfig, params: ModelParams, network: SocialNetwork, horizon: f64, seed: u64) -> Self {
        SimulationSpec {
            config,
            params,
            network,
            horizon,
            seed,
            max_events: 10_000_000,
            intensity_ceiling: 1e9,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(RpfError::Config(format!("invalid horizon {}", self.horizon)));
        }
        if self.max_events == 0 {
            return Err(RpfError::Config("max_events must be positive".into()));
        }
        self.config.validate(&self.network)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOutcome {
    pub history: EventHistory,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

/// Events whose kernel has decayed below exp(-50) are dropped from the
/// active trigger set.
const DECAY_CUTOFF: f64 = 50.0;

struct ActiveEvent {
    time: f64,
    user: usize,
    item: usize,
}

/// Draws an index proportionally to `weights` given `r` uniform on
/// `[0, total)`.
fn pick_weighted(weights: impl Iterator<Item = f64>, mut r: f64) -> usize {
    let mut last = 0;
    for (idx, w) in weights.enumerate() {
        last = idx;
        if r < w {
            return idx;
        }
        r -= w;
    }
    // Floating-point slack lands on the final index.
    last
}

pub fn simulate(spec: &SimulationSpec) -> Result<SimOutcome> {
    spec.validate()?;
    let params = &spec.params;
    let config = &spec.config;
    let network = &spec.network;
    let basis = &config.basis;
    let omega = config.kernel.decay();
    let (num_users, num_items) = (params.num_users, params.num_items);
    let (latent_dim, i_dim, j_dim) = (params.latent_dim, params.user_basis_dim, params.item_basis_dim);
    let mut warnings = Vec::new();

    // Follower-weighted outflow of each user: the total intensity a new event
    // by v injects across all of v's followers.
    let outflow: Vec<f64> = (0..num_users)
        .map(|v| network.outgoing_edges(v).iter().map(|&eid| params.tau[eid]).sum())
        .collect();

    // Stability of the self-exciting part.
    let branching = outflow.iter().cloned().fold(0.0f64, f64::max) / omega;
    if branching >= 2.0 {
        return Err(RpfError::Numerical(format!(
            "self-excitation is supercritical (branching proxy {branching:.3} >= 2); refusing to simulate"
        )));
    }
    if branching >= 1.0 {
        warnings.push(format!("branching proxy {branching:.3} >= 1; the process may explode"));
    }

    // theta_sum[k][i] = sum_u theta, beta_sum[k][j] = sum_p beta.
    let mut theta_sum = vec![vec![0.0; i_dim]; latent_dim];
    let mut beta_sum = vec![vec![0.0; j_dim]; latent_dim];
    for k in 0..latent_dim {
        for i in 0..i_dim {
            theta_sum[k][i] = (0..num_users).map(|u| params.theta_at(u, k, i)).sum();
        }
        for j in 0..j_dim {
            beta_sum[k][j] = (0..num_items).map(|p| params.beta_at(p, k, j)).sum();
        }
    }
    // Indicator bases never exceed one, so summing unweighted coordinates
    // dominates the base intensity at every time.
    let base_bound: f64 = (0..latent_dim)
        .map(|k| theta_sum[k].iter().sum::<f64>() * beta_sum[k].iter().sum::<f64>())
        .sum();

    let base_total = |h_vals: &[f64], l_vals: &[f64]| -> f64 {
        (0..latent_dim)
            .map(|k| {
                let th: f64 = (0..i_dim).map(|i| theta_sum[k][i] * h_vals[i]).sum();
                let be: f64 = (0..j_dim).map(|j| beta_sum[k][j] * l_vals[j]).sum();
                th * be
            })
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut events: Vec<Event> = Vec::new();
    let mut active: std::collections::VecDeque<ActiveEvent> = std::collections::VecDeque::new();
    let mut t = 0.0f64;
    let mut truncated = false;
    let mut h_vals = vec![0.0; i_dim];
    let mut l_vals = vec![0.0; j_dim];

    'outer: while t < spec.horizon {
        while let Some(front) = active.front() {
            if omega * (t - front.time) > DECAY_CUTOFF {
                active.pop_front();
            } else {
                break;
            }
        }
        let trig_at = |time: f64, active: &std::collections::VecDeque<ActiveEvent>| -> f64 {
            active.iter().map(|a| outflow[a.user] * (-omega * (time - a.time)).exp()).sum()
        };
        // The trigger part only decays until the next event, so the bound at
        // the current time dominates the whole next waiting interval.
        let bound = base_bound + trig_at(t, &active);
        if bound <= 0.0 {
            break;
        }
        if bound > spec.intensity_ceiling {
            return Err(RpfError::Numerical(format!(
                "total intensity bound {bound:.3e} exceeds ceiling {:.3e}",
                spec.intensity_ceiling
            )));
        }
        let wait = -rng.gen::<f64>().ln() / bound;
        let cand = t + wait;
        if cand >= spec.horizon {
            break;
        }
        t = cand;
        for i in 0..i_dim {
            h_vals[i] = basis.user_value(i, t);
        }
        for j in 0..j_dim {
            l_vals[j] = basis.item_value(j, t);
        }
        let base_val = base_total(&h_vals, &l_vals);
        let trig_val = trig_at(t, &active);
        let lambda = base_val + trig_val;
        debug_assert!(lambda <= bound * (1.0 + 1e-9), "thinning bound violated");
        if rng.gen::<f64>() * bound >= lambda {
            continue;
        }

        // Accepted: attribute to a (user, item) pair.
        let r = rng.gen::<f64>() * lambda;
        let (user, item) = if r < base_val || active.is_empty() {
            // Base branch: latent dim, then user, then item.
            let rk = rng.gen::<f64>() * base_val.max(f64::MIN_POSITIVE);
            let k = pick_weighted(
                (0..latent_dim).map(|k| {
                    let th: f64 = (0..i_dim).map(|i| theta_sum[k][i] * h_vals[i]).sum();
                    let be: f64 = (0..j_dim).map(|j| beta_sum[k][j] * l_vals[j]).sum();
                    th * be
                }),
                rk,
            );
            let th_k: f64 = (0..i_dim).map(|i| theta_sum[k][i] * h_vals[i]).sum();
            let user = pick_weighted(
                (0..num_users).map(|u| {
                    (0..i_dim).map(|i| params.theta_at(u, k, i) * h_vals[i]).sum::<f64>()
                }),
                rng.gen::<f64>() * th_k,
            );
            let be_k: f64 = (0..j_dim).map(|j| beta_sum[k][j] * l_vals[j]).sum();
            let item = pick_weighted(
                (0..num_items).map(|p| {
                    (0..j_dim).map(|j| params.beta_at(p, k, j) * l_vals[j]).sum::<f64>()
                }),
                rng.gen::<f64>() * be_k,
            );
            (user, item)
        } else {
            // Trigger branch: source event, then follower edge.
            let rs = rng.gen::<f64>() * trig_val;
            let src = pick_weighted(
                active.iter().map(|a| outflow[a.user] * (-omega * (t - a.time)).exp()),
                rs,
            );
            let src = &active[src];
            let edges = network.outgoing_edges(src.user);
            let total_tau = outflow[src.user];
            let e_pos = pick_weighted(
                edges.iter().map(|&eid| params.tau[eid]),
                rng.gen::<f64>() * total_tau,
            );
            let (_, target) = network.edge(edges[e_pos]);
            (target, src.item)
        };

        events.push(Event { time: t, user, item });
        active.push_back(ActiveEvent { time: t, user, item });
        if events.len() >= spec.max_events {
            truncated = true;
            warnings.push(format!("event cap {} reached at t = {t:.6}", spec.max_events));
            break 'outer;
        }
    }

    let horizon = if truncated { t } else { spec.horizon };
    let history = EventHistory::new(events, horizon, num_users, num_items)?;
    Ok(SimOutcome { history, truncated, warnings })
}

/// Directed Erdos-Renyi follow graph with edge probability
/// `avg_degree / (num_users - 1)`; deterministic for a fixed seed.
pub fn random_network(num_users: usize, avg_degree: f64, self_loops: bool, seed: u64) -> Result<SocialNetwork> {
    if avg_degree < 0.0 || (num_users > 1 && avg_degree >= num_users as f64) {
        return Err(RpfError::Config(format!(
            "average degree {avg_degree} out of range for {num_users} users"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prob = if num_users > 1 { avg_degree / (num_users - 1) as f64 } else { 0.0 };
    let mut edges = Vec::new();
    for u in 0..num_users {
        for v in 0..num_users {
            if u != v && rng.gen::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    SocialNetwork::new(num_users, &edges, self_loops)
}
