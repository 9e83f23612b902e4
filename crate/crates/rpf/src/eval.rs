//! Time-sensitive recommendation, returning-time prediction, ranking metrics,
//! and time-change diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Event, EventHistory, SocialNetwork};
use crate::error::{Result, RpfError};
use crate::model::{ModelConfig, ModelParams};

/// Ranked items with expected-intensity scores, non-increasing; ties broken
/// by item index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: usize,
    pub time: f64,
    pub items: Vec<(usize, f64)>,
}

/// Kernel spans beyond this many decay constants contribute less than 1e-16
/// of their weight and are skipped when scoring.
const SCORE_WINDOW: f64 = 37.0;

/// Expected intensity `E[lambda_up(t)]` for every item, from the variational
/// means in `params`.
pub fn item_scores(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    t: f64,
) -> Result<Vec<f64>> {
    if u >= params.num_users {
        return Err(RpfError::Data(format!("unknown user {u} (cold start is out of scope)")));
    }
    let basis = &config.basis;
    let omega = config.kernel.decay();
    // Base term: theta_uk(t) dot beta_pk(t).
    let th: Vec<f64> =
        (0..params.latent_dim).map(|k| params.theta_value(basis, u, k, t)).collect();
    let mut scores: Vec<f64> = (0..params.num_items)
        .map(|p| {
            (0..params.latent_dim)
                .map(|k| th[k] * params.beta_value(basis, p, k, t))
                .sum()
        })
        .collect();
    // Trigger term from recent followee events.
    let events = history.events();
    let start = events.partition_point(|e| e.time < t - SCORE_WINDOW / omega);
    for e in &events[start..] {
        if e.time >= t {
            break;
        }
        if let Some(eid) = network.edge_id(e.user, u) {
            scores[e.item] += params.tau[eid] * config.kernel.value(e.time, t);
        }
    }
    Ok(scores)
}

/// Top-k items for user `u` at time `t` by expected intensity.
pub fn recommend(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    t: f64,
    k: usize,
) -> Result<RecommendationList> {
    let scores = item_scores(params, config, history, network, u, t)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let items = order.into_iter().take(k).map(|p| (p, scores[p])).collect();
    Ok(RecommendationList { user: u, time: t, items })
}

/// 1-based rank of `item` in the full ranking for `(u, t)`.
pub fn rank_of(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    t: f64,
    item: usize,
) -> Result<usize> {
    let scores = item_scores(params, config, history, network, u, t)?;
    let target = scores[item];
    // Deterministic tie-break by item index: items with equal score but a
    // smaller index rank ahead.
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(p, &s)| s > target || (s == target && p < item))
        .count();
    Ok(ahead + 1)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(RpfError::Data("metric cutoff k must be positive".into()));
    }
    Ok(())
}

/// Fraction of test events whose true item ranked within the top k.
/// `ranks` are 1-based.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranks.is_empty() {
        return Err(RpfError::Data("no test ranks".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Discounted version of recall: hits weighted by `1 / log2(1 + rank)`.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranks.is_empty() {
        return Err(RpfError::Data("no test ranks".into()));
    }
    let total: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / (1.0 + r as f64).log2())
        .sum();
    Ok(total / ranks.len() as f64)
}

/// Mean absolute error between aligned prediction/ground-truth pairs.
pub fn returning_time_mae(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(RpfError::Data(format!(
            "need equal-length nonempty prediction/truth sets, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    Ok(predictions.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>()
        / predictions.len() as f64)
}

/// Which process the returning-time prediction samples: the user's next event
/// on any item, or on one specific item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnScope {
    User,
    Item(usize),
}

/// Expected time of the next event after `t0`, estimated as the sample mean
/// of first arrivals drawn by thinning from the expected intensity.
/// Each user gets an independent seeded RNG stream.
pub fn predict_return_time(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    u: usize,
    t0: f64,
    scope: ReturnScope,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if u >= params.num_users {
        return Err(RpfError::Data(format!("unknown user {u}")));
    }
    if n_samples == 0 {
        return Err(RpfError::Data("need at least one sample".into()));
    }
    let basis = &config.basis;
    let omega = config.kernel.decay();
    // Item-side coefficient per (k, j): either a single item's beta or the
    // sum over all items.
    let beta_coef: Vec<Vec<f64>> = (0..params.latent_dim)
        .map(|k| {
            (0..params.item_basis_dim)
                .map(|j| match scope {
                    ReturnScope::Item(p) => params.beta_at(p, k, j),
                    ReturnScope::User => {
                        (0..params.num_items).map(|p| params.beta_at(p, k, j)).sum()
                    }
                })
                .collect()
        })
        .collect();
    let base_at = |t: f64| -> f64 {
        (0..params.latent_dim)
            .map(|k| {
                let th: f64 = (0..params.user_basis_dim)
                    .map(|i| params.theta_at(u, k, i) * basis.user_value(i, t))
                    .sum();
                let be: f64 = (0..params.item_basis_dim)
                    .map(|j| beta_coef[k][j] * basis.item_value(j, t))
                    .sum();
                th * be
            })
            .sum()
    };
    let base_bound: f64 = (0..params.latent_dim)
        .map(|k| {
            let th: f64 =
                (0..params.user_basis_dim).map(|i| params.theta_at(u, k, i)).sum();
            let be: f64 = beta_coef[k].iter().sum::<f64>();
            th * be
        })
        .sum();
    // Decaying trigger mass at t0; a single scalar because every kernel
    // shares one decay constant.
    let mut trig0 = 0.0;
    for e in history.events() {
        if e.time > t0 {
            break;
        }
        if let ReturnScope::Item(p) = scope {
            if e.item != p {
                continue;
            }
        }
        if let Some(eid) = network.edge_id(e.user, u) {
            trig0 += params.tau[eid] * config.kernel.value(e.time, t0);
        }
    }
    if base_bound + trig0 <= 0.0 {
        return Err(RpfError::NoReturn);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u as u64);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let mut t = t0;
        loop {
            let trig = trig0 * (-omega * (t - t0)).exp();
            let bound = base_bound + trig;
            // A pure-trigger process keeps a positive bound forever but has
            // finite total mass; stop once the remaining mass is negligible.
            if base_bound <= 0.0 && trig / omega < 1e-9 {
                return Err(RpfError::NoReturn);
            }
            let wait = -rng.gen::<f64>().ln() / bound;
            t += wait;
            let lambda = base_at(t) + trig0 * (-omega * (t - t0)).exp();
            if rng.gen::<f64>() * bound < lambda {
                break;
            }
        }
        total += t;
    }
    Ok(total / n_samples as f64)
}

/// Rescaled inter-event intervals `Lambda(t_{i+1}) - Lambda(t_i)` of every
/// per-(user, item) process with at least two events, pooled. Under the true
/// intensity these are i.i.d. unit-rate exponential.
pub fn rescale(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
) -> Result<Vec<f64>> {
    let basis = &config.basis;
    let kernel = &config.kernel;
    let events = history.events();
    let mut intervals = Vec::new();
    for u in 0..history.num_users() {
        // Events of user u grouped by item, preserving time order.
        let mut per_item: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for &idx in history.events_of_user(u) {
            per_item.entry(events[idx].item).or_default().push(events[idx].time);
        }
        let mut items: Vec<usize> = per_item.keys().copied().collect();
        items.sort_unstable();
        for p in items {
            let times = &per_item[&p];
            if times.len() < 2 {
                continue;
            }
            for w in times.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mut mass = 0.0;
                for k in 0..params.latent_dim {
                    for i in 0..params.user_basis_dim {
                        for j in 0..params.item_basis_dim {
                            mass += params.theta_at(u, k, i)
                                * params.beta_at(p, k, j)
                                * basis.product_integral(i, j, a, b);
                        }
                    }
                }
                for &idx in history.events_on_item(p) {
                    let e = events[idx];
                    if e.time >= b {
                        break;
                    }
                    if let Some(eid) = network.edge_id(e.user, u) {
                        let upper = kernel.integral_nn(b - e.time);
                        let lower =
                            if e.time <= a { kernel.integral_nn(a - e.time) } else { 0.0 };
                        mass += params.tau[eid] * (upper - lower);
                    }
                }
                intervals.push(mass);
            }
        }
    }
    Ok(intervals)
}

/// One-sample Kolmogorov-Smirnov test against the unit-rate exponential.
/// Returns `(statistic, p_value)` using the asymptotic Kolmogorov
/// distribution.
pub fn ks_test_exp1(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(RpfError::Data("no samples for KS test".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for i in 1..=100 {
        let term = (-2.0 * (i as f64 * lambda).powi(2)).exp();
        p += if i % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    Ok((d, p.clamp(0.0, 1.0)))
}

/// `(theoretical, empirical)` quantile pairs of `samples` against Exp(1).
pub fn qq_exp1(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let q = (i as f64 + 0.5) / n;
            (-(1.0 - q).ln(), x)
        })
        .collect()
}

/// Least-squares slope through the origin of empirical on theoretical
/// quantiles; close to one when the samples match Exp(1).
pub fn qq_slope(pairs: &[(f64, f64)]) -> f64 {
    let num: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    let den: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    num / den
}

/// Learned similarity `theta_u . theta_v` (basis dimensions summed) and the
/// empirical Jaccard similarity of consumed item sets, both U x U row-major.
pub fn similarity_matrices(params: &ModelParams, history: &EventHistory) -> (Vec<f64>, Vec<f64>) {
    let num_users = params.num_users;
    // Aggregate theta over basis dimensions.
    let mut agg = vec![0.0; num_users * params.latent_dim];
    for u in 0..num_users {
        for k in 0..params.latent_dim {
            for i in 0..params.user_basis_dim {
                agg[u * params.latent_dim + k] += params.theta_at(u, k, i);
            }
        }
    }
    let mut learned = vec![0.0; num_users * num_users];
    for u in 0..num_users {
        for v in 0..num_users {
            learned[u * num_users + v] = (0..params.latent_dim)
                .map(|k| agg[u * params.latent_dim + k] * agg[v * params.latent_dim + k])
                .sum();
        }
    }
    let item_sets: Vec<std::collections::BTreeSet<usize>> = (0..num_users)
        .map(|u| {
            history.events_of_user(u).iter().map(|&idx| history.events()[idx].item).collect()
        })
        .collect();
    let mut empirical = vec![0.0; num_users * num_users];
    for u in 0..num_users {
        for v in 0..num_users {
            let (a, b) = (&item_sets[u], &item_sets[v]);
            let union = a.union(b).count();
            empirical[u * num_users + v] = if union == 0 {
                0.0 // users with no events are dissimilar to everyone
            } else {
                a.intersection(b).count() as f64 / union as f64
            };
        }
    }
    (learned, empirical)
}

/// `sum_u E[lambda_up(t)]` sampled on a time grid, for plotting.
pub fn item_intensity_timeline(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    item: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if item >= params.num_items {
        return Err(RpfError::Data(format!("unknown item {item}")));
    }
    grid.iter()
        .map(|&t| {
            (0..params.num_users)
                .map(|u| crate::model::intensity(params, config, history, network, u, item, t))
                .sum()
        })
        .collect()
}

/// Per-test-event 1-based ranks of the true item, computed from the full
/// history strictly before each event's timestamp.
pub fn test_event_ranks(
    params: &ModelParams,
    config: &ModelConfig,
    history: &EventHistory,
    network: &SocialNetwork,
    test_events: &[Event],
) -> Result<Vec<usize>> {
    test_events
        .iter()
        .map(|e| rank_of(params, config, history, network, e.user, e.time, e.item))
        .collect()
}
