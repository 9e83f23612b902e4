//! Implementations of the CLI subcommands: thin orchestration over the
//! library, reading a TOML run configuration and writing plain CSV/JSON
//! artifacts into an output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::domain::{load_events, load_network, EventHistory, IndexMaps, SocialNetwork};
use crate::error::{Result, RpfError};
use crate::eval;
use crate::inference::{fit, FitOptions};
use crate::model::{self, ModelConfig, ModelParams, Variant};
use crate::simulate::{random_network, simulate, SimulationSpec};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| RpfError::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| RpfError::Io(e).with_context(&path))
}

impl RpfError {
    fn with_context(self, path: &Path) -> RpfError {
        match self {
            RpfError::Io(e) => RpfError::Data(format!("cannot write {}: {e}", path.display())),
            other => other,
        }
    }
}

/// Copies the resolved run configuration next to the outputs so a result
/// directory is self-describing.
fn persist_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| RpfError::Config(format!("cannot serialize config: {e}")))?;
    let mut f = create(dir, "run_config.toml")?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn load_history(cfg: &RunConfig) -> Result<(EventHistory, IndexMaps)> {
    let path = cfg
        .data
        .events
        .as_ref()
        .ok_or_else(|| RpfError::Config("this command needs data.events in the config".into()))?;
    load_events(open(path)?, cfg.data.horizon)
}

/// Loads the follow graph, or builds a self-loop-only one when no network
/// file is configured. SRPF/DSRPF require an explicit network.
fn load_net(cfg: &RunConfig, model: &ModelConfig, maps: &IndexMaps) -> Result<SocialNetwork> {
    match &cfg.data.network {
        Some(path) => load_network(open(path)?, maps, true),
        None => {
            if matches!(model.variant, Variant::Srpf | Variant::Dsrpf) {
                return Err(RpfError::Config(format!(
                    "{:?} needs data.network (a follow-edge file)",
                    model.variant
                )));
            }
            Ok(SocialNetwork::self_loops_only(maps.users.len()))
        }
    }
}

fn load_params(cfg: &RunConfig) -> Result<ModelParams> {
    let path = cfg
        .data
        .params
        .as_ref()
        .ok_or_else(|| RpfError::Config("this command needs data.params (a fitted snapshot)".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| RpfError::Data(format!("cannot read {}: {e}", path.display())))?;
    model::read_params(&text)
}

fn resolve_user(maps: &IndexMaps, raw: &str) -> Result<usize> {
    maps.user_index(raw)
        .ok_or_else(|| RpfError::Data(format!("user {raw:?} does not appear in the event data")))
}

fn write_index(maps: &IndexMaps, dir: &Path) -> Result<()> {
    let mut f = create(dir, "index.json")?;
    let text = serde_json::to_string_pretty(maps)
        .map_err(|e| RpfError::Data(format!("cannot serialize index: {e}")))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Draws (or loads) ground-truth parameters, samples a history, and writes
/// events.csv, network.csv, truth.json, and index.json.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let sim = &cfg.simulate;
    let seed = seed_override.unwrap_or(sim.seed);

    let self_loops_only = matches!(model_cfg.variant, Variant::Hrpf | Variant::Drpf);
    let network = if self_loops_only {
        SocialNetwork::self_loops_only(sim.num_users)
    } else {
        // Derived seed keeps the graph and the thinning draws independent.
        random_network(sim.num_users, sim.avg_degree, sim.self_loops, seed.wrapping_add(1))?
    };
    let params = match &sim.params {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| RpfError::Data(format!("cannot read {}: {e}", path.display())))?;
            model::read_params(&text)?
        }
        None => model::sample_params_from_prior(&model_cfg, &network, sim.num_items, seed)?,
    };

    let mut spec = SimulationSpec::new(model_cfg, params, network, sim.horizon, seed);
    spec.max_events = sim.max_events;
    let outcome = simulate(&spec)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    let mut f = create(out, "events.csv")?;
    writeln!(f, "user,item,time")?;
    for e in outcome.history.events() {
        writeln!(f, "u{},i{},{}", e.user, e.item, e.time)?;
    }
    let mut f = create(out, "network.csv")?;
    writeln!(f, "follower,followee")?;
    for u in 0..spec.network.num_users() {
        for &v in spec.network.followees(u) {
            writeln!(f, "u{v},u{u}")?;
        }
    }
    let mut f = create(out, "truth.json")?;
    f.write_all(model::write_params(&spec.params).as_bytes())?;
    let maps = IndexMaps {
        users: (0..sim.num_users).map(|u| format!("u{u}")).collect(),
        items: (0..sim.num_items).map(|p| format!("i{p}")).collect(),
    };
    write_index(&maps, out)?;
    persist_config(cfg, out)?;
    println!(
        "simulated {} events over [0, {}] for {} users x {} items{}",
        outcome.history.events().len(),
        sim.horizon,
        sim.num_users,
        sim.num_items,
        if outcome.truncated { " (truncated at the event cap)" } else { "" }
    );
    Ok(())
}

/// Fits the variational posterior and writes params.json, trace.csv, and
/// index.json.
pub fn cmd_fit(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let (history, maps) = load_history(cfg)?;
    let network = load_net(cfg, &model_cfg, &maps)?;
    let opts = FitOptions {
        epsilon: cfg.fit.epsilon,
        max_iters: cfg.fit.max_iters,
        seed: seed_override.unwrap_or(cfg.fit.seed),
    };
    let result = fit(&history, &network, &model_cfg, &opts)?;

    let mut f = create(out, "params.json")?;
    f.write_all(model::write_params(&result.params).as_bytes())?;
    let mut f = create(out, "trace.csv")?;
    writeln!(f, "sweep,elbo")?;
    for (i, value) in result.trace.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, value)?;
    }
    write_index(&maps, out)?;
    persist_config(cfg, out)?;
    let last = result.trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "fit {} after {} sweeps, final objective {last}",
        if result.converged { "converged" } else { "did NOT converge" },
        result.trace.len()
    );
    if !result.converged {
        eprintln!("warning: increase fit.max_iters or loosen fit.epsilon");
    }
    Ok(())
}

/// Writes the top-k recommendation list for one user at one time.
pub fn cmd_recommend(
    cfg: &RunConfig,
    out: &Path,
    user: &str,
    time: Option<f64>,
    top_k: usize,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let (history, maps) = load_history(cfg)?;
    let network = load_net(cfg, &model_cfg, &maps)?;
    let params = load_params(cfg)?;
    let u = resolve_user(&maps, user)?;
    let t = time.unwrap_or_else(|| history.horizon());
    let rec = eval::recommend(&params, &model_cfg, &history, &network, u, t, top_k)?;

    let mut f = create(out, "recommendations.csv")?;
    writeln!(f, "rank,item,score")?;
    for (rank, &(p, score)) in rec.items.iter().enumerate() {
        writeln!(f, "{},{},{}", rank + 1, maps.items[p], score)?;
    }
    println!("top {} items for {user} at t = {t}:", rec.items.len());
    for (rank, &(p, score)) in rec.items.iter().enumerate() {
        println!("  {:>3}. {}  ({score:.6})", rank + 1, maps.items[p]);
    }
    Ok(())
}

/// Predicts the expected time of a user's next event after `time`.
pub fn cmd_predict_return(
    cfg: &RunConfig,
    out: &Path,
    user: &str,
    time: Option<f64>,
    seed_override: Option<u64>,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let (history, maps) = load_history(cfg)?;
    let network = load_net(cfg, &model_cfg, &maps)?;
    let params = load_params(cfg)?;
    let u = resolve_user(&maps, user)?;
    let t0 = time.unwrap_or_else(|| history.horizon());
    let scope = match &cfg.predict.item {
        Some(raw) => eval::ReturnScope::Item(maps.item_index(raw).ok_or_else(|| {
            RpfError::Data(format!("item {raw:?} does not appear in the event data"))
        })?),
        None => eval::ReturnScope::User,
    };
    let predicted = eval::predict_return_time(
        &params,
        &model_cfg,
        &history,
        &network,
        u,
        t0,
        scope,
        cfg.predict.samples,
        seed_override.unwrap_or(cfg.predict.seed),
    )?;
    let mut f = create(out, "predicted_return.csv")?;
    writeln!(f, "user,from_time,predicted_time")?;
    writeln!(f, "{user},{t0},{predicted}")?;
    println!("expected next event of {user} after t = {t0}: t = {predicted}");
    Ok(())
}

/// Temporal holdout evaluation: fits on the early fraction of events (or
/// loads a snapshot), then writes ranking metrics, returning-time error, and
/// goodness-of-fit diagnostics.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let (history, maps) = load_history(cfg)?;
    let network = load_net(cfg, &model_cfg, &maps)?;

    let n = history.events().len();
    if n < 2 {
        return Err(RpfError::Data("need at least two events to evaluate".into()));
    }
    let split_idx = ((n as f64 * cfg.evaluate.train_fraction) as usize).clamp(1, n - 1);
    let cutoff = history.events()[split_idx].time;
    let (train, test) = history.split_at(cutoff)?;
    if train.is_empty() || test.is_empty() {
        return Err(RpfError::Data(
            "temporal split left train or test empty; adjust train_fraction".into(),
        ));
    }

    let seed = seed_override.unwrap_or(cfg.fit.seed);
    let params = match cfg.data.params {
        Some(_) => load_params(cfg)?,
        None => {
            let opts =
                FitOptions { epsilon: cfg.fit.epsilon, max_iters: cfg.fit.max_iters, seed };
            fit(&train, &network, &model_cfg, &opts)?.params
        }
    };

    // Ranking: rank the true item of each test event among all items, scored
    // from the training history only.
    let ranks = eval::test_event_ranks(&params, &model_cfg, &train, &network, &test)?;
    let mut metrics: Vec<(String, f64)> = Vec::new();
    for &k in &cfg.evaluate.cutoffs {
        metrics.push((format!("recall@{k}"), eval::recall_at_k(&ranks, k)?));
        metrics.push((format!("ndcg@{k}"), eval::ndcg_at_k(&ranks, k)?));
    }

    // Returning time: expected next event after the cutoff vs the first
    // observed test event, per user.
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut no_return = 0usize;
    for u in 0..history.num_users() {
        let actual = test.iter().find(|e| e.user == u).map(|e| e.time);
        let Some(actual) = actual else { continue };
        match eval::predict_return_time(
            &params,
            &model_cfg,
            &train,
            &network,
            u,
            cutoff,
            eval::ReturnScope::User,
            cfg.predict.samples,
            seed,
        ) {
            Ok(p) => {
                predictions.push(p);
                truths.push(actual);
            }
            Err(RpfError::NoReturn) => no_return += 1,
            Err(e) => return Err(e),
        }
    }
    if !predictions.is_empty() {
        metrics.push(("returning_time_mae".into(), eval::returning_time_mae(&predictions, &truths)?));
    }
    if no_return > 0 {
        eprintln!("warning: {no_return} users had zero predicted intensity (no return)");
    }

    // Goodness of fit on the training window via the time change.
    let intervals = eval::rescale(&params, &model_cfg, &train, &network)?;
    let qq = eval::qq_exp1(&intervals);
    if !intervals.is_empty() {
        let (d, p) = eval::ks_test_exp1(&intervals)?;
        metrics.push(("ks_statistic".into(), d));
        metrics.push(("ks_p_value".into(), p));
        metrics.push(("qq_slope".into(), eval::qq_slope(&qq)));
    }

    let mut f = create(out, "metrics.csv")?;
    writeln!(f, "metric,value")?;
    for (name, value) in &metrics {
        writeln!(f, "{name},{value}")?;
    }
    let mut f = create(out, "qq.csv")?;
    writeln!(f, "theoretical,empirical")?;
    for (x, y) in &qq {
        writeln!(f, "{x},{y}")?;
    }
    persist_config(cfg, out)?;
    println!("evaluated {} test events ({} train) at cutoff t = {cutoff}", test.len(), train.events().len());
    for (name, value) in &metrics {
        println!("  {name} = {value:.6}");
    }
    Ok(())
}

/// Model diagnostics from a fitted snapshot: time-change QQ data, similarity
/// matrices, and per-item intensity timelines.
pub fn cmd_diagnose(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let model_cfg = cfg.to_model_config()?;
    let (history, maps) = load_history(cfg)?;
    let network = load_net(cfg, &model_cfg, &maps)?;
    let params = load_params(cfg)?;

    let intervals = eval::rescale(&params, &model_cfg, &history, &network)?;
    let qq = eval::qq_exp1(&intervals);
    let mut f = create(out, "qq.csv")?;
    writeln!(f, "theoretical,empirical")?;
    for (x, y) in &qq {
        writeln!(f, "{x},{y}")?;
    }
    if intervals.is_empty() {
        eprintln!("warning: no (user, item) pair has two events; QQ data is empty");
    } else {
        let (d, p) = eval::ks_test_exp1(&intervals)?;
        println!(
            "time-change check: {} intervals, KS = {d:.4} (p = {p:.4}), QQ slope = {:.4}",
            intervals.len(),
            eval::qq_slope(&qq)
        );
    }

    let (learned, empirical) = eval::similarity_matrices(&params, &history);
    let num_users = params.num_users;
    for (name, matrix) in [("similarity_learned.csv", &learned), ("similarity_empirical.csv", &empirical)] {
        let mut f = create(out, name)?;
        for u in 0..num_users {
            let row: Vec<String> =
                (0..num_users).map(|v| matrix[u * num_users + v].to_string()).collect();
            writeln!(f, "{}", row.join(","))?;
        }
    }

    let grid_points = cfg.evaluate.grid_points.max(2);
    let horizon = history.horizon();
    let grid: Vec<f64> =
        (0..grid_points).map(|i| horizon * i as f64 / (grid_points - 1) as f64).collect();
    for raw in &cfg.evaluate.timeline_items {
        let p = maps.item_index(raw).ok_or_else(|| {
            RpfError::Data(format!("item {raw:?} does not appear in the event data"))
        })?;
        let line =
            eval::item_intensity_timeline(&params, &model_cfg, &history, &network, p, &grid)?;
        let mut f = create(out, &format!("timeline_{raw}.csv"))?;
        writeln!(f, "time,intensity")?;
        for (i, v) in line.iter().enumerate() {
            writeln!(f, "{},{}", grid[i], v)?;
        }
    }
    persist_config(cfg, out)?;
    println!("diagnostics written to {}", out.display());
    Ok(())
}
