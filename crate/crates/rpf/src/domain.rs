//! Events, histories, the social graph, the exponential triggering kernel,
//! and time-basis functions with their closed-form integrals.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RpfError};

/// A single timestamped user-item interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub user: usize,
    pub item: usize,
}

/// Time-ordered interaction history on `[0, horizon]` with dense user/item
/// index spaces. Immutable after construction; per-user and per-item event
/// indices are built once up front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventHistory {
    events: Vec<Event>,
    horizon: f64,
    num_users: usize,
    num_items: usize,
    #[serde(skip)]
    by_user: Vec<Vec<usize>>,
    #[serde(skip)]
    by_item: Vec<Vec<usize>>,
}

impl EventHistory {
    /// Builds a history from possibly-unsorted events. Sorting is stable, so
    /// equal timestamps keep their input order.
    pub fn new(mut events: Vec<Event>, horizon: f64, num_users: usize, num_items: usize) -> Result<Self> {
        if horizon < 0.0 || !horizon.is_finite() {
            return Err(RpfError::Data(format!("invalid horizon {horizon}")));
        }
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("non-NaN times"));
        for e in &events {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(RpfError::Data(format!("event time {} out of range", e.time)));
            }
            if e.time > horizon {
                return Err(RpfError::Data(format!(
                    "event time {} exceeds horizon {horizon}",
                    e.time
                )));
            }
            if e.user >= num_users || e.item >= num_items {
                return Err(RpfError::Data(format!(
                    "event ({}, {}) outside index space {num_users}x{num_items}",
                    e.user, e.item
                )));
            }
        }
        let mut by_user = vec![Vec::new(); num_users];
        let mut by_item = vec![Vec::new(); num_items];
        for (idx, e) in events.iter().enumerate() {
            by_user[e.user].push(idx);
            by_item[e.item].push(idx);
        }
        Ok(EventHistory { events, horizon, num_users, num_items, by_user, by_item })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Indices of events by `user`, in time order.
    pub fn events_of_user(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    /// Indices of events on `item`, in time order.
    pub fn events_on_item(&self, item: usize) -> &[usize] {
        &self.by_item[item]
    }

    /// First `n` events as a new history whose horizon is the time of the
    /// (n+1)-th event (or the original horizon when fewer events exist).
    /// Used for learning curves over growing observation windows.
    pub fn prefix(&self, n: usize) -> Result<EventHistory> {
        let horizon = if n < self.events.len() { self.events[n].time } else { self.horizon };
        EventHistory::new(
            self.events.iter().take(n).copied().collect(),
            horizon,
            self.num_users,
            self.num_items,
        )
    }

    /// Temporal split at `cutoff`: (train history on [0, cutoff], test events at
    /// or after cutoff).
    pub fn split_at(&self, cutoff: f64) -> Result<(EventHistory, Vec<Event>)> {
        let train: Vec<Event> = self.events.iter().filter(|e| e.time < cutoff).copied().collect();
        let test: Vec<Event> = self.events.iter().filter(|e| e.time >= cutoff).copied().collect();
        let train = EventHistory::new(train, cutoff, self.num_users, self.num_items)?;
        Ok((train, test))
    }
}

/// Directed follow graph. `follows[u]` is the set `N_u` of users whose events
/// may trigger `u`'s events; with `self_loops` every user follows themselves,
/// which is the self-excitation channel.
///
/// Each directed influence edge `(v -> u)` with `v in N_u` carries a dense
/// edge id so that influence weights can be stored in a flat array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SocialNetwork {
    follows: Vec<Vec<usize>>,
    self_loops: bool,
    edge_offsets: Vec<usize>,
    edges: Vec<(usize, usize)>,
    follower_edges: Vec<Vec<usize>>,
}

impl SocialNetwork {
    /// `edges` are `(follower, followee)` pairs: the follower observes the
    /// followee and may be triggered by them.
    pub fn new(num_users: usize, edge_list: &[(usize, usize)], self_loops: bool) -> Result<Self> {
        let mut follows = vec![Vec::new(); num_users];
        for &(follower, followee) in edge_list {
            if follower >= num_users || followee >= num_users {
                return Err(RpfError::Data(format!(
                    "edge ({follower}, {followee}) outside user space {num_users}"
                )));
            }
            follows[follower].push(followee);
        }
        if self_loops {
            for (u, list) in follows.iter_mut().enumerate() {
                list.push(u);
            }
        }
        for (u, list) in follows.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if !self_loops {
                list.retain(|&v| v != u);
            }
        }
        let mut edge_offsets = Vec::with_capacity(num_users + 1);
        let mut edges = Vec::new();
        let mut follower_edges = vec![Vec::new(); num_users];
        edge_offsets.push(0);
        for (u, list) in follows.iter().enumerate() {
            for &v in list {
                follower_edges[v].push(edges.len());
                edges.push((v, u));
            }
            edge_offsets.push(edges.len());
        }
        Ok(SocialNetwork { follows, self_loops, edge_offsets, edges, follower_edges })
    }

    pub fn self_loops_only(num_users: usize) -> Self {
        SocialNetwork::new(num_users, &[], true).expect("self-loop graph is always valid")
    }

    pub fn num_users(&self) -> usize {
        self.follows.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// The followees `N_u`, sorted ascending.
    pub fn followees(&self, u: usize) -> &[usize] {
        &self.follows[u]
    }

    /// Edge id of influence edge `v -> u`, if `v in N_u`.
    pub fn edge_id(&self, v: usize, u: usize) -> Option<usize> {
        self.follows[u].binary_search(&v).ok().map(|pos| self.edge_offsets[u] + pos)
    }

    /// `(source, target)` of an edge id.
    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id]
    }

    /// Ids of edges leaving `v`, i.e. towards each follower of `v`.
    pub fn outgoing_edges(&self, v: usize) -> &[usize] {
        &self.follower_edges[v]
    }

    /// Edge ids whose target is `u` (one per followee), in followee order.
    pub fn incoming_edge_range(&self, u: usize) -> std::ops::Range<usize> {
        self.edge_offsets[u]..self.edge_offsets[u + 1]
    }

    /// Number of followers of `u`.
    pub fn num_followers(&self, u: usize) -> usize {
        self.follower_edges[u].len()
    }
}

/// Exponential triggering kernel `g(t_i, t) = exp(-decay * (t - t_i))`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TriggerKernel {
    decay: f64,
}

impl TriggerKernel {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(RpfError::Config(format!("kernel decay must be positive, got {decay}")));
        }
        Ok(TriggerKernel { decay })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `g(t_event, t)`: zero before the event, exponentially decaying after.
    pub fn value(&self, t_event: f64, t: f64) -> f64 {
        if t < t_event {
            0.0
        } else {
            (-self.decay * (t - t_event)).exp()
        }
    }

    /// `G(dt) = (1 - exp(-decay*dt)) / decay`, the kernel mass on `[0, dt]`.
    pub fn integral(&self, dt: f64) -> Result<f64> {
        if dt < 0.0 {
            return Err(RpfError::Data(format!("negative kernel integral span {dt}")));
        }
        Ok(self.integral_nn(dt))
    }

    /// Same as [`TriggerKernel::integral`] for spans known to be nonnegative.
    pub(crate) fn integral_nn(&self, dt: f64) -> f64 {
        debug_assert!(dt >= 0.0);
        (-(-self.decay * dt).exp_m1()) / self.decay
    }

    /// Span beyond which the kernel is treated as fully decayed; used to
    /// truncate trigger-candidate sets.
    pub fn truncation_window(&self) -> f64 {
        10.0 / self.decay
    }
}

/// Maps dataset timestamps to calendar hours for the hour/day bases.
/// `anchor_hour` is the number of hours between Monday 00:00 and t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalendarClock {
    pub hours_per_unit: f64,
    pub anchor_hour: f64,
}

impl Default for CalendarClock {
    fn default() -> Self {
        // Dataset unit of days starting on a Monday midnight.
        CalendarClock { hours_per_unit: 24.0, anchor_hour: 0.0 }
    }
}

impl CalendarClock {
    fn to_hours(&self, t: f64) -> f64 {
        self.anchor_hour + t * self.hours_per_unit
    }

    fn hour_of_day(hours: f64) -> usize {
        (hours.rem_euclid(24.0)).floor() as usize % 24
    }

    fn day_of_week(hours: f64) -> usize {
        ((hours / 24.0).rem_euclid(7.0)).floor() as usize % 7
    }
}

/// One nonnegative indicator basis function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BasisFn {
    /// Identically one; the static model's single basis function.
    Constant,
    /// One during the given hour of day (0..24).
    HourOfDay(usize),
    /// One during the given day of week (0..7, 0 = Monday under the default clock).
    DayOfWeek(usize),
}

impl BasisFn {
    fn value_at_hours(&self, hours: f64) -> f64 {
        match *self {
            BasisFn::Constant => 1.0,
            BasisFn::HourOfDay(h) => {
                if CalendarClock::hour_of_day(hours) == h {
                    1.0
                } else {
                    0.0
                }
            }
            BasisFn::DayOfWeek(d) => {
                if CalendarClock::day_of_week(hours) == d {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// User-side basis functions `h_i`, item-side basis functions `l_j`, and their
/// exact pairwise integrals. The static model is the `I = J = 1` case with
/// both sides constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBasis {
    user_fns: Vec<BasisFn>,
    item_fns: Vec<BasisFn>,
    clock: CalendarClock,
}

impl TimeBasis {
    pub fn static_basis() -> Self {
        TimeBasis {
            user_fns: vec![BasisFn::Constant],
            item_fns: vec![BasisFn::Constant],
            clock: CalendarClock::default(),
        }
    }

    /// The 24 hour-of-day indicators plus 7 day-of-week indicators on the user
    /// side; constant item side.
    pub fn hour_day(clock: CalendarClock) -> Self {
        let mut user_fns = Vec::with_capacity(31);
        for h in 0..24 {
            user_fns.push(BasisFn::HourOfDay(h));
        }
        for d in 0..7 {
            user_fns.push(BasisFn::DayOfWeek(d));
        }
        TimeBasis { user_fns, item_fns: vec![BasisFn::Constant], clock }
    }

    pub fn with_fns(user_fns: Vec<BasisFn>, item_fns: Vec<BasisFn>, clock: CalendarClock) -> Self {
        assert!(!user_fns.is_empty() && !item_fns.is_empty());
        TimeBasis { user_fns, item_fns, clock }
    }

    pub fn is_static(&self) -> bool {
        self.user_fns == [BasisFn::Constant] && self.item_fns == [BasisFn::Constant]
    }

    pub fn user_dim(&self) -> usize {
        self.user_fns.len()
    }

    pub fn item_dim(&self) -> usize {
        self.item_fns.len()
    }

    pub fn user_value(&self, i: usize, t: f64) -> f64 {
        self.user_fns[i].value_at_hours(self.clock.to_hours(t))
    }

    pub fn item_value(&self, j: usize, t: f64) -> f64 {
        self.item_fns[j].value_at_hours(self.clock.to_hours(t))
    }

    /// Exact `int_a^b h_i(t) l_j(t) dt` in dataset time units. Indicator
    /// products are piecewise constant between hour boundaries, so the
    /// integral is a sum of segment overlaps.
    pub fn product_integral(&self, i: usize, j: usize, a: f64, b: f64) -> f64 {
        debug_assert!(b >= a);
        let (h, l) = (self.user_fns[i], self.item_fns[j]);
        if h == BasisFn::Constant && l == BasisFn::Constant {
            return b - a;
        }
        let start = self.clock.to_hours(a);
        let end = self.clock.to_hours(b);
        let mut acc = 0.0;
        let mut lo = start;
        while lo < end {
            let hi = (lo.floor() + 1.0).min(end);
            let mid = 0.5 * (lo + hi);
            acc += (hi - lo) * h.value_at_hours(mid) * l.value_at_hours(mid);
            lo = hi;
        }
        acc / self.clock.hours_per_unit
    }
}

/// Cached pairwise basis integrals `F_ij(T)`, computed once per fit.
#[derive(Debug, Clone)]
pub struct BasisTable {
    values: Vec<f64>,
    item_dim: usize,
}

impl BasisTable {
    pub fn new(basis: &TimeBasis, horizon: f64) -> Self {
        let (i_dim, j_dim) = (basis.user_dim(), basis.item_dim());
        let mut values = Vec::with_capacity(i_dim * j_dim);
        for i in 0..i_dim {
            for j in 0..j_dim {
                values.push(basis.product_integral(i, j, 0.0, horizon));
            }
        }
        BasisTable { values, item_dim: j_dim }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.item_dim + j]
    }
}

/// Raw-id to dense-index maps produced while loading an event log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IndexMaps {
    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.users.iter().position(|s| s == raw)
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.items.iter().position(|s| s == raw)
    }
}

fn detect_delimiter(line: &str) -> Result<char> {
    for d in [',', '\t', ';'] {
        if line.matches(d).count() >= 2 {
            return Ok(d);
        }
    }
    if line.split_whitespace().count() >= 3 {
        return Ok(' ');
    }
    Err(RpfError::DataRow { row: 1, msg: format!("unknown delimiter in line {line:?}") })
}

fn split_row(line: &str, delim: char) -> Vec<&str> {
    if delim == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(delim).map(str::trim).collect()
    }
}

/// Loads a delimiter-separated event log with columns
/// `user_id,item_id,timestamp` (header optional). Raw ids are mapped to dense
/// indices in first-appearance order; the horizon defaults to the maximum
/// timestamp when not given.
pub fn load_events(reader: impl BufRead, horizon: Option<f64>) -> Result<(EventHistory, IndexMaps)> {
    let mut maps = IndexMaps::default();
    let mut user_ids: HashMap<String, usize> = HashMap::new();
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    let mut events = Vec::new();
    let mut delim = None;
    let mut max_time = 0.0f64;
    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let d = match delim {
            Some(d) => d,
            None => {
                let d = detect_delimiter(line)?;
                delim = Some(d);
                d
            }
        };
        let fields = split_row(line, d);
        if fields.len() != 3 {
            return Err(RpfError::DataRow { row, msg: format!("expected 3 columns, got {}", fields.len()) });
        }
        let time: f64 = match fields[2].parse() {
            Ok(t) => t,
            Err(_) => {
                // An unparseable timestamp on the first row is a header.
                if events.is_empty() && user_ids.is_empty() {
                    continue;
                }
                return Err(RpfError::DataRow { row, msg: format!("bad timestamp {:?}", fields[2]) });
            }
        };
        if !time.is_finite() || time < 0.0 {
            return Err(RpfError::DataRow { row, msg: format!("negative or non-finite timestamp {time}") });
        }
        let user = *user_ids.entry(fields[0].to_owned()).or_insert_with(|| {
            maps.users.push(fields[0].to_owned());
            maps.users.len() - 1
        });
        let item = *item_ids.entry(fields[1].to_owned()).or_insert_with(|| {
            maps.items.push(fields[1].to_owned());
            maps.items.len() - 1
        });
        max_time = max_time.max(time);
        events.push(Event { time, user, item });
    }
    let horizon = match horizon {
        Some(t) => t,
        None if events.is_empty() => {
            return Err(RpfError::Data("empty event log and no horizon configured".into()))
        }
        None => max_time,
    };
    let history = EventHistory::new(events, horizon, maps.users.len(), maps.items.len())?;
    Ok((history, maps))
}

/// Loads a `follower_id,followee_id` edge list over the users of `maps`.
pub fn load_network(reader: impl BufRead, maps: &IndexMaps, self_loops: bool) -> Result<SocialNetwork> {
    let mut edges = Vec::new();
    let mut delim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let d = match delim {
            Some(d) => d,
            None => {
                let d = [',', '\t', ';']
                    .into_iter()
                    .find(|&d| line.matches(d).count() >= 1)
                    .unwrap_or(' ');
                delim = Some(d);
                d
            }
        };
        let fields = split_row(line, d);
        if fields.len() != 2 {
            return Err(RpfError::DataRow { row, msg: format!("expected 2 columns, got {}", fields.len()) });
        }
        let follower = match maps.user_index(fields[0]) {
            Some(u) => u,
            // Header row.
            None if row == 1 && fields[1].parse::<f64>().is_err() => continue,
            None => {
                return Err(RpfError::DataRow { row, msg: format!("unknown user id {:?}", fields[0]) })
            }
        };
        let followee = maps
            .user_index(fields[1])
            .ok_or_else(|| RpfError::DataRow { row, msg: format!("unknown user id {:?}", fields[1]) })?;
        edges.push((follower, followee));
    }
    SocialNetwork::new(maps.users.len(), &edges, self_loops)
}
