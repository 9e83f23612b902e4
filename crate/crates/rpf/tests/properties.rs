//! Property-based invariants of the model, basis, metrics, and loaders.

use proptest::prelude::*;

use rpf::domain::{
    load_events, BasisFn, CalendarClock, Event, EventHistory, SocialNetwork, TimeBasis,
    TriggerKernel,
};
use rpf::eval;
use rpf::model::{self, Hyperparams, ModelConfig, ModelParams, Variant};

fn static_config(latent_dim: usize, decay: f64) -> ModelConfig {
    ModelConfig {
        variant: Variant::Dsrpf,
        latent_dim,
        basis: TimeBasis::static_basis(),
        kernel: TriggerKernel::new(decay).unwrap(),
        hyper: Hyperparams::default(),
    }
}

/// A small random instance: 3 users, 4 items, dense-ish network, a handful
/// of events on [0, 5].
fn instance_strategy() -> impl Strategy<Value = (ModelConfig, SocialNetwork, EventHistory, ModelParams)>
{
    let event = (0.0f64..5.0, 0usize..3, 0usize..4)
        .prop_map(|(time, user, item)| Event { time, user, item });
    (
        proptest::collection::vec(event, 1..8),
        proptest::collection::vec(0.01f64..2.0, 3 * 2 + 4 * 2 + 12),
        proptest::collection::vec(any::<bool>(), 6),
    )
        .prop_map(|(events, values, edge_flags)| {
            let config = static_config(2, 1.0);
            let pairs = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .zip(&edge_flags)
                .filter(|(_, &on)| on)
                .map(|(&e, _)| e)
                .collect();
            let network = SocialNetwork::new(3, &edges, true).unwrap();
            let history = EventHistory::new(events, 5.0, 3, 4).unwrap();
            let mut params = ModelParams::zeros(3, 4, &config, &network);
            params.theta.copy_from_slice(&values[0..6]);
            params.beta.copy_from_slice(&values[6..14]);
            let tau_len = params.tau.len();
            params.tau.iter_mut().zip(&values[14..14 + tau_len.min(12)]).for_each(|(t, &v)| *t = v);
            (config, network, history, params)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scaling every factor by a common positive constant scales all scores
    /// but leaves the recommendation order unchanged.
    #[test]
    fn recommendation_order_is_scale_invariant(
        (config, network, history, params) in instance_strategy(),
        scale in 0.05f64..20.0,
    ) {
        let t = 4.5;
        let base = eval::recommend(&params, &config, &history, &network, 0, t, 4).unwrap();
        let mut scaled = params.clone();
        scaled.theta.iter_mut().for_each(|v| *v *= scale);
        scaled.tau.iter_mut().for_each(|v| *v *= scale);
        let re = eval::recommend(&scaled, &config, &history, &network, 0, t, 4).unwrap();
        let order: Vec<usize> = base.items.iter().map(|&(p, _)| p).collect();
        let order_scaled: Vec<usize> = re.items.iter().map(|&(p, _)| p).collect();
        prop_assert_eq!(order, order_scaled);
    }

    /// With the static basis the model is time-homogeneous: shifting the
    /// whole history and the query time leaves the intensity unchanged.
    #[test]
    fn static_model_is_shift_equivariant(
        (config, network, history, params) in instance_strategy(),
        shift in 0.0f64..10.0,
    ) {
        let shifted_events: Vec<Event> = history
            .events()
            .iter()
            .map(|e| Event { time: e.time + shift, ..*e })
            .collect();
        let shifted =
            EventHistory::new(shifted_events, history.horizon() + shift, 3, 4).unwrap();
        for t in [2.0, 4.9] {
            for u in 0..3 {
                for p in 0..4 {
                    let a = model::intensity(&params, &config, &history, &network, u, p, t)
                        .unwrap();
                    let b = model::intensity(
                        &params, &config, &shifted, &network, u, p, t + shift,
                    )
                    .unwrap();
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                }
            }
        }
    }

    /// NDCG never exceeds recall, and both are non-decreasing in k.
    #[test]
    fn ranking_metrics_are_coherent(ranks in proptest::collection::vec(1usize..100, 1..30)) {
        let mut prev_recall = 0.0;
        let mut prev_ndcg = 0.0;
        for k in 1..=100 {
            let r = eval::recall_at_k(&ranks, k).unwrap();
            let n = eval::ndcg_at_k(&ranks, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(n <= r + 1e-12);
            prop_assert!(r + 1e-12 >= prev_recall);
            prop_assert!(n + 1e-12 >= prev_ndcg);
            prev_recall = r;
            prev_ndcg = n;
        }
        prop_assert_eq!(eval::recall_at_k(&ranks, 100).unwrap(), 1.0);
    }

    /// Indicator-product integrals are additive over adjacent windows and
    /// bounded by the window length.
    #[test]
    fn basis_integrals_are_additive_and_bounded(
        hour in 0usize..24,
        day in 0usize..7,
        a in 0.0f64..20.0,
        len1 in 0.0f64..5.0,
        len2 in 0.0f64..5.0,
        anchor in 0.0f64..48.0,
    ) {
        let clock = CalendarClock { hours_per_unit: 24.0, anchor_hour: anchor };
        let basis = TimeBasis::with_fns(
            vec![BasisFn::HourOfDay(hour)],
            vec![BasisFn::DayOfWeek(day)],
            clock,
        );
        let (b, c) = (a + len1, a + len1 + len2);
        let whole = basis.product_integral(0, 0, a, c);
        let split = basis.product_integral(0, 0, a, b) + basis.product_integral(0, 0, b, c);
        prop_assert!((whole - split).abs() < 1e-9);
        prop_assert!(whole >= 0.0 && whole <= (c - a) + 1e-12);
    }

    /// Kernel values stay in [0, 1] and masses below both dt and 1/decay.
    #[test]
    fn kernel_value_and_mass_bounds(
        decay in 0.01f64..50.0,
        t_event in 0.0f64..10.0,
        dt in 0.0f64..100.0,
    ) {
        let kernel = TriggerKernel::new(decay).unwrap();
        let v = kernel.value(t_event, t_event + dt);
        prop_assert!((0.0..=1.0).contains(&v));
        let mass = kernel.integral(dt).unwrap();
        prop_assert!(mass >= 0.0);
        prop_assert!(mass <= dt + 1e-12);
        prop_assert!(mass <= 1.0 / decay + 1e-12);
    }

    /// Rescaled intervals are nonnegative and one per consecutive same-pair
    /// event gap.
    #[test]
    fn rescaled_intervals_are_nonnegative(
        (config, network, history, params) in instance_strategy(),
    ) {
        let intervals = eval::rescale(&params, &config, &history, &network).unwrap();
        let mut expected = 0usize;
        for u in 0..3 {
            for p in 0..4 {
                let count = history
                    .events()
                    .iter()
                    .filter(|e| e.user == u && e.item == p)
                    .count();
                expected += count.saturating_sub(1);
            }
        }
        prop_assert_eq!(intervals.len(), expected);
        for v in intervals {
            prop_assert!(v >= 0.0);
        }
    }

    /// Loading a generated log reproduces the events and first-appearance
    /// index maps.
    #[test]
    fn event_log_round_trips_through_the_loader(
        rows in proptest::collection::vec((0usize..5, 0usize..5, 0.0f64..9.0), 1..20),
    ) {
        let mut text = String::from("user,item,time\n");
        for &(u, p, t) in &rows {
            text.push_str(&format!("user-{u},item-{p},{t}\n"));
        }
        let (history, maps) = load_events(std::io::Cursor::new(text), Some(10.0)).unwrap();
        prop_assert_eq!(history.len(), rows.len());
        // Sorted by time.
        for w in history.events().windows(2) {
            prop_assert!(w[0].time <= w[1].time);
        }
        // Raw ids map back consistently.
        for e in history.events() {
            let raw_user = &maps.users[e.user];
            let known = rows.iter().any(|&(u, _, _)| format!("user-{u}") == *raw_user);
            prop_assert!(known);
        }
        prop_assert_eq!(
            maps.users.len(),
            rows.iter().map(|&(u, _, _)| u).collect::<std::collections::BTreeSet<_>>().len()
        );
    }
}
