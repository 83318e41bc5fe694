use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use v2xsim::relaying::*;
use v2xsim::rng::RngStream;
use v2xsim::scenario::{wrapped_distance, Position};

#[test]
fn two_hop_delivery_is_the_product_of_hops() {
    let hop = HopModel {
        bler: 0.1,
        max_attempts: 1,
        rtt_ttis: 8,
    };
    let mut rng = RngStream::new(17, "relay");
    let n = 100_000;
    let mut delivered = 0;
    for _ in 0..n {
        match relay_delivery(&mut rng, hop, hop) {
            RelayOutcome::Delivered { latency_ttis } => {
                assert_eq!(latency_ttis, 3);
                delivered += 1;
            }
            RelayOutcome::Lost { hop } => assert!(hop == 1 || hop == 2),
        }
    }
    let p = f64::from(delivered) / f64::from(n);
    assert!((p - 0.81).abs() <= 0.01, "delivery probability {p}");
}

#[test]
fn harq_retries_stretch_latency() {
    let mut rng = RngStream::new(1, "relay");
    let sure = HopModel {
        bler: 0.0,
        max_attempts: 4,
        rtt_ttis: 8,
    };
    let lossy = HopModel { bler: 0.5, ..sure };
    assert_eq!(relay_delivery(&mut rng, sure, sure), RelayOutcome::Delivered { latency_ttis: 3 });
    let dead = HopModel { bler: 1.0, ..sure };
    assert_eq!(relay_delivery(&mut rng, dead, sure), RelayOutcome::Lost { hop: 1 });
    assert_eq!(relay_delivery(&mut rng, sure, dead), RelayOutcome::Lost { hop: 2 });
    for _ in 0..1000 {
        if let RelayOutcome::Delivered { latency_ttis } = relay_delivery(&mut rng, lossy, lossy) {
            // Each hop lands on attempt k at 8 (k - 1) + 1 TTIs.
            assert_eq!((latency_ttis - 3) % 8, 0);
            assert!(latency_ttis <= 3 + 2 * 24);
        }
    }
}

#[test]
fn nearer_relay_wins_at_equal_sinr() {
    let here = Position::new(500.0, 0.0);
    let c = |id, x| RelayCandidate {
        id,
        sinr_v2i_db: 15.0,
        position: Position::new(x, 0.0),
    };
    let p = RelayParams::default();
    assert_eq!(select_relay(here, &[c(1, 620.0), c(2, 520.0)], &BTreeMap::new(), &p, 2000.0), Some(2));
    assert_eq!(select_relay(here, &[], &BTreeMap::new(), &p, 2000.0), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plans_respect_range_capacity_and_roles(seed in any::<u64>(), n_low in 0usize..30, n_cand in 0usize..15) {
        let mut rng = RngStream::new(seed, "relay-plan");
        let length = 2000.0;
        let low: Vec<(u32, Position)> = (0..n_low)
            .map(|i| (i as u32, Position::new(rng.random_range(0.0..length), 0.0)))
            .collect();
        let candidates: Vec<RelayCandidate> = (0..n_cand)
            .map(|i| RelayCandidate {
                id: 100 + i as u32,
                sinr_v2i_db: rng.random_range(3.0..30.0),
                position: Position::new(rng.random_range(0.0..length), 12.0),
            })
            .collect();
        let params = RelayParams::default();
        let plan = build_relay_plan(&low, &candidates, &params, length);
        for (client, relay) in &plan.relay_of {
            prop_assert_ne!(client, relay);
            let c = candidates.iter().find(|c| c.id == *relay).unwrap();
            let (_, pos) = low.iter().find(|(id, _)| id == client).unwrap();
            prop_assert!(wrapped_distance(*pos, c.position, length) <= params.max_distance_m);
        }
        for relay in plan.relays() {
            prop_assert!(plan.clients_of(relay).count() <= params.max_clients);
            prop_assert!(!plan.relay_of.contains_key(&relay));
        }
        // A low vehicle is left direct only when no candidate had room in range.
        for (id, pos) in &low {
            if plan.relay_of.contains_key(id) {
                continue;
            }
            for c in &candidates {
                let in_range = wrapped_distance(*pos, c.position, length) <= params.max_distance_m;
                prop_assert!(!in_range || plan.clients_of(c.id).count() == params.max_clients);
            }
        }
    }

    #[test]
    fn low_sinr_split_is_a_partition(sinrs in prop::collection::vec(-10.0f64..30.0, 0..40), t in -5.0f64..10.0) {
        let tagged: Vec<(u32, f64)> = sinrs.iter().enumerate().map(|(i, &s)| (i as u32, s)).collect();
        let low = identify_low_sinr(&tagged, t);
        let eligible = v2xsim::slicing::eligible_aps(&tagged, t);
        prop_assert_eq!(low.len() + eligible.len(), tagged.len());
        prop_assert!(low.iter().all(|id| !eligible.contains(id)));
    }
}
