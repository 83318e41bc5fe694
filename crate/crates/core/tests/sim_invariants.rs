//! Whole-run invariants: bit conservation, role disjointness, band usage,
//! mode gating and plan independence from relaying.

use std::collections::{BTreeMap, BTreeSet};

use v2xsim::link::LinkAbstraction;
use v2xsim::{simulate, RunOutcome, SimConfig, Technology};

fn config(scenario: u8, tech: Technology, sigma: f64, seed: u64, duration_ms: u64) -> SimConfig {
    let mut c = SimConfig::default();
    c.set_scenario(scenario).unwrap();
    c.technology = tech;
    c.sigma_m = sigma;
    c.seed = seed;
    c.duration_ms = duration_ms;
    c.validate().unwrap();
    c
}

fn run(c: &SimConfig) -> RunOutcome {
    simulate(c, &LinkAbstraction::default(), true).unwrap()
}

/// `t_ms -> rows` of a three-column trace.
fn by_time(csv: &str) -> BTreeMap<u64, BTreeSet<(u32, u32)>> {
    let mut out: BTreeMap<u64, BTreeSet<(u32, u32)>> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        out.entry(f[0].parse().unwrap())
            .or_default()
            .insert((f[1].parse().unwrap(), f[2].parse().unwrap()));
    }
    out
}

#[test]
fn every_technology_balances_its_ledger() {
    for tech in [Technology::Rsu, Technology::RsuRelay, Technology::Ns, Technology::NsRelay] {
        for scenario in [1, 3] {
            let out = run(&config(scenario, tech, 50.0, 3, 600));
            let m = &out.metrics;
            assert!(m.ledger_balanced, "{tech:?} scenario {scenario}");
            let delivered: u64 = m.ledger_totals.values().map(|l| l.delivered).sum();
            assert_eq!(delivered, out.stats.delivered_bits, "{tech:?} scenario {scenario}");
            let p = m.safety_prr().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn relays_never_serve_as_access_points_and_forward_on_v2v() {
    let mut relayed = 0;
    for seed in 1..=3 {
        let c = config(1, Technology::NsRelay, 50.0, seed, 500);
        let out = run(&c);
        let trace = out.trace.unwrap();
        let plans = by_time(trace.plans.as_ref().unwrap());
        let relays = by_time(trace.relays.as_ref().unwrap());
        for (t, pairs) in &relays {
            let aps: BTreeSet<u32> = plans[t].iter().filter(|(v, a)| v == a).map(|(v, _)| *v).collect();
            for (client, relay) in pairs {
                assert!(!aps.contains(relay), "t {t}: relay {relay} is an AP");
                assert!(!aps.contains(client), "t {t}: client {client} is an AP");
                assert_ne!(client, relay);
            }
            relayed += pairs.len();
        }

        // Vehicles transmit only on the V2V band, RSUs only on V2I.
        let n_rsu = out.stats.rsus as u32;
        let first: BTreeSet<(u32, u32)> = relays.get(&0).cloned().unwrap_or_default();
        let mut hop2_rows = 0;
        for line in trace.sinr.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let (tx, rx, band): (u32, u32, &str) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3]);
            if tx < n_rsu {
                assert_eq!(band, "v2i", "{line}");
            } else {
                assert_eq!(band, "v2v", "{line}");
                if first.contains(&(rx, tx - n_rsu)) {
                    hop2_rows += 1;
                }
            }
        }
        if !first.is_empty() {
            assert!(hop2_rows > 0, "seed {seed}: relays never forwarded in the first period");
        }
    }
    assert!(relayed > 0, "no vehicle was ever relayed");
}

#[test]
fn relaying_leaves_slice_plans_unchanged() {
    for (scenario, sigma) in [(1, 5.0), (1, 50.0), (2, 50.0)] {
        let plain = run(&config(scenario, Technology::Ns, sigma, 2, 500)).trace.unwrap();
        let relay = run(&config(scenario, Technology::NsRelay, sigma, 2, 500)).trace.unwrap();
        assert_eq!(plain.plans, relay.plans, "scenario {scenario} sigma {sigma}");
        assert_eq!(plain.scenario, relay.scenario);
    }
}

#[test]
fn direct_modes_build_no_plans() {
    for tech in [Technology::Rsu, Technology::RsuRelay] {
        let out = run(&config(2, tech, 5.0, 1, 300));
        assert!(out.trace.as_ref().unwrap().plans.is_none());
        assert_eq!(out.metrics.median_ap_count(), None);
        assert!(out.metrics.ap_counts.is_empty());
    }
    let ns = run(&config(2, Technology::Ns, 5.0, 1, 300));
    assert_eq!(ns.metrics.ap_counts.len(), 3);
    assert!(ns.trace.unwrap().relays.is_none());
}

#[test]
fn runs_are_deterministic() {
    let c = config(3, Technology::NsRelay, 50.0, 9, 400);
    let (a, b) = (run(&c), run(&c));
    assert_eq!(a.metrics, b.metrics);
    let (ta, tb) = (a.trace.unwrap(), b.trace.unwrap());
    assert_eq!(ta.sinr, tb.sinr);
    assert_eq!(ta.deliveries, tb.deliveries);
    let other = run(&config(3, Technology::NsRelay, 50.0, 10, 400));
    assert_ne!(other.metrics, a.metrics);
}
