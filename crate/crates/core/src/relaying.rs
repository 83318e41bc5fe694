//! Two-hop service for low-SINR video vehicles: the RSU delivers to a
//! well-connected video vehicle (2 GHz), which forwards over V2V (5.9 GHz).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::link::{decode_attempt, DecodeOutcome};
use crate::scenario::{wrapped_distance, Position, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub struct RelayParams {
    /// Video vehicles below this wideband V2I SINR are relayed. The default
    /// matches the access-point eligibility threshold: a vehicle is relayed
    /// when its own link is not AP-grade.
    pub low_sinr_threshold_db: f64,
    pub max_distance_m: f64,
    pub max_clients: usize,
    /// dB of score per meter of slack inside the relay range.
    pub kappa_db_per_m: f64,
}

impl Default for RelayParams {
    fn default() -> Self {
        RelayParams {
            low_sinr_threshold_db: 3.0,
            max_distance_m: 150.0,
            max_clients: 4,
            kappa_db_per_m: 0.1,
        }
    }
}

/// Low vehicle to relay mapping, rebuilt every re-slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelayPlan {
    pub relay_of: BTreeMap<VehicleId, VehicleId>,
}

impl RelayPlan {
    pub fn relays(&self) -> BTreeSet<VehicleId> {
        self.relay_of.values().copied().collect()
    }

    pub fn clients_of(&self, relay: VehicleId) -> impl Iterator<Item = VehicleId> + '_ {
        self.relay_of.iter().filter(move |(_, r)| **r == relay).map(|(c, _)| *c)
    }

    pub fn is_empty(&self) -> bool {
        self.relay_of.is_empty()
    }
}

/// Video vehicles whose wideband V2I SINR falls below the threshold, by id.
pub fn identify_low_sinr(video_sinr_db: &[(VehicleId, f64)], threshold_db: f64) -> Vec<VehicleId> {
    let mut out: Vec<VehicleId> = video_sinr_db
        .iter()
        .filter(|(_, s)| *s < threshold_db)
        .map(|(id, _)| *id)
        .collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayCandidate {
    pub id: VehicleId,
    pub sinr_v2i_db: f64,
    pub position: Position,
}

/// Pick the candidate maximizing `min(V2I margin, kappa * range slack)`
/// among those in range with spare client slots. Ties go to the lower id.
pub fn select_relay(
    low_position: Position,
    candidates: &[RelayCandidate],
    load: &BTreeMap<VehicleId, usize>,
    params: &RelayParams,
    highway_length: f64,
) -> Option<VehicleId> {
    let mut best: Option<(f64, VehicleId)> = None;
    for c in candidates {
        if load.get(&c.id).copied().unwrap_or(0) >= params.max_clients {
            continue;
        }
        let d = wrapped_distance(low_position, c.position, highway_length);
        if d > params.max_distance_m {
            continue;
        }
        let margin = c.sinr_v2i_db - params.low_sinr_threshold_db;
        let proximity = params.kappa_db_per_m * (params.max_distance_m - d);
        let score = margin.min(proximity);
        let better = match best {
            None => true,
            Some((s, id)) => score > s || (score == s && c.id < id),
        };
        if better {
            best = Some((score, c.id));
        }
    }
    best.map(|(_, id)| id)
}

/// Greedy plan: low vehicles in id order each take their best relay.
///
/// `candidates` must already exclude slice access points and low vehicles.
pub fn build_relay_plan(
    low: &[(VehicleId, Position)],
    candidates: &[RelayCandidate],
    params: &RelayParams,
    highway_length: f64,
) -> RelayPlan {
    let mut low = low.to_vec();
    low.sort_by_key(|(id, _)| *id);
    let mut load = BTreeMap::new();
    let mut plan = RelayPlan::default();
    for (id, pos) in low {
        if let Some(relay) = select_relay(pos, candidates, &load, params, highway_length) {
            *load.entry(relay).or_insert(0) += 1;
            plan.relay_of.insert(id, relay);
        }
    }
    plan
}

/// Result of carrying one packet over both hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayOutcome {
    Delivered { latency_ttis: u64 },
    /// Lost on hop 1 or hop 2 after exhausting HARQ.
    Lost { hop: u8 },
}

/// One hop's error behavior: fixed per-attempt BLER, HARQ budget and
/// round-trip time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopModel {
    pub bler: f64,
    pub max_attempts: u8,
    pub rtt_ttis: u64,
}

/// Carry a packet over RSU -> relay -> vehicle with store-and-forward.
///
/// Each hop takes one TTI per attempt plus `rtt - 1` waiting TTIs between
/// attempts; the relay holds the packet for one TTI before hop 2.
pub fn relay_delivery<R: Rng + ?Sized>(rng: &mut R, hop1: HopModel, hop2: HopModel) -> RelayOutcome {
    let run_hop = |rng: &mut R, hop: HopModel| -> Option<u64> {
        for attempt in 0..u64::from(hop.max_attempts.max(1)) {
            if decode_attempt(rng, hop.bler) == DecodeOutcome::Ack {
                return Some(attempt * hop.rtt_ttis + 1);
            }
        }
        None
    };
    let Some(first) = run_hop(rng, hop1) else {
        return RelayOutcome::Lost { hop: 1 };
    };
    let Some(second) = run_hop(rng, hop2) else {
        return RelayOutcome::Lost { hop: 2 };
    };
    RelayOutcome::Delivered {
        latency_ttis: first + 1 + second,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn cand(id: VehicleId, sinr: f64, x: f64) -> RelayCandidate {
        RelayCandidate {
            id,
            sinr_v2i_db: sinr,
            position: Position::new(x, 0.0),
        }
    }

    #[test]
    fn low_sinr_filter() {
        let sinrs = [(3, 5.0), (1, -2.0), (2, 0.0), (0, -0.1)];
        assert!(identify_low_sinr(&sinrs, -10.0).is_empty());
        assert_eq!(identify_low_sinr(&sinrs, f64::INFINITY), vec![0, 1, 2, 3]);
        assert_eq!(identify_low_sinr(&sinrs, 0.0), vec![0, 1]);
    }

    #[test]
    fn relay_selection_examples() {
        let p = RelayParams::default();
        let here = Position::new(1000.0, 0.0);
        let empty = BTreeMap::new();
        assert_eq!(select_relay(here, &[cand(5, 10.0, 1100.0)], &empty, &p, 2000.0), Some(5));
        assert_eq!(select_relay(here, &[cand(5, 10.0, 1200.0)], &empty, &p, 2000.0), None);
        let two = [cand(8, 20.0, 1120.0), cand(9, 20.0, 1020.0)];
        assert_eq!(select_relay(here, &two, &empty, &p, 2000.0), Some(9));
        let full = BTreeMap::from([(9, 4)]);
        assert_eq!(select_relay(here, &two, &full, &p, 2000.0), Some(8));
    }

    #[test]
    fn plan_respects_client_cap() {
        let p = RelayParams {
            max_clients: 2,
            ..RelayParams::default()
        };
        let low: Vec<_> = (0..5).map(|i| (i, Position::new(100.0 + f64::from(i), 0.0))).collect();
        let plan = build_relay_plan(&low, &[cand(10, 15.0, 110.0), cand(11, 15.0, 160.0)], &p, 2000.0);
        assert_eq!(plan.clients_of(10).count(), 2);
        assert_eq!(plan.clients_of(11).count(), 2);
        assert_eq!(plan.relay_of.len(), 4);
        assert!(plan.relay_of.iter().all(|(c, r)| c != r));
    }

    #[test]
    fn delivery_examples() {
        let mut rng = RngStream::new(3, "harq");
        let clean = HopModel {
            bler: 0.0,
            max_attempts: 4,
            rtt_ttis: 8,
        };
        let dead = HopModel { bler: 1.0, ..clean };
        assert_eq!(relay_delivery(&mut rng, clean, clean), RelayOutcome::Delivered { latency_ttis: 3 });
        assert_eq!(relay_delivery(&mut rng, clean, dead), RelayOutcome::Lost { hop: 2 });
        assert_eq!(relay_delivery(&mut rng, dead, clean), RelayOutcome::Lost { hop: 1 });
    }
}
