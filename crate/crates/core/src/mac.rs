//! Traffic sources, proportional-fair PRB allocation and transport-block
//! sizing.

use std::collections::VecDeque;

use crate::link::McsEntry;

/// Floor applied to PF averages, in bits per second.
pub const RATE_FLOOR_BPS: f64 = 1.0;
pub const SUBCARRIERS_PER_PRB: f64 = 12.0;
pub const SYMBOLS_PER_TTI: f64 = 14.0;
pub const DEFAULT_OVERHEAD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficKind {
    Safety,
    Video,
}

impl TrafficKind {
    pub fn label(self) -> &'static str {
        match self {
            TrafficKind::Safety => "safety",
            TrafficKind::Video => "video",
        }
    }
}

/// Periodic constant-size packet source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSpec {
    pub kind: TrafficKind,
    pub packet_bits: u32,
    pub period_ms: u64,
    /// Packets still undelivered this long after arrival are lost.
    pub deadline_ms: Option<u64>,
}

impl TrafficSpec {
    /// 1600-byte safety message every 100 ms, 100 ms deadline.
    pub const SAFETY: TrafficSpec = TrafficSpec {
        kind: TrafficKind::Safety,
        packet_bits: 12_800,
        period_ms: 100,
        deadline_ms: Some(100),
    };

    /// 1000-bit video frame every millisecond (1 Mbit/s CBR).
    pub const VIDEO: TrafficSpec = TrafficSpec {
        kind: TrafficKind::Video,
        packet_bits: 1000,
        period_ms: 1,
        deadline_ms: None,
    };

    pub fn rate_bps(&self) -> f64 {
        f64::from(self.packet_bits) * 1000.0 / self.period_ms as f64
    }

    /// Whether a packet delivered at `delivered_ms` meets the deadline.
    pub fn on_time(&self, arrival_ms: u64, delivered_ms: u64) -> bool {
        self.deadline_ms.is_none_or(|d| delivered_ms.saturating_sub(arrival_ms) <= d)
    }
}

/// A packet emitted by a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub bits: u32,
    pub arrival_ms: u64,
    pub deadline_ms: Option<u64>,
}

/// Packets emitted at `now_ms`: one on every period boundary.
pub fn generate_traffic(spec: &TrafficSpec, now_ms: u64) -> Option<Arrival> {
    (now_ms % spec.period_ms == 0).then_some(Arrival {
        bits: spec.packet_bits,
        arrival_ms: now_ms,
        deadline_ms: spec.deadline_ms.map(|d| now_ms + d),
    })
}

/// Exponentially averaged served rate of one flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfState {
    pub avg_rate_bps: f64,
    pub alpha: f64,
}

impl PfState {
    pub fn new(alpha: f64) -> Self {
        PfState {
            avg_rate_bps: RATE_FLOOR_BPS,
            alpha,
        }
    }
}

pub fn pf_metric(inst_rate_bps: f64, avg_rate_bps: f64) -> f64 {
    inst_rate_bps / avg_rate_bps.max(RATE_FLOOR_BPS)
}

/// `R <- (1 - a) R + a * served / dt`, floored at 1 bit/s.
pub fn update_pf(state: PfState, served_bits: f64, dt_s: f64) -> PfState {
    assert!(dt_s > 0.0, "PF update needs a positive interval");
    let avg = (1.0 - state.alpha) * state.avg_rate_bps + state.alpha * served_bits / dt_s;
    PfState {
        avg_rate_bps: avg.max(RATE_FLOOR_BPS),
        ..state
    }
}

/// Transport-block payload: `floor(eff * 12 * 14 * n_prb * (1 - overhead))`.
pub fn tb_bits(mcs: &McsEntry, n_prb: usize, overhead: f64) -> u32 {
    let bits = mcs.spectral_efficiency * SUBCARRIERS_PER_PRB * SYMBOLS_PER_TTI * n_prb as f64 * (1.0 - overhead);
    bits.floor().max(0.0) as u32
}

/// A flow competing for PRBs in one TTI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowDemand {
    pub flow: usize,
    pub avg_rate_bps: f64,
    /// Bits ready to send; allocation to a flow stops once covered.
    pub backlog_bits: u64,
}

/// A pending retransmission that needs `n_prb` PRBs this TTI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetxRequest {
    pub harq_id: u64,
    pub n_prb: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrbUse {
    Retransmission(u64),
    NewData(usize),
}

/// PRB map of one transmitter for one TTI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrbAllocation {
    pub tti: u64,
    pub prbs: Vec<Option<PrbUse>>,
    /// Retransmissions that did not fit and wait for the next TTI.
    pub deferred: Vec<u64>,
}

impl PrbAllocation {
    /// PRB indices carrying new data of `flow`, ascending.
    pub fn prbs_of(&self, flow: usize) -> Vec<usize> {
        self.prbs
            .iter()
            .enumerate()
            .filter(|(_, u)| **u == Some(PrbUse::NewData(flow)))
            .map(|(p, _)| p)
            .collect()
    }

    pub fn retx_prbs(&self, harq_id: u64) -> Vec<usize> {
        self.prbs
            .iter()
            .enumerate()
            .filter(|(_, u)| **u == Some(PrbUse::Retransmission(harq_id)))
            .map(|(p, _)| p)
            .collect()
    }

    pub fn used(&self) -> usize {
        self.prbs.iter().filter(|u| u.is_some()).count()
    }
}

/// Per-PRB proportional-fair allocation for one transmitter.
///
/// Retransmissions claim PRBs first, in `prb_order`. Every remaining PRB,
/// visited in `prb_order`, goes to the backlogged flow maximizing
/// `rate(flow, prb) / avg_rate`, ties to the lowest flow id. A flow leaves
/// the contest once the bits already granted cover its backlog. `rate`
/// returns bits per TTI on one PRB.
pub fn schedule_tti(
    tti: u64,
    flows: &[FlowDemand],
    rate: impl Fn(usize, usize) -> f64,
    retx: &[RetxRequest],
    prb_order: &[usize],
) -> PrbAllocation {
    let prb_count = prb_order.len();
    let mut prbs = vec![None; prb_count];
    let mut order = prb_order.iter().copied();
    let mut deferred = Vec::new();
    let mut free = prb_count;
    for r in retx {
        if r.n_prb <= free {
            for p in order.by_ref().take(r.n_prb) {
                prbs[p] = Some(PrbUse::Retransmission(r.harq_id));
            }
            free -= r.n_prb;
        } else {
            deferred.push(r.harq_id);
        }
    }

    let mut granted = vec![0.0f64; flows.len()];
    let mut live: Vec<usize> = (0..flows.len()).filter(|&i| flows[i].backlog_bits > 0).collect();
    live.sort_by_key(|&i| flows[i].flow);
    for p in order {
        if live.is_empty() {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for &i in &live {
            let r = rate(i, p);
            if r <= 0.0 {
                continue;
            }
            let metric = pf_metric(r * 1000.0, flows[i].avg_rate_bps);
            if best.is_none_or(|(m, _)| metric > m) {
                best = Some((metric, i));
            }
        }
        let Some((_, winner)) = best else { continue };
        prbs[p] = Some(PrbUse::NewData(flows[winner].flow));
        granted[winner] += rate(winner, p);
        if granted[winner] >= flows[winner].backlog_bits as f64 {
            live.retain(|&i| i != winner);
        }
    }
    PrbAllocation { tti, prbs, deferred }
}

/// FIFO packet queue with segment-level bookkeeping.
///
/// Packets keep their sequence number until every earlier packet is
/// finished, so in-flight segments can always find their packet.
#[derive(Debug, Clone, Default)]
pub struct PacketQueue {
    base_seq: u64,
    packets: VecDeque<QueuedPacket>,
    /// Ready-to-send unsent bits (cached for scheduling).
    unsent_total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedPacket {
    pub seq: u64,
    pub bits: u32,
    pub arrival_ms: u64,
    pub ready_ms: u64,
    pub unsent: u32,
    pub acked: u32,
    pub in_flight: u16,
    pub finished: bool,
    /// Caller-owned tag, e.g. a reception-record index.
    pub tag: u32,
}

impl PacketQueue {
    pub fn push(&mut self, bits: u32, arrival_ms: u64, ready_ms: u64, tag: u32) -> u64 {
        debug_assert!(self.packets.back().is_none_or(|b| b.ready_ms <= ready_ms));
        let seq = self.base_seq + self.packets.len() as u64;
        self.packets.push_back(QueuedPacket {
            seq,
            bits,
            arrival_ms,
            ready_ms,
            unsent: bits,
            acked: 0,
            in_flight: 0,
            finished: false,
            tag,
        });
        self.unsent_total += u64::from(bits);
        seq
    }

    pub fn get(&self, seq: u64) -> Option<&QueuedPacket> {
        seq.checked_sub(self.base_seq).and_then(|i| self.packets.get(i as usize))
    }

    pub fn get_mut(&mut self, seq: u64) -> Option<&mut QueuedPacket> {
        seq.checked_sub(self.base_seq).and_then(|i| self.packets.get_mut(i as usize))
    }

    /// Unsent bits of live packets that are ready at `now_ms`.
    ///
    /// Packets are pushed with non-decreasing `ready_ms`, so only a suffix of
    /// the queue can still be waiting.
    pub fn backlog(&self, now_ms: u64) -> u64 {
        if self.unsent_total == 0 {
            return 0;
        }
        let waiting: u64 = self
            .packets
            .iter()
            .rev()
            .take_while(|p| p.ready_ms > now_ms)
            .filter(|p| !p.finished)
            .map(|p| u64::from(p.unsent))
            .sum();
        self.unsent_total - waiting
    }

    pub fn has_unsent(&self) -> bool {
        self.unsent_total > 0
    }

    /// Take up to `capacity` ready bits in FIFO order, returning the
    /// `(seq, bits)` segments.
    pub fn take_segments(&mut self, capacity: u32, now_ms: u64) -> Vec<(u64, u32)> {
        let mut left = capacity;
        let mut segments = Vec::new();
        for p in self.packets.iter_mut() {
            if left == 0 {
                break;
            }
            if p.finished || p.unsent == 0 || p.ready_ms > now_ms {
                continue;
            }
            let take = p.unsent.min(left);
            p.unsent -= take;
            p.in_flight += 1;
            left -= take;
            self.unsent_total -= u64::from(take);
            segments.push((p.seq, take));
        }
        segments
    }

    /// Mark a packet finished, dropping its unsent remainder. Returns the
    /// packet when it was live.
    pub fn finish(&mut self, seq: u64) -> Option<QueuedPacket> {
        let p = self.get_mut(seq)?;
        if p.finished {
            return None;
        }
        p.finished = true;
        let unsent = p.unsent;
        p.unsent = 0;
        let snapshot = *p;
        self.unsent_total -= u64::from(unsent);
        self.compact();
        Some(snapshot)
    }

    /// Segment of `seq` acknowledged. Returns the packet once all of its bits
    /// arrived (and it was still live).
    pub fn ack(&mut self, seq: u64, bits: u32) -> Option<QueuedPacket> {
        let p = self.get_mut(seq)?;
        p.in_flight = p.in_flight.saturating_sub(1);
        if p.finished {
            self.compact();
            return None;
        }
        p.acked += bits;
        if p.acked >= p.bits {
            return self.finish(seq);
        }
        None
    }

    /// Segment of `seq` failed for good.
    pub fn segment_lost(&mut self, seq: u64) -> Option<QueuedPacket> {
        let p = self.get_mut(seq)?;
        p.in_flight = p.in_flight.saturating_sub(1);
        self.finish(seq).or_else(|| {
            self.compact();
            None
        })
    }

    fn compact(&mut self) {
        while let Some(front) = self.packets.front() {
            if front.finished && front.in_flight == 0 {
                self.packets.pop_front();
                self.base_seq += 1;
            } else {
                break;
            }
        }
    }

    /// Remove every packet none of whose bits have been sent yet, oldest
    /// first. Partly sent packets stay so their segments can land.
    pub fn withdraw_untouched(&mut self) -> Vec<QueuedPacket> {
        let mut out = Vec::new();
        for p in self.packets.iter_mut() {
            if !p.finished && p.in_flight == 0 && p.acked == 0 && p.unsent == p.bits {
                out.push(*p);
                p.finished = true;
                p.unsent = 0;
                self.unsent_total -= u64::from(p.bits);
            }
        }
        self.compact();
        out
    }

    /// Live packets, oldest first.
    pub fn live(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.packets.iter().filter(|p| !p.finished)
    }

    pub fn is_finished(&self, seq: u64) -> bool {
        self.get(seq).is_none_or(|p| p.finished)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::McsTable;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn pf_metric_examples() {
        assert_eq!(pf_metric(0.0, 10.0), 0.0);
        assert_eq!(pf_metric(100.0, 0.0), 100.0);
        assert_eq!(pf_metric(100.0, 50.0), 2.0);
    }

    #[test]
    fn update_pf_examples() {
        let mut s = PfState::new(0.01);
        s.avg_rate_bps = 1e6;
        for _ in 0..10_000 {
            s = update_pf(s, 0.0, 1e-3);
        }
        assert_eq!(s.avg_rate_bps, RATE_FLOOR_BPS);
        for _ in 0..10_000 {
            s = update_pf(s, 500.0, 1e-3);
        }
        assert!((s.avg_rate_bps - 500_000.0).abs() < 1.0);
        let one = update_pf(PfState { avg_rate_bps: 7.0, alpha: 1.0 }, 3.0, 1e-3);
        assert_eq!(one.avg_rate_bps, 3000.0);
    }

    #[test]
    fn traffic_generation() {
        let safety: Vec<_> = (0..1000).filter_map(|t| generate_traffic(&TrafficSpec::SAFETY, t)).collect();
        assert_eq!(safety.len(), 10);
        assert!(safety.iter().all(|a| a.bits == 12_800 && a.deadline_ms == Some(a.arrival_ms + 100)));
        let video = (0..1000).filter_map(|t| generate_traffic(&TrafficSpec::VIDEO, t)).count();
        assert_eq!(video, 1000);
        assert!(TrafficSpec::SAFETY.on_time(0, 100));
        assert!(!TrafficSpec::SAFETY.on_time(0, 101));
        assert!(TrafficSpec::VIDEO.on_time(0, 10_000));
        assert_eq!(TrafficSpec::VIDEO.rate_bps(), 1e6);
        assert_eq!(TrafficSpec::SAFETY.rate_bps(), 128_000.0);
    }

    #[test]
    fn tb_bits_examples() {
        let table = McsTable::standard();
        let mut qpsk_half = table.get(3).clone();
        qpsk_half.spectral_efficiency = 1.0;
        assert_eq!(tb_bits(&qpsk_half, 1, DEFAULT_OVERHEAD), 126);
        assert_eq!(tb_bits(&qpsk_half, 10, DEFAULT_OVERHEAD), 1260);
        let mut doubled = qpsk_half.clone();
        doubled.spectral_efficiency = 2.0;
        assert_eq!(tb_bits(&doubled, 1, DEFAULT_OVERHEAD), 252);
    }

    fn prbs(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn single_flow_takes_everything() {
        let flows = [FlowDemand {
            flow: 4,
            avg_rate_bps: 10.0,
            backlog_bits: u64::MAX,
        }];
        let a = schedule_tti(0, &flows, |_, _| 100.0, &[], &prbs(50));
        assert_eq!(a.prbs_of(4).len(), 50);
    }

    #[test]
    fn orthogonal_good_prbs() {
        let flows = [
            FlowDemand {
                flow: 0,
                avg_rate_bps: 1e5,
                backlog_bits: u64::MAX,
            },
            FlowDemand {
                flow: 1,
                avg_rate_bps: 1e5,
                backlog_bits: u64::MAX,
            },
        ];
        let good = |f: usize, p: usize| if (p < 2) == (f == 0) { 500.0 } else { 50.0 };
        let a = schedule_tti(0, &flows, good, &[], &prbs(4));
        assert_eq!(a.prbs_of(0), vec![0, 1]);
        assert_eq!(a.prbs_of(1), vec![2, 3]);
    }

    #[test]
    fn backlog_caps_allocation_and_idle_flows_get_nothing() {
        let flows = [
            FlowDemand {
                flow: 0,
                avg_rate_bps: 1.0,
                backlog_bits: 250,
            },
            FlowDemand {
                flow: 1,
                avg_rate_bps: 1e9,
                backlog_bits: u64::MAX,
            },
            FlowDemand {
                flow: 2,
                avg_rate_bps: 1.0,
                backlog_bits: 0,
            },
        ];
        let a = schedule_tti(0, &flows, |_, _| 100.0, &[], &prbs(10));
        assert_eq!(a.prbs_of(0), vec![0, 1, 2]);
        assert_eq!(a.prbs_of(1).len(), 7);
        assert!(a.prbs_of(2).is_empty());
    }

    #[test]
    fn retransmissions_preempt() {
        let flows = [FlowDemand {
            flow: 0,
            avg_rate_bps: 1.0,
            backlog_bits: u64::MAX,
        }];
        let retx = [RetxRequest { harq_id: 7, n_prb: 3 }, RetxRequest { harq_id: 8, n_prb: 5 }];
        let order = [4, 3, 2, 1, 0];
        let a = schedule_tti(0, &flows, |_, _| 1.0, &retx, &order);
        assert_eq!(a.retx_prbs(7), vec![2, 3, 4]);
        assert_eq!(a.deferred, vec![8]);
        assert_eq!(a.prbs_of(0), vec![0, 1]);
    }

    #[test]
    fn long_run_shares_are_even() {
        let mut rng = RngStream::new(21, "scheduler");
        let mut states = [PfState::new(0.01), PfState::new(0.01)];
        let mut served = [0usize; 2];
        let n = 10_000;
        for t in 0..n {
            let rates = [rng.random_range(50.0..150.0), rng.random_range(50.0..150.0)];
            let flows: Vec<FlowDemand> = (0..2)
                .map(|i| FlowDemand {
                    flow: i,
                    avg_rate_bps: states[i].avg_rate_bps,
                    backlog_bits: u64::MAX,
                })
                .collect();
            let a = schedule_tti(t, &flows, |f, _| rates[f], &[], &[0]);
            for i in 0..2 {
                let bits = if a.prbs_of(i).is_empty() { 0.0 } else { rates[i] };
                served[i] += usize::from(bits > 0.0);
                states[i] = update_pf(states[i], bits, 1e-3);
            }
        }
        let share = served[0] as f64 / n as f64;
        assert!((share - 0.5).abs() < 0.05, "share {share}");
    }

    #[test]
    fn queue_segments_and_acks() {
        let mut q = PacketQueue::default();
        let a = q.push(1000, 0, 0, 0);
        let b = q.push(1000, 1, 1, 0);
        assert_eq!(q.backlog(0), 1000);
        assert_eq!(q.backlog(1), 2000);
        let segs = q.take_segments(1500, 1);
        assert_eq!(segs, vec![(a, 1000), (b, 500)]);
        assert!(q.ack(b, 500).is_none());
        let done = q.ack(a, 1000).unwrap();
        assert_eq!(done.seq, a);
        let rest = q.take_segments(10_000, 1);
        assert_eq!(rest, vec![(b, 500)]);
        assert!(q.ack(b, 500).is_some());
        assert_eq!(q.live().count(), 0);
        assert!(!q.has_unsent());
    }

    #[test]
    fn queue_loss_drops_remainder() {
        let mut q = PacketQueue::default();
        let a = q.push(1000, 0, 0, 0);
        let _ = q.take_segments(400, 0);
        let lost = q.segment_lost(a).unwrap();
        assert_eq!(lost.acked, 0);
        assert_eq!(q.backlog(0), 0);
        assert!(q.segment_lost(a).is_none());
    }

    #[test]
    fn withdraw_keeps_partly_sent_packets() {
        let mut q = PacketQueue::default();
        let a = q.push(1000, 0, 0, 0);
        let b = q.push(1000, 1, 1, 1);
        let c = q.push(1000, 2, 2, 2);
        assert_eq!(q.take_segments(400, 5), vec![(a, 400)]);
        let out = q.withdraw_untouched();
        assert_eq!(out.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![b, c]);
        assert_eq!(q.backlog(5), 600);
        assert_eq!(q.live().count(), 1);
        assert!(q.withdraw_untouched().is_empty());
        assert!(q.ack(a, 400).is_none());
    }
}
