//! Reception records, packet reception ratio, throughput CDFs and the
//! per-flow bit ledger.

use std::collections::BTreeMap;

use crate::mac::TrafficKind;
use crate::scenario::VehicleId;

/// Outcome of one transmitted packet across its intended receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptionRecord {
    pub packet_id: u64,
    pub slice: TrafficKind,
    pub intended: u32,
    /// Receivers that decoded the packet within its deadline.
    pub successes: u32,
}

/// Mean over packets of `successes / intended`; `None` without records.
///
/// Ratios are summed in a canonical order, so the result is bit-identical
/// under any permutation of `records`.
pub fn prr(records: &[ReceptionRecord]) -> Option<f64> {
    let mut pairs: Vec<(u32, u32)> = records
        .iter()
        .filter(|r| r.intended > 0)
        .map(|r| (r.successes.min(r.intended), r.intended))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_unstable();
    let sum: f64 = pairs.iter().map(|&(s, n)| f64::from(s) / f64::from(n)).sum();
    Some(sum / pairs.len() as f64)
}

/// Empirical CDF of per-vehicle rates, evaluated on a kbps grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputCdf {
    pub grid_kbps: Vec<f64>,
    /// `P(rate <= grid[i])`.
    pub cdf: Vec<f64>,
    sorted_kbps: Vec<f64>,
}

impl ThroughputCdf {
    pub fn from_rates(rates_kbps: &[f64], grid_kbps: &[f64]) -> ThroughputCdf {
        let mut sorted_kbps = rates_kbps.to_vec();
        sorted_kbps.sort_by(f64::total_cmp);
        let n = sorted_kbps.len();
        let cdf = grid_kbps
            .iter()
            .map(|&g| {
                if n == 0 {
                    0.0
                } else {
                    sorted_kbps.partition_point(|&r| r <= g) as f64 / n as f64
                }
            })
            .collect();
        ThroughputCdf {
            grid_kbps: grid_kbps.to_vec(),
            cdf,
            sorted_kbps,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted_kbps
    }

    /// `P(rate <= x)`.
    pub fn at(&self, x_kbps: f64) -> f64 {
        self.fraction(|r| r <= x_kbps)
    }

    /// `P(rate < x)`.
    pub fn below(&self, x_kbps: f64) -> f64 {
        self.fraction(|r| r < x_kbps)
    }

    fn fraction(&self, pred: impl Fn(f64) -> bool) -> f64 {
        if self.sorted_kbps.is_empty() {
            return 0.0;
        }
        self.sorted_kbps.partition_point(|&r| pred(r)) as f64 / self.sorted_kbps.len() as f64
    }
}

/// Default CDF grid: 0 to 2000 kbps in 2 kbps steps.
pub fn default_grid() -> Vec<f64> {
    (0..=1000).map(|i| f64::from(i) * 2.0).collect()
}

/// CDF of `bits / duration` per vehicle.
pub fn throughput_cdf(per_vehicle_bits: &[u64], duration_s: f64, grid_kbps: &[f64]) -> ThroughputCdf {
    assert!(duration_s > 0.0, "throughput needs a positive duration");
    let rates: Vec<f64> = per_vehicle_bits.iter().map(|&b| b as f64 / duration_s / 1000.0).collect();
    ThroughputCdf::from_rates(&rates, grid_kbps)
}

/// Share of vehicles reaching `target_kbps`: `1 - CDF(target-)`, where the
/// left limit is taken on the grid (the CDF value one grid step below the
/// target). Off-grid targets fall back to the exact `P(rate >= target)`.
pub fn target_rate_probability(cdf: &ThroughputCdf, target_kbps: f64) -> f64 {
    if cdf.samples().is_empty() {
        return 0.0;
    }
    match cdf.grid_kbps.iter().position(|&g| (g - target_kbps).abs() <= 1e-9) {
        Some(0) => 1.0,
        Some(i) => 1.0 - cdf.cdf[i - 1],
        None => 1.0 - cdf.below(target_kbps),
    }
}

/// Bits of one end-to-end flow by final disposition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitLedger {
    pub generated: u64,
    pub delivered: u64,
    pub in_queue: u64,
    pub expired: u64,
    pub harq_dropped: u64,
}

impl BitLedger {
    pub fn balanced(&self) -> bool {
        self.generated == self.delivered + self.in_queue + self.expired + self.harq_dropped
    }

    fn add(&mut self, other: &BitLedger) {
        self.generated += other.generated;
        self.delivered += other.delivered;
        self.in_queue += other.in_queue;
        self.expired += other.expired;
        self.harq_dropped += other.harq_dropped;
    }
}

/// Delivered bits and service time of one vehicle in one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServiceTally {
    pub delivered_bits: u64,
    /// Time the vehicle was an intended receiver of the slice.
    pub served_ms: u64,
}

impl ServiceTally {
    pub fn rate_kbps(&self) -> Option<f64> {
        (self.served_ms > 0).then(|| self.delivered_bits as f64 / self.served_ms as f64)
    }
}

/// Single-run accumulator; one writer.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    now_ms: u64,
    tallies: BTreeMap<(TrafficKind, VehicleId), ServiceTally>,
    ledgers: BTreeMap<(TrafficKind, VehicleId), BitLedger>,
    records: Vec<ReceptionRecord>,
    ap_counts: Vec<usize>,
    delivered_total: u64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance_to(&mut self, now_ms: u64) {
        assert!(now_ms >= self.now_ms, "metrics time must not run backwards");
        self.now_ms = now_ms;
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn add_service_time(&mut self, kind: TrafficKind, vehicle: VehicleId, ms: u64) {
        self.tallies.entry((kind, vehicle)).or_default().served_ms += ms;
    }

    pub fn on_generated(&mut self, kind: TrafficKind, vehicle: VehicleId, bits: u32) {
        self.ledgers.entry((kind, vehicle)).or_default().generated += u64::from(bits);
    }

    pub fn on_delivered(&mut self, kind: TrafficKind, vehicle: VehicleId, bits: u32) {
        self.ledgers.entry((kind, vehicle)).or_default().delivered += u64::from(bits);
        self.tallies.entry((kind, vehicle)).or_default().delivered_bits += u64::from(bits);
        self.delivered_total += u64::from(bits);
    }

    pub fn on_expired(&mut self, kind: TrafficKind, vehicle: VehicleId, bits: u32) {
        self.ledgers.entry((kind, vehicle)).or_default().expired += u64::from(bits);
    }

    pub fn on_harq_drop(&mut self, kind: TrafficKind, vehicle: VehicleId, bits: u32) {
        self.ledgers.entry((kind, vehicle)).or_default().harq_dropped += u64::from(bits);
    }

    pub fn set_in_queue(&mut self, kind: TrafficKind, vehicle: VehicleId, bits: u64) {
        self.ledgers.entry((kind, vehicle)).or_default().in_queue = bits;
    }

    pub fn open_record(&mut self, packet_id: u64, slice: TrafficKind, intended: u32) -> usize {
        self.records.push(ReceptionRecord {
            packet_id,
            slice,
            intended,
            successes: 0,
        });
        self.records.len() - 1
    }

    pub fn record_success(&mut self, index: usize) {
        let r = &mut self.records[index];
        r.successes = (r.successes + 1).min(r.intended);
    }

    pub fn record_ap_count(&mut self, count: usize) {
        self.ap_counts.push(count);
    }

    pub fn records(&self) -> &[ReceptionRecord] {
        &self.records
    }

    pub fn ledgers(&self) -> &BTreeMap<(TrafficKind, VehicleId), BitLedger> {
        &self.ledgers
    }

    pub fn tallies(&self) -> &BTreeMap<(TrafficKind, VehicleId), ServiceTally> {
        &self.tallies
    }

    /// Total bits delivered through `on_delivered`.
    pub fn delivered_total(&self) -> u64 {
        self.delivered_total
    }

    pub fn finish(self) -> RunMetrics {
        let rates = |kind: TrafficKind| -> Vec<f64> {
            self.tallies
                .iter()
                .filter(|((k, _), _)| *k == kind)
                .filter_map(|(_, t)| t.rate_kbps())
                .collect()
        };
        let mut totals = BTreeMap::new();
        for ((kind, _), ledger) in &self.ledgers {
            totals.entry(*kind).or_insert_with(BitLedger::default).add(ledger);
        }
        RunMetrics {
            safety_rates_kbps: rates(TrafficKind::Safety),
            video_rates_kbps: rates(TrafficKind::Video),
            ledger_balanced: self.ledgers.values().all(BitLedger::balanced),
            ledger_totals: totals,
            records: self.records,
            ap_counts: self.ap_counts,
            runs: 1,
        }
    }
}

/// Finished, mergeable results of one or more runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub safety_rates_kbps: Vec<f64>,
    pub video_rates_kbps: Vec<f64>,
    pub records: Vec<ReceptionRecord>,
    pub ap_counts: Vec<usize>,
    pub ledger_totals: BTreeMap<TrafficKind, BitLedger>,
    pub ledger_balanced: bool,
    pub runs: usize,
}

impl RunMetrics {
    /// Pool another run's samples. Associative and commutative for every
    /// derived statistic (rates and records are order-free).
    pub fn merge(&mut self, other: RunMetrics) {
        if self.runs == 0 {
            *self = other;
            return;
        }
        self.safety_rates_kbps.extend(other.safety_rates_kbps);
        self.video_rates_kbps.extend(other.video_rates_kbps);
        self.records.extend(other.records);
        self.ap_counts.extend(other.ap_counts);
        for (kind, ledger) in &other.ledger_totals {
            self.ledger_totals.entry(*kind).or_default().add(ledger);
        }
        self.ledger_balanced &= other.ledger_balanced;
        self.runs += other.runs;
    }

    pub fn safety_prr(&self) -> Option<f64> {
        let safety: Vec<ReceptionRecord> =
            self.records.iter().filter(|r| r.slice == TrafficKind::Safety).copied().collect();
        prr(&safety)
    }

    pub fn cdf(&self, kind: TrafficKind, grid_kbps: &[f64]) -> ThroughputCdf {
        match kind {
            TrafficKind::Safety => ThroughputCdf::from_rates(&self.safety_rates_kbps, grid_kbps),
            TrafficKind::Video => ThroughputCdf::from_rates(&self.video_rates_kbps, grid_kbps),
        }
    }

    /// Target-rate probability on the default grid.
    pub fn target_probability(&self, kind: TrafficKind, target_kbps: f64) -> f64 {
        target_rate_probability(&self.cdf(kind, &default_grid()), target_kbps)
    }

    pub fn median_ap_count(&self) -> Option<f64> {
        median(&self.ap_counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Format like C's `%.6g`.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: u32, n: u32) -> ReceptionRecord {
        ReceptionRecord {
            packet_id: 0,
            slice: TrafficKind::Safety,
            intended: n,
            successes: s,
        }
    }

    #[test]
    fn prr_examples() {
        assert_eq!(prr(&[rec(3, 3), rec(5, 5)]), Some(1.0));
        assert_eq!(prr(&[rec(1, 2), rec(2, 4), rec(3, 6)]), Some(0.5));
        assert_eq!(prr(&[rec(2, 4), rec(3, 3), rec(0, 2)]), Some(0.5));
        assert_eq!(prr(&[]), None);
        let a = prr(&[rec(1, 3), rec(2, 7), rec(5, 9)]);
        let b = prr(&[rec(5, 9), rec(1, 3), rec(2, 7)]);
        assert_eq!(a, b);
    }

    #[test]
    fn cdf_examples() {
        let grid = default_grid();
        let cdf = ThroughputCdf::from_rates(&[100.0, 200.0, 300.0], &grid);
        assert!((cdf.at(150.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cdf.at(-1.0), 0.0);
        assert_eq!(cdf.at(f64::INFINITY), 1.0);
        assert_eq!(*cdf.cdf.last().unwrap(), 1.0);
        assert!(cdf.cdf.windows(2).all(|w| w[0] <= w[1]));

        let same = ThroughputCdf::from_rates(&[128.0; 4], &grid);
        assert_eq!(same.at(126.0), 0.0);
        assert_eq!(same.at(128.0), 1.0);

        let bits = throughput_cdf(&[100_000, 200_000, 300_000], 1.0, &grid);
        assert_eq!(bits.samples(), &[100.0, 200.0, 300.0]);
    }

    #[test]
    fn target_probability_examples() {
        let grid = default_grid();
        let cdf = ThroughputCdf::from_rates(&[100.0, 200.0], &grid);
        assert_eq!(target_rate_probability(&cdf, 128.0), 0.5);
        assert_eq!(target_rate_probability(&cdf, 0.0), 1.0);
        let all = ThroughputCdf::from_rates(&[1000.0, 1200.0], &grid);
        assert_eq!(target_rate_probability(&all, 1000.0), 1.0);
        // Within one grid step below the target still counts.
        let near = ThroughputCdf::from_rates(&[999.0, 990.0], &grid);
        assert_eq!(target_rate_probability(&near, 1000.0), 0.5);
    }

    #[test]
    fn merge_pools_records() {
        let mut a = MetricsAccumulator::new();
        let i = a.open_record(0, TrafficKind::Safety, 2);
        a.record_success(i);
        let mut b = MetricsAccumulator::new();
        for k in 0..3 {
            let i = b.open_record(k, TrafficKind::Safety, 1);
            b.record_success(i);
        }
        let mut merged = a.finish();
        merged.merge(b.finish());
        assert_eq!(merged.runs, 2);
        assert_eq!(merged.safety_prr(), Some((0.5 + 3.0) / 4.0));
    }

    #[test]
    fn ledger_balance() {
        let mut m = MetricsAccumulator::new();
        m.on_generated(TrafficKind::Video, 1, 1000);
        m.on_generated(TrafficKind::Video, 1, 1000);
        m.on_delivered(TrafficKind::Video, 1, 1000);
        m.set_in_queue(TrafficKind::Video, 1, 1000);
        assert!(m.ledgers().values().all(BitLedger::balanced));
        m.on_expired(TrafficKind::Video, 1, 1);
        assert!(!m.finish().ledger_balanced);
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(1.0), "1");
        assert_eq!(fmt_g6(0.5), "0.5");
        assert_eq!(fmt_g6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_g6(128.0), "128");
        assert_eq!(fmt_g6(123456.7), "123457");
        assert_eq!(fmt_g6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g6(0.0001234567), "0.000123457");
        assert_eq!(fmt_g6(0.00001234567), "1.23457e-05");
        assert_eq!(fmt_g6(999999.6), "1e+06");
        assert_eq!(fmt_g6(-2.5), "-2.5");
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
