//! The TTI loop.
//!
//! Every millisecond: re-slice on period boundaries, generate traffic, expire
//! stale safety packets, let every transmitter schedule its PRBs (phase 1),
//! then evaluate SINR and decode every transport block against the complete
//! set of transmissions of the TTI (phase 2), and finally move vehicles.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::Exp1;

use crate::channel::{combine, db_to_linear, dbm_to_mw, linear_to_db, Band, LogDistance, RX_ANTENNAS};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::link::{decode_attempt, harq_combine, DecodeOutcome, HarqProcess, LinkAbstraction, Modulation};
use crate::mac::{
    schedule_tti, tb_bits, update_pf, SUBCARRIERS_PER_PRB, SYMBOLS_PER_TTI, FlowDemand, PacketQueue, PfState, PrbUse, QueuedPacket, RetxRequest, TrafficKind,
};
use crate::metrics::{MetricsAccumulator, RunMetrics};
use crate::relaying::{build_relay_plan, identify_low_sinr, RelayCandidate, RelayParams, RelayPlan};
use crate::rng::RngStream;
use crate::scenario::{generate_drop, wrapped_distance, Position, Scenario, VehicleId};
use crate::slicing::{build_plan, eligible_aps, AccessPointPlan, PlanParams};

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub stats: RunStats,
    pub trace: Option<Trace>,
}

/// Counters describing what happened inside a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub vehicles: usize,
    pub video_vehicles: usize,
    pub rsus: usize,
    pub reslices: usize,
    pub transport_blocks: u64,
    pub first_transmissions: u64,
    pub first_transmission_nacks: u64,
    pub harq_exhausted: u64,
    /// Sum over re-slices of the number of relayed vehicles.
    pub relayed_clients: u64,
    pub delivered_bits: u64,
}

impl RunStats {
    /// Accumulate another run's counters.
    pub fn add(&mut self, other: &RunStats) {
        self.vehicles += other.vehicles;
        self.video_vehicles += other.video_vehicles;
        self.rsus += other.rsus;
        self.reslices += other.reslices;
        self.transport_blocks += other.transport_blocks;
        self.first_transmissions += other.first_transmissions;
        self.first_transmission_nacks += other.first_transmission_nacks;
        self.harq_exhausted += other.harq_exhausted;
        self.relayed_clients += other.relayed_clients;
        self.delivered_bits += other.delivered_bits;
    }
}

/// Debug CSVs collected when tracing is on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub scenario: String,
    /// Per-PRB SINR of every transport block during the first re-slice period.
    pub sinr: String,
    /// Access-point plans; absent for direct-RSU technologies.
    pub plans: Option<String>,
    /// Relay plans; absent without relaying.
    pub relays: Option<String>,
    pub deliveries: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hop {
    Direct,
    /// RSU to relay; delivered packets continue on flow `next`.
    ToRelay { next: usize },
    /// Relay to client.
    FromRelay,
}

#[derive(Debug, Clone)]
struct Flow {
    kind: TrafficKind,
    /// Vehicle decoding this hop.
    receiver: VehicleId,
    /// Vehicle the bits are finally for.
    end_user: VehicleId,
    hop: Hop,
    owner: Option<usize>,
    queue: PacketQueue,
    pf: PfState,
    served_bits: f64,
}

#[derive(Debug, Clone)]
struct Transmitter {
    band: Band,
    power_mw: f64,
    flows: Vec<usize>,
    pending_retx: Vec<u64>,
}

#[derive(Debug, Clone)]
struct HarqEntry {
    tx: usize,
    flow: usize,
    mcs: u8,
    n_prb: usize,
    segments: Vec<(u64, u32)>,
    process: Option<HarqProcess>,
    due: u64,
}

/// A transport block on air in the current TTI.
#[derive(Debug, Clone)]
struct Block {
    harq: u64,
    tx: usize,
    prbs: Vec<usize>,
}

struct Engine<'a> {
    config: &'a SimConfig,
    link: &'a LinkAbstraction,
    scenario: Scenario,
    n_rsu: usize,
    v2i: LogDistance,
    v2v: LogDistance,
    noise_mw: f64,
    flows: Vec<Flow>,
    txs: Vec<Transmitter>,
    relay_flows: BTreeMap<(VehicleId, VehicleId), usize>,
    harq: BTreeMap<u64, HarqEntry>,
    next_harq: u64,
    plan: Option<AccessPointPlan>,
    relay_plan: RelayPlan,
    safety_phase: Vec<u64>,
    serving_rsu: Vec<usize>,
    geometry_sinr_db: Vec<f64>,
    /// Transmitters on air per PRB in the previous TTI, per band.
    last_on_air: [Vec<Vec<usize>>; 2],
    metrics: MetricsAccumulator,
    stats: RunStats,
    trace: Option<Trace>,
    fading: RngStream,
    scheduler: RngStream,
    harq_rng: RngStream,
    slicing_rng: RngStream,
    next_packet: u64,
    delivered_bits: u64,
}

fn band_slot(band: Band) -> usize {
    match band {
        Band::V2i => 0,
        Band::V2v => 1,
    }
}

/// Run one simulation to completion.
pub fn simulate(config: &SimConfig, link: &LinkAbstraction, trace: bool) -> Result<RunOutcome> {
    config.validate()?;
    let mut topology = RngStream::new(config.seed, "topology");
    let scenario = generate_drop(&config.layout(), &mut topology)?;
    let mut engine = Engine::new(config, link, scenario, trace);
    for t in 0..config.duration_ms {
        engine.step(t)?;
    }
    engine.finish()
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, link: &'a LinkAbstraction, scenario: Scenario, trace: bool) -> Self {
        let n = scenario.vehicles.len();
        let n_rsu = scenario.rsus.len();
        let mut traffic = RngStream::new(config.seed, "traffic");
        let safety_phase = (0..n).map(|_| traffic.random_range(0..config.safety_period_ms)).collect();

        let mut txs = Vec::with_capacity(n_rsu + n);
        for _ in 0..n_rsu {
            txs.push(Transmitter {
                band: Band::V2i,
                power_mw: dbm_to_mw(config.v2i_tx_power_dbm),
                flows: Vec::new(),
                pending_retx: Vec::new(),
            });
        }
        for _ in 0..n {
            txs.push(Transmitter {
                band: Band::V2v,
                power_mw: dbm_to_mw(config.v2v_tx_power_dbm),
                flows: Vec::new(),
                pending_retx: Vec::new(),
            });
        }

        // Flow v: video of vehicle v (used only by video vehicles);
        // flow n + v: safety of vehicle v.
        let mut flows = Vec::with_capacity(2 * n);
        for kind in [TrafficKind::Video, TrafficKind::Safety] {
            for v in 0..n as VehicleId {
                flows.push(Flow {
                    kind,
                    receiver: v,
                    end_user: v,
                    hop: Hop::Direct,
                    owner: None,
                    queue: PacketQueue::default(),
                    pf: PfState::new(config.pf_alpha),
                    served_bits: 0.0,
                });
            }
        }

        let stats = RunStats {
            vehicles: n,
            video_vehicles: scenario.vehicles.iter().filter(|v| v.wants_video).count(),
            rsus: n_rsu,
            ..RunStats::default()
        };
        let trace = trace.then(|| Trace {
            scenario: scenario.to_csv(),
            sinr: "t_ms,tx,rx,band,prb,sinr_db\n".into(),
            plans: config.technology.slicing().then(|| "t_ms,vehicle,access_point\n".to_string()),
            relays: config.technology.relaying().then(|| "t_ms,client,relay\n".to_string()),
            deliveries: "flow,packet,arrival_ms,delivered_ms,outcome\n".into(),
        });

        Engine {
            config,
            link,
            n_rsu,
            v2i: LogDistance {
                intercept_db: config.v2i_pl_intercept_db,
                slope_db_per_decade: config.v2i_pl_slope_db,
                reference_m: LogDistance::V2I.reference_m,
            },
            v2v: LogDistance {
                intercept_db: config.v2v_pl_intercept_db,
                slope_db_per_decade: config.v2v_pl_slope_db,
                reference_m: LogDistance::V2V.reference_m,
            },
            noise_mw: config.noise_power_mw(),
            flows,
            txs,
            relay_flows: BTreeMap::new(),
            harq: BTreeMap::new(),
            next_harq: 0,
            plan: None,
            relay_plan: RelayPlan::default(),
            safety_phase,
            serving_rsu: vec![0; n],
            geometry_sinr_db: vec![f64::NEG_INFINITY; n],
            last_on_air: [vec![Vec::new(); config.prb_count], vec![Vec::new(); config.prb_count]],
            metrics: MetricsAccumulator::new(),
            stats,
            trace,
            fading: RngStream::new(config.seed, "fading"),
            scheduler: RngStream::new(config.seed, "scheduler"),
            harq_rng: RngStream::new(config.seed, "harq"),
            slicing_rng: RngStream::new(config.seed, "slicing"),
            next_packet: 0,
            delivered_bits: 0,
            scenario,
        }
    }

    fn n_vehicles(&self) -> usize {
        self.scenario.vehicles.len()
    }

    fn tx_position(&self, tx: usize) -> Position {
        if tx < self.n_rsu {
            self.scenario.rsus[tx].position
        } else {
            self.scenario.vehicles[tx - self.n_rsu].position
        }
    }

    fn vehicle_tx(&self, v: VehicleId) -> usize {
        self.n_rsu + v as usize
    }

    /// Mean received power (mW) at vehicle `rx` from transmitter `tx`.
    fn rx_power(&self, tx: usize, rx: VehicleId) -> f64 {
        let t = &self.txs[tx];
        let d = wrapped_distance(
            self.tx_position(tx),
            self.scenario.vehicles[rx as usize].position,
            self.scenario.highway_length,
        );
        let model = match t.band {
            Band::V2i => &self.v2i,
            Band::V2v => &self.v2v,
        };
        t.power_mw * db_to_linear(-model.loss_db(d))
    }

    fn step(&mut self, t: u64) -> Result<()> {
        self.metrics.advance_to(t);
        if t % self.config.reslice_period_ms == 0 {
            self.reslice(t)?;
        }
        self.generate(t);
        self.expire(t);
        let blocks = self.schedule(t)?;
        self.transmit(t, &blocks)?;
        for f in &mut self.flows {
            f.pf = update_pf(f.pf, f.served_bits, 1e-3 * self.config.tti_ms as f64);
            f.served_bits = 0.0;
        }
        self.scenario.advance(1e-3 * self.config.tti_ms as f64);
        Ok(())
    }

    /// Nearest RSU and full-load geometry SINR for every vehicle.
    fn measure_geometry(&mut self) {
        for v in 0..self.n_vehicles() {
            let powers: Vec<f64> = (0..self.n_rsu).map(|r| self.rx_power(r, v as VehicleId)).collect();
            let mut best = 0;
            for (r, &p) in powers.iter().enumerate() {
                if p > powers[best] {
                    best = r;
                }
            }
            let interference: f64 = powers.iter().enumerate().filter(|(r, _)| *r != best).map(|(_, p)| p).sum();
            self.serving_rsu[v] = best;
            self.geometry_sinr_db[v] = linear_to_db(powers[best] / (interference + self.noise_mw));
        }
    }

    fn reslice(&mut self, t: u64) -> Result<()> {
        let tech = self.config.technology;
        self.stats.reslices += 1;
        self.measure_geometry();
        let video_sinr: Vec<(VehicleId, f64)> = self
            .scenario
            .vehicles
            .iter()
            .filter(|v| v.wants_video)
            .map(|v| (v.id, self.geometry_sinr_db[v.id as usize]))
            .collect();

        self.plan = None;
        if tech.slicing() {
            let eligible = eligible_aps(&video_sinr, self.config.ap_threshold_db);
            if !eligible.is_empty() {
                let params = PlanParams {
                    sigma: self.config.sigma_m,
                    e_max_cap: self.config.e_max_cap,
                    kmeans_restarts: self.config.kmeans_restarts,
                    reslice_period_ms: self.config.reslice_period_ms,
                    ..PlanParams::default()
                };
                let plan = build_plan(&self.scenario, &eligible, &params, t, &mut self.slicing_rng)?;
                self.check_plan(&plan, &eligible)?;
                self.plan = Some(plan);
            }
            let aps = self.plan.as_ref().map_or(0, |p| p.access_points.len());
            self.metrics.record_ap_count(aps);
            if let (Some(trace), Some(plan)) = (self.trace.as_mut(), self.plan.as_ref()) {
                let out = trace.plans.as_mut().expect("slicing runs keep a plan trace");
                for &ap in &plan.access_points {
                    let _ = writeln!(out, "{t},{ap},{ap}");
                }
                for (v, ap) in &plan.assignment {
                    let _ = writeln!(out, "{t},{v},{ap}");
                }
            }
        }

        self.relay_plan = RelayPlan::default();
        if tech.relaying() {
            self.build_relays(&video_sinr)?;
            if let Some(out) = self.trace.as_mut().and_then(|tr| tr.relays.as_mut()) {
                for (c, r) in &self.relay_plan.relay_of {
                    let _ = writeln!(out, "{t},{c},{r}");
                }
            }
        }
        self.stats.relayed_clients += self.relay_plan.relay_of.len() as u64;
        self.reroute_video(t);
        self.assign_owners();
        Ok(())
    }

    /// Video a user's RSU still holds follows the user's current route, so
    /// stale routes do not keep competing for PRBs.
    fn reroute_video(&mut self, now_ms: u64) {
        if self.relay_flows.is_empty() {
            return;
        }
        let n = self.n_vehicles();
        let mut rsu_side: BTreeMap<VehicleId, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            rsu_side.entry(v as VehicleId).or_default().push(v);
        }
        for (&(_, client), &hop1) in &self.relay_flows {
            rsu_side.entry(client).or_default().push(hop1);
        }
        for (user, flows) in rsu_side {
            let active = match self.relay_plan.relay_of.get(&user) {
                Some(&relay) => self.relay_flows[&(relay, user)],
                None => user as usize,
            };
            let mut moved: Vec<QueuedPacket> = Vec::new();
            for f in flows.into_iter().filter(|&f| f != active) {
                moved.extend(self.flows[f].queue.withdraw_untouched());
            }
            moved.sort_by_key(|p| (p.arrival_ms, p.seq));
            // Everything moved is already ready; stamping it ready now keeps
            // ready times non-decreasing along the target queue.
            for p in moved {
                self.flows[active].queue.push(p.bits, p.arrival_ms, now_ms, p.tag);
            }
        }
    }

    fn check_plan(&self, plan: &AccessPointPlan, eligible: &[VehicleId]) -> Result<()> {
        if plan.access_points.is_empty() {
            return Err(Error::Invariant("access-point plan without access points".into()));
        }
        if let Some(ap) = plan.access_points.iter().find(|ap| eligible.binary_search(ap).is_err()) {
            return Err(Error::Invariant(format!("access point {ap} is not eligible")));
        }
        for v in &self.scenario.vehicles {
            let is_ap = plan.is_access_point(v.id);
            match plan.assignment.get(&v.id) {
                Some(ap) if is_ap || !plan.is_access_point(*ap) => {
                    return Err(Error::Invariant(format!("vehicle {} has an invalid assignment", v.id)));
                }
                None if !is_ap => {
                    return Err(Error::Invariant(format!("vehicle {} is not assigned to an AP", v.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn build_relays(&mut self, video_sinr: &[(VehicleId, f64)]) -> Result<()> {
        let is_ap = |v: VehicleId| self.plan.as_ref().is_some_and(|p| p.is_access_point(v));
        let params = RelayParams {
            low_sinr_threshold_db: self.config.low_sinr_threshold_db,
            max_distance_m: self.config.relay_max_distance_m,
            max_clients: self.config.relay_max_clients,
            kappa_db_per_m: self.config.relay_kappa_db_per_m,
        };
        let low: Vec<VehicleId> = identify_low_sinr(video_sinr, params.low_sinr_threshold_db)
            .into_iter()
            .filter(|&v| !is_ap(v))
            .collect();
        let candidates: Vec<RelayCandidate> = video_sinr
            .iter()
            .filter(|(v, _)| !is_ap(*v) && low.binary_search(v).is_err())
            .map(|&(id, s)| RelayCandidate {
                id,
                sinr_v2i_db: s,
                position: self.scenario.vehicles[id as usize].position,
            })
            .collect();
        let low_pos: Vec<(VehicleId, Position)> =
            low.iter().map(|&v| (v, self.scenario.vehicles[v as usize].position)).collect();
        let plan = build_relay_plan(&low_pos, &candidates, &params, self.scenario.highway_length);

        let mut load: BTreeMap<VehicleId, usize> = BTreeMap::new();
        for (&client, &relay) in &plan.relay_of {
            if client == relay || is_ap(relay) || low.binary_search(&relay).is_ok() {
                return Err(Error::Invariant(format!("relay {relay} for {client} violates relay rules")));
            }
            *load.entry(relay).or_default() += 1;
        }
        if load.values().any(|&l| l > params.max_clients) {
            return Err(Error::Invariant("relay serves too many clients".into()));
        }
        for (&client, &relay) in &plan.relay_of {
            self.relay_flow(relay, client);
        }
        self.relay_plan = plan;
        Ok(())
    }

    /// Hop-1 flow of the `(relay, client)` pair, creating both hops on first use.
    fn relay_flow(&mut self, relay: VehicleId, client: VehicleId) -> usize {
        if let Some(&f) = self.relay_flows.get(&(relay, client)) {
            return f;
        }
        let hop2 = self.flows.len();
        let relay_tx = self.vehicle_tx(relay);
        self.flows.push(Flow {
            kind: TrafficKind::Video,
            receiver: client,
            end_user: client,
            hop: Hop::FromRelay,
            owner: Some(relay_tx),
            queue: PacketQueue::default(),
            pf: PfState::new(self.config.pf_alpha),
            served_bits: 0.0,
        });
        let hop1 = self.flows.len();
        self.flows.push(Flow {
            kind: TrafficKind::Video,
            receiver: relay,
            end_user: client,
            hop: Hop::ToRelay { next: hop2 },
            owner: None,
            queue: PacketQueue::default(),
            pf: PfState::new(self.config.pf_alpha),
            served_bits: 0.0,
        });
        self.relay_flows.insert((relay, client), hop1);
        hop1
    }

    fn assign_owners(&mut self) {
        let n = self.n_vehicles();
        let slicing = self.config.technology.slicing();
        for v in 0..n {
            let rsu = self.serving_rsu[v];
            self.flows[v].owner = Some(rsu);
            self.flows[n + v].owner = if slicing {
                self.plan
                    .as_ref()
                    .and_then(|p| p.assignment.get(&(v as VehicleId)))
                    .map(|&ap| self.vehicle_tx(ap))
            } else {
                Some(rsu)
            };
        }
        for (&(relay, _), &hop1) in &self.relay_flows {
            self.flows[hop1].owner = Some(self.serving_rsu[relay as usize]);
        }
        for tx in &mut self.txs {
            tx.flows.clear();
        }
        for (i, f) in self.flows.iter().enumerate() {
            let video_user = self.scenario.vehicles[f.end_user as usize].wants_video;
            if f.kind == TrafficKind::Video && !video_user {
                continue;
            }
            if let Some(o) = f.owner {
                self.txs[o].flows.push(i);
            }
        }
    }

    fn generate(&mut self, t: u64) {
        let n = self.n_vehicles();
        let cfg = self.config;
        if t % cfg.video_period_ms == 0 {
            for v in 0..n {
                if !self.scenario.vehicles[v].wants_video {
                    continue;
                }
                let id = v as VehicleId;
                let flow = match self.relay_plan.relay_of.get(&id) {
                    Some(&relay) => self.relay_flows[&(relay, id)],
                    None => v,
                };
                self.flows[flow].queue.push(cfg.video_packet_bits, t, t, 0);
                self.metrics.on_generated(TrafficKind::Video, id, cfg.video_packet_bits);
                self.metrics.add_service_time(TrafficKind::Video, id, cfg.video_period_ms);
            }
        }
        for v in 0..n {
            if t % cfg.safety_period_ms != self.safety_phase[v] {
                continue;
            }
            let id = v as VehicleId;
            if self.plan.as_ref().is_some_and(|p| p.is_access_point(id)) {
                continue;
            }
            let flow = n + v;
            let counted = t >= cfg.prr_warmup_ms
                && cfg.locality_radius_m.is_none_or(|radius| {
                    self.flows[flow]
                        .owner
                        .is_some_and(|o| self.tx_distance(o, id) <= radius)
                });
            let tag = if counted {
                let packet = self.next_packet;
                self.next_packet += 1;
                self.metrics.open_record(packet, TrafficKind::Safety, 1) as u32 + 1
            } else {
                0
            };
            self.flows[flow].queue.push(cfg.safety_packet_bits, t, t, tag);
            self.metrics.on_generated(TrafficKind::Safety, id, cfg.safety_packet_bits);
            self.metrics.add_service_time(TrafficKind::Safety, id, cfg.safety_period_ms);
        }
    }

    fn tx_distance(&self, tx: usize, rx: VehicleId) -> f64 {
        wrapped_distance(
            self.tx_position(tx),
            self.scenario.vehicles[rx as usize].position,
            self.scenario.highway_length,
        )
    }

    fn expire(&mut self, t: u64) {
        let n = self.n_vehicles();
        let deadline = self.config.safety_deadline_ms;
        for v in 0..n {
            let flow = n + v;
            loop {
                let Some(front) = self.flows[flow].queue.live().next().copied() else {
                    break;
                };
                if t < front.arrival_ms + deadline {
                    break;
                }
                self.flows[flow].queue.finish(front.seq);
                self.metrics.on_expired(TrafficKind::Safety, v as VehicleId, front.bits);
                self.log_delivery(flow, front.seq, front.arrival_ms, None, "expired");
            }
        }
    }

    fn log_delivery(&mut self, flow: usize, seq: u64, arrival: u64, delivered: Option<u64>, outcome: &str) {
        if let Some(trace) = self.trace.as_mut() {
            let d = delivered.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(trace.deliveries, "{flow},{seq},{arrival},{d},{outcome}");
        }
    }

    /// Expected post-MRC SINR (linear) per PRB of flow `f` sent by `tx`,
    /// with the interference each PRB saw in the previous TTI.
    fn cqi(&self, tx: usize, f: usize) -> Vec<f64> {
        let flow = &self.flows[f];
        let signal = RX_ANTENNAS as f64 * self.rx_power(tx, flow.receiver);
        let backoff = db_to_linear(-self.config.cqi_backoff_db);
        let mut gains: Vec<(usize, f64)> = Vec::new();
        self.last_on_air[band_slot(self.txs[tx].band)]
            .iter()
            .map(|on_air| {
                let mut interference = 0.0;
                for &j in on_air {
                    if j == tx {
                        continue;
                    }
                    interference += match gains.iter().find(|(k, _)| *k == j) {
                        Some(&(_, g)) => g,
                        None => {
                            let g = self.rx_power(j, flow.receiver);
                            gains.push((j, g));
                            g
                        }
                    };
                }
                backoff * signal / (interference + self.noise_mw)
            })
            .collect()
    }

    /// Payload bits one PRB carries at its reported SINR; zero below the
    /// most robust MCS.
    fn prb_rate(&self, sinr: f64) -> f64 {
        let db = linear_to_db(sinr);
        let table = &self.link.mcs;
        if db < table.get(0).bler_ref_sinr_db {
            return 0.0;
        }
        let e = table.select(db);
        e.spectral_efficiency * SUBCARRIERS_PER_PRB * SYMBOLS_PER_TTI * (1.0 - self.config.tb_overhead)
    }

    /// Highest MCS whose reference SINR the block's MIESM-compressed CQI meets.
    fn block_mcs(&self, cqi: &[f64]) -> u8 {
        let mut effective = [0.0; 3];
        for (slot, m) in Modulation::ALL.iter().enumerate() {
            effective[slot] = linear_to_db(self.link.curves.effective_sinr(cqi, *m));
        }
        let table = &self.link.mcs;
        let mut best = 0;
        for e in table.entries() {
            let slot = Modulation::ALL.iter().position(|m| *m == e.modulation).expect("known modulation");
            if e.bler_ref_sinr_db <= effective[slot] {
                best = e.index;
            }
        }
        best
    }

    fn schedule(&mut self, t: u64) -> Result<Vec<Block>> {
        let prb_count = self.config.prb_count;
        let slicing = self.config.technology.slicing();
        let mut blocks = Vec::new();
        for tx in 0..self.txs.len() {
            let mut due: Vec<u64> = self.txs[tx]
                .pending_retx
                .iter()
                .copied()
                .filter(|id| self.harq[id].due <= t)
                .collect();
            due.sort_unstable();
            let mut demands = Vec::new();
            for &f in &self.txs[tx].flows {
                let backlog = self.flows[f].queue.backlog(t);
                if backlog > 0 {
                    demands.push(FlowDemand {
                        flow: f,
                        avg_rate_bps: self.flows[f].pf.avg_rate_bps,
                        backlog_bits: backlog,
                    });
                }
            }
            if due.is_empty() && demands.is_empty() {
                continue;
            }
            if slicing && tx < self.n_rsu {
                if let Some(d) = demands.iter().find(|d| self.flows[d.flow].kind == TrafficKind::Safety) {
                    return Err(Error::Invariant(format!("RSU {tx} scheduled safety flow {} under slicing", d.flow)));
                }
            }
            let cqi: Vec<Vec<f64>> = demands.iter().map(|d| self.cqi(tx, d.flow)).collect();
            let rates: Vec<Vec<f64>> = cqi.iter().map(|c| c.iter().map(|&s| self.prb_rate(s)).collect()).collect();
            let retx: Vec<RetxRequest> = due
                .iter()
                .map(|&id| RetxRequest {
                    harq_id: id,
                    n_prb: self.harq[&id].n_prb,
                })
                .collect();
            let offset = self.scheduler.random_range(0..prb_count);
            let order: Vec<usize> = (0..prb_count).map(|i| (i + offset) % prb_count).collect();
            let alloc = schedule_tti(t, &demands, |i, p| rates[i][p], &retx, &order);
            let mut retx_prbs: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            let mut new_prbs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (p, u) in alloc.prbs.iter().enumerate() {
                match u {
                    Some(PrbUse::Retransmission(id)) => retx_prbs.entry(*id).or_default().push(p),
                    Some(PrbUse::NewData(f)) => new_prbs.entry(*f).or_default().push(p),
                    None => {}
                }
            }
            for (id, prbs) in retx_prbs {
                self.txs[tx].pending_retx.retain(|&x| x != id);
                blocks.push(Block { harq: id, tx, prbs });
            }
            for (i, d) in demands.iter().enumerate() {
                let Some(prbs) = new_prbs.remove(&d.flow) else { continue };
                let reported: Vec<f64> = prbs.iter().map(|&p| cqi[i][p]).collect();
                let mcs = self.block_mcs(&reported);
                let entry = self.link.mcs.get(mcs);
                let capacity = tb_bits(entry, prbs.len(), self.config.tb_overhead);
                let flow = &mut self.flows[d.flow];
                let segments = flow.queue.take_segments(capacity, t);
                if segments.is_empty() {
                    continue;
                }
                flow.served_bits += segments.iter().map(|s| f64::from(s.1)).sum::<f64>();
                let id = self.next_harq;
                self.next_harq += 1;
                self.harq.insert(
                    id,
                    HarqEntry {
                        tx,
                        flow: d.flow,
                        mcs,
                        n_prb: prbs.len(),
                        segments,
                        process: None,
                        due: t,
                    },
                );
                blocks.push(Block { harq: id, tx, prbs });
            }
        }
        Ok(blocks)
    }

    fn transmit(&mut self, t: u64, blocks: &[Block]) -> Result<()> {
        let prb_count = self.config.prb_count;
        // Who is on air, per band and PRB.
        let mut on_air: [Vec<Vec<usize>>; 2] = [vec![Vec::new(); prb_count], vec![Vec::new(); prb_count]];
        for b in blocks {
            let slot = band_slot(self.txs[b.tx].band);
            for &p in &b.prbs {
                on_air[slot][p].push(b.tx);
            }
        }
        let trace_sinr = self.trace.is_some() && t < self.config.reslice_period_ms;
        for b in blocks {
            let entry = &self.harq[&b.harq];
            let flow_id = entry.flow;
            let rx = self.flows[flow_id].receiver;
            let slot = band_slot(self.txs[b.tx].band);
            let desired = self.rx_power(b.tx, rx);
            let mut gains: Vec<(usize, f64)> = Vec::new();
            let mut sinr = Vec::with_capacity(b.prbs.len());
            for &p in &b.prbs {
                let mut interference = 0.0;
                for &j in &on_air[slot][p] {
                    if j == b.tx {
                        continue;
                    }
                    let g = match gains.iter().find(|(k, _)| *k == j) {
                        Some(&(_, g)) => g,
                        None => {
                            let g = self.rx_power(j, rx);
                            gains.push((j, g));
                            g
                        }
                    };
                    let x: f64 = self.fading.sample(Exp1);
                    interference += g * x;
                }
                let mut array_gain = 0.0;
                for _ in 0..RX_ANTENNAS {
                    let x: f64 = self.fading.sample(Exp1);
                    array_gain += x;
                }
                sinr.push(combine(desired * array_gain, interference, self.noise_mw));
            }
            if trace_sinr {
                let trace = self.trace.as_mut().expect("checked above");
                for (&p, &s) in b.prbs.iter().zip(&sinr) {
                    let _ = writeln!(
                        trace.sinr,
                        "{t},{},{rx},{},{p},{:.4}",
                        b.tx,
                        self.txs[b.tx].band.label(),
                        linear_to_db(s)
                    );
                }
            }
            self.decode(t, b.harq, &sinr)?;
        }
        self.last_on_air = on_air;
        Ok(())
    }

    fn decode(&mut self, t: u64, harq_id: u64, sinr: &[f64]) -> Result<()> {
        let mut entry = self.harq.remove(&harq_id).expect("block has a HARQ entry");
        let process = match entry.process.take() {
            None => {
                self.stats.first_transmissions += 1;
                HarqProcess::new(harq_id, entry.mcs, sinr, self.config.harq_max_attempts)
            }
            Some(p) => harq_combine(p, sinr)
                .map_err(|e| Error::Invariant(format!("retransmission past the HARQ budget: {e}")))?,
        };
        self.stats.transport_blocks += 1;
        let mcs = self.link.mcs.get(entry.mcs);
        let bler = self.link.block_error(process.accumulated(), mcs);
        let outcome = decode_attempt(&mut self.harq_rng, bler);
        match outcome {
            DecodeOutcome::Ack => {
                for &(seq, bits) in &entry.segments {
                    if let Some(packet) = self.flows[entry.flow].queue.ack(seq, bits) {
                        self.deliver(t, entry.flow, packet);
                    }
                }
            }
            DecodeOutcome::Nack => {
                if process.attempt == 1 {
                    self.stats.first_transmission_nacks += 1;
                }
                if process.can_retransmit() {
                    entry.due = t + self.config.harq_rtt_ttis;
                    entry.process = Some(process);
                    self.txs[entry.tx].pending_retx.push(harq_id);
                    self.harq.insert(harq_id, entry);
                } else {
                    self.stats.harq_exhausted += 1;
                    for &(seq, _) in &entry.segments {
                        if let Some(packet) = self.flows[entry.flow].queue.segment_lost(seq) {
                            let f = &self.flows[entry.flow];
                            self.metrics.on_harq_drop(f.kind, f.end_user, packet.bits);
                            self.log_delivery(entry.flow, packet.seq, packet.arrival_ms, None, "harq");
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, t: u64, flow: usize, packet: QueuedPacket) {
        let f = &self.flows[flow];
        let (kind, user) = (f.kind, f.end_user);
        if let Hop::ToRelay { next } = f.hop {
            // Store and forward: one TTI at the relay before hop 2.
            self.flows[next].queue.push(packet.bits, packet.arrival_ms, t + 2, packet.tag);
            return;
        }
        let delivered_ms = t + self.config.tti_ms;
        let on_time = match kind {
            TrafficKind::Safety => delivered_ms - packet.arrival_ms <= self.config.safety_deadline_ms,
            TrafficKind::Video => true,
        };
        if on_time {
            self.metrics.on_delivered(kind, user, packet.bits);
            self.delivered_bits += u64::from(packet.bits);
            if packet.tag > 0 {
                self.metrics.record_success(packet.tag as usize - 1);
            }
            self.log_delivery(flow, packet.seq, packet.arrival_ms, Some(delivered_ms), "delivered");
        } else {
            self.metrics.on_expired(kind, user, packet.bits);
            self.log_delivery(flow, packet.seq, packet.arrival_ms, Some(delivered_ms), "late");
        }
    }

    fn finish(mut self) -> Result<RunOutcome> {
        let mut queued: BTreeMap<(TrafficKind, VehicleId), u64> = BTreeMap::new();
        for f in &self.flows {
            let bits: u64 = f.queue.live().map(|p| u64::from(p.bits)).sum();
            if bits > 0 {
                *queued.entry((f.kind, f.end_user)).or_default() += bits;
            }
        }
        let keys: Vec<(TrafficKind, VehicleId)> = self.metrics.ledgers().keys().copied().collect();
        for key in keys {
            self.metrics.set_in_queue(key.0, key.1, queued.remove(&key).unwrap_or(0));
        }
        if let Some((key, _)) = queued.into_iter().next() {
            return Err(Error::Invariant(format!("queued bits for {key:?} were never generated")));
        }
        if let Some((key, ledger)) = self.metrics.ledgers().iter().find(|(_, l)| !l.balanced()) {
            return Err(Error::Invariant(format!("bit ledger of {key:?} does not balance: {ledger:?}")));
        }
        let tallied: u64 = self.metrics.tallies().values().map(|t| t.delivered_bits).sum();
        if tallied != self.delivered_bits || self.metrics.delivered_total() != self.delivered_bits {
            return Err(Error::Invariant(format!(
                "per-vehicle delivered bits {tallied} differ from the delivery ledger {}",
                self.delivered_bits
            )));
        }
        self.stats.delivered_bits = self.delivered_bits;
        Ok(RunOutcome {
            metrics: self.metrics.finish(),
            stats: self.stats,
            trace: self.trace,
        })
    }
}
