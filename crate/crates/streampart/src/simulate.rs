//! Discrete-event, token-level simulation of one assignment: CPU core
//! contention (FCFS), R-parallel hardware servers, per-channel rate
//! limiters, one shared PCIe server for boundary-crossing transfers, and
//! finite FIFO buffers with producer backpressure.
//!
//! Firing protocol: a firing consumes its input tokens and reserves output
//! buffer space when it starts; when it ends, each output batch
//! (prod_rate tokens, prod_rate * token_bytes bytes) travels through the
//! channel's limiter (if capped), then the PCIe server (if crossing), and
//! only then becomes visible to the consumer. Everything is deterministic:
//! ties are broken by (time, event kind, entity, sequence number).

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::evaluate::{self, EvalCore, EvalError, UtilizationEntry};
use crate::model::{Assignment, ProblemSpec};
use crate::rates;
use crate::Evaluation;

pub const DEFAULT_BUFFER_TOKENS: u64 = 64;
pub const DEFAULT_COMPARE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, Copy)]
pub struct JitterCfg {
    /// Relative half-width: service times scale by 1 + amplitude*(u - 0.5).
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// Virtual seconds simulated.
    pub duration: f64,
    /// Leading interval excluded from every measurement.
    pub warmup: f64,
    /// Per-channel FIFO capacity.
    pub buffer_tokens: u64,
    pub trace: bool,
    /// Deterministic service-time perturbation; off by default and excluded
    /// from acceptance runs.
    pub jitter: Option<JitterCfg>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 10.0,
            warmup: 1.0,
            buffer_tokens: DEFAULT_BUFFER_TOKENS,
            trace: false,
            jitter: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelStats {
    pub channel: String,
    pub produced: u64,
    pub consumed: u64,
    pub final_occupancy: u64,
    pub mean_occupancy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub event_kind: String,
    pub entity_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Sink firings per second over (duration - warmup), divided by q_sink.
    pub measured_throughput: f64,
    pub sink_firings: u64,
    pub event_count: u64,
    pub utilization: Vec<UtilizationEntry>,
    pub channels: Vec<ChannelStats>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("deadlock at t={time}: no event can make progress\n{}", waits.join("\n"))]
    Deadlock { time: f64, waits: Vec<String> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

// ---------------------------------------------------------------------------
// Comparison against the analytic model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub lambda: f64,
    pub measured: f64,
    pub relative_error: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

pub fn compare(e: &Evaluation, r: &SimReport) -> Result<Comparison, SimError> {
    compare_with(e, r, DEFAULT_COMPARE_THRESHOLD)
}

pub fn compare_with(e: &Evaluation, r: &SimReport, threshold: f64) -> Result<Comparison, SimError> {
    let lambda = e
        .lambda
        .ok_or_else(|| SimError::Precondition("evaluation has no finite lambda".into()))?;
    if lambda <= 0.0 {
        return Err(SimError::Precondition(
            "lambda is zero; relative error is undefined".into(),
        ));
    }
    let relative_error = (r.measured_throughput - lambda).abs() / lambda;
    Ok(Comparison {
        lambda,
        measured: r.measured_throughput,
        relative_error,
        threshold,
        verdict: if relative_error <= threshold {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    })
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    FireEnd,
    LimiterDone,
    PcieDone,
}

fn ev_rank(e: Ev) -> u8 {
    match e {
        Ev::FireEnd => 0,
        Ev::LimiterDone => 1,
        Ev::PcieDone => 2,
    }
}

/// Heap key; times are nonnegative finite, so bit order equals value order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct HeapEv {
    t_bits: u64,
    rank: u8,
    entity: u32,
    seq: u64,
    ev: Ev,
}

struct ProcState {
    sw: bool,
    /// Concurrent firings allowed: 1 for software, R for hardware.
    limit: u32,
    in_flight: u32,
    service: f64,
    ins: Vec<usize>,
    outs: Vec<usize>,
    /// Ready time while waiting in the core queue (software only).
    queued: Option<f64>,
    firings: u64,
}

struct ChanState {
    prod: u64,
    cons: u64,
    bytes: f64,
    occ: u64,
    reserved: u64,
    cap: u64,
    /// Effective limiter rate in bytes/second, None when uncapped.
    limit_rate: Option<f64>,
    crossing: bool,
    limiter_busy: bool,
    limiter_queue: u64,
    produced: u64,
    consumed: u64,
    occ_integral: f64,
    busy_integral: f64,
    window_bytes: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Sim<'a> {
    cfg: SimConfig,
    procs: Vec<ProcState>,
    chans: Vec<ChanState>,
    ids: &'a [String],
    chan_ids: &'a [String],
    sink: usize,
    cores: u64,
    cores_busy: u64,
    core_queue: std::collections::BTreeSet<(u64, usize)>,
    pcie_rate: Option<f64>,
    pcie_busy: bool,
    pcie_queue: VecDeque<usize>,
    heap: std::collections::BinaryHeap<std::cmp::Reverse<HeapEv>>,
    seq: u64,
    now: f64,
    metered_to: f64,
    cpu_integral: f64,
    pcie_integral: f64,
    pcie_window_bytes: f64,
    sink_firings: u64,
    event_count: u64,
    fire_seq: u64,
    trace: Vec<TraceRow>,
}

impl Sim<'_> {
    fn window_overlap(&self, from: f64, to: f64) -> f64 {
        let lo = from.max(self.cfg.warmup);
        let hi = to.min(self.cfg.duration);
        (hi - lo).max(0.0)
    }

    /// Integrate all piecewise-constant meters up to `t`.
    fn advance(&mut self, t: f64) {
        let dt = self.window_overlap(self.metered_to, t);
        if dt > 0.0 {
            self.cpu_integral += self.cores_busy as f64 * dt;
            if self.pcie_busy {
                self.pcie_integral += dt;
            }
            for c in &mut self.chans {
                c.occ_integral += c.occ as f64 * dt;
                if c.limiter_busy {
                    c.busy_integral += dt;
                }
            }
        }
        self.metered_to = t;
        self.now = t;
    }

    fn in_window(&self) -> bool {
        self.now > self.cfg.warmup && self.now <= self.cfg.duration
    }

    fn push_event(&mut self, t: f64, ev: Ev, entity: usize) {
        self.seq += 1;
        self.heap.push(std::cmp::Reverse(HeapEv {
            t_bits: t.to_bits(),
            rank: ev_rank(ev),
            entity: entity as u32,
            seq: self.seq,
            ev,
        }));
    }

    fn trace_row(&mut self, kind: &str, entity: String, detail: String) {
        if self.cfg.trace {
            self.trace.push(TraceRow {
                time: self.now,
                event_kind: kind.to_string(),
                entity_id: entity,
                detail,
            });
        }
    }

    /// Inputs present and output space (counting in-flight reservations)
    /// available. Core availability is checked separately.
    fn can_fire(&self, i: usize) -> bool {
        let p = &self.procs[i];
        if p.in_flight >= p.limit {
            return false;
        }
        p.ins
            .iter()
            .all(|&c| self.chans[c].occ >= self.chans[c].cons)
            && p.outs.iter().all(|&c| {
                self.chans[c].occ + self.chans[c].reserved + self.chans[c].prod <= self.chans[c].cap
            })
    }

    fn service_time(&mut self, i: usize) -> f64 {
        let base = self.procs[i].service;
        match self.cfg.jitter {
            None => base,
            Some(j) => {
                self.fire_seq += 1;
                let h = splitmix64(j.seed ^ splitmix64(i as u64) ^ self.fire_seq);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                (base * (1.0 + j.amplitude * (u - 0.5))).max(0.0)
            }
        }
    }

    fn start_firing(&mut self, i: usize) {
        for k in 0..self.procs[i].ins.len() {
            let c = self.procs[i].ins[k];
            self.chans[c].occ -= self.chans[c].cons;
            self.chans[c].consumed += self.chans[c].cons;
        }
        for k in 0..self.procs[i].outs.len() {
            let c = self.procs[i].outs[k];
            self.chans[c].reserved += self.chans[c].prod;
        }
        self.procs[i].in_flight += 1;
        let svc = self.service_time(i);
        let t = self.now + svc;
        self.push_event(t, Ev::FireEnd, i);
        self.trace_row(
            "fire_start",
            self.ids[i].clone(),
            if self.procs[i].sw { "sw" } else { "hw" }.to_string(),
        );
    }

    /// Run starts to fixpoint: hardware fires immediately, software joins
    /// the FCFS core queue and is granted cores in (ready time, id) order.
    fn schedule(&mut self) {
        loop {
            let mut progress = false;
            for i in 0..self.procs.len() {
                if !self.procs[i].sw && self.can_fire(i) {
                    self.start_firing(i);
                    progress = true;
                }
            }
            for i in 0..self.procs.len() {
                if self.procs[i].sw && self.procs[i].queued.is_none() && self.can_fire(i) {
                    self.procs[i].queued = Some(self.now);
                    self.core_queue.insert((self.now.to_bits(), i));
                    progress = true;
                }
            }
            while self.cores_busy < self.cores {
                let Some(&(t_bits, i)) = self.core_queue.iter().next() else {
                    break;
                };
                self.core_queue.remove(&(t_bits, i));
                self.procs[i].queued = None;
                debug_assert!(self.can_fire(i), "eligibility is monotone while queued");
                self.cores_busy += 1;
                self.start_firing(i);
                progress = true;
            }
            if !progress {
                break;
            }
        }
    }

    /// A produced batch becomes visible to the consumer.
    fn arrive(&mut self, c: usize) {
        let prod = self.chans[c].prod;
        self.chans[c].reserved -= prod;
        self.chans[c].occ += prod;
        self.chans[c].produced += prod;
        if self.in_window() {
            self.chans[c].window_bytes += self.chans[c].bytes;
            if self.chans[c].crossing {
                self.pcie_window_bytes += self.chans[c].bytes;
            }
        }
        self.trace_row("arrive", self.chan_ids[c].clone(), format!("{prod} tokens"));
    }

    /// Post-limiter routing: crossing batches serialize on the PCIe server.
    fn after_limiter(&mut self, c: usize) {
        if self.chans[c].crossing {
            if let Some(rate) = self.pcie_rate {
                if self.pcie_busy {
                    self.pcie_queue.push_back(c);
                } else {
                    self.pcie_busy = true;
                    let t = self.now + self.chans[c].bytes / rate;
                    self.push_event(t, Ev::PcieDone, c);
                }
                return;
            }
        }
        self.arrive(c);
    }

    fn dispatch_batch(&mut self, c: usize) {
        match self.chans[c].limit_rate {
            Some(rate) => {
                if self.chans[c].limiter_busy {
                    self.chans[c].limiter_queue += 1;
                } else {
                    self.chans[c].limiter_busy = true;
                    let t = self.now + self.chans[c].bytes / rate;
                    self.push_event(t, Ev::LimiterDone, c);
                }
            }
            None => self.after_limiter(c),
        }
    }

    fn handle(&mut self, ev: Ev, entity: usize) {
        match ev {
            Ev::FireEnd => {
                let i = entity;
                self.procs[i].in_flight -= 1;
                self.procs[i].firings += 1;
                if self.procs[i].sw {
                    self.cores_busy -= 1;
                }
                if i == self.sink && self.in_window() {
                    self.sink_firings += 1;
                }
                self.trace_row("fire_end", self.ids[i].clone(), String::new());
                for k in 0..self.procs[i].outs.len() {
                    let c = self.procs[i].outs[k];
                    self.dispatch_batch(c);
                }
            }
            Ev::LimiterDone => {
                let c = entity;
                if self.chans[c].limiter_queue > 0 {
                    self.chans[c].limiter_queue -= 1;
                    let rate = self.chans[c].limit_rate.expect("limiter exists");
                    let t = self.now + self.chans[c].bytes / rate;
                    self.push_event(t, Ev::LimiterDone, c);
                } else {
                    self.chans[c].limiter_busy = false;
                }
                self.after_limiter(c);
            }
            Ev::PcieDone => {
                let c = entity;
                match self.pcie_queue.pop_front() {
                    Some(next) => {
                        let rate = self.pcie_rate.expect("pcie server exists");
                        let t = self.now + self.chans[next].bytes / rate;
                        self.push_event(t, Ev::PcieDone, next);
                    }
                    None => self.pcie_busy = false,
                }
                self.arrive(c);
            }
        }
    }

    fn wait_report(&self) -> Vec<String> {
        let mut waits = Vec::new();
        for (i, p) in self.procs.iter().enumerate() {
            if p.in_flight > 0 {
                continue;
            }
            let id = &self.ids[i];
            if let Some(&c) = p
                .ins
                .iter()
                .find(|&&c| self.chans[c].occ < self.chans[c].cons)
            {
                waits.push(format!(
                    "{id}: waiting for {} tokens on {} (has {})",
                    self.chans[c].cons, self.chan_ids[c], self.chans[c].occ
                ));
                continue;
            }
            if let Some(&c) = p.outs.iter().find(|&&c| {
                self.chans[c].occ + self.chans[c].reserved + self.chans[c].prod > self.chans[c].cap
            }) {
                waits.push(format!(
                    "{id}: waiting for space on {} (occupancy {}, reserved {})",
                    self.chan_ids[c], self.chans[c].occ, self.chans[c].reserved
                ));
                continue;
            }
            if p.sw {
                waits.push(format!("{id}: waiting for a cpu core"));
            }
        }
        waits
    }
}

pub fn simulate(p: &ProblemSpec, a: &Assignment, cfg: SimConfig) -> Result<SimReport, SimError> {
    let pre = |msg: String| Err(SimError::Precondition(msg));
    if !(cfg.warmup >= 0.0 && cfg.warmup < cfg.duration) {
        return pre(format!(
            "need 0 <= warmup < duration, got warmup {} and duration {}",
            cfg.warmup, cfg.duration
        ));
    }
    for c in &p.channels {
        if cfg.buffer_tokens < c.prod_rate.max(c.cons_rate) {
            return pre(format!(
                "buffer_tokens {} is below the rate {} of channel {:?}",
                cfg.buffer_tokens,
                c.prod_rate.max(c.cons_rate),
                c.id
            ));
        }
    }

    let evaluation = evaluate::evaluate(p, a)?;
    if !evaluation.feasible {
        return pre(format!(
            "assignment is infeasible: FPGA capacity exceeded for {}",
            evaluation.overfull_resources.join(", ")
        ));
    }

    let rv = rates::repetition_vector(p).map_err(EvalError::from)?;
    let core = EvalCore::<f64>::new(p, &rv)?;
    let codes = core.codes(p, a)?;

    if !p.platform.cpu_cores.is_integer() {
        return pre(format!(
            "simulation needs an integer number of cpu cores, got {}",
            p.platform.cpu_cores
        ));
    }
    let cores = p.platform.cpu_cores.num();

    let procs: Vec<ProcState> = (0..core.n())
        .map(|i| {
            let sw = codes[i] == 0;
            let service = if sw {
                match p.processes[i].sw_throughput.finite() {
                    Some(r) => 1.0 / <f64 as crate::scalar::Scalar>::from_ratio(r),
                    None => 0.0,
                }
            } else {
                // R servers whose aggregate equals the profiled throughput
                let r = codes[i];
                let hw = p.processes[i].hw_profile.as_ref().expect("hw code");
                let total = <f64 as crate::scalar::Scalar>::from_ratio(&hw.throughput_at(r));
                r as f64 / total
            };
            ProcState {
                sw,
                limit: if sw { 1 } else { codes[i] },
                in_flight: 0,
                service,
                ins: (0..core.chan_ids.len())
                    .filter(|&c| core.chan_v[c] == i)
                    .collect(),
                outs: (0..core.chan_ids.len())
                    .filter(|&c| core.chan_u[c] == i)
                    .collect(),
                queued: None,
                firings: 0,
            }
        })
        .collect();

    let chans: Vec<ChanState> = (0..core.chan_ids.len())
        .map(|c| {
            let spec = &p.channels[c];
            let scale = core.channel_scale(&codes, c);
            ChanState {
                prod: spec.prod_rate,
                cons: spec.cons_rate,
                bytes: spec.prod_rate as f64 * spec.token_bytes as f64,
                occ: 0,
                reserved: 0,
                cap: cfg.buffer_tokens,
                limit_rate: core.chan_bw[c].map(|bw| bw * scale as f64),
                crossing: (codes[core.chan_u[c]] == 0) != (codes[core.chan_v[c]] == 0),
                limiter_busy: false,
                limiter_queue: 0,
                produced: 0,
                consumed: 0,
                occ_integral: 0.0,
                busy_integral: 0.0,
                window_bytes: 0.0,
            }
        })
        .collect();

    let mut sim = Sim {
        cfg,
        procs,
        chans,
        ids: &core.ids,
        chan_ids: &core.chan_ids,
        sink: core.sink,
        cores,
        cores_busy: 0,
        core_queue: std::collections::BTreeSet::new(),
        pcie_rate: core.pcie,
        pcie_busy: false,
        pcie_queue: VecDeque::new(),
        heap: std::collections::BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        metered_to: 0.0,
        cpu_integral: 0.0,
        pcie_integral: 0.0,
        pcie_window_bytes: 0.0,
        sink_firings: 0,
        event_count: 0,
        fire_seq: 0,
        trace: Vec::new(),
    };

    sim.schedule();
    while let Some(&std::cmp::Reverse(top)) = sim.heap.peek() {
        let t = f64::from_bits(top.t_bits);
        if t > sim.cfg.duration {
            break;
        }
        sim.heap.pop();
        sim.event_count += 1;
        sim.advance(t);
        sim.handle(top.ev, top.entity as usize);
        sim.schedule();
    }
    if sim.heap.is_empty() && sim.now < sim.cfg.duration {
        return Err(SimError::Deadlock {
            time: sim.now,
            waits: sim.wait_report(),
        });
    }
    sim.advance(sim.cfg.duration);

    let window = sim.cfg.duration - sim.cfg.warmup;
    let q_sink = core.q[core.sink] as f64;
    let measured_throughput = sim.sink_firings as f64 / window / q_sink;

    let mut utilization = Vec::new();
    utilization.push(UtilizationEntry {
        budget: "cpu".into(),
        used: sim.cpu_integral / window,
        capacity: Some(cores as f64),
        fraction: if cores > 0 {
            sim.cpu_integral / window / cores as f64
        } else {
            0.0
        },
    });
    utilization.push(UtilizationEntry {
        budget: "pcie".into(),
        used: sim.pcie_window_bytes / window,
        capacity: sim.pcie_rate,
        fraction: if sim.pcie_rate.is_some() {
            sim.pcie_integral / window
        } else {
            0.0
        },
    });
    utilization.extend(
        evaluation
            .utilization
            .iter()
            .filter(|u| u.budget.starts_with("fpga:"))
            .cloned(),
    );
    for (c, chan) in sim.chans.iter().enumerate() {
        utilization.push(UtilizationEntry {
            budget: format!("channel:{}", core.chan_ids[c]),
            used: chan.window_bytes / window,
            capacity: chan.limit_rate,
            fraction: if chan.limit_rate.is_some() {
                chan.busy_integral / window
            } else {
                0.0
            },
        });
    }

    let channels = sim
        .chans
        .iter()
        .enumerate()
        .map(|(c, chan)| ChannelStats {
            channel: core.chan_ids[c].clone(),
            produced: chan.produced,
            consumed: chan.consumed,
            final_occupancy: chan.occ,
            mean_occupancy: chan.occ_integral / window,
        })
        .collect();

    Ok(SimReport {
        measured_throughput,
        sink_firings: sim.sink_firings,
        event_count: sim.event_count,
        utilization,
        channels,
        trace: sim.trace,
    })
}

/// Report files end with a newline.
pub fn serialize_report(r: &SimReport) -> String {
    let mut out = serde_json::to_string_pretty(r).expect("report serializes");
    out.push('\n');
    out
}
