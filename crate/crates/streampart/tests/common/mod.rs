//! Shared fixtures for the integration suites: a seeded random instance
//! generator and the serialization corpus.
//!
//! Instances are built q-first: firing counts are drawn, then channel rates
//! are derived as prod = q_consumer/g, cons = q_producer/g, so every graph
//! is rate-consistent by construction. Topology is a chain plus forward
//! extras, hence acyclic and weakly connected.

#![allow(dead_code)] // each test binary uses its own subset

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use streampart::model::{
    Assignment, ChannelSpec, HwProfile, Limit, Placement, PlacementChoice, PlatformSpec,
    ProblemSpec, ProcessSpec, Rational,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub struct GenCfg {
    pub free: (usize, usize),
    pub pin_sw: (usize, usize),
    pub pin_hw: (usize, usize),
    /// Finite software throughput range (firings/s).
    pub sw: (u64, u64),
    /// Single-replica hardware throughput range (firings/s).
    pub hw_base: (u64, u64),
    pub r_max_hi: u32,
    pub max_q: u64,
    pub table_prob: f64,
    pub finite_bw_prob: f64,
    pub finite_pcie_prob: f64,
    pub extra_edge_prob: f64,
    pub cores_hi: u64,
}

impl GenCfg {
    /// Search-shaped instances: 3-7 free processes, r_max <= 4, mixed pins.
    pub fn search() -> Self {
        GenCfg {
            free: (3, 7),
            pin_sw: (0, 2),
            pin_hw: (0, 1),
            sw: (20, 200),
            hw_base: (50, 400),
            r_max_hi: 4,
            max_q: 3,
            table_prob: 0.25,
            finite_bw_prob: 0.2,
            finite_pcie_prob: 0.5,
            extra_edge_prob: 0.15,
            cores_hi: 8,
        }
    }

    /// Small, slow instances whose simulations stay cheap.
    pub fn sim() -> Self {
        GenCfg {
            free: (1, 3),
            pin_sw: (1, 2),
            pin_hw: (0, 1),
            sw: (5, 40),
            hw_base: (10, 80),
            r_max_hi: 3,
            max_q: 2,
            table_prob: 0.0,
            finite_bw_prob: 0.15,
            finite_pcie_prob: 0.4,
            extra_edge_prob: 0.1,
            cores_hi: 4,
        }
    }

    /// Exactly one placeable process surrounded by pinned software.
    pub fn single_kernel() -> Self {
        GenCfg {
            free: (1, 1),
            pin_sw: (1, 3),
            pin_hw: (0, 0),
            sw: (20, 200),
            hw_base: (50, 400),
            r_max_hi: 4,
            max_q: 3,
            table_prob: 0.3,
            finite_bw_prob: 0.2,
            finite_pcie_prob: 0.5,
            extra_edge_prob: 0.15,
            cores_hi: 8,
        }
    }
}

fn gen_hw_profile(cfg: &GenCfg, rng: &mut ChaCha8Rng, two_kinds: bool, gentle: bool) -> HwProfile {
    let base = rng.gen_range(cfg.hw_base.0..=cfg.hw_base.1);
    let r_max = rng.gen_range(1..=cfg.r_max_hi);
    let mut per = BTreeMap::new();
    let lut_range = if gentle {
        2_000..=8_000
    } else {
        2_000..=25_000
    };
    per.insert("lut".to_string(), rng.gen_range(lut_range));
    if two_kinds && rng.gen_bool(0.6) {
        per.insert("dsp".to_string(), rng.gen_range(500..=4_000));
    }
    let mut fixed = BTreeMap::new();
    if rng.gen_bool(0.3) {
        fixed.insert("lut".to_string(), rng.gen_range(500..=4_000));
    }
    let throughput_table = if rng.gen_bool(cfg.table_prob) {
        let mut t = base;
        let mut table = vec![Rational::integer(t)];
        for _ in 1..r_max {
            t += rng.gen_range(0..=base);
            table.push(Rational::integer(t));
        }
        Some(table)
    } else {
        None
    };
    HwProfile {
        base_throughput: Rational::integer(base),
        resource_fixed: fixed,
        resource_per_replica: per,
        r_max,
        throughput_table,
    }
}

pub fn gen_problem(cfg: &GenCfg, rng: &mut ChaCha8Rng) -> ProblemSpec {
    let n_free = rng.gen_range(cfg.free.0..=cfg.free.1);
    let n_pin_sw = rng.gen_range(cfg.pin_sw.0..=cfg.pin_sw.1);
    let n_pin_hw = rng.gen_range(cfg.pin_hw.0..=cfg.pin_hw.1);
    let n = n_free + n_pin_sw + n_pin_hw;

    let mut roles = Vec::new();
    roles.extend(std::iter::repeat(Placement::Free).take(n_free));
    roles.extend(std::iter::repeat(Placement::PinnedSw).take(n_pin_sw));
    roles.extend(std::iter::repeat(Placement::PinnedHw).take(n_pin_hw));
    roles.shuffle(rng);

    let two_kinds = rng.gen_bool(0.3);
    let q: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=cfg.max_q)).collect();

    let processes: Vec<ProcessSpec> = roles
        .iter()
        .enumerate()
        .map(|(i, &placement)| {
            let hw_profile = match placement {
                Placement::PinnedSw => None,
                Placement::PinnedHw => Some(gen_hw_profile(cfg, rng, two_kinds, true)),
                Placement::Free => Some(gen_hw_profile(cfg, rng, two_kinds, false)),
            };
            ProcessSpec {
                id: format!("p{i}"),
                placement,
                sw_throughput: Limit::Finite(Rational::integer(rng.gen_range(cfg.sw.0..=cfg.sw.1))),
                hw_profile,
            }
        })
        .collect();

    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    let mut extras = 0;
    for i in 0..n.saturating_sub(2) {
        for j in i + 2..n {
            if extras < 3 && rng.gen_bool(cfg.extra_edge_prob) {
                edges.push((i, j));
                extras += 1;
            }
        }
    }

    let lambda_hint = cfg.sw.1 * 2;
    let mut total_volume: u64 = 0;
    let channels: Vec<ChannelSpec> = edges
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| {
            let g = gcd(q[u], q[v]);
            let prod = q[v] / g;
            let cons = q[u] / g;
            let token_bytes = *[16u64, 64, 256, 1024].choose(rng).unwrap();
            let volume = q[u] * prod * token_bytes;
            total_volume += volume;
            let bandwidth_cap = if rng.gen_bool(cfg.finite_bw_prob) {
                let allow = rng.gen_range(cfg.sw.0..=lambda_hint);
                Limit::Finite(Rational::integer(volume * allow))
            } else {
                Limit::Unbounded
            };
            ChannelSpec {
                id: format!("c{k}"),
                producer: format!("p{u}"),
                consumer: format!("p{v}"),
                prod_rate: prod,
                cons_rate: cons,
                token_bytes,
                bandwidth_cap,
                scale_with_replication: rng.gen_bool(0.5),
            }
        })
        .collect();

    let mut fpga_capacity = BTreeMap::new();
    fpga_capacity.insert("lut".to_string(), rng.gen_range(20_000..=100_000u64));
    let mut resource_kinds = vec!["lut".to_string()];
    if two_kinds {
        resource_kinds.push("dsp".to_string());
        fpga_capacity.insert("dsp".to_string(), rng.gen_range(5_000..=40_000u64));
    }
    let pcie_bandwidth = if rng.gen_bool(cfg.finite_pcie_prob) {
        let allow = rng.gen_range(cfg.sw.0..=lambda_hint);
        Limit::Finite(Rational::integer(total_volume.max(1) * allow))
    } else {
        Limit::Unbounded
    };

    ProblemSpec {
        platform: PlatformSpec {
            cpu_cores: Rational::integer(rng.gen_range(1..=cfg.cores_hi)),
            resource_kinds,
            fpga_capacity,
            pcie_bandwidth,
        },
        processes,
        channels,
        sink: format!("p{}", n - 1),
        comment: None,
    }
}

/// Pin-respecting complete assignment, hardware taken with probability 1/2.
pub fn random_assignment(p: &ProblemSpec, rng: &mut ChaCha8Rng) -> Assignment {
    let mut a = Assignment::default();
    for proc in &p.processes {
        let choice = match proc.placement {
            Placement::PinnedSw => PlacementChoice::Sw,
            Placement::PinnedHw => {
                let r_max = proc.hw_profile.as_ref().map(|h| h.r_max).unwrap_or(1);
                PlacementChoice::Hw(rng.gen_range(1..=r_max))
            }
            Placement::Free => match &proc.hw_profile {
                Some(h) if rng.gen_bool(0.5) => PlacementChoice::Hw(rng.gen_range(1..=h.r_max)),
                _ => PlacementChoice::Sw,
            },
        };
        a.set(proc.id.clone(), choice);
    }
    a
}

/// Keep roughly half the entries of a complete assignment.
pub fn random_partial(a: &Assignment, rng: &mut ChaCha8Rng) -> Assignment {
    a.iter()
        .filter(|_| rng.gen_bool(0.5))
        .map(|(id, c)| (id.clone(), *c))
        .collect()
}

/// Instance plus assignment that evaluates feasibly.
pub fn feasible_pair(
    cfg: &GenCfg,
    rng: &mut ChaCha8Rng,
) -> (ProblemSpec, Assignment, streampart::Evaluation) {
    for _ in 0..1000 {
        let p = gen_problem(cfg, rng);
        let a = random_assignment(&p, rng);
        if let Ok(e) = streampart::evaluate(&p, &a) {
            if e.feasible {
                return (p, a, e);
            }
        }
    }
    panic!("no feasible (instance, assignment) pair in 1000 draws");
}

/// Multiply every rate-like parameter by k: software and hardware
/// throughputs, throughput tables, channel bandwidths, PCIe bandwidth.
/// Budgets (cores, FPGA capacity) and token rates stay fixed.
pub fn scale_rates(p: &ProblemSpec, k: u64) -> ProblemSpec {
    let scale = |r: &Rational| Rational::new(r.num() * k, r.den()).unwrap();
    let scale_limit = |l: &Limit| match l.finite() {
        Some(r) => Limit::Finite(scale(r)),
        None => Limit::Unbounded,
    };
    let mut out = p.clone();
    out.platform.pcie_bandwidth = scale_limit(&p.platform.pcie_bandwidth);
    for proc in &mut out.processes {
        proc.sw_throughput = scale_limit(&proc.sw_throughput);
        if let Some(h) = &mut proc.hw_profile {
            h.base_throughput = scale(&h.base_throughput);
            if let Some(t) = &mut h.throughput_table {
                for v in t.iter_mut() {
                    *v = scale(v);
                }
            }
        }
    }
    for c in &mut out.channels {
        c.bandwidth_cap = scale_limit(&c.bandwidth_cap);
    }
    out
}

// ---------------------------------------------------------------------------
// Serialization corpus
// ---------------------------------------------------------------------------

/// Twenty problem texts: handwritten edge cases covering every optional
/// field and both "unbounded" sentinels, padded with generated instances.
pub fn corpus() -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = HANDWRITTEN
        .iter()
        .map(|(name, text)| (name.to_string(), text.to_string()))
        .collect();
    let mut r = rng(0xC0_5B_05);
    let mut i = 0;
    while files.len() < 20 {
        let cfg = if i % 3 == 0 {
            GenCfg::sim()
        } else {
            GenCfg::search()
        };
        let p = gen_problem(&cfg, &mut r);
        files.push((
            format!("generated_{i:02}.json"),
            streampart::model::serialize_problem(&p),
        ));
        i += 1;
    }
    files
}

const HANDWRITTEN: &[(&str, &str)] = &[
    (
        "minimal.json",
        r#"{
  "platform": {"cpu_cores": 2, "resource_kinds": ["lut"],
               "fpga_capacity": {"lut": 10000}, "pcie_bandwidth": "unbounded"},
  "processes": [
    {"id": "a", "placement": "pinned_sw", "sw_throughput": 100},
    {"id": "b", "placement": "pinned_sw", "sw_throughput": 50}
  ],
  "channels": [
    {"id": "c0", "producer": "a", "consumer": "b",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 8}
  ],
  "sink": "b"
}
"#,
    ),
    (
        "unbounded_source.json",
        r#"{
  "platform": {"cpu_cores": 4, "resource_kinds": ["lut"],
               "fpga_capacity": {"lut": 80000}, "pcie_bandwidth": 5000000},
  "processes": [
    {"id": "reader", "placement": "pinned_sw", "sw_throughput": "unbounded"},
    {"id": "kernel", "sw_throughput": 120,
     "hw_profile": {"base_throughput": 300,
                    "resource_per_replica": {"lut": 15000}, "r_max": 4}},
    {"id": "writer", "placement": "pinned_sw", "sw_throughput": 900}
  ],
  "channels": [
    {"id": "in", "producer": "reader", "consumer": "kernel",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 512},
    {"id": "out", "producer": "kernel", "consumer": "writer",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 512}
  ],
  "sink": "writer"
}
"#,
    ),
    (
        "every_optional_field.json",
        r#"{
  "platform": {"cpu_cores": {"num": 7, "den": 2}, "resource_kinds": ["lut", "dsp"],
               "fpga_capacity": {"lut": 60000, "dsp": 2000}, "pcie_bandwidth": 8000000},
  "processes": [
    {"id": "src", "placement": "pinned_sw", "sw_throughput": "unbounded"},
    {"id": "fir", "placement": "free", "sw_throughput": {"num": 175, "den": 2},
     "hw_profile": {"base_throughput": {"num": 425, "den": 2},
                    "resource_fixed": {"lut": 1200, "dsp": 16},
                    "resource_per_replica": {"lut": 9000, "dsp": 64},
                    "r_max": 3,
                    "throughput_table": [200, {"num": 805, "den": 2}, 590]}},
    {"id": "agg", "placement": "pinned_hw", "sw_throughput": 40,
     "hw_profile": {"base_throughput": 150,
                    "resource_per_replica": {"lut": 4000}, "r_max": 2}},
    {"id": "log", "sw_throughput": 500}
  ],
  "channels": [
    {"id": "c0", "producer": "src", "consumer": "fir",
     "prod_rate": 2, "cons_rate": 1, "token_bytes": 64,
     "bandwidth_cap": 40000000, "scale_with_replication": false},
    {"id": "c1", "producer": "fir", "consumer": "agg",
     "prod_rate": 3, "cons_rate": 2, "token_bytes": 128,
     "bandwidth_cap": "unbounded"},
    {"id": "c2", "producer": "agg", "consumer": "log",
     "prod_rate": 1, "cons_rate": 3, "token_bytes": 16}
  ],
  "sink": "log",
  "comment": "exercises every optional field in one file"
}
"#,
    ),
    (
        "defaults_omitted.json",
        r#"{
  "platform": {"cpu_cores": 1, "resource_kinds": ["lut"],
               "fpga_capacity": {"lut": 5000}, "pcie_bandwidth": "unbounded"},
  "processes": [
    {"id": "only", "sw_throughput": 10,
     "hw_profile": {"base_throughput": 25, "resource_per_replica": {"lut": 100}, "r_max": 2}}
  ],
  "channels": [],
  "sink": "only"
}
"#,
    ),
    (
        "multirate_diamond.json",
        r#"{
  "platform": {"cpu_cores": 8, "resource_kinds": ["lut"],
               "fpga_capacity": {"lut": 90000}, "pcie_bandwidth": "unbounded"},
  "processes": [
    {"id": "split", "placement": "pinned_sw", "sw_throughput": 200},
    {"id": "left", "sw_throughput": 90,
     "hw_profile": {"base_throughput": 180, "resource_per_replica": {"lut": 20000}, "r_max": 3}},
    {"id": "right", "sw_throughput": 60,
     "hw_profile": {"base_throughput": 240, "resource_per_replica": {"lut": 30000}, "r_max": 2}},
    {"id": "join", "placement": "pinned_sw", "sw_throughput": 400}
  ],
  "channels": [
    {"id": "sl", "producer": "split", "consumer": "left",
     "prod_rate": 2, "cons_rate": 1, "token_bytes": 256},
    {"id": "sr", "producer": "split", "consumer": "right",
     "prod_rate": 3, "cons_rate": 1, "token_bytes": 64},
    {"id": "lj", "producer": "left", "consumer": "join",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 256},
    {"id": "rj", "producer": "right", "consumer": "join",
     "prod_rate": 2, "cons_rate": 3, "token_bytes": 64}
  ],
  "sink": "join"
}
"#,
    ),
    (
        "bandwidth_bound.json",
        r#"{
  "platform": {"cpu_cores": 16, "resource_kinds": ["bram"],
               "fpga_capacity": {"bram": 1000}, "pcie_bandwidth": 1000000},
  "processes": [
    {"id": "cam", "placement": "pinned_sw", "sw_throughput": "unbounded"},
    {"id": "enc", "sw_throughput": 3000,
     "hw_profile": {"base_throughput": 9000, "resource_per_replica": {"bram": 200},
                    "r_max": 4}},
    {"id": "disk", "placement": "pinned_sw", "sw_throughput": "unbounded"}
  ],
  "channels": [
    {"id": "raw", "producer": "cam", "consumer": "enc",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 4096,
     "bandwidth_cap": 2000000},
    {"id": "enc_out", "producer": "enc", "consumer": "disk",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 1024,
     "bandwidth_cap": 3000000, "scale_with_replication": true}
  ],
  "sink": "disk"
}
"#,
    ),
    (
        "fractional_everything.json",
        r#"{
  "platform": {"cpu_cores": {"num": 3, "den": 1}, "resource_kinds": ["lut"],
               "fpga_capacity": {"lut": 44000}, "pcie_bandwidth": {"num": 2500000, "den": 3}},
  "processes": [
    {"id": "gen", "placement": "pinned_sw", "sw_throughput": {"num": 1000, "den": 3}},
    {"id": "mix", "sw_throughput": {"num": 55, "den": 4},
     "hw_profile": {"base_throughput": {"num": 201, "den": 2},
                    "resource_per_replica": {"lut": 11000}, "r_max": 2,
                    "throughput_table": [{"num": 201, "den": 2}, {"num": 403, "den": 3}]}},
    {"id": "out", "placement": "pinned_sw", "sw_throughput": {"num": 500, "den": 7}}
  ],
  "channels": [
    {"id": "gm", "producer": "gen", "consumer": "mix",
     "prod_rate": 1, "cons_rate": 2, "token_bytes": 48},
    {"id": "mo", "producer": "mix", "consumer": "out",
     "prod_rate": 4, "cons_rate": 1, "token_bytes": 12}
  ],
  "sink": "out"
}
"#,
    ),
    (
        "deep_pipeline.json",
        r#"{
  "platform": {"cpu_cores": 6, "resource_kinds": ["lut", "dsp"],
               "fpga_capacity": {"lut": 120000, "dsp": 800}, "pcie_bandwidth": 12000000},
  "processes": [
    {"id": "s0", "placement": "pinned_sw", "sw_throughput": "unbounded"},
    {"id": "s1", "sw_throughput": 80,
     "hw_profile": {"base_throughput": 160, "resource_fixed": {"lut": 2000},
                    "resource_per_replica": {"lut": 18000, "dsp": 120}, "r_max": 4}},
    {"id": "s2", "sw_throughput": 140},
    {"id": "s3", "sw_throughput": 95,
     "hw_profile": {"base_throughput": 310, "resource_per_replica": {"lut": 26000, "dsp": 90},
                    "r_max": 3}},
    {"id": "s4", "placement": "pinned_hw", "sw_throughput": 30,
     "hw_profile": {"base_throughput": 220, "resource_per_replica": {"lut": 7000},
                    "r_max": 2}},
    {"id": "s5", "placement": "pinned_sw", "sw_throughput": 640}
  ],
  "channels": [
    {"id": "e0", "producer": "s0", "consumer": "s1",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 2048},
    {"id": "e1", "producer": "s1", "consumer": "s2",
     "prod_rate": 1, "cons_rate": 2, "token_bytes": 512},
    {"id": "e2", "producer": "s2", "consumer": "s3",
     "prod_rate": 1, "cons_rate": 1, "token_bytes": 512},
    {"id": "e3", "producer": "s3", "consumer": "s4",
     "prod_rate": 2, "cons_rate": 1, "token_bytes": 256},
    {"id": "e4", "producer": "s4", "consumer": "s5",
     "prod_rate": 1, "cons_rate": 4, "token_bytes": 64}
  ],
  "sink": "s5"
}
"#,
    ),
];
