//! Builders for the three-process chain instances used across unit tests.

use std::collections::BTreeMap;

use crate::model::{
    ChannelSpec, HwProfile, Limit, Placement, PlatformSpec, ProblemSpec, ProcessSpec, Rational,
};

pub(crate) fn lut_platform(cpu: (u64, u64), lut: u64, pcie: Limit) -> PlatformSpec {
    PlatformSpec {
        cpu_cores: Rational::new(cpu.0, cpu.1).unwrap(),
        resource_kinds: vec!["lut".to_string()],
        fpga_capacity: BTreeMap::from([("lut".to_string(), lut)]),
        pcie_bandwidth: pcie,
    }
}

pub(crate) fn sw_process(id: &str, throughput: Option<u64>) -> ProcessSpec {
    ProcessSpec {
        id: id.to_string(),
        placement: Placement::PinnedSw,
        sw_throughput: match throughput {
            Some(t) => Limit::Finite(Rational::integer(t)),
            None => Limit::Unbounded,
        },
        hw_profile: None,
    }
}

pub(crate) fn chan(id: &str, from: &str, to: &str, rates: (u64, u64), bytes: u64) -> ChannelSpec {
    ChannelSpec {
        id: id.to_string(),
        producer: from.to_string(),
        consumer: to.to_string(),
        prod_rate: rates.0,
        cons_rate: rates.1,
        token_bytes: bytes,
        bandwidth_cap: Limit::Unbounded,
        scale_with_replication: true,
    }
}

/// A -> B -> C, all pinned software with the given finite throughputs,
/// 1:1 rates, 1000-byte tokens, everything else unbounded.
pub(crate) fn sw_chain(throughputs: &[u64; 3], cpu: (u64, u64)) -> ProblemSpec {
    ProblemSpec {
        platform: lut_platform(cpu, 100_000, Limit::Unbounded),
        processes: vec![
            sw_process("A", Some(throughputs[0])),
            sw_process("B", Some(throughputs[1])),
            sw_process("C", Some(throughputs[2])),
        ],
        channels: vec![
            chan("c1", "A", "B", (1, 1), 1000),
            chan("c2", "B", "C", (1, 1), 1000),
        ],
        sink: "C".to_string(),
        comment: None,
    }
}

/// A -> B -> C where A and C are unbounded software stubs and B is free with
/// software throughput 100 and a linear hardware profile on `lut`.
pub(crate) fn hw_chain(base: u64, fixed_lut: u64, per_lut: u64, r_max: u32) -> ProblemSpec {
    let mut b = sw_process("B", Some(100));
    b.placement = Placement::Free;
    b.hw_profile = Some(HwProfile {
        base_throughput: Rational::integer(base),
        resource_fixed: BTreeMap::from([("lut".to_string(), fixed_lut)]),
        resource_per_replica: BTreeMap::from([("lut".to_string(), per_lut)]),
        r_max,
        throughput_table: None,
    });
    ProblemSpec {
        platform: lut_platform((4, 1), 100_000, Limit::Unbounded),
        processes: vec![sw_process("A", None), b, sw_process("C", None)],
        channels: vec![
            chan("c1", "A", "B", (1, 1), 1000),
            chan("c2", "B", "C", (1, 1), 1000),
        ],
        sink: "C".to_string(),
        comment: None,
    }
}

/// Chain with the given (prod, cons) rate pairs and unit tokens; process ids
/// P0, P1, ... with unbounded software throughput except the last (sink) at
/// 1000 so the model stays bounded.
pub(crate) fn rate_chain(rates: &[(u64, u64)]) -> ProblemSpec {
    let n = rates.len() + 1;
    let processes: Vec<ProcessSpec> = (0..n)
        .map(|i| sw_process(&format!("P{i}"), if i + 1 == n { Some(1000) } else { None }))
        .collect();
    let channels: Vec<ChannelSpec> = rates
        .iter()
        .enumerate()
        .map(|(i, &(prod, cons))| {
            chan(
                &format!("c{i}"),
                &format!("P{i}"),
                &format!("P{}", i + 1),
                (prod, cons),
                1,
            )
        })
        .collect();
    ProblemSpec {
        platform: lut_platform((4, 1), 100_000, Limit::Unbounded),
        processes,
        channels,
        sink: format!("P{}", n - 1),
        comment: None,
    }
}
