//! Closed-form steady-state throughput model.
//!
//! Given a problem and a complete assignment, the admissible iteration rate
//! lambda is the minimum over five constraint families:
//!
//! 1. each software process caps at one core: lambda <= sw_throughput / q
//! 2. software processes jointly share the CPU pool
//! 3. each hardware process caps at its replicated kernel throughput
//! 4. each channel caps at its (possibly replication-scaled) bandwidth
//! 5. channels crossing the SW/HW boundary share the PCIe budget
//!
//! FPGA resource fit is lambda-independent and decides feasibility outright.
//! The kernel is generic over [`Scalar`]; `f64` is the working instantiation
//! and `BigRational` the exact one used to cross-check the floating minimum.

use num_rational::BigRational;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Assignment, Limit, Placement, PlacementChoice, ProblemSpec, Rational};
use crate::rates::{self, RateError, RepetitionVector};
use crate::scalar::Scalar;

/// Relative tolerance within which a cap counts as binding.
pub const BINDING_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("assignment is incomplete: process {0:?} has no placement")]
    IncompleteAssignment(String),
    #[error("assignment names unknown process {0:?}")]
    UnknownProcess(String),
    #[error("pin violation for process {process:?}: {message}")]
    PinViolation { process: String, message: String },
    #[error("replication factor {r} for process {process:?} outside 1..={r_max}")]
    RmaxExceeded { process: String, r: u32, r_max: u32 },
    #[error("unbounded throughput: no finite constraint caps the iteration rate")]
    UnboundedThroughput,
    #[error("channel {0:?}: per-iteration byte volume overflows")]
    VolumeOverflow(String),
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error("internal: {0}")]
    Internal(String),
}

/// Constraint family, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    SwProcess,
    CpuAggregate,
    HwProcess,
    Channel,
    PcieAggregate,
}

impl ConstraintFamily {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintFamily::SwProcess => "sw process",
            ConstraintFamily::CpuAggregate => "cpu aggregate",
            ConstraintFamily::HwProcess => "hw process",
            ConstraintFamily::Channel => "channel",
            ConstraintFamily::PcieAggregate => "pcie aggregate",
        }
    }
}

/// One lambda-capping constraint, evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintEntry<S> {
    pub family: ConstraintFamily,
    /// Process or channel id; `"cpu"` / `"pcie"` for the aggregates.
    pub subject: String,
    pub cap: S,
    pub binding: bool,
}

/// Usage of one shared budget.
#[derive(Debug, Clone, Serialize)]
pub struct UtilizationEntry {
    pub budget: String,
    pub used: f64,
    /// None means the budget is unbounded.
    pub capacity: Option<f64>,
    pub fraction: f64,
}

/// Result of evaluating one assignment.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationOf<S> {
    pub feasible: bool,
    /// Iterations per second; absent when infeasible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<S>,
    /// Sink firings per second, q_sink * lambda.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sink_rate: Option<S>,
    /// Binding caps: constraints achieving lambda within tolerance.
    pub binding_constraints: Vec<ConstraintEntry<S>>,
    /// Every finite cap, sorted by (family, subject).
    pub constraints: Vec<ConstraintEntry<S>>,
    pub utilization: Vec<UtilizationEntry>,
    /// Resource kinds whose capacity the assignment exceeds.
    pub overfull_resources: Vec<String>,
}

impl<S: Scalar> EvaluationOf<S> {
    pub fn lambda_f64(&self) -> Option<f64> {
        self.lambda.as_ref().map(Scalar::approx)
    }
}

// ---------------------------------------------------------------------------
// Indexed evaluation core
// ---------------------------------------------------------------------------

/// Decision code per process: 0 is software, r > 0 is hardware with
/// replication factor r.
pub(crate) type Code = u32;

/// Partial-assignment knowledge about one process, used by bound math.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NodeState {
    Sw,
    Hw(u32),
    /// Pinned to hardware, replication factor still open.
    HwAnyR,
    /// Free process, nothing decided.
    Undecided,
}

pub(crate) enum Outcome<S> {
    Infeasible,
    Unbounded,
    Capped(S),
}

/// Problem indexed for repeated evaluation: ids resolved to dense indices,
/// all rates pre-divided by the repetition vector.
pub(crate) struct EvalCore<S> {
    pub ids: Vec<String>,
    pub chan_ids: Vec<String>,
    pub q: Vec<u64>,
    pub sink: usize,
    /// sw_throughput / q; None when unbounded.
    pub sw_cap: Vec<Option<S>>,
    /// q / sw_throughput core-seconds per iteration; None when unbounded.
    pub cpu_weight: Vec<Option<S>>,
    /// Per process, per replication factor (index r-1): throughput(r) / q.
    pub hw_cap: Vec<Vec<S>>,
    pub can_sw: Vec<bool>,
    pub can_hw: Vec<bool>,
    pub pinned_hw: Vec<bool>,
    pub r_max: Vec<u32>,
    pub cpu_cores: S,
    pub kinds: Vec<String>,
    pub capacity: Vec<u64>,
    /// Per process, per kind; empty inner vec when the process has no profile.
    pub res_fixed: Vec<Vec<u64>>,
    pub res_per: Vec<Vec<u64>>,
    pub chan_u: Vec<usize>,
    pub chan_v: Vec<usize>,
    /// Bytes per iteration: q_u * prod_rate * token_bytes.
    pub chan_coeff: Vec<u128>,
    pub chan_coeff_s: Vec<S>,
    pub chan_bw: Vec<Option<S>>,
    pub chan_scale: Vec<bool>,
    pub pcie: Option<S>,
}

fn limit_scalar<S: Scalar>(l: &Limit) -> Option<S> {
    l.finite().map(S::from_ratio)
}

fn ratio_div_q<S: Scalar>(r: &Rational, q: u64) -> S {
    S::from_ratio(r) / S::from_u64(q).expect("u64 fits scalar")
}

impl<S: Scalar> EvalCore<S> {
    pub fn new(p: &ProblemSpec, rv: &RepetitionVector) -> Result<Self, EvalError> {
        let n = p.processes.len();
        let kinds: Vec<String> = p.platform.resource_kinds.clone();
        let mut core = EvalCore {
            ids: p.processes.iter().map(|x| x.id.clone()).collect(),
            chan_ids: p.channels.iter().map(|c| c.id.clone()).collect(),
            q: Vec::with_capacity(n),
            sink: 0,
            sw_cap: Vec::with_capacity(n),
            cpu_weight: Vec::with_capacity(n),
            hw_cap: Vec::with_capacity(n),
            can_sw: Vec::with_capacity(n),
            can_hw: Vec::with_capacity(n),
            pinned_hw: Vec::with_capacity(n),
            r_max: Vec::with_capacity(n),
            cpu_cores: S::from_ratio(&p.platform.cpu_cores),
            capacity: kinds
                .iter()
                .map(|k| p.platform.fpga_capacity.get(k).copied().unwrap_or(0))
                .collect(),
            kinds,
            res_fixed: Vec::with_capacity(n),
            res_per: Vec::with_capacity(n),
            chan_u: Vec::new(),
            chan_v: Vec::new(),
            chan_coeff: Vec::new(),
            chan_coeff_s: Vec::new(),
            chan_bw: Vec::new(),
            chan_scale: Vec::new(),
            pcie: limit_scalar(&p.platform.pcie_bandwidth),
        };

        for (i, proc) in p.processes.iter().enumerate() {
            if proc.id == p.sink {
                core.sink = i;
            }
            let q = rv
                .get(&proc.id)
                .ok_or_else(|| EvalError::Internal(format!("no q for process {:?}", proc.id)))?;
            core.q.push(q);
            core.sw_cap.push(match &proc.sw_throughput {
                Limit::Unbounded => None,
                Limit::Finite(r) => Some(ratio_div_q(r, q)),
            });
            core.cpu_weight.push(match &proc.sw_throughput {
                Limit::Unbounded => None,
                Limit::Finite(r) => {
                    let rate = S::from_ratio(r);
                    Some(S::from_u64(q).expect("u64 fits scalar") / rate)
                }
            });
            let usable_hw = proc.placement != Placement::PinnedSw && proc.hw_profile.is_some();
            core.can_sw.push(proc.placement != Placement::PinnedHw);
            core.can_hw.push(usable_hw);
            core.pinned_hw.push(proc.placement == Placement::PinnedHw);
            if usable_hw {
                let hw = proc.hw_profile.as_ref().expect("usable_hw checked");
                core.r_max.push(hw.r_max);
                core.hw_cap.push(
                    (1..=hw.r_max)
                        .map(|r| ratio_div_q(&hw.throughput_at(r), q))
                        .collect(),
                );
                core.res_fixed.push(
                    core.kinds
                        .iter()
                        .map(|k| hw.resource_fixed.get(k).copied().unwrap_or(0))
                        .collect(),
                );
                core.res_per.push(
                    core.kinds
                        .iter()
                        .map(|k| hw.resource_per_replica.get(k).copied().unwrap_or(0))
                        .collect(),
                );
            } else {
                core.r_max.push(0);
                core.hw_cap.push(Vec::new());
                core.res_fixed.push(Vec::new());
                core.res_per.push(Vec::new());
            }
        }

        let ix = |id: &str| -> Result<usize, EvalError> {
            core.ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| EvalError::UnknownProcess(id.to_string()))
        };
        for c in &p.channels {
            let u = ix(&c.producer)?;
            let v = ix(&c.consumer)?;
            let coeff = (core.q[u] as u128)
                .checked_mul(c.prod_rate as u128)
                .and_then(|x| x.checked_mul(c.token_bytes as u128))
                .ok_or_else(|| EvalError::VolumeOverflow(c.id.clone()))?;
            core.chan_u.push(u);
            core.chan_v.push(v);
            core.chan_coeff.push(coeff);
            core.chan_coeff_s
                .push(S::from_u128(coeff).ok_or_else(|| EvalError::VolumeOverflow(c.id.clone()))?);
            core.chan_bw.push(limit_scalar(&c.bandwidth_cap));
            core.chan_scale.push(c.scale_with_replication);
        }
        Ok(core)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Translate an assignment into per-process codes, checking pins and
    /// replication bounds.
    pub fn codes(&self, p: &ProblemSpec, a: &Assignment) -> Result<Vec<Code>, EvalError> {
        for (id, _) in a.iter() {
            if !self.ids.iter().any(|x| x == id) {
                return Err(EvalError::UnknownProcess(id.clone()));
            }
        }
        let mut codes = Vec::with_capacity(self.n());
        for (i, id) in self.ids.iter().enumerate() {
            let choice = a
                .get(id)
                .ok_or_else(|| EvalError::IncompleteAssignment(id.clone()))?;
            let proc = &p.processes[i];
            match choice {
                PlacementChoice::Sw => {
                    if proc.placement == Placement::PinnedHw {
                        return Err(EvalError::PinViolation {
                            process: id.clone(),
                            message: "pinned_hw process assigned to software".into(),
                        });
                    }
                    codes.push(0);
                }
                PlacementChoice::Hw(r) => {
                    if !self.can_hw[i] {
                        return Err(EvalError::PinViolation {
                            process: id.clone(),
                            message: "process cannot be placed in hardware".into(),
                        });
                    }
                    if r < 1 || r > self.r_max[i] {
                        return Err(EvalError::RmaxExceeded {
                            process: id.clone(),
                            r,
                            r_max: self.r_max[i],
                        });
                    }
                    codes.push(r);
                }
            }
        }
        Ok(codes)
    }

    /// Per-kind resource use of a complete assignment.
    pub fn resource_use(&self, codes: &[Code]) -> Vec<u128> {
        let mut used = vec![0u128; self.kinds.len()];
        for (i, &code) in codes.iter().enumerate() {
            if code > 0 {
                for k in 0..self.kinds.len() {
                    used[k] += self.res_fixed[i][k] as u128
                        + (self.res_per[i][k] as u128) * (code as u128);
                }
            }
        }
        used
    }

    pub fn resources_fit(&self, codes: &[Code]) -> bool {
        let used = self.resource_use(codes);
        (0..self.kinds.len()).all(|k| used[k] <= self.capacity[k] as u128)
    }

    fn crossing(&self, codes: &[Code], c: usize) -> bool {
        (codes[self.chan_u[c]] == 0) != (codes[self.chan_v[c]] == 0)
    }

    /// Visit every finite lambda cap of a complete assignment, in family
    /// order. Summations run in declaration order so that floating results
    /// are reproducible and comparable with the bound math.
    pub fn for_each_cap(
        &self,
        codes: &[Code],
        mut visit: impl FnMut(ConstraintFamily, Option<usize>, S),
    ) {
        // (1) software processes occupy at most one core each
        for i in 0..self.n() {
            if codes[i] == 0 {
                if let Some(cap) = &self.sw_cap[i] {
                    visit(ConstraintFamily::SwProcess, Some(i), cap.clone());
                }
            }
        }
        // (2) CPU pool
        let mut load = S::zero();
        for i in 0..self.n() {
            if codes[i] == 0 {
                if let Some(w) = &self.cpu_weight[i] {
                    load = load + w.clone();
                }
            }
        }
        if load > S::zero() {
            visit(
                ConstraintFamily::CpuAggregate,
                None,
                self.cpu_cores.clone() / load,
            );
        }
        // (3) hardware kernels
        for i in 0..self.n() {
            if codes[i] > 0 {
                visit(
                    ConstraintFamily::HwProcess,
                    Some(i),
                    self.hw_cap[i][codes[i] as usize - 1].clone(),
                );
            }
        }
        // (4) channel bandwidth
        for c in 0..self.chan_ids.len() {
            if let Some(bw) = &self.chan_bw[c] {
                let scale = self.channel_scale(codes, c);
                let cap = bw.clone() * S::from_u32(scale).expect("u32 fits scalar")
                    / self.chan_coeff_s[c].clone();
                visit(ConstraintFamily::Channel, Some(c), cap);
            }
        }
        // (5) PCIe budget over crossing channels
        if let Some(pcie) = &self.pcie {
            let mut volume = S::zero();
            let mut any = false;
            for c in 0..self.chan_ids.len() {
                if self.crossing(codes, c) {
                    volume = volume + self.chan_coeff_s[c].clone();
                    any = true;
                }
            }
            if any && volume > S::zero() {
                visit(ConstraintFamily::PcieAggregate, None, pcie.clone() / volume);
            }
        }
    }

    /// Effective bandwidth multiplier of channel `c` under `codes`.
    pub fn channel_scale(&self, codes: &[Code], c: usize) -> u32 {
        let (cu, cv) = (codes[self.chan_u[c]], codes[self.chan_v[c]]);
        if self.chan_scale[c] && cu > 0 && cv > 0 {
            cu.min(cv)
        } else {
            1
        }
    }

    /// Lambda of a complete assignment, without building a report.
    pub fn lambda(&self, codes: &[Code]) -> Outcome<S> {
        if !self.resources_fit(codes) {
            return Outcome::Infeasible;
        }
        let mut best: Option<S> = None;
        self.for_each_cap(codes, |_, _, cap| {
            best = Some(match best.take() {
                None => cap,
                Some(b) => {
                    if cap < b {
                        cap
                    } else {
                        b
                    }
                }
            });
        });
        match best {
            None => Outcome::Unbounded,
            Some(v) => Outcome::Capped(v),
        }
    }

    fn subject_name(&self, family: ConstraintFamily, subject: Option<usize>) -> String {
        match (family, subject) {
            (ConstraintFamily::CpuAggregate, _) => "cpu".to_string(),
            (ConstraintFamily::PcieAggregate, _) => "pcie".to_string(),
            (ConstraintFamily::Channel, Some(c)) => self.chan_ids[c].clone(),
            (_, Some(i)) => self.ids[i].clone(),
            (_, None) => String::new(),
        }
    }

    /// Full evaluation report of a complete assignment.
    pub fn evaluation(&self, codes: &[Code]) -> Result<EvaluationOf<S>, EvalError> {
        let used = self.resource_use(codes);
        let overfull: Vec<String> = (0..self.kinds.len())
            .filter(|&k| used[k] > self.capacity[k] as u128)
            .map(|k| self.kinds[k].clone())
            .collect();

        let mut utilization = Vec::new();
        let fpga_entries: Vec<UtilizationEntry> = (0..self.kinds.len())
            .map(|k| {
                let u = used[k] as f64;
                let cap = self.capacity[k] as f64;
                UtilizationEntry {
                    budget: format!("fpga:{}", self.kinds[k]),
                    used: u,
                    capacity: Some(cap),
                    fraction: fraction(u, cap),
                }
            })
            .collect();

        if !overfull.is_empty() {
            return Ok(EvaluationOf {
                feasible: false,
                lambda: None,
                sink_rate: None,
                binding_constraints: Vec::new(),
                constraints: Vec::new(),
                utilization: fpga_entries,
                overfull_resources: overfull,
            });
        }

        let mut entries: Vec<(ConstraintFamily, Option<usize>, S)> = Vec::new();
        self.for_each_cap(codes, |family, subject, cap| {
            entries.push((family, subject, cap));
        });
        if entries.is_empty() {
            return Err(EvalError::UnboundedThroughput);
        }
        let lambda = entries
            .iter()
            .map(|(_, _, cap)| cap.clone())
            .fold(None::<S>, |best, cap| {
                Some(match best {
                    None => cap,
                    Some(b) => {
                        if cap < b {
                            cap
                        } else {
                            b
                        }
                    }
                })
            })
            .expect("entries nonempty");

        let mut constraints: Vec<ConstraintEntry<S>> = entries
            .iter()
            .map(|(family, subject, cap)| ConstraintEntry {
                family: *family,
                subject: self.subject_name(*family, *subject),
                cap: cap.clone(),
                binding: cap.tie_eq(&lambda, BINDING_REL_TOL),
            })
            .collect();
        constraints.sort_by(|a, b| (a.family, &a.subject).cmp(&(b.family, &b.subject)));
        let binding_constraints: Vec<ConstraintEntry<S>> =
            constraints.iter().filter(|c| c.binding).cloned().collect();

        // Budget report at the achieved lambda.
        let lam = lambda.approx();
        let mut cpu_load = S::zero();
        for i in 0..self.n() {
            if codes[i] == 0 {
                if let Some(w) = &self.cpu_weight[i] {
                    cpu_load = cpu_load + w.clone();
                }
            }
        }
        let cpu_used = lam * cpu_load.approx();
        let cpu_cap = self.cpu_cores.approx();
        utilization.push(UtilizationEntry {
            budget: "cpu".to_string(),
            used: cpu_used,
            capacity: Some(cpu_cap),
            fraction: fraction(cpu_used, cpu_cap),
        });
        let mut pcie_volume = 0.0;
        for c in 0..self.chan_ids.len() {
            if self.crossing(codes, c) {
                pcie_volume += self.chan_coeff_s[c].approx();
            }
        }
        let pcie_used = lam * pcie_volume;
        utilization.push(UtilizationEntry {
            budget: "pcie".to_string(),
            used: pcie_used,
            capacity: self.pcie.as_ref().map(Scalar::approx),
            fraction: match &self.pcie {
                None => 0.0,
                Some(cap) => fraction(pcie_used, cap.approx()),
            },
        });
        utilization.extend(fpga_entries);
        for c in 0..self.chan_ids.len() {
            let used = lam * self.chan_coeff_s[c].approx();
            let capacity = self.chan_bw[c]
                .as_ref()
                .map(|bw| bw.approx() * f64::from(self.channel_scale(codes, c)));
            utilization.push(UtilizationEntry {
                budget: format!("channel:{}", self.chan_ids[c]),
                used,
                capacity,
                fraction: match capacity {
                    None => 0.0,
                    Some(cap) => fraction(used, cap),
                },
            });
        }

        let sink_rate = lambda.clone() * S::from_u64(self.q[self.sink]).expect("u64 fits scalar");
        Ok(EvaluationOf {
            feasible: true,
            lambda: Some(lambda),
            sink_rate: Some(sink_rate),
            binding_constraints,
            constraints,
            utilization,
            overfull_resources: Vec::new(),
        })
    }

    /// Admissible upper bound on lambda over every feasible completion of a
    /// partial assignment. Decided processes contribute their actual caps;
    /// undecided ones their most optimistic option; shared budgets count
    /// decided contributions only, which can only loosen the bound.
    pub fn bound(&self, states: &[NodeState]) -> Option<S> {
        let mut best: Option<S> = None;
        let mut cut = |cap: S| {
            best = Some(match best.take() {
                None => cap,
                Some(b) => {
                    if cap < b {
                        cap
                    } else {
                        b
                    }
                }
            });
        };

        // (a) per-process optimistic caps
        for i in 0..self.n() {
            let best_hw = || {
                self.hw_cap[i]
                    .iter()
                    .cloned()
                    .fold(None::<S>, |acc, cap| match acc {
                        None => Some(cap),
                        Some(b) => Some(if cap > b { cap } else { b }),
                    })
            };
            let cap: Option<S> = match states[i] {
                NodeState::Sw => self.sw_cap[i].clone(),
                NodeState::Hw(r) => Some(self.hw_cap[i][r as usize - 1].clone()),
                NodeState::HwAnyR => best_hw(),
                NodeState::Undecided => {
                    let hw = if self.can_hw[i] { best_hw() } else { None };
                    match (self.can_sw[i], &self.sw_cap[i], hw) {
                        // an unbounded software option means no cap at all
                        (true, None, _) => None,
                        (true, Some(sw), Some(h)) => Some(if *sw > h { sw.clone() } else { h }),
                        (true, Some(sw), None) => Some(sw.clone()),
                        (false, _, h) => h,
                    }
                }
            };
            if let Some(cap) = cap {
                cut(cap);
            }
        }

        // (b) CPU pool over processes already decided software
        let mut load = S::zero();
        for i in 0..self.n() {
            if states[i] == NodeState::Sw {
                if let Some(w) = &self.cpu_weight[i] {
                    load = load + w.clone();
                }
            }
        }
        if load > S::zero() {
            cut(self.cpu_cores.clone() / load);
        }

        // (c) PCIe over channels whose crossing status is already forced
        if let Some(pcie) = &self.pcie {
            let sw_forced = |i: usize| states[i] == NodeState::Sw;
            let hw_forced = |i: usize| matches!(states[i], NodeState::Hw(_) | NodeState::HwAnyR);
            let mut volume = S::zero();
            let mut any = false;
            for c in 0..self.chan_ids.len() {
                let (u, v) = (self.chan_u[c], self.chan_v[c]);
                if (sw_forced(u) && hw_forced(v)) || (hw_forced(u) && sw_forced(v)) {
                    volume = volume + self.chan_coeff_s[c].clone();
                    any = true;
                }
            }
            if any && volume > S::zero() {
                cut(pcie.clone() / volume);
            }
        }

        // (d) channel caps with optimistic replication scaling
        for c in 0..self.chan_ids.len() {
            if let Some(bw) = &self.chan_bw[c] {
                let scale = if !self.chan_scale[c] {
                    1
                } else {
                    let side = |i: usize| match states[i] {
                        NodeState::Sw => 1,
                        NodeState::Hw(r) => r,
                        NodeState::HwAnyR => self.r_max[i],
                        NodeState::Undecided => {
                            if self.can_hw[i] {
                                self.r_max[i]
                            } else {
                                1
                            }
                        }
                    };
                    side(self.chan_u[c]).min(side(self.chan_v[c])).max(1)
                };
                cut(bw.clone() * S::from_u32(scale).expect("u32 fits scalar")
                    / self.chan_coeff_s[c].clone());
            }
        }

        best
    }
}

fn fraction(used: f64, capacity: f64) -> f64 {
    if capacity == 0.0 {
        if used == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        used / capacity
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Evaluate an assignment with the given scalar type.
pub fn evaluate_in<S: Scalar>(
    p: &ProblemSpec,
    a: &Assignment,
) -> Result<EvaluationOf<S>, EvalError> {
    let rv = rates::repetition_vector(p)?;
    let core = EvalCore::<S>::new(p, &rv)?;
    let codes = core.codes(p, a)?;
    core.evaluation(&codes)
}

/// Evaluate in floating arithmetic with an exact rational cross-check on the
/// final minimum.
pub fn evaluate(p: &ProblemSpec, a: &Assignment) -> Result<EvaluationOf<f64>, EvalError> {
    let ev = evaluate_in::<f64>(p, a)?;
    if let Some(lam) = ev.lambda {
        let exact = evaluate_in::<BigRational>(p, a)?;
        let exact_lam = exact
            .lambda
            .as_ref()
            .map(Scalar::approx)
            .ok_or_else(|| EvalError::Internal("exact evaluation lost lambda".into()))?;
        if !crate::scalar::rel_close(lam, exact_lam, BINDING_REL_TOL) {
            return Err(EvalError::Internal(format!(
                "floating minimum {lam} disagrees with exact minimum {exact_lam}"
            )));
        }
    }
    Ok(ev)
}

/// One line per evaluated constraint plus budget utilizations; binding caps
/// are marked. Deterministic ordering.
pub fn explain<S: Scalar>(e: &EvaluationOf<S>) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    if !e.feasible {
        let _ = writeln!(
            out,
            "infeasible: FPGA capacity exceeded for: {}",
            e.overfull_resources.join(", ")
        );
        for u in &e.utilization {
            let _ = writeln!(
                out,
                "  {}: used {} / {}{}",
                u.budget,
                u.used,
                u.capacity
                    .map_or("unbounded".to_string(), |c| c.to_string()),
                if u.fraction > 1.0 { "  OVERFULL" } else { "" }
            );
        }
        return out;
    }
    let lam = e.lambda.as_ref().map(Scalar::approx).unwrap_or(f64::NAN);
    let sink = e.sink_rate.as_ref().map(Scalar::approx).unwrap_or(f64::NAN);
    let _ = writeln!(
        out,
        "lambda = {lam} iterations/s (sink rate {sink} firings/s)"
    );
    let _ = writeln!(out, "constraints:");
    for c in &e.constraints {
        let cap = c.cap.approx();
        let util = if cap > 0.0 { lam / cap } else { f64::NAN };
        let subject = if c.subject.is_empty() || c.subject == "cpu" || c.subject == "pcie" {
            String::new()
        } else {
            format!(" {}", c.subject)
        };
        let _ = writeln!(
            out,
            "  {}{}: cap {}, utilization {:.1}%{}",
            c.family.label(),
            subject,
            cap,
            util * 100.0,
            if c.binding { "  BINDING" } else { "" }
        );
    }
    let _ = writeln!(out, "budgets:");
    for u in &e.utilization {
        let cap = u
            .capacity
            .map_or("unbounded".to_string(), |c| c.to_string());
        let _ = writeln!(
            out,
            "  {}: used {} / {} ({:.1}%)",
            u.budget,
            u.used,
            cap,
            u.fraction * 100.0
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_problem, validate_problem};
    use crate::testutil::*;
    use num_bigint::BigInt;

    fn all_sw(p: &ProblemSpec) -> Assignment {
        p.processes
            .iter()
            .map(|x| (x.id.clone(), PlacementChoice::Sw))
            .collect()
    }

    #[test]
    fn single_bottleneck_process_binds() {
        let p = sw_chain(&[1000, 100, 1000], (4, 1));
        let e = evaluate(&p, &all_sw(&p)).unwrap();
        assert!(e.feasible);
        assert_eq!(e.lambda, Some(100.0));
        assert_eq!(e.binding_constraints.len(), 1);
        assert_eq!(e.binding_constraints[0].family, ConstraintFamily::SwProcess);
        assert_eq!(e.binding_constraints[0].subject, "B");
    }

    // Oracle for the cpu-aggregate example, written out directly from the
    // constraint families: caps are {1000, 100, 1000} per process and
    // cpu_cores / (1/1000 + 1/100 + 1/1000) for the shared pool.
    #[test]
    fn cpu_pool_binds_when_cores_are_scarce() {
        let p = sw_chain(&[1000, 100, 1000], (1, 2));
        let e = evaluate(&p, &all_sw(&p)).unwrap();
        let oracle = 0.5 / (1.0 / 1000.0 + 1.0 / 100.0 + 1.0 / 1000.0);
        assert_eq!(e.lambda, Some(oracle));
        assert_eq!(e.binding_constraints.len(), 1);
        assert_eq!(
            e.binding_constraints[0].family,
            ConstraintFamily::CpuAggregate
        );
        // 125/3 exactly, checked in exact arithmetic as well.
        let exact = evaluate_in::<BigRational>(&p, &all_sw(&p)).unwrap();
        assert_eq!(
            exact.lambda,
            Some(BigRational::new(BigInt::from(125), BigInt::from(3)))
        );
    }

    #[test]
    fn pcie_budget_binds_crossing_channels() {
        // A (unbounded sw) -> B hw(2), base 75 -> C (unbounded sw); both
        // channels cross at 1000 bytes per iteration each.
        let mut p = hw_chain(75, 0, 1, 4);
        p.platform.pcie_bandwidth = Limit::Finite(Rational::integer(200_000));
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(2));
        let e = evaluate(&p, &a).unwrap();
        assert_eq!(e.lambda, Some(100.0));
        assert_eq!(e.binding_constraints.len(), 1);
        assert_eq!(
            e.binding_constraints[0].family,
            ConstraintFamily::PcieAggregate
        );
        // The hardware cap sits at 150 and must be reported, unbound.
        let hw = e
            .constraints
            .iter()
            .find(|c| c.family == ConstraintFamily::HwProcess)
            .unwrap();
        assert_eq!(hw.cap, 150.0);
        assert!(!hw.binding);
    }

    #[test]
    fn resource_overflow_is_infeasible() {
        let p = hw_chain(250, 90_000, 15_000, 4);
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(1));
        let e = evaluate(&p, &a).unwrap();
        assert!(!e.feasible);
        assert_eq!(e.lambda, None);
        assert_eq!(e.overfull_resources, vec!["lut".to_string()]);
    }

    #[test]
    fn pin_and_rmax_violations_are_rejected() {
        let p = hw_chain(250, 10_000, 15_000, 4);
        let mut a = all_sw(&p);
        a.set("A", PlacementChoice::Hw(1));
        assert!(matches!(
            evaluate(&p, &a),
            Err(EvalError::PinViolation { .. })
        ));
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(9));
        assert!(matches!(
            evaluate(&p, &a),
            Err(EvalError::RmaxExceeded { r: 9, .. })
        ));
        let mut a = all_sw(&p);
        a.0.remove("C");
        assert!(matches!(
            evaluate(&p, &a),
            Err(EvalError::IncompleteAssignment(id)) if id == "C"
        ));
    }

    #[test]
    fn unbounded_model_is_an_error() {
        let text = r#"{
            "platform": {"cpu_cores": 4, "resource_kinds": [], "fpga_capacity": {},
                         "pcie_bandwidth": "unbounded"},
            "processes": [{"id": "A", "sw_throughput": "unbounded"},
                          {"id": "B", "sw_throughput": "unbounded"}],
            "channels": [{"id": "c", "producer": "A", "consumer": "B",
                          "prod_rate": 1, "cons_rate": 1, "token_bytes": 1}],
            "sink": "B"
        }"#;
        let p = parse_problem(text).unwrap();
        assert!(validate_problem(&p).is_empty());
        let err = evaluate(&p, &all_sw(&p)).unwrap_err();
        assert!(matches!(err, EvalError::UnboundedThroughput));
    }

    #[test]
    fn explain_marks_binding_aggregate() {
        let p = sw_chain(&[1000, 100, 1000], (1, 2));
        let e = evaluate(&p, &all_sw(&p)).unwrap();
        let report = explain(&e);
        let cpu_line = report
            .lines()
            .find(|l| l.contains("cpu aggregate"))
            .expect("cpu aggregate line");
        assert!(cpu_line.contains("BINDING"), "{report}");
    }

    #[test]
    fn explain_lists_overfull_kinds() {
        let p = hw_chain(250, 90_000, 15_000, 4);
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(1));
        let e = evaluate(&p, &a).unwrap();
        let report = explain(&e);
        assert!(report.contains("infeasible"), "{report}");
        assert!(report.contains("lut"), "{report}");
    }

    #[test]
    fn explain_marks_simultaneous_ties() {
        // One core, one finite software process: the per-process cap and the
        // cpu aggregate coincide exactly.
        let p = sw_chain(&[1000, 100, 1000], (1, 1));
        let mut q = p.clone();
        q.processes[0].sw_throughput = Limit::Unbounded;
        q.processes[2].sw_throughput = Limit::Unbounded;
        let e = evaluate(&q, &all_sw(&q)).unwrap();
        assert_eq!(e.lambda, Some(100.0));
        let report = explain(&e);
        assert_eq!(report.matches("BINDING").count(), 2, "{report}");
        assert_eq!(e.binding_constraints.len(), 2);
    }

    #[test]
    fn balance_identity_holds_exactly() {
        // prod/cons rates force q = {A:3, B:6, C:2}; both sides of each
        // channel's rate product must agree bit for bit.
        let p = rate_chain(&[(2, 1), (1, 3)]);
        let a = all_sw(&p);
        let e = evaluate(&p, &a).unwrap();
        let lam = e.lambda.unwrap();
        let rv = crate::rates::repetition_vector(&p).unwrap();
        for c in &p.channels {
            let lhs = lam * (rv.get(&c.producer).unwrap() * c.prod_rate) as f64;
            let rhs = lam * (rv.get(&c.consumer).unwrap() * c.cons_rate) as f64;
            assert_eq!(lhs.to_bits(), rhs.to_bits());
        }
    }

    #[test]
    fn scalar_instantiations_agree() {
        let p = hw_chain(75, 0, 1, 4);
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(3));
        let f64_lambda = evaluate_in::<f64>(&p, &a).unwrap().lambda.unwrap();
        let f32_lambda = evaluate_in::<f32>(&p, &a).unwrap().lambda.unwrap();
        let exact_lambda = evaluate_in::<BigRational>(&p, &a).unwrap().lambda.unwrap();
        assert!(crate::scalar::rel_close(
            f64_lambda,
            exact_lambda.approx(),
            1e-12
        ));
        assert!(crate::scalar::rel_close(
            f64::from(f32_lambda),
            f64_lambda,
            1e-6
        ));
    }

    #[test]
    fn throughput_table_overrides_linear_scaling() {
        let mut p = hw_chain(100, 0, 100, 3);
        let hw = p.processes[1].hw_profile.as_mut().unwrap();
        hw.throughput_table = Some(vec![
            Rational::integer(100),
            Rational::integer(150),
            Rational::integer(160),
        ]);
        let mut a = all_sw(&p);
        a.set("B", PlacementChoice::Hw(3));
        let e = evaluate(&p, &a).unwrap();
        let hw_cap = e
            .constraints
            .iter()
            .find(|c| c.family == ConstraintFamily::HwProcess)
            .unwrap();
        assert_eq!(hw_cap.cap, 160.0);
    }
}
