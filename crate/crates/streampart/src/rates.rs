//! Steady-state rate balance: the repetition vector.
//!
//! Every channel forces `q_producer * prod_rate = q_consumer * cons_rate`.
//! The minimal positive integer solution normalizes all per-process firing
//! rates to a single iteration rate: process `p` fires `q_p` times per graph
//! iteration. Computed with exact rational arithmetic; floats would mask
//! inconsistent rate systems.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed};
use thiserror::Error;

use crate::model::ProblemSpec;

/// Minimal positive per-process firing counts satisfying rate balance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepetitionVector {
    q: BTreeMap<String, u64>,
}

impl RepetitionVector {
    pub fn get(&self, process: &str) -> Option<u64> {
        self.q.get(process).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, u64)> {
        self.q.iter().map(|(k, &v)| (k, v))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RateError {
    #[error("inconsistent rates: channel {channel:?} forces {lhs} = {rhs}, which contradicts the rest of the graph")]
    InconsistentRates {
        channel: String,
        lhs: String,
        rhs: String,
    },
    #[error("graph is not weakly connected: process {0:?} unreachable")]
    NotConnected(String),
    #[error("repetition vector overflows 64-bit firing counts (process {0:?})")]
    Overflow(String),
    #[error("graph has no processes")]
    Empty,
}

/// Compute the repetition vector of a structurally valid problem.
pub fn repetition_vector(p: &ProblemSpec) -> Result<RepetitionVector, RateError> {
    if p.processes.is_empty() {
        return Err(RateError::Empty);
    }
    let ix: HashMap<&str, usize> = p
        .processes
        .iter()
        .enumerate()
        .map(|(i, proc)| (proc.id.as_str(), i))
        .collect();
    let n = p.processes.len();

    // Undirected adjacency carrying the oriented rate ratio. Crossing an
    // edge u->v with rates (a, b) maps f_u to f_u * a / b.
    #[derive(Clone)]
    struct Arc {
        to: usize,
        chan: usize,
        num: u64,
        den: u64,
    }
    let mut adj: Vec<Vec<Arc>> = vec![Vec::new(); n];
    for (ci, c) in p.channels.iter().enumerate() {
        let u = ix[c.producer.as_str()];
        let v = ix[c.consumer.as_str()];
        adj[u].push(Arc {
            to: v,
            chan: ci,
            num: c.prod_rate,
            den: c.cons_rate,
        });
        adj[v].push(Arc {
            to: u,
            chan: ci,
            num: c.cons_rate,
            den: c.prod_rate,
        });
    }

    // Propagate fractional firing counts from process 0; every revisit of a
    // settled node must agree exactly, otherwise the system only has the
    // zero solution.
    let mut f: Vec<Option<BigRational>> = vec![None; n];
    f[0] = Some(BigRational::one());
    let mut queue = vec![0usize];
    while let Some(u) = queue.pop() {
        let fu = f[u].clone().expect("queued nodes are settled");
        for arc in &adj[u] {
            let ratio = BigRational::new(BigInt::from(arc.num), BigInt::from(arc.den));
            let fv = &fu * ratio;
            match &f[arc.to] {
                None => {
                    f[arc.to] = Some(fv);
                    queue.push(arc.to);
                }
                Some(existing) => {
                    if *existing != fv {
                        let c = &p.channels[arc.chan];
                        return Err(RateError::InconsistentRates {
                            channel: c.id.clone(),
                            lhs: format!("q_{} * {}", c.producer, c.prod_rate),
                            rhs: format!("q_{} * {}", c.consumer, c.cons_rate),
                        });
                    }
                }
            }
        }
    }

    let mut fractions = Vec::with_capacity(n);
    for (i, slot) in f.into_iter().enumerate() {
        match slot {
            Some(v) => fractions.push(v),
            None => return Err(RateError::NotConnected(p.processes[i].id.clone())),
        }
    }

    // Scale to the minimal integer vector: multiply by the denominator lcm,
    // then divide by the gcd of the results.
    let mut denom_lcm = BigInt::one();
    for frac in &fractions {
        denom_lcm = denom_lcm.lcm(frac.denom());
    }
    let mut ints: Vec<BigInt> = fractions
        .iter()
        .map(|frac| (frac * BigRational::from_integer(denom_lcm.clone())).to_integer())
        .collect();
    let mut g = BigInt::from(0);
    for v in &ints {
        g = g.gcd(v);
    }
    for v in &mut ints {
        *v = &*v / &g;
    }

    let mut q = BTreeMap::new();
    for (i, v) in ints.into_iter().enumerate() {
        debug_assert!(v.is_positive());
        let small: u64 = v
            .try_into()
            .map_err(|_| RateError::Overflow(p.processes[i].id.clone()))?;
        q.insert(p.processes[i].id.clone(), small);
    }
    Ok(RepetitionVector { q })
}
