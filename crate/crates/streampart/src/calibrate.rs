//! Turn profiling measurements into problem-file parameters.
//!
//! Per measured process, sw_throughput becomes total items / total
//! cpu_seconds; per measured channel, bandwidth_cap becomes total bytes /
//! total seconds. Pooling sums before dividing keeps the estimate robust
//! to unequal measurement windows. Hardware-profile parameters are not
//! calibratable from software profiling and pass through untouched.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{Limit, ProblemSpec, Rational};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?} in the measurement header")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    BadRecord { line: u64, message: String },
    #[error("{kind} {id:?} does not exist in the problem")]
    UnknownSubject { kind: String, id: String },
    #[error("{subject}: measured {present:?} but not {missing:?}")]
    MissingQuantity {
        subject: String,
        present: String,
        missing: String,
    },
    #[error("{subject}: divisor sums to zero")]
    ZeroDivisor { subject: String },
    #[error("{subject}: measured rate is zero, which no valid problem accepts")]
    ZeroRate { subject: String },
    #[error("{subject}: measurement sums overflow the exact number range")]
    Overflow { subject: String },
}

/// Exact non-negative decimal literal -> rational. No exponents, no signs.
fn parse_decimal(s: &str) -> Option<Rational> {
    let s = s.trim();
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let mut num: u128 = int_part.parse().unwrap_or(0);
    let mut den: u128 = 1;
    for c in frac_part.chars() {
        num = num.checked_mul(10)?.checked_add(c.to_digit(10)? as u128)?;
        den = den.checked_mul(10)?;
    }
    Rational::from_u128(num, den)
}

#[derive(Default)]
struct Pooled {
    numerator: Option<Rational>,
    divisor: Option<Rational>,
    numerator_rows: u64,
    divisor_rows: u64,
}

fn add(slot: &mut Option<Rational>, value: &Rational) -> Option<Rational> {
    match slot {
        None => {
            *slot = Some(value.clone());
            slot.clone()
        }
        Some(current) => {
            let sum = current.checked_add(value)?;
            *slot = Some(sum);
            slot.clone()
        }
    }
}

pub fn calibrate(measurements: &str, base: &ProblemSpec) -> Result<ProblemSpec, CalibrateError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(measurements.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, CalibrateError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(CalibrateError::MissingColumn(name))
    };
    let (k_kind, k_id, k_qty, k_val) = (
        col("subject_kind")?,
        col("subject_id")?,
        col("quantity")?,
        col("value")?,
    );

    // (kind, id) -> pooled sums; BTreeMap keeps provenance order stable
    let mut pools: BTreeMap<(String, String), Pooled> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| CalibrateError::BadRecord { line, message };
        let field = |ix: usize| record.get(ix).unwrap_or("");

        let kind = field(k_kind);
        let id = field(k_id);
        let quantity = field(k_qty);
        let value = parse_decimal(field(k_val)).ok_or_else(|| {
            bad(format!(
                "value {:?} is not a non-negative decimal",
                field(k_val)
            ))
        })?;

        let is_divisor = match (kind, quantity) {
            ("process", "items") => false,
            ("process", "cpu_seconds") => true,
            ("channel", "bytes") => false,
            ("channel", "seconds") => true,
            ("process", q) => {
                return Err(bad(format!(
                    "quantity {q:?} is not valid for a process (items or cpu_seconds)"
                )))
            }
            ("channel", q) => {
                return Err(bad(format!(
                    "quantity {q:?} is not valid for a channel (bytes or seconds)"
                )))
            }
            (k, _) => {
                return Err(bad(format!(
                    "subject_kind {k:?} must be process or channel"
                )))
            }
        };
        let known = match kind {
            "process" => base.process(id).is_some(),
            _ => base.channel(id).is_some(),
        };
        if !known {
            return Err(CalibrateError::UnknownSubject {
                kind: kind.to_string(),
                id: id.to_string(),
            });
        }

        let pool = pools.entry((kind.to_string(), id.to_string())).or_default();
        let slot = if is_divisor {
            pool.divisor_rows += 1;
            &mut pool.divisor
        } else {
            pool.numerator_rows += 1;
            &mut pool.numerator
        };
        add(slot, &value).ok_or_else(|| CalibrateError::Overflow {
            subject: format!("{kind} {id:?}"),
        })?;
    }

    let mut out = base.clone();
    let mut provenance: Vec<String> = Vec::new();
    for ((kind, id), pool) in &pools {
        let subject = format!("{kind} {id:?}");
        let (num_name, div_name) = if kind == "process" {
            ("items", "cpu_seconds")
        } else {
            ("bytes", "seconds")
        };
        let (numerator, divisor) = match (&pool.numerator, &pool.divisor) {
            (Some(n), Some(d)) => (n, d),
            (Some(_), None) => {
                return Err(CalibrateError::MissingQuantity {
                    subject,
                    present: num_name.into(),
                    missing: div_name.into(),
                })
            }
            (None, _) => {
                return Err(CalibrateError::MissingQuantity {
                    subject,
                    present: div_name.into(),
                    missing: num_name.into(),
                })
            }
        };
        if divisor.is_zero() {
            return Err(CalibrateError::ZeroDivisor { subject });
        }
        let rate = numerator
            .checked_div(divisor)
            .ok_or_else(|| CalibrateError::Overflow {
                subject: subject.clone(),
            })?;
        if rate.is_zero() {
            return Err(CalibrateError::ZeroRate { subject });
        }
        if kind == "process" {
            let proc = out
                .processes
                .iter_mut()
                .find(|x| x.id == *id)
                .expect("subject existence checked");
            proc.sw_throughput = Limit::Finite(rate);
        } else {
            let chan = out
                .channels
                .iter_mut()
                .find(|c| c.id == *id)
                .expect("subject existence checked");
            chan.bandwidth_cap = Limit::Finite(rate);
        }
        provenance.push(format!(
            "{kind} {id:?} ({} {num_name} rows, {} {div_name} rows)",
            pool.numerator_rows, pool.divisor_rows
        ));
    }

    out.comment = if provenance.is_empty() {
        base.comment.clone()
    } else {
        Some(format!(
            "calibrated from measurements: {}",
            provenance.join("; ")
        ))
    };
    Ok(out)
}
