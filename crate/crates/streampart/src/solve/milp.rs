//! MILP export in LP text format, for handing the placement problem to an
//! external solver. Export only; nothing here solves the model.
//!
//! Model sketch (see docs/milp-format.md for the exact variable and row
//! counting formulas):
//!
//! - binary y_p_sw / y_p_r{r} pick exactly one placement per process
//! - lambda <= cap + M (1 - y) activates rate caps of chosen placements
//! - per-kind knapsack rows bound FPGA resource use
//! - u_p >= load_p - M_u (1 - y_p_sw), sum u_p <= cpu_cores linearize the
//!   CPU pool; w_c and AND-linearization binaries a_c, b_c do the same for
//!   PCIe crossing loads; z_c <= R-expression rows linearize min-replication
//!   bandwidth scaling
//! - every big-M derives from the admissible bound on the empty partial
//!   assignment, quoted in the comment header

use std::fmt::Write as _;

use thiserror::Error;

use crate::evaluate::{EvalCore, EvalError, NodeState};
use crate::model::ProblemSpec;
use crate::rates;
use crate::scalar::Scalar;

/// Software-placement indicator of a process, as it appears in linearized
/// rows: a variable for free processes, a constant for pinned ones.
#[derive(Debug, Clone, PartialEq)]
enum SwInd {
    Var(String),
    Zero,
    One,
}

struct Row {
    name: String,
    terms: Vec<(f64, String)>,
    sense: &'static str,
    rhs: f64,
}

impl Row {
    fn render(&self) -> String {
        let mut s = format!(" {}:", self.name);
        for (k, (c, v)) in self.terms.iter().enumerate() {
            if *c < 0.0 {
                s.push_str(" -");
            } else if k > 0 {
                s.push_str(" +");
            }
            let mag = c.abs();
            if mag == 1.0 {
                let _ = write!(s, " {v}");
            } else {
                let _ = write!(s, " {mag} {v}");
            }
        }
        let _ = write!(s, " {} {}", self.sense, self.rhs);
        s
    }
}

pub fn export_milp(p: &ProblemSpec) -> Result<String, EvalError> {
    let rv = rates::repetition_vector(p)?;
    let core = EvalCore::<f64>::new(p, &rv)?;
    let n = core.n();

    // big-M base: the admissible bound over the completely undecided space
    let states: Vec<NodeState> = (0..n)
        .map(|i| {
            if core.pinned_hw[i] {
                NodeState::HwAnyR
            } else if !core.can_hw[i] {
                NodeState::Sw
            } else {
                NodeState::Undecided
            }
        })
        .collect();
    let big_m = core.bound(&states).ok_or(EvalError::UnboundedThroughput)?;

    let y_sw = |i: usize| format!("y_p{i}_sw");
    let y_hw = |i: usize, r: u32| format!("y_p{i}_r{r}");
    let sw_ind = |i: usize| -> SwInd {
        match (core.can_sw[i], core.can_hw[i]) {
            (true, true) => SwInd::Var(y_sw(i)),
            (true, false) => SwInd::One,
            (false, _) => SwInd::Zero,
        }
    };

    let mut rows: Vec<Row> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut bounds: Vec<String> = vec![format!(" lambda <= {big_m}")];

    // placement selection
    for i in 0..n {
        let mut terms = Vec::new();
        if core.can_sw[i] {
            terms.push((1.0, y_sw(i)));
        }
        if core.can_hw[i] {
            for r in 1..=core.r_max[i] {
                terms.push((1.0, y_hw(i, r)));
            }
        }
        for (_, v) in &terms {
            binaries.push(v.clone());
        }
        rows.push(Row {
            name: format!("sel_p{i}"),
            terms,
            sense: "=",
            rhs: 1.0,
        });
    }

    // software rate caps: lambda + M y <= cap + M
    for i in 0..n {
        if core.can_sw[i] {
            if let Some(cap) = &core.sw_cap[i] {
                rows.push(Row {
                    name: format!("swcap_p{i}"),
                    terms: vec![(1.0, "lambda".into()), (big_m, y_sw(i))],
                    sense: "<=",
                    rhs: cap + big_m,
                });
            }
        }
    }

    // hardware rate caps
    for i in 0..n {
        if core.can_hw[i] {
            for r in 1..=core.r_max[i] {
                rows.push(Row {
                    name: format!("hwcap_p{i}_r{r}"),
                    terms: vec![(1.0, "lambda".into()), (big_m, y_hw(i, r))],
                    sense: "<=",
                    rhs: core.hw_cap[i][r as usize - 1] + big_m,
                });
            }
        }
    }

    // FPGA knapsacks, one per declared kind, over every hardware option
    if (0..n).any(|i| core.can_hw[i]) {
        for (k, _) in core.kinds.iter().enumerate() {
            let mut terms = Vec::new();
            for i in 0..n {
                if core.can_hw[i] {
                    for r in 1..=core.r_max[i] {
                        let use_k =
                            core.res_fixed[i][k] as f64 + core.res_per[i][k] as f64 * r as f64;
                        terms.push((use_k, y_hw(i, r)));
                    }
                }
            }
            rows.push(Row {
                name: format!("knap_k{k}"),
                terms,
                sense: "<=",
                rhs: core.capacity[k] as f64,
            });
        }
    }

    // CPU pool: u_p >= load - M_u (1 - y_sw), sum u_p <= cores
    let mut cpu_users: Vec<usize> = Vec::new();
    for i in 0..n {
        if core.can_sw[i] {
            if let Some(w) = &core.cpu_weight[i] {
                let m_u = w * big_m;
                rows.push(Row {
                    name: format!("cpuact_p{i}"),
                    terms: vec![
                        (1.0, format!("u_p{i}")),
                        (-w, "lambda".into()),
                        (-m_u, y_sw(i)),
                    ],
                    sense: ">=",
                    rhs: -m_u,
                });
                cpu_users.push(i);
            }
        }
    }
    if !cpu_users.is_empty() {
        rows.push(Row {
            name: "cpupool".into(),
            terms: cpu_users
                .iter()
                .map(|&i| (1.0, format!("u_p{i}")))
                .collect(),
            sense: "<=",
            rhs: core.cpu_cores.approx(),
        });
    }

    // channel caps; scaled channels get a min-replication variable z_c with
    // z <= R-expression + sw-indicator per endpoint
    for c in 0..core.chan_ids.len() {
        let Some(bw) = &core.chan_bw[c] else { continue };
        let (u, v) = (core.chan_u[c], core.chan_v[c]);
        let scaled = core.chan_scale[c] && core.can_hw[u] && core.can_hw[v];
        if scaled {
            let z = format!("z_c{c}");
            for (tag, e) in [("u", u), ("v", v)] {
                let mut terms = vec![(1.0, z.clone())];
                for r in 1..=core.r_max[e] {
                    terms.push((-(r as f64), y_hw(e, r)));
                }
                if let SwInd::Var(s) = sw_ind(e) {
                    terms.push((-1.0, s));
                }
                rows.push(Row {
                    name: format!("z{tag}_c{c}"),
                    terms,
                    sense: "<=",
                    rhs: 0.0,
                });
            }
            bounds.push(format!(" {z} <= {}", core.r_max[u].min(core.r_max[v])));
            rows.push(Row {
                name: format!("chan_c{c}"),
                terms: vec![(core.chan_coeff_s[c], "lambda".into()), (-bw, z)],
                sense: "<=",
                rhs: 0.0,
            });
        } else {
            rows.push(Row {
                name: format!("chan_c{c}"),
                terms: vec![(core.chan_coeff_s[c], "lambda".into())],
                sense: "<=",
                rhs: *bw,
            });
        }
    }

    // PCIe pool over boundary-crossing channels
    if let Some(pcie) = &core.pcie {
        let mut w_vars: Vec<String> = Vec::new();
        for c in 0..core.chan_ids.len() {
            let (u, v) = (core.chan_u[c], core.chan_v[c]);
            let coeff = core.chan_coeff_s[c];
            let m_w = coeff * big_m;
            let w = format!("w_c{c}");
            let act = |extra: Vec<(f64, String)>, rhs: f64| Row {
                name: format!("across_c{c}"),
                terms: [vec![(1.0, w.clone()), (-coeff, "lambda".into())], extra].concat(),
                sense: ">=",
                rhs,
            };
            match (sw_ind(u), sw_ind(v)) {
                // never crosses
                (SwInd::One, SwInd::One) | (SwInd::Zero, SwInd::Zero) => continue,
                // always crosses: unconditional load
                (SwInd::One, SwInd::Zero) | (SwInd::Zero, SwInd::One) => {
                    rows.push(act(vec![], 0.0));
                }
                // crossing iff the free endpoint lands opposite the pinned one
                (SwInd::Var(s), SwInd::Zero) | (SwInd::Zero, SwInd::Var(s)) => {
                    rows.push(act(vec![(-m_w, s)], -m_w));
                }
                (SwInd::Var(s), SwInd::One) | (SwInd::One, SwInd::Var(s)) => {
                    rows.push(act(vec![(m_w, s)], 0.0));
                }
                // both free: x = s_u xor s_v via AND binaries
                (SwInd::Var(su), SwInd::Var(sv)) => {
                    let (a, b) = (format!("a_c{c}"), format!("b_c{c}"));
                    for (x, s_own, s_other) in [(&a, &su, &sv), (&b, &sv, &su)] {
                        rows.push(Row {
                            name: format!("and1_{x}"),
                            terms: vec![(1.0, x.clone()), (-1.0, s_own.clone())],
                            sense: "<=",
                            rhs: 0.0,
                        });
                        rows.push(Row {
                            name: format!("and2_{x}"),
                            terms: vec![(1.0, x.clone()), (1.0, s_other.clone())],
                            sense: "<=",
                            rhs: 1.0,
                        });
                        rows.push(Row {
                            name: format!("and3_{x}"),
                            terms: vec![
                                (1.0, x.clone()),
                                (-1.0, s_own.clone()),
                                (1.0, s_other.clone()),
                            ],
                            sense: ">=",
                            rhs: 0.0,
                        });
                    }
                    binaries.push(a.clone());
                    binaries.push(b.clone());
                    rows.push(act(vec![(-m_w, a), (-m_w, b)], -m_w));
                }
            }
            w_vars.push(w);
        }
        if !w_vars.is_empty() {
            rows.push(Row {
                name: "pciepool".into(),
                terms: w_vars.into_iter().map(|w| (1.0, w)).collect(),
                sense: "<=",
                rhs: pcie.approx(),
            });
        }
    }

    let mut out = String::new();
    out.push_str("\\ streampart MILP export\n");
    out.push_str("\\ maximize the iteration rate lambda over placement binaries\n");
    for (i, id) in core.ids.iter().enumerate() {
        let _ = writeln!(out, "\\ p{i} = process {id:?}");
    }
    for (c, id) in core.chan_ids.iter().enumerate() {
        let _ = writeln!(out, "\\ c{c} = channel {id:?}");
    }
    for (k, kind) in core.kinds.iter().enumerate() {
        let _ = writeln!(out, "\\ k{k} = resource kind {kind:?}");
    }
    let _ = writeln!(
        out,
        "\\ big-M: rate rows use M = {big_m} (admissible bound on the empty"
    );
    out.push_str("\\ partial assignment); cpu rows use M_u = (q_p / sw_p) M; pcie rows\n");
    out.push_str("\\ use M_w = bytes_c M. Continuous vars default to [0, +inf).\n");
    out.push_str("Maximize\n obj: lambda\nSubject To\n");
    for row in &rows {
        out.push_str(&row.render());
        out.push('\n');
    }
    out.push_str("Bounds\n");
    for b in &bounds {
        out.push_str(b);
        out.push('\n');
    }
    out.push_str("Binaries\n");
    for b in &binaries {
        let _ = writeln!(out, " {b}");
    }
    out.push_str("End\n");
    Ok(out)
}

// ---------------------------------------------------------------------------
// Structural checker
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpSummary {
    /// Distinct variables referenced by the objective or any row.
    pub variables: usize,
    pub binaries: usize,
    pub rows: usize,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing section {0:?}")]
    MissingSection(&'static str),
    #[error("line {line}: duplicate row name {name:?}")]
    DuplicateRow { line: usize, name: String },
    #[error("line {line}: {name:?} declared but never used in a row")]
    UnusedVariable { line: usize, name: String },
}

fn is_name(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse a linear expression, recording referenced variables. Accepts the
/// token shape this exporter emits: `[-] [coef] var (+|- [coef] var)*`.
fn parse_expr(
    tokens: &[&str],
    line: usize,
    vars: &mut std::collections::BTreeSet<String>,
) -> Result<(), LpError> {
    let bad = |message: &str| LpError::Malformed {
        line,
        message: message.to_string(),
    };
    let mut k = 0;
    let mut terms = 0;
    while k < tokens.len() {
        if tokens[k] == "+" || tokens[k] == "-" {
            if terms == 0 && tokens[k] == "+" {
                return Err(bad("expression starts with +"));
            }
            k += 1;
        } else if terms > 0 {
            return Err(bad("missing +/- between terms"));
        }
        if k < tokens.len() && tokens[k].parse::<f64>().is_ok() {
            k += 1;
        }
        if k >= tokens.len() || !is_name(tokens[k]) {
            return Err(bad("expected a variable name"));
        }
        vars.insert(tokens[k].to_string());
        k += 1;
        terms += 1;
    }
    if terms == 0 {
        return Err(bad("empty expression"));
    }
    Ok(())
}

/// Validate the LP text this exporter produces: section order, row grammar,
/// unique row names, numeric right-hand sides, and closure of variable
/// references (everything declared in Bounds/Binaries must occur in a row or
/// the objective). Returns the counts the format documentation predicts.
pub fn check_lp(text: &str) -> Result<LpSummary, LpError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        Preamble,
        Objective,
        Rows,
        Bounds,
        Binaries,
        End,
    }
    let mut section = Section::Preamble;
    let mut vars = std::collections::BTreeSet::new();
    let mut declared: Vec<(usize, String)> = Vec::new();
    let mut row_names = std::collections::BTreeSet::new();
    let mut binaries = 0usize;
    let mut rows = 0usize;
    let mut saw_objective = false;

    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        let bad = |message: String| LpError::Malformed { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('\\') {
            continue;
        }
        if section == Section::End {
            return Err(bad("content after End".into()));
        }
        match trimmed {
            "Maximize" | "Minimize" if section == Section::Preamble => {
                section = Section::Objective;
                continue;
            }
            "Subject To" if section == Section::Objective => {
                section = Section::Rows;
                continue;
            }
            "Bounds" if section == Section::Rows => {
                section = Section::Bounds;
                continue;
            }
            "Binaries" if matches!(section, Section::Rows | Section::Bounds) => {
                section = Section::Binaries;
                continue;
            }
            "End" if matches!(section, Section::Rows | Section::Bounds | Section::Binaries) => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Preamble => return Err(bad("expected Maximize".into())),
            Section::Objective => {
                let rest = trimmed
                    .split_once(':')
                    .ok_or_else(|| bad("objective needs a label".into()))?
                    .1;
                let tokens: Vec<&str> = rest.split_whitespace().collect();
                parse_expr(&tokens, line, &mut vars)?;
                saw_objective = true;
            }
            Section::Rows => {
                let (name, rest) = trimmed
                    .split_once(':')
                    .ok_or_else(|| bad("row needs a name".into()))?;
                let name = name.trim();
                if !is_name(name) {
                    return Err(bad(format!("bad row name {name:?}")));
                }
                if !row_names.insert(name.to_string()) {
                    return Err(LpError::DuplicateRow {
                        line,
                        name: name.to_string(),
                    });
                }
                let tokens: Vec<&str> = rest.split_whitespace().collect();
                let sense_at = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "="))
                    .ok_or_else(|| bad("row has no <=, >= or =".into()))?;
                if sense_at + 2 != tokens.len() {
                    return Err(bad("row needs exactly one right-hand side".into()));
                }
                let rhs: f64 = tokens[sense_at + 1]
                    .parse()
                    .map_err(|_| bad("right-hand side is not a number".into()))?;
                if !rhs.is_finite() {
                    return Err(bad("right-hand side is not finite".into()));
                }
                parse_expr(&tokens[..sense_at], line, &mut vars)?;
                rows += 1;
            }
            Section::Bounds => {
                let tokens: Vec<&str> = trimmed.split_whitespace().collect();
                let ok = match tokens.as_slice() {
                    [v, "free"] => is_name(v),
                    [v, "<=" | ">=" | "=", num] => is_name(v) && num.parse::<f64>().is_ok(),
                    [lo, "<=", v, "<=", hi] => {
                        lo.parse::<f64>().is_ok() && is_name(v) && hi.parse::<f64>().is_ok()
                    }
                    _ => false,
                };
                if !ok {
                    return Err(bad("unrecognized bound".into()));
                }
                let v = if tokens.len() == 5 {
                    tokens[2]
                } else {
                    tokens[0]
                };
                declared.push((line, v.to_string()));
            }
            Section::Binaries => {
                for tok in trimmed.split_whitespace() {
                    if !is_name(tok) {
                        return Err(bad(format!("bad binary name {tok:?}")));
                    }
                    declared.push((line, tok.to_string()));
                    binaries += 1;
                }
            }
            Section::End => unreachable!(),
        }
    }
    if !saw_objective {
        return Err(LpError::MissingSection("Maximize"));
    }
    if section != Section::End {
        return Err(LpError::MissingSection("End"));
    }
    for (line, name) in declared {
        if !vars.contains(&name) {
            return Err(LpError::UnusedVariable { line, name });
        }
    }
    Ok(LpSummary {
        variables: vars.len(),
        binaries,
        rows,
    })
}
