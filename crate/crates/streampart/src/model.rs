//! Domain types for the streaming-application model and the JSON problem
//! format: platform, processes, channels, assignments, plus parsing and
//! validation diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_integer::Integer;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Exact non-negative rational, the value type of every rate and bandwidth
/// in the problem file. Stored normalized (gcd(num, den) = 1, den >= 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: u64,
    den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self, RationalError> {
        if den == 0 {
            return Err(RationalError::ZeroDenominator);
        }
        let g = num.gcd(&den);
        Ok(Rational {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    /// a/b + c/d over u128, reduced; None when the sum leaves u64 range.
    pub fn checked_add(&self, other: &Rational) -> Option<Rational> {
        let num = (self.num as u128)
            .checked_mul(other.den as u128)?
            .checked_add((other.num as u128).checked_mul(self.den as u128)?)?;
        let den = (self.den as u128) * (other.den as u128);
        Self::from_u128(num, den)
    }

    /// (a/b) / (c/d); None when c = 0 or the quotient leaves u64 range.
    pub fn checked_div(&self, other: &Rational) -> Option<Rational> {
        if other.num == 0 {
            return None;
        }
        let num = (self.num as u128) * (other.den as u128);
        let den = (self.den as u128) * (other.num as u128);
        Self::from_u128(num, den)
    }

    pub(crate) fn from_u128(num: u128, den: u128) -> Option<Rational> {
        debug_assert!(den != 0);
        let g = num.gcd(&den);
        Some(Rational {
            num: u64::try_from(num / g).ok()?,
            den: u64::try_from(den / g).ok()?,
        })
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RationalError {
    #[error("denominator must not be zero")]
    ZeroDenominator,
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            serializer.serialize_u64(self.num)
        } else {
            let mut m = serializer.serialize_map(Some(2))?;
            use serde::ser::SerializeMap;
            m.serialize_entry("num", &self.num)?;
            m.serialize_entry("den", &self.den)?;
            m.end()
        }
    }
}

struct RationalVisitor;

impl<'de> Visitor<'de> for RationalVisitor {
    type Value = Rational;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a non-negative integer or an exact {\"num\", \"den\"} pair")
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
        Ok(Rational::integer(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
        u64::try_from(v)
            .map(Rational::integer)
            .map_err(|_| E::custom("rational values must be non-negative"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
        // Integral floats such as 4.0 are exact; anything else must be
        // written as an explicit integer pair.
        if v >= 0.0 && v.fract() == 0.0 && v <= 2f64.powi(53) {
            Ok(Rational::integer(v as u64))
        } else {
            Err(E::custom(
                "non-integer number: write rationals as {\"num\": N, \"den\": D}",
            ))
        }
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Rational, A::Error> {
        let mut num: Option<u64> = None;
        let mut den: Option<u64> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "num" => num = Some(map.next_value()?),
                "den" => den = Some(map.next_value()?),
                other => return Err(de::Error::unknown_field(other, &["num", "den"])),
            }
        }
        let num = num.ok_or_else(|| de::Error::missing_field("num"))?;
        let den = den.ok_or_else(|| de::Error::missing_field("den"))?;
        Rational::new(num, den).map_err(|e| de::Error::custom(e.to_string()))
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(RationalVisitor)
    }
}

/// A rate or bandwidth budget that may be explicitly unlimited. The file
/// representation of the unlimited case is the string `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Finite(Rational),
    Unbounded,
}

impl Limit {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Limit::Unbounded)
    }

    pub fn finite(&self) -> Option<&Rational> {
        match self {
            Limit::Finite(r) => Some(r),
            Limit::Unbounded => None,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(r) => write!(f, "{r}"),
            Limit::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Limit::Finite(r) => r.serialize(serializer),
            Limit::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

struct LimitVisitor;

impl<'de> Visitor<'de> for LimitVisitor {
    type Value = Limit;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a rational value or the string \"unbounded\"")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Limit, E> {
        if v == "unbounded" {
            Ok(Limit::Unbounded)
        } else {
            Err(E::custom(format!(
                "unknown sentinel {v:?}: the only string value is \"unbounded\""
            )))
        }
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Limit, E> {
        RationalVisitor.visit_u64(v).map(Limit::Finite)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Limit, E> {
        RationalVisitor.visit_i64(v).map(Limit::Finite)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Limit, E> {
        RationalVisitor.visit_f64(v).map(Limit::Finite)
    }

    fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Limit, A::Error> {
        RationalVisitor.visit_map(map).map(Limit::Finite)
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(LimitVisitor)
    }
}

/// Per-kind FPGA resource amounts, keyed by resource-kind name.
pub type ResourceVector = BTreeMap<String, u64>;

/// Hardware implementation parameters of one process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwProfile {
    /// Firings per second of a single replica (R = 1).
    pub base_throughput: Rational,
    /// Resources paid once when the process is placed in hardware.
    #[serde(default)]
    pub resource_fixed: ResourceVector,
    /// Resources paid per replica.
    #[serde(default)]
    pub resource_per_replica: ResourceVector,
    /// Largest admissible replication factor.
    pub r_max: u32,
    /// Optional per-R throughput table overriding the linear R * base model;
    /// entry r-1 is the throughput at replication factor r.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput_table: Option<Vec<Rational>>,
}

impl HwProfile {
    /// Firings per second at replication factor `r` (1-based).
    pub fn throughput_at(&self, r: u32) -> Rational {
        if let Some(table) = &self.throughput_table {
            if let Some(v) = table.get(r as usize - 1) {
                return *v;
            }
        }
        Rational::new(
            self.base_throughput.num.saturating_mul(u64::from(r)),
            self.base_throughput.den,
        )
        .expect("denominator is nonzero")
    }

    /// Resource units of kind `kind` consumed at replication factor `r`.
    pub fn resource_at(&self, kind: &str, r: u32) -> u64 {
        let fixed = self.resource_fixed.get(kind).copied().unwrap_or(0);
        let per = self.resource_per_replica.get(kind).copied().unwrap_or(0);
        fixed.saturating_add(per.saturating_mul(u64::from(r)))
    }
}

/// Placement policy of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    PinnedSw,
    PinnedHw,
    Free,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::PinnedSw => f.write_str("pinned_sw"),
            Placement::PinnedHw => f.write_str("pinned_hw"),
            Placement::Free => f.write_str("free"),
        }
    }
}

/// One process of the dataflow graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub id: String,
    pub placement: Placement,
    /// Firings per second on one dedicated CPU core, or unbounded for
    /// zero-cost environment endpoints.
    pub sw_throughput: Limit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hw_profile: Option<HwProfile>,
}

/// One directed streaming channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub id: String,
    pub producer: String,
    pub consumer: String,
    /// Tokens produced per producer firing.
    pub prod_rate: u64,
    /// Tokens consumed per consumer firing.
    pub cons_rate: u64,
    pub token_bytes: u64,
    #[serde(default = "default_unbounded")]
    pub bandwidth_cap: Limit,
    /// Whether the effective bandwidth widens with replication when both
    /// endpoints are in hardware.
    #[serde(default = "default_true")]
    pub scale_with_replication: bool,
}

fn default_unbounded() -> Limit {
    Limit::Unbounded
}

fn default_true() -> bool {
    true
}

/// The execution platform shared by all processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    /// CPU cores' worth of compute shared by all software processes.
    pub cpu_cores: Rational,
    pub resource_kinds: Vec<String>,
    pub fpga_capacity: ResourceVector,
    pub pcie_bandwidth: Limit,
}

/// A complete problem instance: platform model plus dataflow graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub platform: PlatformSpec,
    pub processes: Vec<ProcessSpec>,
    pub channels: Vec<ChannelSpec>,
    /// Process whose firing rate defines the reported throughput.
    pub sink: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl ProblemSpec {
    pub fn process(&self, id: &str) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| p.id == id)
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.id == id)
    }
}

/// Per-process placement decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlacementChoice {
    Sw,
    /// Hardware with the given replication factor.
    Hw(u32),
}

impl fmt::Display for PlacementChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementChoice::Sw => f.write_str("sw"),
            PlacementChoice::Hw(r) => write!(f, "hw({r})"),
        }
    }
}

impl Serialize for PlacementChoice {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PlacementChoice::Sw => serializer.serialize_str("sw"),
            PlacementChoice::Hw(r) => {
                use serde::ser::SerializeMap;
                let mut m = serializer.serialize_map(Some(1))?;
                m.serialize_entry("hw", r)?;
                m.end()
            }
        }
    }
}

struct PlacementChoiceVisitor;

impl<'de> Visitor<'de> for PlacementChoiceVisitor {
    type Value = PlacementChoice;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("\"sw\" or {\"hw\": R}")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<PlacementChoice, E> {
        if v == "sw" {
            Ok(PlacementChoice::Sw)
        } else {
            Err(E::custom(format!(
                "unknown placement {v:?}: expected \"sw\""
            )))
        }
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<PlacementChoice, A::Error> {
        let mut r: Option<u32> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "hw" => r = Some(map.next_value()?),
                other => return Err(de::Error::unknown_field(other, &["hw"])),
            }
        }
        let r = r.ok_or_else(|| de::Error::missing_field("hw"))?;
        Ok(PlacementChoice::Hw(r))
    }
}

impl<'de> Deserialize<'de> for PlacementChoice {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(PlacementChoiceVisitor)
    }
}

/// Complete placement decision for a problem: every process id maps to
/// software or hardware-with-replication.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub BTreeMap<String, PlacementChoice>);

impl Assignment {
    pub fn get(&self, id: &str) -> Option<PlacementChoice> {
        self.0.get(id).copied()
    }

    pub fn set(&mut self, id: impl Into<String>, choice: PlacementChoice) {
        self.0.insert(id.into(), choice);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PlacementChoice)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, PlacementChoice)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (String, PlacementChoice)>>(iter: T) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("problem file: {message} (line {line}, column {column})")]
    Json {
        message: String,
        line: usize,
        column: usize,
    },
    #[error("duplicate process id {0:?}")]
    DuplicateProcess(String),
    #[error("duplicate channel id {0:?}")]
    DuplicateChannel(String),
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError::Json {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessFile {
    id: String,
    #[serde(default)]
    placement: Option<Placement>,
    sw_throughput: Limit,
    #[serde(default)]
    hw_profile: Option<HwProfile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    platform: PlatformSpec,
    processes: Vec<ProcessFile>,
    #[serde(default)]
    channels: Vec<ChannelSpec>,
    sink: String,
    #[serde(default)]
    comment: Option<String>,
}

/// Parse a problem file, filling documented defaults: a missing placement
/// becomes `free` when a hardware profile is present and `pinned_sw`
/// otherwise; missing bandwidth caps are unbounded.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ParseError> {
    let file: ProblemFile = serde_json::from_str(text)?;
    let processes: Vec<ProcessSpec> = file
        .processes
        .into_iter()
        .map(|p| {
            let placement = p.placement.unwrap_or(if p.hw_profile.is_some() {
                Placement::Free
            } else {
                Placement::PinnedSw
            });
            ProcessSpec {
                id: p.id,
                placement,
                sw_throughput: p.sw_throughput,
                hw_profile: p.hw_profile,
            }
        })
        .collect();

    let mut seen = BTreeSet::new();
    for p in &processes {
        if !seen.insert(p.id.clone()) {
            return Err(ParseError::DuplicateProcess(p.id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for c in &file.channels {
        if !seen.insert(c.id.clone()) {
            return Err(ParseError::DuplicateChannel(c.id.clone()));
        }
    }

    Ok(ProblemSpec {
        platform: file.platform,
        processes,
        channels: file.channels,
        sink: file.sink,
        comment: file.comment,
    })
}

/// Canonical serialization; `parse_problem(serialize_problem(p)) == p`.
pub fn serialize_problem(p: &ProblemSpec) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("problem serialization cannot fail");
    s.push('\n');
    s
}

pub fn parse_assignment(text: &str) -> Result<Assignment, ParseError> {
    Ok(serde_json::from_str(text)?)
}

pub fn serialize_assignment(a: &Assignment) -> String {
    let mut s = serde_json::to_string_pretty(a).expect("assignment serialization cannot fail");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Where the finding applies, e.g. `process B` or `channel c1`.
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    fn error(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        }
    }

    fn warning(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Check every structural invariant of a problem. Returns diagnostics; the
/// problem is valid iff none of them is an error.
pub fn validate_problem(p: &ProblemSpec) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut structural_ok = true;

    // Id uniqueness.
    let mut ids = BTreeSet::new();
    for proc in &p.processes {
        if !ids.insert(proc.id.as_str()) {
            diags.push(Diagnostic::error(
                format!("process {}", proc.id),
                format!("duplicate process id {:?}", proc.id),
            ));
            structural_ok = false;
        }
    }
    let mut cids = BTreeSet::new();
    for c in &p.channels {
        if !cids.insert(c.id.as_str()) {
            diags.push(Diagnostic::error(
                format!("channel {}", c.id),
                format!("duplicate channel id {:?}", c.id),
            ));
            structural_ok = false;
        }
    }

    // Platform.
    let kinds: BTreeSet<&str> = p
        .platform
        .resource_kinds
        .iter()
        .map(|s| s.as_str())
        .collect();
    if kinds.len() != p.platform.resource_kinds.len() {
        diags.push(Diagnostic::error("platform", "duplicate resource kind"));
    }
    if p.platform.cpu_cores.is_zero() {
        diags.push(Diagnostic::error("platform", "cpu_cores must be positive"));
    }
    for kind in &p.platform.resource_kinds {
        if !p.platform.fpga_capacity.contains_key(kind) {
            diags.push(Diagnostic::error(
                "platform",
                format!("fpga_capacity does not define resource kind {kind:?}"),
            ));
        }
    }
    for kind in p.platform.fpga_capacity.keys() {
        if !kinds.contains(kind.as_str()) {
            diags.push(Diagnostic::error(
                "platform",
                format!("fpga_capacity names undeclared resource kind {kind:?}"),
            ));
        }
    }
    if let Some(b) = p.platform.pcie_bandwidth.finite() {
        if b.is_zero() {
            diags.push(Diagnostic::error(
                "platform",
                "pcie_bandwidth must be positive",
            ));
        }
    }

    // Processes.
    for proc in &p.processes {
        let loc = format!("process {}", proc.id);
        match proc.placement {
            Placement::PinnedHw | Placement::Free => {
                if proc.hw_profile.is_none() {
                    diags.push(Diagnostic::error(
                        &loc,
                        format!("placement {} requires a hw_profile", proc.placement),
                    ));
                }
            }
            Placement::PinnedSw => {
                if proc.hw_profile.is_some() {
                    diags.push(Diagnostic::warning(
                        &loc,
                        "hw_profile on a pinned_sw process is ignored",
                    ));
                }
            }
        }
        match proc.sw_throughput {
            Limit::Unbounded => {
                if proc.placement != Placement::PinnedSw {
                    diags.push(Diagnostic::error(
                        &loc,
                        "unbounded sw_throughput is permitted only for pinned_sw processes",
                    ));
                }
            }
            Limit::Finite(r) => {
                if r.is_zero() {
                    diags.push(Diagnostic::error(&loc, "sw_throughput must be positive"));
                }
            }
        }
        if let Some(hw) = &proc.hw_profile {
            if hw.base_throughput.is_zero() {
                diags.push(Diagnostic::error(&loc, "base_throughput must be positive"));
            }
            if hw.r_max < 1 {
                diags.push(Diagnostic::error(&loc, "r_max must be at least 1"));
            }
            for key in hw
                .resource_fixed
                .keys()
                .chain(hw.resource_per_replica.keys())
            {
                if !kinds.contains(key.as_str()) {
                    diags.push(Diagnostic::error(
                        &loc,
                        format!("hw_profile names undeclared resource kind {key:?}"),
                    ));
                }
            }
            let all_zero = hw.resource_fixed.values().all(|&v| v == 0)
                && hw.resource_per_replica.values().all(|&v| v == 0);
            if all_zero && proc.placement != Placement::PinnedSw {
                diags.push(Diagnostic::warning(
                    &loc,
                    "hardware kernel requests no FPGA resources at all",
                ));
            }
            if let Some(table) = &hw.throughput_table {
                if table.len() != hw.r_max as usize {
                    diags.push(Diagnostic::error(
                        &loc,
                        format!(
                            "throughput_table has {} entries but r_max is {}",
                            table.len(),
                            hw.r_max
                        ),
                    ));
                }
                if table.iter().any(|t| t.is_zero()) {
                    diags.push(Diagnostic::error(
                        &loc,
                        "throughput_table entries must be positive",
                    ));
                }
            }
        }
    }

    // Channels.
    let proc_ix: HashMap<&str, usize> = p
        .processes
        .iter()
        .enumerate()
        .map(|(i, proc)| (proc.id.as_str(), i))
        .collect();
    for c in &p.channels {
        let loc = format!("channel {}", c.id);
        if c.producer == c.consumer {
            diags.push(Diagnostic::error(&loc, "self-loops are not allowed"));
            structural_ok = false;
        }
        for (role, id) in [("producer", &c.producer), ("consumer", &c.consumer)] {
            if !proc_ix.contains_key(id.as_str()) {
                diags.push(Diagnostic::error(
                    &loc,
                    format!("{role} names nonexistent process {id:?}"),
                ));
                structural_ok = false;
            }
        }
        if c.prod_rate == 0 {
            diags.push(Diagnostic::error(&loc, "prod_rate must be positive"));
            structural_ok = false;
        }
        if c.cons_rate == 0 {
            diags.push(Diagnostic::error(&loc, "cons_rate must be positive"));
            structural_ok = false;
        }
        if c.token_bytes == 0 {
            diags.push(Diagnostic::error(&loc, "token_bytes must be positive"));
        }
        if let Some(b) = c.bandwidth_cap.finite() {
            if b.is_zero() {
                diags.push(Diagnostic::error(&loc, "bandwidth_cap must be positive"));
            }
        }
    }

    // Sink.
    if !proc_ix.contains_key(p.sink.as_str()) {
        diags.push(Diagnostic::error(
            "sink",
            format!("sink names nonexistent process {:?}", p.sink),
        ));
        structural_ok = false;
    } else if p.channels.iter().any(|c| c.producer == p.sink) {
        diags.push(Diagnostic::error(
            "sink",
            format!("sink process {:?} must have no outgoing channels", p.sink),
        ));
    }
    if p.processes.is_empty() {
        diags.push(Diagnostic::error(
            "graph",
            "at least one process is required",
        ));
        structural_ok = false;
    }

    if !structural_ok {
        return diags;
    }

    // Graph shape: weak connectivity and acyclicity.
    let n = p.processes.len();
    let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for c in &p.channels {
        let u = proc_ix[c.producer.as_str()];
        let v = proc_ix[c.consumer.as_str()];
        undirected[u].push(v);
        undirected[v].push(u);
        succ[u].push(v);
        indeg[v] += 1;
    }

    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &undirected[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    if let Some(unreached) = (0..n).find(|&i| !seen[i]) {
        diags.push(Diagnostic::error(
            "graph",
            format!(
                "graph must be weakly connected: process {:?} is unreachable",
                p.processes[unreached].id
            ),
        ));
        return diags;
    }

    // Kahn's algorithm; leftovers lie on a cycle.
    let mut indeg = indeg;
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut removed = 0usize;
    while let Some(u) = queue.pop() {
        removed += 1;
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    if removed != n {
        let on_cycle = (0..n).find(|&i| indeg[i] > 0).expect("cycle node exists");
        diags.push(Diagnostic::error(
            "graph",
            format!(
                "graph must be acyclic (cycle through process {:?})",
                p.processes[on_cycle].id
            ),
        ));
        return diags;
    }

    // Rate balance.
    if let Err(e) = crate::rates::repetition_vector(p) {
        diags.push(Diagnostic::error("rates", e.to_string()));
    }

    diags
}
