//! Symbolic fusion of per-response verdicts.
//!
//! Verdicts are first collapsed per capability (majority, ties -> Unclear,
//! no verdicts -> absent), then matched against an ordered rule list. The
//! bundled rule set gives the detector priority: a detector Yes wins, a
//! detector No needs every text tool to agree, anything else is Unclear.
//! Rule sets are data and can be loaded from a file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FusionError, RegistryError, RuleError};
use crate::types::{Capability, PerResponseVerdict, SessionTrace, ToolDescriptor, Verdict};

const DEFAULT_RULES: &str = include_str!("../resources/default_rules.json");
const MAJORITY_RULES: &str = include_str!("../resources/majority_rules.json");

/// Collapsed verdict of one capability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Yes,
    No,
    Unclear,
    Absent,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Yes, Slot::No, Slot::Unclear, Slot::Absent];
}

impl From<Verdict> for Slot {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Yes => Slot::Yes,
            Verdict::No => Slot::No,
            Verdict::Unclear => Slot::Unclear,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::Yes => "yes",
            Slot::No => "no",
            Slot::Unclear => "unclear",
            Slot::Absent => "absent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleVerdict {
    Yes,
    No,
    Unclear,
}

impl From<RuleVerdict> for Verdict {
    fn from(v: RuleVerdict) -> Self {
        match v {
            RuleVerdict::Yes => Verdict::Yes,
            RuleVerdict::No => Verdict::No,
            RuleVerdict::Unclear => Verdict::Unclear,
        }
    }
}

/// `when` maps a capability to the slot values it accepts; a capability not
/// listed is a wildcard. Rules fire first-match in list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRule {
    #[serde(default)]
    pub when: BTreeMap<Capability, Vec<Slot>>,
    pub then: RuleVerdict,
}

impl FusionRule {
    pub fn matches(&self, slots: &BTreeMap<Capability, Slot>) -> bool {
        self.when.iter().all(|(cap, accepted)| {
            let slot = slots.get(cap).copied().unwrap_or(Slot::Absent);
            accepted.contains(&slot)
        })
    }

    pub fn is_catch_all(&self) -> bool {
        self.when.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Rules,
    /// Plain majority over all verdicts; ties are Unclear.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: String,
    pub name: String,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<FusionRule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_json(DEFAULT_RULES).expect("bundled rule set is valid")
    }
}

impl RuleSet {
    pub fn majority() -> RuleSet {
        RuleSet::from_json(MAJORITY_RULES).expect("bundled rule set is valid")
    }

    pub fn from_json(text: &str) -> Result<RuleSet, ConfigError> {
        let set: RuleSet = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<rules>".into(),
            message: e.to_string(),
        })?;
        set.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<RuleSet, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RuleSet::from_json(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Checks that a catch-all closes the list and that every slot assignment
    /// (excluding all-absent) is matched by some rule.
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.strategy == Strategy::Majority {
            return Ok(());
        }
        let last = self.rules.last().ok_or(RuleError::Empty)?;
        if !last.is_catch_all() {
            return Err(RuleError::MissingCatchAll);
        }
        for assignment in all_slot_assignments() {
            if !self.rules.iter().any(|r| r.matches(&assignment)) {
                return Err(RuleError::NotTotal(format!("{assignment:?}")));
            }
        }
        Ok(())
    }

    /// Index of the first matching rule.
    pub fn first_match(&self, slots: &BTreeMap<Capability, Slot>) -> Option<usize> {
        self.rules.iter().position(|r| r.matches(slots))
    }
}

/// Every assignment of a slot value to each capability, except all-absent.
pub fn all_slot_assignments() -> Vec<BTreeMap<Capability, Slot>> {
    let mut out = Vec::new();
    for d in Slot::ALL {
        for c in Slot::ALL {
            for v in Slot::ALL {
                if d == Slot::Absent && c == Slot::Absent && v == Slot::Absent {
                    continue;
                }
                out.push(BTreeMap::from([
                    (Capability::Detect, d),
                    (Capability::Caption, c),
                    (Capability::Vqa, v),
                ]));
            }
        }
    }
    out
}

/// Majority over a list of verdicts; a tie for the top count is Unclear.
pub fn collapse(verdicts: &[Verdict]) -> Slot {
    if verdicts.is_empty() {
        return Slot::Absent;
    }
    let mut counts = [0usize; 3];
    for v in verdicts {
        counts[*v as usize] += 1;
    }
    let max = *counts.iter().max().unwrap();
    let winners: Vec<usize> = (0..3).filter(|i| counts[*i] == max).collect();
    if winners.len() == 1 {
        Slot::from(Verdict::ALL[winners[0]])
    } else {
        Slot::Unclear
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionOutcome {
    pub verdict: Verdict,
    pub slots: BTreeMap<Capability, Slot>,
    /// Index of the rule that fired; `None` under the majority strategy.
    pub rule: Option<usize>,
}

fn capability_of(tools: &[ToolDescriptor], id: &str) -> Result<Capability, RegistryError> {
    tools
        .iter()
        .find(|t| t.id == id)
        .map(|t| t.capability)
        .ok_or_else(|| RegistryError::UnknownTool(id.to_string()))
}

pub fn fuse_explained(
    verdicts: &[PerResponseVerdict],
    tools: &[ToolDescriptor],
    rules: &RuleSet,
) -> Result<FusionOutcome, FusionError> {
    if verdicts.is_empty() {
        return Err(FusionError::NoVerdicts);
    }
    let mut by_cap: BTreeMap<Capability, Vec<Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_cap.entry(capability_of(tools, &v.tool_id)?).or_default().push(v.verdict);
    }
    let slots: BTreeMap<Capability, Slot> = Capability::ALL
        .iter()
        .map(|c| (*c, collapse(by_cap.get(c).map(Vec::as_slice).unwrap_or(&[]))))
        .collect();
    match rules.strategy {
        Strategy::Majority => {
            let all: Vec<Verdict> = verdicts.iter().map(|v| v.verdict).collect();
            let verdict = match collapse(&all) {
                Slot::Yes => Verdict::Yes,
                Slot::No => Verdict::No,
                _ => Verdict::Unclear,
            };
            Ok(FusionOutcome {
                verdict,
                slots,
                rule: None,
            })
        }
        Strategy::Rules => {
            // validate() guarantees a catch-all, but a hand-built set may skip it
            let (verdict, rule) = match rules.first_match(&slots) {
                Some(i) => (rules.rules[i].then.into(), Some(i)),
                None => (Verdict::Unclear, None),
            };
            Ok(FusionOutcome { verdict, slots, rule })
        }
    }
}

/// Collective decision over one evidence pool.
pub fn fuse(
    verdicts: &[PerResponseVerdict],
    tools: &[ToolDescriptor],
    rules: &RuleSet,
) -> Result<Verdict, FusionError> {
    fuse_explained(verdicts, tools, rules).map(|o| o.verdict)
}

/// Unanimous and decisive. An empty pool is not agreement.
pub fn is_consistent(verdicts: &[PerResponseVerdict]) -> bool {
    let Some(first) = verdicts.first() else {
        return false;
    };
    first.verdict.is_decisive() && verdicts.iter().all(|v| v.verdict == first.verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackWeighting {
    #[default]
    Unweighted,
    /// Weight 1/(1+trust_rank), ranks above 15 clamp to 15.
    TrustRank,
}

const WEIGHT_SCALE: u64 = 720_720; // lcm(1..=16)

fn weight(weighting: FallbackWeighting, tools: &[ToolDescriptor], tool_id: &str) -> u64 {
    match weighting {
        FallbackWeighting::Unweighted => 1,
        FallbackWeighting::TrustRank => {
            let rank = tools
                .iter()
                .find(|t| t.id == tool_id)
                .map(|t| t.trust_rank.min(15))
                .unwrap_or(15);
            WEIGHT_SCALE / (1 + rank as u64)
        }
    }
}

/// Majority over decisive verdicts; tie or no decisive votes gives Unclear.
pub fn majority_vote<'a>(
    history: impl IntoIterator<Item = &'a PerResponseVerdict>,
    tools: &[ToolDescriptor],
    weighting: FallbackWeighting,
) -> Verdict {
    let (mut yes, mut no) = (0u64, 0u64);
    for v in history {
        match v.verdict {
            Verdict::Yes => yes += weight(weighting, tools, &v.tool_id),
            Verdict::No => no += weight(weighting, tools, &v.tool_id),
            Verdict::Unclear => {}
        }
    }
    match yes.cmp(&no) {
        std::cmp::Ordering::Greater => Verdict::Yes,
        std::cmp::Ordering::Less => Verdict::No,
        std::cmp::Ordering::Equal => Verdict::Unclear,
    }
}

/// Final decision for a run that exhausted its iterations: a vote over the
/// bootstrap verdicts and every iteration's verdicts.
pub fn fallback_from_history(trace: &SessionTrace) -> Verdict {
    let cfg = &trace.config_snapshot;
    majority_vote(trace.history(), &cfg.tools, cfg.fallback_weighting)
}
