// SPDX-License-Identifier: Apache-2.0

//! Evaluating traces against profiles, CVE mitigation scoring and rule
//! ordering.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::FlagTable;
use crate::profile::{SeccompProfile, SyscallTable};
use crate::{Error, Result};

/// One observed syscall. Arguments the tracer could not read as integers
/// (pointers) are `null`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyscallEvent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nr: Option<i64>,
    #[serde(default)]
    pub args: Vec<Option<i64>>,
}

impl SyscallEvent {
    pub fn named(name: &str, args: Vec<Option<i64>>) -> Self {
        SyscallEvent {
            name: Some(name.to_string()),
            nr: None,
            args,
        }
    }

    pub fn numbered(nr: i64, args: Vec<Option<i64>>) -> Self {
        SyscallEvent {
            name: None,
            nr: Some(nr),
            args,
        }
    }

    /// Fills in whichever of name and number is missing.
    pub fn resolved(&self, table: &SyscallTable) -> SyscallEvent {
        let mut ev = self.clone();
        match (&ev.name, ev.nr) {
            (Some(n), None) => ev.nr = table.number_of(n),
            (None, Some(nr)) => ev.name = table.name_of(nr).map(str::to_string),
            _ => {}
        }
        ev
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<SyscallEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ev: SyscallEvent = serde_json::from_str(line).map_err(|e| Error::TraceParse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if ev.name.is_none() && ev.nr.is_none() {
            return Err(Error::TraceParse {
                line: i + 1,
                reason: "event has neither name nor nr".into(),
            });
        }
        if ev.args.len() > 6 {
            return Err(Error::TraceParse {
                line: i + 1,
                reason: "more than six arguments".into(),
            });
        }
        out.push(ev);
    }
    Ok(out)
}

pub fn serialize_trace(events: &[SyscallEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "camelCase")]
pub enum DenyReason {
    /// No rule for this syscall; the default action applies.
    NoRule,
    /// A filter on this argument rejected the value.
    ArgFilter { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "camelCase")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// Decides one event. Events carrying a number match rules by number,
/// name-only events match by name.
pub fn evaluate(profile: &SeccompProfile, event: &SyscallEvent) -> Decision {
    let rule = match (event.nr, &event.name) {
        (Some(nr), _) => profile.rule_for(nr),
        (None, Some(name)) => profile.rule_named(name),
        (None, None) => None,
    };
    let Some(rule) = rule else {
        return Decision::Deny(DenyReason::NoRule);
    };
    match rule.rejecting_index(&event.args) {
        None => Decision::Allow,
        Some(index) => Decision::Deny(DenyReason::ArgFilter { index }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeniedEvent {
    pub index: usize,
    pub event: SyscallEvent,
    pub reason: DenyReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceReport {
    pub allowed: usize,
    pub denied: usize,
    pub first_denied: Option<DeniedEvent>,
    pub decisions: Vec<Decision>,
}

pub fn simulate_trace(profile: &SeccompProfile, trace: &[SyscallEvent]) -> TraceReport {
    let decisions: Vec<Decision> = trace.par_iter().map(|e| evaluate(profile, e)).collect();
    let first_denied = decisions.iter().enumerate().find_map(|(i, d)| match d {
        Decision::Deny(reason) => Some(DeniedEvent {
            index: i,
            event: trace[i].clone(),
            reason: reason.clone(),
        }),
        Decision::Allow => None,
    });
    let allowed = decisions.iter().filter(|d| d.is_allow()).count();
    TraceReport {
        allowed,
        denied: decisions.len() - allowed,
        first_denied,
        decisions,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgCondition {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CveSyscall {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<ArgCondition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CveEntry {
    pub id: String,
    pub syscalls: Vec<CveSyscall>,
}

pub fn parse_cve_map(text: &str) -> Result<Vec<CveEntry>> {
    let entries: Vec<CveEntry> = serde_json::from_str(text).map_err(|e| Error::Schema(format!("CVE map: {e}")))?;
    if let Some(e) = entries.iter().find(|e| e.syscalls.is_empty()) {
        return Err(Error::Schema(format!("{} lists no syscalls", e.id)));
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MitigationKind {
    SyscallBlock,
    ArgBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Mitigated {
    pub id: String,
    pub by: MitigationKind,
    /// The syscall whose rule blocks the exploit path.
    pub syscall: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CveScore {
    pub mitigated: Vec<Mitigated>,
    pub by_syscall_block: usize,
    pub by_arg_block: usize,
    pub diagnostics: Vec<String>,
}

/// Classifies every CVE as mitigated by a missing syscall, mitigated by an
/// argument filter, or not mitigated. Entries naming syscalls or flags the
/// tables do not know are skipped with a diagnostic.
pub fn score_cve(profile: &SeccompProfile, cves: &[CveEntry], table: &SyscallTable, flags: &FlagTable) -> CveScore {
    let mut score = CveScore::default();
    'cve: for cve in cves {
        let mut resolved = Vec::new();
        for s in &cve.syscalls {
            let Some(nr) = table.number_of(&s.name) else {
                score
                    .diagnostics
                    .push(format!("UnknownSyscallInCveMap({}, {})", cve.id, s.name));
                continue 'cve;
            };
            let cond = match &s.arg {
                None => None,
                Some(c) => {
                    let v = match (&c.flag, c.value) {
                        (_, Some(v)) => v,
                        (Some(f), None) => match flags.lookup(f) {
                            Some(v) => v,
                            None => {
                                score
                                    .diagnostics
                                    .push(format!("{}: unknown flag `{f}`; entry skipped", cve.id));
                                continue 'cve;
                            }
                        },
                        (None, None) => {
                            score
                                .diagnostics
                                .push(format!("{}: argument condition without a value", cve.id));
                            continue 'cve;
                        }
                    };
                    Some((c.index, v))
                }
            };
            resolved.push((s.name.clone(), nr, cond));
        }
        if let Some((name, _, _)) = resolved.iter().find(|(_, nr, _)| profile.rule_for(*nr).is_none()) {
            score.mitigated.push(Mitigated {
                id: cve.id.clone(),
                by: MitigationKind::SyscallBlock,
                syscall: name.clone(),
            });
            continue;
        }
        let arg_blocked = resolved.iter().find(|(_, nr, cond)| {
            let Some((index, v)) = cond else { return false };
            let rule = profile.rule_for(*nr).expect("checked above");
            // Only the conditioned argument matters here.
            let filters_on_index = rule.args.iter().filter(|f| f.index == *index);
            let mut any = false;
            let mut accepted = false;
            for f in filters_on_index {
                any = true;
                accepted |= f.accepts(*v);
            }
            any && !accepted
        });
        if let Some((name, _, _)) = arg_blocked {
            score.mitigated.push(Mitigated {
                id: cve.id.clone(),
                by: MitigationKind::ArgBlock,
                syscall: name.clone(),
            });
        }
    }
    score.by_syscall_block = score
        .mitigated
        .iter()
        .filter(|m| m.by == MitigationKind::SyscallBlock)
        .count();
    score.by_arg_block = score.mitigated.len() - score.by_syscall_block;
    score
}

/// Syscall number -> observed count.
pub type FrequencyHistogram = BTreeMap<i64, u64>;

pub fn histogram(trace: &[SyscallEvent], table: &SyscallTable) -> FrequencyHistogram {
    let mut h = FrequencyHistogram::new();
    for e in trace {
        if let Some(nr) = e.resolved(table).nr {
            *h.entry(nr).or_default() += 1;
        }
    }
    h
}

/// Reorders rules hottest first, ties by ascending syscall number.
pub fn optimize_order(profile: &SeccompProfile, freq: &FrequencyHistogram) -> SeccompProfile {
    let mut out = profile.clone();
    out.rules.sort_by(|a, b| {
        let fa = freq.get(&a.syscall).copied().unwrap_or(0);
        let fb = freq.get(&b.syscall).copied().unwrap_or(0);
        fb.cmp(&fa).then(a.syscall.cmp(&b.syscall))
    });
    out
}

/// Syscall names of the CVE map absent from the table.
pub fn unknown_cve_syscalls(cves: &[CveEntry], table: &SyscallTable) -> BTreeSet<String> {
    cves.iter()
        .flat_map(|c| &c.syscalls)
        .filter(|s| table.number_of(&s.name).is_none())
        .map(|s| s.name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Arch, ArgFilter, DefaultAction, FilterOp, Rule, RuleAction};

    fn socket_only() -> SeccompProfile {
        SeccompProfile {
            arch: Arch::A64,
            default_action: DefaultAction::Errno,
            rules: vec![Rule {
                syscall: 198,
                name: "socket".into(),
                action: RuleAction::Allow,
                args: vec![ArgFilter {
                    index: 0,
                    op: FilterOp::InSet,
                    values: vec![2],
                    mask: None,
                }],
            }],
        }
    }

    #[test]
    fn evaluate_examples() {
        let p = socket_only();
        let ok = SyscallEvent::named("socket", vec![Some(2), Some(1), Some(6)]);
        assert_eq!(evaluate(&p, &ok), Decision::Allow);
        let packet = SyscallEvent::named("socket", vec![Some(17), Some(3), Some(0)]);
        assert_eq!(
            evaluate(&p, &packet),
            Decision::Deny(DenyReason::ArgFilter { index: 0 })
        );
        let other = SyscallEvent::named("openat", vec![]);
        assert_eq!(evaluate(&p, &other), Decision::Deny(DenyReason::NoRule));
        assert_eq!(
            evaluate(&p, &SyscallEvent::numbered(198, vec![Some(2)])),
            Decision::Allow
        );
    }

    #[test]
    fn empty_trace_report() {
        let r = simulate_trace(&socket_only(), &[]);
        assert_eq!((r.allowed, r.denied, r.first_denied), (0, 0, None));
    }

    #[test]
    fn first_denied_is_earliest() {
        let trace = vec![
            SyscallEvent::named("socket", vec![Some(2)]),
            SyscallEvent::named("socket", vec![Some(17)]),
            SyscallEvent::named("read", vec![]),
        ];
        let r = simulate_trace(&socket_only(), &trace);
        assert_eq!(r.allowed, 1);
        assert_eq!(r.denied, 2);
        assert_eq!(r.first_denied.unwrap().index, 1);
    }

    #[test]
    fn trace_parse_errors_carry_lines() {
        let err = parse_trace("{\"name\":\"read\",\"args\":[0]}\nnot json\n").unwrap_err();
        assert!(matches!(err, Error::TraceParse { line: 2, .. }));
        let evs = parse_trace("{\"name\":\"read\",\"args\":[0,null,16]}\n").unwrap();
        assert_eq!(evs[0].args, vec![Some(0), None, Some(16)]);
        assert_eq!(parse_trace(&serialize_trace(&evs)).unwrap(), evs);
    }

    #[test]
    fn cve_scoring() {
        let table = SyscallTable::builtin(Arch::A64);
        let flags = FlagTable::builtin(Arch::A64).unwrap();
        let cves = parse_cve_map(
            r#"[{"id":"CVE-2017-7308","syscalls":[{"name":"socket","arg":{"index":0,"flag":"AF_PACKET"}},{"name":"setsockopt"}]},
                {"id":"X-1","syscalls":[{"name":"socket","arg":{"index":0,"flag":"AF_PACKET"}}]},
                {"id":"X-2","syscalls":[{"name":"socket"}]},
                {"id":"X-3","syscalls":[{"name":"no_such_call"}]}]"#,
        )
        .unwrap();
        let s = score_cve(&socket_only(), &cves, &table, &flags);
        assert_eq!(s.mitigated.len(), 2);
        assert_eq!(s.mitigated[0].by, MitigationKind::SyscallBlock);
        assert_eq!(s.mitigated[0].syscall, "setsockopt");
        assert_eq!(s.mitigated[1].by, MitigationKind::ArgBlock);
        assert_eq!(s.by_syscall_block + s.by_arg_block, s.mitigated.len());
        assert_eq!(s.diagnostics.len(), 1);
        assert!(score_cve(&socket_only(), &[], &table, &flags).mitigated.is_empty());
    }

    #[test]
    fn optimize_order_ties_by_number() {
        let mut p = socket_only();
        p.rules.push(Rule {
            syscall: 63,
            name: "read".into(),
            action: RuleAction::Allow,
            args: vec![],
        });
        let uniform = optimize_order(&p, &FrequencyHistogram::new());
        assert_eq!(uniform.rules[0].syscall, 63);
        let hot = optimize_order(&p, &[(198, 10), (63, 1)].into());
        assert_eq!(hot.rules[0].syscall, 198);
    }
}
