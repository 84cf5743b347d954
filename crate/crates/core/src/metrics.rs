//! Metrics computed purely from event logs, plus gate evaluation.
//!
//! Nothing here looks at host state: a suite directory can be re-scored
//! long after the run and must agree with the summary written at run time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autonomy::TransitionReason;
use crate::eventlog::{EventKind, EventLogEntry};
use crate::message::Subsystem;
use crate::perception::FaultKind;
use crate::scenario::Gate;

/// Bound on how long PREPARE_TO_FIRE may outlive a fault or alarm.
pub const REVOCATION_BOUND_MS: u64 = 2000;

const IDLE: &str = "IDLE";
const PTF: &str = "PREPARE_TO_FIRE";
const DEGRADED: &str = "DEGRADED";
const HOLD_SAFE: &str = "HOLD_SAFE";

/// DEGRADED reason a health fault is expected to produce. Perturbation
/// leaves health intact and has none.
pub fn expected_reason(fault: FaultKind) -> Option<TransitionReason> {
    match fault {
        FaultKind::ThermalLoss => Some(TransitionReason::SubsystemLoss(Subsystem::Thermal)),
        FaultKind::RgbDetectorLoss => Some(TransitionReason::SubsystemLoss(Subsystem::Rgb)),
        FaultKind::TrackStarvation => Some(TransitionReason::TrackStarved),
        FaultKind::ThermoPerturbation => None,
    }
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p * n)`.
pub fn percentile_nearest_rank(values: &[u64], p: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = (p * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

pub fn mean(values: &[u64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<u64>() as f64 / values.len() as f64)
}

// ---------------------------------------------------------------------------
// Per-trial metrics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultLatency {
    pub unit: u16,
    pub fault: String,
    pub injected_ms: u64,
    pub degraded_ms: Option<u64>,
    pub latency_ms: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitOutcome {
    pub final_state: String,
    pub degraded_reasons: Vec<String>,
    /// In PREPARE_TO_FIRE when the first fault or alarm hit.
    pub armed_at_trigger: bool,
    pub revoked: bool,
    pub first_flag_ms: Option<u64>,
    pub hold_safe_ms: Option<u64>,
    pub hold_safe_latency_ms: Option<u64>,
    pub containment_ok: bool,
    pub unsafe_engagements: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub accepted: u64,
    pub flagged: u64,
    pub dropped: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: u32,
    pub crash: Option<String>,
    pub events: u64,
    pub latencies: Vec<FaultLatency>,
    pub units: BTreeMap<u16, UnitOutcome>,
    pub records: RecordCounts,
    /// Keyed `OUTCOME/REASON`.
    pub verdicts: BTreeMap<String, u64>,
    pub accepted_by_unit: BTreeMap<u16, u64>,
    pub handshakes_ok: BTreeMap<u16, u64>,
    pub handshakes_failed: u64,
    pub stale_display_events: u64,
    pub perturbed_frames: u64,
    pub fooled_frames: u64,
    pub wrong_class_tracks: u64,
    pub implausible_tracks: u64,
    pub unsafe_engagements: u64,
    pub containment_ok: bool,
    pub invariant_violations: Vec<String>,
}

impl TrialMetrics {
    pub fn verdict_count(&self, outcome: &str, reason: &str) -> u64 {
        self.verdicts.get(&format!("{outcome}/{reason}")).copied().unwrap_or(0)
    }

    pub fn final_state(&self, unit: u16) -> &str {
        self.units.get(&unit).map(|u| u.final_state.as_str()).unwrap_or(IDLE)
    }
}

fn unit_of_component(c: &str) -> Option<u16> {
    c.strip_prefix("unit-")?.parse().ok()
}

struct Transition {
    t: u64,
    from: String,
    to: String,
    reason: String,
    revocation: bool,
}

/// Time intervals `[start, end)` spent in PREPARE_TO_FIRE; an interval
/// still open at the end of the log never closes.
fn ptf_intervals(ts: &[Transition]) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut open = None;
    for t in ts {
        if t.to == PTF && open.is_none() {
            open = Some(t.t);
        } else if t.to != PTF {
            if let Some(a) = open.take() {
                out.push((a, t.t));
            }
        }
    }
    if let Some(a) = open {
        out.push((a, u64::MAX));
    }
    out
}

/// True when PREPARE_TO_FIRE holds at some instant after `trigger + bound`
/// and before the next restoration.
pub fn containment_violated(ptf: &[(u64, u64)], trigger: u64, restore: Option<u64>) -> bool {
    let from = trigger + REVOCATION_BOUND_MS + 1;
    let until = restore.unwrap_or(u64::MAX);
    ptf.iter().any(|&(a, b)| a.max(from) < b.min(until))
}

pub fn trial_metrics(trial: u32, log: &[EventLogEntry]) -> TrialMetrics {
    let mut m = TrialMetrics {
        trial,
        events: log.len() as u64,
        containment_ok: true,
        ..TrialMetrics::default()
    };

    let mut transitions: BTreeMap<u16, Vec<Transition>> = BTreeMap::new();
    let mut state: BTreeMap<u16, String> = BTreeMap::new();
    let mut triggers: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
    let mut armed_first_trigger: BTreeMap<u16, bool> = BTreeMap::new();
    let mut faults: Vec<(u64, u16, FaultKind)> = Vec::new();
    let mut wrong = BTreeSet::new();
    let mut implausible = BTreeSet::new();
    let mut last_t: BTreeMap<&str, u64> = BTreeMap::new();
    let mut staged: BTreeMap<(u16, u64), u64> = BTreeMap::new();
    let mut acked: BTreeMap<(u16, u64), u64> = BTreeMap::new();

    let mut note_trigger = |unit: u16, t: u64, state: &BTreeMap<u16, String>| {
        let list = triggers.entry(unit).or_default();
        if list.is_empty() {
            armed_first_trigger.insert(unit, state.get(&unit).is_some_and(|s| s == PTF));
        }
        list.push(t);
    };

    for (line, e) in log.iter().enumerate() {
        if let Some(&prev) = last_t.get(e.component.as_str()) {
            if e.t_ms < prev {
                m.invariant_violations
                    .push(format!("line {}: time went backwards for {}", line + 1, e.component));
            }
        }
        last_t.insert(e.component.as_str(), e.t_ms);
        let unit_attr = e.attr_u64("unit").map(|u| u as u16);

        match e.event {
            EventKind::StateTransition => {
                let Some(unit) = unit_attr else { continue };
                let from = e.attr_str("from").unwrap_or_default().to_string();
                let to = e.attr_str("to").unwrap_or_default().to_string();
                let reason = e.attr_str("reason").unwrap_or_default().to_string();
                let cur = state.entry(unit).or_insert_with(|| IDLE.to_string());
                if *cur != from {
                    m.invariant_violations
                        .push(format!("line {}: unit {unit} left {from} while in {cur}", line + 1));
                }
                if from == HOLD_SAFE && reason != TransitionReason::AlarmCleared.code() {
                    m.invariant_violations
                        .push(format!("line {}: unit {unit} left HOLD_SAFE via {reason}", line + 1));
                }
                let list = transitions.entry(unit).or_default();
                if list.last().is_some_and(|p| p.t == e.t_ms) {
                    m.invariant_violations
                        .push(format!("line {}: unit {unit} transitioned twice at {}", line + 1, e.t_ms));
                }
                *cur = to.clone();
                if to == PTF {
                    let engage = e.attr_str("engage_class").unwrap_or("NONE");
                    let truth = e.attr_str("truth_class").unwrap_or("NONE");
                    if engage != truth {
                        m.unsafe_engagements += 1;
                        m.units.entry(unit).or_default().unsafe_engagements += 1;
                    }
                }
                list.push(Transition {
                    t: e.t_ms,
                    revocation: e.attr_bool("revocation").unwrap_or(false),
                    from,
                    to,
                    reason,
                });
            }
            EventKind::FaultInjected => {
                let (Some(unit), Some(kind)) = (unit_attr, e.attr_str("kind").and_then(|k| k.parse().ok())) else {
                    continue;
                };
                faults.push((e.t_ms, unit, kind));
                if expected_reason(kind).is_some() {
                    note_trigger(unit, e.t_ms, &state);
                }
            }
            EventKind::RecordAccepted | EventKind::RecordFlagged | EventKind::RecordDropped => {
                let outcome = e.attr_str("outcome").unwrap_or("?");
                let reason = e.attr_str("reason").unwrap_or("?");
                *m.verdicts.entry(format!("{outcome}/{reason}")).or_default() += 1;
                match e.event {
                    EventKind::RecordAccepted => {
                        m.records.accepted += 1;
                        let ids: BTreeSet<u16> = ["source", "origin"]
                            .iter()
                            .filter_map(|k| e.attr_u64(k))
                            .map(|u| u as u16)
                            .collect();
                        for u in ids {
                            *m.accepted_by_unit.entry(u).or_default() += 1;
                        }
                    }
                    EventKind::RecordFlagged => {
                        m.records.flagged += 1;
                        // The alarm lands on the receiving unit, or on the
                        // source when the gateway raised it.
                        let target = unit_of_component(&e.component).or(e.attr_u64("source").map(|u| u as u16));
                        if let Some(u) = target {
                            let o = m.units.entry(u).or_default();
                            if o.first_flag_ms.is_none() {
                                o.first_flag_ms = Some(e.t_ms);
                            }
                            note_trigger(u, e.t_ms, &state);
                        }
                    }
                    _ => *m.records.dropped.entry(reason.to_string()).or_default() += 1,
                }
            }
            EventKind::HandshakeOk => {
                if let Some(u) = unit_attr {
                    *m.handshakes_ok.entry(u).or_default() += 1;
                }
            }
            EventKind::HandshakeFail => m.handshakes_failed += 1,
            EventKind::DisplayStaleDetected => m.stale_display_events += 1,
            EventKind::AttackInjected if e.attr_str("kind") == Some("THERMO_PERTURBATION") => {
                m.perturbed_frames += 1;
                if e.attr_bool("fooled") == Some(true) {
                    m.fooled_frames += 1;
                }
            }
            EventKind::TrackConfirmed => {
                let key = (e.component.clone(), e.attr_u64("track").unwrap_or(0));
                let class = e.attr_str("class").unwrap_or("NONE");
                let truth = e.attr_str("truth_class").unwrap_or("NONE");
                if class != "NONE" && truth != "NONE" && class != truth {
                    wrong.insert(key.clone());
                }
                if e.attr_bool("implausible_thermal") == Some(true) {
                    implausible.insert(key);
                }
            }
            EventKind::CommandStaged => {
                if let (Some(u), Some(id)) = (unit_attr, e.attr_u64("command_id")) {
                    staged.insert((u, id), e.t_ms);
                }
            }
            EventKind::CommandAcked => {
                if let (Some(u), Some(id)) = (unit_attr, e.attr_u64("command_id")) {
                    if !staged.get(&(u, id)).is_some_and(|&s| s <= e.t_ms) {
                        m.invariant_violations
                            .push(format!("line {}: command {id} acked before staging", line + 1));
                    }
                    acked.insert((u, id), e.t_ms);
                }
            }
            EventKind::CommandExecuted | EventKind::CommandRefused if unit_of_component(&e.component).is_some() => {
                if let (Some(u), Some(id)) = (unit_attr, e.attr_u64("command_id")) {
                    if !acked.get(&(u, id)).is_some_and(|&a| a <= e.t_ms) {
                        m.invariant_violations
                            .push(format!("line {}: command {id} resolved before ack", line + 1));
                    }
                }
            }
            _ => {}
        }
    }
    m.wrong_class_tracks = wrong.len() as u64;
    m.implausible_tracks = implausible.len() as u64;

    for &(t, unit, kind) in &faults {
        let Some(reason) = expected_reason(kind) else { continue };
        let code = reason.code();
        let hit = transitions
            .get(&unit)
            .and_then(|ts| ts.iter().find(|x| x.t >= t && x.to == DEGRADED && x.reason == code));
        m.latencies.push(FaultLatency {
            unit,
            fault: kind.as_str().to_string(),
            injected_ms: t,
            degraded_ms: hit.map(|x| x.t),
            latency_ms: hit.map(|x| x.t - t),
        });
    }

    let units: BTreeSet<u16> = transitions.keys().chain(triggers.keys()).chain(m.units.keys()).copied().collect();
    let empty = Vec::new();
    for unit in units {
        let ts = transitions.get(&unit).unwrap_or(&empty);
        let trig = triggers.get(&unit).cloned().unwrap_or_default();
        let ptf = ptf_intervals(ts);
        let restore_codes = [TransitionReason::HealthRestored.code(), TransitionReason::AlarmCleared.code()];
        let contained = trig.iter().all(|&tf| {
            let restore = ts.iter().find(|x| x.t >= tf && restore_codes.contains(&x.reason)).map(|x| x.t);
            !containment_violated(&ptf, tf, restore)
        });
        let o = m.units.entry(unit).or_default();
        o.final_state = state.get(&unit).cloned().unwrap_or_else(|| IDLE.to_string());
        o.degraded_reasons = ts.iter().filter(|x| x.to == DEGRADED).map(|x| x.reason.clone()).collect();
        o.armed_at_trigger = armed_first_trigger.get(&unit).copied().unwrap_or(false);
        // Without a trigger any revocation counts, e.g. one caused by a stale link.
        let since = trig.first().copied().unwrap_or(0);
        o.revoked = ts.iter().any(|x| x.t >= since && x.revocation && x.from == PTF);
        o.hold_safe_ms = match o.first_flag_ms {
            Some(f) => ts.iter().find(|x| x.t >= f && x.to == HOLD_SAFE).map(|x| x.t),
            None => ts.iter().find(|x| x.to == HOLD_SAFE).map(|x| x.t),
        };
        o.hold_safe_latency_ms = o.first_flag_ms.zip(o.hold_safe_ms).map(|(f, h)| h - f);
        o.containment_ok = contained;
        m.containment_ok &= contained;
    }
    m
}

// ---------------------------------------------------------------------------
// Suite aggregation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub fault: String,
    pub injected: usize,
    pub measured: usize,
    pub mean_ms: Option<f64>,
    pub p95_ms: Option<u64>,
    pub min_ms: Option<u64>,
    pub max_ms: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub crashed: usize,
    pub latency: Vec<LatencyStats>,
    pub contained: usize,
    pub verdicts: BTreeMap<String, u64>,
    pub stale_display_events: u64,
    pub perturbed_frames: u64,
    pub fooled_frames: u64,
    pub misclassification_rate: Option<f64>,
    pub wrong_class_tracks: u64,
    pub implausible_tracks: u64,
    pub unsafe_engagements: u64,
    pub flags: u64,
    pub hold_safe_latencies_ms: Vec<u64>,
    pub invariant_violations: usize,
}

pub fn aggregate(trials: &[TrialMetrics]) -> Aggregate {
    let mut a = Aggregate {
        trials: trials.len(),
        ..Aggregate::default()
    };
    let mut by_fault: BTreeMap<String, (usize, Vec<u64>)> = BTreeMap::new();
    for t in trials {
        a.crashed += t.crash.is_some() as usize;
        a.contained += (t.crash.is_none() && t.containment_ok) as usize;
        for l in &t.latencies {
            let e = by_fault.entry(l.fault.clone()).or_default();
            e.0 += 1;
            e.1.extend(l.latency_ms);
        }
        for (k, v) in &t.verdicts {
            *a.verdicts.entry(k.clone()).or_default() += v;
        }
        a.stale_display_events += t.stale_display_events;
        a.perturbed_frames += t.perturbed_frames;
        a.fooled_frames += t.fooled_frames;
        a.wrong_class_tracks += t.wrong_class_tracks;
        a.implausible_tracks += t.implausible_tracks;
        a.unsafe_engagements += t.unsafe_engagements;
        a.flags += t.records.flagged;
        a.hold_safe_latencies_ms
            .extend(t.units.values().filter_map(|u| u.hold_safe_latency_ms));
        a.invariant_violations += t.invariant_violations.len();
    }
    a.misclassification_rate =
        (a.perturbed_frames > 0).then(|| a.fooled_frames as f64 / a.perturbed_frames as f64);
    a.latency = by_fault
        .into_iter()
        .map(|(fault, (injected, v))| LatencyStats {
            fault,
            injected,
            measured: v.len(),
            mean_ms: mean(&v),
            p95_ms: percentile_nearest_rank(&v, 0.95),
            min_ms: v.iter().min().copied(),
            max_ms: v.iter().max().copied(),
        })
        .collect();
    a
}

// ---------------------------------------------------------------------------
// Gates
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub gate: String,
    pub pass: bool,
    pub detail: String,
}

/// Applies `check` to every trial; crashed trials count as failures.
fn per_trial(trials: &[TrialMetrics], check: impl Fn(&TrialMetrics) -> bool) -> (bool, String) {
    let ok = trials.iter().filter(|t| t.crash.is_none() && check(t)).count();
    (!trials.is_empty() && ok == trials.len(), format!("{ok}/{} trials", trials.len()))
}

pub fn evaluate_gate(gate: &Gate, trials: &[TrialMetrics], agg: &Aggregate) -> GateResult {
    let (pass, detail) = match gate {
        Gate::Degraded { unit, reason } => {
            let code = reason.code();
            per_trial(trials, |t| {
                t.units
                    .get(&unit.get())
                    .is_some_and(|u| u.degraded_reasons.contains(&code))
            })
        }
        Gate::Revoked { unit } => per_trial(trials, |t| {
            t.units.get(&unit.get()).is_some_and(|u| u.revoked)
        }),
        Gate::Containment => per_trial(trials, |t| t.containment_ok),
        Gate::Latency { fault, mean, p95_max } => match agg.latency.iter().find(|l| l.fault == fault.as_str()) {
            None => (false, "no faults injected".to_string()),
            Some(l) => {
                let all = l.measured == l.injected && agg.crashed == 0;
                let mean_ok = l.mean_ms.is_some_and(|m| mean.check(m));
                let p95_ok = match (p95_max, l.p95_ms) {
                    (Some(max), Some(p)) => p as f64 <= *max,
                    (None, _) => true,
                    (Some(_), None) => false,
                };
                (
                    all && mean_ok && p95_ok,
                    format!(
                        "{}/{} measured, mean {} (want {mean}), p95 {}",
                        l.measured,
                        l.injected,
                        l.mean_ms.map(|m| format!("{m:.1} ms")).unwrap_or_else(|| "n/a".into()),
                        l.p95_ms.map(|p| format!("{p} ms")).unwrap_or_else(|| "n/a".into())
                    ),
                )
            }
        },
        Gate::HoldSafe { unit, max_latency_ms } => per_trial(trials, |t| {
            t.units
                .get(&unit.get())
                .and_then(|u| u.hold_safe_latency_ms)
                .is_some_and(|l| l <= *max_latency_ms)
        }),
        Gate::NoHandshake { unit } => per_trial(trials, |t| t.handshakes_ok.get(unit).copied().unwrap_or(0) == 0),
        Gate::NoAccept { unit } => per_trial(trials, |t| t.accepted_by_unit.get(unit).copied().unwrap_or(0) == 0),
        Gate::StaleDisplay(b) => per_trial(trials, |t| b.check(t.stale_display_events as f64)),
        Gate::FinalState { unit, state } => per_trial(trials, |t| t.final_state(unit.get()) == state.as_str()),
        Gate::Verdicts { outcome, reason, bounds } => per_trial(trials, |t| {
            bounds.check(t.verdict_count(outcome.as_str(), reason.as_str()) as f64)
        }),
        Gate::Misclassification { rate, min_frames } => {
            let r = agg.misclassification_rate;
            (
                agg.crashed == 0 && agg.perturbed_frames >= *min_frames && r.is_some_and(|r| rate.check(r)),
                format!(
                    "{}/{} frames fooled ({})",
                    agg.fooled_frames,
                    agg.perturbed_frames,
                    r.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into())
                ),
            )
        }
        Gate::WrongClassTracks(b) => total(trials, agg, agg.wrong_class_tracks, b),
        Gate::ImplausibleTracks(b) => total(trials, agg, agg.implausible_tracks, b),
        Gate::UnsafeEngagements(b) => total(trials, agg, agg.unsafe_engagements, b),
    };
    GateResult {
        gate: gate.to_string(),
        pass,
        detail,
    }
}

fn total(trials: &[TrialMetrics], agg: &Aggregate, v: u64, b: &crate::scenario::Bounds) -> (bool, String) {
    (
        !trials.is_empty() && agg.crashed == 0 && b.check(v as f64),
        format!("{v} across {} trials", trials.len()),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub scenario: String,
    pub seed: Option<u64>,
    pub trials: Vec<TrialMetrics>,
    pub aggregate: Aggregate,
    pub gates: Vec<GateResult>,
    pub passed: bool,
}

pub fn summarize(scenario: &str, seed: Option<u64>, gates: &[Gate], trials: Vec<TrialMetrics>) -> SuiteMetrics {
    let aggregate = aggregate(&trials);
    let results: Vec<GateResult> = gates.iter().map(|g| evaluate_gate(g, &trials, &aggregate)).collect();
    let passed = !trials.is_empty() && aggregate.crashed == 0 && results.iter().all(|r| r.pass);
    SuiteMetrics {
        scenario: scenario.to_string(),
        seed,
        trials,
        aggregate,
        gates: results,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(t: u64, from: &str, to: &str, reason: &str) -> EventLogEntry {
        EventLogEntry::new(t, "unit-1", EventKind::StateTransition)
            .with("unit", 1)
            .with("from", from)
            .with("to", to)
            .with("reason", reason)
    }

    fn fault(t: u64, kind: &str) -> EventLogEntry {
        EventLogEntry::new(t, "unit-1", EventKind::FaultInjected)
            .with("unit", 1)
            .with("kind", kind)
    }

    #[test]
    fn latency_is_fault_to_matching_transition() {
        let log = vec![
            tr(100, "IDLE", "READY", "OPERATOR_CMD"),
            fault(10000, "thermal_loss"),
            tr(10480, "READY", "DEGRADED", "SUBSYSTEM_LOSS(thermal)"),
        ];
        let m = trial_metrics(0, &log);
        assert_eq!(m.latencies[0].latency_ms, Some(480));
        assert!(m.invariant_violations.is_empty());
    }

    #[test]
    fn wrong_reason_does_not_count() {
        let log = vec![
            tr(100, "IDLE", "READY", "OPERATOR_CMD"),
            fault(1000, "thermal_loss"),
            tr(1200, "READY", "DEGRADED", "COMM_STALE"),
        ];
        let m = trial_metrics(0, &log);
        assert_eq!(m.latencies[0].latency_ms, None);
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(percentile_nearest_rank(&[400, 450, 480, 500, 1600], 0.95), Some(1600));
        assert_eq!(percentile_nearest_rank(&[1600, 400, 500, 480, 450], 0.95), Some(1600));
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.95), Some(95));
        assert_eq!(percentile_nearest_rank(&[], 0.95), None);
        assert_eq!(percentile_nearest_rank(&[7], 0.95), Some(7));
    }

    #[test]
    fn ptf_past_bound_breaks_containment() {
        let ok = vec![
            tr(100, "IDLE", "READY", "OPERATOR_CMD"),
            tr(200, "READY", "PREPARE_TO_FIRE", "CONFIRMED_TRACK"),
            fault(1000, "thermal_loss"),
            tr(3000, "PREPARE_TO_FIRE", "DEGRADED", "SUBSYSTEM_LOSS(thermal)").with("revocation", true),
        ];
        let m = trial_metrics(0, &ok);
        assert!(m.containment_ok);
        assert!(m.units[&1].armed_at_trigger && m.units[&1].revoked);

        let mut late = ok.clone();
        late[3] = tr(3002, "PREPARE_TO_FIRE", "DEGRADED", "SUBSYSTEM_LOSS(thermal)");
        assert!(!trial_metrics(0, &late).containment_ok);
    }

    #[test]
    fn ptf_after_restoration_is_allowed() {
        let log = vec![
            tr(100, "IDLE", "READY", "OPERATOR_CMD"),
            fault(1000, "thermal_loss"),
            tr(1450, "READY", "DEGRADED", "SUBSYSTEM_LOSS(thermal)"),
            tr(5000, "DEGRADED", "READY", "HEALTH_RESTORED"),
            tr(5100, "READY", "PREPARE_TO_FIRE", "CONFIRMED_TRACK"),
        ];
        assert!(trial_metrics(0, &log).containment_ok);
    }

    #[test]
    fn invariant_checks_catch_bad_chains() {
        let log = vec![
            tr(100, "IDLE", "HOLD_SAFE", "PROVENANCE_ALARM"),
            tr(200, "HOLD_SAFE", "READY", "OPERATOR_CMD"),
            tr(200, "READY", "DEGRADED", "COMM_STALE"),
            tr(150, "PREPARE_TO_FIRE", "READY", "CONFIDENCE_COLLAPSE"),
        ];
        let m = trial_metrics(0, &log);
        assert_eq!(m.invariant_violations.len(), 4, "{:?}", m.invariant_violations);
    }

    #[test]
    fn flag_then_hold_safe_latency() {
        let log = vec![
            EventLogEntry::new(2002, "unit-1", EventKind::RecordFlagged)
                .with("outcome", "FLAG")
                .with("reason", "PROVENANCE")
                .with("source", 2)
                .with("origin", 3),
            tr(2050, "IDLE", "HOLD_SAFE", "PROVENANCE_ALARM"),
        ];
        let m = trial_metrics(0, &log);
        assert_eq!(m.units[&1].hold_safe_latency_ms, Some(48));
        assert_eq!(m.verdict_count("FLAG", "PROVENANCE"), 1);
        assert_eq!(m.final_state(1), "HOLD_SAFE");
        assert_eq!(m.final_state(7), "IDLE");
    }

    #[test]
    fn empty_suite_fails() {
        let s = summarize("x", Some(1), &[Gate::Containment], Vec::new());
        assert!(!s.passed);
        assert!(!s.gates[0].pass);
        assert!(!summarize("x", Some(1), &[], Vec::new()).passed);
    }

    #[test]
    fn crashed_trial_fails_per_trial_gates() {
        let good = trial_metrics(0, &[]);
        let mut bad = trial_metrics(1, &[]);
        bad.crash = Some("boom".into());
        let s = summarize("x", Some(1), &[Gate::Containment], vec![good, bad]);
        assert_eq!(s.gates[0].detail, "1/2 trials");
        assert!(!s.passed);
    }
}
