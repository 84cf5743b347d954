//! Application-layer trust boundary behind the secure channel.
//!
//! Records that survived `channel::open` run through five checks in a fixed
//! order: length, schema, freshness, source identity/provenance, sequence.
//! The first failing check names the verdict reason.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Session;
use crate::eventlog::{EventKind, EventLogEntry};
use crate::message::{
    decode_record, peek_header, CommandKind, CommandRecord, DecodeErrorKind, Envelope, Message,
    MsgType, TelemetryRecord, TrackSummary, UnitId, HEADER_LEN, TELEMETRY_FIXED_LEN,
    TRACK_SUMMARY_LEN,
};

pub const COMMAND_ATTEMPTS: u32 = 3;
pub const COMMAND_RETRY_MS: u64 = 400;

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProvenancePolicy {
    /// Accept the record but raise a provenance alarm.
    Flag,
    /// Drop records whose origin differs from the session peer.
    StrictDrop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationPolicy {
    pub freshness_window_ms: u64,
    pub max_future_skew_ms: u64,
    pub provenance_mode: ProvenancePolicy,
    pub max_record_bytes: usize,
    /// Display cache eviction; `None` keeps tracks until overwritten.
    pub display_ttl_ms: Option<u64>,
    /// Transport anti-replay window size; 0 disables it.
    pub transport_replay_window: u64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            freshness_window_ms: 2000,
            max_future_skew_ms: 250,
            provenance_mode: ProvenancePolicy::Flag,
            max_record_bytes: 1200,
            display_ttl_ms: None,
            transport_replay_window: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("policy key `{key}`: {reason}")]
pub struct PolicyError {
    pub key: String,
    pub reason: String,
}

impl ValidationPolicy {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PolicyError> {
        let err = |reason: &str| PolicyError {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let num = || value.parse::<u64>().map_err(|_| err("expected an unsigned integer"));
        match key {
            "freshness_window_ms" => {
                let v = num()?;
                if v == 0 {
                    return Err(err("must be > 0"));
                }
                self.freshness_window_ms = v;
            }
            "max_future_skew_ms" => self.max_future_skew_ms = num()?,
            "max_record_bytes" => self.max_record_bytes = num()? as usize,
            "transport_replay_window" => self.transport_replay_window = num()?,
            "provenance_mode" => {
                self.provenance_mode = match value.to_ascii_lowercase().as_str() {
                    "flag" => ProvenancePolicy::Flag,
                    "strict_drop" | "strict" => ProvenancePolicy::StrictDrop,
                    _ => return Err(err("expected flag or strict_drop")),
                }
            }
            "display_ttl_ms" => {
                self.display_ttl_ms = if value.eq_ignore_ascii_case("none") || value.eq_ignore_ascii_case("off") {
                    None
                } else {
                    Some(num()?)
                }
            }
            _ => return Err(err("unknown key")),
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        format!(
            "freshness_window_ms={}\nmax_future_skew_ms={}\nprovenance_mode={}\nmax_record_bytes={}\ndisplay_ttl_ms={}\ntransport_replay_window={}\n",
            self.freshness_window_ms,
            self.max_future_skew_ms,
            match self.provenance_mode {
                ProvenancePolicy::Flag => "flag",
                ProvenancePolicy::StrictDrop => "strict_drop",
            },
            self.max_record_bytes,
            self.display_ttl_ms
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
            self.transport_replay_window,
        )
    }

    /// Whether a record timestamped `ts` is fresh at `now`.
    pub fn is_fresh(&self, ts: u64, now: u64) -> bool {
        let age = now as i128 - ts as i128;
        age >= -(self.max_future_skew_ms as i128) && age <= self.freshness_window_ms as i128
    }
}

/// Flat `key=value` policy file; `#` starts a comment.
impl FromStr for ValidationPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = ValidationPolicy::default();
        for line in s.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PolicyError {
                key: line.to_string(),
                reason: "expected key=value".into(),
            })?;
            p.set(k.trim(), v.trim())?;
        }
        Ok(p)
    }
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Accept,
    Flag,
    Drop,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accept => "ACCEPT",
            Self::Flag => "FLAG",
            Self::Drop => "DROP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ACCEPT" => Some(Self::Accept),
            "FLAG" => Some(Self::Flag),
            "DROP" => Some(Self::Drop),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    Ok,
    Length,
    Schema,
    Freshness,
    Provenance,
    Sequence,
}

impl Reason {
    pub const ALL: [Reason; 6] = [
        Self::Ok,
        Self::Length,
        Self::Schema,
        Self::Freshness,
        Self::Provenance,
        Self::Sequence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "OK",
            Self::Length => "LENGTH",
            Self::Schema => "SCHEMA",
            Self::Freshness => "FRESHNESS",
            Self::Provenance => "PROVENANCE",
            Self::Sequence => "SEQUENCE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RecordRef {
    pub session_id: u32,
    pub origin_unit: u16,
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub reason: Reason,
    pub record_ref: Option<RecordRef>,
}

impl Verdict {
    fn drop(reason: Reason, record_ref: Option<RecordRef>) -> Self {
        Self {
            outcome: Outcome::Drop,
            reason,
            record_ref,
        }
    }

    pub fn event_kind(&self) -> EventKind {
        match self.outcome {
            Outcome::Accept => EventKind::RecordAccepted,
            Outcome::Flag => EventKind::RecordFlagged,
            Outcome::Drop => EventKind::RecordDropped,
        }
    }
}

/// Highest accepted sequence per `(session_id, origin_unit)`.
#[derive(Clone, Debug, Default)]
pub struct SequenceLedger {
    highest: BTreeMap<(u32, u16), u64>,
}

impl SequenceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, session_id: u32, origin: UnitId) -> Option<u64> {
        self.highest.get(&(session_id, origin.get())).copied()
    }

    fn advance(&mut self, session_id: u32, origin: UnitId, seq: u64) {
        let slot = self.highest.entry((session_id, origin.get())).or_insert(0);
        *slot = (*slot).max(seq);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(u32, u16), &u64)> {
        self.highest.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub verdict: Verdict,
    /// Decoded record for ACCEPT and FLAG verdicts.
    pub record: Option<TelemetryRecord>,
    /// Header fields when the header parsed, for audit attributes.
    pub envelope: Option<Envelope>,
}

fn length_ok(raw: &[u8], policy: &ValidationPolicy) -> bool {
    if raw.len() > policy.max_record_bytes || raw.len() < HEADER_LEN {
        return false;
    }
    let declared = u16::from_be_bytes([raw[27], raw[28]]) as usize;
    if declared != raw.len() - HEADER_LEN {
        return false;
    }
    if raw[2] == MsgType::Telemetry as u8 {
        if declared < TELEMETRY_FIXED_LEN {
            return false;
        }
        let count = raw[HEADER_LEN + TELEMETRY_FIXED_LEN - 1] as usize;
        return declared == TELEMETRY_FIXED_LEN + count * TRACK_SUMMARY_LEN;
    }
    true
}

/// Runs the ordered check pipeline on record bytes that already passed
/// transport `open`. ACCEPT and FLAG advance the ledger.
pub fn validate(
    raw: &[u8],
    session: &Session,
    policy: &ValidationPolicy,
    ledger: &mut SequenceLedger,
    now: u64,
) -> Validation {
    let envelope = peek_header(raw).ok().map(|h| h.envelope);
    let record_ref = envelope.map(|e| RecordRef {
        session_id: e.session_id,
        origin_unit: e.origin_unit.get(),
        seq: e.seq,
    });
    let dropped = |reason| Validation {
        verdict: Verdict::drop(reason, record_ref),
        record: None,
        envelope,
    };

    if !length_ok(raw, policy) {
        return dropped(Reason::Length);
    }
    let record = match decode_record(raw) {
        Ok(Message::Telemetry(r)) => r,
        Ok(_) => return dropped(Reason::Schema),
        Err(e) if matches!(e.kind, DecodeErrorKind::TooShort) => return dropped(Reason::Length),
        Err(_) => return dropped(Reason::Schema),
    };
    if !policy.is_fresh(record.timestamp_ms, now) {
        return dropped(Reason::Freshness);
    }
    if record.session_id != session.session_id || record.source_unit != session.peer {
        return dropped(Reason::Provenance);
    }
    let foreign_origin = record.origin_unit != session.peer;
    if foreign_origin && policy.provenance_mode == ProvenancePolicy::StrictDrop {
        return dropped(Reason::Provenance);
    }
    if let Some(last) = ledger.get(record.session_id, record.origin_unit) {
        if record.seq <= last {
            return dropped(Reason::Sequence);
        }
    }
    ledger.advance(record.session_id, record.origin_unit, record.seq);
    let verdict = if foreign_origin {
        Verdict {
            outcome: Outcome::Flag,
            reason: Reason::Provenance,
            record_ref,
        }
    } else {
        Verdict {
            outcome: Outcome::Accept,
            reason: Reason::Ok,
            record_ref,
        }
    };
    Validation {
        verdict,
        record: Some(record),
        envelope,
    }
}

/// Audit record for one verdict.
pub fn verdict_event(component: &str, now: u64, v: &Validation) -> EventLogEntry {
    let mut e = EventLogEntry::new(now, component, v.verdict.event_kind())
        .with("outcome", format!("{:?}", v.verdict.outcome).to_uppercase())
        .with("reason", v.verdict.reason.as_str());
    if let Some(env) = &v.envelope {
        e = e
            .with("session", env.session_id)
            .with("source", env.source_unit.get())
            .with("origin", env.origin_unit.get())
            .with("seq", env.seq)
            .with("ts", env.timestamp_ms);
    }
    if v.verdict.outcome == Outcome::Flag {
        e = e.with("provenance_alarm", true);
    }
    e
}

// ---------------------------------------------------------------------------
// Operator display cache
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTrack {
    pub unit: UnitId,
    pub track: TrackSummary,
    pub age_ms: u64,
    pub stale: bool,
}

#[derive(Clone, Debug, Default)]
pub struct DisplayCache {
    entries: BTreeMap<(UnitId, u32), (TrackSummary, u64)>,
    ttl_ms: Option<u64>,
}

impl DisplayCache {
    pub fn new(ttl_ms: Option<u64>) -> Self {
        Self {
            entries: BTreeMap::new(),
            ttl_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn refresh(&mut self, record: &TelemetryRecord, now: u64) {
        for t in &record.body.tracks {
            self.entries
                .insert((record.origin_unit, t.track_id), (*t, now));
        }
    }

    /// Renders the cache. With a TTL, expired entries are evicted first;
    /// entries older than `freshness_window_ms` are flagged stale.
    pub fn snapshot(&mut self, now: u64, freshness_window_ms: u64) -> Vec<RenderedTrack> {
        if let Some(ttl) = self.ttl_ms {
            self.entries
                .retain(|_, (_, refreshed)| now.saturating_sub(*refreshed) <= ttl);
        }
        self.entries
            .iter()
            .map(|((unit, _), (track, refreshed))| {
                let age_ms = now.saturating_sub(*refreshed);
                RenderedTrack {
                    unit: *unit,
                    track: *track,
                    age_ms,
                    stale: age_ms > freshness_window_ms,
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Supervisory command staging
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("no acknowledgement for command {0} after {COMMAND_ATTEMPTS} attempts")]
    AckTimeout(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagedCommand {
    pub target: UnitId,
    pub record: CommandRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransmitStep {
    /// Send (or resend) the command; `attempt` counts from 1. Schedule the
    /// next check `COMMAND_RETRY_MS` later.
    Send { attempt: u32 },
    TimedOut,
    /// Nothing in flight (already acknowledged).
    Idle,
}

#[derive(Clone, Debug)]
struct InFlight {
    staged: StagedCommand,
    attempts: u32,
}

/// Serializes commands per target unit: one in flight, the rest queued.
#[derive(Clone, Debug)]
pub struct CommandStager {
    issuer: UnitId,
    next_id: u64,
    in_flight: BTreeMap<UnitId, InFlight>,
    queued: BTreeMap<UnitId, VecDeque<StagedCommand>>,
}

impl CommandStager {
    pub fn new(issuer: UnitId) -> Self {
        Self {
            issuer,
            next_id: 1,
            in_flight: BTreeMap::new(),
            queued: BTreeMap::new(),
        }
    }

    /// Builds a command record with a strictly increasing id.
    pub fn stage(&mut self, target: UnitId, session_id: u32, kind: CommandKind, now: u64) -> StagedCommand {
        let id = self.next_id;
        self.next_id += 1;
        let staged = StagedCommand {
            target,
            record: CommandRecord {
                env: Envelope {
                    session_id,
                    source_unit: self.issuer,
                    origin_unit: self.issuer,
                    seq: id,
                    timestamp_ms: now,
                },
                kind,
            },
        };
        self.queued.entry(target).or_default().push_back(staged);
        staged
    }

    /// Promotes the next queued command for `target` if the slot is free.
    pub fn next_ready(&mut self, target: UnitId) -> Option<StagedCommand> {
        if self.in_flight.contains_key(&target) {
            return None;
        }
        let staged = self.queued.get_mut(&target)?.pop_front()?;
        self.in_flight.insert(target, InFlight { staged, attempts: 0 });
        Some(staged)
    }

    pub fn in_flight(&self, target: UnitId) -> Option<StagedCommand> {
        self.in_flight.get(&target).map(|f| f.staged)
    }

    /// Advances the retry schedule for the in-flight command to `target`.
    pub fn transmit(&mut self, target: UnitId, command_id: u64) -> TransmitStep {
        match self.in_flight.get_mut(&target) {
            Some(f) if f.staged.record.command_id() == command_id => {
                if f.attempts >= COMMAND_ATTEMPTS {
                    self.in_flight.remove(&target);
                    TransmitStep::TimedOut
                } else {
                    f.attempts += 1;
                    TransmitStep::Send { attempt: f.attempts }
                }
            }
            _ => TransmitStep::Idle,
        }
    }

    /// Matches an acknowledgement to the in-flight command.
    pub fn confirm_ack(&mut self, from: UnitId, command_id: u64) -> Option<StagedCommand> {
        match self.in_flight.get(&from) {
            Some(f) if f.staged.record.command_id() == command_id => {
                self.in_flight.remove(&from).map(|f| f.staged)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{encode_record, TelemetryBody};

    fn uid(v: u16) -> UnitId {
        UnitId::new(v).unwrap()
    }

    fn session(peer: u16) -> Session {
        Session {
            session_id: 7,
            local: uid(100),
            peer: uid(peer),
            key: [0; 32],
            established_ms: 0,
        }
    }

    fn record(origin: u16, seq: u64, ts: u64) -> TelemetryRecord {
        TelemetryRecord {
            session_id: 7,
            source_unit: uid(2),
            origin_unit: uid(origin),
            seq,
            timestamp_ms: ts,
            body: TelemetryBody::default(),
        }
    }

    fn raw(r: &TelemetryRecord) -> Vec<u8> {
        encode_record(&Message::Telemetry(r.clone())).unwrap()
    }

    #[test]
    fn nominal_accept() {
        let mut ledger = SequenceLedger::new();
        let p = ValidationPolicy::default();
        let s = session(2);
        validate(&raw(&record(2, 4, 9_900)), &s, &p, &mut ledger, 10_000);
        let v = validate(&raw(&record(2, 5, 9_950)), &s, &p, &mut ledger, 10_000);
        assert_eq!(v.verdict.outcome, Outcome::Accept);
        assert_eq!(v.verdict.reason, Reason::Ok);
        assert_eq!(ledger.get(7, uid(2)), Some(5));
    }

    #[test]
    fn stale_record_dropped_for_freshness() {
        let mut ledger = SequenceLedger::new();
        let v = validate(
            &raw(&record(2, 1, 7_500)),
            &session(2),
            &ValidationPolicy::default(),
            &mut ledger,
            10_000,
        );
        assert_eq!(v.verdict, Verdict::drop(Reason::Freshness, v.verdict.record_ref));
        assert_eq!(ledger.get(7, uid(2)), None);
    }

    #[test]
    fn foreign_origin_flagged_or_dropped() {
        let mut ledger = SequenceLedger::new();
        let mut p = ValidationPolicy::default();
        let v = validate(&raw(&record(3, 1, 10_000)), &session(2), &p, &mut ledger, 10_000);
        assert_eq!((v.verdict.outcome, v.verdict.reason), (Outcome::Flag, Reason::Provenance));
        assert!(v.record.is_some());

        p.provenance_mode = ProvenancePolicy::StrictDrop;
        let v = validate(&raw(&record(3, 2, 10_000)), &session(2), &p, &mut ledger, 10_000);
        assert_eq!((v.verdict.outcome, v.verdict.reason), (Outcome::Drop, Reason::Provenance));
    }

    #[test]
    fn spoofed_source_dropped() {
        let mut ledger = SequenceLedger::new();
        let v = validate(
            &raw(&record(2, 1, 10_000)),
            &session(5),
            &ValidationPolicy::default(),
            &mut ledger,
            10_000,
        );
        assert_eq!(v.verdict.reason, Reason::Provenance);
        assert_eq!(v.verdict.outcome, Outcome::Drop);
    }

    #[test]
    fn duplicate_dropped_for_sequence() {
        let mut ledger = SequenceLedger::new();
        let p = ValidationPolicy::default();
        let bytes = raw(&record(2, 3, 10_000));
        assert_eq!(validate(&bytes, &session(2), &p, &mut ledger, 10_000).verdict.outcome, Outcome::Accept);
        let v = validate(&bytes, &session(2), &p, &mut ledger, 10_010);
        assert_eq!(v.verdict.reason, Reason::Sequence);
    }

    #[test]
    fn length_precedes_schema() {
        let mut ledger = SequenceLedger::new();
        let p = ValidationPolicy::default();
        // Bad magic *and* inconsistent length: length must win.
        let mut bytes = raw(&record(2, 1, 10_000));
        bytes[0] = 0;
        bytes.push(0);
        let v = validate(&bytes, &session(2), &p, &mut ledger, 10_000);
        assert_eq!(v.verdict.reason, Reason::Length);
        // Oversized record.
        let small = ValidationPolicy {
            max_record_bytes: 20,
            ..ValidationPolicy::default()
        };
        let v = validate(&raw(&record(2, 1, 0)), &session(2), &small, &mut ledger, 10_000);
        assert_eq!(v.verdict.reason, Reason::Length);
    }

    #[test]
    fn non_telemetry_is_schema() {
        let mut ledger = SequenceLedger::new();
        let cmd = Message::Command(CommandRecord {
            env: record(2, 1, 10_000).envelope(),
            kind: CommandKind::Arm,
        });
        let v = validate(
            &encode_record(&cmd).unwrap(),
            &session(2),
            &ValidationPolicy::default(),
            &mut ledger,
            10_000,
        );
        assert_eq!(v.verdict.reason, Reason::Schema);
    }

    #[test]
    fn policy_file_parses() {
        let p: ValidationPolicy = "# comment\nfreshness_window_ms=1500\nprovenance_mode=strict_drop\ndisplay_ttl_ms=2000\n"
            .parse()
            .unwrap();
        assert_eq!(p.freshness_window_ms, 1500);
        assert_eq!(p.provenance_mode, ProvenancePolicy::StrictDrop);
        assert_eq!(p.display_ttl_ms, Some(2000));
        assert_eq!(p.to_file_string().parse::<ValidationPolicy>().unwrap(), p);
        assert!("freshness_window_ms=0".parse::<ValidationPolicy>().is_err());
        assert!("bogus=1".parse::<ValidationPolicy>().is_err());
    }

    fn tracked(ts: u64) -> TelemetryRecord {
        let mut r = record(2, 1, ts);
        r.body.tracks.push(TrackSummary {
            track_id: 11,
            pos_x_mm: 1,
            pos_y_mm: 2,
            confidence_milli: 800,
            modality_mask: 0b1001,
            provenance_mode: crate::message::ProvenanceMode::Live,
            sensed_to_fused_delta_ms: 90,
        });
        r
    }

    #[test]
    fn display_without_ttl_keeps_stale_tracks() {
        let mut cache = DisplayCache::new(None);
        cache.refresh(&tracked(1000), 1000);
        let snap = cache.snapshot(5000, 2000);
        assert_eq!(snap.len(), 1);
        assert!(snap[0].stale);
        assert_eq!(snap[0].age_ms, 4000);
    }

    #[test]
    fn display_with_ttl_evicts() {
        let mut cache = DisplayCache::new(Some(2000));
        cache.refresh(&tracked(1000), 1000);
        assert!(cache.snapshot(5000, 2000).is_empty());
        assert!(DisplayCache::new(None).snapshot(0, 2000).is_empty());
    }

    #[test]
    fn command_retry_schedule_times_out_after_three() {
        let mut st = CommandStager::new(uid(100));
        let c = st.stage(uid(1), 7, CommandKind::Prepare, 0);
        assert_eq!(st.next_ready(uid(1)), Some(c));
        let id = c.record.command_id();
        assert_eq!(st.transmit(uid(1), id), TransmitStep::Send { attempt: 1 });
        assert_eq!(st.transmit(uid(1), id), TransmitStep::Send { attempt: 2 });
        assert_eq!(st.transmit(uid(1), id), TransmitStep::Send { attempt: 3 });
        // The fourth check fires COMMAND_ATTEMPTS * COMMAND_RETRY_MS after staging.
        assert_eq!(st.transmit(uid(1), id), TransmitStep::TimedOut);
        assert_eq!(COMMAND_ATTEMPTS as u64 * COMMAND_RETRY_MS, 1200);
    }

    #[test]
    fn acked_command_frees_slot() {
        let mut st = CommandStager::new(uid(100));
        let a = st.stage(uid(1), 7, CommandKind::Arm, 0);
        let b = st.stage(uid(1), 7, CommandKind::Prepare, 0);
        assert!(b.record.command_id() > a.record.command_id());
        st.next_ready(uid(1));
        assert_eq!(st.next_ready(uid(1)), None);
        assert_eq!(st.confirm_ack(uid(1), 99), None);
        assert_eq!(st.confirm_ack(uid(1), a.record.command_id()), Some(a));
        assert_eq!(st.next_ready(uid(1)), Some(b));
    }
}
