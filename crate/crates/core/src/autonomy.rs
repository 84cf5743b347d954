//! Health-aware autonomy state machine with a latched hold-safe mode.
//!
//! `decide` is a pure function of the current state, a snapshot of boolean
//! conditions and at most one pending operator command. Everything with a
//! clock lives in [`HealthLedger`] and [`StateMachine`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::message::{AutonomyState, CommandKind, Subsystem};

pub const TICK_MS: u64 = 50;
pub const TELEMETRY_PERIOD_MS: u64 = 100;
pub const TRACK_STARVE_TIMEOUT_MS: u64 = 1500;
pub const DEGRADED_DWELL_LIMIT_MS: u64 = 30_000;
pub const HEALTH_RESTORE_DWELL_MS: u64 = 1000;
/// How long a provenance flag keeps the alarm input asserted.
pub const ALARM_HOLD_MS: u64 = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionReason {
    OperatorCmd,
    ConfirmedTrack,
    SubsystemLoss(Subsystem),
    CommStale,
    TrackStarved,
    ProvenanceAlarm,
    GeofenceViolation,
    HealthRestored,
    AlarmCleared,
    ConfidenceCollapse,
    DegradedDwellExceeded,
}

impl TransitionReason {
    /// Log form, e.g. `SUBSYSTEM_LOSS(thermal)`.
    pub fn code(&self) -> String {
        match self {
            Self::OperatorCmd => "OPERATOR_CMD".into(),
            Self::ConfirmedTrack => "CONFIRMED_TRACK".into(),
            Self::SubsystemLoss(s) => format!("SUBSYSTEM_LOSS({})", s.as_str()),
            Self::CommStale => "COMM_STALE".into(),
            Self::TrackStarved => "TRACK_STARVED".into(),
            Self::ProvenanceAlarm => "PROVENANCE_ALARM".into(),
            Self::GeofenceViolation => "GEOFENCE_VIOLATION".into(),
            Self::HealthRestored => "HEALTH_RESTORED".into(),
            Self::AlarmCleared => "ALARM_CLEARED".into(),
            Self::ConfidenceCollapse => "CONFIDENCE_COLLAPSE".into(),
            Self::DegradedDwellExceeded => "DEGRADED_DWELL_EXCEEDED".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if let Some(inner) = s.strip_prefix("SUBSYSTEM_LOSS(").and_then(|r| r.strip_suffix(')')) {
            return Subsystem::parse(inner).map(Self::SubsystemLoss);
        }
        Some(match s {
            "OPERATOR_CMD" => Self::OperatorCmd,
            "CONFIRMED_TRACK" => Self::ConfirmedTrack,
            "COMM_STALE" => Self::CommStale,
            "TRACK_STARVED" => Self::TrackStarved,
            "PROVENANCE_ALARM" => Self::ProvenanceAlarm,
            "GEOFENCE_VIOLATION" => Self::GeofenceViolation,
            "HEALTH_RESTORED" => Self::HealthRestored,
            "ALARM_CLEARED" => Self::AlarmCleared,
            "CONFIDENCE_COLLAPSE" => Self::ConfidenceCollapse,
            "DEGRADED_DWELL_EXCEEDED" => Self::DegradedDwellExceeded,
            _ => return None,
        })
    }
}

impl fmt::Display for TransitionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub from: AutonomyState,
    pub to: AutonomyState,
    pub reason: TransitionReason,
    pub t_ms: u64,
}

impl TransitionEvent {
    /// Leaving PREPARE_TO_FIRE for a reduced-authority state.
    pub fn is_revocation(&self) -> bool {
        self.from == AutonomyState::PrepareToFire
            && matches!(self.to, AutonomyState::Degraded | AutonomyState::HoldSafe)
    }
}

// ---------------------------------------------------------------------------
// Health ledger and geofence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct HealthLedger {
    last_heartbeat_ms: [u64; 6],
    pub timeouts_ms: [u64; 6],
    /// Set when the command path has timed out; forces comm to read lost.
    pub comm_degraded: bool,
}

impl HealthLedger {
    pub const DEFAULT_TIMEOUTS_MS: [u64; 6] = [800, 400, 400, 400, 600, 2000];

    /// All subsystems count as freshly heard at `start_ms`.
    pub fn new(start_ms: u64) -> Self {
        Self {
            last_heartbeat_ms: [start_ms; 6],
            timeouts_ms: Self::DEFAULT_TIMEOUTS_MS,
            comm_degraded: false,
        }
    }

    pub fn heartbeat(&mut self, s: Subsystem, at_ms: u64) {
        let slot = &mut self.last_heartbeat_ms[s as usize];
        *slot = (*slot).max(at_ms);
    }

    pub fn last_heartbeat(&self, s: Subsystem) -> u64 {
        self.last_heartbeat_ms[s as usize]
    }

    pub fn is_live(&self, s: Subsystem, now: u64) -> bool {
        if s == Subsystem::Comm && self.comm_degraded {
            return false;
        }
        now.saturating_sub(self.last_heartbeat(s)) <= self.timeouts_ms[s as usize]
    }

    /// Bit set per lost subsystem, using the health-bitmap layout.
    pub fn lost_mask(&self, now: u64) -> u8 {
        Subsystem::ALL
            .iter()
            .filter(|s| !self.is_live(**s, now))
            .fold(0, |m, s| m | s.bit())
    }

    /// Health bitmap for telemetry: bit set means live.
    pub fn bitmap(&self, now: u64) -> u8 {
        !self.lost_mask(now) & 0x3f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geofence {
    pub center_x_mm: i32,
    pub center_y_mm: i32,
    pub radius_mm: u32,
}

impl Geofence {
    pub fn contains(&self, x_mm: i32, y_mm: i32) -> bool {
        let dx = (x_mm as i64 - self.center_x_mm as i64) as i128;
        let dy = (y_mm as i64 - self.center_y_mm as i64) as i128;
        let r = self.radius_mm as i128;
        dx * dx + dy * dy <= r * r
    }
}

// ---------------------------------------------------------------------------
// Pure transition table
// ---------------------------------------------------------------------------

/// Boolean inputs to one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Conditions {
    /// Lost subsystems, one bit per `Subsystem`.
    pub lost: u8,
    /// A confirmed track of the engageable class exists.
    pub engageable_track: bool,
    /// Any confirmed track exists.
    pub any_track: bool,
    pub track_starved: bool,
    pub in_geofence: bool,
    pub provenance_alarm: bool,
    pub degraded_dwell_exceeded: bool,
    /// Every subsystem has been live for the restore dwell.
    pub health_restored: bool,
}

impl Conditions {
    pub fn all_live(&self) -> bool {
        self.lost == 0
    }

    fn first_lost_sensor(&self) -> Option<Subsystem> {
        Subsystem::ALL
            .into_iter()
            .filter(|s| *s != Subsystem::Comm)
            .find(|s| self.lost & s.bit() != 0)
    }

    fn comm_lost(&self) -> bool {
        self.lost & Subsystem::Comm.bit() != 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandOutcome {
    Executed,
    Refused,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub next: Option<(AutonomyState, TransitionReason)>,
    pub command: Option<CommandOutcome>,
}

fn hold_safe_cause(state: AutonomyState, c: &Conditions, cmd: Option<CommandKind>) -> Option<TransitionReason> {
    if state == AutonomyState::HoldSafe {
        return None;
    }
    if c.provenance_alarm {
        return Some(TransitionReason::ProvenanceAlarm);
    }
    if !c.in_geofence {
        return Some(TransitionReason::GeofenceViolation);
    }
    if cmd == Some(CommandKind::Hold) {
        return Some(TransitionReason::OperatorCmd);
    }
    // Before arming the sensor suite may legitimately still be warming up.
    if state != AutonomyState::Idle && c.lost.count_ones() >= 2 {
        let first = c.first_lost_sensor().unwrap_or(Subsystem::Comm);
        return Some(TransitionReason::SubsystemLoss(first));
    }
    if state == AutonomyState::Degraded && c.degraded_dwell_exceeded {
        return Some(TransitionReason::DegradedDwellExceeded);
    }
    None
}

fn degraded_cause(state: AutonomyState, c: &Conditions) -> Option<TransitionReason> {
    if !matches!(state, AutonomyState::Ready | AutonomyState::PrepareToFire) {
        return None;
    }
    if let Some(s) = c.first_lost_sensor() {
        return Some(TransitionReason::SubsystemLoss(s));
    }
    if c.comm_lost() {
        return Some(TransitionReason::CommStale);
    }
    if c.track_starved {
        return Some(TransitionReason::TrackStarved);
    }
    None
}

fn command_transition(
    state: AutonomyState,
    c: &Conditions,
    cmd: CommandKind,
) -> Option<(AutonomyState, TransitionReason)> {
    use AutonomyState::*;
    use CommandKind::*;
    match (state, cmd) {
        (Idle, Arm) if c.all_live() && c.in_geofence => Some((Ready, TransitionReason::OperatorCmd)),
        (Ready, Prepare)
            if c.engageable_track && c.all_live() && c.in_geofence && !c.provenance_alarm =>
        {
            Some((PrepareToFire, TransitionReason::ConfirmedTrack))
        }
        (PrepareToFire, StandDown) => Some((Ready, TransitionReason::OperatorCmd)),
        (Degraded, Resume) if c.health_restored && c.all_live() => {
            Some((Ready, TransitionReason::HealthRestored))
        }
        (HoldSafe, Reset) if !c.provenance_alarm => Some((Idle, TransitionReason::AlarmCleared)),
        _ => None,
    }
}

/// One step of the canonical table. Priority: hold-safe causes, then
/// degraded causes, then the operator command, then nominal progressions.
/// A command that loses to a higher-priority transition is refused.
pub fn decide(state: AutonomyState, c: &Conditions, cmd: Option<CommandKind>) -> Decision {
    if let Some(reason) = hold_safe_cause(state, c, cmd) {
        let command = cmd.map(|k| {
            if k == CommandKind::Hold && reason == TransitionReason::OperatorCmd {
                CommandOutcome::Executed
            } else {
                CommandOutcome::Refused
            }
        });
        return Decision {
            next: Some((AutonomyState::HoldSafe, reason)),
            command,
        };
    }
    if let Some(reason) = degraded_cause(state, c) {
        return Decision {
            next: Some((AutonomyState::Degraded, reason)),
            command: cmd.map(|_| CommandOutcome::Refused),
        };
    }
    if let Some(k) = cmd {
        return match command_transition(state, c, k) {
            Some(next) => Decision {
                next: Some(next),
                command: Some(CommandOutcome::Executed),
            },
            None => Decision {
                next: None,
                command: Some(CommandOutcome::Refused),
            },
        };
    }
    if state == AutonomyState::PrepareToFire && !c.engageable_track {
        return Decision {
            next: Some((AutonomyState::Ready, TransitionReason::ConfidenceCollapse)),
            command: None,
        };
    }
    Decision {
        next: None,
        command: None,
    }
}

// ---------------------------------------------------------------------------
// Clocked wrapper
// ---------------------------------------------------------------------------

/// Result of one clocked step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutput {
    pub transition: Option<TransitionEvent>,
    pub command: Option<(CommandKind, CommandOutcome)>,
}

/// Per-step observations from perception and the link layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepInputs {
    pub engageable_track: bool,
    pub any_track: bool,
    pub in_geofence: bool,
    pub command: Option<CommandKind>,
}

/// Timer-bearing state around [`decide`].
#[derive(Clone, Debug)]
pub struct StateMachine {
    state: AutonomyState,
    entered_ms: u64,
    last_track_ms: u64,
    all_live_since: Option<u64>,
    alarm_until_ms: Option<u64>,
    pub mission_requires_tracks: bool,
}

impl StateMachine {
    pub fn new(start_ms: u64, mission_requires_tracks: bool) -> Self {
        Self {
            state: AutonomyState::Idle,
            entered_ms: start_ms,
            last_track_ms: start_ms,
            all_live_since: Some(start_ms),
            alarm_until_ms: None,
            mission_requires_tracks,
        }
    }

    pub fn state(&self) -> AutonomyState {
        self.state
    }

    pub fn raise_provenance_alarm(&mut self, now: u64) {
        let until = now + ALARM_HOLD_MS;
        self.alarm_until_ms = Some(self.alarm_until_ms.map_or(until, |u| u.max(until)));
    }

    pub fn alarm_active(&self, now: u64) -> bool {
        self.alarm_until_ms.is_some_and(|u| now < u)
    }

    pub fn conditions(&mut self, health: &HealthLedger, inputs: &StepInputs, now: u64) -> Conditions {
        let lost = health.lost_mask(now);
        if lost != 0 {
            self.all_live_since = None;
        } else if self.all_live_since.is_none() {
            self.all_live_since = Some(now);
        }
        if inputs.any_track {
            self.last_track_ms = now;
        }
        Conditions {
            lost,
            engageable_track: inputs.engageable_track,
            any_track: inputs.any_track,
            track_starved: self.mission_requires_tracks
                && now.saturating_sub(self.last_track_ms) >= TRACK_STARVE_TIMEOUT_MS,
            in_geofence: inputs.in_geofence,
            provenance_alarm: self.alarm_active(now),
            degraded_dwell_exceeded: self.state == AutonomyState::Degraded
                && now.saturating_sub(self.entered_ms) > DEGRADED_DWELL_LIMIT_MS,
            health_restored: self
                .all_live_since
                .is_some_and(|t| now.saturating_sub(t) >= HEALTH_RESTORE_DWELL_MS),
        }
    }

    pub fn step(&mut self, health: &HealthLedger, inputs: &StepInputs, now: u64) -> StepOutput {
        let c = self.conditions(health, inputs, now);
        let d = decide(self.state, &c, inputs.command);
        let transition = d.next.map(|(to, reason)| {
            let ev = TransitionEvent {
                from: self.state,
                to,
                reason,
                t_ms: now,
            };
            self.state = to;
            self.entered_ms = now;
            ev
        });
        StepOutput {
            transition,
            command: inputs.command.zip(d.command),
        }
    }
}
