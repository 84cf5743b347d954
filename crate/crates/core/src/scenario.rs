//! Declarative trial descriptions in a flat, line-oriented text format.
//!
//! ```text
//! twin-scenario v1
//! name thermal_loss
//! mode sim
//! duration_ms 6000
//! seed 7
//! trials 5
//! policy freshness_window_ms=2000
//! unit id=1 pose=0,0 geofence=0,0,100000 profile=baseline
//! object id=1 class=VEHICLE pos=20000,5000 thermal=0.75
//! at 1000 command unit=1 kind=ARM
//! at 3000 fault unit=1 kind=thermal_loss
//! expect degraded unit=1 reason=SUBSYSTEM_LOSS(thermal)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autonomy::{Geofence, TransitionReason};
use crate::channel::Psk;
use crate::gateway::{Outcome, Reason, ValidationPolicy};
use crate::message::{AutonomyState, CommandKind, UnitId};
use crate::perception::{FaultKind, ObjectClass, ProfileKind, SceneObject};
use crate::relay::{Tactic, TacticKind};

pub const SCHEMA_HEADER: &str = "twin-scenario v1";
/// Identity the gateway uses as command issuer and handshake responder.
pub const GATEWAY_UNIT: u16 = 0xFF00;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("SPEC_INVALID at {path}: {reason}")]
pub struct ScenarioError {
    pub path: String,
    pub reason: String,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Live,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sim" => Ok(Self::Sim),
            "live" => Ok(Self::Live),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sim => "sim",
            Self::Live => "live",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitSpec {
    pub id: UnitId,
    pub psk: Psk,
    pub pose: (i32, i32),
    pub geofence: Geofence,
    pub profile: ProfileKind,
    pub fool_rate: Option<f64>,
    pub engage: ObjectClass,
    pub mission_tracks: bool,
    pub confidence_gate: Option<f64>,
    pub spatial_epsilon_mm: Option<f64>,
    pub min_modalities: Option<usize>,
}

/// Deterministic pre-shared key used when a unit line omits `psk=`.
pub fn default_psk(unit: UnitId) -> Psk {
    let mut h = Sha256::new();
    h.update(b"twin-psk/");
    h.update(unit.get().to_be_bytes());
    h.finalize().into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeammateSpec {
    /// Connecting unit (the teammate).
    pub from: UnitId,
    /// Accepting unit.
    pub to: UnitId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardSpec {
    pub origin: UnitId,
    pub via: UnitId,
    pub to: UnitId,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkTactic {
    pub link: UnitId,
    pub tactic: Tactic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Command { unit: UnitId, kind: CommandKind },
    Fault { unit: UnitId, kind: FaultKind, target: Option<ObjectClass> },
    RelayToggle { link: UnitId, tactic: TacticKind, enabled: bool },
    Sever { unit: UnitId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineEntry {
    pub t_ms: u64,
    pub action: Action,
}

/// Inclusive count bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bounds {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Bounds {
    pub fn check(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.min, self.max) {
            (Some(a), Some(b)) => write!(f, "in [{a}, {b}]"),
            (Some(a), None) => write!(f, ">= {a}"),
            (None, Some(b)) => write!(f, "<= {b}"),
            (None, None) => write!(f, "any"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// Every trial reaches DEGRADED with this reason after the fault.
    Degraded { unit: UnitId, reason: TransitionReason },
    /// Every trial revokes PREPARE_TO_FIRE.
    Revoked { unit: UnitId },
    Containment,
    Latency { fault: FaultKind, mean: Bounds, p95_max: Option<f64> },
    /// HOLD_SAFE within `max_latency_ms` of the first provenance flag.
    HoldSafe { unit: UnitId, max_latency_ms: u64 },
    NoHandshake { unit: u16 },
    NoAccept { unit: u16 },
    /// Per-trial DISPLAY_STALE_DETECTED count.
    StaleDisplay(Bounds),
    FinalState { unit: UnitId, state: AutonomyState },
    /// Per-trial verdict count.
    Verdicts { outcome: Outcome, reason: Reason, bounds: Bounds },
    /// Suite-wide thermal misclassification rate under perturbation.
    Misclassification { rate: Bounds, min_frames: u64 },
    WrongClassTracks(Bounds),
    ImplausibleTracks(Bounds),
    UnsafeEngagements(Bounds),
}

fn bounds_words(b: &Bounds, lo: &str, hi: &str) -> String {
    let mut s = String::new();
    if let Some(v) = b.min {
        s.push_str(&format!(" {lo}={v}"));
    }
    if let Some(v) = b.max {
        s.push_str(&format!(" {hi}={v}"));
    }
    s
}

/// Same text as the `expect` directive that declares the gate.
impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Degraded { unit, reason } => write!(f, "degraded unit={unit} reason={}", reason.code()),
            Self::Revoked { unit } => write!(f, "revoked unit={unit}"),
            Self::Containment => write!(f, "containment"),
            Self::Latency { fault, mean, p95_max } => {
                write!(f, "latency fault={fault}{}", bounds_words(mean, "mean_min", "mean_max"))?;
                if let Some(p) = p95_max {
                    write!(f, " p95_max={p}")?;
                }
                Ok(())
            }
            Self::HoldSafe { unit, max_latency_ms } => {
                write!(f, "hold_safe unit={unit} max_latency_ms={max_latency_ms}")
            }
            Self::NoHandshake { unit } => write!(f, "no_handshake unit={unit}"),
            Self::NoAccept { unit } => write!(f, "no_accept unit={unit}"),
            Self::StaleDisplay(b) => write!(f, "stale_display{}", bounds_words(b, "min", "max")),
            Self::FinalState { unit, state } => write!(f, "final_state unit={unit} state={state}"),
            Self::Verdicts { outcome, reason, bounds } => write!(
                f,
                "verdict outcome={} reason={}{}",
                outcome.as_str(),
                reason.as_str(),
                bounds_words(bounds, "min", "max")
            ),
            Self::Misclassification { rate, min_frames } => write!(
                f,
                "misclassification{} min_frames={min_frames}",
                bounds_words(rate, "min", "max")
            ),
            Self::WrongClassTracks(b) => write!(f, "wrong_class_tracks{}", bounds_words(b, "min", "max")),
            Self::ImplausibleTracks(b) => write!(f, "implausible_tracks{}", bounds_words(b, "min", "max")),
            Self::UnsafeEngagements(b) => write!(f, "unsafe_engagements{}", bounds_words(b, "min", "max")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub mode: Mode,
    pub duration_ms: u64,
    pub seed: Option<u64>,
    pub trials: u32,
    pub units: Vec<UnitSpec>,
    pub policy: ValidationPolicy,
    pub objects: Vec<SceneObject>,
    pub teammates: Vec<TeammateSpec>,
    pub forwards: Vec<ForwardSpec>,
    pub tactics: Vec<LinkTactic>,
    pub timeline: Vec<TimelineEntry>,
    pub gates: Vec<Gate>,
    /// Source text, kept so runs can archive exactly what they executed.
    pub source: String,
}

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

struct Fields<'a> {
    path: String,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn new(path: String, words: &[&'a str]) -> Result<Self, ScenarioError> {
        let mut map = BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| invalid(&path, format!("expected key=value, got `{w}`")))?;
            if map.insert(k, v).is_some() {
                return Err(invalid(format!("{path}.{k}"), "duplicate key"));
            }
        }
        Ok(Self { path, map })
    }

    fn at(&self, key: &str) -> String {
        format!("{}.{}", self.path, key)
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| invalid(self.at(key), format!("cannot parse `{v}`"))),
        }
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T, ScenarioError> {
        self.opt(key)?.ok_or_else(|| invalid(self.at(key), "missing"))
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn unit(&mut self, key: &str) -> Result<UnitId, ScenarioError> {
        let v: u16 = self.req(key)?;
        UnitId::new(v).ok_or_else(|| invalid(self.at(key), "unit id 0 is reserved"))
    }

    fn bounds(&mut self) -> Result<Bounds, ScenarioError> {
        Ok(Bounds {
            min: self.opt("min")?,
            max: self.opt("max")?,
        })
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.map.keys().next() {
            Some(k) => Err(invalid(self.at(k), "unknown key")),
            None => Ok(()),
        }
    }
}

fn pair(path: &str, s: &str) -> Result<(i32, i32), ScenarioError> {
    let (a, b) = s.split_once(',').ok_or_else(|| invalid(path, "expected x,y"))?;
    let p = |v: &str| v.trim().parse::<i32>().map_err(|_| invalid(path, format!("bad number `{v}`")));
    Ok((p(a)?, p(b)?))
}

fn geofence(path: &str, s: &str) -> Result<Geofence, ScenarioError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(invalid(path, "expected cx,cy,r"));
    }
    let n = |v: &str| v.trim().parse::<i64>().map_err(|_| invalid(path, format!("bad number `{v}`")));
    let (cx, cy, r) = (n(parts[0])?, n(parts[1])?, n(parts[2])?);
    if r <= 0 {
        return Err(invalid(path, "radius must be > 0"));
    }
    Ok(Geofence {
        center_x_mm: i32::try_from(cx).map_err(|_| invalid(path, "center out of range"))?,
        center_y_mm: i32::try_from(cy).map_err(|_| invalid(path, "center out of range"))?,
        radius_mm: u32::try_from(r).map_err(|_| invalid(path, "radius out of range"))?,
    })
}

fn parse_bool(path: &str, s: &str) -> Result<bool, ScenarioError> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(path, format!("expected a boolean, got `{s}`"))),
    }
}

fn parse_psk(path: &str, s: &str) -> Result<Psk, ScenarioError> {
    let bytes = hex::decode(s).map_err(|_| invalid(path, "psk must be hex"))?;
    bytes.try_into().map_err(|_| invalid(path, "psk must be 32 bytes"))
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

impl FromStr for ScenarioSpec {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, SCHEMA_HEADER)) => {}
            Some((n, other)) => {
                return Err(invalid(format!("line {n}"), format!("expected `{SCHEMA_HEADER}`, got `{other}`")))
            }
            None => return Err(invalid("line 1", "empty scenario")),
        }

        let mut name = None;
        let mut mode = Mode::Sim;
        let mut duration_ms = None;
        let mut seed = None;
        let mut trials = 1u32;
        let mut units = Vec::new();
        let mut policy = ValidationPolicy::default();
        let mut objects = Vec::new();
        let mut teammates = Vec::new();
        let mut forwards = Vec::new();
        let mut tactics = Vec::new();
        let mut timeline = Vec::new();
        let mut gates = Vec::new();

        for (n, line) in lines {
            let words: Vec<&str> = line.split_whitespace().collect();
            let head = words[0];
            let rest = &words[1..];
            let scalar = |key: &str| -> Result<&str, ScenarioError> {
                match rest {
                    [v] => Ok(*v),
                    _ => Err(invalid(key, format!("line {n}: expected one value"))),
                }
            };
            match head {
                "name" => name = Some(scalar("name")?.to_string()),
                "mode" => mode = scalar("mode")?.parse().map_err(|e: String| invalid("mode", e))?,
                "duration_ms" => {
                    duration_ms = Some(
                        scalar("duration_ms")?
                            .parse::<u64>()
                            .map_err(|_| invalid("duration_ms", "expected an unsigned integer"))?,
                    )
                }
                "seed" => {
                    seed = Some(
                        scalar("seed")?
                            .parse::<u64>()
                            .map_err(|_| invalid("seed", "expected an unsigned integer"))?,
                    )
                }
                "trials" => {
                    trials = scalar("trials")?
                        .parse::<u32>()
                        .map_err(|_| invalid("trials", "expected an unsigned integer"))?
                }
                "policy" => {
                    for w in rest {
                        let (k, v) = w
                            .split_once('=')
                            .ok_or_else(|| invalid("policy", format!("expected key=value, got `{w}`")))?;
                        policy.set(k, v).map_err(|e| invalid(format!("policy.{k}"), e.reason))?;
                    }
                }
                "unit" => units.push(parse_unit(Fields::new(format!("units[{}]", units.len()), rest)?)?),
                "object" => objects.push(parse_object(Fields::new(format!("objects[{}]", objects.len()), rest)?)?),
                "teammate" => {
                    let mut f = Fields::new(format!("teammates[{}]", teammates.len()), rest)?;
                    let t = TeammateSpec {
                        from: f.unit("from")?,
                        to: f.unit("to")?,
                    };
                    f.finish()?;
                    teammates.push(t);
                }
                "forward" => {
                    let mut f = Fields::new(format!("forwards[{}]", forwards.len()), rest)?;
                    let fw = ForwardSpec {
                        origin: f.unit("origin")?,
                        via: f.unit("via")?,
                        to: f.unit("to")?,
                        start_ms: f.req("start")?,
                        end_ms: f.req("end")?,
                    };
                    f.finish()?;
                    forwards.push(fw);
                }
                "tactic" => {
                    let path = format!("tactics[{}]", tactics.len());
                    let (link, body) = match rest.split_first() {
                        Some((l, body)) => (*l, body),
                        None => return Err(invalid(path, "missing link")),
                    };
                    let link = link
                        .strip_prefix("link=")
                        .and_then(|v| v.parse::<u16>().ok())
                        .and_then(UnitId::new)
                        .ok_or_else(|| invalid(format!("{path}.link"), "expected link=<unit id>"))?;
                    let tactic = Tactic::parse_line(&body.join(" ")).map_err(|e| invalid(&path, e.reason))?;
                    tactics.push(LinkTactic { link, tactic });
                }
                "at" => timeline.push(parse_timeline(timeline.len(), rest)?),
                "expect" => gates.push(parse_gate(gates.len(), rest)?),
                other => return Err(invalid(format!("line {n}"), format!("unknown directive `{other}`"))),
            }
        }

        let spec = ScenarioSpec {
            name: name.ok_or_else(|| invalid("name", "missing"))?,
            mode,
            duration_ms: duration_ms.ok_or_else(|| invalid("duration_ms", "missing"))?,
            seed,
            trials,
            units,
            policy,
            objects,
            teammates,
            forwards,
            tactics,
            timeline,
            gates,
            source: text.to_string(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_unit(mut f: Fields<'_>) -> Result<UnitSpec, ScenarioError> {
    let id = f.unit("id")?;
    let psk = match f.raw("psk") {
        Some(s) => parse_psk(&f.at("psk"), s)?,
        None => default_psk(id),
    };
    let pose = match f.raw("pose") {
        Some(s) => pair(&f.at("pose"), s)?,
        None => (0, 0),
    };
    let fence = match f.raw("geofence") {
        Some(s) => geofence(&f.at("geofence"), s)?,
        None => Geofence {
            center_x_mm: pose.0,
            center_y_mm: pose.1,
            radius_mm: 100_000,
        },
    };
    let profile = match f.raw("profile") {
        None | Some("baseline") => ProfileKind::Baseline,
        Some("hardened") => ProfileKind::Hardened,
        Some(other) => return Err(invalid(f.at("profile"), format!("unknown profile `{other}`"))),
    };
    let fool_rate: Option<f64> = f.opt("fool_rate")?;
    if fool_rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
        return Err(invalid(f.at("fool_rate"), "must be in [0, 1]"));
    }
    let engage = match f.raw("engage") {
        Some(s) => ObjectClass::parse(s).ok_or_else(|| invalid(f.at("engage"), format!("unknown class `{s}`")))?,
        None => ObjectClass::Vehicle,
    };
    let mission_tracks = match f.raw("mission_tracks") {
        Some(s) => parse_bool(&f.at("mission_tracks"), s)?,
        None => true,
    };
    let confidence_gate = f.opt("gate")?;
    let spatial_epsilon_mm = f.opt("epsilon")?;
    let min_modalities = f.opt("min_modalities")?;
    f.finish()?;
    Ok(UnitSpec {
        id,
        psk,
        pose,
        geofence: fence,
        profile,
        fool_rate,
        engage,
        mission_tracks,
        confidence_gate,
        spatial_epsilon_mm,
        min_modalities,
    })
}

fn parse_object(mut f: Fields<'_>) -> Result<SceneObject, ScenarioError> {
    let object_id = f.req("id")?;
    let class_s = f.raw("class").ok_or_else(|| invalid(f.at("class"), "missing"))?;
    let class = ObjectClass::parse(class_s).ok_or_else(|| invalid(f.at("class"), format!("unknown class `{class_s}`")))?;
    let pos = pair(&f.at("pos"), f.raw("pos").ok_or_else(|| invalid(f.at("pos"), "missing"))?)?;
    let thermal: f64 = f.req("thermal")?;
    if !(0.0..=1.0).contains(&thermal) {
        return Err(invalid(f.at("thermal"), "must be in [0, 1]"));
    }
    f.finish()?;
    Ok(SceneObject {
        object_id,
        class,
        pos_x_mm: pos.0,
        pos_y_mm: pos.1,
        thermal_intensity: thermal,
    })
}

fn parse_timeline(idx: usize, words: &[&str]) -> Result<TimelineEntry, ScenarioError> {
    let path = format!("timeline[{idx}]");
    let (t, kind, rest) = match words {
        [t, kind, rest @ ..] => (*t, *kind, rest),
        _ => return Err(invalid(path, "expected `at <t_ms> <action> ...`")),
    };
    let t_ms = t
        .parse::<u64>()
        .map_err(|_| invalid(format!("{path}.t_ms"), format!("bad time `{t}`")))?;
    let mut f = Fields::new(path.clone(), rest)?;
    let action = match kind {
        "command" => {
            let unit = f.unit("unit")?;
            let k = f.raw("kind").ok_or_else(|| invalid(f.at("kind"), "missing"))?;
            let kind = CommandKind::parse(k).ok_or_else(|| invalid(f.at("kind"), format!("unknown command `{k}`")))?;
            Action::Command { unit, kind }
        }
        "fault" => {
            let unit = f.unit("unit")?;
            let kind: FaultKind = f.req("kind")?;
            let target = match f.raw("target") {
                Some(s) => Some(ObjectClass::parse(s).ok_or_else(|| invalid(f.at("target"), format!("unknown class `{s}`")))?),
                None => None,
            };
            Action::Fault { unit, kind, target }
        }
        "relay_toggle" => {
            let link = f.unit("link")?;
            let k = f.raw("tactic").ok_or_else(|| invalid(f.at("tactic"), "missing"))?;
            let tactic = TacticKind::parse(k).ok_or_else(|| invalid(f.at("tactic"), format!("unknown tactic `{k}`")))?;
            let enabled = parse_bool(&f.at("enabled"), f.raw("enabled").unwrap_or("true"))?;
            Action::RelayToggle { link, tactic, enabled }
        }
        "sever" => Action::Sever { unit: f.unit("unit")? },
        other => return Err(invalid(path, format!("unknown action `{other}`"))),
    };
    f.finish()?;
    Ok(TimelineEntry { t_ms, action })
}

fn parse_gate(idx: usize, words: &[&str]) -> Result<Gate, ScenarioError> {
    let path = format!("gates[{idx}]");
    let (kind, rest) = words
        .split_first()
        .ok_or_else(|| invalid(&path, "missing gate kind"))?;
    let mut f = Fields::new(path.clone(), rest)?;
    let gate = match *kind {
        "degraded" => {
            let unit = f.unit("unit")?;
            let r = f.raw("reason").ok_or_else(|| invalid(f.at("reason"), "missing"))?;
            let reason = TransitionReason::parse(r).ok_or_else(|| invalid(f.at("reason"), format!("unknown reason `{r}`")))?;
            Gate::Degraded { unit, reason }
        }
        "revoked" => Gate::Revoked { unit: f.unit("unit")? },
        "containment" => Gate::Containment,
        "latency" => Gate::Latency {
            fault: f.req("fault")?,
            mean: Bounds {
                min: f.opt("mean_min")?,
                max: f.opt("mean_max")?,
            },
            p95_max: f.opt("p95_max")?,
        },
        "hold_safe" => Gate::HoldSafe {
            unit: f.unit("unit")?,
            max_latency_ms: f.req("max_latency_ms")?,
        },
        "no_handshake" => Gate::NoHandshake { unit: f.req("unit")? },
        "no_accept" => Gate::NoAccept { unit: f.req("unit")? },
        "stale_display" => Gate::StaleDisplay(f.bounds()?),
        "final_state" => {
            let unit = f.unit("unit")?;
            let s = f.raw("state").ok_or_else(|| invalid(f.at("state"), "missing"))?;
            let state = AutonomyState::parse(s).ok_or_else(|| invalid(f.at("state"), format!("unknown state `{s}`")))?;
            Gate::FinalState { unit, state }
        }
        "verdict" => {
            let o = f.raw("outcome").ok_or_else(|| invalid(f.at("outcome"), "missing"))?;
            let outcome =
                Outcome::parse(o).ok_or_else(|| invalid(f.at("outcome"), format!("unknown outcome `{o}`")))?;
            let r = f.raw("reason").ok_or_else(|| invalid(f.at("reason"), "missing"))?;
            let reason = Reason::parse(r).ok_or_else(|| invalid(f.at("reason"), format!("unknown reason `{r}`")))?;
            Gate::Verdicts {
                outcome,
                reason,
                bounds: f.bounds()?,
            }
        }
        "misclassification" => Gate::Misclassification {
            rate: f.bounds()?,
            min_frames: f.opt("min_frames")?.unwrap_or(0),
        },
        "wrong_class_tracks" => Gate::WrongClassTracks(f.bounds()?),
        "implausible_tracks" => Gate::ImplausibleTracks(f.bounds()?),
        "unsafe_engagements" => Gate::UnsafeEngagements(f.bounds()?),
        other => return Err(invalid(path, format!("unknown gate `{other}`"))),
    };
    f.finish()?;
    Ok(gate)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

impl ScenarioSpec {
    pub fn unit(&self, id: UnitId) -> Option<&UnitSpec> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn tactics_for(&self, link: UnitId) -> Vec<Tactic> {
        self.tactics
            .iter()
            .filter(|t| t.link == link)
            .map(|t| t.tactic.clone())
            .collect()
    }

    pub fn relay_links(&self) -> BTreeSet<UnitId> {
        self.tactics.iter().map(|t| t.link).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be > 0"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        if self.mode == Mode::Sim && self.seed.is_none() {
            return Err(invalid("seed", "required in sim mode"));
        }
        if self.units.is_empty() {
            return Err(invalid("units", "at least one unit is required"));
        }
        let mut ids = BTreeSet::new();
        let mut psks = BTreeSet::new();
        for (i, u) in self.units.iter().enumerate() {
            if u.id.get() == GATEWAY_UNIT {
                return Err(invalid(format!("units[{i}].id"), "reserved for the gateway"));
            }
            if !ids.insert(u.id) {
                return Err(invalid(format!("units[{i}].id"), format!("duplicate unit {}", u.id)));
            }
            if !psks.insert(u.psk) {
                return Err(invalid(format!("units[{i}].psk"), "psk shared with another unit"));
            }
        }
        let known = |path: String, u: UnitId| -> Result<(), ScenarioError> {
            if ids.contains(&u) {
                Ok(())
            } else {
                Err(invalid(path, format!("unknown unit {u}")))
            }
        };
        let mut obj_ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !obj_ids.insert(o.object_id) {
                return Err(invalid(format!("objects[{i}].id"), "duplicate object id"));
            }
        }
        let mut connectors = BTreeSet::new();
        for (i, t) in self.teammates.iter().enumerate() {
            known(format!("teammates[{i}].from"), t.from)?;
            known(format!("teammates[{i}].to"), t.to)?;
            if t.from == t.to {
                return Err(invalid(format!("teammates[{i}]"), "a unit cannot team with itself"));
            }
            if !connectors.insert(t.from) {
                return Err(invalid(format!("teammates[{i}].from"), "one outgoing teammate link per unit"));
            }
        }
        for (i, fw) in self.forwards.iter().enumerate() {
            let p = format!("forwards[{i}]");
            known(format!("{p}.origin"), fw.origin)?;
            known(format!("{p}.via"), fw.via)?;
            known(format!("{p}.to"), fw.to)?;
            if !self.teammates.iter().any(|t| t.from == fw.via && t.to == fw.to) {
                return Err(invalid(p, "needs a teammate link from `via` to `to`"));
            }
            if fw.origin == fw.via {
                return Err(invalid(format!("{p}.origin"), "origin must differ from via"));
            }
            if fw.end_ms <= fw.start_ms || fw.end_ms > self.duration_ms {
                return Err(invalid(format!("{p}.end"), "interval must be non-empty and within duration"));
            }
        }
        for (i, t) in self.tactics.iter().enumerate() {
            known(format!("tactics[{i}].link"), t.link)?;
            if t.tactic.end_ms > self.duration_ms {
                return Err(invalid(format!("tactics[{i}].end"), "beyond scenario duration"));
            }
        }
        let mut last = 0;
        for (i, e) in self.timeline.iter().enumerate() {
            let p = format!("timeline[{i}]");
            if e.t_ms < last {
                return Err(invalid(format!("{p}.t_ms"), "timeline must be sorted by time"));
            }
            if e.t_ms > self.duration_ms {
                return Err(invalid(format!("{p}.t_ms"), "beyond scenario duration"));
            }
            last = e.t_ms;
            match &e.action {
                Action::Command { unit, .. } | Action::Fault { unit, .. } | Action::Sever { unit } => {
                    known(format!("{p}.unit"), *unit)?
                }
                Action::RelayToggle { link, tactic, .. } => {
                    known(format!("{p}.link"), *link)?;
                    if !self.tactics.iter().any(|t| t.link == *link && t.tactic.kind() == *tactic) {
                        return Err(invalid(format!("{p}.tactic"), "no such tactic on that link"));
                    }
                }
            }
        }
        for (i, g) in self.gates.iter().enumerate() {
            let unit = match g {
                Gate::Degraded { unit, .. }
                | Gate::Revoked { unit }
                | Gate::HoldSafe { unit, .. }
                | Gate::FinalState { unit, .. } => Some(*unit),
                _ => None,
            };
            if let Some(u) = unit {
                known(format!("gates[{i}].unit"), u)?;
            }
        }
        Ok(())
    }

    /// Checks that only features the multi-process mode implements are used.
    pub fn validate_live(&self) -> Result<(), ScenarioError> {
        if !self.teammates.is_empty() {
            return Err(invalid("teammates[0]", "teammate links are only available in sim mode"));
        }
        if !self.forwards.is_empty() {
            return Err(invalid("forwards[0]", "forwarding is only available in sim mode"));
        }
        if self.relay_links().len() > 1 {
            return Err(invalid("tactics", "live mode supports one relayed link"));
        }
        Ok(())
    }
}
