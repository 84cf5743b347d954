//! One autonomous unit: synthetic sensors, fusion, the state machine and
//! its telemetry, command and teammate links.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Addr, Ctx, Host, Link, Timer};
use crate::autonomy::{
    CommandOutcome, HealthLedger, StateMachine, StepInputs, TransitionEvent, TELEMETRY_PERIOD_MS, TICK_MS,
};
use crate::channel::{self, Identity, Initiator, Registry, Responder, Session, MAC_LEN};
use crate::eventlog::{EventKind, EventLogEntry};
use crate::gateway::{validate, verdict_event, Outcome, SequenceLedger, ValidationPolicy};
use crate::message::{
    decode_record, encode_record, peek_header, CommandAck, CommandKind, Envelope, Heartbeat, Message, MsgType,
    Subsystem, TelemetryBody, TelemetryRecord, UnitId, HB_FLAG_CMD_DEGRADED, HB_FLAG_PROVENANCE_ALARM, MAX_TRACKS,
    NONCE_LEN,
};
use crate::perception::{
    fuse, gate_sound, sense, Detection, DetectorProfile, FaultState, FusionConfig, Modality, ObjectClass, ProfileKind,
    SceneObject, TrackTable, TRACK_TIMEOUT_MS,
};
use crate::scenario::{Action, ForwardSpec, TimelineEntry, UnitSpec};

pub const NAV_PERIOD_MS: u64 = 100;

/// Wiring and parameters for one unit host.
#[derive(Clone, Debug)]
pub struct UnitConfig {
    pub spec: UnitSpec,
    pub objects: Vec<SceneObject>,
    pub policy: ValidationPolicy,
    /// Fault entries addressed to this unit.
    pub timeline: Vec<TimelineEntry>,
    pub local: Addr,
    pub local_cmd: Addr,
    /// Telemetry peer: the gateway, or a relay in front of it.
    pub gateway: Addr,
    pub gateway_cmd: Addr,
    /// Accepting endpoint and the teammates allowed to connect.
    pub teammate_listen: Option<(Addr, Vec<(UnitId, channel::Psk)>)>,
    /// Teammate to connect to.
    pub teammate_connect: Option<Addr>,
    /// Where to hand plaintext copies of our own telemetry.
    pub tap_to: Option<Addr>,
    pub tap_listen: Option<Addr>,
    pub forward: Option<ForwardSpec>,
    pub start_ms: u64,
}

struct Pending {
    deliver_at: u64,
    subsystem: Subsystem,
    detections: Vec<Detection>,
}

struct Uplink {
    peer: Addr,
    initiator: Initiator,
    session: Option<Session>,
    seq: u64,
    failed: bool,
}

impl Uplink {
    fn new(peer: Addr, identity: Identity, rng: &mut ChaCha8Rng) -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill(&mut nonce);
        Self {
            peer,
            initiator: Initiator::new(identity, nonce),
            session: None,
            seq: 0,
            failed: false,
        }
    }
}

struct TeammateIngress {
    addr: Addr,
    responder: Responder,
    sessions: BTreeMap<u32, Session>,
    ledger: SequenceLedger,
}

pub struct UnitHost {
    cfg: UnitConfig,
    id: UnitId,
    component: String,
    rng: ChaCha8Rng,
    profile: DetectorProfile,
    fusion: FusionConfig,
    faults: FaultState,
    pending: VecDeque<Pending>,
    table: TrackTable,
    health: HealthLedger,
    sm: StateMachine,
    gateway: Uplink,
    teammate: Option<Uplink>,
    ingress: Option<TeammateIngress>,
    commands: VecDeque<(u64, CommandKind)>,
    last_command_id: u64,
    cmd_registered: bool,
}

fn truth_class(objects: &[SceneObject], id: Option<u32>) -> &'static str {
    id.and_then(|id| objects.iter().find(|o| o.object_id == id))
        .map(|o| o.class.as_str())
        .unwrap_or("NONE")
}

impl UnitHost {
    pub fn new(cfg: UnitConfig, mut rng: ChaCha8Rng) -> Self {
        let spec = &cfg.spec;
        let id = spec.id;
        let mut profile = match spec.profile {
            ProfileKind::Baseline => DetectorProfile::baseline(),
            ProfileKind::Hardened => DetectorProfile::hardened(),
        };
        if let Some(r) = spec.fool_rate {
            profile.perturbation_fool_rate = r;
        }
        let mut fusion = FusionConfig {
            hardened: spec.profile == ProfileKind::Hardened,
            ..FusionConfig::default()
        };
        if let Some(g) = spec.confidence_gate {
            fusion.confidence_gate = g;
        }
        if let Some(e) = spec.spatial_epsilon_mm {
            fusion.spatial_epsilon_mm = e;
        }
        if let Some(m) = spec.min_modalities {
            fusion.min_modalities = m;
        }
        let identity = Identity { unit: id, psk: spec.psk };
        let gateway = Uplink::new(cfg.gateway, identity.clone(), &mut rng);
        let teammate = cfg
            .teammate_connect
            .map(|peer| Uplink::new(peer, identity.clone(), &mut rng));
        let ingress = cfg.teammate_listen.as_ref().map(|(addr, peers)| {
            let mut registry = Registry::new();
            for (u, psk) in peers {
                registry
                    .insert(&Identity { unit: *u, psk: *psk })
                    .expect("scenario validation rejects shared keys");
            }
            TeammateIngress {
                addr: *addr,
                responder: Responder::new(id, registry, 1),
                sessions: BTreeMap::new(),
                ledger: SequenceLedger::new(),
            }
        });
        let start = cfg.start_ms;
        let mission = spec.mission_tracks;
        Self {
            component: format!("unit-{id}"),
            id,
            table: TrackTable::new(fusion.spatial_epsilon_mm, TRACK_TIMEOUT_MS),
            health: HealthLedger::new(start),
            sm: StateMachine::new(start, mission),
            rng,
            profile,
            fusion,
            faults: FaultState::default(),
            pending: VecDeque::new(),
            gateway,
            teammate,
            ingress,
            commands: VecDeque::new(),
            last_command_id: 0,
            cmd_registered: false,
            cfg,
        }
    }

    pub fn state(&self) -> crate::message::AutonomyState {
        self.sm.state()
    }

    fn ev(&self, now: u64, kind: EventKind) -> EventLogEntry {
        EventLogEntry::new(now, self.component.clone(), kind)
    }

    fn uplink(&mut self, link: Link) -> Option<&mut Uplink> {
        match link {
            Link::Gateway => Some(&mut self.gateway),
            Link::Teammate => self.teammate.as_mut(),
        }
    }

    fn send_hello(&mut self, link: Link, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let local = self.cfg.local;
        let peer_name;
        let result = {
            let Some(up) = self.uplink(link) else { return };
            if up.session.is_some() || up.failed {
                return;
            }
            peer_name = up.peer.to_string();
            let r = up.initiator.hello(now);
            if r.is_err() {
                up.failed = true;
            }
            r.map(|bytes| (up.peer, bytes))
        };
        match result {
            Ok((peer, bytes)) => {
                ctx.send(local, peer, bytes);
                ctx.schedule(now + channel::HANDSHAKE_RETRY_MS, Timer::HandshakeRetry(link));
            }
            Err(e) => {
                let entry = self
                    .ev(now, EventKind::HandshakeFail)
                    .with("unit", self.id.get())
                    .with("peer", peer_name)
                    .with("reason", "TIMEOUT")
                    .with("detail", e.to_string());
                ctx.log(entry);
            }
        }
    }

    // ---- perception -------------------------------------------------------

    fn on_frame(&mut self, m: Modality, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let period = m.default_period_ms();
        ctx.schedule(now + period, Timer::Frame(m));
        if self.faults.silenced(m) {
            return;
        }
        let dets = sense(&self.cfg.objects, m, &mut self.rng, &self.faults, &self.profile, now);
        if m == Modality::Thermal {
            if let Some(target) = self.faults.perturbation {
                for d in &dets {
                    let Some(obj) = self.cfg.objects.iter().find(|o| o.object_id == d.object_id) else {
                        continue;
                    };
                    let aimed = target.unwrap_or(obj.class.default_decoy_target());
                    if aimed == obj.class {
                        continue;
                    }
                    let guess = d.class_guess.map(ObjectClass::as_str).unwrap_or("NONE");
                    let entry = self
                        .ev(now, EventKind::AttackInjected)
                        .with("kind", "THERMO_PERTURBATION")
                        .with("object", obj.object_id)
                        .with("truth_class", obj.class.as_str())
                        .with("guess", guess)
                        .with("fooled", d.class_guess != Some(obj.class));
                    ctx.log(entry);
                }
            }
        }
        self.pending.push_back(Pending {
            deliver_at: now + period,
            subsystem: m.subsystem(),
            detections: dets,
        });
    }

    fn on_nav(&mut self, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        ctx.schedule(now + NAV_PERIOD_MS, Timer::NavFrame);
        self.pending.push_back(Pending {
            deliver_at: now + NAV_PERIOD_MS,
            subsystem: Subsystem::Nav,
            detections: Vec::new(),
        });
    }

    // ---- state machine tick -------------------------------------------------

    fn on_tick(&mut self, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        ctx.schedule(now + TICK_MS, Timer::Tick);

        let mut batch = Vec::new();
        let mut keep = VecDeque::new();
        for p in self.pending.drain(..) {
            if p.deliver_at <= now {
                self.health.heartbeat(p.subsystem, p.deliver_at);
                batch.extend(p.detections);
            } else {
                keep.push_back(p);
            }
        }
        self.pending = keep;

        let fused = fuse(&batch, &self.fusion, now);
        debug_assert!(fused.confirmed.iter().all(|t| gate_sound(t, &self.fusion)));
        let update = self.table.update(fused.confirmed, now);
        for id in update.created.iter().chain(update.changed.iter()) {
            let t = self.table.get(*id).expect("just updated");
            let entry = self
                .ev(now, EventKind::TrackConfirmed)
                .with("track", t.track_id)
                .with("class", t.fused.class.map(ObjectClass::as_str).unwrap_or("NONE"))
                .with("truth_class", truth_class(&self.cfg.objects, t.fused.truth_object))
                .with("confidence_milli", t.summary().confidence_milli)
                .with("modality_mask", t.fused.modality_mask)
                .with("implausible_thermal", t.fused.implausible_thermal > 0)
                .with("discarded_thermal", t.fused.discarded_thermal as u64)
                .with("new", update.created.contains(id));
            ctx.log(entry);
        }
        for id in &update.dropped {
            let entry = self.ev(now, EventKind::TrackDropped).with("track", *id);
            ctx.log(entry);
        }

        let engage = self.cfg.spec.engage;
        let target = self.table.tracks().iter().find(|t| t.fused.class == Some(engage));
        let target_truth = target.map(|t| truth_class(&self.cfg.objects, t.fused.truth_object));
        let command = self.commands.pop_front();
        let inputs = StepInputs {
            engageable_track: target.is_some(),
            any_track: !self.table.tracks().is_empty(),
            in_geofence: self
                .cfg
                .spec
                .geofence
                .contains(self.cfg.spec.pose.0, self.cfg.spec.pose.1),
            command: command.map(|(_, k)| k),
        };
        let out = self.sm.step(&self.health, &inputs, now);
        if let Some(t) = out.transition {
            self.log_transition(&t, target_truth, ctx);
        }
        if let (Some((id, kind)), Some((_, outcome))) = (command, out.command) {
            let kind_ev = match outcome {
                CommandOutcome::Executed => EventKind::CommandExecuted,
                CommandOutcome::Refused => EventKind::CommandRefused,
            };
            let entry = self
                .ev(now, kind_ev)
                .with("unit", self.id.get())
                .with("command_id", id)
                .with("kind", kind.as_str())
                .with("state", self.sm.state().as_str());
            ctx.log(entry);
        }
    }

    fn log_transition(&self, t: &TransitionEvent, target_truth: Option<&str>, ctx: &mut dyn Ctx) {
        let mut e = self
            .ev(t.t_ms, EventKind::StateTransition)
            .with("unit", self.id.get())
            .with("from", t.from.as_str())
            .with("to", t.to.as_str())
            .with("reason", t.reason.code());
        if t.is_revocation() {
            e = e.with("revocation", true);
        }
        if t.to == crate::message::AutonomyState::PrepareToFire {
            e = e
                .with("engage_class", self.cfg.spec.engage.as_str())
                .with("truth_class", target_truth.unwrap_or("NONE"));
        }
        ctx.log(e);
    }

    // ---- telemetry ------------------------------------------------------------

    fn body(&self, now: u64) -> TelemetryBody {
        let mut tracks: Vec<_> = self.table.tracks().iter().collect();
        tracks.sort_by(|a, b| b.fused.confidence.total_cmp(&a.fused.confidence).then(a.track_id.cmp(&b.track_id)));
        TelemetryBody {
            pose_x_mm: self.cfg.spec.pose.0,
            pose_y_mm: self.cfg.spec.pose.1,
            heading_mdeg: 0,
            state: self.sm.state(),
            health_bitmap: self.health.bitmap(now),
            tracks: tracks.into_iter().take(MAX_TRACKS).map(|t| t.summary()).collect(),
        }
    }

    fn record(&self, session: &Session, seq: u64, now: u64, body: TelemetryBody) -> Vec<u8> {
        let rec = TelemetryRecord {
            session_id: session.session_id,
            source_unit: self.id,
            origin_unit: self.id,
            seq,
            timestamp_ms: now,
            body,
        };
        encode_record(&Message::Telemetry(rec)).expect("unit telemetry satisfies invariants")
    }

    fn on_telemetry(&mut self, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        ctx.schedule(now + TELEMETRY_PERIOD_MS, Timer::Telemetry);
        let body = self.body(now);
        let local = self.cfg.local;
        if let Some(session) = self.gateway.session.clone() {
            self.gateway.seq += 1;
            let plain = self.record(&session, self.gateway.seq, now, body.clone());
            if let Some(tap) = self.cfg.tap_to {
                ctx.send(local, tap, plain.clone());
            }
            ctx.send(local, self.gateway.peer, channel::seal(&session, &plain));
            if !self.cmd_registered {
                self.register_commands(&session, ctx);
            }
        }
        if let Some(tm) = self.teammate.as_mut() {
            if let Some(session) = tm.session.clone() {
                tm.seq += 1;
                let seq = tm.seq;
                let peer = tm.peer;
                let plain = self.record(&session, seq, now, body);
                ctx.send(local, peer, channel::seal(&session, &plain));
            }
        }
    }

    // ---- inbound ----------------------------------------------------------------

    fn on_uplink_datagram(&mut self, link: Link, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(up) = self.uplink(link) else { return };
        if peek_header(bytes).is_ok_and(|h| h.msg_type == MsgType::HelloReply) {
            if up.session.is_some() {
                return;
            }
            let Ok((session, finished)) = up.initiator.on_reply(bytes, now) else {
                return;
            };
            let peer = up.peer;
            ctx.send(self.cfg.local, peer, finished);
            if link == Link::Gateway {
                self.register_commands(&session, ctx);
            }
            if let Some(up) = self.uplink(link) {
                up.session = Some(session);
            }
            return;
        }
        if link != Link::Gateway {
            return;
        }
        let Some(session) = self.gateway.session.clone() else { return };
        let Ok(plain) = channel::open(&session, bytes) else { return };
        if let Ok(Message::Heartbeat(hb)) = decode_record(plain) {
            self.health.heartbeat(Subsystem::Comm, now);
            if hb.flags & HB_FLAG_CMD_DEGRADED != 0 && !self.health.comm_degraded {
                self.health.comm_degraded = true;
            }
            if hb.flags & HB_FLAG_PROVENANCE_ALARM != 0 {
                self.sm.raise_provenance_alarm(now);
            }
        }
    }

    fn on_teammate_ingress(&mut self, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill(&mut nonce);
        let component = self.component.clone();
        let Some(ing) = self.ingress.as_mut() else { return };
        let local = ing.addr;
        match peek_header(bytes).map(|h| h.msg_type) {
            Ok(MsgType::Hello) => {
                if let Ok(Message::Hello(h)) = decode_record(bytes) {
                    match ing.responder.on_hello(&h, nonce, now) {
                        Ok(reply) => ctx.send(local, from, reply),
                        Err(e) => ctx.log(
                            EventLogEntry::new(now, component, EventKind::HandshakeFail)
                                .with("unit", h.env.source_unit.get())
                                .with("path", "teammate")
                                .with("reason", handshake_reason(&e)),
                        ),
                    }
                }
                return;
            }
            Ok(MsgType::Finished) => {
                if let Ok(Message::Finished(f)) = decode_record(bytes) {
                    match ing.responder.on_finished(&f, now) {
                        Ok(s) => {
                            ctx.log(
                                EventLogEntry::new(now, component, EventKind::HandshakeOk)
                                    .with("unit", s.peer.get())
                                    .with("session", s.session_id)
                                    .with("path", "teammate"),
                            );
                            ing.sessions.insert(s.session_id, s);
                        }
                        Err(e) => ctx.log(
                            EventLogEntry::new(now, component, EventKind::HandshakeFail)
                                .with("unit", f.env.source_unit.get())
                                .with("path", "teammate")
                                .with("reason", handshake_reason(&e)),
                        ),
                    }
                }
                return;
            }
            _ => {}
        }
        let Some(session) = sealed_session(bytes).and_then(|sid| ing.sessions.get(&sid)) else {
            return;
        };
        let Ok(plain) = channel::open(session, bytes) else { return };
        let v = validate(plain, session, &self.cfg.policy, &mut ing.ledger, now);
        ctx.log(verdict_event(&component, now, &v).with("path", "teammate"));
        if v.verdict.outcome == Outcome::Flag {
            self.sm.raise_provenance_alarm(now);
        }
    }

    fn on_tap(&mut self, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(fw) = self.cfg.forward else { return };
        if now < fw.start_ms || now >= fw.end_ms {
            return;
        }
        let Some(tm) = self.teammate.as_ref() else { return };
        let Some(session) = tm.session.clone() else { return };
        let peer = tm.peer;
        let Ok(Message::Telemetry(rec)) = decode_record(bytes) else { return };
        let forwarded = TelemetryRecord {
            session_id: session.session_id,
            source_unit: self.id,
            origin_unit: rec.origin_unit,
            seq: rec.seq,
            timestamp_ms: now,
            body: rec.body,
        };
        let plain = encode_record(&Message::Telemetry(forwarded)).expect("forwarded record is valid");
        ctx.send(self.cfg.local, peer, channel::seal(&session, &plain));
        let entry = self
            .ev(now, EventKind::AttackInjected)
            .with("kind", "TEAMMATE_FORWARD")
            .with("origin", rec.origin_unit.get())
            .with("seq", rec.seq)
            .with("session", session.session_id)
            .with("to", fw.to.get());
        ctx.log(entry);
    }

    /// Announces the command stream under `session`. Repeated with each
    /// telemetry record until the gateway echoes it back.
    fn register_commands(&self, session: &Session, ctx: &mut dyn Ctx) {
        let hb = Message::Heartbeat(Heartbeat {
            env: Envelope {
                session_id: session.session_id,
                source_unit: self.id,
                origin_unit: self.id,
                seq: 1,
                timestamp_ms: ctx.now(),
            },
            acked_seq: 0,
            flags: 0,
        });
        let plain = encode_record(&hb).expect("heartbeat is valid");
        ctx.send_stream(self.cfg.local_cmd, self.cfg.gateway_cmd, channel::seal(session, &plain));
    }

    fn on_command(&mut self, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(session) = self.gateway.session.clone() else { return };
        let Ok(plain) = channel::open(&session, bytes) else { return };
        let cmd = match decode_record(plain) {
            Ok(Message::Command(cmd)) => cmd,
            Ok(Message::Heartbeat(_)) => {
                self.cmd_registered = true;
                return;
            }
            _ => return,
        };
        self.health.heartbeat(Subsystem::Comm, now);
        let id = cmd.command_id();
        if id > self.last_command_id {
            self.last_command_id = id;
            self.commands.push_back((id, cmd.kind));
            let entry = self
                .ev(now, EventKind::CommandAcked)
                .with("unit", self.id.get())
                .with("command_id", id)
                .with("kind", cmd.kind.as_str());
            ctx.log(entry);
        }
        let ack = Message::CommandAck(CommandAck {
            env: Envelope {
                session_id: session.session_id,
                source_unit: self.id,
                origin_unit: self.id,
                seq: id,
                timestamp_ms: now,
            },
            kind: cmd.kind,
        });
        let plain = encode_record(&ack).expect("ack is valid");
        ctx.send_stream(self.cfg.local_cmd, from, channel::seal(&session, &plain));
    }
}

pub(crate) fn handshake_reason(e: &channel::ChannelError) -> &'static str {
    match e {
        channel::ChannelError::UnknownUnit(_) => "UNKNOWN_UNIT",
        channel::ChannelError::BadFinishedMac => "BAD_FINISHED_MAC",
        channel::ChannelError::Timeout(_) => "TIMEOUT",
        _ => "PROTOCOL",
    }
}

/// Session id from the header of a sealed datagram.
pub(crate) fn sealed_session(bytes: &[u8]) -> Option<u32> {
    let record = bytes.get(..bytes.len().checked_sub(MAC_LEN)?)?;
    peek_header(record).ok().map(|h| h.envelope.session_id)
}

impl Host for UnitHost {
    fn endpoints(&self) -> Vec<Addr> {
        let mut v = vec![self.cfg.local, self.cfg.local_cmd];
        if let Some((a, _)) = &self.cfg.teammate_listen {
            v.push(*a);
        }
        if let Some(a) = self.cfg.tap_listen {
            v.push(a);
        }
        v
    }

    fn start(&mut self, ctx: &mut dyn Ctx) {
        let start = self.cfg.start_ms;
        let phase = self.rng.random_range(0..100u64);
        for m in Modality::ALL {
            ctx.schedule(start + phase, Timer::Frame(m));
        }
        ctx.schedule(start + phase, Timer::NavFrame);
        ctx.schedule(start + TICK_MS, Timer::Tick);
        ctx.schedule(start + TELEMETRY_PERIOD_MS, Timer::Telemetry);
        for (i, e) in self.cfg.timeline.iter().enumerate() {
            ctx.schedule(start + e.t_ms, Timer::Timeline(i));
        }
        self.send_hello(Link::Gateway, ctx);
        if self.teammate.is_some() {
            self.send_hello(Link::Teammate, ctx);
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut dyn Ctx) {
        match timer {
            Timer::Frame(m) => self.on_frame(m, ctx),
            Timer::NavFrame => self.on_nav(ctx),
            Timer::Tick => self.on_tick(ctx),
            Timer::Telemetry => self.on_telemetry(ctx),
            Timer::HandshakeRetry(link) => self.send_hello(link, ctx),
            Timer::Timeline(i) => {
                let now = ctx.now();
                if let Some(TimelineEntry {
                    action: Action::Fault { kind, target, .. },
                    ..
                }) = self.cfg.timeline.get(i).cloned()
                {
                    self.faults.inject(kind, target);
                    let mut e = self
                        .ev(now, EventKind::FaultInjected)
                        .with("unit", self.id.get())
                        .with("kind", kind.as_str());
                    if let Some(t) = target {
                        e = e.with("target", t.as_str());
                    }
                    ctx.log(e);
                }
            }
            _ => {}
        }
    }

    fn on_datagram(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        if local == self.cfg.local {
            if from == self.gateway.peer {
                self.on_uplink_datagram(Link::Gateway, bytes, ctx);
            } else if self.teammate.as_ref().is_some_and(|t| t.peer == from) {
                self.on_uplink_datagram(Link::Teammate, bytes, ctx);
            }
        } else if Some(local) == self.cfg.tap_listen {
            self.on_tap(bytes, ctx);
        } else if self.ingress.as_ref().is_some_and(|i| i.addr == local) {
            self.on_teammate_ingress(from, bytes, ctx);
        }
    }

    fn on_stream(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        if local == self.cfg.local_cmd {
            self.on_command(from, bytes, ctx);
        }
    }
}
