//! Control gateway: handshake responder, validation pipeline, operator
//! display and the supervisory command path.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::unit::{handshake_reason, sealed_session};
use super::{Addr, Ctx, Host, Timer};
use crate::channel::{self, Identity, Psk, Registry, Responder, Session, TransportReplayWindow};
use crate::eventlog::{EventKind, EventLogEntry};
use crate::gateway::{
    validate, verdict_event, CommandStager, DisplayCache, Outcome, SequenceLedger, TransmitStep, ValidationPolicy,
    COMMAND_RETRY_MS,
};
use crate::message::{
    decode_record, encode_record, peek_header, Envelope, Heartbeat, Message, MsgType, UnitId, HB_FLAG_CMD_DEGRADED,
    HB_FLAG_PROVENANCE_ALARM, NONCE_LEN,
};
use crate::scenario::{Action, TimelineEntry, GATEWAY_UNIT};

pub const DISPLAY_SNAPSHOT_MS: u64 = 250;
const COMPONENT: &str = "gateway";

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub policy: ValidationPolicy,
    pub units: Vec<(UnitId, Psk)>,
    pub listen: Addr,
    pub cmd_listen: Addr,
    /// Operator commands and command-channel severing.
    pub timeline: Vec<TimelineEntry>,
    pub start_ms: u64,
}

struct Peer {
    session: Session,
    reply_to: Addr,
    hb_seq: u64,
    window: TransportReplayWindow,
}

pub struct GatewayHost {
    cfg: GatewayConfig,
    id: UnitId,
    rng: ChaCha8Rng,
    responder: Responder,
    peers: BTreeMap<u32, Peer>,
    latest_session: BTreeMap<UnitId, u32>,
    ledger: SequenceLedger,
    display: DisplayCache,
    stale_shown: BTreeSet<(UnitId, u32)>,
    stager: CommandStager,
    cmd_addr: BTreeMap<UnitId, Addr>,
    severed: BTreeSet<UnitId>,
    cmd_degraded: BTreeSet<UnitId>,
    open_failures: u64,
}

impl GatewayHost {
    pub fn new(cfg: GatewayConfig, rng: ChaCha8Rng) -> Self {
        let id = UnitId::new(GATEWAY_UNIT).expect("nonzero");
        let mut registry = Registry::new();
        for (unit, psk) in &cfg.units {
            registry
                .insert(&Identity { unit: *unit, psk: *psk })
                .expect("scenario validation rejects shared keys");
        }
        Self {
            id,
            rng,
            responder: Responder::new(id, registry, 1),
            peers: BTreeMap::new(),
            latest_session: BTreeMap::new(),
            ledger: SequenceLedger::new(),
            display: DisplayCache::new(cfg.policy.display_ttl_ms),
            stale_shown: BTreeSet::new(),
            stager: CommandStager::new(id),
            cmd_addr: BTreeMap::new(),
            severed: BTreeSet::new(),
            cmd_degraded: BTreeSet::new(),
            open_failures: 0,
            cfg,
        }
    }

    /// Datagrams that failed transport open; they never reach validation.
    pub fn open_failures(&self) -> u64 {
        self.open_failures
    }

    fn on_handshake(&mut self, kind: MsgType, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        match (kind, decode_record(bytes)) {
            (MsgType::Hello, Ok(Message::Hello(h))) => {
                let mut nonce = [0u8; NONCE_LEN];
                self.rng.fill(&mut nonce);
                match self.responder.on_hello(&h, nonce, now) {
                    Ok(reply) => ctx.send(self.cfg.listen, from, reply),
                    Err(e) => ctx.log(
                        EventLogEntry::new(now, COMPONENT, EventKind::HandshakeFail)
                            .with("unit", h.env.source_unit.get())
                            .with("reason", handshake_reason(&e)),
                    ),
                }
            }
            (MsgType::Finished, Ok(Message::Finished(f))) => match self.responder.on_finished(&f, now) {
                Ok(session) => {
                    ctx.log(
                        EventLogEntry::new(now, COMPONENT, EventKind::HandshakeOk)
                            .with("unit", session.peer.get())
                            .with("session", session.session_id),
                    );
                    self.latest_session.insert(session.peer, session.session_id);
                    self.peers.insert(
                        session.session_id,
                        Peer {
                            session,
                            reply_to: from,
                            hb_seq: 0,
                            window: TransportReplayWindow::new(self.cfg.policy.transport_replay_window),
                        },
                    );
                }
                Err(e) => ctx.log(
                    EventLogEntry::new(now, COMPONENT, EventKind::HandshakeFail)
                        .with("unit", f.env.source_unit.get())
                        .with("reason", handshake_reason(&e)),
                ),
            },
            _ => {}
        }
    }

    fn on_telemetry(&mut self, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(peer) = sealed_session(bytes).and_then(|sid| self.peers.get_mut(&sid)) else {
            self.open_failures += 1;
            return;
        };
        let opened = if peer.window.enabled() {
            channel::open_with_window(&peer.session, &mut peer.window, bytes)
        } else {
            channel::open(&peer.session, bytes)
        };
        let Ok(plain) = opened else {
            self.open_failures += 1;
            return;
        };
        let v = validate(plain, &peer.session, &self.cfg.policy, &mut self.ledger, now);
        ctx.log(verdict_event(COMPONENT, now, &v));
        let flags = match v.verdict.outcome {
            Outcome::Drop => return,
            Outcome::Accept => 0,
            Outcome::Flag => HB_FLAG_PROVENANCE_ALARM,
        };
        if let Some(rec) = &v.record {
            self.display.refresh(rec, now);
        }
        let unit = peer.session.peer;
        let flags = flags
            | if self.cmd_degraded.contains(&unit) {
                HB_FLAG_CMD_DEGRADED
            } else {
                0
            };
        peer.hb_seq += 1;
        let hb = Message::Heartbeat(Heartbeat {
            env: Envelope {
                session_id: peer.session.session_id,
                source_unit: self.id,
                origin_unit: self.id,
                seq: peer.hb_seq,
                timestamp_ms: now,
            },
            acked_seq: v.verdict.record_ref.map(|r| r.seq).unwrap_or(0),
            flags,
        });
        let plain = encode_record(&hb).expect("heartbeat is valid");
        let reply_to = peer.reply_to;
        ctx.send(self.cfg.listen, reply_to, channel::seal(&peer.session, &plain));
    }

    fn on_cmd_stream(&mut self, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        let Some(peer) = sealed_session(bytes).and_then(|sid| self.peers.get(&sid)) else {
            return;
        };
        let Ok(plain) = channel::open(&peer.session, bytes) else { return };
        let unit = peer.session.peer;
        match decode_record(plain) {
            Ok(Message::Heartbeat(hb)) => {
                self.cmd_addr.insert(unit, from);
                let echo = Message::Heartbeat(Heartbeat {
                    env: Envelope {
                        session_id: peer.session.session_id,
                        source_unit: self.id,
                        origin_unit: self.id,
                        seq: hb.env.seq,
                        timestamp_ms: ctx.now(),
                    },
                    acked_seq: hb.env.seq,
                    flags: 0,
                });
                let plain = encode_record(&echo).expect("heartbeat is valid");
                ctx.send_stream(self.cfg.cmd_listen, from, channel::seal(&peer.session, &plain));
                self.pump(unit, ctx);
            }
            Ok(Message::CommandAck(ack)) => {
                if self.severed.contains(&unit) {
                    return;
                }
                if self.stager.confirm_ack(unit, ack.env.seq).is_some() {
                    self.pump(unit, ctx);
                }
            }
            _ => {}
        }
    }

    /// Starts the next queued command for `unit` if none is in flight.
    fn pump(&mut self, unit: UnitId, ctx: &mut dyn Ctx) {
        if self.stager.in_flight(unit).is_some() {
            return;
        }
        if let Some(staged) = self.stager.next_ready(unit) {
            self.transmit(unit, staged.record.command_id(), ctx);
        }
    }

    fn transmit(&mut self, unit: UnitId, command_id: u64, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(staged) = self.stager.in_flight(unit) else { return };
        match self.stager.transmit(unit, command_id) {
            TransmitStep::Send { .. } => {
                let session = self
                    .latest_session
                    .get(&unit)
                    .and_then(|sid| self.peers.get(sid))
                    .map(|p| p.session.clone());
                if let (Some(session), Some(to), false) =
                    (session, self.cmd_addr.get(&unit).copied(), self.severed.contains(&unit))
                {
                    let mut record = staged.record;
                    record.env.session_id = session.session_id;
                    let plain = encode_record(&Message::Command(record)).expect("command is valid");
                    ctx.send_stream(self.cfg.cmd_listen, to, channel::seal(&session, &plain));
                }
                ctx.schedule(
                    now + COMMAND_RETRY_MS,
                    Timer::CommandCheck {
                        unit: unit.get(),
                        command_id,
                    },
                );
            }
            TransmitStep::TimedOut => {
                ctx.log(
                    EventLogEntry::new(now, COMPONENT, EventKind::CommandRefused)
                        .with("unit", unit.get())
                        .with("command_id", command_id)
                        .with("kind", staged.record.kind.as_str())
                        .with("reason", "ack_timeout"),
                );
                self.cmd_degraded.insert(unit);
                self.pump(unit, ctx);
            }
            TransmitStep::Idle => {}
        }
    }

    fn on_snapshot(&mut self, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        ctx.schedule(now + DISPLAY_SNAPSHOT_MS, Timer::DisplaySnapshot);
        let rendered = self.display.snapshot(now, self.cfg.policy.freshness_window_ms);
        let mut stale_now = BTreeSet::new();
        for r in rendered.iter().filter(|r| r.stale) {
            let key = (r.unit, r.track.track_id);
            if !self.stale_shown.contains(&key) {
                ctx.log(
                    EventLogEntry::new(now, COMPONENT, EventKind::DisplayStaleDetected)
                        .with("unit", r.unit.get())
                        .with("track", r.track.track_id)
                        .with("age_ms", r.age_ms),
                );
            }
            stale_now.insert(key);
        }
        self.stale_shown = stale_now;
    }
}

impl Host for GatewayHost {
    fn endpoints(&self) -> Vec<Addr> {
        vec![self.cfg.listen, self.cfg.cmd_listen]
    }

    fn start(&mut self, ctx: &mut dyn Ctx) {
        let start = self.cfg.start_ms;
        ctx.schedule(start + DISPLAY_SNAPSHOT_MS, Timer::DisplaySnapshot);
        for (i, e) in self.cfg.timeline.iter().enumerate() {
            ctx.schedule(start + e.t_ms, Timer::Timeline(i));
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        match timer {
            Timer::DisplaySnapshot => self.on_snapshot(ctx),
            Timer::CommandCheck { unit, command_id } => {
                if let Some(u) = UnitId::new(unit) {
                    self.transmit(u, command_id, ctx);
                }
            }
            Timer::Timeline(i) => match self.cfg.timeline.get(i).map(|e| e.action.clone()) {
                Some(Action::Command { unit, kind }) => {
                    let sid = self.latest_session.get(&unit).copied().unwrap_or(0);
                    let staged = self.stager.stage(unit, sid, kind, now);
                    ctx.log(
                        EventLogEntry::new(now, COMPONENT, EventKind::CommandStaged)
                            .with("unit", unit.get())
                            .with("command_id", staged.record.command_id())
                            .with("kind", kind.as_str()),
                    );
                    self.pump(unit, ctx);
                }
                Some(Action::Sever { unit }) => {
                    self.severed.insert(unit);
                    ctx.log(
                        EventLogEntry::new(now, COMPONENT, EventKind::FaultInjected)
                            .with("unit", unit.get())
                            .with("kind", "sever_command_channel"),
                    );
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn on_datagram(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        if local != self.cfg.listen {
            return;
        }
        match peek_header(bytes).map(|h| h.msg_type) {
            Ok(k @ (MsgType::Hello | MsgType::Finished)) => self.on_handshake(k, from, bytes, ctx),
            _ => self.on_telemetry(bytes, ctx),
        }
    }

    fn on_stream(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        if local == self.cfg.cmd_listen {
            self.on_cmd_stream(from, bytes, ctx);
        }
    }
}
