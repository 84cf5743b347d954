//! Relay host: sits on one unit's telemetry link and applies tactics to
//! client-to-server datagrams. Server replies pass through untouched.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{Addr, Ctx, Host, Timer};
use crate::channel::{self, Identity, Initiator, Session, HANDSHAKE_RETRY_MS, MAC_LEN};
use crate::eventlog::{EventKind, EventLogEntry};
use crate::message::{peek_header, MsgType, UnitId, NONCE_LEN};
use crate::relay::{reframe, RelayCore, Tactic, TacticKind, TacticParams};
use crate::scenario::{Action, TimelineEntry};

#[derive(Clone, Debug)]
pub struct RelayConfig {
    pub link: UnitId,
    pub listen: Addr,
    /// Socket for traffic the relay originates itself.
    pub own: Addr,
    pub upstream: Addr,
    /// Known client endpoint; learned from the first datagram when `None`.
    pub client: Option<Addr>,
    pub tactics: Vec<Tactic>,
    /// Relay toggles for this link.
    pub timeline: Vec<TimelineEntry>,
    pub start_ms: u64,
}

struct Reorigination {
    claimed: UnitId,
    initiator: Initiator,
    session: Option<Session>,
    tactic: usize,
}

pub struct RelayHost {
    cfg: RelayConfig,
    component: String,
    rng: ChaCha8Rng,
    core: RelayCore,
    client: Option<Addr>,
    held: BTreeMap<u64, Vec<u8>>,
    next_hold: u64,
    reorig: Option<Reorigination>,
}

impl RelayHost {
    pub fn new(cfg: RelayConfig, rng: ChaCha8Rng) -> Self {
        Self {
            component: format!("relay-{}", cfg.link),
            core: RelayCore::new(cfg.tactics.clone()),
            client: cfg.client,
            rng,
            held: BTreeMap::new(),
            next_hold: 0,
            reorig: None,
            cfg,
        }
    }

    fn attack(&self, now: u64, kind: &str) -> EventLogEntry {
        EventLogEntry::new(now, self.component.clone(), EventKind::AttackInjected)
            .with("kind", kind)
            .with("link", self.cfg.link.get())
    }

    fn reoriginate_active(&self, now: u64) -> Option<(usize, u16)> {
        self.core.tactics.iter().enumerate().find_map(|(i, t)| match t.params {
            TacticParams::Reoriginate { claimed, .. } if t.active(now) => Some((i, claimed)),
            _ => None,
        })
    }

    fn start_reorigination(&mut self, idx: usize, ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(t) = self.core.tactics.get(idx) else { return };
        if !t.active(now) {
            return;
        }
        let TacticParams::Reoriginate { claimed, stolen_psk } = t.params else {
            return;
        };
        let Some(claimed) = UnitId::new(claimed) else { return };
        let continuing = self.reorig.as_ref().is_some_and(|r| r.tactic == idx);
        if !continuing {
            // Without a stolen key the relay can only guess one.
            let psk = stolen_psk.unwrap_or_else(|| {
                let mut k = [0u8; 32];
                self.rng.fill(&mut k);
                k
            });
            let mut nonce = [0u8; NONCE_LEN];
            self.rng.fill(&mut nonce);
            self.reorig = Some(Reorigination {
                claimed,
                initiator: Initiator::new(Identity { unit: claimed, psk }, nonce),
                session: None,
                tactic: idx,
            });
        }
        let stolen = stolen_psk.is_some();
        let r = self.reorig.as_mut().expect("set above");
        if r.session.is_some() {
            return;
        }
        let Ok(hello) = r.initiator.hello(now) else { return };
        let attempt = r.initiator.attempts();
        ctx.send(self.cfg.own, self.cfg.upstream, hello);
        ctx.schedule(now + HANDSHAKE_RETRY_MS, Timer::Reoriginate(idx));
        let e = self
            .attack(now, TacticKind::Reoriginate.as_str())
            .with("claimed", claimed.get())
            .with("step", "hello")
            .with("attempt", attempt)
            .with("stolen_psk", stolen);
        ctx.log(e);
    }

    fn emit(&mut self, at: u64, bytes: Vec<u8>, ctx: &mut dyn Ctx) {
        if at <= ctx.now() {
            ctx.send(self.cfg.listen, self.cfg.upstream, bytes);
        } else {
            let id = self.next_hold;
            self.next_hold += 1;
            self.held.insert(id, bytes);
            ctx.schedule(at, Timer::RelayEmit(id));
        }
    }

    fn on_client(&mut self, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let (emissions, actions) = self.core.forward(bytes, &mut self.rng, now);
        for a in actions {
            let mut e = EventLogEntry::new(now, self.component.clone(), EventKind::AttackInjected)
                .with("link", self.cfg.link.get());
            e.attrs.extend(a.attrs);
            ctx.log(e);
        }
        for em in emissions {
            self.emit(em.emit_at_ms, em.bytes, ctx);
        }
        if let Some((_, claimed)) = self.reoriginate_active(now) {
            let out = match self.reorig.as_ref().and_then(|r| r.session.clone()) {
                Some(session) => reseal(bytes, &session),
                None => reframe(bytes, claimed, &mut self.rng),
            };
            if let Some(out) = out {
                let mode = if self.reorig.as_ref().is_some_and(|r| r.session.is_some()) {
                    "reseal"
                } else {
                    "reframe"
                };
                let mut e = self
                    .attack(now, TacticKind::Reoriginate.as_str())
                    .with("claimed", claimed)
                    .with("step", mode);
                if let Ok(h) = peek_header(&out[..out.len() - MAC_LEN]) {
                    e = e.with("seq", h.envelope.seq);
                }
                ctx.log(e);
                ctx.send(self.cfg.own, self.cfg.upstream, out);
            }
        }
    }

    fn on_own(&mut self, bytes: &[u8], ctx: &mut dyn Ctx) {
        let now = ctx.now();
        let Some(r) = self.reorig.as_mut() else { return };
        if r.session.is_some() || !peek_header(bytes).is_ok_and(|h| h.msg_type == MsgType::HelloReply) {
            return;
        }
        let Ok((session, finished)) = r.initiator.on_reply(bytes, now) else {
            return;
        };
        let claimed = r.claimed;
        r.session = Some(session);
        ctx.send(self.cfg.own, self.cfg.upstream, finished);
        let e = self
            .attack(now, TacticKind::Reoriginate.as_str())
            .with("claimed", claimed.get())
            .with("step", "finished");
        ctx.log(e);
    }
}

/// Moves a captured record into the relay's own session. Only meaningful
/// when a scenario granted the relay a real key.
fn reseal(bytes: &[u8], session: &Session) -> Option<Vec<u8>> {
    let record = bytes.get(..bytes.len().checked_sub(MAC_LEN)?)?;
    peek_header(record).ok()?;
    let mut plain = record.to_vec();
    plain[3..7].copy_from_slice(&session.session_id.to_be_bytes());
    Some(channel::seal(session, &plain))
}

impl Host for RelayHost {
    fn endpoints(&self) -> Vec<Addr> {
        vec![self.cfg.listen, self.cfg.own]
    }

    fn start(&mut self, ctx: &mut dyn Ctx) {
        let start = self.cfg.start_ms;
        for (i, t) in self.cfg.tactics.iter().enumerate() {
            if t.kind() == TacticKind::Reoriginate {
                ctx.schedule(start + t.start_ms, Timer::Reoriginate(i));
            }
        }
        for (i, e) in self.cfg.timeline.iter().enumerate() {
            ctx.schedule(start + e.t_ms, Timer::Timeline(i));
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut dyn Ctx) {
        match timer {
            Timer::RelayEmit(id) => {
                if let Some(bytes) = self.held.remove(&id) {
                    ctx.send(self.cfg.listen, self.cfg.upstream, bytes);
                }
            }
            Timer::Reoriginate(idx) => self.start_reorigination(idx, ctx),
            Timer::Timeline(i) => {
                if let Some(Action::RelayToggle { tactic, enabled, .. }) =
                    self.cfg.timeline.get(i).map(|e| e.action.clone())
                {
                    let n = self.core.set_enabled(tactic, enabled);
                    let mut e = self.attack(ctx.now(), tactic.as_str()).with("toggle", enabled);
                    e.attrs.insert("tactics".into(), Value::from(n as u64));
                    ctx.log(e);
                }
            }
            _ => {}
        }
    }

    fn on_datagram(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        if local == self.cfg.own {
            self.on_own(bytes, ctx);
            return;
        }
        if local != self.cfg.listen {
            return;
        }
        if from == self.cfg.upstream {
            if let Some(client) = self.client {
                ctx.send(self.cfg.listen, client, bytes.to_vec());
            }
        } else {
            self.client = Some(from);
            self.on_client(bytes, ctx);
        }
    }
}
