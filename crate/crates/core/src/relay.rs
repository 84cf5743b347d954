//! In-path datagram manipulation below the MAC.
//!
//! The relay treats sealed datagrams as opaque bytes. It never holds a
//! session key unless a scenario explicitly hands it a stolen pre-shared
//! key for re-origination.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde_json::Value;
use thiserror::Error;

use crate::channel::MAC_LEN;
use crate::eventlog::Attrs;
use crate::message::{peek_header, HEADER_LEN};

pub const CAPTURE_CAPACITY: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TacticKind {
    Passthrough,
    Delay,
    Duplicate,
    Drop,
    Replay,
    Reorder,
    Reoriginate,
}

impl TacticKind {
    pub const ALL: [TacticKind; 7] = [
        Self::Passthrough,
        Self::Delay,
        Self::Duplicate,
        Self::Drop,
        Self::Replay,
        Self::Reorder,
        Self::Reoriginate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Passthrough => "PASSTHROUGH",
            Self::Delay => "DELAY",
            Self::Duplicate => "DUPLICATE",
            Self::Drop => "DROP",
            Self::Replay => "REPLAY",
            Self::Reorder => "REORDER",
            Self::Reoriginate => "REORIGINATE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for TacticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TacticParams {
    Passthrough,
    /// Uniform in `[min_ms, max_ms]`; equal bounds give a fixed delay.
    Delay { min_ms: u64, max_ms: u64 },
    /// Emits the original plus `copies` byte-identical duplicates.
    Duplicate { copies: u32 },
    Drop { p: f64 },
    /// Datagrams received in `[start, start + window_ms)` are re-emitted
    /// `offset_ms` after their arrival.
    Replay { window_ms: u64, offset_ms: u64 },
    /// Buffers `span` datagrams and releases them in reverse order.
    Reorder { span: usize },
    Reoriginate { claimed: u16, stolen_psk: Option<[u8; 32]> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tactic {
    pub params: TacticParams,
    pub start_ms: u64,
    pub end_ms: u64,
    pub enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("bad tactic `{line}`: {reason}")]
pub struct TacticError {
    pub line: String,
    pub reason: String,
}

impl Tactic {
    pub fn kind(&self) -> TacticKind {
        match self.params {
            TacticParams::Passthrough => TacticKind::Passthrough,
            TacticParams::Delay { .. } => TacticKind::Delay,
            TacticParams::Duplicate { .. } => TacticKind::Duplicate,
            TacticParams::Drop { .. } => TacticKind::Drop,
            TacticParams::Replay { .. } => TacticKind::Replay,
            TacticParams::Reorder { .. } => TacticKind::Reorder,
            TacticParams::Reoriginate { .. } => TacticKind::Reoriginate,
        }
    }

    pub fn active(&self, now: u64) -> bool {
        self.enabled && now >= self.start_ms && now < self.end_ms
    }

    /// Parses `kind key=value ... start=<ms> end=<ms>`.
    pub fn parse_line(line: &str) -> Result<Self, TacticError> {
        let err = |reason: String| TacticError {
            line: line.to_string(),
            reason,
        };
        let mut words = line.split_whitespace();
        let kind_word = words.next().ok_or_else(|| err("empty line".into()))?;
        let kind = TacticKind::parse(kind_word).ok_or_else(|| err(format!("unknown kind `{kind_word}`")))?;
        let mut kv = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{w}`")))?;
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("duplicate key `{k}`")));
            }
        }
        fn num<T: FromStr>(
            kv: &mut std::collections::BTreeMap<String, String>,
            key: &str,
        ) -> Result<Option<T>, String> {
            kv.remove(key)
                .map(|v| v.parse::<T>().map_err(|_| format!("bad value for `{key}`: `{v}`")))
                .transpose()
        }
        let req = |v: Option<u64>, key: &str| v.ok_or_else(|| format!("missing `{key}`"));
        let start_ms = req(num(&mut kv, "start").map_err(err)?, "start").map_err(err)?;
        let end_ms = req(num(&mut kv, "end").map_err(err)?, "end").map_err(err)?;
        if end_ms <= start_ms {
            return Err(err("end must be after start".into()));
        }
        let params = match kind {
            TacticKind::Passthrough => TacticParams::Passthrough,
            TacticKind::Delay => {
                let fixed: Option<u64> = num(&mut kv, "ms").map_err(err)?;
                let min: Option<u64> = num(&mut kv, "min").map_err(err)?;
                let max: Option<u64> = num(&mut kv, "max").map_err(err)?;
                match (fixed, min, max) {
                    (Some(ms), None, None) => TacticParams::Delay { min_ms: ms, max_ms: ms },
                    (None, Some(lo), Some(hi)) if lo <= hi => TacticParams::Delay { min_ms: lo, max_ms: hi },
                    _ => return Err(err("DELAY needs ms=<n> or min=<n> max=<n> with min <= max".into())),
                }
            }
            TacticKind::Duplicate => {
                let copies: u32 = num(&mut kv, "k").map_err(err)?.unwrap_or(1);
                if copies < 1 {
                    return Err(err("k must be >= 1".into()));
                }
                TacticParams::Duplicate { copies }
            }
            TacticKind::Drop => {
                let p: f64 = num(&mut kv, "p").map_err(err)?.ok_or_else(|| err("missing `p`".into()))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err("p must be in [0, 1]".into()));
                }
                TacticParams::Drop { p }
            }
            TacticKind::Replay => {
                let window_ms = req(num(&mut kv, "window").map_err(err)?, "window").map_err(err)?;
                let offset_ms = req(num(&mut kv, "offset").map_err(err)?, "offset").map_err(err)?;
                if window_ms == 0 || offset_ms == 0 {
                    return Err(err("window and offset must be positive".into()));
                }
                TacticParams::Replay { window_ms, offset_ms }
            }
            TacticKind::Reorder => {
                let span: usize = num(&mut kv, "n").map_err(err)?.unwrap_or(2);
                if span < 2 {
                    return Err(err("n must be >= 2".into()));
                }
                TacticParams::Reorder { span }
            }
            TacticKind::Reoriginate => {
                let claimed: u16 = num(&mut kv, "claimed")
                    .map_err(err)?
                    .ok_or_else(|| err("missing `claimed`".into()))?;
                if claimed == 0 {
                    return Err(err("claimed must be nonzero".into()));
                }
                let stolen_psk = match kv.remove("psk") {
                    None => None,
                    Some(h) => {
                        let bytes = hex::decode(&h).map_err(|_| err("psk must be hex".into()))?;
                        Some(
                            bytes
                                .try_into()
                                .map_err(|_| err("psk must be 32 bytes".into()))?,
                        )
                    }
                };
                TacticParams::Reoriginate { claimed, stolen_psk }
            }
        };
        if let Some(k) = kv.keys().next() {
            return Err(err(format!("unknown key `{k}` for {kind}")));
        }
        Ok(Self {
            params,
            start_ms,
            end_ms,
            enabled: true,
        })
    }

    pub fn to_line(&self) -> String {
        let body = match &self.params {
            TacticParams::Passthrough => String::new(),
            TacticParams::Delay { min_ms, max_ms } if min_ms == max_ms => format!(" ms={min_ms}"),
            TacticParams::Delay { min_ms, max_ms } => format!(" min={min_ms} max={max_ms}"),
            TacticParams::Duplicate { copies } => format!(" k={copies}"),
            TacticParams::Drop { p } => format!(" p={p}"),
            TacticParams::Replay { window_ms, offset_ms } => format!(" window={window_ms} offset={offset_ms}"),
            TacticParams::Reorder { span } => format!(" n={span}"),
            TacticParams::Reoriginate { claimed, stolen_psk } => match stolen_psk {
                Some(psk) => format!(" claimed={claimed} psk={}", hex::encode(psk)),
                None => format!(" claimed={claimed}"),
            },
        };
        format!("{}{} start={} end={}", self.kind(), body, self.start_ms, self.end_ms)
    }
}

/// Parses a tactics file: one tactic per line, `#` comments.
pub fn parse_tactics(text: &str) -> Result<Vec<Tactic>, TacticError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(Tactic::parse_line)
        .collect()
}

// ---------------------------------------------------------------------------
// Forwarding core
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct CaptureBuffer {
    ring: VecDeque<(u64, Vec<u8>)>,
}

impl CaptureBuffer {
    pub fn push(&mut self, at_ms: u64, bytes: &[u8]) {
        if self.ring.len() == CAPTURE_CAPACITY {
            self.ring.pop_front();
        }
        self.ring.push_back((at_ms, bytes.to_vec()));
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u64, Vec<u8>)> {
        self.ring.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emission {
    pub emit_at_ms: u64,
    pub bytes: Vec<u8>,
}

/// One tactic application, for ATTACK_INJECTED logging.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub kind: TacticKind,
    pub attrs: Attrs,
}

fn action(kind: TacticKind, bytes: &[u8]) -> Action {
    let mut attrs = Attrs::new();
    attrs.insert("kind".into(), Value::from(kind.as_str()));
    if let Ok(h) = peek_header(bytes.get(..bytes.len().saturating_sub(MAC_LEN)).unwrap_or(&[])) {
        attrs.insert("session".into(), Value::from(h.envelope.session_id));
        attrs.insert("seq".into(), Value::from(h.envelope.seq));
        attrs.insert("origin".into(), Value::from(h.envelope.origin_unit.get()));
    }
    Action { kind, attrs }
}

/// Tactic engine for one tapped link (client to server direction).
#[derive(Clone, Debug)]
pub struct RelayCore {
    pub tactics: Vec<Tactic>,
    pub capture: CaptureBuffer,
    reorder_buf: Vec<Vec<u8>>,
}

impl RelayCore {
    pub fn new(tactics: Vec<Tactic>) -> Self {
        Self {
            tactics,
            capture: CaptureBuffer::default(),
            reorder_buf: Vec::new(),
        }
    }

    pub fn set_enabled(&mut self, kind: TacticKind, enabled: bool) -> usize {
        let mut n = 0;
        for t in self.tactics.iter_mut().filter(|t| t.kind() == kind) {
            t.enabled = enabled;
            n += 1;
        }
        n
    }

    fn first_active(&self, kind: TacticKind, now: u64) -> Option<&Tactic> {
        self.tactics.iter().find(|t| t.kind() == kind && t.active(now))
    }

    /// Applies the active tactics to one client datagram.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        bytes: &[u8],
        rng: &mut R,
        now: u64,
    ) -> (Vec<Emission>, Vec<Action>) {
        self.capture.push(now, bytes);
        let mut out = Vec::new();
        let mut actions = Vec::new();

        // A reorder burst cut short by the interval ending is released in
        // arrival order.
        if self.first_active(TacticKind::Reorder, now).is_none() && !self.reorder_buf.is_empty() {
            out.extend(self.reorder_buf.drain(..).map(|b| Emission { emit_at_ms: now, bytes: b }));
        }

        let replay = self
            .first_active(TacticKind::Replay, now)
            .and_then(|t| match t.params {
                TacticParams::Replay { window_ms, offset_ms } if now < t.start_ms + window_ms => Some(offset_ms),
                _ => None,
            });
        if let Some(offset_ms) = replay {
            let mut a = action(TacticKind::Replay, bytes);
            a.attrs.insert("emit_at".into(), Value::from(now + offset_ms));
            actions.push(a);
            out.push(Emission {
                emit_at_ms: now + offset_ms,
                bytes: bytes.to_vec(),
            });
        }

        if let Some(TacticParams::Drop { p }) = self.first_active(TacticKind::Drop, now).map(|t| t.params.clone()) {
            let roll: f64 = rng.random();
            if roll < p {
                actions.push(action(TacticKind::Drop, bytes));
                return (out, actions);
            }
        }

        let mut emit_at = now;
        if let Some(TacticParams::Delay { min_ms, max_ms }) =
            self.first_active(TacticKind::Delay, now).map(|t| t.params.clone())
        {
            let d = if min_ms == max_ms { min_ms } else { rng.random_range(min_ms..=max_ms) };
            emit_at = now + d;
            let mut a = action(TacticKind::Delay, bytes);
            a.attrs.insert("delay_ms".into(), Value::from(d));
            actions.push(a);
        }

        let mut batch = vec![bytes.to_vec()];
        if let Some(TacticParams::Duplicate { copies }) =
            self.first_active(TacticKind::Duplicate, now).map(|t| t.params.clone())
        {
            batch.extend((0..copies).map(|_| bytes.to_vec()));
            let mut a = action(TacticKind::Duplicate, bytes);
            a.attrs.insert("copies".into(), Value::from(copies));
            actions.push(a);
        }

        if let Some(TacticParams::Reorder { span }) = self.first_active(TacticKind::Reorder, now).map(|t| t.params.clone()) {
            self.reorder_buf.extend(batch);
            actions.push(action(TacticKind::Reorder, bytes));
            if self.reorder_buf.len() >= span {
                out.extend(
                    self.reorder_buf
                        .drain(..)
                        .rev()
                        .map(|b| Emission { emit_at_ms: emit_at, bytes: b }),
                );
            }
            return (out, actions);
        }

        out.extend(batch.into_iter().map(|b| Emission { emit_at_ms: emit_at, bytes: b }));
        (out, actions)
    }
}

/// Rewrites the claimed identity of a captured datagram and attaches a MAC
/// the relay cannot compute correctly. Returns `None` for unparseable input.
pub fn reframe<R: Rng + ?Sized>(bytes: &[u8], claimed: u16, rng: &mut R) -> Option<Vec<u8>> {
    if bytes.len() < HEADER_LEN + MAC_LEN {
        return None;
    }
    let record_len = bytes.len() - MAC_LEN;
    peek_header(&bytes[..record_len]).ok()?;
    let mut out = bytes[..record_len].to_vec();
    out[7..9].copy_from_slice(&claimed.to_be_bytes());
    out[9..11].copy_from_slice(&claimed.to_be_bytes());
    let mut mac = [0u8; MAC_LEN];
    rng.fill(&mut mac[..]);
    out.extend_from_slice(&mac);
    Some(out)
}
