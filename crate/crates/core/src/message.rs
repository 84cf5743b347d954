//! Wire records and their canonical binary framing.
//!
//! Every datagram starts with a fixed 29-byte header (all integers
//! big-endian):
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 1    | magic `0xA7`   |
//! | 1      | 1    | version `0x01` |
//! | 2      | 1    | msg_type       |
//! | 3      | 4    | session_id     |
//! | 7      | 2    | source_unit    |
//! | 9      | 2    | origin_unit    |
//! | 11     | 8    | seq            |
//! | 19     | 8    | timestamp_ms   |
//! | 27     | 2    | payload_len    |
//!
//! followed by `payload_len` payload bytes. The secure channel appends a
//! 32-byte MAC after that; this module never sees it.
//!
//! Encoding is canonical: a successful `decode_record` followed by
//! `encode_record` reproduces the input exactly.

use std::fmt;
use std::num::NonZeroU16;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: u8 = 0xA7;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 29;
pub const TRACK_SUMMARY_LEN: usize = 20;
pub const TELEMETRY_FIXED_LEN: usize = 15;
pub const MAX_TRACKS: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const FINISHED_MAC_LEN: usize = 32;

pub const HEADING_MIN_MDEG: i32 = -180_000;
pub const HEADING_MAX_MDEG: i32 = 180_000;

/// Heartbeat flag: the gateway's command channel to this unit timed out.
pub const HB_FLAG_CMD_DEGRADED: u8 = 0x01;
/// Heartbeat flag: the gateway raised a provenance alarm on this session.
pub const HB_FLAG_PROVENANCE_ALARM: u8 = 0x02;

// ---------------------------------------------------------------------------
// Identifiers and enumerations
// ---------------------------------------------------------------------------

/// Unit identifier. Zero is reserved as "unassigned" and cannot be built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct UnitId(NonZeroU16);

impl UnitId {
    pub fn new(value: u16) -> Option<Self> {
        NonZeroU16::new(value).map(Self)
    }

    pub fn get(self) -> u16 {
        self.0.get()
    }
}

impl TryFrom<u16> for UnitId {
    type Error = String;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        UnitId::new(value).ok_or_else(|| "unit id 0 is reserved".to_string())
    }
}

impl From<UnitId> for u16 {
    fn from(id: UnitId) -> u16 {
        id.get()
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.get())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Telemetry = 0x01,
    Heartbeat = 0x02,
    Command = 0x03,
    CommandAck = 0x04,
    Hello = 0x10,
    HelloReply = 0x11,
    Finished = 0x12,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => Self::Telemetry,
            0x02 => Self::Heartbeat,
            0x03 => Self::Command,
            0x04 => Self::CommandAck,
            0x10 => Self::Hello,
            0x11 => Self::HelloReply,
            0x12 => Self::Finished,
            _ => return None,
        })
    }
}

/// Discrete platform mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum AutonomyState {
    Idle = 0,
    Ready = 1,
    PrepareToFire = 2,
    Degraded = 3,
    HoldSafe = 4,
}

impl AutonomyState {
    pub const ALL: [AutonomyState; 5] = [
        Self::Idle,
        Self::Ready,
        Self::PrepareToFire,
        Self::Degraded,
        Self::HoldSafe,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Idle => "IDLE",
            Self::Ready => "READY",
            Self::PrepareToFire => "PREPARE_TO_FIRE",
            Self::Degraded => "DEGRADED",
            Self::HoldSafe => "HOLD_SAFE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for AutonomyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monitored subsystems; the discriminant is the health-bitmap bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Subsystem {
    Rgb = 0,
    Depth = 1,
    Lidar = 2,
    Thermal = 3,
    Nav = 4,
    Comm = 5,
}

impl Subsystem {
    pub const ALL: [Subsystem; 6] = [
        Self::Rgb,
        Self::Depth,
        Self::Lidar,
        Self::Thermal,
        Self::Nav,
        Self::Comm,
    ];

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rgb => "rgb",
            Self::Depth => "depth",
            Self::Lidar => "lidar",
            Self::Thermal => "thermal",
            Self::Nav => "nav",
            Self::Comm => "comm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum ProvenanceMode {
    Live = 1,
    Synthetic = 2,
    ReplaySuspect = 3,
}

impl ProvenanceMode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Self::Live,
            2 => Self::Synthetic,
            3 => Self::ReplaySuspect,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum CommandKind {
    Arm = 1,
    Prepare = 2,
    StandDown = 3,
    Resume = 4,
    Hold = 5,
    Reset = 6,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        Self::Arm,
        Self::Prepare,
        Self::StandDown,
        Self::Resume,
        Self::Hold,
        Self::Reset,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Arm => "ARM",
            Self::Prepare => "PREPARE",
            Self::StandDown => "STAND_DOWN",
            Self::Resume => "RESUME",
            Self::Hold => "HOLD",
            Self::Reset => "RESET",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Fields common to every frame header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub session_id: u32,
    pub source_unit: UnitId,
    pub origin_unit: UnitId,
    pub seq: u64,
    pub timestamp_ms: u64,
}

/// Parsed header, as returned by [`peek_header`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MsgType,
    pub envelope: Envelope,
    pub payload_len: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackSummary {
    pub track_id: u32,
    pub pos_x_mm: i32,
    pub pos_y_mm: i32,
    pub confidence_milli: u16,
    pub modality_mask: u8,
    pub provenance_mode: ProvenanceMode,
    pub sensed_to_fused_delta_ms: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TelemetryBody {
    pub pose_x_mm: i32,
    pub pose_y_mm: i32,
    pub heading_mdeg: i32,
    pub state: AutonomyState,
    pub health_bitmap: u8,
    pub tracks: Vec<TrackSummary>,
}

impl Default for TelemetryBody {
    fn default() -> Self {
        Self {
            pose_x_mm: 0,
            pose_y_mm: 0,
            heading_mdeg: 0,
            state: AutonomyState::Idle,
            health_bitmap: 0,
            tracks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TelemetryRecord {
    pub session_id: u32,
    /// Transport sender.
    pub source_unit: UnitId,
    /// Claimed originator of the content.
    pub origin_unit: UnitId,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub body: TelemetryBody,
}

impl TelemetryRecord {
    pub fn envelope(&self) -> Envelope {
        Envelope {
            session_id: self.session_id,
            source_unit: self.source_unit,
            origin_unit: self.origin_unit,
            seq: self.seq,
            timestamp_ms: self.timestamp_ms,
        }
    }
}

/// Gateway → unit liveness/acknowledgement datagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heartbeat {
    pub env: Envelope,
    pub acked_seq: u64,
    pub flags: u8,
}

/// Supervisory command. `env.seq` is the command id, `env.timestamp_ms`
/// the issue time and `env.source_unit` the issuer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommandRecord {
    pub env: Envelope,
    pub kind: CommandKind,
}

impl CommandRecord {
    pub fn command_id(&self) -> u64 {
        self.env.seq
    }

    pub fn issued_ms(&self) -> u64 {
        self.env.timestamp_ms
    }

    pub fn issuer(&self) -> UnitId {
        self.env.source_unit
    }
}

/// Acknowledgement of a command; `env.seq` echoes the command id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommandAck {
    pub env: Envelope,
    pub kind: CommandKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub env: Envelope,
    pub nonce: [u8; NONCE_LEN],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HelloReply {
    pub env: Envelope,
    pub nonce: [u8; NONCE_LEN],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Finished {
    pub env: Envelope,
    pub mac: [u8; FINISHED_MAC_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Telemetry(TelemetryRecord),
    Heartbeat(Heartbeat),
    Command(CommandRecord),
    CommandAck(CommandAck),
    Hello(Hello),
    HelloReply(HelloReply),
    Finished(Finished),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Self::Telemetry(_) => MsgType::Telemetry,
            Self::Heartbeat(_) => MsgType::Heartbeat,
            Self::Command(_) => MsgType::Command,
            Self::CommandAck(_) => MsgType::CommandAck,
            Self::Hello(_) => MsgType::Hello,
            Self::HelloReply(_) => MsgType::HelloReply,
            Self::Finished(_) => MsgType::Finished,
        }
    }

    pub fn envelope(&self) -> Envelope {
        match self {
            Self::Telemetry(r) => r.envelope(),
            Self::Heartbeat(m) => m.env,
            Self::Command(m) => m.env,
            Self::CommandAck(m) => m.env,
            Self::Hello(m) => m.env,
            Self::HelloReply(m) => m.env,
            Self::Finished(m) => m.env,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invariant violation: {0}")]
    InvariantViolation(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecodeErrorKind {
    TooShort,
    BadMagic,
    BadVersion,
    LengthMismatch,
    RangeViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("{kind:?} at offset {offset}")]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    /// First offending byte offset.
    pub offset: usize,
}

impl DecodeError {
    fn new(kind: DecodeErrorKind, offset: usize) -> Self {
        Self { kind, offset }
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn check_track(t: &TrackSummary) -> Result<(), EncodeError> {
    if t.confidence_milli > 1000 {
        return Err(EncodeError::InvariantViolation("confidence_milli > 1000"));
    }
    if t.provenance_mode == ProvenanceMode::Live && t.modality_mask == 0 {
        return Err(EncodeError::InvariantViolation("LIVE track without modalities"));
    }
    Ok(())
}

fn check_body(b: &TelemetryBody) -> Result<(), EncodeError> {
    if !(HEADING_MIN_MDEG..HEADING_MAX_MDEG).contains(&b.heading_mdeg) {
        return Err(EncodeError::InvariantViolation("heading out of range"));
    }
    if b.tracks.len() > MAX_TRACKS {
        return Err(EncodeError::InvariantViolation("more than 16 tracks"));
    }
    b.tracks.iter().try_for_each(check_track)
}

fn put_header(out: &mut Vec<u8>, msg_type: MsgType, env: &Envelope, payload_len: usize) {
    out.push(MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&env.session_id.to_be_bytes());
    out.extend_from_slice(&env.source_unit.get().to_be_bytes());
    out.extend_from_slice(&env.origin_unit.get().to_be_bytes());
    out.extend_from_slice(&env.seq.to_be_bytes());
    out.extend_from_slice(&env.timestamp_ms.to_be_bytes());
    out.extend_from_slice(&(payload_len as u16).to_be_bytes());
}

fn encode_body(out: &mut Vec<u8>, b: &TelemetryBody) {
    out.extend_from_slice(&b.pose_x_mm.to_be_bytes());
    out.extend_from_slice(&b.pose_y_mm.to_be_bytes());
    out.extend_from_slice(&b.heading_mdeg.to_be_bytes());
    out.push(b.state as u8);
    out.push(b.health_bitmap);
    out.push(b.tracks.len() as u8);
    for t in &b.tracks {
        out.extend_from_slice(&t.track_id.to_be_bytes());
        out.extend_from_slice(&t.pos_x_mm.to_be_bytes());
        out.extend_from_slice(&t.pos_y_mm.to_be_bytes());
        out.extend_from_slice(&t.confidence_milli.to_be_bytes());
        out.push(t.modality_mask);
        out.push(t.provenance_mode as u8);
        out.extend_from_slice(&t.sensed_to_fused_delta_ms.to_be_bytes());
    }
}

/// Encodes a record into its canonical frame (without MAC).
pub fn encode_record(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let env = msg.envelope();
    if env.seq == 0 {
        return Err(EncodeError::InvariantViolation("seq must be >= 1"));
    }
    let mut payload = Vec::new();
    match msg {
        Message::Telemetry(r) => {
            check_body(&r.body)?;
            encode_body(&mut payload, &r.body);
        }
        Message::Heartbeat(h) => {
            payload.extend_from_slice(&h.acked_seq.to_be_bytes());
            payload.push(h.flags);
        }
        Message::Command(c) => payload.push(c.kind as u8),
        Message::CommandAck(a) => payload.push(a.kind as u8),
        Message::Hello(h) => payload.extend_from_slice(&h.nonce),
        Message::HelloReply(h) => payload.extend_from_slice(&h.nonce),
        Message::Finished(f) => payload.extend_from_slice(&f.mac),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    put_header(&mut out, msg.msg_type(), &env, payload.len());
    out.extend_from_slice(&payload);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> u8 {
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn u16(&mut self) -> u16 {
        u16::from_be_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }

    fn i32(&mut self) -> i32 {
        i32::from_be_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take())
    }
}

/// Parses and range-checks the fixed header, including the declared
/// payload length against the bytes present.
pub fn peek_header(bytes: &[u8]) -> Result<Header, DecodeError> {
    use DecodeErrorKind::*;
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::new(TooShort, bytes.len()));
    }
    if bytes[0] != MAGIC {
        return Err(DecodeError::new(BadMagic, 0));
    }
    if bytes[1] != VERSION {
        return Err(DecodeError::new(BadVersion, 1));
    }
    let msg_type = MsgType::from_code(bytes[2]).ok_or(DecodeError::new(RangeViolation, 2))?;
    let mut c = Cursor { buf: bytes, pos: 3 };
    let session_id = c.u32();
    let source_unit = UnitId::new(c.u16()).ok_or(DecodeError::new(RangeViolation, 7))?;
    let origin_unit = UnitId::new(c.u16()).ok_or(DecodeError::new(RangeViolation, 9))?;
    let seq = c.u64();
    if seq == 0 {
        return Err(DecodeError::new(RangeViolation, 11));
    }
    let timestamp_ms = c.u64();
    let payload_len = c.u16();
    if bytes.len() - HEADER_LEN != payload_len as usize {
        return Err(DecodeError::new(LengthMismatch, 27));
    }
    Ok(Header {
        msg_type,
        envelope: Envelope {
            session_id,
            source_unit,
            origin_unit,
            seq,
            timestamp_ms,
        },
        payload_len,
    })
}

fn expect_payload(header: &Header, len: usize) -> Result<(), DecodeError> {
    if header.payload_len as usize != len {
        return Err(DecodeError::new(DecodeErrorKind::LengthMismatch, 27));
    }
    Ok(())
}

fn decode_body(bytes: &[u8]) -> Result<TelemetryBody, DecodeError> {
    use DecodeErrorKind::*;
    let payload_len = bytes.len() - HEADER_LEN;
    if payload_len < TELEMETRY_FIXED_LEN {
        return Err(DecodeError::new(LengthMismatch, 27));
    }
    let mut c = Cursor {
        buf: bytes,
        pos: HEADER_LEN,
    };
    let pose_x_mm = c.i32();
    let pose_y_mm = c.i32();
    let heading_mdeg = c.i32();
    if !(HEADING_MIN_MDEG..HEADING_MAX_MDEG).contains(&heading_mdeg) {
        return Err(DecodeError::new(RangeViolation, HEADER_LEN + 8));
    }
    let state = AutonomyState::from_code(c.u8()).ok_or(DecodeError::new(RangeViolation, HEADER_LEN + 12))?;
    let health_bitmap = c.u8();
    let count_off = c.pos;
    let count = c.u8() as usize;
    if count > MAX_TRACKS {
        return Err(DecodeError::new(RangeViolation, count_off));
    }
    if payload_len != TELEMETRY_FIXED_LEN + count * TRACK_SUMMARY_LEN {
        return Err(DecodeError::new(LengthMismatch, 27));
    }
    let mut tracks = Vec::with_capacity(count);
    for _ in 0..count {
        let start = c.pos;
        let track_id = c.u32();
        let pos_x_mm = c.i32();
        let pos_y_mm = c.i32();
        let confidence_milli = c.u16();
        if confidence_milli > 1000 {
            return Err(DecodeError::new(RangeViolation, start + 12));
        }
        let modality_mask = c.u8();
        let provenance_mode =
            ProvenanceMode::from_code(c.u8()).ok_or(DecodeError::new(RangeViolation, start + 15))?;
        if provenance_mode == ProvenanceMode::Live && modality_mask == 0 {
            return Err(DecodeError::new(RangeViolation, start + 14));
        }
        let sensed_to_fused_delta_ms = c.u32();
        tracks.push(TrackSummary {
            track_id,
            pos_x_mm,
            pos_y_mm,
            confidence_milli,
            modality_mask,
            provenance_mode,
            sensed_to_fused_delta_ms,
        });
    }
    Ok(TelemetryBody {
        pose_x_mm,
        pose_y_mm,
        heading_mdeg,
        state,
        health_bitmap,
        tracks,
    })
}

/// Decodes a frame. Total: never panics on arbitrary input.
pub fn decode_record(bytes: &[u8]) -> Result<Message, DecodeError> {
    let header = peek_header(bytes)?;
    let env = header.envelope;
    let payload = &bytes[HEADER_LEN..];
    let kind_at = |b: u8| {
        CommandKind::from_code(b).ok_or(DecodeError::new(DecodeErrorKind::RangeViolation, HEADER_LEN))
    };
    Ok(match header.msg_type {
        MsgType::Telemetry => Message::Telemetry(TelemetryRecord {
            session_id: env.session_id,
            source_unit: env.source_unit,
            origin_unit: env.origin_unit,
            seq: env.seq,
            timestamp_ms: env.timestamp_ms,
            body: decode_body(bytes)?,
        }),
        MsgType::Heartbeat => {
            expect_payload(&header, 9)?;
            let mut c = Cursor {
                buf: bytes,
                pos: HEADER_LEN,
            };
            Message::Heartbeat(Heartbeat {
                env,
                acked_seq: c.u64(),
                flags: c.u8(),
            })
        }
        MsgType::Command => {
            expect_payload(&header, 1)?;
            Message::Command(CommandRecord {
                env,
                kind: kind_at(payload[0])?,
            })
        }
        MsgType::CommandAck => {
            expect_payload(&header, 1)?;
            Message::CommandAck(CommandAck {
                env,
                kind: kind_at(payload[0])?,
            })
        }
        MsgType::Hello => {
            expect_payload(&header, NONCE_LEN)?;
            Message::Hello(Hello {
                env,
                nonce: payload.try_into().expect("length checked"),
            })
        }
        MsgType::HelloReply => {
            expect_payload(&header, NONCE_LEN)?;
            Message::HelloReply(HelloReply {
                env,
                nonce: payload.try_into().expect("length checked"),
            })
        }
        MsgType::Finished => {
            expect_payload(&header, FINISHED_MAC_LEN)?;
            Message::Finished(Finished {
                env,
                mac: payload.try_into().expect("length checked"),
            })
        }
    })
}
