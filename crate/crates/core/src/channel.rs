//! Pre-shared-key authenticated datagram transport.
//!
//! Three-message handshake:
//!
//! 1. `hello` (initiator → responder): unit id + 16-byte nonce
//! 2. `hello-reply` (responder → initiator): 16-byte nonce, fresh session id
//! 3. `finished` (initiator → responder): `HMAC(key, nonce_i ∥ nonce_r)`
//!
//! with `key = HMAC-SHA-256(psk, nonce_i ∥ nonce_r ∥ session_id_be32)`.
//! Afterwards every datagram is `record ∥ HMAC-SHA-256(key, record)`.
//!
//! `open` authenticates the sender's key possession and nothing else. It
//! does not look at origin, sequence or timestamp fields; provenance and
//! freshness belong to the gateway.

use std::collections::{BTreeMap, BTreeSet};

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;

use crate::message::{
    decode_record, encode_record, Envelope, Finished, Hello, HelloReply, Message, UnitId,
    FINISHED_MAC_LEN, NONCE_LEN,
};

type HmacSha256 = Hmac<Sha256>;

pub const KEY_LEN: usize = 32;
pub const MAC_LEN: usize = 32;
pub const HANDSHAKE_ATTEMPTS: u32 = 3;
pub const HANDSHAKE_RETRY_MS: u64 = 500;

pub type Psk = [u8; KEY_LEN];
pub type Nonce = [u8; NONCE_LEN];

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("no pre-shared key registered for unit {0}")]
    UnknownUnit(u16),
    #[error("finished MAC did not verify")]
    BadFinishedMac,
    #[error("handshake timed out after {0} attempts")]
    Timeout(u32),
    #[error("datagram failed authentication")]
    AuthFail,
    #[error("datagram rejected by transport replay window")]
    Replay,
    #[error("unexpected handshake message: {0}")]
    Protocol(String),
    #[error("duplicate pre-shared key for unit {0}")]
    DuplicatePsk(u16),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Identity {
    pub unit: UnitId,
    pub psk: Psk,
}

/// Responder-side unit → psk table. Read-only once hosts start.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    keys: BTreeMap<UnitId, Psk>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a unit; distinct units must hold distinct keys.
    pub fn insert(&mut self, identity: &Identity) -> Result<(), ChannelError> {
        if self
            .keys
            .iter()
            .any(|(u, k)| *u != identity.unit && *k == identity.psk)
        {
            return Err(ChannelError::DuplicatePsk(identity.unit.get()));
        }
        self.keys.insert(identity.unit, identity.psk);
        Ok(())
    }

    pub fn get(&self, unit: UnitId) -> Option<&Psk> {
        self.keys.get(&unit)
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.keys.contains_key(&unit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub session_id: u32,
    pub local: UnitId,
    pub peer: UnitId,
    pub key: [u8; KEY_LEN],
    pub established_ms: u64,
}

fn mac_over(key: &[u8], parts: &[&[u8]]) -> [u8; MAC_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

fn verify_mac(key: &[u8], parts: &[&[u8]], tag: &[u8]) -> bool {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.verify_slice(tag).is_ok()
}

pub fn derive_key(psk: &Psk, nonce_i: &Nonce, nonce_r: &Nonce, session_id: u32) -> [u8; KEY_LEN] {
    mac_over(psk, &[nonce_i, nonce_r, &session_id.to_be_bytes()])
}

pub fn finished_mac(key: &[u8; KEY_LEN], nonce_i: &Nonce, nonce_r: &Nonce) -> [u8; FINISHED_MAC_LEN] {
    mac_over(key, &[nonce_i, nonce_r])
}

/// Appends the session MAC to an encoded record.
pub fn seal(session: &Session, record: &[u8]) -> Vec<u8> {
    let tag = mac_over(&session.key, &[record]);
    let mut out = Vec::with_capacity(record.len() + MAC_LEN);
    out.extend_from_slice(record);
    out.extend_from_slice(&tag);
    out
}

/// Verifies the trailing MAC in constant time and returns the record bytes.
pub fn open<'a>(session: &Session, datagram: &'a [u8]) -> Result<&'a [u8], ChannelError> {
    if datagram.len() <= MAC_LEN {
        return Err(ChannelError::AuthFail);
    }
    let (record, tag) = datagram.split_at(datagram.len() - MAC_LEN);
    if verify_mac(&session.key, &[record], tag) {
        Ok(record)
    } else {
        Err(ChannelError::AuthFail)
    }
}

/// Reads the header sequence number of a datagram without authenticating it.
fn header_seq(datagram: &[u8]) -> Option<u64> {
    datagram
        .get(11..19)
        .map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
}

/// Optional transport-level anti-replay filter over header sequence
/// numbers. Disabled (size 0) unless a scenario turns it on.
#[derive(Clone, Debug, Default)]
pub struct TransportReplayWindow {
    size: u64,
    max_seq: u64,
    seen: BTreeSet<u64>,
}

impl TransportReplayWindow {
    pub fn new(size: u64) -> Self {
        Self {
            size,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.size > 0
    }

    /// Returns false for a duplicate or a sequence older than the window.
    pub fn check_and_update(&mut self, seq: u64) -> bool {
        if !self.enabled() {
            return true;
        }
        if self.max_seq >= self.size && seq <= self.max_seq - self.size {
            return false;
        }
        if !self.seen.insert(seq) {
            return false;
        }
        if seq > self.max_seq {
            self.max_seq = seq;
            let floor = self.max_seq.saturating_sub(self.size);
            self.seen = self.seen.split_off(&(floor + 1));
        }
        true
    }
}

/// `open` followed by the transport replay filter, if enabled. The window is
/// only advanced for authentic datagrams.
pub fn open_with_window<'a>(
    session: &Session,
    window: &mut TransportReplayWindow,
    datagram: &'a [u8],
) -> Result<&'a [u8], ChannelError> {
    let record = open(session, datagram)?;
    if window.enabled() {
        let seq = header_seq(record).ok_or(ChannelError::AuthFail)?;
        if !window.check_and_update(seq) {
            return Err(ChannelError::Replay);
        }
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Handshake state machines
// ---------------------------------------------------------------------------

fn env(session_id: u32, unit: UnitId, seq: u64, now: u64) -> Envelope {
    Envelope {
        session_id,
        source_unit: unit,
        origin_unit: unit,
        seq,
        timestamp_ms: now,
    }
}

fn expect(bytes: &[u8]) -> Result<Message, ChannelError> {
    decode_record(bytes).map_err(|e| ChannelError::Protocol(e.to_string()))
}

/// Initiator side. One instance per connection attempt sequence.
#[derive(Clone, Debug)]
pub struct Initiator {
    identity: Identity,
    nonce: Nonce,
    attempts: u32,
}

impl Initiator {
    pub fn new(identity: Identity, nonce: Nonce) -> Self {
        Self {
            identity,
            nonce,
            attempts: 0,
        }
    }

    pub fn unit(&self) -> UnitId {
        self.identity.unit
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    /// Produces the next hello frame, or `Timeout` once the attempt budget
    /// is spent.
    pub fn hello(&mut self, now: u64) -> Result<Vec<u8>, ChannelError> {
        if self.attempts >= HANDSHAKE_ATTEMPTS {
            return Err(ChannelError::Timeout(self.attempts));
        }
        self.attempts += 1;
        let msg = Message::Hello(Hello {
            env: env(0, self.identity.unit, self.attempts as u64, now),
            nonce: self.nonce,
        });
        Ok(encode_record(&msg).expect("hello is always valid"))
    }

    /// Consumes a hello-reply; yields the session and the finished frame.
    pub fn on_reply(&self, bytes: &[u8], now: u64) -> Result<(Session, Vec<u8>), ChannelError> {
        let reply = match expect(bytes)? {
            Message::HelloReply(r) => r,
            other => return Err(ChannelError::Protocol(format!("{:?}", other.msg_type()))),
        };
        Ok(self.finish(&reply, now))
    }

    pub fn finish(&self, reply: &HelloReply, now: u64) -> (Session, Vec<u8>) {
        let session_id = reply.env.session_id;
        let key = derive_key(&self.identity.psk, &self.nonce, &reply.nonce, session_id);
        let mac = finished_mac(&key, &self.nonce, &reply.nonce);
        let finished = Message::Finished(Finished {
            env: env(session_id, self.identity.unit, 1, now),
            mac,
        });
        let session = Session {
            session_id,
            local: self.identity.unit,
            peer: reply.env.source_unit,
            key,
            established_ms: now,
        };
        (session, encode_record(&finished).expect("finished is always valid"))
    }
}

#[derive(Clone, Debug)]
struct Pending {
    peer: UnitId,
    nonce_i: Nonce,
    nonce_r: Nonce,
    key: [u8; KEY_LEN],
}

/// Responder side: holds the registry and handshakes in flight.
#[derive(Clone, Debug)]
pub struct Responder {
    local: UnitId,
    registry: Registry,
    pending: BTreeMap<u32, Pending>,
    next_session_id: u32,
}

impl Responder {
    pub fn new(local: UnitId, registry: Registry, first_session_id: u32) -> Self {
        Self {
            local,
            registry,
            pending: BTreeMap::new(),
            next_session_id: first_session_id.max(1),
        }
    }

    pub fn local(&self) -> UnitId {
        self.local
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Answers a hello. The caller supplies the responder nonce so that
    /// simulations stay reproducible.
    pub fn on_hello(&mut self, hello: &Hello, nonce_r: Nonce, now: u64) -> Result<Vec<u8>, ChannelError> {
        let peer = hello.env.source_unit;
        let psk = self
            .registry
            .get(peer)
            .ok_or(ChannelError::UnknownUnit(peer.get()))?;
        let session_id = self.next_session_id;
        self.next_session_id = self.next_session_id.wrapping_add(1).max(1);
        let key = derive_key(psk, &hello.nonce, &nonce_r, session_id);
        self.pending.insert(
            session_id,
            Pending {
                peer,
                nonce_i: hello.nonce,
                nonce_r,
                key,
            },
        );
        let reply = Message::HelloReply(HelloReply {
            env: env(session_id, self.local, 1, now),
            nonce: nonce_r,
        });
        Ok(encode_record(&reply).expect("reply is always valid"))
    }

    pub fn on_finished(&mut self, finished: &Finished, now: u64) -> Result<Session, ChannelError> {
        let session_id = finished.env.session_id;
        let pending = self
            .pending
            .get(&session_id)
            .ok_or_else(|| ChannelError::Protocol(format!("no pending session {session_id}")))?;
        if pending.peer != finished.env.source_unit {
            return Err(ChannelError::BadFinishedMac);
        }
        let ok = verify_mac(&pending.key, &[&pending.nonce_i, &pending.nonce_r], &finished.mac);
        let pending = self.pending.remove(&session_id).expect("present");
        if !ok {
            return Err(ChannelError::BadFinishedMac);
        }
        Ok(Session {
            session_id,
            local: self.local,
            peer: pending.peer,
            key: pending.key,
            established_ms: now,
        })
    }
}

/// Runs a complete handshake over an in-memory link. `deliver(attempt)`
/// decides whether that attempt's hello gets through; lost attempts cost
/// `HANDSHAKE_RETRY_MS` each. Returns `(initiator_session, responder_session)`.
pub fn handshake<R: RngCore>(
    initiator: &Identity,
    responder: &mut Responder,
    rng: &mut R,
    now: u64,
    mut deliver: impl FnMut(u32) -> bool,
) -> Result<(Session, Session), ChannelError> {
    let mut nonce_i = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce_i);
    let mut init = Initiator::new(initiator.clone(), nonce_i);
    let mut t = now;
    loop {
        let hello_bytes = init.hello(t)?;
        if deliver(init.attempts()) {
            let hello = match expect(&hello_bytes)? {
                Message::Hello(h) => h,
                _ => unreachable!("initiator emits hello"),
            };
            let mut nonce_r = [0u8; NONCE_LEN];
            rng.fill_bytes(&mut nonce_r);
            let reply = responder.on_hello(&hello, nonce_r, t)?;
            let (local, finished_bytes) = init.on_reply(&reply, t)?;
            let finished = match expect(&finished_bytes)? {
                Message::Finished(f) => f,
                _ => unreachable!("initiator emits finished"),
            };
            let remote = responder.on_finished(&finished, t)?;
            return Ok((local, remote));
        }
        t += HANDSHAKE_RETRY_MS;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uid(v: u16) -> UnitId {
        UnitId::new(v).unwrap()
    }

    fn ident(unit: u16, fill: u8) -> Identity {
        Identity {
            unit: uid(unit),
            psk: [fill; 32],
        }
    }

    fn gateway() -> Responder {
        let mut reg = Registry::new();
        reg.insert(&ident(2, 0x22)).unwrap();
        reg.insert(&ident(3, 0x33)).unwrap();
        Responder::new(uid(100), reg, 1)
    }

    #[test]
    fn registered_unit_gets_matching_sessions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gw = gateway();
        let (a, b) = handshake(&ident(2, 0x22), &mut gw, &mut rng, 0, |_| true).unwrap();
        assert_eq!(a.key, b.key);
        assert_eq!(a.session_id, b.session_id);
        assert_eq!(a.peer, uid(100));
        assert_eq!(b.peer, uid(2));
    }

    #[test]
    fn unknown_unit_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gw = gateway();
        let err = handshake(&ident(9, 0x99), &mut gw, &mut rng, 0, |_| true).unwrap_err();
        assert_eq!(err, ChannelError::UnknownUnit(9));
    }

    #[test]
    fn wrong_psk_fails_finished() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gw = gateway();
        let err = handshake(&ident(2, 0x77), &mut gw, &mut rng, 0, |_| true).unwrap_err();
        assert_eq!(err, ChannelError::BadFinishedMac);
    }

    #[test]
    fn corrupted_finished_mac_single_bit() {
        let mut gw = gateway();
        let mut init = Initiator::new(ident(2, 0x22), [1; 16]);
        let hello = match decode_record(&init.hello(0).unwrap()).unwrap() {
            Message::Hello(h) => h,
            _ => unreachable!(),
        };
        let reply = gw.on_hello(&hello, [2; 16], 0).unwrap();
        let (_, fin) = init.on_reply(&reply, 0).unwrap();
        let mut fin = match decode_record(&fin).unwrap() {
            Message::Finished(f) => f,
            _ => unreachable!(),
        };
        fin.mac[7] ^= 0x10;
        assert_eq!(gw.on_finished(&fin, 0).unwrap_err(), ChannelError::BadFinishedMac);
    }

    #[test]
    fn lost_hellos_time_out_after_three_attempts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gw = gateway();
        let mut seen = Vec::new();
        let err = handshake(&ident(2, 0x22), &mut gw, &mut rng, 0, |a| {
            seen.push(a);
            false
        })
        .unwrap_err();
        assert_eq!(err, ChannelError::Timeout(3));
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn third_attempt_still_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gw = gateway();
        let (a, _) = handshake(&ident(2, 0x22), &mut gw, &mut rng, 0, |a| a == 3).unwrap();
        assert_eq!(a.established_ms, 2 * HANDSHAKE_RETRY_MS);
    }

    #[test]
    fn identical_transcripts_identical_keys() {
        let k1 = derive_key(&[5; 32], &[1; 16], &[2; 16], 7);
        let k2 = derive_key(&[5; 32], &[1; 16], &[2; 16], 7);
        assert_eq!(k1, k2);
        assert_ne!(k1, derive_key(&[5; 32], &[1; 16], &[2; 16], 8));
    }

    #[test]
    fn duplicate_psk_rejected() {
        let mut reg = Registry::new();
        reg.insert(&ident(2, 1)).unwrap();
        assert_eq!(reg.insert(&ident(3, 1)), Err(ChannelError::DuplicatePsk(3)));
    }

    fn session(fill: u8) -> Session {
        Session {
            session_id: 1,
            local: uid(2),
            peer: uid(100),
            key: [fill; 32],
            established_ms: 0,
        }
    }

    #[test]
    fn seal_open_round_trip_and_statelessness() {
        let s = session(1);
        let d = seal(&s, b"payload");
        for _ in 0..3 {
            assert_eq!(open(&s, &d).unwrap(), b"payload");
        }
    }

    #[test]
    fn wrong_key_and_empty_datagrams_fail() {
        let d = seal(&session(1), b"payload");
        assert_eq!(open(&session(2), &d), Err(ChannelError::AuthFail));
        assert_eq!(open(&session(1), &[]), Err(ChannelError::AuthFail));
        assert_eq!(open(&session(1), &[0u8; 32]), Err(ChannelError::AuthFail));
    }

    #[test]
    fn replay_window_rejects_duplicates_and_old() {
        let mut w = TransportReplayWindow::new(4);
        assert!(w.check_and_update(1));
        assert!(w.check_and_update(3));
        assert!(!w.check_and_update(3));
        assert!(w.check_and_update(2));
        assert!(w.check_and_update(10));
        assert!(!w.check_and_update(5));
        assert!(w.check_and_update(7));
        let mut off = TransportReplayWindow::new(0);
        assert!(off.check_and_update(1));
        assert!(off.check_and_update(1));
    }
}
