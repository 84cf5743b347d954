//! Strategies shared by the property suites.
#![allow(dead_code)]

use proptest::prelude::*;
use twin_core::message::*;

pub fn unit_id() -> impl Strategy<Value = UnitId> {
    (1u16..=u16::MAX).prop_map(|v| UnitId::new(v).unwrap())
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (any::<u32>(), unit_id(), unit_id(), 1u64..=u64::MAX, any::<u64>()).prop_map(
        |(session_id, source_unit, origin_unit, seq, timestamp_ms)| Envelope {
            session_id,
            source_unit,
            origin_unit,
            seq,
            timestamp_ms,
        },
    )
}

fn provenance_mode() -> impl Strategy<Value = ProvenanceMode> {
    prop_oneof![
        Just(ProvenanceMode::Live),
        Just(ProvenanceMode::Synthetic),
        Just(ProvenanceMode::ReplaySuspect)
    ]
}

pub fn track() -> impl Strategy<Value = TrackSummary> {
    (
        any::<u32>(),
        any::<i32>(),
        any::<i32>(),
        0u16..=1000,
        1u8..=0x0f,
        provenance_mode(),
        any::<u32>(),
    )
        .prop_map(|(track_id, x, y, c, mask, pm, delta)| TrackSummary {
            track_id,
            pos_x_mm: x,
            pos_y_mm: y,
            confidence_milli: c,
            modality_mask: mask,
            provenance_mode: pm,
            sensed_to_fused_delta_ms: delta,
        })
}

pub fn body() -> impl Strategy<Value = TelemetryBody> {
    (
        any::<i32>(),
        any::<i32>(),
        HEADING_MIN_MDEG..HEADING_MAX_MDEG,
        prop::sample::select(AutonomyState::ALL.to_vec()),
        0u8..0x40,
        prop::collection::vec(track(), 0..=MAX_TRACKS),
    )
        .prop_map(|(px, py, heading, state, health, tracks)| TelemetryBody {
            pose_x_mm: px,
            pose_y_mm: py,
            heading_mdeg: heading,
            state,
            health_bitmap: health,
            tracks,
        })
}

pub fn telemetry() -> impl Strategy<Value = TelemetryRecord> {
    (envelope(), body()).prop_map(|(e, body)| TelemetryRecord {
        session_id: e.session_id,
        source_unit: e.source_unit,
        origin_unit: e.origin_unit,
        seq: e.seq,
        timestamp_ms: e.timestamp_ms,
        body,
    })
}

pub fn message() -> impl Strategy<Value = Message> {
    let kind = prop::sample::select(CommandKind::ALL.to_vec());
    prop_oneof![
        4 => telemetry().prop_map(Message::Telemetry),
        1 => (envelope(), any::<u64>(), any::<u8>())
            .prop_map(|(env, acked_seq, flags)| Message::Heartbeat(Heartbeat { env, acked_seq, flags })),
        1 => (envelope(), kind.clone()).prop_map(|(env, kind)| Message::Command(CommandRecord { env, kind })),
        1 => (envelope(), kind).prop_map(|(env, kind)| Message::CommandAck(CommandAck { env, kind })),
        1 => (envelope(), any::<[u8; NONCE_LEN]>()).prop_map(|(env, nonce)| Message::Hello(Hello { env, nonce })),
        1 => (envelope(), any::<[u8; NONCE_LEN]>())
            .prop_map(|(env, nonce)| Message::HelloReply(HelloReply { env, nonce })),
        1 => (envelope(), any::<[u8; FINISHED_MAC_LEN]>())
            .prop_map(|(env, mac)| Message::Finished(Finished { env, mac })),
    ]
}
