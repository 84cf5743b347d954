//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::collections::HashSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twin_core::autonomy::{decide, Conditions};
use twin_core::bundled;
use twin_core::channel::{open, seal, Session, KEY_LEN};
use twin_core::eventlog::{read_jsonl, to_jsonl, EventLogEntry};
use twin_core::gateway::{validate, Outcome, Reason, SequenceLedger, ValidationPolicy};
use twin_core::harness::{run_scenario, trial_file, RunOptions};
use twin_core::live::LiveBinaries;
use twin_core::message::*;
use twin_core::metrics::SuiteMetrics;
use twin_core::relay::{RelayCore, Tactic};
use twin_core::scenario::{Mode, ScenarioSpec};
use twin_core::sim::run_trial;

struct CriterionResult {
    pass: bool,
    detail: String,
}

fn verdict(checks: &[(bool, String)], elapsed: Duration, budget: Duration) -> CriterionResult {
    let mut failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
    let in_time = elapsed <= budget;
    let time_note = format!("runtime {:.2}s (budget {}s)", elapsed.as_secs_f64(), budget.as_secs());
    if !in_time {
        failed.push(&time_note);
    }
    let summary: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
    CriterionResult {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{}; {time_note}", summary.join("; "))
        } else {
            format!("failed: {}", failed.join("; "))
        },
    }
}

fn spec(name: &str) -> ScenarioSpec {
    bundled::get(name).expect("bundled scenario").parse().expect("bundled scenario parses")
}

fn run_suite(s: &ScenarioSpec, out: &Path, bins: Option<&LiveBinaries>) -> SuiteMetrics {
    run_scenario(s, &RunOptions::default(), out, bins).expect("suite runs")
}

fn trial_log(dir: &Path, trial: u32) -> Vec<EventLogEntry> {
    let f = fs::File::open(dir.join(trial_file(trial))).expect("trial log");
    read_jsonl(BufReader::new(f)).expect("well-formed log")
}

// ---------------------------------------------------------------------------
// 1. Teammate provenance
// ---------------------------------------------------------------------------

fn teammate_provenance(tmp: &Path) -> CriterionResult {
    let start = Instant::now();
    let s = spec("teammate_provenance");
    let out = tmp.join("c1");
    let m = run_suite(&s, &out, None);
    let mut opened = 0;
    let mut flagged = 0;
    let mut latched = 0;
    let mut worst = 0;
    for t in &m.trials {
        let log = trial_log(&out, t.trial);
        // A verdict is only produced after transport open succeeded.
        if log.iter().any(|e| {
            e.component == "unit-1" && e.attr_u64("origin") == Some(3) && e.attr_str("path") == Some("teammate")
        }) {
            opened += 1;
        }
        if t.verdict_count("FLAG", "PROVENANCE") > 0 {
            flagged += 1;
        }
        if let Some(l) = t.units.get(&1).and_then(|u| u.hold_safe_latency_ms) {
            worst = worst.max(l);
            if l <= 100 {
                latched += 1;
            }
        }
    }
    let n = s.trials as usize;
    verdict(
        &[
            (m.trials.len() == n, format!("{} trials", m.trials.len())),
            (opened == n, format!("{opened}/{n} third-origin records opened on the teammate session")),
            (flagged == n, format!("{flagged}/{n} FLAG/PROVENANCE")),
            (latched == n, format!("{latched}/{n} HOLD_SAFE within 100 ms (worst {worst} ms)")),
        ],
        start.elapsed(),
        Duration::from_secs(5),
    )
}

// ---------------------------------------------------------------------------
// 2. Re-origination negative control
// ---------------------------------------------------------------------------

fn reoriginate_control(tmp: &Path) -> CriterionResult {
    let start = Instant::now();
    let s = spec("reoriginate_control");
    let m = run_suite(&s, &tmp.join("c2"), None);
    let handshakes: u64 = m.trials.iter().map(|t| t.handshakes_ok.get(&9).copied().unwrap_or(0)).sum();
    let accepted: u64 = m.trials.iter().map(|t| t.accepted_by_unit.get(&9).copied().unwrap_or(0)).sum();
    let failed: u64 = m.trials.iter().map(|t| t.handshakes_failed).sum();
    verdict(
        &[
            (m.trials.len() == 5, format!("{} trials", m.trials.len())),
            (handshakes == 0, format!("{handshakes} handshakes for unit 9")),
            (accepted == 0, format!("{accepted} RECORD_ACCEPTED attributable to unit 9")),
            (failed > 0, format!("{failed} failed handshakes observed")),
        ],
        start.elapsed(),
        Duration::from_secs(5),
    )
}

// ---------------------------------------------------------------------------
// 3. Subsystem-loss containment
// ---------------------------------------------------------------------------

fn subsystem_loss(tmp: &Path) -> CriterionResult {
    let start = Instant::now();
    let mut total = 0;
    let mut degraded = 0;
    let mut revoked = 0;
    let mut contained = 0;
    let mut unsafe_ = 0;
    for (name, reason) in [
        ("thermal_loss", "SUBSYSTEM_LOSS(thermal)"),
        ("rgb_loss", "SUBSYSTEM_LOSS(rgb)"),
    ] {
        let m = run_suite(&spec(name), &tmp.join(format!("c3_{name}")), None);
        for t in &m.trials {
            total += 1;
            let u = t.units.get(&1).cloned().unwrap_or_default();
            degraded += u.degraded_reasons.iter().any(|r| r == reason) as usize;
            revoked += (u.armed_at_trigger && u.revoked) as usize;
            contained += (t.crash.is_none() && t.containment_ok) as usize;
            unsafe_ += t.unsafe_engagements;
        }
    }
    verdict(
        &[
            (degraded == 10 && total == 10, format!("{degraded}/{total} DEGRADED with the matching reason")),
            (revoked == 10, format!("{revoked}/{total} armed units revoked PREPARE_TO_FIRE")),
            (contained == 10, format!("{contained}/{total} contained")),
            (unsafe_ == 0, format!("{unsafe_} unsafe continuations")),
        ],
        start.elapsed(),
        Duration::from_secs(10),
    )
}

// ---------------------------------------------------------------------------
// 4. Latency envelope, multi-process on loopback
// ---------------------------------------------------------------------------

fn bins() -> LiveBinaries {
    LiveBinaries {
        gateway: PathBuf::from(env!("CARGO_BIN_EXE_twin-gateway")),
        autonomy: PathBuf::from(env!("CARGO_BIN_EXE_twin-autonomy")),
        relay: PathBuf::from(env!("CARGO_BIN_EXE_twin-relay")),
    }
}

fn latency_envelope(tmp: PathBuf) -> CriterionResult {
    let start = Instant::now();
    let suites: Vec<_> = [("thermal_loss", 350.0, 750.0), ("rgb_loss", 800.0, 1150.0)]
        .into_iter()
        .map(|(name, lo, hi)| {
            let dir = tmp.join(format!("c4_{name}"));
            thread::spawn(move || {
                let mut s = spec(name);
                s.mode = Mode::Live;
                (name, lo, hi, run_suite(&s, &dir, Some(&bins())))
            })
        })
        .collect();
    let mut checks = Vec::new();
    for h in suites {
        let (name, lo, hi, m) = h.join().expect("live suite thread");
        let l = m.aggregate.latency.first();
        let mean = l.and_then(|l| l.mean_ms).unwrap_or(f64::NAN);
        let p95 = l.and_then(|l| l.p95_ms).unwrap_or(u64::MAX);
        let (measured, injected) = l.map_or((0, 0), |l| (l.measured, l.injected));
        checks.push((
            m.aggregate.crashed == 0 && measured == 5 && injected == 5,
            format!("{name}: {measured}/{injected} measured, {} crashed", m.aggregate.crashed),
        ));
        checks.push(((lo..=hi).contains(&mean), format!("{name} mean {mean:.1} ms in [{lo}, {hi}]")));
        checks.push((p95 < 1700, format!("{name} p95 {p95} ms < 1700")));
    }
    verdict(&checks, start.elapsed(), Duration::from_secs(60))
}

// ---------------------------------------------------------------------------
// 5. Track starvation and the display gap
// ---------------------------------------------------------------------------

fn track_starvation(tmp: &Path) -> CriterionResult {
    let start = Instant::now();
    let off = spec("track_starvation");
    let window = off.policy.freshness_window_ms;
    let ttl: ScenarioSpec = format!("{}\npolicy display_ttl_ms={window}\n", off.source)
        .parse()
        .expect("ttl variant parses");
    let a = run_suite(&off, &tmp.join("c5_off"), None);
    let b = run_suite(&ttl, &tmp.join("c5_ttl"), None);
    let safe = |m: &SuiteMetrics| {
        m.trials
            .iter()
            .filter(|t| {
                t.crash.is_none()
                    && t.containment_ok
                    && t.unsafe_engagements == 0
                    && t.final_state(1) == AutonomyState::Degraded.as_str()
            })
            .count()
    };
    let stale_off = a.trials.iter().filter(|t| t.stale_display_events >= 1).count();
    let stale_ttl: u64 = b.trials.iter().map(|t| t.stale_display_events).sum();
    verdict(
        &[
            (safe(&a) == 5, format!("{}/5 safe completions in DEGRADED (TTL off)", safe(&a))),
            (stale_off == 5, format!("{stale_off}/5 trials with DISPLAY_STALE_DETECTED (TTL off)")),
            (safe(&b) == 5, format!("{}/5 safe completions (TTL {window} ms)", safe(&b))),
            (stale_ttl == 0, format!("{stale_ttl} stale renders (TTL {window} ms)")),
        ],
        start.elapsed(),
        Duration::from_secs(10),
    )
}

// ---------------------------------------------------------------------------
// 6. Replay and staleness over a captured trace
// ---------------------------------------------------------------------------

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().expect("8 bytes"))
}

fn replay_trace() -> CriterionResult {
    let start = Instant::now();
    let unit = UnitId::new(1).unwrap();
    let session = Session {
        session_id: 11,
        local: unit,
        peer: unit,
        key: [0x5A; KEY_LEN],
        established_ms: 0,
    };
    let trace: Vec<(u64, Vec<u8>)> = (1..=200u64)
        .map(|seq| {
            let t = 1000 + 100 * seq;
            let rec = Message::Telemetry(TelemetryRecord {
                session_id: 11,
                source_unit: unit,
                origin_unit: unit,
                seq,
                timestamp_ms: t,
                body: TelemetryBody::default(),
            });
            (t, seal(&session, &encode_record(&rec).unwrap()))
        })
        .collect();
    let tactics = [
        "REPLAY window=3000 offset=600 start=2000 end=5000",
        "REPLAY window=3000 offset=2500 start=8000 end=11000",
        "DUPLICATE k=1 start=12000 end=14000",
        "DELAY ms=2600 start=15000 end=17000",
    ]
    .iter()
    .map(|l| Tactic::parse_line(l).unwrap())
    .collect();
    let mut relay = RelayCore::new(tactics);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut wire = Vec::new();
    for (t, dg) in &trace {
        let (emissions, _) = relay.forward(dg, &mut rng, *t);
        wire.extend(emissions.into_iter().map(|e| (e.emit_at_ms + 1, e.bytes)));
    }
    wire.sort_by_key(|(at, _)| *at);

    let policy = ValidationPolicy::default();
    let mut ledger = SequenceLedger::new();
    // Oracle state: recomputed from raw header bytes, no decoder involved.
    let mut seen = HashSet::new();
    let mut highest = 0u64;
    let (mut dup, mut dup_ok, mut stale, mut stale_ok, mut agree) = (0, 0, 0, 0, 0);
    for (now, dg) in &wire {
        let raw = open(&session, dg).expect("untouched datagrams open");
        let got = validate(raw, &session, &policy, &mut ledger, *now).verdict;
        let seq = be_u64(&raw[11..19]);
        let ts = be_u64(&raw[19..27]);
        let age = *now as i128 - ts as i128;
        let out_of_window = age > policy.freshness_window_ms as i128 || age < -(policy.max_future_skew_ms as i128);
        let duplicate = !seen.insert(seq);
        let expect = if out_of_window {
            Reason::Freshness
        } else if seq <= highest {
            Reason::Sequence
        } else {
            highest = seq;
            Reason::Ok
        };
        agree += (got.reason == expect && (got.outcome == Outcome::Accept) == (expect == Reason::Ok)) as usize;
        if out_of_window {
            stale += 1;
            stale_ok += (got.outcome == Outcome::Drop && got.reason == Reason::Freshness) as usize;
        } else if duplicate {
            dup += 1;
            dup_ok += (got.outcome == Outcome::Drop && got.reason == Reason::Sequence) as usize;
        }
    }
    verdict(
        &[
            (trace.len() == 200, format!("{} captured records, {} delivered datagrams", trace.len(), wire.len())),
            (dup > 0 && dup_ok == dup, format!("{dup_ok}/{dup} in-window duplicates DROP/SEQUENCE")),
            (stale > 0 && stale_ok == stale, format!("{stale_ok}/{stale} out-of-window DROP/FRESHNESS")),
            (agree == wire.len(), format!("{agree}/{} verdicts match the brute-force oracle", wire.len())),
        ],
        start.elapsed(),
        Duration::from_secs(5),
    )
}

// ---------------------------------------------------------------------------
// 7. Perturbation hardening contrast
// ---------------------------------------------------------------------------

fn perturbation(tmp: &Path) -> CriterionResult {
    let start = Instant::now();
    let base = run_suite(&spec("thermo_perturbation_baseline"), &tmp.join("c7_base"), None).aggregate;
    let hard = run_suite(&spec("thermo_perturbation_hardened"), &tmp.join("c7_hard"), None).aggregate;
    let rate = base.misclassification_rate.unwrap_or(f64::NAN);
    verdict(
        &[
            (
                base.perturbed_frames >= 500 && (0.75..=0.85).contains(&rate),
                format!("baseline misclassification {rate:.3} over {} frames", base.perturbed_frames),
            ),
            (base.wrong_class_tracks >= 1, format!("{} wrong-class confirmed tracks", base.wrong_class_tracks)),
            (hard.implausible_tracks == 0, format!("hardened: {} implausible tracks", hard.implausible_tracks)),
            (hard.unsafe_engagements == 0, format!("hardened: {} unsafe engagements", hard.unsafe_engagements)),
        ],
        start.elapsed(),
        Duration::from_secs(20),
    )
}

// ---------------------------------------------------------------------------
// 8. Property suites (compact, seeded)
// ---------------------------------------------------------------------------

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let env = Envelope {
        session_id: rng.random(),
        source_unit: UnitId::new(rng.random_range(1..=u16::MAX)).unwrap(),
        origin_unit: UnitId::new(rng.random_range(1..=u16::MAX)).unwrap(),
        seq: rng.random_range(1..=u64::MAX),
        timestamp_ms: rng.random(),
    };
    match rng.random_range(0..4) {
        0 => Message::Heartbeat(Heartbeat {
            env,
            acked_seq: rng.random(),
            flags: rng.random(),
        }),
        1 => Message::Command(CommandRecord {
            env,
            kind: CommandKind::ALL[rng.random_range(0..6)],
        }),
        2 => Message::Hello(Hello { env, nonce: rng.random() }),
        _ => Message::Telemetry(TelemetryRecord {
            session_id: env.session_id,
            source_unit: env.source_unit,
            origin_unit: env.origin_unit,
            seq: env.seq,
            timestamp_ms: env.timestamp_ms,
            body: TelemetryBody {
                pose_x_mm: rng.random(),
                pose_y_mm: rng.random(),
                heading_mdeg: rng.random_range(HEADING_MIN_MDEG..HEADING_MAX_MDEG),
                state: AutonomyState::ALL[rng.random_range(0..5)],
                health_bitmap: rng.random_range(0..0x40),
                tracks: (0..rng.random_range(0..=MAX_TRACKS))
                    .map(|_| TrackSummary {
                        track_id: rng.random(),
                        pos_x_mm: rng.random(),
                        pos_y_mm: rng.random(),
                        confidence_milli: rng.random_range(0..=1000),
                        modality_mask: rng.random_range(1..0x10),
                        provenance_mode: ProvenanceMode::Live,
                        sensed_to_fused_delta_ms: rng.random(),
                    })
                    .collect(),
            },
        }),
    }
}

fn check_order_cases() -> bool {
    let unit = UnitId::new(2).unwrap();
    let s = Session {
        session_id: 5,
        local: UnitId::new(1).unwrap(),
        peer: unit,
        key: [0; KEY_LEN],
        established_ms: 0,
    };
    let rec = |sid: u32, seq: u64, ts: u64| {
        encode_record(&Message::Telemetry(TelemetryRecord {
            session_id: sid,
            source_unit: unit,
            origin_unit: unit,
            seq,
            timestamp_ms: ts,
            body: TelemetryBody::default(),
        }))
        .unwrap()
    };
    let now = 50_000;
    let policy = ValidationPolicy::default();
    let mut ledger = SequenceLedger::new();
    validate(&rec(5, 100, now), &s, &policy, &mut ledger, now);
    let mut length_fresh_prov = rec(6, 1, 0);
    length_fresh_prov.push(0);
    let mut schema_fresh = rec(5, 1, 0);
    schema_fresh[0] = 0;
    let cases = [
        (length_fresh_prov, Reason::Length),
        (schema_fresh, Reason::Schema),
        (rec(6, 1, 0), Reason::Freshness),
        (rec(6, 1, now), Reason::Provenance),
        (rec(5, 1, now), Reason::Sequence),
    ];
    cases
        .iter()
        .all(|(raw, want)| validate(raw, &s, &policy, &mut ledger, now).verdict.reason == *want)
}

fn reachability_safe() -> bool {
    use AutonomyState::*;
    let mut ok = true;
    for state in AutonomyState::ALL {
        for bits in 0u16..(1 << 13) {
            let c = Conditions {
                lost: (bits & 0x3f) as u8,
                engageable_track: bits & 1 << 6 != 0,
                any_track: bits & 1 << 7 != 0,
                track_starved: bits & 1 << 8 != 0,
                in_geofence: bits & 1 << 9 != 0,
                provenance_alarm: bits & 1 << 10 != 0,
                degraded_dwell_exceeded: bits & 1 << 11 != 0,
                health_restored: bits & 1 << 12 != 0,
            };
            for cmd in std::iter::once(None).chain(CommandKind::ALL.map(Some)) {
                match decide(state, &c, cmd).next {
                    Some((PrepareToFire, _)) => {
                        ok &= state == Ready
                            && cmd == Some(CommandKind::Prepare)
                            && c.lost == 0
                            && c.engageable_track
                            && c.in_geofence
                            && !c.provenance_alarm;
                    }
                    Some((_, _)) if state == HoldSafe => {
                        ok &= cmd == Some(CommandKind::Reset) && !c.provenance_alarm;
                    }
                    _ => {}
                }
            }
        }
    }
    ok
}

fn property_suites() -> CriterionResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let round_trips = (0..1000)
        .filter(|_| {
            let m = random_message(&mut rng);
            let b = encode_record(&m).unwrap();
            decode_record(&b).as_ref() == Ok(&m) && encode_record(&m).unwrap() == b
        })
        .count();

    let session = Session {
        session_id: 1,
        local: UnitId::new(1).unwrap(),
        peer: UnitId::new(2).unwrap(),
        key: rng.random(),
        established_ms: 0,
    };
    let rejected = (0..1000)
        .filter(|_| {
            let payload: Vec<u8> = (0..rng.random_range(1..300)).map(|_| rng.random()).collect();
            let mut dg = seal(&session, &payload);
            let bit = rng.random_range(0..dg.len() * 8);
            dg[bit / 8] ^= 1 << (bit % 8);
            open(&session, &dg).is_err()
        })
        .count();

    let identical = ["thermal_loss", "teammate_provenance", "replay_relay"].iter().all(|n| {
        let s = spec(n);
        let seed = s.seed.unwrap_or_default();
        to_jsonl(&run_trial(&s, seed, 0).log) == to_jsonl(&run_trial(&s, seed, 0).log)
    });

    verdict(
        &[
            (round_trips == 1000, format!("{round_trips}/1000 round trips")),
            (rejected == 1000, format!("{rejected}/1000 bit flips rejected")),
            (reachability_safe(), "exhaustive safety reachability".to_string()),
            (identical, "byte-identical repeated SIM logs".to_string()),
            (check_order_cases(), "check-order invariant".to_string()),
        ],
        start.elapsed(),
        Duration::from_secs(30),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let tmp = tempfile::tempdir().expect("temp dir");
    let live_dir = tmp.path().to_path_buf();
    let live = thread::spawn(move || latency_envelope(live_dir));

    let mut results: Vec<(u32, &str, CriterionResult)> = vec![
        (1, "teammate provenance", teammate_provenance(tmp.path())),
        (2, "re-origination negative control", reoriginate_control(tmp.path())),
        (3, "subsystem-loss containment", subsystem_loss(tmp.path())),
    ];
    results.push((5, "track starvation", track_starvation(tmp.path())));
    results.push((6, "replay/staleness rejection", replay_trace()));
    results.push((7, "perturbation hardening contrast", perturbation(tmp.path())));
    results.push((8, "property suites", property_suites()));
    results.push((4, "latency envelope (LIVE)", live.join().expect("live thread")));
    results.sort_by_key(|r| r.0);

    println!();
    for (n, name, o) in &results {
        println!(
            "criterion {n} {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
