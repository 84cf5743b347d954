//! Human-readable and machine-readable suite summaries.

use std::fmt::Write;

use serde::Serialize;

use crate::metrics::{Aggregate, GateResult, SuiteMetrics};

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn opt_ms(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into())
}

pub fn text(m: &SuiteMetrics) -> String {
    let a = &m.aggregate;
    let mut s = String::new();
    let seed = m.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
    let _ = writeln!(
        s,
        "scenario: {} (seed {seed}, {} trials, {} crashed)",
        m.scenario, a.trials, a.crashed
    );

    if !a.latency.is_empty() {
        let _ = writeln!(s, "\n{:<22}{:>8}{:>10}{:>10}{:>14}", "fault", "trials", "mean_ms", "p95_ms", "containment");
        for l in &a.latency {
            let _ = writeln!(
                s,
                "{:<22}{:>8}{:>10}{:>10}{:>14}",
                l.fault,
                format!("{}/{}", l.measured, l.injected),
                opt_ms(l.mean_ms),
                l.p95_ms.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                format!("{}/{}", a.contained, a.trials)
            );
        }
    }
    let _ = writeln!(
        s,
        "\ncontainment: {}/{} {}",
        a.contained,
        a.trials,
        verdict(a.trials > 0 && a.contained == a.trials)
    );

    rejections(&mut s, a);

    if a.flags > 0 || !a.hold_safe_latencies_ms.is_empty() {
        let lat = &a.hold_safe_latencies_ms;
        let hold = if lat.is_empty() {
            "no HOLD_SAFE entry".to_string()
        } else {
            format!(
                "HOLD_SAFE latency mean {:.1} ms, max {} ms over {} entries",
                lat.iter().sum::<u64>() as f64 / lat.len() as f64,
                lat.iter().max().copied().unwrap_or(0),
                lat.len()
            )
        };
        let _ = writeln!(s, "provenance: {} FLAG verdicts, {hold}", a.flags);
    }
    let _ = writeln!(s, "stale display: {} events", a.stale_display_events);
    if let Some(r) = a.misclassification_rate {
        let _ = writeln!(
            s,
            "perturbation: {}/{} thermal frames fooled ({r:.3}), {} wrong-class tracks, {} implausible tracks, {} unsafe engagements",
            a.fooled_frames, a.perturbed_frames, a.wrong_class_tracks, a.implausible_tracks, a.unsafe_engagements
        );
    }
    if a.invariant_violations > 0 {
        let _ = writeln!(s, "invariant violations: {}", a.invariant_violations);
    }
    for t in m.trials.iter().filter(|t| t.crash.is_some()) {
        let _ = writeln!(s, "trial {}: HOST_CRASH {}", t.trial, t.crash.as_deref().unwrap_or(""));
    }

    if !m.gates.is_empty() {
        let _ = writeln!(s, "\ngates:");
        for g in &m.gates {
            let _ = writeln!(s, "  {} {} ({})", verdict(g.pass), g.gate, g.detail);
        }
    }
    let _ = writeln!(s, "\nresult: {}", verdict(m.passed));
    s
}

fn rejections(s: &mut String, a: &Aggregate) {
    let _ = writeln!(s, "verdicts:");
    if a.verdicts.is_empty() {
        let _ = writeln!(s, "  (none)");
    }
    for (k, v) in &a.verdicts {
        let _ = writeln!(s, "  {k:<20}{v:>8}");
    }
}

#[derive(Serialize)]
struct Machine<'a> {
    scenario: &'a str,
    seed: Option<u64>,
    passed: bool,
    aggregate: &'a Aggregate,
    gates: &'a [GateResult],
}

/// One JSON object without per-trial detail.
pub fn machine(m: &SuiteMetrics) -> String {
    serde_json::to_string(&Machine {
        scenario: &m.scenario,
        seed: m.seed,
        passed: m.passed,
        aggregate: &m.aggregate,
        gates: &m.gates,
    })
    .expect("summary serializes")
}
