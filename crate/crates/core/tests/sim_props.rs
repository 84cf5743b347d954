//! Whole-trial properties over the bundled scenarios.

use twin_core::bundled;
use twin_core::eventlog::to_jsonl;
use twin_core::metrics::trial_metrics;
use twin_core::scenario::ScenarioSpec;
use twin_core::sim::run_trial;

fn spec(name: &str) -> ScenarioSpec {
    bundled::get(name).unwrap().parse().unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    for name in bundled::names() {
        let s = spec(name);
        let seed = s.seed.unwrap();
        let a = run_trial(&s, seed, 1);
        let b = run_trial(&s, seed, 1);
        assert!(a.crash.is_none() && b.crash.is_none(), "{name}");
        assert_eq!(to_jsonl(&a.log), to_jsonl(&b.log), "{name}");
    }
}

#[test]
fn seeds_and_trials_change_the_log() {
    let s = spec("replay_relay");
    let base = to_jsonl(&run_trial(&s, 200, 0).log);
    assert_ne!(base, to_jsonl(&run_trial(&s, 200, 1).log));
    assert_ne!(base, to_jsonl(&run_trial(&s, 201, 0).log));
}

/// Clock monotonicity, HOLD_SAFE latching, one transition per step and the
/// command lifecycle order, audited from every bundled trial log.
#[test]
fn logs_satisfy_audit_invariants() {
    for name in bundled::names() {
        let s = spec(name);
        for trial in 0..s.trials {
            let run = run_trial(&s, s.seed.unwrap(), trial);
            let m = trial_metrics(trial, &run.log);
            assert!(m.invariant_violations.is_empty(), "{name}/{trial}: {:?}", m.invariant_violations);
        }
    }
}
