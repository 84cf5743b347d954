//! Multi-process runs against the simulator for the same scenario.

use std::path::PathBuf;

use twin_core::bundled;
use twin_core::harness::{run_scenario, RunOptions};
use twin_core::live::LiveBinaries;
use twin_core::scenario::{Mode, ScenarioSpec};

const JITTER_MS: i64 = 150;

fn bins() -> LiveBinaries {
    LiveBinaries {
        gateway: PathBuf::from(env!("CARGO_BIN_EXE_twin-gateway")),
        autonomy: PathBuf::from(env!("CARGO_BIN_EXE_twin-autonomy")),
        relay: PathBuf::from(env!("CARGO_BIN_EXE_twin-relay")),
    }
}

fn compare(name: &str) {
    let spec: ScenarioSpec = bundled::get(name).unwrap().parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sim = run_scenario(&spec, &RunOptions::default(), &dir.path().join("sim"), None).unwrap();
    let live_opts = RunOptions {
        mode: Some(Mode::Live),
        ..RunOptions::default()
    };
    let live = run_scenario(&spec, &live_opts, &dir.path().join("live"), Some(&bins())).unwrap();
    assert_eq!(live.aggregate.crashed, 0, "{name}");
    for (s, l) in sim.trials.iter().zip(&live.trials) {
        assert_eq!(s.verdicts, l.verdicts, "{name} trial {}", s.trial);
        assert_eq!(s.latencies.len(), l.latencies.len());
        for (a, b) in s.latencies.iter().zip(&l.latencies) {
            let (a, b) = (a.latency_ms.unwrap() as i64, b.latency_ms.unwrap() as i64);
            assert!((a - b).abs() <= JITTER_MS, "{name} trial {}: sim {a} ms, live {b} ms", s.trial);
        }
    }
    assert_eq!(sim.passed, live.passed, "{name}");
}

#[test]
fn subsystem_loss_agrees() {
    std::thread::scope(|s| {
        s.spawn(|| compare("thermal_loss"));
        s.spawn(|| compare("rgb_loss"));
    });
}

#[test]
fn relay_tactics_agree() {
    std::thread::scope(|s| {
        s.spawn(|| compare("replay_relay"));
        s.spawn(|| compare("delay_relay"));
        s.spawn(|| compare("reoriginate_control"));
    });
}
