//! Trial orchestration and suite directories.
//!
//! A suite directory holds the effective scenario, one JSONL log per trial,
//! a `.crash` marker per crashed trial, `metrics.json` and `report.txt`.
//! Everything except the scenario and the logs can be regenerated from them.

use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eventlog::{read_jsonl, write_jsonl, LogError};
use crate::live::{self, LiveBinaries};
use crate::metrics::{summarize, trial_metrics, SuiteMetrics, TrialMetrics};
use crate::report;
use crate::scenario::{Mode, ScenarioError, ScenarioSpec};
use crate::sim::{run_trial, TrialRun};

pub const SCENARIO_FILE: &str = "scenario.twin";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.txt";

/// Exit statuses shared by every command-line entry point.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_GATE_FAILURE: i32 = 1;
pub const EXIT_SPEC_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Spec(#[from] ScenarioError),
    #[error("MALFORMED_LOG {}: {source}", path.display())]
    Log { path: PathBuf, source: LogError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("live mode: {0}")]
    Live(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Spec(_) => EXIT_SPEC_ERROR,
            _ => EXIT_GATE_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    /// Run simulated trials on the rayon pool when the feature is enabled.
    pub sequential: bool,
}

/// Applies command-line overrides and validates the result.
pub fn prepare(spec: &ScenarioSpec, opts: &RunOptions) -> Result<ScenarioSpec, ScenarioError> {
    let mut s = spec.clone();
    if let Some(t) = opts.trials {
        s.trials = t;
    }
    if let Some(seed) = opts.seed {
        s.seed = Some(seed);
    }
    if let Some(m) = opts.mode {
        s.mode = m;
    }
    s.source = effective_source(&s);
    s.validate()?;
    if s.mode == Mode::Live {
        s.validate_live()?;
    }
    Ok(s)
}

/// Source text with the run parameters pinned. Later directives win, so
/// appending is enough.
pub fn effective_source(spec: &ScenarioSpec) -> String {
    let mut text = spec.source.trim_end().to_string();
    text.push_str(&format!("\n# effective run parameters\nmode {}\n", spec.mode));
    if let Some(seed) = spec.seed {
        text.push_str(&format!("seed {seed}\n"));
    }
    text.push_str(&format!("trials {}\n", spec.trials));
    text
}

pub fn trial_file(trial: u32) -> String {
    format!("trial_{trial:03}.jsonl")
}

fn crash_file(trial: u32) -> String {
    format!("trial_{trial:03}.crash")
}

// ---------------------------------------------------------------------------
// Simulated trials
// ---------------------------------------------------------------------------

pub fn run_sim_trials_sequential(spec: &ScenarioSpec) -> Vec<TrialRun> {
    let seed = spec.seed.unwrap_or_default();
    (0..spec.trials).map(|t| run_trial(spec, seed, t)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_sim_trials_parallel(spec: &ScenarioSpec) -> Vec<TrialRun> {
    use rayon::prelude::*;
    let seed = spec.seed.unwrap_or_default();
    (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, seed, t))
        .collect()
}

/// Parallel when the `parallel` feature is on and not disabled by `sequential`.
pub fn run_sim_trials(spec: &ScenarioSpec, sequential: bool) -> Vec<TrialRun> {
    #[cfg(feature = "parallel")]
    if !sequential {
        return run_sim_trials_parallel(spec);
    }
    let _ = sequential;
    run_sim_trials_sequential(spec)
}

// ---------------------------------------------------------------------------
// Suite directories
// ---------------------------------------------------------------------------

/// Runs every trial of `spec` and writes the suite directory `out`.
/// LIVE mode needs the host binaries.
pub fn run_scenario(
    spec: &ScenarioSpec,
    opts: &RunOptions,
    out: &Path,
    live_bins: Option<&LiveBinaries>,
) -> Result<SuiteMetrics, HarnessError> {
    let spec = prepare(spec, opts)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let scenario_path = out.join(SCENARIO_FILE);
    fs::write(&scenario_path, &spec.source).map_err(io_err(&scenario_path))?;

    let runs = match spec.mode {
        Mode::Sim => run_sim_trials(&spec, opts.sequential),
        Mode::Live => {
            let bins = live_bins.ok_or_else(|| HarnessError::Live("host binaries not available".into()))?;
            live::run_live_trials(&spec, &scenario_path, bins, out).map_err(|e| HarnessError::Live(e.to_string()))?
        }
    };

    let mut trials = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let trial = i as u32;
        let path = out.join(trial_file(trial));
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_jsonl(io::BufWriter::new(f), &run.log).map_err(io_err(&path))?;
        let crash_path = out.join(crash_file(trial));
        let mut m = trial_metrics(trial, &run.log);
        if let Some(c) = run.crash {
            let msg = format!("HOST_CRASH host={} t_ms={} {}", c.host, c.t_ms, c.message);
            fs::write(&crash_path, &msg).map_err(io_err(&crash_path))?;
            m.crash = Some(msg);
        } else if crash_path.exists() {
            fs::remove_file(&crash_path).map_err(io_err(&crash_path))?;
        }
        trials.push(m);
    }
    let metrics = summarize(&spec.name, spec.seed, &spec.gates, trials);
    write_summary(out, &metrics)?;
    Ok(metrics)
}

fn write_summary(out: &Path, metrics: &SuiteMetrics) -> Result<(), HarnessError> {
    let mpath = out.join(METRICS_FILE);
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(&mpath, json).map_err(io_err(&mpath))?;
    let rpath = out.join(REPORT_FILE);
    fs::write(&rpath, report::text(metrics)).map_err(io_err(&rpath))?;
    Ok(())
}

/// Recomputes a suite's metrics from its scenario and logs alone.
pub fn load_suite(dir: &Path) -> Result<SuiteMetrics, HarnessError> {
    let spath = dir.join(SCENARIO_FILE);
    let text = fs::read_to_string(&spath).map_err(io_err(&spath))?;
    let spec: ScenarioSpec = text.parse()?;
    let mut trials: Vec<TrialMetrics> = Vec::new();
    for trial in 0.. {
        let path = dir.join(trial_file(trial));
        if !path.exists() {
            break;
        }
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let log = read_jsonl(BufReader::new(f)).map_err(|source| HarnessError::Log {
            path: path.clone(),
            source,
        })?;
        let mut m = trial_metrics(trial, &log);
        let cpath = dir.join(crash_file(trial));
        if cpath.exists() {
            m.crash = Some(fs::read_to_string(&cpath).map_err(io_err(&cpath))?.trim().to_string());
        }
        trials.push(m);
    }
    Ok(summarize(&spec.name, spec.seed, &spec.gates, trials))
}

pub fn exit_code(metrics: &SuiteMetrics) -> i32 {
    if metrics.passed {
        EXIT_PASS
    } else {
        EXIT_GATE_FAILURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = "twin-scenario v1
name mini
mode sim
duration_ms 3000
seed 4
trials 3
unit id=1
object id=1 class=VEHICLE pos=20000,5000 thermal=0.75
at 500 command unit=1 kind=ARM
at 1000 fault unit=1 kind=thermal_loss
expect degraded unit=1 reason=SUBSYSTEM_LOSS(thermal)
expect containment
";

    #[test]
    fn suite_directory_rescores_identically() {
        let spec: ScenarioSpec = SPEC.parse().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = run_scenario(&spec, &RunOptions::default(), dir.path(), None).unwrap();
        assert!(m.passed, "{}", report::text(&m));
        assert_eq!(m.trials.len(), 3);
        let again = load_suite(dir.path()).unwrap();
        assert_eq!(m, again);
        assert!(dir.path().join("trial_002.jsonl").exists());
        assert!(dir.path().join(REPORT_FILE).exists());
    }

    #[test]
    fn overrides_are_archived() {
        let spec: ScenarioSpec = SPEC.parse().unwrap();
        let opts = RunOptions {
            trials: Some(1),
            seed: Some(99),
            ..RunOptions::default()
        };
        let p = prepare(&spec, &opts).unwrap();
        let back: ScenarioSpec = p.source.parse().unwrap();
        assert_eq!(back.seed, Some(99));
        assert_eq!(back.trials, 1);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let spec: ScenarioSpec = SPEC.parse().unwrap();
        let a: Vec<_> = run_sim_trials(&spec, true).into_iter().map(|r| r.log).collect();
        let b: Vec<_> = run_sim_trials(&spec, false).into_iter().map(|r| r.log).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_log_names_line() {
        let spec: ScenarioSpec = SPEC.parse().unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_scenario(&spec, &RunOptions::default(), dir.path(), None).unwrap();
        let p = dir.path().join(trial_file(1));
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{not json\n");
        fs::write(&p, text).unwrap();
        match load_suite(dir.path()) {
            Err(HarnessError::Log {
                source: LogError::Malformed { line, .. },
                ..
            }) => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
