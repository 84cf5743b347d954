//! Deterministic virtual-time simulator.
//!
//! All hosts share one event queue ordered by (time, class, insertion).
//! Deliveries sort ahead of timers at the same instant, so a datagram that
//! lands on a tick boundary is visible to that tick. The fabric is lossless
//! and ordered; relays are the only source of loss and delay.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::eventlog::EventLogEntry;
use crate::hosts::gateway::GatewayHost;
use crate::hosts::relay::RelayHost;
use crate::hosts::unit::UnitHost;
use crate::hosts::{Addr, Ctx, Host, Timer};
use crate::scenario::ScenarioSpec;
use crate::topology::{self, gateway_rng, relay_rng, unit_rng};

pub const LINK_LATENCY_MS: u64 = 1;

enum Event {
    Deliver { from: Addr, to: Addr, bytes: Vec<u8>, stream: bool },
    Fire { host: usize, timer: Timer },
}

struct Scheduled {
    at: u64,
    class: u8,
    seq: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (u64, u8, u64) {
        (self.at, self.class, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at: u64, event: Event) {
        let class = match event {
            Event::Deliver { .. } => 0,
            Event::Fire { .. } => 1,
        };
        self.seq += 1;
        self.heap.push(Scheduled { at, class, seq: self.seq, event });
    }
}

struct SimCtx<'a> {
    now: u64,
    host: usize,
    queue: &'a mut Queue,
    log: &'a mut Vec<EventLogEntry>,
}

impl Ctx for SimCtx<'_> {
    fn now(&self) -> u64 {
        self.now
    }
    fn send(&mut self, from: Addr, to: Addr, bytes: Vec<u8>) {
        let at = self.now + LINK_LATENCY_MS;
        self.queue.push(at, Event::Deliver { from, to, bytes, stream: false });
    }
    fn send_stream(&mut self, from: Addr, to: Addr, bytes: Vec<u8>) {
        let at = self.now + LINK_LATENCY_MS;
        self.queue.push(at, Event::Deliver { from, to, bytes, stream: true });
    }
    fn schedule(&mut self, at_ms: u64, timer: Timer) {
        // Timers never fire in the past.
        let at = at_ms.max(self.now);
        self.queue.push(at, Event::Fire { host: self.host, timer });
    }
    fn log(&mut self, entry: EventLogEntry) {
        self.log.push(entry);
    }
}

/// A host panic, captured so the suite can carry on with other trials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostCrash {
    pub host: usize,
    pub t_ms: u64,
    pub message: String,
}

pub struct Simulation {
    hosts: Vec<Box<dyn Host>>,
    routes: BTreeMap<Addr, usize>,
    queue: Queue,
    log: Vec<EventLogEntry>,
    now: u64,
    started: bool,
}

impl Simulation {
    pub fn new(hosts: Vec<Box<dyn Host>>) -> Self {
        let mut routes = BTreeMap::new();
        for (i, h) in hosts.iter().enumerate() {
            for a in h.endpoints() {
                routes.insert(a, i);
            }
        }
        Self {
            hosts,
            routes,
            queue: Queue::default(),
            log: Vec::new(),
            now: 0,
            started: false,
        }
    }

    /// Hosts for one trial of `spec`, seeded from `seed + trial`.
    pub fn from_spec(spec: &ScenarioSpec, seed: u64, trial: u32) -> Self {
        let topo = topology::build(spec, 0);
        let mut hosts: Vec<Box<dyn Host>> = Vec::new();
        hosts.push(Box::new(GatewayHost::new(topo.gateway, gateway_rng(seed, trial))));
        for u in topo.units {
            let id = u.spec.id.get();
            hosts.push(Box::new(UnitHost::new(u, unit_rng(seed, trial, id))));
        }
        for r in topo.relays {
            let link = r.link.get();
            hosts.push(Box::new(RelayHost::new(r, relay_rng(seed, trial, link))));
        }
        Self::new(hosts)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn log(&self) -> &[EventLogEntry] {
        &self.log
    }

    pub fn into_log(self) -> Vec<EventLogEntry> {
        self.log
    }

    fn guarded<F>(&mut self, host: usize, f: F) -> Result<(), HostCrash>
    where
        F: FnOnce(&mut dyn Host, &mut dyn Ctx),
    {
        let now = self.now;
        let Self { hosts, queue, log, .. } = self;
        let h = hosts[host].as_mut();
        let mut ctx = SimCtx { now, host, queue, log };
        catch_unwind(AssertUnwindSafe(|| f(h, &mut ctx))).map_err(|p| HostCrash {
            host,
            t_ms: now,
            message: p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into()),
        })
    }

    /// Processes every event scheduled at or before `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) -> Result<(), HostCrash> {
        if !self.started {
            self.started = true;
            for i in 0..self.hosts.len() {
                self.guarded(i, |h, ctx| h.start(ctx))?;
            }
        }
        while self.queue.heap.peek().is_some_and(|e| e.at <= until_ms) {
            let ev = self.queue.heap.pop().expect("peeked");
            debug_assert!(ev.at >= self.now);
            self.now = ev.at;
            match ev.event {
                Event::Fire { host, timer } => self.guarded(host, |h, ctx| h.on_timer(timer, ctx))?,
                Event::Deliver { from, to, bytes, stream } => {
                    // Datagrams to unbound addresses vanish, like on a real network.
                    let Some(&host) = self.routes.get(&to) else { continue };
                    self.guarded(host, |h, ctx| {
                        if stream {
                            h.on_stream(to, from, &bytes, ctx)
                        } else {
                            h.on_datagram(to, from, &bytes, ctx)
                        }
                    })?;
                }
            }
        }
        self.now = self.now.max(until_ms);
        Ok(())
    }
}

/// Result of one simulated trial.
pub struct TrialRun {
    pub log: Vec<EventLogEntry>,
    pub crash: Option<HostCrash>,
}

pub fn run_trial(spec: &ScenarioSpec, seed: u64, trial: u32) -> TrialRun {
    let mut sim = Simulation::from_spec(spec, seed, trial);
    let crash = sim.run_until(spec.duration_ms).err();
    TrialRun { log: sim.into_log(), crash }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{to_jsonl, EventKind};

    struct Pinger {
        me: Addr,
        peer: Addr,
        panic_at: Option<u64>,
    }

    impl Host for Pinger {
        fn endpoints(&self) -> Vec<Addr> {
            vec![self.me]
        }
        fn start(&mut self, ctx: &mut dyn Ctx) {
            ctx.schedule(10, Timer::Tick);
        }
        fn on_timer(&mut self, _: Timer, ctx: &mut dyn Ctx) {
            if self.panic_at.is_some_and(|t| ctx.now() >= t) {
                panic!("boom");
            }
            ctx.send(self.me, self.peer, vec![1]);
            ctx.schedule(ctx.now() + 10, Timer::Tick);
        }
        fn on_datagram(&mut self, _: Addr, _: Addr, _: &[u8], ctx: &mut dyn Ctx) {
            ctx.log(EventLogEntry::new(ctx.now(), format!("{}", self.me), EventKind::RecordAccepted));
        }
    }

    fn pair(panic_at: Option<u64>) -> Simulation {
        Simulation::new(vec![
            Box::new(Pinger { me: Addr::Unit(1), peer: Addr::Unit(2), panic_at }),
            Box::new(Pinger { me: Addr::Unit(2), peer: Addr::Unit(1), panic_at: None }),
        ])
    }

    #[test]
    fn deliveries_take_one_millisecond() {
        let mut sim = pair(None);
        sim.run_until(30).unwrap();
        let ts: Vec<u64> = sim.log().iter().map(|e| e.t_ms).collect();
        assert_eq!(ts, vec![11, 11, 21, 21]);
        assert_eq!(sim.now(), 30);
    }

    #[test]
    fn panics_become_crashes() {
        let mut sim = pair(Some(20));
        let crash = sim.run_until(100).unwrap_err();
        assert_eq!(crash.host, 0);
        assert_eq!(crash.t_ms, 20);
        assert_eq!(crash.message, "boom");
    }

    #[test]
    fn repeated_runs_match() {
        let a = {
            let mut s = pair(None);
            s.run_until(500).unwrap();
            to_jsonl(s.log())
        };
        let b = {
            let mut s = pair(None);
            s.run_until(500).unwrap();
            to_jsonl(s.log())
        };
        assert_eq!(a, b);
    }
}
