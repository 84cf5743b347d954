//! Multi-process mode: every host runs in its own process on loopback
//! sockets against the wall clock.
//!
//! The parent allocates ports, writes them to a JSON port map and starts
//! one process per host with a shared epoch a little in the future. Each
//! process waits for the epoch, runs the same host code as the simulator
//! and writes its own JSONL log, which the parent merges by timestamp.
//! Telemetry endpoints are UDP; the command path is length-prefixed TCP.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{self, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{read_jsonl, write_jsonl, EventLogEntry, LogError};
use crate::hosts::gateway::GatewayHost;
use crate::hosts::relay::RelayHost;
use crate::hosts::unit::UnitHost;
use crate::hosts::{Addr, Ctx, Host, Timer};
use crate::scenario::{ScenarioError, ScenarioSpec};
use crate::sim::{HostCrash, TrialRun};
use crate::topology::{self, gateway_rng, relay_rng, unit_rng, Topology};

/// Head start given to child processes before the shared epoch.
pub const STARTUP_MARGIN_MS: u64 = 1000;
/// Extra wall time allowed after the scenario ends before children are killed.
pub const SHUTDOWN_GRACE_MS: u64 = 15_000;
const MAX_FRAME: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Spec(#[from] ScenarioError),
    #[error("bad port map: {0}")]
    Ports(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Gateway,
    Unit(u16),
    Relay(u16),
}

impl Role {
    pub fn name(&self) -> String {
        match self {
            Self::Gateway => "gateway".into(),
            Self::Unit(u) => format!("unit-{u}"),
            Self::Relay(u) => format!("relay-{u}"),
        }
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Port map
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PortMap {
    pub entries: Vec<(Addr, SocketAddr)>,
}

impl PortMap {
    pub fn get(&self, addr: Addr) -> Option<SocketAddr> {
        match addr {
            Addr::Net(sa) => Some(sa),
            _ => self.entries.iter().find(|(a, _)| *a == addr).map(|(_, s)| *s),
        }
    }

    pub fn reverse(&self, sa: SocketAddr) -> Addr {
        self.entries
            .iter()
            .find(|(_, s)| *s == sa)
            .map(|(a, _)| *a)
            .unwrap_or(Addr::Net(sa))
    }

    pub fn load(path: &Path) -> Result<Self, LiveError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LiveError::Ports(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("port map serializes"))
    }
}

fn is_stream_listener(a: Addr) -> bool {
    matches!(a, Addr::GatewayCmd)
}

fn bound_addrs(topo: &Topology) -> Vec<Addr> {
    let mut v = vec![Addr::Gateway, Addr::GatewayCmd];
    v.extend(topo.units.iter().map(|u| u.local));
    for r in &topo.relays {
        v.push(r.listen);
        v.push(r.own);
    }
    v
}

/// Picks free loopback ports for `count` independent copies of `topo`.
/// All probe sockets stay open until every port is chosen, so the copies
/// never collide with each other.
pub fn allocate_ports(topo: &Topology, count: usize) -> io::Result<Vec<PortMap>> {
    let mut hold_udp = Vec::new();
    let mut hold_tcp = Vec::new();
    let mut maps = Vec::new();
    for _ in 0..count {
        let mut m = PortMap::default();
        for a in bound_addrs(topo) {
            let sa = if is_stream_listener(a) {
                let l = TcpListener::bind("127.0.0.1:0")?;
                let sa = l.local_addr()?;
                hold_tcp.push(l);
                sa
            } else {
                let s = UdpSocket::bind("127.0.0.1:0")?;
                let sa = s.local_addr()?;
                hold_udp.push(s);
                sa
            };
            m.entries.push((a, sa));
        }
        maps.push(m);
    }
    Ok(maps)
}

// ---------------------------------------------------------------------------
// Host process
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct HostArgs {
    pub scenario: PathBuf,
    pub role: Role,
    pub seed: u64,
    pub trial: u32,
    pub ports: PathBuf,
    pub epoch_ms: u64,
    pub log: PathBuf,
}

pub fn build_host(spec: &ScenarioSpec, role: Role, seed: u64, trial: u32) -> Result<Box<dyn Host>, LiveError> {
    let topo = topology::build(spec, 0);
    Ok(match role {
        Role::Gateway => Box::new(GatewayHost::new(topo.gateway, gateway_rng(seed, trial))),
        Role::Unit(u) => {
            let cfg = topo
                .units
                .into_iter()
                .find(|c| c.spec.id.get() == u)
                .ok_or_else(|| LiveError::Config(format!("no unit {u} in scenario")))?;
            Box::new(UnitHost::new(cfg, unit_rng(seed, trial, u)))
        }
        Role::Relay(l) => {
            let cfg = topo
                .relays
                .into_iter()
                .find(|c| c.link.get() == l)
                .ok_or_else(|| LiveError::Config(format!("no relayed link {l} in scenario")))?;
            Box::new(RelayHost::new(cfg, relay_rng(seed, trial, l)))
        }
    })
}

struct Conn {
    id: u64,
    local: Addr,
    peer: Addr,
    stream: TcpStream,
    buf: Vec<u8>,
    closed: bool,
}

/// Socket and timer state for one host. Implements [`Ctx`] directly.
struct Runtime {
    ports: PortMap,
    udp: Vec<(Addr, UdpSocket)>,
    listeners: Vec<(Addr, TcpListener)>,
    conns: Vec<Conn>,
    next_conn: u64,
    timers: BinaryHeap<Reverse<(u64, u64, Timer)>>,
    timer_seq: u64,
    log: Vec<EventLogEntry>,
    start: Instant,
    start_offset_ms: i64,
    last_now: u64,
}

impl Runtime {
    fn bind(endpoints: &[Addr], ports: PortMap, epoch_ms: u64) -> Result<Self, LiveError> {
        let mut udp = Vec::new();
        let mut listeners = Vec::new();
        for &a in endpoints {
            let Some(sa) = ports.get(a) else { continue };
            if is_stream_listener(a) {
                let l = TcpListener::bind(sa)?;
                l.set_nonblocking(true)?;
                listeners.push((a, l));
            } else {
                let s = UdpSocket::bind(sa)?;
                s.set_nonblocking(true)?;
                udp.push((a, s));
            }
        }
        Ok(Self {
            ports,
            udp,
            listeners,
            conns: Vec::new(),
            next_conn: 1,
            timers: BinaryHeap::new(),
            timer_seq: 0,
            log: Vec::new(),
            start: Instant::now(),
            start_offset_ms: unix_ms() as i64 - epoch_ms as i64,
            last_now: 0,
        })
    }

    /// Signed milliseconds since the epoch on a monotonic base.
    fn elapsed(&self) -> i64 {
        self.start_offset_ms + self.start.elapsed().as_millis() as i64
    }

    fn tick_clock(&mut self) -> u64 {
        self.last_now = self.last_now.max(self.elapsed().max(0) as u64);
        self.last_now
    }

    fn write_frame(stream: &mut TcpStream, bytes: &[u8]) -> io::Result<()> {
        let mut frame = (bytes.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(bytes);
        let mut off = 0;
        while off < frame.len() {
            match stream.write(&frame[off..]) {
                Ok(0) => return Err(ErrorKind::WriteZero.into()),
                Ok(n) => off += n,
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_micros(200)),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Drains every socket, then hands the inbound traffic to `host`.
    fn poll(&mut self, host: &mut dyn Host) -> bool {
        let mut datagrams = Vec::new();
        let mut frames = Vec::new();
        let mut buf = vec![0u8; 65536];
        for (local, sock) in &self.udp {
            loop {
                match sock.recv_from(&mut buf) {
                    Ok((n, sa)) => datagrams.push((*local, self.ports.reverse(sa), buf[..n].to_vec())),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(_) => break,
                }
            }
        }
        for (local, l) in &self.listeners {
            while let Ok((stream, _)) = l.accept() {
                if stream.set_nonblocking(true).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let id = self.next_conn;
                self.next_conn += 1;
                self.conns.push(Conn {
                    id,
                    local: *local,
                    peer: Addr::Conn(id),
                    stream,
                    buf: Vec::new(),
                    closed: false,
                });
            }
        }
        for c in &mut self.conns {
            loop {
                match c.stream.read(&mut buf) {
                    Ok(0) => {
                        c.closed = true;
                        break;
                    }
                    Ok(n) => c.buf.extend_from_slice(&buf[..n]),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(_) => {
                        c.closed = true;
                        break;
                    }
                }
            }
            while c.buf.len() >= 4 {
                let len = u32::from_be_bytes([c.buf[0], c.buf[1], c.buf[2], c.buf[3]]) as usize;
                if len > MAX_FRAME {
                    c.closed = true;
                    break;
                }
                if c.buf.len() < 4 + len {
                    break;
                }
                frames.push((c.local, c.peer, c.buf[4..4 + len].to_vec()));
                c.buf.drain(..4 + len);
            }
        }
        self.conns.retain(|c| !c.closed);

        let busy = !datagrams.is_empty() || !frames.is_empty();
        for (local, from, bytes) in datagrams {
            host.on_datagram(local, from, &bytes, self);
        }
        for (local, from, bytes) in frames {
            host.on_stream(local, from, &bytes, self);
        }
        busy
    }

    fn run(&mut self, host: &mut dyn Host, duration_ms: u64) {
        while self.elapsed() < 0 {
            let wait = (-self.elapsed()).clamp(1, 50) as u64;
            thread::sleep(Duration::from_millis(wait));
        }
        self.tick_clock();
        host.start(self);
        loop {
            let now = self.tick_clock();
            if now >= duration_ms {
                break;
            }
            let mut busy = false;
            while let Some(Reverse((at, _, timer))) = self.timers.peek().copied() {
                if at > now {
                    break;
                }
                self.timers.pop();
                host.on_timer(timer, self);
                busy = true;
            }
            busy |= self.poll(host);
            if !busy {
                thread::sleep(Duration::from_micros(250));
            }
        }
    }
}

impl Ctx for Runtime {
    fn now(&self) -> u64 {
        self.last_now
    }

    fn send(&mut self, from: Addr, to: Addr, bytes: Vec<u8>) {
        let Some(dest) = self.ports.get(to) else { return };
        let sock = self
            .udp
            .iter()
            .find(|(a, _)| *a == from)
            .or_else(|| self.udp.first())
            .map(|(_, s)| s);
        if let Some(s) = sock {
            // Datagram semantics: failures are indistinguishable from loss.
            let _ = s.send_to(&bytes, dest);
        }
    }

    fn send_stream(&mut self, from: Addr, to: Addr, bytes: Vec<u8>) {
        let idx = match to {
            Addr::Conn(id) => self.conns.iter().position(|c| c.id == id),
            _ => self.conns.iter().position(|c| c.peer == to),
        };
        let idx = match idx {
            Some(i) => i,
            None => {
                let Some(sa) = self.ports.get(to) else { return };
                let Ok(stream) = TcpStream::connect_timeout(&sa, Duration::from_millis(200)) else {
                    return;
                };
                if stream.set_nonblocking(true).is_err() {
                    return;
                }
                let _ = stream.set_nodelay(true);
                let id = self.next_conn;
                self.next_conn += 1;
                self.conns.push(Conn {
                    id,
                    local: from,
                    peer: to,
                    stream,
                    buf: Vec::new(),
                    closed: false,
                });
                self.conns.len() - 1
            }
        };
        if Self::write_frame(&mut self.conns[idx].stream, &bytes).is_err() {
            self.conns[idx].closed = true;
        }
    }

    fn schedule(&mut self, at_ms: u64, timer: Timer) {
        self.timer_seq += 1;
        self.timers.push(Reverse((at_ms, self.timer_seq, timer)));
    }

    fn log(&mut self, entry: EventLogEntry) {
        self.log.push(entry);
    }
}

/// Entry point of a host process.
pub fn run_host(args: &HostArgs) -> Result<(), LiveError> {
    let spec: ScenarioSpec = fs::read_to_string(&args.scenario)?.parse()?;
    let mut host = build_host(&spec, args.role, args.seed, args.trial)?;
    let ports = PortMap::load(&args.ports)?;
    let mut rt = Runtime::bind(&host.endpoints(), ports, args.epoch_ms)?;
    rt.run(host.as_mut(), spec.duration_ms);
    let f = fs::File::create(&args.log)?;
    write_jsonl(io::BufWriter::new(f), &rt.log)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Parent side
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LiveBinaries {
    pub gateway: PathBuf,
    pub autonomy: PathBuf,
    pub relay: PathBuf,
}

impl LiveBinaries {
    /// Host binaries installed next to `dir` (typically the running executable's directory).
    pub fn in_dir(dir: &Path) -> Self {
        let exe = |n: &str| dir.join(format!("{n}{}", std::env::consts::EXE_SUFFIX));
        Self {
            gateway: exe("twin-gateway"),
            autonomy: exe("twin-autonomy"),
            relay: exe("twin-relay"),
        }
    }

    pub fn missing(&self) -> Vec<&Path> {
        [&self.gateway, &self.autonomy, &self.relay]
            .into_iter()
            .filter(|p| !p.exists())
            .map(|p| p.as_path())
            .collect()
    }
}

struct Spawned {
    role: Role,
    child: Child,
    log: PathBuf,
}

fn roles(topo: &Topology) -> Vec<Role> {
    let mut v = vec![Role::Gateway];
    v.extend(topo.units.iter().map(|u| Role::Unit(u.spec.id.get())));
    v.extend(topo.relays.iter().map(|r| Role::Relay(r.link.get())));
    v
}

fn spawn_trial(
    spec: &ScenarioSpec,
    scenario_path: &Path,
    bins: &LiveBinaries,
    work: &Path,
    ports: &PortMap,
    trial: u32,
    epoch_ms: u64,
) -> Result<Vec<Spawned>, LiveError> {
    fs::create_dir_all(work)?;
    let ports_path = work.join("ports.json");
    ports.save(&ports_path)?;
    let topo = topology::build(spec, 0);
    let seed = spec.seed.unwrap_or_default();
    let mut out = Vec::new();
    for role in roles(&topo) {
        let (bin, extra): (&Path, Vec<String>) = match role {
            Role::Gateway => (&bins.gateway, vec![]),
            Role::Unit(u) => (&bins.autonomy, vec!["--unit".into(), u.to_string()]),
            Role::Relay(l) => (&bins.relay, vec!["--link".into(), l.to_string()]),
        };
        let log = work.join(format!("{}.jsonl", role.name()));
        let stderr = fs::File::create(work.join(format!("{}.stderr", role.name())))?;
        let child = Command::new(bin)
            .arg("--scenario")
            .arg(scenario_path)
            .args(["--seed", &seed.to_string(), "--trial", &trial.to_string()])
            .arg("--ports")
            .arg(&ports_path)
            .args(["--epoch-ms", &epoch_ms.to_string()])
            .arg("--log")
            .arg(&log)
            .args(extra)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()?;
        out.push(Spawned { role, child, log });
    }
    Ok(out)
}

fn collect_trial(mut procs: Vec<Spawned>, deadline: Instant) -> Result<TrialRun, LiveError> {
    let mut crash = None;
    let mut log = Vec::new();
    for (i, p) in procs.iter_mut().enumerate() {
        let status = loop {
            match p.child.try_wait()? {
                Some(s) => break Some(s),
                None if Instant::now() >= deadline => {
                    let _ = p.child.kill();
                    let _ = p.child.wait();
                    break None;
                }
                None => thread::sleep(Duration::from_millis(20)),
            }
        };
        let ok = status.is_some_and(|s| s.success());
        if ok {
            let f = fs::File::open(&p.log)?;
            log.extend(read_jsonl(BufReader::new(f))?);
        } else if crash.is_none() {
            crash = Some(HostCrash {
                host: i,
                t_ms: 0,
                message: match status {
                    Some(s) => format!("{} exited with {s}", p.role.name()),
                    None => format!("{} did not finish in time", p.role.name()),
                },
            });
        }
    }
    // Stable: equal timestamps keep gateway, unit, relay order.
    log.sort_by_key(|e| e.t_ms);
    if let Some(c) = crash.as_mut() {
        c.t_ms = log.last().map(|e| e.t_ms).unwrap_or(0);
    }
    Ok(TrialRun { log, crash })
}

/// Runs all trials of `spec` concurrently, one process per host.
/// Per-trial scratch files land under `out/live/trial_NNN/`.
pub fn run_live_trials(
    spec: &ScenarioSpec,
    scenario_path: &Path,
    bins: &LiveBinaries,
    out: &Path,
) -> Result<Vec<TrialRun>, LiveError> {
    if let Some(p) = bins.missing().first() {
        return Err(LiveError::Config(format!("host binary not found: {}", p.display())));
    }
    let topo = topology::build(spec, 0);
    let maps = allocate_ports(&topo, spec.trials as usize)?;
    let epoch = unix_ms() + STARTUP_MARGIN_MS;
    let mut running = Vec::new();
    for (trial, ports) in maps.iter().enumerate() {
        let work = out.join("live").join(format!("trial_{trial:03}"));
        running.push(spawn_trial(spec, scenario_path, bins, &work, ports, trial as u32, epoch)?);
    }
    let deadline = Instant::now() + Duration::from_millis(STARTUP_MARGIN_MS + spec.duration_ms + SHUTDOWN_GRACE_MS);
    running.into_iter().map(|procs| collect_trial(procs, deadline)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::EventKind;

    struct Echo {
        me: Addr,
        peer: Addr,
        send_at: Option<u64>,
    }

    impl Host for Echo {
        fn endpoints(&self) -> Vec<Addr> {
            vec![self.me]
        }
        fn start(&mut self, ctx: &mut dyn Ctx) {
            if let Some(t) = self.send_at {
                ctx.schedule(t, Timer::Tick);
            }
        }
        fn on_timer(&mut self, _: Timer, ctx: &mut dyn Ctx) {
            ctx.send(self.me, self.peer, b"ping".to_vec());
            ctx.send_stream(self.me, Addr::GatewayCmd, b"hello".to_vec());
        }
        fn on_datagram(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
            let e = EventLogEntry::new(ctx.now(), format!("{local}"), EventKind::RecordAccepted)
                .with("from", format!("{from}"))
                .with("len", bytes.len() as u64);
            ctx.log(e);
        }
    }

    #[test]
    fn loopback_datagrams_and_streams_arrive() {
        let topo_ports = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            let u1 = UdpSocket::bind("127.0.0.1:0").unwrap();
            let u2 = UdpSocket::bind("127.0.0.1:0").unwrap();
            PortMap {
                entries: vec![
                    (Addr::Unit(1), u1.local_addr().unwrap()),
                    (Addr::Unit(2), u2.local_addr().unwrap()),
                    (Addr::GatewayCmd, l.local_addr().unwrap()),
                ],
            }
        };
        let epoch = unix_ms() + 100;
        let mut rx = Runtime::bind(&[Addr::Unit(2), Addr::GatewayCmd], topo_ports.clone(), epoch).unwrap();
        let mut tx = Runtime::bind(&[Addr::Unit(1)], topo_ports, epoch).unwrap();
        let h = thread::spawn(move || {
            let mut host = Echo {
                me: Addr::Unit(1),
                peer: Addr::Unit(2),
                send_at: Some(50),
            };
            tx.run(&mut host, 150);
        });
        let mut host = Echo {
            me: Addr::Unit(2),
            peer: Addr::Unit(1),
            send_at: None,
        };
        rx.run(&mut host, 400);
        h.join().unwrap();
        let froms: Vec<_> = rx.log.iter().map(|e| e.attr_str("from").unwrap().to_string()).collect();
        assert!(froms.contains(&"unit-1".to_string()), "{froms:?}");
        assert!(froms.iter().any(|f| f.starts_with("conn-")), "{froms:?}");
        assert!(rx.log.iter().all(|e| e.t_ms >= 50));
    }
}
