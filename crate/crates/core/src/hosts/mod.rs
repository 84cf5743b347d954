//! Host activities shared by the simulator and the multi-process mode.
//!
//! A host never touches sockets or clocks directly. It reacts to timers and
//! inbound bytes through a [`Ctx`], which the virtual-time simulator and the
//! live socket loop both implement.

use std::fmt;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::eventlog::EventLogEntry;
use crate::perception::Modality;

pub mod gateway;
pub mod relay;
pub mod unit;

/// Logical endpoint. Simulated topologies use the symbolic variants; the
/// live mode maps remote peers to `Net` and accepted streams to `Conn`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Addr {
    Gateway,
    GatewayCmd,
    Unit(u16),
    UnitCmd(u16),
    Teammate(u16),
    Tap(u16),
    Relay(u16),
    RelayOwn(u16),
    Net(SocketAddr),
    Conn(u64),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gateway => write!(f, "gateway"),
            Self::GatewayCmd => write!(f, "gateway-cmd"),
            Self::Unit(u) => write!(f, "unit-{u}"),
            Self::UnitCmd(u) => write!(f, "unit-{u}-cmd"),
            Self::Teammate(u) => write!(f, "unit-{u}-teammate"),
            Self::Tap(u) => write!(f, "unit-{u}-tap"),
            Self::Relay(u) => write!(f, "relay-{u}"),
            Self::RelayOwn(u) => write!(f, "relay-{u}-own"),
            Self::Net(a) => write!(f, "{a}"),
            Self::Conn(n) => write!(f, "conn-{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    Gateway,
    Teammate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    Tick,
    Frame(Modality),
    NavFrame,
    Telemetry,
    HandshakeRetry(Link),
    Timeline(usize),
    CommandCheck { unit: u16, command_id: u64 },
    DisplaySnapshot,
    RelayEmit(u64),
    Reoriginate(usize),
}

/// Services a host may use while handling one event.
pub trait Ctx {
    fn now(&self) -> u64;
    /// Unreliable datagram from the host's local endpoint `from`.
    fn send(&mut self, from: Addr, to: Addr, bytes: Vec<u8>);
    /// Reliable, ordered message on the command stream.
    fn send_stream(&mut self, from: Addr, to: Addr, bytes: Vec<u8>);
    fn schedule(&mut self, at_ms: u64, timer: Timer);
    fn log(&mut self, entry: EventLogEntry);
}

pub trait Host {
    /// Local endpoints this host receives on.
    fn endpoints(&self) -> Vec<Addr>;
    fn start(&mut self, ctx: &mut dyn Ctx);
    fn on_timer(&mut self, timer: Timer, ctx: &mut dyn Ctx);
    fn on_datagram(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx);
    fn on_stream(&mut self, local: Addr, from: Addr, bytes: &[u8], ctx: &mut dyn Ctx) {
        self.on_datagram(local, from, bytes, ctx);
    }
}
