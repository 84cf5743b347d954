//! Turns a scenario into host configurations. Shared by the simulator and
//! the multi-process mode, which only differ in how addresses are bound.

use crate::hosts::gateway::GatewayConfig;
use crate::hosts::relay::RelayConfig;
use crate::hosts::unit::UnitConfig;
use crate::hosts::Addr;
use crate::rng::{host_rng, TAG_GATEWAY, TAG_RELAY, TAG_UNIT};
use crate::scenario::{Action, ScenarioSpec};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Topology {
    pub gateway: GatewayConfig,
    pub units: Vec<UnitConfig>,
    pub relays: Vec<RelayConfig>,
}

pub fn unit_rng(seed: u64, trial: u32, unit: u16) -> ChaCha8Rng {
    host_rng(seed, trial, TAG_UNIT + unit as u64)
}

pub fn gateway_rng(seed: u64, trial: u32) -> ChaCha8Rng {
    host_rng(seed, trial, TAG_GATEWAY)
}

pub fn relay_rng(seed: u64, trial: u32, link: u16) -> ChaCha8Rng {
    host_rng(seed, trial, TAG_RELAY | ((link as u64) << 32))
}

/// Symbolic wiring for one scenario. `start_ms` offsets every timeline.
pub fn build(spec: &ScenarioSpec, start_ms: u64) -> Topology {
    let relayed = spec.relay_links();

    let gateway = GatewayConfig {
        policy: spec.policy.clone(),
        units: spec.units.iter().map(|u| (u.id, u.psk)).collect(),
        listen: Addr::Gateway,
        cmd_listen: Addr::GatewayCmd,
        timeline: spec
            .timeline
            .iter()
            .filter(|e| matches!(e.action, Action::Command { .. } | Action::Sever { .. }))
            .cloned()
            .collect(),
        start_ms,
    };

    let units = spec
        .units
        .iter()
        .map(|u| {
            let id = u.id.get();
            let peers: Vec<_> = spec
                .teammates
                .iter()
                .filter(|t| t.to == u.id)
                .filter_map(|t| spec.unit(t.from).map(|s| (s.id, s.psk)))
                .collect();
            let connect = spec.teammates.iter().find(|t| t.from == u.id).map(|t| Addr::Teammate(t.to.get()));
            let tap_to = spec.forwards.iter().find(|f| f.origin == u.id).map(|f| Addr::Tap(f.via.get()));
            let forward = spec.forwards.iter().find(|f| f.via == u.id).cloned();
            UnitConfig {
                spec: u.clone(),
                objects: spec.objects.clone(),
                policy: spec.policy.clone(),
                timeline: spec
                    .timeline
                    .iter()
                    .filter(|e| matches!(e.action, Action::Fault { unit, .. } if unit == u.id))
                    .cloned()
                    .collect(),
                local: Addr::Unit(id),
                local_cmd: Addr::UnitCmd(id),
                gateway: if relayed.contains(&u.id) { Addr::Relay(id) } else { Addr::Gateway },
                gateway_cmd: Addr::GatewayCmd,
                teammate_listen: (!peers.is_empty()).then_some((Addr::Teammate(id), peers)),
                teammate_connect: connect,
                tap_to,
                tap_listen: forward.as_ref().map(|_| Addr::Tap(id)),
                forward,
                start_ms,
            }
        })
        .collect();

    let relays = relayed
        .iter()
        .map(|link| RelayConfig {
            link: *link,
            listen: Addr::Relay(link.get()),
            own: Addr::RelayOwn(link.get()),
            upstream: Addr::Gateway,
            client: Some(Addr::Unit(link.get())),
            tactics: spec.tactics_for(*link),
            timeline: spec
                .timeline
                .iter()
                .filter(|e| matches!(e.action, Action::RelayToggle { link: l, .. } if l == *link))
                .cloned()
                .collect(),
            start_ms,
        })
        .collect();

    Topology { gateway, units, relays }
}
