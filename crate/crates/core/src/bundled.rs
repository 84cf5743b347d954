//! Scenario files shipped with the crate, addressable by name.

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        /// `(name, source)` for every bundled scenario.
        pub const SCENARIOS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../scenarios/", $name, ".twin")))),*
        ];
    };
}

bundled!(
    "thermal_loss",
    "rgb_loss",
    "track_starvation",
    "replay_relay",
    "delay_relay",
    "teammate_provenance",
    "reoriginate_control",
    "thermo_perturbation_baseline",
    "thermo_perturbation_hardened",
);

pub fn get(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioSpec;

    #[test]
    fn every_bundled_scenario_validates() {
        for (name, text) in SCENARIOS {
            let spec: ScenarioSpec = text.parse().unwrap_or_else(|e| panic!("{name}: {e}"));
            spec.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(spec.name, *name);
        }
        assert!(get("rgb_loss").is_some());
        assert!(get("nope").is_none());
    }
}
