//! Synthetic multi-modal sensing and confidence-gated fusion.
//!
//! A seeded parametric detector stands in for learned models: each visible
//! scene object yields one detection per modality frame with Gaussian
//! position noise and a class/modality dependent base confidence. Fusion
//! greedily clusters detections and only confirms clusters that agree
//! across modalities and clear the confidence gate.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{ProvenanceMode, Subsystem, TrackSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectClass {
    Vehicle,
    Person,
    Clutter,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [Self::Vehicle, Self::Person, Self::Clutter];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vehicle => "VEHICLE",
            Self::Person => "PERSON",
            Self::Clutter => "CLUTTER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }

    /// Class an attacker pushes this object towards when no target is given.
    pub fn default_decoy_target(self) -> ObjectClass {
        match self {
            Self::Vehicle => Self::Clutter,
            Self::Person | Self::Clutter => Self::Vehicle,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    Rgb,
    Depth,
    Lidar,
    Thermal,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Self::Rgb, Self::Depth, Self::Lidar, Self::Thermal];

    pub fn subsystem(self) -> Subsystem {
        match self {
            Self::Rgb => Subsystem::Rgb,
            Self::Depth => Subsystem::Depth,
            Self::Lidar => Subsystem::Lidar,
            Self::Thermal => Subsystem::Thermal,
        }
    }

    /// Bit in `TrackSummary::modality_mask`; shares the health-bitmap layout.
    pub fn bit(self) -> u8 {
        self.subsystem().bit()
    }

    pub fn default_period_ms(self) -> u64 {
        match self {
            Self::Rgb => 200,
            Self::Depth | Self::Lidar | Self::Thermal => 100,
        }
    }

    /// Whether this modality produces a class guess (depth and lidar only
    /// contribute geometry).
    pub fn classifies(self) -> bool {
        matches!(self, Self::Rgb | Self::Thermal)
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: u32,
    pub class: ObjectClass,
    pub pos_x_mm: i32,
    pub pos_y_mm: i32,
    /// Unitless in [0, 1].
    pub thermal_intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub modality: Modality,
    pub pos_x_mm: i32,
    pub pos_y_mm: i32,
    pub confidence: f64,
    pub class_guess: Option<ObjectClass>,
    /// Measured intensity for thermal detections.
    pub thermal_intensity: Option<f64>,
    pub sensed_ms: u64,
    /// Ground-truth object behind this detection. Known to the simulation
    /// host only; fusion never reads it except to annotate logs.
    pub object_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityBand {
    pub min: f64,
    pub max: f64,
}

impl IntensityBand {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub confidence_gate: f64,
    pub spatial_epsilon_mm: f64,
    pub min_modalities: usize,
    pub weights: [f64; 4],
    pub thermal_plausibility: BTreeMap<ObjectClass, IntensityBand>,
    pub hardened: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let mut bands = BTreeMap::new();
        bands.insert(ObjectClass::Vehicle, IntensityBand { min: 0.55, max: 0.95 });
        bands.insert(ObjectClass::Person, IntensityBand { min: 0.30, max: 0.60 });
        bands.insert(ObjectClass::Clutter, IntensityBand { min: 0.00, max: 0.35 });
        Self {
            confidence_gate: 0.65,
            spatial_epsilon_mm: 500.0,
            min_modalities: 2,
            weights: [1.0; 4],
            thermal_plausibility: bands,
            hardened: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("invalid fusion config: {0}")]
pub struct ConfigError(pub String);

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.confidence_gate > 0.0 && self.confidence_gate <= 1.0) {
            return Err(ConfigError("confidence_gate must be in (0, 1]".into()));
        }
        if self.min_modalities < 1 {
            return Err(ConfigError("min_modalities must be >= 1".into()));
        }
        if !self.weights.iter().all(|w| *w > 0.0) {
            return Err(ConfigError("modality weights must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, m: Modality) -> f64 {
        self.weights[m.index()]
    }

    /// Whether a thermal member's measured intensity fits the band of the
    /// class it claims. Non-thermal detections are always plausible.
    pub fn thermal_plausible(&self, d: &Detection) -> bool {
        match (d.modality, d.class_guess, d.thermal_intensity) {
            (Modality::Thermal, Some(class), Some(v)) => self
                .thermal_plausibility
                .get(&class)
                .is_none_or(|band| band.contains(v)),
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProfileKind {
    Baseline,
    Hardened,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorProfile {
    pub profile: ProfileKind,
    pub perturbation_fool_rate: f64,
}

impl DetectorProfile {
    pub fn baseline() -> Self {
        Self {
            profile: ProfileKind::Baseline,
            perturbation_fool_rate: 0.8,
        }
    }

    pub fn hardened() -> Self {
        Self {
            profile: ProfileKind::Hardened,
            perturbation_fool_rate: 0.05,
        }
    }
}

// ---------------------------------------------------------------------------
// Faults
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    ThermalLoss,
    RgbDetectorLoss,
    TrackStarvation,
    ThermoPerturbation,
}

impl FaultKind {
    pub const ALL: [FaultKind; 4] = [
        Self::ThermalLoss,
        Self::RgbDetectorLoss,
        Self::TrackStarvation,
        Self::ThermoPerturbation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ThermalLoss => "thermal_loss",
            Self::RgbDetectorLoss => "rgb_detector_loss",
            Self::TrackStarvation => "track_starvation",
            Self::ThermoPerturbation => "thermo_perturbation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown fault kind `{0}`")]
pub struct UnknownFaultKind(pub String);

impl std::str::FromStr for FaultKind {
    type Err = UnknownFaultKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "thermal_loss" => Ok(Self::ThermalLoss),
            "rgb_detector_loss" | "rgb_loss" => Ok(Self::RgbDetectorLoss),
            "track_starvation" => Ok(Self::TrackStarvation),
            "thermo_perturbation" => Ok(Self::ThermoPerturbation),
            _ => Err(UnknownFaultKind(s.to_string())),
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Active perception faults for one unit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultState {
    pub thermal_lost: bool,
    pub rgb_lost: bool,
    pub starved: bool,
    /// Thermovisual perturbation; `Some(None)` lets each object's default
    /// decoy target apply.
    pub perturbation: Option<Option<ObjectClass>>,
}

impl FaultState {
    pub fn silenced(&self, m: Modality) -> bool {
        match m {
            Modality::Thermal => self.thermal_lost,
            Modality::Rgb => self.rgb_lost,
            Modality::Depth | Modality::Lidar => false,
        }
    }

    /// Applies a fault. Faults stay active for the rest of the trial.
    pub fn inject(&mut self, kind: FaultKind, target: Option<ObjectClass>) {
        match kind {
            FaultKind::ThermalLoss => self.thermal_lost = true,
            FaultKind::RgbDetectorLoss => self.rgb_lost = true,
            FaultKind::TrackStarvation => self.starved = true,
            FaultKind::ThermoPerturbation => self.perturbation = Some(target),
        }
    }
}

// ---------------------------------------------------------------------------
// Sensing
// ---------------------------------------------------------------------------

pub const POSITION_SIGMA_MM: f64 = 150.0;
pub const CONFIDENCE_SIGMA: f64 = 0.03;
pub const INTENSITY_SIGMA: f64 = 0.02;
/// Confidence a successful thermovisual perturbation induces.
pub const FOOLED_CONFIDENCE: f64 = 0.92;

pub fn base_confidence(class: ObjectClass, modality: Modality) -> f64 {
    use Modality::*;
    use ObjectClass::*;
    match (class, modality) {
        (Vehicle, Rgb) => 0.85,
        (Vehicle, Depth) => 0.80,
        (Vehicle, Lidar) => 0.85,
        (Vehicle, Thermal) => 0.80,
        (Person, Rgb) => 0.80,
        (Person, Depth) => 0.75,
        (Person, Lidar) => 0.75,
        (Person, Thermal) => 0.75,
        (Clutter, Rgb) => 0.55,
        (Clutter, Depth) => 0.75,
        (Clutter, Lidar) => 0.80,
        (Clutter, Thermal) => 0.60,
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
}

/// One modality frame over the scene. A silenced modality or a starved
/// scene yields nothing.
pub fn sense<R: Rng + ?Sized>(
    scene: &[SceneObject],
    modality: Modality,
    rng: &mut R,
    faults: &FaultState,
    profile: &DetectorProfile,
    now: u64,
) -> Vec<Detection> {
    if faults.silenced(modality) || faults.starved {
        return Vec::new();
    }
    scene
        .iter()
        .map(|obj| {
            let dx = gaussian(rng, POSITION_SIGMA_MM);
            let dy = gaussian(rng, POSITION_SIGMA_MM);
            let mut confidence = base_confidence(obj.class, modality) + gaussian(rng, CONFIDENCE_SIGMA);
            let mut class_guess = modality.classifies().then_some(obj.class);
            let mut thermal_intensity = None;
            if modality == Modality::Thermal {
                thermal_intensity =
                    Some((obj.thermal_intensity + gaussian(rng, INTENSITY_SIGMA)).clamp(0.0, 1.0));
                if let Some(target) = faults.perturbation {
                    let target = target.unwrap_or(obj.class.default_decoy_target());
                    let roll: f64 = rng.random();
                    if target != obj.class && roll < profile.perturbation_fool_rate {
                        class_guess = Some(target);
                        confidence = FOOLED_CONFIDENCE + gaussian(rng, CONFIDENCE_SIGMA);
                    }
                }
            }
            Detection {
                modality,
                pos_x_mm: obj.pos_x_mm.saturating_add(dx.round() as i32),
                pos_y_mm: obj.pos_y_mm.saturating_add(dy.round() as i32),
                confidence: confidence.clamp(0.0, 1.0),
                class_guess,
                thermal_intensity,
                sensed_ms: now,
                object_id: obj.object_id,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

/// A cluster that passed (or failed) confirmation.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedTrack {
    pub pos_x_mm: i32,
    pub pos_y_mm: i32,
    pub confidence: f64,
    pub modality_mask: u8,
    pub modality_count: usize,
    pub class: Option<ObjectClass>,
    pub max_sensed_ms: u64,
    pub sensed_to_fused_delta_ms: u64,
    /// Thermal members retained although their intensity is implausible
    /// for the claimed class. Always 0 in hardened mode.
    pub implausible_thermal: usize,
    /// Thermal members discarded by the plausibility check.
    pub discarded_thermal: usize,
    /// Majority ground-truth object among members (log annotation only).
    pub truth_object: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusionOutput {
    pub confirmed: Vec<FusedTrack>,
    pub candidates: Vec<FusedTrack>,
}

fn weighted_mean(members: &[&Detection], config: &FusionConfig) -> f64 {
    let (num, den) = members.iter().fold((0.0, 0.0), |(n, d), m| {
        let w = config.weight(m.modality);
        (n + w * m.confidence, d + w)
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn summarize(all: &[&Detection], kept: &[&Detection], config: &FusionConfig, now: u64) -> (FusedTrack, bool) {
    let kept_mask = kept.iter().fold(0u8, |m, d| m | d.modality.bit());
    let modality_count = kept_mask.count_ones() as usize;
    let conf_all = weighted_mean(all, config);
    let conf_kept = weighted_mean(kept, config);
    let confirmed = modality_count >= config.min_modalities
        && conf_all >= config.confidence_gate
        && conf_kept >= config.confidence_gate;

    let basis = if kept.is_empty() { all } else { kept };
    let wsum: f64 = basis.iter().map(|d| config.weight(d.modality)).sum();
    let px = basis
        .iter()
        .map(|d| config.weight(d.modality) * d.pos_x_mm as f64)
        .sum::<f64>()
        / wsum;
    let py = basis
        .iter()
        .map(|d| config.weight(d.modality) * d.pos_y_mm as f64)
        .sum::<f64>()
        / wsum;

    let mut votes: BTreeMap<ObjectClass, f64> = BTreeMap::new();
    for d in kept {
        if let Some(c) = d.class_guess {
            *votes.entry(c).or_default() += config.weight(d.modality) * d.confidence;
        }
    }
    let class = votes
        .into_iter()
        .fold(None::<(ObjectClass, f64)>, |best, (c, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((c, v)),
        })
        .map(|(c, _)| c);

    let mut truth: BTreeMap<u32, usize> = BTreeMap::new();
    for d in all {
        *truth.entry(d.object_id).or_default() += 1;
    }
    let truth_object = truth
        .into_iter()
        .fold(None::<(u32, usize)>, |best, (id, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((id, n)),
        })
        .map(|(id, _)| id);

    let max_sensed_ms = basis.iter().map(|d| d.sensed_ms).max().unwrap_or(now);
    let implausible_thermal = kept.iter().filter(|d| !config.thermal_plausible(d)).count();
    (
        FusedTrack {
            pos_x_mm: px.round() as i32,
            pos_y_mm: py.round() as i32,
            confidence: if kept.is_empty() { conf_all } else { conf_kept },
            modality_mask: kept_mask,
            modality_count,
            class,
            max_sensed_ms,
            sensed_to_fused_delta_ms: now.saturating_sub(max_sensed_ms),
            implausible_thermal,
            discarded_thermal: all.len() - kept.len(),
            truth_object,
        },
        confirmed,
    )
}

/// Greedy nearest-seed clustering followed by the confirmation gate.
///
/// In hardened mode implausible thermal members are discarded before the
/// modality count, and both the full and the reduced cluster must clear
/// the confidence gate, so hardening can only remove confirmations.
pub fn fuse(detections: &[Detection], config: &FusionConfig, now: u64) -> FusionOutput {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.modality.cmp(&b.modality))
            .then(a.pos_x_mm.cmp(&b.pos_x_mm))
            .then(a.pos_y_mm.cmp(&b.pos_y_mm))
            .then(a.sensed_ms.cmp(&b.sensed_ms))
    });

    let eps2 = config.spatial_epsilon_mm * config.spatial_epsilon_mm;
    let mut clusters: Vec<Vec<&Detection>> = Vec::new();
    for d in order {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let dx = (c[0].pos_x_mm - d.pos_x_mm) as f64;
                let dy = (c[0].pos_y_mm - d.pos_y_mm) as f64;
                (i, dx * dx + dy * dy)
            })
            .filter(|(_, d2)| *d2 <= eps2)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, _)) => clusters[i].push(d),
            None => clusters.push(vec![d]),
        }
    }

    let mut out = FusionOutput::default();
    for members in clusters {
        let kept: Vec<&Detection> = if config.hardened {
            members
                .iter()
                .copied()
                .filter(|d| config.thermal_plausible(d))
                .collect()
        } else {
            members.clone()
        };
        let (track, confirmed) = summarize(&members, &kept, config, now);
        if confirmed {
            out.confirmed.push(track);
        } else {
            out.candidates.push(track);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Track table
// ---------------------------------------------------------------------------

pub const TRACK_TIMEOUT_MS: u64 = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub track_id: u32,
    pub fused: FusedTrack,
    pub provenance_mode: ProvenanceMode,
    pub first_confirmed_ms: u64,
    pub last_update_ms: u64,
}

impl Track {
    pub fn summary(&self) -> TrackSummary {
        TrackSummary {
            track_id: self.track_id,
            pos_x_mm: self.fused.pos_x_mm,
            pos_y_mm: self.fused.pos_y_mm,
            confidence_milli: (self.fused.confidence * 1000.0).round().clamp(0.0, 1000.0) as u16,
            modality_mask: self.fused.modality_mask,
            provenance_mode: self.provenance_mode,
            sensed_to_fused_delta_ms: self.fused.sensed_to_fused_delta_ms.min(u32::MAX as u64) as u32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackUpdate {
    pub created: Vec<u32>,
    /// Existing tracks whose class or plausibility status changed.
    pub changed: Vec<u32>,
    pub dropped: Vec<u32>,
}

/// Assigns stable ids to confirmed clusters across fusion ticks.
#[derive(Clone, Debug)]
pub struct TrackTable {
    tracks: Vec<Track>,
    next_id: u32,
    epsilon_mm: f64,
    timeout_ms: u64,
}

impl TrackTable {
    pub fn new(epsilon_mm: f64, timeout_ms: u64) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 1,
            epsilon_mm,
            timeout_ms,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, id: u32) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    pub fn update(&mut self, confirmed: Vec<FusedTrack>, now: u64) -> TrackUpdate {
        let mut upd = TrackUpdate::default();
        let mut matched = vec![false; self.tracks.len()];
        let mut fresh = confirmed;
        fresh.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let eps2 = self.epsilon_mm * self.epsilon_mm;
        for f in fresh {
            let nearest = self
                .tracks
                .iter()
                .enumerate()
                .filter(|(i, _)| !matched[*i])
                .map(|(i, t)| {
                    let dx = (t.fused.pos_x_mm - f.pos_x_mm) as f64;
                    let dy = (t.fused.pos_y_mm - f.pos_y_mm) as f64;
                    (i, dx * dx + dy * dy)
                })
                .filter(|(_, d2)| *d2 <= eps2)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match nearest {
                Some((i, _)) => {
                    matched[i] = true;
                    let t = &mut self.tracks[i];
                    let mut f = f;
                    // A frame set without a classifying modality keeps the last label.
                    if f.class.is_none() {
                        f.class = t.fused.class;
                    }
                    let was_implausible = t.fused.implausible_thermal > 0;
                    if t.fused.class != f.class || was_implausible != (f.implausible_thermal > 0) {
                        upd.changed.push(t.track_id);
                    }
                    t.fused = f;
                    t.last_update_ms = now;
                }
                None if self.tracks.iter().any(|t| {
                    let dx = (t.fused.pos_x_mm - f.pos_x_mm) as f64;
                    let dy = (t.fused.pos_y_mm - f.pos_y_mm) as f64;
                    dx * dx + dy * dy <= 4.0 * eps2
                }) =>
                {
                    // Split cluster of an object that already has a track.
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    upd.created.push(id);
                    self.tracks.push(Track {
                        track_id: id,
                        fused: f,
                        provenance_mode: ProvenanceMode::Live,
                        first_confirmed_ms: now,
                        last_update_ms: now,
                    });
                    matched.push(true);
                }
            }
        }
        let timeout = self.timeout_ms;
        self.tracks.retain(|t| {
            let alive = now.saturating_sub(t.last_update_ms) <= timeout;
            if !alive {
                upd.dropped.push(t.track_id);
            }
            alive
        });
        upd
    }
}

/// Gate soundness for one confirmed track.
pub fn gate_sound(track: &FusedTrack, config: &FusionConfig) -> bool {
    track.confidence >= config.confidence_gate && track.modality_count >= config.min_modalities
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(m: Modality, x: i32, conf: f64) -> Detection {
        Detection {
            modality: m,
            pos_x_mm: x,
            pos_y_mm: 0,
            confidence: conf,
            class_guess: m.classifies().then_some(ObjectClass::Vehicle),
            thermal_intensity: (m == Modality::Thermal).then_some(0.75),
            sensed_ms: 900,
            object_id: 1,
        }
    }

    fn vehicle() -> SceneObject {
        SceneObject {
            object_id: 1,
            class: ObjectClass::Vehicle,
            pos_x_mm: 20_000,
            pos_y_mm: 5_000,
            thermal_intensity: 0.75,
        }
    }

    #[test]
    fn empty_scene_senses_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = sense(&[], Modality::Rgb, &mut rng, &FaultState::default(), &DetectorProfile::baseline(), 0);
        assert!(out.is_empty());
    }

    #[test]
    fn thermal_fault_silences_only_thermal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut faults = FaultState::default();
        faults.inject(FaultKind::ThermalLoss, None);
        let scene = [vehicle()];
        let p = DetectorProfile::baseline();
        assert!(sense(&scene, Modality::Thermal, &mut rng, &faults, &p, 0).is_empty());
        for m in [Modality::Rgb, Modality::Depth, Modality::Lidar] {
            assert_eq!(sense(&scene, m, &mut rng, &faults, &p, 0).len(), 1);
        }
    }

    #[test]
    fn starvation_empties_every_modality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut faults = FaultState::default();
        faults.inject(FaultKind::TrackStarvation, None);
        for m in Modality::ALL {
            assert!(sense(&[vehicle()], m, &mut rng, &faults, &DetectorProfile::baseline(), 0).is_empty());
        }
    }

    #[test]
    fn two_modalities_confirm_with_mean_confidence() {
        let out = fuse(
            &[det(Modality::Rgb, 0, 0.8), det(Modality::Lidar, 300, 0.7)],
            &FusionConfig::default(),
            1000,
        );
        assert_eq!(out.confirmed.len(), 1);
        let t = &out.confirmed[0];
        assert!((t.confidence - 0.75).abs() < 1e-12);
        assert_eq!(t.modality_count, 2);
        assert_eq!(t.sensed_to_fused_delta_ms, 100);
    }

    #[test]
    fn single_modality_is_only_a_candidate() {
        let out = fuse(&[det(Modality::Rgb, 0, 0.9)], &FusionConfig::default(), 1000);
        assert!(out.confirmed.is_empty());
        assert_eq!(out.candidates.len(), 1);
    }

    #[test]
    fn distant_detections_do_not_cluster() {
        let out = fuse(
            &[det(Modality::Rgb, 0, 0.8), det(Modality::Lidar, 900, 0.8)],
            &FusionConfig::default(),
            1000,
        );
        assert!(out.confirmed.is_empty());
        assert_eq!(out.candidates.len(), 2);
    }

    #[test]
    fn hardened_discards_implausible_thermal_member() {
        let mut thermal = det(Modality::Thermal, 50, 0.9);
        thermal.thermal_intensity = Some(0.20);
        // Thermal plus RGB: without the thermal member only one modality is left.
        let pair = [det(Modality::Rgb, 0, 0.8), thermal.clone()];
        let hardened = FusionConfig {
            hardened: true,
            ..FusionConfig::default()
        };
        assert_eq!(fuse(&pair, &FusionConfig::default(), 1000).confirmed.len(), 1);
        assert_eq!(fuse(&pair, &FusionConfig::default(), 1000).confirmed[0].implausible_thermal, 1);
        assert!(fuse(&pair, &hardened, 1000).confirmed.is_empty());
        // With lidar as well the remaining two modalities still confirm.
        let triple = [det(Modality::Rgb, 0, 0.8), det(Modality::Lidar, 20, 0.8), thermal];
        let out = fuse(&triple, &hardened, 1000);
        assert_eq!(out.confirmed.len(), 1);
        assert_eq!(out.confirmed[0].implausible_thermal, 0);
        assert_eq!(out.confirmed[0].discarded_thermal, 1);
        assert_eq!(out.confirmed[0].modality_mask & Modality::Thermal.bit(), 0);
    }

    #[test]
    fn class_vote_is_confidence_weighted() {
        let mut rgb = det(Modality::Rgb, 0, 0.55);
        rgb.class_guess = Some(ObjectClass::Clutter);
        let thermal = det(Modality::Thermal, 10, 0.92);
        let out = fuse(&[rgb, thermal, det(Modality::Lidar, 5, 0.8)], &FusionConfig::default(), 1000);
        assert_eq!(out.confirmed[0].class, Some(ObjectClass::Vehicle));
    }

    #[test]
    fn perturbed_vehicle_flips_at_configured_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut faults = FaultState::default();
        faults.inject(FaultKind::ThermoPerturbation, None);
        let p = DetectorProfile::baseline();
        let frames = 500;
        let flipped = (0..frames)
            .filter(|i| {
                let d = sense(&[vehicle()], Modality::Thermal, &mut rng, &faults, &p, *i * 100);
                d[0].class_guess != Some(ObjectClass::Vehicle)
            })
            .count();
        let rate = flipped as f64 / frames as f64;
        assert!((rate - 0.8).abs() <= 0.05, "rate {rate}");
    }

    #[test]
    fn track_table_keeps_ids_and_times_out() {
        let mut table = TrackTable::new(500.0, TRACK_TIMEOUT_MS);
        let cfg = FusionConfig::default();
        let pair = [det(Modality::Rgb, 0, 0.8), det(Modality::Lidar, 30, 0.8)];
        let u = table.update(fuse(&pair, &cfg, 1000).confirmed, 1000);
        assert_eq!(u.created, vec![1]);
        let u = table.update(fuse(&pair, &cfg, 1100).confirmed, 1100);
        assert!(u.created.is_empty());
        assert_eq!(table.tracks()[0].track_id, 1);
        let u = table.update(Vec::new(), 1100 + TRACK_TIMEOUT_MS);
        assert!(u.dropped.is_empty());
        let u = table.update(Vec::new(), 1101 + TRACK_TIMEOUT_MS);
        assert_eq!(u.dropped, vec![1]);
        assert!(table.tracks().is_empty());
    }

    #[test]
    fn unknown_fault_kind_rejected() {
        assert!("sensor_melt".parse::<FaultKind>().is_err());
        assert_eq!("rgb_loss".parse::<FaultKind>().unwrap(), FaultKind::RgbDetectorLoss);
    }
}
