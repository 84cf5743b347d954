use proptest::prelude::*;
use twin_core::perception::*;

fn detection(spread: i32) -> impl Strategy<Value = Detection> {
    (
        prop::sample::select(Modality::ALL.to_vec()),
        -spread..=spread,
        -spread..=spread,
        0.0f64..=1.0,
        prop::option::of(prop::sample::select(ObjectClass::ALL.to_vec())),
        0.0f64..=1.0,
        0u32..4,
    )
        .prop_map(|(modality, x, y, confidence, class_guess, intensity, object_id)| Detection {
            modality,
            pos_x_mm: x,
            pos_y_mm: y,
            confidence,
            class_guess: if modality.classifies() { class_guess } else { None },
            thermal_intensity: (modality == Modality::Thermal).then_some(intensity),
            sensed_ms: 900,
            object_id,
        })
}

fn configs() -> (FusionConfig, FusionConfig) {
    let base = FusionConfig::default();
    let hardened = FusionConfig {
        hardened: true,
        ..base.clone()
    };
    (base, hardened)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// One cluster: a hardened confirmation implies a baseline confirmation.
    #[test]
    fn hardening_only_removes_confirmations(dets in prop::collection::vec(detection(150), 1..8)) {
        let (base, hard) = configs();
        let b = fuse(&dets, &base, 1000);
        let h = fuse(&dets, &hard, 1000);
        prop_assert_eq!(b.confirmed.len() + b.candidates.len(), 1);
        prop_assert!(h.confirmed.len() <= b.confirmed.len());
        for t in &h.confirmed {
            prop_assert_eq!(t.implausible_thermal, 0);
        }
    }

    /// Many clusters: clustering is shared, so only confirmation counts move.
    #[test]
    fn hardening_never_adds_tracks(dets in prop::collection::vec(detection(5000), 1..24)) {
        let (base, hard) = configs();
        let b = fuse(&dets, &base, 1000);
        let h = fuse(&dets, &hard, 1000);
        prop_assert_eq!(b.confirmed.len() + b.candidates.len(), h.confirmed.len() + h.candidates.len());
        prop_assert!(h.confirmed.len() <= b.confirmed.len());
    }
}
