use gvqa_core::tag::{parse_object_tags, scan_object_tags, Camera, ObjectTag, TagError};
use proptest::prelude::*;

/// Valid tags with coordinates on the one-decimal grid the text form uses.
fn arb_tag() -> impl Strategy<Value = ObjectTag> {
    (
        1u32..10_000,
        prop::sample::select(Camera::ALL.to_vec()),
        0u32..=16_000,
        0u32..=9_000,
    )
        .prop_map(|(id, cam, x, y)| {
            ObjectTag::new(format!("c{id}"), cam, f64::from(x) / 10.0, f64::from(y) / 10.0).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_parse_round_trip(t in arb_tag()) {
        let text = t.serialize();
        let back: ObjectTag = text.parse().unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.serialize(), text);
    }

    #[test]
    fn tags_found_in_running_text(tags in prop::collection::vec(arb_tag(), 0..5)) {
        let text = tags.iter().map(|t| format!("see {t} here")).collect::<Vec<_>>().join(", ");
        prop_assert_eq!(parse_object_tags(&text), tags);
    }

    #[test]
    fn out_of_bounds_is_rejected(x in 1600.1f64..5000.0, y in 0.0f64..900.0) {
        let text = format!("<c1,CAM_FRONT,{x:.1},{y:.1}>");
        let scan = scan_object_tags(&text);
        prop_assert!(scan.tags.is_empty());
        prop_assert!(matches!(scan.rejected[0].error, TagError::OutOfBounds { .. }), "{:?}", scan.rejected);
    }
}
