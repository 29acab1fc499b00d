use proptest::prelude::*;

use vtc_core::tokenstream::{load_trace, write_trace, AttentionBlock, TextTokens, Trace, TraceError, VisualTokenGrid};

fn trace_strategy() -> impl Strategy<Value = Trace> {
    (1usize..5, 1usize..6, 1usize..7, 0usize..4, 0usize..3).prop_flat_map(|(f, n, d, q, blocks)| {
        (
            proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), f * n * d),
            proptest::collection::vec(-1e6f32..1e6, q * d),
            proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, f * n), blocks),
        )
            .prop_map(move |(visual, text, attn)| Trace {
                grid: VisualTokenGrid::new(f, n, d, visual).unwrap(),
                text: TextTokens::new(d, text).unwrap(),
                layers: 4,
                heads: 2,
                attention: attn
                    .into_iter()
                    .enumerate()
                    .map(|(i, scores)| AttentionBlock {
                        step: i as u32,
                        layer: 1,
                        scores,
                    })
                    .collect(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn round_trip_is_bit_exact(trace in trace_strategy()) {
        let bytes = trace.to_bytes();
        let back = Trace::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let bits = |t: &Trace| t.grid.data().iter().chain(t.text.data()).map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&trace));
    }
}

#[test]
fn file_round_trip_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dyck");
    let trace = Trace {
        grid: VisualTokenGrid::new(2, 3, 4, (0..24).map(|i| i as f32).collect()).unwrap(),
        text: TextTokens::new(4, vec![0.5; 4]).unwrap(),
        layers: 2,
        heads: 2,
        attention: vec![],
    };
    write_trace(&path, &trace).unwrap();
    assert_eq!(load_trace(&path).unwrap(), trace);
    assert!(matches!(load_trace(dir.path().join("nope")), Err(TraceError::Io(_))));
}
