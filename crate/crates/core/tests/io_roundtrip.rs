use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opequiv::io::{
    load_model, parse_json, to_json, ChartDoc, OperatorDoc, ReportDoc, Reproducibility, SymbolDoc,
};
use opequiv::model::{build_model, Grid, ModelConfig, ModelDoc, PolynomialOperator};
use opequiv::sampling::{random_gauge, random_operator, random_regular_operator, random_symbol};

fn chart(n: usize) -> ChartDoc {
    ChartDoc {
        lo: vec![-0.25; n],
        hi: vec![0.5; n],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symbol_documents_round_trip(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, scale in -20i32..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_symbol(&mut rng, m, n).scale(10f64.powi(scale));
        let doc = SymbolDoc::from_symbol(&s, Some("σ".into()));
        let text = to_json(&doc);
        let back: SymbolDoc = parse_json(&text, "symbol").unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_symbol().unwrap(), s);
        prop_assert_eq!(to_json(&back), text);
    }

    #[test]
    fn operator_documents_round_trip(seed in any::<u64>(), m in 1usize..3, n in 1usize..4, order in 0i32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_operator(&mut rng, m, n, order);
        let gauge = random_gauge(&mut rng, n, 2, m);
        let doc = OperatorDoc::from_operator(&op, chart(n), None).with_gauge(&gauge);
        let text = to_json(&doc);
        let back: OperatorDoc = parse_json(&text, "operator").unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_operator().unwrap().max_abs_diff(&op), 0.0);
        prop_assert_eq!(back.gauge_jet().unwrap().unwrap().max_abs_diff(&gauge), 0.0);
    }

    #[test]
    fn report_documents_round_trip(seed in any::<u64>(), x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let doc = ReportDoc {
            schema_version: 1,
            command: "invariants".into(),
            status: "regular".into(),
            diagnostics: vec!["cond1 fails".into()],
            result: serde_json::json!({ "value": x, "values": [x, -x, x / 3.0] }),
            reproducibility: Reproducibility::new(seed, &[("regularity", 1e-9), ("weird", x)]),
        };
        let text = to_json(&doc);
        let back: ReportDoc = parse_json(&text, "report").unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(to_json(&back), text);
    }
}

#[test]
fn model_documents_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let model: ModelDoc = build_model(
            &PolynomialOperator { op },
            &Grid::centered(2, 0.05, 5),
            &ModelConfig::default(),
        )
        .unwrap();
        let path = dir.path().join(format!("model-{seed}.json"));
        std::fs::write(&path, to_json(&model)).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_json(&back), std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn truncated_model_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let op = random_regular_operator(&mut rng, 2, 2, 3);
    let mut model = build_model(
        &PolynomialOperator { op },
        &Grid::centered(2, 0.05, 3),
        &ModelConfig::default(),
    )
    .unwrap();
    model.points.pop();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, to_json(&model)).unwrap();
    let err = load_model(&path).unwrap_err().to_string();
    assert!(err.contains("point count"), "{err}");
}
