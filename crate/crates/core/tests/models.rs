use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opequiv::error::Error;
use opequiv::jet::MatJet;
use opequiv::model::{
    basic_words, build_model, candidate_words, compare_models, compare_operators, invariant_fields,
    point_data, GaugedOperator, Grid, ModelConfig, PolynomialOperator,
};
use opequiv::operator::{OperatorJet, SymbolJet};
use opequiv::orbit::Verdict;
use opequiv::par::ExecMode;
use opequiv::sampling::{
    random_chart_gauge, random_matrix, random_regular_operator, random_well_conditioned_symbol,
};
use opequiv::symbol::{analyze, extended_codimension, trace_word};
use opequiv::tensor::{Mat, DEFAULT_TOL};

const K: i32 = 3;

/// Constant symbol, no first-order part, zero-order part `C₀ + x₁E₁ + x₂E₂`.
/// The subsymbol is then `C(x)` itself and every invariant is a trace word in
/// the constant R-family and `C(x)`.
fn engineered(seed: u64) -> (OperatorJet, Vec<Mat>, [Mat; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (2, 2);
    let sigma = random_well_conditioned_symbol(&mut rng, m, n);
    let c: [Mat; 3] = [
        random_matrix(&mut rng, m, m),
        random_matrix(&mut rng, m, m),
        random_matrix(&mut rng, m, m),
    ];
    let mut op = OperatorJet::zeros(m, n, K);
    op.a = SymbolJet::constant(&sigma, K).comp;
    op.c = MatJet::from_terms(
        n,
        K,
        &Mat::zeros(m, m),
        &[
            (vec![0, 0], c[0].clone()),
            (vec![1, 0], c[1].clone()),
            (vec![0, 1], c[2].clone()),
        ],
    );
    let letters = analyze(&sigma, DEFAULT_TOL).unwrap().family.r;
    (op, letters, c)
}

#[test]
fn engineered_model_matches_trace_products() {
    let (op, letters, c) = engineered(41);
    let grid = Grid::centered(2, 0.2, 7);
    let model = build_model(&PolynomialOperator { op }, &grid, &ModelConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for p in &model.points {
        let mut alphabet = letters.clone();
        alphabet.push(&c[0] + &c[1] * p.x[0] + &c[2] * p.x[1]);
        let expect = |w: &Vec<usize>| trace_word(&alphabet, w);
        for (w, v) in model
            .coord_words
            .iter()
            .zip(&p.coords)
            .chain(model.graph_words.iter().zip(&p.values))
        {
            let e = expect(w);
            worst = worst.max((e - v).abs() / e.abs().max(1.0));
        }
    }
    assert!(worst < 1e-10, "worst relative deviation {worst:e}");
    // every coordinate must involve the subsymbol letter, the only non-constant one
    let s0 = letters.len();
    assert!(model.coord_words.iter().all(|w| w.contains(&s0)));
}

#[test]
fn engineered_coordinates_are_affine_in_the_chart() {
    // words with a single subsymbol letter are affine in x, so a quadratic
    // interpolant reproduces them exactly and refinement changes nothing
    let (op, _, _) = engineered(42);
    let field = PolynomialOperator { op };
    let cfg = ModelConfig::default();
    let coarse = build_model(&field, &Grid::centered(2, 0.2, 5), &cfg).unwrap();
    let fine = build_model(&field, &Grid::centered(2, 0.16, 9), &cfg).unwrap();
    let v = compare_models(&coarse, &fine, 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::Equivalent, "{v:?}");
}

#[test]
fn constant_coefficient_operator_has_no_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let sigma = random_well_conditioned_symbol(&mut rng, 2, 2);
    let mut op = OperatorJet::zeros(2, 2, K);
    op.a = SymbolJet::constant(&sigma, K).comp;
    op.c = MatJet::constant(2, K, random_matrix(&mut rng, 2, 2));
    let err = build_model(
        &PolynomialOperator { op },
        &Grid::centered(2, 0.1, 5),
        &ModelConfig::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::NoIndependentInvariants { .. }),
        "{err:?}"
    );
}

#[test]
fn halving_the_grid_keeps_gauge_pairs_equivalent() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let cfg = ModelConfig::default();
    let tol = 1e-6;
    let radius = 0.05;
    for _ in 0..10 {
        let op = random_regular_operator(&mut rng, 2, 2, K);
        let gauge = random_chart_gauge(&mut rng, 2, K + 2, 2, radius);
        let base = PolynomialOperator { op: op.clone() };
        let moved = GaugedOperator {
            base: PolynomialOperator { op },
            gauge,
            tol: 1e-12,
        };
        let deviation = |res: usize| {
            let grid = Grid::centered(2, radius, res);
            let a = build_model(&base, &grid, &cfg).unwrap();
            let b = build_model(&moved, &grid, &cfg).unwrap();
            compare_models(&a, &b, tol).unwrap().worst_deviation
        };
        let full = deviation(9);
        let half = deviation(5);
        assert!(full < tol && half < tol);
        assert!((full - half).abs() < 10.0 * tol);
    }
}

#[test]
fn zero_order_perturbation_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let grid = Grid::centered(2, 0.05, 7);
    let cfg = ModelConfig::default();
    for _ in 0..10 {
        let op = random_regular_operator(&mut rng, 2, 2, K);
        let mut perturbed = op.clone();
        perturbed.c = perturbed.c.add(&MatJet::constant(
            2,
            K,
            random_matrix(&mut rng, 2, 2).scale(0.1),
        ));
        let (_, _, v) = compare_operators(
            &PolynomialOperator { op },
            &PolynomialOperator { op: perturbed },
            &grid,
            &cfg,
            1e-6,
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::Inequivalent);
    }
}

#[test]
fn model_is_its_own_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let op = random_regular_operator(&mut rng, 2, 2, K);
    let model = build_model(
        &PolynomialOperator { op },
        &Grid::centered(2, 0.05, 5),
        &ModelConfig::default(),
    )
    .unwrap();
    let v = compare_models(&model, &model, 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::Equivalent);
    assert_eq!(v.worst_deviation, 0.0);
}

#[test]
fn sequential_and_parallel_fields_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let field = PolynomialOperator {
        op: random_regular_operator(&mut rng, 2, 2, K),
    };
    let grid = Grid::centered(2, 0.05, 5);
    let words = candidate_words(2, 3);
    let run = |mode| {
        let cfg = ModelConfig {
            mode,
            ..ModelConfig::default()
        };
        invariant_fields(&field, &words, &grid, &cfg).unwrap()
    };
    assert_eq!(run(ExecMode::Sequential), run(ExecMode::Parallel));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn basic_words_never_exceed_extended_codimension(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_regular_operator(&mut rng, 2, 2, K);
        let cfg = ModelConfig::default();
        let d = point_data(&PolynomialOperator { op }, &[0.0, 0.0], &cfg).unwrap();
        let words = basic_words(&d.sigma, &d.sigma0, &candidate_words(2, cfg.word_len), &cfg).unwrap();
        prop_assert!(words.len() as i64 <= extended_codimension(2, 2));
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), words.len());
    }
}
