//! Implementation-vs-oracle and invariant checks across modules.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use radkg::encoders::{synth_dataset, SyntheticSpec};
use radkg::eval::{auc_bruteforce, auc_roc, classify, PredictionRow};
use radkg::kg::{
    add_cooccurrence, build_radkg, cooccurrence_matrix, negatives_for, AnnotationTable, EntityId, LabelValue,
    RelationKind, UncertainPolicy,
};
use radkg::scoring::{init_model, score_distmult, EmbeddingModel, ModelDims, ScorerKind, Subject};

fn label_strategy() -> impl Strategy<Value = LabelValue> {
    prop_oneof![
        Just(LabelValue::Positive),
        Just(LabelValue::Negative),
        Just(LabelValue::Uncertain),
        Just(LabelValue::Unmentioned),
    ]
}

fn table_strategy(max_m: usize, max_n: usize) -> impl Strategy<Value = AnnotationTable> {
    (1..=max_n, 0..=max_m).prop_flat_map(|(n, m)| {
        proptest::collection::vec(proptest::collection::vec(label_strategy(), n), m).prop_map(move |rows| {
            AnnotationTable::new(
                (0..rows.len()).map(|i| format!("x{i}")).collect(),
                (0..n).map(|j| format!("F{j}")).collect(),
                rows,
                None,
            )
            .unwrap()
        })
    })
}

/// O(m·n²) direct count of `P(F_i | F_j)`.
fn conditional_oracle(t: &AnnotationTable, policy: UncertainPolicy) -> Vec<Vec<Option<f64>>> {
    let n = t.num_findings();
    let pos = |r: usize, j: usize| policy.is_positive(t.get(r, j));
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut both = 0u32;
                    let mut cond = 0u32;
                    for r in 0..t.num_images() {
                        if pos(r, j) {
                            cond += 1;
                            if pos(r, i) {
                                both += 1;
                            }
                        }
                    }
                    (cond > 0).then(|| f64::from(both) / f64::from(cond))
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kg_and_negatives_reconstruct_binary_grid(t in table_strategy(30, 8)) {
        for policy in UncertainPolicy::ALL {
            let kg = build_radkg(&t, policy);
            for i in 0..t.num_images() {
                let negatives = negatives_for(&kg, EntityId::image(i), RelationKind::HasFinding).unwrap();
                for j in 0..t.num_findings() {
                    let linked = kg.contains(&radkg::kg::Triple::new(
                        EntityId::image(i), RelationKind::HasFinding, EntityId::finding(j)));
                    prop_assert_eq!(linked, policy.is_positive(t.get(i, j)));
                    prop_assert_eq!(negatives.contains(&EntityId::finding(j)), !linked);
                }
            }
        }
    }

    #[test]
    fn policy_triple_counts_are_ordered(t in table_strategy(30, 8)) {
        let count = |p| build_radkg(&t, p).count_by_relation()[&RelationKind::HasFinding];
        let as_pos = build_radkg(&t, UncertainPolicy::AsPositive).len();
        let sep = count(UncertainPolicy::AsSeparateRelation);
        let as_neg = build_radkg(&t, UncertainPolicy::AsNegative).len();
        prop_assert!(as_pos >= sep && sep >= as_neg);
        prop_assert_eq!(as_pos, t.count(LabelValue::Positive) + t.count(LabelValue::Uncertain));
    }

    #[test]
    fn cooccurrence_matches_counting_oracle(t in table_strategy(60, 8)) {
        for policy in UncertainPolicy::ALL {
            let m = cooccurrence_matrix(&t, policy);
            let oracle = conditional_oracle(&t, policy);
            for i in 0..t.num_findings() {
                for j in 0..t.num_findings() {
                    prop_assert_eq!(m.get(i, j), oracle[i][j]);
                    if let Some(p) = m.get(i, j) {
                        prop_assert!((0.0..=1.0).contains(&p));
                    }
                }
            }
        }
    }

    #[test]
    fn cooccurrence_monotone_in_threshold(t in table_strategy(40, 6), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let kg = build_radkg(&t, UncertainPolicy::AsPositive);
        let m = cooccurrence_matrix(&t, UncertainPolicy::AsPositive);
        let edges = |th| -> BTreeSet<_> {
            add_cooccurrence(&kg, &m, th).unwrap().triples()
                .filter(|t| t.relation == RelationKind::CoOccurs).copied().collect()
        };
        prop_assert!(edges(hi).is_subset(&edges(lo)));
    }

    #[test]
    fn auc_agrees_with_pairwise_count(
        raw in proptest::collection::vec((0u8..8, any::<bool>()), 2..60),
    ) {
        // scores drawn from 8 levels, so ties are common
        let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 7.0).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        let b = auc_bruteforce(&scores, &labels).unwrap();
        match (a, b) {
            (Some(a), Some(b)) => {
                prop_assert!((a - b).abs() <= 1e-12);
                let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
                let r = auc_roc(&scores, &flipped).unwrap().unwrap();
                prop_assert!((r - (1.0 - a)).abs() <= 1e-12);
                let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert_eq!(auc_roc(&warped, &labels).unwrap(), Some(a));
            }
            (None, None) => {}
            other => prop_assert!(false, "definedness differs: {:?}", other),
        }
    }

    #[test]
    fn classify_is_monotone_in_threshold(
        ps in proptest::collection::vec(0.0f64..1.0, 1..20),
        t1 in 0.001f64..0.999, t2 in 0.001f64..0.999,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let row = PredictionRow { id: "x".into(), scores: ps.clone(), probabilities: ps, labels: None };
        let a = classify(&row, lo).unwrap();
        let b = classify(&row, hi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(!*y || *x);
        }
    }

    #[test]
    fn distmult_symmetric_and_trilinear(
        v in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..24),
        alpha in -4.0f64..4.0,
    ) {
        let es: Vec<f64> = v.iter().map(|x| x.0).collect();
        let rr: Vec<f64> = v.iter().map(|x| x.1).collect();
        let eo: Vec<f64> = v.iter().map(|x| x.2).collect();
        let psi = score_distmult(&es, &rr, &eo).unwrap();
        let swapped = score_distmult(&eo, &rr, &es).unwrap();
        prop_assert!((psi - swapped).abs() <= 1e-12 * (1.0 + psi.abs()));
        let scaled: Vec<f64> = rr.iter().map(|x| alpha * x).collect();
        let psi_scaled = score_distmult(&es, &scaled, &eo).unwrap();
        prop_assert!((psi_scaled - alpha * psi).abs() <= 1e-10 * (1.0 + psi.abs()));
    }
}

#[test]
fn cooccurrence_edges_match_oracle_and_threshold_is_strict() {
    use LabelValue::*;
    // F1 in rows {0..5}, F0 in row 0 only: P(F0 | F1) = 1/5 = 0.2 exactly
    let rows = vec![
        vec![Positive, Positive],
        vec![Negative, Positive],
        vec![Negative, Positive],
        vec![Negative, Positive],
        vec![Negative, Positive],
    ];
    let t = AnnotationTable::new(
        (0..5).map(|i| format!("x{i}")).collect(),
        vec!["F0".into(), "F1".into()],
        rows,
        None,
    )
    .unwrap();
    let m = cooccurrence_matrix(&t, UncertainPolicy::AsPositive);
    assert_eq!(m.get(0, 1), Some(0.2));
    assert_eq!(m.get(1, 0), Some(1.0));
    let kg = add_cooccurrence(&build_radkg(&t, UncertainPolicy::AsPositive), &m, 0.2).unwrap();
    let co: Vec<_> = kg.triples().filter(|t| t.relation == RelationKind::CoOccurs).collect();
    assert_eq!(co.len(), 1);
    assert_eq!(
        (co[0].subject, co[0].object),
        (EntityId::finding(1), EntityId::finding(0))
    );
}

fn permute_channels(model: &EmbeddingModel, perm: &[usize]) -> EmbeddingModel {
    let g = *model.geometry().unwrap();
    let plane = g.out_h * g.out_w;
    let d = model.dims().embed_dim;
    let [wx, ef, er, kernels, wc] = model.blocks().map(|b| b.data().to_vec());
    let mut new_k = kernels.clone();
    let mut new_wc = wc.clone();
    for (dst, &src) in perm.iter().enumerate() {
        new_k[dst * 25..(dst + 1) * 25].copy_from_slice(&kernels[src * 25..(src + 1) * 25]);
        new_wc[dst * plane * d..(dst + 1) * plane * d].copy_from_slice(&wc[src * plane * d..(src + 1) * plane * d]);
    }
    EmbeddingModel::from_blocks(ScorerKind::ConvE, model.dims().clone(), [wx, ef, er, new_k, new_wc]).unwrap()
}

#[test]
fn conve_invariant_under_consistent_channel_permutation() {
    let model = init_model(
        ModelDims::new(6, 36, 4, 4, vec![RelationKind::HasFinding]),
        ScorerKind::ConvE,
        5,
    )
    .unwrap();
    let permuted = permute_channels(&model, &[2, 0, 3, 1]);
    let code = [0.4, -1.3, 2.2, 0.1, -0.7, 1.9];
    let a = model
        .score_all_objects(Subject::Image(&code), RelationKind::HasFinding)
        .unwrap();
    let b = permuted
        .score_all_objects(Subject::Image(&code), RelationKind::HasFinding)
        .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

/// Ridge-regularised least squares via Gaussian elimination.
fn least_squares(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let dim = x[0].len();
    let mut a = vec![vec![0.0; dim + 1]; dim];
    for (row, target) in x.iter().zip(y) {
        for p in 0..dim {
            for q in 0..dim {
                a[p][q] += row[p] * row[q];
            }
            a[p][dim] += row[p] * target;
        }
    }
    for (p, row) in a.iter_mut().enumerate() {
        row[p] += lambda;
    }
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in 0..dim {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=dim {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..dim).map(|p| a[p][dim] / a[p][p]).collect()
}

#[test]
fn noiseless_synthetic_is_linearly_separable() {
    let spec = SyntheticSpec {
        images: 200,
        findings: 5,
        dim: 16,
        noise_scale: 0.0,
        sparsity: 0.3,
        ..SyntheticSpec::default()
    };
    let (features, labels) = synth_dataset(&spec).unwrap();
    let x: Vec<Vec<f64>> = (0..features.len()).map(|i| features.code(i).to_vec()).collect();
    for j in 0..5 {
        let y: Vec<bool> = (0..labels.num_images())
            .map(|i| labels.get(i, j) == LabelValue::Positive)
            .collect();
        let target: Vec<f64> = y.iter().map(|b| f64::from(u8::from(*b))).collect();
        let w = least_squares(&x, &target, 1e-9);
        let scores: Vec<f64> = x.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        assert_eq!(auc_roc(&scores, &y).unwrap(), Some(1.0), "finding {j}");
    }
}
