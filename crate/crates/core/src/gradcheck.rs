//! Finite-difference verification of the full training gradient
//! (`loss ∘ σ ∘ ψ ∘ embed`) on random models.
//!
//! The reference loss is recomputed triple by triple through
//! [`EmbeddingModel::score`] and [`bce_loss`], not through the batched path
//! that produces the analytic gradient. Coordinates whose `±h` probe flips a
//! ConvE ReLU are skipped: the loss is not differentiable across a kink.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoders::FeatureTable;
use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, RelationKind, Triple};
use crate::scoring::{grad_score, init_model, EmbeddingModel, ModelDims, ScorerKind, Subject, BLOCK_NAMES};
use crate::tensor::{finite_diff_grad, sigmoid, Tensor, DEFAULT_FD_STEP};
use crate::training::{batch_loss_and_grad, bce_loss, make_batches, LinkData, TrainConfig};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor of the relative error; below it the error is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub kind: ScorerKind,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub findings: usize,
    pub channels: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per parameter block; smaller blocks are probed fully.
    pub coords_per_block: usize,
    pub seed: u64,
    /// Scale the analytic gradient by `1 + 1e-3` (negative control).
    pub corrupt: bool,
}

impl GradCheckConfig {
    pub fn new(kind: ScorerKind, feature_dim: usize, embed_dim: usize, channels: usize, seed: u64) -> Self {
        Self {
            kind,
            feature_dim,
            embed_dim,
            findings: 5,
            channels: if kind == ScorerKind::DistMult { 0 } else { channels },
            step: DEFAULT_FD_STEP,
            tolerance: DEFAULT_TOLERANCE,
            coords_per_block: 24,
            seed,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: &'static str,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.max_rel_error() <= self.config.tolerance
    }
}

/// Random graph over two images and the configured findings, using all
/// three relations so every embedding row and both subject kinds are hit.
fn fixture(config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<(KnowledgeGraph, FeatureTable)> {
    let n = config.findings;
    let mut triples = Vec::new();
    for i in 0..2 {
        for j in 0..n {
            let u: f64 = rng.random();
            if u < 0.35 {
                triples.push(Triple::new(
                    EntityId::image(i),
                    RelationKind::HasFinding,
                    EntityId::finding(j),
                ));
            } else if u < 0.5 {
                triples.push(Triple::new(
                    EntityId::image(i),
                    RelationKind::ProbablyHasFinding,
                    EntityId::finding(j),
                ));
            }
        }
    }
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(0.3) {
                triples.push(Triple::new(
                    EntityId::finding(a),
                    RelationKind::CoOccurs,
                    EntityId::finding(b),
                ));
            }
        }
    }
    let kg = KnowledgeGraph::from_triples(2, n, triples)?;
    let codes = (0..2 * config.feature_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let features = FeatureTable::new(vec!["a".into(), "b".into()], config.feature_dim, codes)?;
    Ok((kg, features))
}

fn relu_pattern(model: &EmbeddingModel, subjects: &[(Subject<'_>, RelationKind)]) -> Vec<bool> {
    if model.kind() != ScorerKind::ConvE {
        return Vec::new();
    }
    let mut pattern = Vec::new();
    for (subject, relation) in subjects {
        let es = match subject {
            Subject::Image(code) => model.embed_subject(code).expect("checked dims"),
            Subject::Finding(j) => model.embed_object(*j).expect("checked index").to_vec(),
        };
        let rr = model.relation_embedding(*relation).expect("relation present");
        let trace = model.conve_trace(&es, rr).expect("ConvE trace");
        pattern.extend(trace.conv_pre.data().iter().chain(&trace.proj_pre).map(|v| *v > 0.0));
    }
    pattern
}

fn probe_indices(len: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= budget {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, budget).into_vec();
        idx.sort_unstable();
        idx
    }
}

pub fn check_gradients(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (kg, features) = fixture(config, &mut rng)?;
    let dims = ModelDims::new(
        config.feature_dim,
        config.embed_dim,
        config.findings,
        config.channels,
        RelationKind::ALL.to_vec(),
    );
    let model = init_model(dims, config.kind, rng.random())?;
    let data = LinkData::new(&kg, &features, features.ids())?;
    let train_config = TrainConfig {
        relations: RelationKind::ALL.to_vec(),
        batch_size: usize::MAX,
        ..TrainConfig::default()
    };
    // one batch holding every item; only a slice is checked to keep it cheap
    let mut items = make_batches(&data, &train_config, 0)?.concat();
    items.truncate(4);

    let mut grads = crate::scoring::Gradients::zeros_like(&model);
    batch_loss_and_grad(&model, &data, &items, &mut grads)?;
    if config.corrupt {
        grads.scale(1.0 + 1e-3);
    }

    let subjects: Vec<(Subject<'_>, RelationKind)> = items
        .iter()
        .map(|it| {
            let s = match it.subject {
                crate::training::ItemSubject::Image(i) => Subject::Image(data.code(i)),
                crate::training::ItemSubject::Finding(f) => Subject::Finding(f),
            };
            (s, it.relation)
        })
        .collect();
    let reference_loss = |m: &EmbeddingModel| -> f64 {
        let mut total = 0.0;
        for ((subject, relation), item) in subjects.iter().zip(&items) {
            let mut l = 0.0;
            for (j, y) in item.targets.iter().enumerate() {
                let psi = m.score(*subject, *relation, j).expect("valid triple");
                l += bce_loss(sigmoid(psi), *y);
            }
            total += l / item.targets.len() as f64;
        }
        total / items.len() as f64
    };
    let base_pattern = relu_pattern(&model, &subjects);

    let h = config.step;
    let mut blocks = Vec::new();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = model.blocks()[b].len();
        let mut check = BlockCheck {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for k in probe_indices(len, config.coords_per_block, &mut rng) {
            let mut probe = model.clone();
            let orig = probe.blocks()[b].data()[k];
            let mut eval_at = |v: f64| {
                probe.blocks_mut()[b].data_mut()[k] = v;
                (reference_loss(&probe), relu_pattern(&probe, &subjects))
            };
            let (plus, pat_plus) = eval_at(orig + h);
            let (minus, pat_minus) = eval_at(orig - h);
            if pat_plus != base_pattern || pat_minus != base_pattern {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.blocks()[b][k];
            check.max_rel_error = check.max_rel_error.max(relative_error(analytic, numeric));
            check.checked += 1;
        }
        blocks.push(check);
    }

    // feature-code gradient of a single hasFinding score
    let code = data.code(0).to_vec();
    let object = rng.random_range(0..config.findings);
    let mut analytic = grad_score(&model, Subject::Image(&code), RelationKind::HasFinding, object, 1.0)?
        .code
        .expect("image subject");
    if config.corrupt {
        analytic.iter_mut().for_each(|g| *g *= 1.0 + 1e-3);
    }
    let code_t = Tensor::vector(code.clone())?;
    let idx = probe_indices(code.len(), config.coords_per_block, &mut rng);
    let mut check = BlockCheck {
        name: "c_X",
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    let base = relu_pattern(&model, &[(Subject::Image(&code), RelationKind::HasFinding)]);
    let full = finite_diff_grad(
        |c| {
            model
                .score(Subject::Image(c.data()), RelationKind::HasFinding, object)
                .expect("valid")
        },
        &code_t,
        h,
    );
    for k in idx {
        let mut shifted = code.clone();
        shifted[k] += h;
        let p1 = relu_pattern(&model, &[(Subject::Image(&shifted), RelationKind::HasFinding)]);
        shifted[k] -= 2.0 * h;
        let p2 = relu_pattern(&model, &[(Subject::Image(&shifted), RelationKind::HasFinding)]);
        if p1 != base || p2 != base {
            check.skipped += 1;
            continue;
        }
        check.max_rel_error = check.max_rel_error.max(relative_error(analytic[k], full.data()[k]));
        check.checked += 1;
    }
    blocks.push(check);

    Ok(GradCheckReport {
        config: config.clone(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distmult_passes() {
        let r = check_gradients(&GradCheckConfig::new(ScorerKind::DistMult, 8, 16, 0, 1)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.blocks.len(), 6);
        assert_eq!(r.blocks[3].checked, 0, "DistMult has no kernels");
    }

    #[test]
    fn conve_passes() {
        let r = check_gradients(&GradCheckConfig::new(ScorerKind::ConvE, 8, 25, 2, 2)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.blocks[3].checked > 0 && r.blocks[4].checked > 0);
    }

    #[test]
    fn corrupted_gradient_fails() {
        for kind in [ScorerKind::DistMult, ScorerKind::ConvE] {
            let mut c = GradCheckConfig::new(kind, 8, 25, 1, 3);
            c.corrupt = true;
            let r = check_gradients(&c).unwrap();
            assert!(!r.passed());
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }
}
