use crate::error::{Error, Result};
use crate::kg::{AnnotationTable, EntityId, KnowledgeGraph, RelationKind, Triple, UncertainPolicy};

pub const DEFAULT_COOCCURRENCE_THRESHOLD: f64 = 0.2;

/// Directional conditional probabilities `P(F_i | F_j)`.
///
/// Entries in a column whose conditioning finding never occurs are `None`:
/// "never observed" is kept distinct from "never co-occurs".
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl CooccurrenceMatrix {
    pub fn from_entries(n: usize, entries: Vec<Option<f64>>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::shape("CooccurrenceMatrix", n * n, entries.len()));
        }
        Ok(Self { n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `P(F_i positive | F_j positive)`.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }
}

pub fn cooccurrence_matrix(annotations: &AnnotationTable, policy: UncertainPolicy) -> CooccurrenceMatrix {
    let n = annotations.num_findings();
    let mut joint = vec![0u64; n * n];
    let mut positives = Vec::with_capacity(n);
    for row in annotations.rows() {
        positives.clear();
        positives.extend(
            row.iter()
                .enumerate()
                .filter(|(_, v)| policy.is_positive(**v))
                .map(|(j, _)| j),
        );
        for &i in &positives {
            for &j in &positives {
                joint[i * n + j] += 1;
            }
        }
    }
    let entries = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let support = joint[j * n + j];
            (support > 0).then(|| joint[i * n + j] as f64 / support as f64)
        })
        .collect();
    CooccurrenceMatrix { n, entries }
}

/// Adds `(F_i, coOccurs, F_j)` for every defined off-diagonal entry strictly
/// above `threshold`.
pub fn add_cooccurrence(kg: &KnowledgeGraph, matrix: &CooccurrenceMatrix, threshold: f64) -> Result<KnowledgeGraph> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "co-occurrence threshold {threshold} outside [0, 1]"
        )));
    }
    if matrix.n != kg.num_findings() {
        return Err(Error::shape("add_cooccurrence", kg.num_findings(), matrix.n));
    }
    let n = matrix.n;
    let edges = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && matrix.get(i, j).is_some_and(|p| p > threshold))
        .map(|(i, j)| Triple::new(EntityId::finding(i), RelationKind::CoOccurs, EntityId::finding(j)));
    kg.with_triples(edges)
}
