//! Radiological knowledge graph: image and finding entities linked by typed
//! relations, built from annotation tables under an uncertainty policy.
//!
//! The graph is closed-world: a missing `(image, relation, finding)` edge is
//! a negative, which is what [`negatives_for`] enumerates.

mod annotations;
mod cooccur;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

pub use annotations::{AnnotationTable, LabelValue, UncertainPolicy};
pub use cooccur::{add_cooccurrence, cooccurrence_matrix, CooccurrenceMatrix, DEFAULT_COOCCURRENCE_THRESHOLD};
pub use split::{split, split_indices, SplitRatios};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Image,
    Finding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: usize,
}

impl EntityId {
    pub const fn image(index: usize) -> Self {
        Self {
            kind: EntityKind::Image,
            index,
        }
    }

    pub const fn finding(index: usize) -> Self {
        Self {
            kind: EntityKind::Finding,
            index,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            EntityKind::Image => "image",
            EntityKind::Finding => "finding",
        };
        write!(f, "{kind}:{}", self.index)
    }
}

impl FromStr for EntityId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, index) = s
            .split_once(':')
            .ok_or_else(|| format!("entity `{s}` lacks `kind:index`"))?;
        let index = index.parse().map_err(|_| format!("bad entity index in `{s}`"))?;
        match kind {
            "image" => Ok(EntityId::image(index)),
            "finding" => Ok(EntityId::finding(index)),
            _ => Err(format!("unknown entity kind `{kind}`")),
        }
    }
}

/// Relation kinds, in the fixed order used for embedding rows and on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    HasFinding,
    ProbablyHasFinding,
    CoOccurs,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::HasFinding,
        RelationKind::ProbablyHasFinding,
        RelationKind::CoOccurs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::HasFinding => "hasFinding",
            RelationKind::ProbablyHasFinding => "probablyHasFinding",
            RelationKind::CoOccurs => "coOccurs",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    /// Entity kind required for the subject; objects are always findings.
    pub fn subject_kind(self) -> EntityKind {
        match self {
            RelationKind::CoOccurs => EntityKind::Finding,
            _ => EntityKind::Image,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown relation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationKind,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationKind, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.subject, self.relation, self.object)
    }
}

/// Immutable set of validated triples over `m` images and `n` findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    num_images: usize,
    num_findings: usize,
    triples: BTreeSet<Triple>,
}

impl KnowledgeGraph {
    pub fn from_triples(
        num_images: usize,
        num_findings: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut kg = Self {
            num_images,
            num_findings,
            triples: BTreeSet::new(),
        };
        for t in triples {
            kg.check(&t)?;
            kg.triples.insert(t);
        }
        Ok(kg)
    }

    fn check(&self, t: &Triple) -> Result<()> {
        let bound = |e: EntityId| match e.kind {
            EntityKind::Image => self.num_images,
            EntityKind::Finding => self.num_findings,
        };
        for e in [t.subject, t.object] {
            if e.index >= bound(e) {
                return Err(Error::InvalidEntity(format!("{e} out of range in `{t}`")));
            }
        }
        if t.subject.kind != t.relation.subject_kind() || t.object.kind != EntityKind::Finding {
            return Err(Error::InvalidEntity(format!(
                "endpoint kinds do not fit relation in `{t}`"
            )));
        }
        if t.relation == RelationKind::CoOccurs && t.subject == t.object {
            return Err(Error::InvalidEntity(format!("self-loop `{t}`")));
        }
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn num_findings(&self) -> usize {
        self.num_findings
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    /// Findings linked from `subject` under `relation`, ascending.
    pub fn objects_of(&self, subject: EntityId, relation: RelationKind) -> impl Iterator<Item = EntityId> + '_ {
        let lo = Triple::new(subject, relation, EntityId::finding(0));
        let hi = Triple::new(subject, relation, EntityId::finding(usize::MAX));
        self.triples.range(lo..=hi).map(|t| t.object)
    }

    /// Closed-world targets for `(subject, relation, ?)` over all findings.
    pub fn targets(&self, subject: EntityId, relation: RelationKind) -> Vec<f64> {
        let mut y = vec![0.0; self.num_findings];
        for o in self.objects_of(subject, relation) {
            y[o.index] = 1.0;
        }
        y
    }

    pub fn count_by_relation(&self) -> BTreeMap<RelationKind, usize> {
        let mut counts: BTreeMap<_, _> = RelationKind::ALL.iter().map(|r| (*r, 0)).collect();
        for t in &self.triples {
            *counts.entry(t.relation).or_default() += 1;
        }
        counts
    }

    /// Relations that have at least one triple, in canonical order.
    pub fn relations_present(&self) -> Vec<RelationKind> {
        let present: BTreeSet<_> = self.triples.iter().map(|t| t.relation).collect();
        present.into_iter().collect()
    }

    /// New graph with the extra triples added.
    pub fn with_triples(&self, extra: impl IntoIterator<Item = Triple>) -> Result<Self> {
        let mut kg = self.clone();
        for t in extra {
            kg.check(&t)?;
            kg.triples.insert(t);
        }
        Ok(kg)
    }

    /// Line-delimited `subject\trelation\tobject`, preceded by `#` count headers.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# images {}", self.num_images)?;
        writeln!(out, "# findings {}", self.num_findings)?;
        for t in &self.triples {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`KnowledgeGraph::write_to`]. When the
    /// count headers are absent, bounds are inferred from the largest index.
    pub fn read_from<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut images = None;
        let mut findings = None;
        let mut triples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(source, lineno, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                let key = parts.next();
                let value = parts.next().and_then(|v| v.parse::<usize>().ok());
                match (key, value) {
                    (Some("images"), Some(v)) => images = Some(v),
                    (Some("findings"), Some(v)) => findings = Some(v),
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let subject = fields[0].parse().map_err(|e: String| Error::parse(source, lineno, e))?;
            let relation = fields[1]
                .parse()
                .map_err(|e: Error| Error::parse(source, lineno, e.to_string()))?;
            let object = fields[2].parse().map_err(|e: String| Error::parse(source, lineno, e))?;
            triples.push(Triple::new(subject, relation, object));
        }
        let max_index = |kind| {
            triples
                .iter()
                .flat_map(|t| [t.subject, t.object])
                .filter(|e| e.kind == kind)
                .map(|e| e.index + 1)
                .max()
                .unwrap_or(0)
        };
        let m = images.unwrap_or_else(|| max_index(EntityKind::Image));
        let n = findings.unwrap_or_else(|| max_index(EntityKind::Finding));
        Self::from_triples(m, n, triples)
    }
}

/// One triple per positive cell, plus uncertain cells mapped per `policy`.
pub fn build_radkg(annotations: &AnnotationTable, policy: UncertainPolicy) -> KnowledgeGraph {
    let mut triples = BTreeSet::new();
    for (i, row) in annotations.rows().enumerate() {
        for (j, value) in row.iter().enumerate() {
            if let Some(relation) = policy.relation_for(*value) {
                triples.insert(Triple::new(EntityId::image(i), relation, EntityId::finding(j)));
            }
        }
    }
    KnowledgeGraph {
        num_images: annotations.num_images(),
        num_findings: annotations.num_findings(),
        triples,
    }
}

/// Findings not linked to `image` under `relation`.
pub fn negatives_for(kg: &KnowledgeGraph, image: EntityId, relation: RelationKind) -> Result<BTreeSet<EntityId>> {
    if image.kind != EntityKind::Image || image.index >= kg.num_images {
        return Err(Error::InvalidEntity(format!(
            "{image} is not an image entity of this graph"
        )));
    }
    if relation.subject_kind() != EntityKind::Image {
        return Err(Error::InvalidEntity(format!(
            "{relation} does not take an image subject"
        )));
    }
    let linked: BTreeSet<_> = kg.objects_of(image, relation).collect();
    Ok((0..kg.num_findings)
        .map(EntityId::finding)
        .filter(|f| !linked.contains(f))
        .collect())
}
