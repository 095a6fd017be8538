//! Per-image label tables in the CheXpert CSV convention.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::RelationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelValue {
    Positive,
    Negative,
    Uncertain,
    Unmentioned,
}

impl LabelValue {
    pub fn parse(token: &str) -> Option<Self> {
        match token.trim() {
            "1.0" | "1" => Some(LabelValue::Positive),
            "0.0" | "0" => Some(LabelValue::Negative),
            "-1.0" | "-1" => Some(LabelValue::Uncertain),
            "" => Some(LabelValue::Unmentioned),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            LabelValue::Positive => "1.0",
            LabelValue::Negative => "0.0",
            LabelValue::Uncertain => "-1.0",
            LabelValue::Unmentioned => "",
        }
    }
}

/// How uncertain annotations enter the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UncertainPolicy {
    AsPositive,
    AsNegative,
    AsSeparateRelation,
}

impl UncertainPolicy {
    pub const ALL: [UncertainPolicy; 3] = [
        UncertainPolicy::AsPositive,
        UncertainPolicy::AsNegative,
        UncertainPolicy::AsSeparateRelation,
    ];

    /// Relation a cell contributes under this policy, if any. Unmentioned
    /// cells are closed-world negatives.
    pub fn relation_for(self, value: LabelValue) -> Option<RelationKind> {
        match (value, self) {
            (LabelValue::Positive, _) => Some(RelationKind::HasFinding),
            (LabelValue::Uncertain, UncertainPolicy::AsPositive) => Some(RelationKind::HasFinding),
            (LabelValue::Uncertain, UncertainPolicy::AsSeparateRelation) => Some(RelationKind::ProbablyHasFinding),
            _ => None,
        }
    }

    /// Binary "has finding" truth for a cell.
    pub fn is_positive(self, value: LabelValue) -> bool {
        self.relation_for(value) == Some(RelationKind::HasFinding)
    }

    pub fn name(self) -> &'static str {
        match self {
            UncertainPolicy::AsPositive => "positive",
            UncertainPolicy::AsNegative => "negative",
            UncertainPolicy::AsSeparateRelation => "separate",
        }
    }
}

impl std::str::FromStr for UncertainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "aspositive" | "ones" => Ok(UncertainPolicy::AsPositive),
            "negative" | "asnegative" | "zeros" => Ok(UncertainPolicy::AsNegative),
            "separate" | "asseparaterelation" | "relation" => Ok(UncertainPolicy::AsSeparateRelation),
            other => Err(Error::Config(format!(
                "unknown uncertain policy `{other}` (expected positive, negative or separate)"
            ))),
        }
    }
}

impl std::fmt::Display for UncertainPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `m × n` grid of labels with row ids, finding names and optional group keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTable {
    ids: Vec<String>,
    findings: Vec<String>,
    labels: Vec<LabelValue>,
    groups: Option<Vec<String>>,
}

impl AnnotationTable {
    pub fn new(
        ids: Vec<String>,
        findings: Vec<String>,
        rows: Vec<Vec<LabelValue>>,
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = findings.len();
        if rows.len() != ids.len() {
            return Err(Error::shape(
                "AnnotationTable",
                format!("{} rows", ids.len()),
                rows.len(),
            ));
        }
        if let Some(g) = &groups {
            if g.len() != ids.len() {
                return Err(Error::shape(
                    "AnnotationTable",
                    format!("{} group keys", ids.len()),
                    g.len(),
                ));
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len() * n);
        for (i, (id, row)) in ids.iter().zip(rows).enumerate() {
            if row.len() != n {
                return Err(Error::parse(
                    "<table>",
                    i,
                    format!("row has {} labels, expected {n}", row.len()),
                ));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::parse("<table>", i, format!("duplicate image id `{id}`")));
            }
            labels.extend(row);
        }
        Ok(Self {
            ids,
            findings,
            labels,
            groups,
        })
    }

    pub fn num_images(&self) -> usize {
        self.ids.len()
    }

    pub fn num_findings(&self) -> usize {
        self.findings.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn findings(&self) -> &[String] {
        &self.findings
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn row(&self, i: usize) -> &[LabelValue] {
        let n = self.findings.len();
        &self.labels[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> LabelValue {
        self.labels[i * self.findings.len() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[LabelValue]> {
        (0..self.ids.len()).map(move |i| self.row(i))
    }

    /// Policy-mapped binary "has finding" grid, row-major.
    pub fn binary(&self, policy: UncertainPolicy) -> Vec<bool> {
        self.labels.iter().map(|v| policy.is_positive(*v)).collect()
    }

    pub fn count(&self, value: LabelValue) -> usize {
        self.labels.iter().filter(|v| **v == value).count()
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let n = self.findings.len();
        let mut labels = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            labels.extend_from_slice(&self.labels[r * n..(r + 1) * n]);
        }
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            findings: self.findings.clone(),
            labels,
            groups: self
                .groups
                .as_ref()
                .map(|g| rows.iter().map(|&r| g[r].clone()).collect()),
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Parses `id,<finding_1>,...,<finding_n>[,group]`.
    pub fn from_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(source, 1, e.to_string()))?
            .clone();
        if header.is_empty() || header.get(0).map(str::trim) != Some("id") {
            return Err(Error::parse(source, 1, "header must start with `id`"));
        }
        let has_group = header.len() > 1 && header.get(header.len() - 1).map(str::trim) == Some("group");
        let n = header.len() - 1 - usize::from(has_group);
        let findings: Vec<String> = header.iter().skip(1).take(n).map(|s| s.trim().to_string()).collect();

        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut groups = has_group.then(Vec::new);
        let mut seen = HashSet::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(source, line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != header.len() {
                return Err(Error::parse(
                    source,
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            let id = record[0].trim().to_string();
            if id.is_empty() {
                return Err(Error::parse(source, line, "empty image id"));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::parse(source, line, format!("duplicate image id `{id}`")));
            }
            let mut row = Vec::with_capacity(n);
            for (j, cell) in record.iter().skip(1).take(n).enumerate() {
                let value = LabelValue::parse(cell).ok_or_else(|| {
                    Error::parse(
                        source,
                        line,
                        format!("column `{}`: invalid label token `{cell}`", findings[j]),
                    )
                })?;
                row.push(value);
            }
            if let Some(g) = groups.as_mut() {
                g.push(record[header.len() - 1].trim().to_string());
            }
            ids.push(id);
            rows.push(row);
        }
        Self::new(ids, findings, rows, groups)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["id"];
        header.extend(self.findings.iter().map(String::as_str));
        if self.groups.is_some() {
            header.push("group");
        }
        wtr.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.as_str()];
            rec.extend(self.row(i).iter().map(|v| v.token()));
            if let Some(g) = &self.groups {
                rec.push(&g[i]);
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }
}
