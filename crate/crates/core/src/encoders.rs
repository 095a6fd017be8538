//! Static entity codes: one-hot vectors for findings, real-valued feature
//! codes for images (read from disk or synthesized with planted structure).

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kg::{AnnotationTable, LabelValue};

pub const DEFAULT_FEATURE_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotCode {
    index: usize,
    len: usize,
}

impl OneHotCode {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[self.index] = 1.0;
        v
    }
}

pub fn encode_finding(j: usize, n: usize) -> Result<OneHotCode> {
    if j >= n {
        return Err(Error::OutOfBounds {
            what: "finding",
            index: j,
            len: n,
        });
    }
    Ok(OneHotCode { index: j, len: n })
}

/// Per-image feature codes, `m × dim`, with id lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    dim: usize,
    codes: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, dim: usize, codes: Vec<f64>) -> Result<Self> {
        if codes.len() != ids.len() * dim {
            return Err(Error::shape("FeatureTable", ids.len() * dim, codes.len()));
        }
        if let Some(k) = codes.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite feature for `{}` at column {}",
                ids[k / dim],
                k % dim
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate feature id `{id}`")));
            }
        }
        Ok(Self { ids, dim, codes, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn code_for(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.code(i))
    }

    /// Row index into this table for every id, or the list of missing ids.
    pub fn align(&self, ids: &[String]) -> Result<Vec<usize>> {
        let mut rows = Vec::with_capacity(ids.len());
        let mut missing = Vec::new();
        for id in ids {
            match self.position(id) {
                Some(i) => rows.push(i),
                None => missing.push(id.clone()),
            }
        }
        if missing.is_empty() {
            Ok(rows)
        } else {
            Err(Error::MissingFeatures(missing))
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut file).map_err(|e| Error::io(path, e))
    }

    /// `id,f0,...,f{D-1}`; values use the shortest representation that
    /// parses back to the same bits.
    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|k| format!("f{k}")));
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.dim + 1);
        for (i, id) in self.ids.iter().enumerate() {
            rec.clear();
            rec.push(id.clone());
            rec.extend(self.code(i).iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file, &path.display().to_string())
}

pub fn read_features<R: Read>(reader: R, source: &str) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    if header.get(0).map(str::trim) != Some("id") {
        return Err(Error::parse(source, 1, "header must start with `id`"));
    }
    let dim = header.len() - 1;
    let mut ids = Vec::new();
    let mut codes = Vec::new();
    let mut seen = HashMap::new();
    for record in rdr.records() {
        let record =
            record.map_err(|e| Error::parse(source, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(Error::parse(
                source,
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::parse(
                source,
                line,
                format!("duplicate id `{id}` (first on line {prev})"),
            ));
        }
        for (k, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, line, format!("column f{k}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(
                    source,
                    line,
                    format!("column f{k}: non-finite value `{cell}`"),
                ));
            }
            codes.push(v);
        }
        ids.push(id);
    }
    FeatureTable::new(ids, dim, codes)
}

/// Parameters of the planted-prototype generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub findings: usize,
    pub dim: usize,
    pub prototype_scale: f64,
    pub noise_scale: f64,
    /// Probability that a given cell is positive.
    pub sparsity: f64,
    /// Probability that a positive cell is reported as uncertain.
    pub uncertain_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            images: 500,
            findings: 14,
            dim: 64,
            prototype_scale: 1.0,
            noise_scale: 0.5,
            sparsity: 0.15,
            uncertain_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.findings == 0 || self.dim == 0 {
            return bad("synthetic data needs at least one finding and one feature");
        }
        if !(self.prototype_scale >= 0.0 && self.noise_scale >= 0.0)
            || !self.prototype_scale.is_finite()
            || !self.noise_scale.is_finite()
        {
            return bad("scales must be finite and non-negative");
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return bad("sparsity must lie in (0, 1)");
        }
        if !(self.uncertain_fraction >= 0.0 && self.uncertain_fraction < 1.0) {
            return bad("uncertain fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Draws `n` prototypes; each image's code is the sum of the prototypes of
/// its positive findings plus isotropic Gaussian noise. Every image gets at
/// least one positive. Uncertain downgrades happen after the code is formed,
/// so uncertain findings still shape the features.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<(FeatureTable, AnnotationTable)> {
    spec.validate()?;
    let (m, n, dim) = (spec.images, spec.findings, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let prototypes: Vec<f64> = (0..n * dim)
        .map(|_| spec.prototype_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let width = m.saturating_sub(1).to_string().len().max(5);
    let ids: Vec<String> = (0..m).map(|i| format!("img{i:0width$}")).collect();
    let findings: Vec<String> = (0..n).map(|j| format!("F{j:02}")).collect();
    let mut codes = Vec::with_capacity(m * dim);
    let mut rows = Vec::with_capacity(m);

    for _ in 0..m {
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(spec.sparsity)).collect();
        if !positive.iter().any(|p| *p) {
            positive[rng.random_range(0..n)] = true;
        }
        let mut code = vec![0.0; dim];
        for (j, _) in positive.iter().enumerate().filter(|(_, p)| **p) {
            for (c, p) in code.iter_mut().zip(&prototypes[j * dim..(j + 1) * dim]) {
                *c += p;
            }
        }
        if spec.noise_scale > 0.0 {
            for c in &mut code {
                *c += spec.noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        codes.extend(code);

        let row = positive
            .iter()
            .map(|&p| {
                if !p {
                    LabelValue::Negative
                } else if spec.uncertain_fraction > 0.0 && rng.random_bool(spec.uncertain_fraction) {
                    LabelValue::Uncertain
                } else {
                    LabelValue::Positive
                }
            })
            .collect();
        rows.push(row);
    }

    let features = FeatureTable::new(ids.clone(), dim, codes)?;
    let annotations = AnnotationTable::new(ids, findings, rows, None)?;
    Ok((features, annotations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_codes() {
        assert_eq!(encode_finding(2, 5).unwrap().to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(encode_finding(0, 1).unwrap().to_vec(), vec![1.0]);
        let last = encode_finding(13, 14).unwrap().to_vec();
        assert_eq!(last.len(), 14);
        assert_eq!(last[13], 1.0);
        assert_eq!(last.iter().sum::<f64>(), 1.0);
        assert!(matches!(encode_finding(5, 5), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn one_hot_orthonormal() {
        let n = 6;
        for j in 0..n {
            for k in 0..n {
                let a = encode_finding(j, n).unwrap().to_vec();
                let b = encode_finding(k, n).unwrap().to_vec();
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if j == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn parse_small_file() {
        let src = "id,f0,f1,f2,f3\na,0.5,-1,2e-3,0\nb,1,2,3,4\n";
        let t = read_features(src.as_bytes(), "f.csv").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 4));
        assert_eq!(t.code_for("a").unwrap(), &[0.5, -1.0, 0.002, 0.0]);
    }

    #[test]
    fn header_only_is_empty_table() {
        let t = read_features("id,f0,f1\n".as_bytes(), "f.csv").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.dim(), 2);
    }

    #[test]
    fn rejects_bad_cells() {
        for src in [
            "id,f0\na,NaN\n",
            "id,f0\na,inf\n",
            "id,f0\na,abc\n",
            "id,f0,f1\na,1\n",
            "id,f0\na,1\na,2\n",
        ] {
            assert!(
                matches!(read_features(src.as_bytes(), "f"), Err(Error::Parse { .. })),
                "{src}"
            );
        }
    }

    #[test]
    fn write_read_round_trip_is_bit_exact() {
        let vals = vec![0.1, -0.0, 1e-300, 123456.789, f64::MIN_POSITIVE, -2.5e17];
        let t = FeatureTable::new(vec!["x".into(), "y".into()], 3, vals).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = read_features(buf.as_slice(), "rt").unwrap();
        for i in 0..2 {
            let a: Vec<u64> = t.code(i).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.code(i).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn align_lists_missing_ids() {
        let t = FeatureTable::new(vec!["a".into()], 1, vec![1.0]).unwrap();
        match t.align(&["a".into(), "b".into(), "c".into()]) {
            Err(Error::MissingFeatures(ids)) => assert_eq!(ids, vec!["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noiseless_single_positive_equals_prototype() {
        let spec = SyntheticSpec {
            images: 40,
            findings: 5,
            dim: 8,
            noise_scale: 0.0,
            sparsity: 1e-9,
            ..SyntheticSpec::default()
        };
        let (features, labels) = synth_dataset(&spec).unwrap();
        // any two images sharing their single positive share their code
        let mut proto: HashMap<usize, Vec<f64>> = HashMap::new();
        for i in 0..labels.num_images() {
            let pos: Vec<usize> = (0..5).filter(|&j| labels.get(i, j) == LabelValue::Positive).collect();
            assert_eq!(pos.len(), 1);
            let code = features.code(i).to_vec();
            let prev = proto.entry(pos[0]).or_insert_with(|| code.clone());
            assert_eq!(*prev, code);
        }
    }

    #[test]
    fn uncertain_fraction_respected() {
        let zero = SyntheticSpec::default();
        let (_, t) = synth_dataset(&zero).unwrap();
        assert_eq!(t.count(LabelValue::Uncertain), 0);
        assert!(t.rows().all(|r| r.contains(&LabelValue::Positive)));

        let some = SyntheticSpec {
            uncertain_fraction: 0.2,
            ..SyntheticSpec::default()
        };
        let (_, t) = synth_dataset(&some).unwrap();
        let unc = t.count(LabelValue::Uncertain) as f64;
        let pos = t.count(LabelValue::Positive) as f64;
        let frac = unc / (unc + pos);
        assert!((0.12..0.28).contains(&frac), "{frac}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            images: 30,
            ..SyntheticSpec::default()
        };
        assert_eq!(synth_dataset(&spec).unwrap(), synth_dataset(&spec).unwrap());
        let other = SyntheticSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(synth_dataset(&spec).unwrap().0, synth_dataset(&other).unwrap().0);
    }

    #[test]
    fn invalid_spec_rejected() {
        for spec in [
            SyntheticSpec {
                sparsity: 0.0,
                ..Default::default()
            },
            SyntheticSpec {
                uncertain_fraction: 1.0,
                ..Default::default()
            },
            SyntheticSpec {
                noise_scale: -1.0,
                ..Default::default()
            },
        ] {
            assert!(synth_dataset(&spec).is_err());
        }
    }
}
