//! Seeded train/validation/test partitioning that keeps groups (e.g. all
//! studies of one patient) inside a single fold.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::AnnotationTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    /// Integer fold sizes for `m` rows by largest remainder; ties go to the
    /// earlier fold.
    fn targets(&self, m: usize) -> [usize; 3] {
        let exact = self.as_array().map(|r| r * m as f64);
        let mut sizes = exact.map(|x| (x + 1e-9).floor() as usize);
        let mut left = m.saturating_sub(sizes.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - sizes[a] as f64;
            let fb = exact[b] - sizes[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[*k] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Row indices of the train, validation and test folds, each ascending.
pub fn split_indices(m: usize, groups: Option<&[String]>, ratios: SplitRatios, seed: u64) -> Result<[Vec<usize>; 3]> {
    ratios.validate()?;
    if let Some(g) = groups {
        if g.len() != m {
            return Err(Error::shape("split", m, g.len()));
        }
    }
    let mut buckets: Vec<Vec<usize>> = match groups {
        None => (0..m).map(|i| vec![i]).collect(),
        Some(keys) => {
            let mut by_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, k) in keys.iter().enumerate() {
                by_key.entry(k.as_str()).or_default().push(i);
            }
            by_key.into_values().collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    buckets.shuffle(&mut rng);
    // largest groups first so the small ones can even out the sizes
    buckets.sort_by_key(|b| std::cmp::Reverse(b.len()));

    let largest = ratios.as_array().into_iter().fold(0.0, f64::max);
    if let Some(big) = buckets.first() {
        if big.len() as f64 > largest * m as f64 {
            log::warn!(
                "a single group holds {} of {m} rows, more than the largest fold target; split is best-effort",
                big.len()
            );
        }
    }

    let targets = ratios.targets(m);
    let mut folds: [Vec<usize>; 3] = Default::default();
    for bucket in buckets {
        let fold = (0..3)
            .max_by(|&a, &b| {
                let da = targets[a] as i64 - folds[a].len() as i64;
                let db = targets[b] as i64 - folds[b].len() as i64;
                da.cmp(&db).then(b.cmp(&a))
            })
            .unwrap_or(0);
        folds[fold].extend(bucket);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Splits a table into train, validation and test folds using its group keys.
pub fn split(annotations: &AnnotationTable, ratios: SplitRatios, seed: u64) -> Result<[AnnotationTable; 3]> {
    let folds = split_indices(annotations.num_images(), annotations.groups(), ratios, seed)?;
    Ok(folds.map(|rows| annotations.select_rows(&rows)))
}
