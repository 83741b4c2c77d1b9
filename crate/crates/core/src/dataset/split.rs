use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Validation(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Classes too small to stratify; their samples were split jointly.
    pub fallback_classes: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier part.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Per-class proportional split into train/validation/test.
///
/// Each class is shuffled with the seeded generator and apportioned with
/// largest-remainder rounding. Classes with fewer samples than parts are
/// pooled and split together. Multilabel datasets are split globally.
pub fn stratified_split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    match dataset.class_labels() {
        Some(labels) => {
            for (i, c) in labels.into_iter().enumerate() {
                groups.entry(c).or_default().push(i);
            }
        }
        None => {
            groups.insert(0, (0..dataset.len()).collect());
        }
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut pooled = Vec::new();
    let mut fallback_classes = Vec::new();
    for (class, mut idx) in groups {
        if idx.len() < 3 {
            log::warn!(
                "class {class} has {} samples, fewer than 3 split parts; splitting it globally",
                idx.len()
            );
            fallback_classes.push(class);
            pooled.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        assign(&idx, ratios.as_array(), &mut parts);
    }
    if !pooled.is_empty() {
        pooled.shuffle(&mut rng);
        assign(&pooled, ratios.as_array(), &mut parts);
    }

    let take = |idx: &mut Vec<usize>| {
        idx.sort_unstable();
        dataset.with_samples(idx.iter().map(|&i| dataset.samples[i].clone()).collect())
    };
    let [mut a, mut b, mut c] = parts;
    Ok(Split {
        train: take(&mut a),
        val: take(&mut b),
        test: take(&mut c),
        fallback_classes,
    })
}

fn assign(idx: &[usize], ratios: [f64; 3], parts: &mut [Vec<usize>; 3]) {
    let counts = apportion(idx.len(), ratios);
    let mut start = 0;
    for (part, count) in parts.iter_mut().zip(counts) {
        part.extend_from_slice(&idx[start..start + count]);
        start += count;
    }
}
