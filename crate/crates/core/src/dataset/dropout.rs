use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropMode {
    Fixed,
    Random,
}

impl std::fmt::Display for DropMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DropMode::Fixed => "fixed",
            DropMode::Random => "random",
        })
    }
}

/// Which whole sensors to empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorDropSpec {
    pub mode: DropMode,
    pub ratio: f64,
    /// Most informative first; required in fixed mode.
    pub informative_ranking: Option<Vec<usize>>,
    pub seed: u64,
}

impl SensorDropSpec {
    pub fn fixed(ratio: f64, ranking: Vec<usize>) -> Self {
        Self {
            mode: DropMode::Fixed,
            ratio,
            informative_ranking: Some(ranking),
            seed: 0,
        }
    }

    pub fn random(ratio: f64, seed: u64) -> Self {
        Self {
            mode: DropMode::Random,
            ratio,
            informative_ranking: None,
            seed,
        }
    }

    /// Number of sensors removed out of `n`: `round(ratio * n)`.
    pub fn drop_count(&self, n: usize) -> Result<usize> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::Validation(format!(
                "drop ratio must lie in [0, 1), got {}",
                self.ratio
            )));
        }
        let k = (self.ratio * n as f64).round() as usize;
        if k >= n {
            return Err(Error::Validation(format!(
                "dropping {k} of {n} sensors would leave none"
            )));
        }
        Ok(k)
    }

    /// Sensor indices to empty, in selection order.
    ///
    /// Random mode shuffles all sensors once with the seed and takes a prefix,
    /// so for one seed larger ratios drop supersets of smaller ones.
    pub fn drop_set(&self, n: usize) -> Result<Vec<usize>> {
        let k = self.drop_count(n)?;
        match self.mode {
            DropMode::Fixed => {
                let ranking = self.informative_ranking.as_ref().ok_or_else(|| {
                    Error::Contract("fixed-mode sensor dropout needs an informative ranking".into())
                })?;
                if ranking.len() < k || ranking.iter().any(|&v| v >= n) {
                    return Err(Error::Contract(format!(
                        "ranking {ranking:?} cannot supply {k} of {n} sensors"
                    )));
                }
                Ok(ranking[..k].to_vec())
            }
            DropMode::Random => {
                let mut order: Vec<usize> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                order.shuffle(&mut rng);
                order.truncate(k);
                Ok(order)
            }
        }
    }
}

/// Empties the selected sensors' columns (mask and value set to 0) in every
/// sample. The sensor count is unchanged.
pub fn leave_sensors_out(dataset: &Dataset, spec: &SensorDropSpec) -> Result<Dataset> {
    let drop = spec.drop_set(dataset.n_sensors)?;
    let mut out = dataset.clone();
    for s in &mut out.samples {
        for (vrow, mrow) in s.values.iter_mut().zip(s.mask.iter_mut()) {
            for &v in &drop {
                vrow[v] = 0.0;
                mrow[v] = 0;
            }
        }
    }
    Ok(out)
}
