//! Irregular multivariate time series: data model, JSONL format, synthetic
//! generation, splitting and sensor dropout.

mod dropout;
pub(crate) mod io;
mod split;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dropout::{leave_sensors_out, DropMode, SensorDropSpec};
pub use io::{format_f64, load_jsonl, read_jsonl, save_jsonl, write_jsonl, SCHEMA};
pub use split::{stratified_split, Split, SplitRatios};
pub use synthetic::{coupled_pairs, generate_synthetic, informative_ranking, CoupledPair, SignalMode, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    #[default]
    Multiclass,
    Multilabel,
}

/// Class index (multiclass) or 0/1 indicator vector (multilabel).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Multi(Vec<u8>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Multi(_) => None,
        }
    }

    /// Dense 0/1 target vector of length `n_classes`.
    pub fn one_hot(&self, n_classes: usize) -> Vec<f64> {
        match self {
            Label::Class(c) => (0..n_classes).map(|k| f64::from(u8::from(k == *c))).collect(),
            Label::Multi(v) => v.iter().map(|&b| f64::from(b)).collect(),
        }
    }
}

/// One sample on a shared timestamp grid.
///
/// `values[t][v]` is sensor `v` at grid position `t`; `mask[t][v]` is 1 when
/// that cell was observed. Unobserved cells hold exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct IrregularSample {
    pub id: String,
    pub timestamps: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<u8>>,
    pub static_features: Option<Vec<f64>>,
    pub label: Label,
}

impl IrregularSample {
    /// Validates the grid and zero-fills every unobserved cell.
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<f64>,
        values: Vec<Vec<f64>>,
        mask: Vec<Vec<u8>>,
        static_features: Option<Vec<f64>>,
        label: Label,
    ) -> Result<Self> {
        let mut s = Self {
            id: id.into(),
            timestamps,
            values,
            mask,
            static_features,
            label,
        };
        s.validate_grid()?;
        s.zero_fill();
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Sets every unobserved value to +0.0.
    pub fn zero_fill(&mut self) {
        for (vrow, mrow) in self.values.iter_mut().zip(&self.mask) {
            for (v, &m) in vrow.iter_mut().zip(mrow) {
                if m == 0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Observation mask of sensor `v` as a column.
    pub fn mask_column(&self, v: usize) -> Vec<u8> {
        self.mask.iter().map(|row| row[v]).collect()
    }

    pub fn observed_cells(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m == 1).count()
    }

    fn validate_grid(&self) -> Result<()> {
        let t = self.timestamps.len();
        if t == 0 {
            return Err(Error::Validation(format!("sample `{}` has no timestamps", self.id)));
        }
        if self.timestamps.iter().any(|x| !x.is_finite())
            || self.timestamps.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Validation(format!(
                "sample `{}`: timestamps must be finite and strictly increasing",
                self.id
            )));
        }
        if self.values.len() != t || self.mask.len() != t {
            return Err(Error::Validation(format!(
                "sample `{}`: values/mask must have {t} rows",
                self.id
            )));
        }
        let n = self.n_sensors();
        if n == 0 {
            return Err(Error::Validation(format!("sample `{}` has no sensors", self.id)));
        }
        for (vrow, mrow) in self.values.iter().zip(&self.mask) {
            if vrow.len() != n || mrow.len() != n {
                return Err(Error::Validation(format!(
                    "sample `{}`: ragged values/mask rows",
                    self.id
                )));
            }
            if mrow.iter().any(|&m| m > 1) {
                return Err(Error::Validation(format!("sample `{}`: mask must be 0/1", self.id)));
            }
            if vrow.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("sample `{}`: non-finite value", self.id)));
            }
        }
        if let Some(p) = &self.static_features {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "sample `{}`: non-finite static feature",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A collection of samples sharing sensor count, class count, static
/// dimension and task mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<IrregularSample>,
    pub n_sensors: usize,
    pub n_classes: usize,
    pub static_dim: usize,
    pub task_mode: TaskMode,
    /// Sensors ordered from most to least informative, when known.
    pub informative_ranking: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        samples: Vec<IrregularSample>,
        n_sensors: usize,
        n_classes: usize,
        static_dim: usize,
        task_mode: TaskMode,
    ) -> Result<Self> {
        let ds = Self {
            samples,
            n_sensors,
            n_classes,
            static_dim,
            task_mode,
            informative_ranking: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_ranking(mut self, ranking: Vec<usize>) -> Result<Self> {
        self.informative_ranking = Some(ranking);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same schema, different samples.
    pub fn with_samples(&self, samples: Vec<IrregularSample>) -> Self {
        Self {
            samples,
            n_sensors: self.n_sensors,
            n_classes: self.n_classes,
            static_dim: self.static_dim,
            task_mode: self.task_mode,
            informative_ranking: self.informative_ranking.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.n_classes == 0 {
            return Err(Error::Schema("n_sensors and n_classes must be positive".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            s.validate_grid()?;
            if s.n_sensors() != self.n_sensors {
                return Err(Error::Schema(format!(
                    "sample `{}` has {} sensors, dataset declares {}",
                    s.id,
                    s.n_sensors(),
                    self.n_sensors
                )));
            }
            let d = s.static_features.as_ref().map_or(0, Vec::len);
            if d != self.static_dim {
                return Err(Error::Schema(format!(
                    "sample `{}` has {d} static features, dataset declares {}",
                    s.id, self.static_dim
                )));
            }
            match (&s.label, self.task_mode) {
                (Label::Class(c), TaskMode::Multiclass) if *c < self.n_classes => {}
                (Label::Multi(v), TaskMode::Multilabel)
                    if v.len() == self.n_classes && v.iter().all(|&b| b <= 1) => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "sample `{}` has a label incompatible with {:?} over {} classes",
                        s.id, self.task_mode, self.n_classes
                    )))
                }
            }
            for (vrow, mrow) in s.values.iter().zip(&s.mask) {
                if vrow.iter().zip(mrow).any(|(&v, &m)| m == 0 && v != 0.0) {
                    return Err(Error::Schema(format!(
                        "sample `{}` has a nonzero value in an unobserved cell",
                        s.id
                    )));
                }
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate sample id `{}`", s.id)));
            }
        }
        if let Some(r) = &self.informative_ranking {
            let distinct: HashSet<_> = r.iter().collect();
            if distinct.len() != r.len() || r.iter().any(|&v| v >= self.n_sensors) {
                return Err(Error::Schema(
                    "informative_ranking must list distinct sensor indices".into(),
                ));
            }
        }
        Ok(())
    }

    /// Class index per sample (multiclass only).
    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.label.class()).collect()
    }
}

/// Fraction of grid cells with no observation across the whole dataset.
pub fn missing_ratio(dataset: &Dataset) -> Result<f64> {
    let total: usize = dataset
        .samples
        .iter()
        .map(|s| s.len() * s.n_sensors())
        .sum();
    if total == 0 {
        return Err(Error::Validation("missing_ratio of an empty dataset".into()));
    }
    let observed: usize = dataset.samples.iter().map(IrregularSample::observed_cells).sum();
    Ok(1.0 - observed as f64 / total as f64)
}
