//! Seeded generator of irregular multivariate series with known class
//! structure.
//!
//! * `intra`: each class shifts every sensor's mean level and the frequency of
//!   its sinusoid.
//! * `cross`: sensors come in designated pairs `(2k, 2k+1)`. The second member
//!   is a lagged, signed copy of the first mixed with independent noise, and
//!   the sign of each pair's coupling carries one bit of the class index.
//!   Every sensor is a unit-variance Gaussian process whatever the class, so
//!   no single sensor reveals the label.
//! * `both`: the sum of the two signals.
//!
//! Class structure depends only on `(n_sensors, n_classes)`, never on the
//! sample seed, so different seeds draw fresh samples from one task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, IrregularSample, Label, TaskMode};
use crate::error::{Error, Result};

const STRUCTURE_SEED: u64 = 0x5741_5645_474e_4e00;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SignalMode {
    Intra,
    Cross,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_sensors: usize,
    pub timesteps: usize,
    pub n_classes: usize,
    /// Probability that any single cell is unobserved.
    pub missing_ratio: f64,
    pub signal_mode: SignalMode,
    /// Multiplicative jitter on grid intervals, in `[0, 1)`.
    pub jitter: f64,
    pub seed: u64,
    /// Amplitude of the class-dependent mean shifts (intra signal).
    pub intra_strength: f64,
    /// Coupling correlation of the first pair carrying each class bit.
    pub coupling_strong: f64,
    /// Coupling correlation of any further pairs carrying the same bit.
    pub coupling_weak: f64,
    /// Lag, in grid steps, of the coupled copy.
    pub lag: usize,
    /// Standard deviation of white measurement noise.
    pub noise: f64,
    /// Uninformative static features per sample.
    pub static_dim: usize,
    /// AR(1) coefficient of the latent sensor paths, in `[0, 1)`.
    pub persistence: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 600,
            n_sensors: 6,
            timesteps: 32,
            n_classes: 4,
            missing_ratio: 0.6,
            signal_mode: SignalMode::Both,
            jitter: 0.2,
            seed: 0,
            intra_strength: 1.0,
            coupling_strong: 0.95,
            coupling_weak: 0.7,
            lag: 1,
            noise: 0.1,
            static_dim: 0,
            persistence: 0.9,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_samples == 0 || self.n_sensors == 0 || self.timesteps == 0 || self.n_classes == 0 {
            return fail("n_samples, n_sensors, timesteps and n_classes must be positive".into());
        }
        if !(0.0..=0.98).contains(&self.missing_ratio) {
            return fail(format!("missing_ratio must lie in [0, 0.98], got {}", self.missing_ratio));
        }
        if self.signal_mode != SignalMode::Intra && self.n_sensors < 2 {
            return fail("cross-sensor signal needs at least 2 sensors".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return fail(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        for (name, r) in [("coupling_strong", self.coupling_strong), ("coupling_weak", self.coupling_weak)] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return fail(format!("persistence must lie in [0, 1), got {}", self.persistence));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.intra_strength.is_finite()) {
            return fail("noise must be non-negative and strengths finite".into());
        }
        Ok(())
    }
}

/// One coupled sensor pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledPair {
    pub leader: usize,
    pub follower: usize,
    pub bit: usize,
    pub strength: f64,
}

/// Fixed class structure shared by every sample of a task.
#[derive(Clone, Debug)]
struct Structure {
    means: Vec<Vec<f64>>,
    freqs: Vec<Vec<f64>>,
    pairs: Vec<CoupledPair>,
}

fn class_bits(n_classes: usize) -> usize {
    (usize::BITS - (n_classes.max(1) - 1).leading_zeros()) as usize
}

/// Designated pairs: `(2k, 2k+1)` for `k < min(n/2, 2·bits)`, bit `k mod bits`.
pub fn coupled_pairs(cfg: &SyntheticConfig) -> Vec<CoupledPair> {
    let bits = class_bits(cfg.n_classes);
    if bits == 0 || cfg.signal_mode == SignalMode::Intra {
        return Vec::new();
    }
    let count = (cfg.n_sensors / 2).min(2 * bits);
    (0..count)
        .map(|k| CoupledPair {
            leader: 2 * k,
            follower: 2 * k + 1,
            bit: k % bits,
            strength: if k < bits { cfg.coupling_strong } else { cfg.coupling_weak },
        })
        .collect()
}

fn structure(cfg: &SyntheticConfig) -> Structure {
    let seed = STRUCTURE_SEED ^ ((cfg.n_sensors as u64) << 32) ^ cfg.n_classes as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, n) = (cfg.n_classes, cfg.n_sensors);
    let intra = cfg.signal_mode != SignalMode::Cross;
    let mut means = vec![vec![0.0; n]; c];
    let mut freqs = vec![vec![0.0; n]; c];
    for v in 0..n {
        // a random permutation of evenly spaced levels keeps classes apart on every sensor
        let mut levels: Vec<f64> = (0..c)
            .map(|k| if c == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (c - 1) as f64 })
            .collect();
        for i in (1..c).rev() {
            levels.swap(i, rng.random_range(0..=i));
        }
        for k in 0..c {
            let f: f64 = 1.0 + rng.random_range(0..3) as f64;
            if intra {
                means[k][v] = cfg.intra_strength * levels[k];
                freqs[k][v] = f;
            }
        }
    }
    Structure {
        means,
        freqs,
        pairs: coupled_pairs(cfg),
    }
}

/// Sensors ordered from most to least informative under the generator's own
/// class structure.
///
/// Pairs whose class bit has no other carrier come first, then stronger
/// couplings; every leader precedes every follower.
pub fn informative_ranking(cfg: &SyntheticConfig) -> Vec<usize> {
    let mut pairs = coupled_pairs(cfg);
    let carriers = |bit: usize| pairs.iter().filter(|p| p.bit == bit).count();
    let keys: Vec<(usize, f64)> = pairs.iter().map(|p| (carriers(p.bit), -p.strength)).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| keys[a].0.cmp(&keys[b].0).then(keys[a].1.total_cmp(&keys[b].1)));
    pairs = order.into_iter().map(|i| pairs[i]).collect();
    let mut ranking: Vec<usize> = pairs.iter().map(|p| p.leader).collect();
    ranking.extend(pairs.iter().map(|p| p.follower));
    let rest: Vec<usize> = (0..cfg.n_sensors).filter(|v| !ranking.contains(v)).collect();
    ranking.extend(rest);
    ranking
}

/// Stationary AR(1) path with unit marginal variance.
fn ar_path(rng: &mut ChaCha8Rng, len: usize, coef: f64) -> Vec<f64> {
    let innov = (1.0 - coef * coef).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(x);
        let e: f64 = rng.sample(StandardNormal);
        x = coef * x + innov * e;
    }
    out
}

/// Draws a dataset. Deterministic in `cfg` (including `cfg.seed`).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let st = structure(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t_len, c) = (cfg.n_sensors, cfg.timesteps, cfg.n_classes);
    let width = (n_digits(cfg.n_samples)).max(4);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let class = i % c;

        let mut timestamps = Vec::with_capacity(t_len);
        let mut t = 0.0;
        for j in 0..t_len {
            if j > 0 {
                let u: f64 = rng.random_range(-1.0..=1.0);
                t += 1.0 + cfg.jitter * u;
            }
            timestamps.push(t);
        }

        // latent columns: one AR path per sensor, with burn-in for the lag
        let burn = cfg.lag;
        let mut latent: Vec<Vec<f64>> = (0..n).map(|_| ar_path(&mut rng, t_len + burn, cfg.persistence)).collect();
        if cfg.signal_mode != SignalMode::Intra {
            for p in &st.pairs {
                let sign = if (class >> p.bit) & 1 == 1 { 1.0 } else { -1.0 };
                let mix = (1.0 - p.strength * p.strength).sqrt();
                let leader = latent[p.leader].clone();
                let own = &mut latent[p.follower];
                for j in 0..t_len + burn {
                    let lagged = if j >= cfg.lag { leader[j - cfg.lag] } else { 0.0 };
                    own[j] = sign * p.strength * lagged + mix * own[j];
                }
            }
        }

        let phases: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let mut values = vec![vec![0.0; n]; t_len];
        let mut mask = vec![vec![0u8; n]; t_len];
        for j in 0..t_len {
            for v in 0..n {
                let mut x = 0.0;
                if cfg.signal_mode != SignalMode::Cross {
                    let omega = std::f64::consts::TAU * st.freqs[class][v] / t_len as f64;
                    x += st.means[class][v] + 0.5 * (omega * timestamps[j] + phases[v]).sin();
                }
                if cfg.signal_mode != SignalMode::Intra {
                    x += latent[v][j + burn];
                }
                let e: f64 = rng.sample(StandardNormal);
                x += cfg.noise * e;
                let observed = rng.random::<f64>() >= cfg.missing_ratio;
                mask[j][v] = u8::from(observed);
                values[j][v] = if observed { x } else { 0.0 };
            }
        }
        let static_features = (cfg.static_dim > 0).then(|| {
            (0..cfg.static_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        });
        samples.push(IrregularSample::new(
            format!("s{i:0width$}"),
            timestamps,
            values,
            mask,
            static_features,
            Label::Class(class),
        )?);
    }
    Dataset::new(samples, n, c, cfg.static_dim, TaskMode::Multiclass)?
        .with_ranking(informative_ranking(cfg))
}

fn n_digits(x: usize) -> usize {
    x.max(1).ilog10() as usize + 1
}
