//! Dataset format, generator and split properties.

mod common;

use proptest::prelude::*;
use rand::Rng;
use wavegnn::dataset::{
    generate_synthetic, leave_sensors_out, load_jsonl, missing_ratio, read_jsonl, save_jsonl, stratified_split,
    write_jsonl, Dataset, SensorDropSpec, SignalMode, SplitRatios, SyntheticConfig, TaskMode,
};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny.jsonl");

fn to_text(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    write_jsonl(ds, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[test]
fn shipped_fixture_round_trips_byte_for_byte() {
    let original = std::fs::read_to_string(FIXTURE).unwrap();
    let ds = load_jsonl(FIXTURE).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(strip_ws(&to_text(&ds)), strip_ws(&original));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("again.jsonl");
    save_jsonl(&ds, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), ds);
}

#[test]
fn high_missing_ratio_is_hit_empirically() {
    let cfg = SyntheticConfig {
        n_samples: 2000,
        n_sensors: 8,
        timesteps: 16,
        missing_ratio: 0.9,
        ..SyntheticConfig::default()
    };
    let r = missing_ratio(&generate_synthetic(&cfg).unwrap()).unwrap();
    assert!((r - 0.9).abs() <= 0.01, "{r}");
}

#[test]
fn cross_mode_sensor_means_do_not_depend_on_class() {
    let cfg = SyntheticConfig {
        n_samples: 2000,
        signal_mode: SignalMode::Cross,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    // Per-sample sensor means are the independent units.
    for v in 0..ds.n_sensors {
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); ds.n_classes];
        for s in &ds.samples {
            let obs: Vec<f64> = (0..s.len()).filter(|&j| s.mask[j][v] == 1).map(|j| s.values[j][v]).collect();
            if !obs.is_empty() {
                by_class[s.label.class().unwrap()].push(obs.iter().sum::<f64>() / obs.len() as f64);
            }
        }
        let stats: Vec<(f64, f64, f64)> = by_class
            .iter()
            .map(|xs| {
                let n = xs.len() as f64;
                let m = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
                (m, var, n)
            })
            .collect();
        for a in 0..stats.len() {
            for b in a + 1..stats.len() {
                let (ma, va, na) = stats[a];
                let (mb, vb, nb) = stats[b];
                let se = (va / na + vb / nb).sqrt();
                assert!((ma - mb).abs() < 3.0 * se, "sensor {v}, classes {a}/{b}: {ma} vs {mb}, se {se}");
            }
        }
    }
}

fn small_cfg(seed: u64, n_sensors: usize, static_dim: usize) -> SyntheticConfig {
    SyntheticConfig {
        n_samples: 12,
        n_sensors,
        timesteps: 6,
        n_classes: 3,
        static_dim,
        seed,
        ..SyntheticConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialization_is_lossless(seed in any::<u64>(), n in 2usize..5, d in 0usize..3) {
        let ds = generate_synthetic(&small_cfg(seed, n, d)).unwrap();
        let text = to_text(&ds);
        let back = read_jsonl(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(to_text(&back), text);
    }

    #[test]
    fn multilabel_serialization_is_lossless(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let samples = (0..5)
            .map(|i| {
                let mut s = common::random_sample(&mut r, 3, 4, 0, 2, 0.5);
                s.id = format!("m{i}");
                s.label = wavegnn::dataset::Label::Multi((0..4).map(|_| u8::from(r.random_bool(0.5))).collect());
                s
            })
            .collect();
        let ds = Dataset::new(samples, 3, 4, 0, TaskMode::Multilabel).unwrap();
        prop_assert_eq!(read_jsonl(to_text(&ds).as_bytes()).unwrap(), ds);
    }

    #[test]
    fn generation_is_reproducible(seed in any::<u64>()) {
        let cfg = small_cfg(seed, 4, 1);
        prop_assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn leave_out_is_idempotent(seed in any::<u64>(), ratio in 0.0f64..0.6, fixed in any::<bool>()) {
        let ds = generate_synthetic(&small_cfg(seed, 6, 0)).unwrap();
        let spec = if fixed {
            SensorDropSpec::fixed(ratio, ds.informative_ranking.clone().unwrap())
        } else {
            SensorDropSpec::random(ratio, seed)
        };
        let once = leave_sensors_out(&ds, &spec).unwrap();
        let twice = leave_sensors_out(&once, &spec).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn split_partitions_the_ids(seed in any::<u64>(), n_samples in 3usize..60) {
        let cfg = SyntheticConfig { n_samples, ..small_cfg(seed, 2, 0) };
        let ds = generate_synthetic(&cfg).unwrap();
        let sp = stratified_split(&ds, SplitRatios::default(), seed).unwrap();
        let mut ids: Vec<&str> = [&sp.train, &sp.val, &sp.test]
            .iter()
            .flat_map(|d| d.samples.iter().map(|s| s.id.as_str()))
            .collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        prop_assert_eq!(before, ids.len());
        let mut all: Vec<&str> = ds.samples.iter().map(|s| s.id.as_str()).collect();
        all.sort_unstable();
        prop_assert_eq!(ids, all);
    }
}
