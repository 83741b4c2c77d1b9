//! `wavegnn-ds-v1` JSONL reader and writer.
//!
//! The first line is a header object; each following line is one sample.
//! Floats are written with 17 significant digits so a save/load round trip
//! is bit-exact.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

use super::{Dataset, IrregularSample, Label, TaskMode};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "wavegnn-ds-v1";

/// `%.17g`-style rendering of a finite `f64`.
///
/// Negative zero is written as `-0.0` so its sign survives parsing.
pub fn format_f64(x: f64) -> String {
    debug_assert!(x.is_finite());
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if x < 0.0 { "-" } else { "" };
    let digits: String = mant.chars().filter(char::is_ascii_digit).collect();
    if !(-4..17).contains(&exp) {
        let frac = digits[1..].trim_end_matches('0');
        let m = if frac.is_empty() {
            digits[..1].to_string()
        } else {
            format!("{}.{frac}", &digits[..1])
        };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{m}e{esign}{:02}", exp.abs())
    } else if exp >= 0 {
        let split = exp as usize + 1;
        let int = &digits[..split];
        let frac = digits[split..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("{sign}0.{zeros}{}", digits.trim_end_matches('0'))
    }
}

/// Compact JSON with 17-significant-digit floats.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PreciseFormatter;

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        CompactFormatter.write_f32(writer, value)
    }
}

/// Serializes `value` as one line of precise compact JSON.
pub(crate) fn to_precise_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, PreciseFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(serde::Serialize, Deserialize)]
struct Header {
    schema: String,
    n_sensors: usize,
    n_classes: usize,
    static_dim: usize,
    task_mode: TaskMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    informative_ranking: Option<Vec<usize>>,
}

#[derive(serde::Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    timestamps: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<u8>>,
    #[serde(rename = "static")]
    static_features: Option<Vec<f64>>,
    label: Label,
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        schema: SCHEMA.to_string(),
        n_sensors: dataset.n_sensors,
        n_classes: dataset.n_classes,
        static_dim: dataset.static_dim,
        task_mode: dataset.task_mode,
        informative_ranking: dataset.informative_ranking.clone(),
    };
    let io_err = |e| Error::io("<writer>", e);
    writeln!(out, "{}", to_precise_json(&header)?).map_err(io_err)?;
    for s in &dataset.samples {
        let rec = Record {
            id: s.id.clone(),
            timestamps: s.timestamps.clone(),
            values: s.values.clone(),
            mask: s.mask.clone(),
            static_features: s.static_features.clone(),
            label: s.label.clone(),
        };
        writeln!(out, "{}", to_precise_json(&rec)?).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut header: Option<Header> = None;
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |e: serde_json::Error| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        };
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(parse)?;
                if h.schema != SCHEMA {
                    return Err(Error::Schema(format!(
                        "unsupported schema `{}` (expected `{SCHEMA}`)",
                        h.schema
                    )));
                }
                header = Some(h);
            }
            Some(_) => {
                let r: Record = serde_json::from_str(&line).map_err(parse)?;
                let sample = IrregularSample {
                    id: r.id,
                    timestamps: r.timestamps,
                    values: r.values,
                    mask: r.mask,
                    static_features: r.static_features,
                    label: r.label,
                };
                samples.push(sample);
            }
        }
    }
    let header = header.ok_or_else(|| Error::Schema("no samples".into()))?;
    if samples.is_empty() {
        return Err(Error::Schema("no samples".into()));
    }
    let ds = Dataset {
        samples,
        n_sensors: header.n_sensors,
        n_classes: header.n_classes,
        static_dim: header.static_dim,
        task_mode: header.task_mode,
        informative_ranking: header.informative_ranking,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_jsonl(dataset, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(file)
}
