use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, WaveGnn};
use crate::dataset::io::to_precise_json;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// A model plus whatever run settings were stored alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: WaveGnn,
    pub run: Option<serde_json::Value>,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Doc {
    config: ConfigDoc,
    params: BTreeMap<String, ParamDoc>,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let params = ckpt
        .model
        .params
        .iter()
        .map(|(name, p)| {
            let doc = ParamDoc {
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
                trainable: p.trainable,
            };
            (name.clone(), doc)
        })
        .collect();
    let doc = Doc {
        config: ConfigDoc {
            model: ckpt.model.config.clone(),
            run: ckpt.run.clone(),
        },
        params,
    };
    writeln!(out, "{}", to_precise_json(&doc)?).map_err(|e| Error::io("<writer>", e))
}

/// Parses a checkpoint and validates every shape against the stored config.
pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let doc: Doc = serde_json::from_reader(input)?;
    let mut params = ParamStore::new();
    for (name, p) in doc.params {
        let value = Tensor::new(p.shape, p.data).map_err(|e| Error::Schema(format!("parameter `{name}`: {e}")))?;
        if !value.is_finite() {
            return Err(Error::Schema(format!("parameter `{name}` has non-finite entries")));
        }
        params.insert_with(name, value, p.trainable)?;
    }
    let model = WaveGnn::from_parts(doc.config.model, params)?;
    Ok(Checkpoint {
        model,
        run: doc.config.run,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
