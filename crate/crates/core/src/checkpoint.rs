//! Model checkpoints.
//!
//! A checkpoint is a JSON header line followed by one line per parameter
//! tensor (`name<TAB>shape<TAB>values`, shape as `RxC` or `N`) and a final
//! `end` line. Values use shortest round-trip formatting, so a save/load
//! cycle is lossless.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{parse_csv, push_csv};
use crate::encoder::{EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::math::RngSeed;
use crate::optim::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "xmodal-ckpt/1";
const END_MARKER: &str = "end";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    encoder: EncoderSpec,
    n_classes: Option<usize>,
    tensors: usize,
    config: Option<TrainConfig>,
}

/// Trained parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, config: Option<TrainConfig>) -> Self {
        Checkpoint { params, config }
    }

    pub fn to_string_repr(&self) -> String {
        let tensors = self.params.tensors();
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            encoder: self.params.spec(),
            n_classes: self.params.n_classes(),
            tensors: tensors.len(),
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for t in tensors {
            out.push_str(&t.name);
            out.push('\t');
            let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&shape.join("x"));
            out.push('\t');
            push_csv(&mut out, t.data);
            out.push('\n');
        }
        out.push_str(END_MARKER);
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Corrupt("empty file".into()))?;
        let value: serde_json::Value =
            serde_json::from_str(first).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let format = value.get("format").and_then(|f| f.as_str()).unwrap_or_default();
        if format != CHECKPOINT_FORMAT {
            return Err(Error::VersionMismatch {
                found: format.to_string(),
                expected: CHECKPOINT_FORMAT.into(),
            });
        }
        let header: Header = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        header
            .encoder
            .validate()
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;

        // Shapes come from a template built from the header; values are then
        // overwritten tensor by tensor.
        let mut params = crate::encoder::init_params(&header.encoder, header.n_classes, RngSeed(0))?;
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();
        if expected.len() != header.tensors {
            return Err(Error::Corrupt(format!(
                "header lists {} tensors, architecture has {}",
                header.tensors,
                expected.len()
            )));
        }
        let mut slots = params.tensors_mut();
        for ((name, shape), (_, slot)) in expected.iter().zip(slots.iter_mut()) {
            let line = lines
                .next()
                .ok_or_else(|| Error::Corrupt(format!("truncated before tensor {name}")))?;
            let mut fields = line.split('\t');
            let (Some(got_name), Some(got_shape), Some(values), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Corrupt(format!("malformed line for tensor {name}")));
            };
            if got_name != name {
                return Err(Error::Corrupt(format!("expected tensor {name}, found {got_name}")));
            }
            let want_shape: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            if got_shape != want_shape.join("x") {
                return Err(Error::Corrupt(format!("tensor {name} has shape {got_shape}")));
            }
            let values = parse_csv(values).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
            if values.len() != slot.len() {
                return Err(Error::Corrupt(format!(
                    "tensor {name} has {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        drop(slots);
        match lines.next() {
            Some(END_MARKER) => {}
            Some(other) => return Err(Error::Corrupt(format!("unexpected line after tensors: {other:.40}"))),
            None => return Err(Error::Corrupt("missing end marker".into())),
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Corrupt("trailing data after end marker".into()));
        }
        if !params.is_finite() {
            return Err(Error::Corrupt("non-finite parameter".into()));
        }
        Ok(Checkpoint {
            params,
            config: header.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_string_repr().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::parse(&fs::read_to_string(path)?)
    }
}
