//! Paired cross-modal datasets: in-memory types, the line-delimited file
//! format and the synthetic clustered generator.
//!
//! File layout: one JSON header line
//! `{"format":"xmodal-pairs/1","dim_a":D,"dim_b":E,"n_classes":C}` followed
//! by one record per pair,
//! `id<TAB>class-or-dash<TAB>features_a (comma separated)<TAB>features_b`.
//! Numbers are written in shortest round-trip decimal form, so a save/load
//! cycle is lossless.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngSeed};

pub const DATASET_FORMAT: &str = "xmodal-pairs/1";

/// One matching pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub features_a: Vec<f64>,
    pub features_b: Vec<f64>,
    pub class_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim_a: usize,
    pub dim_b: usize,
    pub n_classes: usize,
    pub samples: Vec<PairedSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dim_a: usize,
    dim_b: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(dim_a: usize, dim_b: usize, n_classes: usize) -> Self {
        Dataset {
            dim_a,
            dim_b,
            n_classes,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.class_label).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.class_label.is_some()).count()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Checks sample `i` against the header and returns a description of the
    /// first problem found.
    fn check_sample(&self, s: &PairedSample) -> std::result::Result<(), String> {
        if s.id.is_empty() || s.id.contains(['\t', '\n', '\r']) {
            return Err(format!("invalid id {:?}", s.id));
        }
        if s.features_a.len() != self.dim_a {
            return Err(format!(
                "features_a has {} values, header declares {}",
                s.features_a.len(),
                self.dim_a
            ));
        }
        if s.features_b.len() != self.dim_b {
            return Err(format!(
                "features_b has {} values, header declares {}",
                s.features_b.len(),
                self.dim_b
            ));
        }
        if let Some(c) = s.class_label {
            if c >= self.n_classes {
                return Err(format!("class {c} out of range for {} classes", self.n_classes));
            }
        }
        if s.features_a.iter().chain(&s.features_b).any(|v| !v.is_finite()) {
            return Err("non-finite feature value".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            self.check_sample(s)
                .map_err(|msg| Error::Config(format!("sample {i}: {msg}")))?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate id {:?}", s.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        let header = Header {
            format: DATASET_FORMAT.to_string(),
            dim_a: self.dim_a,
            dim_b: self.dim_b,
            n_classes: self.n_classes,
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            line.push_str(&s.id);
            line.push('\t');
            match s.class_label {
                Some(c) => write!(line, "{c}").unwrap(),
                None => line.push('-'),
            }
            line.push('\t');
            push_csv(&mut line, &s.features_a);
            line.push('\t');
            push_csv(&mut line, &s.features_b);
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))??;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("malformed header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::VersionMismatch {
                found: header.format,
                expected: DATASET_FORMAT.into(),
            });
        }
        let mut ds = Dataset::new(header.dim_a, header.dim_b, header.n_classes);
        let mut ids = HashSet::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(
                    line_no,
                    format!("expected 4 tab-separated fields, got {}", fields.len()),
                ));
            }
            let class_label = match fields[1] {
                "-" => None,
                s => Some(
                    s.parse::<usize>()
                        .map_err(|_| parse_err(line_no, format!("invalid class {s:?}")))?,
                ),
            };
            let sample = PairedSample {
                id: fields[0].to_string(),
                features_a: parse_csv(fields[2]).map_err(|m| parse_err(line_no, format!("features_a: {m}")))?,
                features_b: parse_csv(fields[3]).map_err(|m| parse_err(line_no, format!("features_b: {m}")))?,
                class_label,
            };
            ds.check_sample(&sample).map_err(|m| parse_err(line_no, m))?;
            if !ids.insert(sample.id.clone()) {
                return Err(parse_err(line_no, format!("duplicate id {:?}", sample.id)));
            }
            ds.samples.push(sample);
        }
        Ok(ds)
    }
}

pub(crate) fn push_csv(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
}

pub(crate) fn parse_csv(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| format!("invalid number {v:?}"))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("non-finite number {v:?}"))
            }
        })
        .collect()
}

/// Parameters of the synthetic clustered generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub pairs_per_class: usize,
    pub latent_dim_true: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Standard deviation of a pair's true latent around its class center.
    pub within_class_noise: f64,
    /// Standard deviation of the per-modality feature noise.
    pub cross_modal_noise: f64,
    pub unlabeled_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 20,
            pairs_per_class: 150,
            latent_dim_true: 16,
            dim_a: 64,
            dim_b: 48,
            within_class_noise: 0.2,
            cross_modal_noise: 0.1,
            unlabeled_fraction: 0.5,
            seed: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("pairs_per_class", self.pairs_per_class),
            ("latent_dim_true", self.latent_dim_true),
            ("dim_a", self.dim_a),
            ("dim_b", self.dim_b),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.within_class_noise >= 0.0 && self.cross_modal_noise >= 0.0) {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::Config("unlabeled_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Train / validation / test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Draws class centers and per-modality linear maps, then generates
/// `pairs_per_class` pairs per class. Labels of `unlabeled_fraction` of each
/// class are stripped; each class is split 70/15/15 into train, validation
/// and test.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = RngSeed(spec.seed).rng();
    let k = spec.latent_dim_true;
    let gauss = |rng: &mut crate::math::Rng| -> f64 { StandardNormal.sample(rng) };

    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..k).map(|_| gauss(&mut rng)).collect())
        .collect();
    let map_scale = 1.0 / (k as f64).sqrt();
    let mut random_map = |rows: usize| {
        let data = (0..rows * k).map(|_| map_scale * gauss(&mut rng)).collect();
        Matrix::from_vec(rows, k, data).expect("shape matches")
    };
    let map_a = random_map(spec.dim_a);
    let map_b = random_map(spec.dim_b);

    let mut splits = Splits {
        train: Dataset::new(spec.dim_a, spec.dim_b, spec.n_classes),
        validation: Dataset::new(spec.dim_a, spec.dim_b, spec.n_classes),
        test: Dataset::new(spec.dim_a, spec.dim_b, spec.n_classes),
    };
    let n = spec.pairs_per_class;
    let n_unlabeled = (spec.unlabeled_fraction * n as f64).round() as usize;
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;

    for (class, center) in centers.iter().enumerate() {
        let mut samples: Vec<PairedSample> = (0..n)
            .map(|i| {
                let z: Vec<f64> = center
                    .iter()
                    .map(|c| c + spec.within_class_noise * gauss(&mut rng))
                    .collect();
                let mut observe = |map: &Matrix| -> Vec<f64> {
                    map.mul_vec(&z)
                        .into_iter()
                        .map(|v| v + spec.cross_modal_noise * gauss(&mut rng))
                        .collect()
                };
                let features_a = observe(&map_a);
                let features_b = observe(&map_b);
                PairedSample {
                    id: format!("pair-{:06}", class * n + i),
                    features_a,
                    features_b,
                    class_label: Some(class),
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..n_unlabeled] {
            samples[i].class_label = None;
        }

        order.shuffle(&mut rng);
        let mut bucket = vec![0u8; n];
        for &i in &order[n_train..n_train + n_val] {
            bucket[i] = 1;
        }
        for &i in &order[n_train + n_val..] {
            bucket[i] = 2;
        }
        for (s, b) in samples.into_iter().zip(bucket) {
            match b {
                0 => splits.train.samples.push(s),
                1 => splits.validation.samples.push(s),
                _ => splits.test.samples.push(s),
            }
        }
    }
    Ok(splits)
}
