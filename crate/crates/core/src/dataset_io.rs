//! On-disk containers for datasets, checkpoints and reports.
//!
//! A container is a directory holding `manifest.json` and one raw blob per
//! tensor under `blobs/<name>.f32`. Blobs are little-endian `f32` in
//! row-major order; the manifest records names, shapes and file names and
//! carries free-form JSON metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dataset, DatasetSplit};
use crate::error::{ensure, Error, Result};
use crate::phantom::{compute_attributes, LabeledSample};

pub const FORMAT_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_DIR: &str = "blobs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub kind: String,
    pub entries: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: Value,
}

/// A named f32 tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Contract,
            "tensor `{name}` has {} values for shape {shape:?}",
            data.len()
        );
        Ok(NamedTensor { name, shape, data })
    }

    /// Bitwise equality, so that NaN payloads and signed zeros also count.
    pub fn bitwise_eq(&self, other: &NamedTensor) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_name(name: &str) -> Result<()> {
    ensure!(
        !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')),
        Persistence,
        "tensor name `{name}` must be non-empty ASCII [A-Za-z0-9._-]"
    );
    Ok(())
}

/// Writes a container, replacing any previous manifest in `dir`.
pub fn write_container(dir: &Path, kind: &str, tensors: &[NamedTensor], metadata: Value) -> Result<PathBuf> {
    let blob_dir = dir.join(BLOB_DIR);
    fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        check_name(&t.name)?;
        ensure!(
            !entries.iter().any(|e: &TensorEntry| e.name == t.name),
            Persistence,
            "duplicate tensor name `{}`",
            t.name
        );
        let file = format!("{BLOB_DIR}/{}.f32", t.name);
        let mut bytes = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "float32".into(),
            byte_order: "little".into(),
            file,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.into(),
        kind: kind.into(),
        entries,
        metadata,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    let major = manifest.version.split('.').next().unwrap_or("");
    let expected_major = FORMAT_VERSION.split('.').next().unwrap_or("");
    ensure!(
        major == expected_major,
        Persistence,
        "unsupported container version {} (this build reads {expected_major}.x)",
        manifest.version
    );
    Ok(manifest)
}

/// Reads and validates a container. When `kind` is given the manifest's kind must match.
pub fn read_container(dir: &Path, kind: Option<&str>) -> Result<(Manifest, Vec<NamedTensor>)> {
    let manifest = read_manifest(dir)?;
    if let Some(kind) = kind {
        ensure!(
            manifest.kind == kind,
            Persistence,
            "expected a `{kind}` container at {}, found `{}`",
            dir.display(),
            manifest.kind
        );
    }
    let mut tensors = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        ensure!(
            entry.dtype == "float32" && entry.byte_order == "little",
            Persistence,
            "tensor `{}` has unsupported encoding {}/{}",
            entry.name,
            entry.dtype,
            entry.byte_order
        );
        check_name(&entry.name)?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Persistence(format!("missing blob {} for `{}`", path.display(), entry.name))
            }
            _ => Error::io(&path, e),
        })?;
        let expected = entry.shape.iter().product::<usize>() as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data,
        });
    }
    Ok((manifest, tensors))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))
}

/// Writes a CSV file with a header row, `.` decimals and `\n` line endings.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| Error::Persistence(format!("{}: {e}", path.display()));
    writer.write_record(header).map_err(to_err)?;
    for row in rows {
        writer.write_record(row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Formats a float for reports: shortest round-trip form, `inf`/`-inf`/`nan`
/// for non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    n_samples: usize,
    attribute_names: Vec<String>,
    split: DatasetSplit,
}

pub const DATASET_KIND: &str = "dataset";

/// Saves a dataset (images, masks, attributes, optional labels, split).
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let n = dataset.len();
    let mut tensors = Vec::new();
    if let Some((h, w)) = dataset.image_size() {
        let mut images = Vec::with_capacity(n * h * w);
        let mut masks = Vec::with_capacity(n * h * w);
        let mut attrs = Vec::with_capacity(n * 3);
        for s in &dataset.samples {
            ensure!(
                s.image.dim() == (h, w) && s.region_mask.dim() == (h, w),
                Data,
                "all samples must share one image shape"
            );
            images.extend(s.image.iter().copied());
            masks.extend(s.region_mask.iter().map(|&l| f32::from(l)));
            attrs.extend(s.attributes.to_array().iter().map(|&v| v as f32));
        }
        tensors.push(NamedTensor::new("images", vec![n, 1, h, w], images)?);
        tensors.push(NamedTensor::new("masks", vec![n, h, w], masks)?);
        tensors.push(NamedTensor::new("attributes", vec![n, 3], attrs)?);
        if let Some(labels) = &dataset.labels {
            ensure!(labels.len() == n, Data, "{} labels for {n} samples", labels.len());
            tensors.push(NamedTensor::new("labels", vec![n], labels.iter().map(|&l| l as f32).collect())?);
        }
    }
    let meta = DatasetMeta {
        n_samples: n,
        attribute_names: dataset.attribute_names.clone(),
        split: dataset.split.clone(),
    };
    write_container(dir, DATASET_KIND, &tensors, serde_json::to_value(meta)?)
}

fn take<'a>(tensors: &'a [NamedTensor], name: &str) -> Option<&'a NamedTensor> {
    tensors.iter().find(|t| t.name == name)
}

/// Loads a dataset saved by [`save_dataset`] or written by an external tool
/// following the same layout (see the README for the import format).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (manifest, tensors) = read_container(dir, Some(DATASET_KIND))?;
    let meta: DatasetMeta = serde_json::from_value(manifest.metadata)
        .map_err(|e| Error::Persistence(format!("dataset metadata: {e}")))?;
    let n = meta.n_samples;
    let mut samples = Vec::with_capacity(n);
    if n > 0 {
        let images = take(&tensors, "images").ok_or_else(|| Error::Persistence("missing `images`".into()))?;
        let masks = take(&tensors, "masks").ok_or_else(|| Error::Persistence("missing `masks`".into()))?;
        ensure!(
            images.shape.len() == 4 && images.shape[0] == n && images.shape[1] == 1,
            Persistence,
            "`images` must have shape [{n}, 1, H, W], got {:?}",
            images.shape
        );
        let (h, w) = (images.shape[2], images.shape[3]);
        ensure!(masks.shape == vec![n, h, w], Persistence, "`masks` must have shape [{n}, {h}, {w}]");
        let images = Array4::from_shape_vec((n, 1, h, w), images.data.clone())
            .map_err(|e| Error::Persistence(e.to_string()))?;
        let attributes = take(&tensors, "attributes");
        for i in 0..n {
            let image = images.slice(ndarray::s![i, 0, .., ..]).to_owned();
            let mut mask = Array2::<u8>::zeros((h, w));
            for (m, &v) in mask.iter_mut().zip(&masks.data[i * h * w..(i + 1) * h * w]) {
                ensure!(
                    v >= 0.0 && v <= 255.0 && v.fract() == 0.0,
                    Persistence,
                    "mask value {v} is not a label"
                );
                *m = v as u8;
            }
            let areas = compute_attributes(mask.view())?;
            if let Some(a) = attributes {
                let stored = &a.data[i * 3..i * 3 + 3];
                let computed = areas.to_array();
                ensure!(
                    stored.iter().zip(&computed).all(|(s, c)| f64::from(*s) == *c),
                    Persistence,
                    "stored attributes of sample {i} disagree with its mask"
                );
            }
            samples.push(LabeledSample {
                image,
                region_mask: mask,
                attributes: areas,
            });
        }
    }
    let labels = match take(&tensors, "labels") {
        Some(t) => {
            ensure!(t.shape == vec![n], Persistence, "`labels` must have shape [{n}]");
            Some(t.data.iter().map(|&v| v as usize).collect())
        }
        None => None,
    };
    if n > 0 {
        meta.split.validate(n)?;
    }
    Ok(Dataset {
        samples,
        split: meta.split,
        attribute_names: meta.attribute_names,
        labels,
    })
}

/// Persisted model parameters plus the state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// Snapshot of the configuration that produced the parameters.
    pub config: Value,
    pub parameters: Vec<NamedTensor>,
    pub training_state: Option<OptimizerState>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub epoch: usize,
    pub wall_time_secs: f64,
}

/// Adam moments keyed by parameter name, with per-parameter update counts.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moments: Vec<NamedTensor>,
    pub second_moments: Vec<NamedTensor>,
    pub update_counts: Vec<(String, u64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: Value,
    provenance: Provenance,
    parameter_names: Vec<String>,
    training_state: Option<TrainingStateMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingStateMeta {
    step: u64,
    update_counts: Vec<(String, u64)>,
}

const M_PREFIX: &str = "adam_m.";
const V_PREFIX: &str = "adam_v.";

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<PathBuf> {
    let mut tensors = ckpt.parameters.clone();
    let mut state_meta = None;
    if let Some(state) = &ckpt.training_state {
        for (prefix, moments) in [(M_PREFIX, &state.first_moments), (V_PREFIX, &state.second_moments)] {
            for t in moments {
                tensors.push(NamedTensor {
                    name: format!("{prefix}{}", t.name),
                    ..t.clone()
                });
            }
        }
        state_meta = Some(TrainingStateMeta {
            step: state.step,
            update_counts: state.update_counts.clone(),
        });
    }
    let meta = CheckpointMeta {
        config: ckpt.config.clone(),
        provenance: ckpt.provenance.clone(),
        parameter_names: ckpt.parameters.iter().map(|t| t.name.clone()).collect(),
        training_state: state_meta,
    };
    write_container(dir, &ckpt.kind, &tensors, serde_json::to_value(meta)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let (manifest, tensors) = read_container(dir, None)?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.metadata)
        .map_err(|e| Error::Persistence(format!("checkpoint metadata: {e}")))?;
    let mut parameters = Vec::with_capacity(meta.parameter_names.len());
    for name in &meta.parameter_names {
        let t = take(&tensors, name)
            .ok_or_else(|| Error::Compatibility(format!("checkpoint lacks parameter `{name}`")))?;
        parameters.push(t.clone());
    }
    let training_state = match meta.training_state {
        Some(state) => {
            let strip = |prefix: &str| -> Vec<NamedTensor> {
                tensors
                    .iter()
                    .filter_map(|t| {
                        t.name.strip_prefix(prefix).map(|n| NamedTensor {
                            name: n.to_string(),
                            ..t.clone()
                        })
                    })
                    .collect()
            };
            Some(OptimizerState {
                step: state.step,
                first_moments: strip(M_PREFIX),
                second_moments: strip(V_PREFIX),
                update_counts: state.update_counts,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        kind: manifest.kind,
        config: meta.config,
        parameters,
        training_state,
        provenance: meta.provenance,
    })
}

/// Appends lines to a text file, creating it when needed.
pub fn append_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
