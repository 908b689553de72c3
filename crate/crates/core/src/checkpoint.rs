//! Named-tensor container used for model checkpoints and exported styles.
//!
//! Layout:
//!
//! ```text
//! pastiche-tensors <version> <manifest-bytes>\n
//! <manifest: pretty JSON, fixed key order>
//! <payload: little-endian f32 values of every tensor, in manifest order>
//! ```
//!
//! Every manifest entry records the tensor's name, shape, byte offset into
//! the payload and dtype. Saving a loaded file reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{ExtractorConfig, FeatureExtractor};
use crate::net::{ModelWeights, NetworkConfig};
use crate::style::{StyleBank, StyleLayer, StyleVector};
use crate::tensor::{Shape, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "pastiche-tensors";
const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Model {
        network: NetworkConfig,
        extractor: ExtractorConfig,
        styles: Vec<StyleEntry>,
    },
    Style {
        style: String,
        channels: Vec<usize>,
    },
}

/// Registry record for one style of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleEntry {
    pub name: String,
    /// Style image the row was trained against, if known.
    pub source: Option<String>,
    pub lambda_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    header: Header,
    tensors: Vec<TensorEntry>,
}

/// Header plus an ordered list of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().dims(),
                offset,
                dtype: DTYPE.to_string(),
            });
            offset += 4 * t.numel();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            header: self.header.clone(),
            tensors: entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        text.push('\n');
        let mut out = format!("{MAGIC} {FORMAT_VERSION} {}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Corrupt("missing header line".into()))?;
        let first = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Corrupt("header line is not text".into()))?;
        let mut parts = first.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(Error::Corrupt("not a pastiche tensor file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("missing format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let manifest_len: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("missing manifest length".into()))?;
        let start = newline + 1;
        let manifest_bytes = bytes
            .get(start..start + manifest_len)
            .ok_or_else(|| Error::Corrupt("manifest is truncated".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)
            .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: manifest.format_version, expected: FORMAT_VERSION });
        }
        let payload = &bytes[start + manifest_len..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected_offset = 0;
        for entry in &manifest.tensors {
            if entry.dtype != DTYPE {
                return Err(Error::Corrupt(format!("tensor `{}` has dtype {}", entry.name, entry.dtype)));
            }
            if entry.offset != expected_offset {
                return Err(Error::Corrupt(format!("tensor `{}` has a non-contiguous offset", entry.name)));
            }
            let [n, c, h, w] = entry.shape;
            let shape = Shape::new(n, c, h, w);
            let end = entry.offset + 4 * shape.numel();
            let raw = payload.get(entry.offset..end).ok_or_else(|| Error::Truncated {
                tensor: entry.name.clone(),
                start: entry.offset,
                end,
                available: payload.len(),
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((entry.name.clone(), Tensor::new(shape, data)?));
            expected_offset = end;
        }
        if payload.len() != expected_offset {
            return Err(Error::Corrupt(format!(
                "payload has {} trailing bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Self { header: manifest.header, tensors })
    }

    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(|(_, t)| 4 * t.numel()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        let i = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor `{name}`")))?;
        Ok(self.tensors.remove(i).1)
    }
}

fn row_tensor(values: &[f32]) -> Result<Tensor<f32>> {
    Tensor::new(Shape::new(1, values.len(), 1, 1), values.to_vec())
}

fn style_tensors(prefix: &str, layer_names: &[String], vector: &StyleVector<f32>) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::with_capacity(2 * layer_names.len());
    for (layer, l) in layer_names.iter().zip(&vector.layers) {
        out.push((format!("{prefix}/{layer}/gamma"), row_tensor(&l.gamma)?));
        out.push((format!("{prefix}/{layer}/beta"), row_tensor(&l.beta)?));
    }
    Ok(out)
}

fn take_style(container: &mut Container, prefix: &str, layer_names: &[String]) -> Result<StyleVector<f32>> {
    let layers = layer_names
        .iter()
        .map(|layer| {
            Ok(StyleLayer {
                gamma: container.take(&format!("{prefix}/{layer}/gamma"))?.into_data(),
                beta: container.take(&format!("{prefix}/{layer}/beta"))?.into_data(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StyleVector { layers })
}

/// A saved model: network, style bank, style registry and extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelWeights<f32>,
    pub extractor: ExtractorConfig,
    /// Extractor kernels to store; `None` means they are regenerated from
    /// the extractor seed.
    pub extractor_kernels: Option<Vec<Tensor<f32>>>,
    /// Registry metadata keyed by style name.
    pub registry: BTreeMap<String, StyleEntry>,
}

impl Checkpoint {
    pub fn new(model: ModelWeights<f32>, extractor: ExtractorConfig) -> Self {
        Self { model, extractor, extractor_kernels: None, registry: BTreeMap::new() }
    }

    pub fn feature_extractor(&self) -> Result<FeatureExtractor<f32>> {
        match &self.extractor_kernels {
            Some(k) => FeatureExtractor::from_kernels(self.extractor.clone(), k.clone()),
            None => FeatureExtractor::new(self.extractor.clone()),
        }
    }

    pub fn entry(&self, name: &str) -> StyleEntry {
        self.registry
            .get(name)
            .cloned()
            .unwrap_or_else(|| StyleEntry { name: name.to_string(), ..StyleEntry::default() })
    }

    fn layer_names(model: &ModelWeights<f32>) -> Vec<String> {
        model.layers().iter().map(|l| l.name.clone()).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let layer_names = Self::layer_names(&self.model);
        let mut tensors = Vec::new();
        for (name, k) in layer_names.iter().zip(self.model.kernels()) {
            tensors.push((format!("kernel/{name}"), k.clone()));
        }
        let bank = self.model.bank();
        for style in bank.names() {
            tensors.extend(style_tensors(&format!("style/{style}"), &layer_names, &bank.select(style)?)?);
        }
        if let Some(kernels) = &self.extractor_kernels {
            for (i, k) in kernels.iter().enumerate() {
                tensors.push((format!("extractor/{}", ExtractorConfig::tap_name(i)), k.clone()));
            }
        }
        let styles = bank.names().iter().map(|n| self.entry(n)).collect();
        Ok(Container {
            header: Header::Model {
                network: self.model.config().clone(),
                extractor: self.extractor.clone(),
                styles,
            },
            tensors,
        })
    }

    pub fn from_container(mut container: Container) -> Result<Self> {
        let Header::Model { network, extractor, styles } = container.header.clone() else {
            return Err(Error::Corrupt("file holds a style, not a model".into()));
        };
        network.validate()?;
        let layer_names: Vec<String> = network.layers().iter().map(|l| l.name.clone()).collect();
        let kernels = layer_names
            .iter()
            .map(|n| container.take(&format!("kernel/{n}")))
            .collect::<Result<Vec<_>>>()?;
        let mut bank = StyleBank::new(&network.channels())?;
        for entry in &styles {
            let vector = take_style(&mut container, &format!("style/{}", entry.name), &layer_names)?;
            bank.push_row(&entry.name, vector)?;
        }
        let extractor_kernels = if container.tensors.is_empty() {
            None
        } else {
            Some(
                (0..extractor.widths.len())
                    .map(|i| container.take(&format!("extractor/{}", ExtractorConfig::tap_name(i))))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        if let Some((name, _)) = container.tensors.first() {
            return Err(Error::Corrupt(format!("unexpected tensor `{name}`")));
        }
        let model = ModelWeights::from_parts(network, kernels, bank)?;
        let registry = styles.into_iter().map(|e| (e.name.clone(), e)).collect();
        let ckpt = Self { model, extractor, extractor_kernels, registry };
        ckpt.feature_extractor()?;
        Ok(ckpt)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.to_container()?.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::decode(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Writes one style's rows as a standalone file.
    pub fn export_style(&self, name: &str) -> Result<StyleFile> {
        Ok(StyleFile {
            name: name.to_string(),
            layer_names: Self::layer_names(&self.model),
            vector: self.model.bank().select(name)?,
        })
    }

    /// Appends the style, or replaces the rows of an existing style with the
    /// same name.
    pub fn import_style(&mut self, style: &StyleFile) -> Result<()> {
        let ours = Self::layer_names(&self.model);
        if style.layer_names != ours {
            return Err(Error::Incompatible(format!(
                "style was exported from layers {:?}, model has {:?}",
                style.layer_names, ours
            )));
        }
        let bank = self.model.bank_mut();
        if bank.contains(&style.name) {
            bank.set_row(&style.name, &style.vector)
        } else {
            bank.push_row(&style.name, style.vector.clone())
        }
    }
}

/// One style's scale and shift rows, detached from any model.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleFile {
    pub name: String,
    pub layer_names: Vec<String>,
    pub vector: StyleVector<f32>,
}

impl StyleFile {
    pub fn channels(&self) -> Vec<usize> {
        self.vector.channels()
    }

    pub fn to_container(&self) -> Result<Container> {
        Ok(Container {
            header: Header::Style { style: self.name.clone(), channels: self.channels() },
            tensors: style_tensors("style", &self.layer_names, &self.vector)?,
        })
    }

    pub fn from_container(mut container: Container) -> Result<Self> {
        let Header::Style { style, channels } = container.header.clone() else {
            return Err(Error::Corrupt("file holds a model, not a style".into()));
        };
        let layer_names: Vec<String> = container
            .tensors
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("style/")?.strip_suffix("/gamma").map(str::to_string))
            .collect();
        let vector = take_style(&mut container, "style", &layer_names)?;
        if vector.channels() != channels {
            return Err(Error::Corrupt("style rows disagree with the recorded channel list".into()));
        }
        if let Some((name, _)) = container.tensors.first() {
            return Err(Error::Corrupt(format!("unexpected tensor `{name}`")));
        }
        Ok(Self { name: style, layer_names, vector })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}
