//! Binary model artifacts.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `HVDM` |
//! | 2     | format version (u16) |
//! | 1     | float width in bits, always 64 |
//! | 4     | header length `h` (u32) |
//! | h     | UTF-8 JSON header |
//! | 8·k   | `k` IEEE-754 f64 payload values |
//!
//! The header carries the family, spec, seed, provider fingerprint, input
//! width, threshold, training log and the shape of the payload.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::ensemble::{Boosted, Forest};
use super::gan::Gan;
use super::linear::{LinearModel, PlattLink};
use super::mlp::{Activation, Dense, Mlp};
use super::tree::{Node, Tree};
use super::{Family, ModelSpec, Parameters, TrainedModel};
use crate::features::ProviderFingerprint;

pub const MAGIC: &[u8; 4] = b"HVDM";
pub const FORMAT_VERSION: u16 = 1;
const FLOAT_BITS: u8 = 64;
const PREAMBLE: usize = 4 + 2 + 1 + 4;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model artifact (bad magic)")]
    BadMagic,
    #[error("artifact format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("artifact declares {0}-bit floats; only 64-bit is supported")]
    FloatWidth(u8),
    #[error("artifact truncated at byte offset {offset}: {needed} more bytes expected")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid artifact header: {0}")]
    Header(String),
    #[error("invalid artifact payload: {0}")]
    Payload(String),
    #[error("unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    family: Family,
    spec: ModelSpec,
    seed: u64,
    provider: ProviderFingerprint,
    width: usize,
    threshold: f64,
    training_log: Vec<f64>,
    layout: Layout,
    payload_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Layout {
    Linear { platt: bool },
    Forest { nodes_per_tree: Vec<usize> },
    Boosted { nodes_per_tree: Vec<usize> },
    Mlp { sizes: Vec<usize>, activation: Activation },
    Gan {
        discriminator: Vec<usize>,
        generator: Vec<usize>,
        activation: Activation,
    },
}

fn push_tree(out: &mut Vec<f64>, tree: &Tree) {
    for node in &tree.nodes {
        match *node {
            Node::Leaf { value } => out.extend([0.0, value, 0.0, 0.0, 0.0]),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => out.extend([1.0, feature as f64, threshold, left as f64, right as f64]),
        }
    }
}

fn encode(params: &Parameters) -> (Layout, Vec<f64>) {
    let mut out = Vec::new();
    let layout = match params {
        Parameters::Linear { model, link } => {
            out.extend(model.w.iter().copied());
            out.push(model.b);
            if let Some(l) = link {
                out.extend([l.a, l.c]);
            }
            Layout::Linear { platt: link.is_some() }
        }
        Parameters::Forest(f) => {
            f.trees.iter().for_each(|t| push_tree(&mut out, t));
            Layout::Forest {
                nodes_per_tree: f.trees.iter().map(|t| t.nodes.len()).collect(),
            }
        }
        Parameters::Boosted(b) => {
            out.push(b.base);
            b.trees.iter().for_each(|t| push_tree(&mut out, t));
            Layout::Boosted {
                nodes_per_tree: b.trees.iter().map(|t| t.nodes.len()).collect(),
            }
        }
        Parameters::Network(net) => {
            out = net.flat_params();
            Layout::Mlp {
                sizes: net.sizes(),
                activation: net.hidden,
            }
        }
        Parameters::Gan(g) => {
            out = g.discriminator.flat_params();
            out.extend(g.generator.flat_params());
            Layout::Gan {
                discriminator: g.discriminator.sizes(),
                generator: g.generator.sizes(),
                activation: g.discriminator.hidden,
            }
        }
    };
    (layout, out)
}

pub fn save_model(model: &TrainedModel, sink: &mut impl Write) -> Result<(), ArtifactError> {
    let (layout, payload) = encode(&model.parameters);
    let header = Header {
        family: model.spec.family,
        spec: model.spec.clone(),
        seed: model.spec.seed,
        provider: model.provider.clone(),
        width: model.width,
        threshold: model.threshold,
        training_log: model.training_log.clone(),
        layout,
        payload_len: payload.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ArtifactError::Header(e.to_string()))?;
    let header_len = u32::try_from(json.len()).map_err(|_| ArtifactError::Header("header too large".into()))?;
    sink.write_all(MAGIC)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
    sink.write_all(&[FLOAT_BITS])?;
    sink.write_all(&header_len.to_le_bytes())?;
    sink.write_all(&json)?;
    for v in payload {
        sink.write_all(&v.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn save_model_path(model: &TrainedModel, path: &Path) -> Result<(), ArtifactError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_model(model, &mut w)
}

pub fn load_model_path(path: &Path) -> Result<TrainedModel, ArtifactError> {
    load_model(&mut File::open(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        let rest = self.bytes.len() - self.at;
        if rest < n {
            return Err(ArtifactError::Truncated {
                offset: self.bytes.len(),
                needed: n - rest,
            });
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }
}

pub fn load_model(source: &mut impl Read) -> Result<TrainedModel, ArtifactError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, at: 0 };
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    let pre = cur.take(PREAMBLE)?;
    let version = u16::from_le_bytes([pre[4], pre[5]]);
    if version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if pre[6] != FLOAT_BITS {
        return Err(ArtifactError::FloatWidth(pre[6]));
    }
    let header_len = u32::from_le_bytes([pre[7], pre[8], pre[9], pre[10]]) as usize;
    let header: Header =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| ArtifactError::Header(e.to_string()))?;
    if header.family != header.spec.family {
        return Err(ArtifactError::Header("family does not match spec".into()));
    }
    let raw = cur.take(header.payload_len.checked_mul(8).ok_or(ArtifactError::Header("payload too large".into()))?)?;
    if cur.at != bytes.len() {
        return Err(ArtifactError::TrailingBytes { offset: cur.at });
    }
    let payload: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let parameters = decode(&header, &payload)?;
    Ok(TrainedModel {
        spec: header.spec,
        parameters,
        training_log: header.training_log,
        provider: header.provider,
        width: header.width,
        threshold: header.threshold,
    })
}

struct Values<'a> {
    v: &'a [f64],
    at: usize,
}

impl Values<'_> {
    fn next(&mut self) -> Result<f64, ArtifactError> {
        let x = *self
            .v
            .get(self.at)
            .ok_or_else(|| ArtifactError::Payload("payload shorter than its layout".into()))?;
        self.at += 1;
        Ok(x)
    }

    fn index(&mut self) -> Result<usize, ArtifactError> {
        let x = self.next()?;
        if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(ArtifactError::Payload(format!("{x} is not an index")));
        }
        Ok(x as usize)
    }

    fn tree(&mut self, n_nodes: usize, width: usize) -> Result<Tree, ArtifactError> {
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let kind = self.next()?;
            let node = if kind == 0.0 {
                let value = self.next()?;
                for _ in 0..3 {
                    self.next()?;
                }
                Node::Leaf { value }
            } else if kind == 1.0 {
                Node::Split {
                    feature: self.index()?,
                    threshold: self.next()?,
                    left: self.index()?,
                    right: self.index()?,
                }
            } else {
                return Err(ArtifactError::Payload(format!("unknown node kind {kind}")));
            };
            nodes.push(node);
        }
        let tree = Tree { nodes };
        if !tree.is_well_formed() || tree.max_feature().is_some_and(|f| f >= width) {
            return Err(ArtifactError::Payload("malformed tree".into()));
        }
        Ok(tree)
    }

    fn mlp(&mut self, sizes: &[usize], activation: Activation) -> Result<Mlp, ArtifactError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(ArtifactError::Payload(format!("bad layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for p in sizes.windows(2) {
            let w: Vec<f64> = (0..p[0] * p[1]).map(|_| self.next()).collect::<Result<_, _>>()?;
            let b: Vec<f64> = (0..p[1]).map(|_| self.next()).collect::<Result<_, _>>()?;
            layers.push(Dense {
                w: Array2::from_shape_vec((p[0], p[1]), w).expect("sized"),
                b: Array1::from(b),
            });
        }
        Ok(Mlp {
            layers,
            hidden: activation,
        })
    }
}

fn decode(h: &Header, payload: &[f64]) -> Result<Parameters, ArtifactError> {
    let mut v = Values { v: payload, at: 0 };
    let width = h.width;
    let params = match &h.layout {
        Layout::Linear { platt } => {
            let w: Vec<f64> = (0..width).map(|_| v.next()).collect::<Result<_, _>>()?;
            let b = v.next()?;
            let link = if *platt {
                Some(PlattLink {
                    a: v.next()?,
                    c: v.next()?,
                })
            } else {
                None
            };
            Parameters::Linear {
                model: LinearModel { w: Array1::from(w), b },
                link,
            }
        }
        Layout::Forest { nodes_per_tree } => {
            if nodes_per_tree.is_empty() {
                return Err(ArtifactError::Payload("forest without trees".into()));
            }
            let trees = nodes_per_tree
                .iter()
                .map(|&n| v.tree(n, width))
                .collect::<Result<_, _>>()?;
            Parameters::Forest(Forest { trees })
        }
        Layout::Boosted { nodes_per_tree } => {
            let base = v.next()?;
            let trees = nodes_per_tree
                .iter()
                .map(|&n| v.tree(n, width))
                .collect::<Result<_, _>>()?;
            Parameters::Boosted(Boosted { base, trees })
        }
        Layout::Mlp { sizes, activation } => {
            if sizes.first() != Some(&width) || sizes.last() != Some(&1) {
                return Err(ArtifactError::Payload(format!("network sizes {sizes:?} do not fit width {width}")));
            }
            Parameters::Network(v.mlp(sizes, *activation)?)
        }
        Layout::Gan {
            discriminator,
            generator,
            activation,
        } => {
            if discriminator.first() != Some(&width)
                || discriminator.last() != Some(&3)
                || generator.last() != Some(&width)
            {
                return Err(ArtifactError::Payload("GAN layer sizes do not fit the width".into()));
            }
            Parameters::Gan(Gan {
                discriminator: v.mlp(discriminator, *activation)?,
                generator: v.mlp(generator, *activation)?,
            })
        }
    };
    if v.at != payload.len() {
        return Err(ArtifactError::Payload(format!(
            "layout uses {} values but payload has {}",
            v.at,
            payload.len()
        )));
    }
    Ok(params)
}
