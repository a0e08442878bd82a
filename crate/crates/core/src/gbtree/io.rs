//! Model persistence.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "MBGB1"  u16 version
//! u8 task (0 regression, 1 classification)  u32 num_classes
//! u32 n_base   f64 × n_base
//! u32 n_names  (u32 len, utf-8 bytes) × n_names
//! u32 horizon + 1 (0 = none)
//! str params_json  str scaler_json  str labeler_json  str config_hash
//! u32 n_trees, per tree: u32 n_nodes, per node:
//!   u8 0 = leaf:  f64 weight, f64 cover
//!   u8 1 = split: u32 feature, f64 threshold, u8 default_left,
//!                 u32 left, u32 right, f64 gain, f64 cover
//! ```
//!
//! Empty strings encode absent optional sections.

use std::path::Path;

use super::ensemble::{Ensemble, FORMAT_VERSION};
use super::params::{Task, TrainParams};
use super::tree::{Node, Tree};
use crate::codec::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MBGB1";

fn opt_json<T: serde::Serialize>(v: &Option<T>) -> Result<String> {
    Ok(match v {
        Some(x) => serde_json::to_string(x)?,
        None => String::new(),
    })
}

impl Ensemble {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut e = Encoder::default();
        e.bytes(MAGIC);
        e.u16(FORMAT_VERSION);
        match self.task {
            Task::Regression => {
                e.u8(0);
                e.u32(1);
            }
            Task::Classification { num_classes } => {
                e.u8(1);
                e.u32(num_classes as u32);
            }
        }
        e.u32(self.base_score.len() as u32);
        self.base_score.iter().for_each(|b| e.f64(*b));
        e.u32(self.feature_names.len() as u32);
        self.feature_names.iter().for_each(|n| e.str(n));
        e.u32(self.horizon.map_or(0, |h| h as u32 + 1));
        e.str(&serde_json::to_string(&self.params)?);
        e.str(&opt_json(&self.scaler)?);
        e.str(&opt_json(&self.labeler)?);
        e.str(self.config_hash.as_deref().unwrap_or(""));
        e.u32(self.trees.len() as u32);
        for tree in &self.trees {
            e.u32(tree.nodes.len() as u32);
            for node in &tree.nodes {
                match node {
                    Node::Leaf { weight, cover } => {
                        e.u8(0);
                        e.f64(*weight);
                        e.f64(*cover);
                    }
                    Node::Split {
                        feature,
                        threshold,
                        default_left,
                        left,
                        right,
                        gain,
                        cover,
                    } => {
                        e.u8(1);
                        e.u32(*feature);
                        e.f64(*threshold);
                        e.u8(*default_left as u8);
                        e.u32(*left);
                        e.u32(*right);
                        e.f64(*gain);
                        e.f64(*cover);
                    }
                }
            }
        }
        Ok(e.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptFile(m.to_string());
        let t = || corrupt("truncated");
        let mut d = Decoder::new(bytes);
        if d.take(MAGIC.len()) != Some(MAGIC.as_slice()) {
            return Err(corrupt("missing MBGB1 magic"));
        }
        let version = d.u16().ok_or_else(t)?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let task = match (d.u8().ok_or_else(t)?, d.u32().ok_or_else(t)?) {
            (0, _) => Task::Regression,
            (1, c) if c >= 2 => Task::Classification { num_classes: c as usize },
            _ => return Err(corrupt("unknown task")),
        };
        let n_base = d.u32().ok_or_else(t)? as usize;
        if n_base != task.outputs() {
            return Err(corrupt("base score count does not match task"));
        }
        let base_score = (0..n_base).map(|_| d.f64().ok_or_else(t)).collect::<Result<Vec<_>>>()?;
        let n_names = d.u32().ok_or_else(t)? as usize;
        if n_names > d.remaining() {
            return Err(t());
        }
        let feature_names = (0..n_names).map(|_| d.str().ok_or_else(t)).collect::<Result<Vec<_>>>()?;
        let horizon = match d.u32().ok_or_else(t)? {
            0 => None,
            h => Some(h as usize - 1),
        };
        let params: TrainParams = serde_json::from_str(&d.str().ok_or_else(t)?).map_err(|_| corrupt("params"))?;
        let section = |s: String| -> Result<Option<String>> { Ok(if s.is_empty() { None } else { Some(s) }) };
        let scaler = match section(d.str().ok_or_else(t)?)? {
            Some(s) => Some(serde_json::from_str(&s).map_err(|_| corrupt("scaler"))?),
            None => None,
        };
        let labeler = match section(d.str().ok_or_else(t)?)? {
            Some(s) => Some(serde_json::from_str(&s).map_err(|_| corrupt("labeler"))?),
            None => None,
        };
        let config_hash = section(d.str().ok_or_else(t)?)?;
        let n_trees = d.u32().ok_or_else(t)? as usize;
        if n_trees > d.remaining() || !n_trees.is_multiple_of(task.outputs()) {
            return Err(corrupt("tree count"));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = d.u32().ok_or_else(t)? as usize;
            if n_nodes == 0 || n_nodes > d.remaining() {
                return Err(corrupt("node count"));
            }
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(match d.u8().ok_or_else(t)? {
                    0 => Node::Leaf {
                        weight: d.f64().ok_or_else(t)?,
                        cover: d.f64().ok_or_else(t)?,
                    },
                    1 => Node::Split {
                        feature: d.u32().ok_or_else(t)?,
                        threshold: d.f64().ok_or_else(t)?,
                        default_left: d.u8().ok_or_else(t)? != 0,
                        left: d.u32().ok_or_else(t)?,
                        right: d.u32().ok_or_else(t)?,
                        gain: d.f64().ok_or_else(t)?,
                        cover: d.f64().ok_or_else(t)?,
                    },
                    _ => return Err(corrupt("unknown node tag")),
                });
            }
            trees.push(Tree { nodes });
        }
        if !d.is_done() {
            return Err(corrupt("trailing bytes"));
        }
        let ensemble = Ensemble {
            version,
            task,
            base_score,
            trees,
            feature_names,
            scaler,
            labeler,
            horizon,
            params,
            config_hash,
        };
        ensemble.check_structure()?;
        Ok(ensemble)
    }

    /// Children in bounds and pointing forward (so traversal terminates),
    /// thresholds finite, features within the declared width.
    pub fn check_structure(&self) -> Result<()> {
        let corrupt = |m: String| Err(Error::CorruptFile(m));
        let width = self.feature_names.len();
        for (ti, tree) in self.trees.iter().enumerate() {
            for (ni, node) in tree.nodes.iter().enumerate() {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } = node
                {
                    let (l, r) = (*left as usize, *right as usize);
                    if l <= ni || r <= ni || l >= tree.nodes.len() || r >= tree.nodes.len() {
                        return corrupt(format!("tree {ti} node {ni}: child index out of bounds"));
                    }
                    if !threshold.is_finite() {
                        return corrupt(format!("tree {ti} node {ni}: non-finite threshold"));
                    }
                    if width > 0 && *feature as usize >= width {
                        return corrupt(format!("tree {ti} node {ni}: feature {feature} out of range"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Inspection export; float values survive the round trip exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Ensemble = serde_json::from_str(text)?;
        if e.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: e.version,
                expected: FORMAT_VERSION,
            });
        }
        e.check_structure()?;
        Ok(e)
    }

    /// Writes JSON when the extension is `.json`, the binary format otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e == "json") {
            self.to_json()?.into_bytes()
        } else {
            self.to_bytes()?
        };
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        if bytes.starts_with(MAGIC) || !bytes.first().is_some_and(|b| *b == b'{') {
            Self::from_bytes(&bytes)
        } else {
            Self::from_json(std::str::from_utf8(&bytes).map_err(|_| Error::CorruptFile("not utf-8".into()))?)
        }
    }
}
