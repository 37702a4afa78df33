//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `MAGIC`, `u32` version, `u64` header length, JSON header, `u32` group
//! count, then per group its name and `u32` parameter count, then per
//! parameter: name, `u8` decay flag, `u32` rank, `u64` dims, `f64` values,
//! `u8` moments flag and, when set, first then second moments. Strings are
//! a `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::framework::{UnifiedModel, GROUPS};
use crate::numerics::{AdamHyper, Moments, OptimizerState, Tensor};

pub const MAGIC: [u8; 8] = *b"UNITRAIN";
pub const VERSION: u32 = 1;

/// Batch cursor position of one task pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorState {
    pub epoch: u64,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    /// Completed optimizer updates.
    pub step: u64,
    pub optimizer: AdamHyper,
    pub optimizer_step: u64,
    /// Hex MD5 of the tokenizer JSON the model was trained with.
    pub tokenizer_md5: String,
    pub cursors: BTreeMap<String, CursorState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub group: String,
    pub tensor: Tensor,
    pub decay: bool,
    pub moments: Option<Moments>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<SavedParam>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable: {e}"))
}

fn get_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(get_bytes(r)?))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

impl Checkpoint {
    /// Snapshot of a model and, when given, its optimizer moments.
    pub fn capture(model: &UnifiedModel, opt: Option<&OptimizerState>, header: CheckpointHeader) -> Self {
        let params = model
            .params
            .iter()
            .map(|(id, p)| SavedParam {
                name: p.name.clone(),
                group: p.group.clone(),
                tensor: Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("shape matches data"),
                decay: p.decay,
                moments: opt.and_then(|o| o.moments.get(id.0).cloned().flatten()),
            })
            .collect();
        Self { header, params }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        put_u32(w, VERSION)?;
        let header = serde_json::to_vec(&self.header)?;
        put_u64(w, header.len() as u64)?;
        w.write_all(&header)?;
        let groups: Vec<&str> = GROUPS.iter().copied().filter(|g| self.params.iter().any(|p| p.group == *g)).collect();
        put_u32(w, groups.len() as u32)?;
        for g in groups {
            let members: Vec<&SavedParam> = self.params.iter().filter(|p| p.group == g).collect();
            put_str(w, g)?;
            put_u32(w, members.len() as u32)?;
            for p in members {
                put_str(w, &p.name)?;
                w.write_all(&[u8::from(p.decay)])?;
                put_u32(w, p.tensor.shape().len() as u32)?;
                for &d in p.tensor.shape() {
                    put_u64(w, d as u64)?;
                }
                put_f64s(w, p.tensor.data())?;
                match &p.moments {
                    Some(m) => {
                        w.write_all(&[1])?;
                        put_f64s(w, &m.first)?;
                        put_f64s(w, &m.second)?;
                    }
                    None => w.write_all(&[0])?,
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if get_bytes::<8>(r)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = get_u64(r)? as usize;
        let mut header = vec![0u8; n];
        r.read_exact(&mut header).map_err(truncated)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut params = Vec::new();
        for _ in 0..get_u32(r)? {
            let group = get_str(r)?;
            for _ in 0..get_u32(r)? {
                let name = get_str(r)?;
                let decay = get_bytes::<1>(r)?[0] != 0;
                let rank = get_u32(r)? as usize;
                let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let numel = shape.iter().product();
                let tensor = Tensor::new(shape, get_f64s(r, numel)?)?;
                let moments = match get_bytes::<1>(r)?[0] {
                    0 => None,
                    _ => Some(Moments { first: get_f64s(r, numel)?, second: get_f64s(r, numel)? }),
                };
                params.push(SavedParam { name, group: group.clone(), tensor, decay, moments });
            }
        }
        Ok(Self { header, params })
    }

    /// Writes through a temporary sibling, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(f))
    }

    /// Copies the parameters of `groups` into `model`, matching by name.
    /// Every parameter of those groups must be present with equal shape.
    pub fn load_groups(&self, model: &mut UnifiedModel, groups: &[&str]) -> Result<()> {
        let by_name: BTreeMap<&str, &SavedParam> = self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        let ids: Vec<_> = model.params.iter().filter(|(_, p)| groups.contains(&p.group.as_str())).map(|(id, _)| id).collect();
        for id in ids {
            let p = model.params.get_mut(id);
            let saved = by_name
                .get(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{}` missing", p.name)))?;
            if saved.tensor.shape() != p.tensor.shape() || saved.group != p.group {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}`: saved {:?} in {}, model {:?} in {}",
                    p.name,
                    saved.tensor.shape(),
                    saved.group,
                    p.tensor.shape(),
                    p.group
                )));
            }
            p.tensor.data_mut().copy_from_slice(saved.tensor.data());
        }
        Ok(())
    }

    /// A model with the saved configuration and every group loaded.
    pub fn restore_model(&self) -> Result<UnifiedModel> {
        let mut model = UnifiedModel::new(self.header.model.clone(), self.header.seed)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} saved parameters for a model of {}",
                self.params.len(),
                model.params.len()
            )));
        }
        self.load_groups(&mut model, &GROUPS)?;
        Ok(model)
    }

    /// Optimizer state aligned with the parameter ids of `model`.
    pub fn restore_optimizer(&self, model: &UnifiedModel) -> Result<OptimizerState> {
        let mut opt = OptimizerState::new(self.header.optimizer)?;
        opt.step = self.header.optimizer_step;
        let by_name: BTreeMap<&str, &SavedParam> = self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        opt.moments = model.params.iter().map(|(_, p)| by_name.get(p.name.as_str()).and_then(|s| s.moments.clone())).collect();
        Ok(opt)
    }

    /// Parameter count and MD5 of the values, per group.
    pub fn group_summary(&self) -> BTreeMap<String, (usize, String)> {
        use md5::{Digest, Md5};
        let mut out = BTreeMap::new();
        for g in GROUPS {
            let members: Vec<&SavedParam> = self.params.iter().filter(|p| p.group == g).collect();
            let mut h = Md5::new();
            let mut count = 0;
            for p in &members {
                count += p.tensor.numel();
                p.tensor.data().iter().for_each(|v| h.update(v.to_le_bytes()));
            }
            out.insert(g.to_string(), (count, hex(&h.finalize())));
        }
        out
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
