//! Binary checkpoint format.
//!
//! Layout: magic `MSPL`, version `u32`, `u32`-length-prefixed JSON config,
//! then every tensor in lexicographic name order as
//! `u32` name length, name bytes, `u32` ndims, `u32` dims, little-endian f32 data.
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::ArchConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore, Scalar};

pub const MAGIC: &[u8; 4] = b"MSPL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    tensors: BTreeMap<String, Matrix<f32>>,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((a, x), (b, y))| a == b && x.bit_eq(y))
    }
}

impl Checkpoint {
    pub fn new(arch: ArchConfig, tensors: BTreeMap<String, Matrix<f32>>) -> Self {
        Checkpoint { arch, tensors }
    }

    pub fn from_store<F: Scalar>(arch: ArchConfig, store: &ParamStore<F>) -> Self {
        let tensors = store
            .iter()
            .map(|(_, t)| (t.name().to_string(), t.value.cast()))
            .collect();
        Checkpoint::new(arch, tensors)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Matrix<f32>> {
        &self.tensors
    }

    /// Value of `name`, converted to `F`.
    pub(crate) fn take<F: Scalar>(&self, name: &str) -> Result<Matrix<F>> {
        self.tensors
            .get(name)
            .map(Matrix::cast)
            .ok_or_else(|| Error::contract(format!("checkpoint lacks tensor {name}")))
    }

    /// Fails if the checkpoint holds tensors the model does not have.
    pub(crate) fn check_all_used<F: Scalar>(&self, store: &ParamStore<F>) -> Result<()> {
        match self.tensors.keys().find(|k| store.id(k).is_err()) {
            Some(name) => Err(Error::contract(format!("checkpoint has unexpected tensor {name}"))),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.arch).map_err(|e| Error::contract(format!("cannot encode config: {e}")))?;
        put_u32(&mut out, json.len())?;
        out.extend_from_slice(&json);
        for (name, m) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2)?;
            put_u32(&mut out, m.rows())?;
            put_u32(&mut out, m.cols())?;
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses checkpoint bytes; `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let err = |msg: String| Error::Checkpoint {
            path: origin.into(),
            msg,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(&err)? != MAGIC {
            return Err(err("bad magic, not a checkpoint".into()));
        }
        let version = r.u32().map_err(&err)?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let len = r.u32().map_err(&err)? as usize;
        let arch: ArchConfig =
            serde_json::from_slice(r.take(len).map_err(&err)?).map_err(|e| err(format!("bad config header: {e}")))?;
        let mut tensors = BTreeMap::new();
        let mut last: Option<String> = None;
        while r.pos < bytes.len() {
            let len = r.u32().map_err(&err)? as usize;
            let name = std::str::from_utf8(r.take(len).map_err(&err)?)
                .map_err(|_| err("tensor name is not UTF-8".into()))?
                .to_string();
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(err(format!("tensor {name} out of order")));
            }
            let ndims = r.u32().map_err(&err)? as usize;
            let dims = (0..ndims)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&err)?;
            let (rows, cols) = match dims[..] {
                [n] => (1, n),
                [rows, cols] => (rows, cols),
                _ => return Err(err(format!("tensor {name} has {ndims} dims"))),
            };
            let payload = r.take(rows * cols * 4).map_err(&err)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name.clone(), Matrix::from_vec(rows, cols, data)?);
            last = Some(name);
        }
        Ok(Checkpoint::new(arch, tensors))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, &path.display().to_string())
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::contract(format!("{n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
