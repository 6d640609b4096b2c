//! Versioned binary parameter container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "PSELPARM"
//! version    u32      1
//! endianness u8       1 = little-endian
//! digest     u32 length + UTF-8 bytes
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes
//!   rank     u32
//!   dims     rank x u64
//!   values   prod(dims) x f64, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::representation::EmbeddingParams;
use crate::scorer::ScorerParams;
use crate::training::Optimizer;

const MAGIC: &[u8; 8] = b"PSELPARM";
pub const FORMAT_VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 1;

/// Named tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub digest: String,
    meta: Vec<(String, String)>,
    entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(digest: impl Into<String>) -> Self {
        Self {
            digest: digest.into(),
            ..Self::default()
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Container(format!("missing entry {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(LITTLE_ENDIAN);
        put_str(&mut out, &self.digest);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Container("not a parameter container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!("unsupported format version {version}")));
        }
        let endian = r.take(1)?[0];
        if endian != LITTLE_ENDIAN {
            return Err(Error::Container(format!("unsupported endianness tag {endian}")));
        }
        let digest = r.string()?;
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product::<usize>();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Container("entry too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { digest, meta, entries })
    }

    /// Writes to a sibling temporary file and renames it over `path`, so an
    /// interrupted write never leaves a truncated container behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Container(msg) => Error::Container(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Stores scorer parameters under `prefix`.
    pub fn put_scorer(&mut self, prefix: &str, params: &ScorerParams) {
        self.push(
            format!("{prefix}.dims"),
            Tensor::row(vec![params.input_dim() as f64, params.hidden() as f64]),
        );
        for (name, t) in ScorerParams::names().iter().zip(params.tensors()) {
            self.push(format!("{prefix}.{name}"), t.clone());
        }
    }

    pub fn scorer(&self, prefix: &str) -> Result<ScorerParams> {
        let dims = self.get(&format!("{prefix}.dims"))?.data();
        if dims.len() != 2 {
            return Err(Error::Container(format!("{prefix}.dims must hold two values")));
        }
        let tensors = ScorerParams::names()
            .iter()
            .map(|n| self.get(&format!("{prefix}.{n}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        ScorerParams::from_tensors(dims[0] as usize, dims[1] as usize, tensors)
    }

    pub fn put_embedding(&mut self, prefix: &str, params: &EmbeddingParams) {
        self.push(format!("{prefix}.weight"), params.weight().clone());
        self.push(format!("{prefix}.bias"), params.bias().clone());
    }

    /// Loads an embedding; it comes back frozen.
    pub fn embedding(&self, prefix: &str) -> Result<EmbeddingParams> {
        EmbeddingParams::frozen_from(
            self.get(&format!("{prefix}.weight"))?.clone(),
            self.get(&format!("{prefix}.bias"))?.clone(),
        )
    }

    /// Stores optimizer hyper-parameters, step count and moments.
    pub fn put_optimizer(&mut self, prefix: &str, opt: &Optimizer) {
        self.set_meta(&format!("{prefix}.kind"), format!("{:?}", opt.kind));
        self.push(
            format!("{prefix}.hyper"),
            Tensor::row(vec![opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon, opt.steps() as f64]),
        );
        let (first, second) = opt.moments();
        for (i, (m, v)) in first.iter().zip(second).enumerate() {
            self.push(format!("{prefix}.m.{i}"), m.clone());
            self.push(format!("{prefix}.v.{i}"), v.clone());
        }
    }

    pub fn optimizer(&self, prefix: &str) -> Result<Optimizer> {
        let kind = match self.meta(&format!("{prefix}.kind")) {
            Some("Sgd") => crate::training::OptimizerKind::Sgd,
            Some("Adam") => crate::training::OptimizerKind::Adam,
            other => return Err(Error::Container(format!("bad optimizer kind {other:?}"))),
        };
        let h = self.get(&format!("{prefix}.hyper"))?.data();
        if h.len() != 5 {
            return Err(Error::Container(format!("{prefix}.hyper must hold five values")));
        }
        let mut opt = Optimizer::new(kind, h[0]);
        opt.beta1 = h[1];
        opt.beta2 = h[2];
        opt.epsilon = h[3];
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut i = 0;
        while self.contains(&format!("{prefix}.m.{i}")) {
            first.push(self.get(&format!("{prefix}.m.{i}"))?.clone());
            second.push(self.get(&format!("{prefix}.v.{i}"))?.clone());
            i += 1;
        }
        opt.restore(h[4] as u64, first, second);
        Ok(opt)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Container(format!("invalid UTF-8: {e}")))
    }
}
