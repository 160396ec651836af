//! Binary checkpoint: `"RRKD"`, u32 version, u32 entry count, then per entry
//! u32 name length, UTF-8 name, u8 dtype code, u8 ndim, ndim × u32 dims and
//! little-endian element data. All integers are little-endian.
//!
//! Parameters come first in registry order, followed by two entries per
//! batch-norm site: `{site}.running_mean` and `{site}.running_var`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{DType, Element, ParamStore, RunningStats, Tensor};

pub const MAGIC: &[u8; 4] = b"RRKD";
pub const VERSION: u32 = 1;
const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{trailing} trailing bytes after last entry")]
    Trailing { trailing: usize },
    #[error("entry name at byte {offset} is not UTF-8")]
    Name { offset: usize },
    #[error("unknown dtype code {code} in entry {name}")]
    DType { name: String, code: u8 },
    #[error("entry {name} is {found:?}, the model uses {expected:?}")]
    Precision { name: String, expected: DType, found: DType },
    #[error("entry {name}: checkpoint shape {found:?}, model shape {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("model entry {0} missing from checkpoint")]
    Missing(String),
    #[error("checkpoint entry {0} has no counterpart in the model")]
    Unexpected(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Raw little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl Entry {
    fn from_values<T: Element>(name: String, shape: Vec<usize>, values: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * T::DTYPE.size_of());
        values.iter().for_each(|v| v.write_le(&mut bytes));
        Self {
            name,
            dtype: T::DTYPE,
            shape,
            bytes,
        }
    }

    fn values<T: Element>(&self, expected_shape: &[usize]) -> Result<Vec<T>, CheckpointError> {
        if self.dtype != T::DTYPE {
            return Err(CheckpointError::Precision {
                name: self.name.clone(),
                expected: T::DTYPE,
                found: self.dtype,
            });
        }
        if self.shape != expected_shape {
            return Err(CheckpointError::Shape {
                name: self.name.clone(),
                expected: expected_shape.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(self.bytes.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_store<T: Element>(store: &ParamStore<T>) -> Self {
        let mut entries: Vec<Entry> = store
            .params()
            .map(|p| Entry::from_values(p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data()))
            .collect();
        for (name, stats) in store.all_stats() {
            let ch = vec![stats.channels()];
            entries.push(Entry::from_values(format!("{name}{MEAN_SUFFIX}"), ch.clone(), &stats.mean));
            entries.push(Entry::from_values(format!("{name}{VAR_SUFFIX}"), ch, &stats.var));
        }
        Self { entries }
    }

    /// Overwrites every parameter and running statistic of `store`. The entry
    /// set must match the model exactly.
    pub fn restore_into<T: Element>(&self, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        let expected = Self::from_store(store);
        for e in &self.entries {
            if !expected.entries.iter().any(|x| x.name == e.name) {
                return Err(CheckpointError::Unexpected(e.name.clone()));
            }
        }
        let find = |name: &str| {
            self.entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| CheckpointError::Missing(name.to_string()))
        };
        for p in store.params_mut() {
            let values = find(&p.name)?.values::<T>(p.tensor.shape())?;
            p.tensor = Tensor::new(p.tensor.shape(), values).expect("shape checked");
        }
        let names: Vec<String> = store.all_stats().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let stats = store.stats_by_name_mut(&name).expect("listed above");
            let ch = [stats.channels()];
            let mean = find(&format!("{name}{MEAN_SUFFIX}"))?.values::<T>(&ch)?;
            let var = find(&format!("{name}{VAR_SUFFIX}"))?.values::<T>(&ch)?;
            *stats = RunningStats::identity(ch[0]);
            stats.mean = mean;
            stats.var = var;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Name { offset: at })?
                .to_string();
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| CheckpointError::DType { name: name.clone(), code })?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let bytes = r.take(n * dtype.size_of())?.to_vec();
            entries.push(Entry { name, dtype, shape, bytes });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing {
                trailing: bytes.len() - r.pos,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
