//! `SNOP` container: an ordered table of named `f64` matrices.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SNOP" | version: u32 | count: u32 |
//!   count x ( name_len: u32 | name: utf-8 | rows: u32 | cols: u32 | rows*cols f64 )
//! ```
//!
//! Parameter stores map onto reserved name prefixes (`param/`, `frozen/`,
//! `adam_m/`, `adam_v/`, `meta/step`) so the same container also carries
//! embedding bases and sample sets.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Matrix, ParameterStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SNOP";
pub const VERSION: u32 = 1;

const PARAM: &str = "param/";
const FROZEN: &str = "frozen/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";
const STEP: &str = "meta/step";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Validation(format!("duplicate checkpoint entry `{name}`")));
        }
        self.entries.push((name, m));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no entry `{name}`")))
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Matrix)> + 'a {
        self.entries
            .iter()
            .filter_map(move |(n, m)| n.strip_prefix(prefix).map(|s| (s, m)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .iter()
            .map(|(n, m)| 12 + n.len() + 8 * m.rows() * m.cols())
            .sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"SNOP\""),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format {
                    offset: at + 4,
                    reason: format!("entry name is not utf-8: {e}"),
                })?
                .to_owned();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| Error::Format {
                offset: r.pos,
                reason: "matrix size overflows".into(),
            })?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format {
                offset: r.pos,
                reason: "matrix size overflows".into(),
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ck.push(name, Matrix::from_vec(rows, cols, data)?)
                .map_err(|e| Error::Format {
                    offset: at,
                    reason: e.to_string(),
                })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(ck)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Appends a parameter store (values, frozen arrays, Adam moments, step counter).
    pub fn push_store(&mut self, store: &ParameterStore) -> Result<()> {
        for (name, p) in store.iter() {
            if p.trainable {
                self.push(format!("{PARAM}{name}"), p.value.clone())?;
            } else {
                self.push(format!("{FROZEN}{name}"), p.value.clone())?;
            }
        }
        for (name, p) in store.iter().filter(|(_, p)| p.trainable) {
            self.push(format!("{ADAM_M}{name}"), p.first_moment().clone())?;
            self.push(format!("{ADAM_V}{name}"), p.second_moment().clone())?;
        }
        self.push(STEP, Matrix::filled(1, 1, store.step_count as f64))
    }

    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for (name, m) in self.with_prefix(PARAM) {
            let mm = self
                .get(&format!("{ADAM_M}{name}"))
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            let vv = self
                .get(&format!("{ADAM_V}{name}"))
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            store.insert_full(name, m.clone(), mm, vv, true)?;
        }
        for (name, m) in self.with_prefix(FROZEN) {
            store.insert_frozen(name, m.clone())?;
        }
        if let Some(s) = self.get(STEP) {
            store.step_count = s.get(0, 0) as u64;
        }
        Ok(store)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
