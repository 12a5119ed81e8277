//! Self-describing binary container shared by tensors, datasets and models.
//!
//! Layout:
//!
//! ```text
//! STARRIS-GL-CONTAINER v1\n
//! key=value\n            (zero or more, sorted by key)
//! \n
//! array <name> <dtype> <d0>x<d1>x...\n   followed by raw little-endian payload
//! ...
//! end\n
//! ```
//!
//! `dtype` is `f64`, `u64`, or `c128` (pairs of `f64` as `re, im`). A scalar has
//! the empty shape `-`. Readers refuse unknown dtypes and truncated payloads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &str = "STARRIS-GL-CONTAINER v1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    C128(Vec<Complex64>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
            ArrayData::C128(_) => "c128",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub header: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        let mut c = Self::default();
        c.set("kind", kind);
        c
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header.get(key).map(String::as_str).ok_or_else(|| Error::format(format!("missing header key `{key}`")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse().map_err(|_| Error::format(format!("header key `{key}` has an unparsable value")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        let found = self.get("kind")?;
        if found != kind {
            return Err(Error::format(format!("expected a `{kind}` container, found `{found}`")));
        }
        Ok(())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: ArrayData) {
        let expected: usize = shape.iter().product();
        assert_eq!(expected, data.len(), "array shape does not match payload length");
        self.arrays.push(NamedArray { name: name.into(), shape: shape.to_vec(), data });
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.push(name, shape, ArrayData::F64(data));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<u64>) {
        self.push(name, shape, ArrayData::U64(data));
    }

    pub fn push_c128(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<Complex64>) {
        self.push(name, shape, ArrayData::C128(data));
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| Error::format(format!("missing array `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::F64(v) => Ok((&a.shape, v)),
            other => Err(Error::format(format!("array `{name}` is {}, not f64", other.dtype()))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<(&[usize], &[u64])> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::U64(v) => Ok((&a.shape, v)),
            other => Err(Error::format(format!("array `{name}` is {}, not u64", other.dtype()))),
        }
    }

    pub fn c128s(&self, name: &str) -> Result<(&[usize], &[Complex64])> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::C128(v) => Ok((&a.shape, v)),
            other => Err(Error::format(format!("array `{name}` is {}, not c128", other.dtype()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.header {
            assert!(!k.contains(['=', '\n']) && !v.contains('\n'), "header entry `{k}` is not single-line");
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.push(b'\n');
        for a in &self.arrays {
            let shape = if a.shape.is_empty() {
                "-".to_string()
            } else {
                a.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            out.extend_from_slice(format!("array {} {} {}\n", a.name, a.data.dtype(), shape).as_bytes());
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::C128(v) => v.iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            }
        }
        out.extend_from_slice(b"end\n");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Reader { bytes, pos: 0 };
        if cursor.line()? != MAGIC {
            return Err(Error::format("bad magic line"));
        }
        let mut header = BTreeMap::new();
        loop {
            let line = cursor.line()?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(format!("bad header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let mut arrays = Vec::new();
        loop {
            let line = cursor.line()?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[0] != "array" {
                return Err(Error::format(format!("bad array line `{line}`")));
            }
            let shape: Vec<usize> = if parts[3] == "-" {
                vec![]
            } else {
                parts[3]
                    .split('x')
                    .map(|d| d.parse().map_err(|_| Error::format(format!("bad shape `{}`", parts[3]))))
                    .collect::<Result<_>>()?
            };
            let count: usize = shape.iter().product();
            let data = match parts[2] {
                "f64" => ArrayData::F64(cursor.words(count)?.map(f64::from_le_bytes).collect()),
                "u64" => ArrayData::U64(cursor.words(count)?.map(u64::from_le_bytes).collect()),
                "c128" => {
                    let words: Vec<f64> = cursor.words(2 * count)?.map(f64::from_le_bytes).collect();
                    ArrayData::C128(words.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
                }
                other => return Err(Error::format(format!("unknown dtype `{other}`"))),
            };
            arrays.push(NamedArray { name: parts[1].to_string(), shape, data });
        }
        if cursor.pos != bytes.len() {
            return Err(Error::format("trailing bytes after `end`"));
        }
        Ok(Self { header, arrays })
    }

    /// Writes to `path` via a sibling temporary file and a rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format { path: Some(path.to_path_buf()), message },
            other => other,
        })
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path.file_name().ok_or_else(|| Error::format("output path has no file name"))?.to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format("unexpected end of data"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::format("non-UTF-8 text line"))
    }

    fn words(&mut self, count: usize) -> Result<impl Iterator<Item = [u8; 8]> + 'a> {
        let len = count.checked_mul(8).ok_or_else(|| Error::format("array too large"))?;
        if self.bytes.len() - self.pos < len {
            return Err(Error::format("truncated array payload"));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice.chunks_exact(8).map(|c| c.try_into().expect("8-byte chunk")))
    }
}
