//! Tensor archive in the safetensors byte layout.
//!
//! ```text
//! [u64 little-endian header length n][n bytes of JSON header][payload]
//! ```
//!
//! The header maps tensor names to `{"dtype", "shape", "data_offsets"}`,
//! offsets relative to the start of the payload. An optional
//! `"__metadata__"` entry holds a string-to-string map.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde_json::{Map, Value};

const METADATA_KEY: &str = "__metadata__";
const HEADER_ALIGN: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive format error: {0}")]
    Format(String),
    #[error("tensor {name:?}: {reason}")]
    Tensor { name: String, reason: String },
    #[error("tensor {0:?} not found")]
    Missing(String),
}

fn tensor_err(name: &str, reason: impl Into<String>) -> ArchiveError {
    ArchiveError::Tensor {
        name: name.to_owned(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    Bool,
    U8,
    I8,
    I16,
    U16,
    F16,
    BF16,
    I32,
    U32,
    F32,
    F64,
    I64,
    U64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Bool | Dtype::U8 | Dtype::I8 => 1,
            Dtype::I16 | Dtype::U16 | Dtype::F16 | Dtype::BF16 => 2,
            Dtype::I32 | Dtype::U32 | Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::Bool => "BOOL",
            Dtype::U8 => "U8",
            Dtype::I8 => "I8",
            Dtype::I16 => "I16",
            Dtype::U16 => "U16",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::I32 => "I32",
            Dtype::U32 => "U32",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
            Dtype::I64 => "I64",
            Dtype::U64 => "U64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "BOOL" => Dtype::Bool,
            "U8" => Dtype::U8,
            "I8" => Dtype::I8,
            "I16" => Dtype::I16,
            "U16" => Dtype::U16,
            "F16" => Dtype::F16,
            "BF16" => Dtype::BF16,
            "I32" => Dtype::I32,
            "U32" => Dtype::U32,
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            "I64" => Dtype::I64,
            "U64" => Dtype::U64,
            _ => return None,
        })
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte range within the payload.
    pub range: Range<usize>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A parsed archive owning its bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, TensorEntry>,
    metadata: BTreeMap<String, String>,
    bytes: Vec<u8>,
    payload_start: usize,
}

impl TensorArchive {
    /// Parses and validates an archive.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, ArchiveError> {
        if bytes.len() < 8 {
            return Err(ArchiveError::Format(format!(
                "file is {} bytes, shorter than the 8-byte header length",
                bytes.len()
            )));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[..8]);
        let header_len = u64::from_le_bytes(len_bytes);
        let available = (bytes.len() - 8) as u64;
        if header_len > available {
            return Err(ArchiveError::Format(format!(
                "header length {header_len} exceeds the {available} bytes after the length prefix"
            )));
        }
        let payload_start = 8 + header_len as usize;
        let header = core::str::from_utf8(&bytes[8..payload_start])
            .map_err(|e| ArchiveError::Format(format!("header is not UTF-8: {e}")))?;
        let header: Map<String, Value> = serde_json::from_str(header.trim_end_matches(' '))
            .map_err(|e| ArchiveError::Format(format!("header JSON: {e}")))?;
        let payload_len = bytes.len() - payload_start;

        let mut entries = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                metadata = parse_metadata(&value)?;
                continue;
            }
            let entry = parse_entry(&name, &value)?;
            if entry.range.end > payload_len {
                return Err(tensor_err(
                    &name,
                    format!(
                        "data range {}..{} exceeds payload of {payload_len} bytes (file truncated?)",
                        entry.range.start, entry.range.end
                    ),
                ));
            }
            entries.insert(name, entry);
        }

        let mut spans: Vec<(&str, &Range<usize>)> = entries.iter().map(|(n, e)| (n.as_str(), &e.range)).collect();
        spans.sort_by_key(|(_, r)| (r.start, r.end));
        for pair in spans.windows(2) {
            let (a, ra) = pair[0];
            let (b, rb) = pair[1];
            if rb.start < ra.end {
                return Err(tensor_err(b, format!("data range overlaps tensor {a:?}")));
            }
        }

        Ok(Self {
            entries,
            metadata,
            bytes,
            payload_start,
        })
    }

    pub fn entries(&self) -> &BTreeMap<String, TensorEntry> {
        &self.entries
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn entry(&self, name: &str) -> Result<&TensorEntry, ArchiveError> {
        self.entries.get(name).ok_or_else(|| ArchiveError::Missing(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Raw bytes of one tensor.
    pub fn data(&self, name: &str) -> Result<&[u8], ArchiveError> {
        let entry = self.entry(name)?;
        let start = self.payload_start + entry.range.start;
        Ok(&self.bytes[start..self.payload_start + entry.range.end])
    }

    /// Tensor values widened to `f32`. Accepts F32, F16 and BF16 payloads.
    pub fn to_f32(&self, name: &str) -> Result<Vec<f32>, ArchiveError> {
        let entry = self.entry(name)?;
        let data = self.data(name)?;
        let out = match entry.dtype {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => data
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            Dtype::BF16 => data
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            other => return Err(tensor_err(name, format!("dtype {other} is not a float type"))),
        };
        Ok(out)
    }
}

fn parse_metadata(value: &Value) -> Result<BTreeMap<String, String>, ArchiveError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ArchiveError::Format("__metadata__ is not an object".into()))?;
    obj.iter()
        .map(|(k, v)| match v.as_str() {
            Some(s) => Ok((k.clone(), s.to_owned())),
            None => Err(ArchiveError::Format(format!("__metadata__ value for {k:?} is not a string"))),
        })
        .collect()
}

fn parse_entry(name: &str, value: &Value) -> Result<TensorEntry, ArchiveError> {
    let obj = value.as_object().ok_or_else(|| tensor_err(name, "entry is not an object"))?;
    let dtype_str = obj
        .get("dtype")
        .and_then(Value::as_str)
        .ok_or_else(|| tensor_err(name, "missing dtype"))?;
    let dtype = Dtype::parse(dtype_str).ok_or_else(|| tensor_err(name, format!("unknown dtype {dtype_str:?}")))?;
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| tensor_err(name, "missing shape"))?
        .iter()
        .map(|d| d.as_u64().map(|d| d as usize))
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| tensor_err(name, "shape entries must be non-negative integers"))?;
    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .ok_or_else(|| tensor_err(name, "missing data_offsets"))?;
    let (start, end) = match offsets.as_slice() {
        [a, b] => match (a.as_u64(), b.as_u64()) {
            (Some(a), Some(b)) => (a as usize, b as usize),
            _ => return Err(tensor_err(name, "data_offsets must be integers")),
        },
        _ => return Err(tensor_err(name, "data_offsets must have two entries")),
    };
    if start > end {
        return Err(tensor_err(name, format!("data_offsets start {start} after end {end}")));
    }
    let expected = shape
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| tensor_err(name, "shape product overflows"))?;
    if expected != end - start {
        return Err(tensor_err(
            name,
            format!(
                "shape {shape:?} of {dtype} needs {expected} bytes but data range holds {}",
                end - start
            ),
        ));
    }
    Ok(TensorEntry {
        dtype,
        shape,
        range: start..end,
    })
}

/// Accumulates tensors and serializes them in the archive layout.
///
/// Tensors are laid out in name order; the header is padded with spaces to
/// a multiple of eight bytes.
#[derive(Debug, Default, Clone)]
pub struct ArchiveWriter {
    tensors: BTreeMap<String, (Dtype, Vec<usize>, Vec<u8>)>,
    metadata: BTreeMap<String, String>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn metadata(&mut self, key: &str, value: &str) -> &mut Self {
        self.metadata.insert(key.to_owned(), value.to_owned());
        self
    }

    pub fn add_f32(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<&mut Self, ArchiveError> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.add_raw(name, Dtype::F32, shape, bytes)
    }

    pub fn add_raw(&mut self, name: &str, dtype: Dtype, shape: &[usize], bytes: Vec<u8>) -> Result<&mut Self, ArchiveError> {
        let expected = shape.iter().product::<usize>() * dtype.size();
        if expected != bytes.len() {
            return Err(tensor_err(
                name,
                format!("shape {shape:?} needs {expected} bytes, got {}", bytes.len()),
            ));
        }
        if name == METADATA_KEY {
            return Err(tensor_err(name, "reserved name"));
        }
        self.tensors.insert(name.to_owned(), (dtype, shape.to_vec(), bytes));
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            let meta: Map<String, Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.to_owned(), Value::Object(meta));
        }
        let mut offset = 0usize;
        for (name, (dtype, shape, bytes)) in &self.tensors {
            let mut entry = Map::new();
            entry.insert("dtype".into(), Value::String(dtype.name().into()));
            entry.insert("shape".into(), Value::Array(shape.iter().map(|&d| Value::from(d as u64)).collect()));
            entry.insert(
                "data_offsets".into(),
                Value::Array(alloc::vec![Value::from(offset as u64), Value::from((offset + bytes.len()) as u64)]),
            );
            header.insert(name.clone(), Value::Object(entry));
            offset += bytes.len();
        }
        let mut header = serde_json::to_string(&Value::Object(header)).unwrap_or_default();
        while !header.len().is_multiple_of(HEADER_ALIGN) {
            header.push(' ');
        }
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, _, bytes) in self.tensors.values() {
            out.extend_from_slice(bytes);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn with_header(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn minimal_two_by_two() {
        let bytes = with_header(
            r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#,
            &[0u8; 16],
        );
        let a = TensorArchive::from_bytes(bytes).unwrap();
        let e = a.entry("w").unwrap();
        assert_eq!(e.shape, vec![2, 2]);
        assert_eq!(e.dtype, Dtype::F32);
        assert_eq!(a.to_f32("w").unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn header_longer_than_file() {
        let mut bytes = 1000u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        let err = TensorArchive::from_bytes(bytes).unwrap_err();
        assert!(matches!(err, ArchiveError::Format(ref m) if m.contains("exceeds")), "{err}");
        assert!(TensorArchive::from_bytes(vec![1, 2, 3]).is_err());
    }

    #[test]
    fn shape_product_mismatch() {
        let bytes = with_header(
            r#"{"w":{"dtype":"F32","shape":[2,3],"data_offsets":[0,16]}}"#,
            &[0u8; 16],
        );
        let err = TensorArchive::from_bytes(bytes).unwrap_err();
        assert!(matches!(err, ArchiveError::Tensor { ref name, .. } if name == "w"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let bytes = with_header(
            r#"{"w":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}"#,
            &[0u8; 12],
        );
        assert!(matches!(
            TensorArchive::from_bytes(bytes),
            Err(ArchiveError::Tensor { ref name, .. }) if name == "w"
        ));
    }

    #[test]
    fn overlapping_ranges() {
        let bytes = with_header(
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#,
            &[0u8; 12],
        );
        assert!(matches!(
            TensorArchive::from_bytes(bytes),
            Err(ArchiveError::Tensor { ref name, ref reason }) if name == "b" && reason.contains("overlaps")
        ));
    }

    #[test]
    fn unknown_dtype() {
        let bytes = with_header(
            r#"{"q":{"dtype":"F8_E4M3X","shape":[1],"data_offsets":[0,1]}}"#,
            &[0u8; 1],
        );
        assert!(matches!(
            TensorArchive::from_bytes(bytes),
            Err(ArchiveError::Tensor { ref name, .. }) if name == "q"
        ));
    }

    #[test]
    fn half_precision_is_widened() {
        let one = half::f16::from_f32(1.5).to_le_bytes();
        let two = half::bf16::from_f32(-2.0).to_le_bytes();
        let mut w = ArchiveWriter::new();
        w.add_raw("h", Dtype::F16, &[1], one.to_vec()).unwrap();
        w.add_raw("b", Dtype::BF16, &[1], two.to_vec()).unwrap();
        w.add_raw("i", Dtype::I32, &[1], vec![0; 4]).unwrap();
        let a = TensorArchive::from_bytes(w.to_bytes()).unwrap();
        assert_eq!(a.to_f32("h").unwrap(), vec![1.5]);
        assert_eq!(a.to_f32("b").unwrap(), vec![-2.0]);
        assert!(a.to_f32("i").is_err());
        assert_eq!(a.to_f32("nope").unwrap_err(), ArchiveError::Missing("nope".into()));
    }

    #[test]
    fn writer_roundtrip_with_metadata() {
        let mut w = ArchiveWriter::new();
        w.metadata("n_head", "2");
        w.add_f32("z", &[3], &[1.0, -0.0, f32::MIN_POSITIVE]).unwrap();
        w.add_f32("a", &[1, 2], &[7.0, 8.0]).unwrap();
        let bytes = w.to_bytes();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(header_len % 8, 0);
        let a = TensorArchive::from_bytes(bytes).unwrap();
        assert_eq!(a.metadata().get("n_head").map(String::as_str), Some("2"));
        let z = a.to_f32("z").unwrap();
        assert_eq!(z.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), [1.0f32, -0.0, f32::MIN_POSITIVE].map(f32::to_bits));
        assert_eq!(a.entry("a").unwrap().range, 0..8);
    }

    #[test]
    fn writer_rejects_wrong_length() {
        assert!(ArchiveWriter::new().add_f32("x", &[2, 2], &[1.0]).is_err());
    }
}
