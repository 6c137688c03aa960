//! Binary tensor container used for model files and optimizer checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic (4 bytes) | version (u8) | header length (u32 LE) | header (UTF-8)
//! | tensor blobs (f32 LE, in table order) | CRC-32 of everything before (u32 LE)
//! ```
//!
//! The header is a list of lines. Lines starting with `tensor` form the
//! tensor table (`tensor <name> <dim,dim,...> <byte offset>`, offsets relative
//! to the first blob); every other line is `key value`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::{ModelSpec, Params};
use crate::error::{Error, FormatFault, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FNET";
pub const VERSION: u8 = 1;

const PREAMBLE: usize = 4 + 1 + 4;

pub(crate) fn encode_tensor_file(magic: &[u8; 4], fields: &[(String, String)], tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in fields {
        header.push_str(&format!("{k} {v}\n"));
    }
    let mut offset = 0usize;
    for (name, t) in tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {name} {} {offset}\n", dims.join(",")));
        offset += t.len() * 4;
    }
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset + 4);
    out.extend_from_slice(magic);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Header fields and tensors, in file order.
pub(crate) type Decoded = (Vec<(String, String)>, Vec<(String, Tensor)>);

pub(crate) fn decode_tensor_file(magic: &[u8; 4], bytes: &[u8]) -> Result<Decoded> {
    use FormatFault::*;
    if bytes.len() < 4 || &bytes[..4] != magic {
        let prefix_ok = bytes.len() < 4 && magic.starts_with(bytes) && !bytes.is_empty();
        return Err(if prefix_ok {
            Error::format(Truncated, "file ends inside the magic bytes")
        } else {
            Error::format(NotAModelFile, format!("not a model file: expected magic {:?}", String::from_utf8_lossy(magic)))
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::format(Truncated, "file ends inside the preamble"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(UnsupportedVersion(bytes[4]), format!("version {} (expected {VERSION})", bytes[4])));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = PREAMBLE + header_len;
    if bytes.len() < header_end {
        return Err(Error::format(Truncated, "file ends inside the header"));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..header_end])
        .map_err(|_| Error::format(BadHeader, "header is not UTF-8"))?;

    let bad = |line: &str| Error::format(BadHeader, format!("malformed header line {line:?}"));
    let mut fields = Vec::new();
    let mut table = Vec::new();
    for line in header.lines() {
        let mut parts = line.split(' ');
        let key = parts.next().unwrap_or_default();
        if key == "tensor" {
            let (Some(name), Some(dims), Some(off), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad(line));
            };
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(line))?;
            let off: usize = off.parse().map_err(|_| bad(line))?;
            table.push((name.to_string(), shape, off));
        } else {
            let value = line.get(key.len() + 1..).ok_or_else(|| bad(line))?;
            fields.push((key.to_string(), value.to_string()));
        }
    }

    let mut expected = 0usize;
    for (_, shape, off) in &table {
        if *off != expected {
            return Err(Error::format(BadHeader, "tensor offsets are not contiguous"));
        }
        expected += shape.iter().product::<usize>() * 4;
    }
    let total = header_end + expected + 4;
    if bytes.len() < total {
        return Err(Error::format(Truncated, format!("expected {total} bytes, found {}", bytes.len())));
    }
    if bytes.len() > total {
        return Err(Error::format(BadHeader, format!("{} trailing bytes", bytes.len() - total)));
    }
    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..total - 4]) != stored {
        return Err(Error::format(ChecksumMismatch, "CRC-32 mismatch"));
    }

    let blobs = &bytes[header_end..total - 4];
    let mut tensors = Vec::with_capacity(table.len());
    for (name, shape, off) in table {
        let n: usize = shape.iter().product();
        let data = blobs[off..off + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| Error::format(BadHeader, e.to_string()))?;
        tensors.push((name, t));
    }
    Ok((fields, tensors))
}

/// A decoded model file: architecture, weights and free-form metadata
/// (for example the preprocessing filter the model was trained with).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub params: Params<f32>,
    pub meta: BTreeMap<String, String>,
}

fn spec_fields(spec: &ModelSpec) -> Vec<(String, String)> {
    vec![
        ("conv_filters".into(), spec.conv_filters.to_string()),
        ("kernel_size".into(), spec.kernel_size.to_string()),
        ("dense_units".into(), spec.dense_units.to_string()),
        ("dropout_rate".into(), spec.dropout_rate.to_string()),
        (
            "input".into(),
            format!("{} {} {}", spec.input_height, spec.input_width, spec.input_channels),
        ),
        ("classes".into(), spec.classes.to_string()),
        ("param_count".into(), spec.param_count().unwrap_or(0).to_string()),
    ]
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check(&self.spec)?;
        let mut fields = spec_fields(&self.spec);
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::invalid(format!("metadata key {k:?} or its value is not storable")));
            }
            fields.push((format!("meta.{k}"), v.clone()));
        }
        Ok(encode_tensor_file(MAGIC, &fields, &self.params.tensors()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (fields, tensors) = decode_tensor_file(MAGIC, bytes)?;
        let bad = |what: &str| Error::format(FormatFault::BadHeader, what.to_string());
        let map: BTreeMap<&str, &str> = fields.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let num = |key: &str| -> Result<usize> {
            map.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("missing or invalid {key}")))
        };
        let input: Vec<usize> = map
            .get("input")
            .map(|v| v.split(' ').filter_map(|d| d.parse().ok()).collect())
            .unwrap_or_default();
        let &[input_height, input_width, input_channels] = input.as_slice() else {
            return Err(bad("missing or invalid input"));
        };
        let spec = ModelSpec {
            conv_filters: num("conv_filters")?,
            kernel_size: num("kernel_size")?,
            dense_units: num("dense_units")?,
            dropout_rate: map
                .get("dropout_rate")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("missing or invalid dropout_rate"))?,
            input_height,
            input_width,
            input_channels,
            classes: num("classes")?,
        };
        spec.validate().map_err(|e| bad(&e.to_string()))?;
        let names: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
        if names != super::model::PARAM_NAMES {
            return Err(bad("tensor table does not match the architecture"));
        }
        let params = Params::from_tensors(&spec, tensors.into_iter().map(|(_, t)| t).collect())
            .map_err(|e| bad(&e.to_string()))?;
        let meta = fields
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(ModelFile { spec, params, meta })
    }
}

pub fn save_model(spec: &ModelSpec, params: &Params<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_model_with_meta(spec, params, &BTreeMap::new(), path)
}

pub fn save_model_with_meta(
    spec: &ModelSpec,
    params: &Params<f32>,
    meta: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        spec: *spec,
        params: params.clone(),
        meta: meta.clone(),
    };
    fs::write(path, file.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_bytes(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelSpec, Params<f32>)> {
    let f = load_model_file(path)?;
    Ok((f.spec, f.params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            conv_filters: 4,
            kernel_size: 3,
            dense_units: 5,
            dropout_rate: 0.2,
            input_height: 12,
            input_width: 12,
            input_channels: 3,
            classes: 3,
        }
    }

    fn sample() -> ModelFile {
        let spec = small_spec();
        let mut meta = BTreeMap::new();
        meta.insert("filter".to_string(), "sharpen".to_string());
        ModelFile {
            spec,
            params: Params::init(&spec, 5).unwrap(),
            meta,
        }
    }

    fn fault(bytes: &[u8]) -> FormatFault {
        match ModelFile::from_bytes(bytes).unwrap_err() {
            Error::ModelFormat { fault, .. } => fault,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FNET");
        assert_eq!(bytes[4], VERSION);
        let back = ModelFile::from_bytes(&bytes).unwrap();
        for ((_, a), (_, b)) in f.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample();
        let p = dir.path().join("m.fnet");
        save_model_with_meta(&f.spec, &f.params, &f.meta, &p).unwrap();
        let (spec, params) = load_model(&p).unwrap();
        assert_eq!((spec, params), (f.spec, f.params.clone()));
        assert_eq!(load_model_file(&p).unwrap().meta["filter"], "sharpen");
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(fault(&magic), FormatFault::NotAModelFile);
        assert!(ModelFile::from_bytes(&magic).unwrap_err().to_string().contains("not a model file"));

        let mut version = bytes.clone();
        version[4] = 9;
        assert_eq!(fault(&version), FormatFault::UnsupportedVersion(9));

        assert_eq!(fault(&bytes[..bytes.len() - 10]), FormatFault::Truncated);
        assert_eq!(fault(&bytes[..7]), FormatFault::Truncated);

        let mut flipped = bytes.clone();
        let i = bytes.len() - 20;
        flipped[i] ^= 0x40;
        assert_eq!(fault(&flipped), FormatFault::ChecksumMismatch);
    }

    #[test]
    fn tuned_header_reports_parameter_total() {
        let spec = ModelSpec::tuned();
        let fields = spec_fields(&spec);
        let total = fields.iter().find(|(k, _)| k == "param_count").unwrap();
        assert_eq!(total.1, "5064131");
    }
}
