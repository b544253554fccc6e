//! Model files.
//!
//! ```text
//! attrib-audit-model
//! version 1
//! {"nodes":[...],"split":null}        <- one line of JSON
//! params <count> sha256 <hex digest>
//! <count little-endian f64 values>
//! ```
//!
//! The digest covers the JSON line and the parameter blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{LayerSpec, ModelGraph, NodeId};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "attrib-audit-model";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    nodes: Vec<LayerSpec>,
    split: Option<NodeId>,
}

fn digest(json: &[u8], blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(json);
    h.update(blob);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(model: &ModelGraph) -> Result<Vec<u8>> {
    let json = serde_json::to_string(&Descriptor {
        nodes: model.specs(),
        split: model.split_marker(),
    })?;
    let params = model.flat_params();
    let blob: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = format!(
        "{MAGIC}\nversion {FORMAT_VERSION}\n{json}\nparams {} sha256 {}\n",
        params.len(),
        digest(json.as_bytes(), &blob)
    )
    .into_bytes();
    out.extend_from_slice(&blob);
    Ok(out)
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unexpected end of header".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("header is not UTF-8".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.is_empty() {
        return Err(Error::Format("empty model file".into()));
    }
    let mut pos = 0;
    if next_line(bytes, &mut pos)? != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = next_line(bytes, &mut pos)?
        .strip_prefix("version ")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Format("bad version line".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let json = next_line(bytes, &mut pos)?;
    let fields: Vec<&str> = next_line(bytes, &mut pos)?.split(' ').collect();
    let (count, expected_digest) = match fields.as_slice() {
        ["params", n, "sha256", d] => (
            n.parse::<usize>()
                .map_err(|_| Error::Format("bad parameter count".into()))?,
            *d,
        ),
        _ => return Err(Error::Format("bad parameter line".into())),
    };
    let blob = &bytes[pos..];
    if blob.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            blob.len()
        )));
    }
    if digest(json.as_bytes(), blob) != expected_digest {
        return Err(Error::Checksum);
    }
    let desc: Descriptor = serde_json::from_str(json)?;
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut model = ModelGraph::from_specs(desc.nodes)?.with_flat_params(&params)?;
    if let Some(s) = desc.split {
        model = model.with_split_marker(s)?;
    }
    Ok(model)
}

pub fn serialize(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn deserialize(path: &Path) -> Result<ModelGraph> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build, ArchitectureId};

    fn model() -> ModelGraph {
        let arch = ArchitectureId::ConvResidual {
            channels: 1,
            size: 8,
            width: 2,
            classes: 3,
        };
        let m = build(&arch, 4).unwrap();
        let add = m.find("block2.add").unwrap();
        m.with_split_marker(add).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.model");
        serialize(&m, &p).unwrap();
        assert_eq!(deserialize(&p).unwrap(), m);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = to_bytes(&model()).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checksum)));
    }

    #[test]
    fn empty_and_wrong_version() {
        assert!(matches!(from_bytes(&[]), Err(Error::Format(_))));
        let bytes = to_bytes(&model()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("version 1", "version 9", 1);
        // Only the header changed; the blob bytes that are not UTF-8 are
        // irrelevant because the version check comes first.
        assert!(matches!(
            from_bytes(text.as_bytes()),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
