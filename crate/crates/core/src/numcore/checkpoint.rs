//! Binary parameter files.
//!
//! Layout: the 8-byte magic `MACRLCKP`, a little-endian `u32` header length,
//! a UTF-8 `key=value` header (one pair per line: layout, dims, activations,
//! count, endian, dtype), then `count` little-endian IEEE-754 doubles.
//! A JSON sidecar `<file>.meta.json` carries run metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Activation, FlatParams, Layout, LstmParams, MlpParams};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MACRLCKP";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub lifetime: u64,
    pub episodes: u64,
    pub config_hash: String,
}

pub trait Checkpointable: FlatParams<f64> + Sized {
    fn rebuild(layout: &Layout, values: Vec<f64>) -> Result<Self>;
}

impl Checkpointable for MlpParams<f64> {
    fn rebuild(layout: &Layout, values: Vec<f64>) -> Result<Self> {
        MlpParams::from_values(layout, values)
    }
}

impl Checkpointable for LstmParams<f64> {
    fn rebuild(layout: &Layout, values: Vec<f64>) -> Result<Self> {
        LstmParams::from_values(layout, values)
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn header_for(layout: &Layout) -> String {
    let (dims, acts) = match layout {
        Layout::Mlp { dims, hidden } => {
            let mut acts: Vec<&str> = vec![hidden.tag(); dims.len() - 2];
            acts.push("softmax");
            (join(dims), acts.join(","))
        }
        Layout::Lstm {
            input,
            hidden,
            head,
        } => (join(&[*input, *hidden]), format!("tanh,{}", head.tag())),
    };
    format!(
        "layout={}\ndims={}\nactivations={}\ncount={}\nendian=little\ndtype=f64\n",
        layout.name(),
        dims,
        acts,
        layout.len()
    )
}

fn parse_header(text: &str) -> Result<(Layout, usize)> {
    let mut layout_name = None;
    let mut dims = None;
    let mut acts = None;
    let mut count = None;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad checkpoint header line {line:?}")))?;
        match k {
            "layout" => layout_name = Some(v.to_string()),
            "dims" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    v.split(',').map(|d| d.parse::<usize>()).collect();
                dims = Some(parsed.map_err(|e| Error::Parse(format!("checkpoint dims: {e}")))?);
            }
            "activations" => acts = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            "count" => {
                count = Some(
                    v.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("checkpoint count: {e}")))?,
                )
            }
            "endian" if v != "little" => {
                return Err(Error::Parse(format!("unsupported endianness {v}")))
            }
            "dtype" if v != "f64" => return Err(Error::Parse(format!("unsupported dtype {v}"))),
            "endian" | "dtype" => {}
            other => {
                return Err(Error::Parse(format!(
                    "unknown checkpoint header key {other}"
                )))
            }
        }
    }
    let missing = |what: &str| Error::Parse(format!("checkpoint header lacks {what}"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let acts = acts.ok_or_else(|| missing("activations"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    let act = |tag: &str| {
        Activation::from_tag(tag).ok_or_else(|| Error::Parse(format!("unknown activation {tag}")))
    };
    let layout = match layout_name.as_deref() {
        Some("mlp") => {
            let hidden = match acts.first().map(String::as_str) {
                Some("softmax") | None => Activation::Tanh,
                Some(tag) => act(tag)?,
            };
            Layout::Mlp { dims, hidden }
        }
        Some("lstm") if dims.len() == 2 && acts.len() == 2 => Layout::Lstm {
            input: dims[0],
            hidden: dims[1],
            head: act(&acts[1])?,
        },
        Some(other) => {
            return Err(Error::Parse(format!(
                "unsupported checkpoint layout {other}"
            )))
        }
        None => return Err(missing("layout")),
    };
    layout.validate()?;
    if layout.len() != count {
        return Err(Error::Layout(format!(
            "header count {count} disagrees with layout size {}",
            layout.len()
        )));
    }
    Ok((layout, count))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_checkpoint<P: Checkpointable>(
    path: &Path,
    params: &P,
    meta: &CheckpointMeta,
) -> Result<()> {
    let header = header_for(params.layout());
    let mut bytes = Vec::with_capacity(12 + header.len() + 8 * params.values().len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&meta_file, json + "\n").map_err(|e| Error::io(&meta_file, e))
}

pub fn read_checkpoint<P: Checkpointable>(path: &Path) -> Result<(P, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Parse(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body_start = 12 + header_len;
    let header = bytes
        .get(12..body_start)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or_else(|| Error::Parse("truncated or non-UTF-8 checkpoint header".into()))?;
    let (layout, count) = parse_header(header)?;
    let body = &bytes[body_start..];
    if body.len() != 8 * count {
        return Err(Error::Shape {
            context: "checkpoint payload",
            expected: 8 * count,
            got: body.len(),
        });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = P::rebuild(&layout, values)?;
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", meta_file.display())))?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{init_lstm, init_mlp};
    use proptest::prelude::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seed: 3,
            lifetime: 7,
            episodes: 1750,
            config_hash: "abc123".into(),
        }
    }

    #[test]
    fn lstm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent0_intrinsic.ckpt");
        let p = init_lstm::<f64>(41, 16, Activation::Tanh, 1.0, 9).unwrap();
        write_checkpoint(&path, &p, &meta()).unwrap();
        let (q, m): (LstmParams<f64>, _) = read_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert_eq!(q.layout(), p.layout());
        assert!(p
            .values()
            .iter()
            .zip(q.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wrong_kind_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = init_mlp::<f64>(&[4, 8, 6], Activation::Tanh, 1).unwrap();
        write_checkpoint(&path, &p, &meta()).unwrap();
        let r: Result<(LstmParams<f64>, _)> = read_checkpoint(&path);
        assert!(matches!(r, Err(Error::Layout(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = init_mlp::<f64>(&[4, 8, 6], Activation::Tanh, 1).unwrap();
        write_checkpoint(&path, &p, &meta()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        let r: Result<(MlpParams<f64>, _)> = read_checkpoint(&path);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn mlp_round_trip_preserves_bits(values in proptest::collection::vec(any::<f64>(), 4 * 3 + 3 + 3 * 6 + 6)) {
            let layout = Layout::Mlp { dims: vec![4, 3, 6], hidden: Activation::Tanh };
            let p = MlpParams::from_values(&layout, values).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.ckpt");
            write_checkpoint(&path, &p, &meta()).unwrap();
            let (q, _): (MlpParams<f64>, _) = read_checkpoint(&path).unwrap();
            prop_assert!(p.values().iter().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
