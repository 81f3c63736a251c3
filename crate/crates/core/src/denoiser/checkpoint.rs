//! `UCK1` checkpoints.
//!
//! Layout (little-endian): magic `UCK1`, u32 header length, JSON header
//! `{config, step, optimizer}`, u32 tensor count, then per tensor a u32
//! name length, the UTF-8 name, u32 rank, u32 dims and f32 values.
//! Optimizer moments are stored as `adam.m.<name>` and `adam.v.<name>`.

use serde::{Deserialize, Serialize};

use super::train::AdamState;
use super::{Denoiser, DenoiserConfig, Params, PARAM_COUNT, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::io::{put_u32, ByteReader};

pub const MAGIC: &[u8; 4] = b"UCK1";
const FORMAT: &str = "UCK1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    step: u64,
    optimizer: bool,
}

/// Model weights plus optional optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub adam: Option<AdamState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_u32(out, name.len(), FORMAT)?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len(), FORMAT)?;
    for &d in shape {
        put_u32(out, d, FORMAT)?;
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(model: &Denoiser, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let header = Header { config: model.config().clone(), step: adam.map_or(0, |a| a.step), optimizer: adam.is_some() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(FORMAT, e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, json.len(), FORMAT)?;
    out.extend_from_slice(&json);
    let shapes = model.config().param_shapes();
    let mut sets: Vec<(String, &Params)> = vec![(String::new(), model.params())];
    if let Some(a) = adam {
        sets.push(("adam.m.".into(), &a.m));
        sets.push(("adam.v.".into(), &a.v));
    }
    put_u32(&mut out, sets.len() * PARAM_COUNT, FORMAT)?;
    for (prefix, params) in sets {
        for (idx, data) in params.tensors().iter().enumerate() {
            put_tensor(&mut out, &format!("{prefix}{}", PARAM_NAMES[idx]), &shapes[idx], data)?;
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, FORMAT);
    if r.take(4)? != MAGIC {
        return Err(Error::format(FORMAT, "bad magic"));
    }
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::format(FORMAT, e.to_string()))?;
    header.config.validate()?;
    let shapes = header.config.param_shapes();
    let count = r.u32()?;
    let expect = if header.optimizer { 3 * PARAM_COUNT } else { PARAM_COUNT };
    if count != expect {
        return Err(Error::format(FORMAT, format!("{count} tensors, expected {expect}")));
    }
    let mut sets = vec![vec![Vec::new(); PARAM_COUNT]; count / PARAM_COUNT];
    let prefixes = ["", "adam.m.", "adam.v."];
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| Error::format(FORMAT, "tensor name is not UTF-8"))?;
        let (set, idx) = prefixes[..sets.len()]
            .iter()
            .enumerate()
            .rev()
            .find_map(|(s, p)| name.strip_prefix(p).and_then(|n| PARAM_NAMES.iter().position(|&k| k == n)).map(|i| (s, i)))
            .ok_or_else(|| Error::format(FORMAT, format!("unknown tensor {name:?}")))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != shapes[idx] {
            return Err(Error::ShapeMismatch(format!("tensor {name} has shape {shape:?}, config implies {:?}", shapes[idx])));
        }
        if !sets[set][idx].is_empty() {
            return Err(Error::format(FORMAT, format!("duplicate tensor {name:?}")));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        sets[set][idx] = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    }
    r.finish()?;
    let mut sets = sets.into_iter();
    let params = Params::from_tensors(&header.config, sets.next().expect("weights present"))?;
    let model = Denoiser::new(header.config.clone(), params)?;
    let adam = match (sets.next(), sets.next()) {
        (Some(m), Some(v)) => Some(AdamState {
            m: Params::from_tensors(&header.config, m)?,
            v: Params::from_tensors(&header.config, v)?,
            step: header.step,
        }),
        _ => None,
    };
    Ok(Checkpoint { model, adam })
}

pub fn save(path: &std::path::Path, model: &Denoiser, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, to_bytes(model, adam)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::tests::tiny_config;

    fn f32_round(p: &Params) -> Vec<Vec<f64>> {
        p.tensors().iter().map(|t| t.iter().map(|&v| v as f32 as f64).collect()).collect()
    }

    #[test]
    fn round_trip_with_optimizer() {
        let model = Denoiser::init(tiny_config(), 3).unwrap();
        let mut adam = AdamState::new(model.params());
        adam.step = 12;
        adam.m = Params::init(&tiny_config(), 4);
        let bytes = to_bytes(&model, Some(&adam)).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.model.config(), model.config());
        assert_eq!(ck.model.params().tensors(), f32_round(model.params()).as_slice());
        let a = ck.adam.unwrap();
        assert_eq!(a.step, 12);
        assert_eq!(a.m.tensors(), f32_round(&adam.m).as_slice());
        // Re-encoding f32-exact values is lossless.
        assert_eq!(to_bytes(&ck.model, Some(&a)).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let model = Denoiser::init(tiny_config(), 3).unwrap();
        let bytes = to_bytes(&model, None).unwrap();
        assert!(from_bytes(&bytes).unwrap().adam.is_none());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 2]), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn rejects_shape_that_disagrees_with_config() {
        let model = Denoiser::init(tiny_config(), 3).unwrap();
        let mut bytes = to_bytes(&model, None).unwrap();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[8..8 + hlen].to_vec()).unwrap();
        let patched = json.replace("\"width\":8", "\"width\":9");
        assert_eq!(patched.len(), json.len());
        bytes.splice(8..8 + hlen, patched.into_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::ShapeMismatch(_))));
    }
}
