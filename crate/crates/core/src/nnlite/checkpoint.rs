//! Model checkpoint container.
//!
//! ```text
//! confbench-model v1 kind=<linear|tiny_cnn> height=H width=W conv1=C1 conv2=C2 val_auc=<f64|none>\n
//! repeated per parameter, little-endian:
//!   u32 name length, name bytes (utf-8), u32 rank, u64 x rank dims, f64 x product(dims)
//! ```

use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::model::{ModelSpec, Parameters, TrainedClassifier};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "confbench-model";
const VERSION: &str = "v1";

pub fn encode_checkpoint(model: &TrainedClassifier) -> Vec<u8> {
    let spec = model.spec();
    let auc = model.val_auc.map_or_else(|| "none".to_string(), |a| format!("{a}"));
    let mut out = format!(
        "{MAGIC} {VERSION} kind={} height={} width={} conv1={} conv2={} val_auc={auc}\n",
        spec.kind, spec.height, spec.width, spec.conv1_filters, spec.conv2_filters
    )
    .into_bytes();
    for (name, t) in model.parameters().entries() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_header(line: &str) -> std::result::Result<(ModelSpec, Option<f64>), String> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err("not a model checkpoint".into());
    }
    if tokens.next() != Some(VERSION) {
        return Err("unsupported checkpoint version".into());
    }
    let fields: HashMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("header missing '{k}'"));
    let num =
        |k: &str| -> std::result::Result<usize, String> { get(k)?.parse().map_err(|_| format!("bad value for '{k}'")) };
    let kind = get("kind")?.parse().map_err(|e: Error| e.to_string())?;
    let spec = ModelSpec {
        kind,
        height: num("height")?,
        width: num("width")?,
        conv1_filters: num("conv1")?,
        conv2_filters: num("conv2")?,
    };
    let auc = match get("val_auc")? {
        "none" => None,
        v => Some(v.parse().map_err(|_| "bad val_auc".to_string())?),
    };
    Ok((spec, auc))
}

pub fn decode_checkpoint(data: &[u8], path: &Path) -> Result<TrainedClassifier> {
    let bad = |msg: String| Error::format(path, msg);
    let nl = data
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&data[..nl]).map_err(|_| bad("header is not utf-8".into()))?;
    let (spec, val_auc) = parse_header(header).map_err(bad)?;
    spec.validate()?;

    let mut cur = Cursor { data, pos: nl + 1 };
    let mut entries = Vec::new();
    for _ in 0..spec.parameter_shapes().len() {
        let record = (|| -> std::result::Result<(String, Tensor), String> {
            let n = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(n)?)
                .map_err(|_| "parameter name is not utf-8")?
                .to_string();
            let rank = cur.u32()? as usize;
            if !(1..=4).contains(&rank) {
                return Err(format!("parameter {name}: rank {rank}"));
            }
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or("shape overflow")?;
            let raw = cur.take(count.checked_mul(8).ok_or("shape overflow")?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, values).map_err(|e| e.to_string())?;
            Ok((name, t))
        })()
        .map_err(bad)?;
        entries.push(record);
    }
    if cur.pos != data.len() {
        return Err(bad(format!("{} trailing bytes", data.len() - cur.pos)));
    }
    let params = Parameters::new(&spec, entries)?;
    let mut model = TrainedClassifier::from_parameters(spec, params)?;
    model.val_auc = val_auc;
    Ok(model)
}

pub fn save_checkpoint(model: &TrainedClassifier, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&encode_checkpoint(model))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedClassifier> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    decode_checkpoint(&data, path)
}
