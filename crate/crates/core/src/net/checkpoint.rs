use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{Architecture, PpfNetParams, FUSION_WIDTH, POINT_WIDTH};
use crate::error::{Error, Result};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PPFN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn widths(list: &[usize]) -> String {
    list.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn header_text(params: &PpfNetParams, state: Option<&AdamState>) -> String {
    let mut h = String::new();
    h.push_str(&format!("input_dim={}\n", params.input_dim()));
    h.push_str(&format!("point_widths={}\n", widths(&[POINT_WIDTH; 3])));
    h.push_str(&format!("fusion_widths={}\n", widths(&[FUSION_WIDTH; 2])));
    h.push_str(&format!("global_context={}\n", params.arch.global_context));
    match state {
        Some(s) => {
            h.push_str("optimizer=adam\n");
            h.push_str(&format!("adam_step={}\n", s.step));
        }
        None => h.push_str("optimizer=none\n"),
    }
    h
}

/// Serializes parameters and optional Adam moments as little-endian `f32`.
pub fn write_checkpoint<W: Write>(mut w: W, params: &PpfNetParams, state: Option<&AdamState>) -> Result<()> {
    params.validate()?;
    if let Some(s) = state {
        s.check_shape(params)?;
    }
    let header = header_text(params, state);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    let mut blocks = vec![params];
    if let Some(s) = state {
        blocks.push(&s.m);
        blocks.push(&s.v);
    }
    for block in blocks {
        for t in block.tensors() {
            for &v in t {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint stream>", e))
}

pub fn save_checkpoint(params: &PpfNetParams, state: Option<&AdamState>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, params, state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PpfNetParams, Option<AdamState>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::parse(format!("checkpoint truncated in {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_header(text: &str) -> Result<BTreeMap<&str, &str>> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("checkpoint header line without '=': {line:?}")))?;
        if map.insert(k.trim(), v.trim()).is_some() {
            return Err(Error::parse(format!("duplicate checkpoint header key {k:?}")));
        }
    }
    Ok(map)
}

fn field<'a>(map: &BTreeMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    map.get(key)
        .copied()
        .ok_or_else(|| Error::parse(format!("checkpoint header lacks {key}")))
}

fn parse_number<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = field(map, key)?;
    raw.parse()
        .map_err(|_| Error::parse(format!("checkpoint header {key}={raw:?} is not a number")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(PpfNetParams, Option<AdamState>)> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)
        .map_err(|e| Error::io("<checkpoint stream>", e))?;
    let mut bytes = all.as_slice();
    if take(&mut bytes, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse("not a checkpoint (bad magic)"));
    }
    let version = read_u32(&mut bytes, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = read_u32(&mut bytes, "header length")? as usize;
    let header = std::str::from_utf8(take(&mut bytes, header_len, "header")?)
        .map_err(|_| Error::parse("checkpoint header is not UTF-8"))?;
    let map = parse_header(header)?;

    let input_dim: usize = parse_number(&map, "input_dim")?;
    let global_context = match field(&map, "global_context")? {
        "true" => true,
        "false" => false,
        other => return Err(Error::parse(format!("checkpoint global_context={other:?}"))),
    };
    let arch = Architecture::new(input_dim, global_context).map_err(|e| Error::parse(e.to_string()))?;
    let expect_widths = [
        ("point_widths", widths(&[POINT_WIDTH; 3])),
        ("fusion_widths", widths(&[FUSION_WIDTH; 2])),
    ];
    for (key, want) in expect_widths {
        let got = field(&map, key)?;
        if got != want {
            return Err(Error::parse(format!("checkpoint {key}={got} does not match this network ({want})")));
        }
    }
    let with_adam = match field(&map, "optimizer")? {
        "adam" => true,
        "none" => false,
        other => return Err(Error::parse(format!("unknown optimizer {other:?} in checkpoint"))),
    };

    let count = arch.param_count();
    let blocks = if with_adam { 3 } else { 1 };
    let expected = count * blocks * 4;
    if bytes.len() != expected {
        return Err(Error::parse(format!(
            "checkpoint payload has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut fill = || {
        let mut p = PpfNetParams::zeros(arch);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().expect("payload length checked");
            }
        }
        p
    };
    let params = fill();
    params.validate().map_err(|e| Error::parse(format!("checkpoint parameters: {e}")))?;
    let state = if with_adam {
        let m = fill();
        let v = fill();
        let step = parse_number(&map, "adam_step")?;
        Some(AdamState { m, v, step })
    } else {
        None
    };
    Ok((params, state))
}
