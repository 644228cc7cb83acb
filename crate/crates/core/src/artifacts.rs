//! On-disk formats shared by the command-line tools: descriptor files, pose
//! files, correspondence and report CSVs, pair manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud::Vec3;
use crate::encode::EncodingMode;
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::matchreg::{Correspondence, CorrespondenceSet, PairEvaluation, RecallConfig};
use crate::net::{DescriptorSet, FeatureMatrix};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"PPFD";
pub const DESCRIPTOR_VERSION: u32 = 1;
pub const CORRESPONDENCE_HEADER: &str = "x_index,y_index,distance";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Descriptors with the encoding mode that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    pub mode: EncodingMode,
    pub set: DescriptorSet,
}

/// Layout: magic, version and header length (`u32` LE), header lines
/// `count=`, `dim=`, `mode=`, then `f64` LE keypoint coordinates, `u64` LE
/// keypoint indices into the source cloud and `f64` LE features.
pub fn encode_descriptors(file: &DescriptorFile) -> Vec<u8> {
    let set = &file.set;
    let header = format!("count={}\ndim={}\nmode={}\n", set.len(), set.dim(), file.mode);
    let mut buf = Vec::with_capacity(16 + header.len() + set.len() * (32 + 8 * set.dim()));
    buf.extend_from_slice(DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for p in &set.keypoints {
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &i in &set.keypoint_indices {
        buf.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for v in &set.features.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn split<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::parse(format!("descriptor file truncated in {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn le8(c: &[u8]) -> [u8; 8] {
    c.try_into().expect("chunk of 8")
}

pub fn decode_descriptors(mut bytes: &[u8]) -> Result<DescriptorFile> {
    if split(&mut bytes, 4, "magic")? != DESCRIPTOR_MAGIC {
        return Err(Error::parse("not a descriptor file (bad magic)"));
    }
    let word = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = word(split(&mut bytes, 4, "version")?);
    if version != DESCRIPTOR_VERSION {
        return Err(Error::parse(format!("unsupported descriptor file version {version}")));
    }
    let header_len = word(split(&mut bytes, 4, "header length")?) as usize;
    let header = std::str::from_utf8(split(&mut bytes, header_len, "header")?)
        .map_err(|_| Error::parse("descriptor header is not UTF-8"))?;
    let (mut count, mut dim, mut mode) = (None, None, None);
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("descriptor header line without '=': {line:?}")))?;
        let bad = || Error::parse(format!("descriptor header {k}={v:?} is invalid"));
        match k {
            "count" => count = Some(v.parse::<usize>().map_err(|_| bad())?),
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
            "mode" => mode = Some(v.parse::<EncodingMode>().map_err(|_| bad())?),
            other => return Err(Error::parse(format!("unknown descriptor header key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::parse(format!("descriptor header lacks {k}"));
    let (n, dim, mode) = (
        count.ok_or_else(|| missing("count"))?,
        dim.ok_or_else(|| missing("dim"))?,
        mode.ok_or_else(|| missing("mode"))?,
    );
    let expected = n.checked_mul(32 + 8 * dim).ok_or_else(|| Error::parse("descriptor header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(format!(
            "descriptor payload has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let coords = split(&mut bytes, 24 * n, "keypoints")?;
    let keypoints = coords
        .chunks_exact(24)
        .map(|c| Vec3::new(f64::from_le_bytes(le8(&c[..8])), f64::from_le_bytes(le8(&c[8..16])), f64::from_le_bytes(le8(&c[16..]))))
        .collect();
    let indices = split(&mut bytes, 8 * n, "keypoint indices")?
        .chunks_exact(8)
        .map(|c| usize::try_from(u64::from_le_bytes(le8(c))).map_err(|_| Error::parse("keypoint index overflows")))
        .collect::<Result<Vec<_>>>()?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(le8(c))).collect();
    let features = FeatureMatrix::new(n, dim, data).map_err(|e| Error::parse(e.to_string()))?;
    let set = DescriptorSet::new(features, keypoints, indices).map_err(|e| Error::parse(format!("descriptor file: {e}")))?;
    Ok(DescriptorFile { mode, set })
}

pub fn save_descriptors(file: &DescriptorFile, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), encode_descriptors(file))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorFile> {
    decode_descriptors(&read_file(path.as_ref())?)
}

/// Twelve numbers on one line, rotation row by row then translation.
pub fn format_pose(t: &RigidTransform) -> String {
    let values: Vec<String> = t.to_row_major().iter().map(|v| format!("{v:e}")).collect();
    format!("{}\n", values.join(" "))
}

pub fn parse_pose(text: &str) -> Result<RigidTransform> {
    let values = text
        .split_whitespace()
        .map(|w| w.parse::<f64>().map_err(|_| Error::parse(format!("pose value {w:?} is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    let arr: [f64; 12] = values
        .as_slice()
        .try_into()
        .map_err(|_| Error::parse(format!("pose file holds {} numbers, expected 12", values.len())))?;
    RigidTransform::from_row_major(&arr).map_err(|e| Error::parse(format!("pose: {e}")))
}

pub fn save_pose(t: &RigidTransform, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_pose(t))
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<RigidTransform> {
    parse_pose(&read_text(path.as_ref())?)
}

/// One point index per line.
pub fn format_indices(indices: &[usize]) -> String {
    indices.iter().fold(String::new(), |mut s, i| {
        let _ = writeln!(s, "{i}");
        s
    })
}

pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| Error::parse(format!("index {l:?} is not a nonnegative integer"))))
        .collect()
}

/// Correspondences as `x_index,y_index,distance` rows, indices into the
/// source clouds.
pub fn format_correspondences(corrs: &CorrespondenceSet) -> String {
    let mut out = format!("{CORRESPONDENCE_HEADER}\n");
    for c in &corrs.pairs {
        let _ = writeln!(out, "{},{},{:e}", c.i, c.j, c.distance);
    }
    out
}

pub fn parse_correspondences(text: &str) -> Result<CorrespondenceSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CORRESPONDENCE_HEADER => {}
        other => {
            return Err(Error::parse(format!(
                "correspondence CSV must start with {CORRESPONDENCE_HEADER:?}, found {other:?}"
            )))
        }
    }
    let pairs = lines
        .enumerate()
        .map(|(k, line)| {
            let bad = || Error::parse(format!("correspondence row {}: {line:?}", k + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let [i, j, d] = cols.as_slice() else { return Err(bad()) };
            let distance: f64 = d.parse().map_err(|_| bad())?;
            if !(distance.is_finite() && distance >= 0.0) {
                return Err(bad());
            }
            Ok(Correspondence {
                i: i.parse().map_err(|_| bad())?,
                j: j.parse().map_err(|_| bad())?,
                distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrespondenceSet { pairs })
}

/// Rewrites keypoint-row correspondences in terms of cloud point indices.
pub fn to_cloud_indices(corrs: &CorrespondenceSet, fx: &DescriptorSet, fy: &DescriptorSet) -> CorrespondenceSet {
    CorrespondenceSet {
        pairs: corrs
            .pairs
            .iter()
            .map(|c| Correspondence {
                i: fx.keypoint_indices[c.i],
                j: fy.keypoint_indices[c.j],
                distance: c.distance,
            })
            .collect(),
    }
}

/// One fragment pair listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub x: PathBuf,
    pub y: PathBuf,
    pub pose: PathBuf,
}

/// `X.ply<TAB>Y.ply<TAB>pose` per line; relative paths resolve against `base`.
/// Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [x, y, pose] = cols.as_slice() else {
            return Err(Error::parse(format!(
                "manifest line {} needs three tab-separated paths: {line:?}",
                k + 1
            )));
        };
        entries.push(ManifestEntry {
            x: base.join(x),
            y: base.join(y),
            pose: base.join(pose),
        });
    }
    if entries.is_empty() {
        return Err(Error::parse("manifest lists no fragment pairs"));
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[(&str, &str, &str)]) -> String {
    entries.iter().fold(String::new(), |mut s, (x, y, p)| {
        let _ = writeln!(s, "{x}\t{y}\t{p}");
        s
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&read_text(path)?, base)
}

pub fn rotation_report(rows: &[(f64, f64)]) -> String {
    rows.iter().fold(String::from("angle,ratio\n"), |mut s, (a, r)| {
        let _ = writeln!(s, "{a},{r}");
        s
    })
}

pub fn sparsity_report(rows: &[(f64, f64)]) -> String {
    rows.iter().fold(String::from("fraction,recall\n"), |mut s, (f, r)| {
        let _ = writeln!(s, "{f},{r}");
        s
    })
}

pub fn recall_report(evals: &[PairEvaluation], cfg: &RecallConfig) -> String {
    evals.iter().enumerate().fold(String::from("pair_id,inlier_ratio,matched\n"), |mut s, (k, e)| {
        let _ = writeln!(s, "{k},{},{}", e.inlier_ratio(cfg.tau1), u8::from(e.is_matched(cfg)));
        s
    })
}
