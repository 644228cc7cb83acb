//! ASCII PLY subset: one `vertex` element with real-valued scalar properties.
//!
//! Reals are written with the shortest representation that parses back to
//! the same `f64`, so save/load round trips are exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file)).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(cloud, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `cloud` with extra `r g b` real properties in `[0, 1]` and a
/// `comment pca-colorized` header line.
pub fn save_ply_colored(cloud: &PointCloud, colors: &[[f64; 3]], path: impl AsRef<Path>) -> Result<()> {
    if colors.len() != cloud.len() {
        return Err(Error::shape(format!(
            "{} colors for {} points",
            colors.len(),
            cloud.len()
        )));
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_colored(cloud, colors, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W) -> std::io::Result<()> {
    write_body(cloud, None, w)
}

pub fn write_ply_colored<W: Write>(cloud: &PointCloud, colors: &[[f64; 3]], w: &mut W) -> std::io::Result<()> {
    write_body(cloud, Some(colors), w)
}

fn write_body<W: Write>(cloud: &PointCloud, colors: Option<&[[f64; 3]]>, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    if colors.is_some() {
        writeln!(w, "comment pca-colorized")?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    let mut props = vec!["x", "y", "z"];
    if cloud.has_normals() {
        props.extend(["nx", "ny", "nz"]);
    }
    if colors.is_some() {
        props.extend(["r", "g", "b"]);
    }
    for p in &props {
        writeln!(w, "property double {p}")?;
    }
    writeln!(w, "end_header")?;
    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        write!(w, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        if let Some(n) = normals {
            let n = n[i];
            write!(w, " {:?} {:?} {:?}", n.x, n.y, n.z)?;
        }
        if let Some(c) = colors {
            let c = c[i];
            write!(w, " {:?} {:?} {:?}", c[0], c[1], c[2])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud> {
    let mut lines = BufReader::new(reader).lines();
    let mut next_line = |what: &str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::parse(format!("reading {what}: {e}"))),
            None => Err(Error::parse(format!("unexpected end of file while reading {what}"))),
        }
    };

    if next_line("magic")?.trim() != "ply" {
        return Err(Error::parse("missing `ply` magic line"));
    }

    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut saw_format = false;
    loop {
        let line = next_line("header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, ver] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(format!(
                        "unsupported PLY format `{fmt}`; only ascii is accepted"
                    )));
                }
                if *ver != "1.0" {
                    return Err(Error::parse(format!("unsupported PLY version `{ver}`")));
                }
                saw_format = true;
            }
            ["element", "vertex", count] => {
                if vertex_count.is_some() {
                    return Err(Error::parse("duplicate vertex element"));
                }
                vertex_count = Some(
                    count
                        .parse()
                        .map_err(|_| Error::parse(format!("bad vertex count `{count}`")))?,
                );
            }
            ["element", other, ..] => {
                return Err(Error::parse(format!("unsupported element `{other}`")));
            }
            ["property", "list", ..] => {
                return Err(Error::parse("list properties are not supported"));
            }
            ["property", ty, name] => {
                if vertex_count.is_none() {
                    return Err(Error::parse("property before element declaration"));
                }
                if !SCALAR_TYPES.contains(ty) {
                    return Err(Error::parse(format!("unknown property type `{ty}`")));
                }
                if props.iter().any(|p| p == name) {
                    return Err(Error::parse(format!("duplicate property `{name}`")));
                }
                props.push((*name).to_string());
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(format!("malformed header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(Error::parse("missing format line"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse("missing `element vertex`"))?;

    let column = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse("vertex element lacks x, y, z properties")),
    };
    let normal_cols = match (column("nx"), column("ny"), column("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::with_capacity(count);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(count));
    let mut values = vec![0.0; props.len()];
    let mut read = 0usize;
    while read < count {
        let line = match lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => return Err(Error::parse(format!("reading vertex {read}: {e}"))),
            None => {
                return Err(Error::parse(format!(
                    "header declares {count} vertices but body has {read}"
                )))
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut n_tokens = 0;
        for (slot, tok) in line.split_whitespace().enumerate() {
            if slot >= values.len() {
                return Err(Error::parse(format!(
                    "vertex {read} has more than {} values",
                    values.len()
                )));
            }
            values[slot] = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(format!("vertex {read}: non-numeric token `{tok}`")))?;
            n_tokens += 1;
        }
        if n_tokens != values.len() {
            return Err(Error::parse(format!(
                "vertex {read} has {n_tokens} values, expected {}",
                values.len()
            )));
        }
        points.push(Vec3::new(values[xi], values[yi], values[zi]));
        if let (Some(ns), Some((a, b, c))) = (normals.as_mut(), normal_cols) {
            ns.push(Vec3::new(values[a], values[b], values[c]));
        }
        read += 1;
    }
    for line in lines {
        let line = line.map_err(|e| Error::parse(format!("reading trailing data: {e}")))?;
        if !line.trim().is_empty() {
            return Err(Error::parse(format!(
                "header declares {count} vertices but body has more lines"
            )));
        }
    }

    let cloud = match normals {
        Some(ns) => PointCloud::with_normals(points, ns),
        None => PointCloud::new(points),
    };
    cloud.map_err(|e| Error::parse(e.to_string()))
}
