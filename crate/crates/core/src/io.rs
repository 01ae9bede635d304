//! File formats: PLY point clouds, binary class scores and CSV tables.
//!
//! Every writer goes through a temporary file in the destination directory
//! that is renamed into place, so readers never observe partial output.

use std::fs;
use std::io::{BufRead, Cursor, Read, Write};
use std::path::Path;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::cutpursuit::Partition;
use crate::domain::{PanopticLabels, PointCloud, IGNORE};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;

/// Writes `path` atomically through a temporary sibling file.
pub fn atomic_write(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    format: PlyFormat,
    count: usize,
    properties: Vec<(String, Scalar)>,
    lines: usize,
}

fn parse_header(reader: &mut impl BufRead, path: &str) -> Result<Header> {
    let mut line = String::new();
    let mut n = 0usize;
    let mut next = |line: &mut String, n: &mut usize| -> Result<bool> {
        line.clear();
        *n += 1;
        Ok(reader.read_line(line)? > 0)
    };
    if !next(&mut line, &mut n)? || line.trim_end() != "ply" {
        return Err(Error::format(path, 1, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    loop {
        if !next(&mut line, &mut n)? {
            return Err(Error::format(path, n, "header ends without end_header"));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(Error::format(path, n, format!("unsupported format '{other}'"))),
            ["element", "vertex", c] => {
                count = Some(c.parse::<usize>().map_err(|_| Error::format(path, n, format!("bad vertex count '{c}'")))?);
                in_vertex = true;
            }
            ["element", name, c] => {
                if *c != "0" {
                    return Err(Error::format(path, n, format!("unsupported element '{name}'")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] => return Err(Error::format(path, n, "list properties are not supported")),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty).ok_or_else(|| Error::format(path, n, format!("unknown property type '{ty}'")))?;
                if in_vertex {
                    if properties.iter().any(|(p, _)| p == name) {
                        return Err(Error::format(path, n, format!("duplicate property '{name}'")));
                    }
                    properties.push((name.to_string(), scalar));
                }
            }
            _ => return Err(Error::format(path, n, format!("unrecognized header line '{}'", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| Error::format(path, n, "header has no format line"))?;
    let count = count.ok_or_else(|| Error::format(path, n, "header has no vertex element"))?;
    for required in ["x", "y", "z"] {
        if !properties.iter().any(|(p, _)| p == required) {
            return Err(Error::format(path, n, format!("vertex element lacks property '{required}'")));
        }
    }
    Ok(Header {
        format,
        count,
        properties,
        lines: n,
    })
}

struct Columns {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    semantic: Option<usize>,
    object: Option<usize>,
}

impl Columns {
    fn new(props: &[(String, Scalar)]) -> Self {
        let find = |name: &str| props.iter().position(|(p, _)| p == name);
        let rgb = match (find("red"), find("green"), find("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        Self {
            xyz: [find("x").unwrap(), find("y").unwrap(), find("z").unwrap()],
            rgb,
            semantic: find("semantic_class"),
            object: find("object_id"),
        }
    }
}

fn to_label(v: f64, what: &str, path: &str, line: usize) -> Result<u32> {
    if v == -1.0 {
        return Ok(IGNORE);
    }
    if v.fract() != 0.0 || !(0.0..IGNORE as f64).contains(&v) {
        return Err(Error::format(path, line, format!("{what} {v} is neither -1 nor a valid id")));
    }
    Ok(v as u32)
}

fn to_color(v: f64, path: &str, line: usize) -> Result<u8> {
    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
        return Err(Error::format(path, line, format!("color {v} outside 0..=255")));
    }
    Ok(v as u8)
}

fn assemble(rows: impl Iterator<Item = Result<(Vec<f64>, usize)>>, cols: &Columns, count: usize, path: &str) -> Result<PointCloud> {
    let mut cloud = PointCloud::new(Vec::with_capacity(count));
    let mut colors = cols.rgb.map(|_| Vec::with_capacity(count));
    let mut semantic = cols.semantic.map(|_| Vec::with_capacity(count));
    let mut object = cols.object.map(|_| Vec::with_capacity(count));
    for row in rows {
        let (v, line) = row?;
        let p = cols.xyz.map(|i| v[i]);
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::format(path, line, "non-finite coordinate"));
        }
        cloud.positions.push(p);
        if let (Some(rgb), Some(colors)) = (cols.rgb, colors.as_mut()) {
            colors.push([to_color(v[rgb[0]], path, line)?, to_color(v[rgb[1]], path, line)?, to_color(v[rgb[2]], path, line)?]);
        }
        if let (Some(i), Some(s)) = (cols.semantic, semantic.as_mut()) {
            s.push(to_label(v[i], "semantic_class", path, line)?);
        }
        if let (Some(i), Some(o)) = (cols.object, object.as_mut()) {
            o.push(to_label(v[i], "object_id", path, line)?);
        }
    }
    cloud.colors = colors;
    cloud.semantic = semantic;
    cloud.object = object;
    Ok(cloud)
}

/// Parses a PLY document; `path` only labels error messages.
pub fn parse_ply(bytes: &[u8], path: &str) -> Result<PointCloud> {
    let mut reader = Cursor::new(bytes);
    let header = parse_header(&mut reader, path)?;
    let cols = Columns::new(&header.properties);
    let props = &header.properties;
    match header.format {
        PlyFormat::Ascii => {
            let mut lines = (&mut reader).lines();
            let first = header.lines + 1;
            let rows = (0..header.count).map(|k| {
                let line_no = first + k;
                let line = lines
                    .next()
                    .ok_or_else(|| Error::format(path, line_no, format!("expected {} vertices, found {k}", header.count)))??;
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|_| Error::format(path, line_no, format!("cannot parse '{w}'"))))
                    .collect::<Result<_>>()?;
                if values.len() != props.len() {
                    return Err(Error::format(path, line_no, format!("expected {} values, found {}", props.len(), values.len())));
                }
                Ok((values, line_no))
            });
            assemble(rows, &cols, header.count, path)
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            let start = reader.position() as usize;
            let body = &bytes[start..];
            if body.len() < stride * header.count {
                return Err(Error::format(
                    path,
                    header.lines,
                    format!("binary body holds {} bytes, {} vertices need {}", body.len(), header.count, stride * header.count),
                ));
            }
            let rows = (0..header.count).map(|k| {
                let mut offset = k * stride;
                let values = props
                    .iter()
                    .map(|(_, s)| {
                        let v = s.read_le(&body[offset..]);
                        offset += s.size();
                        v
                    })
                    .collect();
                // records are numbered after the header lines
                Ok((values, header.lines + k + 1))
            });
            assemble(rows, &cols, header.count, path)
        }
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&fs::read(path)?, &label(path))
}

fn label_to_i32(v: u32) -> Result<i32> {
    if v == IGNORE {
        Ok(-1)
    } else {
        i32::try_from(v).map_err(|_| Error::structural(format!("label {v} does not fit a PLY int32")))
    }
}

/// Serializes a cloud: `x y z` as doubles, then optional colors and labels.
pub fn ply_bytes(cloud: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    cloud.check_lengths()?;
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if cloud.colors.is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.semantic.is_some() {
        writeln!(out, "property int semantic_class")?;
    }
    if cloud.object.is_some() {
        writeln!(out, "property int object_id")?;
    }
    writeln!(out, "end_header")?;
    for p in 0..cloud.len() {
        let pos = cloud.positions[p];
        let color = cloud.colors.as_ref().map(|c| c[p]);
        let sem = cloud.semantic.as_ref().map(|s| label_to_i32(s[p])).transpose()?;
        let obj = cloud.object.as_ref().map(|o| label_to_i32(o[p])).transpose()?;
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", pos[0], pos[1], pos[2])?;
                if let Some(c) = color {
                    write!(out, " {} {} {}", c[0], c[1], c[2])?;
                }
                for v in [sem, obj].into_iter().flatten() {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in pos {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
                for v in [sem, obj].into_iter().flatten() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let bytes = ply_bytes(cloud, format)?;
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

const SCORES_MAGIC: &[u8; 4] = b"SCLS";
const SCORES_VERSION: u32 = 1;

/// Row-major class scores with their dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub num_classes: usize,
    pub values: Vec<f64>,
}

pub fn parse_scores(bytes: &[u8], path: &str) -> Result<ScoreMatrix> {
    if bytes.len() < 20 || &bytes[..4] != SCORES_MAGIC {
        return Err(Error::format(path, 1, "missing SCLS header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCORES_VERSION {
        return Err(Error::format(path, 1, format!("unsupported scores version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let num_classes = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    let expected = rows.checked_mul(num_classes).and_then(|v| v.checked_mul(8));
    if expected != Some(body.len()) {
        return Err(Error::format(path, 1, format!("{rows}x{num_classes} scores need {expected:?} bytes, found {}", body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, k / num_classes.max(1) + 1, "non-finite score"));
    }
    Ok(ScoreMatrix { rows, num_classes, values })
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_scores(&bytes, &label(path))
}

pub fn scores_bytes(scores: &ScoreMatrix) -> Result<Vec<u8>> {
    if scores.values.len() != scores.rows * scores.num_classes {
        return Err(Error::structural("score matrix dimensions disagree with its values"));
    }
    let mut out = Vec::with_capacity(20 + 8 * scores.values.len());
    out.extend_from_slice(SCORES_MAGIC);
    out.extend_from_slice(&SCORES_VERSION.to_le_bytes());
    out.extend_from_slice(&(scores.rows as u64).to_le_bytes());
    out.extend_from_slice(&(scores.num_classes as u32).to_le_bytes());
    for v in &scores.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let bytes = scores_bytes(scores)?;
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::format(path, line, e.to_string())
}

/// Reads a headed CSV whose header must equal `columns`.
fn read_csv<T: serde::de::DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>> {
    let name = label(path);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(&name, e))?;
    let header = reader.headers().map_err(|e| csv_error(&name, e))?.clone();
    if header.iter().collect::<Vec<_>>() != columns {
        return Err(Error::format(&name, 1, format!("expected header '{}'", columns.join(","))));
    }
    reader.deserialize().map(|r| r.map_err(|e| csv_error(&name, e))).collect()
}

fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: impl Iterator<Item = T>) -> Result<()> {
    atomic_write(path, |w| {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        writer.write_record(columns).map_err(|e| Error::Io(e.into()))?;
        for row in rows {
            writer.serialize(row).map_err(|e| Error::Io(e.into()))?;
        }
        writer.flush()?;
        Ok(())
    })
}

fn check_dense(ids: &[(u32, u32)], path: &Path, what: &str) -> Result<Vec<u32>> {
    let mut out = vec![IGNORE; ids.len()];
    for (row, &(i, v)) in ids.iter().enumerate() {
        let slot = out
            .get_mut(i as usize)
            .ok_or_else(|| Error::format(label(path), row + 2, format!("{what} {i} out of range")))?;
        if *slot != IGNORE {
            return Err(Error::format(label(path), row + 2, format!("duplicate {what} {i}")));
        }
        *slot = v;
    }
    Ok(out)
}

/// `src,dst,weight,agreement`; the agreement column is empty when absent.
pub fn write_edges(path: &Path, graph: &AdjacencyGraph) -> Result<()> {
    let agreements = graph.agreements();
    write_csv(
        path,
        &["src", "dst", "weight", "agreement"],
        graph
            .edges()
            .iter()
            .zip(graph.weights())
            .enumerate()
            .map(|(e, (&(u, v), &w))| (u, v, w, agreements.map(|a| a[e]))),
    )
}

pub fn read_edges(path: &Path, node_count: usize) -> Result<AdjacencyGraph> {
    let rows: Vec<(u32, u32, f64, Option<f64>)> = read_csv(path, &["src", "dst", "weight", "agreement"])?;
    let mut graph = AdjacencyGraph::with_weights(
        node_count,
        rows.iter().map(|r| (r.0, r.1)).collect(),
        rows.iter().map(|r| r.2).collect(),
    )?;
    if rows.iter().all(|r| r.3.is_some()) && !rows.is_empty() {
        graph.set_agreements(rows.iter().map(|r| r.3.unwrap()).collect())?;
    }
    Ok(graph)
}

/// `src,dst,agreement` triples.
pub fn write_agreements(path: &Path, rows: &[(u32, u32, f64)]) -> Result<()> {
    write_csv(path, &["src", "dst", "agreement"], rows.iter())
}

pub fn read_agreements(path: &Path) -> Result<Vec<(u32, u32, f64)>> {
    let rows: Vec<(u32, u32, f64)> = read_csv(path, &["src", "dst", "agreement"])?;
    for (k, r) in rows.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.2) {
            return Err(Error::format(label(path), k + 2, format!("agreement {} outside [0, 1]", r.2)));
        }
    }
    Ok(rows)
}

/// `point_id,superpoint_id`.
pub fn write_superpoints(path: &Path, assignment: &[u32]) -> Result<()> {
    write_csv(path, &["point_id", "superpoint_id"], assignment.iter().enumerate().map(|(p, &s)| (p as u32, s)))
}

pub fn read_superpoints(path: &Path) -> Result<Vec<u32>> {
    let rows: Vec<(u32, u32)> = read_csv(path, &["point_id", "superpoint_id"])?;
    check_dense(&rows, path, "point")
}

struct Sidecar<'a>(&'a Partition);

#[derive(Serialize)]
struct SidecarEntry<'a> {
    class_distribution: &'a [f64],
    position: &'a [f64],
    size: usize,
}

impl Serialize for Sidecar<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.components.len()))?;
        for (k, c) in self.0.components.iter().enumerate() {
            map.serialize_entry(
                &k.to_string(),
                &SidecarEntry {
                    class_distribution: &c.value.class,
                    position: &c.value.position,
                    size: c.members.len(),
                },
            )?;
        }
        map.end()
    }
}

/// `node_id,component_id` plus the JSON sidecar of component values.
pub fn write_partition(csv_path: &Path, json_path: &Path, partition: &Partition) -> Result<()> {
    write_csv(
        csv_path,
        &["node_id", "component_id"],
        partition.assignment.iter().enumerate().map(|(p, &c)| (p as u32, c)),
    )?;
    let json = serde_json::to_vec_pretty(&Sidecar(partition)).map_err(|e| Error::Io(e.into()))?;
    atomic_write(json_path, |w| Ok(w.write_all(&json)?))
}

pub fn read_partition(path: &Path) -> Result<Vec<u32>> {
    let rows: Vec<(u32, u32)> = read_csv(path, &["node_id", "component_id"])?;
    check_dense(&rows, path, "node")
}

fn opt_label(v: u32) -> i64 {
    if v == IGNORE {
        -1
    } else {
        v as i64
    }
}

/// `point_id,class,object` with -1 for unlabeled.
pub fn write_labels(path: &Path, labels: &PanopticLabels) -> Result<()> {
    write_csv(
        path,
        &["point_id", "class", "object"],
        (0..labels.len()).map(|p| (p as u32, opt_label(labels.class[p]), opt_label(labels.object[p]))),
    )
}

pub fn read_labels(path: &Path) -> Result<PanopticLabels> {
    let rows: Vec<(u32, i64, i64)> = read_csv(path, &["point_id", "class", "object"])?;
    let mut class = Vec::with_capacity(rows.len());
    let mut object = Vec::with_capacity(rows.len());
    for (k, &(p, c, o)) in rows.iter().enumerate() {
        let line = k + 2;
        if p as usize != k {
            return Err(Error::format(label(path), line, format!("expected point {k}, found {p}")));
        }
        let conv = |v: i64| -> Result<u32> {
            match v {
                -1 => Ok(IGNORE),
                v if (0..IGNORE as i64).contains(&v) => Ok(v as u32),
                v => Err(Error::format(label(path), line, format!("label {v} out of range"))),
            }
        };
        class.push(conv(c)?);
        object.push(conv(o)?);
    }
    Ok(PanopticLabels { class, object })
}
