//! OBJ / PLY mesh files and the per-vertex segmentation label file.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use super::{CorrespondedMesh, MeshError, MeshTopology, Result, ATTRIBUTE_COUNT};

/// Positions and faces exactly as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMesh {
    pub positions: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
    PlyBinary,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::PlyBinary),
            other => Err(MeshError::Format(format!("{other:?}"))),
        }
    }
}

/// Reads an OBJ or PLY file and binds it to `topology`.
///
/// The file must have exactly the topology's vertex count and the same face
/// list; anything else is a correspondence error.
pub fn load_mesh(path: &Path, topology: &Arc<MeshTopology>) -> Result<CorrespondedMesh> {
    let raw = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => read_obj(BufReader::new(fs::File::open(path)?))?,
        _ => read_ply(BufReader::new(fs::File::open(path)?))?,
    };
    bind(raw, topology)
}

pub(crate) fn bind(raw: RawMesh, topology: &Arc<MeshTopology>) -> Result<CorrespondedMesh> {
    if raw.positions.len() != topology.vertex_count() {
        return Err(MeshError::Correspondence(format!(
            "file has {} vertices, topology expects {}",
            raw.positions.len(),
            topology.vertex_count()
        )));
    }
    if raw.faces != topology.faces() {
        return Err(MeshError::Correspondence(
            "face list differs from the shared topology".into(),
        ));
    }
    CorrespondedMesh::new(Arc::clone(topology), raw.positions)
}

pub fn write_mesh(path: &Path, mesh: &CorrespondedMesh) -> Result<()> {
    let format = MeshFormat::from_path(path)?;
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        MeshFormat::Obj => write_obj(&mut file, mesh.positions(), mesh.topology().faces())?,
        other => write_ply(
            &mut file,
            mesh.positions(),
            mesh.topology().faces(),
            other == MeshFormat::PlyBinary,
        )?,
    }
    file.flush()?;
    Ok(())
}

pub fn read_obj<R: BufRead>(reader: R) -> Result<RawMesh> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = parse_f64(tokens.next(), lineno + 1)?;
                }
                positions.push(p);
            }
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(MeshError::Parse {
                        line: lineno + 1,
                        message: format!("only triangles are supported, got {} corners", idx.len()),
                    });
                }
                let mut f = [0usize; 3];
                for (slot, tok) in f.iter_mut().zip(idx) {
                    *slot = obj_index(tok, positions.len(), lineno + 1)?;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok(RawMesh { positions, faces })
}

fn obj_index(token: &str, seen: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("bad face index {token:?}"),
    })?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        seen as i64 + raw
    } else {
        -1
    };
    if resolved < 0 {
        return Err(MeshError::Parse {
            line,
            message: format!("face index {raw} out of range"),
        });
    }
    Ok(resolved as usize)
}

fn parse_f64(token: Option<&str>, line: usize) -> Result<f64> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MeshError::Parse {
            line,
            message: "expected a number".into(),
        })
}

pub fn write_obj<W: Write>(out: &mut W, positions: &[[f64; 3]], faces: &[[usize; 3]]) -> Result<()> {
    out.write_all(write_obj_string(positions, faces).as_bytes())?;
    Ok(())
}

/// OBJ text; coordinates use the shortest representation that round-trips.
pub fn write_obj_string(positions: &[[f64; 3]], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(positions.len() * 40 + faces.len() * 20);
    for p in positions {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_ply<W: Write>(
    out: &mut W,
    positions: &[[f64; 3]],
    faces: &[[usize; 3]],
    binary: bool,
) -> Result<()> {
    let format = if binary {
        "binary_little_endian"
    } else {
        "ascii"
    };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        positions.len(),
        faces.len()
    )?;
    if binary {
        let mut buf = Vec::with_capacity(positions.len() * 24 + faces.len() * 13);
        for p in positions {
            for c in p {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for f in faces {
            buf.push(3u8);
            for &i in f {
                buf.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    } else {
        let mut s = String::new();
        for p in positions {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        for f in faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
        out.write_all(s.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&bytes[..$n]);
                if little {
                    <$t>::from_le_bytes(a) as f64
                } else {
                    <$t>::from_be_bytes(a) as f64
                }
            }};
        }
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => num!(i16, 2),
            ScalarType::U16 => num!(u16, 2),
            ScalarType::I32 => num!(i32, 4),
            ScalarType::U32 => num!(u32, 4),
            ScalarType::F32 => num!(f32, 4),
            ScalarType::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum PlyEncoding {
    Ascii,
    Binary { little: bool },
}

pub fn read_ply<R: BufRead>(mut reader: R) -> Result<RawMesh> {
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut lineno = 0;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(MeshError::Parse {
                line: lineno,
                message: "missing end_header".into(),
            });
        }
        lineno += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| MeshError::Parse {
            line: lineno,
            message: m.to_string(),
        };
        match tokens.first().copied() {
            Some("ply") if lineno == 1 => {}
            _ if lineno == 1 => return Err(bad("not a PLY file")),
            Some("format") => {
                encoding = Some(match tokens.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::Binary { little: true },
                    Some("binary_big_endian") => PlyEncoding::Binary { little: false },
                    _ => return Err(bad("unknown format")),
                })
            }
            Some("element") => {
                let count = tokens
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("bad element count"))?;
                elements.push(Element {
                    name: tokens.get(1).unwrap_or(&"").to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element"))?;
                if tokens.get(1) == Some(&"list") {
                    let (Some(c), Some(i), Some(name)) = (
                        tokens.get(2).and_then(|t| ScalarType::parse(t)),
                        tokens.get(3).and_then(|t| ScalarType::parse(t)),
                        tokens.get(4),
                    ) else {
                        return Err(bad("bad list property"));
                    };
                    element
                        .properties
                        .push(Property::List(name.to_string(), c, i));
                } else {
                    let (Some(t), Some(name)) = (
                        tokens.get(1).and_then(|t| ScalarType::parse(t)),
                        tokens.get(2),
                    ) else {
                        return Err(bad("bad property"));
                    };
                    element
                        .properties
                        .push(Property::Scalar(name.to_string(), t));
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let encoding = encoding.ok_or(MeshError::Parse {
        line: lineno,
        message: "missing format line".into(),
    })?;

    let mut positions = Vec::new();
    let mut faces = Vec::new();
    match encoding {
        PlyEncoding::Ascii => {
            let mut body = String::new();
            reader.read_to_string(&mut body)?;
            let mut tokens = body.split_whitespace();
            let mut next = || -> Result<f64> {
                tokens
                    .next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or(MeshError::Parse {
                        line: lineno,
                        message: "truncated or malformed PLY body".into(),
                    })
            };
            for element in &elements {
                for _ in 0..element.count {
                    let mut record = Record::default();
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar(name, _) => record.scalar(name, next()?),
                            Property::List(name, _, _) => {
                                let n = next()? as usize;
                                let values = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                                record.list(name, values);
                            }
                        }
                    }
                    record.store(&element.name, &mut positions, &mut faces, lineno)?;
                }
            }
        }
        PlyEncoding::Binary { little } => {
            let mut body = Vec::new();
            reader.read_to_end(&mut body)?;
            let mut cursor = 0usize;
            let truncated = || MeshError::Parse {
                line: lineno,
                message: "truncated PLY body".into(),
            };
            let mut take = |t: ScalarType| -> Result<f64> {
                let end = cursor + t.size();
                let bytes = body.get(cursor..end).ok_or_else(truncated)?;
                cursor = end;
                Ok(t.decode(bytes, little))
            };
            for element in &elements {
                for _ in 0..element.count {
                    let mut record = Record::default();
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar(name, t) => record.scalar(name, take(*t)?),
                            Property::List(name, ct, it) => {
                                let n = take(*ct)? as usize;
                                let values = (0..n).map(|_| take(*it)).collect::<Result<Vec<_>>>()?;
                                record.list(name, values);
                            }
                        }
                    }
                    record.store(&element.name, &mut positions, &mut faces, lineno)?;
                }
            }
        }
    }
    Ok(RawMesh { positions, faces })
}

#[derive(Default)]
struct Record {
    xyz: [Option<f64>; 3],
    indices: Option<Vec<f64>>,
}

impl Record {
    fn scalar(&mut self, name: &str, v: f64) {
        match name {
            "x" => self.xyz[0] = Some(v),
            "y" => self.xyz[1] = Some(v),
            "z" => self.xyz[2] = Some(v),
            _ => {}
        }
    }

    fn list(&mut self, name: &str, values: Vec<f64>) {
        if name == "vertex_indices" || name == "vertex_index" {
            self.indices = Some(values);
        }
    }

    fn store(
        self,
        element: &str,
        positions: &mut Vec<[f64; 3]>,
        faces: &mut Vec<[usize; 3]>,
        line: usize,
    ) -> Result<()> {
        match element {
            "vertex" => {
                let [Some(x), Some(y), Some(z)] = self.xyz else {
                    return Err(MeshError::Parse {
                        line,
                        message: "vertex without x/y/z".into(),
                    });
                };
                positions.push([x, y, z]);
            }
            "face" => {
                let idx = self.indices.unwrap_or_default();
                if idx.len() != 3 || idx.iter().any(|&i| i < 0.0) {
                    return Err(MeshError::Parse {
                        line,
                        message: "only triangle faces are supported".into(),
                    });
                }
                faces.push([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses a segmentation file: a `# attributes:` header with 15
/// comma-separated names followed by one integer label per vertex.
pub fn read_segmentation_str(text: &str) -> Result<(Vec<String>, Vec<usize>)> {
    let mut names = None;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(list) = rest.trim().strip_prefix("attributes:") {
                names = Some(
                    list.split(',')
                        .map(|s| s.trim().to_string())
                        .collect::<Vec<_>>(),
                );
            }
            continue;
        }
        let label: usize = line.parse().map_err(|_| MeshError::Parse {
            line: i + 1,
            message: format!("bad label {line:?}"),
        })?;
        if label >= ATTRIBUTE_COUNT {
            return Err(MeshError::BadLabel {
                vertex: labels.len(),
                label,
                max: ATTRIBUTE_COUNT,
            });
        }
        labels.push(label);
    }
    let names = names.ok_or(MeshError::Parse {
        line: 1,
        message: "missing '# attributes:' header".into(),
    })?;
    if names.len() != ATTRIBUTE_COUNT {
        return Err(MeshError::AttributeCount {
            expected: ATTRIBUTE_COUNT,
            got: names.len(),
        });
    }
    Ok((names, labels))
}

pub fn read_segmentation(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    read_segmentation_str(&fs::read_to_string(path)?)
}

pub fn write_segmentation(path: &Path, topology: &MeshTopology) -> Result<()> {
    let mut s = format!("# attributes: {}\n", topology.attribute_names().join(","));
    for l in topology.labels() {
        let _ = writeln!(s, "{l}");
    }
    fs::write(path, s)?;
    Ok(())
}
