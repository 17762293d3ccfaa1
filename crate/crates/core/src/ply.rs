//! Minimal binary little-endian PLY reader/writer for single-element (vertex)
//! point clouds.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyType {
    Float,
    UChar,
    Int,
}

impl PlyType {
    fn name(self) -> &'static str {
        match self {
            PlyType::Float => "float",
            PlyType::UChar => "uchar",
            PlyType::Int => "int",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "float" | "float32" => Ok(PlyType::Float),
            "uchar" | "uint8" => Ok(PlyType::UChar),
            "int" | "int32" => Ok(PlyType::Int),
            other => Err(Error::format("ply", format!("unsupported property type `{other}`"))),
        }
    }

    fn size(self) -> usize {
        match self {
            PlyType::Float | PlyType::Int => 4,
            PlyType::UChar => 1,
        }
    }
}

/// Vertex table: named, typed columns with values held as `f64` (every
/// supported type converts exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<(String, PlyType)>,
    pub rows: Vec<Vec<f64>>,
}

impl PlyTable {
    pub fn new(properties: Vec<(String, PlyType)>) -> Self {
        Self {
            properties,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| Error::format("ply", format!("missing property `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = String::from("ply\nformat binary_little_endian 1.0\n");
        out.push_str(&format!("element vertex {}\n", self.rows.len()));
        for (name, ty) in &self.properties {
            out.push_str(&format!("property {} {}\n", ty.name(), name));
        }
        out.push_str("end_header\n");
        let mut bytes = out.into_bytes();
        for row in &self.rows {
            if row.len() != self.properties.len() {
                return Err(Error::dimension("ply row width", self.properties.len(), row.len()));
            }
            for (v, (_, ty)) in row.iter().zip(&self.properties) {
                match ty {
                    PlyType::Float => bytes.extend_from_slice(&(*v as f32).to_le_bytes()),
                    PlyType::UChar => bytes.push(v.round().clamp(0.0, 255.0) as u8),
                    PlyType::Int => bytes.extend_from_slice(&(*v as i32).to_le_bytes()),
                }
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = b"end_header\n";
        let header_len = bytes
            .windows(end.len())
            .position(|w| w == end)
            .ok_or_else(|| Error::format("ply", "missing end_header"))?
            + end.len();
        let header = std::str::from_utf8(&bytes[..header_len])
            .map_err(|_| Error::format("ply", "header is not utf-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some("ply") {
            return Err(Error::format("ply", "missing magic"));
        }
        let mut count = None;
        let mut properties = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["format", "binary_little_endian", _] => {}
                ["format", other, ..] => {
                    return Err(Error::format("ply", format!("unsupported format `{other}`")))
                }
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|_| Error::format("ply", "bad vertex count"))?)
                }
                ["element", other, ..] => {
                    return Err(Error::format("ply", format!("unsupported element `{other}`")))
                }
                ["property", ty, name] => properties.push((name.to_string(), PlyType::parse(ty)?)),
                ["comment", ..] | ["end_header"] | [] => {}
                _ => return Err(Error::format("ply", format!("unexpected header line `{line}`"))),
            }
        }
        let count = count.ok_or_else(|| Error::format("ply", "missing vertex element"))?;
        let stride: usize = properties.iter().map(|(_, t)| t.size()).sum();
        let body = &bytes[header_len..];
        if body.len() != count * stride {
            return Err(Error::format(
                "ply",
                format!("expected {} body bytes, found {}", count * stride, body.len()),
            ));
        }
        let mut rows = Vec::with_capacity(count);
        for chunk in body.chunks_exact(stride.max(1)).take(count) {
            let mut row = Vec::with_capacity(properties.len());
            let mut off = 0;
            for (_, ty) in &properties {
                let v = match ty {
                    PlyType::Float => f32::from_le_bytes(chunk[off..off + 4].try_into().unwrap()) as f64,
                    PlyType::UChar => chunk[off] as f64,
                    PlyType::Int => i32::from_le_bytes(chunk[off..off + 4].try_into().unwrap()) as f64,
                };
                off += ty.size();
                row.push(v);
            }
            rows.push(row);
        }
        Ok(Self { properties, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) fn xyz_properties() -> Vec<(String, PlyType)> {
    ["x", "y", "z"]
        .iter()
        .map(|n| (n.to_string(), PlyType::Float))
        .collect()
}
