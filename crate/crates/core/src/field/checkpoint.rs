//! Binary field checkpoint.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CIT3D01" 0x00                      8-byte magic
//! u32 nx, u32 ny, u32 nz
//! f32 x nx*ny*nz                      pre-activation density, x fastest
//! f32 x 3*nx*ny*nz                    pre-activation albedo, rgb interleaved
//! f32 x 6                             bbox min xyz, max xyz
//! { [u8; 4] tag, u32 len, len bytes } zero or more tagged sections
//! ```

use std::path::Path;

use super::grid::{Aabb, VoxelField};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const MAGIC: &[u8; 8] = b"CIT3D01\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: VoxelField,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new(field: VoxelField) -> Self {
        Self {
            field,
            sections: Vec::new(),
        }
    }

    pub fn section(&self, tag: &[u8; 4]) -> Option<&Section> {
        self.sections.iter().find(|s| &s.tag == tag)
    }

    pub fn set_section(&mut self, tag: [u8; 4], payload: Vec<u8>) {
        if let Some(s) = self.sections.iter_mut().find(|s| s.tag == tag) {
            s.payload = payload;
        } else {
            self.sections.push(Section { tag, payload });
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = &self.field;
        let res = f.resolution();
        let mut out = Vec::with_capacity(8 + 12 + 16 * f.voxel_count() + 24);
        out.extend_from_slice(MAGIC);
        for n in res {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for &v in f.density_raw().iter().chain(f.albedo_raw()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let b = f.bbox();
        for v in [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for s in &self.sections {
            out.extend_from_slice(&s.tag);
            out.extend_from_slice(&(s.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&s.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let res = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let n = res[0]
            .checked_mul(res[1])
            .and_then(|v| v.checked_mul(res[2]))
            .ok_or_else(|| Error::format("checkpoint", "resolution overflow"))?;
        if n == 0 || bytes.len() < 20 + 16 * n + 24 {
            return Err(Error::format("checkpoint", "truncated grid data"));
        }
        let density = r.f32s(n)?;
        let albedo = r.f32s(3 * n)?;
        let bb = r.f32s(6)?;
        let bbox = Aabb::new(Vec3::new(bb[0], bb[1], bb[2]), Vec3::new(bb[3], bb[4], bb[5]))?;
        let field = VoxelField::from_raw(res, bbox, density, albedo)?;
        let mut sections = Vec::new();
        while r.pos < bytes.len() {
            let mut tag = [0u8; 4];
            tag.copy_from_slice(r.take(4)?);
            let len = r.u32()? as usize;
            let payload = r.take(len)?.to_vec();
            sections.push(Section { tag, payload });
        }
        Ok(Self { field, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("binary", "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f32().map(f64::from)).collect()
    }
}
