use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

/// Indexed triangle mesh with vertex positions in millimeters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Mesh file flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// ASCII Object File Format.
    Off,
    /// Binary STL.
    Stl,
}

impl std::str::FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MeshFormat::Off),
            "stl" => Ok(MeshFormat::Stl),
            other => Err(Error::InvalidConfig(format!("unknown mesh format `{other}`"))),
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl TriangleMesh {
    pub fn triangle_area_of(&self, tri: [u32; 3]) -> f64 {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    fn normal(&self, tri: [u32; 3]) -> [f64; 3] {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len > 0.0 {
            n.map(|x| x / len)
        } else {
            [0.0; 3]
        }
    }

    /// Drops vertices no triangle references, keeping the relative order.
    pub fn compact(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        if used.iter().all(|&u| u) {
            return;
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if used[i] {
                remap[i] = kept.len() as u32;
                kept.push(*v);
            }
        }
        self.vertices = kept;
        for t in &mut self.triangles {
            *t = t.map(|i| remap[i as usize]);
        }
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_valences(&self) -> HashMap<(u32, u32), usize> {
        let mut out = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *out.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        out
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        self.edge_valences().values().all(|&c| c == 2)
    }

    /// Every directed edge appears at most once, so neighbours agree on winding.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.triangles
            .iter()
            .all(|t| (0..3).all(|k| seen.insert((t[k], t[(k + 1) % 3]))))
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_valences().len() as i64 + self.triangles.len() as i64
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                let n = cross(b, c);
                (a[0] * n[0] + a[1] * n[1] + a[2] * n[2]) / 6.0
            })
            .sum()
    }

    pub fn write_off<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "OFF")?;
        writeln!(out, "{} {} 0", self.vertices.len(), self.triangles.len())?;
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn write_stl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = [0u8; 80];
        let tag = b"binary STL";
        header[..tag.len()].copy_from_slice(tag);
        out.write_all(&header)?;
        out.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for &t in &self.triangles {
            for x in self.normal(t) {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
            for i in t {
                for x in self.vertices[i as usize] {
                    out.write_all(&(x as f32).to_le_bytes())?;
                }
            }
            out.write_all(&0u16.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, format: MeshFormat, out: W) -> Result<()> {
        match format {
            MeshFormat::Off => self.write_off(out),
            MeshFormat::Stl => self.write_stl(out),
        }
    }

    pub fn read_off<R: BufRead>(input: R) -> Result<Self> {
        let bad = |reason: &str| Error::format("<off>", reason);
        let mut tokens = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        if it.next().as_deref() != Some("OFF") {
            return Err(bad("missing OFF magic"));
        }
        let mut num = |what: &str| -> Result<String> { it.next().ok_or_else(|| bad(&format!("truncated {what}"))) };
        let nv: usize = num("header")?.parse().map_err(|_| bad("vertex count"))?;
        let nf: usize = num("header")?.parse().map_err(|_| bad("face count"))?;
        let _ne = num("header")?;
        let mut mesh = TriangleMesh::default();
        for _ in 0..nv {
            let mut v = [0.0; 3];
            for x in &mut v {
                *x = num("vertex")?.parse().map_err(|_| bad("vertex coordinate"))?;
            }
            mesh.vertices.push(v);
        }
        for _ in 0..nf {
            let k: usize = num("face")?.parse().map_err(|_| bad("face arity"))?;
            if k != 3 {
                return Err(bad("only triangles are supported"));
            }
            let mut t = [0u32; 3];
            for x in &mut t {
                *x = num("face")?.parse().map_err(|_| bad("face index"))?;
                if *x as usize >= nv {
                    return Err(bad("face index out of range"));
                }
            }
            mesh.triangles.push(t);
        }
        Ok(mesh)
    }

    /// Reads a binary STL as an unindexed soup (three vertices per triangle).
    pub fn read_stl<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 84];
        input.read_exact(&mut header)?;
        let n = u32::from_le_bytes(header[80..84].try_into().unwrap()) as usize;
        let mut mesh = TriangleMesh::default();
        let mut rec = [0u8; 50];
        for t in 0..n {
            input.read_exact(&mut rec)?;
            for k in 0..3 {
                let off = 12 + 12 * k;
                let f = |j: usize| f32::from_le_bytes(rec[off + 4 * j..off + 4 * j + 4].try_into().unwrap()) as f64;
                mesh.vertices.push([f(0), f(1), f(2)]);
            }
            let b = 3 * t as u32;
            mesh.triangles.push([b, b + 1, b + 2]);
        }
        Ok(mesh)
    }
}
