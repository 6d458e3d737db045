//! Finite bipartite planar maps as half-edge arrays, built by untargeted peeling.
//!
//! Half-edges of a face are stored contiguously, so the successor around a face is
//! implicit. Each half-edge runs from its origin to the origin of its successor.

mod build;
mod distance;
mod explore;
mod js;
mod transform;

pub use build::{
    build_boltzmann, build_counts, build_targeted, MapCounts, UntargetedEvent, UntargetedKernel,
    DEFAULT_EDGE_CAP,
};
pub use distance::{bfs_faces, diameter, dijkstra_faces, fpp_weights, Diameter, DiameterMode, EXACT_FACE_LIMIT};
pub use explore::{replay_exploration, split_statistic, Replay, SplitOutcome};
pub use js::{pointed_js_counts, JsCounts};
pub use transform::{
    canonical_code, exchange_root_target, rezip, unzip, watermelon_collapse, watermelon_inflate,
    uniform_edge, uniform_face, uniform_vertex, WatermelonView,
};

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Sentinel for a half-edge not yet glued.
pub const UNSET: u32 = u32::MAX;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("map exceeds the size cap: {edges} edges > {cap}")]
    Size { edges: u64, cap: u64 },
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("table: {0}")]
    Table(String),
    #[error("walk: {0}")]
    Walk(#[from] crate::walks::WalkError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Distinguished element carried by a map besides its root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapTarget {
    Face(u32),
    /// The origin of this half-edge.
    Vertex(u32),
}

/// Rooted bipartite planar map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanarMap {
    face_start: Vec<u32>,
    face: Vec<u32>,
    opp: Vec<u32>,
    vertex: Vec<u32>,
    n_vertices: u32,
    root: u32,
    target: Option<MapTarget>,
}

impl PlanarMap {
    /// Assemble from contiguous faces (`face_start` has one extra closing entry) and the
    /// gluing involution, then label vertices.
    pub fn from_parts(
        face_start: Vec<u32>,
        opp: Vec<u32>,
        root: u32,
        target: Option<MapTarget>,
    ) -> Result<Self, MapError> {
        let h = opp.len();
        if face_start.first() != Some(&0) || *face_start.last().unwrap_or(&1) as usize != h {
            return Err(MapError::Invalid("face offsets do not cover the half-edges".into()));
        }
        let mut face = vec![0u32; h];
        for f in 0..face_start.len() - 1 {
            let (a, b) = (face_start[f], face_start[f + 1]);
            if b <= a {
                return Err(MapError::Invalid(format!("face {f} is empty")));
            }
            face[a as usize..b as usize].fill(f as u32);
        }
        for (i, &o) in opp.iter().enumerate() {
            if o as usize >= h || o as usize == i || opp[o as usize] as usize != i {
                return Err(MapError::Invalid(format!("gluing is not a fixed-point-free involution at {i}")));
            }
        }
        if root as usize >= h {
            return Err(MapError::Invalid("root out of range".into()));
        }
        let mut map = Self { face_start, face, opp, vertex: Vec::new(), n_vertices: 0, root, target };
        map.label_vertices();
        Ok(map)
    }

    fn label_vertices(&mut self) {
        let h = self.opp.len();
        let mut vertex = vec![UNSET; h];
        let mut n = 0u32;
        for s in 0..h {
            if vertex[s] != UNSET {
                continue;
            }
            let mut x = s as u32;
            while vertex[x as usize] == UNSET {
                vertex[x as usize] = n;
                x = self.next(self.opp[x as usize]);
            }
            n += 1;
        }
        self.vertex = vertex;
        self.n_vertices = n;
    }

    pub fn half_edges(&self) -> usize {
        self.opp.len()
    }

    pub fn edges(&self) -> usize {
        self.opp.len() / 2
    }

    pub fn faces(&self) -> usize {
        self.face_start.len() - 1
    }

    pub fn vertices(&self) -> usize {
        self.n_vertices as usize
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn root_face(&self) -> u32 {
        self.face[self.root as usize]
    }

    pub fn target(&self) -> Option<MapTarget> {
        self.target
    }

    /// Successor around the face.
    #[inline]
    pub fn next(&self, h: u32) -> u32 {
        let f = self.face[h as usize] as usize;
        if h + 1 == self.face_start[f + 1] {
            self.face_start[f]
        } else {
            h + 1
        }
    }

    #[inline]
    pub fn opp(&self, h: u32) -> u32 {
        self.opp[h as usize]
    }

    #[inline]
    pub fn face_of(&self, h: u32) -> u32 {
        self.face[h as usize]
    }

    /// Vertex id of the origin of `h`.
    #[inline]
    pub fn origin(&self, h: u32) -> u32 {
        self.vertex[h as usize]
    }

    /// Half-edges of face `f`, in order.
    pub fn face_range(&self, f: u32) -> std::ops::Range<u32> {
        self.face_start[f as usize]..self.face_start[f as usize + 1]
    }

    pub fn degree(&self, f: u32) -> u32 {
        self.face_start[f as usize + 1] - self.face_start[f as usize]
    }

    /// Vertex degrees, indexed by vertex id.
    pub fn vertex_degrees(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.n_vertices as usize];
        for &v in &self.vertex {
            d[v as usize] += 1;
        }
        d
    }

    /// Target vertex id, if the target is a vertex.
    pub fn target_vertex(&self) -> Option<u32> {
        match self.target {
            Some(MapTarget::Vertex(h)) => Some(self.origin(h)),
            _ => None,
        }
    }

    pub(crate) fn face_starts(&self) -> &[u32] {
        &self.face_start
    }

    pub(crate) fn opps(&self) -> &[u32] {
        &self.opp
    }

    /// Same map with another root half-edge and target.
    pub fn with_root_target(mut self, root: u32, target: Option<MapTarget>) -> Self {
        self.root = root;
        self.target = target;
        self
    }

    /// Check gluing, even face degrees, Euler's formula, connectivity and bipartiteness.
    pub fn validate(&self) -> Result<(), MapError> {
        let h = self.opp.len();
        for (i, &o) in self.opp.iter().enumerate() {
            if o as usize >= h || o as usize == i || self.opp[o as usize] as usize != i {
                return Err(MapError::Invalid(format!("gluing broken at half-edge {i}")));
            }
        }
        for f in 0..self.faces() as u32 {
            if !self.degree(f).is_multiple_of(2) {
                return Err(MapError::Invalid(format!("face {f} has odd degree {}", self.degree(f))));
            }
        }
        let euler = self.vertices() as i64 - self.edges() as i64 + self.faces() as i64;
        if euler != 2 {
            return Err(MapError::Invalid(format!("Euler characteristic {euler}")));
        }
        let dist = bfs_faces(self, self.root_face());
        if dist.contains(&u32::MAX) {
            return Err(MapError::Invalid("dual graph is disconnected".into()));
        }
        let mut colour = vec![u8::MAX; self.vertices()];
        let mut rep = vec![UNSET; self.vertices()];
        for x in 0..h as u32 {
            rep[self.origin(x) as usize] = x;
        }
        let mut stack = Vec::new();
        for s in 0..self.vertices() {
            if colour[s] != u8::MAX {
                continue;
            }
            colour[s] = 0;
            stack.push(s as u32);
            while let Some(v) = stack.pop() {
                let start = rep[v as usize];
                let mut x = start;
                loop {
                    let w = self.origin(self.opp(x)) as usize;
                    let c = colour[v as usize] ^ 1;
                    if colour[w] == u8::MAX {
                        colour[w] = c;
                        stack.push(w as u32);
                    } else if colour[w] != c {
                        return Err(MapError::Invalid("vertex graph is not bipartite".into()));
                    }
                    x = self.next(self.opp(x));
                    if x == start {
                        break;
                    }
                }
            }
        }
        if let Some(MapTarget::Face(f)) = self.target {
            if f as usize >= self.faces() {
                return Err(MapError::Invalid("target face out of range".into()));
            }
        }
        Ok(())
    }

    /// Edge-list document.
    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            v: self.vertices() as u64,
            e: self.edges() as u64,
            f: self.faces() as u64,
            root: self.root,
            target: self.target,
            faces: (0..self.faces() as u32).map(|f| self.face_range(f).collect()).collect(),
            opp: self.opp.clone(),
        }
    }

    pub fn from_document(doc: &MapDocument) -> Result<Self, MapError> {
        let mut face_start = vec![0u32];
        let mut expected = 0u32;
        for face in &doc.faces {
            for &x in face {
                if x != expected {
                    return Err(MapError::Invalid("half-edges must be numbered face by face".into()));
                }
                expected += 1;
            }
            face_start.push(expected);
        }
        let map = Self::from_parts(face_start, doc.opp.clone(), doc.root, doc.target)?;
        if map.vertices() as u64 != doc.v || map.edges() as u64 != doc.e || map.faces() as u64 != doc.f {
            return Err(MapError::Invalid("declared counts disagree with the half-edges".into()));
        }
        Ok(map)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MapError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_document())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, MapError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let doc: MapDocument = serde_json::from_reader(file)?;
        Self::from_document(&doc)
    }

    /// Compact little-endian binary: magic, counts, root, target, face offsets, gluing.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<(), MapError> {
        out.write_all(BINARY_MAGIC)?;
        let (tag, val) = match self.target {
            None => (0u32, 0u32),
            Some(MapTarget::Face(f)) => (1, f),
            Some(MapTarget::Vertex(h)) => (2, h),
        };
        for x in [self.faces() as u32, self.half_edges() as u32, self.root, tag, val] {
            out.write_all(&x.to_le_bytes())?;
        }
        for &x in self.face_start.iter().chain(self.opp.iter()) {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, MapError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(MapError::Invalid("bad binary magic".into()));
        }
        let mut word = || -> Result<u32, MapError> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let (f, h, root, tag, val) = (word()?, word()?, word()?, word()?, word()?);
        let face_start = (0..=f).map(|_| word()).collect::<Result<Vec<_>, _>>()?;
        let opp = (0..h).map(|_| word()).collect::<Result<Vec<_>, _>>()?;
        let target = match tag {
            0 => None,
            1 => Some(MapTarget::Face(val)),
            2 => Some(MapTarget::Vertex(val)),
            _ => return Err(MapError::Invalid("bad target tag".into())),
        };
        Self::from_parts(face_start, opp, root, target)
    }

    /// Dual graph as CSV rows `edge,face_a,face_b`.
    pub fn dual_csv(&self) -> String {
        let mut s = String::from("edge,face_a,face_b\n");
        let mut id = 0u64;
        for x in 0..self.half_edges() as u32 {
            let y = self.opp(x);
            if x < y {
                s.push_str(&format!("{id},{},{}\n", self.face_of(x), self.face_of(y)));
                id += 1;
            }
        }
        s
    }
}

const BINARY_MAGIC: &[u8; 8] = b"CMAPBIN1";

/// JSON form of a map; `faces` lists half-edge ids face by face and `opp` the gluing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    #[serde(rename = "V")]
    pub v: u64,
    #[serde(rename = "E")]
    pub e: u64,
    #[serde(rename = "F")]
    pub f: u64,
    pub root: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<MapTarget>,
    pub faces: Vec<Vec<u32>>,
    pub opp: Vec<u32>,
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Single edge: one face of degree 2 glued to itself.
    pub fn single_edge() -> PlanarMap {
        PlanarMap::from_parts(vec![0, 2], vec![1, 0], 0, None).unwrap()
    }

    /// Two 2-faces glued along both sides, as a rooted cycle of length 2.
    pub fn digon() -> PlanarMap {
        PlanarMap::from_parts(vec![0, 2, 4], vec![3, 2, 1, 0], 0, None).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn tiny_maps_are_valid() {
        let m = single_edge();
        m.validate().unwrap();
        assert_eq!((m.vertices(), m.edges(), m.faces()), (2, 1, 1));
        let d = digon();
        d.validate().unwrap();
        assert_eq!((d.vertices(), d.edges(), d.faces()), (2, 2, 2));
    }

    #[test]
    fn bad_gluing_is_rejected() {
        assert!(PlanarMap::from_parts(vec![0, 2], vec![0, 1], 0, None).is_err());
        assert!(PlanarMap::from_parts(vec![0, 4], vec![2, 3, 0, 1], 0, None).unwrap().validate().is_err());
    }

    #[test]
    fn json_and_binary_round_trip() {
        let m = digon().with_root_target(1, Some(MapTarget::Face(1)));
        let doc = m.to_document();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"V\":2"));
        let back = PlanarMap::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(PlanarMap::read_binary(&buf[..]).unwrap(), m);
        assert_eq!(m.dual_csv().lines().count(), 3);
    }
}
