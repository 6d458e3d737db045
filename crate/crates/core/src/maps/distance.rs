//! Dual-graph distances: breadth-first for the graph metric, Dijkstra for first passage
//! percolation, and diameters by repeated sweeps.

use super::PlanarMap;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

/// Largest face count for which [`diameter`] runs the exact bounding procedure by default.
pub const EXACT_FACE_LIMIT: usize = 100_000;

/// Dual graph distances from face `src`; unreachable faces get `u32::MAX`.
pub fn bfs_faces(map: &PlanarMap, src: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; map.faces()];
    let mut queue = VecDeque::new();
    dist[src as usize] = 0;
    queue.push_back(src);
    while let Some(f) = queue.pop_front() {
        let d = dist[f as usize] + 1;
        for x in map.face_range(f) {
            let g = map.face_of(map.opp(x)) as usize;
            if dist[g] == u32::MAX {
                dist[g] = d;
                queue.push_back(g as u32);
            }
        }
    }
    dist
}

/// I.i.d. unit-mean exponential lengths, one per edge, stored on both half-edges.
pub fn fpp_weights<R: Rng + ?Sized>(map: &PlanarMap, rng: &mut R) -> Vec<f64> {
    let mut w = vec![0.0; map.half_edges()];
    for x in 0..map.half_edges() as u32 {
        let y = map.opp(x);
        if x < y {
            let e: f64 = Exp1.sample(rng);
            w[x as usize] = e;
            w[y as usize] = e;
        }
    }
    w
}

#[derive(PartialEq)]
struct Item(f64, u32);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Weighted dual distances from `src` with half-edge lengths `weights`.
pub fn dijkstra_faces(map: &PlanarMap, src: u32, weights: &[f64]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; map.faces()];
    let mut heap = BinaryHeap::new();
    dist[src as usize] = 0.0;
    heap.push(Item(0.0, src));
    while let Some(Item(d, f)) = heap.pop() {
        if d > dist[f as usize] {
            continue;
        }
        for x in map.face_range(f) {
            let g = map.face_of(map.opp(x));
            let nd = d + weights[x as usize];
            if nd < dist[g as usize] {
                dist[g as usize] = nd;
                heap.push(Item(nd, g));
            }
        }
    }
    dist
}

/// Metric used by [`diameter`].
#[derive(Clone, Copy, Debug)]
pub enum DiameterMode<'a> {
    Graph,
    Fpp(&'a [f64]),
}

/// Diameter bracket; `exact` when `lower == upper` was certified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diameter {
    pub lower: f64,
    pub upper: f64,
    pub exact: bool,
    pub sweeps: u32,
}

fn distances(map: &PlanarMap, src: u32, mode: DiameterMode) -> Vec<f64> {
    match mode {
        DiameterMode::Graph => bfs_faces(map, src)
            .into_iter()
            .map(|d| if d == u32::MAX { f64::INFINITY } else { d as f64 })
            .collect(),
        DiameterMode::Fpp(w) => dijkstra_faces(map, src, w),
    }
}

fn farthest(d: &[f64]) -> (u32, f64) {
    let mut best = (0u32, f64::NEG_INFINITY);
    for (i, &x) in d.iter().enumerate() {
        if x > best.1 {
            best = (i as u32, x);
        }
    }
    best
}

/// Dual diameter. A double sweep gives the lower bound and a central face `u` gives the upper
/// bound `2 ecc(u)`. When the map has at most `exact_limit` faces, eccentricities of faces are
/// then computed in decreasing distance from `u` until the bounds meet, or `budget` sweeps.
pub fn diameter(map: &PlanarMap, mode: DiameterMode, exact_limit: usize, budget: u32) -> Diameter {
    let d0 = distances(map, map.root_face(), mode);
    let (a, _) = farthest(&d0);
    let da = distances(map, a, mode);
    let (b, ecc_a) = farthest(&da);
    let db = distances(map, b, mode);
    let mut lower = ecc_a.max(farthest(&db).1);
    let mut centre = a;
    let mut best = f64::INFINITY;
    for f in 0..map.faces() {
        let r = da[f].max(db[f]);
        if da[f] + db[f] <= ecc_a * (1.0 + 1e-12) && r < best {
            best = r;
            centre = f as u32;
        }
    }
    let du = distances(map, centre, mode);
    let ecc_u = farthest(&du).1;
    lower = lower.max(ecc_u);
    let mut upper = 2.0 * ecc_u;
    let mut sweeps = 4u32;
    if map.faces() <= exact_limit && upper > lower {
        let mut order: Vec<u32> = (0..map.faces() as u32).collect();
        order.sort_by(|&x, &y| du[y as usize].total_cmp(&du[x as usize]).then(x.cmp(&y)));
        let mut finished = true;
        for &x in &order {
            let r = du[x as usize];
            if lower >= 2.0 * r {
                break;
            }
            if sweeps >= budget {
                upper = upper.min(lower.max(2.0 * r));
                finished = false;
                break;
            }
            lower = lower.max(farthest(&distances(map, x, mode)).1);
            sweeps += 1;
        }
        if finished {
            upper = lower;
        }
    }
    Diameter { lower, upper: upper.max(lower), exact: upper <= lower, sweeps }
}
