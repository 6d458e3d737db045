//! Rerooting, unzipping, watermelon collapse and inflation, canonical codes, uniform picks.

use super::{MapError, MapTarget, PlanarMap, UNSET};
use rand::Rng;

/// Uniform half-edge; its edge is uniform among edges.
pub fn uniform_edge<R: Rng + ?Sized>(map: &PlanarMap, rng: &mut R) -> u32 {
    rng.gen_range(0..map.half_edges() as u32)
}

pub fn uniform_face<R: Rng + ?Sized>(map: &PlanarMap, rng: &mut R) -> u32 {
    rng.gen_range(0..map.faces() as u32)
}

/// Uniform vertex: a uniform half-edge kept with probability `1/deg` of its origin.
pub fn uniform_vertex<R: Rng + ?Sized>(map: &PlanarMap, degrees: &[u32], rng: &mut R) -> u32 {
    loop {
        let v = map.origin(uniform_edge(map, rng));
        if rng.gen::<f64>() * (degrees[v as usize] as f64) < 1.0 {
            return v;
        }
    }
}

/// Rebuild from the faces flagged in `keep` with gluing `opp` (old ids), preserving order.
fn compact(
    map: &PlanarMap,
    keep: &[bool],
    opp: &[u32],
    root: u32,
    target: Option<MapTarget>,
) -> Result<PlanarMap, MapError> {
    let starts = map.face_starts();
    let mut new_id = vec![UNSET; opp.len()];
    let mut face_start = vec![0u32];
    let mut next = 0u32;
    for f in 0..keep.len() {
        if keep[f] {
            for x in starts[f]..starts[f + 1] {
                new_id[x as usize] = next;
                next += 1;
            }
            face_start.push(next);
        }
    }
    let mut new_opp = vec![UNSET; next as usize];
    for (x, &id) in new_id.iter().enumerate() {
        if id != UNSET {
            new_opp[id as usize] = new_id[opp[x] as usize];
        }
    }
    let face_map: Vec<u32> = keep
        .iter()
        .scan(0u32, |n, &k| {
            let id = if k { *n } else { UNSET };
            *n += k as u32;
            Some(id)
        })
        .collect();
    let target = match target {
        Some(MapTarget::Face(f)) => Some(MapTarget::Face(face_map[f as usize])),
        Some(MapTarget::Vertex(h)) => Some(MapTarget::Vertex(new_id[h as usize])),
        None => None,
    };
    PlanarMap::from_parts(face_start, new_opp, new_id[root as usize], target)
}

fn append_digons(map: &PlanarMap, chains: &[(u32, u32)]) -> (Vec<u32>, Vec<u32>) {
    let mut face_start = map.face_starts().to_vec();
    let mut opp = map.opps().to_vec();
    for &(x, count) in chains {
        let y = opp[x as usize];
        let mut prev = x;
        for _ in 0..count {
            let a = opp.len() as u32;
            opp.push(UNSET);
            opp.push(UNSET);
            face_start.push(a + 2);
            opp[prev as usize] = a;
            opp[a as usize] = prev;
            prev = a + 1;
        }
        opp[prev as usize] = y;
        opp[y as usize] = prev;
    }
    (face_start, opp)
}

/// Open the edge of half-edge `h` into a 2-face, which becomes the target.
pub fn unzip(map: &PlanarMap, h: u32) -> Result<PlanarMap, MapError> {
    if map.target().is_some() {
        return Err(MapError::Shape("map already carries a target".into()));
    }
    let (face_start, opp) = append_digons(map, &[(h, 1)]);
    let target = (face_start.len() - 2) as u32;
    PlanarMap::from_parts(face_start, opp, map.root(), Some(MapTarget::Face(target)))
}

fn digon_target(map: &PlanarMap) -> Result<u32, MapError> {
    match map.target() {
        Some(MapTarget::Face(f)) if map.degree(f) == 2 => Ok(f),
        _ => Err(MapError::Shape("target is not a 2-face".into())),
    }
}

/// Close the target 2-face back into a single edge. A root lying on the 2-face moves to the
/// half-edge glued to it on the same side.
pub fn rezip(map: &PlanarMap) -> Result<PlanarMap, MapError> {
    let f = digon_target(map)?;
    let a = map.face_range(f).start;
    let b = a + 1;
    let (x, y) = (map.opp(a), map.opp(b));
    if x == b {
        return Err(MapError::Shape("the 2-face is glued to itself".into()));
    }
    let mut opp = map.opps().to_vec();
    opp[x as usize] = y;
    opp[y as usize] = x;
    let root = match map.root() {
        r if r == a => y,
        r if r == b => x,
        r => r,
    };
    let mut keep = vec![true; map.faces()];
    keep[f as usize] = false;
    compact(map, &keep, &opp, root, None)
}

/// Swap root face and target 2-face: the new root is one of the two half-edges of the 2-face
/// (fair coin) and the old root face becomes the target.
pub fn exchange_root_target<R: Rng + ?Sized>(map: &PlanarMap, rng: &mut R) -> Result<PlanarMap, MapError> {
    let f = digon_target(map)?;
    let root = map.face_range(f).start + rng.gen_range(0..2);
    Ok(map.clone().with_root_target(root, Some(MapTarget::Face(map.root_face()))))
}

/// A map without removable 2-faces plus, per half-edge, the number of parallel edges it stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct WatermelonView {
    pub map: PlanarMap,
    pub multiplicity: Vec<u32>,
}

impl WatermelonView {
    /// Re-insert `multiplicity - 1` 2-faces on every edge.
    pub fn inflate(&self) -> Result<PlanarMap, MapError> {
        let chains: Vec<(u32, u32)> = (0..self.map.half_edges() as u32)
            .filter(|&x| x < self.map.opp(x) && self.multiplicity[x as usize] > 1)
            .map(|x| (x, self.multiplicity[x as usize] - 1))
            .collect();
        let (face_start, opp) = append_digons(&self.map, &chains);
        PlanarMap::from_parts(face_start, opp, self.map.root(), self.map.target())
    }
}

/// Remove every 2-face other than the root face and target face, merging parallel edges.
pub fn watermelon_collapse(map: &PlanarMap) -> Result<WatermelonView, MapError> {
    let mut opp = map.opps().to_vec();
    let mut mult = vec![1u32; opp.len()];
    let mut keep = vec![true; map.faces()];
    let root_face = map.root_face();
    let target_face = match map.target() {
        Some(MapTarget::Face(f)) => Some(f),
        _ => None,
    };
    for f in 0..map.faces() as u32 {
        if map.degree(f) != 2 || f == root_face || Some(f) == target_face {
            continue;
        }
        let a = map.face_range(f).start;
        let b = a + 1;
        let (x, y) = (opp[a as usize], opp[b as usize]);
        if x == b {
            continue;
        }
        let m = mult[x as usize] + mult[y as usize];
        opp[x as usize] = y;
        opp[y as usize] = x;
        mult[x as usize] = m;
        mult[y as usize] = m;
        keep[f as usize] = false;
    }
    let target = match map.target() {
        Some(MapTarget::Vertex(h)) => {
            let mut x = h;
            while !keep[map.face_of(x) as usize] {
                x = map.next(map.opp(x));
            }
            Some(MapTarget::Vertex(x))
        }
        t => t,
    };
    let collapsed = compact(map, &keep, &opp, map.root(), target)?;
    let mut multiplicity = Vec::with_capacity(collapsed.half_edges());
    for f in 0..keep.len() {
        if keep[f] {
            let r = map.face_range(f as u32);
            multiplicity.extend(r.map(|x| mult[x as usize]));
        }
    }
    Ok(WatermelonView { map: collapsed, multiplicity })
}

/// Insert i.i.d. geometric numbers of 2-faces, `P(j) = (1 - q1) q1^j`, on every edge.
pub fn watermelon_inflate<R: Rng + ?Sized>(map: &PlanarMap, q1: f64, rng: &mut R) -> Result<PlanarMap, MapError> {
    if !(0.0..1.0).contains(&q1) {
        return Err(MapError::Shape(format!("q1 = {q1} outside [0, 1)")));
    }
    let mut chains = Vec::new();
    for x in 0..map.half_edges() as u32 {
        if x < map.opp(x) {
            let mut count = 0u32;
            while q1 > 0.0 && rng.gen::<f64>() < q1 {
                count += 1;
            }
            if count > 0 {
                chains.push((x, count));
            }
        }
    }
    let (face_start, opp) = append_digons(map, &chains);
    PlanarMap::from_parts(face_start, opp, map.root(), map.target())
}

/// Labels half-edges in breadth-first order from the root along successor and gluing, then
/// lists `(successor, partner)` labels and the smallest label on the target.
pub fn canonical_code(map: &PlanarMap) -> Vec<u32> {
    let h = map.half_edges();
    let mut label = vec![UNSET; h];
    let mut order = Vec::with_capacity(h);
    label[map.root() as usize] = 0;
    order.push(map.root());
    let mut i = 0;
    while i < order.len() {
        let x = order[i];
        for y in [map.next(x), map.opp(x)] {
            if label[y as usize] == UNSET {
                label[y as usize] = order.len() as u32;
                order.push(y);
            }
        }
        i += 1;
    }
    let mut code = Vec::with_capacity(2 * h + 2);
    for &x in &order {
        code.push(label[map.next(x) as usize]);
        code.push(label[map.opp(x) as usize]);
    }
    match map.target() {
        Some(MapTarget::Face(f)) => {
            code.push(1);
            code.push(map.face_range(f).map(|x| label[x as usize]).min().unwrap_or(UNSET));
        }
        Some(MapTarget::Vertex(t)) => {
            let v = map.origin(t);
            code.push(2);
            code.push((0..h as u32).filter(|&x| map.origin(x) == v).map(|x| label[x as usize]).min().unwrap_or(UNSET));
        }
        None => {}
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{load_kernel, KernelSpec};
    use crate::maps::{bfs_faces, build_boltzmann, UntargetedKernel};
    use crate::parallel::stream;

    fn maps(n: u64, tag: u64) -> Vec<PlanarMap> {
        let k = UntargetedKernel::new(load_kernel(&KernelSpec::Type2Closed).unwrap());
        (0..n)
            .map(|s| build_boltzmann(&k, 1 + s % 9, &mut stream(11, tag, s), 1_000_000).unwrap())
            .collect()
    }

    #[test]
    fn unzip_rezip_is_identity_and_shifts_distance_by_one() {
        for (s, m) in maps(60, 1).into_iter().enumerate() {
            let mut rng = stream(12, 1, s as u64);
            let h = uniform_edge(&m, &mut rng);
            let u = unzip(&m, h).unwrap();
            u.validate().unwrap();
            let d_old = bfs_faces(&m, m.root_face());
            let d_new = bfs_faces(&u, u.root_face());
            let edge_dist = d_old[m.face_of(h) as usize].min(d_old[m.face_of(m.opp(h)) as usize]);
            let Some(MapTarget::Face(t)) = u.target() else { panic!() };
            assert_eq!(d_new[t as usize], edge_dist + 1);
            assert_eq!(rezip(&u).unwrap(), m);
            let r = exchange_root_target(&u, &mut rng).unwrap();
            assert_eq!(r.degree(r.root_face()), 2);
            assert_eq!(r.target(), Some(MapTarget::Face(m.root_face())));
        }
    }

    #[test]
    fn watermelon_round_trips() {
        for (s, m) in maps(60, 2).into_iter().enumerate() {
            let base = watermelon_collapse(&m).unwrap();
            base.map.validate().unwrap();
            assert_eq!(canonical_code(&base.inflate().unwrap()), canonical_code(&m));
            let again = watermelon_collapse(&base.map).unwrap();
            assert_eq!(again.map, base.map);
            assert!(again.multiplicity.iter().all(|&x| x == 1));
            assert_eq!(watermelon_inflate(&base.map, 0.0, &mut stream(1, 1, 1)).unwrap(), base.map);
            let fat = watermelon_inflate(&base.map, 0.4, &mut stream(13, 2, s as u64)).unwrap();
            fat.validate().unwrap();
            assert_eq!(watermelon_collapse(&fat).unwrap().map, base.map);
        }
    }

    #[test]
    fn vertex_picker_mixture_is_uniform() {
        for m in maps(20, 3) {
            let deg = m.vertex_degrees();
            let mut p = vec![0.0; m.vertices()];
            for x in 0..m.half_edges() as u32 {
                let v = m.origin(x) as usize;
                p[v] += 1.0 / deg[v] as f64;
            }
            let z: f64 = p.iter().sum();
            for q in p {
                assert!((q / z - 1.0 / m.vertices() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn canonical_code_ignores_labelling_but_sees_the_root() {
        let m = &maps(5, 4)[4];
        let shifted = unzip(m, 0).and_then(|u| rezip(&u)).unwrap();
        assert_eq!(canonical_code(&shifted), canonical_code(m));
    }
}
