//! Boltzmann maps assembled by peeling, holes filled depth first.

use super::{MapError, MapTarget, PlanarMap, UNSET};
use crate::kernel::DisplacementLaw;
use crate::peeling::Target;
use crate::walks::{Step, TiltedKernel};
use rand::Rng;
use std::collections::VecDeque;
use std::sync::Arc;

/// Default hard cap on the number of edges of a built map.
pub const DEFAULT_EDGE_CAP: u64 = 30_000_000;

const MAX_JUMP: i64 = 1 << 61;

/// One untargeted peeling transition from a hole of half-perimeter `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UntargetedEvent {
    /// New face of half-degree `k`; the hole becomes `m + k - 1`.
    C(u64),
    /// Peeled edge glued inside the hole, leaving holes `(left, right)` with
    /// `left + right = m - 1`.
    G(u64, u64),
}

/// Untargeted peeling kernel: `C_{j+1}` with probability `ν(j) ν(-m-1-j) / ν(-m-1)` and
/// `G(i, m-1-i)` with probability `½ ν(-i-1) ν(i-m) / ν(-m-1)`.
#[derive(Clone, Debug)]
pub struct UntargetedKernel {
    law: Arc<DisplacementLaw>,
    pos_mass: f64,
}

struct Envelope {
    denom: f64,
    c_mass: f64,
    c_bound: f64,
    left_top: u64,
    left_mass: f64,
    left_bound: f64,
    right_top: Option<u64>,
    right_mass: f64,
    right_bound: f64,
}

impl UntargetedKernel {
    pub fn new(law: Arc<DisplacementLaw>) -> Self {
        let pos_mass = law.mass_between(0, i64::MAX);
        Self { law, pos_mass }
    }

    pub fn law(&self) -> &DisplacementLaw {
        &self.law
    }

    fn neg(&self, j: u64) -> f64 {
        self.law.pmf(-(j as i64))
    }

    /// Probability of `C_{j+1}` from hole `m`.
    pub fn prob_c(&self, m: u64, j: u64) -> f64 {
        self.law.pmf(j as i64) * self.neg(m + 1 + j) / self.neg(m + 1)
    }

    /// Probability of `G(i, m-1-i)` from hole `m`.
    pub fn prob_g(&self, m: u64, i: u64) -> f64 {
        0.5 * self.neg(i + 1) * self.neg(m - i) / self.neg(m + 1)
    }

    fn envelope(&self, m: u64) -> Envelope {
        let law = &*self.law;
        let denom = self.neg(m + 1);
        let c_bound = law.neg_max(m + 1, u64::MAX) / denom;
        let left_top = (m - 1) / 2;
        let left_mass = law.mass_between(-(left_top as i64) - 1, -1);
        let left_bound = 0.5 * law.neg_max(m - left_top, m) / denom;
        let right_top = if m >= 2 { Some((m - 2) / 2) } else { None };
        let (right_mass, right_bound) = match right_top {
            Some(t) => (law.mass_between(-(t as i64) - 1, -1), 0.5 * law.neg_max(m - t, m) / denom),
            None => (0.0, 0.0),
        };
        Envelope {
            denom,
            c_mass: self.pos_mass * c_bound,
            c_bound,
            left_top,
            left_mass: left_mass * left_bound,
            left_bound,
            right_top,
            right_mass: right_mass * right_bound,
            right_bound,
        }
    }

    /// Draw one transition from hole `m ≥ 1` by rejection against a three-piece envelope.
    pub fn sample<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> UntargetedEvent {
        debug_assert!(m >= 1);
        let env = self.envelope(m);
        let law = &*self.law;
        let total = env.c_mass + env.left_mass + env.right_mass;
        loop {
            let u = rng.gen::<f64>() * total;
            if u < env.c_mass {
                let j = law.sample_between(0, i64::MAX, rng.gen());
                if j > MAX_JUMP {
                    continue;
                }
                let w = self.neg(m + 1 + j as u64) / env.denom;
                if rng.gen::<f64>() * env.c_bound < w {
                    return UntargetedEvent::C(j as u64 + 1);
                }
            } else if u < env.c_mass + env.left_mass || env.right_top.is_none() {
                let i = (-law.sample_between(-(env.left_top as i64) - 1, -1, rng.gen()) - 1) as u64;
                let w = 0.5 * self.neg(m - i) / env.denom;
                if rng.gen::<f64>() * env.left_bound < w {
                    return UntargetedEvent::G(i, m - 1 - i);
                }
            } else {
                let top = env.right_top.unwrap_or(0);
                let j = (-law.sample_between(-(top as i64) - 1, -1, rng.gen()) - 1) as u64;
                let w = 0.5 * self.neg(m - j) / env.denom;
                if rng.gen::<f64>() * env.right_bound < w {
                    return UntargetedEvent::G(m - 1 - j, j);
                }
            }
        }
    }
}

struct Assembly {
    face_start: Vec<u32>,
    opp: Vec<u32>,
    cap_half_edges: u64,
}

impl Assembly {
    fn new(edge_cap: u64) -> Self {
        let cap_half_edges = (2 * edge_cap).min(u32::MAX as u64 - 1);
        Self { face_start: vec![0], opp: Vec::new(), cap_half_edges }
    }

    fn new_face(&mut self, k: u64) -> Result<u32, MapError> {
        let a = self.opp.len() as u64;
        let end = a + 2 * k;
        if end > self.cap_half_edges {
            return Err(MapError::Size { edges: end / 2, cap: self.cap_half_edges / 2 });
        }
        self.opp.resize(end as usize, UNSET);
        self.face_start.push(end as u32);
        Ok(a as u32)
    }

    fn last_face(&self) -> u32 {
        (self.face_start.len() - 2) as u32
    }

    fn glue(&mut self, a: u32, b: u32) {
        self.opp[a as usize] = b;
        self.opp[b as usize] = a;
    }

    /// Reveal a new face of half-degree `k` behind `e`, at the front of `hole`.
    fn grow(&mut self, hole: &mut VecDeque<u32>, e: u32, k: u64) -> Result<(), MapError> {
        let a = self.new_face(k)?;
        self.glue(a, e);
        for t in 1..2 * k as u32 {
            hole.push_front(a + t);
        }
        Ok(())
    }

    /// Fill `hole` (front is the next edge to peel) with an untargeted Boltzmann map.
    fn fill<R: Rng + ?Sized>(
        &mut self,
        hole: VecDeque<u32>,
        kernel: &UntargetedKernel,
        rng: &mut R,
    ) -> Result<(), MapError> {
        let mut stack = vec![hole];
        while let Some(mut h) = stack.pop() {
            while let Some(e) = h.pop_front() {
                let m = (h.len() as u64).div_ceil(2);
                match kernel.sample(m, rng) {
                    UntargetedEvent::C(k) => self.grow(&mut h, e, k)?,
                    UntargetedEvent::G(i, j) => {
                        let (i, j) = (2 * i as usize, 2 * j as usize);
                        if i <= j {
                            let left: VecDeque<u32> = h.drain(..i).collect();
                            let g = h.pop_front().expect("hole has a partner edge");
                            self.glue(e, g);
                            if !left.is_empty() {
                                stack.push(left);
                            }
                        } else {
                            let right = h.split_off(i + 1);
                            let g = h.pop_back().expect("hole has a partner edge");
                            self.glue(e, g);
                            if !right.is_empty() {
                                stack.push(right);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn root_hole(&mut self, l: u64) -> Result<VecDeque<u32>, MapError> {
        let a = self.new_face(l)?;
        Ok((a..a + 2 * l as u32).rev().collect())
    }

    fn finish(self, target: Option<MapTarget>) -> Result<PlanarMap, MapError> {
        PlanarMap::from_parts(self.face_start, self.opp, 0, target)
    }
}

/// Boltzmann map with a root face of degree `2ℓ`; the root half-edge is `0`.
pub fn build_boltzmann<R: Rng + ?Sized>(
    kernel: &UntargetedKernel,
    l: u64,
    rng: &mut R,
    edge_cap: u64,
) -> Result<PlanarMap, MapError> {
    if l == 0 {
        return Err(MapError::Shape("root half-perimeter must be positive".into()));
    }
    let mut asm = Assembly::new(edge_cap);
    let hole = asm.root_hole(l)?;
    asm.fill(hole, kernel, rng)?;
    asm.finish(None)
}

/// Boltzmann map of root half-perimeter `ℓ` carrying a target face of half-degree `p` (kernel
/// `DownP(p)`) or a target vertex (kernel `Down`). The exploration towards the target peels
/// with `tilted`; every swallowed hole is filled with `untargeted`.
pub fn build_targeted<R: Rng + ?Sized>(
    tilted: &TiltedKernel,
    untargeted: &UntargetedKernel,
    l: u64,
    rng: &mut R,
    edge_cap: u64,
    max_steps: u64,
) -> Result<PlanarMap, MapError> {
    let target = Target::from_harmonic(tilted.kind());
    if matches!(target, Target::Infinity) {
        return Err(MapError::Shape("an infinite target has no finite map".into()));
    }
    if l == 0 {
        return Err(MapError::Shape("root half-perimeter must be positive".into()));
    }
    let mut asm = Assembly::new(edge_cap);
    let mut hole = asm.root_hole(l)?;
    for _ in 0..max_steps {
        let e = hole.pop_front().expect("targeted hole is never empty");
        let m = (hole.len() as u64).div_ceil(2);
        match tilted.sample(m, rng)? {
            Step::Death => {
                let mark = match target {
                    Target::Face(p) => {
                        asm.grow(&mut hole, e, p)?;
                        MapTarget::Face(asm.last_face())
                    }
                    _ => {
                        if rng.gen::<bool>() {
                            let g = hole.pop_front().expect("partner edge");
                            asm.glue(e, g);
                            MapTarget::Vertex(e)
                        } else {
                            let g = hole.pop_back().expect("partner edge");
                            asm.glue(e, g);
                            MapTarget::Vertex(g)
                        }
                    }
                };
                asm.fill(hole, untargeted, rng)?;
                return asm.finish(Some(mark));
            }
            Step::Move(k) if k >= 0 => asm.grow(&mut hole, e, k as u64 + 1)?,
            Step::Move(k) => {
                let swallowed = 2 * (k.unsigned_abs() - 1) as usize;
                if rng.gen::<bool>() {
                    let side: VecDeque<u32> = hole.drain(..swallowed).collect();
                    let g = hole.pop_front().expect("partner edge");
                    asm.glue(e, g);
                    asm.fill(side, untargeted, rng)?;
                } else {
                    let side = hole.split_off(hole.len() - swallowed);
                    let g = hole.pop_back().expect("partner edge");
                    asm.glue(e, g);
                    asm.fill(side, untargeted, rng)?;
                }
            }
        }
    }
    Err(MapError::Shape(format!("targeted exploration exceeded {max_steps} steps")))
}

/// Vertex, edge and face counts of a Boltzmann map, sampled without storing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MapCounts {
    pub vertices: u64,
    pub edges: u64,
    pub faces: u64,
}

/// Same law as [`build_boltzmann`] projected on the counts; memory is one integer per open hole.
pub fn build_counts<R: Rng + ?Sized>(
    kernel: &UntargetedKernel,
    l: u64,
    rng: &mut R,
    edge_cap: u64,
) -> Result<MapCounts, MapError> {
    let mut edges = l;
    let mut faces = 1u64;
    let mut stack = vec![l];
    while let Some(mut m) = stack.pop() {
        while m > 0 {
            match kernel.sample(m, rng) {
                UntargetedEvent::C(k) => {
                    edges += k;
                    faces += 1;
                    m += k - 1;
                    if edges > edge_cap {
                        return Err(MapError::Size { edges, cap: edge_cap });
                    }
                }
                UntargetedEvent::G(i, j) => {
                    if i > 0 {
                        stack.push(i);
                    }
                    m = j;
                }
            }
        }
    }
    Ok(MapCounts { vertices: edges + 2 - faces, edges, faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::Harmonic;
    use crate::kernel::{load_kernel, KernelSpec};
    use crate::parallel::stream;

    fn quad() -> Arc<DisplacementLaw> {
        load_kernel(&KernelSpec::Quad).unwrap()
    }

    #[test]
    fn untargeted_rows_sum_to_one() {
        let k = UntargetedKernel::new(load_kernel(&KernelSpec::Type2Closed).unwrap());
        for m in [1u64, 2, 3, 7, 40] {
            let mut s: f64 = (0..m).map(|i| k.prob_g(m, i)).sum();
            s += (0..4000u64).map(|j| k.prob_c(m, j)).sum::<f64>();
            assert!((s - 1.0).abs() < 1e-3, "m={m} s={s}");
        }
    }

    #[test]
    fn untargeted_sampler_matches_fixture_row() {
        let k = UntargetedKernel::new(quad());
        let mut rng = stream(3, 1, 0);
        let n = 40_000;
        let m = 2;
        let mut g0 = 0u32;
        let mut c2 = 0u32;
        for _ in 0..n {
            match k.sample(m, &mut rng) {
                UntargetedEvent::G(0, 1) => g0 += 1,
                UntargetedEvent::C(2) => c2 += 1,
                _ => {}
            }
        }
        for (count, p) in [(g0, k.prob_g(m, 0)), (c2, k.prob_c(m, 1))] {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((count as f64 / n as f64 - p).abs() < 5.0 * se, "{count} vs {p}");
        }
    }

    #[test]
    fn built_maps_are_valid() {
        let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
        let k = UntargetedKernel::new(law.clone());
        for s in 0..30 {
            let mut rng = stream(5, 2, s);
            let map = build_boltzmann(&k, 1 + s % 7, &mut rng, 1_000_000).unwrap();
            map.validate().unwrap();
            assert_eq!(map.degree(map.root_face()) as u64, 2 * (1 + s % 7));
        }
        let tilted = TiltedKernel::new(law.clone(), Harmonic::DownP(2));
        let vert = TiltedKernel::new(law, Harmonic::Down);
        for s in 0..30 {
            let mut rng = stream(5, 3, s);
            let map = build_targeted(&tilted, &k, 4, &mut rng, 1_000_000, 10_000).unwrap();
            map.validate().unwrap();
            match map.target() {
                Some(MapTarget::Face(f)) => assert_eq!(map.degree(f), 4),
                other => panic!("{other:?}"),
            }
            let map = build_targeted(&vert, &k, 4, &mut rng, 1_000_000, 10_000).unwrap();
            map.validate().unwrap();
            assert!(map.target_vertex().unwrap() < map.vertices() as u32);
        }
    }

    fn edge_count_law_at_perimeter_two(spec: KernelSpec, tag: u64) {
        use crate::kernel::{mu_law, weights_from_nu};
        use crate::oracles::{first_passage_law, partition_sized, PartitionTable};
        let law = load_kernel(&spec).unwrap();
        let (w, _) = weights_from_nu(&law).unwrap();
        let mu = mu_law(&w).unwrap();
        let table = first_passage_law(&mu, 2, 40).unwrap();
        let part = PartitionTable::from_law(&law);
        let k = UntargetedKernel::new(law);
        let n = 100_000u64;
        let mut counts = [0u64; 7];
        for s in 0..n {
            let map = build_boltzmann(&k, 1, &mut stream(21, tag, s), 100_000);
            if let Ok(m) = map {
                if m.edges() < counts.len() {
                    counts[m.edges()] += 1;
                }
            }
        }
        for (e, &c) in counts.iter().enumerate().skip(1) {
            let p = partition_sized(&table, part.c_q, 1, e as u64).w / part.w(1);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd.max(1.0), "edges={e} count={c} p={p}");
        }
    }

    #[test]
    fn edge_count_law_matches_partition_functions() {
        edge_count_law_at_perimeter_two(KernelSpec::Quad, 1);
        edge_count_law_at_perimeter_two(KernelSpec::Type2, 2);
    }

    #[test]
    fn size_cap_is_reported() {
        let k = UntargetedKernel::new(load_kernel(&KernelSpec::Type2Closed).unwrap());
        let mut rng = stream(1, 1, 1);
        match build_boltzmann(&k, 50, &mut rng, 10) {
            Err(MapError::Size { .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
