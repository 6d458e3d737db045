//! Filled-in peeling exploration of a stored map towards its target face.

use super::{MapError, MapTarget, PlanarMap};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Record of one replayed exploration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    /// Steps until the target face is revealed.
    pub tau: u64,
    /// Half-perimeter of the hole before each step, `perimeters[n]` for `n < tau`.
    pub perimeters: Vec<u64>,
    /// First time the watched face left the target's hole.
    pub split_time: Option<u64>,
}

/// One exploration seen from a second face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub tau: u64,
    pub split_time: Option<u64>,
}

struct Flood {
    lo: usize,
    hi: usize,
    queue: VecDeque<u32>,
    stamp: u32,
}

impl Flood {
    fn done(&self) -> bool {
        self.lo >= self.hi && self.queue.is_empty()
    }

    fn step(&mut self, map: &PlanarMap, hole: &VecDeque<u32>, explored: &[bool], mark: &mut [u32]) {
        let mut visit = |g: u32, queue: &mut VecDeque<u32>| {
            if !explored[g as usize] && mark[g as usize] != self.stamp {
                mark[g as usize] = self.stamp;
                queue.push_back(g);
            }
        };
        if self.lo < self.hi {
            visit(map.face_of(map.opp(hole[self.lo])), &mut self.queue);
            self.lo += 1;
        } else if let Some(f) = self.queue.pop_front() {
            for x in map.face_range(f) {
                visit(map.face_of(map.opp(x)), &mut self.queue);
            }
        }
    }
}

/// Peel `map` from its root face towards its target face, filling every other hole. The edge
/// peeled at each step is the front or the back of the boundary sequence by a fair coin.
/// `watch` is a face whose separation from the target is recorded.
pub fn replay_exploration<R: Rng + ?Sized>(
    map: &PlanarMap,
    watch: Option<u32>,
    rng: &mut R,
) -> Result<Replay, MapError> {
    let target = match map.target() {
        Some(MapTarget::Face(f)) => f,
        _ => return Err(MapError::Shape("replay needs a target face".into())),
    };
    let root_face = map.root_face();
    let h = map.half_edges();
    let mut explored = vec![false; map.faces()];
    explored[root_face as usize] = true;
    let mut mark = vec![0u32; map.faces()];
    let mut stamp = 0u32;
    let mut pos = vec![0i64; h];
    let mut hole: VecDeque<u32> = VecDeque::new();
    let start = map.face_range(root_face).start;
    let deg = map.degree(root_face);
    for t in 0..deg {
        let x = start + (deg - 1 - t);
        pos[x as usize] = t as i64;
        hole.push_back(x);
    }
    let mut watched = watch.filter(|&w| w != target);
    let mut split_time = match watched {
        Some(w) if w == root_face => {
            watched = None;
            Some(0)
        }
        _ => None,
    };
    if target == root_face {
        return Ok(Replay { tau: 0, perimeters: Vec::new(), split_time });
    }
    let mut perimeters = Vec::new();
    loop {
        let n = perimeters.len() as u64;
        perimeters.push(hole.len() as u64 / 2);
        let front = rng.gen::<bool>();
        let e = if front { hole.pop_front() } else { hole.pop_back() }.expect("hole is never empty");
        let o = map.opp(e);
        let f = map.face_of(o);
        if !explored[f as usize] {
            if f == target {
                return Ok(Replay { tau: n + 1, perimeters, split_time });
            }
            explored[f as usize] = true;
            if watched == Some(f) {
                watched = None;
                split_time = Some(n + 1);
            }
            let fs = map.face_range(f).start;
            let d = map.degree(f);
            let off = o - fs;
            for t in 1..d {
                let x = fs + (off + t) % d;
                if front {
                    pos[x as usize] = pos[hole.front().copied().unwrap_or(e) as usize] - 1;
                    hole.push_front(x);
                } else {
                    let newest = (off + d - t) % d + fs;
                    pos[newest as usize] = pos[hole.back().copied().unwrap_or(e) as usize] + 1;
                    hole.push_back(newest);
                }
            }
            continue;
        }
        let idx = hole
            .binary_search_by(|&x| pos[x as usize].cmp(&pos[o as usize]))
            .map_err(|_| MapError::Invalid("glued edge is not on the current boundary".into()))?;
        let len = hole.len();
        let (left, right) = ((0, idx), (idx + 1, len));
        stamp += 2;
        let mut a = Flood { lo: left.0, hi: left.1, queue: VecDeque::new(), stamp: stamp - 1 };
        let mut b = Flood { lo: right.0, hi: right.1, queue: VecDeque::new(), stamp };
        while !a.done() && !b.done() {
            a.step(map, &hole, &explored, &mut mark);
            b.step(map, &hole, &explored, &mut mark);
        }
        let closed = if a.done() { &a } else { &b };
        let target_in_closed = mark[target as usize] == closed.stamp;
        let keep = if target_in_closed == std::ptr::eq(closed, &a) { left } else { right };
        if let Some(w) = watched {
            let w_in_closed = mark[w as usize] == closed.stamp;
            if w_in_closed != target_in_closed {
                watched = None;
                split_time = Some(n + 1);
            }
        }
        hole.truncate(keep.1);
        hole.drain(..keep.0);
    }
}

/// Fraction of explorations in which the watched face left the target's hole by time
/// `max(τ - ⌈ε ℓ⌉, 0)`.
pub fn split_statistic(outcomes: &[SplitOutcome], l: u64, eps: f64) -> f64 {
    if outcomes.is_empty() {
        return f64::NAN;
    }
    let lag = (eps * l as f64).ceil() as u64;
    let hits = outcomes
        .iter()
        .filter(|o| match o.split_time {
            Some(s) => s <= o.tau.saturating_sub(lag),
            None => false,
        })
        .count();
    hits as f64 / outcomes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::Harmonic;
    use crate::kernel::{load_kernel, KernelSpec};
    use crate::maps::{build_targeted, UntargetedKernel};
    use crate::parallel::stream;
    use crate::walks::TiltedKernel;

    #[test]
    fn replay_reaches_the_target_with_consistent_perimeters() {
        let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
        let k = UntargetedKernel::new(law.clone());
        let tilted = TiltedKernel::new(law, Harmonic::DownP(1));
        for s in 0..40 {
            let mut rng = stream(2, 9, s);
            let map = build_targeted(&tilted, &k, 6, &mut rng, 1_000_000, 100_000).unwrap();
            let watch = (s as u32 * 7919) % map.faces() as u32;
            let r = replay_exploration(&map, Some(watch), &mut rng).unwrap();
            assert!(r.tau >= 1);
            assert_eq!(r.perimeters.len() as u64, r.tau);
            assert_eq!(r.perimeters[0], 6);
            assert!(r.perimeters.iter().all(|&p| p >= 1));
            if let Some(t) = r.split_time {
                assert!(t <= r.tau);
            }
        }
    }

    #[test]
    fn split_statistic_counts_early_separations() {
        let o = [
            SplitOutcome { tau: 100, split_time: Some(10) },
            SplitOutcome { tau: 100, split_time: Some(95) },
            SplitOutcome { tau: 100, split_time: None },
        ];
        assert!((split_statistic(&o, 100, 0.1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((split_statistic(&o, 100, 0.01) - 2.0 / 3.0).abs() < 1e-15);
    }
}
