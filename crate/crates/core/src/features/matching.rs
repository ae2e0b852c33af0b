//! Brute-force nearest-neighbour matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BinaryDescriptor;

/// Default Hamming acceptance radius in bits.
pub const DEFAULT_MAX_DISTANCE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub index0: usize,
    pub index1: usize,
    pub score: f64,
}

/// Nearest neighbour of `q` in `set`, ties to the smallest index.
fn nearest(q: &BinaryDescriptor, set: &[BinaryDescriptor]) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (j, d) in set.iter().enumerate() {
        let dist = q.hamming(d);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((j, dist));
        }
    }
    best
}

/// For each `d0[i]`, its Hamming nearest neighbour in `d1`. With
/// `cross_check`, only mutual nearest pairs survive. Pairs farther than
/// `max_distance` bits are dropped. Output is sorted by `index0`.
pub fn match_nn(d0: &[BinaryDescriptor], d1: &[BinaryDescriptor], cross_check: bool, max_distance: u32) -> Vec<Match> {
    let forward: Vec<Option<(usize, u32)>> = d0.par_iter().map(|q| nearest(q, d1)).collect();
    let backward: Vec<Option<(usize, u32)>> = if cross_check {
        d1.par_iter().map(|q| nearest(q, d0)).collect()
    } else {
        Vec::new()
    };
    forward
        .into_iter()
        .enumerate()
        .filter_map(|(i, nn)| {
            let (j, dist) = nn?;
            if dist > max_distance {
                return None;
            }
            if cross_check && backward[j].map(|(b, _)| b) != Some(i) {
                return None;
            }
            Some(Match {
                index0: i,
                index1: j,
                score: 1.0 - dist as f64 / BinaryDescriptor::BITS as f64,
            })
        })
        .collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Two nearest neighbours by Euclidean distance, ties to the smallest index.
fn two_nearest(q: &[f32], set: &[Vec<f32>]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (j, d) in set.iter().enumerate() {
        let dist = sq_dist(q, d);
        match best {
            Some((_, b)) if dist >= b => second = second.min(dist),
            _ => {
                if let Some((_, b)) = best {
                    second = b;
                }
                best = Some((j, dist));
            }
        }
    }
    best.map(|(j, b)| (j, b.sqrt(), second.sqrt()))
}

/// Nearest-neighbour matching for float descriptors with Lowe's ratio test
/// (`ratio >= 1` disables it). Score is `1 / (1 + distance)`.
pub fn match_float_nn(d0: &[Vec<f32>], d1: &[Vec<f32>], ratio: f64, cross_check: bool) -> Vec<Match> {
    let forward: Vec<_> = d0.par_iter().map(|q| two_nearest(q, d1)).collect();
    let backward: Vec<_> = if cross_check {
        d1.par_iter().map(|q| two_nearest(q, d0).map(|(j, _, _)| j)).collect()
    } else {
        Vec::new()
    };
    forward
        .into_iter()
        .enumerate()
        .filter_map(|(i, nn)| {
            let (j, best, second) = nn?;
            if ratio < 1.0 && best >= ratio * second {
                return None;
            }
            if cross_check && backward[j] != Some(i) {
                return None;
            }
            Some(Match {
                index0: i,
                index1: j,
                score: 1.0 / (1.0 + best),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut impl Rng, n: usize) -> Vec<BinaryDescriptor> {
        (0..n)
            .map(|_| BinaryDescriptor([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect()
    }

    /// Definition by exhaustive search over the full distance table.
    fn oracle(d0: &[BinaryDescriptor], d1: &[BinaryDescriptor], cross: bool, maxd: u32) -> Vec<(usize, usize, u32)> {
        let table: Vec<Vec<u32>> = d0
            .iter()
            .map(|a| {
                d1.iter()
                    .map(|b| (0..256).filter(|&k| a.bit(k) != b.bit(k)).count() as u32)
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        for i in 0..d0.len() {
            let Some(m) = table[i].iter().min() else { continue };
            let j = table[i].iter().position(|d| d == m).unwrap();
            let col: Vec<u32> = (0..d0.len()).map(|r| table[r][j]).collect();
            let back = col.iter().position(|d| d == col.iter().min().unwrap()).unwrap();
            if *m <= maxd && (!cross || back == i) {
                out.push((i, j, *m));
            }
        }
        out
    }

    #[test]
    fn identical_sets_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_set(&mut rng, 50);
        let m = match_nn(&d, &d, true, 64);
        assert_eq!(m.len(), 50);
        assert!(m.iter().enumerate().all(|(i, m)| m.index0 == i && m.index1 == i && m.score == 1.0));
    }

    #[test]
    fn inverted_descriptor_unmatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d0 = random_set(&mut rng, 20);
        let mut d1 = d0.clone();
        d1[7] = BinaryDescriptor(d1[7].0.map(|w| !w));
        let m = match_nn(&d0, &d1, true, 64);
        assert_eq!(m.len(), 19);
        assert!(m.iter().all(|m| m.index0 != 7 && m.index1 != 7));
    }

    #[test]
    fn equals_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Low-entropy descriptors so that ties and near distances occur.
        let mk = |rng: &mut ChaCha8Rng| -> Vec<BinaryDescriptor> {
            (0..100)
                .map(|_| BinaryDescriptor([rng.random::<u64>() & 0xff, rng.random::<u64>() & 0xf, 0, 0]))
                .collect()
        };
        for (cross, maxd) in [(true, 64), (false, 64), (true, 3), (false, 256)] {
            let (d0, d1) = (mk(&mut rng), mk(&mut rng));
            let got: Vec<_> = match_nn(&d0, &d1, cross, maxd)
                .iter()
                .map(|m| (m.index0, m.index1, ((1.0 - m.score) * 256.0).round() as u32))
                .collect();
            assert_eq!(got, oracle(&d0, &d1, cross, maxd));
        }
        let (d0, d1) = (random_set(&mut rng, 100), random_set(&mut rng, 100));
        let got: Vec<_> = match_nn(&d0, &d1, true, 256).iter().map(|m| (m.index0, m.index1)).collect();
        let want: Vec<_> = oracle(&d0, &d1, true, 256).iter().map(|t| (t.0, t.1)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn float_ratio_test() {
        let d0 = vec![vec![0.0f32, 0.0], vec![10.0, 10.0]];
        let d1 = vec![vec![0.1f32, 0.0], vec![0.0, 0.12], vec![10.0, 10.5]];
        // First query is ambiguous between d1[0] and d1[1].
        let m = match_float_nn(&d0, &d1, 0.8, false);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].index0, m[0].index1), (1, 2));
        assert_eq!(match_float_nn(&d0, &d1, 1.0, true).len(), 2);
    }

    proptest! {
        #[test]
        fn cross_check_is_injective_and_symmetric(seed in any::<u64>(), n0 in 0usize..60, n1 in 0usize..60, mask in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng, n| -> Vec<BinaryDescriptor> {
                (0..n).map(|_| BinaryDescriptor([rng.random::<u64>() & mask, rng.random::<u64>() & 0xffff, 0, 0])).collect()
            };
            let (d0, d1) = (mk(&mut rng, n0), mk(&mut rng, n1));
            let ab = match_nn(&d0, &d1, true, 64);
            let mut seen0 = std::collections::HashSet::new();
            let mut seen1 = std::collections::HashSet::new();
            for m in &ab {
                prop_assert!(seen0.insert(m.index0));
                prop_assert!(seen1.insert(m.index1));
                prop_assert!((0.0..=1.0).contains(&m.score));
            }
            let mut ba: Vec<_> = match_nn(&d1, &d0, true, 64).iter().map(|m| (m.index1, m.index0, m.score)).collect();
            ba.sort_by_key(|t| t.0);
            let ab: Vec<_> = ab.iter().map(|m| (m.index0, m.index1, m.score)).collect();
            prop_assert_eq!(ab, ba);
        }
    }
}
