//! Density-based difficulty levels.
//!
//! Within each category, every sample counts how many same-category samples
//! lie closer (L1 distance) than the category's demarcation distance, the
//! value at rank `theta` percent of the ascending pairwise distances. Those
//! integer densities are then split into at most `K` contiguous groups by
//! exact one-dimensional k-means. The densest group is level 1 (simple) and
//! the sparsest is the last level (complex).

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;

pub const DEFAULT_THETA: f64 = 60.0;
pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("no pairwise distances: category has fewer than two samples")]
    DegenerateCategory,
    #[error("theta must lie in (0, 100], got {0}")]
    InvalidTheta(f64),
    #[error("number of levels must be at least 1")]
    InvalidLevels,
    #[error("sample {0} has no embedding")]
    MissingEmbedding(u64),
}

/// Index of pair `(i, j)`, `i < j`, in a condensed distance array over `n`
/// points.
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// L1 distances over unordered pairs, row-major `(0,1), (0,2), …, (n-2,n-1)`.
/// Coordinates are summed left to right.
pub fn pairwise_l1<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, DifficultyError> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    let dim = first.as_ref().len();
    if let Some((index, v)) = vectors
        .iter()
        .enumerate()
        .find(|(_, v)| v.as_ref().len() != dim)
    {
        return Err(DifficultyError::DimensionMismatch {
            index,
            expected: dim,
            found: v.as_ref().len(),
        });
    }
    let n = vectors.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = vectors[i].as_ref();
        for b in &vectors[i + 1..] {
            let mut d = 0.0;
            for (x, y) in a.iter().zip(b.as_ref()) {
                d += (x - y).abs();
            }
            out.push(d);
        }
    }
    Ok(out)
}

/// The demarcation distance: element at 1-indexed rank `⌈theta/100 · m⌉` of
/// the ascending distances.
pub fn compute_flag(distances: &[f64], theta: f64) -> Result<f64, DifficultyError> {
    if !(theta > 0.0 && theta <= 100.0) {
        return Err(DifficultyError::InvalidTheta(theta));
    }
    if distances.is_empty() {
        return Err(DifficultyError::DegenerateCategory);
    }
    let m = distances.len();
    let mut sorted = distances.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = ((theta * m as f64 / 100.0).ceil() as usize).clamp(1, m);
    Ok(sorted[rank - 1])
}

/// `D_i = |{ j ≠ i : d_ij < flag }|` from a condensed array over `n` points.
pub fn densities_from_condensed(n: usize, distances: &[f64], d_flag: f64) -> Vec<u32> {
    assert_eq!(distances.len(), n * n.saturating_sub(1) / 2);
    let mut dens = vec![0u32; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if distances[k] < d_flag {
                dens[i] += 1;
                dens[j] += 1;
            }
            k += 1;
        }
    }
    dens
}

pub fn densities<V: AsRef<[f64]>>(vectors: &[V], d_flag: f64) -> Result<Vec<u32>, DifficultyError> {
    let d = pairwise_l1(vectors)?;
    Ok(densities_from_condensed(vectors.len(), &d, d_flag))
}

/// Result of clustering densities into levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPartition {
    /// Level of each input value, `1..=k_eff`.
    pub levels: Vec<usize>,
    pub k_eff: usize,
    /// Centroid per level; `centroids[0]` is level 1 (largest).
    pub centroids: Vec<f64>,
}

/// Exact 1-D k-means over integer densities.
///
/// The dynamic program runs over the distinct values (weighted by
/// multiplicity), so equal densities always share a level. With fewer than
/// `k` distinct values, `k_eff` drops to the distinct count.
pub fn cluster_levels_1d(densities: &[u32], k: usize) -> LevelPartition {
    assert!(k >= 1, "at least one level required");
    if densities.is_empty() {
        return LevelPartition {
            levels: Vec::new(),
            k_eff: 0,
            centroids: Vec::new(),
        };
    }
    let mut counts: BTreeMap<u32, i128> = BTreeMap::new();
    for &d in densities {
        *counts.entry(d).or_default() += 1;
    }
    let values: Vec<(i128, i128)> = counts.iter().map(|(&v, &w)| (v as i128, w)).collect();
    let d = values.len();
    let k_eff = k.min(d);

    // prefix sums of weight, weighted value, weighted square
    let mut pw = vec![0i128; d + 1];
    let mut ps = vec![0i128; d + 1];
    let mut pq = vec![0i128; d + 1];
    for (i, &(v, w)) in values.iter().enumerate() {
        pw[i + 1] = pw[i] + w;
        ps[i + 1] = ps[i] + w * v;
        pq[i + 1] = pq[i] + w * v * v;
    }
    // SSE of distinct values a..=b
    let cost = |a: usize, b: usize| -> f64 {
        let w = pw[b + 1] - pw[a];
        let s = ps[b + 1] - ps[a];
        let q = pq[b + 1] - pq[a];
        (w * q - s * s) as f64 / w as f64
    };

    // best[c][i]: first i+1 distinct values in c+1 clusters
    let mut best = vec![vec![f64::INFINITY; d]; k_eff];
    let mut split = vec![vec![0usize; d]; k_eff];
    for (i, b) in best[0].iter_mut().enumerate() {
        *b = cost(0, i);
    }
    for c in 1..k_eff {
        for i in c..d {
            let mut best_here = f64::INFINITY;
            let mut arg = c;
            for j in c..=i {
                let cand = best[c - 1][j - 1] + cost(j, i);
                if cand < best_here {
                    best_here = cand;
                    arg = j;
                }
            }
            best[c][i] = best_here;
            split[c][i] = arg;
        }
    }

    // cluster index (ascending value order) of each distinct value
    let mut cluster_of = vec![0usize; d];
    let mut end = d - 1;
    for c in (0..k_eff).rev() {
        let start = if c == 0 { 0 } else { split[c][end] };
        for slot in &mut cluster_of[start..=end] {
            *slot = c;
        }
        if c > 0 {
            end = start - 1;
        }
    }

    let mut centroids = vec![0.0; k_eff];
    let mut start = 0;
    for c in 0..k_eff {
        let mut stop = start;
        while stop + 1 < d && cluster_of[stop + 1] == c {
            stop += 1;
        }
        let w = pw[stop + 1] - pw[start];
        let s = ps[stop + 1] - ps[start];
        centroids[k_eff - 1 - c] = s as f64 / w as f64;
        start = stop + 1;
    }

    let level_of_value: BTreeMap<u32, usize> = counts
        .keys()
        .zip(&cluster_of)
        .map(|(&v, &c)| (v, k_eff - c))
        .collect();
    LevelPartition {
        levels: densities.iter().map(|d| level_of_value[d]).collect(),
        k_eff,
        centroids,
    }
}

/// Difficulty data for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub label: usize,
    pub density: u32,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub label: usize,
    pub n: usize,
    /// `None` when the category has a single sample.
    pub d_flag: Option<f64>,
    pub k_eff: usize,
}

/// Densities and levels of every sample for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyAssignment {
    pub round: usize,
    pub k_requested: usize,
    pub entries: BTreeMap<u64, LevelEntry>,
    pub categories: Vec<CategorySummary>,
}

#[derive(Serialize)]
struct AssignmentLine {
    id: u64,
    label: usize,
    density: u32,
    level: usize,
    round: usize,
}

impl DifficultyAssignment {
    pub fn level_of(&self, id: u64) -> Option<usize> {
        self.entries.get(&id).map(|e| e.level)
    }

    /// Samples per level, indexed `0..k_requested` for levels `1..=k_requested`.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k_requested];
        for e in self.entries.values() {
            counts[e.level - 1] += 1;
        }
        counts
    }

    /// Ids at `level`, ascending.
    pub fn ids_at_level(&self, level: usize) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|(_, e)| e.level == level)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Whether `id` sits in its own category's most complex level.
    pub fn is_most_complex(&self, id: u64) -> bool {
        let Some(e) = self.entries.get(&id) else {
            return false;
        };
        self.categories
            .iter()
            .find(|c| c.label == e.label)
            .is_some_and(|c| c.k_eff > 1 && e.level == c.k_eff)
    }

    /// One JSON line per sample: `{"id","label","density","level","round"}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (&id, e) in &self.entries {
            let line = AssignmentLine {
                id,
                label: e.label,
                density: e.density,
                level: e.level,
                round: self.round,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct CategoryResult {
    summary: CategorySummary,
    entries: Vec<(u64, LevelEntry)>,
}

fn assign_category(
    label: usize,
    mut members: Vec<(u64, &[f64])>,
    theta: f64,
    k: usize,
) -> Result<CategoryResult, DifficultyError> {
    members.sort_by_key(|(id, _)| *id);
    let n = members.len();
    let vectors: Vec<&[f64]> = members.iter().map(|(_, v)| *v).collect();
    let distances = pairwise_l1(&vectors)?;
    let d_flag = match compute_flag(&distances, theta) {
        Ok(f) => Some(f),
        Err(DifficultyError::DegenerateCategory) => None,
        Err(e) => return Err(e),
    };
    let dens = match d_flag {
        Some(f) => densities_from_condensed(n, &distances, f),
        None => vec![0; n],
    };
    let (levels, k_eff) = if n <= 2 {
        (vec![1; n], 1)
    } else {
        let p = cluster_levels_1d(&dens, k);
        (p.levels, p.k_eff)
    };
    let entries = members
        .iter()
        .zip(dens.iter().zip(levels))
        .map(|((id, _), (&density, level))| {
            (
                *id,
                LevelEntry {
                    label,
                    density,
                    level,
                },
            )
        })
        .collect();
    Ok(CategoryResult {
        summary: CategorySummary {
            label,
            n,
            d_flag,
            k_eff,
        },
        entries,
    })
}

/// Scores every sample against the others of its category and clusters the
/// scores into at most `k` levels per category. Categories with two or fewer
/// samples are placed entirely in level 1.
pub fn assign_difficulty(
    embeddings: &BTreeMap<u64, Vec<f64>>,
    samples: &[Sample],
    theta: f64,
    k: usize,
    round: usize,
) -> Result<DifficultyAssignment, DifficultyError> {
    if k == 0 {
        return Err(DifficultyError::InvalidLevels);
    }
    if !(theta > 0.0 && theta <= 100.0) {
        return Err(DifficultyError::InvalidTheta(theta));
    }
    let mut by_label: BTreeMap<usize, Vec<(u64, &[f64])>> = BTreeMap::new();
    for s in samples {
        let v = embeddings
            .get(&s.id)
            .ok_or(DifficultyError::MissingEmbedding(s.id))?;
        by_label.entry(s.label_id).or_default().push((s.id, v.as_slice()));
    }
    let results: Vec<CategoryResult> = by_label
        .into_par_iter()
        .map(|(label, members)| assign_category(label, members, theta, k))
        .collect::<Result<_, _>>()?;

    let mut entries = BTreeMap::new();
    let mut categories = Vec::with_capacity(results.len());
    for r in results {
        entries.extend(r.entries);
        categories.push(r.summary);
    }
    Ok(DifficultyAssignment {
        round,
        k_requested: k,
        entries,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_l1(&[vec![1.5, 2.0], vec![1.5, 2.0]]).unwrap(), [0.0]);
        assert_eq!(pairwise_l1(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap(), [5.0]);
        assert!(pairwise_l1::<Vec<f64>>(&[]).unwrap().is_empty());
        assert!(matches!(
            pairwise_l1(&[vec![1.0], vec![1.0, 2.0]]),
            Err(DifficultyError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn condensed_layout() {
        let n = 5;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(condensed_index(n, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn flag_rank_rule() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(compute_flag(&d, 60.0).unwrap(), 6.0);
        assert_eq!(compute_flag(&[7.0], 60.0).unwrap(), 7.0);
        assert_eq!(compute_flag(&[10.0, 1.0, 9.0], 60.0).unwrap(), 9.0);
        assert_eq!(compute_flag(&d, 100.0).unwrap(), 10.0);
        assert_eq!(compute_flag(&d, 0.1).unwrap(), 1.0);
        assert_eq!(compute_flag(&[], 60.0), Err(DifficultyError::DegenerateCategory));
        assert_eq!(compute_flag(&d, 0.0), Err(DifficultyError::InvalidTheta(0.0)));
        assert!(compute_flag(&d, 100.5).is_err());
    }

    #[test]
    fn density_examples() {
        let pts = [vec![0.0], vec![1.0], vec![10.0]];
        let dist = pairwise_l1(&pts).unwrap();
        assert_eq!(dist, [1.0, 10.0, 9.0]);
        let flag = compute_flag(&dist, 60.0).unwrap();
        assert_eq!(flag, 9.0);
        assert_eq!(densities(&pts, flag).unwrap(), [1, 1, 0]);

        let same = vec![vec![0.3, -0.2]; 4];
        assert_eq!(densities(&same, 0.5).unwrap(), [3, 3, 3, 3]);

        assert_eq!(densities(&[vec![1.0]], 1.0).unwrap(), [0]);
    }

    #[test]
    fn cluster_examples() {
        let p = cluster_levels_1d(&[5, 5, 5, 1, 1], 2);
        assert_eq!(p.levels, [1, 1, 1, 2, 2]);
        assert_eq!(p.centroids, [5.0, 1.0]);

        let p = cluster_levels_1d(&[4, 4, 4], 3);
        assert_eq!(p.k_eff, 1);
        assert_eq!(p.levels, [1, 1, 1]);

        let p = cluster_levels_1d(&[0, 1, 2, 6, 7, 20], 3);
        assert_eq!(p.k_eff, 3);
        assert_eq!(p.levels, [3, 3, 3, 2, 2, 1]);

        let p = cluster_levels_1d(&[3, 9], 5);
        assert_eq!(p.k_eff, 2);
        assert_eq!(p.levels, [2, 1]);
    }

    fn embed(points: &[(u64, usize, Vec<f64>)]) -> (BTreeMap<u64, Vec<f64>>, Vec<Sample>) {
        let map = points.iter().map(|(id, _, v)| (*id, v.clone())).collect();
        let samples = points
            .iter()
            .map(|(id, label, _)| Sample {
                id: *id,
                text: String::new(),
                tokens: vec![],
                label_id: *label,
            })
            .collect();
        (map, samples)
    }

    #[test]
    fn two_categories_are_independent() {
        let (map, samples) = embed(&[
            (0, 0, vec![0.0]),
            (1, 0, vec![1.0]),
            (2, 0, vec![10.0]),
            (3, 1, vec![100.0]),
            (4, 1, vec![101.0]),
            (5, 1, vec![110.0]),
        ]);
        let a = assign_difficulty(&map, &samples, 60.0, 2, 0).unwrap();
        assert_eq!(a.categories[0].d_flag, Some(9.0));
        assert_eq!(a.categories[1].d_flag, Some(9.0));
        for id in [0, 1, 3, 4] {
            assert_eq!(a.level_of(id), Some(1));
        }
        for id in [2, 5] {
            assert_eq!(a.level_of(id), Some(2));
            assert!(a.is_most_complex(id));
        }
        assert_eq!(a.level_counts(), [4, 2]);
    }

    #[test]
    fn small_categories_are_simple() {
        let (map, samples) = embed(&[(0, 0, vec![0.0]), (1, 0, vec![5.0]), (2, 1, vec![3.0])]);
        let a = assign_difficulty(&map, &samples, 60.0, 3, 0).unwrap();
        assert!(a.entries.values().all(|e| e.level == 1));
        assert_eq!(a.categories[1].d_flag, None);
        assert!(!a.is_most_complex(0));
    }

    #[test]
    fn missing_embedding_is_fatal() {
        let (mut map, samples) = embed(&[(0, 0, vec![0.0]), (1, 0, vec![5.0])]);
        map.remove(&1);
        assert_eq!(
            assign_difficulty(&map, &samples, 60.0, 3, 0),
            Err(DifficultyError::MissingEmbedding(1))
        );
    }

    #[test]
    fn assignment_dump_format() {
        let (map, samples) = embed(&[(0, 0, vec![0.0]), (1, 0, vec![1.0]), (2, 0, vec![10.0])]);
        let a = assign_difficulty(&map, &samples, 60.0, 2, 4).unwrap();
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"id":0,"label":0,"density":1,"level":1,"round":4}"#
        );
        assert_eq!(text.lines().count(), 3);
    }

    fn category(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn handshake_and_bounds(seed in 0u64..10_000, n in 2usize..40, dim in 1usize..6, theta in 1.0f64..100.0) {
            let pts = category(seed, n, dim);
            let dist = pairwise_l1(&pts).unwrap();
            let flag = compute_flag(&dist, theta).unwrap();
            let dens = densities_from_condensed(n, &dist, flag);
            let close_pairs = dist.iter().filter(|&&d| d < flag).count() as u32;
            prop_assert_eq!(dens.iter().sum::<u32>(), 2 * close_pairs);
            prop_assert!(dens.iter().all(|&d| (d as usize) < n));
        }

        #[test]
        fn translation_and_scale_invariance(seed in 0u64..10_000, n in 3usize..30, shift in -1.0f64..1.0, scale in prop::sample::select(vec![0.5, 2.0, 4.0, 0.25])) {
            // Power-of-two scales and dyadic shifts keep the arithmetic exact.
            let shift = (shift * 8.0).round() / 8.0;
            let pts: Vec<Vec<f64>> = category(seed, n, 3)
                .into_iter()
                .map(|v| v.into_iter().map(|x| (x * 64.0).round() / 64.0).collect())
                .collect();
            let base = densities(&pts, compute_flag(&pairwise_l1(&pts).unwrap(), 60.0).unwrap()).unwrap();
            let moved: Vec<Vec<f64>> = pts.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
            let scaled: Vec<Vec<f64>> = pts.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            for other in [moved, scaled] {
                let dist = pairwise_l1(&other).unwrap();
                let d = densities_from_condensed(n, &dist, compute_flag(&dist, 60.0).unwrap());
                prop_assert_eq!(&d, &base);
            }
        }

        #[test]
        fn assignment_is_permutation_invariant(seed in 0u64..10_000, n in 3usize..40, k in 1usize..5) {
            let pts = category(seed, n, 4);
            let items: Vec<(u64, usize, Vec<f64>)> = pts.into_iter().enumerate().map(|(i, v)| (i as u64, i % 2, v)).collect();
            let (map, samples) = embed(&items);
            let a = assign_difficulty(&map, &samples, 60.0, k, 0).unwrap();
            let mut rev = samples.clone();
            rev.reverse();
            let b = assign_difficulty(&map, &rev, 60.0, k, 0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn levels_are_ordered(values in proptest::collection::vec(0u32..50, 1..60), k in 1usize..8) {
            let p = cluster_levels_1d(&values, k);
            for w in p.centroids.windows(2) {
                prop_assert!(w[0] > w[1]);
            }
            // contiguous: larger value never in a more complex level
            for (a, la) in values.iter().zip(&p.levels) {
                for (b, lb) in values.iter().zip(&p.levels) {
                    if a > b { prop_assert!(la <= lb); }
                }
            }
        }
    }
}
