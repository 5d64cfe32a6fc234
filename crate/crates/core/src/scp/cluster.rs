use kodama::{linkage, Method};

/// Flat clustering of a set of count vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per input vector, numbered by first appearance.
    pub assignment: Vec<usize>,
    pub clusters: usize,
    /// Mean silhouette of the chosen partition (0 for a single cluster).
    pub silhouette: f64,
}

impl Clustering {
    /// Member positions of every cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    fn single(n: usize) -> Self {
        Clustering {
            assignment: vec![0; n],
            clusters: usize::from(n > 0),
            silhouette: 0.0,
        }
    }
}

pub fn l1(a: &[u32], b: &[u32]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| u64::from(x.abs_diff(y)))
        .sum()
}

/// Condensed pairwise L1 distances, row-major upper triangle.
fn condensed(vectors: &[Vec<u32>]) -> Vec<f64> {
    let n = vectors.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(l1(&vectors[i], &vectors[j]) as f64);
        }
    }
    out
}

fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

/// Average-linkage agglomerative clustering under L1. The number of clusters
/// is the `k` in `2..=max_clusters` with the highest mean silhouette, or 1
/// when no split has positive silhouette or there are at most two vectors.
pub fn agglomerative_cluster(vectors: &[Vec<u32>], max_clusters: usize) -> Clustering {
    let n = vectors.len();
    if n <= 2 || max_clusters <= 1 || vectors.iter().all(|v| *v == vectors[0]) {
        return Clustering::single(n);
    }
    let dist = condensed(vectors);
    let mut work = dist.clone();
    let dendrogram = linkage(&mut work, n, Method::Average);
    let d = |i: usize, j: usize| dist[condensed_index(n, i, j)];

    let mut best = Clustering::single(n);
    for k in 2..=max_clusters.min(n - 1) {
        let assignment = cut(dendrogram.steps(), n, k);
        let s = silhouette(&assignment, k, n, &d);
        if s > best.silhouette {
            best = Clustering {
                assignment,
                clusters: k,
                silhouette: s,
            };
        }
    }
    best
}

/// Applies the first `n - k` merges and labels the resulting clusters by
/// first appearance.
fn cut(steps: &[kodama::Step<f64>], n: usize, k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, step) in steps.iter().take(n - k).enumerate() {
        let merged = n + i;
        let a = find(&mut parent, step.cluster1);
        let b = find(&mut parent, step.cluster2);
        parent[a] = merged;
        parent[b] = merged;
    }
    let mut label = vec![usize::MAX; 2 * n - 1];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            label[root]
        })
        .collect()
}

/// Mean silhouette; singleton members contribute 0.
fn silhouette(assignment: &[usize], k: usize, n: usize, d: &impl Fn(usize, usize) -> f64) -> f64 {
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += d(i, j);
            }
        }
        let own = assignment[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64) -> Vec<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..40)
            .map(|i| {
                let base = if i % 2 == 0 { 0 } else { 40 };
                (0..6).map(|_| base + rng.random_range(0..3)).collect()
            })
            .collect()
    }

    #[test]
    fn identical_vectors_form_one_cluster() {
        let v = vec![vec![3, 1, 4]; 12];
        let c = agglomerative_cluster(&v, 10);
        assert_eq!(c.clusters, 1);
        assert!(c.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_blobs_are_recovered_exactly() {
        let v = blobs(1);
        let c = agglomerative_cluster(&v, 10);
        assert_eq!(c.clusters, 2);
        for (i, &a) in c.assignment.iter().enumerate() {
            assert_eq!(a, i % 2, "vector {i}");
        }
    }

    #[test]
    fn single_vector_is_a_singleton() {
        let c = agglomerative_cluster(&[vec![7, 7]], 10);
        assert_eq!(c.clusters, 1);
        assert_eq!(c.assignment, vec![0]);
    }

    #[test]
    fn two_vectors_stay_together() {
        let c = agglomerative_cluster(&[vec![0], vec![100]], 10);
        assert_eq!(c.clusters, 1);
    }

    #[test]
    fn condensed_index_matches_enumeration() {
        let n = 7;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(condensed_index(n, i, j), k);
                assert_eq!(condensed_index(n, j, i), k);
                k += 1;
            }
        }
    }

    #[test]
    fn cut_counts_match() {
        let v = blobs(2);
        let mut d = condensed(&v);
        let dendro = linkage(&mut d, v.len(), Method::Average);
        for k in 1..=v.len() {
            let a = cut(dendro.steps(), v.len(), k);
            assert_eq!(*a.iter().max().unwrap() + 1, k);
        }
    }

    #[test]
    fn silhouette_of_separated_pairs_is_high() {
        let pts = [0.0, 1.0, 100.0, 101.0];
        let d = |i: usize, j: usize| f64::abs(pts[i] - pts[j]);
        // a = 1, b = 100 or 99, so each member scores 1 - a/b.
        let s = silhouette(&[0, 0, 1, 1], 2, 4, &d);
        let expect = ((1.0 - 1.0 / 100.5) + (1.0 - 1.0 / 99.5)) / 2.0;
        assert!((s - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn assignment_is_valid_and_bounded(
            vectors in proptest::collection::vec(proptest::collection::vec(0u32..20, 3), 1..30),
            max in 1usize..6,
        ) {
            let c = agglomerative_cluster(&vectors, max);
            prop_assert_eq!(c.assignment.len(), vectors.len());
            prop_assert!(c.clusters >= 1 && c.clusters <= max.max(1));
            let mut seen = vec![false; c.clusters];
            for &a in &c.assignment {
                prop_assert!(a < c.clusters);
                seen[a] = true;
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
