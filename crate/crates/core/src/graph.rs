//! Skeleton graphs, the three-subset neighbourhood partition, and
//! degree-normalised adjacency matrices.
//!
//! Every joint's neighbourhood is split by hop distance to a designated
//! center joint into three subsets — the joint itself (self-loops), the
//! neighbours closer to the center, and the neighbours at equal or greater
//! distance — giving three adjacency matrices that the spatial operators
//! weight independently. Each matrix is symmetrically normalised by its own
//! degrees.
//!
//! The embedded 25-joint and 18-joint topologies (bone lists and center
//! joints) are documented in `docs/formats.md`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of neighbourhood subsets produced by the partition.
pub const NUM_SUBSETS: usize = 3;

/// Default degree epsilon guarding all-zero rows during normalisation.
pub const DEGREE_EPS: f32 = 1e-6;

/// A named skeleton topology or a caller-supplied one.
#[derive(Clone, Debug, PartialEq)]
pub enum SkeletonPreset {
    /// 25-joint skeleton (depth-camera convention), 24 bones.
    Ntu25,
    /// 18-joint skeleton (2-D pose-estimator convention), 17 bones.
    Openpose18,
    Custom {
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
    },
}

/// Joint-and-bone topology with a designated center joint.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    num_joints: usize,
    /// Unordered joint pairs, stored with the smaller index first.
    edges: Vec<(usize, usize)>,
    center: usize,
}

/// Bones of the 25-joint skeleton as (child, parent-ward) pairs, 0-indexed.
const NTU25_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];
const NTU25_CENTER: usize = 20;

/// Bones of the 18-joint skeleton, 0-indexed.
const OPENPOSE18_EDGES: [(usize, usize); 17] = [
    (4, 3),
    (3, 2),
    (7, 6),
    (6, 5),
    (13, 12),
    (12, 11),
    (10, 9),
    (9, 8),
    (11, 5),
    (8, 2),
    (5, 1),
    (2, 1),
    (0, 1),
    (15, 0),
    (14, 0),
    (17, 15),
    (16, 14),
];
const OPENPOSE18_CENTER: usize = 1;

/// Builds one of the embedded skeleton topologies or validates a custom one.
///
/// If the graph is not connected a warning is logged but construction
/// succeeds; isolated joints simply exchange no messages.
pub fn build_skeleton(preset: SkeletonPreset) -> Result<SkeletonGraph> {
    let (num_joints, edges, center) = match preset {
        SkeletonPreset::Ntu25 => (25, NTU25_EDGES.to_vec(), NTU25_CENTER),
        SkeletonPreset::Openpose18 => (18, OPENPOSE18_EDGES.to_vec(), OPENPOSE18_CENTER),
        SkeletonPreset::Custom {
            num_joints,
            edges,
            center,
        } => (num_joints, edges, center),
    };
    if num_joints == 0 {
        return Err(Error::Config("skeleton must have at least one joint".into()));
    }
    if center >= num_joints {
        return Err(Error::Config(format!(
            "center joint {center} out of range for {num_joints} joints"
        )));
    }
    let mut normalized = Vec::with_capacity(edges.len());
    for &(a, b) in &edges {
        if a >= num_joints || b >= num_joints {
            return Err(Error::Config(format!(
                "edge ({a}, {b}) out of range for {num_joints} joints"
            )));
        }
        if a == b {
            return Err(Error::Config(format!("self-loop edge ({a}, {b}) not allowed")));
        }
        let pair = (a.min(b), a.max(b));
        if !normalized.contains(&pair) {
            normalized.push(pair);
        }
    }
    let graph = SkeletonGraph {
        num_joints,
        edges: normalized,
        center,
    };
    let hops = graph.hop_distances();
    if hops.iter().any(|&h| h == usize::MAX) {
        log::warn!(
            "skeleton graph is not connected: {} of {} joints unreachable from center {}",
            hops.iter().filter(|&&h| h == usize::MAX).count(),
            num_joints,
            center
        );
    }
    Ok(graph)
}

/// Schema for custom skeletons supplied as JSON:
/// `{"V": int, "edges": [[i, j], ...], "center": int}`.
#[derive(serde::Deserialize, serde::Serialize)]
struct CustomSkeletonDoc {
    #[serde(rename = "V")]
    v: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
}

/// Parses a custom skeleton from its JSON document form.
pub fn skeleton_from_json(text: &str) -> Result<SkeletonGraph> {
    let doc: CustomSkeletonDoc = serde_json::from_str(text)?;
    build_skeleton(SkeletonPreset::Custom {
        num_joints: doc.v,
        edges: doc.edges,
        center: doc.center,
    })
}

impl SkeletonGraph {
    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Hop distance from every joint to the center joint, by breadth-first
    /// search. Unreachable joints get `usize::MAX`.
    pub fn hop_distances(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_joints];
        let mut adjacency = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut queue = std::collections::VecDeque::new();
        dist[self.center] = 0;
        queue.push_back(self.center);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Parent of each joint along the BFS tree toward the center: the bone
    /// partner one hop closer. The center joint (and any unreachable joint)
    /// has no parent.
    pub fn parent_toward_center(&self) -> Vec<Option<usize>> {
        let hops = self.hop_distances();
        let mut parent = vec![None; self.num_joints];
        for &(a, b) in &self.edges {
            if hops[a] != usize::MAX && hops[b] == hops[a] + 1 {
                parent[b].get_or_insert(a);
            }
            if hops[b] != usize::MAX && hops[a] == hops[b] + 1 {
                parent[a].get_or_insert(b);
            }
        }
        parent
    }
}

/// Splits the neighbourhood structure into three binary V×V matrices:
/// self-loops, edges pointing closer to the center, and edges pointing to
/// equal-or-farther joints. Row `i`, column `j` describes the directed pair
/// (i, j).
pub fn partition(graph: &SkeletonGraph, hops: &[usize]) -> [Tensor; NUM_SUBSETS] {
    let v = graph.num_joints();
    assert_eq!(hops.len(), v, "hop map must cover every joint");
    let mut root = Tensor::zeros(&[v, v]);
    let mut closer = Tensor::zeros(&[v, v]);
    let mut farther = Tensor::zeros(&[v, v]);
    for i in 0..v {
        root.data_mut()[i * v + i] = 1.0;
    }
    for &(a, b) in graph.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let target = if hops[j] < hops[i] { &mut closer } else { &mut farther };
            target.data_mut()[i * v + j] = 1.0;
        }
    }
    [root, closer, farther]
}

/// Symmetric degree normalisation of a nonnegative matrix:
/// `out[i][j] = a[i][j] / sqrt((d_i + eps)(d_j + eps))` with `d` the row sums.
/// Zero entries stay exactly zero and zero degrees never produce NaN/Inf.
pub fn normalize(a: &Tensor, eps: f32) -> Result<Tensor> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Dim(format!(
            "normalize expects a square matrix, got {shape:?}"
        )));
    }
    let v = shape[0];
    let degrees: Vec<f32> = (0..v)
        .map(|i| a.data()[i * v..(i + 1) * v].iter().sum())
        .collect();
    let mut out = vec![0.0f32; v * v];
    for i in 0..v {
        for j in 0..v {
            let val = a.data()[i * v + j];
            if val == 0.0 {
                continue;
            }
            let den = ((degrees[i] + eps) * (degrees[j] + eps)).sqrt();
            out[i * v + j] = if den > 0.0 { val / den } else { 0.0 };
        }
    }
    Tensor::new(vec![v, v], out)
}

/// The three normalised partition adjacency matrices of a skeleton.
#[derive(Clone, Debug)]
pub struct AdjacencySet {
    a_hat: [Tensor; NUM_SUBSETS],
}

impl AdjacencySet {
    /// Partitions and normalises the graph in one step.
    pub fn build(graph: &SkeletonGraph, eps: f32) -> Result<Self> {
        let hops = graph.hop_distances();
        let parts = partition(graph, &hops);
        let mut it = parts.into_iter().map(|p| normalize(&p, eps));
        let a_hat = [
            it.next().unwrap()?,
            it.next().unwrap()?,
            it.next().unwrap()?,
        ];
        Ok(Self { a_hat })
    }

    pub fn num_joints(&self) -> usize {
        self.a_hat[0].shape()[0]
    }

    /// The normalised matrix for subset `p` (0 = self-loops, 1 = closer,
    /// 2 = equal-or-farther).
    pub fn subset(&self, p: usize) -> &Tensor {
        &self.a_hat[p]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit D^{-1/2} A D^{-1/2} oracle via dense matrix products.
    fn normalize_oracle(a: &Tensor, eps: f32) -> Tensor {
        let v = a.shape()[0];
        let mut d_inv_sqrt = Tensor::zeros(&[v, v]);
        for i in 0..v {
            let d: f32 = a.data()[i * v..(i + 1) * v].iter().sum();
            d_inv_sqrt.data_mut()[i * v + i] = 1.0 / (d + eps).sqrt();
        }
        let left = crate::tensor::matmul(&d_inv_sqrt, a).unwrap();
        crate::tensor::matmul(&left, &d_inv_sqrt).unwrap()
    }

    #[test]
    fn embedded_presets_have_expected_sizes() {
        let ntu = build_skeleton(SkeletonPreset::Ntu25).unwrap();
        assert_eq!(ntu.num_joints(), 25);
        assert_eq!(ntu.edges().len(), 24);
        let op = build_skeleton(SkeletonPreset::Openpose18).unwrap();
        assert_eq!(op.num_joints(), 18);
        assert_eq!(op.edges().len(), 17);
    }

    #[test]
    fn custom_two_node_path() {
        let g = build_skeleton(SkeletonPreset::Custom {
            num_joints: 2,
            edges: vec![(0, 1)],
            center: 0,
        })
        .unwrap();
        assert_eq!(g.num_joints(), 2);
        assert_eq!(g.hop_distances(), vec![0, 1]);
    }

    #[test]
    fn custom_rejects_out_of_range_edges() {
        let r = build_skeleton(SkeletonPreset::Custom {
            num_joints: 2,
            edges: vec![(0, 2)],
            center: 0,
        });
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn skeleton_json_round_trip() {
        let g = skeleton_from_json(r#"{"V": 3, "edges": [[0,1],[1,2]], "center": 1}"#).unwrap();
        assert_eq!(g.num_joints(), 3);
        assert_eq!(g.center(), 1);
    }

    #[test]
    fn partition_two_node_path_matches_definition() {
        let g = build_skeleton(SkeletonPreset::Custom {
            num_joints: 2,
            edges: vec![(0, 1)],
            center: 0,
        })
        .unwrap();
        let [root, closer, farther] = partition(&g, &g.hop_distances());
        assert_eq!(root.data(), &[1.0, 0.0, 0.0, 1.0]);
        // (1 -> 0) moves closer to the center; (0 -> 1) moves farther.
        assert_eq!(closer.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(farther.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn partition_star_puts_all_leaf_out_edges_in_closer() {
        let g = build_skeleton(SkeletonPreset::Custom {
            num_joints: 5,
            edges: vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            center: 0,
        })
        .unwrap();
        let [_, closer, _] = partition(&g, &g.hop_distances());
        for leaf in 1..5 {
            assert_eq!(closer.get(&[leaf, 0]), 1.0);
        }
    }

    /// Exhaustive support scan: the three subsets are disjoint and together
    /// cover exactly the self-loops plus both directions of every bone.
    fn assert_supports_partition_edges(g: &SkeletonGraph) {
        let v = g.num_joints();
        let parts = partition(g, &g.hop_distances());
        let mut expected = vec![0u8; v * v];
        for i in 0..v {
            expected[i * v + i] = 1;
        }
        for &(a, b) in g.edges() {
            expected[a * v + b] = 1;
            expected[b * v + a] = 1;
        }
        for i in 0..v {
            for j in 0..v {
                let count = parts
                    .iter()
                    .filter(|p| p.get(&[i, j]) != 0.0)
                    .count();
                assert_eq!(
                    count,
                    expected[i * v + j] as usize,
                    "support mismatch at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn partition_supports_cover_presets() {
        for preset in [SkeletonPreset::Ntu25, SkeletonPreset::Openpose18] {
            let g = build_skeleton(preset).unwrap();
            assert_supports_partition_edges(&g);
        }
    }

    #[test]
    fn partition_invariant_under_edge_order() {
        let edges = vec![(0, 1), (1, 2), (2, 3)];
        let mut reversed = edges.clone();
        reversed.reverse();
        let g1 = build_skeleton(SkeletonPreset::Custom {
            num_joints: 4,
            edges,
            center: 0,
        })
        .unwrap();
        let g2 = build_skeleton(SkeletonPreset::Custom {
            num_joints: 4,
            edges: reversed,
            center: 0,
        })
        .unwrap();
        let p1 = partition(&g1, &g1.hop_distances());
        let p2 = partition(&g2, &g2.hop_distances());
        assert_eq!(p1, p2);
    }

    #[test]
    fn normalize_identity_and_symmetric_cases() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(normalize(&eye, 0.0).unwrap(), eye);
        let swap = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize(&swap, 0.0).unwrap(), swap);
    }

    #[test]
    fn normalize_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = 6;
        let mut data = vec![0.0f32; v * v];
        for val in data.iter_mut() {
            if rng.gen_bool(0.4) {
                *val = 1.0;
            }
        }
        // Ensure at least one nonzero row so the oracle's division is finite.
        data[0] = 1.0;
        let a = Tensor::new(vec![v, v], data).unwrap();
        let got = normalize(&a, DEGREE_EPS).unwrap();
        let want = normalize_oracle(&a, DEGREE_EPS);
        // The oracle divides every entry; ours skips zeros. Compare on support.
        for i in 0..v {
            for j in 0..v {
                if a.get(&[i, j]) != 0.0 {
                    assert!((got.get(&[i, j]) - want.get(&[i, j])).abs() <= 1e-6);
                } else {
                    assert_eq!(got.get(&[i, j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn normalize_never_emits_nan_on_zero_rows() {
        let a = Tensor::zeros(&[3, 3]);
        let out = normalize(&a, 0.0).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacency_set_entries_nonnegative() {
        let g = build_skeleton(SkeletonPreset::Ntu25).unwrap();
        let adj = AdjacencySet::build(&g, DEGREE_EPS).unwrap();
        for p in 0..NUM_SUBSETS {
            assert!(adj.subset(p).data().iter().all(|&v| v >= 0.0));
        }
    }
}
