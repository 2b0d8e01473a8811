//! Dependency-tree structure: shortest-path distances, k-hop mask stack,
//! initial type matrix, and the dependency-type partition one-hot.

use crate::autodiff::NEG_SENTINEL;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::collections::VecDeque;

/// Hop counts between every token pair on the undirected tree.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: Array2<u16>,
}

/// P additive masks; entry is 0 where reachable within k hops, else the
/// negative sentinel standing in for minus infinity. `m[k-1]` is the k-hop
/// mask.
#[derive(Debug, Clone)]
pub struct MaskStack {
    pub m: Vec<Array2<f64>>,
}

/// Dependency-type ids on tree edges: `ids[(i,j)]` is the edge's type id
/// where the hop distance is 1, and 0 everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeMatrix0 {
    pub ids: Array2<u32>,
}

/// N x U one-hot rows assigning each token to the type of its incoming
/// dependency edge (the root token carries the ROOT type).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOneHot {
    pub y: Array2<f64>,
}

/// Checks that `heads` encodes a tree (single -1 root, in-range parents,
/// no self-loops, fully connected) and returns the root index.
pub fn validate_tree(heads: &[i64]) -> Result<usize> {
    let n = heads.len();
    if n == 0 {
        return Err(Error::InvalidTree {
            sentence: 0,
            detail: "empty head list".into(),
        });
    }
    let mut root = None;
    for (i, &h) in heads.iter().enumerate() {
        if h == -1 {
            if let Some(prev) = root {
                return Err(Error::InvalidTree {
                    sentence: 0,
                    detail: format!("multiple roots at tokens {} and {}", prev, i),
                });
            }
            root = Some(i);
        } else if h < 0 || h as usize >= n {
            return Err(Error::InvalidTree {
                sentence: 0,
                detail: format!("token {} has out-of-range head {}", i, h),
            });
        } else if h as usize == i {
            return Err(Error::InvalidTree {
                sentence: 0,
                detail: format!("token {} is its own head", i),
            });
        }
    }
    let root = root.ok_or_else(|| Error::InvalidTree {
        sentence: 0,
        detail: "no root (-1) token".into(),
    })?;

    let adj = adjacency(heads);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut reached = 1usize;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    if reached != n {
        return Err(Error::InvalidTree {
            sentence: 0,
            detail: format!("tree is disconnected: reached {} of {} tokens", reached, n),
        });
    }
    Ok(root)
}

fn adjacency(heads: &[i64]) -> Vec<Vec<usize>> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, &h) in heads.iter().enumerate() {
        if h >= 0 {
            let h = h as usize;
            adj[i].push(h);
            adj[h].push(i);
        }
    }
    adj
}

/// All-pairs hop counts via one BFS per token.
pub fn distances(heads: &[i64]) -> Result<DistanceMatrix> {
    validate_tree(heads)?;
    let n = heads.len();
    let adj = adjacency(heads);
    let mut d = Array2::zeros((n, n));
    let mut dist = vec![u16::MAX; n];
    for start in 0..n {
        dist.iter_mut().for_each(|x| *x = u16::MAX);
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == u16::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (j, &dj) in dist.iter().enumerate() {
            d[(start, j)] = dj;
        }
    }
    Ok(DistanceMatrix { d })
}

/// Masks for k = 1..=p. Cell (i,j) of mask k is 0 when `D[i][j] <= k`,
/// otherwise the negative sentinel.
pub fn build_masks(dist: &DistanceMatrix, p: usize) -> MaskStack {
    assert!(p >= 1, "mask stack needs at least one view");
    let n = dist.d.nrows();
    let mut m = Vec::with_capacity(p);
    for k in 1..=p {
        let mut mat = Array2::zeros((n, n));
        for ((i, j), cell) in mat.indexed_iter_mut() {
            if dist.d[(i, j)] as usize > k {
                *cell = NEG_SENTINEL;
            }
        }
        m.push(mat);
    }
    MaskStack { m }
}

/// Writes each edge's type id at both (head, dependent) and
/// (dependent, head); everywhere else stays 0. Ids must lie in [1, U].
pub fn build_type_matrix(heads: &[i64], label_ids: &[u32], num_types: usize) -> Result<TypeMatrix0> {
    let n = heads.len();
    if label_ids.len() != n {
        return Err(Error::Shape(format!(
            "label ids length {} does not match {} tokens",
            label_ids.len(),
            n
        )));
    }
    let mut ids = Array2::zeros((n, n));
    for (i, &h) in heads.iter().enumerate() {
        if h < 0 {
            continue;
        }
        let t = label_ids[i];
        if t == 0 || t as usize > num_types {
            return Err(Error::Vocab(format!(
                "dependency type id {} for token {} outside [1, {}]",
                t, i, num_types
            )));
        }
        let h = h as usize;
        ids[(i, h)] = t;
        ids[(h, i)] = t;
    }
    Ok(TypeMatrix0 { ids })
}

/// One-hot rows over the U dependency types: row i marks the incoming-edge
/// type of token i (column = id - 1).
pub fn build_partition(label_ids: &[u32], num_types: usize) -> Result<PartitionOneHot> {
    let n = label_ids.len();
    let mut y = Array2::zeros((n, num_types));
    for (i, &t) in label_ids.iter().enumerate() {
        if t == 0 || t as usize > num_types {
            return Err(Error::Vocab(format!(
                "dependency type id {} for token {} outside [1, {}]",
                t, i, num_types
            )));
        }
        y[(i, t as usize - 1)] = 1.0;
    }
    Ok(PartitionOneHot { y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn chain3() -> Vec<i64> {
        // 0 <- 1 -> 2, token 1 is root
        vec![1, -1, 1]
    }

    #[test]
    fn chain_distances() {
        let d = distances(&chain3()).unwrap();
        assert_eq!(d.d, array![[0u16, 1, 2], [1, 0, 1], [2, 1, 0]]);
    }

    #[test]
    fn single_token_distances() {
        let d = distances(&[-1]).unwrap();
        assert_eq!(d.d, array![[0u16]]);
    }

    #[test]
    fn rejects_bad_trees() {
        assert!(distances(&[]).is_err());
        assert!(distances(&[-1, -1]).is_err()); // two roots
        assert!(distances(&[1, 0]).is_err()); // no root (cycle)
        assert!(distances(&[-1, 5]).is_err()); // out of range
        assert!(distances(&[-1, 1]).is_err()); // self-loop
    }

    /// Uniform random labeled tree: shuffle the nodes, attach each to a
    /// random earlier node, first node is root.
    fn random_tree(rng: &mut ChaCha12Rng, n: usize) -> Vec<i64> {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut heads = vec![0i64; n];
        heads[order[0]] = -1;
        for i in 1..n {
            let parent = order[rng.gen_range(0..i)];
            heads[order[i]] = parent as i64;
        }
        heads
    }

    fn floyd_warshall(heads: &[i64]) -> Array2<u32> {
        let n = heads.len();
        let inf = u32::MAX / 4;
        let mut d = Array2::from_elem((n, n), inf);
        for i in 0..n {
            d[(i, i)] = 0;
        }
        for (i, &h) in heads.iter().enumerate() {
            if h >= 0 {
                d[(i, h as usize)] = 1;
                d[(h as usize, i)] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[(i, k)] + d[(k, j)];
                    if via < d[(i, j)] {
                        d[(i, j)] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn distances_match_floyd_warshall_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = rng.gen_range(2..=50);
            let heads = random_tree(&mut rng, n);
            let bfs = distances(&heads).unwrap();
            let oracle = floyd_warshall(&heads);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        bfs.d[(i, j)] as u32,
                        oracle[(i, j)],
                        "trial {} cell ({}, {})",
                        trial,
                        i,
                        j
                    );
                }
            }
        }
    }

    #[test]
    fn distance_matrix_invariants_hold() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(2..=40);
            let heads = random_tree(&mut rng, n);
            let d = distances(&heads).unwrap().d;
            for i in 0..n {
                assert_eq!(d[(i, i)], 0);
                for j in 0..n {
                    assert_eq!(d[(i, j)], d[(j, i)]);
                    assert!((d[(i, j)] as usize) <= n - 1);
                    let is_edge = heads[i] == j as i64 || heads[j] == i as i64;
                    assert_eq!(d[(i, j)] == 1, is_edge);
                }
            }
        }
    }

    #[test]
    fn chain_masks() {
        let d = distances(&chain3()).unwrap();
        let masks = build_masks(&d, 3);
        let s = NEG_SENTINEL;
        assert_eq!(masks.m[0], array![[0.0, 0.0, s], [0.0, 0.0, 0.0], [s, 0.0, 0.0]]);
        assert_eq!(masks.m[1], Array2::<f64>::zeros((3, 3)));
        assert_eq!(masks.m[2], Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn mask_at_k_equal_n_is_all_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..=30);
            let heads = random_tree(&mut rng, n);
            let d = distances(&heads).unwrap();
            let masks = build_masks(&d, n);
            assert_eq!(masks.m[n - 1], Array2::<f64>::zeros((n, n)));
        }
    }

    #[test]
    fn masks_monotone_and_match_distances() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=30);
            let heads = random_tree(&mut rng, n);
            let d = distances(&heads).unwrap();
            let p = 6;
            let masks = build_masks(&d, p);
            for k in 1..=p {
                let m = &masks.m[k - 1];
                for i in 0..n {
                    assert_eq!(m[(i, i)], 0.0);
                    for j in 0..n {
                        let open = m[(i, j)] == 0.0;
                        assert_eq!(open, (d.d[(i, j)] as usize) <= k);
                        if k > 1 && masks.m[k - 2][(i, j)] == 0.0 {
                            assert!(open, "mask closed a cell as k grew");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_over_masked_rows_has_exact_support() {
        use crate::autodiff::Tape;
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.gen_range(2..=15);
            let heads = random_tree(&mut rng, n);
            let d = distances(&heads).unwrap();
            let masks = build_masks(&d, 3);
            let x = Array2::from_shape_fn((n, n), |_| rng.gen_range(-4.0..4.0));
            for k in 1..=3usize {
                let shifted = &x + &masks.m[k - 1];
                let mut tape = Tape::new();
                let v = tape.constant_owned(shifted);
                let sm = tape.softmax_rows(v);
                let y = tape.value(sm);
                for i in 0..n {
                    let row_sum: f64 = y.row(i).sum();
                    assert!((row_sum - 1.0).abs() < 1e-6);
                    for j in 0..n {
                        let in_support = (d.d[(i, j)] as usize) <= k;
                        if in_support {
                            assert!(y[(i, j)] > 0.0);
                        } else {
                            assert!(y[(i, j)].abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn type_matrix_writes_both_directions() {
        // edges: 1 -> 0 labeled 3, 1 -> 2 labeled 5 (token 1 root, label 2)
        let heads = chain3();
        let labels = vec![3u32, 2, 5];
        let t = build_type_matrix(&heads, &labels, 5).unwrap();
        assert_eq!(t.ids, array![[0u32, 3, 0], [3, 0, 5], [0, 5, 0]]);
    }

    #[test]
    fn type_matrix_single_token_is_zero() {
        let t = build_type_matrix(&[-1], &[2], 5).unwrap();
        assert_eq!(t.ids, array![[0u32]]);
    }

    #[test]
    fn type_matrix_support_is_exactly_the_edge_set() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(2..=30);
            let heads = random_tree(&mut rng, n);
            let u = 7usize;
            let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=u as u32)).collect();
            let d = distances(&heads).unwrap();
            let t = build_type_matrix(&heads, &labels, u).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(t.ids[(i, j)] != 0, d.d[(i, j)] == 1);
                    assert_eq!(t.ids[(i, j)], t.ids[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn type_matrix_rejects_out_of_range_ids() {
        assert!(build_type_matrix(&chain3(), &[0, 2, 5], 5).is_err());
        assert!(build_type_matrix(&chain3(), &[3, 2, 6], 5).is_err());
    }

    #[test]
    fn partition_rows_are_one_hot_at_label_column() {
        let y = build_partition(&[3, 1, 5], 5).unwrap().y;
        assert_eq!(y.nrows(), 3);
        assert_eq!(y.ncols(), 5);
        for (i, &t) in [3usize, 1, 5].iter().enumerate() {
            for c in 0..5 {
                let expect = if c == t - 1 { 1.0 } else { 0.0 };
                assert_eq!(y[(i, c)], expect);
            }
            assert_eq!(y.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn partition_single_label_has_single_column() {
        let y = build_partition(&[2, 2, 2, 2], 4).unwrap().y;
        assert_eq!(y.column(1).sum(), 4.0);
        assert_eq!(y.sum(), 4.0);
    }
}
