use std::collections::VecDeque;

/// Result of the reachability check on a dispersal pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectivity {
    pub essentially_positive: bool,
    /// `witnesses[k][j]` is a path `k = m_0, m_1, ..., m_s = j` with every
    /// `pattern[m_i][m_{i+1}]` set, or `None` when `j` is unreachable from `k`
    /// (and on the diagonal).
    pub witnesses: Vec<Vec<Option<Vec<usize>>>>,
}

/// Checks that every patch can be reached from every other one along set
/// entries of `pattern` (strong connectivity of the pattern digraph).
///
/// The diagonal is ignored.
pub fn check_essential_positivity(pattern: &[Vec<bool>]) -> Connectivity {
    let n = pattern.len();
    let mut witnesses = vec![vec![None; n]; n];
    let mut all = true;
    for k in 0..n {
        let parents = bfs(pattern, k);
        for j in (0..n).filter(|&j| j != k) {
            match path_to(&parents, k, j) {
                Some(path) => witnesses[k][j] = Some(path),
                None => all = false,
            }
        }
    }
    Connectivity {
        essentially_positive: all,
        witnesses,
    }
}

fn bfs(pattern: &[Vec<bool>], source: usize) -> Vec<Option<usize>> {
    let n = pattern.len();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[source] = true;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if v != u && pattern[u][v] && !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    parent
}

fn path_to(parent: &[Option<usize>], source: usize, target: usize) -> Option<Vec<usize>> {
    let mut path = vec![target];
    let mut cur = target;
    while cur != source {
        cur = parent[cur]?;
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pattern(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
        let mut p = vec![vec![false; n]; n];
        for &(k, j) in edges {
            p[k][j] = true;
        }
        p
    }

    #[test]
    fn cyclic_three_patch_pattern() {
        // + in positions (1,2), (2,3), (3,1)
        let c = check_essential_positivity(&pattern(3, &[(0, 1), (1, 2), (2, 0)]));
        assert!(c.essentially_positive);
        assert_eq!(c.witnesses[0][2], Some(vec![0, 1, 2]));
        assert_eq!(c.witnesses[2][1], Some(vec![2, 0, 1]));
    }

    #[test]
    fn one_way_pair_is_not_connected() {
        let c = check_essential_positivity(&pattern(2, &[(0, 1)]));
        assert!(!c.essentially_positive);
        assert_eq!(c.witnesses[0][1], Some(vec![0, 1]));
        assert_eq!(c.witnesses[1][0], None);
    }

    #[test]
    fn single_patch_is_vacuous() {
        assert!(check_essential_positivity(&pattern(1, &[])).essentially_positive);
        assert!(check_essential_positivity(&[]).essentially_positive);
    }

    fn pattern_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n)
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(p in pattern_strategy(), seed in any::<u64>()) {
            let n = p.len();
            let mut perm: Vec<usize> = (0..n).collect();
            // Fisher-Yates driven by the seed
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let q: Vec<Vec<bool>> = (0..n).map(|k| (0..n).map(|j| p[perm[k]][perm[j]]).collect()).collect();
            prop_assert_eq!(
                check_essential_positivity(&p).essentially_positive,
                check_essential_positivity(&q).essentially_positive
            );
        }

        #[test]
        fn witnesses_follow_edges(p in pattern_strategy()) {
            let c = check_essential_positivity(&p);
            for (k, row) in c.witnesses.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    if let Some(path) = w {
                        prop_assert_eq!(path[0], k);
                        prop_assert_eq!(*path.last().unwrap(), j);
                        for e in path.windows(2) {
                            prop_assert!(p[e[0]][e[1]]);
                        }
                        let mut sorted = path.clone();
                        sorted.sort();
                        sorted.dedup();
                        prop_assert_eq!(sorted.len(), path.len());
                    }
                }
            }
        }
    }
}
