//! Comparison graphs. A finite unconstrained MLE exists iff the directed
//! "who beat whom" graph is strongly connected; any estimator needs the
//! observed-pair graph to be connected for identifiability.

use crate::model::{ComparisonData, WinFractionMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonGraph {
    d: usize,
    /// `beats[i]` lists every `j` that `i` beat at least once.
    beats: Vec<Vec<usize>>,
    /// Undirected adjacency of pairs with at least one comparison.
    observed: Vec<Vec<usize>>,
}

impl ComparisonGraph {
    fn with_edges(d: usize, mut edge: impl FnMut(usize, usize) -> (bool, bool)) -> Self {
        let mut beats = vec![Vec::new(); d];
        let mut observed = vec![Vec::new(); d];
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let (obs, won) = edge(i, j);
                if obs {
                    observed[i].push(j);
                }
                if won {
                    beats[i].push(j);
                }
            }
        }
        Self { d, beats, observed }
    }

    pub fn from_fractions(mu: &WinFractionMatrix) -> Self {
        Self::with_edges(mu.d(), |i, j| {
            let obs = mu.is_observed(i, j);
            (obs, obs && mu.mu(i, j) > 0.0)
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_directed_edge(&self, i: usize, j: usize) -> bool {
        self.beats[i].contains(&j)
    }

    /// Both `i -> j` and `j -> i` are present, i.e. `0 < μ_ij < 1`.
    pub fn has_undirected_edge(&self, i: usize, j: usize) -> bool {
        self.has_directed_edge(i, j) && self.has_directed_edge(j, i)
    }

    pub fn directed_edge_count(&self) -> usize {
        self.beats.iter().map(Vec::len).sum()
    }

    pub fn successors(&self, i: usize) -> &[usize] {
        &self.beats[i]
    }

    /// Strongly connected components of the directed graph, in the order
    /// Tarjan's algorithm closes them (reverse topological order).
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        tarjan(&self.beats)
    }
}

pub fn build_comparison_graph(data: &ComparisonData) -> ComparisonGraph {
    ComparisonGraph::with_edges(data.d(), |i, j| (data.count(i, j) > 0, data.wins(i, j) > 0))
}

pub fn is_strongly_connected(g: &ComparisonGraph) -> bool {
    g.d <= 1 || g.strongly_connected_components().len() == 1
}

/// Connectivity of the observed-pair graph.
pub fn is_connected_undirected(g: &ComparisonGraph) -> bool {
    if g.d <= 1 {
        return true;
    }
    let mut seen = vec![false; g.d];
    let mut stack = vec![0];
    seen[0] = true;
    let mut reached = 1;
    while let Some(v) = stack.pop() {
        for &w in &g.observed[v] {
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                stack.push(w);
            }
        }
    }
    reached == g.d
}

/// Iterative Tarjan; an explicit call stack of `(node, next edge)` frames
/// replaces recursion.
fn tarjan(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut frames: Vec<(usize, usize)> = Vec::new();
    let mut comps = Vec::new();
    let mut next_index = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        frames.push((root, 0));
        while let Some(&(v, edge)) = frames.last() {
            if edge == 0 && index[v] == UNVISITED {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(edge) {
                frames.last_mut().expect("frame exists").1 += 1;
                if index[w] == UNVISITED {
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("component root is on the stack");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_wins(d: usize, edges: &[(usize, usize)]) -> ComparisonData {
        let mut wins = vec![0; d * d];
        let mut counts = vec![0; d * d];
        for &(i, j) in edges {
            wins[i * d + j] += 1;
            counts[i * d + j] += 1;
            counts[j * d + i] += 1;
        }
        ComparisonData::new(d, wins, counts).unwrap()
    }

    #[test]
    fn directed_cycle() {
        let g = build_comparison_graph(&from_wins(3, &[(0, 1), (1, 2), (2, 0)]));
        assert!(g.has_directed_edge(0, 1) && g.has_directed_edge(1, 2) && g.has_directed_edge(2, 0));
        assert_eq!(g.directed_edge_count(), 3);
        assert!(is_strongly_connected(&g));
        assert!(!g.has_undirected_edge(0, 1));
    }

    #[test]
    fn empty_and_two_way_edges() {
        let data = ComparisonData::from_pairs(3, [(0, 1, 2, 0), (1, 2, 2, 2)]).unwrap();
        let g = build_comparison_graph(&data);
        assert!(!g.has_undirected_edge(0, 1));
        let none = build_comparison_graph(&ComparisonData::new(3, vec![0; 9], vec![0; 9]).unwrap());
        assert_eq!(none.directed_edge_count(), 0);
        let both = build_comparison_graph(&from_wins(2, &[(0, 1), (1, 0)]));
        assert!(both.has_undirected_edge(0, 1));
    }

    #[test]
    fn outward_star_is_not_strongly_connected() {
        let g = build_comparison_graph(&from_wins(4, &[(0, 1), (0, 2), (0, 3)]));
        assert!(!is_strongly_connected(&g));
        assert!(is_connected_undirected(&g));
        assert_eq!(g.strongly_connected_components().len(), 4);
    }

    #[test]
    fn single_node() {
        let g = build_comparison_graph(&ComparisonData::new(1, vec![0], vec![0]).unwrap());
        assert!(is_strongly_connected(&g));
        assert!(is_connected_undirected(&g));
    }

    #[test]
    fn undirected_connectivity() {
        let league = ComparisonData::from_pairs(
            5,
            (0..5).flat_map(|i| ((i + 1)..5).map(move |j| (i, j, 3, 1))),
        )
        .unwrap();
        assert!(is_connected_undirected(&build_comparison_graph(&league)));
        let cliques =
            ComparisonData::from_pairs(4, [(0, 1, 1, 1), (2, 3, 1, 0)]).unwrap();
        assert!(!is_connected_undirected(&build_comparison_graph(&cliques)));
        let path = ComparisonData::from_pairs(4, [(0, 1, 1, 1), (1, 2, 1, 0), (2, 3, 2, 1)]).unwrap();
        assert!(is_connected_undirected(&build_comparison_graph(&path)));
    }

    #[test]
    fn long_chain_does_not_recurse() {
        let d = 20_000;
        let mut beats = vec![Vec::new(); d];
        for (i, out) in beats.iter_mut().enumerate() {
            out.push((i + 1) % d);
        }
        assert_eq!(tarjan(&beats).len(), 1);
        beats[d - 1].clear();
        assert_eq!(tarjan(&beats).len(), d);
    }

    fn reach(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    proptest! {
        #[test]
        fn tarjan_matches_mutual_reachability(
            d in 1usize..12,
            raw in proptest::collection::vec((0usize..12, 0usize..12), 0..40),
        ) {
            let mut adj = vec![Vec::new(); d];
            for (a, b) in raw {
                let (a, b) = (a % d, b % d);
                if a != b && !adj[a].contains(&b) {
                    adj[a].push(b);
                }
            }
            let reach_all: Vec<Vec<bool>> = (0..d).map(|v| reach(&adj, v)).collect();
            let comps = tarjan(&adj);
            let mut comp_of = vec![usize::MAX; d];
            for (c, members) in comps.iter().enumerate() {
                for &v in members {
                    prop_assert_eq!(comp_of[v], usize::MAX);
                    comp_of[v] = c;
                }
            }
            for u in 0..d {
                for v in 0..d {
                    let mutual = reach_all[u][v] && reach_all[v][u];
                    prop_assert_eq!(mutual, comp_of[u] == comp_of[v]);
                }
            }
        }

        #[test]
        fn strong_implies_weak(d in 2usize..8, wins in proptest::collection::vec(0u32..3, 64)) {
            let mut pairs = Vec::new();
            let mut idx = 0;
            for i in 0..d {
                for j in (i + 1)..d {
                    let (a, b) = (wins[idx % 64], wins[(idx + 1) % 64]);
                    idx += 2;
                    if a + b > 0 {
                        pairs.push((i, j, a + b, a));
                    }
                }
            }
            let g = build_comparison_graph(&ComparisonData::from_pairs(d, pairs).unwrap());
            if is_strongly_connected(&g) {
                prop_assert!(is_connected_undirected(&g));
            }
        }

        #[test]
        fn interior_league_is_strongly_connected(d in 2usize..10, k in 2u32..6, seed in any::<u64>()) {
            // Every pair split with 0 < wins < k.
            let mut s = seed;
            let pairs = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).map(|(i, j)| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (i, j, k, 1 + ((s >> 33) as u32) % (k - 1))
            }).collect::<Vec<_>>();
            let g = build_comparison_graph(&ComparisonData::from_pairs(d, pairs).unwrap());
            prop_assert!(is_strongly_connected(&g));
        }
    }
}
