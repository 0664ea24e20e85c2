//! Similarity graphs over dictionary items built from embedding columns.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::embedding::EmbeddingMatrix;
use crate::error::{invalid, Result};
use crate::sparse::Dictionary;

/// Symmetric column-cosine matrix. Zero columns have similarity 0 to
/// everything, including themselves, and are listed in `zero_columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
    pub zero_columns: Vec<usize>,
}

fn cosine_columns(m: &DMatrix<f64>) -> SimilarityMatrix {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let n = m.ncols();
    let gram = m.transpose() * m;
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = if norms[i] > 0.0 && norms[j] > 0.0 {
                if i == j {
                    1.0
                } else {
                    (gram[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                }
            } else {
                0.0
            };
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    let zero_columns = (0..n).filter(|&j| norms[j] == 0.0).collect();
    SimilarityMatrix {
        values,
        zero_columns,
    }
}

/// Pairwise cosine similarity of the embedding columns (one per dictionary item).
pub fn cosine_similarity_columns(p: &EmbeddingMatrix) -> SimilarityMatrix {
    cosine_columns(&p.p)
}

/// Undirected graph with an edge wherever similarity strictly exceeds the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    adjacency: Vec<Vec<usize>>,
    pub threshold: f64,
    pub center_time: usize,
}

impl SimilarityGraph {
    /// Builds a graph from an explicit edge list (self-loops ignored).
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)], center_time: usize) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(invalid(format!("edge ({a}, {b}) outside {nodes} nodes")));
            }
            if a != b && !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        Ok(Self {
            adjacency,
            threshold: f64::NAN,
            center_time,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Size of every connected component, indexed by node.
    pub fn component_sizes(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut label = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            label[start] = id;
            queue.push_back(start);
            let mut count = 0;
            while let Some(v) = queue.pop_front() {
                count += 1;
                for &u in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = id;
                        queue.push_back(u);
                    }
                }
            }
            sizes.push(count);
        }
        label.into_iter().map(|l| sizes[l]).collect()
    }

    /// Nodes of the component containing `item`, ascending.
    pub fn component_of(&self, item: usize) -> Vec<usize> {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![item];
        seen[item] = true;
        let mut out = Vec::new();
        while let Some(v) = stack.pop() {
            out.push(v);
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Graphviz text; nodes in the components of `highlight` are filled red.
    pub fn to_dot(&self, highlight: &[usize]) -> String {
        let mut marked = vec![false; self.node_count()];
        for &h in highlight {
            if h < self.node_count() {
                for v in self.component_of(h) {
                    marked[v] = true;
                }
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "graph G_{} {{", self.center_time);
        let _ = writeln!(s, "  // threshold {}", self.threshold);
        for (i, &m) in marked.iter().enumerate() {
            if m {
                let _ = writeln!(s, "  {i} [label=\"{i}\", style=filled, fillcolor=red];");
            } else {
                let _ = writeln!(s, "  {i} [label=\"{i}\"];");
            }
        }
        for (i, list) in self.adjacency.iter().enumerate() {
            for &j in list.iter().filter(|&&j| j > i) {
                let _ = writeln!(s, "  {i} -- {j};");
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Edges where `S[i][j] > threshold`, `i != j`. `S` must be symmetric to 1e-12.
pub fn build_graph(s: &SimilarityMatrix, threshold: f64, center_time: usize) -> Result<SimilarityGraph> {
    let v = &s.values;
    let n = v.nrows();
    if n != v.ncols() {
        return Err(invalid("similarity matrix must be square"));
    }
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if (v[(i, j)] - v[(j, i)]).abs() > 1e-12 {
                return Err(invalid(format!("similarity matrix is asymmetric at ({i}, {j})")));
            }
            if v[(i, j)] > threshold {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable();
    }
    Ok(SimilarityGraph {
        adjacency,
        threshold,
        center_time,
    })
}

/// Component sizes of selected items across time-ordered graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTrace {
    pub items: Vec<usize>,
    pub times: Vec<usize>,
    /// `sizes[t][i]` for graph `t` and `items[i]`.
    pub sizes: Vec<Vec<usize>>,
}

pub fn component_trace(graphs: &[SimilarityGraph], items: &[usize]) -> Result<ComponentTrace> {
    for w in graphs.windows(2) {
        if w[1].center_time <= w[0].center_time {
            return Err(invalid("graphs must be in strictly increasing time order"));
        }
    }
    let mut sizes = Vec::with_capacity(graphs.len());
    for g in graphs {
        if let Some(&bad) = items.iter().find(|&&i| i >= g.node_count()) {
            return Err(invalid(format!(
                "item {bad} out of range for {} nodes",
                g.node_count()
            )));
        }
        let all = g.component_sizes();
        sizes.push(items.iter().map(|&i| all[i]).collect());
    }
    Ok(ComponentTrace {
        items: items.to_vec(),
        times: graphs.iter().map(|g| g.center_time).collect(),
        sizes,
    })
}

/// The `k` atoms most cosine-similar to `item` in pixel space, most similar
/// first; ties go to the lower id.
pub fn most_similar_atoms(dict: &Dictionary, item: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    let m = dict.m();
    if item >= m {
        return Err(invalid(format!("item {item} out of range for M = {m}")));
    }
    if k >= m {
        return Err(invalid(format!("k = {k} must be < M = {m}")));
    }
    let target = dict.atoms().column(item);
    let mut scored: Vec<(usize, f64)> = (0..m)
        .filter(|&j| j != item)
        .map(|j| (j, target.dot(&dict.atoms().column(j))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarity").then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(values: DMatrix<f64>) -> SimilarityMatrix {
        SimilarityMatrix {
            values,
            zero_columns: vec![],
        }
    }

    #[test]
    fn duplicate_and_orthogonal_columns() {
        let p = EmbeddingMatrix::from_matrix(DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 2.0]));
        let s = cosine_similarity_columns(&p);
        assert!((s.values[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(s.values[(0, 2)], 0.0);
        assert_eq!(s.values[(2, 2)], 1.0);
    }

    #[test]
    fn zero_column_flagged() {
        let p = EmbeddingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]));
        let s = cosine_similarity_columns(&p);
        assert_eq!(s.zero_columns, vec![1]);
        assert_eq!(s.values[(1, 1)], 0.0);
        assert_eq!(s.values[(0, 1)], 0.0);
    }

    #[test]
    fn threshold_edges() {
        let mut v = DMatrix::identity(3, 3);
        v[(0, 1)] = 0.71;
        v[(1, 0)] = 0.71;
        v[(1, 2)] = 0.7;
        v[(2, 1)] = 0.7;
        let g = build_graph(&sim(v.clone()), 0.7, 0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
        assert_eq!(build_graph(&sim(v.clone()), 1.1, 0).unwrap().edge_count(), 0);
        let full = build_graph(&sim(v), -1.1, 0).unwrap();
        assert_eq!(full.edge_count(), 3);
        assert!(!full.has_edge(0, 0));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut v = DMatrix::identity(2, 2);
        v[(0, 1)] = 0.5;
        assert!(build_graph(&sim(v), 0.7, 0).is_err());
    }

    #[test]
    fn trace_cases() {
        let empty = SimilarityGraph::from_edges(4, &[], 0).unwrap();
        let complete = SimilarityGraph::from_edges(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            1,
        )
        .unwrap();
        let path = SimilarityGraph::from_edges(4, &[(0, 1), (1, 2)], 2).unwrap();
        let t = component_trace(&[empty, complete, path], &[1, 3]).unwrap();
        assert_eq!(t.sizes, vec![vec![1, 1], vec![4, 4], vec![3, 1]]);
        assert_eq!(t.times, vec![0, 1, 2]);
    }

    #[test]
    fn trace_errors() {
        let g = SimilarityGraph::from_edges(2, &[], 0).unwrap();
        assert!(component_trace(std::slice::from_ref(&g), &[2]).is_err());
        assert!(component_trace(&[g.clone(), g], &[0]).is_err());
    }

    #[test]
    fn most_similar_duplicate_first() {
        let mut a = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, 0.6, 1.0, 0.0, 1.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0]);
        a[(2, 1)] = 0.0;
        let d = Dictionary::from_unnormalized(a).unwrap();
        let top = most_similar_atoms(&d, 0, 2).unwrap();
        assert_eq!(top[0].0, 3);
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(top[1].0, 2);
    }

    #[test]
    fn most_similar_ties_by_id() {
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let top = most_similar_atoms(&d, 2, 3).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 3]);
        assert!(most_similar_atoms(&d, 4, 1).is_err());
        assert!(most_similar_atoms(&d, 0, 4).is_err());
    }

    #[test]
    fn dot_output_mentions_edges() {
        let g = SimilarityGraph::from_edges(3, &[(0, 2)], 5).unwrap();
        let dot = g.to_dot(&[0]);
        assert!(dot.starts_with("graph G_5 {"));
        assert!(dot.contains("0 -- 2;"));
        assert!(dot.contains("2 [label=\"2\", style=filled, fillcolor=red];"));
    }
}
