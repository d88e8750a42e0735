//! Feature-correlation graph built from training rows.

use std::fmt::Write as _;
use std::sync::Arc;

use gradcore::{Array, SparseRows};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.7;

/// Symmetric `F×F` Pearson correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.n + v]
    }

    pub fn to_array(&self) -> Array {
        Array::new([self.n, self.n], self.data.clone()).expect("square")
    }
}

/// Pearson correlation between every pair of columns of `train`
/// (`[rows, F]`). Pairs involving a constant column correlate at 0.
pub fn pearson_matrix(train: &Array) -> Result<CorrelationMatrix> {
    let (rows, f) = match *train.shape() {
        [r, f] => (r, f),
        _ => return Err(Error::Schema(format!("expected a matrix, got {:?}", train.shape()))),
    };
    if rows < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 rows, got {rows}"
        )));
    }
    let mut centred = vec![0.0; rows * f];
    for j in 0..f {
        let mean = (0..rows).map(|t| train.at(&[t, j])).sum::<f64>() / rows as f64;
        for t in 0..rows {
            centred[j * rows + t] = train.at(&[t, j]) - mean;
        }
    }
    let col = |j: usize| &centred[j * rows..(j + 1) * rows];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let ss: Vec<f64> = (0..f).map(|j| dot(col(j), col(j))).collect();

    let mut data = vec![0.0; f * f];
    for u in 0..f {
        data[u * f + u] = 1.0;
        for v in u + 1..f {
            let r = if ss[u] > 0.0 && ss[v] > 0.0 {
                (dot(col(u), col(v)) / (ss[u] * ss[v]).sqrt()).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            data[u * f + v] = r;
            data[v * f + u] = r;
        }
    }
    Ok(CorrelationMatrix { n: f, data })
}

/// Undirected simple graph over feature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    names: Option<Vec<String>>,
}

impl FeatureGraph {
    /// Build from an edge list; pairs are normalised to `u < v` and
    /// deduplicated.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut norm = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Schema(format!("edge ({u},{v}) outside {n} nodes")));
            }
            if u == v {
                return Err(Error::Schema(format!("self edge on node {u}")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &norm {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        Ok(Self {
            n,
            edges: norm,
            adjacency,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::Schema(format!(
                "{} names for {} nodes",
                names.len(),
                self.n
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn empty(n: usize) -> Self {
        Self::from_edges(n, &[]).expect("no edges")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn node_name(&self, v: usize) -> String {
        self.names
            .as_ref()
            .map_or_else(|| format!("f{v}"), |n| n[v].clone())
    }

    /// Relabel so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut g = Self::from_edges(self.n, &edges)?;
        if let Some(names) = &self.names {
            let mut out = vec![String::new(); self.n];
            for (v, name) in names.iter().enumerate() {
                out[perm[v]] = name.clone();
            }
            g.names = Some(out);
        }
        Ok(g)
    }

    /// Degree-normalised propagation operator: `1/d_v` on the diagonal
    /// (1 for isolated nodes) and `1/√(d_v d_u)` for each neighbour.
    pub fn gcn_operator(&self) -> Arc<SparseRows> {
        let deg = self.degrees();
        let rows = (0..self.n)
            .map(|v| {
                let dv = deg[v] as f64;
                let mut row = vec![(v, if deg[v] == 0 { 1.0 } else { 1.0 / dv })];
                row.extend(
                    self.adjacency[v]
                        .iter()
                        .map(|&u| (u, 1.0 / (dv * deg[u] as f64).sqrt())),
                );
                row
            })
            .collect();
        Arc::new(SparseRows::from_rows(rows))
    }

    /// Closed neighbourhoods `{v} ∪ N(v)` with unit weights.
    pub fn closed_neighborhoods(&self) -> Arc<SparseRows> {
        let rows = (0..self.n)
            .map(|v| {
                std::iter::once(v)
                    .chain(self.adjacency[v].iter().copied())
                    .map(|u| (u, 1.0))
                    .collect()
            })
            .collect();
        Arc::new(SparseRows::from_rows(rows))
    }

    /// Tab-separated edge list by node name followed by the degree vector.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes\t{}", self.n);
        let _ = writeln!(out, "# edges\t{}", self.edges.len());
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{}\t{}", self.node_name(u), self.node_name(v));
        }
        let _ = writeln!(out, "# degree");
        for v in 0..self.n {
            let _ = writeln!(out, "{}\t{}", self.node_name(v), self.degree(v));
        }
        out
    }
}

/// Edge `(u,v)` iff `|r_uv| > tau`, or `r_uv > tau` when `signed`.
pub fn threshold_graph(corr: &CorrelationMatrix, tau: f64, signed: bool) -> Result<FeatureGraph> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    let mut edges = Vec::new();
    for u in 0..corr.n() {
        for v in u + 1..corr.n() {
            let r = corr.get(u, v);
            let score = if signed { r } else { r.abs() };
            if score > tau {
                edges.push((u, v));
            }
        }
    }
    FeatureGraph::from_edges(corr.n(), &edges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    /// `degree_histogram[k]` counts nodes of degree `k`.
    pub degree_histogram: Vec<usize>,
    pub isolated: usize,
    /// Connected component sizes, largest first.
    pub components: Vec<usize>,
}

pub fn graph_stats(g: &FeatureGraph) -> GraphStats {
    let deg = g.degrees();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let mut degree_histogram = vec![0; max_deg + 1];
    for &d in &deg {
        degree_histogram[d] += 1;
    }
    let mut seen = vec![false; g.n()];
    let mut components = Vec::new();
    for start in 0..g.n() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in g.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        components.push(size);
    }
    components.sort_unstable_by(|a, b| b.cmp(a));
    GraphStats {
        nodes: g.n(),
        edges: g.edges().len(),
        degree_histogram,
        isolated: deg.iter().filter(|&&d| d == 0).count(),
        components,
    }
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} nodes, {} edges, {} isolated, {} components (largest {})",
            self.nodes,
            self.edges,
            self.isolated,
            self.components.len(),
            self.components.first().copied().unwrap_or(0)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns(cols: &[Vec<f64>]) -> Array {
        let rows = cols[0].len();
        let data = (0..rows)
            .flat_map(|t| cols.iter().map(move |c| c[t]))
            .collect();
        Array::new([rows, cols.len()], data).unwrap()
    }

    #[test]
    fn pearson_cases() {
        let f1 = vec![1.0, 2.0, 3.0, 4.0];
        let c = pearson_matrix(&columns(&[
            f1.clone(),
            f1.iter().map(|x| 2.0 * x + 3.0).collect(),
            f1.iter().map(|x| -x).collect(),
            vec![1.0, 2.0, 2.0, 4.0],
            vec![5.0; 4],
        ]))
        .unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
        // sxy = 4.5, sxx = 5, syy = 4.75
        let expect = 4.5 / (5.0f64 * 4.75).sqrt();
        assert!((c.get(0, 3) - expect).abs() < 1e-12);
        assert!((c.get(0, 3) - 0.9233805168766388).abs() < 1e-12);
        assert_eq!(c.get(0, 4), 0.0);
        assert_eq!(c.get(3, 0), c.get(0, 3));
        assert!(matches!(
            pearson_matrix(&columns(&[vec![1.0]])),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn threshold_cases() {
        let f1 = vec![1.0, -2.0, 3.0, 0.5, -1.0, 2.0];
        let noise = vec![0.3, 0.1, -0.2, 0.4, 0.2, -0.5];
        let c = pearson_matrix(&columns(&[f1.clone(), f1.iter().map(|x| -x).collect(), noise]))
            .unwrap();
        assert!(c.get(0, 2).abs() < 0.7 && c.get(1, 2).abs() < 0.7);
        let g = threshold_graph(&c, DEFAULT_TAU, false).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.degree(2), 0);
        assert!(threshold_graph(&c, DEFAULT_TAU, true).unwrap().edges().is_empty());

        let same = pearson_matrix(&columns(&vec![f1.clone(); 4])).unwrap();
        let k4 = threshold_graph(&same, DEFAULT_TAU, false).unwrap();
        assert_eq!(k4.degrees(), vec![3; 4]);
        assert!(threshold_graph(&same, 1.0, false).unwrap().edges().is_empty());
        assert!(threshold_graph(&same, 0.0, false).is_err());
    }

    #[test]
    fn stats_cases() {
        let s = graph_stats(&FeatureGraph::empty(5));
        assert_eq!((s.edges, s.isolated, s.components.len()), (0, 5, 5));
        let k4 = FeatureGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
            .unwrap();
        assert_eq!(graph_stats(&k4).edges, 6);
        let path = FeatureGraph::from_edges(3, &[(0, 1), (2, 1)]).unwrap();
        let s = graph_stats(&path);
        assert_eq!(path.degrees(), vec![1, 2, 1]);
        assert_eq!(s.components, vec![3]);
        assert_eq!(s.degree_histogram, vec![0, 2, 1]);
    }

    #[test]
    fn operators() {
        let path = FeatureGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let p = path.gcn_operator().to_dense();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(p[0], vec![1.0, h, 0.0]);
        assert_eq!(p[1], vec![h, 0.5, h]);
        let iso = FeatureGraph::empty(2).gcn_operator().to_dense();
        assert_eq!(iso, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(path.closed_neighborhoods().nnz(), 7);
    }

    #[test]
    fn edge_list_text() {
        let g = FeatureGraph::from_edges(3, &[(0, 2)])
            .unwrap()
            .with_names(vec!["Oil".into(), "Gold".into(), "Dollar index".into()])
            .unwrap();
        let text = g.to_edge_list();
        assert!(text.contains("Oil\tDollar index\n"));
        assert!(text.ends_with("Dollar index\t1\n"));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(FeatureGraph::from_edges(2, &[(0, 0)]).is_err());
        assert!(FeatureGraph::from_edges(2, &[(0, 2)]).is_err());
        assert_eq!(FeatureGraph::from_edges(2, &[(1, 0), (0, 1)]).unwrap().edges(), &[(0, 1)]);
    }
}
