/// Row-compressed sparse matrix over `n` nodes.
///
/// Row `v` lists the columns `cols[offsets[v]..offsets[v+1]]` in ascending
/// order together with their weights. Used both as a fixed propagation
/// operator and as a neighbourhood pattern (weights then ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    /// Build from per-row `(column, weight)` lists. Columns are sorted per row.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, w) in row {
                assert!(c < n, "column {c} out of range for {n} nodes");
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self {
            n,
            offsets,
            cols,
            weights,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, v: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[v]..self.offsets[v + 1];
        (&self.cols[r.clone()], &self.weights[r])
    }

    pub(crate) fn range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub(crate) fn col(&self, k: usize) -> usize {
        self.cols[k]
    }

    pub(crate) fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Dense `n × n` copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (v, row) in m.iter_mut().enumerate() {
            let (cols, ws) = self.row(v);
            for (&c, &w) in cols.iter().zip(ws) {
                row[c] += w;
            }
        }
        m
    }
}
