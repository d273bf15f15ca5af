//! Grid graph over an m×n pixel raster and the correspondence between
//! segmentations (label maps) and edge labelings (multicuts).
//!
//! Edge ids are assigned deterministically: all row edges in row-major
//! order first, then all column edges in row-major order. Component
//! labels follow row-major first-visit order. Everything downstream
//! (model construction, branching, golden tests) relies on this.

use crate::error::Error;

/// 4-connected grid graph on `m` rows × `n` cols of pixels.
///
/// Row edge (i,j)–(i,j+1) has id `i*(n-1) + j`.
/// Column edge (i,j)–(i+1,j) has id `m*(n-1) + i*n + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    rows: usize,
    cols: usize,
}

impl GridGraph {
    pub fn new(rows: usize, cols: usize) -> Result<Self, Error> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid_argument(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Ok(GridGraph { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of row (horizontal) edges: m·(n−1).
    pub fn num_row_edges(&self) -> usize {
        self.rows * (self.cols - 1)
    }

    /// Number of column (vertical) edges: (m−1)·n.
    pub fn num_col_edges(&self) -> usize {
        (self.rows - 1) * self.cols
    }

    pub fn num_edges(&self) -> usize {
        self.num_row_edges() + self.num_col_edges()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.rows && j < self.cols);
        i * self.cols + j
    }

    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node / self.cols, node % self.cols)
    }

    /// Id of the row edge (i,j)–(i,j+1).
    pub fn row_edge_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.rows && j + 1 < self.cols);
        i * (self.cols - 1) + j
    }

    /// Id of the column edge (i,j)–(i+1,j).
    pub fn col_edge_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + 1 < self.rows && j < self.cols);
        self.num_row_edges() + i * self.cols + j
    }

    /// Endpoint node indices `(u, v)` of an edge. `u` is the lexicographically
    /// smaller pixel; the edge's first derivative is taken as `w[v] - w[u]`.
    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        let nr = self.num_row_edges();
        if edge < nr {
            let i = edge / (self.cols - 1);
            let j = edge % (self.cols - 1);
            (self.node_index(i, j), self.node_index(i, j + 1))
        } else {
            let e = edge - nr;
            let i = e / self.cols;
            let j = e % self.cols;
            (self.node_index(i, j), self.node_index(i + 1, j))
        }
    }

    /// All edges incident to node `(i, j)` paired with the neighbor node.
    pub fn incident_edges(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(4);
        if j > 0 {
            out.push((self.row_edge_id(i, j - 1), self.node_index(i, j - 1)));
        }
        if j + 1 < self.cols {
            out.push((self.row_edge_id(i, j), self.node_index(i, j + 1)));
        }
        if i > 0 {
            out.push((self.col_edge_id(i - 1, j), self.node_index(i - 1, j)));
        }
        if i + 1 < self.rows {
            out.push((self.col_edge_id(i, j), self.node_index(i + 1, j)));
        }
        out
    }

    /// All 4-edge chordless cycles (unit squares), one per square, edges in
    /// ascending id order. There are exactly (m−1)(n−1) of them.
    pub fn enumerate_unit_cycles(&self) -> Vec<[usize; 4]> {
        let mut cycles = Vec::with_capacity((self.rows - 1).saturating_mul(self.cols - 1));
        for i in 0..self.rows.saturating_sub(1) {
            for j in 0..self.cols.saturating_sub(1) {
                // top and bottom row edges come before the two column edges
                cycles.push([
                    self.row_edge_id(i, j),
                    self.row_edge_id(i + 1, j),
                    self.col_edge_id(i, j),
                    self.col_edge_id(i, j + 1),
                ]);
            }
        }
        cycles
    }
}

/// Binary edge labeling: `true` = active (boundary), `false` = dormant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLabeling(pub Vec<bool>);

impl EdgeLabeling {
    pub fn all_dormant(g: &GridGraph) -> Self {
        EdgeLabeling(vec![false; g.num_edges()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel segment labels. Labels are contiguous 0..k−1 in row-major
/// first-visit order and every label class is 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
    num_labels: u32,
}

impl LabelMap {
    /// Wrap raw per-pixel labels, relabeling into 4-connected components in
    /// row-major first-visit order. Pixels sharing a raw label but not
    /// 4-connected end up in distinct segments.
    pub fn from_raw_labels(rows: usize, cols: usize, raw: &[u32]) -> Result<Self, Error> {
        if rows == 0 || cols == 0 || raw.len() != rows * cols {
            return Err(Error::invalid_argument(format!(
                "label buffer of {} entries does not match {}x{}",
                raw.len(),
                rows,
                cols
            )));
        }
        let g = GridGraph::new(rows, cols)?;
        let mut x = vec![false; g.num_edges()];
        for (e, flag) in x.iter_mut().enumerate() {
            let (u, v) = g.edge_endpoints(e);
            *flag = raw[u] != raw[v];
        }
        Ok(components_of_dormant(&g, &EdgeLabeling(x)))
    }

    /// Construct from labels already known to satisfy the invariants.
    /// Verified in debug builds.
    pub(crate) fn from_canonical(
        rows: usize,
        cols: usize,
        labels: Vec<u32>,
        num_labels: u32,
    ) -> Self {
        let lm = LabelMap { rows, cols, labels, num_labels };
        debug_assert!(lm.check_invariants().is_ok());
        lm
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.cols + j]
    }

    /// Pixel count of every segment, indexed by label.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_labels as usize];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Checks contiguity (labels exactly 0..k−1, each nonempty) and
    /// 4-connectivity of every class.
    pub fn check_invariants(&self) -> Result<(), Error> {
        let k = self.num_labels as usize;
        if k == 0 {
            return Err(Error::invalid_argument("label map with zero labels".into()));
        }
        let mut seen = vec![false; k];
        for &l in &self.labels {
            if (l as usize) >= k {
                return Err(Error::invalid_argument(format!("label {l} out of range 0..{k}")));
            }
            seen[l as usize] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::invalid_argument("label range has gaps".into()));
        }
        // One flood fill per class from its first pixel must reach the whole class.
        let mut first = vec![usize::MAX; k];
        for (idx, &l) in self.labels.iter().enumerate() {
            if first[l as usize] == usize::MAX {
                first[l as usize] = idx;
            }
        }
        let mut visited = vec![false; self.labels.len()];
        let mut stack = Vec::new();
        let mut reached = vec![0usize; k];
        for (l, &start) in first.iter().enumerate() {
            stack.push(start);
            visited[start] = true;
            while let Some(node) = stack.pop() {
                reached[l] += 1;
                let (i, j) = (node / self.cols, node % self.cols);
                let mut visit = |ni: usize, nj: usize| {
                    let nn = ni * self.cols + nj;
                    if !visited[nn] && self.labels[nn] as usize == l {
                        visited[nn] = true;
                        stack.push(nn);
                    }
                };
                if i > 0 {
                    visit(i - 1, j);
                }
                if i + 1 < self.rows {
                    visit(i + 1, j);
                }
                if j > 0 {
                    visit(i, j - 1);
                }
                if j + 1 < self.cols {
                    visit(i, j + 1);
                }
            }
        }
        let sizes = self.segment_sizes();
        for l in 0..k {
            if reached[l] != sizes[l] {
                return Err(Error::invalid_argument(format!(
                    "label {l} is not 4-connected ({} of {} pixels reachable)",
                    reached[l], sizes[l]
                )));
            }
        }
        Ok(())
    }
}

/// Disjoint-set forest with union by size and path halving.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Connected components of the subgraph spanned by dormant edges, labeled
/// 0..k−1 in row-major first-visit order.
pub fn components_of_dormant(g: &GridGraph, x: &EdgeLabeling) -> LabelMap {
    assert_eq!(
        x.len(),
        g.num_edges(),
        "edge labeling length {} does not match |E| = {}",
        x.len(),
        g.num_edges()
    );
    let n = g.num_pixels();
    let mut uf = UnionFind::new(n);
    for (e, &active) in x.0.iter().enumerate() {
        if !active {
            let (u, v) = g.edge_endpoints(e);
            uf.union(u as u32, v as u32);
        }
    }
    let mut labels = vec![u32::MAX; n];
    let mut root_label = vec![u32::MAX; n];
    let mut next = 0u32;
    for node in 0..n {
        let root = uf.find(node as u32) as usize;
        if root_label[root] == u32::MAX {
            root_label[root] = next;
            next += 1;
        }
        labels[node] = root_label[root];
    }
    LabelMap::from_canonical(g.rows(), g.cols(), labels, next)
}

/// Edge labeling with `x_e = 1` exactly where the endpoints of `e` carry
/// different labels: the multicut induced by the segmentation.
pub fn induced_multicut(g: &GridGraph, labels: &LabelMap) -> EdgeLabeling {
    assert_eq!(labels.rows(), g.rows());
    assert_eq!(labels.cols(), g.cols());
    let mut x = vec![false; g.num_edges()];
    for (e, flag) in x.iter_mut().enumerate() {
        let (u, v) = g.edge_endpoints(e);
        *flag = labels.labels()[u] != labels.labels()[v];
    }
    EdgeLabeling(x)
}

/// Closure of an edge labeling: the induced multicut of its dormant-edge
/// components. Never activates an edge that was dormant.
pub fn closure(g: &GridGraph, x: &EdgeLabeling) -> EdgeLabeling {
    induced_multicut(g, &components_of_dormant(g, x))
}
