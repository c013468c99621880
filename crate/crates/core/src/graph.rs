//! Graphs, dynamic graph streams and hybrid time domains.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::Trajectory;

/// Unweighted graph stored as a dense 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Matrix,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(adjacency: Matrix) -> Result<Self> {
        let (r, c) = adjacency.shape();
        if r != c {
            return Err(Error::Shape {
                op: "graph adjacency",
                lhs: (r, c),
                rhs: (r, r),
            });
        }
        for i in 0..r {
            for j in 0..r {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::invalid(format!("adjacency entry ({i},{j}) = {a} not in {{0,1}}")));
                }
                if i == j && a != 0.0 {
                    return Err(Error::invalid(format!("self-loop at node {i}")));
                }
            }
        }
        let neighbors = (0..r)
            .map(|i| (0..r).filter(|&j| adjacency[(i, j)] == 1.0).collect())
            .collect();
        Ok(Self {
            adjacency,
            neighbors,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(n, n),
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Undirected graph from an edge list; duplicates and orientation are
    /// folded together.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        Graph::new(a)
    }

    pub fn complete(n: usize) -> Self {
        let a = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Graph::new(a).expect("complete graph is valid")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency == self.adjacency.transpose()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for &j in &self.neighbors[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Same graph with nodes relabelled: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.n();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for &j in &self.neighbors[i] {
                a[(perm[i], perm[j])] = 1.0;
            }
        }
        Graph::new(a).expect("permutation preserves validity")
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the degree matrix of `A + I`.
pub fn normalized_laplacian(g: &Graph) -> Matrix {
    let n = g.n();
    let a_hat = g.adjacency().add(&Matrix::identity(n));
    let deg = a_hat.row_sums();
    Matrix::from_fn(n, n, |i, j| a_hat[(i, j)] / (deg[i] * deg[j]).sqrt())
}

/// Graph plus the quantities every layer needs from it.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub graph: Arc<Graph>,
    pub laplacian: Matrix,
}

impl GraphContext {
    pub fn new(graph: Arc<Graph>) -> Self {
        let laplacian = normalized_laplacian(&graph);
        Self { graph, laplacian }
    }

    pub fn from_graph(graph: Graph) -> Self {
        Self::new(Arc::new(graph))
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Edge iff `2‖x_i − x_j‖ ≤ r`.
    Radius(f64),
    /// Edge iff the distance is below the nearest-rank `q`-th percentile of
    /// all pairwise distances.
    Percentile(f64),
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest-rank percentile of an unsorted sample.
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn distance_threshold_adjacency<P: AsRef<[f64]>>(points: &[P], mode: ThresholdMode) -> Result<Graph> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let mut a = Matrix::zeros(n, n);
    match mode {
        ThresholdMode::Radius(r) => {
            if !(r > 0.0) {
                return Err(Error::invalid(format!("radius {r} must be positive")));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if 2.0 * euclidean(points[i].as_ref(), points[j].as_ref()) <= r {
                        a[(i, j)] = 1.0;
                        a[(j, i)] = 1.0;
                    }
                }
            }
        }
        ThresholdMode::Percentile(q) => {
            if !(q > 0.0 && q < 100.0) {
                return Err(Error::invalid(format!("percentile {q} outside (0, 100)")));
            }
            let mut dists = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    dists.push(euclidean(points[i].as_ref(), points[j].as_ref()));
                }
            }
            let tau = nearest_rank_percentile(&dists, q);
            if tau <= 0.0 {
                return Err(Error::invalid("degenerate distance threshold (coincident points)"));
            }
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if dists[k] < tau {
                        a[(i, j)] = 1.0;
                        a[(j, i)] = 1.0;
                    }
                    k += 1;
                }
            }
        }
    }
    Graph::new(a)
}

/// Timestamped sequence of `(X_t, G_t)` pairs.
#[derive(Debug, Clone)]
pub struct DynamicGraphStream {
    timestamps: Vec<f64>,
    features: Vec<Matrix>,
    graphs: Vec<Arc<Graph>>,
}

impl DynamicGraphStream {
    pub fn new(timestamps: Vec<f64>, features: Vec<Matrix>, graphs: Vec<Arc<Graph>>) -> Result<Self> {
        if timestamps.len() != features.len() || timestamps.len() != graphs.len() {
            return Err(Error::invalid(format!(
                "stream lengths differ: {} timestamps, {} features, {} graphs",
                timestamps.len(),
                features.len(),
                graphs.len()
            )));
        }
        check_increasing(&timestamps)?;
        if let (Some(x0), Some(g0)) = (features.first(), graphs.first()) {
            for (x, g) in features.iter().zip(&graphs) {
                if x.cols() != x0.cols() || x.rows() != g0.n() || g.n() != g0.n() {
                    return Err(Error::Shape {
                        op: "stream entry",
                        lhs: x.shape(),
                        rhs: (g0.n(), x0.cols()),
                    });
                }
            }
        }
        Ok(Self {
            timestamps,
            features,
            graphs,
        })
    }

    /// Stream whose every entry shares one graph.
    pub fn with_constant_graph(timestamps: Vec<f64>, features: Vec<Matrix>, graph: Arc<Graph>) -> Result<Self> {
        let graphs = vec![graph; timestamps.len()];
        Self::new(timestamps, features, graphs)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn features(&self) -> &[Matrix] {
        &self.features
    }

    pub fn graphs(&self) -> &[Arc<Graph>] {
        &self.graphs
    }

    pub fn n_nodes(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.n())
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, |x| x.cols())
    }

    /// Entries `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> DynamicGraphStream {
        DynamicGraphStream {
            timestamps: self.timestamps[start..end].to_vec(),
            features: self.features[start..end].to_vec(),
            graphs: self.graphs[start..end].to_vec(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Result<DynamicGraphStream> {
        DynamicGraphStream::new(
            idx.iter().map(|&i| self.timestamps[i]).collect(),
            idx.iter().map(|&i| self.features[i].clone()).collect(),
            idx.iter().map(|&i| self.graphs[i].clone()).collect(),
        )
    }

    pub fn map_features(&self, f: impl Fn(usize, &Matrix) -> Matrix) -> Result<DynamicGraphStream> {
        DynamicGraphStream::new(
            self.timestamps.clone(),
            self.features.iter().enumerate().map(|(k, x)| f(k, x)).collect(),
            self.graphs.clone(),
        )
    }
}

fn check_increasing(ts: &[f64]) -> Result<()> {
    for (i, w) in ts.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotone { index: i + 1 });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridInterval {
    pub start: f64,
    pub end: f64,
    /// Jump index, starting at 1.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTimeDomain {
    pub intervals: Vec<HybridInterval>,
}

impl HybridTimeDomain {
    pub fn span(&self) -> (f64, f64) {
        (
            self.intervals.first().map_or(0.0, |i| i.start),
            self.intervals.last().map_or(0.0, |i| i.end),
        )
    }

    /// The same domain traversed backwards, as used by the adjoint pass.
    pub fn reversed(&self) -> impl Iterator<Item = &HybridInterval> {
        self.intervals.iter().rev()
    }
}

pub fn hybrid_time_domain(timestamps: &[f64]) -> Result<HybridTimeDomain> {
    if timestamps.len() < 2 {
        return Err(Error::invalid("hybrid time domain needs at least two timestamps"));
    }
    check_increasing(timestamps)?;
    Ok(HybridTimeDomain {
        intervals: timestamps
            .windows(2)
            .enumerate()
            .map(|(i, w)| HybridInterval {
                start: w[0],
                end: w[1],
                k: i + 1,
            })
            .collect(),
    })
}

/// Jump record at one timestamp.
#[derive(Debug, Clone)]
pub struct Jump {
    pub t: f64,
    pub pre: Matrix,
    pub post: Matrix,
}

/// Piecewise-continuous solution: one flow segment per interval between
/// consecutive jumps.
#[derive(Debug, Clone, Default)]
pub struct HybridArc {
    pub segments: Vec<Trajectory>,
    pub jumps: Vec<Jump>,
}

impl HybridArc {
    pub fn n_field_evals(&self) -> usize {
        self.segments.iter().map(|s| s.n_field_evals).sum()
    }
}

/// Parses `i j` pairs (0-based, whitespace separated). `#` starts a comment.
pub fn parse_edge_list(text: &str, n: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected two node indices".into(),
            })?
            .parse()
            .map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad node index in `{line}`"),
            })
        };
        let i = parse(it.next())?;
        let j = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "trailing tokens".into(),
            });
        }
        edges.push((i, j));
    }
    Graph::from_edges(n, &edges)
}

pub fn format_edge_list(g: &Graph) -> String {
    let mut s = String::new();
    for (i, j) in g.edges() {
        let _ = writeln!(s, "{i} {j}");
    }
    s
}
