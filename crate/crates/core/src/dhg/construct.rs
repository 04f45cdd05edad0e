use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::DhgError;
use crate::matrix::Matrix;
use crate::nn::{NnError, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

/// A tail member together with the coefficient that admitted it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailNode {
    /// Node id over both timestamps (`N..2N` for previous-step nodes).
    pub node: usize,
    pub coef: f64,
    /// Flat row-major index of the coefficient in its `p` matrix.
    pub coef_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectedHyperedge {
    pub kind: EdgeKind,
    pub master: usize,
    pub tail: Vec<TailNode>,
    /// Sorted master ids sharing this edge's tail set, master included.
    pub head: Vec<usize>,
}

impl DirectedHyperedge {
    pub fn tail_ids(&self) -> Vec<usize> {
        self.tail.iter().map(|t| t.node).collect()
    }
}

/// Dense node-by-edge incidence values; column `c` belongs to `edges[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    pub values: Matrix,
    pub edges: Vec<(EdgeKind, usize)>,
}

/// `ReLU(obs * w + b)` row by row.
pub fn embed_observations(tape: &mut Tape, obs: Var, w: Var, b: Var) -> Result<Var, DhgError> {
    let z = tape.dense(obs, w, b)?;
    Ok(tape.relu(z))
}

/// Spatial candidate node for column `k` of master `i`'s coefficient row.
fn spatial_candidate(master: usize, k: usize) -> usize {
    if k < master {
        k
    } else {
        k + 1
    }
}

/// Per-master spatial errors `|h_i theta - sum_j p_i(j) h_j|`, as an `N x 1` column.
///
/// `p_spa` is `N x (N-1)` with candidates in ascending id order, skipping the master.
pub fn spatial_reconstruction_errors(tape: &mut Tape, h: Var, theta: Var, p_spa: Var) -> Result<Var, DhgError> {
    let n = tape.value(h).rows();
    if n < 2 {
        return Err(DhgError::Degenerate("spatial reconstruction needs at least two nodes"));
    }
    let ps = tape.value(p_spa).shape();
    if ps != (n, n - 1) {
        return Err(NnError::Dimension { op: "spatial coefficients", lhs: ps, rhs: (n, n - 1) }.into());
    }
    let mut map = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for k in 0..n - 1 {
            map.push((i * (n - 1) + k, i * n + spatial_candidate(i, k)));
        }
    }
    let full = tape.scatter(p_spa, Matrix::zeros(n, n), map)?;
    let proj = tape.matmul(h, theta)?;
    let rec = tape.matmul(full, h)?;
    let diff = tape.sub(proj, rec)?;
    Ok(tape.row_norm(diff))
}

/// Per-master temporal errors `|h_i theta - sum_j p_i(j) h_prev_j|`, as an `N x 1` column.
pub fn temporal_reconstruction_errors(
    tape: &mut Tape,
    h: Var,
    h_prev: Var,
    theta: Var,
    p_tem: Var,
) -> Result<Var, DhgError> {
    let n = tape.value(h).rows();
    if n == 0 {
        return Err(DhgError::Degenerate("temporal reconstruction on an empty graph"));
    }
    let ps = tape.value(p_tem).shape();
    if ps != (n, tape.value(h_prev).rows()) {
        return Err(NnError::Dimension { op: "temporal coefficients", lhs: ps, rhs: (n, n) }.into());
    }
    let proj = tape.matmul(h, theta)?;
    let rec = tape.matmul(p_tem, h_prev)?;
    let diff = tape.sub(proj, rec)?;
    Ok(tape.row_norm(diff))
}

/// `lambda * sum(c_spa + c_tem) + |p|_1 + gamma2 * sum of per-master L2 norms`.
pub fn reconstruction_loss(
    tape: &mut Tape,
    c_spa: Var,
    c_tem: Var,
    p_spa: Var,
    p_tem: Var,
    lambda: f64,
    gamma2: f64,
) -> Result<Var, DhgError> {
    let c = tape.add(c_spa, c_tem)?;
    let c = tape.sum(c);
    let err = tape.scale(c, lambda);
    let l1s = tape.abs_sum(p_spa);
    let l1t = tape.abs_sum(p_tem);
    let l1 = tape.add(l1s, l1t)?;
    let ns = tape.row_norm(p_spa);
    let nt = tape.row_norm(p_tem);
    let ns = tape.sum(ns);
    let nt = tape.sum(nt);
    let l2 = tape.add(ns, nt)?;
    let l2 = tape.scale(l2, gamma2);
    let total = tape.add(err, l1)?;
    Ok(tape.add(total, l2)?)
}

/// Builds one spatial then one temporal hyperedge per master, in master order.
///
/// Spatial edges come first (`N` of them), followed by the `N` temporal edges.
pub fn build_hyperedges(p_spa: &Matrix, p_tem: &Matrix, zeta: f64) -> Vec<DirectedHyperedge> {
    let n = p_spa.rows();
    let mut edges = Vec::with_capacity(2 * n);
    for i in 0..n {
        let tail = p_spa
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > zeta)
            .map(|(k, &p)| TailNode { node: spatial_candidate(i, k), coef: p, coef_index: i * p_spa.cols() + k })
            .collect();
        edges.push(DirectedHyperedge { kind: EdgeKind::Spatial, master: i, tail, head: Vec::new() });
    }
    for i in 0..p_tem.rows() {
        let tail = p_tem
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > zeta)
            .map(|(j, &p)| TailNode { node: n + j, coef: p, coef_index: i * p_tem.cols() + j })
            .collect();
        edges.push(DirectedHyperedge { kind: EdgeKind::Temporal, master: i, tail, head: Vec::new() });
    }
    assign_heads(&mut edges);
    edges
}

/// Fills every head set with the masters whose tail set of the same kind is identical.
fn assign_heads(edges: &mut [DirectedHyperedge]) {
    let mut groups: BTreeMap<(EdgeKind, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for e in edges.iter() {
        groups.entry((e.kind, e.tail_ids())).or_default().push(e.master);
    }
    for e in edges.iter_mut() {
        let mut head = groups[&(e.kind, e.tail_ids())].clone();
        head.sort_unstable();
        head.dedup();
        e.head = head;
    }
}

/// Which case decides an incidence entry; earlier variants win.
#[derive(Clone, Copy, PartialEq)]
enum Entry {
    Master,
    Tail(f64, usize),
    Head(f64),
}

fn column_entries(e: &DirectedHyperedge, nodes: usize) -> Result<BTreeMap<usize, Entry>, DhgError> {
    let mut col = BTreeMap::new();
    let check = |node: usize| {
        if node >= nodes {
            Err(DhgError::NodeOutOfRange { node, nodes })
        } else {
            Ok(node)
        }
    };
    let head_value = if e.head.is_empty() { 0.0 } else { 1.0 / e.head.len() as f64 };
    for &h in &e.head {
        col.insert(check(h)?, Entry::Head(head_value));
    }
    for t in &e.tail {
        col.insert(check(t.node)?, Entry::Tail(t.coef, t.coef_index));
    }
    col.insert(check(e.master)?, Entry::Master);
    Ok(col)
}

fn check_unique(edges: &[DirectedHyperedge]) -> Result<(), DhgError> {
    let mut seen = BTreeMap::new();
    for e in edges {
        if seen.insert((e.kind, e.master), ()).is_some() {
            return Err(DhgError::DuplicateEdge { master: e.master, kind: e.kind });
        }
    }
    Ok(())
}

/// Incidence values over `nodes` rows, one column per edge in input order.
///
/// An entry is 1 at the master, the tail coefficient at tail members and
/// `1/|head|` at head members, checked in that order.
pub fn incidence_matrix(edges: &[DirectedHyperedge], nodes: usize) -> Result<IncidenceMatrix, DhgError> {
    check_unique(edges)?;
    let mut values = Matrix::zeros(nodes, edges.len());
    for (c, e) in edges.iter().enumerate() {
        for (row, entry) in column_entries(e, nodes)? {
            let v = match entry {
                Entry::Master => 1.0,
                Entry::Tail(p, _) => p,
                Entry::Head(v) => v,
            };
            values.set(row, c, v);
        }
    }
    Ok(IncidenceMatrix { values, edges: edges.iter().map(|e| (e.kind, e.master)).collect() })
}

/// Differentiable incidence matrix over `2 * agents` rows.
///
/// Tail entries are read from the coefficient variables so gradients reach
/// `p_spa` and `p_tem`; all other entries are constants.
pub fn incidence_on_tape(
    tape: &mut Tape,
    edges: &[DirectedHyperedge],
    agents: usize,
    p_spa: Var,
    p_tem: Var,
) -> Result<Var, DhgError> {
    check_unique(edges)?;
    let nodes = 2 * agents;
    let cols = edges.len();
    let mut base = Matrix::zeros(nodes, cols);
    let mut spa_map = Vec::new();
    let mut tem_map = Vec::new();
    for (c, e) in edges.iter().enumerate() {
        for (row, entry) in column_entries(e, nodes)? {
            match entry {
                Entry::Master => base.set(row, c, 1.0),
                Entry::Head(v) => base.set(row, c, v),
                Entry::Tail(_, idx) => match e.kind {
                    EdgeKind::Spatial => spa_map.push((idx, row * cols + c)),
                    EdgeKind::Temporal => tem_map.push((idx, row * cols + c)),
                },
            }
        }
    }
    let with_spa = tape.scatter(p_spa, base, spa_map)?;
    let tem = tape.scatter(p_tem, Matrix::zeros(nodes, cols), tem_map)?;
    Ok(tape.add(with_spa, tem)?)
}
