//! Two-layer GCN with a sigmoid head and hand-derived gradients.
//!
//! ```text
//! H1 = relu(Â X W1 + b1)
//! p  = sigmoid(Â H1 w2 + b2)
//! ```
//! `Â = D^{-1/2} (A + I) D^{-1/2}` with `D` the degree including the self-loop.

use super::GnnError;
use crate::graph::Edge;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Probability clamp applied before taking logs in the loss.
pub const LOSS_CLAMP: f64 = 1e-7;
/// Keeps forward outputs strictly inside (0, 1) when the sigmoid saturates.
const OUTPUT_FLOOR: f64 = 1e-15;

/// Symmetric-normalized adjacency with self-loops in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormAdj {
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self, GnnError> {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GnnError::EdgeOutOfRange { edge: (u, v), n });
            }
            if u != v {
                lists[u].push(v);
                lists[v].push(u);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        let inv_sqrt: Vec<f64> = lists
            .iter()
            .map(|l| 1.0 / (l.len() as f64).sqrt())
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, l) in lists.iter().enumerate() {
            for &j in l {
                cols.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// `(column, weight)` entries of row `i`, including the self-loop.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    /// `Â M`.
    pub fn spmm(&self, m: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, m.ncols()));
        for i in 0..self.n {
            let mut row = out.row_mut(i);
            for (j, w) in self.row(i) {
                row.scaled_add(w, &m.row(j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub seed: u64,
}

impl GnnModel {
    /// Fan-in scaled uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; zero biases.
    pub fn init(d_in: usize, d_h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (d_in.max(1) as f64).sqrt();
        let a2 = 1.0 / (d_h.max(1) as f64).sqrt();
        let w1 = Array2::from_shape_fn((d_in, d_h), |_| rng.gen_range(-a1..a1));
        let w2 = Array1::from_shape_fn(d_h, |_| rng.gen_range(-a2..a2));
        Self {
            w1,
            b1: Array1::zeros(d_h),
            w2,
            b2: 0.0,
            seed,
        }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w1: Array2::zeros((d_in, d_h)),
            b1: Array1::zeros(d_h),
            w2: Array1::zeros(d_h),
            b2: 0.0,
            seed: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.w1.ncols()
    }

    pub fn layer_dims(&self) -> [usize; 3] {
        [self.d_in(), self.d_h(), 1]
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .all(|x| x.is_finite())
            && self.b2.is_finite()
    }

    /// Flattened parameters in the order `w1, b1, w2, b2`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .collect();
        out.push(self.b2);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .for_each(|x| *x = it.next().unwrap());
        self.b2 = it.next().unwrap();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("model serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GnnError> {
        bincode::deserialize(bytes).map_err(|e| GnnError::Decode(e.to_string()))
    }
}

/// Gradients with the same shapes as [`GnnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .collect();
        out.push(self.b2);
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_dims(m: &GnnModel, adj: &NormAdj, x: ArrayView2<'_, f64>) -> Result<(), GnnError> {
    if x.ncols() != m.d_in() {
        return Err(GnnError::Dimension {
            expected: m.d_in(),
            found: x.ncols(),
        });
    }
    if x.nrows() != adj.node_count() {
        return Err(GnnError::RowCount {
            expected: adj.node_count(),
            found: x.nrows(),
        });
    }
    Ok(())
}

/// Graph and features with the first propagation `Â X` precomputed.
/// `Â X W1 = (Â X) W1`, so training never repeats it.
#[derive(Debug, Clone)]
pub struct Propagated {
    pub adj: NormAdj,
    pub ax: Array2<f64>,
}

impl Propagated {
    pub fn new(adj: NormAdj, x: ArrayView2<'_, f64>) -> Result<Self, GnnError> {
        if x.nrows() != adj.node_count() {
            return Err(GnnError::RowCount {
                expected: adj.node_count(),
                found: x.nrows(),
            });
        }
        let ax = adj.spmm(x);
        Ok(Self { adj, ax })
    }

    pub fn dim(&self) -> usize {
        self.ax.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.ax.nrows()
    }
}

struct Activations {
    pre1: Array2<f64>,
    ah1: Array2<f64>,
    probs: Array1<f64>,
}

fn activations(m: &GnnModel, g: &Propagated) -> Activations {
    let mut pre1 = g.ax.dot(&m.w1);
    pre1 += &m.b1;
    let h1 = pre1.mapv(|v| v.max(0.0));
    let ah1 = g.adj.spmm(h1.view());
    let logits = ah1.dot(&m.w2) + m.b2;
    let probs = logits.mapv(|z| sigmoid(z).clamp(OUTPUT_FLOOR, 1.0 - OUTPUT_FLOOR));
    Activations { pre1, ah1, probs }
}

/// Fraud probabilities for every node.
pub fn forward(
    m: &GnnModel,
    adj: &NormAdj,
    x: ArrayView2<'_, f64>,
) -> Result<Array1<f64>, GnnError> {
    check_dims(m, adj, x)?;
    let g = Propagated::new(adj.clone(), x)?;
    Ok(activations(m, &g).probs)
}

pub fn forward_propagated(m: &GnnModel, g: &Propagated) -> Result<Array1<f64>, GnnError> {
    if g.dim() != m.d_in() {
        return Err(GnnError::Dimension {
            expected: m.d_in(),
            found: g.dim(),
        });
    }
    Ok(activations(m, g).probs)
}

/// Mean binary cross-entropy over `(node, label)` pairs with probabilities
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], labels: &[(usize, u8)]) -> Result<f64, GnnError> {
    if labels.is_empty() {
        return Err(GnnError::EmptyLabels);
    }
    let total: f64 = labels
        .iter()
        .map(|&(v, y)| {
            let p = probs[v].clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Loss and analytic gradient over the labeled pairs. Duplicate pairs count
/// with multiplicity, matching the mean in the loss.
///
/// The logit gradient is `(p - y) / |labels|`, exact wherever the loss clamp
/// is inactive.
pub fn backward(
    m: &GnnModel,
    g: &Propagated,
    labels: &[(usize, u8)],
) -> Result<(f64, Grads), GnnError> {
    if g.dim() != m.d_in() {
        return Err(GnnError::Dimension {
            expected: m.d_in(),
            found: g.dim(),
        });
    }
    if labels.is_empty() {
        return Err(GnnError::EmptyLabels);
    }
    let act = activations(m, g);
    let probs = act.probs.as_slice().expect("contiguous");
    let loss = bce_loss(probs, labels)?;

    let n = g.node_count();
    let d_h = m.d_h();
    let scale = 1.0 / labels.len() as f64;
    let mut dlogit = vec![0.0; n];
    for &(v, y) in labels {
        dlogit[v] += (probs[v] - y as f64) * scale;
    }

    let mut gw2 = Array1::zeros(d_h);
    let mut gb2 = 0.0;
    let mut touched = vec![false; n];
    let mut dh1 = Array2::<f64>::zeros((n, d_h));
    for (v, &gv) in dlogit.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        gb2 += gv;
        gw2.scaled_add(gv, &act.ah1.row(v));
        // Â is symmetric: d(Â H1)_v / dH1_j = Â[v, j].
        for (j, w) in g.adj.row(v) {
            dh1.row_mut(j).scaled_add(gv * w, &m.w2);
            touched[j] = true;
        }
    }

    let mut gw1 = Array2::zeros((m.d_in(), d_h));
    let mut gb1 = Array1::zeros(d_h);
    for j in (0..n).filter(|&j| touched[j]) {
        let mut row = dh1.row_mut(j);
        row.zip_mut_with(&act.pre1.row(j), |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        gb1 += &row;
        let ax_row = g.ax.row(j);
        for (a, mut gw_row) in ax_row.iter().zip(gw1.axis_iter_mut(Axis(0))) {
            if *a != 0.0 {
                gw_row.scaled_add(*a, &row);
            }
        }
    }
    Ok((
        loss,
        Grads {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line4() -> NormAdj {
        NormAdj::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn zero_model_gives_half() {
        let x = Array2::from_elem((4, 3), 0.7);
        let p = forward(&GnnModel::zeros(3, 5), &line4(), x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dimension_mismatch() {
        let x = Array2::zeros((4, 2));
        let err = forward(&GnnModel::zeros(3, 5), &line4(), x.view()).unwrap_err();
        assert_eq!(
            err,
            GnnError::Dimension {
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn normalized_weights() {
        let a = line4();
        // Node 0: degree 2 with self-loop; node 1: degree 3.
        let row0: Vec<_> = a.row(0).collect();
        assert_eq!(row0[0].0, 0);
        assert!((row0[0].1 - 0.5).abs() < 1e-15);
        assert!((row0[1].1 - 1.0 / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_uses_only_self() {
        let adj = NormAdj::from_edges(3, &[(0, 1)]).unwrap();
        let m = GnnModel::init(2, 4, 3);
        let x1 = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let x2 = array![[-4.0, 0.0], [9.0, 9.0], [0.5, 0.25]];
        let p1 = forward(&m, &adj, x1.view()).unwrap();
        let p2 = forward(&m, &adj, x2.view()).unwrap();
        assert_eq!(p1[2], p2[2]);
        assert_ne!(p1[0], p2[0]);
    }

    /// Hand-computed forward on a 4-node line with one hidden unit.
    #[test]
    fn line_graph_hand_values() {
        let adj = line4();
        let x = array![[1.0], [0.0], [0.0], [2.0]];
        let m = GnnModel {
            w1: array![[1.0]],
            b1: array![0.0],
            w2: array![1.0],
            b2: 0.0,
            seed: 0,
        };
        // Degrees with self-loops: 2, 3, 3, 2.
        // AX = [1/2, 1/sqrt6, 2/sqrt6, 1]; relu is identity on these.
        let s6 = 6f64.sqrt();
        let h = [0.5, 1.0 / s6, 2.0 / s6, 1.0];
        let z = [
            h[0] / 2.0 + h[1] / s6,
            h[0] / s6 + h[1] / 3.0 + h[2] / 3.0,
            h[1] / 3.0 + h[2] / 3.0 + h[3] / s6,
            h[2] / s6 + h[3] / 2.0,
        ];
        let p = forward(&m, &adj, x.view()).unwrap();
        for i in 0..4 {
            let expected = 1.0 / (1.0 + (-z[i]).exp());
            assert!((p[i] - expected).abs() < 1e-15, "node {i}");
        }
    }

    #[test]
    fn loss_closed_forms() {
        let probs = vec![0.5; 4];
        let labels = [(0, 1), (1, 0), (2, 1), (3, 0)];
        assert!((bce_loss(&probs, &labels).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let exact = vec![1.0, 0.0];
        let loss = bce_loss(&exact, &[(0, 1), (1, 0)]).unwrap();
        assert!(loss < 1e-6 && loss.is_finite());
        assert_eq!(bce_loss(&probs, &[]), Err(GnnError::EmptyLabels));
    }

    #[test]
    fn symmetric_stationary_point() {
        // Zero model, balanced labels on identical nodes: p = 0.5 and the
        // gradient cancels exactly.
        let adj = NormAdj::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let x = Array2::from_elem((4, 3), 1.0);
        let g = Propagated::new(adj, x.view()).unwrap();
        let (_, grads) = backward(
            &GnnModel::zeros(3, 4),
            &g,
            &[(0, 1), (1, 0), (2, 1), (3, 0)],
        )
        .unwrap();
        assert!(grads.norm() < 1e-8);
    }

    #[test]
    fn duplicated_labels_keep_mean_gradient() {
        let adj = line4();
        let x = array![[1.0, 0.2], [0.0, -1.0], [0.3, 0.3], [2.0, 0.0]];
        let g = Propagated::new(adj, x.view()).unwrap();
        let m = GnnModel::init(2, 6, 11);
        let labels = [(0, 1), (2, 0), (3, 1)];
        let doubled: Vec<_> = labels.iter().chain(labels.iter()).copied().collect();
        let (l1, g1) = backward(&m, &g, &labels).unwrap();
        let (l2, g2) = backward(&m, &g, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn model_round_trip() {
        let m = GnnModel::init(3, 4, 9);
        assert_eq!(GnnModel::from_bytes(&m.to_bytes()).unwrap(), m);
        let mut z = GnnModel::zeros(3, 4);
        z.set_flat(&m.flat());
        assert_eq!(z.flat(), m.flat());
    }
}
