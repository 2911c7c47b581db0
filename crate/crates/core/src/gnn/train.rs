use super::model::{backward, GnnModel, Grads, Propagated};
use super::GnnError;
use crate::eval::balanced_subsample;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Weight decay applied unless configured otherwise.
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Positive:negative ratio for per-epoch undersampling; `None` uses every
    /// labeled node each epoch.
    pub balance: Option<(usize, usize)>,
    /// L2 penalty on the first-layer weights, added to their gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 100,
            batch: 128,
            seed: 0,
            hidden: 64,
            balance: Some((1, 1)),
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean mini-batch loss per epoch, measured before each step's update.
    pub epoch_losses: Vec<f64>,
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn apply(model: &mut GnnModel, opt: &mut Adam, grads: &Grads, weight_decay: f64) {
    let mut flat = model.flat();
    let mut g = grads.flat();
    // `w1` leads the flat layout.
    let n_w1 = model.w1.len();
    for (gi, wi) in g[..n_w1].iter_mut().zip(&flat[..n_w1]) {
        *gi += weight_decay * wi;
    }
    opt.step(&mut flat, &g);
    model.set_flat(&flat);
}

/// Trains a freshly initialized model on `labels` with full-graph forward
/// passes and labeled-node mini-batches. Deterministic given `cfg.seed`.
pub fn train(
    g: &Propagated,
    labels: &[(usize, u8)],
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainLog), GnnError> {
    let pos = labels.iter().filter(|&&(_, y)| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(GnnError::DegenerateSupervision {
            positives: pos,
            negatives: neg,
        });
    }
    if cfg.batch == 0 {
        return Err(GnnError::Config("batch size must be positive".into()));
    }
    if let Some(&(v, _)) = labels.iter().find(|&&(v, _)| v >= g.node_count()) {
        return Err(GnnError::LabelOutOfRange(v));
    }
    let mut model = GnnModel::init(g.dim(), cfg.hidden, cfg.seed);
    let mut opt = Adam::new(cfg.lr, model.flat().len());
    // Sampling stream is separate from the init stream.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = TrainLog::default();

    for _ in 0..cfg.epochs {
        let mut sample = match cfg.balance {
            Some(ratio) => balanced_subsample(labels, ratio, &mut rng),
            None => labels.to_vec(),
        };
        sample.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in sample.chunks(cfg.batch) {
            let (loss, grads) = backward(&model, g, chunk)?;
            total += loss * chunk.len() as f64;
            apply(&mut model, &mut opt, &grads, cfg.weight_decay);
        }
        log.epoch_losses.push(total / sample.len() as f64);
    }
    if !model.is_finite() {
        return Err(GnnError::NonFinite);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::NormAdj;
    use ndarray::Array2;

    /// 20 nodes, two cliques-free chains, feature sign separates the classes.
    fn toy() -> (Propagated, Vec<(usize, u8)>) {
        let edges: Vec<_> = (0..9)
            .map(|i| (i, i + 1))
            .chain((10..19).map(|i| (i, i + 1)))
            .collect();
        let adj = NormAdj::from_edges(20, &edges).unwrap();
        let x = Array2::from_shape_fn((20, 3), |(i, j)| {
            let sign = if i < 10 { 1.0 } else { -1.0 };
            sign * (1.0 + 0.1 * j as f64) + 0.01 * i as f64
        });
        let labels = (0..20).map(|i| (i, u8::from(i < 10))).collect();
        (Propagated::new(adj, x.view()).unwrap(), labels)
    }

    #[test]
    fn separable_toy_loss_decreases() {
        let (g, labels) = toy();
        let cfg = TrainConfig {
            epochs: 10,
            hidden: 8,
            ..Default::default()
        };
        let (_, log) = train(&g, &labels, &cfg).unwrap();
        for w in log.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", log.epoch_losses);
        }
        assert!(log.epoch_losses[9] < log.epoch_losses[0]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (g, labels) = toy();
        let cfg = TrainConfig {
            epochs: 5,
            hidden: 8,
            batch: 4,
            ..Default::default()
        };
        let (a, _) = train(&g, &labels, &cfg).unwrap();
        let (b, _) = train(&g, &labels, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn zero_lr_keeps_init() {
        let (g, labels) = toy();
        let cfg = TrainConfig {
            epochs: 3,
            hidden: 8,
            lr: 0.0,
            seed: 4,
            ..Default::default()
        };
        let (m, _) = train(&g, &labels, &cfg).unwrap();
        assert_eq!(m, GnnModel::init(3, 8, 4));
    }

    #[test]
    fn single_class_rejected() {
        let (g, labels) = toy();
        let only_pos: Vec<_> = labels.into_iter().filter(|&(_, y)| y == 1).collect();
        let err = train(&g, &only_pos, &TrainConfig::default()).unwrap_err();
        assert_eq!(
            err,
            GnnError::DegenerateSupervision {
                positives: 10,
                negatives: 0
            }
        );
    }
}
