use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scoring::{EmbeddingModel, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd => f.write_str("sgd"),
            OptimizerKind::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            ))),
        }
    }
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Option<Gradients>,
    second: Option<Gradients>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut EmbeddingModel, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (param, g) in model.blocks_mut().into_iter().zip(grads.blocks()) {
                    for (p, g) in param.data_mut().iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self.first.get_or_insert_with(|| Gradients::zeros_like(model));
                let v = self.second.get_or_insert_with(|| Gradients::zeros_like(model));
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let blocks = model
                    .blocks_mut()
                    .into_iter()
                    .zip(grads.blocks())
                    .zip(m.blocks_mut())
                    .zip(v.blocks_mut());
                for (((param, g), m), v) in blocks {
                    for (((p, g), m), v) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationKind;
    use crate::scoring::{init_model, ModelDims, ScorerKind};

    fn model() -> EmbeddingModel {
        init_model(
            ModelDims::new(3, 2, 2, 0, vec![RelationKind::HasFinding]),
            ScorerKind::DistMult,
            1,
        )
        .unwrap()
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut m = model();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        g.ef[0] = 2.0;
        Optimizer::new(OptimizerKind::Sgd, 0.5).step(&mut m, &g);
        assert_eq!(
            m.finding_embeddings().data()[0],
            before.finding_embeddings().data()[0] - 1.0
        );
        assert_eq!(m.finding_embeddings().data()[1], before.finding_embeddings().data()[1]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut m = model();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        g.er[1] = -3.0;
        Optimizer::new(OptimizerKind::adam(), 0.01).step(&mut m, &g);
        let moved = m.relation_embeddings().data()[1] - before.relation_embeddings().data()[1];
        assert!((moved - 0.01).abs() < 1e-9, "{moved}");
    }

    #[test]
    fn zero_rate_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let mut m = model();
            let before = m.clone();
            let mut g = Gradients::zeros_like(&m);
            g.wx.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 2.0);
            let mut opt = Optimizer::new(kind, 0.0);
            opt.step(&mut m, &g);
            opt.step(&mut m, &g);
            assert_eq!(m, before);
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("SGD".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::adam());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
