//! The attribute-only MLP view and the structure-aware GCN view.
//!
//! Both encoders have two layers and end at the same width, so their outputs
//! can be compared row against row by cosine similarity.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{PspError, Result};
use crate::optim::Param;
use crate::tensor::{CsrMatrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// `step` selects the dropout mask stream; masks are a pure function of
    /// `(seed, step)`.
    Train { dropout: f64, seed: u64, step: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    fn glorot(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::from_vec(fan_in, fan_out, data).unwrap()),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub mlp: Vec<Linear>,
    pub gnn: Vec<Linear>,
    pub hidden_dim: usize,
    pub frozen: bool,
}

/// Tape handles for one encoder pass.
#[derive(Debug, Clone)]
pub struct BoundEncoders {
    mlp: Vec<(Var, Var)>,
    gnn: Vec<(Var, Var)>,
}

/// Normalized propagation operator for the GCN view.
#[derive(Debug, Clone)]
pub enum Propagation {
    Fixed(Arc<CsrMatrix>),
    /// Values live on the tape so gradients reach them.
    Learned { pattern: Arc<CsrMatrix>, values: Var },
}

impl Propagation {
    pub fn rows(&self) -> usize {
        match self {
            Propagation::Fixed(m) => m.rows(),
            Propagation::Learned { pattern, .. } => pattern.rows(),
        }
    }

    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Propagation::Fixed(m) => tape.spmm(Arc::clone(m), x),
            Propagation::Learned { pattern, values } => tape.spmm_values(Arc::clone(pattern), *values, x),
        }
    }
}

impl EncoderParams {
    pub fn init(in_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = vec![
            Linear::glorot("mlp.0", in_dim, hidden_dim, &mut rng),
            Linear::glorot("mlp.1", hidden_dim, hidden_dim, &mut rng),
        ];
        let gnn = vec![
            Linear::glorot("gnn.0", in_dim, hidden_dim, &mut rng),
            Linear::glorot("gnn.1", hidden_dim, hidden_dim, &mut rng),
        ];
        EncoderParams {
            mlp,
            gnn,
            hidden_dim,
            frozen: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp[0].in_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.mlp.iter().chain(&self.gnn)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp
            .iter_mut()
            .chain(self.gnn.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Places the parameters on `tape`. Frozen encoders bind as constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoders {
        self.bind_with(tape, !self.frozen)
    }

    fn bind_with(&self, tape: &mut Tape, requires_grad: bool) -> BoundEncoders {
        let mut bind = |layers: &[Linear]| -> Vec<(Var, Var)> {
            layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.value.clone(), requires_grad),
                        tape.leaf(l.bias.value.clone(), requires_grad),
                    )
                })
                .collect()
        };
        let mlp = bind(&self.mlp);
        let gnn = bind(&self.gnn);
        BoundEncoders { mlp, gnn }
    }

    /// Copies leaf gradients from `tape` into the parameters' grad slots.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundEncoders) {
        if self.frozen {
            return;
        }
        let pairs = self.mlp.iter_mut().zip(&bound.mlp).chain(self.gnn.iter_mut().zip(&bound.gnn));
        for (layer, &(w, b)) in pairs {
            if let Some(g) = tape.grad(w) {
                layer.weight.accumulate(g);
            }
            if let Some(g) = tape.grad(b) {
                layer.bias.accumulate(g);
            }
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for l in self.layers() {
            for v in l.weight.value.data().iter().chain(l.bias.value.data()) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Eval-mode MLP embeddings without keeping a tape.
    pub fn embed_mlp(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_with(&mut tape, false);
        let xv = tape.constant(x.clone());
        let z = mlp_forward(&mut tape, xv, &bound, Mode::Eval)?;
        Ok(tape.value(z).clone())
    }

    /// Eval-mode GCN embeddings without keeping a tape.
    pub fn embed_gnn(&self, x: &Tensor, a_norm: &Arc<CsrMatrix>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_with(&mut tape, false);
        let xv = tape.constant(x.clone());
        let z = gnn_forward(&mut tape, xv, &Propagation::Fixed(Arc::clone(a_norm)), &bound, Mode::Eval)?;
        Ok(tape.value(z).clone())
    }
}

fn dropout(tape: &mut Tape, x: Var, mode: Mode, stream: u64) -> Result<Var> {
    match mode {
        Mode::Eval => Ok(x),
        Mode::Train { dropout, seed, step } => tape.dropout(x, dropout, seed, step * 2 + stream, true),
    }
}

fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// `Z¹ = relu(x·W₁ + b₁)·W₂ + b₂`, dropout after the activation in training.
pub fn mlp_forward(tape: &mut Tape, x: Var, bound: &BoundEncoders, mode: Mode) -> Result<Var> {
    let h = affine(tape, x, bound.mlp[0])?;
    let h = tape.relu(h);
    let h = dropout(tape, h, mode, 0)?;
    affine(tape, h, bound.mlp[1])
}

/// Two GCN layers: `H₁ = relu(Â·x·W₁ + b₁)`, output `Â·H₁·W₂ + b₂`.
pub fn gnn_forward(tape: &mut Tape, x: Var, prop: &Propagation, bound: &BoundEncoders, mode: Mode) -> Result<Var> {
    if prop.rows() != tape.shape(x).0 {
        return Err(PspError::dim("gnn_forward", tape.shape(x), (prop.rows(), prop.rows())));
    }
    let xw = tape.matmul(x, bound.gnn[0].0)?;
    gnn_forward_projected(tape, xw, prop, bound, mode)
}

/// [`gnn_forward`] starting from the already projected `x·W₁`. Lets callers
/// with frozen weights and fixed inputs compute the projection once.
pub fn gnn_forward_projected(
    tape: &mut Tape,
    xw: Var,
    prop: &Propagation,
    bound: &BoundEncoders,
    mode: Mode,
) -> Result<Var> {
    let h = prop.apply(tape, xw)?;
    let h = tape.add_row(h, bound.gnn[0].1)?;
    let h = tape.relu(h);
    let h = dropout(tape, h, mode, 1)?;
    let hw = tape.matmul(h, bound.gnn[1].0)?;
    let out = prop.apply(tape, hw)?;
    tape.add_row(out, bound.gnn[1].1)
}

/// Handle of the first GCN weight, for callers of [`gnn_forward_projected`].
pub fn gnn_first_weight(bound: &BoundEncoders) -> Var {
    bound.gnn[0].0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_csr, gcn_normalize};

    fn zeroed(in_dim: usize, d: usize) -> EncoderParams {
        let mut p = EncoderParams::init(in_dim, d, 0);
        for l in p.mlp.iter_mut().chain(p.gnn.iter_mut()) {
            l.weight.value = Tensor::zeros(l.in_dim(), l.out_dim());
        }
        p
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = zeroed(3, 4);
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.0, 5.0]]);
        assert!(p.embed_mlp(&x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_rows_identical_output() {
        let p = EncoderParams::init(3, 4, 7);
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let z = p.embed_mlp(&x).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn gnn_on_two_node_path_averages() {
        let p = EncoderParams::init(2, 4, 3);
        let a = Arc::new(gcn_normalize(&build_csr(2, &[(0, 1)]).unwrap()).unwrap());
        let x = Tensor::from_rows(&[&[1.0, -2.0], &[4.0, 0.5]]);
        let z = p.embed_gnn(&x, &a).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn gnn_without_edges_is_rowwise() {
        let p = EncoderParams::init(2, 4, 3);
        let a = Arc::new(gcn_normalize(&build_csr(3, &[]).unwrap()).unwrap());
        let x = Tensor::from_rows(&[&[1.0, -2.0], &[4.0, 0.5], &[1.0, -2.0]]);
        let z = p.embed_gnn(&x, &a).unwrap();
        assert_eq!(z.row(0), z.row(2));
        let single = p.embed_gnn(&x.select_rows(&[1]), &Arc::new(CsrMatrix::identity(1))).unwrap();
        assert_eq!(single.row(0), z.row(1));
    }

    #[test]
    fn gnn_dimension_mismatch() {
        let p = EncoderParams::init(2, 4, 3);
        let a = Arc::new(CsrMatrix::identity(3));
        assert!(p.embed_gnn(&Tensor::zeros(2, 2), &a).is_err());
        assert!(p.embed_mlp(&Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn frozen_bind_yields_no_grads() {
        let mut p = EncoderParams::init(2, 3, 1);
        p.frozen = true;
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::filled(2, 2, 1.0));
        let z = mlp_forward(&mut tape, x, &bound, Mode::Eval).unwrap();
        let l = tape.sum(z);
        tape.backward(l).unwrap();
        let before = p.clone();
        p.collect_grads(&tape, &bound);
        assert_eq!(p, before);
        assert!(p.params_mut().iter().all(|q| q.grad.is_none()));
    }
}
