//! Every differentiable tape operation wrapped as a scalar function.

use anticipate::tensor::{Activation, Real, ScalarFunction, Tape, Tensor, Var};
use anticipate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum Case {
    MatMul,
    MatMulNt,
    Add,
    Sub,
    Mul,
    AddRowBias,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Concat,
    MeanRows,
    Scale,
    SliceRows,
    Row,
    PairwiseSum,
    StackRows,
    Column,
    LogClamped,
}

pub const CASES: [Case; 19] = [
    Case::MatMul,
    Case::MatMulNt,
    Case::Add,
    Case::Sub,
    Case::Mul,
    Case::AddRowBias,
    Case::Sigmoid,
    Case::Tanh,
    Case::Relu,
    Case::Softmax,
    Case::Concat,
    Case::MeanRows,
    Case::Scale,
    Case::SliceRows,
    Case::Row,
    Case::PairwiseSum,
    Case::StackRows,
    Case::Column,
    Case::LogClamped,
];

impl Case {
    fn input_shapes(self) -> Vec<Vec<usize>> {
        match self {
            Case::MatMul => vec![vec![3, 4], vec![4, 2]],
            Case::MatMulNt => vec![vec![3, 4], vec![2, 4]],
            Case::Add | Case::Sub | Case::Mul => vec![vec![2, 3], vec![2, 3]],
            Case::AddRowBias => vec![vec![3, 4], vec![4]],
            Case::Sigmoid | Case::Tanh | Case::Relu | Case::Softmax | Case::Scale => vec![vec![3, 3]],
            Case::Concat => vec![vec![2, 3], vec![2, 2]],
            Case::MeanRows | Case::SliceRows | Case::Row | Case::Column => vec![vec![4, 3]],
            Case::PairwiseSum => vec![vec![3, 1], vec![2, 1], vec![1]],
            Case::StackRows => vec![vec![3], vec![3]],
            Case::LogClamped => vec![vec![2, 3]],
        }
    }

    pub fn sample(self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f32>> {
        self.input_shapes()
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| match self {
                        // keep away from the kink and the clamp
                        Case::Relu => {
                            let v: f32 = rng.random_range(0.1..1.5);
                            if rng.random::<bool>() {
                                v
                            } else {
                                -v
                            }
                        }
                        Case::LogClamped => rng.random_range(0.2..2.0),
                        _ => rng.random_range(-1.5..1.5),
                    })
                    .collect();
                Tensor::new(shape, data).unwrap()
            })
            .collect()
    }
}

/// Weighted sum so that every output coordinate carries a distinct weight.
fn weighted_sum<T: Real>(tape: &mut Tape<T>, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n = tape.value(y).len();
    let w = Tensor::new(shape, (0..n).map(|i| T::of(((i + 1) as f64).sin())).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

impl ScalarFunction for Case {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let y = match self {
            Case::MatMul => tape.matmul(x[0], x[1])?,
            Case::MatMulNt => tape.matmul_nt(x[0], x[1])?,
            Case::Add => tape.add(x[0], x[1])?,
            Case::Sub => tape.sub(x[0], x[1])?,
            Case::Mul => tape.mul(x[0], x[1])?,
            Case::AddRowBias => tape.add_row_bias(x[0], x[1])?,
            Case::Sigmoid => tape.activation(Activation::Sigmoid, x[0])?,
            Case::Tanh => tape.activation(Activation::Tanh, x[0])?,
            Case::Relu => tape.activation(Activation::Relu, x[0])?,
            Case::Softmax => tape.softmax_rows(x[0])?,
            Case::Concat => tape.concat(x[0], x[1])?,
            Case::MeanRows => tape.mean_rows(x[0])?,
            Case::Scale => tape.scale(x[0], T::of(-0.7)),
            Case::SliceRows => tape.slice_rows(x[0], 1, 2)?,
            Case::Row => tape.row(x[0], 2)?,
            Case::PairwiseSum => tape.pairwise_sum(x[0], x[1], x[2])?,
            Case::StackRows => tape.stack_rows(&[x[0], x[1], x[0]])?,
            Case::Column => tape.column(x[0], 1)?,
            Case::LogClamped => tape.log_clamped(x[0], T::of(1e-12)),
        };
        weighted_sum(tape, y)
    }
}
