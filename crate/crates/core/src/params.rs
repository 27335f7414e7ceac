use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tape, Tensor, Var};

/// Standard deviation of the initial parameter distribution.
pub const INIT_STD: f64 = 0.01;

pub(crate) fn normal_init<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Parameter groups that can be recorded on a tape as leaves.
pub trait Bind<T: Real> {
    type Bound;

    fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Self::Bound;
}

pub fn bind<T: Real, B: Bind<T>>(tape: &mut Tape<T>, params: &B, requires_grad: bool) -> B::Bound {
    params.bind(tape, requires_grad)
}

macro_rules! impl_bind {
    ($ty:ident) => {
        impl<T: Real> Bind<T> for $ty<Tensor<T>> {
            type Bound = $ty<Var>;

            fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Self::Bound {
                self.map(&mut |_, t| tape.leaf(t.clone(), requires_grad))
            }
        }
    };
}

use crate::fa_block::FaParams;
use crate::model::{HeadParams, ModelParams};
use crate::recurrent::LstmParams;

impl_bind!(FaParams);
impl_bind!(LstmParams);
impl_bind!(HeadParams);
impl_bind!(ModelParams);
