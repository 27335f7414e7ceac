//! Feature aggregation block: each object feature in a frame is refined by
//! an attention-weighted sum over all objects, with the attention logits
//! conditioned on the previous recurrent hidden state.
//!
//! Row-vector convention throughout: an affine layer is `y = x·W + b`, so
//! `W_u` is stored `hidden × d` and maps the hidden state to a `d`-vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::normal_init;
use crate::tensor::{Activation, Real, Tape, Tensor, Var};

/// Which form of the block to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FaVariant {
    /// tanh transforms with query/key layers, dot-product logits, softmax.
    #[default]
    Final,
    /// Query/key layers removed: `A = tanh(u + o)`.
    NoProjection,
    /// Softmax replaced by scaling the logits with `1/N`.
    MeanScale,
    /// tanh replaced by ReLU.
    Relu,
    /// Logits from a relation head `ReLU(W_r [A_i; B_j] + b_r)`.
    RelationNet,
}

impl FaVariant {
    pub const ALL: [FaVariant; 5] = [
        FaVariant::Final,
        FaVariant::NoProjection,
        FaVariant::MeanScale,
        FaVariant::Relu,
        FaVariant::RelationNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Final => "final",
            Self::NoProjection => "fa1",
            Self::MeanScale => "fa2",
            Self::Relu => "fa3",
            Self::RelationNet => "fa4",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Final => 0,
            Self::NoProjection => 1,
            Self::MeanScale => 2,
            Self::Relu => 3,
            Self::RelationNet => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    fn activation(self) -> Activation {
        match self {
            Self::Relu => Activation::Relu,
            _ => Activation::Tanh,
        }
    }

    fn has_projections(self) -> bool {
        self != Self::NoProjection
    }
}

impl fmt::Display for FaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "final" | "fa-final" => Ok(Self::Final),
            "fa1" | "fa-1" => Ok(Self::NoProjection),
            "fa2" | "fa-2" => Ok(Self::MeanScale),
            "fa3" | "fa-3" => Ok(Self::Relu),
            "fa4" | "fa-4" => Ok(Self::RelationNet),
            other => Err(Error::Parameter(format!(
                "unknown variant `{other}` (expected final, fa1, fa2, fa3 or fa4)"
            ))),
        }
    }
}

/// Learnable values of the block. `P` is [`Tensor`] for stored parameters
/// and [`Var`] once bound to a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct FaParams<P> {
    /// `d × d`, absent for [`FaVariant::NoProjection`]
    pub w_theta: Option<P>,
    pub b_theta: Option<P>,
    pub w_phi: Option<P>,
    pub b_phi: Option<P>,
    /// `hidden × d`, no bias
    pub w_u: P,
    pub w_g: P,
    pub b_g: P,
    /// `2d × 1` relation head, only for [`FaVariant::RelationNet`]
    pub w_r: Option<P>,
    pub b_r: Option<P>,
}

impl<T: Real> FaParams<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(d: usize, hidden: usize, variant: FaVariant, rng: &mut R) -> Self {
        let mut n = |shape: &[usize]| normal_init(shape, rng);
        let (w_theta, b_theta, w_phi, b_phi) = if variant.has_projections() {
            (Some(n(&[d, d])), Some(n(&[d])), Some(n(&[d, d])), Some(n(&[d])))
        } else {
            (None, None, None, None)
        };
        let w_u = n(&[hidden, d]);
        let w_g = n(&[d, d]);
        let b_g = n(&[d]);
        let (w_r, b_r) = if variant == FaVariant::RelationNet {
            (Some(n(&[2 * d, 1])), Some(n(&[1])))
        } else {
            (None, None)
        };
        Self {
            w_theta,
            b_theta,
            w_phi,
            b_phi,
            w_u,
            w_g,
            b_g,
            w_r,
            b_r,
        }
    }

    /// Identity-like block: projections are `I`, everything else zero.
    pub fn zeros(d: usize, hidden: usize, variant: FaVariant) -> Self {
        let z = |shape: &[usize]| Tensor::zeros(shape.to_vec());
        let proj = variant.has_projections();
        let rel = variant == FaVariant::RelationNet;
        Self {
            w_theta: proj.then(|| z(&[d, d])),
            b_theta: proj.then(|| z(&[d])),
            w_phi: proj.then(|| z(&[d, d])),
            b_phi: proj.then(|| z(&[d])),
            w_u: z(&[hidden, d]),
            w_g: z(&[d, d]),
            b_g: z(&[d]),
            w_r: rel.then(|| z(&[2 * d, 1])),
            b_r: rel.then(|| z(&[1])),
        }
    }
}

impl<P> FaParams<P> {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a P)) {
        let opt = |name, p: &'a Option<P>, f: &mut dyn FnMut(&'static str, &'a P)| {
            if let Some(p) = p {
                f(name, p)
            }
        };
        opt("fa.w_theta", &self.w_theta, f);
        opt("fa.b_theta", &self.b_theta, f);
        opt("fa.w_phi", &self.w_phi, f);
        opt("fa.b_phi", &self.b_phi, f);
        f("fa.w_u", &self.w_u);
        f("fa.w_g", &self.w_g);
        f("fa.b_g", &self.b_g);
        opt("fa.w_r", &self.w_r, f);
        opt("fa.b_r", &self.b_r, f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut P)) {
        fn opt<P>(name: &'static str, p: &mut Option<P>, f: &mut dyn FnMut(&'static str, &mut P)) {
            if let Some(p) = p {
                f(name, p)
            }
        }
        opt("fa.w_theta", &mut self.w_theta, f);
        opt("fa.b_theta", &mut self.b_theta, f);
        opt("fa.w_phi", &mut self.w_phi, f);
        opt("fa.b_phi", &mut self.b_phi, f);
        f("fa.w_u", &mut self.w_u);
        f("fa.w_g", &mut self.w_g);
        f("fa.b_g", &mut self.b_g);
        opt("fa.w_r", &mut self.w_r, f);
        opt("fa.b_r", &mut self.b_r, f);
    }

    pub fn map<Q>(&self, f: &mut dyn FnMut(&'static str, &P) -> Q) -> FaParams<Q> {
        let mut opt = |name, p: &Option<P>| p.as_ref().map(|p| f(name, p));
        let w_theta = opt("fa.w_theta", &self.w_theta);
        let b_theta = opt("fa.b_theta", &self.b_theta);
        let w_phi = opt("fa.w_phi", &self.w_phi);
        let b_phi = opt("fa.b_phi", &self.b_phi);
        let w_u = f("fa.w_u", &self.w_u);
        let w_g = f("fa.w_g", &self.w_g);
        let b_g = f("fa.b_g", &self.b_g);
        let mut opt = |name, p: &Option<P>| p.as_ref().map(|p| f(name, p));
        let w_r = opt("fa.w_r", &self.w_r);
        let b_r = opt("fa.b_r", &self.b_r);
        FaParams {
            w_theta,
            b_theta,
            w_phi,
            b_phi,
            w_u,
            w_g,
            b_g,
            w_r,
            b_r,
        }
    }
}

fn affine<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

/// Query transform `o·W_θ + b_θ`; the identity when the layer is absent.
pub fn project_query<T: Real>(tape: &mut Tape<T>, objects: Var, params: &FaParams<Var>) -> Result<Var> {
    match (params.w_theta, params.b_theta) {
        (Some(w), Some(b)) => affine(tape, objects, w, b),
        _ => Ok(objects),
    }
}

/// Key transform `o·W_φ + b_φ`; the identity when the layer is absent.
pub fn project_key<T: Real>(tape: &mut Tape<T>, objects: Var, params: &FaParams<Var>) -> Result<Var> {
    match (params.w_phi, params.b_phi) {
        (Some(w), Some(b)) => affine(tape, objects, w, b),
        _ => Ok(objects),
    }
}

/// `h_{t-1}·W_u`, a `d`-vector shared by every object row.
pub fn hidden_coupling<T: Real>(tape: &mut Tape<T>, h_prev: Var, params: &FaParams<Var>) -> Result<Var> {
    tape.matmul(h_prev, params.w_u)
}

/// Attention matrix `α` (`N × N`) over the objects of one frame.
pub fn appearance_compare<T: Real>(
    tape: &mut Tape<T>,
    objects: Var,
    h_prev: Var,
    params: &FaParams<Var>,
    variant: FaVariant,
) -> Result<Var> {
    let n = tape.value(objects).shape()[0];
    let act = variant.activation();
    let u = hidden_coupling(tape, h_prev, params)?;
    let query = project_query(tape, objects, params)?;
    let key = project_key(tape, objects, params)?;
    let a_pre = tape.add_row_bias(query, u)?;
    let a = tape.activation(act, a_pre)?;
    let b_pre = tape.add_row_bias(key, u)?;
    let b = tape.activation(act, b_pre)?;

    let logits = match variant {
        FaVariant::RelationNet => {
            let (w_r, b_r) = params
                .w_r
                .zip(params.b_r)
                .ok_or_else(|| Error::Contract("relation variant needs w_r and b_r".into()))?;
            let d = tape.value(a).shape()[1];
            let w_a = tape.slice_rows(w_r, 0, d)?;
            let w_b = tape.slice_rows(w_r, d, d)?;
            let sa = tape.matmul(a, w_a)?;
            let sb = tape.matmul(b, w_b)?;
            let pre = tape.pairwise_sum(sa, sb, b_r)?;
            tape.relu(pre)?
        }
        _ => tape.matmul_nt(a, b)?,
    };

    match variant {
        FaVariant::MeanScale => Ok(tape.scale(logits, T::one() / T::of(n as f64))),
        _ => tape.softmax_rows(logits),
    }
}

/// `z = o + α·(o·W_g + b_g)`.
pub fn feature_refine<T: Real>(tape: &mut Tape<T>, objects: Var, alpha: Var, params: &FaParams<Var>) -> Result<Var> {
    let g = affine(tape, objects, params.w_g, params.b_g)?;
    let context = tape.matmul(alpha, g)?;
    tape.add(objects, context)
}

/// Frame descriptor: mean of the refined object rows.
pub fn aggregate<T: Real>(tape: &mut Tape<T>, refined: Var) -> Result<Var> {
    tape.mean_rows(refined)
}

#[derive(Debug, Clone, Copy)]
pub struct FaOutput {
    /// frame descriptor `m_t`, shape `[d]`
    pub descriptor: Var,
    /// attention `α_t`, shape `[N × N]`
    pub alpha: Var,
}

/// Full block for one frame. `objects` holds only the valid (unpadded) rows.
pub fn fa_forward<T: Real>(
    tape: &mut Tape<T>,
    objects: Var,
    h_prev: Var,
    params: &FaParams<Var>,
    variant: FaVariant,
) -> Result<FaOutput> {
    let shape = tape.value(objects).shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::EmptyReduction("fa_forward needs at least one object"));
    }
    let alpha = appearance_compare(tape, objects, h_prev, params, variant)?;
    let refined = feature_refine(tape, objects, alpha, params)?;
    let descriptor = aggregate(tape, refined)?;
    Ok(FaOutput { descriptor, alpha })
}
