//! Single-layer LSTM with full peephole matrices on the input, forget and
//! output gates. The output gate looks at the updated cell state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::normal_init;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<P> {
    pub w_i: P,
    pub u_i: P,
    pub v_i: P,
    pub b_i: P,
    pub w_f: P,
    pub u_f: P,
    pub v_f: P,
    pub b_f: P,
    /// candidate path has no peephole term
    pub w_c: P,
    pub u_c: P,
    pub b_c: P,
    pub w_q: P,
    pub u_q: P,
    pub v_q: P,
    pub b_q: P,
}

const NAMES: [&str; 15] = [
    "lstm.w_i", "lstm.u_i", "lstm.v_i", "lstm.b_i", "lstm.w_f", "lstm.u_f", "lstm.v_f", "lstm.b_f", "lstm.w_c",
    "lstm.u_c", "lstm.b_c", "lstm.w_q", "lstm.u_q", "lstm.v_q", "lstm.b_q",
];

impl<P> LstmParams<P> {
    fn fields(&self) -> [&P; 15] {
        [
            &self.w_i, &self.u_i, &self.v_i, &self.b_i, &self.w_f, &self.u_f, &self.v_f, &self.b_f, &self.w_c,
            &self.u_c, &self.b_c, &self.w_q, &self.u_q, &self.v_q, &self.b_q,
        ]
    }

    fn from_fields(f: [P; 15]) -> Self {
        let [w_i, u_i, v_i, b_i, w_f, u_f, v_f, b_f, w_c, u_c, b_c, w_q, u_q, v_q, b_q] = f;
        Self {
            w_i,
            u_i,
            v_i,
            b_i,
            w_f,
            u_f,
            v_f,
            b_f,
            w_c,
            u_c,
            b_c,
            w_q,
            u_q,
            v_q,
            b_q,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a P)) {
        for (name, p) in NAMES.iter().zip(self.fields()) {
            f(name, p);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut P)) {
        let fields = [
            &mut self.w_i,
            &mut self.u_i,
            &mut self.v_i,
            &mut self.b_i,
            &mut self.w_f,
            &mut self.u_f,
            &mut self.v_f,
            &mut self.b_f,
            &mut self.w_c,
            &mut self.u_c,
            &mut self.b_c,
            &mut self.w_q,
            &mut self.u_q,
            &mut self.v_q,
            &mut self.b_q,
        ];
        for (name, p) in NAMES.iter().zip(fields) {
            f(name, p);
        }
    }

    pub fn map<Q>(&self, f: &mut dyn FnMut(&'static str, &P) -> Q) -> LstmParams<Q> {
        let fields = self.fields();
        LstmParams::from_fields(std::array::from_fn(|k| f(NAMES[k], fields[k])))
    }
}

impl<T: Real> LstmParams<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self::from_fields(std::array::from_fn(|k| normal_init(&Self::shape(k, input, hidden), rng)))
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self::from_fields(std::array::from_fn(|k| Tensor::zeros(Self::shape(k, input, hidden))))
    }

    fn shape(k: usize, input: usize, hidden: usize) -> Vec<usize> {
        match NAMES[k].as_bytes()[5] {
            b'w' => vec![input, hidden],
            b'u' | b'v' => vec![hidden, hidden],
            _ => vec![hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }
}

/// Recurrent state carried across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(vec![hidden]),
            c: Tensor::zeros(vec![hidden]),
        }
    }
}

/// State recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn constant<T: Real>(tape: &mut Tape<T>, state: &LstmState<T>) -> Self {
        Self {
            h: tape.constant(state.h.clone()),
            c: tape.constant(state.c.clone()),
        }
    }

    pub fn read<T: Real>(&self, tape: &Tape<T>) -> LstmState<T> {
        LstmState {
            h: tape.value(self.h).clone(),
            c: tape.value(self.c).clone(),
        }
    }
}

/// Output of one step: the new recurrent state and the (possibly dropped
/// out) hidden vector handed to the classifier.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub state: StateVars,
    pub output: Var,
}

/// Dropout settings for the hidden output.
pub struct Dropout<'a, R: ?Sized> {
    pub rate: f64,
    pub training: bool,
    pub rng: &'a mut R,
}

fn gate<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    peep: Option<(Var, Var)>,
    w: Var,
    u: Var,
    b: Var,
) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let mut pre = tape.add(xw, hu)?;
    if let Some((c, v)) = peep {
        let cv = tape.matmul(c, v)?;
        pre = tape.add(pre, cv)?;
    }
    tape.add(pre, b)
}

pub fn lstm_step<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    state: StateVars,
    params: &LstmParams<Var>,
    dropout: &mut Dropout<'_, R>,
) -> Result<StepOutput> {
    let p = params;
    let (h, c) = (state.h, state.c);
    let i_pre = gate(tape, x, h, Some((c, p.v_i)), p.w_i, p.u_i, p.b_i)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate(tape, x, h, Some((c, p.v_f)), p.w_f, p.u_f, p.b_f)?;
    let f = tape.sigmoid(f_pre)?;
    let p_pre = gate(tape, x, h, None, p.w_c, p.u_c, p.b_c)?;
    let cand = tape.tanh(p_pre)?;

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c_new = tape.add(keep, write)?;

    let q_pre = gate(tape, x, h, Some((c_new, p.v_q)), p.w_q, p.u_q, p.b_q)?;
    let q = tape.sigmoid(q_pre)?;
    let squashed = tape.tanh(c_new)?;
    let h_new = tape.mul(q, squashed)?;

    let output = tape.dropout(h_new, dropout.rate, dropout.training, dropout.rng)?;
    Ok(StepOutput {
        state: StateVars { h: h_new, c: c_new },
        output,
    })
}

/// Runs the cell over `inputs: [S × input]` from a zero state and returns
/// every hidden output stacked as `[S × hidden]`.
pub fn unroll<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    inputs: Var,
    params: &LstmParams<Var>,
    dropout: &mut Dropout<'_, R>,
) -> Result<Var> {
    let shape = tape.value(inputs).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::dim("unroll", &shape, &[]));
    }
    if shape[0] == 0 {
        return Err(Error::EmptyReduction("unroll needs at least one frame"));
    }
    let hidden = tape.value(params.b_i).len();
    let zero = LstmState::zeros(hidden);
    let mut state = StateVars::constant(tape, &zero);
    let mut outputs = Vec::with_capacity(shape[0]);
    for t in 0..shape[0] {
        let x = tape.row(inputs, t)?;
        let step = lstm_step(tape, x, state, params, dropout)?;
        state = step.state;
        outputs.push(step.output);
    }
    tape.stack_rows(&outputs)
}
