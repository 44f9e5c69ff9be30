//! Peephole LSTM and the bidirectional sequence encoder.
//!
//! Gates are packed `[i, f, g, o]` along the columns of the input and
//! recurrent weights. Peepholes are element-wise: `c_{t-1}` feeds the input,
//! forget and candidate gates and `c_t` feeds the output gate.

use std::sync::Arc;

use rand::Rng;

use crate::numeric::{glorot_uniform, Bound, NumericError, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub peep_i: ParamId,
    pub peep_f: ParamId,
    pub peep_c: ParamId,
    pub peep_o: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars<'t> {
    pub hidden: usize,
    pub w_x: Var<'t>,
    pub w_h: Var<'t>,
    pub peep_i: Var<'t>,
    pub peep_f: Var<'t>,
    pub peep_c: Var<'t>,
    pub peep_o: Var<'t>,
    pub bias: Var<'t>,
}

impl LstmParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NumericError> {
        let h = hidden;
        let mut bias = Tensor::zeros(1, 4 * h);
        for v in &mut bias.data_mut()[h..2 * h] {
            *v = 1.0;
        }
        let mut peep = |name: &str, rng: &mut dyn rand::RngCore| {
            let data = (0..h).map(|_| rng.gen_range(-0.1..0.1)).collect();
            store.add(format!("{prefix}.{name}"), Tensor::new(1, h, data).expect("h > 0"), true)
        };
        let peep_i = peep("peep_i", rng)?;
        let peep_f = peep("peep_f", rng)?;
        let peep_c = peep("peep_c", rng)?;
        let peep_o = peep("peep_o", rng)?;
        Ok(Self {
            input,
            hidden,
            w_x: store.add(format!("{prefix}.w_x"), glorot_uniform(input, 4 * h, rng), true)?,
            w_h: store.add(format!("{prefix}.w_h"), glorot_uniform(h, 4 * h, rng), true)?,
            peep_i,
            peep_f,
            peep_c,
            peep_o,
            bias: store.add(format!("{prefix}.bias"), bias, true)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> LstmVars<'t> {
        LstmVars {
            hidden: self.hidden,
            w_x: b[self.w_x],
            w_h: b[self.w_h],
            peep_i: b[self.peep_i],
            peep_f: b[self.peep_f],
            peep_c: b[self.peep_c],
            peep_o: b[self.peep_o],
            bias: b[self.bias],
        }
    }
}

/// One step given the already-projected input `x_t · W_x` (`1 × 4h`).
fn step<'t>(
    xw: Var<'t>,
    h_prev: Var<'t>,
    c_prev: Var<'t>,
    p: &LstmVars<'t>,
) -> Result<(Var<'t>, Var<'t>), NumericError> {
    let h = p.hidden;
    let z = xw.add(h_prev.matmul(p.w_h)?)?.add(p.bias)?;
    let i = z.slice_cols(0, h)?.add(c_prev.mul(p.peep_i)?)?.sigmoid()?;
    let f = z.slice_cols(h, 2 * h)?.add(c_prev.mul(p.peep_f)?)?.sigmoid()?;
    let g = z.slice_cols(2 * h, 3 * h)?.add(c_prev.mul(p.peep_c)?)?.tanh()?;
    let c = i.mul(g)?.add(f.mul(c_prev)?)?;
    let o = z.slice_cols(3 * h, 4 * h)?.add(c.mul(p.peep_o)?)?.sigmoid()?;
    let h_t = o.mul(c.tanh()?)?;
    Ok((h_t, c))
}

/// `(h_t, c_t)` from `x_t` (`1 × d`) and the previous state.
pub fn lstm_cell<'t>(
    x: Var<'t>,
    h_prev: Var<'t>,
    c_prev: Var<'t>,
    p: &LstmVars<'t>,
) -> Result<(Var<'t>, Var<'t>), NumericError> {
    let [xr, _] = x.shape();
    if xr != 1 || h_prev.shape() != [1, p.hidden] || c_prev.shape() != [1, p.hidden] {
        return Err(NumericError::Shape {
            op: "lstm_cell",
            lhs: x.shape(),
            rhs: h_prev.shape(),
        });
    }
    step(x.matmul(p.w_x)?, h_prev, c_prev, p)
}

/// Runs the cell left to right over the rows of `x`; returns the stacked
/// hidden states (`l × h`).
pub fn lstm_sequence<'t>(x: Var<'t>, p: &LstmVars<'t>) -> Result<Var<'t>, NumericError> {
    let [l, _] = x.shape();
    let tape = x.tape();
    let xw = x.matmul(p.w_x)?;
    let mut h = tape.constant(Tensor::zeros(1, p.hidden));
    let mut c = tape.constant(Tensor::zeros(1, p.hidden));
    let mut states = Vec::with_capacity(l);
    for t in 0..l {
        (h, c) = step(xw.slice_rows(t, t + 1)?, h, c, p)?;
        states.push(h);
    }
    tape.concat_rows(&states)
}

fn reverse_rows(x: Var<'_>) -> Result<Var<'_>, NumericError> {
    let l = x.shape()[0];
    if l == 1 {
        return Ok(x);
    }
    x.gather_rows(Arc::from((0..l).rev().collect::<Vec<_>>()))
}

/// Row `t` is `[forward h_t ‖ backward h_t]`, where the backward pass reads
/// the sequence right to left. Output is `l × 2h`.
pub fn bilstm_encode<'t>(x: Var<'t>, fwd: &LstmVars<'t>, bwd: &LstmVars<'t>) -> Result<Var<'t>, NumericError> {
    if x.shape()[0] == 0 {
        return Err(NumericError::EmptyInput { op: "bilstm_encode" });
    }
    let forward = lstm_sequence(x, fwd)?;
    let backward = reverse_rows(lstm_sequence(reverse_rows(x)?, bwd)?)?;
    x.tape().concat_cols(&[forward, backward])
}
