//! LSTM cells and the contextual LSTM block.
//!
//! Timesteps are utterances of one conversation. States start at zero for
//! every conversation and the recurrence only runs forward, so the
//! prediction for utterance `i` never sees utterances after `i`.

use crate::error::{Error, Result};
use crate::nn::{Ctx, Dense};
use crate::params::{Initializer, ParamId, ParameterStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Weights of one LSTM layer, stored for row-vector inputs: `w_input` is
/// `d_in x 4h`, `w_hidden` is `h x 4h`, `bias` is `1 x 4h`. Gate blocks
/// along the `4h` axis are input, forget, cell candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl LstmCellParams {
    pub fn build(store: &mut ParameterStore, init: &mut Initializer, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        let w_input = store.insert(format!("{name}.w_input"), init.xavier(d_in, 4 * hidden))?;
        let w_hidden = store.insert(format!("{name}.w_hidden"), init.xavier(hidden, 4 * hidden))?;
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let bias = store.insert(format!("{name}.bias"), b)?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            d_in,
            hidden,
        })
    }

    pub fn num_params(d_in: usize, hidden: usize) -> usize {
        4 * hidden * (d_in + hidden + 1)
    }
}

/// One recurrence step; returns `(h, c)`.
pub fn lstm_step(ctx: &mut Ctx<'_>, x: Var, h_prev: Var, c_prev: Var, params: &LstmCellParams) -> Result<(Var, Var)> {
    let h = params.hidden;
    if ctx.tape.value(x).cols() != params.d_in {
        return Err(Error::Shape {
            op: "lstm_step",
            left: ctx.tape.shape(x).to_vec(),
            right: vec![params.d_in, 4 * h],
        });
    }
    let wi = ctx.param(params.w_input);
    let wh = ctx.param(params.w_hidden);
    let b = ctx.param(params.bias);
    let zx = ctx.tape.matmul(x, wi)?;
    let zh = ctx.tape.matmul(h_prev, wh)?;
    let z = ctx.tape.sum(&[zx, zh, b])?;

    let i = ctx.tape.slice_cols(z, 0, h)?;
    let i = ctx.tape.sigmoid(i);
    let f = ctx.tape.slice_cols(z, h, h)?;
    let f = ctx.tape.sigmoid(f);
    let g = ctx.tape.slice_cols(z, 2 * h, h)?;
    let g = ctx.tape.tanh(g);
    let o = ctx.tape.slice_cols(z, 3 * h, h)?;
    let o = ctx.tape.sigmoid(o);

    let keep = ctx.tape.mul(f, c_prev)?;
    let write = ctx.tape.mul(i, g)?;
    let c = ctx.tape.add(keep, write)?;
    let tc = ctx.tape.tanh(c);
    let h_new = ctx.tape.mul(o, tc)?;
    Ok((h_new, c))
}

/// Stacked LSTM layers over a conversation followed by a per-utterance dense
/// classifier.
#[derive(Clone, Debug)]
pub struct ClstmBlock {
    pub layers: Vec<LstmCellParams>,
    pub head: Dense,
}

impl ClstmBlock {
    pub fn build(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        d_in: usize,
        hidden: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::config(format!("{prefix}: hidden sizes must be non-empty and positive")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = d_in;
        for (k, &h) in hidden.iter().enumerate() {
            layers.push(LstmCellParams::build(store, init, &format!("{prefix}.lstm{k}"), width, h)?);
            width = h;
        }
        let head = Dense::build(store, init, &format!("{prefix}.head"), width, classes, true)?;
        Ok(Self { layers, head })
    }

    pub fn num_params(d_in: usize, hidden: &[usize], classes: usize) -> usize {
        let mut total = 0;
        let mut width = d_in;
        for &h in hidden {
            total += LstmCellParams::num_params(width, h);
            width = h;
        }
        total + Dense::num_params(width, classes, true)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn classes(&self) -> usize {
        self.head.d_out
    }

    /// Pre-softmax class scores, one `1 x C` row per utterance.
    pub fn logits(&self, ctx: &mut Ctx<'_>, sequence: &[Var]) -> Result<Vec<Var>> {
        if sequence.is_empty() {
            return Err(Error::Data("conversation has no utterances".into()));
        }
        let mut inputs = sequence.to_vec();
        for layer in &self.layers {
            let mut h = ctx.tape.constant(Tensor::zeros(&[1, layer.hidden]));
            let mut c = ctx.tape.constant(Tensor::zeros(&[1, layer.hidden]));
            let mut outputs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                (h, c) = lstm_step(ctx, x, h, c, layer)?;
                outputs.push(ctx.maybe_dropout(h)?);
            }
            inputs = outputs;
        }
        inputs.into_iter().map(|h| self.head.forward(ctx, h)).collect()
    }

    /// Per-utterance class distributions.
    pub fn clstm_forward(&self, ctx: &mut Ctx<'_>, sequence: &[Var]) -> Result<Vec<Var>> {
        let logits = self.logits(ctx, sequence)?;
        logits.into_iter().map(|z| ctx.tape.softmax(z, 1.0)).collect()
    }
}
