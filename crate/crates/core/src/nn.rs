//! Dense layers and the per-forward context shared by every module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Initializer, ParamId, ParameterStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Linear,
    Tanh,
}

/// Inverted dropout applied to recurrent layer outputs while training.
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }
}

/// Everything a forward pass needs: the tape being recorded, the parameter
/// values, and (only while training) a dropout source.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParameterStore,
    pub dropout: Option<&'a mut Dropout>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParameterStore) -> Self {
        Self {
            tape,
            store,
            dropout: None,
        }
    }

    pub fn training(tape: &'a mut Tape, store: &'a ParameterStore, dropout: Option<&'a mut Dropout>) -> Self {
        Self { tape, store, dropout }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub(crate) fn maybe_dropout(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_deref_mut() {
            Some(d) if d.rate > 0.0 => {
                let shape = self.tape.shape(x).to_vec();
                let mask = Tensor::new(shape, d.mask(self.tape.value(x).len()))?;
                let m = self.tape.constant(mask);
                self.tape.mul(x, m)
            }
            _ => Ok(x),
        }
    }
}

/// Affine map on row vectors: `x W + b` with `W: d_in x d_out`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn build(
        store: &mut ParameterStore,
        init: &mut Initializer,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), init.xavier(d_in, d_out))?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[1, d_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn num_params(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if ctx.tape.value(x).cols() != self.d_in {
            return Err(Error::Shape {
                op: "dense",
                left: ctx.tape.shape(x).to_vec(),
                right: vec![self.d_in, self.d_out],
            });
        }
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn forward_activated(&self, ctx: &mut Ctx<'_>, x: Var, act: Activation) -> Result<Var> {
        let y = self.forward(ctx, x)?;
        Ok(match act {
            Activation::Linear => y,
            Activation::Tanh => ctx.tape.tanh(y),
        })
    }
}
