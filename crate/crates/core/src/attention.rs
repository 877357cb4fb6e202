//! Modality standardization and directional tri-modal attention.
//!
//! Each utterance yields one feature vector per modality. Three dense layers
//! map them to a shared width `d_model`. A directional module then draws its
//! query from one modality and its keys and values from all three, so the
//! softmax runs over exactly three slots (speech, visual, text, in that
//! order). Three such modules, one per query modality, run in parallel and
//! their outputs are concatenated with the standardized embeddings:
//!
//! ```text
//! [ z_s | z_v | z_t | s_hat | v_hat | t_hat ]    (3 * d_val + 3 * d_model)
//! ```

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::{Activation, Ctx, Dense};
use crate::params::{Initializer, ParamId, ParameterStore};
use crate::tape::Var;

#[derive(Clone, Copy, Debug)]
pub struct StandardizedTriple {
    pub s_hat: Var,
    pub v_hat: Var,
    pub t_hat: Var,
}

impl StandardizedTriple {
    pub fn get(&self, m: Modality) -> Var {
        match m {
            Modality::Speech => self.s_hat,
            Modality::Visual => self.v_hat,
            Modality::Text => self.t_hat,
        }
    }

    pub fn as_array(&self) -> [Var; 3] {
        [self.s_hat, self.v_hat, self.t_hat]
    }
}

/// Three independent dense layers, one per modality, all emitting `d_model`.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub layers: [Dense; 3],
    pub activation: Activation,
}

impl Standardizer {
    pub fn build(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        input_dims: [usize; 3],
        d_model: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut build = |m: Modality| {
            Dense::build(
                store,
                init,
                &format!("{prefix}.std.{}", m.key()),
                input_dims[m.index()],
                d_model,
                true,
            )
        };
        let layers = [
            build(Modality::Speech)?,
            build(Modality::Visual)?,
            build(Modality::Text)?,
        ];
        Ok(Self { layers, activation })
    }

    pub fn num_params(input_dims: [usize; 3], d_model: usize) -> usize {
        input_dims.iter().map(|&d| Dense::num_params(d, d_model, true)).sum()
    }

    pub fn d_model(&self) -> usize {
        self.layers[0].d_out
    }

    pub fn standardize(&self, ctx: &mut Ctx<'_>, inputs: [Var; 3]) -> Result<StandardizedTriple> {
        let mut out = [inputs[0]; 3];
        for m in Modality::ALL {
            let layer = &self.layers[m.index()];
            let x = inputs[m.index()];
            let got = ctx.tape.value(x).cols();
            if got != layer.d_in || ctx.tape.value(x).rows() != 1 {
                return Err(Error::ModalityDim {
                    modality: m.name(),
                    expected: layer.d_in,
                    got,
                });
            }
            out[m.index()] = layer.forward_activated(ctx, x, self.activation)?;
        }
        Ok(StandardizedTriple {
            s_hat: out[0],
            v_hat: out[1],
            t_hat: out[2],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub d_model: usize,
    pub d_q: usize,
    pub d_k: usize,
    pub d_val: usize,
    pub bias: bool,
}

impl AttentionDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_q == 0 || self.d_k == 0 || self.d_val == 0 {
            return Err(Error::config("attention dimensions must be positive"));
        }
        if self.d_q != self.d_k {
            return Err(Error::config(format!(
                "query dimension {} must equal key dimension {}",
                self.d_q, self.d_k
            )));
        }
        Ok(())
    }

    /// Scalars in one directional module.
    pub fn num_params(&self) -> usize {
        let weights = self.d_model * self.d_q + 3 * self.d_model * self.d_k + 3 * self.d_model * self.d_val;
        let biases = if self.bias {
            self.d_q + 3 * self.d_k + 3 * self.d_val
        } else {
            0
        };
        weights + biases
    }
}

/// The seven projections of one directional module. Key and value
/// projections are indexed by [`Modality::index`].
#[derive(Clone, Debug)]
pub struct DirectionalAttentionParams {
    pub query_modality: Modality,
    pub dims: AttentionDims,
    pub w_query: ParamId,
    pub w_key: [ParamId; 3],
    pub w_val: [ParamId; 3],
    pub b_query: Option<ParamId>,
    pub b_key: Option<[ParamId; 3]>,
    pub b_val: Option<[ParamId; 3]>,
}

impl DirectionalAttentionParams {
    pub fn build(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        query_modality: Modality,
        dims: AttentionDims,
    ) -> Result<Self> {
        dims.validate()?;
        let base = format!("{prefix}.attn.{}", query_modality.key());
        let dm = dims.d_model;
        let w_query = store.insert(format!("{base}.w_query"), init.xavier(dm, dims.d_q))?;
        let mut w_key = [w_query; 3];
        for m in Modality::ALL {
            w_key[m.index()] = store.insert(format!("{base}.w_key_{}", m.key()), init.xavier(dm, dims.d_k))?;
        }
        let mut w_val = [w_query; 3];
        for m in Modality::ALL {
            w_val[m.index()] = store.insert(format!("{base}.w_val_{}", m.key()), init.xavier(dm, dims.d_val))?;
        }
        let (b_query, b_key, b_val) = if dims.bias {
            use crate::tensor::Tensor;
            let bq = store.insert(format!("{base}.b_query"), Tensor::zeros(&[1, dims.d_q]))?;
            let mut bk = [bq; 3];
            let mut bv = [bq; 3];
            for m in Modality::ALL {
                bk[m.index()] = store.insert(format!("{base}.b_key_{}", m.key()), Tensor::zeros(&[1, dims.d_k]))?;
            }
            for m in Modality::ALL {
                bv[m.index()] = store.insert(format!("{base}.b_val_{}", m.key()), Tensor::zeros(&[1, dims.d_val]))?;
            }
            (Some(bq), Some(bk), Some(bv))
        } else {
            (None, None, None)
        };
        Ok(Self {
            query_modality,
            dims,
            w_query,
            w_key,
            w_val,
            b_query,
            b_key,
            b_val,
        })
    }
}

/// Result of one directional module.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `1 x d_val`
    pub fused: Var,
    /// `1 x 3`, softmax over (speech, visual, text)
    pub weights: Var,
}

fn project(ctx: &mut Ctx<'_>, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
    let w = ctx.param(w);
    let y = ctx.tape.matmul(x, w)?;
    match b {
        Some(b) => {
            let b = ctx.param(b);
            ctx.tape.add(y, b)
        }
        None => Ok(y),
    }
}

/// `softmax(q Kᵀ / sqrt(d_k)) V` with the query taken from
/// `params.query_modality` and one key/value row per modality.
pub fn directional_attention(
    ctx: &mut Ctx<'_>,
    triple: &StandardizedTriple,
    params: &DirectionalAttentionParams,
) -> Result<AttentionOutput> {
    for m in Modality::ALL {
        let got = ctx.tape.value(triple.get(m)).cols();
        if got != params.dims.d_model {
            return Err(Error::ModalityDim {
                modality: m.name(),
                expected: params.dims.d_model,
                got,
            });
        }
    }
    let q = project(ctx, triple.get(params.query_modality), params.w_query, params.b_query)?;
    let mut keys = Vec::with_capacity(3);
    let mut values = Vec::with_capacity(3);
    for m in Modality::ALL {
        let i = m.index();
        keys.push(project(ctx, triple.get(m), params.w_key[i], params.b_key.map(|b| b[i]))?);
        values.push(project(ctx, triple.get(m), params.w_val[i], params.b_val.map(|b| b[i]))?);
    }
    let k = ctx.tape.concat_rows(&keys)?;
    let v = ctx.tape.concat_rows(&values)?;
    let kt = ctx.tape.transpose(k);
    let logits = ctx.tape.matmul(q, kt)?;
    let weights = ctx.tape.softmax(logits, 1.0 / (params.dims.d_k as f64).sqrt())?;
    let fused = ctx.tape.matmul(weights, v)?;
    Ok(AttentionOutput { fused, weights })
}

/// Three directional modules (speech, visual, text queries) plus the skip
/// path.
#[derive(Clone, Debug)]
pub struct MultiModalAttention {
    pub modules: [DirectionalAttentionParams; 3],
}

impl MultiModalAttention {
    pub fn new(modules: [DirectionalAttentionParams; 3]) -> Result<Self> {
        let d_val = modules[0].dims.d_val;
        let d_model = modules[0].dims.d_model;
        for (m, module) in Modality::ALL.iter().zip(&modules) {
            if module.query_modality != *m {
                return Err(Error::config(format!(
                    "attention module {} must take its query from {}",
                    m.index(),
                    m.name()
                )));
            }
            if module.dims.d_val != d_val || module.dims.d_model != d_model {
                return Err(Error::config(format!(
                    "inconsistent attention widths: {} query module has d_val={}, d_model={}; expected {}, {}",
                    m.name(),
                    module.dims.d_val,
                    module.dims.d_model,
                    d_val,
                    d_model
                )));
            }
        }
        Ok(Self { modules })
    }

    pub fn build(store: &mut ParameterStore, init: &mut Initializer, prefix: &str, dims: AttentionDims) -> Result<Self> {
        let modules = [
            DirectionalAttentionParams::build(store, init, prefix, Modality::Speech, dims)?,
            DirectionalAttentionParams::build(store, init, prefix, Modality::Visual, dims)?,
            DirectionalAttentionParams::build(store, init, prefix, Modality::Text, dims)?,
        ];
        Self::new(modules)
    }

    pub fn output_dim(&self) -> usize {
        let d = &self.modules[0].dims;
        3 * d.d_val + 3 * d.d_model
    }

    /// Runs all three modules and returns their outputs alongside the
    /// concatenated block output.
    pub fn forward_detailed(&self, ctx: &mut Ctx<'_>, triple: &StandardizedTriple) -> Result<(Var, [AttentionOutput; 3])> {
        let zs = directional_attention(ctx, triple, &self.modules[0])?;
        let zv = directional_attention(ctx, triple, &self.modules[1])?;
        let zt = directional_attention(ctx, triple, &self.modules[2])?;
        let out = ctx
            .tape
            .concat_cols(&[zs.fused, zv.fused, zt.fused, triple.s_hat, triple.v_hat, triple.t_hat])?;
        Ok((out, [zs, zv, zt]))
    }

    pub fn mma_block(&self, ctx: &mut Ctx<'_>, triple: &StandardizedTriple) -> Result<Var> {
        self.forward_detailed(ctx, triple).map(|(out, _)| out)
    }
}
