//! The seven architectures: uni-modal cLSTMs, early fusion (EF), late
//! fusion (LF), the multi-modal attention network (MMA) and the hybrid
//! (MMAN).
//!
//! Parameter names are prefixed by the sub-network that owns them
//! (`speech.`, `visual.`, `text.`, `ef.`, `mma.`), and the stage-two layers
//! of LF and MMAN live under `fusion.`. A stand-alone uni-modal or MMA model
//! uses the same names as its copy inside a composite, so trained tensors can
//! be moved across by name.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionDims, MultiModalAttention, Standardizer};
use crate::data::{Conversation, Modality};
use crate::error::{Error, Result};
use crate::nn::{Activation, Ctx, Dense};
use crate::params::{Initializer, ParameterStore};
use crate::recurrent::ClstmBlock;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FUSION_PREFIX: &str = "fusion.";

pub fn is_fusion_param(name: &str) -> bool {
    name.starts_with(FUSION_PREFIX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Speech,
    Visual,
    Text,
    Ef,
    Lf,
    Mma,
    Mman,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::Speech,
        Architecture::Visual,
        Architecture::Text,
        Architecture::Ef,
        Architecture::Lf,
        Architecture::Mma,
        Architecture::Mman,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Architecture::Speech => "speech",
            Architecture::Visual => "visual",
            Architecture::Text => "text",
            Architecture::Ef => "ef",
            Architecture::Lf => "lf",
            Architecture::Mma => "mma",
            Architecture::Mman => "mman",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::Speech => "cLSTM-Speech",
            Architecture::Visual => "cLSTM-Visual",
            Architecture::Text => "cLSTM-Text",
            Architecture::Ef => "cLSTM-EF",
            Architecture::Lf => "cLSTM-LF",
            Architecture::Mma => "cLSTM-MMA",
            Architecture::Mman => "MMAN",
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            Architecture::Speech => Some(Modality::Speech),
            Architecture::Visual => Some(Modality::Visual),
            Architecture::Text => Some(Modality::Text),
            _ => None,
        }
    }

    pub fn unimodal(m: Modality) -> Self {
        match m {
            Modality::Speech => Architecture::Speech,
            Modality::Visual => Architecture::Visual,
            Modality::Text => Architecture::Text,
        }
    }

    /// Sub-networks trained separately and frozen before the fusion stage,
    /// in the order their predictions are concatenated.
    pub fn subnetworks(self) -> &'static [Architecture] {
        match self {
            Architecture::Lf => &[Architecture::Speech, Architecture::Visual, Architecture::Text],
            Architecture::Mman => &[
                Architecture::Mma,
                Architecture::Speech,
                Architecture::Visual,
                Architecture::Text,
            ],
            _ => &[],
        }
    }

    pub fn is_two_stage(self) -> bool {
        !self.subnetworks().is_empty()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Architecture::ALL
            .into_iter()
            .find(|a| a.key() == lower || a.display_name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown architecture `{s}` (expected one of speech, visual, text, ef, lf, mma, mman)"
                ))
            })
    }
}

/// What the sub-networks hand to the fusion stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionInput {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_s: usize,
    pub d_v_feat: usize,
    pub d_t: usize,
    pub d_model: usize,
    pub d_q: usize,
    pub d_k: usize,
    pub d_val: usize,
    /// Hidden size of the single LSTM layer in cLSTM-MMA.
    pub hidden_mma: usize,
    /// Two LSTM layers each.
    pub hidden_speech: Vec<usize>,
    pub hidden_visual: Vec<usize>,
    pub hidden_text: Vec<usize>,
    pub hidden_ef: Vec<usize>,
    /// Upper cLSTM of the late-fusion baseline; any depth >= 1.
    pub hidden_lf: Vec<usize>,
    pub num_classes: usize,
    pub attention_bias: bool,
    pub standardize_activation: Activation,
    pub dropout: f64,
    pub fusion_input: FusionInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_s: 16,
            d_v_feat: 16,
            d_t: 16,
            d_model: 32,
            d_q: 16,
            d_k: 16,
            d_val: 16,
            hidden_mma: 32,
            hidden_speech: vec![32, 32],
            hidden_visual: vec![32, 32],
            hidden_text: vec![32, 32],
            hidden_ef: vec![32, 32],
            hidden_lf: vec![32],
            num_classes: 4,
            attention_bias: false,
            standardize_activation: Activation::Linear,
            dropout: 0.0,
            fusion_input: FusionInput::Probabilities,
        }
    }
}

impl ModelConfig {
    pub fn input_dims(&self) -> [usize; 3] {
        [self.d_s, self.d_v_feat, self.d_t]
    }

    pub fn attention_dims(&self) -> AttentionDims {
        AttentionDims {
            d_model: self.d_model,
            d_q: self.d_q,
            d_k: self.d_k,
            d_val: self.d_val,
            bias: self.attention_bias,
        }
    }

    pub fn hidden_unimodal(&self, m: Modality) -> &[usize] {
        match m {
            Modality::Speech => &self.hidden_speech,
            Modality::Visual => &self.hidden_visual,
            Modality::Text => &self.hidden_text,
        }
    }

    /// Width of the MMA block output fed to its LSTM.
    pub fn mma_output_dim(&self) -> usize {
        3 * self.d_val + 3 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims().contains(&0) {
            return Err(Error::config("input feature dimensions must be positive"));
        }
        self.attention_dims().validate()?;
        if self.hidden_mma == 0 {
            return Err(Error::config("hidden_mma must be positive"));
        }
        for (name, h) in [
            ("hidden_speech", &self.hidden_speech),
            ("hidden_visual", &self.hidden_visual),
            ("hidden_text", &self.hidden_text),
            ("hidden_ef", &self.hidden_ef),
        ] {
            if h.len() != 2 || h.contains(&0) {
                return Err(Error::config(format!("{name} must list two positive LSTM widths, got {h:?}")));
            }
        }
        if self.hidden_lf.is_empty() || self.hidden_lf.contains(&0) {
            return Err(Error::config("hidden_lf must list at least one positive LSTM width"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Tiny dimensions used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_s: 5,
            d_v_feat: 4,
            d_t: 3,
            d_model: 4,
            d_q: 3,
            d_k: 3,
            d_val: 3,
            hidden_mma: 4,
            hidden_speech: vec![4, 4],
            hidden_visual: vec![4, 4],
            hidden_text: vec![4, 4],
            hidden_ef: vec![4, 4],
            hidden_lf: vec![4],
            num_classes: 3,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct MmaNet {
    pub standardizer: Standardizer,
    pub attention: MultiModalAttention,
    pub block: ClstmBlock,
}

impl MmaNet {
    fn build(store: &mut ParameterStore, init: &mut Initializer, cfg: &ModelConfig) -> Result<Self> {
        let standardizer = Standardizer::build(
            store,
            init,
            "mma",
            cfg.input_dims(),
            cfg.d_model,
            cfg.standardize_activation,
        )?;
        let attention = MultiModalAttention::build(store, init, "mma", cfg.attention_dims())?;
        let block = ClstmBlock::build(
            store,
            init,
            "mma.clstm",
            attention.output_dim(),
            &[cfg.hidden_mma],
            cfg.num_classes,
        )?;
        Ok(Self {
            standardizer,
            attention,
            block,
        })
    }

    fn logits(&self, ctx: &mut Ctx<'_>, conv: &Conversation) -> Result<Vec<Var>> {
        let dims = [
            self.standardizer.layers[0].d_in,
            self.standardizer.layers[1].d_in,
            self.standardizer.layers[2].d_in,
        ];
        let mut fused = Vec::with_capacity(conv.len());
        for u in &conv.utterances {
            let mut inputs = Vec::with_capacity(3);
            for m in Modality::ALL {
                inputs.push(modality_input(ctx, u.features(m), m, dims[m.index()])?);
            }
            let triple = self.standardizer.standardize(ctx, [inputs[0], inputs[1], inputs[2]])?;
            fused.push(self.attention.mma_block(ctx, &triple)?);
        }
        self.block.logits(ctx, &fused)
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Network {
    Unimodal(Modality, ClstmBlock),
    Ef(ClstmBlock),
    Mma(MmaNet),
    Lf {
        unimodal: [ClstmBlock; 3],
        top: ClstmBlock,
    },
    Mman {
        mma: MmaNet,
        unimodal: [ClstmBlock; 3],
        head: Dense,
    },
}

fn modality_input(ctx: &mut Ctx<'_>, x: &[f64], m: Modality, expected: usize) -> Result<Var> {
    if x.len() != expected {
        return Err(Error::ModalityDim {
            modality: m.name(),
            expected,
            got: x.len(),
        });
    }
    Ok(ctx.tape.constant(Tensor::row(x.to_vec())))
}

fn build_unimodal(store: &mut ParameterStore, init: &mut Initializer, cfg: &ModelConfig, m: Modality) -> Result<ClstmBlock> {
    ClstmBlock::build(
        store,
        init,
        m.name(),
        cfg.input_dims()[m.index()],
        cfg.hidden_unimodal(m),
        cfg.num_classes,
    )
}

fn unimodal_logits(ctx: &mut Ctx<'_>, block: &ClstmBlock, m: Modality, conv: &Conversation) -> Result<Vec<Var>> {
    let seq = conv
        .utterances
        .iter()
        .map(|u| modality_input(ctx, u.features(m), m, block.input_dim()))
        .collect::<Result<Vec<_>>>()?;
    block.logits(ctx, &seq)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub config: ModelConfig,
    pub store: ParameterStore,
    net: Network,
}

/// Per-utterance outputs of a forward pass, as tape handles.
pub struct Outputs {
    pub logits: Vec<Var>,
    pub probs: Vec<Var>,
}

impl Model {
    /// Builds a freshly initialized model. Composite architectures get
    /// randomly initialized sub-networks; use [`Model::assemble`] to plug
    /// in trained ones.
    pub fn new(arch: Architecture, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config;
        let mut store = ParameterStore::new();
        let mut init = Initializer::new(seed);
        let c = cfg.num_classes;
        let net = match arch {
            Architecture::Speech | Architecture::Visual | Architecture::Text => {
                let m = arch.modality().unwrap();
                Network::Unimodal(m, build_unimodal(&mut store, &mut init, cfg, m)?)
            }
            Architecture::Ef => {
                let d_in = cfg.d_s + cfg.d_v_feat + cfg.d_t;
                Network::Ef(ClstmBlock::build(&mut store, &mut init, "ef", d_in, &cfg.hidden_ef, c)?)
            }
            Architecture::Mma => Network::Mma(MmaNet::build(&mut store, &mut init, cfg)?),
            Architecture::Lf => {
                let unimodal = [
                    build_unimodal(&mut store, &mut init, cfg, Modality::Speech)?,
                    build_unimodal(&mut store, &mut init, cfg, Modality::Visual)?,
                    build_unimodal(&mut store, &mut init, cfg, Modality::Text)?,
                ];
                let top = ClstmBlock::build(&mut store, &mut init, "fusion", 3 * c, &cfg.hidden_lf, c)?;
                Network::Lf { unimodal, top }
            }
            Architecture::Mman => {
                let mma = MmaNet::build(&mut store, &mut init, cfg)?;
                let unimodal = [
                    build_unimodal(&mut store, &mut init, cfg, Modality::Speech)?,
                    build_unimodal(&mut store, &mut init, cfg, Modality::Visual)?,
                    build_unimodal(&mut store, &mut init, cfg, Modality::Text)?,
                ];
                let head = Dense::build(&mut store, &mut init, "fusion.head", 4 * c, c, true)?;
                Network::Mman { mma, unimodal, head }
            }
        };
        Ok(Self {
            arch,
            config: cfg.clone(),
            store,
            net,
        })
    }

    /// Builds a composite model and copies every tensor of the given trained
    /// sub-networks into it by name.
    pub fn assemble(arch: Architecture, config: &ModelConfig, seed: u64, parts: &[&Model]) -> Result<Self> {
        let mut model = Self::new(arch, config, seed)?;
        let wanted = arch.subnetworks();
        if wanted.is_empty() {
            return Err(Error::config(format!("{} has no sub-networks to assemble", arch.display_name())));
        }
        for &need in wanted {
            let found: Vec<&&Model> = parts.iter().filter(|p| p.arch == need).collect();
            if found.len() != 1 {
                return Err(Error::config(format!(
                    "{} needs exactly one trained {} sub-network, got {}",
                    arch.display_name(),
                    need.display_name(),
                    found.len()
                )));
            }
        }
        for part in parts {
            if !wanted.contains(&part.arch) {
                return Err(Error::config(format!(
                    "{} is not a sub-network of {}",
                    part.arch.display_name(),
                    arch.display_name()
                )));
            }
            if part.config != *config {
                return Err(Error::config(format!(
                    "{} sub-network was built with a different model config",
                    part.arch.display_name()
                )));
            }
            for (name, p) in part.store.iter() {
                model.store.set_value(name, p.value.clone())?;
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from stored tensors (used by checkpoint loading).
    pub fn from_tensors(arch: Architecture, config: &ModelConfig, tensors: Vec<(String, Tensor, bool)>) -> Result<Self> {
        let mut model = Self::new(arch, config, 0)?;
        if tensors.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} expects {} tensors, found {}",
                arch.display_name(),
                model.store.len(),
                tensors.len()
            )));
        }
        for (name, value, frozen) in tensors {
            model.store.set_value(&name, value)?;
            model.store.set_frozen(&name, frozen)?;
        }
        Ok(model)
    }

    pub fn name(&self) -> &'static str {
        self.arch.display_name()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Pre-softmax scores and class distributions per utterance.
    pub fn outputs(&self, ctx: &mut Ctx<'_>, conv: &Conversation) -> Result<Outputs> {
        if conv.utterances.is_empty() {
            return Err(Error::Data(format!("conversation `{}` has no utterances", conv.id)));
        }
        let logits = match &self.net {
            Network::Unimodal(m, block) => unimodal_logits(ctx, block, *m, conv)?,
            Network::Ef(block) => self.ef_logits(ctx, block, conv)?,
            Network::Mma(mma) => mma.logits(ctx, conv)?,
            Network::Lf { unimodal, top } => {
                let per_sub = self.sub_predictions(ctx, None, unimodal, conv)?;
                let fused = concat_predictions(ctx, &per_sub, 3 * self.config.num_classes)?;
                top.logits(ctx, &fused)?
            }
            Network::Mman { mma, unimodal, head } => {
                let per_sub = self.sub_predictions(ctx, Some(mma), unimodal, conv)?;
                let fused = concat_predictions(ctx, &per_sub, 4 * self.config.num_classes)?;
                fused.into_iter().map(|x| head.forward(ctx, x)).collect::<Result<_>>()?
            }
        };
        let probs = logits
            .iter()
            .map(|&z| ctx.tape.softmax(z, 1.0))
            .collect::<Result<_>>()?;
        Ok(Outputs { logits, probs })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, conv: &Conversation) -> Result<Vec<Var>> {
        Ok(self.outputs(ctx, conv)?.probs)
    }

    fn ef_logits(&self, ctx: &mut Ctx<'_>, block: &ClstmBlock, conv: &Conversation) -> Result<Vec<Var>> {
        let seq = conv
            .utterances
            .iter()
            .map(|u| {
                for m in Modality::ALL {
                    let expected = self.config.input_dims()[m.index()];
                    if u.features(m).len() != expected {
                        return Err(Error::ModalityDim {
                            modality: m.name(),
                            expected,
                            got: u.features(m).len(),
                        });
                    }
                }
                let cat: Vec<f64> = u.s.iter().chain(&u.v).chain(&u.t).copied().collect();
                Ok(ctx.tape.constant(Tensor::row(cat)))
            })
            .collect::<Result<Vec<_>>>()?;
        block.logits(ctx, &seq)
    }

    fn sub_predictions(
        &self,
        ctx: &mut Ctx<'_>,
        mma: Option<&MmaNet>,
        unimodal: &[ClstmBlock; 3],
        conv: &Conversation,
    ) -> Result<Vec<Vec<Var>>> {
        let mut subs = Vec::with_capacity(4);
        if let Some(mma) = mma {
            subs.push(mma.logits(ctx, conv)?);
        }
        for m in Modality::ALL {
            subs.push(unimodal_logits(ctx, &unimodal[m.index()], m, conv)?);
        }
        if self.config.fusion_input == FusionInput::Probabilities {
            for sub in &mut subs {
                for z in sub.iter_mut() {
                    *z = ctx.tape.softmax(*z, 1.0)?;
                }
            }
        }
        Ok(subs)
    }

    /// Per-utterance input to the fusion stage of an LF or MMAN model,
    /// computed from the sub-networks without dropout. Frozen sub-networks
    /// make this constant, so it can be computed once per conversation.
    pub fn fusion_features(&self, conv: &Conversation) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store);
        let fused = match &self.net {
            Network::Lf { unimodal, .. } => {
                let per_sub = self.sub_predictions(&mut ctx, None, unimodal, conv)?;
                concat_predictions(&mut ctx, &per_sub, 3 * self.config.num_classes)?
            }
            Network::Mman { mma, unimodal, .. } => {
                let per_sub = self.sub_predictions(&mut ctx, Some(mma), unimodal, conv)?;
                concat_predictions(&mut ctx, &per_sub, 4 * self.config.num_classes)?
            }
            _ => return Err(Error::config(format!("{} has no fusion stage", self.name()))),
        };
        Ok(fused.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Fusion-stage class distributions from precomputed
    /// [`Model::fusion_features`].
    pub fn fusion_forward(&self, ctx: &mut Ctx<'_>, features: &[Tensor]) -> Result<Vec<Var>> {
        if features.is_empty() {
            return Err(Error::Data("no utterances".into()));
        }
        let inputs: Vec<Var> = features.iter().map(|f| ctx.tape.constant(f.clone())).collect();
        let logits = match &self.net {
            Network::Lf { top, .. } => top.logits(ctx, &inputs)?,
            Network::Mman { head, .. } => inputs.into_iter().map(|x| head.forward(ctx, x)).collect::<Result<_>>()?,
            _ => return Err(Error::config(format!("{} has no fusion stage", self.name()))),
        };
        logits.iter().map(|&z| ctx.tape.softmax(z, 1.0)).collect()
    }

    /// Mean per-utterance cross-entropy over one conversation.
    pub fn loss(&self, ctx: &mut Ctx<'_>, conv: &Conversation) -> Result<Var> {
        Ok(self.loss_with_outputs(ctx, conv)?.0)
    }

    pub fn loss_with_outputs(&self, ctx: &mut Ctx<'_>, conv: &Conversation) -> Result<(Var, Vec<Var>)> {
        let probs = self.forward(ctx, conv)?;
        let terms = probs
            .iter()
            .zip(conv.labels())
            .map(|(&p, y)| ctx.tape.cross_entropy(p, y))
            .collect::<Result<Vec<_>>>()?;
        Ok((ctx.tape.mean(&terms)?, probs))
    }

    /// Class distributions for every utterance of a conversation.
    pub fn predict(&self, conv: &Conversation) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store);
        let probs = self.forward(&mut ctx, conv)?;
        Ok(probs.into_iter().map(|p| tape.value(p).clone()).collect())
    }

    /// Gradient check of the summed conversation losses over every unfrozen
    /// parameter.
    pub fn grad_check(&self, dataset: &[Conversation], step: f64) -> Result<crate::gradcheck::GradCheck> {
        self.grad_check_with(dataset, step, crate::gradcheck::Stencil::Central)
    }

    pub fn grad_check_with(
        &self,
        dataset: &[Conversation],
        step: f64,
        stencil: crate::gradcheck::Stencil,
    ) -> Result<crate::gradcheck::GradCheck> {
        let mut store = self.store.clone();
        crate::gradcheck::grad_check_with(&mut store, step, stencil, |tape, store| {
            let mut ctx = Ctx::new(tape, store);
            let losses = dataset
                .iter()
                .map(|c| self.loss(&mut ctx, c))
                .collect::<Result<Vec<_>>>()?;
            ctx.tape.sum(&losses)
        })
    }

    /// Input width of the first recurrent layer that reads per-utterance
    /// features (for fusion models, the upper block).
    pub fn recurrent_input_dim(&self) -> usize {
        match &self.net {
            Network::Unimodal(_, b) | Network::Ef(b) => b.input_dim(),
            Network::Mma(m) => m.block.input_dim(),
            Network::Lf { top, .. } => top.input_dim(),
            Network::Mman { head, .. } => head.d_in,
        }
    }

    /// Freezes every sub-network tensor and unfreezes the fusion stage.
    pub fn freeze_subnetworks(&mut self) {
        self.store.freeze_where(|n| !is_fusion_param(n));
    }
}

fn concat_predictions(ctx: &mut Ctx<'_>, subs: &[Vec<Var>], width: usize) -> Result<Vec<Var>> {
    let m = subs[0].len();
    if subs.iter().any(|s| s.len() != m) {
        return Err(Error::Invariant("sub-network prediction lists differ in length".into()));
    }
    (0..m)
        .map(|i| {
            let parts: Vec<Var> = subs.iter().map(|s| s[i]).collect();
            let v = ctx.tape.concat_cols(&parts)?;
            if ctx.tape.value(v).cols() != width {
                return Err(Error::Shape {
                    op: "fusion input",
                    left: ctx.tape.shape(v).to_vec(),
                    right: vec![1, width],
                });
            }
            Ok(v)
        })
        .collect()
}

/// Scalar counts by tensor, plus a closed-form total from the config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub model: String,
    pub total: usize,
    pub trainable: usize,
    pub by_tensor: Vec<(String, usize)>,
}

/// Closed-form parameter count of an architecture under a config.
pub fn analytic_parameter_count(arch: Architecture, cfg: &ModelConfig) -> usize {
    let c = cfg.num_classes;
    let uni = |m: Modality| ClstmBlock::num_params(cfg.input_dims()[m.index()], cfg.hidden_unimodal(m), c);
    let all_uni: usize = Modality::ALL.iter().map(|&m| uni(m)).sum();
    let mma = Standardizer::num_params(cfg.input_dims(), cfg.d_model)
        + 3 * cfg.attention_dims().num_params()
        + ClstmBlock::num_params(cfg.mma_output_dim(), &[cfg.hidden_mma], c);
    match arch {
        Architecture::Speech | Architecture::Visual | Architecture::Text => uni(arch.modality().unwrap()),
        Architecture::Ef => ClstmBlock::num_params(cfg.d_s + cfg.d_v_feat + cfg.d_t, &cfg.hidden_ef, c),
        Architecture::Mma => mma,
        Architecture::Lf => all_uni + ClstmBlock::num_params(3 * c, &cfg.hidden_lf, c),
        Architecture::Mman => mma + all_uni + Dense::num_params(4 * c, c, true),
    }
}

pub fn count_parameters(model: &Model) -> ParameterCount {
    ParameterCount {
        model: model.name().to_string(),
        total: analytic_parameter_count(model.arch, &model.config),
        trainable: model.store.num_trainable(),
        by_tensor: model
            .store
            .iter()
            .map(|(n, p)| (n.to_string(), p.value.len()))
            .collect(),
    }
}
