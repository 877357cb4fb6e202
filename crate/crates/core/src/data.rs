//! Conversations, the line-delimited dataset format, the synthetic generator
//! and the speaker-disjoint split.
//!
//! # Dataset file format
//!
//! UTF-8 text, one JSON object per line, one line per utterance. Keys appear
//! in this order:
//!
//! | key            | type              | notes                                   |
//! |----------------|-------------------|-----------------------------------------|
//! | `conversation` | string            | lines of one conversation are contiguous |
//! | `speaker`      | string            | constant within a conversation          |
//! | `split`        | `"train"`/`"test"`| optional, constant within a conversation|
//! | `index`        | integer           | `0, 1, ..., M-1` within the conversation |
//! | `label`        | integer           | `0 <= label < C`                        |
//! | `s`, `v`, `t`  | array of numbers  | speech, visual, text features           |
//!
//! Floats are written in shortest round-trip decimal form, so save → load is
//! bit-exact. Blank lines are not allowed.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Visual,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Speech, Modality::Visual, Modality::Text];

    pub fn index(self) -> usize {
        match self {
            Modality::Speech => 0,
            Modality::Visual => 1,
            Modality::Text => 2,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Modality::Speech => "s",
            Modality::Visual => "v",
            Modality::Text => "t",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
    pub label: usize,
}

impl Utterance {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Speech => &self.s,
            Modality::Visual => &self.v,
            Modality::Text => &self.t,
        }
    }

    pub fn features_mut(&mut self, m: Modality) -> &mut Vec<f64> {
        match m {
            Modality::Speech => &mut self.s,
            Modality::Visual => &mut self.v,
            Modality::Text => &mut self.t,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.s.len(), self.v.len(), self.t.len()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub speaker: String,
    pub split: Option<Split>,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.utterances.iter().map(|u| u.label)
    }
}

pub fn num_utterances(dataset: &[Conversation]) -> usize {
    dataset.iter().map(Conversation::len).sum()
}

/// Checks the dataset invariants: finite features, homogeneous dimensions,
/// labels below `num_classes`, unique non-empty conversation ids.
pub fn validate_dataset(dataset: &[Conversation], num_classes: usize) -> Result<()> {
    let mut ids = HashSet::new();
    let mut dims: Option<[usize; 3]> = None;
    for conv in dataset {
        if !ids.insert(conv.id.as_str()) {
            return Err(Error::Data(format!("duplicate conversation id `{}`", conv.id)));
        }
        if conv.utterances.is_empty() {
            return Err(Error::Data(format!("conversation `{}` has no utterances", conv.id)));
        }
        for (i, u) in conv.utterances.iter().enumerate() {
            let here = format!("conversation `{}` utterance {i}", conv.id);
            if u.label >= num_classes {
                return Err(Error::Data(format!(
                    "{here}: label {} out of range for {num_classes} classes",
                    u.label
                )));
            }
            for m in Modality::ALL {
                let f = u.features(m);
                if f.is_empty() {
                    return Err(Error::Data(format!("{here}: empty {} features", m.name())));
                }
                if let Some(x) = f.iter().find(|x| !x.is_finite()) {
                    return Err(Error::Data(format!("{here}: non-finite {} feature {x}", m.name())));
                }
            }
            match dims {
                None => dims = Some(u.dims()),
                Some(d) if d != u.dims() => {
                    return Err(Error::Data(format!(
                        "{here}: feature dims {:?} differ from {:?}",
                        u.dims(),
                        d
                    )));
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RecordOut<'a> {
    conversation: &'a str,
    speaker: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    index: usize,
    label: usize,
    s: &'a [f64],
    v: &'a [f64],
    t: &'a [f64],
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &[Conversation]) -> Result<()> {
    for conv in dataset {
        for (index, u) in conv.utterances.iter().enumerate() {
            let rec = RecordOut {
                conversation: &conv.id,
                speaker: &conv.speaker,
                split: conv.split,
                index,
                label: u.label,
                s: &u.s,
                v: &u.v,
                t: &u.t,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
        }
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &[Conversation]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Record {
        line,
        field: name.to_string(),
        message: "missing".into(),
    })
}

fn record_err(line: usize, name: &str, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        field: name.to_string(),
        message: message.into(),
    }
}

fn str_field(obj: &Map<String, Value>, line: usize, name: &str) -> Result<String> {
    match field(obj, line, name)? {
        Value::String(s) if !s.is_empty() => Ok(s.clone()),
        Value::String(_) => Err(record_err(line, name, "empty string")),
        other => Err(record_err(line, name, format!("expected string, got {other}"))),
    }
}

fn uint_field(obj: &Map<String, Value>, line: usize, name: &str) -> Result<usize> {
    field(obj, line, name)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| record_err(line, name, "expected non-negative integer"))
}

fn floats_field(obj: &Map<String, Value>, line: usize, name: &str) -> Result<Vec<f64>> {
    let arr = field(obj, line, name)?
        .as_array()
        .ok_or_else(|| record_err(line, name, "expected array of numbers"))?;
    if arr.is_empty() {
        return Err(record_err(line, name, "empty feature vector"));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            Some(x) => Err(record_err(line, name, format!("element {i} is non-finite ({x})"))),
            None => Err(record_err(line, name, format!("element {i} is not a number"))),
        })
        .collect()
}

const KNOWN_FIELDS: [&str; 8] = ["conversation", "speaker", "split", "index", "label", "s", "v", "t"];

/// Parses dataset text and validates it against `num_classes`.
pub fn parse_dataset(text: &str, num_classes: usize) -> Result<Vec<Conversation>> {
    let mut dataset: Vec<Conversation> = Vec::new();
    let mut seen = HashSet::new();
    let mut dims: Option<[usize; 3]> = None;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let value: Value = serde_json::from_str(raw).map_err(|e| record_err(line, "<record>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| record_err(line, "<record>", "expected a JSON object"))?;
        if let Some(k) = obj.keys().find(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
            return Err(record_err(line, k, "unknown field"));
        }

        let conv_id = str_field(obj, line, "conversation")?;
        let speaker = str_field(obj, line, "speaker")?;
        let split = match obj.get("split") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s == "train" => Some(Split::Train),
            Some(Value::String(s)) if s == "test" => Some(Split::Test),
            Some(other) => return Err(record_err(line, "split", format!("expected \"train\" or \"test\", got {other}"))),
        };
        let index = uint_field(obj, line, "index")?;
        let label = uint_field(obj, line, "label")?;
        if label >= num_classes {
            return Err(record_err(
                line,
                "label",
                format!("utterance {index} of `{conv_id}`: label {label} out of range for {num_classes} classes"),
            ));
        }
        let s = floats_field(obj, line, "s")?;
        let v = floats_field(obj, line, "v")?;
        let t = floats_field(obj, line, "t")?;
        let u = Utterance { s, v, t, label };
        match dims {
            None => dims = Some(u.dims()),
            Some(d) => {
                for m in Modality::ALL {
                    if u.dims()[m.index()] != d[m.index()] {
                        return Err(record_err(
                            line,
                            m.key(),
                            format!("dimension {} differs from {}", u.dims()[m.index()], d[m.index()]),
                        ));
                    }
                }
            }
        }

        let continues = dataset.last().is_some_and(|c| c.id == conv_id);
        if !continues {
            if !seen.insert(conv_id.clone()) {
                return Err(record_err(line, "conversation", format!("duplicate conversation id `{conv_id}`")));
            }
            dataset.push(Conversation {
                id: conv_id,
                speaker: speaker.clone(),
                split,
                utterances: Vec::new(),
            });
        }
        let conv = dataset.last_mut().unwrap();
        if conv.speaker != speaker {
            return Err(record_err(line, "speaker", format!("changes within conversation `{}`", conv.id)));
        }
        if conv.split != split {
            return Err(record_err(line, "split", format!("changes within conversation `{}`", conv.id)));
        }
        if index != conv.utterances.len() {
            return Err(record_err(
                line,
                "index",
                format!("expected {} in conversation `{}`, got {index}", conv.utterances.len(), conv.id),
            ));
        }
        conv.utterances.push(u);
    }

    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>, num_classes: usize) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, num_classes)
}

/// Splits by speaker id so that no speaker appears on both sides. The train
/// side receives `round(fraction * speakers)` speakers.
pub fn speaker_split(dataset: &[Conversation], fraction: f64, seed: u64) -> Result<(Vec<Conversation>, Vec<Conversation>)> {
    let speakers: BTreeSet<&str> = dataset.iter().map(|c| c.speaker.as_str()).collect();
    if speakers.len() < 2 {
        return Err(Error::Data(format!(
            "speaker split needs at least 2 speakers, found {}",
            speakers.len()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction {fraction} must lie strictly in (0, 1)")));
    }
    let mut order: Vec<&str> = speakers.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * order.len() as f64).round() as usize;
    if n_train == 0 || n_train == order.len() {
        return Err(Error::config(format!(
            "split fraction {fraction} leaves one side empty with {} speakers",
            order.len()
        )));
    }
    let train_speakers: HashSet<&str> = order[..n_train].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for conv in dataset {
        let mut c = conv.clone();
        if train_speakers.contains(conv.speaker.as_str()) {
            c.split = Some(Split::Train);
            train.push(c);
        } else {
            c.split = Some(Split::Test);
            test.push(c);
        }
    }
    Ok((train, test))
}

/// How class information is spread over the three modalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complementarity {
    /// Every modality carries the full class index.
    Redundant,
    /// Speech carries bit 0 of the class index, visual the remaining high
    /// part, text the parity of bits 0 and 1. No single modality identifies
    /// the class; speech and visual together do, and text adds redundancy.
    #[default]
    Complementary,
    /// Speech and visual carry independent uniform symbols `a`, `b`; the
    /// label is `(a + b) mod C`. Text carries no signal.
    Xor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub d_s: usize,
    pub d_v_feat: usize,
    pub d_t: usize,
    pub n_conversations: usize,
    pub n_speakers: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-coordinate signal-to-noise ratio for speech, visual, text. The
    /// noise standard deviation is `1 / sqrt(snr)`; infinity means noiseless.
    pub snr: [f64; 3],
    /// Probability that an utterance (after the first) repeats its
    /// predecessor's label.
    pub p_ctx: f64,
    /// Signal amplitude of an utterance whose label was copied.
    pub ctx_attenuation: f64,
    pub mode: Complementarity,
    /// Optional class prior (normalized internally); uniform when absent.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 4,
            d_s: 16,
            d_v_feat: 16,
            d_t: 16,
            n_conversations: 250,
            n_speakers: 50,
            min_len: 4,
            max_len: 8,
            snr: [0.25; 3],
            p_ctx: 0.3,
            ctx_attenuation: 0.25,
            mode: Complementarity::Complementary,
            class_weights: None,
        }
    }
}

/// One cell of the generative grid for a fresh (not context-copied)
/// utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub probability: f64,
    pub label: usize,
    /// Symbol carried by each modality; `None` when the modality is pure noise.
    pub symbols: [Option<usize>; 3],
}

impl SyntheticSpec {
    pub fn dims(&self) -> [usize; 3] {
        [self.d_s, self.d_v_feat, self.d_t]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.mode == Complementarity::Complementary && self.num_classes < 3 {
            return Err(Error::config("complementary mode needs at least 3 classes; use xor for 2"));
        }
        if self.dims().contains(&0) {
            return Err(Error::config("feature dimensions must be positive"));
        }
        if self.n_conversations == 0 || self.n_speakers == 0 {
            return Err(Error::config("need at least one conversation and one speaker"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("conversation length range must satisfy 1 <= min_len <= max_len"));
        }
        if self.snr.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("snr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_ctx) {
            return Err(Error::config("p_ctx must lie in [0, 1]"));
        }
        if !(self.ctx_attenuation >= 0.0 && self.ctx_attenuation.is_finite()) {
            return Err(Error::config("ctx_attenuation must be finite and non-negative"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::config("class_weights must hold one non-negative weight per class"));
            }
            if self.mode == Complementarity::Xor {
                return Err(Error::config("class_weights are not supported in xor mode"));
            }
        }
        Ok(())
    }

    fn class_prior(&self) -> Vec<f64> {
        match &self.class_weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|x| x / total).collect()
            }
            None => vec![1.0 / self.num_classes as f64; self.num_classes],
        }
    }

    /// Alphabet size per modality (1 means no signal).
    pub fn alphabets(&self) -> [usize; 3] {
        let c = self.num_classes;
        match self.mode {
            Complementarity::Redundant => [c, c, c],
            Complementarity::Complementary => [2, c.div_ceil(2), 2],
            Complementarity::Xor => [c, c, 1],
        }
    }

    fn symbols_for(&self, latent: Latent) -> [Option<usize>; 3] {
        match (self.mode, latent) {
            (Complementarity::Redundant, Latent::Class(c)) => [Some(c), Some(c), Some(c)],
            (Complementarity::Complementary, Latent::Class(c)) => {
                [Some(c & 1), Some(c >> 1), Some((c & 1) ^ ((c >> 1) & 1))]
            }
            (Complementarity::Xor, Latent::Pair(a, b)) => [Some(a), Some(b), None],
            _ => unreachable!("latent kind follows the mode"),
        }
    }

    fn label_for(&self, latent: Latent) -> usize {
        match latent {
            Latent::Class(c) => c,
            Latent::Pair(a, b) => (a + b) % self.num_classes,
        }
    }

    /// Enumerates every latent configuration of a fresh utterance with its
    /// probability.
    pub fn generative_grid(&self) -> Vec<GridPoint> {
        let c = self.num_classes;
        let latents: Vec<(Latent, f64)> = match self.mode {
            Complementarity::Xor => (0..c)
                .flat_map(|a| (0..c).map(move |b| (Latent::Pair(a, b), 1.0 / (c * c) as f64)))
                .collect(),
            _ => self
                .class_prior()
                .into_iter()
                .enumerate()
                .map(|(k, p)| (Latent::Class(k), p))
                .collect(),
        };
        latents
            .into_iter()
            .map(|(l, probability)| GridPoint {
                probability,
                label: self.label_for(l),
                symbols: self.symbols_for(l),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Latent {
    Class(usize),
    Pair(usize, usize),
}

/// Generator with its per-modality symbol prototypes drawn up front.
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    prototypes: [Vec<Vec<f64>>; 3],
}

fn unit_rms_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / d as f64).sqrt();
    v.into_iter().map(|x| x / rms).collect()
}

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let alphabets = spec.alphabets();
        let dims = spec.dims();
        let mut prototypes: [Vec<Vec<f64>>; 3] = Default::default();
        for m in Modality::ALL {
            let (a, d) = (alphabets[m.index()], dims[m.index()]);
            prototypes[m.index()] = match a {
                1 => vec![vec![0.0; d]],
                // antipodal pair: symbol 1 is +p, symbol 0 is -p
                2 => {
                    let p = unit_rms_gaussian(&mut rng, d);
                    vec![p.iter().map(|x| -x).collect(), p]
                }
                _ => (0..a).map(|_| unit_rms_gaussian(&mut rng, d)).collect(),
            };
        }
        Ok(Self { spec, prototypes })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn prototypes(&self, m: Modality) -> &[Vec<f64>] {
        &self.prototypes[m.index()]
    }

    pub fn generate(&self) -> Vec<Conversation> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        let prior = spec.class_prior();
        let noise: Vec<f64> = spec
            .snr
            .iter()
            .map(|&s| if s.is_infinite() { 0.0 } else { 1.0 / s.sqrt() })
            .collect();

        let draw = |rng: &mut ChaCha8Rng| -> Latent {
            match spec.mode {
                Complementarity::Xor => Latent::Pair(
                    rng.random_range(0..spec.num_classes),
                    rng.random_range(0..spec.num_classes),
                ),
                _ => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = spec.num_classes - 1;
                    for (k, &p) in prior.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    Latent::Class(pick)
                }
            }
        };

        (0..spec.n_conversations)
            .map(|k| {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                let mut latent = Latent::Class(0);
                let mut utterances = Vec::with_capacity(len);
                for i in 0..len {
                    let copied = i > 0 && rng.random::<f64>() < spec.p_ctx;
                    if !copied {
                        latent = draw(&mut rng);
                    }
                    let amp = if copied { spec.ctx_attenuation } else { 1.0 };
                    let symbols = spec.symbols_for(latent);
                    let mut feats: [Vec<f64>; 3] = Default::default();
                    for m in Modality::ALL {
                        let proto = &self.prototypes[m.index()][symbols[m.index()].unwrap_or(0)];
                        let signal = if symbols[m.index()].is_some() { amp } else { 0.0 };
                        feats[m.index()] = proto
                            .iter()
                            .map(|&p| {
                                let z: f64 = rng.sample(StandardNormal);
                                signal * p + noise[m.index()] * z
                            })
                            .collect();
                    }
                    let [s, v, t] = feats;
                    utterances.push(Utterance {
                        s,
                        v,
                        t,
                        label: spec.label_for(latent),
                    });
                }
                Conversation {
                    id: format!("conv{k:05}"),
                    speaker: format!("spk{:03}", k % spec.n_speakers),
                    split: None,
                    utterances,
                }
            })
            .collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Conversation>> {
    Ok(SyntheticGenerator::new(spec.clone())?.generate())
}
