//! Training loops: MSE training with variable-length inputs, discriminator
//! pretraining, the adversarial fine-tuning loop, checkpointing, and metric
//! logging.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoDataset;
use crate::error::{PgnError, Result};
use crate::loss::{combined_generator_loss, discriminator_loss, generator_adversarial_loss};
use crate::models::{
    control_forward, discriminator_score, generator_predict, ControlModel, ControlRefs,
    ControlVariant, DiscriminatorModel, GeneratorModel, GeneratorRefs, CONTROL_SEQ_LEN,
    MLP_DEFAULT_HIDDEN,
};
use crate::nn::ModelSpec;
use crate::optim::{OptimizerKind, OptimizerState};
use crate::tensor::{Graph, TensorData, TensorRef};

// ---------------------------------------------------------------------------
// config

/// Flat training configuration. Serialized as `key=value` lines
/// (one pair per line, `#` comments).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// "pgn" or a control-variant tag
    pub model: String,
    /// "balls" or "objects": selects the architecture and input protocol
    pub dataset: String,
    /// LSTM hidden size for the objects config (balls is fixed at 1568)
    pub hidden: usize,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub out_dir: PathBuf,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub input_len_min: usize,
    pub input_len_max: usize,
    /// fixed input length used for validation-set evaluation
    pub val_input_len: usize,
    pub lr: f64,
    pub d_lr: f64,
    pub d_momentum: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: "pgn".into(),
            dataset: "balls".into(),
            hidden: 256,
            train_path: PathBuf::from("train.pgnv"),
            val_path: PathBuf::from("val.pgnv"),
            out_dir: PathBuf::from("out"),
            batch_size: 16,
            epochs: 50,
            lambda: 0.0002,
            input_len_min: 5,
            input_len_max: 15,
            val_input_len: 10,
            lr: 0.001,
            d_lr: 0.01,
            d_momentum: 0.5,
            seed: 0,
            checkpoint_every: 5,
            patience: 5,
        }
    }
}

impl TrainConfig {
    /// Protocol defaults for the objects experiment (fixed 5-frame inputs).
    pub fn objects_defaults(mut self) -> Self {
        self.dataset = "objects".into();
        self.input_len_min = 5;
        self.input_len_max = 5;
        self.val_input_len = 5;
        self.epochs = 150;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(PgnError::Arg("lambda must be >= 0".into()));
        }
        if self.input_len_min == 0 || self.input_len_min > self.input_len_max {
            return Err(PgnError::Arg(format!(
                "invalid input length range [{}, {}]",
                self.input_len_min, self.input_len_max
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(PgnError::Arg("batch_size and epochs must be > 0".into()));
        }
        if self.model != "pgn" {
            ControlVariant::parse(&self.model)?;
        }
        if self.dataset != "balls" && self.dataset != "objects" && self.dataset != "tiny" {
            return Err(PgnError::Arg(format!("unknown dataset {:?}", self.dataset)));
        }
        Ok(())
    }

    /// The architecture implied by the dataset field.
    pub fn model_spec(&self) -> ModelSpec {
        match self.dataset.as_str() {
            "balls" => ModelSpec::balls(),
            "tiny" => ModelSpec::tiny(),
            _ => ModelSpec::objects(self.hidden),
        }
    }

    /// Canonical `key=value` rendering (sorted keys).
    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("model", self.model.clone());
        m.insert("dataset", self.dataset.clone());
        m.insert("hidden", self.hidden.to_string());
        m.insert("train_path", self.train_path.display().to_string());
        m.insert("val_path", self.val_path.display().to_string());
        m.insert("out_dir", self.out_dir.display().to_string());
        m.insert("batch_size", self.batch_size.to_string());
        m.insert("epochs", self.epochs.to_string());
        m.insert("lambda", self.lambda.to_string());
        m.insert("input_len_min", self.input_len_min.to_string());
        m.insert("input_len_max", self.input_len_max.to_string());
        m.insert("val_input_len", self.val_input_len.to_string());
        m.insert("lr", self.lr.to_string());
        m.insert("d_lr", self.d_lr.to_string());
        m.insert("d_momentum", self.d_momentum.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("checkpoint_every", self.checkpoint_every.to_string());
        m.insert("patience", self.patience.to_string());
        m.iter()
            .map(|(k, v)| format!("{}={}\n", k, v))
            .collect()
    }

    /// Parse `key=value` lines over the defaults; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut saw_dataset_objects = false;
        // first pass: dataset switch changes the protocol defaults
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some(v) = line.strip_prefix("dataset=") {
                if v.trim() == "objects" {
                    saw_dataset_objects = true;
                }
            }
        }
        if saw_dataset_objects {
            cfg = cfg.objects_defaults();
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PgnError::Format(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| PgnError::Format(format!("config key {}: bad value {:?}", k, v)))
        }
        match k {
            "model" => self.model = v.to_string(),
            "dataset" => self.dataset = v.to_string(),
            "hidden" => self.hidden = num(k, v)?,
            "train_path" => self.train_path = PathBuf::from(v),
            "val_path" => self.val_path = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "batch_size" => self.batch_size = num(k, v)?,
            "epochs" => self.epochs = num(k, v)?,
            "lambda" => self.lambda = num(k, v)?,
            "input_len_min" => self.input_len_min = num(k, v)?,
            "input_len_max" => self.input_len_max = num(k, v)?,
            "val_input_len" => self.val_input_len = num(k, v)?,
            "lr" => self.lr = num(k, v)?,
            "d_lr" => self.d_lr = num(k, v)?,
            "d_momentum" => self.d_momentum = num(k, v)?,
            "seed" => self.seed = num(k, v)?,
            "checkpoint_every" => self.checkpoint_every = num(k, v)?,
            "patience" => self.patience = num(k, v)?,
            other => return Err(PgnError::Format(format!("unknown config key {:?}", other))),
        }
        Ok(())
    }

    /// FNV-1a over the canonical rendering.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_kv().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<(u32, String, String, f64)>,
}

impl MetricsLog {
    pub fn push(&mut self, epoch: u32, split: &str, metric: &str, value: f64) {
        self.rows.push((epoch, split.into(), metric.into(), value));
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,metric,value\n");
        for (e, sp, m, v) in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", e, sp, m, v));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn get(&self, epoch: u32, split: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(e, sp, m, _)| *e == epoch && sp == split && m == metric)
            .map(|(_, _, _, v)| *v)
    }
}

// ---------------------------------------------------------------------------
// checkpoints

const CKPT_MAGIC: &[u8; 4] = b"PGNC";
const CKPT_VERSION: u32 = 1;

/// Serializable ChaCha8 state (seed, stream, word position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Which model a checkpoint holds, with its layer specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckpointModel {
    Generator { spec: ModelSpec },
    Discriminator { spec: ModelSpec, mlp_hidden: Vec<usize> },
    Control { variant: ControlVariant, spec: ModelSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: CheckpointModel,
    optimizer: Option<OptimizerKind>,
    rng: RngState,
    manifest: Vec<(String, Vec<usize>)>,
    has_accum: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: u32,
    pub config_hash: u64,
    pub model: CheckpointModel,
    pub params: Vec<(String, TensorData<f32>)>,
    pub optimizer: Option<OptimizerKind>,
    pub accum: Option<Vec<Vec<f32>>>,
    pub rng: RngState,
}

fn snapshot_params(named: Vec<(String, &TensorData<f32>)>) -> Vec<(String, TensorData<f32>)> {
    named.into_iter().map(|(n, t)| (n, t.clone())).collect()
}

impl Checkpoint {
    pub fn from_generator(
        m: &GeneratorModel<f32>,
        epoch: u32,
        config_hash: u64,
        opt: Option<&OptimizerState<f32>>,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            epoch,
            config_hash,
            model: CheckpointModel::Generator { spec: m.spec.clone() },
            params: snapshot_params(m.params()),
            optimizer: opt.map(|o| o.kind),
            accum: opt.map(|o| o.accum.clone()),
            rng: RngState::capture(rng),
        }
    }

    pub fn from_discriminator(
        m: &DiscriminatorModel<f32>,
        epoch: u32,
        config_hash: u64,
        opt: Option<&OptimizerState<f32>>,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            epoch,
            config_hash,
            model: CheckpointModel::Discriminator {
                spec: m.spec.clone(),
                mlp_hidden: m.mlp_spec.hidden.clone(),
            },
            params: snapshot_params(m.params()),
            optimizer: opt.map(|o| o.kind),
            accum: opt.map(|o| o.accum.clone()),
            rng: RngState::capture(rng),
        }
    }

    pub fn from_control(
        m: &ControlModel<f32>,
        epoch: u32,
        config_hash: u64,
        opt: Option<&OptimizerState<f32>>,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            epoch,
            config_hash,
            model: CheckpointModel::Control {
                variant: m.variant,
                spec: m.spec.clone(),
            },
            params: snapshot_params(m.params()),
            optimizer: opt.map(|o| o.kind),
            accum: opt.map(|o| o.accum.clone()),
            rng: RngState::capture(rng),
        }
    }

    fn load_named(&self, target: Vec<(String, &mut TensorData<f32>)>) -> Result<()> {
        if target.len() != self.params.len() {
            return Err(PgnError::Format(format!(
                "checkpoint has {} params, model expects {}",
                self.params.len(),
                target.len()
            )));
        }
        for ((name, dst), (cname, src)) in target.into_iter().zip(&self.params) {
            if &name != cname {
                return Err(PgnError::Format(format!(
                    "checkpoint param {:?} does not match model param {:?}",
                    cname, name
                )));
            }
            if dst.shape != src.shape {
                return Err(PgnError::Format(format!(
                    "checkpoint param {:?}: shape {:?} != {:?}",
                    name, src.shape, dst.shape
                )));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    pub fn to_generator(&self) -> Result<GeneratorModel<f32>> {
        let CheckpointModel::Generator { spec } = &self.model else {
            return Err(PgnError::Format("checkpoint does not hold a generator".into()));
        };
        let mut m = GeneratorModel::init(&mut ChaCha8Rng::seed_from_u64(0), spec)?;
        self.load_named(m.params_mut())?;
        Ok(m)
    }

    pub fn to_discriminator(&self) -> Result<DiscriminatorModel<f32>> {
        let CheckpointModel::Discriminator { spec, mlp_hidden } = &self.model else {
            return Err(PgnError::Format("checkpoint does not hold a discriminator".into()));
        };
        let mut m = DiscriminatorModel::init(&mut ChaCha8Rng::seed_from_u64(0), spec, mlp_hidden)?;
        self.load_named(m.params_mut())?;
        Ok(m)
    }

    pub fn to_control(&self) -> Result<ControlModel<f32>> {
        let CheckpointModel::Control { variant, spec } = &self.model else {
            return Err(PgnError::Format("checkpoint does not hold a control model".into()));
        };
        let mut m = ControlModel::init(&mut ChaCha8Rng::seed_from_u64(0), *variant, spec)?;
        self.load_named(m.params_mut())?;
        Ok(m)
    }

    pub fn optimizer_state(&self) -> Option<OptimizerState<f32>> {
        match (self.optimizer, &self.accum) {
            (Some(kind), Some(accum)) => Some(OptimizerState {
                kind,
                accum: accum.clone(),
            }),
            _ => None,
        }
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let meta = CheckpointMeta {
        model: ck.model.clone(),
        optimizer: ck.optimizer,
        rng: ck.rng.clone(),
        manifest: ck
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape.clone()))
            .collect(),
        has_accum: ck.accum.is_some(),
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| PgnError::Format(format!("checkpoint meta encode: {}", e)))?;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&ck.epoch.to_le_bytes())?;
    w.write_all(&ck.config_hash.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in &ck.params {
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(accum) = &ck.accum {
        for a in accum {
            for &v in a {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let need = |off: usize, n: usize| -> Result<&[u8]> {
        buf.get(off..off + n)
            .ok_or_else(|| PgnError::Format("truncated checkpoint".into()))
    };
    if need(0, 4)? != CKPT_MAGIC {
        return Err(PgnError::Format(format!("{}: bad checkpoint magic", path.display())));
    }
    let version = u32::from_le_bytes(need(4, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(PgnError::Format(format!("unsupported checkpoint version {}", version)));
    }
    let epoch = u32::from_le_bytes(need(8, 4)?.try_into().unwrap());
    let config_hash = u64::from_le_bytes(need(12, 8)?.try_into().unwrap());
    let json_len = u32::from_le_bytes(need(20, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(need(24, json_len)?)
        .map_err(|e| PgnError::Format(format!("checkpoint meta decode: {}", e)))?;
    let mut off = 24 + json_len;
    let read_f32s = |off: &mut usize, n: usize| -> Result<Vec<f32>> {
        let raw = buf
            .get(*off..*off + 4 * n)
            .ok_or_else(|| PgnError::Format("truncated checkpoint payload".into()))?;
        *off += 4 * n;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mut params = Vec::with_capacity(meta.manifest.len());
    for (name, shape) in &meta.manifest {
        let n: usize = shape.iter().product();
        let data = read_f32s(&mut off, n)?;
        params.push((name.clone(), TensorData::new(shape.clone(), data)?));
    }
    let accum = if meta.has_accum {
        let mut a = Vec::with_capacity(meta.manifest.len());
        for (_, shape) in &meta.manifest {
            a.push(read_f32s(&mut off, shape.iter().product())?);
        }
        Some(a)
    } else {
        None
    };
    if off != buf.len() {
        return Err(PgnError::Format("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint {
        epoch,
        config_hash,
        model: meta.model,
        params,
        optimizer: meta.optimizer,
        accum,
        rng: meta.rng,
    })
}

// ---------------------------------------------------------------------------
// batching

/// Batched frame tensors [B,1,H,W] for steps t0..t0+len of the listed
/// sequences, plus the step-(t0+len) target.
pub fn make_batch(
    ds: &VideoDataset,
    idxs: &[usize],
    t0: usize,
    len: usize,
) -> Result<(Vec<TensorData<f32>>, TensorData<f32>)> {
    if t0 + len >= ds.t {
        return Err(PgnError::Arg(format!(
            "window [{}, {}] exceeds sequence length {}",
            t0,
            t0 + len,
            ds.t
        )));
    }
    let frames = (0..len)
        .map(|s| gather_frames(ds, idxs, t0 + s))
        .collect();
    Ok((frames, gather_frames(ds, idxs, t0 + len)))
}

fn gather_frames(ds: &VideoDataset, idxs: &[usize], t: usize) -> TensorData<f32> {
    let fl = ds.frame_len();
    let mut data = Vec::with_capacity(idxs.len() * fl);
    for &s in idxs {
        data.extend_from_slice(ds.frame(s, t));
    }
    TensorData {
        shape: vec![idxs.len(), ds.channels, ds.h, ds.w],
        data,
    }
}

/// Deterministic epoch plan: shuffled sequence order cut into batches.
fn epoch_batches(rng: &mut ChaCha8Rng, n_seq: usize, batch_size: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n_seq).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// model wrapper shared by the MSE loop

/// A trainable model under the MSE objective.
#[derive(Debug)]
pub enum TrainModel {
    Gen(GeneratorModel<f32>),
    Control(ControlModel<f32>),
}

enum TrainRefs {
    Gen(GeneratorRefs),
    Control(ControlRefs),
}

impl TrainModel {
    pub fn init(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = cfg.model_spec();
        if cfg.model == "pgn" {
            Ok(TrainModel::Gen(GeneratorModel::init(rng, &spec)?))
        } else {
            Ok(TrainModel::Control(ControlModel::init(
                rng,
                ControlVariant::parse(&cfg.model)?,
                &spec,
            )?))
        }
    }

    fn bind(&self, g: &mut Graph<f32>, trainable: bool) -> (TrainRefs, Vec<TensorRef>) {
        match self {
            TrainModel::Gen(m) => {
                let (r, o) = m.bind(g, trainable);
                (TrainRefs::Gen(r), o)
            }
            TrainModel::Control(m) => {
                let (r, o) = m.bind(g, trainable);
                (TrainRefs::Control(r), o)
            }
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut TensorData<f32>)> {
        match self {
            TrainModel::Gen(m) => m.params_mut(),
            TrainModel::Control(m) => m.params_mut(),
        }
    }

    fn params(&self) -> Vec<(String, &TensorData<f32>)> {
        match self {
            TrainModel::Gen(m) => m.params(),
            TrainModel::Control(m) => m.params(),
        }
    }

    fn checkpoint(
        &self,
        epoch: u32,
        hash: u64,
        opt: Option<&OptimizerState<f32>>,
        rng: &ChaCha8Rng,
    ) -> Checkpoint {
        match self {
            TrainModel::Gen(m) => Checkpoint::from_generator(m, epoch, hash, opt, rng),
            TrainModel::Control(m) => Checkpoint::from_control(m, epoch, hash, opt, rng),
        }
    }

    /// Inputs and reconstruction/prediction target for one batch.
    /// `input_len` applies to the generator; controls use their own arity.
    /// For stochastic-frame variants the draw comes from `rng`.
    fn batch_io(
        &self,
        ds: &VideoDataset,
        idxs: &[usize],
        input_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<TensorData<f32>>, TensorData<f32>)> {
        match self {
            TrainModel::Gen(_) => make_batch(ds, idxs, 0, input_len),
            TrainModel::Control(m) => match m.variant {
                ControlVariant::AeLstmDynamic => {
                    if ds.t < CONTROL_SEQ_LEN {
                        return Err(PgnError::Arg("sequence shorter than 6 frames".into()));
                    }
                    let frames: Vec<_> =
                        (0..CONTROL_SEQ_LEN).map(|t| gather_frames(ds, idxs, t)).collect();
                    let target = gather_frames(ds, idxs, CONTROL_SEQ_LEN - 1);
                    Ok((frames, target))
                }
                ControlVariant::AeLstmStatic => {
                    let t = rng.gen_range(0..ds.t);
                    let frame = gather_frames(ds, idxs, t);
                    Ok((vec![frame.clone(); CONTROL_SEQ_LEN], frame))
                }
                ControlVariant::AeFcEqWeights | ControlVariant::AeFcEqUnits => {
                    let t = rng.gen_range(0..ds.t);
                    let frame = gather_frames(ds, idxs, t);
                    Ok((vec![frame.clone()], frame))
                }
            },
        }
    }

    /// Deterministic validation version of `batch_io` (no rng draws).
    fn val_io(
        &self,
        ds: &VideoDataset,
        idxs: &[usize],
        input_len: usize,
    ) -> Result<(Vec<TensorData<f32>>, TensorData<f32>)> {
        match self {
            TrainModel::Gen(_) => make_batch(ds, idxs, 0, input_len),
            TrainModel::Control(m) => match m.variant {
                ControlVariant::AeLstmDynamic => {
                    let frames: Vec<_> =
                        (0..CONTROL_SEQ_LEN).map(|t| gather_frames(ds, idxs, t)).collect();
                    let target = gather_frames(ds, idxs, CONTROL_SEQ_LEN - 1);
                    Ok((frames, target))
                }
                ControlVariant::AeLstmStatic => {
                    let frame = gather_frames(ds, idxs, 0);
                    Ok((vec![frame.clone(); CONTROL_SEQ_LEN], frame))
                }
                ControlVariant::AeFcEqWeights | ControlVariant::AeFcEqUnits => {
                    let frame = gather_frames(ds, idxs, 0);
                    Ok((vec![frame.clone()], frame))
                }
            },
        }
    }

    fn forward(
        &self,
        g: &mut Graph<f32>,
        refs: &TrainRefs,
        inputs: &[TensorRef],
    ) -> Result<TensorRef> {
        match (self, refs) {
            (TrainModel::Gen(m), TrainRefs::Gen(r)) => generator_predict(g, &m.spec, r, inputs),
            (TrainModel::Control(m), TrainRefs::Control(r)) => control_forward(g, m, r, inputs),
            _ => Err(PgnError::Contract("mismatched model refs".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// MSE training

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TrainModel,
    pub metrics: MetricsLog,
    pub best_epoch: u32,
    pub best_val: f64,
    pub checkpoint_paths: Vec<PathBuf>,
}

/// Mean per-frame pixel-sum squared error of `model` on `ds`.
pub fn eval_mse(
    model: &TrainModel,
    ds: &VideoDataset,
    input_len: usize,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idxs: Vec<usize> = (0..ds.n_seq).collect();
    for chunk in idxs.chunks(batch_size) {
        let (inputs, target) = model.val_io(ds, chunk, input_len)?;
        let mut g: Graph<f32> = Graph::new();
        let (refs, _) = model.bind(&mut g, false);
        let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
        let pred = model.forward(&mut g, &refs, &irefs)?;
        let tref = g.input(&target);
        let loss = g.mse(pred, tref)?;
        total += g.value(loss)[0] as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn step_params(
    model: &mut TrainModel,
    opt: &mut OptimizerState<f32>,
    grads: &[Vec<f32>],
) -> Result<()> {
    let mut params: Vec<&mut TensorData<f32>> =
        model.params_mut().into_iter().map(|(_, t)| t).collect();
    opt.step(&mut params, grads)
}

/// MSE training loop with per-epoch random input length (generator),
/// early stopping, divergence abort, and checkpointing.
pub fn train_mse(
    cfg: &TrainConfig,
    train: &VideoDataset,
    val: &VideoDataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = TrainModel::init(cfg, &mut rng)?;
    train_mse_from(cfg, model, train, val)
}

pub fn train_mse_from(
    cfg: &TrainConfig,
    mut model: TrainModel,
    train: &VideoDataset,
    val: &VideoDataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let hash = cfg.hash();
    // dedicated stream for loop-level draws, distinct from init (stream 0)
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut opt = {
        let params = model.params();
        let refs: Vec<&TensorData<f32>> = params.iter().map(|(_, t)| *t).collect();
        OptimizerState::new(OptimizerKind::rmsprop(cfg.lr), &refs)
    };
    let mut metrics = MetricsLog::default();
    let mut ckpt_paths = Vec::new();
    let save = |model: &TrainModel,
                    opt: &OptimizerState<f32>,
                    rng: &ChaCha8Rng,
                    epoch: u32,
                    paths: &mut Vec<PathBuf>|
     -> Result<()> {
        let p = cfg.out_dir.join(format!("ckpt-{:04}.pgnc", epoch));
        save_checkpoint(&p, &model.checkpoint(epoch, hash, Some(opt), rng))?;
        paths.push(p);
        Ok(())
    };
    // epoch-0 (pre-training) checkpoint for the analysis sweeps
    save(&model, &opt, &rng, 0, &mut ckpt_paths)?;
    let val_len = cfg.val_input_len.min(val.t - 1);
    let epoch0_val = match eval_mse(&model, val, val_len, cfg.batch_size) {
        Ok(v) if v.is_finite() => v,
        other => {
            metrics.write_csv(&cfg.out_dir.join("metrics.csv"))?;
            return Err(PgnError::Diverged {
                epoch: 0,
                detail: format!(
                    "validation loss not finite at epoch 0 ({:?}); epoch-0 checkpoint retained",
                    other.err()
                ),
            });
        }
    };
    metrics.push(0, "val", "mse", epoch0_val);

    let mut best_val = epoch0_val;
    let mut best_epoch = 0u32;
    let mut since_best = 0usize;
    let best_path = cfg.out_dir.join("best.pgnc");
    save_checkpoint(&best_path, &model.checkpoint(0, hash, Some(&opt), &rng))?;

    for epoch in 1..=cfg.epochs as u32 {
        let input_len = if cfg.input_len_min == cfg.input_len_max {
            cfg.input_len_min
        } else {
            rng.gen_range(cfg.input_len_min..=cfg.input_len_max)
        }
        .min(train.t - 1);
        let batches = epoch_batches(&mut rng, train.n_seq, cfg.batch_size);
        let mut epoch_loss = 0.0;
        let mut n = 0usize;
        for idxs in &batches {
            let (inputs, target) = model.batch_io(train, idxs, input_len, &mut rng)?;
            let loss = match run_mse_batch(&mut model, &mut opt, &inputs, &target) {
                Ok(l) => l,
                Err(e) => {
                    metrics.write_csv(&cfg.out_dir.join("metrics.csv"))?;
                    return Err(PgnError::Diverged {
                        epoch: epoch as usize,
                        detail: format!("{} (last good checkpoint: epoch {})", e, best_epoch),
                    });
                }
            };
            epoch_loss += loss * idxs.len() as f64;
            n += idxs.len();
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = match eval_mse(&model, val, val_len, cfg.batch_size) {
            Ok(v) => v,
            Err(e) => {
                metrics.write_csv(&cfg.out_dir.join("metrics.csv"))?;
                return Err(PgnError::Diverged {
                    epoch: epoch as usize,
                    detail: format!("{} (last good checkpoint: epoch {})", e, best_epoch),
                });
            }
        };
        metrics.push(epoch, "train", "mse", train_loss);
        metrics.push(epoch, "train", "input_len", input_len as f64);
        metrics.push(epoch, "val", "mse", val_loss);
        if !val_loss.is_finite() {
            metrics.write_csv(&cfg.out_dir.join("metrics.csv"))?;
            return Err(PgnError::Diverged {
                epoch: epoch as usize,
                detail: format!("non-finite validation loss (last good checkpoint: epoch {})", best_epoch),
            });
        }
        if cfg.checkpoint_every > 0 && epoch as usize % cfg.checkpoint_every == 0 {
            save(&model, &opt, &rng, epoch, &mut ckpt_paths)?;
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            save_checkpoint(&best_path, &model.checkpoint(epoch, hash, Some(&opt), &rng))?;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                metrics.push(epoch, "train", "early_stop", 1.0);
                break;
            }
        }
    }
    metrics.write_csv(&cfg.out_dir.join("metrics.csv"))?;
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
        best_val,
        checkpoint_paths: ckpt_paths,
    })
}

/// Forward + backward + optimizer update for one MSE batch.
fn run_mse_batch(
    model: &mut TrainModel,
    opt: &mut OptimizerState<f32>,
    inputs: &[TensorData<f32>],
    target: &TensorData<f32>,
) -> Result<f64> {
    let (loss_val, grads) = {
        let mut g: Graph<f32> = Graph::new();
        let (refs, ordered) = model.bind(&mut g, true);
        let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
        let pred = model.forward(&mut g, &refs, &irefs)?;
        let tref = g.input(target);
        let loss = g.mse(pred, tref)?;
        let lv = g.value(loss)[0] as f64;
        if !lv.is_finite() {
            return Err(PgnError::Numeric(format!("non-finite training loss {}", lv)));
        }
        g.backward(loss)?;
        let grads: Vec<Vec<f32>> = ordered
            .iter()
            .map(|&r| g.grad(r).map(|s| s.to_vec()).unwrap_or_default())
            .collect();
        (lv, grads)
    };
    step_params(model, opt, &grads)?;
    Ok(loss_val)
}

// ---------------------------------------------------------------------------
// discriminator pretraining

/// Fakes for a batch: the generator's predictions (values only, detached).
fn generator_fakes(
    gen: &GeneratorModel<f32>,
    inputs: &[TensorData<f32>],
) -> Result<TensorData<f32>> {
    let mut g: Graph<f32> = Graph::new();
    let (refs, _) = gen.bind(&mut g, false);
    let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
    let out = generator_predict(&mut g, &gen.spec, &refs, &irefs)?;
    Ok(TensorData {
        shape: g.shape(out).to_vec(),
        data: g.value(out).to_vec(),
    })
}

/// Real-vs-fake accuracy of the discriminator on a dataset.
pub fn discriminator_accuracy(
    d: &DiscriminatorModel<f32>,
    gen: &GeneratorModel<f32>,
    ds: &VideoDataset,
    input_len: usize,
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let idxs: Vec<usize> = (0..ds.n_seq).collect();
    for chunk in idxs.chunks(batch_size) {
        let (inputs, real) = make_batch(ds, chunk, 0, input_len)?;
        let fake = generator_fakes(gen, &inputs)?;
        let mut g: Graph<f32> = Graph::new();
        let (refs, _) = d.bind(&mut g, false);
        let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
        let rr = g.input(&real);
        let fr = g.input(&fake);
        let d_real = discriminator_score(&mut g, d, &refs, &irefs, rr)?;
        let d_fake = discriminator_score(&mut g, d, &refs, &irefs, fr)?;
        correct += g.value(d_real).iter().filter(|&&p| p > 0.5).count();
        correct += g.value(d_fake).iter().filter(|&&p| p < 0.5).count();
        total += 2 * chunk.len();
    }
    Ok(correct as f64 / total as f64)
}

fn discriminator_batch_step(
    d: &mut DiscriminatorModel<f32>,
    d_opt: &mut OptimizerState<f32>,
    inputs: &[TensorData<f32>],
    real: &TensorData<f32>,
    fake: &TensorData<f32>,
) -> Result<(f64, f64)> {
    let (loss_val, mean_fake, grads) = {
        let mut g: Graph<f32> = Graph::new();
        let (refs, ordered) = d.bind(&mut g, true);
        let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
        let rr = g.input(real);
        let fr = g.input(fake);
        let d_real = discriminator_score(&mut g, d, &refs, &irefs, rr)?;
        let d_fake = discriminator_score(&mut g, d, &refs, &irefs, fr)?;
        let loss = discriminator_loss(&mut g, d_real, d_fake)?;
        let lv = g.value(loss)[0] as f64;
        let fakes = g.value(d_fake);
        let mf = fakes.iter().map(|&v| v as f64).sum::<f64>() / fakes.len() as f64;
        g.backward(loss)?;
        let grads: Vec<Vec<f32>> = ordered
            .iter()
            .map(|&r| g.grad(r).map(|s| s.to_vec()).unwrap_or_default())
            .collect();
        (lv, mf, grads)
    };
    let mut params: Vec<&mut TensorData<f32>> =
        d.params_mut().into_iter().map(|(_, t)| t).collect();
    d_opt.step(&mut params, &grads)?;
    Ok((loss_val, mean_fake))
}

pub struct PretrainOutcome {
    pub model: DiscriminatorModel<f32>,
    pub metrics: MetricsLog,
    pub reached_threshold: bool,
    pub final_accuracy: f64,
}

/// Train a fresh discriminator against a frozen generator until it reaches
/// 60% held-out accuracy or the epoch cap.
pub fn pretrain_discriminator(
    cfg: &TrainConfig,
    gen: &GeneratorModel<f32>,
    train: &VideoDataset,
    val: &VideoDataset,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut d = DiscriminatorModel::init(&mut rng, &gen.spec, &default_mlp_hidden(&gen.spec))?;
    let mut d_opt = {
        let params = d.params();
        let refs: Vec<&TensorData<f32>> = params.iter().map(|(_, t)| *t).collect();
        OptimizerState::new(OptimizerKind::sgd_momentum(cfg.d_lr, cfg.d_momentum), &refs)
    };
    let mut metrics = MetricsLog::default();
    let input_len = cfg.val_input_len.min(train.t - 1).max(1);
    let mut reached = false;
    let mut acc = 0.0;
    for epoch in 1..=cfg.epochs as u32 {
        let batches = epoch_batches(&mut rng, train.n_seq, cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for idxs in &batches {
            let (inputs, real) = make_batch(train, idxs, 0, input_len)?;
            let fake = generator_fakes(gen, &inputs)?;
            let (l, _) = discriminator_batch_step(&mut d, &mut d_opt, &inputs, &real, &fake)?;
            loss_sum += l * idxs.len() as f64;
            n += idxs.len();
        }
        acc = discriminator_accuracy(&d, gen, val, input_len, cfg.batch_size)?;
        metrics.push(epoch, "train", "d_loss", loss_sum / n as f64);
        metrics.push(epoch, "val", "d_accuracy", acc);
        if acc >= 0.6 {
            reached = true;
            break;
        }
    }
    if !reached {
        metrics.push(cfg.epochs as u32, "val", "warning_below_threshold", 1.0);
    }
    metrics.write_csv(&cfg.out_dir.join("pretrain-metrics.csv"))?;
    let ck = Checkpoint::from_discriminator(&d, cfg.epochs as u32, cfg.hash(), Some(&d_opt), &rng);
    save_checkpoint(&cfg.out_dir.join("discriminator.pgnc"), &ck)?;
    Ok(PretrainOutcome {
        model: d,
        metrics,
        reached_threshold: reached,
        final_accuracy: acc,
    })
}

/// MLP head widths scaled down for narrow models.
pub fn default_mlp_hidden(spec: &ModelSpec) -> Vec<usize> {
    if spec.hidden >= 512 {
        MLP_DEFAULT_HIDDEN.to_vec()
    } else {
        vec![spec.hidden.max(8), (spec.hidden / 2).max(4)]
    }
}

// ---------------------------------------------------------------------------
// adversarial training

pub struct AdversarialOutcome {
    pub generator: GeneratorModel<f32>,
    pub discriminator: DiscriminatorModel<f32>,
    pub metrics: MetricsLog,
    pub saturation_events: usize,
}

/// Alternate one discriminator step and one generator step per batch.
/// The generator minimizes MSE + λ·AL; fakes are detached for the D step and
/// D parameters are frozen (bound as inputs) during the G step.
pub fn train_adversarial(
    cfg: &TrainConfig,
    mut gen: GeneratorModel<f32>,
    mut d: DiscriminatorModel<f32>,
    train: &VideoDataset,
    val: &VideoDataset,
) -> Result<AdversarialOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let hash = cfg.hash();
    // generator-side rng uses the same stream as train_mse so λ=0 reduces to
    // the plain MSE trajectory; the discriminator draws nothing from it
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut g_opt = {
        let params = gen.params();
        let refs: Vec<&TensorData<f32>> = params.iter().map(|(_, t)| *t).collect();
        OptimizerState::new(OptimizerKind::rmsprop(cfg.lr), &refs)
    };
    let mut d_opt = {
        let params = d.params();
        let refs: Vec<&TensorData<f32>> = params.iter().map(|(_, t)| *t).collect();
        OptimizerState::new(OptimizerKind::sgd_momentum(cfg.d_lr, cfg.d_momentum), &refs)
    };
    let mut metrics = MetricsLog::default();
    let mut saturation_events = 0usize;
    let val_len = cfg.val_input_len.min(val.t - 1);

    for epoch in 1..=cfg.epochs as u32 {
        let input_len = if cfg.input_len_min == cfg.input_len_max {
            cfg.input_len_min
        } else {
            rng.gen_range(cfg.input_len_min..=cfg.input_len_max)
        }
        .min(train.t - 1);
        let batches = epoch_batches(&mut rng, train.n_seq, cfg.batch_size);
        let (mut mse_sum, mut al_sum, mut ld_sum) = (0.0, 0.0, 0.0);
        let mut n = 0usize;
        let mut sat_all_epoch = true;
        for idxs in &batches {
            let (inputs, real) = make_batch(train, idxs, 0, input_len)?;
            // --- discriminator step (fakes detached) ---
            let fake = generator_fakes(&gen, &inputs)?;
            let (ld, mean_fake) =
                discriminator_batch_step(&mut d, &mut d_opt, &inputs, &real, &fake)?;
            if mean_fake >= 1e-6 {
                sat_all_epoch = false;
            }
            // --- generator step (D frozen) ---
            let (mse_v, al_v, grads) = {
                let mut g: Graph<f32> = Graph::new();
                let (grefs, ordered) = gen.bind(&mut g, true);
                let (drefs, _) = d.bind(&mut g, false);
                let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
                let pred = generator_predict(&mut g, &gen.spec, &grefs, &irefs)?;
                let tref = g.input(&real);
                let mse = g.mse(pred, tref)?;
                let d_fake = discriminator_score(&mut g, &d, &drefs, &irefs, pred)?;
                let al = generator_adversarial_loss(&mut g, d_fake)?;
                let total = combined_generator_loss(&mut g, mse, al, cfg.lambda)?;
                let (mv, av) = (g.value(mse)[0] as f64, g.value(al)[0] as f64);
                if !g.value(total)[0].is_finite() {
                    metrics.write_csv(&cfg.out_dir.join("adv-metrics.csv"))?;
                    return Err(PgnError::Diverged {
                        epoch: epoch as usize,
                        detail: "non-finite generator loss".into(),
                    });
                }
                g.backward(total)?;
                let grads: Vec<Vec<f32>> = ordered
                    .iter()
                    .map(|&r| g.grad(r).map(|s| s.to_vec()).unwrap_or_default())
                    .collect();
                (mv, av, grads)
            };
            {
                let mut params: Vec<&mut TensorData<f32>> =
                    gen.params_mut().into_iter().map(|(_, t)| t).collect();
                g_opt.step(&mut params, &grads)?;
            }
            let b = idxs.len() as f64;
            mse_sum += mse_v * b;
            al_sum += al_v * b;
            ld_sum += ld * b;
            n += idxs.len();
        }
        if sat_all_epoch {
            saturation_events += 1;
            metrics.push(epoch, "train", "saturation", 1.0);
        }
        let nf = n as f64;
        metrics.push(epoch, "train", "mse", mse_sum / nf);
        metrics.push(epoch, "train", "adv", al_sum / nf);
        metrics.push(epoch, "train", "d_loss", ld_sum / nf);
        let val_mse = {
            let tm = TrainModel::Gen(gen);
            let v = eval_mse(&tm, val, val_len, cfg.batch_size)?;
            let TrainModel::Gen(m) = tm else { unreachable!() };
            gen = m;
            v
        };
        metrics.push(epoch, "val", "mse", val_mse);
        if cfg.checkpoint_every > 0 && epoch as usize % cfg.checkpoint_every == 0 {
            let ck = Checkpoint::from_generator(&gen, epoch, hash, Some(&g_opt), &rng);
            save_checkpoint(&cfg.out_dir.join(format!("adv-ckpt-{:04}.pgnc", epoch)), &ck)?;
        }
    }
    let gck = Checkpoint::from_generator(&gen, cfg.epochs as u32, hash, Some(&g_opt), &rng);
    save_checkpoint(&cfg.out_dir.join("adv-final.pgnc"), &gck)?;
    let dck = Checkpoint::from_discriminator(&d, cfg.epochs as u32, hash, Some(&d_opt), &rng);
    save_checkpoint(&cfg.out_dir.join("adv-discriminator.pgnc"), &dck)?;
    metrics.write_csv(&cfg.out_dir.join("adv-metrics.csv"))?;
    Ok(AdversarialOutcome {
        generator: gen,
        discriminator: d,
        metrics,
        saturation_events,
    })
}
