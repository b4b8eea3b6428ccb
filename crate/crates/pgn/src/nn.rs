//! Layer stack: convolutional encoder blocks, the LSTM cell, decoder blocks
//! with nearest-neighbor upsampling, the MLP head, and parameter init.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{ActivationKind, Graph, TensorData, TensorRef};

// ---------------------------------------------------------------------------
// specs

/// conv -> relu -> max-pool block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// pool window == pool stride
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub blocks: Vec<ConvBlockSpec>,
}

impl EncoderSpec {
    /// (channels, height, width) after all blocks.
    pub fn out_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.in_ch, self.height, self.width);
        for b in &self.blocks {
            if b.in_ch != c {
                return Err(PgnError::dim(
                    "encoder_spec",
                    format!("block expects {} channels, got {}", b.in_ch, c),
                ));
            }
            if h + 2 * b.pad < b.kernel || w + 2 * b.pad < b.kernel {
                return Err(PgnError::dim("encoder_spec", "kernel larger than padded input"));
            }
            h = (h + 2 * b.pad - b.kernel) / b.stride + 1;
            w = (w + 2 * b.pad - b.kernel) / b.stride + 1;
            if b.pool > h || b.pool > w {
                return Err(PgnError::dim("encoder_spec", "pool window larger than map"));
            }
            h = (h - b.pool) / b.pool + 1;
            w = (w - b.pool) / b.pool + 1;
            c = b.out_ch;
        }
        Ok((c, h, w))
    }

    pub fn out_len(&self) -> Result<usize> {
        let (c, h, w) = self.out_shape()?;
        Ok(c * h * w)
    }
}

/// upsample -> conv block. Non-final blocks use relu, the final block uses
/// the saturating clip01 non-linearity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvBlockSpec {
    pub up: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub hidden: usize,
    /// FC from hidden to the base map; when absent, hidden must equal the
    /// flattened base size.
    pub include_fc: bool,
    /// (channels, height, width) the hidden vector reshapes to.
    pub base: (usize, usize, usize),
    pub blocks: Vec<DeconvBlockSpec>,
    /// symmetric zero-pad applied after the last block to reach frame size
    pub out_pad: usize,
}

impl DecoderSpec {
    pub fn base_len(&self) -> usize {
        self.base.0 * self.base.1 * self.base.2
    }

    pub fn out_shape(&self) -> Result<(usize, usize, usize)> {
        if !self.include_fc && self.hidden != self.base_len() {
            return Err(PgnError::dim(
                "decoder_spec",
                format!("hidden {} cannot reshape to base {:?} without FC", self.hidden, self.base),
            ));
        }
        let (mut c, mut h, mut w) = self.base;
        for b in &self.blocks {
            if b.in_ch != c {
                return Err(PgnError::dim(
                    "decoder_spec",
                    format!("block expects {} channels, got {}", b.in_ch, c),
                ));
            }
            h *= b.up;
            w *= b.up;
            if h + 2 * b.pad < b.kernel || w + 2 * b.pad < b.kernel {
                return Err(PgnError::dim("decoder_spec", "kernel larger than padded map"));
            }
            h = h + 2 * b.pad - b.kernel + 1;
            w = w + 2 * b.pad - b.kernel + 1;
            c = b.out_ch;
        }
        Ok((c, h + 2 * self.out_pad, w + 2 * self.out_pad))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_len: usize,
    pub hidden: Vec<usize>,
}

/// Complete encoder-LSTM-decoder shape description for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub frame_h: usize,
    pub frame_w: usize,
    pub hidden: usize,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
}

impl ModelSpec {
    /// 30x30 bouncing-balls configuration: the LSTM consumes the flattened
    /// 32x7x7 conv map directly and the decoder has no FC layer.
    pub fn balls() -> Self {
        let encoder = EncoderSpec {
            in_ch: 1,
            height: 30,
            width: 30,
            blocks: vec![
                ConvBlockSpec { in_ch: 1, out_ch: 16, kernel: 5, stride: 1, pad: 2, pool: 2 },
                ConvBlockSpec { in_ch: 16, out_ch: 32, kernel: 5, stride: 1, pad: 2, pool: 2 },
            ],
        };
        let decoder = DecoderSpec {
            hidden: 1568,
            include_fc: false,
            base: (32, 7, 7),
            blocks: vec![
                DeconvBlockSpec { up: 2, in_ch: 32, out_ch: 16, kernel: 5, pad: 2 },
                DeconvBlockSpec { up: 2, in_ch: 16, out_ch: 1, kernel: 5, pad: 2 },
            ],
            out_pad: 1,
        };
        ModelSpec { frame_h: 30, frame_w: 30, hidden: 1568, encoder, decoder }
    }

    /// 32x32 rotating-object configuration with an FC layer on the decoder
    /// side. `hidden` is a config field; 1024 mirrors the full-scale setup.
    pub fn objects(hidden: usize) -> Self {
        let encoder = EncoderSpec {
            in_ch: 1,
            height: 32,
            width: 32,
            blocks: vec![
                ConvBlockSpec { in_ch: 1, out_ch: 16, kernel: 5, stride: 1, pad: 2, pool: 2 },
                ConvBlockSpec { in_ch: 16, out_ch: 32, kernel: 5, stride: 1, pad: 2, pool: 2 },
            ],
        };
        let decoder = DecoderSpec {
            hidden,
            include_fc: true,
            base: (32, 8, 8),
            blocks: vec![
                DeconvBlockSpec { up: 2, in_ch: 32, out_ch: 16, kernel: 5, pad: 2 },
                DeconvBlockSpec { up: 2, in_ch: 16, out_ch: 1, kernel: 5, pad: 2 },
            ],
            out_pad: 0,
        };
        ModelSpec { frame_h: 32, frame_w: 32, hidden, encoder, decoder }
    }

    /// Tiny configuration for gradient checks (8x8 frames, narrow LSTM).
    pub fn tiny() -> Self {
        let encoder = EncoderSpec {
            in_ch: 1,
            height: 8,
            width: 8,
            blocks: vec![
                ConvBlockSpec { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, pad: 1, pool: 2 },
                ConvBlockSpec { in_ch: 2, out_ch: 4, kernel: 3, stride: 1, pad: 1, pool: 2 },
            ],
        };
        let decoder = DecoderSpec {
            hidden: 12,
            include_fc: true,
            base: (4, 2, 2),
            blocks: vec![
                DeconvBlockSpec { up: 2, in_ch: 4, out_ch: 2, kernel: 3, pad: 1 },
                DeconvBlockSpec { up: 2, in_ch: 2, out_ch: 1, kernel: 3, pad: 1 },
            ],
            out_pad: 0,
        };
        ModelSpec { frame_h: 8, frame_w: 8, hidden: 12, encoder, decoder }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.out_len()?;
        let (c, h, w) = self.decoder.out_shape()?;
        if (c, h, w) != (self.encoder.in_ch, self.frame_h, self.frame_w) {
            return Err(PgnError::dim(
                "model_spec",
                format!("decoder output ({},{},{}) != frame ({},{},{})", c, h, w, self.encoder.in_ch, self.frame_h, self.frame_w),
            ));
        }
        if self.decoder.hidden != self.hidden {
            return Err(PgnError::dim("model_spec", "decoder hidden != model hidden"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// init

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> TensorData<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-a..a))).collect();
    TensorData { shape, data }
}

// ---------------------------------------------------------------------------
// parameter containers

#[derive(Debug, Clone)]
pub struct ConvParams<T: Scalar> {
    pub kernels: TensorData<T>,
    pub bias: TensorData<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn init(rng: &mut ChaCha8Rng, b: &ConvBlockSpec) -> Self {
        let fan_in = b.in_ch * b.kernel * b.kernel;
        let fan_out = b.out_ch * b.kernel * b.kernel;
        ConvParams {
            kernels: glorot_uniform(rng, vec![b.out_ch, b.in_ch, b.kernel, b.kernel], fan_in, fan_out),
            bias: TensorData::zeros(vec![b.out_ch]),
        }
    }

    pub fn init_deconv(rng: &mut ChaCha8Rng, b: &DeconvBlockSpec) -> Self {
        let fan_in = b.in_ch * b.kernel * b.kernel;
        let fan_out = b.out_ch * b.kernel * b.kernel;
        ConvParams {
            kernels: glorot_uniform(rng, vec![b.out_ch, b.in_ch, b.kernel, b.kernel], fan_in, fan_out),
            bias: TensorData::zeros(vec![b.out_ch]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffineParams<T: Scalar> {
    pub w: TensorData<T>,
    pub b: TensorData<T>,
}

impl<T: Scalar> AffineParams<T> {
    pub fn init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Self {
        AffineParams {
            w: glorot_uniform(rng, vec![out, inp], inp, out),
            b: TensorData::zeros(vec![out]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T: Scalar> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &EncoderSpec) -> Self {
        EncoderParams {
            convs: spec.blocks.iter().map(|b| ConvParams::init(rng, b)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderParams<T: Scalar> {
    pub fc: Option<AffineParams<T>>,
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Scalar> DecoderParams<T> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &DecoderSpec) -> Self {
        let fc = spec
            .include_fc
            .then(|| AffineParams::init(rng, spec.base_len(), spec.hidden));
        DecoderParams {
            fc,
            convs: spec.blocks.iter().map(|b| ConvParams::init_deconv(rng, b)).collect(),
        }
    }
}

/// All weight matrices and biases of the LSTM cell. Input-side matrices are
/// [hidden, input], hidden-side are [hidden, hidden].
#[derive(Debug, Clone)]
pub struct LstmParams<T: Scalar> {
    pub w_xi: TensorData<T>,
    pub w_hi: TensorData<T>,
    pub w_xf: TensorData<T>,
    pub w_hf: TensorData<T>,
    pub w_xc: TensorData<T>,
    pub w_hc: TensorData<T>,
    pub w_xo: TensorData<T>,
    pub w_ho: TensorData<T>,
    pub b_i: TensorData<T>,
    pub b_f: TensorData<T>,
    pub b_c: TensorData<T>,
    pub b_o: TensorData<T>,
    pub input: usize,
    pub hidden: usize,
}

impl<T: Scalar> LstmParams<T> {
    /// Glorot weights, zero biases except the forget bias at 1.0.
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut wx = || glorot_uniform(rng, vec![hidden, input], input, hidden);
        let (w_xi, w_xf, w_xc, w_xo) = (wx(), wx(), wx(), wx());
        let mut wh = || glorot_uniform(rng, vec![hidden, hidden], hidden, hidden);
        let (w_hi, w_hf, w_hc, w_ho) = (wh(), wh(), wh(), wh());
        LstmParams {
            w_xi,
            w_hi,
            w_xf,
            w_hf,
            w_xc,
            w_hc,
            w_xo,
            w_ho,
            b_i: TensorData::zeros(vec![hidden]),
            b_f: TensorData::full(vec![hidden], T::ONE),
            b_c: TensorData::zeros(vec![hidden]),
            b_o: TensorData::zeros(vec![hidden]),
            input,
            hidden,
        }
    }

    pub fn n_params(&self) -> usize {
        4 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams<T: Scalar> {
    pub layers: Vec<AffineParams<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// hidden widths with relu, then a single-unit logistic read-out.
    pub fn init(rng: &mut ChaCha8Rng, spec: &MlpSpec) -> Self {
        let mut layers = Vec::new();
        let mut inp = spec.in_len;
        for &h in &spec.hidden {
            layers.push(AffineParams::init(rng, h, inp));
            inp = h;
        }
        layers.push(AffineParams::init(rng, 1, inp));
        MlpParams { layers }
    }
}

// ---------------------------------------------------------------------------
// graph bindings

#[derive(Debug, Clone, Copy)]
pub struct AffineRefs {
    pub w: TensorRef,
    pub b: TensorRef,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvRefs {
    pub kernels: TensorRef,
    pub bias: TensorRef,
}

#[derive(Debug, Clone)]
pub struct EncoderRefs {
    pub convs: Vec<ConvRefs>,
}

#[derive(Debug, Clone)]
pub struct DecoderRefs {
    pub fc: Option<AffineRefs>,
    pub convs: Vec<ConvRefs>,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmRefs {
    pub w_xi: TensorRef,
    pub w_hi: TensorRef,
    pub w_xf: TensorRef,
    pub w_hf: TensorRef,
    pub w_xc: TensorRef,
    pub w_hc: TensorRef,
    pub w_xo: TensorRef,
    pub w_ho: TensorRef,
    pub b_i: TensorRef,
    pub b_f: TensorRef,
    pub b_c: TensorRef,
    pub b_o: TensorRef,
}

#[derive(Debug, Clone)]
pub struct MlpRefs {
    pub layers: Vec<AffineRefs>,
}

fn bind<T: Scalar>(g: &mut Graph<T>, t: &TensorData<T>, trainable: bool) -> TensorRef {
    if trainable {
        g.param(t)
    } else {
        g.input(t)
    }
}

impl<T: Scalar> ConvParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ConvRefs {
        ConvRefs {
            kernels: bind(g, &self.kernels, trainable),
            bias: bind(g, &self.bias, trainable),
        }
    }
}

impl<T: Scalar> AffineParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> AffineRefs {
        AffineRefs {
            w: bind(g, &self.w, trainable),
            b: bind(g, &self.b, trainable),
        }
    }
}

impl<T: Scalar> EncoderParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> EncoderRefs {
        EncoderRefs {
            convs: self.convs.iter().map(|c| c.bind(g, trainable)).collect(),
        }
    }
}

impl<T: Scalar> DecoderParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> DecoderRefs {
        DecoderRefs {
            fc: self.fc.as_ref().map(|f| f.bind(g, trainable)),
            convs: self.convs.iter().map(|c| c.bind(g, trainable)).collect(),
        }
    }
}

impl<T: Scalar> LstmParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> LstmRefs {
        LstmRefs {
            w_xi: bind(g, &self.w_xi, trainable),
            w_hi: bind(g, &self.w_hi, trainable),
            w_xf: bind(g, &self.w_xf, trainable),
            w_hf: bind(g, &self.w_hf, trainable),
            w_xc: bind(g, &self.w_xc, trainable),
            w_hc: bind(g, &self.w_hc, trainable),
            w_xo: bind(g, &self.w_xo, trainable),
            w_ho: bind(g, &self.w_ho, trainable),
            b_i: bind(g, &self.b_i, trainable),
            b_f: bind(g, &self.b_f, trainable),
            b_c: bind(g, &self.b_c, trainable),
            b_o: bind(g, &self.b_o, trainable),
        }
    }
}

impl<T: Scalar> MlpParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> MlpRefs {
        MlpRefs {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// forward passes

/// (h, c) on-graph state handles.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: TensorRef,
    pub c: TensorRef,
}

/// One LSTM update:
///   i = σ(W_xi x + W_hi h + b_i)
///   f = σ(W_xf x + W_hf h + b_f)
///   c' = f⊙c + i⊙tanh(W_xc x + W_hc h + b_c)
///   o = σ(W_xo x + W_ho h + b_o)
///   h' = o⊙tanh(c')
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    x: TensorRef,
    prev: LstmState,
    p: &LstmRefs,
) -> Result<LstmState> {
    let gate = |g: &mut Graph<T>, wx, wh, b| -> Result<TensorRef> {
        let a = g.matmul(x, wx)?;
        let hh = g.matmul(prev.h, wh)?;
        let s = g.add(a, hh)?;
        g.add_bias(s, b)
    };
    let i_pre = gate(g, p.w_xi, p.w_hi, p.b_i)?;
    let i = g.activation(i_pre, ActivationKind::Logistic)?;
    let f_pre = gate(g, p.w_xf, p.w_hf, p.b_f)?;
    let f = g.activation(f_pre, ActivationKind::Logistic)?;
    let c_pre = gate(g, p.w_xc, p.w_hc, p.b_c)?;
    let c_cand = g.activation(c_pre, ActivationKind::Tanh)?;
    let fc = g.mul(f, prev.c)?;
    let ic = g.mul(i, c_cand)?;
    let c = g.add(fc, ic)?;
    let o_pre = gate(g, p.w_xo, p.w_ho, p.b_o)?;
    let o = g.activation(o_pre, ActivationKind::Logistic)?;
    let c_tanh = g.activation(c, ActivationKind::Tanh)?;
    let h = g.mul(o, c_tanh)?;
    Ok(LstmState { h, c })
}

/// Zero-valued initial state shaped to match `x` ([N] or [B,N] input rows).
pub fn lstm_zero_state<T: Scalar>(g: &mut Graph<T>, x: TensorRef, hidden: usize) -> LstmState {
    let xs = g.shape(x);
    let shape = if xs.len() == 2 {
        vec![xs[0], hidden]
    } else {
        vec![hidden]
    };
    let z = TensorData::zeros(shape);
    LstmState {
        h: g.input(&z),
        c: g.input(&z),
    }
}

/// Fold `lstm_step` over a sequence; returns every per-step state.
pub fn lstm_run<T: Scalar>(
    g: &mut Graph<T>,
    xs: &[TensorRef],
    p: &LstmRefs,
    init: Option<LstmState>,
    hidden: usize,
) -> Result<Vec<LstmState>> {
    let Some(&first) = xs.first() else {
        return Err(PgnError::Arg("lstm_run: empty input sequence".into()));
    };
    let mut state = match init {
        Some(s) => s,
        None => lstm_zero_state(g, first, hidden),
    };
    let mut states = Vec::with_capacity(xs.len());
    for &x in xs {
        state = lstm_step(g, x, state, p)?;
        states.push(state);
    }
    Ok(states)
}

/// conv->relu->pool per block, then flatten to [len] or [B,len].
pub fn encoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    frame: TensorRef,
    spec: &EncoderSpec,
    p: &EncoderRefs,
) -> Result<TensorRef> {
    let mut x = frame;
    for (b, c) in spec.blocks.iter().zip(&p.convs) {
        let conv = g.conv2d(x, c.kernels, c.bias, b.stride, b.pad)?;
        let act = g.activation(conv, ActivationKind::Relu)?;
        x = g.maxpool2d(act, b.pool, b.pool)?;
    }
    let xs = g.shape(x).to_vec();
    let shape = if xs.len() == 4 {
        vec![xs[0], xs[1] * xs[2] * xs[3]]
    } else {
        vec![xs.iter().product()]
    };
    g.reshape(x, shape)
}

/// Optional FC, reshape to the base map, upsample-conv blocks, clip01.
pub fn decoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    h: TensorRef,
    spec: &DecoderSpec,
    p: &DecoderRefs,
) -> Result<TensorRef> {
    let hs = g.shape(h).to_vec();
    let batched = hs.len() == 2;
    let mut x = h;
    if spec.include_fc {
        let fc = p.fc.as_ref().ok_or_else(|| {
            PgnError::Contract("decoder spec has FC but params do not".into())
        })?;
        let a = g.affine(x, fc.w, fc.b)?;
        x = g.activation(a, ActivationKind::Relu)?;
    }
    let (c0, h0, w0) = spec.base;
    let shape = if batched {
        vec![hs[0], c0, h0, w0]
    } else {
        vec![c0, h0, w0]
    };
    x = g.reshape(x, shape)?;
    let last = spec.blocks.len() - 1;
    for (i, (b, c)) in spec.blocks.iter().zip(&p.convs).enumerate() {
        let up = g.upsample_nearest(x, b.up)?;
        let conv = g.conv2d(up, c.kernels, c.bias, 1, b.pad)?;
        let kind = if i == last {
            ActivationKind::Clip01
        } else {
            ActivationKind::Relu
        };
        x = g.activation(conv, kind)?;
    }
    if spec.out_pad > 0 {
        x = g.pad2d(x, spec.out_pad)?;
    }
    Ok(x)
}

/// affine->relu stack with a single logistic read-out unit; returns [1]
/// per sample or [B] batched.
pub fn mlp_head<T: Scalar>(g: &mut Graph<T>, features: TensorRef, p: &MlpRefs) -> Result<TensorRef> {
    let mut x = features;
    let last = p.layers.len() - 1;
    for (i, l) in p.layers.iter().enumerate() {
        x = g.affine(x, l.w, l.b)?;
        if i < last {
            x = g.activation(x, ActivationKind::Relu)?;
        }
    }
    let out = g.activation(x, ActivationKind::Logistic)?;
    let os = g.shape(out).to_vec();
    if os.len() == 2 {
        let b = os[0];
        g.reshape(out, vec![b])
    } else {
        Ok(out)
    }
}
