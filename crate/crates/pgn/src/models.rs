//! Generator (PGN), conditional discriminator, and autoencoder control
//! models assembled from the layer primitives.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgnError, Result};
use crate::nn::{
    decoder_forward, encoder_forward, lstm_run, mlp_head, AffineParams, AffineRefs, ConvRefs,
    DecoderParams, DecoderRefs, EncoderParams, EncoderRefs, EncoderSpec, LstmParams, LstmRefs,
    MlpParams, MlpRefs, MlpSpec, ModelSpec,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorData, TensorRef};

/// Default MLP head hidden widths for the discriminator.
pub const MLP_DEFAULT_HIDDEN: [usize; 2] = [512, 256];

// ---------------------------------------------------------------------------
// generator

#[derive(Debug, Clone)]
pub struct GeneratorModel<T: Scalar> {
    pub spec: ModelSpec,
    pub encoder: EncoderParams<T>,
    pub lstm: LstmParams<T>,
    pub decoder: DecoderParams<T>,
}

#[derive(Debug, Clone)]
pub struct GeneratorRefs {
    pub encoder: EncoderRefs,
    pub lstm: LstmRefs,
    pub decoder: DecoderRefs,
}

impl<T: Scalar> GeneratorModel<T> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = EncoderParams::init(rng, &spec.encoder);
        let lstm = LstmParams::init(rng, spec.encoder.out_len()?, spec.hidden);
        let decoder = DecoderParams::init(rng, &spec.decoder);
        Ok(GeneratorModel {
            spec: spec.clone(),
            encoder,
            lstm,
            decoder,
        })
    }

    /// Named parameters in canonical (bind) order.
    pub fn params(&self) -> Vec<(String, &TensorData<T>)> {
        let mut out: Vec<(String, &TensorData<T>)> = Vec::new();
        for (i, c) in self.encoder.convs.iter().enumerate() {
            out.push((format!("enc.{}.kernels", i), &c.kernels));
            out.push((format!("enc.{}.bias", i), &c.bias));
        }
        out.extend(lstm_params(&self.lstm));
        if let Some(fc) = &self.decoder.fc {
            out.push(("dec.fc.w".into(), &fc.w));
            out.push(("dec.fc.b".into(), &fc.b));
        }
        for (i, c) in self.decoder.convs.iter().enumerate() {
            out.push((format!("dec.{}.kernels", i), &c.kernels));
            out.push((format!("dec.{}.bias", i), &c.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut TensorData<T>)> {
        let mut out: Vec<(String, &mut TensorData<T>)> = Vec::new();
        for (i, c) in self.encoder.convs.iter_mut().enumerate() {
            out.push((format!("enc.{}.kernels", i), &mut c.kernels));
            out.push((format!("enc.{}.bias", i), &mut c.bias));
        }
        out.extend(lstm_params_mut(&mut self.lstm));
        if let Some(fc) = &mut self.decoder.fc {
            out.push(("dec.fc.w".into(), &mut fc.w));
            out.push(("dec.fc.b".into(), &mut fc.b));
        }
        for (i, c) in self.decoder.convs.iter_mut().enumerate() {
            out.push((format!("dec.{}.kernels", i), &mut c.kernels));
            out.push((format!("dec.{}.bias", i), &mut c.bias));
        }
        out
    }

    /// Bind to a graph. When trainable, `ordered` lists the parameter refs in
    /// the same order as `params()` so gradients map one-to-one.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> (GeneratorRefs, Vec<TensorRef>) {
        let encoder = self.encoder.bind(g, trainable);
        let lstm = self.lstm.bind(g, trainable);
        let decoder = self.decoder.bind(g, trainable);
        let mut ordered = Vec::new();
        for c in &encoder.convs {
            ordered.push(c.kernels);
            ordered.push(c.bias);
        }
        ordered.extend(lstm_ref_list(&lstm));
        if let Some(fc) = &decoder.fc {
            ordered.push(fc.w);
            ordered.push(fc.b);
        }
        for c in &decoder.convs {
            ordered.push(c.kernels);
            ordered.push(c.bias);
        }
        (
            GeneratorRefs {
                encoder,
                lstm,
                decoder,
            },
            ordered,
        )
    }
}

fn lstm_params<T: Scalar>(p: &LstmParams<T>) -> Vec<(String, &TensorData<T>)> {
    vec![
        ("lstm.w_xi".into(), &p.w_xi),
        ("lstm.w_hi".into(), &p.w_hi),
        ("lstm.w_xf".into(), &p.w_xf),
        ("lstm.w_hf".into(), &p.w_hf),
        ("lstm.w_xc".into(), &p.w_xc),
        ("lstm.w_hc".into(), &p.w_hc),
        ("lstm.w_xo".into(), &p.w_xo),
        ("lstm.w_ho".into(), &p.w_ho),
        ("lstm.b_i".into(), &p.b_i),
        ("lstm.b_f".into(), &p.b_f),
        ("lstm.b_c".into(), &p.b_c),
        ("lstm.b_o".into(), &p.b_o),
    ]
}

fn lstm_params_mut<T: Scalar>(p: &mut LstmParams<T>) -> Vec<(String, &mut TensorData<T>)> {
    vec![
        ("lstm.w_xi".into(), &mut p.w_xi),
        ("lstm.w_hi".into(), &mut p.w_hi),
        ("lstm.w_xf".into(), &mut p.w_xf),
        ("lstm.w_hf".into(), &mut p.w_hf),
        ("lstm.w_xc".into(), &mut p.w_xc),
        ("lstm.w_hc".into(), &mut p.w_hc),
        ("lstm.w_xo".into(), &mut p.w_xo),
        ("lstm.w_ho".into(), &mut p.w_ho),
        ("lstm.b_i".into(), &mut p.b_i),
        ("lstm.b_f".into(), &mut p.b_f),
        ("lstm.b_c".into(), &mut p.b_c),
        ("lstm.b_o".into(), &mut p.b_o),
    ]
}

fn lstm_ref_list(r: &LstmRefs) -> [TensorRef; 12] {
    [
        r.w_xi, r.w_hi, r.w_xf, r.w_hf, r.w_xc, r.w_hc, r.w_xo, r.w_ho, r.b_i, r.b_f, r.b_c,
        r.b_o,
    ]
}

fn take<'a>(ps: &mut &'a [TensorRef], n: usize, what: &str) -> Result<&'a [TensorRef]> {
    if ps.len() < n {
        return Err(PgnError::Arg(format!(
            "ref list too short while rebuilding {}",
            what
        )));
    }
    let (head, tail) = ps.split_at(n);
    *ps = tail;
    Ok(head)
}

fn encoder_refs_from(spec: &EncoderSpec, ps: &mut &[TensorRef], what: &str) -> Result<EncoderRefs> {
    let mut convs = Vec::with_capacity(spec.blocks.len());
    for _ in 0..spec.blocks.len() {
        let r = take(ps, 2, what)?;
        convs.push(ConvRefs {
            kernels: r[0],
            bias: r[1],
        });
    }
    Ok(EncoderRefs { convs })
}

fn lstm_refs_from(ps: &mut &[TensorRef], what: &str) -> Result<LstmRefs> {
    let r = take(ps, 12, what)?;
    Ok(LstmRefs {
        w_xi: r[0], w_hi: r[1], w_xf: r[2], w_hf: r[3],
        w_xc: r[4], w_hc: r[5], w_xo: r[6], w_ho: r[7],
        b_i: r[8], b_f: r[9], b_c: r[10], b_o: r[11],
    })
}

/// Rebuild `GeneratorRefs` from refs listed in `params()` order; used to
/// gradient-check whole models against externally supplied parameter leaves.
pub fn generator_refs_from(spec: &ModelSpec, refs: &[TensorRef]) -> Result<GeneratorRefs> {
    let mut ps = refs;
    let encoder = encoder_refs_from(&spec.encoder, &mut ps, "generator encoder")?;
    let lstm = lstm_refs_from(&mut ps, "generator lstm")?;
    let fc = if spec.decoder.include_fc {
        let r = take(&mut ps, 2, "generator decoder fc")?;
        Some(AffineRefs { w: r[0], b: r[1] })
    } else {
        None
    };
    let mut convs = Vec::with_capacity(spec.decoder.blocks.len());
    for _ in 0..spec.decoder.blocks.len() {
        let r = take(&mut ps, 2, "generator decoder")?;
        convs.push(ConvRefs {
            kernels: r[0],
            bias: r[1],
        });
    }
    if !ps.is_empty() {
        return Err(PgnError::Arg("extra refs while rebuilding generator".into()));
    }
    Ok(GeneratorRefs {
        encoder,
        lstm,
        decoder: DecoderRefs { fc, convs },
    })
}

/// Rebuild `DiscriminatorRefs` from refs listed in `params()` order.
pub fn discriminator_refs_from(
    spec: &ModelSpec,
    mlp_spec: &MlpSpec,
    refs: &[TensorRef],
) -> Result<DiscriminatorRefs> {
    let mut ps = refs;
    let seq_encoder = encoder_refs_from(&spec.encoder, &mut ps, "discriminator seq encoder")?;
    let lstm = lstm_refs_from(&mut ps, "discriminator lstm")?;
    let frame_encoder = encoder_refs_from(&spec.encoder, &mut ps, "discriminator frame encoder")?;
    let r = take(&mut ps, 2, "discriminator frame fc")?;
    let frame_fc = AffineRefs { w: r[0], b: r[1] };
    let mut layers = Vec::with_capacity(mlp_spec.hidden.len() + 1);
    for _ in 0..mlp_spec.hidden.len() + 1 {
        let r = take(&mut ps, 2, "discriminator mlp")?;
        layers.push(AffineRefs { w: r[0], b: r[1] });
    }
    if !ps.is_empty() {
        return Err(PgnError::Arg("extra refs while rebuilding discriminator".into()));
    }
    Ok(DiscriminatorRefs {
        seq_encoder,
        lstm,
        frame_encoder,
        frame_fc,
        mlp: MlpRefs { layers },
    })
}

/// Encode every frame, run the LSTM, decode the final hidden state.
pub fn generator_predict<T: Scalar>(
    g: &mut Graph<T>,
    spec: &ModelSpec,
    refs: &GeneratorRefs,
    frames: &[TensorRef],
) -> Result<TensorRef> {
    if frames.is_empty() {
        return Err(PgnError::Arg("generator_predict: empty sequence".into()));
    }
    let mut xs = Vec::with_capacity(frames.len());
    for &f in frames {
        xs.push(encoder_forward(g, f, &spec.encoder, &refs.encoder)?);
    }
    let states = lstm_run(g, &xs, &refs.lstm, None, spec.hidden)?;
    decoder_forward(g, states.last().unwrap().h, &spec.decoder, &refs.decoder)
}

/// Convenience single-sequence prediction at the value level.
pub fn predict_frames<T: Scalar>(
    m: &GeneratorModel<T>,
    frames: &[TensorData<T>],
) -> Result<TensorData<T>> {
    let mut g = Graph::new();
    let (refs, _) = m.bind(&mut g, false);
    let frefs: Vec<TensorRef> = frames.iter().map(|f| g.input(f)).collect();
    let out = generator_predict(&mut g, &m.spec, &refs, &frefs)?;
    Ok(TensorData {
        shape: g.shape(out).to_vec(),
        data: g.value(out).to_vec(),
    })
}

// ---------------------------------------------------------------------------
// discriminator

#[derive(Debug, Clone)]
pub struct DiscriminatorModel<T: Scalar> {
    pub spec: ModelSpec,
    pub mlp_spec: MlpSpec,
    /// sequence branch (own parameters, same topology as the generator side)
    pub seq_encoder: EncoderParams<T>,
    pub lstm: LstmParams<T>,
    /// proposed-frame branch: CNN + FC to the LSTM hidden size
    pub frame_encoder: EncoderParams<T>,
    pub frame_fc: AffineParams<T>,
    pub mlp: MlpParams<T>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorRefs {
    pub seq_encoder: EncoderRefs,
    pub lstm: LstmRefs,
    pub frame_encoder: EncoderRefs,
    pub frame_fc: AffineRefs,
    pub mlp: MlpRefs,
}

impl<T: Scalar> DiscriminatorModel<T> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &ModelSpec, mlp_hidden: &[usize]) -> Result<Self> {
        spec.validate()?;
        let enc_out = spec.encoder.out_len()?;
        let mlp_spec = MlpSpec {
            in_len: 2 * spec.hidden,
            hidden: mlp_hidden.to_vec(),
        };
        Ok(DiscriminatorModel {
            spec: spec.clone(),
            mlp_spec: mlp_spec.clone(),
            seq_encoder: EncoderParams::init(rng, &spec.encoder),
            lstm: LstmParams::init(rng, enc_out, spec.hidden),
            frame_encoder: EncoderParams::init(rng, &spec.encoder),
            frame_fc: AffineParams::init(rng, spec.hidden, enc_out),
            mlp: MlpParams::init(rng, &mlp_spec),
        })
    }

    pub fn params(&self) -> Vec<(String, &TensorData<T>)> {
        let mut out: Vec<(String, &TensorData<T>)> = Vec::new();
        for (i, c) in self.seq_encoder.convs.iter().enumerate() {
            out.push((format!("seq_enc.{}.kernels", i), &c.kernels));
            out.push((format!("seq_enc.{}.bias", i), &c.bias));
        }
        out.extend(lstm_params(&self.lstm));
        for (i, c) in self.frame_encoder.convs.iter().enumerate() {
            out.push((format!("frame_enc.{}.kernels", i), &c.kernels));
            out.push((format!("frame_enc.{}.bias", i), &c.bias));
        }
        out.push(("frame_fc.w".into(), &self.frame_fc.w));
        out.push(("frame_fc.b".into(), &self.frame_fc.b));
        for (i, l) in self.mlp.layers.iter().enumerate() {
            out.push((format!("mlp.{}.w", i), &l.w));
            out.push((format!("mlp.{}.b", i), &l.b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut TensorData<T>)> {
        let mut out: Vec<(String, &mut TensorData<T>)> = Vec::new();
        for (i, c) in self.seq_encoder.convs.iter_mut().enumerate() {
            out.push((format!("seq_enc.{}.kernels", i), &mut c.kernels));
            out.push((format!("seq_enc.{}.bias", i), &mut c.bias));
        }
        out.extend(lstm_params_mut(&mut self.lstm));
        for (i, c) in self.frame_encoder.convs.iter_mut().enumerate() {
            out.push((format!("frame_enc.{}.kernels", i), &mut c.kernels));
            out.push((format!("frame_enc.{}.bias", i), &mut c.bias));
        }
        out.push(("frame_fc.w".into(), &mut self.frame_fc.w));
        out.push(("frame_fc.b".into(), &mut self.frame_fc.b));
        for (i, l) in self.mlp.layers.iter_mut().enumerate() {
            out.push((format!("mlp.{}.w", i), &mut l.w));
            out.push((format!("mlp.{}.b", i), &mut l.b));
        }
        out
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> (DiscriminatorRefs, Vec<TensorRef>) {
        let seq_encoder = self.seq_encoder.bind(g, trainable);
        let lstm = self.lstm.bind(g, trainable);
        let frame_encoder = self.frame_encoder.bind(g, trainable);
        let frame_fc = self.frame_fc.bind(g, trainable);
        let mlp = self.mlp.bind(g, trainable);
        let mut ordered = Vec::new();
        for c in &seq_encoder.convs {
            ordered.push(c.kernels);
            ordered.push(c.bias);
        }
        ordered.extend(lstm_ref_list(&lstm));
        for c in &frame_encoder.convs {
            ordered.push(c.kernels);
            ordered.push(c.bias);
        }
        ordered.push(frame_fc.w);
        ordered.push(frame_fc.b);
        for l in &mlp.layers {
            ordered.push(l.w);
            ordered.push(l.b);
        }
        (
            DiscriminatorRefs {
                seq_encoder,
                lstm,
                frame_encoder,
                frame_fc,
                mlp,
            },
            ordered,
        )
    }
}

/// D(proposal, x_{1:t}): sequence branch LSTM output concatenated with the
/// frame-branch encoding, read out by the logistic MLP head.
pub fn discriminator_score<T: Scalar>(
    g: &mut Graph<T>,
    m: &DiscriminatorModel<T>,
    refs: &DiscriminatorRefs,
    frames: &[TensorRef],
    proposal: TensorRef,
) -> Result<TensorRef> {
    if frames.is_empty() {
        return Err(PgnError::Arg("discriminator_score: empty sequence".into()));
    }
    let mut xs = Vec::with_capacity(frames.len());
    for &f in frames {
        xs.push(encoder_forward(g, f, &m.spec.encoder, &refs.seq_encoder)?);
    }
    let states = lstm_run(g, &xs, &refs.lstm, None, m.spec.hidden)?;
    let h = states.last().unwrap().h;
    let p_enc = encoder_forward(g, proposal, &m.spec.encoder, &refs.frame_encoder)?;
    let p_aff = g.affine(p_enc, refs.frame_fc.w, refs.frame_fc.b)?;
    let p_feat = g.activation(p_aff, crate::tensor::ActivationKind::Relu)?;
    let cat = g.concat_last(h, p_feat)?;
    mlp_head(g, cat, &refs.mlp)
}

// ---------------------------------------------------------------------------
// control models

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlVariant {
    AeLstmDynamic,
    AeLstmStatic,
    AeFcEqWeights,
    AeFcEqUnits,
}

impl ControlVariant {
    pub fn is_lstm(self) -> bool {
        matches!(self, ControlVariant::AeLstmDynamic | ControlVariant::AeLstmStatic)
    }

    pub fn tag(self) -> &'static str {
        match self {
            ControlVariant::AeLstmDynamic => "ae-lstm-dynamic",
            ControlVariant::AeLstmStatic => "ae-lstm-static",
            ControlVariant::AeFcEqWeights => "ae-fc-eq-weights",
            ControlVariant::AeFcEqUnits => "ae-fc-eq-units",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ae-lstm-dynamic" => Ok(ControlVariant::AeLstmDynamic),
            "ae-lstm-static" => Ok(ControlVariant::AeLstmStatic),
            "ae-fc-eq-weights" => Ok(ControlVariant::AeFcEqWeights),
            "ae-fc-eq-units" => Ok(ControlVariant::AeFcEqUnits),
            other => Err(PgnError::Arg(format!("unknown control variant {:?}", other))),
        }
    }
}

/// Single-hidden-layer FC autoencoder over flattened frames.
#[derive(Debug, Clone)]
pub struct FcAutoencoder<T: Scalar> {
    pub n_pix: usize,
    pub hidden: usize,
    pub h: usize,
    pub w: usize,
    pub enc: AffineParams<T>,
    pub dec: AffineParams<T>,
}

impl<T: Scalar> FcAutoencoder<T> {
    pub fn n_params(&self) -> usize {
        2 * self.n_pix * self.hidden + self.hidden + self.n_pix
    }
}

/// Width for the AE-FC-eq-weights control: the hidden size whose FC
/// autoencoder parameter count is closest to the LSTM parameter count
/// n = w(2·n_pix + 1) + n_pix.
pub fn fc_eq_weights_width(n_pix: usize, lstm_params: usize) -> usize {
    (((lstm_params as f64 - n_pix as f64) / (2 * n_pix + 1) as f64).round() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct ControlModel<T: Scalar> {
    pub variant: ControlVariant,
    pub spec: ModelSpec,
    /// LSTM variants: same encoder-LSTM-decoder topology as the generator.
    pub lstm_ae: Option<GeneratorModel<T>>,
    pub fc: Option<FcAutoencoder<T>>,
}

#[derive(Debug, Clone)]
pub struct ControlRefs {
    pub gen: Option<GeneratorRefs>,
    pub fc: Option<(AffineRefs, AffineRefs)>,
}

impl<T: Scalar> ControlModel<T> {
    pub fn init(rng: &mut ChaCha8Rng, variant: ControlVariant, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if variant.is_lstm() {
            return Ok(ControlModel {
                variant,
                spec: spec.clone(),
                lstm_ae: Some(GeneratorModel::init(rng, spec)?),
                fc: None,
            });
        }
        let n_pix = spec.frame_h * spec.frame_w;
        let hidden = match variant {
            ControlVariant::AeFcEqUnits => spec.hidden,
            ControlVariant::AeFcEqWeights => {
                let (input, hid) = (spec.encoder.out_len()?, spec.hidden);
                let lstm_n = 4 * (hid * input + hid * hid + hid);
                let w = fc_eq_weights_width(n_pix, lstm_n);
                let fc_n = 2 * n_pix * w + w + n_pix;
                let rel = (fc_n as f64 - lstm_n as f64).abs() / lstm_n as f64;
                if rel > 0.01 {
                    return Err(PgnError::Contract(format!(
                        "eq-weights width {} gives {} params, {:.2}% off LSTM's {}",
                        w,
                        fc_n,
                        100.0 * rel,
                        lstm_n
                    )));
                }
                w
            }
            _ => unreachable!(),
        };
        let enc = AffineParams::init(rng, hidden, n_pix);
        let dec = AffineParams::init(rng, n_pix, hidden);
        Ok(ControlModel {
            variant,
            spec: spec.clone(),
            lstm_ae: None,
            fc: Some(FcAutoencoder {
                n_pix,
                hidden,
                h: spec.frame_h,
                w: spec.frame_w,
                enc,
                dec,
            }),
        })
    }

    pub fn params(&self) -> Vec<(String, &TensorData<T>)> {
        if let Some(m) = &self.lstm_ae {
            return m.params();
        }
        let fc = self.fc.as_ref().unwrap();
        vec![
            ("fc.enc.w".into(), &fc.enc.w),
            ("fc.enc.b".into(), &fc.enc.b),
            ("fc.dec.w".into(), &fc.dec.w),
            ("fc.dec.b".into(), &fc.dec.b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut TensorData<T>)> {
        if let Some(m) = &mut self.lstm_ae {
            return m.params_mut();
        }
        let fc = self.fc.as_mut().unwrap();
        vec![
            ("fc.enc.w".into(), &mut fc.enc.w),
            ("fc.enc.b".into(), &mut fc.enc.b),
            ("fc.dec.w".into(), &mut fc.dec.w),
            ("fc.dec.b".into(), &mut fc.dec.b),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> (ControlRefs, Vec<TensorRef>) {
        if let Some(m) = &self.lstm_ae {
            let (refs, ordered) = m.bind(g, trainable);
            return (
                ControlRefs {
                    gen: Some(refs),
                    fc: None,
                },
                ordered,
            );
        }
        let fc = self.fc.as_ref().unwrap();
        let enc = fc.enc.bind(g, trainable);
        let dec = fc.dec.bind(g, trainable);
        let ordered = vec![enc.w, enc.b, dec.w, dec.b];
        (
            ControlRefs {
                gen: None,
                fc: Some((enc, dec)),
            },
            ordered,
        )
    }
}

/// Sequence length the LSTM control variants reconstruct from.
pub const CONTROL_SEQ_LEN: usize = 6;

/// LSTM variants take a 6-frame sequence and reconstruct a frame; FC
/// variants take (and reconstruct) a single frame.
pub fn control_forward<T: Scalar>(
    g: &mut Graph<T>,
    m: &ControlModel<T>,
    refs: &ControlRefs,
    input: &[TensorRef],
) -> Result<TensorRef> {
    if m.variant.is_lstm() {
        if input.len() != CONTROL_SEQ_LEN {
            return Err(PgnError::Arg(format!(
                "{} expects {} frames, got {}",
                m.variant.tag(),
                CONTROL_SEQ_LEN,
                input.len()
            )));
        }
        let gm = m.lstm_ae.as_ref().unwrap();
        return generator_predict(g, &gm.spec, refs.gen.as_ref().unwrap(), input);
    }
    if input.len() != 1 {
        return Err(PgnError::Arg(format!(
            "{} expects a single frame, got {}",
            m.variant.tag(),
            input.len()
        )));
    }
    let (out, _) = fc_forward(g, m, refs, input[0])?;
    Ok(out)
}

/// FC autoencoder forward; returns (reconstruction, hidden features).
fn fc_forward<T: Scalar>(
    g: &mut Graph<T>,
    m: &ControlModel<T>,
    refs: &ControlRefs,
    frame: TensorRef,
) -> Result<(TensorRef, TensorRef)> {
    let fc = m.fc.as_ref().unwrap();
    let (enc, dec) = refs.fc.as_ref().unwrap();
    let fs = g.shape(frame).to_vec();
    let flat_shape = if fs.len() == 4 {
        vec![fs[0], fs[1] * fs[2] * fs[3]]
    } else {
        vec![fs.iter().product()]
    };
    let flat = g.reshape(frame, flat_shape.clone())?;
    let pre = g.affine(flat, enc.w, enc.b)?;
    let hid = g.activation(pre, crate::tensor::ActivationKind::Relu)?;
    let out_pre = g.affine(hid, dec.w, dec.b)?;
    let out = g.activation(out_pre, crate::tensor::ActivationKind::Clip01)?;
    let out_shape = if fs.len() == 4 {
        fs
    } else {
        vec![1, fc.h, fc.w]
    };
    let out = g.reshape(out, out_shape)?;
    Ok((out, hid))
}

// ---------------------------------------------------------------------------
// feature extraction

/// Time step (1-indexed) at which features are read out.
pub const FEATURE_STEP: usize = 5;

/// Repeat a static image so LSTM models can consume it as a sequence.
pub fn repeat_frame<T: Scalar>(frame: &TensorData<T>, n: usize) -> Vec<TensorData<T>> {
    vec![frame.clone(); n]
}

fn lstm_h5<T: Scalar>(
    spec: &ModelSpec,
    encoder: &EncoderRefs,
    lstm: &LstmRefs,
    g: &mut Graph<T>,
    frames: &[TensorRef],
) -> Result<Vec<T>> {
    if frames.len() < FEATURE_STEP {
        return Err(PgnError::Arg(format!(
            "feature extraction needs >= {} steps, got {}",
            FEATURE_STEP,
            frames.len()
        )));
    }
    let mut xs = Vec::with_capacity(FEATURE_STEP);
    for &f in &frames[..FEATURE_STEP] {
        xs.push(encoder_forward(g, f, &spec.encoder, encoder)?);
    }
    let states = lstm_run(g, &xs, lstm, None, spec.hidden)?;
    Ok(g.value(states[FEATURE_STEP - 1].h).to_vec())
}

/// Generator features: LSTM hidden state h_5.
pub fn generator_features<T: Scalar>(
    m: &GeneratorModel<T>,
    frames: &[TensorData<T>],
) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let (refs, _) = m.bind(&mut g, false);
    let frefs: Vec<TensorRef> = frames.iter().map(|f| g.input(f)).collect();
    lstm_h5(&m.spec, &refs.encoder, &refs.lstm, &mut g, &frefs)
}

/// Control features: h_5 for LSTM variants, the bottleneck activation for
/// FC variants (last frame of the input).
pub fn control_features<T: Scalar>(
    m: &ControlModel<T>,
    frames: &[TensorData<T>],
) -> Result<Vec<T>> {
    if m.variant.is_lstm() {
        return generator_features(m.lstm_ae.as_ref().unwrap(), frames);
    }
    let Some(frame) = frames.last() else {
        return Err(PgnError::Arg("control_features: empty input".into()));
    };
    let mut g = Graph::new();
    let (refs, _) = m.bind(&mut g, false);
    let f = g.input(frame);
    let (_, hid) = fc_forward(&mut g, m, &refs, f)?;
    Ok(g.value(hid).to_vec())
}

// ---------------------------------------------------------------------------
// whole-model gradient checks

/// Sample a generic 64-bit test point: every parameter (including biases)
/// randomized so no relu/clip pre-activation sits exactly on a kink.
fn randomized_frames(
    rng: &mut ChaCha8Rng,
    spec: &ModelSpec,
    n: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<TensorData<f64>>> {
    use rand::Rng as _;
    (0..n)
        .map(|_| {
            TensorData::new(
                vec![1, spec.frame_h, spec.frame_w],
                (0..spec.frame_h * spec.frame_w)
                    .map(|_| rng.gen_range(lo..hi))
                    .collect(),
            )
        })
        .collect()
}

fn randomize_params(rng: &mut ChaCha8Rng, params: Vec<(String, &mut TensorData<f64>)>) {
    use rand::Rng as _;
    for (_, t) in params {
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

/// Smallest nonzero analytic gradient magnitude; exactly-zero gradients come
/// from locally inactive paths (dead relu/clip/pool routes) where central
/// differences are bitwise zero too, so only tiny-but-nonzero derivatives
/// drown in finite-difference roundoff.
fn min_nonzero_grad(g: &Graph<f64>, refs: &[TensorRef]) -> f64 {
    refs.iter()
        .flat_map(|&r| g.grad(r).into_iter().flatten())
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |m, &v| m.min(v.abs()))
}

const GRADCHECK_MIN_GRAD: f64 = 1e-5;
const GRADCHECK_ATTEMPTS: u64 = 64;

fn screened_gradcheck<F>(seed: u64, sample: F) -> Result<crate::tensor::GradCheckReport>
where
    F: Fn(
        &mut ChaCha8Rng,
    ) -> Result<(
        Vec<TensorData<f64>>,
        Box<dyn Fn(&mut Graph<f64>, &[TensorRef]) -> Result<TensorRef>>,
    )>,
{
    use rand::SeedableRng as _;
    for attempt in 0..GRADCHECK_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let (params, build) = sample(&mut rng)?;
        // conditioning screen: central differences at h=1e-5 cannot resolve
        // derivatives below the roundoff floor, so skip points having them
        let mut g = Graph::<f64>::new();
        let refs: Vec<TensorRef> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &refs)?;
        g.backward(loss)?;
        if min_nonzero_grad(&g, &refs) < GRADCHECK_MIN_GRAD {
            continue;
        }
        return crate::tensor::check_gradients(&params, |g, ps| build(g, ps), 1e-5);
    }
    Err(PgnError::Numeric(format!(
        "no well-conditioned gradient-check point found for seed {}",
        seed
    )))
}

/// Finite-difference check of the full encoder-LSTM-decoder graph under the
/// MSE loss, at a screened generic point derived from `seed`.
pub fn gradcheck_generator(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let spec = ModelSpec::tiny();
    screened_gradcheck(seed, move |rng| {
        let mut model = GeneratorModel::<f64>::init(rng, &spec)?;
        randomize_params(rng, model.params_mut());
        // several steps so recurrent weights carry well-conditioned gradients
        let frames = randomized_frames(rng, &spec, 4, 0.0, 1.0)?;
        let target = randomized_frames(rng, &spec, 1, 0.2, 0.8)?.remove(0);
        let params: Vec<TensorData<f64>> =
            model.params().into_iter().map(|(_, t)| t.clone()).collect();
        let spec = spec.clone();
        let build = move |g: &mut Graph<f64>, ps: &[TensorRef]| {
            let refs = generator_refs_from(&spec, ps)?;
            let frefs: Vec<TensorRef> = frames.iter().map(|f| g.input(f)).collect();
            let pred = generator_predict(g, &spec, &refs, &frefs)?;
            let tgt = g.input(&target);
            g.mse(pred, tgt)
        };
        Ok((params, Box::new(build) as Box<_>))
    })
}

/// Finite-difference check of the full conditional discriminator graph under
/// a squared-error readout loss, at a screened generic point.
pub fn gradcheck_discriminator(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let spec = ModelSpec::tiny();
    screened_gradcheck(seed, move |rng| {
        let mut model = DiscriminatorModel::<f64>::init(rng, &spec, &[8, 4])?;
        randomize_params(rng, model.params_mut());
        let frames = randomized_frames(rng, &spec, 3, 0.0, 1.0)?;
        let proposal = randomized_frames(rng, &spec, 1, 0.0, 1.0)?.remove(0);
        let params: Vec<TensorData<f64>> =
            model.params().into_iter().map(|(_, t)| t.clone()).collect();
        let model = model.clone();
        let build = move |g: &mut Graph<f64>, ps: &[TensorRef]| {
            let refs = discriminator_refs_from(&model.spec, &model.mlp_spec, ps)?;
            let frefs: Vec<TensorRef> = frames.iter().map(|f| g.input(f)).collect();
            let prop = g.input(&proposal);
            let score = discriminator_score(g, &model, &refs, &frefs, prop)?;
            let target = g.input(&TensorData::new(vec![1], vec![0.7])?);
            g.mse(score, target)
        };
        Ok((params, Box::new(build) as Box<_>))
    })
}
