//! Representation analyses: prediction error vs. baseline, latent decoding
//! across checkpoints, coefficient-axis projection, component extrapolation
//! imagery, and classification transfer.

use std::fs;
use std::path::Path;

use crate::data::{LabeledImages, VideoDataset};
use crate::error::{PgnError, Result};
use crate::loss::frame_sq_error;
use crate::models::{
    control_features, generator_predict, ControlModel, GeneratorModel, FEATURE_STEP,
};
use crate::nn::{decoder_forward, encoder_forward, lstm_run};
use crate::probe::{
    r2_score, ridge_fit_validated, ridge_predict, svm_fit, svm_predict, Matrix, ALPHA_GRID,
};
use crate::tensor::{Graph, TensorData, TensorRef};
use crate::train::Checkpoint;

/// Evaluation context length: predictions condition on this many frames.
pub const EVAL_WINDOW: usize = crate::data::balls::EVAL_WINDOW;

pub const LATENT_NAMES: [&str; 6] = ["theta0", "omega", "z1", "z2", "z3", "z4"];

// ---------------------------------------------------------------------------
// prediction error

pub enum Predictor<'a> {
    /// predicts frame t as frame t-1
    CopyLast,
    /// ground-truth oracle (testing aid)
    Oracle,
    Generator(&'a GeneratorModel<f32>),
}

/// Sliding-window one-step prediction error: for every window of
/// `window` frames, predict the following frame and accumulate the pixel-sum
/// squared error. Returns (mean, population std) over all predicted frames.
pub fn eval_prediction_error(
    pred: &Predictor,
    ds: &VideoDataset,
    window: usize,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if ds.t <= window {
        return Err(PgnError::Arg(format!(
            "sequences of length {} too short for a {}-frame window",
            ds.t, window
        )));
    }
    let n_win = ds.t - window;
    // errs indexed [seq][window]: same accumulation order as copy_baseline
    let mut errs = vec![0.0f64; ds.n_seq * n_win];
    match pred {
        Predictor::CopyLast => {
            for s in 0..ds.n_seq {
                for (wi, t) in (window..ds.t).enumerate() {
                    errs[s * n_win + wi] = frame_sq_error(ds.frame(s, t - 1), ds.frame(s, t));
                }
            }
        }
        Predictor::Oracle => {}
        Predictor::Generator(m) => {
            let idxs: Vec<usize> = (0..ds.n_seq).collect();
            for chunk in idxs.chunks(batch_size) {
                for (wi, t0) in (0..n_win).enumerate() {
                    let (inputs, target) = crate::train::make_batch(ds, chunk, t0, window)?;
                    let mut g: Graph<f32> = Graph::new();
                    let (refs, _) = m.bind(&mut g, false);
                    let irefs: Vec<TensorRef> = inputs.iter().map(|f| g.input(f)).collect();
                    let out = generator_predict(&mut g, &m.spec, &refs, &irefs)?;
                    let pv = g.value(out);
                    let fl = ds.frame_len();
                    for (bi, &s) in chunk.iter().enumerate() {
                        errs[s * n_win + wi] = frame_sq_error(
                            &pv[bi * fl..(bi + 1) * fl],
                            &target.data[bi * fl..(bi + 1) * fl],
                        );
                    }
                }
            }
        }
    }
    Ok(crate::data::mean_std(&errs))
}

// ---------------------------------------------------------------------------
// feature extraction over datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Hidden,
    Cell,
}

impl StateKind {
    pub fn tag(self) -> &'static str {
        match self {
            StateKind::Hidden => "h",
            StateKind::Cell => "c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "h" | "hidden" => Ok(StateKind::Hidden),
            "c" | "cell" => Ok(StateKind::Cell),
            other => Err(PgnError::Arg(format!("unknown state kind {:?}", other))),
        }
    }
}

/// LSTM state at t=5 for a batch of frame tensors [B,1,H,W] per step.
fn batch_state_features(
    m: &GeneratorModel<f32>,
    steps: &[TensorData<f32>],
    kind: StateKind,
) -> Result<Vec<f32>> {
    let mut g: Graph<f32> = Graph::new();
    let (refs, _) = m.bind(&mut g, false);
    let mut xs = Vec::with_capacity(steps.len());
    for f in steps {
        let fr = g.input(f);
        xs.push(encoder_forward(&mut g, fr, &m.spec.encoder, &refs.encoder)?);
    }
    let states = lstm_run(&mut g, &xs, &refs.lstm, None, m.spec.hidden)?;
    let st = states[FEATURE_STEP - 1];
    Ok(match kind {
        StateKind::Hidden => g.value(st.h).to_vec(),
        StateKind::Cell => g.value(st.c).to_vec(),
    })
}

/// Feature matrix (n_seq x hidden) from the first five frames of each
/// sequence of `ds`.
pub fn dataset_features(
    m: &GeneratorModel<f32>,
    ds: &VideoDataset,
    kind: StateKind,
    batch_size: usize,
) -> Result<Matrix> {
    if ds.t < FEATURE_STEP {
        return Err(PgnError::Arg(format!(
            "sequences of length {} too short for t={} features",
            ds.t, FEATURE_STEP
        )));
    }
    let hidden = m.spec.hidden;
    let mut data = vec![0.0f64; ds.n_seq * hidden];
    let idxs: Vec<usize> = (0..ds.n_seq).collect();
    for chunk in idxs.chunks(batch_size) {
        let steps: Vec<TensorData<f32>> = (0..FEATURE_STEP)
            .map(|t| {
                let mut d = Vec::with_capacity(chunk.len() * ds.frame_len());
                for &s in chunk {
                    d.extend_from_slice(ds.frame(s, t));
                }
                TensorData {
                    shape: vec![chunk.len(), ds.channels, ds.h, ds.w],
                    data: d,
                }
            })
            .collect();
        let feats = batch_state_features(m, &steps, kind)?;
        for (bi, &s) in chunk.iter().enumerate() {
            for j in 0..hidden {
                data[s * hidden + j] = feats[bi * hidden + j] as f64;
            }
        }
    }
    Matrix::new(ds.n_seq, hidden, data)
}

fn latent_targets(ds: &VideoDataset, latent_idx: usize) -> Result<Vec<f64>> {
    let latents = ds
        .latents
        .as_ref()
        .ok_or_else(|| PgnError::Arg("dataset has no latents sidecar".into()))?;
    Ok(latents.iter().map(|r| r.as_vec()[latent_idx]).collect())
}

/// Feature model behind a checkpoint: the generator itself, or the
/// encoder-LSTM half of an LSTM autoencoder control.
pub fn checkpoint_feature_model(ck: &Checkpoint) -> Result<GeneratorModel<f32>> {
    if let Ok(m) = ck.to_generator() {
        return Ok(m);
    }
    let c = ck.to_control()?;
    c.lstm_ae.ok_or_else(|| {
        PgnError::Arg("FC control checkpoints have no sequence feature model".into())
    })
}

// ---------------------------------------------------------------------------
// latent decoding

#[derive(Debug, Clone)]
pub struct DecodingReport {
    pub epoch: u32,
    pub state: StateKind,
    /// (latent name, test r², selected alpha)
    pub r2: Vec<(String, f64, f64)>,
}

/// Fit ridge probes per latent on the probe-train features, select alpha on
/// probe-val, score r² on probe-test. Repeated for each checkpoint.
pub fn decode_latents(
    ckpts: &[Checkpoint],
    probe_train: &VideoDataset,
    probe_val: &VideoDataset,
    probe_test: &VideoDataset,
    kind: StateKind,
    batch_size: usize,
) -> Result<Vec<DecodingReport>> {
    let mut out = Vec::with_capacity(ckpts.len());
    for ck in ckpts {
        let m = checkpoint_feature_model(ck)?;
        let x_train = dataset_features(&m, probe_train, kind, batch_size)?;
        let x_val = dataset_features(&m, probe_val, kind, batch_size)?;
        let x_test = dataset_features(&m, probe_test, kind, batch_size)?;
        let mut r2 = Vec::with_capacity(LATENT_NAMES.len());
        for (li, name) in LATENT_NAMES.iter().enumerate() {
            let y_train = latent_targets(probe_train, li)?;
            let y_val = latent_targets(probe_val, li)?;
            let y_test = latent_targets(probe_test, li)?;
            let (coef, alpha) =
                ridge_fit_validated(&x_train, &y_train, &x_val, &y_val, &ALPHA_GRID)?;
            let pred = ridge_predict(&coef, &x_test);
            r2.push((name.to_string(), r2_score(&y_test, &pred)?, alpha));
        }
        out.push(DecodingReport {
            epoch: ck.epoch,
            state: kind,
            r2,
        });
    }
    Ok(out)
}

pub fn write_decoding_csv(path: &Path, reports: &[DecodingReport]) -> Result<()> {
    let mut s = String::from("epoch,state,latent,r2,alpha\n");
    for r in reports {
        for (name, v, alpha) in &r.r2 {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.state.tag(), name, v, alpha));
        }
    }
    fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// projection onto coefficient axes

/// Projection of each sequence's features onto the unit-normalized ridge
/// coefficient directions of two latents (intercept excluded).
pub fn project_features(
    ck: &Checkpoint,
    probe_train: &VideoDataset,
    probe_val: &VideoDataset,
    target: &VideoDataset,
    latent_pair: (usize, usize),
    kind: StateKind,
    batch_size: usize,
) -> Result<Vec<(f64, f64)>> {
    let m = checkpoint_feature_model(ck)?;
    let x_train = dataset_features(&m, probe_train, kind, batch_size)?;
    let x_val = dataset_features(&m, probe_val, kind, batch_size)?;
    let x_target = dataset_features(&m, target, kind, batch_size)?;
    let mut axes = Vec::with_capacity(2);
    for li in [latent_pair.0, latent_pair.1] {
        if li >= LATENT_NAMES.len() {
            return Err(PgnError::Arg(format!("latent index {} out of range", li)));
        }
        let y_train = latent_targets(probe_train, li)?;
        let y_val = latent_targets(probe_val, li)?;
        let (coef, _) = ridge_fit_validated(&x_train, &y_train, &x_val, &y_val, &ALPHA_GRID)?;
        axes.push(unit_direction(&coef[..coef.len() - 1])?);
    }
    let mut coords = Vec::with_capacity(x_target.rows);
    for r in 0..x_target.rows {
        let row = x_target.row(r);
        let dot = |a: &[f64]| a.iter().zip(row).map(|(&u, &v)| u * v).sum::<f64>();
        coords.push((dot(&axes[0]), dot(&axes[1])));
    }
    Ok(coords)
}

fn unit_direction(w: &[f64]) -> Result<Vec<f64>> {
    let norm = w.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(PgnError::Numeric("zero-norm coefficient vector".into()));
    }
    Ok(w.iter().map(|&v| v / norm).collect())
}

pub fn write_projection_csv(path: &Path, coords: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("seq,x,y\n");
    for (i, (x, y)) in coords.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i, x, y));
    }
    fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// component extrapolation

/// Perturb h_5 along the fitted coefficient direction so the decoded latent
/// shifts by each `delta`, then decode to images. `coef` includes the
/// intercept (last entry) as produced by ridge_fit.
pub fn extrapolate_component(
    m: &GeneratorModel<f32>,
    seed_frames: &[TensorData<f32>],
    coef: &[f64],
    deltas: &[f64],
) -> Result<Vec<TensorData<f32>>> {
    if seed_frames.len() < FEATURE_STEP {
        return Err(PgnError::Arg(format!(
            "extrapolation needs {} seed frames, got {}",
            FEATURE_STEP,
            seed_frames.len()
        )));
    }
    if coef.len() != m.spec.hidden + 1 {
        return Err(PgnError::Arg(format!(
            "coefficient vector length {} != hidden+1 = {}",
            coef.len(),
            m.spec.hidden + 1
        )));
    }
    let w = &coef[..m.spec.hidden];
    let norm2 = w.iter().map(|&v| v * v).sum::<f64>();
    if norm2 == 0.0 {
        return Err(PgnError::Numeric("zero-norm coefficient vector".into()));
    }
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut g: Graph<f32> = Graph::new();
        let (refs, _) = m.bind(&mut g, false);
        let mut xs = Vec::with_capacity(FEATURE_STEP);
        for f in &seed_frames[..FEATURE_STEP] {
            let fr = g.input(f);
            xs.push(encoder_forward(&mut g, fr, &m.spec.encoder, &refs.encoder)?);
        }
        let states = lstm_run(&mut g, &xs, &refs.lstm, None, m.spec.hidden)?;
        let h5 = states[FEATURE_STEP - 1].h;
        // shift: h' = h + (delta / |w|^2) * w moves w·h by exactly delta
        let h_in = if delta == 0.0 {
            h5
        } else {
            let shift: Vec<f32> = w
                .iter()
                .map(|&v| (delta / norm2 * v) as f32)
                .collect();
            let sref = g.input(&TensorData::new(vec![m.spec.hidden], shift)?);
            g.add(h5, sref)?
        };
        let img = decoder_forward(&mut g, h_in, &m.spec.decoder, &refs.decoder)?;
        out.push(TensorData {
            shape: g.shape(img).to_vec(),
            data: g.value(img).to_vec(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// classification transfer

pub enum FeatureExtractor<'a> {
    Generator(&'a GeneratorModel<f32>),
    Control(&'a ControlModel<f32>),
}

impl<'a> FeatureExtractor<'a> {
    /// Features of one static image (LSTM models see it as 5 repeated frames).
    pub fn image_features(&self, image: &TensorData<f32>) -> Result<Vec<f32>> {
        match self {
            FeatureExtractor::Generator(m) => {
                crate::models::generator_features(m, &vec![image.clone(); FEATURE_STEP])
            }
            FeatureExtractor::Control(m) => {
                if m.variant.is_lstm() {
                    control_features(m, &vec![image.clone(); FEATURE_STEP])
                } else {
                    control_features(m, &[image.clone()])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub model: String,
    pub k: usize,
    pub accuracy: f64,
}

/// `k` evenly index-spaced training angles out of the full grid.
pub fn training_angle_indices(k: usize, n_angles: usize) -> Result<Vec<usize>> {
    if k < 1 || k >= n_angles {
        return Err(PgnError::Arg(format!(
            "k must be in [1, {}], got {}",
            n_angles - 1,
            k
        )));
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    let mut idx: Vec<usize> = (0..k)
        .map(|j| (j as f64 * (n_angles - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    if idx.len() != k {
        return Err(PgnError::Arg(format!("k={} gives duplicate angle indices", k)));
    }
    Ok(idx)
}

fn feature_matrix(fx: &FeatureExtractor, set: &LabeledImages, rows: &[usize]) -> Result<Matrix> {
    let mut dim = 0;
    let mut data = Vec::new();
    for &i in rows {
        let img = TensorData::new(vec![1, set.h, set.w], set.image(i).to_vec())?;
        let f = fx.image_features(&img)?;
        dim = f.len();
        data.extend(f.iter().map(|&v| v as f64));
    }
    Matrix::new(rows.len(), dim, data)
}

fn gather_rows(x: &Matrix, rows: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows.len() * x.cols);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Matrix::new(rows.len(), x.cols, data)
}

/// 50-way identity classification with angle-disjoint train/test splits.
pub fn classify_transfer(
    models: &[(String, FeatureExtractor)],
    set: &LabeledImages,
    train_angle_counts: &[usize],
    seed: u64,
) -> Result<Vec<ClassificationReport>> {
    // features are per image and do not depend on the split: compute once
    let all_rows: Vec<usize> = (0..set.ids.len()).collect();
    let mut features = Vec::with_capacity(models.len());
    for (_, fx) in models {
        features.push(feature_matrix(fx, set, &all_rows)?);
    }
    let mut out = Vec::new();
    for &k in train_angle_counts {
        let train_angles = training_angle_indices(k, set.n_angles)?;
        let is_train = |a: usize| train_angles.contains(&a);
        let train_rows: Vec<usize> = (0..set.ids.len())
            .filter(|&i| is_train(set.angle_idx[i]))
            .collect();
        let test_rows: Vec<usize> = (0..set.ids.len())
            .filter(|&i| !is_train(set.angle_idx[i]))
            .collect();
        for &i in &test_rows {
            if is_train(set.angle_idx[i]) {
                return Err(PgnError::Contract("train/test angle sets overlap".into()));
            }
        }
        let train_labels: Vec<usize> = train_rows.iter().map(|&i| set.ids[i]).collect();
        let test_labels: Vec<usize> = test_rows.iter().map(|&i| set.ids[i]).collect();
        for ((name, _), x_all) in models.iter().zip(&features) {
            let x_train = gather_rows(x_all, &train_rows)?;
            let x_test = gather_rows(x_all, &test_rows)?;
            let svm = svm_fit(&x_train, &train_labels, 1.0, 50, seed)?;
            let pred = svm_predict(&svm, &x_test);
            let correct = pred
                .iter()
                .zip(&test_labels)
                .filter(|(a, b)| a == b)
                .count();
            out.push(ClassificationReport {
                model: name.clone(),
                k,
                accuracy: correct as f64 / test_labels.len() as f64,
            });
        }
    }
    Ok(out)
}

pub fn write_classification_csv(path: &Path, reports: &[ClassificationReport]) -> Result<()> {
    let mut s = String::from("model,k,accuracy\n");
    for r in reports {
        s.push_str(&format!("{},{},{}\n", r.model, r.k, r.accuracy));
    }
    fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// image dumps

/// Quantize [0,1] to u8 with round-half-up.
pub fn quantize_u8(v: f32) -> u8 {
    let q = (v as f64 * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

/// Write frames as binary P5 graymaps `{prefix}-{i:03}.pgm`.
pub fn dump_frames(frames: &[TensorData<f32>], prefix: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let (h, w) = match f.shape.as_slice() {
            [1, h, w] => (*h, *w),
            [h, w] => (*h, *w),
            other => {
                return Err(PgnError::dim(
                    "dump_frames",
                    format!("expected a single-channel frame, got shape {:?}", other),
                ))
            }
        };
        if f.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(PgnError::Arg("dump_frames: pixel outside [0,1]".into()));
        }
        let mut bytes = format!("P5\n{} {}\n255\n", w, h).into_bytes();
        bytes.extend(f.data.iter().map(|&v| quantize_u8(v)));
        let path = std::path::PathBuf::from(format!("{}-{:03}.pgm", prefix, i));
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Read a P5 graymap back (testing aid).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let buf = fs::read(path)?;
    let text_end = buf
        .windows(1)
        .enumerate()
        .scan(0, |fields, (i, _)| {
            if buf[i].is_ascii_whitespace() {
                *fields += 1;
            }
            Some((*fields, i))
        })
        .find(|&(fields, _)| fields >= 4)
        .map(|(_, i)| i + 1)
        .ok_or_else(|| PgnError::Format("bad pgm header".into()))?;
    let header = std::str::from_utf8(&buf[..text_end])
        .map_err(|_| PgnError::Format("bad pgm header".into()))?;
    let mut it = header.split_ascii_whitespace();
    if it.next() != Some("P5") {
        return Err(PgnError::Format("not a P5 graymap".into()));
    }
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgnError::Format("bad pgm width".into()))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgnError::Format("bad pgm height".into()))?;
    let maxv: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgnError::Format("bad pgm maxval".into()))?;
    if maxv != 255 {
        return Err(PgnError::Format("expected maxval 255".into()));
    }
    let payload = &buf[text_end..];
    if payload.len() != w * h {
        return Err(PgnError::Format("pgm payload size mismatch".into()));
    }
    Ok((h, w, payload.to_vec()))
}
