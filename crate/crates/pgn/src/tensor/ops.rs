use crate::error::{PgnError, Result};
use crate::scalar::Scalar;

use super::graph::{Graph, TensorRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Logistic,
    /// min(max(x, 0), 1) — saturating non-linearity for pixel outputs.
    Clip01,
}

/// Interpret a shape as (batch, per-sample dims). 4-D image stacks and 2-D
/// row-batches carry an explicit leading batch dim; 3-D images and vectors
/// are a single sample.
fn batch_of(shape: &[usize], sample_ndim: usize) -> (usize, usize) {
    if shape.len() == sample_ndim + 1 {
        (shape[0], shape.iter().skip(1).product())
    } else {
        (1, shape.iter().product())
    }
}

struct ConvDims {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let (h, w, s, p) = (d.h, d.w, d.stride, d.pad);
    let plane = d.ho * d.wo;
    for c in 0..d.in_ch {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = ((c * d.kh + u) * d.kw + v) * plane;
                for i in 0..d.ho {
                    let yy = (i * s + u) as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        for j in 0..d.wo {
                            cols[row + i * d.wo + j] = T::ZERO;
                        }
                        continue;
                    }
                    let base = yy as usize * w;
                    for j in 0..d.wo {
                        let xx = (j * s + v) as isize - p as isize;
                        cols[row + i * d.wo + j] = if xx < 0 || xx >= w as isize {
                            T::ZERO
                        } else {
                            xc[base + xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(dcols: &[T], d: &ConvDims, dx: &mut [T]) {
    let (h, w, s, p) = (d.h, d.w, d.stride, d.pad);
    let plane = d.ho * d.wo;
    for c in 0..d.in_ch {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = ((c * d.kh + u) * d.kw + v) * plane;
                for i in 0..d.ho {
                    let yy = (i * s + u) as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for j in 0..d.wo {
                        let xx = (j * s + v) as isize - p as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        dx[c * h * w + yy as usize * w + xx as usize] += dcols[row + i * d.wo + j];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        if self.shape(a) != self.shape(b) {
            return Err(PgnError::dim(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        self.push_op(
            "add",
            self.shape(a).to_vec(),
            value,
            vec![a.0, b.0],
            Box::new(|_, g| vec![g.to_vec(), g.to_vec()]),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        if self.shape(a) != self.shape(b) {
            return Err(PgnError::dim(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let (ai, bi) = (a.0, b.0);
        self.push_op(
            "mul",
            self.shape(a).to_vec(),
            value,
            vec![ai, bi],
            Box::new(move |gr, g| {
                let av = &gr.nodes[ai].value;
                let bv = &gr.nodes[bi].value;
                vec![
                    g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect(),
                    g.iter().zip(av).map(|(&gi, &x)| gi * x).collect(),
                ]
            }),
        )
    }

    /// y = alpha * x + beta, elementwise with constants.
    pub fn scale_add(&mut self, x: TensorRef, alpha: T, beta: T) -> Result<TensorRef> {
        let value: Vec<T> = self.value(x).iter().map(|&v| alpha * v + beta).collect();
        self.push_op(
            "scale_add",
            self.shape(x).to_vec(),
            value,
            vec![x.0],
            Box::new(move |_, g| vec![g.iter().map(|&gi| alpha * gi).collect()]),
        )
    }

    /// x · Wᵀ for x: [N] or [B,N] and W: [M,N]; result [M] or [B,M].
    pub fn matmul(&mut self, x: TensorRef, w: TensorRef) -> Result<TensorRef> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(PgnError::dim("matmul", format!("weight must be 2-D, got {:?}", ws)));
        }
        let (m, n) = (ws[0], ws[1]);
        let xs = self.shape(x);
        let (b, xn) = batch_of(xs, 1);
        if xs.len() > 2 || xn != n {
            return Err(PgnError::dim(
                "matmul",
                format!("input {:?} incompatible with weight [{}, {}] (inner dim {})", xs, m, n, n),
            ));
        }
        let batched = xs.len() == 2;
        let mut value = vec![T::ZERO; b * m];
        unsafe {
            T::gemm(
                b,
                n,
                m,
                T::ONE,
                self.value(x).as_ptr(),
                n as isize,
                1,
                self.value(w).as_ptr(),
                1,
                n as isize,
                T::ZERO,
                value.as_mut_ptr(),
                m as isize,
                1,
            );
        }
        let shape = if batched { vec![b, m] } else { vec![m] };
        let (xi, wi) = (x.0, w.0);
        self.push_op(
            "matmul",
            shape,
            value,
            vec![xi, wi],
            Box::new(move |gr, g| {
                let xv = &gr.nodes[xi].value;
                let wv = &gr.nodes[wi].value;
                let mut dx = vec![T::ZERO; b * n];
                let mut dw = vec![T::ZERO; m * n];
                unsafe {
                    // dX[B,N] = dY[B,M] · W[M,N]
                    T::gemm(
                        b,
                        m,
                        n,
                        T::ONE,
                        g.as_ptr(),
                        m as isize,
                        1,
                        wv.as_ptr(),
                        n as isize,
                        1,
                        T::ZERO,
                        dx.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                    // dW[M,N] = dYᵀ[M,B] · X[B,N]
                    T::gemm(
                        m,
                        b,
                        n,
                        T::ONE,
                        g.as_ptr(),
                        1,
                        m as isize,
                        xv.as_ptr(),
                        n as isize,
                        1,
                        T::ZERO,
                        dw.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                vec![dx, dw]
            }),
        )
    }

    /// Broadcast-add a bias vector [M] onto x: [M] or [B,M].
    pub fn add_bias(&mut self, x: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let bs = self.shape(bias);
        if bs.len() != 1 {
            return Err(PgnError::dim("add_bias", format!("bias must be 1-D, got {:?}", bs)));
        }
        let m = bs[0];
        let xs = self.shape(x).to_vec();
        let (b, xm) = batch_of(&xs, 1);
        if xs.len() > 2 || xm != m {
            return Err(PgnError::dim(
                "add_bias",
                format!("input {:?} vs bias [{}]", xs, m),
            ));
        }
        let bv = self.value(bias);
        let mut value = Vec::with_capacity(b * m);
        for row in self.value(x).chunks(m) {
            value.extend(row.iter().zip(bv).map(|(&v, &bb)| v + bb));
        }
        self.push_op(
            "add_bias",
            xs,
            value,
            vec![x.0, bias.0],
            Box::new(move |_, g| {
                let mut db = vec![T::ZERO; m];
                for row in g.chunks(m) {
                    for (d, &gi) in db.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
                vec![g.to_vec(), db]
            }),
        )
    }

    /// Fully-connected layer: W·x + b.
    pub fn affine(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn activation(&mut self, x: TensorRef, kind: ActivationKind) -> Result<TensorRef> {
        let half = T::from_f64(0.5);
        let value: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                ActivationKind::Relu => v.maxv(T::ZERO),
                ActivationKind::Tanh => v.tanh(),
                // computed via tanh for symmetric rounding of large |x|
                ActivationKind::Logistic => half + half * (half * v).tanh(),
                ActivationKind::Clip01 => v.maxv(T::ZERO).minv(T::ONE),
            })
            .collect();
        let xi = x.0;
        let out_id = self.len();
        self.push_op(
            "activation",
            self.shape(x).to_vec(),
            value,
            vec![xi],
            Box::new(move |gr, g| {
                let xv = &gr.nodes[xi].value;
                let yv = &gr.nodes[out_id].value;
                let dx = match kind {
                    ActivationKind::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &v)| if v > T::ZERO { gi } else { T::ZERO })
                        .collect(),
                    ActivationKind::Tanh => g
                        .iter()
                        .zip(yv)
                        .map(|(&gi, &y)| gi * (T::ONE - y * y))
                        .collect(),
                    ActivationKind::Logistic => g
                        .iter()
                        .zip(yv)
                        .map(|(&gi, &y)| gi * y * (T::ONE - y))
                        .collect(),
                    ActivationKind::Clip01 => g
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &v)| {
                            if v > T::ZERO && v < T::ONE {
                                gi
                            } else {
                                T::ZERO
                            }
                        })
                        .collect(),
                };
                vec![dx]
            }),
        )
    }

    /// 2-D convolution over [C,H,W] or [B,C,H,W] with zero padding.
    pub fn conv2d(
        &mut self,
        x: TensorRef,
        kernels: TensorRef,
        bias: TensorRef,
        stride: usize,
        pad: usize,
    ) -> Result<TensorRef> {
        if stride == 0 {
            return Err(PgnError::Arg("conv2d stride must be >= 1".into()));
        }
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 4 {
            return Err(PgnError::dim("conv2d", format!("kernels must be 4-D, got {:?}", ks)));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 && xs.len() != 4 {
            return Err(PgnError::dim("conv2d", format!("input must be 3-D or 4-D, got {:?}", xs)));
        }
        let batched = xs.len() == 4;
        let (batch, off) = if batched { (xs[0], 1) } else { (1, 0) };
        let (in_ch, h, w) = (xs[off], xs[off + 1], xs[off + 2]);
        let (out_ch, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != in_ch {
            return Err(PgnError::dim(
                "conv2d",
                format!("input channel axis {} vs kernel channel axis {}", in_ch, kc),
            ));
        }
        if self.shape(bias) != [out_ch] {
            return Err(PgnError::dim(
                "conv2d",
                format!("bias {:?} vs out channels {}", self.shape(bias), out_ch),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(PgnError::dim(
                "conv2d",
                format!("padded spatial dims ({},{}) smaller than kernel ({},{})", h + 2 * pad, w + 2 * pad, kh, kw),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let d = ConvDims {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let plane = ho * wo;
        let ckk = d.ckk();
        let mut value = vec![T::ZERO; batch * out_ch * plane];
        let mut cols = vec![T::ZERO; ckk * plane];
        let img = in_ch * h * w;
        {
            let xv = self.value(x);
            let kv = self.value(kernels);
            let bv = self.value(bias);
            for bi in 0..batch {
                im2col(&xv[bi * img..(bi + 1) * img], &d, &mut cols);
                let out = &mut value[bi * out_ch * plane..(bi + 1) * out_ch * plane];
                unsafe {
                    T::gemm(
                        out_ch,
                        ckk,
                        plane,
                        T::ONE,
                        kv.as_ptr(),
                        ckk as isize,
                        1,
                        cols.as_ptr(),
                        plane as isize,
                        1,
                        T::ZERO,
                        out.as_mut_ptr(),
                        plane as isize,
                        1,
                    );
                }
                for o in 0..out_ch {
                    let bo = bv[o];
                    for v in &mut out[o * plane..(o + 1) * plane] {
                        *v += bo;
                    }
                }
            }
        }
        let shape = if batched {
            vec![batch, out_ch, ho, wo]
        } else {
            vec![out_ch, ho, wo]
        };
        let (xi, ki) = (x.0, kernels.0);
        self.push_op(
            "conv2d",
            shape,
            value,
            vec![xi, ki, bias.0],
            Box::new(move |gr, g| {
                let xv = &gr.nodes[xi].value;
                let kv = &gr.nodes[ki].value;
                let plane = d.ho * d.wo;
                let ckk = d.ckk();
                let img = d.in_ch * d.h * d.w;
                let mut dx = vec![T::ZERO; d.batch * img];
                let mut dk = vec![T::ZERO; d.out_ch * ckk];
                let mut db = vec![T::ZERO; d.out_ch];
                let mut cols = vec![T::ZERO; ckk * plane];
                let mut dcols = vec![T::ZERO; ckk * plane];
                for bi in 0..d.batch {
                    let gy = &g[bi * d.out_ch * plane..(bi + 1) * d.out_ch * plane];
                    for o in 0..d.out_ch {
                        for &gi in &gy[o * plane..(o + 1) * plane] {
                            db[o] += gi;
                        }
                    }
                    im2col(&xv[bi * img..(bi + 1) * img], &d, &mut cols);
                    unsafe {
                        // dK += dY · colsᵀ
                        T::gemm(
                            d.out_ch,
                            plane,
                            ckk,
                            T::ONE,
                            gy.as_ptr(),
                            plane as isize,
                            1,
                            cols.as_ptr(),
                            1,
                            plane as isize,
                            T::ONE,
                            dk.as_mut_ptr(),
                            ckk as isize,
                            1,
                        );
                        // dcols = Kᵀ · dY
                        T::gemm(
                            ckk,
                            d.out_ch,
                            plane,
                            T::ONE,
                            kv.as_ptr(),
                            1,
                            ckk as isize,
                            gy.as_ptr(),
                            plane as isize,
                            1,
                            T::ZERO,
                            dcols.as_mut_ptr(),
                            plane as isize,
                            1,
                        );
                    }
                    col2im_add(&dcols, &d, &mut dx[bi * img..(bi + 1) * img]);
                }
                vec![dx, dk, db]
            }),
        )
    }

    /// Max-pooling over [C,H,W] or [B,C,H,W]. Backward routes gradient to the
    /// argmax position only; ties break to the first occurrence in row-major
    /// scan order.
    pub fn maxpool2d(&mut self, x: TensorRef, window: usize, stride: usize) -> Result<TensorRef> {
        if window == 0 || stride == 0 {
            return Err(PgnError::Arg("maxpool2d window and stride must be >= 1".into()));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 && xs.len() != 4 {
            return Err(PgnError::dim("maxpool2d", format!("input must be 3-D or 4-D, got {:?}", xs)));
        }
        let batched = xs.len() == 4;
        let (batch, off) = if batched { (xs[0], 1) } else { (1, 0) };
        let (ch, h, w) = (xs[off], xs[off + 1], xs[off + 2]);
        if window > h || window > w {
            return Err(PgnError::dim(
                "maxpool2d",
                format!("window {} exceeds spatial dims ({},{})", window, h, w),
            ));
        }
        let ho = (h - window) / stride + 1;
        let wo = (w - window) / stride + 1;
        let xv = self.value(x);
        let n_in = xv.len();
        let mut value = Vec::with_capacity(batch * ch * ho * wo);
        let mut argmax = Vec::with_capacity(batch * ch * ho * wo);
        for bc in 0..batch * ch {
            let base = bc * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + i * stride * w + j * stride;
                    let mut bv = xv[best];
                    for u in 0..window {
                        for v in 0..window {
                            let idx = base + (i * stride + u) * w + (j * stride + v);
                            if xv[idx] > bv {
                                bv = xv[idx];
                                best = idx;
                            }
                        }
                    }
                    value.push(bv);
                    argmax.push(best);
                }
            }
        }
        let shape = if batched {
            vec![batch, ch, ho, wo]
        } else {
            vec![ch, ho, wo]
        };
        self.push_op(
            "maxpool2d",
            shape,
            value,
            vec![x.0],
            Box::new(move |_, g| {
                let mut dx = vec![T::ZERO; n_in];
                for (&idx, &gi) in argmax.iter().zip(g) {
                    dx[idx] += gi;
                }
                vec![dx]
            }),
        )
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: TensorRef, factor: usize) -> Result<TensorRef> {
        if factor < 1 {
            return Err(PgnError::Arg("upsample factor must be >= 1".into()));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 && xs.len() != 4 {
            return Err(PgnError::dim("upsample_nearest", format!("input must be 3-D or 4-D, got {:?}", xs)));
        }
        let batched = xs.len() == 4;
        let (batch, off) = if batched { (xs[0], 1) } else { (1, 0) };
        let (ch, h, w) = (xs[off], xs[off + 1], xs[off + 2]);
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(batch * ch * ho * wo);
        for bc in 0..batch * ch {
            let base = bc * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    value.push(xv[base + (i / factor) * w + (j / factor)]);
                }
            }
        }
        let shape = if batched {
            vec![batch, ch, ho, wo]
        } else {
            vec![ch, ho, wo]
        };
        let n_in = xv.len();
        self.push_op(
            "upsample_nearest",
            shape,
            value,
            vec![x.0],
            Box::new(move |_, g| {
                // sum gradients over each factor×factor block
                let mut dx = vec![T::ZERO; n_in];
                for bc in 0..batch * ch {
                    let base_in = bc * h * w;
                    let base_out = bc * ho * wo;
                    for i in 0..ho {
                        for j in 0..wo {
                            dx[base_in + (i / factor) * w + (j / factor)] +=
                                g[base_out + i * wo + j];
                        }
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Symmetric spatial zero-padding by `pad` pixels on each side.
    pub fn pad2d(&mut self, x: TensorRef, pad: usize) -> Result<TensorRef> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 && xs.len() != 4 {
            return Err(PgnError::dim("pad2d", format!("input must be 3-D or 4-D, got {:?}", xs)));
        }
        let batched = xs.len() == 4;
        let (batch, off) = if batched { (xs[0], 1) } else { (1, 0) };
        let (ch, h, w) = (xs[off], xs[off + 1], xs[off + 2]);
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let xv = self.value(x);
        let mut value = vec![T::ZERO; batch * ch * ho * wo];
        for bc in 0..batch * ch {
            for i in 0..h {
                let src = bc * h * w + i * w;
                let dst = bc * ho * wo + (i + pad) * wo + pad;
                value[dst..dst + w].copy_from_slice(&xv[src..src + w]);
            }
        }
        let shape = if batched {
            vec![batch, ch, ho, wo]
        } else {
            vec![ch, ho, wo]
        };
        self.push_op(
            "pad2d",
            shape,
            value,
            vec![x.0],
            Box::new(move |_, g| {
                let mut dx = vec![T::ZERO; batch * ch * h * w];
                for bc in 0..batch * ch {
                    for i in 0..h {
                        let dst = bc * h * w + i * w;
                        let src = bc * ho * wo + (i + pad) * wo + pad;
                        dx[dst..dst + w].copy_from_slice(&g[src..src + w]);
                    }
                }
                vec![dx]
            }),
        )
    }

    pub fn reshape(&mut self, x: TensorRef, shape: Vec<usize>) -> Result<TensorRef> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(PgnError::dim(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(x), shape),
            ));
        }
        self.push_op(
            "reshape",
            shape,
            self.value(x).to_vec(),
            vec![x.0],
            Box::new(|_, g| vec![g.to_vec()]),
        )
    }

    /// Concatenate along the last axis. Accepts [N]+[M] or [B,N]+[B,M].
    pub fn concat_last(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || sa.len() > 2 || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(PgnError::dim(
                "concat_last",
                format!("{:?} vs {:?}", sa, sb),
            ));
        }
        let (na, nb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = if sa.len() == 2 { sa[0] } else { 1 };
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = Vec::with_capacity(rows * (na + nb));
        for r in 0..rows {
            value.extend_from_slice(&av[r * na..(r + 1) * na]);
            value.extend_from_slice(&bv[r * nb..(r + 1) * nb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = na + nb;
        self.push_op(
            "concat_last",
            shape,
            value,
            vec![a.0, b.0],
            Box::new(move |_, g| {
                let mut da = Vec::with_capacity(rows * na);
                let mut db = Vec::with_capacity(rows * nb);
                for r in 0..rows {
                    let row = &g[r * (na + nb)..(r + 1) * (na + nb)];
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                vec![da, db]
            }),
        )
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let s = self
            .value(x)
            .iter()
            .fold(T::ZERO, |acc, &v| acc + v);
        let n = self.value(x).len();
        self.push_op(
            "sum_all",
            vec![1],
            vec![s],
            vec![x.0],
            Box::new(move |_, g| vec![vec![g[0]; n]]),
        )
    }

    /// ln(clamp(x, eps, 1-eps)). Gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: TensorRef, eps: T) -> Result<TensorRef> {
        let hi = T::ONE - eps;
        let value: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| v.maxv(eps).minv(hi).ln())
            .collect();
        let xi = x.0;
        self.push_op(
            "log_clamped",
            self.shape(x).to_vec(),
            value,
            vec![xi],
            Box::new(move |gr, g| {
                let xv = &gr.nodes[xi].value;
                vec![g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| if v > eps && v < hi { gi / v } else { T::ZERO })
                    .collect()]
            }),
        )
    }

    /// Pixel-sum squared error per frame, averaged over the leading batch
    /// axis when the operands are 4-D image stacks.
    pub fn mse(&mut self, pred: TensorRef, target: TensorRef) -> Result<TensorRef> {
        if self.shape(pred) != self.shape(target) {
            return Err(PgnError::dim(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let (batch, _) = batch_of(self.shape(pred), 3);
        let inv_b = T::ONE / T::from_f64(batch as f64);
        let s = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .fold(T::ZERO, |acc, (&p, &t)| {
                let d = p - t;
                acc + d * d
            });
        let (pi, ti) = (pred.0, target.0);
        self.push_op(
            "mse",
            vec![1],
            vec![s * inv_b],
            vec![pi, ti],
            Box::new(move |gr, g| {
                let pv = &gr.nodes[pi].value;
                let tv = &gr.nodes[ti].value;
                let two = T::from_f64(2.0);
                let c = g[0] * two * inv_b;
                let dp: Vec<T> = pv.iter().zip(tv).map(|(&p, &t)| c * (p - t)).collect();
                let dt: Vec<T> = dp.iter().map(|&v| -v).collect();
                vec![dp, dt]
            }),
        )
    }
}
