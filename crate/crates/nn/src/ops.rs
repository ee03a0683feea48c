//! Op set: forward constructors on [`Tape`] and the matching backward rules.
//!
//! Matrices are row-major [rows, cols]; images are [C, H, W]. conv2d defaults
//! to kernel 3 / stride 1 / pad 1 and deconv2d to kernel 4 / stride 2 / pad 1.

use crate::scalar::Scalar;
use crate::tape::{accumulate_into, CustomOp, NnError, Tape, TensorId};
use crate::tensor::TensorData;
use rayon::prelude::*;

/// Frequencies used by the positional and gravity encodings: squares of 1..=7.
pub const ENCODING_FREQS: [f64; 7] = [1.0, 4.0, 9.0, 16.0, 25.0, 36.0, 49.0];

/// Width of the positional encoding of a 3-vector: raw + sin/cos per frequency.
pub const POSENC_WIDTH: usize = 3 * (2 * ENCODING_FREQS.len() + 1);

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, S),
    Sum(TensorId),
    Mean(TensorId),
    Linear { x: TensorId, w: TensorId, b: TensorId },
    Conv2d { x: TensorId, w: TensorId, b: TensorId, stride: usize, pad: usize },
    Deconv2d { x: TensorId, w: TensorId, b: TensorId, stride: usize, pad: usize },
    AvgPool2(TensorId),
    LeakyRelu { x: TensorId, slope: S },
    Softplus(TensorId),
    Logistic(TensorId),
    Exp(TensorId),
    Clamp { x: TensorId, lo: S, hi: S },
    NormalizeRows(TensorId),
    MamPool(TensorId),
    PositionalEncoding(TensorId),
    WeightNorm { v: TensorId, g: TensorId },
    ConcatCols(Vec<TensorId>),
    ConcatFlat(Vec<TensorId>),
    SliceCols { x: TensorId, start: usize, len: usize },
    SliceFlat { x: TensorId, start: usize, len: usize },
    RepeatRow { x: TensorId, n: usize },
    Reshape(TensorId),
    Detach,
    GradX(TensorId),
    GradY(TensorId),
    Mse(TensorId, TensorId),
    L1(TensorId, TensorId),
    CosinePair(TensorId, TensorId),
    KlDiag { mu: TensorId, log_sigma: TensorId },
    Custom { inputs: Vec<TensorId>, f: Box<dyn CustomOp<S>> },
}

fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> NnError {
    NnError::ShapeMismatch { expected: format!("{expected:?}"), got: format!("{got:?}") }
}

impl<S: Scalar> Tape<S> {
    fn same_shape(&self, a: TensorId, b: TensorId) -> Result<(), NnError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(shape_err(&self.value(a).shape, &self.value(b).shape));
        }
        Ok(())
    }

    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.requires_grad(a) || self.requires_grad(b)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values
            .iter()
            .zip(&self.value(b).values)
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::new(shape, values), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values
            .iter()
            .zip(&self.value(b).values)
            .map(|(x, y)| *x - *y)
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::new(shape, values), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values
            .iter()
            .zip(&self.value(b).values)
            .map(|(x, y)| *x * *y)
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::new(shape, values), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: TensorId, k: S) -> TensorId {
        let values = self.value(a).values.iter().map(|x| *x * k).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.requires_grad(a);
        self.push(TensorData::new(shape, values), Op::Scale(a, k), rg)
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let v: S = self.value(a).values.iter().copied().sum();
        let rg = self.requires_grad(a);
        self.push(TensorData::scalar(v), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).len().max(1);
        let v: S = self.value(a).values.iter().copied().sum::<S>() / S::from_f64(n as f64);
        let rg = self.requires_grad(a);
        self.push(TensorData::scalar(v), Op::Mean(a), rg)
    }

    /// x [n, i] * w [i, o] + b [o] -> [n, o]
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        if xs.shape.len() != 2 || ws.shape.len() != 2 || bs.shape.len() != 1 {
            return Err(NnError::Invalid(format!(
                "linear expects [n,i] x [i,o] + [o], got {:?} {:?} {:?}",
                xs.shape, ws.shape, bs.shape
            )));
        }
        let (n, i) = (xs.shape[0], xs.shape[1]);
        let (wi, o) = (ws.shape[0], ws.shape[1]);
        if i != wi || bs.shape[0] != o {
            return Err(shape_err((i, i, o), (wi, bs.shape[0], o)));
        }
        let mut out = vec![S::zero(); n * o];
        matmul_into(&xs.values, &ws.values, &bs.values, n, i, o, &mut out);
        let rg = self.rg2(x, w) || self.requires_grad(b);
        Ok(self.push(TensorData::new(vec![n, o], out), Op::Linear { x, w, b }, rg))
    }

    /// x [Cin,H,W] convolved with w [Cout,Cin,K,K] plus b [Cout].
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, NnError> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        if xs.shape.len() != 3 || ws.shape.len() != 4 {
            return Err(NnError::Invalid(format!(
                "conv2d expects [Cin,H,W] and [Cout,Cin,K,K], got {:?} {:?}",
                xs.shape, ws.shape
            )));
        }
        let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let (cout, wcin, k, k2) = (ws.shape[0], ws.shape[1], ws.shape[2], ws.shape[3]);
        if wcin != cin || k != k2 || bs.shape != vec![cout] {
            return Err(shape_err((cin, k, cout), (wcin, k2, bs.shape.clone())));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(NnError::Invalid("conv2d kernel larger than padded input".into()));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![S::zero(); cout * ho * wo];
        let xv = &xs.values;
        let wv = &ws.values;
        let bv = &bs.values;
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(co, plane)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bv[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc = acc
                                    + xv[(ci * h + iy as usize) * wd + ix as usize]
                                        * wv[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    plane[oy * wo + ox] = acc;
                }
            }
        });
        let rg = self.rg2(x, w) || self.requires_grad(b);
        Ok(self.push(
            TensorData::new(vec![cout, ho, wo], out),
            Op::Conv2d { x, w, b, stride, pad },
            rg,
        ))
    }

    /// Transposed convolution: x [Cin,H,W], w [Cin,Cout,K,K], b [Cout].
    /// Output spatial size (H-1)*stride - 2*pad + K.
    pub fn deconv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, NnError> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        if xs.shape.len() != 3 || ws.shape.len() != 4 {
            return Err(NnError::Invalid(format!(
                "deconv2d expects [Cin,H,W] and [Cin,Cout,K,K], got {:?} {:?}",
                xs.shape, ws.shape
            )));
        }
        let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let (wcin, cout, k, k2) = (ws.shape[0], ws.shape[1], ws.shape[2], ws.shape[3]);
        if wcin != cin || k != k2 || bs.shape != vec![cout] {
            return Err(shape_err((cin, k, cout), (wcin, k2, bs.shape.clone())));
        }
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        let mut out = vec![S::zero(); cout * ho * wo];
        let xv = &xs.values;
        let wv = &ws.values;
        let bv = &bs.values;
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(co, plane)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bv[co];
                    for ky in 0..k {
                        let ty = oy + pad;
                        if ty < ky || (ty - ky) % stride != 0 {
                            continue;
                        }
                        let iy = (ty - ky) / stride;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let tx = ox + pad;
                            if tx < kx || (tx - kx) % stride != 0 {
                                continue;
                            }
                            let ix = (tx - kx) / stride;
                            if ix >= wd {
                                continue;
                            }
                            for ci in 0..cin {
                                acc = acc
                                    + xv[(ci * h + iy) * wd + ix]
                                        * wv[((ci * cout + co) * k + ky) * k + kx];
                            }
                        }
                    }
                    plane[oy * wo + ox] = acc;
                }
            }
        });
        let rg = self.rg2(x, w) || self.requires_grad(b);
        Ok(self.push(
            TensorData::new(vec![cout, ho, wo], out),
            Op::Deconv2d { x, w, b, stride, pad },
            rg,
        ))
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 3 || xs.shape[1] % 2 != 0 || xs.shape[2] % 2 != 0 {
            return Err(NnError::Invalid(format!(
                "avg_pool2 expects [C,H,W] with even H,W, got {:?}",
                xs.shape
            )));
        }
        let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let (ho, wo) = (h / 2, w / 2);
        let quarter = S::from_f64(0.25);
        let mut out = vec![S::zero(); c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = (ci * h + 2 * oy) * w + 2 * ox;
                    out[(ci * ho + oy) * wo + ox] = (xs.values[base]
                        + xs.values[base + 1]
                        + xs.values[base + w]
                        + xs.values[base + w + 1])
                        * quarter;
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![c, ho, wo], out), Op::AvgPool2(x), rg))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: S) -> TensorId {
        let values = self
            .value(x)
            .values
            .iter()
            .map(|&v| if v > S::zero() { v } else { v * slope })
            .collect();
        let shape = self.value(x).shape.clone();
        let rg = self.requires_grad(x);
        self.push(TensorData::new(shape, values), Op::LeakyRelu { x, slope }, rg)
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let values = self.value(x).values.iter().map(|&v| softplus_value(v)).collect();
        let shape = self.value(x).shape.clone();
        let rg = self.requires_grad(x);
        self.push(TensorData::new(shape, values), Op::Softplus(x), rg)
    }

    pub fn logistic(&mut self, x: TensorId) -> TensorId {
        let values = self.value(x).values.iter().map(|&v| logistic_value(v)).collect();
        let shape = self.value(x).shape.clone();
        let rg = self.requires_grad(x);
        self.push(TensorData::new(shape, values), Op::Logistic(x), rg)
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let values = self.value(x).values.iter().map(|&v| v.exp()).collect();
        let shape = self.value(x).shape.clone();
        let rg = self.requires_grad(x);
        self.push(TensorData::new(shape, values), Op::Exp(x), rg)
    }

    pub fn clamp(&mut self, x: TensorId, lo: S, hi: S) -> TensorId {
        let values = self
            .value(x)
            .values
            .iter()
            .map(|&v| if v < lo { lo } else if v > hi { hi } else { v })
            .collect();
        let shape = self.value(x).shape.clone();
        let rg = self.requires_grad(x);
        self.push(TensorData::new(shape, values), Op::Clamp { x, lo, hi }, rg)
    }

    /// Normalizes each row of [n, d] to unit L2 norm.
    pub fn normalize_rows(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 2 {
            return Err(NnError::Invalid(format!("normalize_rows expects [n,d], got {:?}", xs.shape)));
        }
        let (n, d) = (xs.shape[0], xs.shape[1]);
        let tiny = S::from_f64(1e-12);
        let mut values = vec![S::zero(); n * d];
        for r in 0..n {
            let row = &xs.values[r * d..(r + 1) * d];
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(tiny);
            for c in 0..d {
                values[r * d + c] = row[c] / norm;
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![n, d], values), Op::NormalizeRows(x), rg))
    }

    /// Min-avg-max pooling over the point axis: [n, f] -> [3f].
    pub fn mam_pool(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 2 || xs.shape[0] == 0 {
            return Err(NnError::Invalid(format!(
                "mam_pool expects non-empty [n,f], got {:?}",
                xs.shape
            )));
        }
        let (n, f) = (xs.shape[0], xs.shape[1]);
        let mut out = vec![S::zero(); 3 * f];
        let inv_n = S::from_f64(1.0 / n as f64);
        for c in 0..f {
            let mut mn = xs.values[c];
            let mut mx = xs.values[c];
            let mut sum = S::zero();
            for r in 0..n {
                let v = xs.values[r * f + c];
                if v < mn {
                    mn = v;
                }
                if v > mx {
                    mx = v;
                }
                sum = sum + v;
            }
            out[c] = mn;
            out[f + c] = sum * inv_n;
            out[2 * f + c] = mx;
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![3 * f], out), Op::MamPool(x), rg))
    }

    /// [n,3] -> [n,45]: raw coordinate plus sin/cos at frequencies 1,4,...,49.
    pub fn positional_encoding(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 2 || xs.shape[1] != 3 {
            return Err(NnError::Invalid(format!("positional_encoding expects [n,3], got {:?}", xs.shape)));
        }
        let n = xs.shape[0];
        let per_coord = 2 * ENCODING_FREQS.len() + 1;
        let width = 3 * per_coord;
        let mut out = vec![S::zero(); n * width];
        for r in 0..n {
            for c in 0..3 {
                let v = xs.values[r * 3 + c];
                let base = r * width + c * per_coord;
                out[base] = v;
                for (k, &f) in ENCODING_FREQS.iter().enumerate() {
                    let fv = v * S::from_f64(f);
                    out[base + 1 + 2 * k] = fv.sin();
                    out[base + 2 + 2 * k] = fv.cos();
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![n, width], out), Op::PositionalEncoding(x), rg))
    }

    /// Weight normalization: rows of v rescaled to norm g. v [r,c], g [r].
    pub fn weight_norm(&mut self, v: TensorId, g: TensorId) -> Result<TensorId, NnError> {
        let (vs, gs) = (self.value(v), self.value(g));
        if vs.shape.len() != 2 || gs.shape.len() != 1 || gs.shape[0] != vs.shape[0] {
            return Err(NnError::Invalid(format!(
                "weight_norm expects [r,c] and [r], got {:?} {:?}",
                vs.shape, gs.shape
            )));
        }
        let (r, c) = (vs.shape[0], vs.shape[1]);
        let tiny = S::from_f64(1e-12);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &vs.values[i * c..(i + 1) * c];
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(tiny);
            let k = gs.values[i] / norm;
            for j in 0..c {
                out[i * c + j] = row[j] * k;
            }
        }
        let rg = self.rg2(v, g);
        Ok(self.push(TensorData::new(vec![r, c], out), Op::WeightNorm { v, g }, rg))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, NnError> {
        if parts.is_empty() {
            return Err(NnError::Invalid("concat_cols of nothing".into()));
        }
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.shape[0] != n {
                return Err(shape_err((n, "x"), t.shape.clone()));
            }
            total += t.shape[1];
        }
        let mut out = vec![S::zero(); n * total];
        let mut col = 0;
        for &p in parts {
            let t = self.value(p);
            let d = t.shape[1];
            for r in 0..n {
                out[r * total + col..r * total + col + d]
                    .copy_from_slice(&t.values[r * d..(r + 1) * d]);
            }
            col += d;
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(TensorData::new(vec![n, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenates flattened tensors into one vector.
    pub fn concat_flat(&mut self, parts: &[TensorId]) -> Result<TensorId, NnError> {
        if parts.is_empty() {
            return Err(NnError::Invalid("concat_flat of nothing".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.value(p).values);
        }
        let n = out.len();
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(TensorData::new(vec![n], out), Op::ConcatFlat(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 2 || start + len > xs.shape[1] {
            return Err(NnError::Invalid(format!(
                "slice_cols {start}..{} out of {:?}",
                start + len,
                xs.shape
            )));
        }
        let (n, d) = (xs.shape[0], xs.shape[1]);
        let mut out = vec![S::zero(); n * len];
        for r in 0..n {
            out[r * len..(r + 1) * len].copy_from_slice(&xs.values[r * d + start..r * d + start + len]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![n, len], out), Op::SliceCols { x, start, len }, rg))
    }

    /// Contiguous slice of the flattened buffer, reshaped to `shape`.
    pub fn slice_flat(
        &mut self,
        x: TensorId,
        start: usize,
        shape: Vec<usize>,
    ) -> Result<TensorId, NnError> {
        let len: usize = shape.iter().product();
        let xs = self.value(x);
        if start + len > xs.len() {
            return Err(NnError::Invalid(format!(
                "slice_flat {start}..{} out of {} values",
                start + len,
                xs.len()
            )));
        }
        let out = xs.values[start..start + len].to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(shape, out), Op::SliceFlat { x, start, len }, rg))
    }

    /// Repeats a vector [d] into [n, d] rows.
    pub fn repeat_row(&mut self, x: TensorId, n: usize) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 1 {
            return Err(NnError::Invalid(format!("repeat_row expects [d], got {:?}", xs.shape)));
        }
        let d = xs.shape[0];
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(&xs.values);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![n, d], out), Op::RepeatRow { x, n }, rg))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if shape.iter().product::<usize>() != xs.len() {
            return Err(shape_err(xs.len(), shape));
        }
        let out = xs.values.clone();
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(shape, out), Op::Reshape(x), rg))
    }

    /// Copies a value out of the gradient flow (stop-gradient).
    pub fn detach(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).clone();
        self.push(v, Op::Detach, false)
    }

    /// Horizontal finite differences of [C,H,W]: out[c,y,x] = in[c,y,x+1]-in[c,y,x].
    pub fn grad_x(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 3 || xs.shape[2] < 2 {
            return Err(NnError::Invalid(format!("grad_x expects [C,H,W>=2], got {:?}", xs.shape)));
        }
        let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let mut out = vec![S::zero(); c * h * (w - 1)];
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w - 1 {
                    out[(ci * h + y) * (w - 1) + xx] =
                        xs.values[(ci * h + y) * w + xx + 1] - xs.values[(ci * h + y) * w + xx];
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![c, h, w - 1], out), Op::GradX(x), rg))
    }

    /// Vertical finite differences of [C,H,W]: out[c,y,x] = in[c,y+1,x]-in[c,y,x].
    pub fn grad_y(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let xs = self.value(x);
        if xs.shape.len() != 3 || xs.shape[1] < 2 {
            return Err(NnError::Invalid(format!("grad_y expects [C,H>=2,W], got {:?}", xs.shape)));
        }
        let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let mut out = vec![S::zero(); c * (h - 1) * w];
        for ci in 0..c {
            for y in 0..h - 1 {
                for xx in 0..w {
                    out[(ci * (h - 1) + y) * w + xx] =
                        xs.values[(ci * h + y + 1) * w + xx] - xs.values[(ci * h + y) * w + xx];
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(TensorData::new(vec![c, h - 1, w], out), Op::GradY(x), rg))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(a, b)?;
        let n = self.value(a).len().max(1);
        let v = self
            .value(a)
            .values
            .iter()
            .zip(&self.value(b).values)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<S>()
            / S::from_f64(n as f64);
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::scalar(v), Op::Mse(a, b), rg))
    }

    /// Mean absolute error over all elements.
    pub fn l1(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(a, b)?;
        let n = self.value(a).len().max(1);
        let v = self
            .value(a)
            .values
            .iter()
            .zip(&self.value(b).values)
            .map(|(&x, &y)| (x - y).abs())
            .sum::<S>()
            / S::from_f64(n as f64);
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::scalar(v), Op::L1(a, b), rg))
    }

    /// Cosine similarity of two flattened vectors.
    pub fn cosine_pair(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err(self.value(a).len(), self.value(b).len()));
        }
        let tiny = S::from_f64(1e-12);
        let av = &self.value(a).values;
        let bv = &self.value(b).values;
        let dot = av.iter().zip(bv).map(|(&x, &y)| x * y).sum::<S>();
        let na = av.iter().map(|&x| x * x).sum::<S>().sqrt().max(tiny);
        let nb = bv.iter().map(|&x| x * x).sum::<S>().sqrt().max(tiny);
        let rg = self.rg2(a, b);
        Ok(self.push(TensorData::scalar(dot / (na * nb)), Op::CosinePair(a, b), rg))
    }

    /// Closed-form KL divergence of diag N(mu, sigma^2) from N(0, I), with
    /// sigma = exp(log_sigma): 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log_sigma).
    pub fn kl_diag(&mut self, mu: TensorId, log_sigma: TensorId) -> Result<TensorId, NnError> {
        self.same_shape(mu, log_sigma)?;
        let half = S::from_f64(0.5);
        let two = S::from_f64(2.0);
        let v = self
            .value(mu)
            .values
            .iter()
            .zip(&self.value(log_sigma).values)
            .map(|(&m, &ls)| m * m + (ls * two).exp() - S::one() - two * ls)
            .sum::<S>()
            * half;
        let rg = self.rg2(mu, log_sigma);
        Ok(self.push(TensorData::scalar(v), Op::KlDiag { mu, log_sigma }, rg))
    }

    /// mu + noise (*) sigma, the reparameterization trick. `noise` carries no
    /// gradient; with zero noise this is exactly mu.
    pub fn reparameterize(
        &mut self,
        mu: TensorId,
        sigma: TensorId,
        noise: TensorData<S>,
    ) -> Result<TensorId, NnError> {
        let n = self.constant(noise);
        let scaled = self.mul(n, sigma)?;
        self.add(mu, scaled)
    }

    /// Records a custom single-output op with a hand-written VJP.
    pub fn custom(
        &mut self,
        inputs: &[TensorId],
        value: TensorData<S>,
        f: Box<dyn CustomOp<S>>,
    ) -> TensorId {
        let rg = inputs.iter().any(|&p| self.requires_grad(p));
        self.push(value, Op::Custom { inputs: inputs.to_vec(), f }, rg)
    }
}

fn softplus_value<S: Scalar>(v: S) -> S {
    let twenty = S::from_f64(20.0);
    if v > twenty {
        v
    } else if v < -twenty {
        v.exp()
    } else {
        (S::one() + v.exp()).ln()
    }
}

fn logistic_value<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// out[n,o] = x[n,i] * w[i,o] + b, parallel over rows.
fn matmul_into<S: Scalar>(x: &[S], w: &[S], b: &[S], _n: usize, i: usize, o: usize, out: &mut [S]) {
    out.par_chunks_mut(o).enumerate().for_each(|(r, row)| {
        row.copy_from_slice(b);
        let xr = &x[r * i..(r + 1) * i];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == S::zero() {
                continue;
            }
            let wr = &w[k * o..(k + 1) * o];
            for (c, &wv) in wr.iter().enumerate() {
                row[c] = row[c] + xv * wv;
            }
        }
    });
}

/// Backward rule dispatch: accumulates parent gradients for node `idx`.
pub(crate) fn backward_op<S: Scalar>(
    tape: &Tape<S>,
    idx: usize,
    grad: &[S],
    grads: &mut Vec<Option<Vec<S>>>,
) {
    let node = &tape.nodes[idx];
    let needs = |t: &Tape<S>, id: TensorId| t.requires_grad(id);
    match &node.op {
        Op::Leaf | Op::Detach => {}
        Op::Add(a, b) => {
            if needs(tape, *a) {
                accumulate_into(grads, *a, grad.to_vec());
            }
            if needs(tape, *b) {
                accumulate_into(grads, *b, grad.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if needs(tape, *a) {
                accumulate_into(grads, *a, grad.to_vec());
            }
            if needs(tape, *b) {
                accumulate_into(grads, *b, grad.iter().map(|&g| -g).collect());
            }
        }
        Op::Mul(a, b) => {
            if needs(tape, *a) {
                let contrib = grad.iter().zip(&tape.value(*b).values).map(|(&g, &v)| g * v).collect();
                accumulate_into(grads, *a, contrib);
            }
            if needs(tape, *b) {
                let contrib = grad.iter().zip(&tape.value(*a).values).map(|(&g, &v)| g * v).collect();
                accumulate_into(grads, *b, contrib);
            }
        }
        Op::Scale(a, k) => {
            if needs(tape, *a) {
                accumulate_into(grads, *a, grad.iter().map(|&g| g * *k).collect());
            }
        }
        Op::Sum(a) => {
            if needs(tape, *a) {
                accumulate_into(grads, *a, vec![grad[0]; tape.value(*a).len()]);
            }
        }
        Op::Mean(a) => {
            if needs(tape, *a) {
                let n = tape.value(*a).len().max(1);
                let g = grad[0] / S::from_f64(n as f64);
                accumulate_into(grads, *a, vec![g; tape.value(*a).len()]);
            }
        }
        Op::Linear { x, w, b } => {
            let xs = tape.value(*x);
            let ws = tape.value(*w);
            let (n, i) = (xs.shape[0], xs.shape[1]);
            let o = ws.shape[1];
            if needs(tape, *x) {
                let mut dx = vec![S::zero(); n * i];
                dx.par_chunks_mut(i).enumerate().for_each(|(r, row)| {
                    let gr = &grad[r * o..(r + 1) * o];
                    for k in 0..i {
                        let wr = &ws.values[k * o..(k + 1) * o];
                        let mut acc = S::zero();
                        for c in 0..o {
                            acc = acc + gr[c] * wr[c];
                        }
                        row[k] = acc;
                    }
                });
                accumulate_into(grads, *x, dx);
            }
            if needs(tape, *w) {
                let mut dw = vec![S::zero(); i * o];
                dw.par_chunks_mut(o).enumerate().for_each(|(k, row)| {
                    for r in 0..n {
                        let xv = xs.values[r * i + k];
                        if xv == S::zero() {
                            continue;
                        }
                        let gr = &grad[r * o..(r + 1) * o];
                        for c in 0..o {
                            row[c] = row[c] + xv * gr[c];
                        }
                    }
                });
                accumulate_into(grads, *w, dw);
            }
            if needs(tape, *b) {
                let mut db = vec![S::zero(); o];
                for r in 0..n {
                    for c in 0..o {
                        db[c] = db[c] + grad[r * o + c];
                    }
                }
                accumulate_into(grads, *b, db);
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let xs = tape.value(*x);
            let ws = tape.value(*w);
            let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
            let (cout, k) = (ws.shape[0], ws.shape[2]);
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (wd + 2 * pad - k) / stride + 1;
            if needs(tape, *x) {
                let mut dx = vec![S::zero(); cin * h * wd];
                dx.par_chunks_mut(h * wd).enumerate().for_each(|(ci, plane)| {
                    for co in 0..cout {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = grad[(co * ho + oy) * wo + ox];
                                if g == S::zero() {
                                    continue;
                                }
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        plane[iy as usize * wd + ix as usize] = plane
                                            [iy as usize * wd + ix as usize]
                                            + g * ws.values[((co * cin + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                });
                accumulate_into(grads, *x, dx);
            }
            if needs(tape, *w) {
                let mut dw = vec![S::zero(); cout * cin * k * k];
                dw.par_chunks_mut(cin * k * k).enumerate().for_each(|(co, wslice)| {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = grad[(co * ho + oy) * wo + ox];
                            if g == S::zero() {
                                continue;
                            }
                            for ci in 0..cin {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        wslice[(ci * k + ky) * k + kx] = wslice[(ci * k + ky) * k + kx]
                                            + g * xs.values[(ci * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                });
                accumulate_into(grads, *w, dw);
            }
            if needs(tape, *b) {
                let mut db = vec![S::zero(); cout];
                for co in 0..cout {
                    for v in &grad[co * ho * wo..(co + 1) * ho * wo] {
                        db[co] = db[co] + *v;
                    }
                }
                accumulate_into(grads, *b, db);
            }
        }
        Op::Deconv2d { x, w, b, stride, pad } => {
            let xs = tape.value(*x);
            let ws = tape.value(*w);
            let (cin, h, wd) = (xs.shape[0], xs.shape[1], xs.shape[2]);
            let (cout, k) = (ws.shape[1], ws.shape[2]);
            let ho = (h - 1) * stride + k - 2 * pad;
            let wo = (wd - 1) * stride + k - 2 * pad;
            let proj = |i: usize, kk: usize, bound: usize| -> Option<usize> {
                let t = i * stride + kk;
                if t < *pad {
                    return None;
                }
                let o = t - pad;
                if o < bound {
                    Some(o)
                } else {
                    None
                }
            };
            if needs(tape, *x) {
                let mut dx = vec![S::zero(); cin * h * wd];
                dx.par_chunks_mut(h * wd).enumerate().for_each(|(ci, plane)| {
                    for iy in 0..h {
                        for ix in 0..wd {
                            let mut acc = S::zero();
                            for ky in 0..k {
                                let Some(oy) = proj(iy, ky, ho) else { continue };
                                for kx in 0..k {
                                    let Some(ox) = proj(ix, kx, wo) else { continue };
                                    for co in 0..cout {
                                        acc = acc
                                            + grad[(co * ho + oy) * wo + ox]
                                                * ws.values[((ci * cout + co) * k + ky) * k + kx];
                                    }
                                }
                            }
                            plane[iy * wd + ix] = acc;
                        }
                    }
                });
                accumulate_into(grads, *x, dx);
            }
            if needs(tape, *w) {
                let mut dw = vec![S::zero(); cin * cout * k * k];
                dw.par_chunks_mut(cout * k * k).enumerate().for_each(|(ci, wslice)| {
                    for iy in 0..h {
                        for ix in 0..wd {
                            let xv = xs.values[(ci * h + iy) * wd + ix];
                            if xv == S::zero() {
                                continue;
                            }
                            for ky in 0..k {
                                let Some(oy) = proj(iy, ky, ho) else { continue };
                                for kx in 0..k {
                                    let Some(ox) = proj(ix, kx, wo) else { continue };
                                    for co in 0..cout {
                                        wslice[(co * k + ky) * k + kx] = wslice[(co * k + ky) * k + kx]
                                            + xv * grad[(co * ho + oy) * wo + ox];
                                    }
                                }
                            }
                        }
                    }
                });
                accumulate_into(grads, *w, dw);
            }
            if needs(tape, *b) {
                let mut db = vec![S::zero(); cout];
                for co in 0..cout {
                    for v in &grad[co * ho * wo..(co + 1) * ho * wo] {
                        db[co] = db[co] + *v;
                    }
                }
                accumulate_into(grads, *b, db);
            }
        }
        Op::AvgPool2(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let (ho, wo) = (h / 2, w / 2);
                let quarter = S::from_f64(0.25);
                let mut dx = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = grad[(ci * ho + oy) * wo + ox] * quarter;
                            let base = (ci * h + 2 * oy) * w + 2 * ox;
                            dx[base] = dx[base] + g;
                            dx[base + 1] = dx[base + 1] + g;
                            dx[base + w] = dx[base + w] + g;
                            dx[base + w + 1] = dx[base + w + 1] + g;
                        }
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::LeakyRelu { x, slope } => {
            if needs(tape, *x) {
                let contrib = tape
                    .value(*x)
                    .values
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > S::zero() { g } else { g * *slope })
                    .collect();
                accumulate_into(grads, *x, contrib);
            }
        }
        Op::Softplus(x) => {
            if needs(tape, *x) {
                let contrib = tape
                    .value(*x)
                    .values
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| g * logistic_value(v))
                    .collect();
                accumulate_into(grads, *x, contrib);
            }
        }
        Op::Logistic(x) => {
            if needs(tape, *x) {
                let contrib = tape.nodes[idx]
                    .value
                    .values
                    .iter()
                    .zip(grad)
                    .map(|(&y, &g)| g * y * (S::one() - y))
                    .collect();
                accumulate_into(grads, *x, contrib);
            }
        }
        Op::Exp(x) => {
            if needs(tape, *x) {
                let contrib =
                    tape.nodes[idx].value.values.iter().zip(grad).map(|(&y, &g)| g * y).collect();
                accumulate_into(grads, *x, contrib);
            }
        }
        Op::Clamp { x, lo, hi } => {
            if needs(tape, *x) {
                let contrib = tape
                    .value(*x)
                    .values
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v < *lo || v > *hi { S::zero() } else { g })
                    .collect();
                accumulate_into(grads, *x, contrib);
            }
        }
        Op::NormalizeRows(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let ys = &tape.nodes[idx].value;
                let (n, d) = (xs.shape[0], xs.shape[1]);
                let tiny = S::from_f64(1e-12);
                let mut dx = vec![S::zero(); n * d];
                for r in 0..n {
                    let row = &xs.values[r * d..(r + 1) * d];
                    let yrow = &ys.values[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(tiny);
                    let dot = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum::<S>();
                    for c in 0..d {
                        dx[r * d + c] = (grow[c] - dot * yrow[c]) / norm;
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::MamPool(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let (n, f) = (xs.shape[0], xs.shape[1]);
                let inv_n = S::from_f64(1.0 / n as f64);
                let mut dx = vec![S::zero(); n * f];
                for c in 0..f {
                    // min/max route to the first extremum occurrence
                    let mut imn = 0;
                    let mut imx = 0;
                    for r in 1..n {
                        if xs.values[r * f + c] < xs.values[imn * f + c] {
                            imn = r;
                        }
                        if xs.values[r * f + c] > xs.values[imx * f + c] {
                            imx = r;
                        }
                    }
                    dx[imn * f + c] = dx[imn * f + c] + grad[c];
                    dx[imx * f + c] = dx[imx * f + c] + grad[2 * f + c];
                    let gm = grad[f + c] * inv_n;
                    for r in 0..n {
                        dx[r * f + c] = dx[r * f + c] + gm;
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::PositionalEncoding(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let n = xs.shape[0];
                let per_coord = 2 * ENCODING_FREQS.len() + 1;
                let width = 3 * per_coord;
                let mut dx = vec![S::zero(); n * 3];
                for r in 0..n {
                    for c in 0..3 {
                        let v = xs.values[r * 3 + c];
                        let base = r * width + c * per_coord;
                        let mut acc = grad[base];
                        for (k, &f) in ENCODING_FREQS.iter().enumerate() {
                            let fs = S::from_f64(f);
                            let fv = v * fs;
                            acc = acc + grad[base + 1 + 2 * k] * fs * fv.cos();
                            acc = acc - grad[base + 2 + 2 * k] * fs * fv.sin();
                        }
                        dx[r * 3 + c] = acc;
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::WeightNorm { v, g } => {
            let vs = tape.value(*v);
            let gs = tape.value(*g);
            let (r, c) = (vs.shape[0], vs.shape[1]);
            let tiny = S::from_f64(1e-12);
            let mut dv = if needs(tape, *v) { Some(vec![S::zero(); r * c]) } else { None };
            let mut dg = if needs(tape, *g) { Some(vec![S::zero(); r]) } else { None };
            for i in 0..r {
                let row = &vs.values[i * c..(i + 1) * c];
                let grow = &grad[i * c..(i + 1) * c];
                let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt().max(tiny);
                let dot = grow.iter().zip(row).map(|(&a, &b)| a * b).sum::<S>() / norm;
                if let Some(dg) = dg.as_mut() {
                    dg[i] = dot;
                }
                if let Some(dv) = dv.as_mut() {
                    let k = gs.values[i] / norm;
                    for j in 0..c {
                        dv[i * c + j] = k * (grow[j] - dot * row[j] / norm);
                    }
                }
            }
            if let Some(dv) = dv {
                accumulate_into(grads, *v, dv);
            }
            if let Some(dg) = dg {
                accumulate_into(grads, *g, dg);
            }
        }
        Op::ConcatCols(parts) => {
            let n = tape.value(parts[0]).rows();
            let total: usize = parts.iter().map(|&p| tape.value(p).shape[1]).sum();
            let mut col = 0;
            for &p in parts {
                let d = tape.value(p).shape[1];
                if needs(tape, p) {
                    let mut dp = vec![S::zero(); n * d];
                    for r in 0..n {
                        dp[r * d..(r + 1) * d]
                            .copy_from_slice(&grad[r * total + col..r * total + col + d]);
                    }
                    accumulate_into(grads, p, dp);
                }
                col += d;
            }
        }
        Op::ConcatFlat(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = tape.value(p).len();
                if needs(tape, p) {
                    accumulate_into(grads, p, grad[off..off + len].to_vec());
                }
                off += len;
            }
        }
        Op::SliceCols { x, start, len } => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let (n, d) = (xs.shape[0], xs.shape[1]);
                let mut dx = vec![S::zero(); n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + len]
                        .copy_from_slice(&grad[r * len..(r + 1) * len]);
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::SliceFlat { x, start, len } => {
            if needs(tape, *x) {
                let mut dx = vec![S::zero(); tape.value(*x).len()];
                dx[*start..start + len].copy_from_slice(grad);
                accumulate_into(grads, *x, dx);
            }
        }
        Op::RepeatRow { x, n } => {
            if needs(tape, *x) {
                let d = tape.value(*x).shape[0];
                let mut dx = vec![S::zero(); d];
                for r in 0..*n {
                    for c in 0..d {
                        dx[c] = dx[c] + grad[r * d + c];
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::Reshape(x) => {
            if needs(tape, *x) {
                accumulate_into(grads, *x, grad.to_vec());
            }
        }
        Op::GradX(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let mut dx = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w - 1 {
                            let g = grad[(ci * h + y) * (w - 1) + xx];
                            dx[(ci * h + y) * w + xx + 1] = dx[(ci * h + y) * w + xx + 1] + g;
                            dx[(ci * h + y) * w + xx] = dx[(ci * h + y) * w + xx] - g;
                        }
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::GradY(x) => {
            if needs(tape, *x) {
                let xs = tape.value(*x);
                let (c, h, w) = (xs.shape[0], xs.shape[1], xs.shape[2]);
                let mut dx = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h - 1 {
                        for xx in 0..w {
                            let g = grad[(ci * (h - 1) + y) * w + xx];
                            dx[(ci * h + y + 1) * w + xx] = dx[(ci * h + y + 1) * w + xx] + g;
                            dx[(ci * h + y) * w + xx] = dx[(ci * h + y) * w + xx] - g;
                        }
                    }
                }
                accumulate_into(grads, *x, dx);
            }
        }
        Op::Mse(a, b) => {
            let n = S::from_f64(tape.value(*a).len().max(1) as f64);
            let g2 = grad[0] * S::from_f64(2.0) / n;
            if needs(tape, *a) {
                let contrib = tape
                    .value(*a)
                    .values
                    .iter()
                    .zip(&tape.value(*b).values)
                    .map(|(&x, &y)| g2 * (x - y))
                    .collect();
                accumulate_into(grads, *a, contrib);
            }
            if needs(tape, *b) {
                let contrib = tape
                    .value(*a)
                    .values
                    .iter()
                    .zip(&tape.value(*b).values)
                    .map(|(&x, &y)| -g2 * (x - y))
                    .collect();
                accumulate_into(grads, *b, contrib);
            }
        }
        Op::L1(a, b) => {
            let n = S::from_f64(tape.value(*a).len().max(1) as f64);
            let g = grad[0] / n;
            let sign = |x: S, y: S| {
                if x > y {
                    g
                } else if x < y {
                    -g
                } else {
                    S::zero()
                }
            };
            if needs(tape, *a) {
                let contrib = tape
                    .value(*a)
                    .values
                    .iter()
                    .zip(&tape.value(*b).values)
                    .map(|(&x, &y)| sign(x, y))
                    .collect();
                accumulate_into(grads, *a, contrib);
            }
            if needs(tape, *b) {
                let contrib = tape
                    .value(*a)
                    .values
                    .iter()
                    .zip(&tape.value(*b).values)
                    .map(|(&x, &y)| -sign(x, y))
                    .collect();
                accumulate_into(grads, *b, contrib);
            }
        }
        Op::CosinePair(a, b) => {
            let av = &tape.value(*a).values;
            let bv = &tape.value(*b).values;
            let tiny = S::from_f64(1e-12);
            let dot = av.iter().zip(bv).map(|(&x, &y)| x * y).sum::<S>();
            let na = av.iter().map(|&x| x * x).sum::<S>().sqrt().max(tiny);
            let nb = bv.iter().map(|&x| x * x).sum::<S>().sqrt().max(tiny);
            let g = grad[0];
            if needs(tape, *a) {
                let contrib = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| g * (y / (na * nb) - dot * x / (na * na * na * nb)))
                    .collect();
                accumulate_into(grads, *a, contrib);
            }
            if needs(tape, *b) {
                let contrib = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| g * (x / (na * nb) - dot * y / (nb * nb * nb * na)))
                    .collect();
                accumulate_into(grads, *b, contrib);
            }
        }
        Op::KlDiag { mu, log_sigma } => {
            let g = grad[0];
            let two = S::from_f64(2.0);
            if needs(tape, *mu) {
                let contrib = tape.value(*mu).values.iter().map(|&m| g * m).collect();
                accumulate_into(grads, *mu, contrib);
            }
            if needs(tape, *log_sigma) {
                let contrib = tape
                    .value(*log_sigma)
                    .values
                    .iter()
                    .map(|&ls| g * ((ls * two).exp() - S::one()))
                    .collect();
                accumulate_into(grads, *log_sigma, contrib);
            }
        }
        Op::Custom { inputs, f } => {
            let shape = tape.nodes[idx].value.shape.clone();
            let out_grad = TensorData::new(shape, grad.to_vec());
            let vals: Vec<&TensorData<S>> = inputs.iter().map(|&i| tape.value(i)).collect();
            let contribs = f.backward(&out_grad, &vals);
            debug_assert_eq!(contribs.len(), inputs.len());
            for (inp, contrib) in inputs.iter().zip(contribs) {
                if let Some(c) = contrib {
                    if needs(tape, *inp) {
                        accumulate_into(grads, *inp, c.values);
                    }
                }
            }
        }
    }
}
