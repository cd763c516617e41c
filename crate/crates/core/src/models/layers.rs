use crate::graphbuild::NormalizedGraph;
use crate::numcore::{gemm_nn, gemm_tn, glorot_init, softmax_rows, Activation, Prng, Tensor};
use crate::{Error, Result, Scalar};

/// Graph convolution weights, `F_in × F_out` plus a bias row.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> GcnLayerParams<S> {
    pub fn new(f_in: usize, f_out: usize, rng: &mut Prng) -> Self {
        Self {
            weight: glorot_init(f_in, f_out, rng),
            bias: Tensor::zeros(&[f_out]),
        }
    }

    pub fn zeros(f_in: usize, f_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[f_in, f_out]),
            bias: Tensor::zeros(&[f_out]),
        }
    }

    pub fn f_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn f_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Dense affine map `x · W + b` on a pre-propagated input.
pub(crate) fn affine<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let mut z = x.matmul(weight)?;
    z.add_row_vector(bias)?;
    Ok(z)
}

/// `σ(Â · H · W + b)`.
pub fn gcn_forward<S: Scalar>(
    graph: &NormalizedGraph<S>,
    h: &Tensor<S>,
    params: &GcnLayerParams<S>,
    activation: Activation,
) -> Result<Tensor<S>> {
    let p = graph.propagate(h)?;
    let z = affine(&p, &params.weight, &params.bias)?;
    Ok(z.map(|v| activation.apply(v)))
}

/// Gradients of one graph convolution given the upstream gradient `dy` of its
/// activated output `y`. Returns `(dW, db, dH)`.
pub fn gcn_backward<S: Scalar>(
    graph: &NormalizedGraph<S>,
    h: &Tensor<S>,
    params: &GcnLayerParams<S>,
    activation: Activation,
    y: &Tensor<S>,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let p = graph.propagate(h)?;
    let dz = dy.zip_map(y, |g, out| g * activation.derivative_from_output(out))?;
    let dw = p.matmul_tn(&dz)?;
    let db = dz.sum_rows();
    let dp = dz.matmul_nt(&params.weight)?;
    let dh = graph.propagate_transpose(&dp)?;
    Ok((dw, db, dh))
}

/// Gated recurrent unit weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<S> {
    pub w_z: Tensor<S>,
    pub w_r: Tensor<S>,
    pub w_h: Tensor<S>,
    pub u_z: Tensor<S>,
    pub u_r: Tensor<S>,
    pub u_h: Tensor<S>,
    pub b_z: Tensor<S>,
    pub b_r: Tensor<S>,
    pub b_h: Tensor<S>,
}

impl<S: Scalar> GruParams<S> {
    pub fn new(d_in: usize, d_h: usize, rng: &mut Prng) -> Self {
        Self {
            w_z: glorot_init(d_in, d_h, rng),
            w_r: glorot_init(d_in, d_h, rng),
            w_h: glorot_init(d_in, d_h, rng),
            u_z: glorot_init(d_h, d_h, rng),
            u_r: glorot_init(d_h, d_h, rng),
            u_h: glorot_init(d_h, d_h, rng),
            b_z: Tensor::zeros(&[d_h]),
            b_r: Tensor::zeros(&[d_h]),
            b_h: Tensor::zeros(&[d_h]),
        }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w_z: Tensor::zeros(&[d_in, d_h]),
            w_r: Tensor::zeros(&[d_in, d_h]),
            w_h: Tensor::zeros(&[d_in, d_h]),
            u_z: Tensor::zeros(&[d_h, d_h]),
            u_r: Tensor::zeros(&[d_h, d_h]),
            u_h: Tensor::zeros(&[d_h, d_h]),
            b_z: Tensor::zeros(&[d_h]),
            b_r: Tensor::zeros(&[d_h]),
            b_h: Tensor::zeros(&[d_h]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn d_h(&self) -> usize {
        self.w_z.shape()[1]
    }

    fn check(&self) -> Result<()> {
        let (d_in, d_h) = (self.d_in(), self.d_h());
        for w in [&self.w_z, &self.w_r, &self.w_h] {
            if w.shape() != [d_in, d_h] {
                return Err(Error::shape("gru W", &[d_in, d_h], w.shape()));
            }
        }
        for u in [&self.u_z, &self.u_r, &self.u_h] {
            if u.shape() != [d_h, d_h] {
                return Err(Error::shape("gru U", &[d_h, d_h], u.shape()));
            }
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            if b.shape() != [d_h] {
                return Err(Error::shape("gru b", &[d_h], b.shape()));
            }
        }
        Ok(())
    }
}

/// One GRU step for a single sample.
pub fn gru_cell<S: Scalar>(x_t: &Tensor<S>, h_prev: &Tensor<S>, params: &GruParams<S>) -> Result<Tensor<S>> {
    params.check()?;
    if x_t.len() != params.d_in() {
        return Err(Error::shape("gru_cell x", &[params.d_in()], x_t.shape()));
    }
    if h_prev.len() != params.d_h() {
        return Err(Error::shape("gru_cell h", &[params.d_h()], h_prev.shape()));
    }
    let x = x_t.clone().reshape(vec![1, params.d_in()])?;
    let h0 = h_prev.clone().reshape(vec![1, params.d_h()])?;
    let trace = gru_run(&x, 1, 1, &h0, params)?;
    trace.last_hidden().reshape(vec![params.d_h()])
}

/// Folds [`gru_cell`] over the rows of `window` from a zero state and returns
/// the final hidden state.
pub fn gru_sequence<S: Scalar>(window: &Tensor<S>, params: &GruParams<S>) -> Result<Tensor<S>> {
    params.check()?;
    let (t, d) = window.dims2("gru_sequence")?;
    if t == 0 {
        return Err(Error::param("gru_sequence: empty window"));
    }
    if d != params.d_in() {
        return Err(Error::shape("gru_sequence", window.shape(), &[t, params.d_in()]));
    }
    let trace = gru_run(window, t, 1, &Tensor::zeros(&[1, params.d_h()]), params)?;
    trace.last_hidden().reshape(vec![params.d_h()])
}

/// Forward activations of a batched GRU unrolled over `steps` steps.
///
/// Every `[steps·batch × ·]` tensor is time-major: row `t·batch + b` holds
/// sample `b` at step `t`.
pub(crate) struct GruTrace<S> {
    steps: usize,
    batch: usize,
    d_h: usize,
    z: Tensor<S>,
    r: Tensor<S>,
    cand: Tensor<S>,
    h_prev: Tensor<S>,
    rh: Tensor<S>,
    h_last: Tensor<S>,
}

impl<S: Scalar> GruTrace<S> {
    pub(crate) fn last_hidden(&self) -> Tensor<S> {
        self.h_last.clone()
    }
}

pub(crate) fn gru_run<S: Scalar>(
    x: &Tensor<S>,
    steps: usize,
    batch: usize,
    h0: &Tensor<S>,
    p: &GruParams<S>,
) -> Result<GruTrace<S>> {
    let d_h = p.d_h();
    let rows = steps * batch;
    if x.rows() != rows || x.cols() != p.d_in() {
        return Err(Error::shape("gru input", x.shape(), &[rows, p.d_in()]));
    }
    let mut xz = affine(x, &p.w_z, &p.b_z)?;
    let mut xr = affine(x, &p.w_r, &p.b_r)?;
    let mut xh = affine(x, &p.w_h, &p.b_h)?;
    let mut h_prev_all = Tensor::zeros(&[rows, d_h]);
    let mut rh_all = Tensor::zeros(&[rows, d_h]);
    let mut h = h0.data().to_vec();
    let width = batch * d_h;
    for t in 0..steps {
        let span = t * width..(t + 1) * width;
        h_prev_all.data_mut()[span.clone()].copy_from_slice(&h);
        let az = &mut xz.data_mut()[span.clone()];
        gemm_nn(batch, d_h, d_h, &h, p.u_z.data(), az);
        for v in az.iter_mut() {
            *v = crate::numcore::sigmoid(*v);
        }
        let ar = &mut xr.data_mut()[span.clone()];
        gemm_nn(batch, d_h, d_h, &h, p.u_r.data(), ar);
        for v in ar.iter_mut() {
            *v = crate::numcore::sigmoid(*v);
        }
        let rh = &mut rh_all.data_mut()[span.clone()];
        for ((o, &r), &hp) in rh.iter_mut().zip(&xr.data()[span.clone()]).zip(&h) {
            *o = r * hp;
        }
        let ah = &mut xh.data_mut()[span.clone()];
        gemm_nn(batch, d_h, d_h, &rh_all.data()[span.clone()], p.u_h.data(), ah);
        for v in ah.iter_mut() {
            *v = v.tanh();
        }
        for ((hv, &z), &c) in h.iter_mut().zip(&xz.data()[span.clone()]).zip(&xh.data()[span.clone()]) {
            *hv = (S::one() - z) * *hv + z * c;
        }
    }
    Ok(GruTrace {
        steps,
        batch,
        d_h,
        z: xz,
        r: xr,
        cand: xh,
        h_prev: h_prev_all,
        rh: rh_all,
        h_last: Tensor::new(vec![batch, d_h], h)?,
    })
}

/// Backpropagation through time. Accumulates parameter gradients into
/// `grads` and returns the gradient with respect to the inputs when
/// `want_dx` is set.
pub(crate) fn gru_backward<S: Scalar>(
    x: &Tensor<S>,
    trace: &GruTrace<S>,
    p: &GruParams<S>,
    dh_last: &Tensor<S>,
    grads: &mut GruParams<S>,
    want_dx: bool,
) -> Result<Option<Tensor<S>>> {
    let (steps, batch, d_h) = (trace.steps, trace.batch, trace.d_h);
    let rows = steps * batch;
    let width = batch * d_h;
    let u_z_t = p.u_z.transpose()?;
    let u_r_t = p.u_r.transpose()?;
    let u_h_t = p.u_h.transpose()?;
    let mut da_z = Tensor::zeros(&[rows, d_h]);
    let mut da_r = Tensor::zeros(&[rows, d_h]);
    let mut da_h = Tensor::zeros(&[rows, d_h]);
    let mut dh = dh_last.data().to_vec();
    let mut d_rh = vec![S::zero(); width];
    for t in (0..steps).rev() {
        let span = t * width..(t + 1) * width;
        let z = &trace.z.data()[span.clone()];
        let r = &trace.r.data()[span.clone()];
        let c = &trace.cand.data()[span.clone()];
        let hp = &trace.h_prev.data()[span.clone()];
        {
            let dz_out = &mut da_z.data_mut()[span.clone()];
            let dh_out = &mut da_h.data_mut()[span.clone()];
            for i in 0..width {
                let dz = dh[i] * (c[i] - hp[i]);
                dz_out[i] = dz * z[i] * (S::one() - z[i]);
                dh_out[i] = dh[i] * z[i] * (S::one() - c[i] * c[i]);
            }
        }
        d_rh.iter_mut().for_each(|v| *v = S::zero());
        gemm_nn(batch, d_h, d_h, &da_h.data()[span.clone()], u_h_t.data(), &mut d_rh);
        {
            let dr_out = &mut da_r.data_mut()[span.clone()];
            for i in 0..width {
                dr_out[i] = d_rh[i] * hp[i] * r[i] * (S::one() - r[i]);
            }
        }
        for i in 0..width {
            dh[i] = dh[i] * (S::one() - z[i]) + d_rh[i] * r[i];
        }
        gemm_nn(batch, d_h, d_h, &da_z.data()[span.clone()], u_z_t.data(), &mut dh);
        gemm_nn(batch, d_h, d_h, &da_r.data()[span.clone()], u_r_t.data(), &mut dh);
    }
    let d_in = p.d_in();
    gemm_tn(rows, d_in, d_h, x.data(), da_z.data(), grads.w_z.data_mut());
    gemm_tn(rows, d_in, d_h, x.data(), da_r.data(), grads.w_r.data_mut());
    gemm_tn(rows, d_in, d_h, x.data(), da_h.data(), grads.w_h.data_mut());
    gemm_tn(rows, d_h, d_h, trace.h_prev.data(), da_z.data(), grads.u_z.data_mut());
    gemm_tn(rows, d_h, d_h, trace.h_prev.data(), da_r.data(), grads.u_r.data_mut());
    gemm_tn(rows, d_h, d_h, trace.rh.data(), da_h.data(), grads.u_h.data_mut());
    grads.b_z.axpy(S::one(), &da_z.sum_rows())?;
    grads.b_r.axpy(S::one(), &da_r.sum_rows())?;
    grads.b_h.axpy(S::one(), &da_h.sum_rows())?;
    if !want_dx {
        return Ok(None);
    }
    let mut dx = Tensor::zeros(&[rows, d_in]);
    for (da, w) in [(&da_z, &p.w_z), (&da_r, &p.w_r), (&da_h, &p.w_h)] {
        let wt = w.transpose()?;
        gemm_nn(rows, d_h, d_in, da.data(), wt.data(), dx.data_mut());
    }
    Ok(Some(dx))
}

/// Temporal convolution kernels, `n_filters × kernel_size × D_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dParams<S> {
    pub kernels: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Conv1dParams<S> {
    pub fn new(n_filters: usize, kernel_size: usize, d_in: usize, rng: &mut Prng) -> Self {
        let flat = glorot_init(n_filters, kernel_size * d_in, rng);
        Self {
            kernels: flat.reshape(vec![n_filters, kernel_size, d_in]).expect("same element count"),
            bias: Tensor::zeros(&[n_filters]),
        }
    }

    pub fn zeros(n_filters: usize, kernel_size: usize, d_in: usize) -> Self {
        Self {
            kernels: Tensor::zeros(&[n_filters, kernel_size, d_in]),
            bias: Tensor::zeros(&[n_filters]),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn d_in(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// Kernels flattened and transposed to `(K·D_in) × n_filters`.
    fn columns(&self) -> Tensor<S> {
        let (f, kd) = (self.n_filters(), self.kernel_size() * self.d_in());
        Tensor::new(vec![f, kd], self.kernels.data().to_vec())
            .and_then(|t| t.transpose())
            .expect("kernel tensor is 3-d")
    }
}

/// Same-padded ReLU convolution over `T` for one window: `T × n_filters`.
pub fn conv1d_forward<S: Scalar>(window: &Tensor<S>, params: &Conv1dParams<S>) -> Result<Tensor<S>> {
    let (t, d) = window.dims2("conv1d_forward")?;
    if d != params.d_in() {
        return Err(Error::shape("conv1d_forward", window.shape(), &[t, params.d_in()]));
    }
    Ok(conv_run(window, t, 1, params)?.y)
}

pub(crate) struct ConvTrace<S> {
    steps: usize,
    batch: usize,
    cols: Tensor<S>,
    /// Activated map, time-major `[steps·batch × n_filters]`.
    pub(crate) y: Tensor<S>,
}

/// Zero-padded patches: row `t·batch + b` holds the `K` input rows centred
/// on step `t` of sample `b`, concatenated.
fn im2col<S: Scalar>(x: &Tensor<S>, steps: usize, batch: usize, k: usize) -> Tensor<S> {
    let d = x.cols();
    let pad = k / 2;
    let mut cols = Tensor::zeros(&[steps * batch, k * d]);
    for t in 0..steps {
        for tap in 0..k {
            let Some(src_t) = (t + tap).checked_sub(pad).filter(|&s| s < steps) else {
                continue;
            };
            for b in 0..batch {
                let src = x.row(src_t * batch + b);
                cols.row_mut(t * batch + b)[tap * d..(tap + 1) * d].copy_from_slice(src);
            }
        }
    }
    cols
}

pub(crate) fn conv_run<S: Scalar>(x: &Tensor<S>, steps: usize, batch: usize, p: &Conv1dParams<S>) -> Result<ConvTrace<S>> {
    let k = p.kernel_size();
    if k % 2 == 0 {
        return Err(Error::param(format!("conv1d: kernel size {k} must be odd")));
    }
    if k > steps {
        return Err(Error::param(format!("conv1d: kernel size {k} exceeds window length {steps}")));
    }
    if x.rows() != steps * batch || x.cols() != p.d_in() {
        return Err(Error::shape("conv1d input", x.shape(), &[steps * batch, p.d_in()]));
    }
    let cols = im2col(x, steps, batch, k);
    let mut y = affine(&cols, &p.columns(), &p.bias)?;
    y.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
    Ok(ConvTrace { steps, batch, cols, y })
}

/// Global max over steps: `batch × n_filters` plus the winning step of each
/// entry (first one on ties).
pub(crate) fn max_pool<S: Scalar>(trace: &ConvTrace<S>) -> (Tensor<S>, Vec<usize>) {
    let (steps, batch) = (trace.steps, trace.batch);
    let f = trace.y.cols();
    let mut pooled = Tensor::zeros(&[batch, f]);
    let mut argmax = vec![0usize; batch * f];
    for b in 0..batch {
        let out = pooled.row_mut(b);
        out.copy_from_slice(trace.y.row(b));
        for t in 1..steps {
            for (j, &v) in trace.y.row(t * batch + b).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[b * f + j] = t;
                }
            }
        }
    }
    (pooled, argmax)
}

/// Backward through max-pool, ReLU and the convolution. Accumulates into
/// `grads`; returns the input gradient when `want_dx` is set.
pub(crate) fn conv_pool_backward<S: Scalar>(
    trace: &ConvTrace<S>,
    argmax: &[usize],
    p: &Conv1dParams<S>,
    dpooled: &Tensor<S>,
    grads: &mut Conv1dParams<S>,
    want_dx: bool,
) -> Result<Option<Tensor<S>>> {
    let (steps, batch) = (trace.steps, trace.batch);
    let f = p.n_filters();
    let kd = p.kernel_size() * p.d_in();
    let mut dz = Tensor::zeros(&[steps * batch, f]);
    for b in 0..batch {
        for j in 0..f {
            let row = argmax[b * f + j] * batch + b;
            if trace.y.at(row, j) > S::zero() {
                dz.row_mut(row)[j] = dpooled.at(b, j);
            }
        }
    }
    // dK is (K·D_in) × n_filters here; the stored layout is its transpose.
    let mut dk_t = Tensor::zeros(&[kd, f]);
    gemm_tn(steps * batch, kd, f, trace.cols.data(), dz.data(), dk_t.data_mut());
    let dk = dk_t.transpose()?;
    for (g, &v) in grads.kernels.data_mut().iter_mut().zip(dk.data()) {
        *g = *g + v;
    }
    grads.bias.axpy(S::one(), &dz.sum_rows())?;
    if !want_dx {
        return Ok(None);
    }
    let mut dcols = Tensor::zeros(&[steps * batch, kd]);
    gemm_nn(steps * batch, f, kd, dz.data(), p.kernels.data(), dcols.data_mut());
    let d = p.d_in();
    let k = p.kernel_size();
    let pad = k / 2;
    let mut dx = Tensor::zeros(&[steps * batch, d]);
    for t in 0..steps {
        for tap in 0..k {
            let Some(src_t) = (t + tap).checked_sub(pad).filter(|&s| s < steps) else {
                continue;
            };
            for b in 0..batch {
                let g = &dcols.row(t * batch + b)[tap * d..(tap + 1) * d];
                for (o, &v) in dx.row_mut(src_t * batch + b).iter_mut().zip(g) {
                    *o = *o + v;
                }
            }
        }
    }
    Ok(Some(dx))
}

/// Two-class softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> HeadParams<S> {
    pub fn new(d_in: usize, rng: &mut Prng) -> Self {
        Self {
            weight: glorot_init(d_in, 2, rng),
            bias: Tensor::zeros(&[2]),
        }
    }

    pub fn zeros(d_in: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_in, 2]),
            bias: Tensor::zeros(&[2]),
        }
    }
}

/// `softmax(h · W + b)` for a batch `h` of row vectors.
pub fn head_forward<S: Scalar>(h: &Tensor<S>, params: &HeadParams<S>) -> Result<Tensor<S>> {
    let h = if h.shape().len() == 1 {
        h.clone().reshape(vec![1, h.len()])?
    } else {
        h.clone()
    };
    Ok(softmax_rows(&affine(&h, &params.weight, &params.bias)?))
}

/// Accumulates head gradients from `dlogits`; returns the gradient with
/// respect to `h`.
pub(crate) fn head_backward<S: Scalar>(
    h: &Tensor<S>,
    p: &HeadParams<S>,
    dlogits: &Tensor<S>,
    grads: &mut HeadParams<S>,
) -> Result<Tensor<S>> {
    grads.weight.axpy(S::one(), &h.matmul_tn(dlogits)?)?;
    grads.bias.axpy(S::one(), &dlogits.sum_rows())?;
    dlogits.matmul_nt(&p.weight)
}
