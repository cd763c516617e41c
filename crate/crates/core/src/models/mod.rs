//! Neural layers and the five architectures composed from them.
//!
//! Window models consume samples identified by their window's first row `s`;
//! the window covers rows `s..s+T` and is labelled by row `s+T-1`. The
//! node classifier (`gcn_only`) consumes row indices directly.

mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use layers::{
    conv1d_forward, gcn_backward, gcn_forward, gru_cell, gru_sequence, head_forward, Conv1dParams, GcnLayerParams,
    GruParams, HeadParams,
};
use layers::{affine, conv_pool_backward, conv_run, gru_backward, gru_run, head_backward, max_pool};

use crate::graphbuild::NormalizedGraph;
use crate::numcore::{cross_entropy, dropout_mask, softmax_rows, Activation, Prng, Tensor};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    GcnGru,
    GcnOnly,
    GruOnly,
    CnnOnly,
    GcnCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::GcnGru,
        Architecture::GcnOnly,
        Architecture::GruOnly,
        Architecture::CnnOnly,
        Architecture::GcnCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::GcnGru => "gcn_gru",
            Architecture::GcnOnly => "gcn_only",
            Architecture::GruOnly => "gru_only",
            Architecture::CnnOnly => "cnn_only",
            Architecture::GcnCnn => "gcn_cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Architecture::GcnGru | Architecture::GcnOnly | Architecture::GcnCnn)
    }

    /// Whether samples are sliding windows rather than single rows.
    pub fn uses_windows(self) -> bool {
        self != Architecture::GcnOnly
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape and regularisation hyperparameters of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Input feature count.
    pub n_features: usize,
    /// Graph convolution width.
    pub d_g: usize,
    /// Recurrent state width.
    pub d_h: usize,
    pub n_filters: usize,
    pub kernel_size: usize,
    /// Applied to graph convolution outputs during training.
    pub dropout: f64,
    /// Window length `T`.
    pub window: usize,
    /// Graph neighbours per node.
    pub knn_k: usize,
    /// Minimum absolute correlation for a graph edge.
    pub tau: f64,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, n_features: usize) -> Self {
        Self {
            architecture,
            n_features,
            d_g: 64,
            d_h: 64,
            n_filters: 64,
            kernel_size: 3,
            dropout: 0.1,
            window: 10,
            knn_k: 5,
            tau: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_features == 0 || self.d_g == 0 || self.d_h == 0 || self.n_filters == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.window == 0 {
            return bad("window length must be positive".into());
        }
        if self.kernel_size % 2 == 0 || self.kernel_size > self.window {
            return bad(format!(
                "kernel size {} must be odd and at most the window length {}",
                self.kernel_size, self.window
            ));
        }
        Ok(())
    }
}

/// One `key=value` line per field; [`FromStr`] reads it back exactly.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "architecture={}", self.architecture)?;
        writeln!(f, "n_features={}", self.n_features)?;
        writeln!(f, "d_g={}", self.d_g)?;
        writeln!(f, "d_h={}", self.d_h)?;
        writeln!(f, "n_filters={}", self.n_filters)?;
        writeln!(f, "kernel_size={}", self.kernel_size)?;
        writeln!(f, "dropout={}", self.dropout)?;
        writeln!(f, "window={}", self.window)?;
        writeln!(f, "knn_k={}", self.knn_k)?;
        writeln!(f, "tau={}", self.tau)
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = ModelSpec::new(Architecture::GcnGru, 1);
        let mut seen_arch = false;
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("model spec line without '=': {line:?}")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| Error::Format(format!("{key}: {e}")));
            let real = |v: &str| v.parse::<f64>().map_err(|e| Error::Format(format!("{key}: {e}")));
            match key {
                "architecture" => {
                    spec.architecture = Architecture::parse(value)
                        .ok_or_else(|| Error::Format(format!("unknown architecture {value:?}")))?;
                    seen_arch = true;
                }
                "n_features" => spec.n_features = num(value)?,
                "d_g" => spec.d_g = num(value)?,
                "d_h" => spec.d_h = num(value)?,
                "n_filters" => spec.n_filters = num(value)?,
                "kernel_size" => spec.kernel_size = num(value)?,
                "dropout" => spec.dropout = real(value)?,
                "window" => spec.window = num(value)?,
                "knn_k" => spec.knn_k = num(value)?,
                "tau" => spec.tau = real(value)?,
                other => return Err(Error::Format(format!("unknown model spec key {other:?}"))),
            }
        }
        if !seen_arch {
            return Err(Error::Format("model spec lacks an architecture".into()));
        }
        Ok(spec)
    }
}

/// Features and (for graph models) the normalised graph over their rows.
#[derive(Clone, Debug)]
pub struct ModelInput<S> {
    features: Tensor<S>,
    graph: Option<NormalizedGraph<S>>,
    /// `Â · X`, shared by every forward pass.
    propagated: Option<Tensor<S>>,
}

impl<S: Scalar> ModelInput<S> {
    pub fn new(features: Tensor<S>, graph: Option<NormalizedGraph<S>>) -> Result<Self> {
        features.dims2("model input")?;
        let propagated = match &graph {
            Some(g) => Some(g.propagate(&features)?),
            None => None,
        };
        Ok(Self {
            features,
            graph,
            propagated,
        })
    }

    pub fn features(&self) -> &Tensor<S> {
        &self.features
    }

    pub fn graph(&self) -> Option<&NormalizedGraph<S>> {
        self.graph.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }
}

/// Parameters of one architecture. Layers the architecture does not use are
/// `None`. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub spec: ModelSpec,
    pub gcn: Option<GcnLayerParams<S>>,
    /// Second graph convolution of the node classifier.
    pub gcn2: Option<GcnLayerParams<S>>,
    pub gru: Option<GruParams<S>>,
    pub conv: Option<Conv1dParams<S>>,
    pub head: Option<HeadParams<S>>,
}

/// Activation applied after the graph convolution feeding a sequence encoder
/// and after the first layer of the node classifier.
pub const GCN_ACTIVATION: Activation = Activation::Relu;

impl<S: Scalar> Model<S> {
    /// Glorot-initialised weights and zero biases.
    pub fn new(spec: ModelSpec, rng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let f = spec.n_features;
        let mut m = Model::empty(spec.clone());
        match spec.architecture {
            Architecture::GcnGru => {
                m.gcn = Some(GcnLayerParams::new(f, spec.d_g, rng));
                m.gru = Some(GruParams::new(spec.d_g, spec.d_h, rng));
                m.head = Some(HeadParams::new(spec.d_h, rng));
            }
            Architecture::GcnOnly => {
                m.gcn = Some(GcnLayerParams::new(f, spec.d_g, rng));
                m.gcn2 = Some(GcnLayerParams::new(spec.d_g, 2, rng));
            }
            Architecture::GruOnly => {
                m.gru = Some(GruParams::new(f, spec.d_h, rng));
                m.head = Some(HeadParams::new(spec.d_h, rng));
            }
            Architecture::CnnOnly => {
                m.conv = Some(Conv1dParams::new(spec.n_filters, spec.kernel_size, f, rng));
                m.head = Some(HeadParams::new(spec.n_filters, rng));
            }
            Architecture::GcnCnn => {
                m.gcn = Some(GcnLayerParams::new(f, spec.d_g, rng));
                m.conv = Some(Conv1dParams::new(spec.n_filters, spec.kernel_size, spec.d_g, rng));
                m.head = Some(HeadParams::new(spec.n_filters, rng));
            }
        }
        Ok(m)
    }

    fn empty(spec: ModelSpec) -> Self {
        Self {
            spec,
            gcn: None,
            gcn2: None,
            gru: None,
            conv: None,
            head: None,
        }
    }

    /// Same structure with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
        out
    }

    /// Parameter tensors in a fixed order with dotted names.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<S>)> {
        let mut out = Vec::new();
        if let Some(g) = &self.gcn {
            out.push(("gcn.weight", &g.weight));
            out.push(("gcn.bias", &g.bias));
        }
        if let Some(g) = &self.gcn2 {
            out.push(("gcn2.weight", &g.weight));
            out.push(("gcn2.bias", &g.bias));
        }
        if let Some(g) = &self.gru {
            out.extend([
                ("gru.w_z", &g.w_z),
                ("gru.w_r", &g.w_r),
                ("gru.w_h", &g.w_h),
                ("gru.u_z", &g.u_z),
                ("gru.u_r", &g.u_r),
                ("gru.u_h", &g.u_h),
                ("gru.b_z", &g.b_z),
                ("gru.b_r", &g.b_r),
                ("gru.b_h", &g.b_h),
            ]);
        }
        if let Some(c) = &self.conv {
            out.push(("conv.kernels", &c.kernels));
            out.push(("conv.bias", &c.bias));
        }
        if let Some(h) = &self.head {
            out.push(("head.weight", &h.weight));
            out.push(("head.bias", &h.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        let mut out = Vec::new();
        if let Some(g) = &mut self.gcn {
            out.push(("gcn.weight", &mut g.weight));
            out.push(("gcn.bias", &mut g.bias));
        }
        if let Some(g) = &mut self.gcn2 {
            out.push(("gcn2.weight", &mut g.weight));
            out.push(("gcn2.bias", &mut g.bias));
        }
        if let Some(g) = &mut self.gru {
            out.extend([
                ("gru.w_z", &mut g.w_z),
                ("gru.w_r", &mut g.w_r),
                ("gru.w_h", &mut g.w_h),
                ("gru.u_z", &mut g.u_z),
                ("gru.u_r", &mut g.u_r),
                ("gru.u_h", &mut g.u_h),
                ("gru.b_z", &mut g.b_z),
                ("gru.b_r", &mut g.b_r),
                ("gru.b_h", &mut g.b_h),
            ]);
        }
        if let Some(c) = &mut self.conv {
            out.push(("conv.kernels", &mut c.kernels));
            out.push(("conv.bias", &mut c.bias));
        }
        if let Some(h) = &mut self.head {
            out.push(("head.weight", &mut h.weight));
            out.push(("head.bias", &mut h.bias));
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.named_params().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.named_params_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Samples a model accepts from an input of `n_rows` rows: window starts
    /// (stride 1) or every row for the node classifier.
    pub fn sample_ids(&self, n_rows: usize) -> Vec<usize> {
        if self.spec.architecture.uses_windows() {
            crate::dataio::window_starts(n_rows, self.spec.window, 1)
        } else {
            (0..n_rows).collect()
        }
    }

    /// Row whose label a sample carries.
    pub fn label_row(&self, sample: usize) -> usize {
        if self.spec.architecture.uses_windows() {
            sample + self.spec.window - 1
        } else {
            sample
        }
    }

    /// Class probabilities, one row per sample. Dropout is active only when
    /// `rng` is given.
    pub fn forward(&self, input: &ModelInput<S>, samples: &[usize], rng: Option<&mut Prng>) -> Result<Tensor<S>> {
        Ok(self.run(input, samples, rng, None)?.0)
    }

    /// Anomaly scores (probability of class 1) without dropout.
    pub fn predict_scores(&self, input: &ModelInput<S>, samples: &[usize]) -> Result<Vec<S>> {
        let mut scores = Vec::with_capacity(samples.len());
        let chunk = if self.spec.architecture.uses_windows() { 1024 } else { samples.len().max(1) };
        for part in samples.chunks(chunk) {
            let probs = self.forward(input, part, None)?;
            scores.extend((0..probs.rows()).map(|i| probs.at(i, 1)));
        }
        Ok(scores)
    }

    /// Mean cross-entropy over `samples` and its gradient for every
    /// parameter.
    pub fn loss_and_grad(
        &self,
        input: &ModelInput<S>,
        samples: &[usize],
        labels: &[usize],
        class_weights: Option<&[S]>,
        rng: Option<&mut Prng>,
    ) -> Result<(S, Model<S>)> {
        if labels.len() != samples.len() {
            return Err(Error::shape("loss_and_grad", &[samples.len()], &[labels.len()]));
        }
        let (_, loss, grads) = self.run(input, samples, rng, Some((labels, class_weights)))?;
        Ok((loss.expect("labels given"), grads.expect("labels given")))
    }

    /// Mean cross-entropy only.
    pub fn loss(
        &self,
        input: &ModelInput<S>,
        samples: &[usize],
        labels: &[usize],
        class_weights: Option<&[S]>,
        rng: Option<&mut Prng>,
    ) -> Result<S> {
        let probs = self.forward(input, samples, rng)?;
        Ok(cross_entropy(&probs, labels, class_weights)?.0)
    }

    fn check_input(&self, input: &ModelInput<S>, samples: &[usize]) -> Result<()> {
        let arch = self.spec.architecture;
        if input.features.cols() != self.spec.n_features {
            return Err(Error::shape(
                "model input features",
                &[input.n_rows(), self.spec.n_features],
                input.features.shape(),
            ));
        }
        if arch.uses_graph() && input.graph.is_none() {
            return Err(Error::Config(format!("{arch} needs a graph over the input rows")));
        }
        let n = input.n_rows();
        if let Some(&bad) = samples.iter().find(|&&s| self.label_row(s) >= n) {
            return Err(Error::Index {
                what: "sample",
                index: bad,
                bound: n,
            });
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        input: &ModelInput<S>,
        samples: &[usize],
        rng: Option<&mut Prng>,
        targets: Option<(&[usize], Option<&[S]>)>,
    ) -> Result<(Tensor<S>, Option<S>, Option<Model<S>>)> {
        self.check_input(input, samples)?;
        if self.spec.architecture.uses_windows() {
            self.run_windows(input, samples, rng, targets)
        } else {
            self.run_nodes(input, samples, rng, targets)
        }
    }

    fn dropout_rate(&self, rng: &Option<&mut Prng>) -> Option<f64> {
        (rng.is_some() && self.spec.dropout > 0.0).then_some(self.spec.dropout)
    }

    #[allow(clippy::type_complexity)]
    fn run_nodes(
        &self,
        input: &ModelInput<S>,
        samples: &[usize],
        mut rng: Option<&mut Prng>,
        targets: Option<(&[usize], Option<&[S]>)>,
    ) -> Result<(Tensor<S>, Option<S>, Option<Model<S>>)> {
        let graph = input.graph.as_ref().expect("checked");
        let p1 = input.propagated.as_ref().expect("graph present");
        let l1 = self.gcn.as_ref().ok_or_else(|| missing("gcn"))?;
        let l2 = self.gcn2.as_ref().ok_or_else(|| missing("gcn2"))?;
        let h1 = affine(p1, &l1.weight, &l1.bias)?.map(|v| GCN_ACTIVATION.apply(v));
        let mask = match (self.dropout_rate(&rng), rng.as_deref_mut()) {
            (Some(rate), Some(r)) => Some(dropout_mask::<S>(h1.shape(), rate, r)),
            _ => None,
        };
        let h1d = match &mask {
            Some(m) => h1.zip_map(m, |a, b| a * b)?,
            None => h1.clone(),
        };
        let p2 = graph.propagate(&h1d)?;
        let logits_all = affine(&p2, &l2.weight, &l2.bias)?;
        let logits = logits_all.gather_rows(samples)?;
        let probs = softmax_rows(&logits);
        let Some((labels, weights)) = targets else {
            return Ok((probs, None, None));
        };
        let (loss, dlogits) = cross_entropy(&probs, labels, weights)?;
        let mut grads = self.zeros_like();
        let mut dlogits_all = Tensor::zeros(logits_all.shape());
        for (k, &s) in samples.iter().enumerate() {
            for (o, &g) in dlogits_all.row_mut(s).iter_mut().zip(dlogits.row(k)) {
                *o = *o + g;
            }
        }
        let g2 = grads.gcn2.as_mut().expect("same structure");
        g2.weight.axpy(S::one(), &p2.matmul_tn(&dlogits_all)?)?;
        g2.bias.axpy(S::one(), &dlogits_all.sum_rows())?;
        let dh1d = graph.propagate_transpose(&dlogits_all.matmul_nt(&l2.weight)?)?;
        let dh1 = match &mask {
            Some(m) => dh1d.zip_map(m, |a, b| a * b)?,
            None => dh1d,
        };
        let dz1 = dh1.zip_map(&h1, |g, y| g * GCN_ACTIVATION.derivative_from_output(y))?;
        let g1 = grads.gcn.as_mut().expect("same structure");
        g1.weight.axpy(S::one(), &p1.matmul_tn(&dz1)?)?;
        g1.bias.axpy(S::one(), &dz1.sum_rows())?;
        Ok((probs, Some(loss), Some(grads)))
    }

    #[allow(clippy::type_complexity)]
    fn run_windows(
        &self,
        input: &ModelInput<S>,
        samples: &[usize],
        mut rng: Option<&mut Prng>,
        targets: Option<(&[usize], Option<&[S]>)>,
    ) -> Result<(Tensor<S>, Option<S>, Option<Model<S>>)> {
        let steps = self.spec.window;
        let batch = samples.len();
        // Time-major row order: row t·batch + b is step t of sample b.
        let rows: Vec<usize> = (0..steps)
            .flat_map(|t| samples.iter().map(move |&s| s + t))
            .collect();

        let mut gcn_cache = None;
        let seq = match &self.gcn {
            Some(l) => {
                let p = input.propagated.as_ref().expect("graph present").gather_rows(&rows)?;
                let e = affine(&p, &l.weight, &l.bias)?.map(|v| GCN_ACTIVATION.apply(v));
                let mask = match (self.dropout_rate(&rng), rng.as_deref_mut()) {
                    (Some(rate), Some(r)) => Some(dropout_mask::<S>(e.shape(), rate, r)),
                    _ => None,
                };
                let out = match &mask {
                    Some(m) => e.zip_map(m, |a, b| a * b)?,
                    None => e.clone(),
                };
                gcn_cache = Some((p, e, mask));
                out
            }
            None => input.features.gather_rows(&rows)?,
        };

        enum Enc<S> {
            Gru(layers::GruTrace<S>),
            Conv(layers::ConvTrace<S>, Vec<usize>),
        }
        let (encoded, enc) = if let Some(g) = &self.gru {
            let trace = gru_run(&seq, steps, batch, &Tensor::zeros(&[batch, g.d_h()]), g)?;
            (trace.last_hidden(), Enc::Gru(trace))
        } else if let Some(c) = &self.conv {
            let trace = conv_run(&seq, steps, batch, c)?;
            let (pooled, argmax) = max_pool(&trace);
            (pooled, Enc::Conv(trace, argmax))
        } else {
            return Err(missing("gru or conv"));
        };

        let head = self.head.as_ref().ok_or_else(|| missing("head"))?;
        let probs = softmax_rows(&affine(&encoded, &head.weight, &head.bias)?);
        let Some((labels, weights)) = targets else {
            return Ok((probs, None, None));
        };
        let (loss, dlogits) = cross_entropy(&probs, labels, weights)?;
        let mut grads = self.zeros_like();
        let d_encoded = head_backward(&encoded, head, &dlogits, grads.head.as_mut().expect("same structure"))?;
        let want_dx = gcn_cache.is_some();
        let d_seq = match enc {
            Enc::Gru(trace) => gru_backward(
                &seq,
                &trace,
                self.gru.as_ref().expect("encoder present"),
                &d_encoded,
                grads.gru.as_mut().expect("same structure"),
                want_dx,
            )?,
            Enc::Conv(trace, argmax) => conv_pool_backward(
                &trace,
                &argmax,
                self.conv.as_ref().expect("encoder present"),
                &d_encoded,
                grads.conv.as_mut().expect("same structure"),
                want_dx,
            )?,
        };
        if let (Some((p, e, mask)), Some(d_seq)) = (gcn_cache, d_seq) {
            let de = match &mask {
                Some(m) => d_seq.zip_map(m, |a, b| a * b)?,
                None => d_seq,
            };
            let dz = de.zip_map(&e, |g, y| g * GCN_ACTIVATION.derivative_from_output(y))?;
            let g = grads.gcn.as_mut().expect("same structure");
            g.weight.axpy(S::one(), &p.matmul_tn(&dz)?)?;
            g.bias.axpy(S::one(), &dz.sum_rows())?;
        }
        Ok((probs, Some(loss), Some(grads)))
    }
}

/// Central-difference gradient of [`Model::loss`] for every parameter.
///
/// With `dropout_seed` set, every loss evaluation draws its dropout mask from
/// a fresh generator with that seed, so all probes see the same mask.
pub fn finite_diff_model_grads<S: Scalar>(
    model: &Model<S>,
    input: &ModelInput<S>,
    samples: &[usize],
    labels: &[usize],
    dropout_seed: Option<u64>,
    h: S,
) -> Result<Model<S>> {
    let mut grads = model.zeros_like();
    let names: Vec<&'static str> = model.named_params().iter().map(|(n, _)| *n).collect();
    for name in names {
        let mut probe = model.clone();
        let x = model.param(name).expect("listed").clone();
        let mut failure = None;
        let g = crate::numcore::finite_diff_grad(
            |v| {
                *probe.param_mut(name).expect("listed") = v.clone();
                let mut rng = dropout_seed.map(Prng::new);
                match probe.loss(input, samples, labels, None, rng.as_mut()) {
                    Ok(l) => l,
                    Err(e) => {
                        failure.get_or_insert(e);
                        S::nan()
                    }
                }
            },
            &x,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        *grads.param_mut(name).expect("same structure") = g;
    }
    Ok(grads)
}

fn missing(layer: &str) -> Error {
    Error::Config(format!("model lacks its {layer} layer"))
}
