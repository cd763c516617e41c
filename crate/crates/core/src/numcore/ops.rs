use super::{Prng, Tensor};
use crate::{Error, Result, Scalar};

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// No-op, used for linear layers and identity checks.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Tanh => S::one() - y * y,
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn activate<S: Scalar>(x: &Tensor<S>, kind: Activation) -> Tensor<S> {
    x.map(|v| kind.apply(v))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    let c = out.cols();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
        let mut total = S::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total = total + *x;
        }
        for x in row.iter_mut() {
            *x = *x / total;
        }
    }
    out
}

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean categorical cross-entropy and its gradient with respect to the logits
/// that produced `probs` through [`softmax_rows`].
///
/// `weights`, when given, scales each sample's term by the weight of its
/// class; the mean is still taken over the sample count.
pub fn cross_entropy<S: Scalar>(
    probs: &Tensor<S>,
    labels: &[usize],
    weights: Option<&[S]>,
) -> Result<(S, Tensor<S>)> {
    let n = probs.rows();
    let c = probs.cols();
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", probs.shape(), &[labels.len()]));
    }
    if let Some(w) = weights {
        if w.len() != c {
            return Err(Error::shape("cross_entropy weights", &[c], &[w.len()]));
        }
    }
    let inv_n = S::one() / S::from_usize(n.max(1)).unwrap();
    let clamp = S::of(LOG_CLAMP);
    let mut loss = S::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::Index {
                what: "label",
                index: label,
                bound: c,
            });
        }
        let w = weights.map_or(S::one(), |w| w[label]);
        let p = probs.at(i, label).max(clamp);
        loss = loss - w * p.ln();
        let row = grad.row_mut(i);
        row[label] = row[label] - S::one();
        for g in row.iter_mut() {
            *g = *g * w * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Inverted dropout.
///
/// In training mode each entry is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`; the returned mask holds the
/// per-entry multiplier for the backward pass. Outside training the input is
/// returned unchanged and no mask is produced.
pub fn dropout<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut Prng,
    training: bool,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.shape(), rate, rng);
    let out = x.zip_map(&mask, |a, m| a * m)?;
    Ok((out, Some(mask)))
}

pub(crate) fn dropout_mask<S: Scalar>(shape: &[usize], rate: f64, rng: &mut Prng) -> Tensor<S> {
    let keep = S::of(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        *m = if rng.uniform() < rate { S::zero() } else { keep };
    }
    mask
}

/// Glorot (Xavier) uniform initialisation.
pub fn glorot_init<S: Scalar>(rows: usize, cols: usize, rng: &mut Prng) -> Tensor<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::of(rng.uniform_in(-bound, bound)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_grad;

    #[test]
    fn activation_fixed_points() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(-3.0f64), 0.0);
        assert!((sigmoid(3.0f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        for x in [-1e4f64, -800.0, 800.0, 1e4] {
            let y = sigmoid(x);
            assert!(y.is_finite() && (0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn softmax_examples() {
        let l = Tensor::from_rows(&[[0.0, 0.0], [0.0, 3.0f64.ln()], [1000.0, 1000.0]]).unwrap();
        let p = softmax_rows(&l);
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p.at(1, 0) - 0.25).abs() < 1e-15 && (p.at(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(p.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        let (loss, _) = cross_entropy(&perfect, &[1], None).unwrap();
        assert_eq!(loss, 0.0);

        let uniform = Tensor::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let (loss, _) = cross_entropy(&uniform, &[0, 1], None).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-15);

        assert!(matches!(
            cross_entropy(&uniform, &[0, 2], None),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Tensor::from_rows(&[[0.3f64, -1.2, 0.7], [2.0, 0.1, -0.4]]).unwrap();
        let labels = [2usize, 0];
        let weights = [1.0, 2.0, 0.5];
        for w in [None, Some(&weights[..])] {
            let (_, grad) = cross_entropy(&softmax_rows(&logits), &labels, w).unwrap();
            let fd = finite_diff_grad(
                |x| cross_entropy(&softmax_rows(x), &labels, w).unwrap().0,
                &logits,
                1e-5,
            );
            for (a, b) in grad.data().iter().zip(fd.data()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut rng = Prng::new(3);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let x = Tensor::<f64>::filled(&[100_000], 1.0);
        let mut rng = Prng::new(11);
        let (y, _) = dropout(&x, 0.1, &mut rng, true).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((0.09..=0.11).contains(&zeros), "zero fraction {zeros}");
        let mean = y.sum() / 1e5;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let mut rng = Prng::new(5);
        let one: Tensor<f64> = glorot_init(1, 1, &mut rng);
        assert!(one.data()[0].abs() <= 3.0f64.sqrt());

        let a: Tensor<f64> = glorot_init(4, 3, &mut Prng::new(9));
        let b: Tensor<f64> = glorot_init(4, 3, &mut Prng::new(9));
        assert_eq!(a, b);

        let bound = (6.0f64 / 128.0).sqrt();
        let mut draws = Vec::new();
        let mut rng = Prng::new(21);
        while draws.len() < 10_000 {
            let w: Tensor<f64> = glorot_init(64, 64, &mut rng);
            draws.extend_from_slice(w.data());
        }
        draws.truncate(10_000);
        let max = draws.iter().cloned().fold(f64::MIN, f64::max);
        let min = draws.iter().cloned().fold(f64::MAX, f64::min);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(max <= bound && min >= -bound);
        assert!(mean.abs() <= 0.02, "mean {mean}");
    }
}
