//! Backward-pass verification against central differences on a toy problem.

use serde::Serialize;

use crate::graphbuild::{knn_corr_graph, normalize_adjacency};
use crate::models::{finite_diff_model_grads, Architecture, Model, ModelInput, ModelSpec};
use crate::numcore::{max_relative_error, mix_seed, Prng, Tensor, DEFAULT_STEP};
use crate::Result;

/// Largest relative error a parameter may show and still pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const TOY_ROWS: usize = 30;
const TOY_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub architecture: String,
    pub seed: u64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} seed {}: {}\n",
            self.architecture,
            self.seed,
            if self.passed { "PASS" } else { "FAIL" }
        );
        let width = self.params.iter().map(|p| p.name.len()).max().unwrap_or(0);
        for p in &self.params {
            out.push_str(&format!(
                "  {:width$}  {:.3e}  {}\n",
                p.name,
                p.max_rel_error,
                if p.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Toy spec: small widths, the default window and dropout.
pub fn toy_spec(architecture: Architecture) -> ModelSpec {
    ModelSpec {
        d_g: 6,
        d_h: 5,
        n_filters: 4,
        kernel_size: 3,
        window: 10,
        knn_k: 3,
        tau: 0.0,
        ..ModelSpec::new(architecture, TOY_FEATURES)
    }
}

/// Compares analytic and numeric gradients of every parameter. With
/// `corrupt` set the analytic gradients are deliberately perturbed, which
/// must make the check fail.
pub fn gradcheck(architecture: Architecture, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let mut rng = Prng::new(mix_seed(seed, 0));
    let data: Vec<f64> = (0..TOY_ROWS * TOY_FEATURES).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let x = Tensor::new(vec![TOY_ROWS, TOY_FEATURES], data)?;
    let graph = normalize_adjacency(&knn_corr_graph(&x, 3, 0.0)?)?;
    let row_labels: Vec<usize> = (0..TOY_ROWS)
        .map(|i| usize::from(x.at(i, 0) + 0.3 * x.at(i, 1) > 0.0))
        .collect();
    let input = ModelInput::new(x, Some(graph))?;

    let mut init = Prng::new(mix_seed(seed, 1));
    let mut model = Model::new(toy_spec(architecture), &mut init)?;
    // Nonzero biases exercise their gradient paths.
    for (_, p) in model.named_params_mut() {
        if p.shape().len() == 1 {
            for v in p.data_mut() {
                *v = 0.1 * init.uniform_in(-1.0, 1.0);
            }
        }
    }
    let samples = model.sample_ids(TOY_ROWS);
    let labels: Vec<usize> = samples.iter().map(|&s| row_labels[model.label_row(s)]).collect();
    let dropout_seed = mix_seed(seed, 2);

    let (_, mut analytic) =
        model.loss_and_grad(&input, &samples, &labels, None, Some(&mut Prng::new(dropout_seed)))?;
    if corrupt {
        for (_, g) in analytic.named_params_mut() {
            for v in g.data_mut() {
                *v = 1.5 * *v + 1e-3;
            }
        }
    }
    let numeric = finite_diff_model_grads(&model, &input, &samples, &labels, Some(dropout_seed), DEFAULT_STEP)?;

    let params: Vec<ParamCheck> = analytic
        .named_params()
        .into_iter()
        .zip(numeric.named_params())
        .map(|((name, a), (_, n))| {
            let err = max_relative_error(a, n);
            ParamCheck {
                name: name.to_string(),
                max_rel_error: err,
                passed: err <= GRADCHECK_TOLERANCE,
            }
        })
        .collect();
    Ok(GradcheckReport {
        architecture: architecture.name().to_string(),
        seed,
        tolerance: GRADCHECK_TOLERANCE,
        passed: params.iter().all(|p| p.passed),
        params,
    })
}
