//! Central finite-difference check of [`Model::backward`] on a shrunken
//! network, both passes in `f64`.

use serde::Serialize;

use super::init::glorot_uniform_init;
use super::model::{Mode, Model, ModelConfig, Variant};
use crate::error::Result;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub batch: usize,
    /// Negative control: perturbs one analytic gradient before comparing.
    pub corrupt_gradient: bool,
}

impl GradcheckOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            batch: 2,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub parameters: Vec<ParameterCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.parameters
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.parameters.iter().all(|p| p.max_rel_error < TOLERANCE)
    }

    /// Worst relative error per layer, in layer order.
    pub fn per_layer(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for p in &self.parameters {
            let layer = p.name.split('/').next().unwrap_or(&p.name).to_string();
            match out.last_mut() {
                Some((name, err)) if *name == layer => *err = err.max(p.max_rel_error),
                _ => out.push((layer, p.max_rel_error)),
            }
        }
        out
    }
}

/// Input 8x8x3, conv widths 2/3/4, dense 8.
pub fn shrunken_config() -> ModelConfig {
    let mut config = ModelConfig::for_variant(Variant::ThreeBlock)
        .with_input_size(8)
        .with_dense_units(8);
    config.conv_channels = vec![2, 3, 4];
    config
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    let config = shrunken_config();
    let base: Model<f64> = Model::build(
        &config,
        derive_seed(options.seed, "init"),
        derive_seed(options.seed, "dropout"),
    )?;
    let [h, w, c] = config.input_shape();
    let batch: Tensor<f64> = glorot_uniform_init(
        &[options.batch, h, w, c],
        1,
        2,
        derive_seed(options.seed, "input"),
    )?
    .map(|x| x + 1.0);
    let labels: Vec<u8> = (0..options.batch).map(|i| (i % 2) as u8).collect();
    // Fixed dropout stream so every evaluation sees the same masks.
    let mode = Mode::Training { step: 0 };

    let mut analytic = base.backward(&batch, &labels, mode)?.gradients;
    if options.corrupt_gradient {
        if let Some(v) = analytic.first_mut().and_then(|g| g.data_mut().first_mut()) {
            *v = *v * 1.5 + 1e-3;
        }
    }

    let names: Vec<String> = base.parameters().into_iter().map(|(n, _)| n).collect();
    let mut probe = base.clone();
    let mut parameters = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let len = analytic[pi].len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for ei in 0..len {
            let original = probe.parameters_mut()[pi].data()[ei];
            probe.parameters_mut()[pi].data_mut()[ei] = original + STEP;
            let plus = probe.loss(&batch, &labels, mode)?;
            probe.parameters_mut()[pi].data_mut()[ei] = original - STEP;
            let minus = probe.loss(&batch, &labels, mode)?;
            probe.parameters_mut()[pi].data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[pi].data()[ei];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        parameters.push(ParameterCheck {
            name,
            elements: len,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradcheckReport {
        seed: options.seed,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrunken_model_passes() {
        let report = run_gradcheck(&GradcheckOptions::new(0)).unwrap();
        for p in &report.parameters {
            println!(
                "{} {} {:e} {:e}",
                p.name, p.elements, p.max_rel_error, p.max_abs_error
            );
        }
        assert!(
            report.passed(),
            "max rel error {:e}",
            report.max_rel_error()
        );
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut options = GradcheckOptions::new(0);
        options.corrupt_gradient = true;
        assert!(!run_gradcheck(&options).unwrap().passed());
    }
}
