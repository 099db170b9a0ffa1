//! Scalar test functions named in configs.

use std::sync::Arc;

use domsde_core::coeffs::{default_fd_step, ScalarFn};
use domsde_core::models::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        c: f64,
    },
    /// `c |x - center|^power`; the center defaults to the origin.
    RadialPower {
        c: f64,
        power: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        center: Vec<f64>,
    },
    /// `c exp(-|x - center|² / (2 width²))`.
    Gaussian {
        c: f64,
        width: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        center: Vec<f64>,
    },
    /// `x_index`, zero-based.
    Coordinate {
        index: usize,
    },
    /// `|∇φ|` of the model's potential, zero outside the domain.
    GradPhi,
    /// Frobenius norm of the spatial derivatives of `σ`, zero outside the domain.
    GradSigma,
}

fn dist2(x: &[f64], center: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let c = center.get(i).copied().unwrap_or(0.0);
            (v - c) * (v - c)
        })
        .sum()
}

impl FieldSpec {
    /// Builds `(t, x) ↦ value` against the model.
    pub fn compile(&self, model: &ModelSpec) -> Result<ScalarFn, CliError> {
        let d = model.dim;
        let check_center = |center: &[f64]| {
            if center.is_empty() || center.len() == d {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "field center has {} coordinates, the model has {d}",
                    center.len()
                )))
            }
        };
        Ok(match self.clone() {
            FieldSpec::Constant { c } => Arc::new(move |_, _| c),
            FieldSpec::RadialPower { c, power, center } => {
                check_center(&center)?;
                Arc::new(move |_, x| {
                    let r = dist2(x, &center).sqrt();
                    if r == 0.0 && power == 0.0 {
                        c
                    } else {
                        c * r.powf(power)
                    }
                })
            }
            FieldSpec::Gaussian { c, width, center } => {
                check_center(&center)?;
                if !(width > 0.0) {
                    return Err(CliError::Config("gaussian width must be positive".into()));
                }
                Arc::new(move |_, x| c * (-dist2(x, &center) / (2.0 * width * width)).exp())
            }
            FieldSpec::Coordinate { index } => {
                if index >= d {
                    return Err(CliError::Config(format!(
                        "coordinate {index} out of range for dimension {d}"
                    )));
                }
                Arc::new(move |_, x| x[index])
            }
            FieldSpec::GradPhi => {
                let pot = model
                    .potential()
                    .ok_or_else(|| CliError::Config(format!("model {} has no potential", model.name)))?
                    .clone();
                let domain = model.domain.clone();
                Arc::new(move |t, x| {
                    if !domain.contains_raw(t, x) {
                        return 0.0;
                    }
                    let mut g = vec![0.0; x.len()];
                    let h = default_fd_step(domain.clearance(t, x));
                    match pot.grad_into(t, x, h, &mut g) {
                        Ok(()) => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                        Err(_) => f64::NAN,
                    }
                })
            }
            FieldSpec::GradSigma => {
                let diff = model.coeffs.diffusion().clone();
                let domain = model.domain.clone();
                Arc::new(move |t, x| {
                    if !domain.contains_raw(t, x) {
                        return 0.0;
                    }
                    match diff.jacobian(t, x) {
                        Some(js) => js.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt(),
                        None => {
                            let h = default_fd_step(domain.clearance(t, x));
                            let mut xp = x.to_vec();
                            let mut acc = 0.0;
                            for k in 0..x.len() {
                                xp[k] = x[k] + h;
                                let up = diff.sigma(t, &xp);
                                xp[k] = x[k] - h;
                                let dn = diff.sigma(t, &xp);
                                xp[k] = x[k];
                                acc += ((up - dn) / (2.0 * h)).norm_squared();
                            }
                            acc.sqrt()
                        }
                    }
                })
            }
        })
    }
}
