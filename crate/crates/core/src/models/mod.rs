//! Test problems and the model abstraction.
//!
//! Models receive rows in unit coordinates; [`ModelSpec`] owns the affine
//! map back to physical parameter ranges.

pub mod advdiff;
pub mod banded;
pub mod external;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::UnitCubeMap;
use advdiff::{adv_diff_solve, qoi_integrate, AdvDiffParams};
use external::ExternalModel;

/// Row filler handed to [`Model::evaluate_batch`]: writes batch row `r` into
/// the buffer.
pub type RowFill<'a> = dyn Fn(usize, &mut [f64]) + Sync + 'a;

pub trait Model: Sync {
    fn dim(&self) -> usize;

    fn id(&self) -> String;

    /// Evaluates one unit-cube row.
    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Evaluates `n_rows` rows, in parallel by default. Results are indexed
    /// by row.
    fn evaluate_batch(&self, n_rows: usize, fill: &RowFill<'_>) -> Result<Vec<f64>> {
        evaluate_rows_parallel(self, n_rows, fill)
    }
}

/// Row-parallel batch evaluation through [`Model::evaluate`].
pub fn evaluate_rows_parallel<M: Model + ?Sized>(model: &M, n_rows: usize, fill: &RowFill<'_>) -> Result<Vec<f64>> {
    let p = model.dim();
    (0..n_rows)
        .into_par_iter()
        .map_init(
            || vec![0.0; p],
            |buf, r| {
                fill(r, buf);
                let fail = |reason: String| Error::ModelEvaluation {
                    row: r,
                    coords: buf.clone(),
                    reason,
                };
                match model.evaluate(buf) {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(v) => Err(fail(format!("non-finite output {v}"))),
                    Err(e) => Err(fail(e.to_string())),
                }
            },
        )
        .collect()
}

/// Closure-backed model on unit coordinates.
pub struct FnModel<F> {
    dim: usize,
    id: String,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(dim: usize, id: impl Into<String>, f: F) -> Self {
        Self { dim, id: id.into(), f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Model for FnModel<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        self.id.clone()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

fn default_grid() -> usize {
    advdiff::DEFAULT_GRID
}

fn default_box() -> [f64; 4] {
    advdiff::DEFAULT_QOI_BOX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `f(y) = sum_i c_i y_i`.
    Linear {
        coefficients: Vec<f64>,
    },
    /// `f(y) = 2 y2 exp(-2 y1) + y3^2`.
    ExpSynthetic,
    AdvectionDiffusion {
        #[serde(default = "default_grid")]
        grid_n: usize,
        #[serde(default = "default_box")]
        qoi_box: [f64; 4],
    },
    External {
        command: String,
        io_dir: String,
    },
}

impl ModelKind {
    /// Linear test function, `c_i = 11 - i` for `i = 1..=10`.
    pub fn reference_linear() -> Self {
        ModelKind::Linear {
            coefficients: (1..=10).map(|i| (11 - i) as f64).collect(),
        }
    }

    fn required_dim(&self) -> Option<usize> {
        match self {
            ModelKind::Linear { coefficients } => Some(coefficients.len()),
            ModelKind::ExpSynthetic => Some(3),
            ModelKind::AdvectionDiffusion { .. } => Some(9),
            ModelKind::External { .. } => None,
        }
    }
}

/// A model kind together with the map from unit to physical coordinates.
#[derive(Debug)]
pub struct ModelSpec {
    kind: ModelKind,
    map: UnitCubeMap,
    external: Option<ExternalModel>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, map: UnitCubeMap) -> Result<Self> {
        if let Some(p) = kind.required_dim() {
            if p != map.dim() {
                return Err(Error::Config(format!(
                    "model needs {p} inputs but {} marginals were given",
                    map.dim()
                )));
            }
        }
        match &kind {
            ModelKind::AdvectionDiffusion { grid_n, qoi_box } => {
                if *grid_n < 33 {
                    return Err(Error::Config(format!("grid_n must be >= 33, got {grid_n}")));
                }
                let [x0, x1, y0, y1] = *qoi_box;
                if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
                    return Err(Error::Config("qoi_box must lie inside the unit square".into()));
                }
            }
            ModelKind::Linear { coefficients } if coefficients.is_empty() => {
                return Err(Error::Config("linear model needs coefficients".into()));
            }
            _ => {}
        }
        let external = match &kind {
            ModelKind::External { command, io_dir } => Some(ExternalModel::new(command.clone(), io_dir.clone())),
            _ => None,
        };
        Ok(Self { kind, map, external })
    }

    /// Advection-diffusion on its default plus or minus 30% ranges.
    pub fn advection_diffusion(grid_n: usize) -> Result<Self> {
        Self::new(
            ModelKind::AdvectionDiffusion {
                grid_n,
                qoi_box: advdiff::DEFAULT_QOI_BOX,
            },
            UnitCubeMap::new(advdiff::physical_ranges())?,
        )
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn map(&self) -> &UnitCubeMap {
        &self.map
    }

    /// Evaluates at physical coordinates.
    pub fn evaluate_physical(&self, y: &[f64]) -> Result<f64> {
        match &self.kind {
            ModelKind::Linear { coefficients } => Ok(coefficients.iter().zip(y).map(|(c, v)| c * v).sum()),
            ModelKind::ExpSynthetic => Ok(2.0 * y[1] * (-2.0 * y[0]).exp() + y[2] * y[2]),
            ModelKind::AdvectionDiffusion { grid_n, qoi_box } => {
                let field = adv_diff_solve(&AdvDiffParams::from_slice(y)?, *grid_n)?;
                Ok(qoi_integrate(&field, *qoi_box))
            }
            ModelKind::External { .. } => {
                let values = self.run_external(&[y.to_vec()], |_| y.to_vec())?;
                Ok(values[0])
            }
        }
    }

    fn run_external(&self, rows: &[Vec<f64>], unit_row: impl Fn(usize) -> Vec<f64>) -> Result<Vec<f64>> {
        let ext = self.external.as_ref().expect("external adapter");
        ext.run_batch(rows).map_err(|(row, reason)| match row {
            Some(r) => Error::ModelEvaluation {
                row: r,
                coords: unit_row(r),
                reason,
            },
            None => Error::Model(reason),
        })
    }
}

impl Model for ModelSpec {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn id(&self) -> String {
        match &self.kind {
            ModelKind::Linear { .. } => "linear".into(),
            ModelKind::ExpSynthetic => "exp_synthetic".into(),
            ModelKind::AdvectionDiffusion { grid_n, .. } => format!("advection_diffusion(n_grid={grid_n})"),
            ModelKind::External { command, .. } => format!("external({command})"),
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.evaluate_physical(&self.map.to_physical(x))
    }

    fn evaluate_batch(&self, n_rows: usize, fill: &RowFill<'_>) -> Result<Vec<f64>> {
        if self.external.is_none() {
            return evaluate_rows_parallel(self, n_rows, fill);
        }
        let p = self.dim();
        let unit: Vec<Vec<f64>> = (0..n_rows)
            .map(|r| {
                let mut row = vec![0.0; p];
                fill(r, &mut row);
                row
            })
            .collect();
        let physical: Vec<Vec<f64>> = unit.iter().map(|r| self.map.to_physical(r)).collect();
        self.run_external(&physical, |r| unit[r].clone())
    }
}
