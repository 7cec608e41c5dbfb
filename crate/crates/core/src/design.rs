//! Pick-freeze sampling design and the evaluation bundle.
//!
//! Random streams: the design generator is a ChaCha8 generator seeded with
//! the configured seed. Stream 0 fills `A` and stream 1 fills `B`, both in
//! row-major order (row `n`, then coordinate `i`), one open-interval uniform
//! per entry pushed through the coordinate's quantile function.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::MarginalDensity;
use crate::models::Model;

pub const STREAM_A: u64 = 0;
pub const STREAM_B: u64 = 1;

/// Generator for one documented substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The two independent `N x p` sample matrices `A` and `B`, in unit
/// coordinates and stored row-major. The matrices `C_k` are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PickFreezeDesign {
    n: usize,
    p: usize,
    seed: u64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PickFreezeDesign {
    pub fn generate(margins: &[MarginalDensity], n: usize, seed: u64) -> Result<Self> {
        let p = margins.len();
        if n < 2 {
            return Err(Error::domain(format!("N must be >= 2, got {n}")));
        }
        if p < 1 {
            return Err(Error::domain("at least one input is required"));
        }
        let draw = |stream| {
            let mut rng = substream(seed, stream);
            let mut out = Vec::with_capacity(n * p);
            for _ in 0..n {
                for margin in margins {
                    out.push(margin.sample_one(&mut rng));
                }
            }
            out
        };
        Ok(Self {
            n,
            p,
            seed,
            a: draw(STREAM_A),
            b: draw(STREAM_B),
        })
    }

    /// Builds a design from explicit row-major matrices.
    pub fn from_rows(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let n = a.len();
        if n < 2 || b.len() != n {
            return Err(Error::domain("A and B need the same number (>= 2) of rows"));
        }
        let p = a[0].len();
        if p == 0 || a.iter().chain(&b).any(|row| row.len() != p) {
            return Err(Error::domain("all design rows must have the same positive length"));
        }
        let flat: Vec<f64> = a.iter().chain(&b).flatten().copied().collect();
        if flat.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::domain("design entries must lie in [0, 1]"));
        }
        let (a, b) = flat.split_at(n * p);
        Ok(Self {
            n,
            p,
            seed,
            a: a.to_vec(),
            b: b.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn a_row(&self, row: usize) -> &[f64] {
        &self.a[row * self.p..(row + 1) * self.p]
    }

    pub fn b_row(&self, row: usize) -> &[f64] {
        &self.b[row * self.p..(row + 1) * self.p]
    }

    pub fn a(&self, row: usize, i: usize) -> f64 {
        self.a[row * self.p + i]
    }

    pub fn b(&self, row: usize, i: usize) -> f64 {
        self.b[row * self.p + i]
    }

    /// Row `row` of `C_k`: row `row` of `A` with coordinate `k` taken from `B`.
    pub fn fill_c_row(&self, k: usize, row: usize, out: &mut [f64]) {
        out.copy_from_slice(self.a_row(row));
        out[k] = self.b(row, k);
    }

    pub fn c_row(&self, k: usize, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.fill_c_row(k, row, &mut out);
        out
    }

    /// Total number of model evaluations the design requires, `(p + 2) N`.
    pub fn evaluation_count(&self) -> usize {
        (self.p + 2) * self.n
    }

    /// Fills batch row `r` in the evaluation order used by
    /// [`evaluate_model`]: rows of `A`, then `B`, then `C_1 .. C_p`.
    pub fn fill_batch_row(&self, r: usize, out: &mut [f64]) {
        let (block, row) = (r / self.n, r % self.n);
        match block {
            0 => out.copy_from_slice(self.a_row(row)),
            1 => out.copy_from_slice(self.b_row(row)),
            _ => self.fill_c_row(block - 2, row, out),
        }
    }
}

/// The design together with every model evaluation: `f(A)`, `f(B)` and
/// `f(C_k)` for each `k`. This is the only expensive asset of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    design: PickFreezeDesign,
    f_a: Vec<f64>,
    f_b: Vec<f64>,
    f_c: Vec<Vec<f64>>,
    model_id: String,
    model_evaluations: u64,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    p: usize,
    #[serde(rename = "N")]
    n: usize,
    seed: u64,
    model_id: String,
    model_evaluations: u64,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "fA")]
    f_a: Vec<f64>,
    #[serde(rename = "fB")]
    f_b: Vec<f64>,
    #[serde(rename = "fC")]
    f_c: Vec<Vec<f64>>,
}

impl EvalBundle {
    /// Assembles a bundle from precomputed evaluations.
    pub fn from_parts(
        design: PickFreezeDesign,
        f_a: Vec<f64>,
        f_b: Vec<f64>,
        f_c: Vec<Vec<f64>>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        let (n, p) = (design.n(), design.p());
        if f_a.len() != n || f_b.len() != n || f_c.len() != p || f_c.iter().any(|c| c.len() != n) {
            return Err(Error::domain("evaluation vectors do not match the design shape"));
        }
        if f_a
            .iter()
            .chain(&f_b)
            .chain(f_c.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain("bundle contains non-finite evaluations"));
        }
        Ok(Self {
            model_evaluations: ((p + 2) * n) as u64,
            design,
            f_a,
            f_b,
            f_c,
            model_id: model_id.into(),
        })
    }

    pub fn design(&self) -> &PickFreezeDesign {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.design.n
    }

    pub fn p(&self) -> usize {
        self.design.p
    }

    pub fn f_a(&self) -> &[f64] {
        &self.f_a
    }

    pub fn f_b(&self) -> &[f64] {
        &self.f_b
    }

    pub fn f_c(&self, k: usize) -> &[f64] {
        &self.f_c[k]
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Number of model calls made to produce this bundle.
    pub fn model_evaluations(&self) -> u64 {
        self.model_evaluations
    }

    pub fn to_json(&self) -> Result<String> {
        let d = &self.design;
        let rows = |m: &[f64]| m.chunks(d.p).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let file = BundleFile {
            p: d.p,
            n: d.n,
            seed: d.seed,
            model_id: self.model_id.clone(),
            model_evaluations: self.model_evaluations,
            a: rows(&d.a),
            b: rows(&d.b),
            f_a: self.f_a.clone(),
            f_b: self.f_b.clone(),
            f_c: self.f_c.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BundleFile = serde_json::from_str(text)?;
        if file.a.len() != file.n || file.a.first().map_or(0, Vec::len) != file.p {
            return Err(Error::domain("bundle header does not match its matrices"));
        }
        let design = PickFreezeDesign::from_rows(file.a, file.b, file.seed)?;
        let mut bundle = Self::from_parts(design, file.f_a, file.f_b, file.f_c, file.model_id)?;
        bundle.model_evaluations = file.model_evaluations;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::study::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Evaluates the model on every row of `A`, `B` and each `C_k`.
///
/// The model sees one batch of `(p + 2) N` rows ordered as documented on
/// [`PickFreezeDesign::fill_batch_row`]; results are stored by row index.
pub fn evaluate_model(design: &PickFreezeDesign, model: &dyn Model) -> Result<EvalBundle> {
    if model.dim() != design.p() {
        return Err(Error::domain(format!(
            "model expects {} inputs but the design has {}",
            model.dim(),
            design.p()
        )));
    }
    let calls = AtomicU64::new(0);
    let total = design.evaluation_count();
    let fill = |r: usize, out: &mut [f64]| {
        calls.fetch_add(1, Ordering::Relaxed);
        design.fill_batch_row(r, out)
    };
    let values = model.evaluate_batch(total, &fill)?;
    if values.len() != total {
        return Err(Error::Model(format!(
            "model returned {} values for {} rows",
            values.len(),
            total
        )));
    }
    if let Some(r) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation {
            row: r,
            coords: {
                let mut row = vec![0.0; design.p()];
                design.fill_batch_row(r, &mut row);
                row
            },
            reason: format!("non-finite output {}", values[r]),
        });
    }
    let n = design.n();
    let mut blocks = values.chunks(n).map(<[f64]>::to_vec);
    let f_a = blocks.next().unwrap();
    let f_b = blocks.next().unwrap();
    let f_c: Vec<Vec<f64>> = blocks.collect();
    let mut bundle = EvalBundle::from_parts(design.clone(), f_a, f_b, f_c, model.id())?;
    bundle.model_evaluations = calls.load(Ordering::Relaxed);
    Ok(bundle)
}
