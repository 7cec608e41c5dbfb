//! Pick-freeze estimators of first-order and total Sobol' indices, plus
//! bootstrap standard deviations.
//!
//! All estimators work on outputs centred by the sample mean of `f(A)`, a
//! fixed shift that makes them invariant under `f -> c f + d` and keeps the
//! reweighted variance free of cancellation. With `X_k[n] = fB[n] (fC_k[n] -
//! fA[n])` on the centred outputs the estimators are
//!
//! ```text
//! F_k = mean(X_k)                    S_k = F_k / H
//! G_k = mean((fA - fC_k)^2) / 2      T_k = G_k / H
//! H   = mean(fA^2) - mean(fA)^2
//! ```
//!
//! Reweighted variants multiply each row by density ratios (see
//! [`RowWeights`]). Nominal and perturbed values run through the same code,
//! so unit weights reproduce the nominal indices bit for bit.
//!
//! Bootstrap replicate `b` draws `N` row indices with replacement from
//! stream `1024 + b` of the resample seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{substream, EvalBundle};
use crate::error::{Error, Result};

pub const DEFAULT_B_REP: usize = 64;
pub const BOOTSTRAP_STREAM_BASE: u64 = 1024;

/// Point estimates of all indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalIndices {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub var_f: f64,
}

/// Nominal indices with bootstrap standard deviations; serialized as
/// `indices.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolEstimates {
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    #[serde(rename = "stdS")]
    pub std_s: Vec<f64>,
    #[serde(rename = "stdT")]
    pub std_t: Vec<f64>,
    #[serde(rename = "varF")]
    pub var_f: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(rename = "B_rep")]
    pub b_rep: usize,
}

impl SobolEstimates {
    /// Standard deviations of all `2p` estimators, S first.
    pub fn stds(&self) -> Vec<f64> {
        self.std_s.iter().chain(&self.std_t).copied().collect()
    }
}

/// Outputs shifted by the sample mean of `f(A)`.
#[derive(Debug, Clone)]
pub struct CenteredOutputs {
    pub shift: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl CenteredOutputs {
    pub fn new(bundle: &EvalBundle) -> Self {
        let shift = bundle.f_a().iter().sum::<f64>() / bundle.n() as f64;
        let centre = |v: &[f64]| v.iter().map(|x| x - shift).collect::<Vec<_>>();
        Self {
            shift,
            a: centre(bundle.f_a()),
            b: centre(bundle.f_b()),
            c: (0..bundle.p()).map(|k| centre(bundle.f_c(k))).collect(),
        }
    }
}

/// Per-row density ratios: `u[n]` for row `n` of `A`, `v[n]` for row `n`
/// of `B` (products over all coordinates) and `vk[k][n]` for coordinate `k`
/// of row `n` of `B` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWeights {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub vk: Vec<Vec<f64>>,
}

impl RowWeights {
    pub fn ones(n: usize, p: usize) -> Self {
        Self {
            u: vec![1.0; n],
            v: vec![1.0; n],
            vk: vec![vec![1.0; n]; p],
        }
    }
}

/// Row-major table of weighted summands, `2p + 2` per row:
/// `u fA`, `u fA^2`, `u v X_k` for each `k`, `u vk_k (fA - fC_k)^2 / 2` for
/// each `k`.
#[derive(Debug, Clone)]
pub struct RowTerms {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl RowTerms {
    pub fn new(bundle: &EvalBundle, w: &RowWeights) -> Self {
        let (n, p) = (bundle.n(), bundle.p());
        let width = 2 * p + 2;
        let mut data = vec![0.0; n * width];
        let out = CenteredOutputs::new(bundle);
        let (fa, fb) = (&out.a, &out.b);
        for (r, row) in data.chunks_mut(width).enumerate() {
            let u = w.u[r];
            row[0] = u * fa[r];
            row[1] = u * (fa[r] * fa[r]);
            for k in 0..p {
                let fc = out.c[k][r];
                row[2 + k] = (u * w.v[r]) * (fb[r] * (fc - fa[r]));
                let d = fa[r] - fc;
                row[2 + p + k] = (u * w.vk[k][r]) * (0.5 * d * d);
            }
        }
        Self { n, p, data }
    }

    pub fn nominal(bundle: &EvalBundle) -> Self {
        Self::new(bundle, &RowWeights::ones(bundle.n(), bundle.p()))
    }

    fn width(&self) -> usize {
        2 * self.p + 2
    }

    /// Indices over all rows in order.
    pub fn estimate(&self) -> Result<NominalIndices> {
        let width = self.width();
        let mut sums = vec![0.0; width];
        for row in self.data.chunks(width) {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        self.indices_from_sums(&sums, self.n as f64)
    }

    /// Indices on each bootstrap replicate.
    pub fn replicates(&self, resamples: &Resamples) -> Result<Vec<NominalIndices>> {
        let width = self.width();
        resamples
            .counts
            .par_iter()
            .map(|counts| {
                let mut sums = vec![0.0; width];
                for (row, &c) in self.data.chunks(width).zip(counts) {
                    if c != 0 {
                        let c = c as f64;
                        for (s, x) in sums.iter_mut().zip(row) {
                            *s += c * x;
                        }
                    }
                }
                self.indices_from_sums(&sums, self.n as f64)
            })
            .collect()
    }

    /// Sample standard deviations across replicates of every S_k, then T_k.
    pub fn replicate_std(&self, resamples: &Resamples) -> Result<(Vec<f64>, Vec<f64>)> {
        let reps = self.replicates(resamples)?;
        let col_std = |get: &dyn Fn(&NominalIndices) -> f64| sample_std(reps.iter().map(get));
        let std_s = (0..self.p).map(|k| col_std(&|r| r.s[k])).collect();
        let std_t = (0..self.p).map(|k| col_std(&|r| r.t[k])).collect();
        Ok((std_s, std_t))
    }

    fn indices_from_sums(&self, sums: &[f64], count: f64) -> Result<NominalIndices> {
        let p = self.p;
        let m = sums[0] / count;
        let var_f = sums[1] / count - m * m;
        if !(var_f > 0.0) {
            return Err(Error::ZeroVariance);
        }
        Ok(NominalIndices {
            s: (0..p).map(|k| (sums[2 + k] / count) / var_f).collect(),
            t: (0..p).map(|k| (sums[2 + p + k] / count) / var_f).collect(),
            var_f,
        })
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Bootstrap resamples of the row indices `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resamples {
    indices: Vec<Vec<usize>>,
    counts: Vec<Vec<u32>>,
}

impl Resamples {
    pub fn draw(n: usize, b_rep: usize, seed: u64) -> Result<Self> {
        if b_rep < 2 {
            return Err(Error::domain(format!("B_rep must be >= 2, got {b_rep}")));
        }
        let indices: Vec<Vec<usize>> = (0..b_rep)
            .map(|b| {
                let mut rng = substream(seed, BOOTSTRAP_STREAM_BASE + b as u64);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            })
            .collect();
        let counts = indices
            .iter()
            .map(|set| {
                let mut c = vec![0u32; n];
                for &i in set {
                    c[i] += 1;
                }
                c
            })
            .collect();
        Ok(Self { indices, counts })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.indices
    }
}

pub fn estimate_indices(bundle: &EvalBundle) -> Result<NominalIndices> {
    RowTerms::nominal(bundle).estimate()
}

/// Bootstrap standard deviations of every S_k and T_k, and the resamples
/// behind them.
pub fn bootstrap_std(bundle: &EvalBundle, b_rep: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, Resamples)> {
    let resamples = Resamples::draw(bundle.n(), b_rep, seed)?;
    let (std_s, std_t) = RowTerms::nominal(bundle).replicate_std(&resamples)?;
    Ok((std_s, std_t, resamples))
}

/// Point estimates plus bootstrap spreads.
pub fn estimate_with_bootstrap(bundle: &EvalBundle, b_rep: usize, seed: u64) -> Result<(SobolEstimates, Resamples)> {
    let terms = RowTerms::nominal(bundle);
    let nominal = terms.estimate()?;
    let resamples = Resamples::draw(bundle.n(), b_rep, seed)?;
    let (std_s, std_t) = terms.replicate_std(&resamples)?;
    Ok((
        SobolEstimates {
            s: nominal.s,
            t: nominal.t,
            std_s,
            std_t,
            var_f: nominal.var_f,
            n: bundle.n(),
            p: bundle.p(),
            b_rep,
        },
        resamples,
    ))
}
