//! Optimal marginal perturbations and the robustness scan.
//!
//! For a target index the linearized optimum puts
//! `a[i][j] = sign(entry) inf_{R_i^j} phi_i` on every cell. Coordinate weights `delta_i` are the shares of
//! absolute derivative mass, and the perturbed marginal at magnitude `delta`
//! is
//!
//! ```text
//! eta_i(x) = (phi_i(x) + s_i a[i][j(x)]) / z_i,   s_i = delta delta_i,
//! z_i = 1 + s_i sum_j a[i][j] |R_i^j|
//! ```
//!
//! Perturbed indices reweight the stored evaluations by `eta_i / phi_i`.
//!
//! Random streams for rejection sampling: proposals come from stream 2 and
//! acceptance draws from stream 3 of the sampling seed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{substream, EvalBundle};
use crate::error::{Error, Result};
use crate::estimators::{NominalIndices, Resamples, RowTerms, RowWeights, SobolEstimates};
use crate::frechet::{DerivativeTable, IndicatorWeights};
use crate::margins::{MarginalDensity, Partition};

pub const DEFAULT_TAU: f64 = 1.5;
pub const DEFAULT_R: usize = 60;
/// Estimators whose nominal spread is below this fraction of the largest are
/// left out of `Delta`.
pub const STD_GUARD: f64 = 1e-3;
pub const STREAM_PROPOSAL: u64 = 2;
pub const STREAM_ACCEPT: u64 = 3;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    #[serde(rename = "S")]
    First,
    #[serde(rename = "T")]
    Total,
}

impl IndexKind {
    pub fn label(self) -> &'static str {
        match self {
            IndexKind::First => "S",
            IndexKind::Total => "T",
        }
    }
}

/// An index targeted by a perturbation; `k` is zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Target {
    pub kind: IndexKind,
    pub k: usize,
}

impl Target {
    pub fn new(kind: IndexKind, k: usize) -> Self {
        Self { kind, k }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.label(), self.k + 1)
    }
}

/// Parses `S:k` or `T:k` with 1-based `k`.
impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("target must look like T:3 or S:1, got `{s}`"));
        let (kind, k) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind.trim() {
            "S" | "s" => IndexKind::First,
            "T" | "t" => IndexKind::Total,
            _ => return Err(bad()),
        };
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        Ok(Self { kind, k: k - 1 })
    }
}

/// Direction coefficients, coordinate weights and magnitude bound for one
/// target.
#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    target: Target,
    a: Vec<Vec<f64>>,
    delta_w: Vec<f64>,
    delta_bar: f64,
    margins: Arc<Vec<MarginalDensity>>,
    partition: Arc<Partition>,
}

impl PerturbationPlan {
    /// Closed-form maximizer of the linearized change of `target`.
    pub fn solve_optimal_direction(
        table: &DerivativeTable,
        margins: Arc<Vec<MarginalDensity>>,
        partition: Arc<Partition>,
        target: Target,
    ) -> Result<Self> {
        let p = partition.dim();
        let rows = table.rows(target.kind, target.k);
        let mut a = Vec::with_capacity(p);
        let mut mass = Vec::with_capacity(p);
        for i in 0..p {
            let axis = partition.axis(i);
            let mut ai = Vec::with_capacity(axis.len());
            let mut sum = 0.0;
            for (j, &e) in rows[i].iter().enumerate() {
                let (lo, hi) = axis.cell(j);
                let sign = if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                ai.push(sign * margins[i].cell_infimum(lo, hi));
                sum += e.abs();
            }
            a.push(ai);
            mass.push(sum);
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Insensitive);
        }
        let delta_w: Vec<f64> = mass.iter().map(|m| m / total).collect();
        Self::from_parts(target, a, delta_w, margins, partition)
    }

    /// Plan with explicit coefficients and weights; `delta_bar` is
    /// `1 / max_i delta_i`.
    pub fn from_parts(
        target: Target,
        a: Vec<Vec<f64>>,
        delta_w: Vec<f64>,
        margins: Arc<Vec<MarginalDensity>>,
        partition: Arc<Partition>,
    ) -> Result<Self> {
        let p = partition.dim();
        if a.len() != p || delta_w.len() != p || margins.len() != p {
            return Err(Error::domain("plan dimensions do not match the partition"));
        }
        if a.iter().zip(partition.axes()).any(|(ai, axis)| ai.len() != axis.len()) {
            return Err(Error::domain("plan coefficients do not match the partition cells"));
        }
        if delta_w.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::domain("coordinate weights must be nonnegative"));
        }
        let max = delta_w.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::Insensitive);
        }
        Ok(Self {
            target,
            a,
            delta_w,
            delta_bar: 1.0 / max,
            margins,
            partition,
        })
    }

    /// Perturbation along the single basis function `psi_i^j` with unit
    /// coefficient.
    pub fn single_direction(
        target: Target,
        i: usize,
        j: usize,
        margins: Arc<Vec<MarginalDensity>>,
        partition: Arc<Partition>,
    ) -> Result<Self> {
        let p = partition.dim();
        let mut a: Vec<Vec<f64>> = partition.axes().iter().map(|ax| vec![0.0; ax.len()]).collect();
        a[i][j] = 1.0;
        let mut delta_w = vec![0.0; p];
        delta_w[i] = 1.0;
        Self::from_parts(target, a, delta_w, margins, partition)
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn delta_weights(&self) -> &[f64] {
        &self.delta_w
    }

    pub fn delta_bar(&self) -> f64 {
        self.delta_bar
    }

    pub fn margins(&self) -> &[MarginalDensity] {
        &self.margins
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Linearized change per unit `delta`: `sum_ij delta_i a[i][j] entry`.
    pub fn linear_objective(&self, table: &DerivativeTable) -> f64 {
        let rows = table.rows(self.target.kind, self.target.k);
        let mut total = 0.0;
        for (i, ai) in self.a.iter().enumerate() {
            for (j, a) in ai.iter().enumerate() {
                total += self.delta_w[i] * a * rows[i][j];
            }
        }
        total
    }

    /// The grid `delta_bar (-1 + 2 l / r)`, `l = 0..=r`.
    pub fn delta_grid(&self, r: usize) -> Vec<f64> {
        (0..=r)
            .map(|l| self.delta_bar * (-1.0 + 2.0 * l as f64 / r as f64))
            .collect()
    }
}

/// The perturbed marginals of a plan at one magnitude.
#[derive(Debug, Clone)]
pub struct PerturbedDensity {
    plan: PerturbationPlan,
    delta: f64,
    s: Vec<f64>,
    z: Vec<f64>,
}

impl PerturbedDensity {
    pub fn new(plan: &PerturbationPlan, delta: f64) -> Result<Self> {
        if !(delta.abs() <= plan.delta_bar) {
            return Err(Error::domain(format!(
                "|delta| = {} exceeds the bound {}",
                delta.abs(),
                plan.delta_bar
            )));
        }
        let mut s = Vec::with_capacity(plan.a.len());
        let mut z = Vec::with_capacity(plan.a.len());
        for (i, ai) in plan.a.iter().enumerate() {
            // |delta delta_i| <= 1 up to rounding in delta_bar
            let si = (delta * plan.delta_w[i]).clamp(-1.0, 1.0);
            let axis = plan.partition.axis(i);
            let l: f64 = ai.iter().enumerate().map(|(j, a)| a * axis.width(j)).sum();
            let zi = 1.0 + si * l;
            if !(zi > 0.0) {
                return Err(Error::domain(format!("perturbed marginal {} has no mass", i + 1)));
            }
            s.push(si);
            z.push(zi);
        }
        Ok(Self {
            plan: plan.clone(),
            delta,
            s,
            z,
        })
    }

    pub fn plan(&self) -> &PerturbationPlan {
        &self.plan
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn normalizer(&self, i: usize) -> f64 {
        self.z[i]
    }

    /// `eta_i / phi_i` at a sample in cell `j` with `1 / phi_i = inv_phi`.
    #[inline]
    pub fn ratio_in_cell(&self, i: usize, j: usize, inv_phi: f64) -> f64 {
        (1.0 + self.s[i] * self.plan.a[i][j] * inv_phi) / self.z[i]
    }

    /// Perturbed density of coordinate `i` at unit coordinate `x`.
    pub fn pdf(&self, i: usize, x: f64) -> Result<f64> {
        let phi = self.plan.margins[i].pdf(x)?;
        let j = self.plan.partition.axis(i).locate(x);
        Ok((phi + self.s[i] * self.plan.a[i][j]) / self.z[i])
    }

    pub fn ratio(&self, i: usize, x: f64) -> Result<f64> {
        let phi = self.plan.margins[i].pdf(x)?;
        Ok(self.pdf(i, x)? / phi)
    }

    /// Perturbed distribution function of coordinate `i`.
    pub fn cdf(&self, i: usize, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let axis = self.plan.partition.axis(i);
        let mut bump = 0.0;
        for (j, a) in self.plan.a[i].iter().enumerate() {
            let (lo, hi) = axis.cell(j);
            if x > lo {
                bump += a * (x.min(hi) - lo);
            }
        }
        (self.plan.margins[i].cdf(x) + self.s[i] * bump) / self.z[i]
    }

    /// Per-row density ratios for the stored design.
    pub fn row_weights(&self, w: &IndicatorWeights) -> RowWeights {
        let n = w.n();
        let p = self.s.len();
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; n];
        let mut vk = Vec::with_capacity(p);
        for i in 0..p {
            let mut col = Vec::with_capacity(n);
            for r in 0..n {
                let (ja, wa) = w.a(i, r);
                let (jb, wb) = w.b(i, r);
                u[r] *= self.ratio_in_cell(i, ja, wa);
                let rb = self.ratio_in_cell(i, jb, wb);
                v[r] *= rb;
                col.push(rb);
            }
            vk.push(col);
        }
        RowWeights { u, v, vk }
    }

    /// Envelope constant for rejection sampling of coordinate `i` from its
    /// nominal marginal.
    pub fn rejection_constant(&self, i: usize) -> f64 {
        let axis = self.plan.partition.axis(i);
        let mut c: f64 = 1.0 / self.z[i];
        for (j, a) in self.plan.a[i].iter().enumerate() {
            let bump = self.s[i] * a;
            if bump > 0.0 {
                let (lo, hi) = axis.cell(j);
                let inf = self.plan.margins[i].cell_infimum(lo, hi);
                c = c.max((1.0 + bump / inf) / self.z[i]);
            }
        }
        c
    }
}

/// Indices under the perturbed marginals, by reweighting the stored
/// evaluations.
pub fn reweighted_indices(bundle: &EvalBundle, w: &IndicatorWeights, pd: &PerturbedDensity) -> Result<NominalIndices> {
    RowTerms::new(bundle, &pd.row_weights(w)).estimate().map_err(collapse)
}

fn collapse(e: Error) -> Error {
    match e {
        Error::ZeroVariance => Error::CollapsedVariance,
        other => other,
    }
}

/// Result of scanning one plan over its delta grid.
#[derive(Debug, Clone)]
pub struct DeltaScan {
    pub deltas: Vec<f64>,
    /// `Delta` per grid point; infinite where the perturbed estimate broke
    /// down.
    pub big_delta: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Perturbed indices per grid point, when computable.
    pub perturbed: Vec<Option<NominalIndices>>,
}

/// Max ratio of perturbed to nominal replicate spread over all `2p`
/// estimators, skipping near-constant ones.
pub fn spread_ratio(nominal_std: &[f64], perturbed_std: &[f64]) -> f64 {
    let max = nominal_std.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return 1.0;
    }
    nominal_std
        .iter()
        .zip(perturbed_std)
        .filter(|(n, _)| **n >= STD_GUARD * max)
        .map(|(n, p)| p / n)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Scans `Delta` over the plan's grid. `nominal_std` lists S spreads then T
/// spreads, computed on the same resamples.
pub fn delta_scan(
    bundle: &EvalBundle,
    w: &IndicatorWeights,
    plan: &PerturbationPlan,
    resamples: &Resamples,
    nominal_std: &[f64],
    tau: f64,
    r: usize,
) -> DeltaScan {
    let deltas = plan.delta_grid(r);
    let points: Vec<(f64, Option<NominalIndices>)> = deltas
        .par_iter()
        .map(|&delta| scan_point(bundle, w, plan, resamples, nominal_std, delta))
        .collect();
    let (big_delta, perturbed): (Vec<_>, Vec<_>) = points.into_iter().unzip();
    let accepted = big_delta.iter().map(|d| *d <= tau).collect();
    DeltaScan {
        deltas,
        big_delta,
        accepted,
        perturbed,
    }
}

fn scan_point(
    bundle: &EvalBundle,
    w: &IndicatorWeights,
    plan: &PerturbationPlan,
    resamples: &Resamples,
    nominal_std: &[f64],
    delta: f64,
) -> (f64, Option<NominalIndices>) {
    let Ok(pd) = PerturbedDensity::new(plan, delta) else {
        return (f64::INFINITY, None);
    };
    let terms = RowTerms::new(bundle, &pd.row_weights(w));
    let Ok(point) = terms.estimate() else {
        return (f64::INFINITY, None);
    };
    match terms.replicate_std(resamples) {
        Ok((s, t)) => {
            let perturbed: Vec<f64> = s.into_iter().chain(t).collect();
            let ratio = spread_ratio(nominal_std, &perturbed);
            (if ratio.is_nan() { f64::INFINITY } else { ratio }, Some(point))
        }
        Err(_) => (f64::INFINITY, Some(point)),
    }
}

/// One target's scan as reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub index_type: IndexKind,
    /// 1-based.
    pub k: usize,
    /// `ok`, or `insensitive` when every derivative entry vanished.
    pub status: String,
    pub delta_bar: Option<f64>,
    pub delta_weights: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub delta_grid: Vec<f64>,
    /// `null` where the perturbed estimate broke down.
    #[serde(rename = "Delta")]
    pub big_delta: Vec<Option<f64>>,
    pub accepted: Vec<bool>,
    /// Grid values of the accepted rows below.
    pub accepted_delta: Vec<f64>,
    #[serde(rename = "perturbed_S")]
    pub perturbed_s: Vec<Vec<f64>>,
    #[serde(rename = "perturbed_T")]
    pub perturbed_t: Vec<Vec<f64>>,
}

impl TargetReport {
    pub fn target(&self) -> Target {
        Target::new(self.index_type, self.k - 1)
    }

    pub fn is_insensitive(&self) -> bool {
        self.status == "insensitive"
    }

    /// Largest (`max`) or smallest (`min`) accepted delta.
    pub fn extremal_delta(&self, sign: ExtremeSign) -> Option<f64> {
        let it = self.accepted_delta.iter().copied();
        match sign {
            ExtremeSign::Max => it.fold(None, |m, d| Some(m.map_or(d, |m: f64| m.max(d)))),
            ExtremeSign::Min => it.fold(None, |m, d| Some(m.map_or(d, |m: f64| m.min(d)))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeSign {
    Max,
    Min,
}

impl ExtremeSign {
    pub fn label(self) -> &'static str {
        match self {
            ExtremeSign::Max => "max",
            ExtremeSign::Min => "min",
        }
    }
}

impl FromStr for ExtremeSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ExtremeSign::Max),
            "min" => Ok(ExtremeSign::Min),
            _ => Err(Error::Config(format!("sign must be max or min, got `{s}`"))),
        }
    }
}

/// Per-index extremes over all targets and accepted deltas, with the target
/// that produced each (`None` when the nominal value is the extreme).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub min_source: Vec<Option<String>>,
    pub max_source: Vec<Option<String>>,
}

impl Envelope {
    fn at(nominal: &[f64]) -> Self {
        let p = nominal.len();
        Self {
            min: nominal.to_vec(),
            max: nominal.to_vec(),
            min_source: vec![None; p],
            max_source: vec![None; p],
        }
    }

    fn update(&mut self, values: &[f64], source: &str) {
        for (k, &v) in values.iter().enumerate() {
            if v < self.min[k] {
                self.min[k] = v;
                self.min_source[k] = Some(source.to_string());
            }
            if v > self.max[k] {
                self.max[k] = v;
                self.max_source[k] = Some(source.to_string());
            }
        }
    }
}

/// Everything the robustness stage produces; serialized as
/// `robustness.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// `null` stands for an unbounded threshold.
    pub tau: Option<f64>,
    pub r: usize,
    #[serde(rename = "nominal_S")]
    pub nominal_s: Vec<f64>,
    #[serde(rename = "nominal_T")]
    pub nominal_t: Vec<f64>,
    pub targets: Vec<TargetReport>,
    #[serde(rename = "envelope_min_S")]
    pub envelope_min_s: Vec<f64>,
    #[serde(rename = "envelope_max_S")]
    pub envelope_max_s: Vec<f64>,
    #[serde(rename = "envelope_min_T")]
    pub envelope_min_t: Vec<f64>,
    #[serde(rename = "envelope_max_T")]
    pub envelope_max_t: Vec<f64>,
    /// Extremes with the target behind each.
    #[serde(rename = "envelope_sources_S")]
    pub envelope_sources_s: Envelope,
    #[serde(rename = "envelope_sources_T")]
    pub envelope_sources_t: Envelope,
}

impl RobustnessReport {
    pub fn target(&self, target: Target) -> Option<&TargetReport> {
        self.targets.iter().find(|t| t.target() == target)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rows of `delta_scan.csv`.
    pub fn scan_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["target", "delta", "Delta", "accepted"])?;
        for t in &self.targets {
            let name = t.target().to_string();
            for ((d, big), acc) in t.delta_grid.iter().zip(&t.big_delta).zip(&t.accepted) {
                let big = big.map_or("inf".to_string(), |v| v.to_string());
                w.write_record([name.clone(), d.to_string(), big, acc.to_string()])?;
            }
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }
}

/// Inputs shared by every target scan.
pub struct RobustnessInputs<'a> {
    pub bundle: &'a EvalBundle,
    pub weights: &'a IndicatorWeights,
    pub table: &'a DerivativeTable,
    pub estimates: &'a SobolEstimates,
    pub resamples: &'a Resamples,
    pub margins: Arc<Vec<MarginalDensity>>,
    pub partition: Arc<Partition>,
}

/// Plans and scans every S_k and T_k target, then builds the envelopes.
/// Targets whose derivative entries all vanish are reported as insensitive
/// and contribute nothing.
pub fn run_robustness(
    inputs: &RobustnessInputs<'_>,
    tau: f64,
    r: usize,
) -> Result<(RobustnessReport, Vec<Option<PerturbationPlan>>)> {
    if r < 2 {
        return Err(Error::Config(format!("r must be >= 2, got {r}")));
    }
    let p = inputs.bundle.p();
    let est = inputs.estimates;
    let nominal_std = est.stds();
    let targets: Vec<Target> = (0..p)
        .flat_map(|k| [Target::new(IndexKind::First, k), Target::new(IndexKind::Total, k)])
        .collect();

    let mut plans = Vec::with_capacity(targets.len());
    let mut reports = Vec::with_capacity(targets.len());
    for &target in &targets {
        let plan = match PerturbationPlan::solve_optimal_direction(
            inputs.table,
            inputs.margins.clone(),
            inputs.partition.clone(),
            target,
        ) {
            Ok(plan) => Some(plan),
            Err(Error::Insensitive) => None,
            Err(e) => return Err(e),
        };
        let report = match &plan {
            Some(plan) => {
                let scan = delta_scan(
                    inputs.bundle,
                    inputs.weights,
                    plan,
                    inputs.resamples,
                    &nominal_std,
                    tau,
                    r,
                );
                target_report(target, Some(plan), scan)
            }
            None => target_report(
                target,
                None,
                DeltaScan {
                    deltas: vec![],
                    big_delta: vec![],
                    accepted: vec![],
                    perturbed: vec![],
                },
            ),
        };
        plans.push(plan);
        reports.push(report);
    }

    let mut env_s = Envelope::at(&est.s);
    let mut env_t = Envelope::at(&est.t);
    for t in &reports {
        let name = t.target().to_string();
        for (s, tt) in t.perturbed_s.iter().zip(&t.perturbed_t) {
            env_s.update(s, &name);
            env_t.update(tt, &name);
        }
    }
    let report = RobustnessReport {
        tau: tau.is_finite().then_some(tau),
        r,
        nominal_s: est.s.clone(),
        nominal_t: est.t.clone(),
        targets: reports,
        envelope_min_s: env_s.min.clone(),
        envelope_max_s: env_s.max.clone(),
        envelope_min_t: env_t.min.clone(),
        envelope_max_t: env_t.max.clone(),
        envelope_sources_s: env_s,
        envelope_sources_t: env_t,
    };
    Ok((report, plans))
}

fn target_report(target: Target, plan: Option<&PerturbationPlan>, scan: DeltaScan) -> TargetReport {
    let mut accepted_delta = Vec::new();
    let mut perturbed_s = Vec::new();
    let mut perturbed_t = Vec::new();
    for ((d, acc), point) in scan.deltas.iter().zip(&scan.accepted).zip(&scan.perturbed) {
        if let (true, Some(point)) = (*acc, point) {
            accepted_delta.push(*d);
            perturbed_s.push(point.s.clone());
            perturbed_t.push(point.t.clone());
        }
    }
    TargetReport {
        index_type: target.kind,
        k: target.k + 1,
        status: if plan.is_some() { "ok" } else { "insensitive" }.to_string(),
        delta_bar: plan.map(|p| p.delta_bar()),
        delta_weights: plan.map(|p| p.delta_weights().to_vec()).unwrap_or_default(),
        coefficients: plan.map(|p| p.coefficients().to_vec()).unwrap_or_default(),
        delta_grid: scan.deltas,
        big_delta: scan.big_delta.iter().map(|d| d.is_finite().then_some(*d)).collect(),
        accepted: scan.accepted,
        accepted_delta,
        perturbed_s,
        perturbed_t,
    }
}

/// Draws `n` samples of perturbed coordinate `i` by rejection from the
/// nominal marginal.
pub fn sample_perturbed_marginal(pd: &PerturbedDensity, i: usize, n: usize, seed: u64) -> Vec<f64> {
    let margin = &pd.plan.margins[i];
    let axis = pd.plan.partition.axis(i);
    let c = pd.rejection_constant(i);
    let mut proposals = substream(seed, STREAM_PROPOSAL);
    let mut accept = substream(seed, STREAM_ACCEPT);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = margin.sample_one(&mut proposals);
        let u: f64 = accept.sample(Open01);
        let phi = margin.pdf_unchecked(x);
        let ratio = pd.ratio_in_cell(i, axis.locate(x), 1.0 / phi);
        if u * c <= ratio {
            out.push(x);
        }
    }
    out
}

/// Masses of `bins` equal-width bins of perturbed coordinate `i`, from the
/// exact distribution function. Returns `(lo, hi, mass)` per bin.
pub fn perturbed_histogram(pd: &PerturbedDensity, i: usize, bins: usize) -> Vec<(f64, f64, f64)> {
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            (lo, hi, pd.cdf(i, hi) - pd.cdf(i, lo))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::AxisPartition;

    fn uniform_plan(a: Vec<Vec<f64>>, delta_w: Vec<f64>, cells: usize) -> PerturbationPlan {
        let p = a.len();
        let margins = Arc::new((0..p).map(|_| MarginalDensity::uniform(0.0, 1.0).unwrap()).collect());
        let partition = Arc::new(Partition::new(vec![AxisPartition::equal_width(cells).unwrap(); p]));
        PerturbationPlan::from_parts(Target::new(IndexKind::Total, 0), a, delta_w, margins, partition).unwrap()
    }

    #[test]
    fn target_parsing() {
        assert_eq!("T:3".parse::<Target>().unwrap(), Target::new(IndexKind::Total, 2));
        assert_eq!("S:1".parse::<Target>().unwrap().to_string(), "S:1");
        assert!("T:0".parse::<Target>().is_err());
        assert!("X:1".parse::<Target>().is_err());
    }

    #[test]
    fn two_cell_uniform_perturbation() {
        let plan = uniform_plan(vec![vec![1.0, -1.0]], vec![1.0], 2);
        let pd = PerturbedDensity::new(&plan, 0.5).unwrap();
        assert_eq!(pd.normalizer(0), 1.0);
        assert_eq!(pd.pdf(0, 0.25).unwrap(), 1.5);
        assert_eq!(pd.pdf(0, 0.75).unwrap(), 0.5);
        assert!((pd.cdf(0, 0.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_delta_is_nominal() {
        let plan = uniform_plan(vec![vec![1.0, -1.0, 1.0]], vec![1.0], 3);
        let pd = PerturbedDensity::new(&plan, 0.0).unwrap();
        for x in [0.0, 0.2, 0.5, 1.0] {
            assert_eq!(pd.pdf(0, x).unwrap(), 1.0);
        }
        assert_eq!(pd.rejection_constant(0), 1.0);
    }

    #[test]
    fn magnitude_bound_is_enforced() {
        let plan = uniform_plan(vec![vec![1.0, -1.0], vec![1.0, 1.0]], vec![0.5, 0.5], 2);
        assert_eq!(plan.delta_bar(), 2.0);
        assert!(PerturbedDensity::new(&plan, 2.0).is_ok());
        assert!(PerturbedDensity::new(&plan, 2.0 + 1e-9).is_err());
    }

    #[test]
    fn boundary_perturbation_touches_zero() {
        let plan = uniform_plan(vec![vec![-1.0, 1.0]], vec![1.0], 2);
        let pd = PerturbedDensity::new(&plan, plan.delta_bar()).unwrap();
        assert_eq!(pd.pdf(0, 0.1).unwrap(), 0.0);
        assert_eq!(pd.pdf(0, 0.9).unwrap(), 2.0);
    }

    #[test]
    fn rejection_sampler_reproduces_cell_masses() {
        let plan = uniform_plan(vec![vec![1.0, -1.0]], vec![1.0], 2);
        let pd = PerturbedDensity::new(&plan, 0.5).unwrap();
        let n = 40000;
        let xs = sample_perturbed_marginal(&pd, 0, n, 7);
        let low = xs.iter().filter(|x| **x < 0.5).count() as f64 / n as f64;
        assert!((low - 0.75).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn zero_delta_sampler_returns_proposals() {
        let plan = uniform_plan(vec![vec![1.0, -1.0]], vec![1.0], 2);
        let pd = PerturbedDensity::new(&plan, 0.0).unwrap();
        let xs = sample_perturbed_marginal(&pd, 0, 10, 3);
        let mut rng = substream(3, STREAM_PROPOSAL);
        let expect: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(Open01)).collect();
        assert_eq!(xs, expect);
    }

    #[test]
    fn spread_ratio_skips_flat_estimators() {
        assert_eq!(spread_ratio(&[1.0, 1e-6], &[1.2, 5.0]), 1.2);
        assert_eq!(spread_ratio(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn histogram_masses_sum_to_one() {
        let plan = uniform_plan(vec![vec![1.0, -1.0, 0.5, -0.25]], vec![1.0], 4);
        let pd = PerturbedDensity::new(&plan, -0.8).unwrap();
        let h = perturbed_histogram(&pd, 0, HISTOGRAM_BINS);
        assert_eq!(h.len(), 50);
        assert!((h.iter().map(|b| b.2).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(h.iter().all(|b| b.2 >= 0.0));
    }
}
