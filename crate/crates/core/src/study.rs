//! Study configuration and the end-to-end pipeline.
//!
//! A study is described by one JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "model": {"kind": "linear", "coefficients": [10, 9, 8]},
//!   "margins": [{"family": "uniform", "lo": 0, "hi": 1}, ...],
//!   "N": 5000,
//!   "partition": {"M": 10},
//!   "tau": 1.5,
//!   "r": 60,
//!   "B_rep": 64,
//!   "seed": 1,
//!   "out": "out/linear"
//! }
//! ```
//!
//! All randomness derives from `seed`: design streams 0 and 1, bootstrap
//! streams `1024 + b`, and for perturbed sampling streams 2 and 3 of
//! `seed + i` for coordinate `i` (zero-based).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{evaluate_model, EvalBundle, PickFreezeDesign};
use crate::error::{Error, Result};
use crate::estimators::{estimate_with_bootstrap, SobolEstimates, DEFAULT_B_REP};
use crate::frechet::{build_table, IndicatorWeights};
use crate::margins::{AxisPartition, MarginalDensity, MarginalSpec, Partition, UnitCubeMap};
use crate::models::{advdiff, ModelKind, ModelSpec};
use crate::perturb::{
    perturbed_histogram, run_robustness, sample_perturbed_marginal, ExtremeSign, PerturbationPlan, PerturbedDensity,
    RobustnessInputs, RobustnessReport, Target, DEFAULT_R, DEFAULT_TAU, HISTOGRAM_BINS,
};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_M: usize = 10;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const INDICES_FILE: &str = "indices.json";
pub const DERIVATIVES_FILE: &str = "derivatives.csv";
pub const ROBUSTNESS_FILE: &str = "robustness.json";
pub const SCAN_FILE: &str = "delta_scan.csv";
pub const MARGINALS_FILE: &str = "perturbed_marginals.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Quantile cells per coordinate.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_coordinate: Option<Vec<usize>>,
    /// Explicit cell edges per coordinate, in physical units spanning the
    /// support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Value(f64),
    Named(String),
}

impl Default for TauSpec {
    fn default() -> Self {
        TauSpec::Value(DEFAULT_TAU)
    }
}

fn default_r() -> usize {
    DEFAULT_R
}

fn default_b_rep() -> usize {
    DEFAULT_B_REP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub version: u32,
    pub model: ModelKind,
    pub margins: Vec<MarginalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub tau: TauSpec,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(rename = "B_rep", default = "default_b_rep")]
    pub b_rep: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// A parsed config together with where it came from, for error messages
/// and relative paths.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: StudyConfig,
    pub source: String,
    text: String,
    base_dir: PathBuf,
}

/// Line (1-based) of the first occurrence of `"key":` in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|line| {
            line.match_indices(&needle)
                .any(|(at, _)| line[at + needle.len()..].trim_start().starts_with(':'))
        })
        .map(|l| l + 1)
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &path.display().to_string(), base_dir)
    }

    pub fn from_str(text: &str, source: &str, base_dir: PathBuf) -> Result<Self> {
        let config: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        let loaded = Self {
            config,
            source: source.to_string(),
            text: text.to_string(),
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn fail(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match key_line(&self.text, key) {
            Some(line) => Error::Config(format!("{}:{line}: {msg}", self.source)),
            None => Error::Config(format!("{}: {msg}", self.source)),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.version != CONFIG_VERSION {
            return Err(self.fail(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", c.version),
            ));
        }
        if c.margins.is_empty() {
            return Err(self.fail("margins", "at least one marginal is required"));
        }
        let p = c.margins.len();
        if let Some(names) = &c.names {
            if names.len() != p {
                return Err(self.fail("names", format!("{} names given for {p} inputs", names.len())));
            }
        }
        if c.n < 2 {
            return Err(self.fail("N", "N must be ≥ 2"));
        }
        if c.r < 2 {
            return Err(self.fail("r", "r must be ≥ 2"));
        }
        if c.b_rep < 2 {
            return Err(self.fail("B_rep", "B_rep must be ≥ 2"));
        }
        self.tau()?;
        let part = &c.partition;
        let given = [part.m.is_some(), part.per_coordinate.is_some(), part.edges.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(self.fail("partition", "give only one of M, per_coordinate, edges"));
        }
        if let Some(m) = part.m {
            if m < 2 {
                return Err(self.fail("M", "M must be ≥ 2"));
            }
        }
        if let Some(ms) = &part.per_coordinate {
            if ms.len() != p {
                return Err(self.fail(
                    "per_coordinate",
                    format!("{} cell counts given for {p} inputs", ms.len()),
                ));
            }
            if ms.iter().any(|m| *m < 2) {
                return Err(self.fail("per_coordinate", "every M_i must be ≥ 2"));
            }
        }
        if let Some(edges) = &part.edges {
            if edges.len() != p {
                return Err(self.fail("edges", format!("{} edge lists given for {p} inputs", edges.len())));
            }
        }
        Ok(())
    }

    /// The acceptance threshold; infinite for `"unbounded"`.
    pub fn tau(&self) -> Result<f64> {
        match &self.config.tau {
            TauSpec::Value(t) if *t > 1.0 => Ok(*t),
            TauSpec::Value(t) => Err(self.fail("tau", format!("tau must be > 1, got {t}"))),
            TauSpec::Named(s) if s == "unbounded" => Ok(f64::INFINITY),
            TauSpec::Named(s) => Err(self.fail("tau", format!("tau must be a number or \"unbounded\", got \"{s}\""))),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Builds densities, partition and model.
    pub fn prepare(&self) -> Result<Study> {
        let c = &self.config;
        let margins = c
            .margins
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                MarginalDensity::from_spec(spec, &self.base_dir).map_err(|e| match e {
                    Error::Marginal { .. } => e,
                    other => self.fail("margins", format!("marginal {}: {other}", i + 1)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = margins.len();
        let partition = match (&c.partition.per_coordinate, &c.partition.edges) {
            (Some(ms), _) => Partition::quantile_per_axis(&margins, ms)?,
            (_, Some(edges)) => {
                let axes = edges
                    .iter()
                    .zip(&margins)
                    .enumerate()
                    .map(|(i, (e, m))| {
                        let (lo, hi) = m.support();
                        let unit: Vec<f64> = e.iter().map(|y| (y - lo) / (hi - lo)).collect();
                        // tolerate rounding at the support ends
                        let unit = snap_ends(unit);
                        AxisPartition::new(unit)
                            .map_err(|err| self.fail("edges", format!("coordinate {}: {err}", i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Partition::new(axes)
            }
            _ => Partition::quantile(&margins, c.partition.m.unwrap_or(DEFAULT_M))?,
        };
        let model =
            ModelSpec::new(c.model.clone(), UnitCubeMap::from_margins(&margins)).map_err(|e| self.fail("model", e))?;
        let names = match (&c.names, &c.model) {
            (Some(names), _) => names.clone(),
            (None, ModelKind::AdvectionDiffusion { .. }) => {
                advdiff::PARAMETER_NAMES.iter().map(|s| s.to_string()).collect()
            }
            _ => (1..=p).map(|i| format!("x{i}")).collect(),
        };
        Ok(Study {
            margins: Arc::new(margins),
            partition: Arc::new(partition),
            model,
            names,
            n: c.n,
            seed: c.seed,
            b_rep: c.b_rep,
            tau: self.tau()?,
            r: c.r,
        })
    }

    /// The config as parsed, for the run manifest.
    pub fn echo(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or(Value::Null)
    }
}

fn snap_ends(mut e: Vec<f64>) -> Vec<f64> {
    if let Some(first) = e.first_mut() {
        if first.abs() < 1e-12 {
            *first = 0.0;
        }
    }
    if let Some(last) = e.last_mut() {
        if (*last - 1.0).abs() < 1e-12 {
            *last = 1.0;
        }
    }
    e
}

/// Everything needed to run the pipeline.
#[derive(Debug)]
pub struct Study {
    pub margins: Arc<Vec<MarginalDensity>>,
    pub partition: Arc<Partition>,
    pub model: ModelSpec,
    pub names: Vec<String>,
    pub n: usize,
    pub seed: u64,
    pub b_rep: usize,
    pub tau: f64,
    pub r: usize,
}

/// Products of the post-processing stages.
#[derive(Debug)]
pub struct Analysis {
    pub estimates: SobolEstimates,
    pub table: crate::frechet::DerivativeTable,
    pub report: RobustnessReport,
    pub plans: Vec<Option<PerturbationPlan>>,
}

impl Study {
    pub fn p(&self) -> usize {
        self.margins.len()
    }

    pub fn design(&self) -> Result<PickFreezeDesign> {
        PickFreezeDesign::generate(&self.margins, self.n, self.seed)
    }

    /// Generates the design and evaluates the model on it.
    pub fn evaluate(&self) -> Result<EvalBundle> {
        evaluate_model(&self.design()?, &self.model)
    }

    /// Nominal indices and spreads only.
    pub fn indices(&self, bundle: &EvalBundle) -> Result<SobolEstimates> {
        Ok(estimate_with_bootstrap(bundle, self.b_rep, self.seed)?.0)
    }

    /// Every stage after model evaluation. Touches only the bundle.
    pub fn analyze(&self, bundle: &EvalBundle) -> Result<Analysis> {
        let (estimates, resamples) = estimate_with_bootstrap(bundle, self.b_rep, self.seed)?;
        let weights = IndicatorWeights::new(bundle, &self.margins, &self.partition)?;
        let nominal = crate::estimators::NominalIndices {
            s: estimates.s.clone(),
            t: estimates.t.clone(),
            var_f: estimates.var_f,
        };
        let table = build_table(bundle, &weights, &self.partition, &nominal);
        let inputs = RobustnessInputs {
            bundle,
            weights: &weights,
            table: &table,
            estimates: &estimates,
            resamples: &resamples,
            margins: self.margins.clone(),
            partition: self.partition.clone(),
        };
        let (report, plans) = run_robustness(&inputs, self.tau, self.r)?;
        Ok(Analysis {
            estimates,
            table,
            report,
            plans,
        })
    }

    /// `perturbed_marginals.csv`: 50-bin masses of every coordinate under
    /// each target's extremal accepted perturbations. Bin edges are physical.
    pub fn marginals_csv(&self, analysis: &Analysis) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "target",
            "extremal_delta_sign",
            "delta",
            "coordinate",
            "bin_lo",
            "bin_hi",
            "mass",
        ])?;
        for (t, plan) in analysis.report.targets.iter().zip(&analysis.plans) {
            let Some(plan) = plan else { continue };
            for sign in [ExtremeSign::Max, ExtremeSign::Min] {
                let Some(delta) = t.extremal_delta(sign) else { continue };
                let pd = PerturbedDensity::new(plan, delta)?;
                for i in 0..self.p() {
                    let (lo, hi) = self.margins[i].support();
                    for (a, b, mass) in perturbed_histogram(&pd, i, HISTOGRAM_BINS) {
                        w.write_record([
                            t.target().to_string(),
                            sign.label().to_string(),
                            delta.to_string(),
                            (i + 1).to_string(),
                            (lo + a * (hi - lo)).to_string(),
                            (lo + b * (hi - lo)).to_string(),
                            mass.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }
}

/// Options for [`run_study`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Reuse `bundle.json` from the output directory when it matches the
    /// study instead of calling the model.
    pub reuse_bundle: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub analysis: Analysis,
    /// Model calls made by this run (zero when the bundle was reused).
    pub model_calls: u64,
    pub bundle_evaluations: u64,
}

/// Runs the whole pipeline and writes every output file.
pub fn run_study(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut loaded = loaded.clone();
    if let Some(seed) = opts.seed {
        loaded.config.seed = seed;
    }
    let study = loaded.prepare()?;
    let out = match (&opts.out, &loaded.config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.base_dir.join(o),
        (None, None) => return Err(Error::Config("no output directory: pass --out or set `out`".into())),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let bundle_path = out.join(BUNDLE_FILE);
    let reused = if opts.reuse_bundle && bundle_path.exists() {
        let bundle = EvalBundle::load(&bundle_path)?;
        let matches =
            bundle.design() == &study.design()? && bundle.model_id() == crate::models::Model::id(&study.model);
        matches.then_some(bundle)
    } else {
        None
    };
    let (bundle, model_calls) = match reused {
        Some(b) => (b, 0),
        None => {
            let b = study.evaluate()?;
            let calls = b.model_evaluations();
            b.save(&bundle_path)?;
            (b, calls)
        }
    };

    let analysis = study.analyze(&bundle)?;
    write_atomic(
        &out.join(INDICES_FILE),
        serde_json::to_string_pretty(&analysis.estimates)?.as_bytes(),
    )?;
    analysis.table.write_csv(&out.join(DERIVATIVES_FILE))?;
    write_atomic(&out.join(ROBUSTNESS_FILE), analysis.report.to_json()?.as_bytes())?;
    write_atomic(&out.join(SCAN_FILE), &analysis.report.scan_csv()?)?;
    write_atomic(&out.join(MARGINALS_FILE), &study.marginals_csv(&analysis)?)?;

    let manifest = json!({
        "tool": "sobol-robust",
        "version": env!("CARGO_PKG_VERSION"),
        "config_source": loaded.source,
        "config": loaded.echo(),
        "seed": study.seed,
        "streams": {
            "design_A": 0,
            "design_B": 1,
            "bootstrap_replicate_b": "1024 + b",
            "perturbed_sampling": "streams 2 (proposal) and 3 (accept) of seed + coordinate index",
        },
        "names": study.names,
        "p": study.p(),
        "N": study.n,
        "tau": study.tau.is_finite().then_some(study.tau),
        "r": study.r,
        "B_rep": study.b_rep,
        "partition_cells": study.partition.axes().iter().map(AxisPartition::len).collect::<Vec<_>>(),
        "model_id": bundle.model_id(),
        "bundle_model_evaluations": bundle.model_evaluations(),
        "model_calls_this_run": model_calls,
        "bundle_reused": model_calls == 0,
        "files": [BUNDLE_FILE, INDICES_FILE, DERIVATIVES_FILE, ROBUSTNESS_FILE, SCAN_FILE, MARGINALS_FILE],
    });
    write_atomic(
        &out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    Ok(RunOutcome {
        out,
        bundle_evaluations: bundle.model_evaluations(),
        analysis,
        model_calls,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Outputs of a finished run, read back from disk.
pub struct RunFiles {
    pub manifest: Value,
    pub estimates: SobolEstimates,
    pub report: RobustnessReport,
}

impl RunFiles {
    pub fn load(out: &Path) -> Result<Self> {
        Ok(Self {
            manifest: read_json(&out.join(MANIFEST_FILE))?,
            estimates: read_json(&out.join(INDICES_FILE))?,
            report: read_json(&out.join(ROBUSTNESS_FILE))?,
        })
    }

    pub fn names(&self) -> Vec<String> {
        match self.manifest.get("names").and_then(Value::as_array) {
            Some(a) => a.iter().map(|v| v.as_str().unwrap_or("?").to_string()).collect(),
            None => (1..=self.estimates.p).map(|i| format!("x{i}")).collect(),
        }
    }

    /// Whether the `T_k` target produced no accepted perturbation other than
    /// the nominal one.
    pub fn no_admissible(&self, k: usize) -> bool {
        let target = Target::new(crate::perturb::IndexKind::Total, k);
        match self.report.target(target) {
            Some(t) => t.is_insensitive() || t.accepted_delta.iter().all(|d| *d == 0.0),
            None => true,
        }
    }
}

/// Ranked table of nominal total indices with their envelopes.
pub fn report_text(files: &RunFiles) -> String {
    let est = &files.estimates;
    let rep = &files.report;
    let names = files.names();
    let mut order: Vec<usize> = (0..est.p).collect();
    order.sort_by(|a, b| est.t[*b].total_cmp(&est.t[*a]));
    let width = names.iter().map(String::len).max().unwrap_or(4).max(5);
    let mut s = String::new();
    let tau = rep.tau.map_or("unbounded".to_string(), |t| t.to_string());
    let _ = writeln!(s, "N = {}, B_rep = {}, tau = {tau}, r = {}", est.n, est.b_rep, rep.r);
    let _ = writeln!(
        s,
        "{:>4}  {:<width$}  {:>9}  {:>21}  {:>9}  {:>21}",
        "rank", "input", "T", "T envelope", "S", "S envelope"
    );
    for (rank, &k) in order.iter().enumerate() {
        let _ = write!(
            s,
            "{:>4}  {:<width$}  {:>9.4}  [{:>9.4}, {:>9.4}]  {:>9.4}  [{:>9.4}, {:>9.4}]",
            rank + 1,
            names[k],
            est.t[k],
            rep.envelope_min_t[k],
            rep.envelope_max_t[k],
            est.s[k],
            rep.envelope_min_s[k],
            rep.envelope_max_s[k],
        );
        if files.no_admissible(k) {
            s.push_str("  no admissible δ");
        }
        s.push('\n');
    }
    s
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of nominal total indices with min/max envelopes.
pub fn envelope_svg(files: &RunFiles) -> String {
    let est = &files.estimates;
    let rep = &files.report;
    let names = files.names();
    let (w, h, pad) = (80.0 + 60.0 * est.p as f64, 320.0, 40.0);
    let top = rep.envelope_max_t.iter().cloned().fold(0.0, f64::max).max(1e-12) * 1.05;
    let y = |v: f64| h - pad - (v.max(0.0) / top) * (h - 2.0 * pad);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - 10.0
    );
    for k in 0..est.p {
        let x = pad + 20.0 + 60.0 * k as f64;
        let (lo, nom, hi) = (rep.envelope_min_t[k], est.t[k], rep.envelope_max_t[k]);
        let _ = write!(
            s,
            r##"<rect x="{x}" y="{:.2}" width="30" height="{:.2}" fill="#2ca02c"/>"##,
            y(hi),
            y(nom) - y(hi)
        );
        let _ = write!(
            s,
            r##"<rect x="{x}" y="{:.2}" width="30" height="{:.2}" fill="#1f77b4"/>"##,
            y(nom),
            y(lo) - y(nom)
        );
        let _ = write!(
            s,
            r##"<rect x="{x}" y="{:.2}" width="30" height="{:.2}" fill="#d62728"/>"##,
            y(lo),
            y(0.0) - y(lo)
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x + 15.0,
            h - pad + 14.0,
            svg_escape(&names[k])
        );
    }
    let _ = write!(
        s,
        r#"<text x="{pad}" y="20">total indices: envelope max (green), nominal (blue), envelope min (red)</text>"#
    );
    s.push_str("</svg>\n");
    s
}

/// Small-multiple histograms from `perturbed_marginals.csv` for the target
/// with the largest nominal total index.
pub fn marginals_svg(files: &RunFiles, out: &Path) -> Result<String> {
    let est = &files.estimates;
    let k = (0..est.p).max_by(|a, b| est.t[*a].total_cmp(&est.t[*b])).unwrap_or(0);
    let target = Target::new(crate::perturb::IndexKind::Total, k).to_string();
    let mut rdr = csv::Reader::from_path(out.join(MARGINALS_FILE))?;
    // (sign, coordinate) -> masses
    let mut series: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if &rec[0] != target.as_str() {
            continue;
        }
        let sign = rec[1].to_string();
        let coord: usize = rec[3].parse().unwrap_or(0);
        let mass: f64 = rec[6].parse().unwrap_or(0.0);
        match series.iter_mut().find(|(s, c, _)| *s == sign && *c == coord) {
            Some(entry) => entry.2.push(mass),
            None => series.push((sign, coord, vec![mass])),
        }
    }
    let names = files.names();
    let (cw, ch) = (220.0, 120.0);
    let cols = est.p.clamp(1, 5);
    let rows = est.p.div_ceil(cols);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        cw * cols as f64,
        ch * rows as f64 + 24.0
    );
    let _ = write!(
        s,
        r#"<text x="6" y="14">perturbed marginals for {target}: max (green), min (red)</text>"#
    );
    for i in 0..est.p {
        let (ox, oy) = (cw * (i % cols) as f64, 24.0 + ch * (i / cols) as f64);
        let _ = write!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            ox + 6.0,
            oy + 12.0,
            svg_escape(&names[i])
        );
        let peak = series
            .iter()
            .filter(|e| e.1 == i + 1)
            .flat_map(|e| e.2.iter().copied())
            .fold(1e-12, f64::max);
        for (sign, colour) in [("max", "#2ca02c"), ("min", "#d62728")] {
            let Some((_, _, masses)) = series.iter().find(|e| e.0 == sign && e.1 == i + 1) else {
                continue;
            };
            let step = (cw - 20.0) / masses.len() as f64;
            let pts: Vec<String> = masses
                .iter()
                .enumerate()
                .map(|(b, m)| {
                    format!(
                        "{:.1},{:.1}",
                        ox + 10.0 + step * (b as f64 + 0.5),
                        oy + ch - 10.0 - m / peak * (ch - 30.0)
                    )
                })
                .collect();
            let _ = write!(
                s,
                r#"<polyline fill="none" stroke="{colour}" points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Prints the summary and optionally writes `envelopes.svg` and
/// `perturbed_marginals.svg`.
pub fn report(out: &Path, svg: bool) -> Result<String> {
    let files = RunFiles::load(out)?;
    if svg {
        write_atomic(&out.join("envelopes.svg"), envelope_svg(&files).as_bytes())?;
        write_atomic(
            &out.join("perturbed_marginals.svg"),
            marginals_svg(&files, out)?.as_bytes(),
        )?;
    }
    Ok(report_text(&files))
}

/// Samples the product of perturbed marginals behind `target` at its
/// extremal accepted delta, in physical coordinates. Recomputes the plan
/// from the stored bundle; no model calls.
pub fn sample_perturbed(out: &Path, target: Target, sign: ExtremeSign, n: usize) -> Result<Vec<Vec<f64>>> {
    let files = RunFiles::load(out)?;
    let config: StudyConfig = serde_json::from_value(files.manifest["config"].clone())?;
    let source = files.manifest["config_source"]
        .as_str()
        .unwrap_or("manifest")
        .to_string();
    let base_dir = Path::new(&source).parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig::from_str(&serde_json::to_string(&config)?, &source, base_dir)?;
    let mut study = loaded.prepare()?;
    // the effective seed, which --seed may have overridden
    study.seed = files.manifest["seed"].as_u64().unwrap_or(study.seed);
    if target.k >= study.p() {
        return Err(Error::Config(format!(
            "target {target} is out of range for {} inputs",
            study.p()
        )));
    }
    let t = files
        .report
        .target(target)
        .ok_or_else(|| Error::Config(format!("no scan for target {target}")))?;
    if t.is_insensitive() {
        return Err(Error::Insensitive);
    }
    let delta = t
        .extremal_delta(sign)
        .ok_or_else(|| Error::Config(format!("no admissible δ for target {target}")))?;

    let bundle = EvalBundle::load(&out.join(BUNDLE_FILE))?;
    let analysis = study.analyze(&bundle)?;
    let idx = analysis
        .report
        .targets
        .iter()
        .position(|r| r.target() == target)
        .expect("every target is scanned");
    let plan = analysis.plans[idx].as_ref().ok_or(Error::Insensitive)?;
    let pd = PerturbedDensity::new(plan, delta)?;
    let cols: Vec<Vec<f64>> = (0..study.p())
        .map(|i| sample_perturbed_marginal(&pd, i, n, study.seed.wrapping_add(i as u64)))
        .collect();
    Ok((0..n)
        .map(|r| {
            (0..study.p())
                .map(|i| study.margins[i].to_physical(cols[i][r]))
                .collect()
        })
        .collect())
}
