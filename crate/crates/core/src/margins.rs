//! Nominal marginal densities on compact intervals.
//!
//! Every density is handled in unit coordinates: the support `[lo, hi]` is
//! mapped affinely onto `[0, 1]` and the density values carry the Jacobian
//! factor `hi - lo`, so they integrate to one on the unit interval.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use gauss_quad::GaussLegendre;
use libm::erfc;
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of nodes used to tabulate the randomized-support density.
pub const RANDOMIZED_SUPPORT_GRID: usize = 2001;

/// Safety factor applied to grid minima of tabulated densities.
pub const TABULATED_INFIMUM_FACTOR: f64 = 0.999;

/// Absolute tolerance of the bisection used to invert CDFs.
pub const QUANTILE_TOLERANCE: f64 = 1e-10;

/// Serializable description of a marginal, as it appears in study configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalSpec {
    Uniform {
        lo: f64,
        hi: f64,
    },
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    /// Uniform on `[A, B]` with `A ~ U(lo_interval)` and `B ~ U(hi_interval)`.
    RandomizedSupportUniform {
        lo_interval: [f64; 2],
        hi_interval: [f64; 2],
    },
    /// Piecewise-linear density, either inline or from a two-column CSV.
    Tabulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
enum Shape {
    Uniform,
    /// Parameters in unit coordinates; `cdf_lo` is the untruncated CDF at 0
    /// and `mass` the probability of the truncation window.
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        cdf_lo: f64,
        mass: f64,
    },
    Grid(PiecewiseLinear),
}

/// One input's nominal PDF on a compact interval.
#[derive(Debug, Clone)]
pub struct MarginalDensity {
    spec: MarginalSpec,
    lo: f64,
    hi: f64,
    shape: Shape,
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!(
            "support [{lo}, {hi}] must be a finite interval with positive width"
        )));
    }
    Ok(())
}

fn check_unit(x: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("{what} = {x} is outside [0, 1]")));
    }
    Ok(())
}

impl MarginalDensity {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        Ok(Self {
            spec: MarginalSpec::Uniform { lo, hi },
            lo,
            hi,
            shape: Shape::Uniform,
        })
    }

    /// Normal(mu, sigma) truncated to `[lo, hi]`.
    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        if !(sigma.is_finite() && sigma > 0.0) || !mu.is_finite() {
            return Err(Error::domain(format!(
                "truncated normal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        let width = hi - lo;
        let mu_u = (mu - lo) / width;
        let sigma_u = sigma / width;
        let cdf_lo = std_normal_cdf(-mu_u / sigma_u);
        let mass = std_normal_cdf((1.0 - mu_u) / sigma_u) - cdf_lo;
        if !(mass > 0.0) {
            return Err(Error::domain(format!(
                "truncation window [{lo}, {hi}] carries no normal mass"
            )));
        }
        Ok(Self {
            spec: MarginalSpec::TruncatedNormal { mu, sigma, lo, hi },
            lo,
            hi,
            shape: Shape::TruncatedNormal {
                mu: mu_u,
                sigma: sigma_u,
                cdf_lo,
                mass,
            },
        })
    }

    /// Uniform on a random interval `[A, B]`, `A ~ U(lo_interval)`,
    /// `B ~ U(hi_interval)`, marginalized over the endpoints.
    ///
    /// The mixture density is tabulated on [`RANDOMIZED_SUPPORT_GRID`] nodes
    /// by tensor Gauss-Legendre quadrature over `(A, B)` and interpolated
    /// linearly. It vanishes at the two outer support endpoints.
    pub fn randomized_support_uniform(lo_interval: [f64; 2], hi_interval: [f64; 2]) -> Result<Self> {
        let [a0, a1] = lo_interval;
        let [b0, b1] = hi_interval;
        check_interval(a0, a1)?;
        check_interval(b0, b1)?;
        if a1 >= b0 {
            return Err(Error::domain(format!(
                "endpoint intervals [{a0}, {a1}] and [{b0}, {b1}] must not overlap"
            )));
        }
        let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
        let norm = (a1 - a0) * (b1 - b0);
        let width = b1 - a0;
        let n = RANDOMIZED_SUPPORT_GRID;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for k in 0..n {
            let x = k as f64 / (n - 1) as f64;
            let y = a0 + x * width;
            let a_hi = y.min(a1);
            let b_lo = y.max(b0);
            let density = if a_hi <= a0 || b_lo >= b1 {
                0.0
            } else {
                rule.integrate(a0, a_hi, |a| rule.integrate(b_lo, b1, |b| 1.0 / (b - a))) / norm
            };
            xs.push(x);
            ys.push(density * width);
        }
        let grid = PiecewiseLinear::new(xs, ys, true)?;
        Ok(Self {
            spec: MarginalSpec::RandomizedSupportUniform {
                lo_interval,
                hi_interval,
            },
            lo: a0,
            hi: b1,
            shape: Shape::Grid(grid),
        })
    }

    /// Piecewise-linear density through `(x, density)` pairs in physical
    /// coordinates, renormalized to unit mass.
    pub fn tabulated(x: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != density.len() {
            return Err(Error::domain(
                "tabulated density needs at least two points and matching column lengths",
            ));
        }
        if x.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("tabulated x values must be strictly increasing"));
        }
        if let Some(d) = density.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::domain(format!(
                "tabulated density values must be strictly positive, found {d}"
            )));
        }
        let lo = x[0];
        let hi = *x.last().unwrap();
        check_interval(lo, hi)?;
        let width = hi - lo;
        let xs = x.iter().map(|v| (v - lo) / width).collect();
        let ys = density.iter().map(|d| d * width).collect();
        let grid = PiecewiseLinear::new(xs, ys, false)?;
        Ok(Self {
            spec: MarginalSpec::Tabulated {
                file: None,
                x: Some(x),
                density: Some(density),
            },
            lo,
            hi,
            shape: Shape::Grid(grid),
        })
    }

    /// Reads a `x,density` CSV file.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "density" {
            return Err(Error::domain(format!(
                "{}: expected header `x,density`",
                path.display()
            )));
        }
        let mut xs = Vec::new();
        let mut ds = Vec::new();
        for record in reader.deserialize::<(f64, f64)>() {
            let (x, d) = record?;
            xs.push(x);
            ds.push(d);
        }
        let mut m = Self::tabulated(xs, ds)?;
        m.spec = MarginalSpec::Tabulated {
            file: Some(path.to_path_buf()),
            x: None,
            density: None,
        };
        Ok(m)
    }

    /// Builds a density from its config description; relative tabulated file
    /// paths are resolved against `base_dir`.
    pub fn from_spec(spec: &MarginalSpec, base_dir: &Path) -> Result<Self> {
        match spec {
            MarginalSpec::Uniform { lo, hi } => Self::uniform(*lo, *hi),
            MarginalSpec::TruncatedNormal { mu, sigma, lo, hi } => Self::truncated_normal(*mu, *sigma, *lo, *hi),
            MarginalSpec::RandomizedSupportUniform {
                lo_interval,
                hi_interval,
            } => Self::randomized_support_uniform(*lo_interval, *hi_interval),
            MarginalSpec::Tabulated { file, x, density } => match (file, x, density) {
                (Some(file), None, None) => Self::from_csv(&base_dir.join(file)),
                (None, Some(x), Some(d)) => Self::tabulated(x.clone(), d.clone()),
                _ => Err(Error::domain(
                    "tabulated marginal needs either `file` or both `x` and `density`",
                )),
            },
        }
    }

    pub fn spec(&self) -> &MarginalSpec {
        &self.spec
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn to_unit(&self, y: f64) -> f64 {
        (y - self.lo) / (self.hi - self.lo)
    }

    pub fn to_physical(&self, x: f64) -> f64 {
        self.lo + x * (self.hi - self.lo)
    }

    /// Density in unit coordinates (Jacobian included).
    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_unit(x, "x")?;
        Ok(self.pdf_unchecked(x))
    }

    pub(crate) fn pdf_unchecked(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Uniform => 1.0,
            Shape::TruncatedNormal { mu, sigma, mass, .. } => std_normal_pdf((x - mu) / sigma) / (sigma * mass),
            Shape::Grid(g) => g.value(x),
        }
    }

    /// Density in physical coordinates.
    pub fn pdf_physical(&self, y: f64) -> Result<f64> {
        Ok(self.pdf(self.to_unit(y))? / (self.hi - self.lo))
    }

    /// Cumulative distribution in unit coordinates; clamps outside `[0, 1]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match &self.shape {
            Shape::Uniform => x,
            Shape::TruncatedNormal {
                mu,
                sigma,
                cdf_lo,
                mass,
            } => ((std_normal_cdf((x - mu) / sigma) - cdf_lo) / mass).clamp(0.0, 1.0),
            Shape::Grid(g) => g.cdf(x),
        }
    }

    /// Inverse CDF in unit coordinates.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        check_unit(q, "q")?;
        Ok(self.quantile_unchecked(q))
    }

    fn quantile_unchecked(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        if let Shape::Uniform = self.shape {
            return q;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > QUANTILE_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Edges of `m` cells of equal nominal probability.
    pub fn quantile_partition(&self, m: usize) -> Result<AxisPartition> {
        if m < 2 {
            return Err(Error::domain(format!("quantile partition needs M >= 2, got {m}")));
        }
        let edges: Vec<f64> = (0..=m).map(|j| self.quantile_unchecked(j as f64 / m as f64)).collect();
        AxisPartition::new(edges)
    }

    /// A positive lower bound on the density over the cell `[a, b]`.
    ///
    /// Exact for the closed-form unimodal families (the minimum sits at an
    /// endpoint). Grid densities return the grid minimum times
    /// [`TABULATED_INFIMUM_FACTOR`]; this is zero on a cell touching a point
    /// where the density vanishes.
    pub fn cell_infimum(&self, a: f64, b: f64) -> f64 {
        match &self.shape {
            Shape::Uniform => 1.0,
            Shape::TruncatedNormal { .. } => self.pdf_unchecked(a).min(self.pdf_unchecked(b)),
            Shape::Grid(g) => g.min_on(a, b) * TABULATED_INFIMUM_FACTOR,
        }
    }

    /// The largest density value over the cell `[a, b]`.
    pub fn cell_supremum(&self, a: f64, b: f64) -> f64 {
        match &self.shape {
            Shape::Uniform => 1.0,
            Shape::TruncatedNormal { mu, .. } => {
                let peak = mu.clamp(a, b);
                self.pdf_unchecked(peak)
            }
            Shape::Grid(g) => g.max_on(a, b),
        }
    }

    /// `n` i.i.d. draws in unit coordinates by inverse-CDF sampling. Each
    /// sample consumes exactly one open-interval uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub(crate) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }
}

/// Continuous piecewise-linear density on `[0, 1]` with exact cumulative
/// integrals at the nodes.
#[derive(Debug, Clone)]
struct PiecewiseLinear {
    x: Vec<f64>,
    y: Vec<f64>,
    cum: Vec<f64>,
}

impl PiecewiseLinear {
    fn new(x: Vec<f64>, mut y: Vec<f64>, allow_zero: bool) -> Result<Self> {
        debug_assert!(x.len() == y.len() && x.len() >= 2);
        if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (!allow_zero && y.iter().any(|v| *v <= 0.0)) {
            return Err(Error::domain("grid density values must be finite and positive"));
        }
        let mut cum = Vec::with_capacity(x.len());
        cum.push(0.0);
        for k in 1..x.len() {
            let area = 0.5 * (y[k - 1] + y[k]) * (x[k] - x[k - 1]);
            cum.push(cum[k - 1] + area);
        }
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::domain("grid density has zero mass"));
        }
        y.iter_mut().for_each(|v| *v /= total);
        cum.iter_mut().for_each(|c| *c /= total);
        Ok(Self { x, y, cum })
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.x.partition_point(|&xk| xk <= t);
        k.clamp(1, self.x.len() - 1) - 1
    }

    fn value(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let w = (t - x0) / (x1 - x0);
        self.y[k] + w * (self.y[k + 1] - self.y[k])
    }

    fn cdf(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let d = t - self.x[k];
        (self.cum[k] + 0.5 * d * (self.y[k] + self.value(t))).clamp(0.0, 1.0)
    }

    fn nodes_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let start = self.x.partition_point(|&xk| xk <= a);
        let end = self.x.partition_point(|&xk| xk < b);
        self.y[start..end.max(start)].iter().copied()
    }

    fn min_on(&self, a: f64, b: f64) -> f64 {
        self.nodes_within(a, b).fold(self.value(a).min(self.value(b)), f64::min)
    }

    fn max_on(&self, a: f64, b: f64) -> f64 {
        self.nodes_within(a, b).fold(self.value(a).max(self.value(b)), f64::max)
    }
}

/// Cell edges `0 = e_0 < e_1 < ... < e_M = 1` of one coordinate. Cells are
/// half-open `[e_{j-1}, e_j)` except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPartition {
    edges: Vec<f64>,
}

impl AxisPartition {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::domain("a partition needs at least two cells"));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(Error::domain("partition edges must start at 0 and end at 1"));
        }
        if let Some(w) = edges.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::domain(format!(
                "partition edges must be strictly increasing, found {} followed by {}",
                w[0], w[1]
            )));
        }
        Ok(Self { edges })
    }

    /// `m` cells of equal width.
    pub fn equal_width(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::domain(format!("partition needs M >= 2, got {m}")));
        }
        Self::new((0..=m).map(|j| j as f64 / m as f64).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    pub fn width(&self, j: usize) -> f64 {
        self.edges[j + 1] - self.edges[j]
    }

    /// Index of the cell containing `x`.
    pub fn locate(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= x);
        k.clamp(1, self.len()) - 1
    }
}

/// Per-coordinate partitions of the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    axes: Vec<AxisPartition>,
}

impl Partition {
    pub fn new(axes: Vec<AxisPartition>) -> Self {
        Self { axes }
    }

    /// `m` equal-probability cells per coordinate.
    pub fn quantile(margins: &[MarginalDensity], m: usize) -> Result<Self> {
        Self::quantile_per_axis(margins, &vec![m; margins.len()])
    }

    pub fn quantile_per_axis(margins: &[MarginalDensity], m: &[usize]) -> Result<Self> {
        if m.len() != margins.len() {
            return Err(Error::domain("one cell count per coordinate is required"));
        }
        margins
            .iter()
            .zip(m)
            .enumerate()
            .map(|(i, (margin, &mi))| {
                margin.quantile_partition(mi).map_err(|e| Error::Marginal {
                    coordinate: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &AxisPartition {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[AxisPartition] {
        &self.axes
    }

    pub fn total_cells(&self) -> usize {
        self.axes.iter().map(AxisPartition::len).sum()
    }
}

/// Affine maps between each coordinate's physical support and `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeMap {
    ranges: Vec<(f64, f64)>,
}

impl UnitCubeMap {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        for &(lo, hi) in &ranges {
            check_interval(lo, hi)?;
        }
        Ok(Self { ranges })
    }

    pub fn from_margins(margins: &[MarginalDensity]) -> Self {
        Self {
            ranges: margins.iter().map(MarginalDensity::support).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn to_physical(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.ranges)
            .map(|(x, (lo, hi))| lo + x * (hi - lo))
            .collect()
    }

    pub fn to_unit(&self, physical: &[f64]) -> Vec<f64> {
        physical
            .iter()
            .zip(&self.ranges)
            .map(|(y, (lo, hi))| (y - lo) / (hi - lo))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    fn tn() -> MarginalDensity {
        MarginalDensity::truncated_normal(0.5, 0.2, 0.0, 1.0).unwrap()
    }

    #[test]
    fn uniform_pdf_is_one() {
        let m = MarginalDensity::uniform(0.0, 1.0).unwrap();
        assert_eq!(m.pdf(0.3).unwrap(), 1.0);
        let wide = MarginalDensity::uniform(-2.0, 6.0).unwrap();
        assert_eq!(wide.pdf(0.7).unwrap(), 1.0);
        assert_relative_eq!(wide.pdf_physical(1.0).unwrap(), 0.125);
    }

    #[test]
    fn pdf_rejects_points_outside_unit_interval() {
        let m = tn();
        assert!(matches!(m.pdf(-0.01), Err(Error::Domain(_))));
        assert!(matches!(m.pdf(1.5), Err(Error::Domain(_))));
        assert!(matches!(m.quantile(1.01), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_normal_peak_matches_quadrature_normalization() {
        // Oracle: normalizing constant from Simpson quadrature of the raw
        // Gaussian bump.
        let raw = |x: f64| (-0.5 * ((x - 0.5) / 0.2f64).powi(2)).exp();
        let z = simpson(raw, 0.0, 1.0, 20_000);
        let expected = 1.0 / z;
        assert_relative_eq!(tn().pdf(0.5).unwrap(), expected, max_relative = 1e-10);
        // frozen value of the same oracle
        assert_relative_eq!(tn().pdf(0.5).unwrap(), 2.019_795_915_328_28, max_relative = 1e-10);
    }

    #[test]
    fn randomized_support_density_matches_2d_quadrature() {
        // Oracle: midpoint rule on a 2000 x 2000 (A, B) grid.
        let m = MarginalDensity::randomized_support_uniform([0.0, 0.1], [0.9, 1.0]).unwrap();
        let n = 2000;
        let mut acc = 0.0;
        for ia in 0..n {
            let a = 0.1 * (ia as f64 + 0.5) / n as f64;
            for ib in 0..n {
                let b = 0.9 + 0.1 * (ib as f64 + 0.5) / n as f64;
                acc += 1.0 / (b - a);
            }
        }
        let expected = acc / (n * n) as f64;
        assert_relative_eq!(m.pdf(0.5).unwrap(), expected, max_relative = 1e-6);
        assert_relative_eq!(m.pdf(0.5).unwrap(), 1.113_408_713_271_95, max_relative = 1e-6);
        assert_eq!(m.pdf(0.0).unwrap(), 0.0);
    }

    #[test]
    fn quantiles() {
        let u = MarginalDensity::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.quantile(0.25).unwrap(), 0.25);
        let t = tn();
        assert!((t.quantile(0.5).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(t.quantile(0.0).unwrap(), 0.0);
        assert_eq!(t.quantile(1.0).unwrap(), 1.0);

        // Oracle: bisection against a Simpson-quadrature CDF.
        let density = |x: f64| t.pdf_unchecked(x);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if simpson(density, 0.0, mid, 2000) < 0.25 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((t.quantile(0.25).unwrap() - lo).abs() < 1e-9);
        assert!((lo - 0.367_049_767_898_305).abs() < 1e-8);
    }

    #[test]
    fn quantile_partitions() {
        let u = MarginalDensity::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.quantile_partition(4).unwrap().edges(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(matches!(u.quantile_partition(1), Err(Error::Domain(_))));
        let edges = tn().quantile_partition(2).unwrap();
        assert_eq!(edges.len(), 2);
        assert!((edges.edges()[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_quantile_partition_names_coordinate() {
        // Nearly all the mass sits in a spike, so fine quantile edges collide
        // below the bisection tolerance.
        let spike = MarginalDensity::truncated_normal(0.5, 1e-13, 0.0, 1.0).unwrap();
        let margins = vec![MarginalDensity::uniform(0.0, 1.0).unwrap(), spike];
        match Partition::quantile(&margins, 8) {
            Err(Error::Marginal { coordinate, .. }) => assert_eq!(coordinate, 2),
            other => panic!("expected a marginal error, got {other:?}"),
        }
    }

    #[test]
    fn cell_infima() {
        let u = MarginalDensity::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.cell_infimum(0.25, 0.5), 1.0);
        let t = tn();
        // Oracle: dense grid minimization.
        let grid_min = (0..=10_000)
            .map(|k| t.pdf_unchecked(0.25 * k as f64 / 10_000.0))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(t.cell_infimum(0.0, 0.25), grid_min, max_relative = 1e-12);
        assert_eq!(t.cell_infimum(0.0, 0.25), t.pdf(0.0).unwrap());
        assert_relative_eq!(t.cell_infimum(0.4, 0.6), t.pdf(0.4).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(t.pdf(0.4).unwrap(), t.pdf(0.6).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn tabulated_infimum_is_scaled_grid_minimum() {
        let m = MarginalDensity::tabulated(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 1.0]).unwrap();
        // mass 1.5 -> renormalized values 2/3, 4/3, 2/3
        assert_relative_eq!(m.pdf(0.0).unwrap(), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(
            m.cell_infimum(0.25, 0.75),
            0.999 * m.pdf(0.25).unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(m.cell_supremum(0.25, 0.75), 4.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn tabulated_rejects_bad_input() {
        assert!(MarginalDensity::tabulated(vec![0.0, 1.0, 0.5], vec![1.0; 3]).is_err());
        assert!(MarginalDensity::tabulated(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(MarginalDensity::tabulated(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn tabulated_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x,density\n2.0,1.0\n3.0,3.0\n4.0,1.0\n").unwrap();
        let m = MarginalDensity::from_csv(&path).unwrap();
        assert_eq!(m.support(), (2.0, 4.0));
        assert_relative_eq!(m.cdf(0.5), 0.5, max_relative = 1e-14);
        std::fs::write(&path, "a,b\n0,1\n1,1\n").unwrap();
        assert!(MarginalDensity::from_csv(&path).is_err());
    }

    #[test]
    fn uniform_sampling_returns_the_stream() {
        let m = MarginalDensity::uniform(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let got = m.sample(3, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let expected: Vec<f64> = (0..3).map(|_| rng.sample(Open01)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn truncated_normal_sample_mean() {
        let t = tn();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs = t.sample(n, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let q_mean = simpson(|x| x * t.pdf_unchecked(x), 0.0, 1.0, 2000);
        assert!((mean - q_mean).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn randomized_support_sample_ks_distance() {
        let m = MarginalDensity::randomized_support_uniform([0.0, 0.1], [0.9, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut xs = m.sample(n, &mut rng);
        xs.sort_by(f64::total_cmp);
        // Oracle CDF: Simpson quadrature of the density.
        let mut ks: f64 = 0.0;
        for (k, x) in xs.iter().enumerate().step_by(500) {
            let cdf = simpson(|t| m.pdf_unchecked(t), 0.0, *x, 4000);
            ks = ks.max((cdf - k as f64 / n as f64).abs());
            ks = ks.max((cdf - (k + 1) as f64 / n as f64).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn partition_locate_uses_half_open_cells() {
        let p = AxisPartition::equal_width(4).unwrap();
        assert_eq!(p.locate(0.0), 0);
        assert_eq!(p.locate(0.25), 1);
        assert_eq!(p.locate(0.2499), 0);
        assert_eq!(p.locate(1.0), 3);
        assert!(AxisPartition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(AxisPartition::new(vec![0.0, 0.5, 0.9]).is_err());
    }

    #[test]
    fn unit_cube_map_round_trip() {
        let map = UnitCubeMap::new(vec![(-1.0, 3.0), (7.0, 91.0)]).unwrap();
        let y = [0.3, 55.5];
        let back = map.to_physical(&map.to_unit(&y));
        assert!((back[0] - y[0]).abs() < 1e-12 && (back[1] - y[1]).abs() < 1e-12);
        assert!(UnitCubeMap::new(vec![(1.0, 1.0)]).is_err());
    }
}
