//! Derivatives of every index along indicator perturbations of each marginal,
//! estimated from the stored evaluations.
//!
//! All terms use the centred outputs of [`CenteredOutputs`]. For the basis
//! function `psi_i^j` (indicator of cell `R_i^j` on coordinate
//! `i`), with `wA = chi(A_i in R) / phi_i(A_i)`, `wB` likewise and
//! `D_k = (fA - fC_k)^2 / 2`:
//!
//! ```text
//! dF_k = mean(X_k (wA + wB)) - |R| F_k
//! dG_k = mean(D_k (wA + [i = k] wB)) - [i = k] |R| G_k
//! dH   = mean(fA^2 wA) + |R| m^2 - 2 m mean(fA wA)
//! dS_k = (dF_k - S_k dH) / H        dT_k = (dG_k - T_k dH) / H
//! ```
//!
//! Sums run over rows in index order. Entries are reported 1-based in
//! `derivatives.csv`.

use std::path::Path;

use crate::design::EvalBundle;
use crate::error::{Error, Result};
use crate::estimators::{CenteredOutputs, NominalIndices};
use crate::margins::{MarginalDensity, Partition};
use crate::perturb::IndexKind;

/// One basis perturbation: the indicator of cell `j` on coordinate `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisFunction {
    pub i: usize,
    pub j: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BasisFunction {
    pub fn new(partition: &Partition, i: usize, j: usize) -> Self {
        let (lo, hi) = partition.axis(i).cell(j);
        Self { i, j, lo, hi }
    }

    /// Exact cell width.
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Cell index and `1 / phi_i` per coordinate and row.
type SideWeights = (Vec<Vec<usize>>, Vec<Vec<f64>>);

/// Sparse indicator weights: for each coordinate `i` and row `n`, the cell
/// holding the sample and `1 / phi_i` at the sample, for `A` and `B`.
#[derive(Debug, Clone)]
pub struct IndicatorWeights {
    n: usize,
    cell_a: Vec<Vec<usize>>,
    inv_a: Vec<Vec<f64>>,
    cell_b: Vec<Vec<usize>>,
    inv_b: Vec<Vec<f64>>,
}

impl IndicatorWeights {
    pub fn new(bundle: &EvalBundle, margins: &[MarginalDensity], partition: &Partition) -> Result<Self> {
        let (n, p) = (bundle.n(), bundle.p());
        if margins.len() != p || partition.dim() != p {
            return Err(Error::domain("margins and partition must match the bundle dimension"));
        }
        let d = bundle.design();
        let side = |get: &dyn Fn(usize, usize) -> f64| -> Result<SideWeights> {
            let mut cells = Vec::with_capacity(p);
            let mut invs = Vec::with_capacity(p);
            for (i, margin) in margins.iter().enumerate() {
                let axis = partition.axis(i);
                let mut c = Vec::with_capacity(n);
                let mut w = Vec::with_capacity(n);
                for row in 0..n {
                    let x = get(row, i);
                    let phi = margin.pdf(x)?;
                    if !(phi > 0.0) {
                        return Err(Error::Marginal {
                            coordinate: i + 1,
                            reason: format!("density vanishes at sample {x}"),
                        });
                    }
                    c.push(axis.locate(x));
                    w.push(1.0 / phi);
                }
                cells.push(c);
                invs.push(w);
            }
            Ok((cells, invs))
        };
        let (cell_a, inv_a) = side(&|r, i| d.a(r, i))?;
        let (cell_b, inv_b) = side(&|r, i| d.b(r, i))?;
        Ok(Self {
            n,
            cell_a,
            inv_a,
            cell_b,
            inv_b,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell index and `1 / phi_i` for coordinate `i` of row `n` of `A`.
    pub fn a(&self, i: usize, n: usize) -> (usize, f64) {
        (self.cell_a[i][n], self.inv_a[i][n])
    }

    pub fn b(&self, i: usize, n: usize) -> (usize, f64) {
        (self.cell_b[i][n], self.inv_b[i][n])
    }

    /// Dense `wA[i][j][n]`.
    pub fn w_a(&self, i: usize, j: usize, n: usize) -> f64 {
        let (c, w) = self.a(i, n);
        if c == j {
            w
        } else {
            0.0
        }
    }

    pub fn w_b(&self, i: usize, j: usize, n: usize) -> f64 {
        let (c, w) = self.b(i, n);
        if c == j {
            w
        } else {
            0.0
        }
    }
}

fn x_term(out: &CenteredOutputs, k: usize, n: usize) -> f64 {
    out.b[n] * (out.c[k][n] - out.a[n])
}

fn d_term(out: &CenteredOutputs, k: usize, n: usize) -> f64 {
    let d = out.a[n] - out.c[k][n];
    0.5 * (d * d)
}

fn mean(bundle: &EvalBundle, f: impl Fn(usize) -> f64) -> f64 {
    (0..bundle.n()).map(f).sum::<f64>() / bundle.n() as f64
}

/// Derivative of the first-order numerator along one basis function.
pub fn derivative_f(bundle: &EvalBundle, w: &IndicatorWeights, basis: &BasisFunction, k: usize) -> f64 {
    let out = CenteredOutputs::new(bundle);
    let f_k = mean(bundle, |n| x_term(&out, k, n));
    let term1 = mean(bundle, |n| {
        x_term(&out, k, n) * (w.w_a(basis.i, basis.j, n) + w.w_b(basis.i, basis.j, n))
    });
    term1 - basis.width() * f_k
}

/// Derivative of the total-effect numerator along one basis function.
pub fn derivative_g(bundle: &EvalBundle, w: &IndicatorWeights, basis: &BasisFunction, k: usize) -> f64 {
    let out = CenteredOutputs::new(bundle);
    let same = basis.i == k;
    let term1 = mean(bundle, |n| {
        let wb = if same { w.w_b(k, basis.j, n) } else { 0.0 };
        d_term(&out, k, n) * (w.w_a(basis.i, basis.j, n) + wb)
    });
    if same {
        term1 - basis.width() * mean(bundle, |n| d_term(&out, k, n))
    } else {
        term1
    }
}

/// Derivative of the variance along one basis function.
pub fn derivative_h(bundle: &EvalBundle, w: &IndicatorWeights, basis: &BasisFunction) -> f64 {
    let out = CenteredOutputs::new(bundle);
    let fa = &out.a;
    let m = mean(bundle, |n| fa[n]);
    let second = mean(bundle, |n| fa[n] * fa[n] * w.w_a(basis.i, basis.j, n));
    let first = mean(bundle, |n| fa[n] * w.w_a(basis.i, basis.j, n));
    second + basis.width() * m * m - 2.0 * m * first
}

/// `dS[k][i][j]` and `dT[k][i][j]` for every index and basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable {
    ds: Vec<Vec<Vec<f64>>>,
    dt: Vec<Vec<Vec<f64>>>,
    cells: Vec<Vec<(f64, f64)>>,
}

impl DerivativeTable {
    pub fn p(&self) -> usize {
        self.ds.len()
    }

    pub fn ds(&self, k: usize, i: usize, j: usize) -> f64 {
        self.ds[k][i][j]
    }

    pub fn dt(&self, k: usize, i: usize, j: usize) -> f64 {
        self.dt[k][i][j]
    }

    pub fn entry(&self, kind: IndexKind, k: usize, i: usize, j: usize) -> f64 {
        match kind {
            IndexKind::First => self.ds[k][i][j],
            IndexKind::Total => self.dt[k][i][j],
        }
    }

    /// All entries for one index, indexed `[i][j]`.
    pub fn rows(&self, kind: IndexKind, k: usize) -> &[Vec<f64>] {
        match kind {
            IndexKind::First => &self.ds[k],
            IndexKind::Total => &self.dt[k],
        }
    }

    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        self.cells[i][j]
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index_type", "k", "i", "j", "cell_lo", "cell_hi", "value"])?;
        for kind in [IndexKind::First, IndexKind::Total] {
            for k in 0..self.p() {
                for (i, row) in self.rows(kind, k).iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        let (lo, hi) = self.cells[i][j];
                        w.write_record([
                            kind.label().to_string(),
                            (k + 1).to_string(),
                            (i + 1).to_string(),
                            (j + 1).to_string(),
                            lo.to_string(),
                            hi.to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::study::write_atomic(path, &self.to_csv()?)
    }
}

/// Builds the full table in one pass over the rows per coordinate.
pub fn build_table(
    bundle: &EvalBundle,
    weights: &IndicatorWeights,
    partition: &Partition,
    nominal: &NominalIndices,
) -> DerivativeTable {
    let (n, p) = (bundle.n(), bundle.p());
    let nf = n as f64;
    let out = CenteredOutputs::new(bundle);
    let (fa, fb) = (&out.a, &out.b);
    let m = fa.iter().sum::<f64>() / nf;
    let h = nominal.var_f;
    let f_hat: Vec<f64> = (0..p)
        .map(|k| (0..n).map(|r| x_term(&out, k, r)).sum::<f64>() / nf)
        .collect();
    let g_hat: Vec<f64> = (0..p)
        .map(|k| (0..n).map(|r| d_term(&out, k, r)).sum::<f64>() / nf)
        .collect();

    let mut ds = vec![Vec::with_capacity(p); p];
    let mut dt = vec![Vec::with_capacity(p); p];
    let mut cells = Vec::with_capacity(p);
    for i in 0..p {
        let axis = partition.axis(i);
        let mi = axis.len();
        let mut sx = vec![vec![0.0; mi]; p];
        let mut sd = vec![vec![0.0; mi]; p];
        let mut s2 = vec![0.0; mi];
        let mut s1 = vec![0.0; mi];
        for r in 0..n {
            let (ja, wa) = weights.a(i, r);
            let (jb, wb) = weights.b(i, r);
            s2[ja] += fa[r] * fa[r] * wa;
            s1[ja] += fa[r] * wa;
            for k in 0..p {
                let fc = out.c[k][r];
                let x = fb[r] * (fc - fa[r]);
                sx[k][ja] += x * wa;
                sx[k][jb] += x * wb;
                let d = fa[r] - fc;
                let d = 0.5 * (d * d);
                sd[k][ja] += d * wa;
                if k == i {
                    sd[k][jb] += d * wb;
                }
            }
        }
        let widths: Vec<f64> = (0..mi).map(|j| axis.width(j)).collect();
        let dh: Vec<f64> = (0..mi)
            .map(|j| s2[j] / nf + widths[j] * m * m - 2.0 * m * (s1[j] / nf))
            .collect();
        for k in 0..p {
            let s_row = (0..mi)
                .map(|j| {
                    let df = sx[k][j] / nf - widths[j] * f_hat[k];
                    (df - nominal.s[k] * dh[j]) / h
                })
                .collect();
            let t_row = (0..mi)
                .map(|j| {
                    let mut dg = sd[k][j] / nf;
                    if k == i {
                        dg -= widths[j] * g_hat[k];
                    }
                    (dg - nominal.t[k] * dh[j]) / h
                })
                .collect();
            ds[k].push(s_row);
            dt[k].push(t_row);
        }
        cells.push((0..mi).map(|j| axis.cell(j)).collect());
    }
    DerivativeTable { ds, dt, cells }
}
