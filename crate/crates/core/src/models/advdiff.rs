//! Steady advection-diffusion on the unit square,
//! `-eps lap(u) + v . grad(u) = s`, solved by finite differences.
//!
//! Grid nodes are `(i h, j h)` for `i, j = 0..n_grid`, `h = 1 / (n_grid - 1)`.
//! Dirichlet `u = 0` holds on the left and bottom edges. On the right and top
//! edges the Robin condition `du/dn = nu u` is imposed through a ghost node,
//! e.g. `u[n, j] = u[n - 2, j] + 2 h nu1 u[n - 1, j]`. Advection is centred,
//! switching to first-order upwinding per direction where the cell Peclet
//! number `|v| h / eps` exceeds 2.

use std::f64::consts::PI;

use super::banded::BandMatrix;
use crate::error::{Error, Result};

pub const PARAMETER_NAMES: [&str; 9] = ["eps", "alpha1", "alpha2", "xi1", "xi2", "gamma", "beta", "nu1", "nu2"];

/// Nominal physical parameters, in the order of [`PARAMETER_NAMES`].
pub const NOMINAL: [f64; 9] = [10.0, 210.0, 70.0, 0.5, 0.5, 50.0, 100.0, 0.1, 0.2];

pub const DEFAULT_GRID: usize = 65;
pub const DEFAULT_QOI_BOX: [f64; 4] = [0.5, 0.7, 0.5, 0.7];
const QOI_POINTS: usize = 64;
const UPWIND_PECLET: f64 = 2.0;

/// Physical range of each parameter: nominal value plus or minus 30%.
pub fn physical_ranges() -> Vec<(f64, f64)> {
    NOMINAL.iter().map(|&v| (0.7 * v, 1.3 * v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvDiffParams {
    pub eps: f64,
    pub alpha: [f64; 2],
    pub xi: [f64; 2],
    pub gamma: f64,
    pub beta: f64,
    pub nu: [f64; 2],
}

impl AdvDiffParams {
    pub fn from_slice(y: &[f64]) -> Result<Self> {
        if y.len() != 9 {
            return Err(Error::domain(format!(
                "advection-diffusion takes 9 parameters, got {}",
                y.len()
            )));
        }
        Ok(Self {
            eps: y[0],
            alpha: [y[1], y[2]],
            xi: [y[3], y[4]],
            gamma: y[5],
            beta: y[6],
            nu: [y[7], y[8]],
        })
    }

    pub fn nominal() -> Self {
        Self::from_slice(&NOMINAL).unwrap()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.eps,
            self.alpha[0],
            self.alpha[1],
            self.xi[0],
            self.xi[1],
            self.gamma,
            self.beta,
            self.nu[0],
            self.nu[1],
        ]
    }

    pub fn velocity(&self, y1: f64, y2: f64) -> [f64; 2] {
        [self.alpha[0] * (y1 + 0.5), self.alpha[1] * (y2 + 0.5)]
    }

    pub fn source(&self, y1: f64, y2: f64) -> f64 {
        let r2 = (y1 - self.xi[0]).powi(2) + (y2 - self.xi[1]).powi(2);
        self.beta * (-self.gamma * r2).exp()
    }
}

/// Nodal solution values on the full `n_grid x n_grid` grid, indexed
/// `u[j * n_grid + i]` with `i` along `y1`.
#[derive(Debug, Clone)]
pub struct AdvDiffField {
    n_grid: usize,
    u: Vec<f64>,
}

impl AdvDiffField {
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[j * self.n_grid + i]
    }

    pub fn from_fn(n_grid: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = 1.0 / (n_grid - 1) as f64;
        let mut u = Vec::with_capacity(n_grid * n_grid);
        for j in 0..n_grid {
            for i in 0..n_grid {
                u.push(f(i as f64 * h, j as f64 * h));
            }
        }
        Self { n_grid, u }
    }

    /// Bilinear interpolation at `(y1, y2)` in the unit square.
    pub fn interpolate(&self, y1: f64, y2: f64) -> f64 {
        let m = (self.n_grid - 1) as f64;
        let (s, t) = (y1.clamp(0.0, 1.0) * m, y2.clamp(0.0, 1.0) * m);
        let i = (s.floor() as usize).min(self.n_grid - 2);
        let j = (t.floor() as usize).min(self.n_grid - 2);
        let (fs, ft) = (s - i as f64, t - j as f64);
        (1.0 - fs) * (1.0 - ft) * self.at(i, j)
            + fs * (1.0 - ft) * self.at(i + 1, j)
            + (1.0 - fs) * ft * self.at(i, j + 1)
            + fs * ft * self.at(i + 1, j + 1)
    }
}

/// Boundary treatment of the right and top edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterBoundary {
    Robin([f64; 2]),
    /// Homogeneous Dirichlet on all four edges.
    Dirichlet,
}

/// Solves the problem for physical parameters `params`.
pub fn adv_diff_solve(params: &AdvDiffParams, n_grid: usize) -> Result<AdvDiffField> {
    let p = *params;
    solve_with(
        p.eps,
        |y1, y2| p.velocity(y1, y2),
        |y1, y2| p.source(y1, y2),
        OuterBoundary::Robin(p.nu),
        n_grid,
    )
    .map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!("{msg} at parameters {:?}", p.to_vec())),
        other => other,
    })
}

/// General driver used by [`adv_diff_solve`] and the manufactured-solution
/// check.
pub fn solve_with(
    eps: f64,
    velocity: impl Fn(f64, f64) -> [f64; 2],
    source: impl Fn(f64, f64) -> f64,
    boundary: OuterBoundary,
    n_grid: usize,
) -> Result<AdvDiffField> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("diffusivity must be positive, got {eps}")));
    }
    if n_grid < 5 {
        return Err(Error::domain(format!("grid too coarse: {n_grid}")));
    }
    let n = n_grid;
    let h = 1.0 / (n - 1) as f64;
    // unknown nodes run over i, j in 1..=last
    let last = match boundary {
        OuterBoundary::Robin(_) => n - 1,
        OuterBoundary::Dirichlet => n - 2,
    };
    let m = last;
    let idx = |i: usize, j: usize| (j - 1) * m + (i - 1);
    let mut a = BandMatrix::zeros(m * m, m);
    let mut rhs = vec![0.0; m * m];
    let diff = eps / (h * h);

    for j in 1..=last {
        for i in 1..=last {
            let (y1, y2) = (i as f64 * h, j as f64 * h);
            let row = idx(i, j);
            rhs[row] = source(y1, y2);
            let v = velocity(y1, y2);
            // coefficients on (W, E) and (S, N) neighbours plus the centre
            let mut centre = 4.0 * diff;
            let mut nb = [[-diff, -diff], [-diff, -diff]];
            for d in 0..2 {
                if v[d].abs() * h / eps > UPWIND_PECLET {
                    if v[d] > 0.0 {
                        centre += v[d] / h;
                        nb[d][0] -= v[d] / h;
                    } else {
                        centre -= v[d] / h;
                        nb[d][1] += v[d] / h;
                    }
                } else {
                    nb[d][0] -= v[d] / (2.0 * h);
                    nb[d][1] += v[d] / (2.0 * h);
                }
            }
            let pos = [i, j];
            for d in 0..2 {
                let at = |k: usize| if d == 0 { (k, j) } else { (i, k) };
                // low side: Dirichlet zero at index 0
                if pos[d] > 1 {
                    let (ci, cj) = at(pos[d] - 1);
                    a.add(row, idx(ci, cj), nb[d][0]);
                }
                if pos[d] < last {
                    let (ci, cj) = at(pos[d] + 1);
                    a.add(row, idx(ci, cj), nb[d][1]);
                } else if let OuterBoundary::Robin(nu) = boundary {
                    // ghost: u_out = u_in + 2 h nu u_P
                    let (ci, cj) = at(pos[d] - 1);
                    a.add(row, idx(ci, cj), nb[d][1]);
                    centre += nb[d][1] * 2.0 * h * nu[d];
                }
            }
            a.add(row, row, centre);
        }
    }
    a.solve_in_place(&mut rhs)?;

    let mut u = vec![0.0; n * n];
    for j in 1..=last {
        for i in 1..=last {
            u[j * n + i] = rhs[idx(i, j)];
        }
    }
    Ok(AdvDiffField { n_grid: n, u })
}

/// Area average of the field over `[x0, x1] x [y0, y1]` (box given as
/// `[x0, x1, y0, y1]`), by the midpoint rule on a 64 x 64 grid of bilinear
/// interpolants.
pub fn qoi_integrate(field: &AdvDiffField, qoi_box: [f64; 4]) -> f64 {
    let [x0, x1, y0, y1] = qoi_box;
    let (dx, dy) = ((x1 - x0) / QOI_POINTS as f64, (y1 - y0) / QOI_POINTS as f64);
    let mut total = 0.0;
    for b in 0..QOI_POINTS {
        let y = y0 + (b as f64 + 0.5) * dy;
        for a in 0..QOI_POINTS {
            total += field.interpolate(x0 + (a as f64 + 0.5) * dx, y);
        }
    }
    total / (QOI_POINTS * QOI_POINTS) as f64
}

/// Manufactured solution `sin(pi y1) sin(pi y2)` and the matching forcing
/// for the nominal diffusivity and velocity.
pub fn manufactured_error(n_grid: usize) -> Result<f64> {
    let p = AdvDiffParams::nominal();
    let exact = |y1: f64, y2: f64| (PI * y1).sin() * (PI * y2).sin();
    let forcing = |y1: f64, y2: f64| {
        let v = p.velocity(y1, y2);
        let (s1, c1, s2, c2) = ((PI * y1).sin(), (PI * y1).cos(), (PI * y2).sin(), (PI * y2).cos());
        2.0 * p.eps * PI * PI * s1 * s2 + v[0] * PI * c1 * s2 + v[1] * PI * s1 * c2
    };
    let field = solve_with(
        p.eps,
        |a, b| p.velocity(a, b),
        forcing,
        OuterBoundary::Dirichlet,
        n_grid,
    )?;
    let reference = AdvDiffField::from_fn(n_grid, exact);
    Ok(field
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
