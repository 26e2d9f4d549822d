//! Discrete nonlocal diffusion 𝓛, upwind drift, the nonlocal interaction
//! operator 𝓝 and the nonlocal Green identity.
//!
//! The kernel is γ(z) = Σ c_i |z|^{-(d+2s_i)}. Grid nodes are cell centres; the
//! weight between x and y is the integral of γ over the cell of y, so
//!
//! ```text
//! (𝓛u)(x) = 2 Σ_y W(x,y) (u(y) - u(x)) - τ(x) u(x)
//! ```
//!
//! where the sum runs over grid nodes within the truncation radius and τ
//! carries everything beyond the coupled cells, where u is zero. The cell
//! around x itself is folded into its nearest neighbours through a second
//! difference.

use crate::domain::{DomainLayout, NodeClass};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub s: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub terms: Vec<KernelTerm>,
    /// Truncation radius R. `None` couples every grid node.
    pub radius: Option<f64>,
    /// Declared bounds γ_* ≤ c_i ≤ γ*.
    pub lower: f64,
    pub upper: f64,
}

impl KernelSpec {
    /// Kernel with the tightest bounds on the given (s, c) terms.
    pub fn new(terms: &[(f64, f64)]) -> Result<Self> {
        let terms: Vec<KernelTerm> = terms.iter().map(|&(s, c)| KernelTerm { s, c }).collect();
        let lower = terms.iter().map(|t| t.c).fold(f64::INFINITY, f64::min);
        let upper = terms.iter().map(|t| t.c).fold(0.0, f64::max);
        let k = KernelSpec { terms, radius: None, lower, upper };
        k.validate()?;
        Ok(k)
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Kernel("kernel needs at least one term".into()));
        }
        for t in &self.terms {
            if !(t.s > 0.0 && t.s < 1.0) {
                return Err(Error::Kernel(format!("order s = {} outside (0,1)", t.s)));
            }
            if !(t.c > 0.0 && t.c.is_finite()) {
                return Err(Error::Kernel(format!("magnitude c = {} must be positive", t.c)));
            }
        }
        for w in self.terms.windows(2) {
            if w[0].s >= w[1].s {
                return Err(Error::Kernel("orders must be strictly increasing".into()));
            }
        }
        if !(self.lower > 0.0) || self.lower > self.upper {
            return Err(Error::Kernel("bounds need 0 < lower <= upper".into()));
        }
        for t in &self.terms {
            if t.c < self.lower || t.c > self.upper {
                return Err(Error::Kernel(format!("magnitude {} outside declared bounds", t.c)));
            }
        }
        Ok(())
    }

    /// γ at distance r in dimension `dim`.
    pub fn profile(&self, r: f64, dim: usize) -> f64 {
        self.terms.iter().map(|t| t.c * r.powf(-(dim as f64 + 2.0 * t.s))).sum()
    }

    /// 2∫_{|z|>R} γ(z) dz.
    pub fn tail_beyond(&self, radius: f64, dim: usize) -> f64 {
        let sigma = if dim == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
        self.terms
            .iter()
            .map(|t| 2.0 * t.c * sigma * radius.powf(-2.0 * t.s) / (2.0 * t.s))
            .sum()
    }

    fn effective_radius(&self, layout: &DomainLayout) -> Result<f64> {
        let span = (layout.n_axis as f64) * layout.h * (layout.dim as f64).sqrt();
        match self.radius {
            None => Ok(span),
            Some(r) if r < layout.h => {
                Err(Error::Kernel(format!("radius {r} is smaller than one cell ({})", layout.h)))
            }
            Some(r) if r < layout.collar_width => Err(Error::Kernel(format!(
                "radius {r} is smaller than the collar width {}",
                layout.collar_width
            ))),
            Some(r) => Ok(r),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    NegNonlocal,
    Drift,
    Combined,
}

/// Dense table over interior nodes, plus the tail entries already folded into
/// its diagonal.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    /// Interior node ids, in table order.
    pub nodes: Vec<usize>,
    pub table: DMatrix<f64>,
    pub tail: Vec<f64>,
}

impl DiscreteOperator {
    pub fn combined(&self, other: &DiscreteOperator) -> DiscreteOperator {
        assert_eq!(self.nodes, other.nodes);
        let tail = self.tail.iter().zip(&other.tail).map(|(a, b)| a + b).collect();
        DiscreteOperator {
            kind: OperatorKind::Combined,
            nodes: self.nodes.clone(),
            table: &self.table + &other.table,
            tail,
        }
    }

    /// (row, col, value) triplets of the nonzero entries.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.table.nrows() {
            for j in 0..self.table.ncols() {
                let v = self.table[(i, j)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

/// Assembled nonlocal operator on every grid node.
#[derive(Clone, Debug)]
pub struct NonlocalOperator {
    pub kernel: KernelSpec,
    /// Symmetric pair weights W(x,y), zero diagonal.
    pub weights: DMatrix<f64>,
    /// Tail τ(x) for every node.
    pub tail: Vec<f64>,
    pub radius: f64,
    cell_volume: f64,
    interior: Vec<usize>,
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn integrate(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(n);
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(&w).map(|(xi, wi)| wi * f(m + r * xi)).sum::<f64>() * r
}

/// ∫ of c|z|^{-(2+2s)} over the square cell centred at (k1 h, k2 h).
fn cell_integral_2d(kernel: &KernelSpec, k1: i64, k2: i64, h: f64) -> f64 {
    let near = k1.abs().max(k2.abs()) <= 3;
    let (sub, order) = if near { (4, 8) } else { (1, 6) };
    let (gx, gw) = gauss_legendre(order);
    let sh = h / sub as f64;
    let mut total = 0.0;
    for a in 0..sub {
        for b in 0..sub {
            let cx = (k1 as f64 - 0.5) * h + (a as f64 + 0.5) * sh;
            let cy = (k2 as f64 - 0.5) * h + (b as f64 + 0.5) * sh;
            for (xi, wi) in gx.iter().zip(&gw) {
                for (yj, wj) in gx.iter().zip(&gw) {
                    let r = ((cx + 0.5 * sh * xi).powi(2) + (cy + 0.5 * sh * yj).powi(2)).sqrt();
                    total += wi * wj * kernel.profile(r, 2);
                }
            }
        }
    }
    total * 0.25 * sh * sh
}

/// ∫ of c|z|^{-(1+2s)} over [(k-½)h, (k+½)h], k ≥ 1.
fn cell_integral_1d(kernel: &KernelSpec, k: i64, h: f64) -> f64 {
    let k = k.abs() as f64;
    kernel
        .terms
        .iter()
        .map(|t| {
            t.c / (2.0 * t.s) * (((k - 0.5) * h).powf(-2.0 * t.s) - ((k + 0.5) * h).powf(-2.0 * t.s))
        })
        .sum()
}

/// Weight added to each nearest neighbour by the symmetric pairing on the
/// singular cell.
fn near_cell_weight(kernel: &KernelSpec, dim: usize, h: f64) -> f64 {
    kernel
        .terms
        .iter()
        .map(|t| {
            let q = 2.0 - 2.0 * t.s;
            let base = t.c * (0.5 * h).powf(q) / q;
            if dim == 1 {
                base / (h * h)
            } else {
                let j = integrate(0.0, std::f64::consts::FRAC_PI_4, 24, |th| th.cos().powf(-q));
                4.0 * base * j / (2.0 * h * h)
            }
        })
        .sum()
}

/// ∫ of γ over the plane minus the singular cell (2D).
fn outside_cell_2d(kernel: &KernelSpec, h: f64) -> f64 {
    kernel
        .terms
        .iter()
        .map(|t| {
            let j = integrate(0.0, std::f64::consts::FRAC_PI_4, 24, |th| th.cos().powf(2.0 * t.s));
            8.0 * t.c / (2.0 * t.s) * (0.5 * h).powf(-2.0 * t.s) * j
        })
        .sum()
}

/// Assembles 𝓛 on every node of the grid.
pub fn assemble_nonlocal(layout: &DomainLayout, kernel: &KernelSpec) -> Result<NonlocalOperator> {
    kernel.validate()?;
    let radius = kernel.effective_radius(layout)?;
    let n = layout.n_nodes();
    let h = layout.h;
    let dim = layout.dim;
    let reach = (radius / h + 1e-9).floor() as i64;
    let near = near_cell_weight(kernel, dim, h);
    let span = layout.n_axis as i64;

    // Offset table, translation invariant.
    let mut table: HashMap<(i64, i64), f64> = HashMap::new();
    let kmax = reach.min(span);
    let keys: Vec<(i64, i64)> = if dim == 1 {
        (1..=kmax).map(|k| (k, 0)).collect()
    } else {
        let mut v = Vec::new();
        for a in 0..=kmax {
            for b in a..=kmax {
                if (a, b) != (0, 0) && ((a * a + b * b) as f64) <= (radius / h).powi(2) + 1e-9 {
                    v.push((a, b));
                }
            }
        }
        v
    };
    let vals: Vec<f64> = keys
        .par_iter()
        .map(|&(a, b)| if dim == 1 { cell_integral_1d(kernel, a, h) } else { cell_integral_2d(kernel, a, b, h) })
        .collect();
    for (k, v) in keys.into_iter().zip(vals) {
        table.insert(k, v);
    }
    let lookup = |d0: i64, d1: i64| -> Option<f64> {
        let (a, b) = (d0.abs().min(d1.abs()), d0.abs().max(d1.abs()));
        if dim == 1 {
            table.get(&(d0.abs(), 0)).copied()
        } else {
            table.get(&(a, b)).copied()
        }
    };
    let outside = if dim == 2 { outside_cell_2d(kernel, h) } else { 0.0 };

    let mut w = vec![0.0; n * n];
    let mut tail = vec![0.0; n];
    w.par_chunks_mut(n).zip(tail.par_iter_mut()).enumerate().for_each(|(x, (row, tau))| {
        let ax = layout.axis(x);
        let mut covered = 0.0;
        let (mut kl, mut kr) = (0i64, 0i64);
        for y in 0..n {
            if y == x {
                continue;
            }
            let ay = layout.axis(y);
            let d0 = ay[0] as i64 - ax[0] as i64;
            let d1 = ay[1] as i64 - ax[1] as i64;
            let dist2 = (d0 * d0 + d1 * d1) as f64;
            if dist2 > (radius / h).powi(2) + 1e-9 {
                continue;
            }
            if let Some(v) = lookup(d0, d1) {
                row[y] = v;
                covered += v;
                if dim == 1 {
                    kl = kl.max(-d0);
                    kr = kr.max(d0);
                }
                if d0.abs() + d1.abs() == 1 {
                    row[y] += near;
                }
            }
        }
        *tau = if dim == 1 {
            // Distances to the outer edges of the last coupled cells.
            let dl = (kl as f64 + 0.5) * h;
            let dr = (kr as f64 + 0.5) * h;
            2.0 * kernel
                .terms
                .iter()
                .map(|t| t.c / (2.0 * t.s) * (dl.powf(-2.0 * t.s) + dr.powf(-2.0 * t.s)))
                .sum::<f64>()
        } else {
            2.0 * (outside - covered).max(0.0)
        };
    });
    let weights = DMatrix::from_row_slice(n, n, &w);
    let op = NonlocalOperator {
        kernel: kernel.clone(),
        weights,
        tail,
        radius,
        cell_volume: layout.cell_volume(),
        interior: layout.interior().to_vec(),
    };
    op.check_sign_pattern()?;
    Ok(op)
}

impl NonlocalOperator {
    /// (𝓛u)(x) at every node, u given on every node.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.tail.len();
        assert_eq!(u.len(), n);
        (0..n)
            .into_par_iter()
            .map(|x| {
                let row = self.weights.row(x);
                let mut acc = 0.0;
                for y in 0..n {
                    let wv = row[y];
                    if wv != 0.0 {
                        acc += wv * (u[y] - u[x]);
                    }
                }
                2.0 * acc - self.tail[x] * u[x]
            })
            .collect()
    }

    /// Table of -𝓛 restricted to interior nodes, exterior values zero.
    pub fn interior_table(&self) -> DiscreteOperator {
        let m = self.interior.len();
        let mut t = DMatrix::zeros(m, m);
        let mut tail = vec![0.0; m];
        for (i, &x) in self.interior.iter().enumerate() {
            let row_sum: f64 = self.weights.row(x).iter().sum();
            t[(i, i)] = 2.0 * row_sum + self.tail[x];
            tail[i] = self.tail[x];
            for (j, &y) in self.interior.iter().enumerate() {
                if i != j {
                    t[(i, j)] = -2.0 * self.weights[(x, y)];
                }
            }
        }
        DiscreteOperator { kind: OperatorKind::NegNonlocal, nodes: self.interior.clone(), table: t, tail }
    }

    /// Block -2W(x, y) for x in `rows`, y in `cols`.
    pub fn coupling(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| -2.0 * self.weights[(rows[i], cols[j])])
    }

    fn check_sign_pattern(&self) -> Result<()> {
        let t = self.interior_table().table;
        for i in 0..t.nrows() {
            if t[(i, i)] < 0.0 {
                return Err(Error::Kernel("negative diagonal in -L".into()));
            }
            for j in 0..t.ncols() {
                if i != j && t[(i, j)] > 0.0 {
                    return Err(Error::Kernel("positive off-diagonal in -L".into()));
                }
            }
        }
        Ok(())
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
}

/// Upwind table of α·∇ on interior nodes, exterior values zero.
pub fn assemble_drift(layout: &DomainLayout, alpha: &[f64]) -> Result<DiscreteOperator> {
    check_alpha(layout, alpha)?;
    let nodes = layout.interior().to_vec();
    let m = nodes.len();
    let mut t = DMatrix::zeros(m, m);
    for (i, &x) in nodes.iter().enumerate() {
        for (y, v) in drift_row(layout, alpha, x) {
            if let Some(j) = layout.interior_position(y) {
                t[(i, j)] += v;
            }
        }
    }
    Ok(DiscreteOperator { kind: OperatorKind::Drift, nodes, table: t, tail: vec![0.0; m] })
}

fn check_alpha(layout: &DomainLayout, alpha: &[f64]) -> Result<()> {
    if alpha.len() != layout.dim {
        return Err(Error::Input(format!("drift has {} components, expected {}", alpha.len(), layout.dim)));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input("drift must be finite".into()));
    }
    Ok(())
}

/// Stencil entries (node, coefficient) of the upwind α·∇ at node x. Missing
/// neighbours beyond the grid are treated as zero.
pub fn drift_row(layout: &DomainLayout, alpha: &[f64], x: usize) -> Vec<(usize, f64)> {
    let h = layout.h;
    let mut out = Vec::new();
    for (k, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        out.push((x, a.abs() / h));
        let dir = if a > 0.0 { -1 } else { 1 };
        if let Some(y) = layout.neighbour(x, k, dir) {
            out.push((y, -a.abs() / h));
        }
    }
    out
}

/// (α·∇u)(x) at any node, u on every node.
pub fn apply_drift_at(layout: &DomainLayout, alpha: &[f64], u: &[f64], x: usize) -> f64 {
    drift_row(layout, alpha, x).iter().map(|&(y, c)| c * u[y]).sum()
}

/// 𝓝u at every node outside Ω, returned as (node, value) pairs:
/// 𝓝u(x) = 2 Σ_{y in grid} W(x,y)(u(y) − u(x)).
pub fn interaction_flux(
    layout: &DomainLayout,
    op: &NonlocalOperator,
    u: &[f64],
) -> Result<Vec<(usize, f64)>> {
    if u.len() != layout.n_nodes() {
        return Err(Error::Input(format!(
            "field has {} values, layout has {} nodes including the collar",
            u.len(),
            layout.n_nodes()
        )));
    }
    let n = u.len();
    Ok((0..n)
        .filter(|&x| layout.node_class[x] != NodeClass::Interior)
        .map(|x| {
            let row = op.weights.row(x);
            let s: f64 = (0..n).map(|y| row[y] * (u[y] - u[x])).sum();
            (x, 2.0 * s)
        })
        .collect())
}

/// |∫_Ω v𝓓(𝓓*u) − ∬(𝓓*v)(𝓓*u) − ∫_{Ω_I} v𝓝u| with Ω_I the grid outside Ω and
/// every integral taken with the cell quadrature of the assembly.
pub fn green_identity_residual(
    layout: &DomainLayout,
    op: &NonlocalOperator,
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    let n = layout.n_nodes();
    if u.len() != n || v.len() != n {
        return Err(Error::Input("fields must cover every grid node".into()));
    }
    let vol = layout.cell_volume();
    let w = &op.weights;
    let mut div_term = 0.0;
    let mut energy = 0.0;
    for x in 0..n {
        let row = w.row(x);
        let mut flux = 0.0;
        for y in 0..n {
            let wv = row[y];
            if wv != 0.0 {
                flux += wv * (u[y] - u[x]);
                energy += wv * (v[y] - v[x]) * (u[y] - u[x]);
            }
        }
        if layout.node_class[x] == NodeClass::Interior {
            div_term += v[x] * (-2.0 * flux);
        }
    }
    let boundary: f64 = interaction_flux(layout, op, u)?.iter().map(|&(x, f)| v[x] * f).sum();
    Ok(((div_term - energy - boundary) * vol).abs())
}
