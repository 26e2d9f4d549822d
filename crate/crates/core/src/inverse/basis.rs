//! Source bases and regularized Gram expansion.

use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::forward::SourceTerm;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisTag {
    Hat,
    Trigonometric,
}

/// Members φ_a(x)·T_b(t). Spatial profiles live on every node and vanish
/// outside Ω; temporal profiles live on levels 0..=N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceBasis {
    pub tag: BasisTag,
    pub spatial: Vec<Vec<f64>>,
    pub temporal: Vec<Vec<f64>>,
    /// Spatial members per axis, for the smoothing operator.
    pub per_axis: usize,
}

/// 1D hat profiles on [0,1], `count` centres at k/(count+1).
fn hat_1d(count: usize, x: f64) -> Vec<f64> {
    let w = 1.0 / (count as f64 + 1.0);
    (0..count).map(|k| (1.0 - (x - (k as f64 + 1.0) * w).abs() / w).max(0.0)).collect()
}

impl SourceBasis {
    /// Tensor hats with `per_axis` members per axis and a single temporal
    /// profile `v`.
    pub fn hats(layout: &DomainLayout, per_axis: usize, v: &[f64]) -> Result<Self> {
        let spatial = spatial_profiles(layout, per_axis, hat_1d)?;
        Self::with_temporal(BasisTag::Hat, spatial, vec![v.to_vec()], per_axis, layout)
    }

    /// Tensor sines sin(kπx) with the given temporal profile.
    pub fn trigonometric(layout: &DomainLayout, per_axis: usize, v: &[f64]) -> Result<Self> {
        let spatial = spatial_profiles(layout, per_axis, |n, x| {
            (1..=n).map(|k| (k as f64 * std::f64::consts::PI * x).sin()).collect()
        })?;
        Self::with_temporal(BasisTag::Trigonometric, spatial, vec![v.to_vec()], per_axis, layout)
    }

    /// Space-time hats: `per_axis` spatial hats per axis times `levels`
    /// temporal hats centred at t = bT/levels, b = 1..levels.
    pub fn space_time_hats(layout: &DomainLayout, per_axis: usize, levels: usize) -> Result<Self> {
        if levels == 0 || levels > layout.n_time {
            return Err(Error::Input(format!("need 1..={} temporal members", layout.n_time)));
        }
        let spatial = spatial_profiles(layout, per_axis, hat_1d)?;
        let width = layout.t_final / levels as f64;
        let temporal = (1..=levels)
            .map(|b| {
                (0..layout.n_levels())
                    .map(|m| (1.0 - (layout.time(m) - b as f64 * width).abs() / width).max(0.0))
                    .collect()
            })
            .collect();
        Self::with_temporal(BasisTag::Hat, spatial, temporal, per_axis, layout)
    }

    fn with_temporal(
        tag: BasisTag,
        spatial: Vec<Vec<f64>>,
        temporal: Vec<Vec<f64>>,
        per_axis: usize,
        layout: &DomainLayout,
    ) -> Result<Self> {
        if temporal.iter().any(|t| t.len() != layout.n_levels()) {
            return Err(Error::Input("temporal profile length must equal n_time + 1".into()));
        }
        Ok(SourceBasis { tag, spatial, temporal, per_axis })
    }

    pub fn len(&self) -> usize {
        self.spatial.len() * self.temporal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same spatial members with another set of temporal profiles.
    pub fn retimed(&self, temporal: Vec<Vec<f64>>) -> Self {
        SourceBasis { temporal, ..self.clone() }
    }

    /// Member n = a·B + b as a source, applied to every species.
    pub fn source(&self, n: usize, layout: &DomainLayout, n_species: usize) -> SourceTerm {
        let b_count = self.temporal.len();
        let (a, b) = (n / b_count, n % b_count);
        let mut q = SourceTerm::zeros(layout, n_species);
        for s in 0..n_species {
            for m in 0..layout.n_levels() {
                let t = self.temporal[b][m];
                if t == 0.0 {
                    continue;
                }
                for &x in layout.interior() {
                    q.q.set(s, m, x, self.spatial[a][x] * t);
                }
            }
        }
        q
    }

    pub fn sources(&self, layout: &DomainLayout, n_species: usize) -> Vec<SourceTerm> {
        (0..self.len()).map(|n| self.source(n, layout, n_species)).collect()
    }

    /// Gram matrix hᵈ⟨φ_a, φ_c⟩ · dt Σ_{m=1}^{N} T_b^m T_e^m.
    pub fn gram(&self, layout: &DomainLayout) -> DMatrix<f64> {
        let vol = layout.cell_volume();
        let ka = self.spatial.len();
        let sg = DMatrix::from_fn(ka, ka, |a, c| {
            vol * layout.interior().iter().map(|&x| self.spatial[a][x] * self.spatial[c][x]).sum::<f64>()
        });
        let kb = self.temporal.len();
        let tg = DMatrix::from_fn(kb, kb, |b, e| {
            layout.dt * (1..layout.n_levels()).map(|m| self.temporal[b][m] * self.temporal[e][m]).sum::<f64>()
        });
        sg.kronecker(&tg)
    }

    /// Gram matrix hᵈ⟨φ_a, φ_c⟩ of the spatial members.
    pub fn spatial_gram(&self, layout: &DomainLayout) -> DMatrix<f64> {
        let vol = layout.cell_volume();
        let ka = self.spatial.len();
        DMatrix::from_fn(ka, ka, |a, c| {
            vol * layout.interior().iter().map(|&x| self.spatial[a][x] * self.spatial[c][x]).sum::<f64>()
        })
    }

    /// Second differences across neighbouring spatial members, per temporal
    /// member and per axis.
    pub fn smoothing(&self, dim: usize) -> DMatrix<f64> {
        smoothing_matrix(self.per_axis, self.temporal.len(), dim)
    }

    /// Second differences across the spatial members only.
    pub fn spatial_smoothing(&self, dim: usize) -> DMatrix<f64> {
        smoothing_matrix(self.per_axis, 1, dim)
    }

    /// Σ_a coeffs[a] φ_a(x) on every node.
    pub fn synthesize_spatial(&self, coeffs: &DVector<f64>, layout: &DomainLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.n_nodes()];
        for (a, &c) in coeffs.iter().enumerate() {
            for &x in layout.interior() {
                out[x] += c * self.spatial[a][x];
            }
        }
        out
    }

    /// Σ_n coeffs[n] φ_a(x) T_b(t_m) on interior nodes, levels 1..=N; returns
    /// a per-level, per-node table indexed [m][node].
    pub fn synthesize(&self, coeffs: &DVector<f64>, layout: &DomainLayout) -> Vec<Vec<f64>> {
        let kb = self.temporal.len();
        let mut out = vec![vec![0.0; layout.n_nodes()]; layout.n_levels()];
        for (n, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (a, b) = (n / kb, n % kb);
            for (m, row) in out.iter_mut().enumerate() {
                let t = self.temporal[b][m];
                if t == 0.0 {
                    continue;
                }
                for &x in layout.interior() {
                    row[x] += c * t * self.spatial[a][x];
                }
            }
        }
        out
    }}

fn smoothing_matrix(k: usize, kb: usize, dim: usize) -> DMatrix<f64> {
    {
        let n = k.pow(dim as u32) * kb;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let idx = |ax: [usize; 2], b: usize| {
            let a = if dim == 1 { ax[0] } else { ax[0] + k * ax[1] };
            a * kb + b
        };
        let yr = if dim == 1 { 1 } else { k };
        for b in 0..kb {
            for y in 0..yr {
                for x in 0..k {
                    for axis in 0..dim {
                        let c = if axis == 0 { x } else { y };
                        if c == 0 || c + 1 >= k {
                            continue;
                        }
                        let at = |d: i64| {
                            let mut ax = [x, y];
                            ax[axis] = (c as i64 + d) as usize;
                            idx(ax, b)
                        };
                        rows.push(vec![(at(-1), 1.0), (at(0), -2.0), (at(1), 1.0)]);
                    }
                }
            }
        }
        let mut l = DMatrix::zeros(rows.len().max(1), n);
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                l[(r, c)] = v;
            }
        }
        l
    }

}

fn spatial_profiles(
    layout: &DomainLayout,
    per_axis: usize,
    f: impl Fn(usize, f64) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    if per_axis == 0 {
        return Err(Error::Input("basis needs at least one member per axis".into()));
    }
    let n = layout.n_nodes();
    let total = per_axis.pow(layout.dim as u32);
    let mut out = vec![vec![0.0; n]; total];
    for &x in layout.interior() {
        let c = layout.coords(x);
        let px = f(per_axis, c[0]);
        if layout.dim == 1 {
            for a in 0..per_axis {
                out[a][x] = px[a];
            }
        } else {
            let py = f(per_axis, c[1]);
            for j in 0..per_axis {
                for i in 0..per_axis {
                    out[i + per_axis * j][x] = px[i] * py[j];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// λ relative to ‖GᵀG‖ / ‖LᵀL‖.
    Fixed(f64),
    /// Largest Menger curvature over five λ values.
    LCurve,
}

pub const NOISELESS_LAMBDA: f64 = 1e-12;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct GramSolve {
    pub coeffs: DVector<f64>,
    /// Absolute λ used.
    pub lambda: f64,
    pub condition: f64,
    pub residual: f64,
    pub seminorm: f64,
    /// (λ, residual, seminorm) for every λ tried.
    pub curve: Vec<(f64, f64, f64)>,
}

/// Solves min ‖G c − r‖² + λ‖L c‖².
pub fn gram_expand(g: &DMatrix<f64>, l: &DMatrix<f64>, r: &DVector<f64>, choice: LambdaChoice) -> Result<GramSolve> {
    let sv = g.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition));
    }
    let gtg = g.transpose() * g;
    let ltl = l.transpose() * l;
    let scale = gtg.norm() / ltl.norm().max(f64::MIN_POSITIVE);
    let gtr = g.transpose() * r;
    let solve = |lam: f64| -> Result<(DVector<f64>, f64, f64)> {
        let m = &gtg + &ltl * lam;
        let c = m
            .cholesky()
            .map(|ch| ch.solve(&gtr))
            .or_else(|| (&gtg + &ltl * lam).lu().solve(&gtr))
            .ok_or_else(|| Error::Singular("regularized normal equations".into()))?;
        let res = (g * &c - r).norm();
        let semi = (l * &c).norm();
        Ok((c, res, semi))
    };
    match choice {
        LambdaChoice::Fixed(rel) => {
            let lam = rel * scale;
            let (c, res, semi) = solve(lam)?;
            Ok(GramSolve { coeffs: c, lambda: lam, condition, residual: res, seminorm: semi, curve: vec![(lam, res, semi)] })
        }
        LambdaChoice::LCurve => {
            let rels = [1e-8, 1e-6, 1e-4, 1e-2, 1.0];
            let mut pts = Vec::with_capacity(5);
            let mut sols = Vec::with_capacity(5);
            for &rel in &rels {
                let lam = rel * scale;
                let (c, res, semi) = solve(lam)?;
                pts.push((lam, res, semi));
                sols.push(c);
            }
            let p: Vec<(f64, f64)> =
                pts.iter().map(|&(_, a, b)| (a.max(1e-300).ln(), b.max(1e-300).ln())).collect();
            let mut best = 1;
            let mut best_k = f64::NEG_INFINITY;
            for i in 1..4 {
                let k = menger_curvature(p[i - 1], p[i], p[i + 1]);
                if k > best_k {
                    best_k = k;
                    best = i;
                }
            }
            let (lam, res, semi) = pts[best];
            Ok(GramSolve { coeffs: sols.swap_remove(best), lambda: lam, condition, residual: res, seminorm: semi, curve: pts })
        }
    }
}

/// Signed curvature of the circle through three points; positive for a
/// corner bending towards the origin.
pub fn menger_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let d = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
    let den = d(a, b) * d(b, c) * d(a, c);
    if den == 0.0 {
        0.0
    } else {
        2.0 * cross / den
    }
}
