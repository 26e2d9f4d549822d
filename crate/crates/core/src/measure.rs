//! Measurement maps: weighted exterior flux Λ¹ on Ω_a, weighted boundary flux
//! Λ² on Γ, point observation Λ³ at x₀, and a seeded twin-data generator.
//!
//! Time integrals use the trapezoid rule on the solver grid.

use crate::domain::{DomainLayout, NodeClass};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::{SourceTerm, SystemSpec};
use crate::linearize::solve_nonlinear;
use crate::nonlocal_op::{apply_drift_at, NonlocalOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Ω_a, exterior accessible nodes.
    Accessible,
    /// Γ, boundary nodes.
    Gamma,
}

/// Weight h_i(x, t) of the instrument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementWeight {
    pub region: Region,
    pub h: Field,
}

impl MeasurementWeight {
    /// Samples f(species, x, t) on the region's nodes; zero elsewhere.
    pub fn from_fn(
        layout: &DomainLayout,
        n_species: usize,
        region: Region,
        f: impl Fn(usize, [f64; 2], f64) -> f64,
    ) -> Self {
        let nodes = region_nodes(layout, region).to_vec();
        let mut h = Field::on_layout(layout, n_species);
        for s in 0..n_species {
            for m in 0..layout.n_levels() {
                for &x in &nodes {
                    h.set(s, m, x, f(s, layout.coords(x), layout.time(m)));
                }
            }
        }
        MeasurementWeight { region, h }
    }

    /// Support inside the region and finite values.
    pub fn check_support(&self, layout: &DomainLayout) -> Result<()> {
        self.h.check_shape(layout, self.h.n_species, "measurement weight")?;
        let inside = |x: usize| match self.region {
            Region::Accessible => layout.node_class[x] == NodeClass::ExteriorAccessible,
            Region::Gamma => layout.on_gamma[x],
        };
        for s in 0..self.h.n_species {
            for m in 0..self.h.n_levels {
                for (x, &v) in self.h.level(s, m).iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Input("measurement weight is not finite".into()));
                    }
                    if v != 0.0 && !inside(x) {
                        return Err(Error::Input(format!(
                            "measurement weight is nonzero at node {x}, outside its region"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full invariant: support, h ≥ 0 and h ≢ 0.
    pub fn validate(&self, layout: &DomainLayout) -> Result<()> {
        self.check_support(layout)?;
        if self.h.min() < 0.0 {
            return Err(Error::Input("measurement weight must be nonnegative".into()));
        }
        if self.h.is_zero() {
            return Err(Error::Input("measurement weight vanishes identically".into()));
        }
        Ok(())
    }
}

fn region_nodes(layout: &DomainLayout, region: Region) -> &[usize] {
    match region {
        Region::Accessible => layout.accessible(),
        Region::Gamma => layout.gamma(),
    }
}

/// Trapezoid weights on levels 0..=n_time, times dt.
pub fn time_weights(layout: &DomainLayout) -> Vec<f64> {
    let n = layout.n_time;
    (0..=n).map(|m| if m == 0 || m == n { 0.5 * layout.dt } else { layout.dt }).collect()
}

/// ⟨(−𝓛 + α·∇)u, h⟩ over Ω_a × (0, T), per species.
pub fn pair_lambda1(
    u: &Field,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    op: &NonlocalOperator,
    alpha: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_lambda1(u, h, layout)?;
    let tw = time_weights(layout);
    let vol = layout.cell_volume();
    Ok((0..u.n_species)
        .map(|s| {
            let mut acc = 0.0;
            for m in 1..u.n_levels {
                let lu = op.apply(u.level(s, m));
                let lev = u.level(s, m);
                let mut inner = 0.0;
                for &x in layout.accessible() {
                    let hv = h.h.get(s, m, x);
                    if hv != 0.0 {
                        inner += hv * (-lu[x] + apply_drift_at(layout, &alpha[s], lev, x));
                    }
                }
                acc += tw[m] * vol * inner;
            }
            acc
        })
        .collect())
}

fn check_lambda1(u: &Field, h: &MeasurementWeight, layout: &DomainLayout) -> Result<()> {
    if h.region != Region::Accessible {
        return Err(Error::Input("Λ¹ weight must live on the accessible region".into()));
    }
    h.check_support(layout)?;
    u.check_shape(layout, h.h.n_species, "state")
}

/// ∫∫_{Ω_a} 𝓝u · h, per species. Only defined without drift.
pub fn pair_lambda1_nonlocal_flux(
    u: &Field,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    op: &NonlocalOperator,
    alpha: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if alpha.iter().any(|a| a.iter().any(|&v| v != 0.0)) {
        return Err(Error::Input("the nonlocal flux pairing needs zero drift".into()));
    }
    check_lambda1(u, h, layout)?;
    let tw = time_weights(layout);
    let vol = layout.cell_volume();
    let mut out = Vec::with_capacity(u.n_species);
    for s in 0..u.n_species {
        let mut acc = 0.0;
        for m in 1..u.n_levels {
            let flux = crate::nonlocal_op::interaction_flux(layout, op, u.level(s, m))?;
            let inner: f64 = flux.iter().map(|&(x, f)| h.h.get(s, m, x) * f).sum();
            acc += tw[m] * vol * inner;
        }
        out.push(acc);
    }
    Ok(out)
}

/// One-sided second-order outward normal derivative of level `m` at a Γ node.
pub fn normal_derivative(u: &[f64], layout: &DomainLayout, node: usize) -> f64 {
    let (axis, dir) = layout.inward_direction(node).expect("Γ nodes are boundary nodes");
    let n1 = layout.neighbour(node, axis, dir).expect("grid has interior neighbours");
    let n2 = layout.neighbour(n1, axis, dir).expect("grid has interior neighbours");
    -(-3.0 * u[node] + 4.0 * u[n1] - u[n2]) / (2.0 * layout.h)
}

/// ∫∫_Γ h ∂_ν u, per species.
pub fn pair_lambda2(u: &Field, h: &MeasurementWeight, layout: &DomainLayout) -> Result<Vec<f64>> {
    if layout.gamma().is_empty() {
        return Err(Error::Input("Γ is empty".into()));
    }
    if h.region != Region::Gamma {
        return Err(Error::Input("Λ² weight must live on Γ".into()));
    }
    h.check_support(layout)?;
    u.check_shape(layout, h.h.n_species, "state")?;
    let tw = time_weights(layout);
    let area = layout.h.powi(layout.dim as i32 - 1);
    Ok((0..u.n_species)
        .map(|s| {
            let mut acc = 0.0;
            for m in 0..u.n_levels {
                let lev = u.level(s, m);
                let inner: f64 =
                    layout.gamma().iter().map(|&x| h.h.get(s, m, x) * normal_derivative(lev, layout, x)).sum();
                acc += tw[m] * area * inner;
            }
            acc
        })
        .collect())
}

/// u_i(x₀, t_m) for every species and level.
pub fn observe_point(u: &Field, layout: &DomainLayout) -> Vec<Vec<f64>> {
    (0..u.n_species).map(|s| (0..u.n_levels).map(|m| u.get(s, m, layout.obs_point_index)).collect()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Lambda1,
    Lambda1Flux,
    Lambda2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub kind: MeasureKind,
    /// values[n][i] = ⟨Λ(qⁿ), h⟩ for species i.
    pub values: Vec<Vec<f64>>,
    /// series[n][i][m] = u_i(x₀, t_m) for source n.
    pub series: Vec<Vec<Vec<f64>>>,
    pub noise_rel: f64,
    pub seed: u64,
}

impl MeasurementSet {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source_index,species,value\n");
        for (n, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{n},{i},{v:.16e}");
            }
        }
        s
    }

    pub fn series_csv(&self, dt: f64) -> String {
        let mut s = String::from("source_index,t,species,value\n");
        for (n, per) in self.series.iter().enumerate() {
            for (i, ser) in per.iter().enumerate() {
                for (m, v) in ser.iter().enumerate() {
                    let _ = writeln!(s, "{n},{:.16e},{i},{v:.16e}", m as f64 * dt);
                }
            }
        }
        s
    }
}

/// Multiplies each entry by 1 + noise_rel·ξ, ξ standard normal from a seeded
/// stream.
pub fn add_noise(values: &mut [f64], noise_rel: f64, rng: &mut ChaCha8Rng) {
    if noise_rel == 0.0 {
        return;
    }
    for v in values {
        let xi: f64 = StandardNormal.sample(rng);
        *v *= 1.0 + noise_rel * xi;
    }
}

/// Pairs one solved state according to `kind`.
pub fn pair(
    kind: MeasureKind,
    u: &Field,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    op: Option<&NonlocalOperator>,
    alpha: &[Vec<f64>],
) -> Result<Vec<f64>> {
    match kind {
        MeasureKind::Lambda2 => pair_lambda2(u, h, layout),
        _ => {
            let op = op.ok_or_else(|| Error::Input("Λ¹ pairing needs the nonlocal operator".into()))?;
            if kind == MeasureKind::Lambda1 {
                pair_lambda1(u, h, layout, op, alpha)
            } else {
                pair_lambda1_nonlocal_flux(u, h, layout, op, alpha)
            }
        }
    }
}

/// Forward-solves every basis source, pairs, observes x₀, then perturbs.
pub fn synthesize_data(
    spec: &SystemSpec,
    basis: &[SourceTerm],
    h: &MeasurementWeight,
    layout: &DomainLayout,
    kind: MeasureKind,
    noise_rel: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if basis.is_empty() {
        return Err(Error::Input("source basis is empty".into()));
    }
    if !(noise_rel >= 0.0 && noise_rel.is_finite()) {
        return Err(Error::Input("noise level must be nonnegative".into()));
    }
    let op = match (kind, &spec.kernel) {
        (MeasureKind::Lambda2, _) => None,
        (_, Some(k)) => Some(crate::nonlocal_op::assemble_nonlocal(layout, k)?),
        (_, None) => return Err(Error::Input("Λ¹ data need a kernel".into())),
    };
    let solved = basis
        .par_iter()
        .map(|q| {
            let u = solve_nonlinear(spec, q, layout)?;
            let v = pair(kind, &u, h, layout, op.as_ref(), &spec.alpha)?;
            Ok((v, observe_point(&u, layout)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(solved.len());
    let mut series = Vec::with_capacity(solved.len());
    for (mut v, mut s) in solved {
        add_noise(&mut v, noise_rel, &mut rng);
        for ser in s.iter_mut() {
            add_noise(ser, noise_rel, &mut rng);
        }
        values.push(v);
        series.push(s);
    }
    Ok(MeasurementSet { kind, values, series, noise_rel, seed })
}
