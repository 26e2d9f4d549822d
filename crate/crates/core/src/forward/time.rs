//! L1 stepping for Σ_j b_j ₀D_t^{β_j} u − dΔu + α·∇u = pu + F(u) + q with
//! u = 0 on ∂Ω, and the exponential change of variables that removes α.
//!
//! With κ = α/(2d) and u = e^{κ·x} v, the drifted equation becomes a
//! drift-free one for v with potential p − |α|²/(4d), source e^{−κ·x} q and
//! interaction e^{−κ·x} F(e^{κ·x} v). The grid is kept; d stays in place.

use super::stepper::Stepper;
use super::system::{SourceTerm, StateField, SystemKind, SystemSpec};
use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use nalgebra::{DMatrix, DVector};

/// −dΔ_h on interior nodes (standard 5-point / 3-point stencil, zero
/// boundary values).
pub fn laplacian(layout: &DomainLayout, d: f64) -> DMatrix<f64> {
    let nodes = layout.interior();
    let n = nodes.len();
    let c = d / (layout.h * layout.h);
    let mut k = DMatrix::zeros(n, n);
    for (i, &x) in nodes.iter().enumerate() {
        k[(i, i)] = 2.0 * layout.dim as f64 * c;
        for axis in 0..layout.dim {
            for dir in [-1, 1] {
                if let Some(j) = layout.neighbour(x, axis, dir).and_then(|y| layout.interior_position(y)) {
                    k[(i, j)] = -c;
                }
            }
        }
    }
    k
}

/// Drift-free form of a time-fractional spec.
#[derive(Clone, Debug)]
pub struct DriftRemoval {
    /// Spec for v = σ u: zero drift, shifted potential, interaction read
    /// through the state scaling.
    pub spec: SystemSpec,
    /// σ_i = e^{−κ_i·x} on every node.
    pub scaling: Vec<Vec<f64>>,
    /// |α_i|²/(4 d_i), subtracted from p_i.
    pub shift: Vec<f64>,
}

pub fn drift_removal(spec: &SystemSpec, layout: &DomainLayout) -> Result<DriftRemoval> {
    if spec.frac.is_none() {
        return Err(Error::System("drift removal applies to time-fractional specs".into()));
    }
    if let Some(&d) = spec.diffusion.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::System(format!("diffusion coefficient {d} must be positive")));
    }
    let m = spec.n_species;
    let mut scaling = Vec::with_capacity(m);
    let mut shift = Vec::with_capacity(m);
    for i in 0..m {
        let d = spec.diffusion[i];
        let kappa: Vec<f64> = spec.alpha[i].iter().map(|a| a / (2.0 * d)).collect();
        shift.push(spec.alpha[i].iter().map(|a| a * a).sum::<f64>() / (4.0 * d));
        scaling.push(
            (0..layout.n_nodes())
                .map(|x| {
                    let c = layout.coords(x);
                    (-(0..layout.dim).map(|k| kappa[k] * c[k]).sum::<f64>()).exp()
                })
                .collect::<Vec<f64>>(),
        );
    }
    let mut out = spec.clone();
    for i in 0..m {
        out.alpha[i] = vec![0.0; layout.dim];
        out.potential[i] = spec.potential[i].shifted(-shift[i]);
    }
    if spec.has_drift() {
        let s: Vec<Vec<f64>> = scaling.iter().map(|v| v.iter().map(|x| 1.0 / x).collect()).collect();
        out.state_scaling = Some(match &spec.state_scaling {
            None => s,
            Some(prev) => prev
                .iter()
                .zip(&s)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
                .collect(),
        });
    }
    Ok(DriftRemoval { spec: out, scaling, shift })
}

impl DriftRemoval {
    pub fn transform_source(&self, source: &SourceTerm) -> SourceTerm {
        let mut q = source.q.clone();
        self.scale(&mut q, false);
        SourceTerm { q }
    }

    /// Maps a solution of the drift-free form back to u.
    pub fn restore(&self, v: &StateField) -> StateField {
        let mut u = v.u.clone();
        self.scale(&mut u, true);
        StateField { u, picard_iterations: v.picard_iterations.clone() }
    }

    fn scale(&self, f: &mut Field, inverse: bool) {
        for i in 0..f.n_species {
            for m in 0..f.n_levels {
                for (x, val) in f.level_mut(i, m).iter_mut().enumerate() {
                    let s = self.scaling[i][x];
                    *val = if inverse { *val / s } else { *val * s };
                }
            }
        }
    }
}

/// Solves the time-fractional system through its drift-free form.
pub fn solve_time_fractional(spec: &SystemSpec, source: &SourceTerm, layout: &DomainLayout) -> Result<StateField> {
    check_time(spec, source, layout)?;
    if !spec.has_drift() {
        let spatial = (0..spec.n_species).map(|i| laplacian(layout, spec.diffusion[i])).collect();
        return march(spec, layout, spatial, source);
    }
    let dr = drift_removal(spec, layout)?;
    let spatial = (0..spec.n_species).map(|i| laplacian(layout, spec.diffusion[i])).collect();
    let v = march(&dr.spec, layout, spatial, &dr.transform_source(source))?;
    Ok(dr.restore(&v))
}

/// Solves in the original variables with the exponentially fitted drift
/// operator e^{κ·x}(−dΔ_h)e^{−κ·x} + |α|²/(4d).
pub fn solve_time_fractional_direct(
    spec: &SystemSpec,
    source: &SourceTerm,
    layout: &DomainLayout,
) -> Result<StateField> {
    check_time(spec, source, layout)?;
    let dr = drift_removal(spec, layout)?;
    let nodes = layout.interior();
    let spatial = (0..spec.n_species)
        .map(|i| {
            let k = laplacian(layout, spec.diffusion[i]);
            let sig = &dr.scaling[i];
            let mut a = DMatrix::from_fn(k.nrows(), k.ncols(), |r, c| k[(r, c)] * sig[nodes[c]] / sig[nodes[r]]);
            for r in 0..a.nrows() {
                a[(r, r)] += dr.shift[i];
            }
            a
        })
        .collect();
    march(spec, layout, spatial, source)
}

fn check_time(spec: &SystemSpec, source: &SourceTerm, layout: &DomainLayout) -> Result<()> {
    spec.validate(layout)?;
    if spec.kind() != Some(SystemKind::Time) {
        return Err(Error::System("spec is not a time-fractional system".into()));
    }
    source.q.check_shape(layout, spec.n_species, "source")
}

/// L1 march with step matrix a_0 I + spatial_i − diag(p_i).
fn march(
    spec: &SystemSpec,
    layout: &DomainLayout,
    spatial: Vec<DMatrix<f64>>,
    source: &SourceTerm,
) -> Result<StateField> {
    let frac = spec.frac.as_ref().expect("checked by caller");
    let nodes = layout.interior();
    let n = nodes.len();
    let nt = layout.n_time;
    let m_sp = spec.n_species;
    let weights = (0..m_sp)
        .map(|i| frac.combined_weights(i, layout.dt, nt))
        .collect::<Result<Vec<_>>>()?;
    let base = spatial
        .into_iter()
        .enumerate()
        .map(|(i, mut a)| {
            for k in 0..n {
                a[(k, k)] += weights[i][0];
            }
            a
        })
        .collect();
    let stepper = Stepper::new(spec, nodes, base);
    let mut u = Field::on_layout(layout, m_sp);
    let mut iters = vec![0; layout.n_levels()];
    // hist[i][k] = v_k − v_{k−1}
    let mut hist: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(nt); m_sp];
    let mut prev: Vec<DVector<f64>> = vec![DVector::zeros(n); m_sp];
    for m in 1..=nt {
        let rhs: Vec<DVector<f64>> = (0..m_sp)
            .map(|i| {
                let a = &weights[i];
                let mut r = &prev[i] * a[0];
                for k in 1..m {
                    r.axpy(-a[m - k], &hist[i][k - 1], 1.0);
                }
                for (k, &x) in nodes.iter().enumerate() {
                    r[k] += source.q.get(i, m, x);
                }
                r
            })
            .collect();
        let (next, it) = stepper.step(m, &rhs, prev.clone())?;
        for i in 0..m_sp {
            for (k, &x) in nodes.iter().enumerate() {
                u.set(i, m, x, next[i][k]);
            }
            hist[i].push(&next[i] - &prev[i]);
        }
        iters[m] = it;
        prev = next;
    }
    Ok(StateField { u, picard_iterations: iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_layout, Selector, Side};
    use crate::forward::system::{Interaction, Potential};
    use crate::fractime::FracOrderSpec;

    fn layout(n: usize, nt: usize) -> DomainLayout {
        build_layout(1, n, 0.25, &Selector::Side(Side::Right), &Selector::Side(Side::Left), 1.0, nt).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let l = layout(16, 16);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5).unwrap(), vec![1.0], &l)
            .with_interaction(Interaction::new(1).with(0, &[2], 1.0).unwrap());
        assert!(solve_time_fractional(&spec, &SourceTerm::zeros(&l, 1), &l).unwrap().u.is_zero());
    }

    #[test]
    fn near_unit_order_matches_implicit_euler_heat() {
        let l = layout(32, 128);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.999).unwrap(), vec![1.0], &l);
        let q = SourceTerm::from_fn(&l, 1, |_, x, _| (std::f64::consts::PI * x[0]).sin());
        let u = solve_time_fractional(&spec, &q, &l).unwrap();
        // classical backward Euler oracle
        let k = laplacian(&l, 1.0);
        let n = k.nrows();
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += 1.0 / l.dt;
        }
        let lu = a.lu();
        let nodes = l.interior();
        let mut v = DVector::zeros(n);
        for m in 1..l.n_levels() {
            let rhs = DVector::from_fn(n, |i, _| v[i] / l.dt + q.q.get(0, m, nodes[i]));
            v = lu.solve(&rhs).unwrap();
        }
        let num: f64 = nodes.iter().enumerate().map(|(i, &x)| (u.u.get(0, l.n_time, x) - v[i]).powi(2)).sum();
        let rel = num.sqrt() / v.norm();
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn identity_transform_without_drift() {
        let l = layout(8, 4);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5).unwrap(), vec![1.0], &l);
        let dr = drift_removal(&spec, &l).unwrap();
        assert!(dr.scaling[0].iter().all(|&s| s == 1.0));
        assert_eq!(dr.shift, vec![0.0]);
        assert!(dr.spec.state_scaling.is_none());
    }

    #[test]
    fn unit_drift_shifts_potential_by_a_quarter() {
        let l = layout(8, 4);
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.5).unwrap(), vec![1.0], &l)
            .with_alpha(0, vec![1.0])
            .with_potential(0, Potential::constant(&l, -0.3));
        let dr = drift_removal(&spec, &l).unwrap();
        assert!((dr.shift[0] - 0.25).abs() < 1e-15);
        for x in 0..l.n_nodes() {
            assert!((dr.spec.potential[0].at(0, x) + 0.55).abs() < 1e-15);
        }
        let mut bad = spec.clone();
        bad.diffusion[0] = 0.0;
        assert!(drift_removal(&bad, &l).is_err());
    }

    #[test]
    fn round_trip_matches_direct_solve() {
        let l = layout(32, 64);
        let f = Interaction::new(1).with(0, &[2], -0.5).unwrap();
        let spec = SystemSpec::time(1, FracOrderSpec::new(vec![vec![(0.4, 1.0), (0.8, 0.5)]]).unwrap(), vec![1.0], &l)
            .with_alpha(0, vec![1.0])
            .with_potential(0, Potential::transient_from_fn(&l, |x, t| -x[0] * (1.0 + t)))
            .with_interaction(f);
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| (1.0 + t) * x[0] * (1.0 - x[0]) * 4.0);
        let a = solve_time_fractional(&spec, &q, &l).unwrap();
        let b = solve_time_fractional_direct(&spec, &q, &l).unwrap();
        assert!(a.u.max_abs_diff(&b.u) <= 1e-8, "{}", a.u.max_abs_diff(&b.u));
        assert!(a.u.max_abs() > 1e-2);
    }
}
