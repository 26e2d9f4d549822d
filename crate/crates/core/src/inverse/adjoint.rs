//! Backward adjoint problems with datum h on Ω_a (space case) or Γ (time case).
//!
//! Two forms are offered. `Pde` is a direct backward discretization of the
//! adjoint equation with w = h outside Ω (space) or w = h/d on Γ (time).
//! `Discrete` is the exact algebraic adjoint of the forward scheme paired with
//! the trapezoid measurement, so that
//!
//! ```text
//! ⟨Λ¹(q), h⟩ = −dt hᵈ Σ_{m=1}^{N} ⟨q^m, w^{m−1}⟩
//! ⟨Λ²(q), h⟩ = −dt hᵈ Σ_{m=1}^{N} ⟨q^m, w^{m−1}⟩
//! ```
//!
//! hold to rounding. In both forms w^N = 0 and the drift enters through the
//! transpose of the upwind table, which is the upwind stencil of −α·∇.

use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::{laplacian, SpaceOperators, SystemKind, SystemSpec};
use crate::measure::{time_weights, MeasurementWeight, Region};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointForm {
    Pde,
    Discrete,
}

#[derive(Clone, Debug)]
pub struct AdjointField {
    pub kind: SystemKind,
    pub form: AdjointForm,
    /// Interior values plus the datum on Ω_a (space) or h/d on Γ (time).
    pub w: Field,
    pub datum: MeasurementWeight,
}

impl AdjointField {
    /// First level at which w > 0 on every interior node of `species`.
    pub fn positive_slice(&self, layout: &DomainLayout, species: usize) -> Option<usize> {
        (0..self.w.n_levels).find(|&m| layout.interior().iter().all(|&x| self.w.get(species, m, x) > 0.0))
    }

    /// Smallest interior value over levels 0..N−1.
    pub fn interior_min(&self, layout: &DomainLayout, species: usize) -> f64 {
        let mut v = f64::INFINITY;
        for m in 0..self.w.n_levels - 1 {
            for &x in layout.interior() {
                v = v.min(self.w.get(species, m, x));
            }
        }
        v
    }
}

fn transient_diag(spec: &SystemSpec, species: usize, level: usize, nodes: &[usize]) -> DVector<f64> {
    DVector::from_fn(nodes.len(), |k, _| spec.potential[species].at(level, nodes[k]))
}

pub fn solve_adjoint_space(
    spec: &SystemSpec,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    form: AdjointForm,
) -> Result<AdjointField> {
    let ops = SpaceOperators::new(layout, spec)?;
    solve_adjoint_space_with(&ops, spec, h, layout, form)
}

pub fn solve_adjoint_space_with(
    ops: &SpaceOperators,
    spec: &SystemSpec,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    form: AdjointForm,
) -> Result<AdjointField> {
    let spec = spec.linear_part();
    spec.validate(layout)?;
    if spec.kind() != Some(SystemKind::Space) {
        return Err(Error::System("space adjoint needs a space-nonlocal spec".into()));
    }
    if h.region != Region::Accessible {
        return Err(Error::Input("space adjoint datum must live on Ω_a".into()));
    }
    h.check_support(layout)?;
    if h.h.n_species != spec.n_species {
        return Err(Error::Input("datum species count differs from the system".into()));
    }
    let nodes = layout.interior();
    let acc = layout.accessible();
    let n = nodes.len();
    let nt = layout.n_time;
    let dt = layout.dt;
    let tw = time_weights(layout);
    let coupling = ops.nonlocal.coupling(nodes, acc);
    let mut w = Field::on_layout(layout, spec.n_species);
    for s in 0..spec.n_species {
        let at = ops.spatial(s).transpose();
        let stationary = spec.potential[s].is_stationary();
        let step_matrix = |level: usize| {
            let mut m = at.clone();
            let p = transient_diag(&spec, s, level, nodes);
            for k in 0..n {
                m[(k, k)] += 1.0 / dt - p[k];
            }
            m
        };
        let cached = stationary.then(|| step_matrix(0).lu());
        let mut next = DVector::zeros(n);
        for m in (0..nt).rev() {
            // level of the operator and of the datum driving w^m
            let (lev, scale) = match form {
                AdjointForm::Pde => (m, 1.0),
                AdjointForm::Discrete => (m + 1, tw[m + 1] / dt),
            };
            let hv = DVector::from_fn(acc.len(), |k, _| h.h.get(s, lev, acc[k]));
            let rhs = &next / dt - (&coupling * hv) * scale;
            let sol = match &cached {
                Some(lu) => lu.solve(&rhs),
                None => step_matrix(lev).lu().solve(&rhs),
            }
            .ok_or_else(|| Error::Singular(format!("adjoint step {m}")))?;
            for (k, &x) in nodes.iter().enumerate() {
                w.set(s, m, x, sol[k]);
            }
            next = sol;
        }
        for m in 0..nt {
            for &x in acc {
                w.set(s, m, x, h.h.get(s, m, x));
            }
        }
    }
    Ok(AdjointField { kind: SystemKind::Space, form, w, datum: h.clone() })
}

/// Right-sided L1 step for the time-fractional adjoint, α = 0.
pub fn solve_adjoint_time(
    spec: &SystemSpec,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    form: AdjointForm,
) -> Result<AdjointField> {
    let spec = spec.linear_part();
    spec.validate(layout)?;
    if spec.kind() != Some(SystemKind::Time) {
        return Err(Error::System("time adjoint needs a time-fractional spec".into()));
    }
    if spec.has_drift() {
        return Err(Error::Input("time adjoint is implemented for zero drift".into()));
    }
    if h.region != Region::Gamma {
        return Err(Error::Input("time adjoint datum must live on Γ".into()));
    }
    h.check_support(layout)?;
    if h.h.n_species != spec.n_species {
        return Err(Error::Input("datum species count differs from the system".into()));
    }
    let frac = spec.frac.as_ref().expect("time spec");
    let nodes = layout.interior();
    let n = nodes.len();
    let nt = layout.n_time;
    let dt = layout.dt;
    let hh = layout.h;
    let vol = layout.cell_volume();
    let area = hh.powi(layout.dim as i32 - 1);
    let tw = time_weights(layout);
    let mut w = Field::on_layout(layout, spec.n_species);
    for s in 0..spec.n_species {
        let d = spec.diffusion[s];
        let a = frac.combined_weights(s, dt, nt)?;
        let k_mat = laplacian(layout, d);
        let step_matrix = |level: usize| -> DMatrix<f64> {
            let mut m = k_mat.clone();
            for k in 0..n {
                m[(k, k)] += a[0] - spec.potential[s].at(level, nodes[k]);
            }
            m
        };
        let cached = spec.potential[s].is_stationary().then(|| step_matrix(0).lu());
        // delta[j] = w_j − w_{j+1}, filled from the top
        let mut delta: Vec<DVector<f64>> = vec![DVector::zeros(n); nt];
        let mut next = DVector::zeros(n);
        for m in (0..nt).rev() {
            let (lev, rho) = match form {
                AdjointForm::Pde => (m, pde_boundary_source(layout, h, s, m, d)),
                AdjointForm::Discrete => {
                    let c = tw[m + 1] * area / (dt * vol);
                    (m + 1, discrete_boundary_source(layout, h, s, m + 1).scale(-c))
                }
            };
            let mut rhs = rho + &next * a[0];
            for j in (m + 1)..nt {
                rhs.axpy(-a[j - m], &delta[j], 1.0);
            }
            let sol = match &cached {
                Some(lu) => lu.solve(&rhs),
                None => step_matrix(lev).lu().solve(&rhs),
            }
            .ok_or_else(|| Error::Singular(format!("adjoint step {m}")))?;
            delta[m] = &sol - &next;
            for (k, &x) in nodes.iter().enumerate() {
                w.set(s, m, x, sol[k]);
            }
            next = sol;
        }
        for m in 0..nt {
            for &x in layout.gamma() {
                w.set(s, m, x, h.h.get(s, m, x) / d);
            }
        }
    }
    Ok(AdjointField { kind: SystemKind::Time, form, w, datum: h.clone() })
}

/// Boundary value h/d entering the interior rows of −dΔ_h.
fn pde_boundary_source(layout: &DomainLayout, h: &MeasurementWeight, s: usize, m: usize, d: f64) -> DVector<f64> {
    let mut r = DVector::zeros(layout.n_interior_nodes());
    let c = d / (layout.h * layout.h);
    for &x in layout.gamma() {
        let hv = h.h.get(s, m, x);
        if hv == 0.0 {
            continue;
        }
        let (axis, dir) = layout.inward_direction(x).expect("Γ node");
        if let Some(k) = layout.neighbour(x, axis, dir).and_then(|y| layout.interior_position(y)) {
            r[k] += c * hv / d;
        }
    }
    r
}

/// Coefficients of the interior values in Σ_Γ h ∂_ν u at level m.
pub(crate) fn discrete_boundary_source(layout: &DomainLayout, h: &MeasurementWeight, s: usize, m: usize) -> DVector<f64> {
    let mut r = DVector::zeros(layout.n_interior_nodes());
    let inv = 1.0 / (2.0 * layout.h);
    for &x in layout.gamma() {
        let hv = h.h.get(s, m, x);
        if hv == 0.0 {
            continue;
        }
        let (axis, dir) = layout.inward_direction(x).expect("Γ node");
        let n1 = layout.neighbour(x, axis, dir).expect("interior neighbour");
        let n2 = layout.neighbour(n1, axis, dir).expect("interior neighbour");
        if let Some(k) = layout.interior_position(n1) {
            r[k] += -4.0 * inv * hv;
        }
        if let Some(k) = layout.interior_position(n2) {
            r[k] += inv * hv;
        }
    }
    r
}

/// dt hᵈ Σ_{m=1}^{N} ⟨q^m, w^{m−1}⟩ over interior nodes, per species.
pub fn staggered_pairing(q: &Field, w: &AdjointField, layout: &DomainLayout) -> Vec<f64> {
    let c = layout.dt * layout.cell_volume();
    (0..q.n_species)
        .map(|s| {
            let mut acc = 0.0;
            for m in 1..q.n_levels {
                for &x in layout.interior() {
                    acc += q.get(s, m, x) * w.w.get(s, m - 1, x);
                }
            }
            c * acc
        })
        .collect()
}

/// ∬_Ω q w by the trapezoid rule in time, per species.
pub fn trapezoid_pairing(q: &Field, w: &AdjointField, layout: &DomainLayout) -> Vec<f64> {
    let tw = time_weights(layout);
    let vol = layout.cell_volume();
    (0..q.n_species)
        .map(|s| {
            let mut acc = 0.0;
            for m in 0..q.n_levels {
                for &x in layout.interior() {
                    acc += tw[m] * q.get(s, m, x) * w.w.get(s, m, x);
                }
            }
            vol * acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_layout, Selector, Side};
    use crate::forward::{Potential, SourceTerm};
    use crate::fractime::FracOrderSpec;
    use crate::linearize::solve_nonlinear;
    use crate::measure::{pair_lambda1, pair_lambda2};
    use crate::nonlocal_op::KernelSpec;

    fn space_setup() -> (DomainLayout, SystemSpec) {
        let l = build_layout(1, 16, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, 16).unwrap();
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.3, 1.0), (0.7, 0.5)]).unwrap(), &l)
            .with_alpha(0, vec![0.6])
            .with_potential(0, Potential::transient_from_fn(&l, |x, t| -(1.0 + x[0]) * (1.0 + t)));
        (l, spec)
    }

    fn time_setup() -> (DomainLayout, SystemSpec) {
        let l = build_layout(1, 16, 0.25, &Selector::Side(Side::Right), &Selector::Side(Side::Left), 1.0, 16)
            .unwrap();
        let spec = SystemSpec::time(1, FracOrderSpec::new(vec![vec![(0.3, 1.0), (0.6, 0.5)]]).unwrap(), vec![1.5], &l)
            .with_potential(0, Potential::transient_from_fn(&l, |x, t| -x[0] * (1.0 + t)));
        (l, spec)
    }

    #[test]
    fn zero_datum_gives_zero_adjoint() {
        let (l, spec) = space_setup();
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, _| 0.0);
        for form in [AdjointForm::Pde, AdjointForm::Discrete] {
            assert!(solve_adjoint_space(&spec, &h, &l, form).unwrap().w.is_zero());
        }
        let (lt, st) = time_setup();
        let hg = MeasurementWeight::from_fn(&lt, 1, Region::Gamma, |_, _, _| 0.0);
        assert!(solve_adjoint_time(&st, &hg, &lt, AdjointForm::Pde).unwrap().w.is_zero());
    }

    #[test]
    fn space_discrete_duality_is_exact() {
        let (l, spec) = space_setup();
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| (3.0 * x[0]).sin() + t * t);
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, x, t| (1.0 + x[0]) * (1.0 + t));
        let u = solve_nonlinear(&spec, &q, &l).unwrap();
        let op = crate::nonlocal_op::assemble_nonlocal(&l, spec.kernel.as_ref().unwrap()).unwrap();
        let lam = pair_lambda1(&u, &h, &l, &op, &spec.alpha).unwrap()[0];
        let w = solve_adjoint_space(&spec, &h, &l, AdjointForm::Discrete).unwrap();
        let dual = staggered_pairing(&q.q, &w, &l)[0];
        assert!((lam + dual).abs() <= 1e-11 * lam.abs(), "{lam} {dual}");
    }

    #[test]
    fn time_discrete_duality_is_exact() {
        let (l, spec) = time_setup();
        let q = SourceTerm::from_fn(&l, 1, |_, x, t| (3.0 * x[0]).cos() + t);
        let h = MeasurementWeight::from_fn(&l, 1, Region::Gamma, |_, _, t| 1.0 + t);
        let u = solve_nonlinear(&spec, &q, &l).unwrap();
        let lam = pair_lambda2(&u, &h, &l).unwrap()[0];
        let w = solve_adjoint_time(&spec, &h, &l, AdjointForm::Discrete).unwrap();
        let dual = staggered_pairing(&q.q, &w, &l)[0];
        assert!((lam + dual).abs() <= 1e-11 * lam.abs(), "{lam} {dual}");
    }

    #[test]
    fn terminal_level_vanishes_and_adjoints_are_positive() {
        let (l, spec) = space_setup();
        let h = MeasurementWeight::from_fn(&l, 1, Region::Accessible, |_, _, t| t);
        let w = solve_adjoint_space(&spec, &h, &l, AdjointForm::Pde).unwrap();
        assert!(l.interior().iter().all(|&x| w.w.get(0, l.n_time, x) == 0.0));
        assert!(w.positive_slice(&l, 0).is_some());
        let (lt, st) = time_setup();
        let hg = MeasurementWeight::from_fn(&lt, 1, Region::Gamma, |_, _, _| 1.0);
        for form in [AdjointForm::Pde, AdjointForm::Discrete] {
            let wt = solve_adjoint_time(&st, &hg, &lt, form).unwrap();
            assert!(lt.interior().iter().all(|&x| wt.w.get(0, lt.n_time, x) == 0.0));
            assert!(wt.interior_min(&lt, 0) > 0.0, "{form:?}");
        }
    }
}
