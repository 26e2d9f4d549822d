//! Potential reconstruction from Λ¹ (space case) or Λ² (time case) data.
//!
//! Both routines rely on the discrete duality of `adjoint`: the datum for
//! source φ·V is −dt hᵈ Σ_m V^m ⟨φ, w^{m−1}⟩, so a Gram solve returns the
//! time-weighted adjoint field, and the adjoint equation is then solved for p
//! nodewise.

use super::adjoint::discrete_boundary_source;
use super::basis::{gram_expand, GramSolve, LambdaChoice, SourceBasis};
use super::report::ReconstructionReport;
use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::forward::{laplacian, Potential, SpaceOperators, SystemKind, SystemSpec};
use crate::measure::{synthesize_data, time_weights, MeasureKind, MeasurementSet, MeasurementWeight, Region};
use nalgebra::{DMatrix, DVector};

/// Relative threshold below which the divisor is masked.
pub const DIV_GUARD: f64 = 1e-8;

/// Backward difference (V^m − V^{m−1})/dt, zero at level 0.
pub fn probe_derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let mut dv = vec![0.0; v.len()];
    for m in 1..v.len() {
        dv[m] = (v[m] - v[m - 1]) / dt;
    }
    dv
}

/// Λ¹ data of the linear part of `truth` for the sources φ·v and φ·v′.
pub fn space_potential_data(
    truth: &SystemSpec,
    basis: &SourceBasis,
    v: &[f64],
    h: &MeasurementWeight,
    layout: &DomainLayout,
    noise_rel: f64,
    seed: u64,
) -> Result<(MeasurementSet, MeasurementSet)> {
    let lin = truth.linear_part();
    let dv = probe_derivative(v, layout.dt);
    let b1 = basis.retimed(vec![v.to_vec()]).sources(layout, lin.n_species);
    let b2 = basis.retimed(vec![dv]).sources(layout, lin.n_species);
    let d1 = synthesize_data(&lin, &b1, h, layout, MeasureKind::Lambda1, noise_rel, seed)?;
    let d2 = synthesize_data(&lin, &b2, h, layout, MeasureKind::Lambda1, noise_rel, seed.wrapping_add(1))?;
    Ok((d1, d2))
}

/// Λ² data of the linear part of `truth` for every member of `basis`.
pub fn time_potential_data(
    truth: &SystemSpec,
    basis: &SourceBasis,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    noise_rel: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let lin = truth.linear_part();
    synthesize_data(&lin, &basis.sources(layout, lin.n_species), h, layout, MeasureKind::Lambda2, noise_rel, seed)
}

fn data_column(data: &MeasurementSet, species: usize, expected: usize, kind: MeasureKind) -> Result<DVector<f64>> {
    if data.kind != kind {
        return Err(Error::Input(format!("expected {kind:?} data, got {:?}", data.kind)));
    }
    if data.values.len() != expected {
        return Err(Error::Input(format!("{} data rows for {expected} basis members", data.values.len())));
    }
    Ok(DVector::from_fn(expected, |n, _| data.values[n][species]))
}

fn interior_vector(layout: &DomainLayout, full: &[f64]) -> DVector<f64> {
    DVector::from_iterator(layout.n_interior_nodes(), layout.interior().iter().map(|&x| full[x]))
}

fn guard(a: &DVector<f64>) -> Result<Vec<bool>> {
    let floor = DIV_GUARD * a.amax();
    let mask: Vec<bool> = a.iter().map(|v| !(v.abs() > floor)).collect();
    if mask.iter().all(|&m| m) {
        return Err(Error::AllMasked);
    }
    Ok(mask)
}

fn record_solve(report: &mut ReconstructionReport, s: usize, sol: &GramSolve) {
    report.residual_norms.insert(format!("gram_residual_s{s}"), sol.residual);
    report.lambda = Some(report.lambda.map_or(sol.lambda, |l: f64| l.max(sol.lambda)));
    report.gram_condition = Some(report.gram_condition.map_or(sol.condition, |c: f64| c.max(sol.condition)));
}

fn attach_truth(
    report: ReconstructionReport,
    truth: Option<&[Potential]>,
    points: &[(usize, usize, usize)],
) -> ReconstructionReport {
    match truth {
        Some(t) => {
            let tv = points.iter().map(|&(s, m, x)| t[s].at(m, x)).collect();
            report.with_truth(tv)
        }
        None => report,
    }
}

/// Recovers a stationary p(x) for the space-nonlocal system.
///
/// `template` supplies the kernel and drift; its potential is ignored.
/// `basis` supplies the spatial members; `data_v` and `data_dv` are the Λ¹
/// data for the sources φ·v and φ·v′, with v(0) = 0.
#[allow(clippy::too_many_arguments)]
pub fn recover_potential_space(
    template: &SystemSpec,
    basis: &SourceBasis,
    v: &[f64],
    data_v: &MeasurementSet,
    data_dv: &MeasurementSet,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    choice: LambdaChoice,
    truth: Option<&[Potential]>,
) -> Result<ReconstructionReport> {
    if template.kind() != Some(SystemKind::Space) {
        return Err(Error::System("space recovery needs a space-nonlocal template".into()));
    }
    if v.len() != layout.n_levels() {
        return Err(Error::Input("probe weight length must equal n_time + 1".into()));
    }
    if v[0] != 0.0 {
        return Err(Error::Input("probe weight must vanish at t = 0".into()));
    }
    if h.region != Region::Accessible {
        return Err(Error::Input("space recovery datum must live on Ω_a".into()));
    }
    h.validate(layout)?;
    let mut spec = template.linear_part();
    for s in 0..spec.n_species {
        spec = spec.with_potential(s, Potential::zeros(layout));
    }
    spec.validate(layout)?;
    let ops = SpaceOperators::new(layout, &spec)?;
    let nodes = layout.interior();
    let acc = layout.accessible();
    let coupling = ops.nonlocal.coupling(nodes, acc);
    let g = basis.spatial_gram(layout);
    let l = basis.spatial_smoothing(layout.dim);
    let k = basis.spatial.len();
    let tw = time_weights(layout);
    let mut report = ReconstructionReport::new("potential_space");
    let mut points = Vec::new();
    for s in 0..spec.n_species {
        let d1 = data_column(data_v, s, k, MeasureKind::Lambda1)?;
        let d2 = data_column(data_dv, s, k, MeasureKind::Lambda1)?;
        let sol1 = gram_expand(&g, &l, &(-d1), choice)?;
        let sol2 = gram_expand(&g, &l, &(-d2), choice)?;
        record_solve(&mut report, s, &sol1);
        let a_v = interior_vector(layout, &basis.synthesize_spatial(&sol1.coeffs, layout));
        let a_dv = interior_vector(layout, &basis.synthesize_spatial(&sol2.coeffs, layout));
        let mut hv = DVector::zeros(acc.len());
        for m in 1..layout.n_levels() {
            for (j, &y) in acc.iter().enumerate() {
                hv[j] += tw[m] * v[m] * h.h.get(s, m, y);
            }
        }
        let numer = &a_dv + ops.spatial(s).transpose() * &a_v + &coupling * hv;
        let mask = guard(&a_v)?;
        for (i, &x) in nodes.iter().enumerate() {
            let p = if mask[i] { f64::NAN } else { numer[i] / a_v[i] };
            report.push(format!("s{s}:x{x}"), p, mask[i]);
            points.push((s, 0, x));
        }
        report.extra.insert(format!("min_weighted_adjoint_s{s}"), a_v.min());
    }
    Ok(attach_truth(report, truth, &points))
}

fn time_setup(template: &SystemSpec, h: &MeasurementWeight, layout: &DomainLayout) -> Result<SystemSpec> {
    if template.kind() != Some(SystemKind::Time) {
        return Err(Error::System("time recovery needs a time-fractional template".into()));
    }
    if template.has_drift() {
        return Err(Error::Input("time recovery is implemented for zero drift".into()));
    }
    if h.region != Region::Gamma {
        return Err(Error::Input("time recovery datum must live on Γ".into()));
    }
    h.validate(layout)?;
    let mut spec = template.linear_part();
    for s in 0..spec.n_species {
        spec = spec.with_potential(s, Potential::zeros(layout));
    }
    spec.validate(layout)?;
    Ok(spec)
}

/// ρ_{m} of the discrete time adjoint, m = 1..=N.
fn boundary_forcing(layout: &DomainLayout, h: &MeasurementWeight, s: usize, m: usize) -> DVector<f64> {
    let tw = time_weights(layout);
    let area = layout.h.powi(layout.dim as i32 - 1);
    let c = tw[m] * area / (layout.dt * layout.cell_volume());
    discrete_boundary_source(layout, h, s, m).scale(-c)
}

/// Recovers p(x, t) at levels 1..=N for the time-fractional system from the
/// Λ² data of a space-time basis.
pub fn recover_potential_time(
    template: &SystemSpec,
    basis: &SourceBasis,
    data: &MeasurementSet,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    choice: LambdaChoice,
    truth: Option<&[Potential]>,
) -> Result<ReconstructionReport> {
    let spec = time_setup(template, h, layout)?;
    let frac = spec.frac.as_ref().expect("time spec");
    let nodes = layout.interior();
    let n = nodes.len();
    let nt = layout.n_time;
    let g = basis.gram(layout);
    let l = basis.smoothing(layout.dim);
    let mut report = ReconstructionReport::new("potential_time");
    let mut points = Vec::new();
    for s in 0..spec.n_species {
        let d = data_column(data, s, basis.len(), MeasureKind::Lambda2)?;
        let sol = gram_expand(&g, &l, &(-d), choice)?;
        record_solve(&mut report, s, &sol);
        let y = basis.synthesize(&sol.coeffs, layout);
        // w_j = y^{j+1}, w_N = 0
        let mut w: Vec<DVector<f64>> = (0..nt).map(|j| interior_vector(layout, &y[j + 1])).collect();
        w.push(DVector::zeros(n));
        let a = frac.combined_weights(s, layout.dt, nt)?;
        let k_mat = laplacian(layout, spec.diffusion[s]);
        let wmax = w.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let floor = DIV_GUARD * wmax;
        let mut any = false;
        for m in 0..nt {
            let mut lhs = &k_mat * &w[m] - boundary_forcing(layout, h, s, m + 1);
            for j in m..nt {
                lhs.axpy(a[j - m], &(&w[j] - &w[j + 1]), 1.0);
            }
            for (i, &x) in nodes.iter().enumerate() {
                let masked = !(w[m][i].abs() > floor);
                any |= !masked;
                let p = if masked { f64::NAN } else { lhs[i] / w[m][i] };
                report.push(format!("s{s}:m{}:x{x}", m + 1), p, masked);
                points.push((s, m + 1, x));
            }
        }
        if !any {
            return Err(Error::AllMasked);
        }
    }
    Ok(attach_truth(report, truth, &points))
}

/// Source time profiles for the stationary variant: V₁^m = c_{m−1} and
/// V₂^m = (Rᵀc)_{m−1}, where (Rᵀc)_j = Σ_{m≤j} c_m a_{j−m} − Σ_{m≤j−1} c_m a_{j−1−m}.
pub fn stationary_time_profiles(template: &SystemSpec, c: &[f64], layout: &DomainLayout) -> Result<(Vec<f64>, Vec<f64>)> {
    let frac = template.frac.as_ref().ok_or_else(|| Error::System("time template needs orders".into()))?;
    let nt = layout.n_time;
    if c.len() != nt {
        return Err(Error::Input(format!("time weight needs {nt} entries")));
    }
    let a = frac.combined_weights(0, layout.dt, nt)?;
    for s in 1..template.n_species {
        if frac.combined_weights(s, layout.dt, nt)? != a {
            return Err(Error::Input("stationary variant needs equal orders across species".into()));
        }
    }
    let e: Vec<f64> = (0..nt).map(|j| (0..=j).map(|m| c[m] * a[j - m]).sum()).collect();
    let mut v1 = vec![0.0; nt + 1];
    let mut v2 = vec![0.0; nt + 1];
    for j in 0..nt {
        v1[j + 1] = c[j];
        v2[j + 1] = e[j] - if j > 0 { e[j - 1] } else { 0.0 };
    }
    Ok((v1, v2))
}

/// Stationary p(x) for the time-fractional system from spatial-only
/// members and two time profiles (see `stationary_time_profiles`).
#[allow(clippy::too_many_arguments)]
pub fn recover_potential_time_stationary(
    template: &SystemSpec,
    basis: &SourceBasis,
    c: &[f64],
    data_1: &MeasurementSet,
    data_2: &MeasurementSet,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    choice: LambdaChoice,
    truth: Option<&[Potential]>,
) -> Result<ReconstructionReport> {
    let spec = time_setup(template, h, layout)?;
    stationary_time_profiles(&spec, c, layout)?;
    let nodes = layout.interior();
    let n = nodes.len();
    let g = basis.spatial_gram(layout);
    let l = basis.spatial_smoothing(layout.dim);
    let k = basis.spatial.len();
    let mut report = ReconstructionReport::new("potential_time_stationary");
    let mut points = Vec::new();
    for s in 0..spec.n_species {
        let sol1 = gram_expand(&g, &l, &(-data_column(data_1, s, k, MeasureKind::Lambda2)?), choice)?;
        let sol2 = gram_expand(&g, &l, &(-data_column(data_2, s, k, MeasureKind::Lambda2)?), choice)?;
        record_solve(&mut report, s, &sol1);
        let a1 = interior_vector(layout, &basis.synthesize_spatial(&sol1.coeffs, layout));
        let a2 = interior_vector(layout, &basis.synthesize_spatial(&sol2.coeffs, layout));
        let mut rho = DVector::zeros(n);
        for (j, &cj) in c.iter().enumerate() {
            rho.axpy(layout.dt * cj, &boundary_forcing(layout, h, s, j + 1), 1.0);
        }
        let k_mat: DMatrix<f64> = laplacian(layout, spec.diffusion[s]);
        let numer = &a2 + &k_mat * &a1 - rho;
        let mask = guard(&a1)?;
        for (i, &x) in nodes.iter().enumerate() {
            let p = if mask[i] { f64::NAN } else { numer[i] / a1[i] };
            report.push(format!("s{s}:x{x}"), p, mask[i]);
            points.push((s, 0, x));
        }
    }
    Ok(attach_truth(report, truth, &points))
}
