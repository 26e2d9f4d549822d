//! Taylor coefficients of the interaction from linearized pairings.
//!
//! For a multiset S of first-order source labels with |S| = l, the pairing of
//! u^(S) with h equals −dt hᵈ Σ_m ⟨src_S^m, w^{m−1}⟩. Only the partition of S
//! into singletons carries degree-l coefficients, so each S gives one linear
//! row per species in those unknowns once the lower degrees are known.

use super::adjoint::{solve_adjoint_space, solve_adjoint_time, AdjointField, AdjointForm};
use super::report::ReconstructionReport;
use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::{Interaction, MultiIndex, SourceTerm, SystemKind, SystemSpec};
use crate::linearize::{assignments, factorial, higher_order_source, LinearSolver};
use crate::measure::{pair, MeasureKind, MeasurementWeight};
use crate::nonlocal_op::assemble_nonlocal;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Relative singular value below which a direction counts as unresolved.
pub const RANK_TOL: f64 = 1e-9;

/// Pairings of the linearized fields u^(S), keyed by sorted label multisets.
#[derive(Clone, Debug)]
pub struct InteractionData {
    pub kind: MeasureKind,
    pub sources: Vec<SourceTerm>,
    pub pairings: BTreeMap<Vec<usize>, Vec<f64>>,
}

/// Sorted multisets of size `size` drawn from `0..n`.
pub fn multisets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for l in start..n {
            cur.push(l);
            go(l, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, size, &mut Vec::new(), &mut out);
    out
}

/// Admissible multi-indices of species `i` with total degree `deg`.
pub fn admissible_indices(n_species: usize, i: usize, deg: u32) -> Vec<MultiIndex> {
    fn go(j: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if j + 1 == cur.len() {
            cur[j] = left;
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[j] = e;
            go(j + 1, left - e, cur, out);
        }
    }
    let mut all = Vec::new();
    go(0, deg, &mut vec![0; n_species], &mut all);
    all.retain(|k| k[i] >= 1);
    all
}

/// u^(S) for every multiset S with 1 ≤ |S| ≤ `max_degree`.
pub fn derivative_fields(
    spec: &SystemSpec,
    sources: &[SourceTerm],
    max_degree: usize,
    layout: &DomainLayout,
) -> Result<BTreeMap<Vec<usize>, Field>> {
    let solver = LinearSolver::new(spec, layout)?;
    let mut fields = BTreeMap::new();
    let first = sources.par_iter().map(|g| solver.solve(g)).collect::<Result<Vec<_>>>()?;
    for (l, f) in first.into_iter().enumerate() {
        fields.insert(vec![l], f);
    }
    for size in 2..=max_degree {
        let level = multisets(sources.len(), size)
            .into_par_iter()
            .map(|s| {
                let src = higher_order_source(spec, &fields, &s, layout)?;
                Ok((s, solver.solve(&src)?))
            })
            .collect::<Result<Vec<_>>>()?;
        fields.extend(level);
    }
    Ok(fields)
}

/// Synthesizes the pairings of u^(S), |S| = 2..=max_degree, under `truth`.
pub fn interaction_data(
    truth: &SystemSpec,
    sources: &[SourceTerm],
    h: &MeasurementWeight,
    layout: &DomainLayout,
    kind: MeasureKind,
    max_degree: usize,
) -> Result<InteractionData> {
    let spec = truth.clone().with_max_order(truth.max_order.max(max_degree));
    let fields = derivative_fields(&spec, sources, max_degree, layout)?;
    let op = match (&spec.kernel, kind) {
        (Some(k), MeasureKind::Lambda1 | MeasureKind::Lambda1Flux) => Some(assemble_nonlocal(layout, k)?),
        _ => None,
    };
    let pairings = fields
        .iter()
        .filter(|(s, _)| s.len() >= 2)
        .map(|(s, u)| Ok((s.clone(), pair(kind, u, h, layout, op.as_ref(), &spec.alpha)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(InteractionData { kind, sources: sources.to_vec(), pairings })
}

/// −dt hᵈ Σ_{m≥1} ⟨q_s^m, w_s^{m−1}⟩.
fn adjoint_pairing(q: &Field, s: usize, w: &AdjointField, layout: &DomainLayout) -> f64 {
    let mut acc = 0.0;
    for m in 1..q.n_levels {
        for &x in layout.interior() {
            acc += q.get(s, m, x) * w.w.get(s, m - 1, x);
        }
    }
    -layout.dt * layout.cell_volume() * acc
}

/// k!·Σ_σ Π_r u^{(S_r)}[σ(r)] written into species slot `i`.
fn monomial_form(k: &[u32], singles: &[&Field], i: usize, layout: &DomainLayout) -> Field {
    let kf: f64 = k.iter().map(|&e| factorial(e as u64) as f64).product();
    let assign = assignments(k);
    let mut out = Field::on_layout(layout, k.len());
    for lev in 1..layout.n_levels() {
        for &x in layout.interior() {
            let mut s = 0.0;
            for sig in &assign {
                s += sig.iter().enumerate().map(|(r, &j)| singles[r].get(j, lev, x)).product::<f64>();
            }
            out.set(i, lev, x, kf * s);
        }
    }
    out
}

fn index_label(i: usize, k: &[u32]) -> String {
    let parts: Vec<String> = k.iter().map(|e| e.to_string()).collect();
    format!("F{}:({})", i + 1, parts.join(","))
}

/// Degree-by-degree least squares for every admissible coefficient of degree
/// 2..=`max_degree`. `template` supplies the known linear part.
pub fn recover_interaction(
    template: &SystemSpec,
    data: &InteractionData,
    h: &MeasurementWeight,
    layout: &DomainLayout,
    max_degree: usize,
    truth: Option<&Interaction>,
) -> Result<(Interaction, ReconstructionReport)> {
    if max_degree < 2 {
        return Err(Error::Input("interaction degrees start at 2".into()));
    }
    let lin = template.linear_part().with_max_order(max_degree);
    let m_sp = lin.n_species;
    let w = match (lin.kind(), data.kind) {
        (Some(SystemKind::Space), MeasureKind::Lambda1) => solve_adjoint_space(&lin, h, layout, AdjointForm::Discrete)?,
        (Some(SystemKind::Time), MeasureKind::Lambda2) => solve_adjoint_time(&lin, h, layout, AdjointForm::Discrete)?,
        (k, d) => return Err(Error::Input(format!("no duality for {d:?} data on a {k:?} system"))),
    };
    let n_src = data.sources.len();
    let mut recovered = Interaction::new(m_sp);
    let mut report = ReconstructionReport::new("interaction");
    let mut truth_vals = Vec::new();
    for deg in 2..=max_degree {
        let known = lin.clone().with_interaction(recovered.clone());
        let fields = derivative_fields(&known, &data.sources, deg - 1, layout)?;
        let rows = multisets(n_src, deg);
        // per S: pairing of the known lower-degree part, and the monomial rows
        let assembled = rows
            .par_iter()
            .map(|s| {
                let d = data
                    .pairings
                    .get(s)
                    .ok_or_else(|| Error::Input(format!("missing pairing for labels {s:?}")))?;
                let base = if deg > 2 {
                    let src = higher_order_source(&known, &fields, s, layout)?;
                    (0..m_sp).map(|i| adjoint_pairing(&src.q, i, &w, layout)).collect()
                } else {
                    vec![0.0; m_sp]
                };
                let singles: Vec<&Field> = s.iter().map(|&l| &fields[&vec![l]]).collect();
                let coeffs: Vec<Vec<f64>> = (0..m_sp)
                    .map(|i| {
                        admissible_indices(m_sp, i, deg as u32)
                            .iter()
                            .map(|k| adjoint_pairing(&monomial_form(k, &singles, i, layout), i, &w, layout))
                            .collect()
                    })
                    .collect();
                Ok((d.clone(), base, coeffs))
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..m_sp {
            let idx = admissible_indices(m_sp, i, deg as u32);
            let a = DMatrix::from_fn(rows.len(), idx.len(), |r, c| assembled[r].2[i][c]);
            let b = DVector::from_fn(rows.len(), |r, _| assembled[r].0[i] - assembled[r].1[i]);
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let v_t = svd.v_t.as_ref().expect("svd vectors");
            let mut unresolved = Vec::new();
            for (j, &sv) in svd.singular_values.iter().enumerate() {
                if !(sv > RANK_TOL * smax) || idx.len() > rows.len() {
                    for (c, k) in idx.iter().enumerate() {
                        if v_t[(j, c)].abs() > 1e-3 {
                            unresolved.push(index_label(i, k));
                        }
                    }
                }
            }
            if idx.len() > rows.len() || !unresolved.is_empty() || smax == 0.0 {
                unresolved.sort();
                unresolved.dedup();
                if unresolved.is_empty() {
                    unresolved = idx.iter().map(|k| index_label(i, k)).collect();
                }
                return Err(Error::RankDeficient(unresolved));
            }
            let x = svd.solve(&b, RANK_TOL * smax).map_err(|e| Error::Singular(e.to_string()))?;
            let res = (&a * &x - &b).norm();
            report.residual_norms.insert(format!("degree{deg}_s{i}"), res);
            report.extra.insert(format!("degree{deg}_s{i}_condition"), smax / svd.singular_values.min());
            for (c, k) in idx.iter().enumerate() {
                recovered.insert(i, k.clone(), x[c])?;
                report.push(index_label(i, k), x[c], false);
                if let Some(t) = truth {
                    truth_vals.push(t.coefficient(i, k));
                }
            }
        }
    }
    let report = if truth.is_some() { report.with_truth(truth_vals) } else { report };
    Ok((recovered, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_layout, Selector, Side};
    use crate::forward::Potential;
    use crate::fractime::FracOrderSpec;
    use crate::measure::Region;
    use crate::nonlocal_op::KernelSpec;

    #[test]
    fn counting_helpers() {
        assert_eq!(multisets(3, 2).len(), 6);
        assert_eq!(multisets(3, 3).len(), 10);
        assert_eq!(admissible_indices(2, 0, 2), vec![vec![1, 1], vec![2, 0]]);
        assert_eq!(admissible_indices(2, 1, 3).len(), 3);
    }

    fn sources(layout: &DomainLayout, m: usize) -> Vec<SourceTerm> {
        vec![
            SourceTerm::from_fn(layout, m, |s, x, t| t * (1.0 + s as f64 * x[0])),
            SourceTerm::from_fn(layout, m, |s, x, t| t * t * (2.0 - x[0]) * (1.0 + 0.5 * s as f64)),
            SourceTerm::from_fn(layout, m, |s, x, t| t.sqrt() * (std::f64::consts::PI * x[0]).sin() * (1.0 + s as f64 * t)),
        ]
    }

    #[test]
    fn space_gray_scott_coefficients() {
        let layout = build_layout(1, 12, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, 8).unwrap();
        let f = Interaction::new(2).with(0, &[1, 2], -0.04).unwrap().with(1, &[1, 2], 0.04).unwrap();
        let spec = SystemSpec::space(2, KernelSpec::new(&[(0.5, 1.0)]).unwrap(), &layout)
            .with_potential(0, Potential::constant(&layout, -0.04))
            .with_potential(1, Potential::constant(&layout, -0.1))
            .with_interaction(f.clone());
        let h = MeasurementWeight::from_fn(&layout, 2, Region::Accessible, |_, _, t| 1.0 + t);
        let data = interaction_data(&spec, &sources(&layout, 2), &h, &layout, MeasureKind::Lambda1, 3).unwrap();
        let (got, r) = recover_interaction(&spec, &data, &h, &layout, 3, Some(&f)).unwrap();
        assert!(r.max_abs_error.unwrap() < 1e-8, "{:?}", r);
        assert!((got.coefficient(1, &[1, 2]) - 0.04).abs() < 1e-8);
    }

    #[test]
    fn zero_truth_and_time_case() {
        let layout = build_layout(1, 12, 0.25, &Selector::All, &Selector::Side(Side::Left), 1.0, 8).unwrap();
        let spec = SystemSpec::time(1, FracOrderSpec::uniform(1, 0.6).unwrap(), vec![1.0], &layout)
            .with_potential(0, Potential::constant(&layout, -0.5));
        let h = MeasurementWeight::from_fn(&layout, 1, Region::Gamma, |_, _, _| 1.0);
        let data = interaction_data(&spec, &sources(&layout, 1), &h, &layout, MeasureKind::Lambda2, 3).unwrap();
        let (got, _) = recover_interaction(&spec, &data, &h, &layout, 3, None).unwrap();
        for e in got.entries() {
            assert!(e.value.abs() < 1e-8, "{e:?}");
        }
        let f = Interaction::new(1).with(0, &[2], 0.3).unwrap().with(0, &[3], -0.2).unwrap();
        let spec = spec.with_interaction(f.clone());
        let data = interaction_data(&spec, &sources(&layout, 1), &h, &layout, MeasureKind::Lambda2, 3).unwrap();
        let (_, r) = recover_interaction(&spec, &data, &h, &layout, 3, Some(&f)).unwrap();
        assert!(r.max_abs_error.unwrap() < 1e-8, "{r:?}");
    }

    #[test]
    fn one_source_cannot_resolve_two_species() {
        let layout = build_layout(1, 8, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, 4).unwrap();
        let spec = SystemSpec::space(2, KernelSpec::new(&[(0.5, 1.0)]).unwrap(), &layout)
            .with_potential(0, Potential::constant(&layout, -0.1))
            .with_potential(1, Potential::constant(&layout, -0.1));
        let h = MeasurementWeight::from_fn(&layout, 2, Region::Accessible, |_, _, _| 1.0);
        let src = vec![SourceTerm::from_fn(&layout, 2, |_, _, t| t)];
        let data = interaction_data(&spec, &src, &h, &layout, MeasureKind::Lambda1, 2).unwrap();
        assert!(matches!(recover_interaction(&spec, &data, &h, &layout, 2, None), Err(Error::RankDeficient(_))));
    }
}
