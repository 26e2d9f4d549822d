//! High-order linearization around the zero solution.
//!
//! For q = Σ ε_l g_l the derivatives u^(S) = ∂_{ε_S} u|_{ε=0}, S a multiset of
//! member labels, solve the linear system with source g_l (|S| = 1) or with the
//! Faà di Bruno expansion of F over lower-order fields (|S| ≥ 2). Since every
//! admissible monomial has degree ≥ 2 and u(0) = 0, only set partitions with at
//! least two blocks contribute, each through the multilinear form
//!
//! ```text
//! D^b F_i(0)[v_1, …, v_b] = Σ_{deg k = b} F_i^k · k! · Σ_{σ: |σ⁻¹(j)| = k_j} Π_r v_r[σ(r)]
//! ```
//!
//! with k! = Π_j k_j!.

use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::{
    solve_space_with, solve_time_fractional, SourceTerm, SpaceOperators, SystemKind, SystemSpec,
};
use std::collections::BTreeMap;

pub const EPS_MAX: f64 = 1e-2;

/// q(ε) = Σ ε_l g_l.
#[derive(Clone, Debug)]
pub struct SourceFamily {
    pub members: Vec<SourceTerm>,
    pub epsilons: Vec<f64>,
}

impl SourceFamily {
    pub fn new(members: Vec<SourceTerm>, epsilons: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != epsilons.len() {
            return Err(Error::Input("family needs one epsilon per member".into()));
        }
        let norm = epsilons.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm > EPS_MAX * (1.0 + 1e-12) || epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Input(format!("epsilons must be nonnegative with |ε| <= {EPS_MAX}")));
        }
        Ok(SourceFamily { members, epsilons })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn combined(&self) -> SourceTerm {
        let mut q = self.members[0].q.scaled(self.epsilons[0]);
        for (g, &e) in self.members.iter().zip(&self.epsilons).skip(1) {
            q.add_scaled(&g.q, e);
        }
        SourceTerm { q }
    }
}

/// Solver for the linear part of a spec, with operators assembled once.
pub struct LinearSolver<'a> {
    spec: SystemSpec,
    layout: &'a DomainLayout,
    ops: Option<SpaceOperators>,
}

impl<'a> LinearSolver<'a> {
    pub fn new(spec: &SystemSpec, layout: &'a DomainLayout) -> Result<Self> {
        let spec = spec.linear_part();
        spec.validate(layout)?;
        let ops = match spec.kind() {
            Some(SystemKind::Space) => Some(SpaceOperators::new(layout, &spec)?),
            _ => None,
        };
        Ok(LinearSolver { spec, layout, ops })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn solve(&self, source: &SourceTerm) -> Result<Field> {
        let s = match &self.ops {
            Some(ops) => solve_space_with(ops, &self.spec, source, self.layout)?,
            None => solve_time_fractional(&self.spec, source, self.layout)?,
        };
        Ok(s.u)
    }
}

/// u^(l): the linear system with source g_l.
pub fn solve_first_order(spec: &SystemSpec, g: &SourceTerm, layout: &DomainLayout) -> Result<Field> {
    LinearSolver::new(spec, layout)?.solve(g)
}

/// u^(1,2) from the first-order fields u^(1), u^(2).
pub fn solve_second_order(spec: &SystemSpec, u1: &Field, u2: &Field, layout: &DomainLayout) -> Result<Field> {
    let mut fields = BTreeMap::new();
    fields.insert(vec![0], u1.clone());
    fields.insert(vec![1], u2.clone());
    let src = higher_order_source(spec, &fields, &[0, 1], layout)?;
    LinearSolver::new(spec, layout)?.solve(&src)
}

/// Source of the order-|labels| system. `fields` maps sorted label multisets
/// to already computed derivatives.
pub fn higher_order_source(
    spec: &SystemSpec,
    fields: &BTreeMap<Vec<usize>, Field>,
    labels: &[usize],
    layout: &DomainLayout,
) -> Result<SourceTerm> {
    let l = labels.len();
    if l < 2 {
        return Err(Error::Input("higher-order sources start at degree 2".into()));
    }
    if l > spec.max_order {
        return Err(Error::Input(format!("degree {l} exceeds max_order {}", spec.max_order)));
    }
    let m_sp = spec.n_species;
    let mut out = Field::on_layout(layout, m_sp);
    if spec.interaction.is_empty() {
        return Ok(SourceTerm { q: out });
    }
    let parts: Vec<Vec<Vec<usize>>> = set_partitions(l).into_iter().filter(|p| p.len() >= 2).collect();
    // block key per partition, resolved to fields up front
    let mut resolved: Vec<Vec<&Field>> = Vec::with_capacity(parts.len());
    for p in &parts {
        let mut fs = Vec::with_capacity(p.len());
        for block in p {
            let mut key: Vec<usize> = block.iter().map(|&r| labels[r]).collect();
            key.sort_unstable();
            let f = fields
                .get(&key)
                .ok_or_else(|| Error::Input(format!("missing lower-order field for labels {key:?}")))?;
            f.check_shape(layout, m_sp, "lower-order field")?;
            fs.push(f);
        }
        resolved.push(fs);
    }
    // monomials grouped by degree, with their assignment lists
    let mut forms: BTreeMap<usize, Vec<(usize, f64, Vec<Vec<usize>>)>> = BTreeMap::new();
    for i in 0..m_sp {
        for (k, c) in spec.interaction.terms[i].iter() {
            if *c == 0.0 {
                continue;
            }
            let b = k.iter().sum::<u32>() as usize;
            if b > l {
                continue;
            }
            let kf: f64 = k.iter().map(|&e| factorial(e as u64) as f64).product();
            forms.entry(b).or_default().push((i, c * kf, assignments(k)));
        }
    }
    let mut vals = vec![0.0; m_sp];
    for (p, fs) in parts.iter().zip(&resolved) {
        let Some(terms) = forms.get(&p.len()) else { continue };
        for lev in 0..layout.n_levels() {
            for &x in layout.interior() {
                vals.iter_mut().for_each(|v| *v = 0.0);
                for (i, coef, assign) in terms {
                    let mut s = 0.0;
                    for sig in assign {
                        let mut prod = 1.0;
                        for (r, &j) in sig.iter().enumerate() {
                            prod *= fs[r].get(j, lev, x);
                            if prod == 0.0 {
                                break;
                            }
                        }
                        s += prod;
                    }
                    vals[*i] += coef * s;
                }
                for (i, v) in vals.iter().enumerate() {
                    if *v != 0.0 {
                        let o = out.get(i, lev, x);
                        out.set(i, lev, x, o + v);
                    }
                }
            }
        }
    }
    Ok(SourceTerm { q: out })
}

pub(crate) fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

/// All set partitions of {0, …, n−1}, blocks in order of first element.
pub fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    fn go(i: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..cur.len() {
            cur[b].push(i);
            go(i + 1, n, cur, out);
            cur[b].pop();
        }
        cur.push(vec![i]);
        go(i + 1, n, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    go(0, n, &mut Vec::new(), &mut out);
    out
}

/// Maps σ: {0..b−1} → species with |σ⁻¹(j)| = k_j.
pub(crate) fn assignments(k: &[u32]) -> Vec<Vec<usize>> {
    fn go(pos: usize, b: usize, left: &mut Vec<u32>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == b {
            out.push(cur.clone());
            return;
        }
        for j in 0..left.len() {
            if left[j] > 0 {
                left[j] -= 1;
                cur.push(j);
                go(pos + 1, b, left, cur, out);
                cur.pop();
                left[j] += 1;
            }
        }
    }
    let b = k.iter().sum::<u32>() as usize;
    let mut out = Vec::new();
    go(0, b, &mut k.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// First- and second-order fields of a family.
#[derive(Clone, Debug)]
pub struct LinearizedBundle {
    pub first: Vec<Field>,
    /// Keyed by (l, l′) with l ≤ l′.
    pub second: BTreeMap<(usize, usize), Field>,
}

pub fn linearize(spec: &SystemSpec, family: &SourceFamily, layout: &DomainLayout) -> Result<LinearizedBundle> {
    use rayon::prelude::*;
    let solver = LinearSolver::new(spec, layout)?;
    let first = family.members.par_iter().map(|g| solver.solve(g)).collect::<Result<Vec<_>>>()?;
    let mut fields = BTreeMap::new();
    for (l, f) in first.iter().enumerate() {
        fields.insert(vec![l], f.clone());
    }
    let k = first.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
    let second = pairs
        .par_iter()
        .map(|&(a, b)| {
            let src = higher_order_source(spec, &fields, &[a, b], layout)?;
            Ok(((a, b), solver.solve(&src)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(LinearizedBundle { first, second })
}

/// Solution of the full nonlinear system for source q.
pub fn solve_nonlinear(spec: &SystemSpec, q: &SourceTerm, layout: &DomainLayout) -> Result<Field> {
    let s = match spec.kind() {
        Some(SystemKind::Space) => crate::forward::solve_space_nonlocal(spec, q, layout)?,
        _ => solve_time_fractional(spec, q, layout)?,
    };
    Ok(s.u)
}

/// ‖u(εg)/ε − u^(1)‖_∞ / ‖u^(1)‖_∞.
pub fn fd_first_order_error(spec: &SystemSpec, g: &SourceTerm, layout: &DomainLayout, eps: f64) -> Result<f64> {
    let u1 = solve_first_order(spec, g, layout)?;
    let mut fd = solve_nonlinear(spec, &g.scaled(eps), layout)?.scaled(1.0 / eps);
    fd.add_scaled(&u1, -1.0);
    Ok(fd.max_abs() / u1.max_abs())
}

/// ‖[u(ε,ε) − u(ε,0) − u(0,ε)]/ε² − u^(1,2)‖_∞ / ‖u^(1,2)‖_∞.
pub fn fd_second_order_error(
    spec: &SystemSpec,
    g1: &SourceTerm,
    g2: &SourceTerm,
    layout: &DomainLayout,
    eps: f64,
) -> Result<f64> {
    let u1 = solve_first_order(spec, g1, layout)?;
    let u2 = solve_first_order(spec, g2, layout)?;
    let u12 = solve_second_order(spec, &u1, &u2, layout)?;
    let both = SourceTerm::sum(&g1.scaled(eps), &g2.scaled(eps));
    let mut fd = solve_nonlinear(spec, &both, layout)?;
    fd.add_scaled(&solve_nonlinear(spec, &g1.scaled(eps), layout)?, -1.0);
    fd.add_scaled(&solve_nonlinear(spec, &g2.scaled(eps), layout)?, -1.0);
    let mut fd = fd.scaled(1.0 / (eps * eps));
    fd.add_scaled(&u12, -1.0);
    Ok(fd.max_abs() / u12.max_abs())
}

/// Least-squares slope of log(err) against log(eps).
pub fn fitted_slope(eps: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
