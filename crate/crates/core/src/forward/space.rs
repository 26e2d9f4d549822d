//! Backward Euler for ∂_t u − 𝓛u + α·∇u = pu + F(u) + q with u = 0 outside Ω.

use super::stepper::Stepper;
use super::system::{SourceTerm, StateField, SystemKind, SystemSpec};
use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::nonlocal_op::{assemble_drift, assemble_nonlocal, NonlocalOperator};
use nalgebra::{DMatrix, DVector};

/// Assembled spatial operators of a space-nonlocal spec, reusable across
/// solves with different sources.
#[derive(Clone, Debug)]
pub struct SpaceOperators {
    pub nonlocal: NonlocalOperator,
    /// −𝓛 on interior nodes.
    pub neg_l: DMatrix<f64>,
    /// Upwind α_i·∇ on interior nodes, per species.
    pub drift: Vec<DMatrix<f64>>,
}

impl SpaceOperators {
    pub fn new(layout: &DomainLayout, spec: &SystemSpec) -> Result<Self> {
        let kernel = spec
            .kernel
            .as_ref()
            .ok_or_else(|| Error::System("space-nonlocal solve needs a kernel".into()))?;
        let nonlocal = assemble_nonlocal(layout, kernel)?;
        let neg_l = nonlocal.interior_table().table;
        let drift = spec
            .alpha
            .iter()
            .map(|a| assemble_drift(layout, a).map(|d| d.table))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpaceOperators { nonlocal, neg_l, drift })
    }

    /// −𝓛 + α_i·∇ on interior nodes.
    pub fn spatial(&self, species: usize) -> DMatrix<f64> {
        &self.neg_l + &self.drift[species]
    }
}

pub fn solve_space_nonlocal(spec: &SystemSpec, source: &SourceTerm, layout: &DomainLayout) -> Result<StateField> {
    let ops = SpaceOperators::new(layout, spec)?;
    solve_space_with(&ops, spec, source, layout)
}

/// Same as [`solve_space_nonlocal`] with operators assembled beforehand.
pub fn solve_space_with(
    ops: &SpaceOperators,
    spec: &SystemSpec,
    source: &SourceTerm,
    layout: &DomainLayout,
) -> Result<StateField> {
    spec.validate(layout)?;
    if spec.kind() != Some(SystemKind::Space) {
        return Err(Error::System("spec is not a space-nonlocal system".into()));
    }
    source.q.check_shape(layout, spec.n_species, "source")?;
    let nodes = layout.interior();
    let n = nodes.len();
    let inv_dt = 1.0 / layout.dt;
    let base = (0..spec.n_species)
        .map(|i| {
            let mut m = ops.spatial(i);
            for k in 0..n {
                m[(k, k)] += inv_dt;
            }
            m
        })
        .collect();
    let stepper = Stepper::new(spec, nodes, base);
    let mut u = Field::on_layout(layout, spec.n_species);
    let mut iters = vec![0; layout.n_levels()];
    let mut prev: Vec<DVector<f64>> = vec![DVector::zeros(n); spec.n_species];
    for m in 1..layout.n_levels() {
        let rhs: Vec<DVector<f64>> = (0..spec.n_species)
            .map(|i| DVector::from_fn(n, |k, _| prev[i][k] * inv_dt + source.q.get(i, m, nodes[k])))
            .collect();
        let (next, it) = stepper.step(m, &rhs, prev.clone())?;
        for (i, v) in next.iter().enumerate() {
            for (k, &x) in nodes.iter().enumerate() {
                u.set(i, m, x, v[k]);
            }
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
    use crate::nonlocal_op::KernelSpec;

    fn layout(n: usize, nt: usize) -> DomainLayout {
        build_layout(1, n, 0.25, &Selector::Side(Side::Right), &Selector::All, 1.0, nt).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let l = layout(16, 8);
        let spec = SystemSpec::space(2, KernelSpec::new(&[(0.4, 1.0)]).unwrap(), &l)
            .with_interaction(Interaction::new(2).with(0, &[1, 1], -1.0).unwrap());
        let u = solve_space_nonlocal(&spec, &SourceTerm::zeros(&l, 2), &l).unwrap();
        assert!(u.u.is_zero());
    }

    #[test]
    fn manufactured_solution_is_reproduced() {
        let l = layout(24, 16);
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.3, 1.0), (0.7, 0.5)]).unwrap(), &l)
            .with_alpha(0, vec![0.8])
            .with_potential(0, Potential::from_fn(&l, |x| -(1.0 + x[0])));
        let ops = SpaceOperators::new(&l, &spec).unwrap();
        let exact = |m: usize, x: usize| {
            let c = l.coords(x)[0];
            if l.interior_position(x).is_some() {
                l.time(m) * (std::f64::consts::PI * c).sin()
            } else {
                0.0
            }
        };
        let a = ops.spatial(0);
        let nodes = l.interior();
        let mut q = SourceTerm::zeros(&l, 1);
        for m in 1..l.n_levels() {
            let cur = DVector::from_fn(nodes.len(), |k, _| exact(m, nodes[k]));
            let au = &a * &cur;
            for (k, &x) in nodes.iter().enumerate() {
                let dtu = (exact(m, x) - exact(m - 1, x)) / l.dt;
                let p = spec.potential[0].at(m, x);
                q.q.set(0, m, x, dtu + au[k] - p * cur[k]);
            }
        }
        let u = solve_space_with(&ops, &spec, &q, &l).unwrap();
        let err = (0..l.n_levels())
            .flat_map(|m| (0..l.n_nodes()).map(move |x| (m, x)))
            .map(|(m, x)| (u.u.get(0, m, x) - exact(m, x)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn picard_fixed_point_satisfies_the_step() {
        let l = layout(16, 8);
        let f = Interaction::new(1).with(0, &[2], -2.0).unwrap().with(0, &[3], 1.0).unwrap();
        let spec = SystemSpec::space(1, KernelSpec::new(&[(0.5, 1.0)]).unwrap(), &l).with_interaction(f.clone());
        let q = SourceTerm::from_fn(&l, 1, |_, x, _| 3.0 * (1.0 - x[0]));
        let ops = SpaceOperators::new(&l, &spec).unwrap();
        let u = solve_space_with(&ops, &spec, &q, &l).unwrap();
        let a = ops.spatial(0);
        let nodes = l.interior();
        for m in 1..l.n_levels() {
            let cur = DVector::from_fn(nodes.len(), |k, _| u.u.get(0, m, nodes[k]));
            let au = &a * &cur;
            for (k, &x) in nodes.iter().enumerate() {
                let r = (cur[k] - u.u.get(0, m - 1, x)) / l.dt + au[k]
                    - f.evaluate(&[cur[k]])[0]
                    - q.q.get(0, m, x);
                assert!(r.abs() < 1e-7 * (1.0 + cur.amax() / l.dt), "{r}");
            }
            assert!(u.picard_iterations[m] >= 2 && u.picard_iterations[m] < 50);
        }
    }
}
