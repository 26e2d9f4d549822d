//! One implicit step with lagged Picard iteration on the interaction.
//!
//! Writing F_i(u) = u_i G_i(u), the lagged factor is split into its negative
//! part, which joins the diagonal, and its positive part, which goes to the
//! right side multiplied by the lagged state. Every iterate then solves an
//! M-matrix system with a nonnegative right side.

use super::system::SystemSpec;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Dyn, LU};

pub const PICARD_TOL: f64 = 1e-10;
pub const PICARD_MAX_ITERS: usize = 50;

pub(crate) struct Stepper<'a> {
    spec: &'a SystemSpec,
    nodes: &'a [usize],
    base: Vec<DMatrix<f64>>,
    cached: Vec<Option<LU<f64, Dyn, Dyn>>>,
}

impl<'a> Stepper<'a> {
    /// `base[i]` holds the species-i step matrix without the potential.
    pub fn new(spec: &'a SystemSpec, nodes: &'a [usize], base: Vec<DMatrix<f64>>) -> Self {
        let mut st = Stepper { spec, nodes, base, cached: Vec::new() };
        st.cached = (0..spec.n_species)
            .map(|i| spec.potential[i].is_stationary().then(|| st.matrix(i, 0).lu()))
            .collect();
        st
    }

    fn matrix(&self, species: usize, level: usize) -> DMatrix<f64> {
        let mut m = self.base[species].clone();
        for (k, &x) in self.nodes.iter().enumerate() {
            m[(k, k)] -= self.spec.potential[species].at(level, x);
        }
        m
    }

    fn solve_linear(&self, species: usize, level: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = match &self.cached[species] {
            Some(lu) => lu.solve(rhs),
            None => self.matrix(species, level).lu().solve(rhs),
        };
        sol.ok_or_else(|| Error::Singular(format!("step matrix of species {species} at level {level}")))
    }

    /// Solves level `level` given the explicit right sides and a starting
    /// guess for the lagged state. Returns the new state and the number of
    /// Picard iterations.
    pub fn step(
        &self,
        level: usize,
        rhs: &[DVector<f64>],
        guess: Vec<DVector<f64>>,
    ) -> Result<(Vec<DVector<f64>>, usize)> {
        let m = self.spec.n_species;
        if self.spec.interaction.is_empty() {
            let out = (0..m).map(|i| self.solve_linear(i, level, &rhs[i])).collect::<Result<Vec<_>>>()?;
            check_finite(&out, level)?;
            return Ok((out, 1));
        }
        let n = self.nodes.len();
        let mut lag = guess;
        let mut vals = vec![0.0; m];
        let mut buf = Vec::with_capacity(m);
        let mut last = f64::INFINITY;
        for it in 1..=PICARD_MAX_ITERS {
            let mut next = Vec::with_capacity(m);
            for i in 0..m {
                let mut mat: Option<DMatrix<f64>> = None;
                let mut b = rhs[i].clone();
                for k in 0..n {
                    for (j, v) in vals.iter_mut().enumerate() {
                        *v = lag[j][k];
                    }
                    let g = self.spec.reaction_factor(i, self.nodes[k], &vals, &mut buf);
                    if g < 0.0 {
                        let mm = mat.get_or_insert_with(|| self.matrix(i, level));
                        mm[(k, k)] -= g;
                    } else {
                        b[k] += g * lag[i][k];
                    }
                }
                let sol = match mat {
                    Some(mm) => mm.lu().solve(&b).ok_or_else(|| {
                        Error::Singular(format!("step matrix of species {i} at level {level}"))
                    })?,
                    None => self.solve_linear(i, level, &b)?,
                };
                next.push(sol);
            }
            check_finite(&next, level)?;
            let scale = next.iter().map(|v| v.amax()).fold(0.0, f64::max);
            let diff = next.iter().zip(&lag).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
            last = if scale > 0.0 { diff / scale } else { diff };
            lag = next;
            if last <= PICARD_TOL {
                return Ok((lag, it));
            }
        }
        Err(Error::PicardDiverged { step: level, residual: last })
    }
}

fn check_finite(v: &[DVector<f64>], level: usize) -> Result<()> {
    if v.iter().all(|x| x.iter().all(|y| y.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite { step: level })
    }
}
