//! Space-time storage for several species. Offsets run species-major, then
//! time level, then node.

use crate::domain::DomainLayout;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub n_species: usize,
    pub n_levels: usize,
    pub n_nodes: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(n_species: usize, n_levels: usize, n_nodes: usize) -> Self {
        Field { n_species, n_levels, n_nodes, data: vec![0.0; n_species * n_levels * n_nodes] }
    }

    /// Zero field on every node and every time level of `layout`.
    pub fn on_layout(layout: &DomainLayout, n_species: usize) -> Self {
        Self::zeros(n_species, layout.n_levels(), layout.n_nodes())
    }

    /// Fills a field by sampling `f(species, level, node)`.
    pub fn from_fn(
        layout: &DomainLayout,
        n_species: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::on_layout(layout, n_species);
        for s in 0..n_species {
            for m in 0..out.n_levels {
                for i in 0..out.n_nodes {
                    let k = out.offset(s, m, i);
                    out.data[k] = f(s, m, i);
                }
            }
        }
        out
    }

    #[inline]
    pub fn offset(&self, species: usize, level: usize, node: usize) -> usize {
        debug_assert!(species < self.n_species && level < self.n_levels && node < self.n_nodes);
        (species * self.n_levels + level) * self.n_nodes + node
    }

    /// Inverse of [`Field::offset`].
    pub fn unflatten(&self, offset: usize) -> (usize, usize, usize) {
        let node = offset % self.n_nodes;
        let rest = offset / self.n_nodes;
        (rest / self.n_levels, rest % self.n_levels, node)
    }

    #[inline]
    pub fn get(&self, species: usize, level: usize, node: usize) -> f64 {
        self.data[self.offset(species, level, node)]
    }

    #[inline]
    pub fn set(&mut self, species: usize, level: usize, node: usize, v: f64) {
        let k = self.offset(species, level, node);
        self.data[k] = v;
    }

    pub fn level(&self, species: usize, level: usize) -> &[f64] {
        let k = self.offset(species, level, 0);
        &self.data[k..k + self.n_nodes]
    }

    pub fn level_mut(&mut self, species: usize, level: usize) -> &mut [f64] {
        let k = self.offset(species, level, 0);
        &mut self.data[k..k + self.n_nodes]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.n_species == other.n_species
            && self.n_levels == other.n_levels
            && self.n_nodes == other.n_nodes
    }

    pub fn check_shape(&self, layout: &DomainLayout, n_species: usize, what: &str) -> Result<()> {
        if self.n_species != n_species
            || self.n_levels != layout.n_levels()
            || self.n_nodes != layout.n_nodes()
        {
            return Err(Error::Input(format!(
                "{what}: expected shape ({n_species}, {}, {}), got ({}, {}, {})",
                layout.n_levels(),
                layout.n_nodes(),
                self.n_species,
                self.n_levels,
                self.n_nodes
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Field {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn add_scaled(&mut self, other: &Field, c: f64) {
        assert!(self.same_shape(other), "field shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert!(self.same_shape(other), "field shapes differ");
        self.data.iter().zip(&other.data).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn offset_is_bijective(s in 1usize..4, l in 1usize..6, n in 1usize..9) {
            let f = Field::zeros(s, l, n);
            let mut seen = vec![false; f.data.len()];
            for a in 0..s { for b in 0..l { for c in 0..n {
                let k = f.offset(a, b, c);
                prop_assert!(!seen[k]);
                seen[k] = true;
                prop_assert_eq!(f.unflatten(k), (a, b, c));
            }}}
            prop_assert!(seen.iter().all(|&x| x));
        }
    }
}
