//! Grid geometry: the physical box (0,1)^d, its boundary, the exterior collar
//! and the uniform time grid.
//!
//! Axis layout (1D, `c` collar nodes per side, `n` interior nodes):
//!
//! ```text
//!  collar        boundary   interior            boundary   collar
//!  o  o  ...  o     #     *  *  ...  *  *          #     o  ...  o
//!  -c·h           x=0    h  2h      n·h         x=1          1+c·h
//! ```
//!
//! In 2D the same axis is used in both directions (row-major, y outer).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    Boundary,
    ExteriorAccessible,
    ExteriorFar,
}

impl NodeClass {
    pub fn tag(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Boundary => "boundary",
            NodeClass::ExteriorAccessible => "exterior_accessible",
            NodeClass::ExteriorFar => "exterior_far",
        }
    }

    pub fn is_exterior(self) -> bool {
        matches!(self, NodeClass::ExteriorAccessible | NodeClass::ExteriorFar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Picks a node subset. For the accessible region it ranges over collar
/// nodes, for Γ over boundary nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    All,
    Side(Side),
    /// Axis-aligned box `[lo, hi]` in physical coordinates.
    Window { lo: Vec<f64>, hi: Vec<f64> },
}

impl Selector {
    fn accepts(&self, x: [f64; 2], dim: usize, tol: f64) -> bool {
        match self {
            Selector::All => true,
            Selector::Side(side) => match side {
                Side::Left => x[0] <= tol,
                Side::Right => x[0] >= 1.0 - tol,
                Side::Bottom => dim == 2 && x[1] <= tol,
                Side::Top => dim == 2 && x[1] >= 1.0 - tol,
            },
            Selector::Window { lo, hi } => (0..dim).all(|k| {
                let l = lo.get(k).copied().unwrap_or(f64::NEG_INFINITY);
                let u = hi.get(k).copied().unwrap_or(f64::INFINITY);
                x[k] >= l - tol && x[k] <= u + tol
            }),
        }
    }
}

/// Default collar width, a quarter of the box diameter.
pub fn default_collar_width(dim: usize) -> f64 {
    0.25 * (dim as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainLayout {
    pub dim: usize,
    pub n_interior: usize,
    pub h: f64,
    pub collar_width: f64,
    /// Collar nodes per side along each axis.
    pub n_collar: usize,
    /// Nodes per axis, collar and boundary included.
    pub n_axis: usize,
    pub node_class: Vec<NodeClass>,
    pub on_gamma: Vec<bool>,
    pub t_final: f64,
    pub n_time: usize,
    pub dt: f64,
    pub obs_point_index: usize,
    interior: Vec<usize>,
    interior_pos: Vec<usize>,
    accessible: Vec<usize>,
    gamma: Vec<usize>,
}

const NONE: usize = usize::MAX;

/// Builds the layout. Observation point defaults to the interior node nearest
/// the centre of the box.
pub fn build_layout(
    dim: usize,
    n_interior: usize,
    collar_width: f64,
    accessible: &Selector,
    gamma: &Selector,
    t_final: f64,
    n_time: usize,
) -> Result<DomainLayout> {
    if dim != 1 && dim != 2 {
        return Err(Error::Layout(format!("dim must be 1 or 2, got {dim}")));
    }
    if n_interior < 4 {
        return Err(Error::Layout(format!("n_interior must be at least 4, got {n_interior}")));
    }
    if !(t_final > 0.0 && t_final.is_finite()) || n_time == 0 {
        return Err(Error::Layout("time grid needs t_final > 0 and n_time >= 1".into()));
    }
    let h = 1.0 / (n_interior as f64 + 1.0);
    if !(collar_width.is_finite()) || collar_width < 2.0 * h * (1.0 - 1e-12) {
        return Err(Error::Layout(format!(
            "collar width {collar_width} is narrower than two cells (h = {h})"
        )));
    }
    let n_collar = (collar_width / h + 1e-9).floor() as usize;
    let n_axis = n_interior + 2 + 2 * n_collar;
    let n_nodes = n_axis.pow(dim as u32);
    let tol = 1e-9 * h;

    let mut node_class = vec![NodeClass::ExteriorFar; n_nodes];
    let mut on_gamma = vec![false; n_nodes];
    for node in 0..n_nodes {
        let ax = axis_indices(node, n_axis, dim);
        let lo = n_collar;
        let hi = n_collar + n_interior + 1;
        let inside = (0..dim).all(|k| ax[k] > lo && ax[k] < hi);
        let closed = (0..dim).all(|k| ax[k] >= lo && ax[k] <= hi);
        let x = coords_of(node, n_axis, n_collar, h, dim);
        node_class[node] = if inside {
            NodeClass::Interior
        } else if closed {
            if gamma.accepts(x, dim, tol) {
                on_gamma[node] = true;
            }
            NodeClass::Boundary
        } else if accessible.accepts(x, dim, tol) {
            NodeClass::ExteriorAccessible
        } else {
            NodeClass::ExteriorFar
        };
    }

    let mut layout = DomainLayout {
        dim,
        n_interior,
        h,
        collar_width,
        n_collar,
        n_axis,
        node_class,
        on_gamma,
        t_final,
        n_time,
        dt: t_final / n_time as f64,
        obs_point_index: 0,
        interior: vec![],
        interior_pos: vec![],
        accessible: vec![],
        gamma: vec![],
    };
    layout.rebuild_lists();
    if layout.accessible.is_empty() {
        return Err(Error::Layout("accessible selector picked no exterior node".into()));
    }
    if layout.gamma.is_empty() {
        return Err(Error::Layout("gamma selector picked no boundary node".into()));
    }
    let centre = [0.5; 2];
    layout.obs_point_index = layout.nearest_interior(&centre[..dim]);
    Ok(layout)
}

fn axis_indices(node: usize, n_axis: usize, dim: usize) -> [usize; 2] {
    if dim == 1 {
        [node, 0]
    } else {
        [node % n_axis, node / n_axis]
    }
}

fn coords_of(node: usize, n_axis: usize, n_collar: usize, h: f64, dim: usize) -> [f64; 2] {
    let ax = axis_indices(node, n_axis, dim);
    let c = |a: usize| (a as f64 - n_collar as f64) * h;
    if dim == 1 {
        [c(ax[0]), 0.0]
    } else {
        [c(ax[0]), c(ax[1])]
    }
}

impl DomainLayout {
    fn rebuild_lists(&mut self) {
        let n = self.node_class.len();
        self.interior = (0..n).filter(|&i| self.node_class[i] == NodeClass::Interior).collect();
        self.interior_pos = vec![NONE; n];
        for (k, &i) in self.interior.iter().enumerate() {
            self.interior_pos[i] = k;
        }
        self.accessible = (0..n)
            .filter(|&i| self.node_class[i] == NodeClass::ExteriorAccessible)
            .collect();
        self.gamma = (0..n).filter(|&i| self.on_gamma[i]).collect();
    }

    /// Moves x₀ to the interior node nearest `point`. Fails unless that node
    /// lies within half a cell of the requested point.
    pub fn with_observation(mut self, point: &[f64]) -> Result<Self> {
        if point.len() != self.dim {
            return Err(Error::Layout("observation point has wrong dimension".into()));
        }
        let idx = self.nearest_interior(point);
        let x = self.coords(idx);
        let dist = (0..self.dim).map(|k| (x[k] - point[k]).abs()).fold(0.0, f64::max);
        if dist > 0.5 * self.h + 1e-12 {
            return Err(Error::Layout(format!("observation point {point:?} is not interior")));
        }
        self.obs_point_index = idx;
        Ok(self)
    }

    /// Same spatial layout on another time grid.
    pub fn with_time_grid(mut self, t_final: f64, n_time: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || n_time == 0 {
            return Err(Error::Layout("time grid needs t_final > 0 and n_time >= 1".into()));
        }
        self.t_final = t_final;
        self.n_time = n_time;
        self.dt = t_final / n_time as f64;
        Ok(self)
    }

    /// Sets x₀ by node id; the node must be interior.
    pub fn with_observation_node(mut self, node: usize) -> Result<Self> {
        if self.node_class.get(node) != Some(&NodeClass::Interior) {
            return Err(Error::Layout(format!("node {node} is not interior")));
        }
        self.obs_point_index = node;
        Ok(self)
    }

    fn nearest_interior(&self, point: &[f64]) -> usize {
        let mut best = self.interior[0];
        let mut best_d = f64::INFINITY;
        for &i in &self.interior {
            let x = self.coords(i);
            let d: f64 = (0..self.dim).map(|k| (x[k] - point[k]).powi(2)).sum();
            if d < best_d - 1e-15 {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn n_nodes(&self) -> usize {
        self.node_class.len()
    }

    pub fn n_levels(&self) -> usize {
        self.n_time + 1
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        coords_of(node, self.n_axis, self.n_collar, self.h, self.dim)
    }

    pub fn axis(&self, node: usize) -> [usize; 2] {
        axis_indices(node, self.n_axis, self.dim)
    }

    pub fn node_at(&self, ax: [usize; 2]) -> usize {
        if self.dim == 1 {
            ax[0]
        } else {
            ax[0] + self.n_axis * ax[1]
        }
    }

    /// Neighbour one step along `axis` in direction `dir` (±1), if on the grid.
    pub fn neighbour(&self, node: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut ax = self.axis(node);
        let a = ax[axis] as i64 + dir;
        if a < 0 || a >= self.n_axis as i64 {
            return None;
        }
        ax[axis] = a as usize;
        Some(self.node_at(ax))
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn n_interior_nodes(&self) -> usize {
        self.interior.len()
    }

    /// Position of `node` in the interior list.
    pub fn interior_position(&self, node: usize) -> Option<usize> {
        match self.interior_pos.get(node) {
            Some(&k) if k != NONE => Some(k),
            _ => None,
        }
    }

    pub fn accessible(&self) -> &[usize] {
        &self.accessible
    }

    pub fn gamma(&self) -> &[usize] {
        &self.gamma
    }

    pub fn mask(&self, class: NodeClass) -> Vec<bool> {
        self.node_class.iter().map(|&c| c == class).collect()
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.node_class.iter().filter(|&&c| c == class).count()
    }

    /// Inward unit direction (axis, sign) at a boundary node, used by the
    /// one-sided normal difference. Corners take the first matching edge.
    pub fn inward_direction(&self, node: usize) -> Option<(usize, i64)> {
        if self.node_class[node] != NodeClass::Boundary {
            return None;
        }
        let ax = self.axis(node);
        let lo = self.n_collar;
        let hi = self.n_collar + self.n_interior + 1;
        for k in 0..self.dim {
            if ax[k] == lo {
                return Some((k, 1));
            }
            if ax[k] == hi {
                return Some((k, -1));
            }
        }
        None
    }

    pub fn to_document(&self) -> LayoutDocument {
        let mut runs: Vec<(String, usize)> = Vec::new();
        for c in &self.node_class {
            match runs.last_mut() {
                Some((tag, n)) if tag == c.tag() => *n += 1,
                _ => runs.push((c.tag().to_string(), 1)),
            }
        }
        LayoutDocument {
            dim: self.dim,
            n_interior: self.n_interior,
            n_axis: self.n_axis,
            n_collar: self.n_collar,
            h: self.h,
            collar_width: self.collar_width,
            t_final: self.t_final,
            n_time: self.n_time,
            dt: self.dt,
            obs_point_index: self.obs_point_index,
            node_tags: runs,
            gamma_nodes: self.gamma.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("layout document serializes")
    }
}

/// Serialized form of a layout; node tags are run-length encoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub dim: usize,
    pub n_interior: usize,
    pub n_axis: usize,
    pub n_collar: usize,
    pub h: f64,
    pub collar_width: f64,
    pub t_final: f64,
    pub n_time: usize,
    pub dt: f64,
    pub obs_point_index: usize,
    pub node_tags: Vec<(String, usize)>,
    pub gamma_nodes: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> DomainLayout {
        build_layout(1, n, 0.25, &Selector::Side(Side::Right), &Selector::Side(Side::Left), 1.0, 10)
            .unwrap()
    }

    #[test]
    fn one_d_counts() {
        let l = line(8);
        assert_eq!(l.count(NodeClass::Interior), 8);
        assert!(l.count(NodeClass::ExteriorAccessible) >= 2);
        assert!(l.accessible().iter().all(|&i| l.coords(i)[0] > 1.0));
        assert_eq!(l.gamma().len(), 1);
        assert_eq!(l.coords(l.gamma()[0])[0], 0.0);
        assert_eq!(l.node_class[l.obs_point_index], NodeClass::Interior);
    }

    #[test]
    fn two_d_counts_by_enumeration() {
        let l = build_layout(2, 16, 0.25, &Selector::All, &Selector::All, 1.0, 4).unwrap();
        let mut interior = 0;
        let mut edges = [0usize; 4];
        for i in 0..l.n_nodes() {
            let x = l.coords(i);
            let inside = x.iter().all(|&v| v > 1e-12 && v < 1.0 - 1e-12);
            let closed = x.iter().all(|&v| v > -1e-12 && v < 1.0 + 1e-12);
            if inside {
                interior += 1;
                assert_eq!(l.node_class[i], NodeClass::Interior);
            } else if closed {
                assert_eq!(l.node_class[i], NodeClass::Boundary);
                edges[0] += (x[0].abs() < 1e-12) as usize;
                edges[1] += ((x[0] - 1.0).abs() < 1e-12) as usize;
                edges[2] += (x[1].abs() < 1e-12) as usize;
                edges[3] += ((x[1] - 1.0).abs() < 1e-12) as usize;
            } else {
                assert!(l.node_class[i].is_exterior());
            }
        }
        assert_eq!(interior, 256);
        assert_eq!(edges, [18; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad_window = Selector::Window { lo: vec![3.0], hi: vec![4.0] };
        assert!(build_layout(1, 8, 0.25, &bad_window, &Selector::All, 1.0, 4).is_err());
        assert!(build_layout(1, 8, 0.05, &Selector::All, &Selector::All, 1.0, 4).is_err());
        assert!(build_layout(1, 3, 0.25, &Selector::All, &Selector::All, 1.0, 4).is_err());
        assert!(line(8).with_observation(&[1.1]).is_err());
        let l = line(8);
        let b = l.gamma()[0];
        assert!(l.with_observation_node(b).is_err());
    }

    #[test]
    fn rle_round_trip() {
        let l = line(8);
        let doc = l.to_document();
        let total: usize = doc.node_tags.iter().map(|r| r.1).sum();
        assert_eq!(total, l.n_nodes());
        let back: LayoutDocument = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(back, doc);
    }

    proptest! {
        #[test]
        fn classes_partition_nodes(dim in 1usize..=2, n in 4usize..14, cw in 0.4f64..0.6) {
            let l = build_layout(dim, n, cw, &Selector::All, &Selector::All, 1.0, 8).unwrap();
            let total: usize = [NodeClass::Interior, NodeClass::Boundary,
                NodeClass::ExteriorAccessible, NodeClass::ExteriorFar]
                .iter().map(|&c| l.count(c)).sum();
            prop_assert_eq!(total, l.n_nodes());
            prop_assert!(l.gamma().iter().all(|&g| l.node_class[g] == NodeClass::Boundary));
            prop_assert!((l.dt * l.n_time as f64 - l.t_final).abs() <= 1e-14 * l.t_final);
            let again = build_layout(dim, n, cw, &Selector::All, &Selector::All, 1.0, 8).unwrap();
            prop_assert_eq!(l, again);
        }
    }
}
