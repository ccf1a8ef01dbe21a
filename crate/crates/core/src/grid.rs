//! Spatial discretization of the bounded domain and everything that depends
//! only on node pairs.
//!
//! Nodes are cell midpoints of a uniform tensor grid. Every double integral
//! over the domain squared becomes a sum over ordered node pairs `i != j`;
//! the diagonal is dropped (discrete principal value).

use std::io::Write;

use serde::Serialize;

use crate::error::{LabError, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    dim: usize,
    nodes: Vec<Point>,
    cell_weight: Vec<f64>,
    domain_box: Vec<(f64, f64)>,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    /// Quadrature weight `h_i` of each node.
    pub fn weights(&self) -> &[f64] {
        &self.cell_weight
    }

    pub fn domain_box(&self) -> &[(f64, f64)] {
        &self.domain_box
    }

    /// Lebesgue measure of the domain box.
    pub fn measure(&self) -> f64 {
        self.domain_box.iter().map(|(a, b)| b - a).product()
    }

    pub fn diameter(&self) -> f64 {
        self.domain_box
            .iter()
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    /// Reorder nodes by `perm` (new index k holds old node `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Grid {
        Grid {
            dim: self.dim,
            nodes: perm.iter().map(|&k| self.nodes[k]).collect(),
            cell_weight: perm.iter().map(|&k| self.cell_weight[k]).collect(),
            domain_box: self.domain_box.clone(),
        }
    }
}

/// Uniform midpoint grid on `[a, b]`: `x_i = a + (i + 1/2) h`, `h = (b - a)/n`.
pub fn build_interval_grid(n: usize, a: f64, b: f64) -> Result<Grid> {
    if n < 2 {
        return Err(LabError::Config(format!("grid needs at least 2 nodes, got {n}")));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(LabError::Config(format!("invalid interval bounds [{a}, {b}]")));
    }
    let h = (b - a) / n as f64;
    let nodes = (0..n).map(|i| [a + (i as f64 + 0.5) * h, 0.0]).collect();
    Ok(Grid {
        dim: 1,
        nodes,
        cell_weight: vec![h; n],
        domain_box: vec![(a, b)],
    })
}

/// Rectangular tensor midpoint grid on `[ax, bx] x [ay, by]`, row-major in x.
pub fn build_rect_grid(nx: usize, ny: usize, x: (f64, f64), y: (f64, f64)) -> Result<Grid> {
    if nx * ny < 2 || nx == 0 || ny == 0 {
        return Err(LabError::Config(format!(
            "rectangular grid needs at least 2 nodes, got {nx}x{ny}"
        )));
    }
    for &(a, b) in &[x, y] {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(LabError::Config(format!("invalid rectangle side [{a}, {b}]")));
        }
    }
    let hx = (x.1 - x.0) / nx as f64;
    let hy = (y.1 - y.0) / ny as f64;
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            nodes.push([
                x.0 + (i as f64 + 0.5) * hx,
                y.0 + (j as f64 + 0.5) * hy,
            ]);
        }
    }
    Ok(Grid {
        dim: 2,
        nodes,
        cell_weight: vec![hx * hy; nx * ny],
        domain_box: vec![x, y],
    })
}

/// Pair distances and the discrete carrier of `dx dy / |x - y|^N`.
#[derive(Debug, Clone, Serialize)]
pub struct PairTable {
    n: usize,
    dim: usize,
    s: f64,
    h: Vec<f64>,
    dist: Vec<f64>,
    mu: Vec<f64>,
}

impl PairTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fractional order `s` in (0, 1).
    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn weights(&self) -> &[f64] {
        &self.h
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    #[inline]
    pub fn mu(&self, i: usize, j: usize) -> f64 {
        self.mu[i * self.n + j]
    }

    /// `d_ij^s`, the Hölder bound scale of a pair.
    #[inline]
    pub fn dist_pow_s(&self, i: usize, j: usize) -> f64 {
        self.dist(i, j).powf(self.s)
    }

    /// Sum over ordered off-diagonal pairs of `h_i h_j` (the measure of the
    /// punctured square).
    pub fn product_measure(&self) -> f64 {
        let total: f64 = self.h.iter().sum();
        let squares: f64 = self.h.iter().map(|w| w * w).sum();
        total * total - squares
    }

    /// Sum over ordered off-diagonal pairs of `mu_ij`.
    pub fn mu_measure(&self) -> f64 {
        crate::sum::compensated_sum(self.mu.iter().copied())
    }

    /// Ordered off-diagonal pairs.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Unordered pairs `i < j`.
    pub fn unordered_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }

    /// Dump as CSV with columns `i, j, d, mu`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["i", "j", "d", "mu"])?;
        for i in 0..self.n {
            for j in 0..self.n {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    format!("{:e}", self.dist(i, j)),
                    format!("{:e}", self.mu(i, j)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_pair_table(grid: &Grid, s: f64) -> Result<PairTable> {
    if !(s > 0.0 && s < 1.0) {
        return Err(LabError::Config(format!("fractional order s must lie in (0,1), got {s}")));
    }
    let n = grid.len();
    let dim = grid.dim();
    let h = grid.weights().to_vec();
    let mut dist = vec![0.0; n * n];
    let mut mu = vec![0.0; n * n];
    for i in 0..n {
        let xi = grid.node(i);
        for j in (i + 1)..n {
            let xj = grid.node(j);
            let d = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2)).sqrt();
            if d <= 0.0 {
                return Err(LabError::SingularDistance { i, j });
            }
            let m = h[i] * h[j] / d.powi(dim as i32);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            mu[i * n + j] = m;
            mu[j * n + i] = m;
        }
    }
    Ok(PairTable { n, dim, s, h, dist, mu })
}

/// Node classification for a subdomain `O` of the domain.
#[derive(Debug, Clone, Serialize)]
pub struct SubdomainMask {
    inside: Vec<bool>,
}

impl SubdomainMask {
    pub fn from_flags(inside: Vec<bool>) -> Self {
        Self { inside }
    }

    pub fn len(&self) -> usize {
        self.inside.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inside.is_empty()
    }

    #[inline]
    pub fn is_inside(&self, i: usize) -> bool {
        self.inside[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.inside
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Pair `(i, j)` lies in `O x O`.
    #[inline]
    pub fn in_o_squared(&self, i: usize, j: usize) -> bool {
        self.inside[i] && self.inside[j]
    }

    /// Ordered off-diagonal pairs in `O x O`.
    pub fn o_squared_pair_count(&self) -> usize {
        let k = self.inside_count();
        k * k.saturating_sub(1)
    }

    /// Ordered off-diagonal pairs outside `O x O`.
    pub fn complement_pair_count(&self) -> usize {
        let n = self.len();
        n * (n - 1) - self.o_squared_pair_count()
    }

    /// Both pair classes are populated.
    pub fn is_mixed(&self) -> bool {
        self.o_squared_pair_count() > 0 && self.complement_pair_count() > 0
    }
}

/// Classify nodes by `region`. With `mixed` set, a mask whose `O x O` or
/// complement pair class is empty is rejected.
pub fn build_mask<F>(grid: &Grid, region: F, mixed: bool) -> Result<SubdomainMask>
where
    F: Fn(Point) -> bool,
{
    let mask = SubdomainMask {
        inside: grid.nodes().iter().map(|&x| region(x)).collect(),
    };
    if mixed && !mask.is_mixed() {
        return Err(LabError::Config(format!(
            "mixed experiment needs nonempty O^2 and complement pair classes ({} of {} nodes inside)",
            mask.inside_count(),
            mask.len()
        )));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_midpoint_grid() {
        let g = build_interval_grid(2, 0.0, 1.0).unwrap();
        assert_eq!(g.node(0)[0], 0.25);
        assert_eq!(g.node(1)[0], 0.75);
        assert_eq!(g.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn weights_partition_domain() {
        let g = build_interval_grid(4, 0.0, 1.0).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let g2 = build_rect_grid(3, 5, (0.0, 2.0), (-1.0, 0.5)).unwrap();
        let total: f64 = g2.weights().iter().sum();
        assert!((total - g2.measure()).abs() <= 1e-12 * g2.measure());
    }

    #[test]
    fn shifted_interval() {
        let g = build_interval_grid(3, -1.0, 2.0).unwrap();
        let xs: Vec<f64> = g.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.5, 0.5, 1.5]);
        assert_eq!(g.weights(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(build_interval_grid(1, 0.0, 1.0), Err(LabError::Config(_))));
        assert!(matches!(build_interval_grid(4, 1.0, 1.0), Err(LabError::Config(_))));
        assert!(matches!(build_interval_grid(4, 0.0, f64::NAN), Err(LabError::Config(_))));
    }

    #[test]
    fn two_node_pair_table() {
        let g = build_interval_grid(2, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        assert_eq!(pt.dist(0, 1), 0.5);
        assert_eq!(pt.mu(0, 1), 0.5);
        assert_eq!(pt.mu(0, 0), 0.0);
        assert_eq!(pt.mu(1, 1), 0.0);
    }

    #[test]
    fn three_node_far_pair() {
        let g = build_interval_grid(3, -1.0, 2.0).unwrap();
        let pt = build_pair_table(&g, 0.3).unwrap();
        assert_eq!(pt.dist(0, 2), 2.0);
        assert_eq!(pt.mu(0, 2), 0.5);
    }

    #[test]
    fn duplicate_nodes_are_singular() {
        let g = Grid {
            dim: 1,
            nodes: vec![[0.1, 0.0], [0.5, 0.0], [0.1, 0.0]],
            cell_weight: vec![1.0; 3],
            domain_box: vec![(0.0, 3.0)],
        };
        assert!(matches!(
            build_pair_table(&g, 0.5),
            Err(LabError::SingularDistance { i: 0, j: 2 })
        ));
    }

    #[test]
    fn rejects_order_outside_unit_interval() {
        let g = build_interval_grid(4, 0.0, 1.0).unwrap();
        assert!(build_pair_table(&g, 0.0).is_err());
        assert!(build_pair_table(&g, 1.0).is_err());
    }

    #[test]
    fn masks() {
        let g = build_interval_grid(4, 0.0, 1.0).unwrap();
        let m = build_mask(&g, |x| x[0] < 0.5, true).unwrap();
        assert_eq!(m.inside_count(), 2);
        assert!(build_mask(&g, |_| false, true).is_err());
        assert!(build_mask(&g, |_| true, true).is_err());
        assert!(build_mask(&g, |_| false, false).is_ok());

        let g8 = build_interval_grid(8, 0.0, 1.0).unwrap();
        let m8 = build_mask(&g8, |x| x[0] > 0.25 && x[0] < 0.75, true).unwrap();
        assert_eq!(m8.inside_count(), 4);
        assert_eq!(m8.o_squared_pair_count(), 12);
        assert_eq!(m8.complement_pair_count(), 56 - 12);
        assert!(m8.in_o_squared(2, 5));
        assert!(!m8.in_o_squared(1, 5));
    }

    #[test]
    fn csv_dump_has_header_and_all_pairs() {
        let g = build_interval_grid(3, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let mut buf = Vec::new();
        pt.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,d,mu");
        assert_eq!(lines.len(), 10);
        assert!(!text.contains('\r'));
    }
}
