//! Periodic bonding graph, building-block identification and unwrapping.

use std::collections::VecDeque;

use nalgebra::Vector3;
use petgraph::unionfind::UnionFind;

use super::AtomicStructure;
use crate::elements::RadiiTable;
use crate::error::{Error, Result};
use crate::manifold::min_image_scalar;
use crate::Lattice;

/// Shortest Cartesian vector among the 27 nearest images of a fractional offset.
pub fn min_image_cart(lattice: &Lattice, delta_frac: &Vector3<f64>) -> Vector3<f64> {
    let base = delta_frac.map(min_image_scalar);
    let mut best = lattice.to_cartesian(&base);
    let mut best_n2 = best.norm_squared();
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                let shifted = base + Vector3::new(i as f64, j as f64, k as f64);
                let v = lattice.to_cartesian(&shifted);
                let n2 = v.norm_squared();
                if n2 < best_n2 {
                    best = v;
                    best_n2 = n2;
                }
            }
        }
    }
    best
}

/// A bond `i < j` with the minimum-image vector from `i` to `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub vector: Vector3<f64>,
}

/// All bonded pairs under the minimum-image convention.
pub fn periodic_bonds(s: &AtomicStructure, radii: &RadiiTable) -> Result<Vec<Bond>> {
    let inv_t = s.lattice.inverse_transpose();
    let frac: Vec<Vector3<f64>> = s.cart.iter().map(|x| inv_t * x).collect();
    let radius: Vec<f64> = s
        .species
        .iter()
        .map(|el| radii.radius(el))
        .collect::<Result<_>>()?;
    let mut bonds = Vec::new();
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let v = min_image_cart(&s.lattice, &(frac[j] - frac[i]));
            let cutoff = radii.bond_scale * (radius[i] + radius[j]) + radii.skin;
            if v.norm() <= cutoff {
                bonds.push(Bond { i, j, vector: v });
            }
        }
    }
    Ok(bonds)
}

/// Bonds between plain (non-periodic) coordinates, as index pairs.
pub fn molecular_bonds(
    species: &[String],
    coords: &[Vector3<f64>],
    radii: &RadiiTable,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            if (coords[j] - coords[i]).norm() <= radii.cutoff(&species[i], &species[j])? {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Partitions atoms into connected components of the periodic bond graph.
///
/// Components are sorted by their smallest atom index; indices inside each
/// component are ascending. Isolated atoms form singleton blocks.
pub fn identify_building_blocks(s: &AtomicStructure, radii: &RadiiTable) -> Result<Vec<Vec<usize>>> {
    if s.is_empty() {
        return Err(Error::InvalidInput("structure has no atoms".into()));
    }
    let bonds = periodic_bonds(s, radii)?;
    Ok(components(s.len(), bonds.iter().map(|b| (b.i, b.j))))
}

pub(crate) fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::<usize>::new(n);
    for (i, j) in edges {
        uf.union(i, j);
    }
    let labels = uf.into_labeling();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (atom, &root) in labels.iter().enumerate() {
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(atom);
    }
    groups
}

/// Cartesian coordinates of one block with every bond made whole.
///
/// Breadth-first from the lowest index; each newly reached atom is placed at the
/// minimum image relative to the already-placed neighbour it was reached from.
pub fn unwrap_block(
    s: &AtomicStructure,
    indices: &[usize],
    radii: &RadiiTable,
) -> Result<Vec<Vector3<f64>>> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty block".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= s.len()) {
        return Err(Error::InvalidInput(format!("atom index {bad} out of range")));
    }
    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_unstable();
    let m = sorted.len();
    let inv_t = s.lattice.inverse_transpose();
    let frac: Vec<Vector3<f64>> = sorted.iter().map(|&a| inv_t * s.cart[a]).collect();

    let mut adj = vec![Vec::new(); m];
    for p in 0..m {
        for q in (p + 1)..m {
            let v = min_image_cart(&s.lattice, &(frac[q] - frac[p]));
            let cutoff = radii.cutoff(&s.species[sorted[p]], &s.species[sorted[q]])?;
            if v.norm() <= cutoff {
                adj[p].push((q, v));
                adj[q].push((p, -v));
            }
        }
    }

    let mut placed: Vec<Option<Vector3<f64>>> = vec![None; m];
    placed[0] = Some(s.cart[sorted[0]]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(p) = queue.pop_front() {
        let here = placed[p].unwrap();
        for &(q, v) in &adj[p] {
            if placed[q].is_none() {
                placed[q] = Some(here + v);
                queue.push_back(q);
            }
        }
    }
    if placed.iter().any(Option::is_none) {
        return Err(Error::InvalidInput(
            "block indices do not form one connected component".into(),
        ));
    }
    // Return in the caller's index order.
    let pos_of = |a: usize| sorted.binary_search(&a).unwrap();
    Ok(indices.iter().map(|&a| placed[pos_of(a)].unwrap()).collect())
}
