//! Graph heuristics for the chemical descriptors.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use nalgebra::Vector3;

use super::MolecularGraph;
use crate::crystal::{covariance, sorted_eigen};
use crate::elements::is_hydrogen;

const LINEAR_DEG: f64 = 170.0;
const RING_PLANARITY: f64 = 0.1;
const SUBTREE_DEPTH: usize = 8;

/// `(chirality_flag, donors, acceptors, rotatable, aromatic_rings, logP, TPSA)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChemicalFeatures {
    pub chirality_flag: u32,
    pub donors: u32,
    pub acceptors: u32,
    pub rotatable: u32,
    pub aromatic_rings: u32,
    pub logp: f64,
    pub tpsa: f64,
}

struct Env<'a> {
    g: &'a MolecularGraph,
    adj: Vec<Vec<usize>>,
}

impl<'a> Env<'a> {
    fn new(g: &'a MolecularGraph) -> Self {
        let mut adj = vec![Vec::new(); g.species.len()];
        for &(i, j) in &g.bonds {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|v| v.sort_unstable());
        Self { g, adj }
    }

    fn el(&self, i: usize) -> &str {
        &self.g.species[i]
    }

    fn heavy(&self, i: usize) -> bool {
        !is_hydrogen(self.el(i))
    }

    fn heavy_degree(&self, i: usize) -> usize {
        self.adj[i].iter().filter(|&&j| self.heavy(j)).count()
    }

    fn h_count(&self, i: usize) -> usize {
        self.adj[i].len() - self.heavy_degree(i)
    }

    fn saturated(&self, i: usize) -> bool {
        let valence = match self.el(i) {
            "C" | "Si" => 4,
            "N" | "P" => 3,
            "O" | "S" | "Se" => 2,
            "F" | "Cl" | "Br" | "I" | "H" => 1,
            _ => return false,
        };
        self.adj[i].len() >= valence
    }

    fn linear(&self, i: usize) -> bool {
        if self.adj[i].len() != 2 {
            return false;
        }
        let c = self.g.coords[i];
        let a = self.g.coords[self.adj[i][0]] - c;
        let b = self.g.coords[self.adj[i][1]] - c;
        let cos = a.dot(&b) / (a.norm() * b.norm());
        cos.clamp(-1.0, 1.0).acos().to_degrees() > LINEAR_DEG
    }

    /// True when removing the bond disconnects its endpoints.
    fn is_bridge(&self, i: usize, j: usize) -> bool {
        let mut seen = vec![false; self.adj.len()];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(p) = queue.pop_front() {
            for &q in &self.adj[p] {
                if p == i && q == j {
                    continue;
                }
                if q == j {
                    return false;
                }
                if !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        true
    }

    fn subtree_hash(&self, node: usize, parent: usize, depth: usize) -> u64 {
        let mut children: Vec<u64> = if depth == 0 {
            Vec::new()
        } else {
            self.adj[node]
                .iter()
                .filter(|&&n| n != parent)
                .map(|&n| self.subtree_hash(n, node, depth - 1))
                .collect()
        };
        children.sort_unstable();
        let mut h = DefaultHasher::new();
        self.el(node).hash(&mut h);
        self.adj[node].len().hash(&mut h);
        children.hash(&mut h);
        h.finish()
    }
}

/// Edge sets of a smallest set of smallest rings.
///
/// Candidate cycles come from the shortest alternative path around every
/// edge; a GF(2)-independent subset of size `E − V + C` is kept in order of
/// length.
pub fn smallest_rings(n: usize, bonds: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (e, &(i, j)) in bonds.iter().enumerate() {
        adj[i].push((j, e));
        adj[j].push((i, e));
    }
    let n_comp = crate::crystal::components(n, bonds.iter().copied()).len();
    let rank = (bonds.len() + n_comp).saturating_sub(n);
    if rank == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (skip, &(s, t)) in bonds.iter().enumerate() {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(p) = queue.pop_front() {
            if p == t {
                break;
            }
            for &(q, e) in &adj[p] {
                if e != skip && !seen[q] {
                    seen[q] = true;
                    prev[q] = Some((p, e));
                    queue.push_back(q);
                }
            }
        }
        if !seen[t] {
            continue;
        }
        let mut edges = vec![skip];
        let mut atoms = vec![t];
        let mut cur = t;
        while let Some((p, e)) = prev[cur] {
            edges.push(e);
            if p != s {
                atoms.push(p);
            }
            cur = p;
        }
        atoms.push(s);
        edges.sort_unstable();
        candidates.push((edges, atoms));
    }
    candidates.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(&b.0)));
    candidates.dedup_by(|a, b| a.0 == b.0);

    // Gaussian elimination over GF(2) on edge-incidence bit vectors.
    let words = bonds.len().div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut rings = Vec::new();
    for (edges, atoms) in candidates {
        let mut v = vec![0u64; words];
        for e in &edges {
            v[e / 64] |= 1 << (e % 64);
        }
        for (pivot, b) in &basis {
            if v[pivot / 64] >> (pivot % 64) & 1 == 1 {
                v.iter_mut().zip(b).for_each(|(x, y)| *x ^= y);
            }
        }
        if let Some(pivot) = (0..bonds.len()).find(|&e| v[e / 64] >> (e % 64) & 1 == 1) {
            basis.push((pivot, v));
            rings.push(atoms);
            if rings.len() == rank {
                break;
            }
        }
    }
    rings
}

fn plane_residual(points: &[Vector3<f64>]) -> f64 {
    let (u, _) = sorted_eigen(&covariance(points));
    let normal = u.column(2);
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    points.iter().map(|p| normal.dot(&(p - c)).abs()).fold(0.0, f64::max)
}

fn crippen(env: &Env, i: usize, aromatic: &[bool]) -> f64 {
    let hetero = |j: &usize| matches!(env.el(*j), "N" | "O");
    match env.el(i) {
        "C" => {
            if aromatic[i] {
                0.1581
            } else if env.adj[i].iter().any(hetero) {
                -0.2035
            } else if env.adj[i].len() < 4 {
                -0.1002
            } else if env.h_count(i) >= 2 {
                0.1441
            } else {
                0.0
            }
        }
        "H" => match env.adj[i].first().map(|&j| env.el(j)) {
            Some("C") => 0.1230,
            Some("O") => -0.2677,
            Some("N") => 0.2142,
            _ => 0.0,
        },
        "O" => {
            if aromatic[i] {
                0.1552
            } else if env.adj[i].len() == 1 && env.h_count(i) == 0 {
                -0.1526
            } else if env.h_count(i) >= 1 {
                -0.2893
            } else {
                -0.0684
            }
        }
        "N" => {
            if aromatic[i] {
                -0.4806
            } else {
                match env.h_count(i) {
                    2.. => -1.0190,
                    1 => -0.7096,
                    _ => -0.3187,
                }
            }
        }
        "F" => 0.4202,
        "Cl" => 0.6895,
        "Br" => 0.8456,
        "I" => 0.8857,
        "S" => 0.6482,
        "P" => 0.8612,
        _ => 0.0,
    }
}

fn ertl(env: &Env, i: usize, aromatic: &[bool]) -> f64 {
    let heavy = env.heavy_degree(i);
    let h = env.h_count(i);
    match env.el(i) {
        "O" => match (aromatic[i], heavy, h) {
            (true, _, _) => 13.14,
            (false, 1, 1) => 20.23,
            (false, 2, 0) => 9.23,
            (false, 1, 0) => 17.07,
            _ => 0.0,
        },
        "N" => match (aromatic[i], heavy, h) {
            (true, _, _) => 12.89,
            (false, 1, 2) => 26.02,
            (false, 2, 1) => 12.03,
            (false, 3, 0) => 3.24,
            (false, 2, 0) => 12.36,
            (false, 1, 0) => 23.79,
            _ => 0.0,
        },
        _ => 0.0,
    }
}

pub fn chemical_features(g: &MolecularGraph) -> ChemicalFeatures {
    let env = Env::new(g);
    let n = g.species.len();
    let no = |i: usize| matches!(env.el(i), "N" | "O");

    let donors = (0..n).filter(|&i| no(i) && env.h_count(i) >= 1).count() as u32;
    let acceptors = (0..n).filter(|&i| no(i)).count() as u32;

    let rotatable = g
        .bonds
        .iter()
        .filter(|&&(i, j)| {
            env.heavy(i)
                && env.heavy(j)
                && env.heavy_degree(i) >= 2
                && env.heavy_degree(j) >= 2
                && (env.saturated(i) || env.saturated(j))
                && !env.linear(i)
                && !env.linear(j)
                && env.is_bridge(i, j)
        })
        .count() as u32;

    let mut aromatic = vec![false; n];
    let mut aromatic_rings = 0;
    for ring in smallest_rings(n, &g.bonds) {
        let sp2 = ring.iter().all(|&i| env.heavy(i) && env.adj[i].len() <= 3);
        let pts: Vec<_> = ring.iter().map(|&i| g.coords[i]).collect();
        if sp2 && ring.len() >= 5 && plane_residual(&pts) < RING_PLANARITY {
            aromatic_rings += 1;
            ring.iter().for_each(|&i| aromatic[i] = true);
        }
    }

    let chiral = (0..n).any(|c| {
        if env.el(c) != "C" || env.adj[c].len() != 4 {
            return false;
        }
        let mut hs: Vec<u64> = env.adj[c]
            .iter()
            .map(|&nb| env.subtree_hash(nb, c, SUBTREE_DEPTH))
            .collect();
        hs.sort_unstable();
        hs.dedup();
        hs.len() == 4
    });

    let logp = (0..n).map(|i| crippen(&env, i, &aromatic)).sum();
    let tpsa = (0..n).map(|i| ertl(&env, i, &aromatic)).sum();

    ChemicalFeatures {
        chirality_flag: chiral as u32,
        donors,
        acceptors,
        rotatable,
        aromatic_rings,
        logp,
        tpsa,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_counts() {
        // Naphthalene skeleton: two fused six-rings.
        let bonds = vec![
            (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0),
            (4, 6), (6, 7), (7, 8), (8, 9), (9, 5),
        ];
        let rings = smallest_rings(10, &bonds);
        assert_eq!(rings.len(), 2);
        assert!(rings.iter().all(|r| r.len() == 6));
        assert!(smallest_rings(3, &[(0, 1), (1, 2)]).is_empty());
    }
}
