//! Niggli reduction (Křivý–Gruber with an ε tolerance).

use nalgebra::{Matrix3, RowVector3};

use crate::error::{Error, Result};
use crate::Lattice;

/// A reduced cell and the integer matrix `t` with `reduced = t · original`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduced {
    pub lattice: Lattice,
    pub transform: Matrix3<i64>,
}

const MAX_ITER: usize = 10_000;

struct G6 {
    a: f64,
    b: f64,
    c: f64,
    xi: f64,
    eta: f64,
    zeta: f64,
}

fn g6(m: &Matrix3<f64>) -> G6 {
    let (a, b, c) = (m.row(0), m.row(1), m.row(2));
    G6 {
        a: a.dot(&a),
        b: b.dot(&b),
        c: c.dot(&c),
        xi: 2.0 * b.dot(&c),
        eta: 2.0 * a.dot(&c),
        zeta: 2.0 * a.dot(&b),
    }
}

fn sign_eps(x: f64, eps: f64) -> i32 {
    if x > eps {
        1
    } else if x < -eps {
        -1
    } else {
        0
    }
}

/// Reduces `l` to its Niggli cell. `tol` is relative to `V^{2/3}`.
pub fn niggli_reduce(l: &Lattice, tol: f64) -> Result<Reduced> {
    let eps = tol * l.volume().powf(2.0 / 3.0);
    let mut m = *l.matrix();
    let mut t = Matrix3::<f64>::identity();
    let apply = |m: &mut Matrix3<f64>, t: &mut Matrix3<f64>, op: Matrix3<f64>| {
        *m = op * *m;
        *t = op * *t;
    };
    let row_op = |rows: [[f64; 3]; 3]| {
        Matrix3::from_rows(&[
            RowVector3::from(rows[0]),
            RowVector3::from(rows[1]),
            RowVector3::from(rows[2]),
        ])
    };
    for _ in 0..MAX_ITER {
        let g = g6(&m);
        if g.a > g.b + eps || ((g.a - g.b).abs() <= eps && g.xi.abs() > g.eta.abs() + eps) {
            apply(&mut m, &mut t, row_op([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]));
            continue;
        }
        if g.b > g.c + eps || ((g.b - g.c).abs() <= eps && g.eta.abs() > g.zeta.abs() + eps) {
            apply(&mut m, &mut t, row_op([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]));
            continue;
        }
        let (l_, m_, n_) = (sign_eps(g.xi, eps), sign_eps(g.eta, eps), sign_eps(g.zeta, eps));
        if l_ * m_ * n_ == 1 {
            let s = |v: i32| if v == -1 { -1.0 } else { 1.0 };
            let op = Matrix3::from_diagonal(&nalgebra::Vector3::new(s(l_), s(m_), s(n_)));
            if op != Matrix3::identity() {
                apply(&mut m, &mut t, op);
            }
        } else {
            let mut d = [1.0, 1.0, 1.0];
            let mut free = None;
            for (k, v) in [l_, m_, n_].into_iter().enumerate() {
                if v == 1 {
                    d[k] = -1.0;
                } else if v == 0 {
                    free = Some(k);
                }
            }
            if d[0] * d[1] * d[2] < 0.0 {
                if let Some(k) = free {
                    d[k] = -1.0;
                }
            }
            if d[0] * d[1] * d[2] > 0.0 && d != [1.0, 1.0, 1.0] {
                apply(&mut m, &mut t, Matrix3::from_diagonal(&nalgebra::Vector3::from(d)));
            }
        }
        let g = g6(&m);
        let sgn = |x: f64| if x > 0.0 { 1.0 } else { -1.0 };
        if g.xi.abs() > g.b + eps
            || ((g.xi - g.b).abs() <= eps && 2.0 * g.eta < g.zeta - eps)
            || ((g.xi + g.b).abs() <= eps && g.zeta < -eps)
        {
            apply(&mut m, &mut t, row_op([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -sgn(g.xi), 1.0]]));
            continue;
        }
        if g.eta.abs() > g.a + eps
            || ((g.eta - g.a).abs() <= eps && 2.0 * g.xi < g.zeta - eps)
            || ((g.eta + g.a).abs() <= eps && g.zeta < -eps)
        {
            apply(&mut m, &mut t, row_op([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-sgn(g.eta), 0.0, 1.0]]));
            continue;
        }
        if g.zeta.abs() > g.a + eps
            || ((g.zeta - g.a).abs() <= eps && 2.0 * g.xi < g.eta - eps)
            || ((g.zeta + g.a).abs() <= eps && g.eta < -eps)
        {
            apply(&mut m, &mut t, row_op([[1.0, 0.0, 0.0], [-sgn(g.zeta), 1.0, 0.0], [0.0, 0.0, 1.0]]));
            continue;
        }
        let sum = g.xi + g.eta + g.zeta + g.a + g.b;
        if sum < -eps || (sum.abs() <= eps && 2.0 * (g.a + g.eta) + g.zeta > eps) {
            apply(&mut m, &mut t, row_op([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]]));
            continue;
        }
        return Ok(Reduced {
            lattice: Lattice::new(m)?,
            transform: t.map(|x| x.round() as i64),
        });
    }
    Err(Error::InvalidLattice("Niggli reduction did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{params_to_lattice, LatticeParams};

    #[test]
    fn cubic_is_fixed() {
        let r = niggli_reduce(&Lattice::cubic(4.0), 1e-5).unwrap();
        assert!((r.lattice.matrix() - Lattice::cubic(4.0).matrix()).abs().max() < 1e-12);
        assert_eq!(r.transform.map(|x| x as f64).determinant(), 1.0);
    }

    #[test]
    fn skewed_basis_reduces_to_same_cell() {
        let base = params_to_lattice(&LatticeParams {
            a: 5.0,
            b: 6.0,
            c: 7.0,
            alpha: 80.0,
            beta: 95.0,
            gamma: 100.0,
        })
        .unwrap();
        let r0 = niggli_reduce(&base, 1e-5).unwrap();
        let u = Matrix3::<f64>::new(1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(u.determinant().round(), 1.0);
        let skew = Lattice::new(u * base.matrix()).unwrap();
        let r1 = niggli_reduce(&skew, 1e-5).unwrap();
        let p0 = r0.lattice.params();
        let p1 = r1.lattice.params();
        for (x, y) in [(p0.a, p1.a), (p0.b, p1.b), (p0.c, p1.c), (p0.alpha, p1.alpha), (p0.beta, p1.beta), (p0.gamma, p1.gamma)] {
            assert!((x - y).abs() < 1e-6, "{p0:?} vs {p1:?}");
        }
        let back = r1.transform.map(|x| x as f64) * skew.matrix();
        assert!((back - r1.lattice.matrix()).abs().max() < 1e-9);
    }
}
