use itertools::Itertools;
use mcflow::flowmatch::{
    assignment_cost, conditional_velocity, fit_lattice_prior, flow_loss, hungarian, ot_align,
    ot_cost, sample_base, velocity_towards, FlowSample, LossWeights, Prediction, VelocityTarget,
};
use mcflow::manifold::{geodesic_distance_so3, so3_exp, so3_log, torus_displacement};
use mcflow::{AxisAngle, Lattice};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn prior() -> mcflow::flowmatch::PriorSpec {
    let ls = [Lattice::cubic(6.0), Lattice::cubic(8.0), Lattice::cubic(7.0)];
    fit_lattice_prior(&ls).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (FlowSample, FlowSample) {
    let chi: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let mut p = prior();
    p.rotation_prior = mcflow::flowmatch::RotationPrior::Independent;
    let c0 = sample_base(n, &chi, &p, rng).unwrap();
    let mut c1 = sample_base(n, &chi, &p, rng).unwrap();
    c1.t = 1.0;
    (c0, c1)
}

#[test]
fn euler_path_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (c0, c1) = random_pair(&mut rng, 3);
        let k = 1000;
        let dt = 1.0 / k as f64;
        let mut x = c0.clone();
        for step in 0..k {
            let t = step as f64 * dt;
            let v = velocity_towards(&x, &c1, t).unwrap();
            let l = x.lattice.matrix() + v.u_l * dt;
            x.lattice = Lattice::new(l).unwrap();
            for b in 0..x.len() {
                x.frac[b] = x.frac[b].translate(&(v.u_f[b] * dt)).unwrap();
                x.rot[b] = x.rot[b].compose(&so3_exp(&AxisAngle::new(v.u_r[b] * dt)));
            }
        }
        assert!((x.lattice.matrix() - c1.lattice.matrix()).norm() < 1e-3);
        for b in 0..x.len() {
            assert!(torus_displacement(&x.frac[b], &c1.frac[b]).norm() < 1e-3);
            assert!(geodesic_distance_so3(&x.rot[b], &c1.rot[b]) < 1e-3);
        }
    }
}

#[test]
fn hungarian_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let n = 1 + trial % 6;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let best = (0..n)
            .permutations(n)
            .map(|p| assignment_cost(&cost, &p))
            .fold(f64::INFINITY, f64::min);
        let got = assignment_cost(&cost, &hungarian(&cost));
        assert!((got - best).abs() < 1e-12, "n={n}: {got} vs {best}");
    }
}

fn total_cost(c0: &FlowSample, c1: &FlowSample) -> f64 {
    (0..c0.len())
        .map(|k| ot_cost(&c0.frac[k], &c0.rot[k], &c1.frac[k], &c1.rot[k]))
        .sum()
}

#[test]
fn ot_align_matches_exhaustive_within_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = 1 + trial % 6;
        let (c0, c1) = random_pair(&mut rng, n);
        let (aligned, perm) = ot_align(&c0, &c1).unwrap();
        for k in 0..n {
            assert_eq!(c0.chi[perm[k]], c1.chi[k]);
        }
        let best = (0..n)
            .permutations(n)
            .filter(|p| (0..n).all(|k| c0.chi[p[k]] == c1.chi[k]))
            .map(|p| total_cost(&c0.permuted(&p), &c1))
            .fold(f64::INFINITY, f64::min);
        assert!((total_cost(&aligned, &c1) - best).abs() < 1e-9);
    }
}

#[test]
fn ot_never_increases_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..10_000 {
        let n = 1 + trial % 8;
        let (c0, c1) = random_pair(&mut rng, n);
        let (aligned, _) = ot_align(&c0, &c1).unwrap();
        assert!(total_cost(&aligned, &c1) <= total_cost(&c0, &c1) + 1e-12);
        assert_eq!(aligned.chi, c1.chi);
    }
}

#[test]
fn haar_angle_distribution() {
    let p = prior();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let bins = 50;
    let mut counts = vec![0usize; bins];
    let n = 100_000;
    for _ in 0..n {
        let s = sample_base(1, &[0], &p, &mut rng).unwrap();
        let w = so3_log(&s.rot[0]).angle();
        let k = ((w / std::f64::consts::PI) * bins as f64) as usize;
        counts[k.min(bins - 1)] += 1;
    }
    // Oracle: CDF of (1 − cos ω)/π is (ω − sin ω)/π.
    let cdf = |w: f64| (w - w.sin()) / std::f64::consts::PI;
    let mut chi2 = 0.0;
    for k in 0..bins {
        let lo = std::f64::consts::PI * k as f64 / bins as f64;
        let hi = std::f64::consts::PI * (k + 1) as f64 / bins as f64;
        let expected = n as f64 * (cdf(hi) - cdf(lo));
        chi2 += (counts[k] as f64 - expected).powi(2) / expected;
    }
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "χ² = {chi2:.2} ≥ {critical:.2}");
}

#[test]
fn prior_lattices_in_bounds_and_reproducible() {
    let p = prior();
    let mut a = ChaCha8Rng::seed_from_u64(7);
    let mut b = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let s = sample_base(3, &[0, 1, 0], &p, &mut a).unwrap();
        let t = sample_base(3, &[0, 1, 0], &p, &mut b).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), serde_json::to_string(&t).unwrap());
        let par = s.lattice.params();
        for ang in [par.alpha, par.beta, par.gamma] {
            assert!((60.0 - 1e-9..=120.0 + 1e-9).contains(&ang), "{ang}");
        }
        assert!(par.a <= par.b + 1e-12 && par.b <= par.c + 1e-12);
        assert!(s.lattice.volume() > 0.0);
    }
}

fn loss_case(seed: u64, perturb: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = random_pair(&mut rng, 3);
    let t = rng.random_range(0.0..0.99);
    let target: VelocityTarget = conditional_velocity(&c0, &c1, t).unwrap();
    let rt = mcflow::flowmatch::interpolate(&c0, &c1, t).unwrap().rot;
    let mut pred = Prediction {
        l1: *target.l1.matrix(),
        r1: target.r1.clone(),
        u_f: target.u_f.clone(),
    };
    pred.l1 += Matrix3::identity() * perturb;
    pred.u_f[1] += Vector3::new(0.0, perturb, 0.0);
    flow_loss(&pred, &target, &rt, t, &LossWeights::default()).unwrap()
}

proptest! {
    #[test]
    fn loss_zero_iff_exact(seed in any::<u64>(), perturb in 1e-5f64..1.0) {
        prop_assert!(loss_case(seed, 0.0).abs() < 1e-12);
        prop_assert!(loss_case(seed, perturb) > 1e-12);
    }
}
