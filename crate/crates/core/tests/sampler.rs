mod common;

use common::{decomposed, fit_scaler, items, small_config};
use mcflow::elements::RadiiTable;
use mcflow::flowmatch::{fit_lattice_prior, sample_base, FlowSample, Prediction, PriorSpec};
use mcflow::manifold::{geodesic_distance_so3, log_at, so3_exp, torus_displacement, wrap};
use mcflow::net::Model;
use mcflow::sampler::{
    chi_pattern, ellipsoid_overlap, generate, integrate, ConditionalDenoiser, Denoiser, Ellipsoid,
    GenerationRequest, ModelDenoiser, SamplerConfig,
};
use mcflow::synth::{random_rotation, Molecule};
use mcflow::{AxisAngle, Lattice, Rotation};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64) -> (FlowSample, FlowSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = decomposed(&mut rng, Molecule::ethanol(), 4, "x");
    let c1 = FlowSample::from_crystal(&c);
    let prior = fit_lattice_prior([&c.lattice]).unwrap();
    let c0 = sample_base(c1.len(), &c1.chi, &prior, &mut rng).unwrap();
    (c0, c1)
}

/// Largest per-modality distance between two states.
fn errors(a: &FlowSample, b: &FlowSample) -> [f64; 3] {
    let l = (a.lattice.matrix() - b.lattice.matrix()).abs().max();
    let f = a.frac.iter().zip(&b.frac).map(|(x, y)| torus_displacement(x, y).norm()).fold(0.0, f64::max);
    let r = a.rot.iter().zip(&b.rot).map(|(x, y)| geodesic_distance_so3(x, y)).fold(0.0, f64::max);
    [l, f, r]
}

fn plain() -> SamplerConfig {
    SamplerConfig {
        s_uf: 0.0,
        s_ur: 0.0,
        overlap_threshold: None,
        ..Default::default()
    }
}

#[test]
fn analytic_field_reaches_target() {
    for seed in 0..10 {
        let (c0, c1) = pair(seed);
        let field = ConditionalDenoiser::new(&c0, &c1).unwrap();
        let end = integrate(&field, &c0, &SamplerConfig { t_clip: None, ..plain() }).unwrap();
        for e in errors(&end, &c1) {
            assert!(e < 1e-2, "{:?}", errors(&end, &c1));
        }
        for r in &end.rot {
            assert!(r.orthonormality_error() < 1e-9);
        }
        // With the guard, the last five steps each close a fifth of the
        // remaining lattice gap instead of following the path.
        let end = integrate(&field, &c0, &plain()).unwrap();
        let expected = c1.lattice.matrix() + (c0.lattice.matrix() - c1.lattice.matrix()) * (0.1 * 0.8f64.powi(5));
        assert!((end.lattice.matrix() - expected).abs().max() < 1e-9);
    }
}

#[test]
fn single_step_jumps_to_prediction() {
    let (c0, c1) = pair(11);
    let field = ConditionalDenoiser::new(&c0, &c1).unwrap();
    let end = integrate(&field, &c0, &SamplerConfig { n_steps: 1, ..plain() }).unwrap();
    assert!((end.lattice.matrix() - c1.lattice.matrix()).abs().max() < 1e-12);
    for (a, b) in end.rot.iter().zip(&c1.rot) {
        assert!((a.matrix() - b.matrix()).abs().max() < 1e-9);
    }
}

#[test]
fn unannealed_matches_reference_euler() {
    let (c0, c1) = pair(12);
    let field = ConditionalDenoiser::new(&c0, &c1).unwrap();
    let cfg = SamplerConfig { n_steps: 20, ..plain() };
    let end = integrate(&field, &c0, &cfg).unwrap();

    let mut s = c0.clone();
    for step in 0..20 {
        let t = step as f64 * (1.0 / 20.0);
        let p: Prediction = field.denoise(&s).unwrap();
        let inv = 1.0 / (1.0 - t.min(0.9));
        let l = s.lattice.matrix() + (p.l1 - s.lattice.matrix()) * inv * (1.0 / 20.0);
        s.lattice = Lattice::new(l).unwrap();
        for k in 0..s.len() {
            s.frac[k] = wrap(s.frac[k].coords() + p.u_f[k] * (1.0 / 20.0)).unwrap();
            let u = log_at(&s.rot[k], &p.r1[k]).vector() * inv;
            let inc = so3_exp(&AxisAngle::new(u * (1.0 / 20.0)));
            s.rot[k] = Rotation::project(&(s.rot[k].matrix() * inc.matrix())).unwrap();
        }
    }
    assert_eq!(end.lattice, s.lattice);
    assert_eq!(end.frac, s.frac);
    assert_eq!(end.rot, s.rot);
}

#[test]
fn annealed_error_shrinks_with_steps() {
    // dF/dt = (1 + s t) u integrates to F₀ + (1 + s/2) u.
    let (c0, c1) = pair(13);
    let field = ConditionalDenoiser::new(&c0, &c1).unwrap();
    let s = 9.0;
    let exact: Vec<_> = c0
        .frac
        .iter()
        .zip(&field.u_f)
        .map(|(f, u)| wrap(f.coords() + u * (1.0 + s / 2.0)).unwrap())
        .collect();
    let mut last = f64::INFINITY;
    for n in [10, 50, 250] {
        let end = integrate(&field, &c0, &SamplerConfig { n_steps: n, s_uf: s, ..plain() }).unwrap();
        let err = end.frac.iter().zip(&exact).map(|(a, b)| torus_displacement(a, b).norm()).fold(0.0, f64::max);
        assert!(err < last, "n = {n}: {err} ≥ {last}");
        last = err;
    }
}

#[test]
fn sphere_lens_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = Ellipsoid::sphere(Vector3::zeros(), 1.0);
    let b = Ellipsoid::sphere(Vector3::new(1.0, 0.0, 0.0), 1.0);
    let est = ellipsoid_overlap(&a, &b, 20_000, &mut rng);
    assert!((est.fraction - 0.3125).abs() < 3.0 * est.std_error, "{est:?}");
    let same = ellipsoid_overlap(&a, &a, 2048, &mut rng);
    assert_eq!(same.fraction, 1.0);
    let far = Ellipsoid::sphere(Vector3::new(2.01, 0.0, 0.0), 1.0);
    assert_eq!(ellipsoid_overlap(&a, &far, 2048, &mut rng).fraction, 0.0);
}

#[test]
fn ellipsoid_from_points_padding() {
    let pts = vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
    let e = Ellipsoid::from_points(&pts, 0.5);
    assert!((e.semi[0] - 2.5).abs() < 1e-12);
    assert!((e.semi[1] - 0.5).abs() < 1e-12);
    assert!(e.contains(&Vector3::new(2.4, 0.0, 0.0)));
    assert!(!e.contains(&Vector3::new(0.0, 0.6, 0.0)));
}

struct Setup {
    model: Model,
    prior: PriorSpec,
    request: GenerationRequest,
}

fn setup(n_samples: usize) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let c = decomposed(&mut rng, Molecule::bromochlorofluoromethane(), 2, "x");
    let scaler = fit_scaler(std::slice::from_ref(&c));
    let m = Molecule::bromochlorofluoromethane();
    Setup {
        model: Model::new(&small_config(), scaler, 15).unwrap(),
        prior: fit_lattice_prior([&c.lattice]).unwrap(),
        request: GenerationRequest {
            species: m.species.clone(),
            coords: m.coords.clone(),
            chi: chi_pattern(2, true),
            n_samples,
            seed: 7,
            descriptors: None,
        },
    }
}

#[test]
fn generation_is_valid_and_deterministic() {
    let s = setup(40);
    let cfg = SamplerConfig {
        overlap_threshold: None,
        ..Default::default()
    };
    let radii = RadiiTable::default();
    let a = generate(&s.model, &s.prior, &s.request, &cfg, &radii).unwrap();
    let b = generate(&s.model, &s.prior, &s.request, &cfg, &radii).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples.len() + a.warnings.len(), 40);
    for g in &a.samples {
        assert!(g.crystal.check().is_empty(), "{:?}", g.crystal.check());
        assert_eq!(g.structure.len(), 2 * 5);
        assert_eq!(g.crystal.blocks.iter().map(|b| b.chi).collect::<Vec<_>>(), vec![0, 1]);
    }
    let empty = generate(&s.model, &s.prior, &GenerationRequest { n_samples: 0, ..s.request.clone() }, &cfg, &radii).unwrap();
    assert!(empty.samples.is_empty());
}

#[test]
fn overlap_filter_enforced() {
    let s = setup(10);
    let cfg = SamplerConfig::default();
    let gen = generate(&s.model, &s.prior, &s.request, &cfg, &RadiiTable::default()).unwrap();
    for g in &gen.samples {
        assert!(g.record.overlap.unwrap() <= 0.05);
    }
}

#[test]
fn sampling_is_rotation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let c = decomposed(&mut rng, Molecule::ethanol(), 2, "x");
    let scaler = fit_scaler(std::slice::from_ref(&c));
    let model = Model::new(&small_config(), scaler.clone(), 16).unwrap();
    let item = &items(std::slice::from_ref(&c), &scaler)[0];
    let field = ModelDenoiser {
        model: &model,
        types: &item.types,
        block_type: &item.block_type,
    };
    let prior = fit_lattice_prior([&c.lattice]).unwrap();
    let cfg = SamplerConfig {
        overlap_threshold: None,
        ..Default::default()
    };
    // An untrained network can drive some draws to a degenerate cell.
    let (c0, a) = (0..50)
        .find_map(|_| {
            let c0 = sample_base(2, &item.target.chi, &prior, &mut rng).unwrap();
            integrate(&field, &c0, &cfg).ok().map(|a| (c0, a))
        })
        .unwrap();
    let q = random_rotation(&mut rng);
    let mut c0q = c0.clone();
    c0q.lattice = c0.lattice.rotated(&q);
    c0q.rot = c0.rot.iter().map(|r| q.compose(r)).collect();
    let b = integrate(&field, &c0q, &cfg).unwrap();
    assert!((b.lattice.matrix() - a.lattice.matrix() * q.transpose().matrix()).abs().max() < 1e-5);
    for k in 0..2 {
        assert!(torus_displacement(&a.frac[k], &b.frac[k]).norm() < 1e-5);
        assert!((b.rot[k].matrix() - q.matrix() * a.rot[k].matrix()).abs().max() < 1e-5);
    }
}

