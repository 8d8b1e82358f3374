use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vortexmf_core::euler_pde::{self, cfl_limit, lp_norm, InitialProfile, Lp, VorticityGrid};
use vortexmf_core::modulated_energy::field_self_energy;
use vortexmf_core::noise::{BrownianPath, NoiseMode, NoiseModel};
use vortexmf_core::vortex_sde::{drift, heun_step, VortexEnsemble};
use vortexmf_core::{vec2, Vec2};

fn four_modes() -> NoiseModel {
    NoiseModel::new(vec![
        NoiseMode::fourier(0.3, vec2(1.0, 0.0), 0.0).unwrap(),
        NoiseMode::fourier(0.3, vec2(0.0, 1.0), 0.5).unwrap(),
        NoiseMode::fourier(0.2, vec2(1.0, 1.0), 1.0).unwrap(),
        NoiseMode::fourier(0.2, vec2(1.0, -1.0), 2.0).unwrap(),
    ])
}

fn positions(len: usize) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y)| vec2(x, y)), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_has_zero_total_momentum(pts in positions(24)) {
        let e = VortexEnsemble::new(pts).unwrap();
        prop_assume!(e.min_pair_distance().0 > 1e-6);
        let v = drift(&e).unwrap();
        let total: Vec2 = v.iter().sum::<Vec2>() * e.weight();
        let scale = v.iter().map(|x| x.norm()).fold(0.0, f64::max) * e.weight();
        prop_assert!(total.norm() <= 1e-13 * scale.max(1.0));
    }

    #[test]
    fn drift_is_permutation_equivariant(pts in positions(12), seed in any::<u64>()) {
        let e = VortexEnsemble::new(pts).unwrap();
        prop_assume!(e.min_pair_distance().0 > 1e-6);
        let mut perm: Vec<usize> = (0..e.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let v = drift(&e).unwrap();
        let w = drift(&e.permuted(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((w[k] - v[i]).norm() <= 1e-12 * (1.0 + v[i].norm()));
        }
    }

    #[test]
    fn drift_is_translation_invariant(pts in positions(12), sx in -3.0..3.0f64, sy in -3.0..3.0f64) {
        let e = VortexEnsemble::new(pts).unwrap();
        prop_assume!(e.min_pair_distance().0 > 1e-4);
        let v = drift(&e).unwrap();
        let w = drift(&e.translated(vec2(sx, sy))).unwrap();
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).norm() <= 1e-9 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn noise_modes_are_divergence_free_and_differentiated(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let p = vec2(x, y);
        let step = 1e-5;
        for m in four_modes().modes() {
            let j = m.jacobian(p);
            prop_assert!(j.trace().abs() < 1e-8);
            for axis in 0..2 {
                let e = if axis == 0 { vec2(step, 0.0) } else { vec2(0.0, step) };
                let fd = (m.value(p + e) - m.value(p - e)) / (2.0 * step);
                prop_assert!((fd - j.column(axis)).norm() <= 1e-6 * (1.0 + j.norm()));
            }
        }
    }

    #[test]
    fn ito_correction_matches_differences(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let p = vec2(x, y);
        let noise = four_modes();
        let step = 1e-5;
        let fd: Vec2 = noise
            .modes()
            .iter()
            .map(|m| {
                let s = m.value(p);
                (m.value(p + step * s) - m.value(p - step * s)) / (2.0 * step)
            })
            .sum::<Vec2>()
            * 0.5;
        prop_assert!((fd - noise.ito_correction(p)).norm() <= 1e-6 * (1.0 + fd.norm()));
    }
}

#[test]
fn noise_norms_bound_samples() {
    let noise = four_modes();
    let (sup, _) = noise.norms();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let p = vec2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let s: f64 = noise.modes().iter().map(|m| m.value(p).norm_squared()).sum::<f64>().sqrt();
        assert!(s <= sup + 1e-12);
    }
}

#[test]
fn brownian_increments_have_the_right_law() {
    let dt = 0.01;
    let path = BrownianPath::new(99, dt).unwrap();
    let samples = path.increments_range(2, 0..200_000);
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (m - 1.0);
    assert!(mean.abs() < 5.0 * (dt / m).sqrt(), "mean {mean}");
    assert!((var / dt - 1.0).abs() < 0.02, "variance ratio {}", var / dt);
    let other = BrownianPath::new(99, dt).unwrap();
    assert_eq!(other.increment(2, 12345), samples[12345]);
}

#[test]
fn particle_and_field_consume_the_same_increments() {
    // a constant mode translates both solvers by the same Σ c ΔW, bit for bit on the particle side
    let noise = NoiseModel::new(vec![NoiseMode::constant(0.4, vec2(1.0, 0.0)).unwrap()]);
    let path = BrownianPath::for_realization(4, 2, 0.01).unwrap();
    let dw = path.increments(1, 3);
    let e = VortexEnsemble::new(vec![vec2(0.3, 0.0), vec2(-0.3, 0.0)]).unwrap();
    let quiet = heun_step(&e, &NoiseModel::none(), &[], 0.01, None, 0.0).unwrap().0;
    let noisy = heun_step(&e, &noise, &dw, 0.01, None, 0.0).unwrap().0;
    for (a, b) in quiet.positions().iter().zip(noisy.positions()) {
        assert!((b - a - vec2(0.4 * dw[0], 0.0)).norm() < 1e-15);
    }
    let grid = InitialProfile::Gaussian { width: 0.3, center: [0.0, 0.0] }.grid(3.0, 64).unwrap();
    let moved = euler_pde::step(&grid, &noise, &path, 3, 0.01).unwrap();
    let still = euler_pde::step(&grid, &NoiseModel::none(), &path, 3, 0.01).unwrap();
    let expect = still.translated(vec2(0.4 * dw[0], 0.0));
    assert!(moved.l1_distance(&expect).unwrap() < 1e-10);
}

fn two_blobs(n: usize) -> VorticityGrid {
    InitialProfile::TwoBlob { separation: 0.6, width: 0.2 }.grid(3.0, n).unwrap()
}

fn evolve(grid: &VorticityGrid, noise: &NoiseModel, t_end: f64, dt: f64, seed: u64) -> VorticityGrid {
    let steps = (t_end / dt).round() as u64;
    let path = BrownianPath::new(seed, dt).unwrap();
    let mut g = grid.clone();
    for n in 0..steps {
        g = euler_pde::step(&g, noise, &path, n, dt).unwrap();
    }
    g
}

#[test]
fn field_mass_is_conserved_every_step() {
    let grid = InitialProfile::TwoBlob { separation: 0.8, width: 0.2 }.grid(4.0, 128).unwrap();
    let path = BrownianPath::new(7, 0.02).unwrap();
    let mut g = grid.clone();
    for n in 0..10 {
        g = euler_pde::step(&g, &four_modes(), &path, n, 0.02).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn deterministic_field_energy_is_conserved() {
    let grid = two_blobs(256);
    let dt = 0.5 * cfl_limit(&grid);
    let dt = 1.0 / (1.0 / dt).ceil();
    let end = evolve(&grid, &NoiseModel::none(), 1.0, dt, 0);
    let (e0, e1) = (field_self_energy(&grid), field_self_energy(&end));
    assert!((e1 - e0).abs() < 1e-2 * e0.abs(), "{e0} → {e1}");
    assert!((lp_norm(&end, Lp::L2) / lp_norm(&grid, Lp::L2) - 1.0).abs() < 1e-2);
}

#[test]
fn field_solutions_converge_under_refinement() {
    // one step size for all grids so the gaps measure spatial error
    let dt = 1.0 / 64.0;
    let solve = |n: usize| evolve(&two_blobs(n), &NoiseModel::none(), 0.5, dt, 0);
    let (a, b, c) = (solve(128), solve(256), solve(512));
    let restrict = |fine: &VorticityGrid| {
        let n = fine.n / 2;
        let values = (0..n * n).map(|idx| fine.values[(idx / n) * 2 * fine.n + (idx % n) * 2]).collect();
        VorticityGrid::new(fine.half_len, n, values).unwrap()
    };
    let coarse_gap = a.l1_distance(&restrict(&b)).unwrap();
    let fine_gap = b.l1_distance(&restrict(&c)).unwrap();
    assert!(fine_gap < coarse_gap, "{coarse_gap} vs {fine_gap}");
}
