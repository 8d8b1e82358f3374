use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vortexmf_core::coulomb::g_tilde;
use vortexmf_core::euler_pde::{sample_ensemble, InitialProfile, Sampling, VorticityGrid};
use vortexmf_core::modulated_energy::{modulated_energy, modulated_energy_unnormalized, r_vec};
use vortexmf_core::vec2;

fn disc(n: usize) -> VorticityGrid {
    InitialProfile::SmoothedDisc { radius: 0.5, edge: 0.1, center: [0.0, 0.0] }.grid(2.0, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn normalized_and_unnormalized_energies_agree(seed in any::<u64>(), count in 4usize..80) {
        let grid = disc(32);
        let ens = sample_ensemble(&grid, count, Sampling::Iid, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let avg = modulated_energy(&ens, &grid).unwrap().f_avg;
        let raw = modulated_energy_unnormalized(&ens, &grid).unwrap();
        let n2 = (count * count) as f64;
        prop_assert!((n2 * avg - raw).abs() <= 1e-12 * raw.abs().max(n2 * avg.abs()).max(1.0));
    }

    #[test]
    fn whole_cell_translations_leave_the_energy_unchanged(seed in any::<u64>(), dx in -4i32..4, dy in -4i32..4) {
        let grid = disc(64);
        let ens = sample_ensemble(&grid, 50, Sampling::Stratified, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let shift = vec2(dx as f64, dy as f64) * grid.h();
        let a = modulated_energy(&ens, &grid).unwrap().f_avg;
        let b = modulated_energy(&ens.translated(shift), &grid.translated(shift)).unwrap().f_avg;
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }
}

#[test]
fn truncation_excess_scales_like_n_squared_eps_squared() {
    // Σ g̃(r_i) − [𝔉_N + 2N g̃(ε₁)] ≤ C N² ε₁² with one constant across N
    let grid = disc(128);
    let mut ratios = Vec::new();
    for n in [64usize, 256, 1024] {
        let eps1 = 0.5 / (n as f64).sqrt();
        let mut worst = f64::NEG_INFINITY;
        for seed in 0..3 {
            let ens = sample_ensemble(&grid, n, Sampling::Iid, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let f_n = modulated_energy_unnormalized(&ens, &grid).unwrap();
            let radii = r_vec(&ens, eps1).unwrap();
            let lhs: f64 = radii.as_slice().iter().map(|&r| g_tilde(r)).sum::<f64>() - f_n - 2.0 * n as f64 * g_tilde(eps1);
            worst = worst.max(lhs / ((n * n) as f64 * eps1 * eps1));
        }
        ratios.push(worst);
    }
    eprintln!("fitted ratios {ratios:?}");
    let c = ratios[0].max(0.0);
    for r in &ratios {
        assert!(*r <= 1.5 * c + 1e-12, "ratios {ratios:?}");
    }
}
