use cotfuse_core::analysis::{fit_dpmm, DpmmConfig};
use cotfuse_core::numeric::seeded_rng;
use rand_distr::{Distribution, Normal};

fn planted(k: usize, per: usize, dim: usize, sep: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, 91);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..k * per)
        .map(|i| {
            let mut p: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
            p[i / per] += sep / std::f64::consts::SQRT_2;
            p
        })
        .collect()
}

#[test]
fn four_planted_components_are_recovered() {
    let mut counts = std::collections::BTreeMap::new();
    for seed in 0..100 {
        let pts = planted(4, 100, 8, 10.0, seed);
        let m = fit_dpmm(&pts, &DpmmConfig { seed, ..Default::default() }).unwrap();
        *counts.entry(m.num_active()).or_insert(0) += 1;
    }
    eprintln!("{counts:?}");
    assert!(counts.get(&4).copied().unwrap_or(0) >= 95, "{counts:?}");
}
