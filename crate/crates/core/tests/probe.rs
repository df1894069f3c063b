use dewater_core::train::{run_gradcheck_scan, GradCheckConfig};
use ndarray::Array4;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn probe() {
    let mut rng = StdRng::seed_from_u64(17);
    let (n, h, w) = (2, 64, 64);
    let x1 = Array4::from_shape_fn((n, 3, h, w), |_| rng.random_range(0.0..=1.0));
    let y1 = Array4::from_shape_fn((n, 3, h, w), |_| rng.random_range(0.0..=1.0));
    let x2 = Array4::from_shape_fn((n, 6, h, w), |(_, c, _, _)| {
        if c < 3 { rng.random_range(0.01..=1.0) } else { rng.random_range(0.0..=1.0) }
    });
    let steps = [1e-5, 3e-6, 1e-6, 3e-7];
    for seed in [2024u64, 1, 2, 3, 4, 5, 6, 7] {
        let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
        let t0 = std::time::Instant::now();
        let report = run_gradcheck_scan(&cfg, &steps, &x1, &y1, &x2).unwrap();
        let per: Vec<String> = report.networks.iter().map(|n| format!("{} {:.2e}", n.name, n.max_rel_err)).collect();
        eprintln!("seed={seed}: {} ({:.1}s)", per.join(", "), t0.elapsed().as_secs_f64());
    }
}
