//! Block approximation against its stated guarantees: exact marginal
//! preservation, the W1 drift bound via the exact transport oracle, and
//! the occupied-block entropy bound.

mod common;

use domdec_core::coupling::{block_approximation, Coupling};
use domdec_core::metrics::w1_exact;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_coupling(rng: &mut ChaCha8Rng, dim: usize, n_x: usize, n_y: usize) -> Coupling {
    let x_coords: Vec<f64> = (0..n_x * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y_coords: Vec<f64> = (0..n_y * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut rows = Vec::with_capacity(n_x);
    let mut total = 0.0;
    for _ in 0..n_x {
        let mut row = Vec::new();
        for j in 0..n_y {
            if rng.gen_bool(0.4) {
                let w = rng.gen_range(0.05..1.0);
                row.push((j as u32, w));
                total += w;
            }
        }
        if row.is_empty() {
            let j = rng.gen_range(0..n_y);
            let w = rng.gen_range(0.05..1.0);
            row.push((j as u32, w));
            total += w;
        }
        rows.push(row);
    }
    for row in rows.iter_mut() {
        for e in row.iter_mut() {
            e.1 /= total;
        }
    }
    let cells = vec![0usize; n_x];
    Coupling::from_rows(dim, dim, x_coords, cells, 1, y_coords, rows).unwrap()
}

#[test]
fn block_approximation_guarantees() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..12 {
        let dim = if case % 2 == 0 { 1 } else { 2 };
        let n_x = rng.gen_range(3..=8);
        let n_y = rng.gen_range(3..=8);
        let gamma = random_coupling(&mut rng, dim, n_x, n_y);
        let scale = rng.gen_range(0.15..0.6);
        let (approx, report) = block_approximation(&gamma, scale).unwrap();

        // marginal preservation
        let (mx, my) = (gamma.marginal_x(), gamma.marginal_y());
        let (ax, ay) = (approx.marginal_x(), approx.marginal_y());
        for (p, q) in mx.iter().zip(&ax) {
            assert!((p - q).abs() < 1e-12);
        }
        for (p, q) in my.iter().zip(&ay) {
            assert!((p - q).abs() < 1e-12);
        }

        // transport drift bound L sqrt(2d)
        let w = w1_exact(&gamma.as_point_cloud(), &approx.as_point_cloud()).unwrap();
        let bound = scale * (2.0 * dim as f64).sqrt();
        assert!(w <= bound + 1e-9, "dim {dim}: {w} > {bound}");

        // entropy bound with the computed occupied-block constant
        let kl = approx.kl_to_product(&mx, &my);
        let c = report.entropy_constant();
        assert!(kl <= c + 1e-12, "KL {kl} > {c}");
    }
}

#[test]
fn monotone_coupling_quarter_scale() {
    // 1d monotone coupling on 8 atoms at L = 1/4: marginals exact, drift
    // within L sqrt(2)
    let coords: Vec<f64> = (0..8).map(|i| (i as f64 + 0.5) / 8.0).collect();
    let rows = (0..8).map(|i| vec![(i as u32, 0.125)]).collect();
    let gamma = Coupling::from_rows(1, 1, coords.clone(), vec![0; 8], 1, coords, rows).unwrap();
    let (approx, _) = block_approximation(&gamma, 0.25).unwrap();
    let (mx, my) = (gamma.marginal_x(), gamma.marginal_y());
    for (p, q) in mx.iter().zip(&approx.marginal_x()) {
        assert!((p - q).abs() < 1e-15);
    }
    for (p, q) in my.iter().zip(&approx.marginal_y()) {
        assert!((p - q).abs() < 1e-15);
    }
    let w = w1_exact(&gamma.as_point_cloud(), &approx.as_point_cloud()).unwrap();
    assert!(w <= 0.25 * 2.0f64.sqrt() + 1e-9, "{w}");
}
