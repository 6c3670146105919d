use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treecount_core::geo::GeoPoint;
use treecount_core::kdr::{export_raster, kde_at, kde_grid, kdr_grid, parse_raster, point_densities, rank_densities};
use treecount_core::KdrConfig;

fn cloud(seed: u64, n: usize, spread_deg: f64) -> Vec<GeoPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GeoPoint {
            lat: 17.4 + rng.random_range(-spread_deg..spread_deg),
            lon: 78.5 + rng.random_range(-spread_deg..spread_deg),
        })
        .collect()
}

fn small(cols: usize, rows: usize, h: f64) -> KdrConfig {
    KdrConfig { bandwidth_m: h, grid_cols: cols, grid_rows: rows, padding_m: h }
}

#[test]
fn single_point_peak() {
    assert!((kde_at(&[(0.0, 0.0)], (0.0, 0.0), 1.0) - 3.0 / PI).abs() < 1e-9);
    assert_eq!(kde_at(&[(0.0, 0.0)], (1.0, 0.0), 1.0), 0.0);
}

#[test]
fn grid_matches_independent_double_loop() {
    let points = cloud(42, 500, 0.01);
    let config = small(64, 64, 120.0);
    let grid = kde_grid(&points, &config).unwrap();
    let local: Vec<(f64, f64)> = points.iter().map(|p| grid.frame.to_local(*p).unwrap()).collect();
    let h = config.bandwidth_m;
    for row in 0..64 {
        for col in 0..64 {
            let qx = grid.origin_m.0 + col as f64 * grid.cell_size_m;
            let qy = grid.origin_m.1 - row as f64 * grid.cell_size_m;
            let mut acc = 0.0;
            for &(x, y) in &local {
                let dx = x - qx;
                let dy = y - qy;
                let d = (dx * dx + dy * dy).sqrt();
                if d < h {
                    let r = d / h;
                    acc += 1.0 - r * r;
                }
            }
            let expect = acc * (3.0 / (PI * h * h));
            assert_eq!(grid.value(col, row).to_bits(), expect.to_bits(), "cell {col},{row}");
        }
    }
}

#[test]
fn kdr_rank_is_scale_invariant() {
    let points = cloud(5, 200, 0.005);
    let grid = kde_grid(&points, &small(48, 48, 80.0)).unwrap();
    let reference = point_densities(&points, &grid).unwrap();
    let base = rank_densities(&reference, &grid.values);
    for c in [0.1, 1.0, 7.3] {
        let r: Vec<f64> = reference.iter().map(|v| v * c).collect();
        let q: Vec<f64> = grid.values.iter().map(|v| v * c).collect();
        assert_eq!(rank_densities(&r, &q), base, "c = {c}");
    }
}

#[test]
fn kdr_is_monotone_in_kde() {
    for seed in 0..10 {
        let points = cloud(100 + seed, 50 + 20 * seed as usize, 0.004);
        let kde = kde_grid(&points, &small(40, 30, 60.0)).unwrap();
        let kdr = kdr_grid(&points, &kde).unwrap();
        let mut cells: Vec<(f64, f64)> = kde.values.iter().copied().zip(kdr.values.iter().copied()).collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(cells.windows(2).all(|w| w[0].1 <= w[1].1), "seed {seed}");
        assert!(kdr.values.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn raster_header_layout() {
    let points = cloud(9, 30, 0.002);
    let kde = kde_grid(&points, &small(20, 10, 50.0)).unwrap();
    let text = export_raster(&kdr_grid(&points, &kde).unwrap());
    let keys: Vec<&str> = text.lines().take(6).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(keys, ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"]);
    let r = parse_raster(&text).unwrap();
    assert_eq!((r.ncols, r.nrows, r.values.len()), (20, 10, 200));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_nonnegative_with_compact_support(
        pts in proptest::collection::vec((-500.0..500.0f64, -500.0..500.0f64), 1..40),
        q in (-700.0..700.0f64, -700.0..700.0f64),
        h in 1.0..200.0f64,
    ) {
        let p = kde_at(&pts, q, h);
        prop_assert!(p >= 0.0);
        let near = pts.iter().any(|&(x, y)| ((x - q.0).powi(2) + (y - q.1).powi(2)).sqrt() < h);
        if !near {
            prop_assert_eq!(p, 0.0);
        }
    }

    #[test]
    fn duplicating_a_point_never_lowers_density(
        pts in proptest::collection::vec((-300.0..300.0f64, -300.0..300.0f64), 1..30),
        pick in 0usize..30,
        q in (-400.0..400.0f64, -400.0..400.0f64),
        h in 1.0..150.0f64,
    ) {
        let mut more = pts.clone();
        more.push(pts[pick % pts.len()]);
        prop_assert!(kde_at(&more, q, h) >= kde_at(&pts, q, h));
    }

    #[test]
    fn rank_is_a_fraction_of_reference(
        reference in proptest::collection::vec(0.0..10.0f64, 1..50),
        queries in proptest::collection::vec(0.0..12.0f64, 1..50),
    ) {
        let n = reference.len() as f64;
        for (q, a) in queries.iter().zip(rank_densities(&reference, &queries)) {
            let brute = reference.iter().filter(|&&r| r <= *q).count() as f64 / n;
            prop_assert_eq!(a, brute);
        }
    }
}
