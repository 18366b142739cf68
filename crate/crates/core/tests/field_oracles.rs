use std::f64::consts::PI;
use std::sync::Arc;

use chemofv::field::{gradient_energy, inner_product, laplacian_noflux, lp_norm, ScalarField};
use chemofv::grid::Grid;
use proptest::prelude::*;

fn grid(cells: &[usize], lengths: &[f64]) -> Arc<Grid> {
    Arc::new(Grid::new(cells, lengths).unwrap())
}

// cos(πx/L) sampled at cell centers is an exact eigenvector of the
// cell-centered no-flux Laplacian with eigenvalue (4/h²) sin²(πh/2L).
#[test]
fn cosine_mode_is_a_discrete_eigenvector() {
    for n in [16usize, 48, 200] {
        let len = 2.5;
        let g = grid(&[n], &[len]);
        let h = len / n as f64;
        let f = ScalarField::from_fn(g, |x| (PI * x[0] / len).cos());
        let lap = laplacian_noflux(&f);
        let lambda = 4.0 / (h * h) * (PI * h / (2.0 * len)).sin().powi(2);
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a + lambda * b).abs() <= 1e-9 * lambda, "N={n}");
        }
    }
}

#[test]
fn laplacian_of_cosine_converges_at_second_order() {
    let mut errs = Vec::new();
    for n in [16usize, 32, 64, 128] {
        let g = grid(&[n, n], &[1.0, 2.0]);
        let exact = |x: [f64; 3]| (PI * x[0]).cos() * (PI * x[1] / 2.0).cos();
        let f = ScalarField::from_fn(g.clone(), exact);
        let lap = laplacian_noflux(&f);
        let k2 = PI * PI * 1.25;
        let err = (0..g.len())
            .map(|i| (lap.values()[i] + k2 * exact(g.center(i))).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }
}

#[test]
fn gradient_energy_converges_to_the_continuous_integral() {
    // ∫_0^1 |π sin(πx)|² dx = π²/2
    let mut errs = Vec::new();
    for n in [32usize, 64, 128, 256] {
        let f = ScalarField::from_fn(grid(&[n], &[1.0]), |x| (PI * x[0]).cos());
        errs.push((gradient_energy(&f) - PI * PI / 2.0).abs());
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }
}

#[test]
fn lp_norm_of_constants_and_max_norm() {
    let g = grid(&[5, 7, 3], &[1.0, 2.0, 0.5]);
    let c = ScalarField::constant(g.clone(), -3.0);
    for p in [1.0, 1.5, 2.0, 3.0, 7.25] {
        let expected = 3.0 * 1.0f64.powf(1.0 / p);
        assert!((lp_norm(&c, p).unwrap() - expected).abs() < 1e-12 * expected);
    }
    let f = ScalarField::from_fn(g, |x| x[0] - 2.0 * x[1]);
    let direct = f.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert_eq!(lp_norm(&f, f64::INFINITY).unwrap(), direct);
    assert!(lp_norm(&f, 0.5).is_err());
}

#[test]
fn lp_norm_matches_a_direct_sum() {
    let g = grid(&[9, 4], &[3.0, 1.0]);
    let f = ScalarField::from_fn(g.clone(), |x| (x[0] * x[1]).sin() + 0.3);
    let vol = g.cell_volume();
    let direct: f64 = f.values().iter().map(|v| v.abs().powf(2.5)).sum::<f64>() * vol;
    let got = lp_norm(&f, 2.5).unwrap();
    assert!((got - direct.powf(0.4)).abs() < 1e-12 * got);
}

fn field_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3)
        .prop_flat_map(|d| {
            (
                proptest::collection::vec(2usize..=6, d),
                proptest::collection::vec(0.5f64..3.0, d),
            )
        })
        .prop_flat_map(|(cells, lengths)| {
            let n: usize = cells.iter().product();
            (
                Just(cells),
                Just(lengths),
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_telescopes((cells, lengths, a, _b) in field_strategy()) {
        let g = grid(&cells, &lengths);
        let f = ScalarField::new(g, a).unwrap();
        let lap = laplacian_noflux(&f);
        let scale: f64 = lap.values().iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        prop_assert!(lap.integral().abs() <= 1e-13 * scale * f.grid().cell_volume());
    }

    #[test]
    fn laplacian_is_linear((cells, lengths, a, b) in field_strategy(), s in -3.0f64..3.0) {
        let g = grid(&cells, &lengths);
        let f = ScalarField::new(g.clone(), a).unwrap();
        let k = ScalarField::new(g, b).unwrap();
        let combo = f.zip_map(&k, |x, y| x + s * y).unwrap();
        let lhs = laplacian_noflux(&combo);
        let (lf, lk) = (laplacian_noflux(&f), laplacian_noflux(&k));
        for i in 0..lhs.len() {
            let rhs = lf.values()[i] + s * lk.values()[i];
            let scale = lf.values()[i].abs() + (s * lk.values()[i]).abs() + 1.0;
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn summation_by_parts((cells, lengths, a, b) in field_strategy()) {
        let g = grid(&cells, &lengths);
        let f = ScalarField::new(g.clone(), a).unwrap();
        let k = ScalarField::new(g, b).unwrap();
        let fk = inner_product(&f, &laplacian_noflux(&k)).unwrap();
        let kf = inner_product(&k, &laplacian_noflux(&f)).unwrap();
        let ff = inner_product(&f, &laplacian_noflux(&f)).unwrap();
        let scale = fk.abs() + kf.abs() + 1.0;
        prop_assert!((fk - kf).abs() <= 1e-11 * scale);
        prop_assert!((ff + gradient_energy(&f)).abs() <= 1e-11 * (ff.abs() + 1.0));
    }

    #[test]
    fn normalized_lp_norms_increase_with_p((cells, lengths, a, _b) in field_strategy()) {
        let g = grid(&cells, &lengths);
        let vol = g.volume();
        let f = ScalarField::new(g, a).unwrap();
        let mut prev = 0.0;
        for p in [1.0, 1.5, 2.0, 3.0, 5.0] {
            let m = lp_norm(&f, p).unwrap() / vol.powf(1.0 / p);
            prop_assert!(m >= prev * (1.0 - 1e-12));
            prev = m;
        }
        prop_assert!(lp_norm(&f, f64::INFINITY).unwrap() >= prev * (1.0 - 1e-12));
    }
}
