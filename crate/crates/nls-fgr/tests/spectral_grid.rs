use nls_fgr::grid::{inner_product, symplectic_form, weighted_norm, Field, Grid, WeightedNormSpec};
use nls_fgr::C64;
use proptest::prelude::*;

fn gaussian(grid: &std::sync::Arc<Grid>, a: f64) -> Field {
    Field::from_real_fn(grid, |x| (-a * x.iter().map(|v| v * v).sum::<f64>()).exp())
}

#[test]
fn laplacian_of_gaussian_matches_closed_form() {
    let g = Grid::new(1, 512, 20.0).unwrap();
    let a = 0.7;
    let lap = gaussian(&g, a).laplacian();
    let exact = Field::from_real_fn(&g, |x| (4.0 * a * a * x[0] * x[0] - 2.0 * a) * (-a * x[0] * x[0]).exp());
    let err = lap.data().iter().zip(exact.data()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    assert!(err < 1e-11, "spectral Laplacian error {err:e}");
}

#[test]
fn two_dimensional_laplacian_is_separable() {
    let g = Grid::new(2, 64, 10.0).unwrap();
    let a = 0.5;
    let lap = gaussian(&g, a).laplacian();
    let exact = Field::from_real_fn(&g, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        (4.0 * a * a * r2 - 4.0 * a) * (-a * r2).exp()
    });
    let err = lap.data().iter().zip(exact.data()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9, "2-D Laplacian error {err:e}");
}

#[test]
fn gaussian_norm_matches_quadrature_oracle() {
    let g = Grid::new(1, 1024, 30.0).unwrap();
    let n = gaussian(&g, 1.0).norm();
    let exact = (std::f64::consts::PI / 2.0).powf(0.25);
    assert!((n - exact).abs() < 1e-13);
}

#[test]
fn weighted_h1_norm_of_gaussian() {
    let g = Grid::new(1, 1024, 30.0).unwrap();
    let f = gaussian(&g, 1.0);
    let spec = WeightedNormSpec::new(1, 0).unwrap();
    let h1 = weighted_norm(&f, spec);
    let exact = (2.0 * (std::f64::consts::PI / 2.0).sqrt()).sqrt();
    assert!((h1 - exact).abs() < 1e-10, "{h1} vs {exact}");
}

#[test]
fn unsupported_weights_are_rejected() {
    assert!(WeightedNormSpec::new(3, 0).is_err());
    assert!(WeightedNormSpec::new(0, 2).is_err());
}

#[test]
fn field_round_trips_through_binary_format() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::new(1, 256, 10.0).unwrap();
    let f = Field::from_fn(&g, |x| C64::new(x[0].sin(), x[0].cos()));
    let base = dir.path().join("f");
    f.save(&base).unwrap();
    let back = Field::load_on(&g, &base).unwrap();
    assert_eq!(back.data(), f.data());
    let other = Grid::new(1, 128, 10.0).unwrap();
    assert!(Field::load_on(&other, &base).is_err());
}

#[test]
fn mismatched_grids_are_refused() {
    let a = Grid::new(1, 64, 10.0).unwrap();
    let b = Grid::new(1, 64, 12.0).unwrap();
    assert!(inner_product(&Field::zeros(&a), &Field::zeros(&b)).is_err());
}

#[test]
fn decay_check_flags_boundary_mass() {
    let g = Grid::new(1, 128, 5.0).unwrap();
    assert!(gaussian(&g, 1.0).check_decay(1e-8).is_ok());
    assert!(gaussian(&g, 0.01).check_decay(1e-8).is_err());
}

proptest! {
    #[test]
    fn inner_product_is_hermitian(seed in 0u64..1000) {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let s = seed as f64;
        let f = Field::from_fn(&g, |x| C64::new((x[0] + s).sin(), (0.3 * x[0] * s).cos()));
        let h = Field::from_fn(&g, |x| C64::new((-x[0] * x[0]).exp(), x[0] / (1.0 + s)));
        let a = inner_product(&f, &h).unwrap();
        let b = inner_product(&h, &f).unwrap();
        prop_assert!((a - b.conj()).norm() < 1e-12);
        prop_assert!((symplectic_form(&f, &h).unwrap() + symplectic_form(&h, &f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fft_round_trip_is_identity(vals in proptest::collection::vec(-1.0f64..1.0, 64)) {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let mut data: Vec<C64> = vals.iter().map(|v| C64::new(*v, -*v)).collect();
        let orig = data.clone();
        g.forward(&mut data);
        g.inverse(&mut data);
        let err = data.iter().zip(&orig).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-13);
    }

    #[test]
    fn laplacian_is_negative_semidefinite(vals in proptest::collection::vec(-1.0f64..1.0, 64)) {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let f = Field::from_vec(&g, vals.iter().map(|v| C64::new(*v, 0.5 * v)).collect()).unwrap();
        let q = inner_product(&f.laplacian(), &f).unwrap();
        prop_assert!(q.re <= 1e-12);
        prop_assert!(q.im.abs() < 1e-9 * (1.0 + q.re.abs()));
    }
}
