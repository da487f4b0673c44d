use std::f64::consts::PI;

use pplus_core::density::{density_report, median, percentile, Bandwidth, Combine, DensityModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
}

fn scott(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len() as f64;
    (0..points[0].len())
        .map(|k| {
            let m = points.iter().map(|p| p[k]).sum::<f64>() / n;
            let v = points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            n.powf(-0.2) * v.sqrt()
        })
        .collect()
}

fn brute(points: &[Vec<f64>], h: &[f64], x: &[f64]) -> f64 {
    (0..x.len())
        .map(|k| {
            let s: f64 = points
                .iter()
                .map(|p| (-0.5 * ((x[k] - p[k]) / h[k]).powi(2)).exp() / (h[k] * (2.0 * PI).sqrt()))
                .sum();
            (s / points.len() as f64).ln()
        })
        .sum()
}

#[test]
fn matches_brute_force_sum() {
    let pts = cloud(100, 8, 1);
    let dm = DensityModel::fit_points(pts.clone(), Bandwidth::Scott).unwrap();
    let h = scott(&pts);
    for (a, b) in dm.bandwidths().iter().zip(&h) {
        assert!((a - b).abs() < 1e-15);
    }
    for q in cloud(20, 8, 2) {
        assert!((dm.log_density(&q).unwrap() - brute(&pts, &h, &q)).abs() <= 1e-12);
    }
}

#[test]
fn translation_equivariance() {
    let pts = cloud(100, 8, 3);
    let shift: Vec<f64> = (0..8).map(|k| 3.0 - k as f64).collect();
    let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
    let (a, b) = (
        DensityModel::fit_points(pts, Bandwidth::Scott).unwrap(),
        DensityModel::fit_points(moved, Bandwidth::Scott).unwrap(),
    );
    for q in cloud(20, 8, 4) {
        let qs: Vec<f64> = q.iter().zip(&shift).map(|(x, s)| x + s).collect();
        assert!((a.log_density(&q).unwrap() - b.log_density(&qs).unwrap()).abs() <= 1e-10);
    }
}

#[test]
fn single_point_peak() {
    let h = 0.37;
    let dm = DensityModel::fit_points(vec![vec![1.5]; 2], Bandwidth::Fixed(h)).unwrap();
    let want = -(h * (2.0 * PI).sqrt()).ln();
    assert!((dm.log_density(&[1.5]).unwrap() - want).abs() <= 1e-12);
}

#[test]
fn gradient_matches_finite_differences() {
    let pts = cloud(30, 4, 5);
    for combine in [Combine::Sum, Combine::Mean, Combine::JointIsotropic] {
        let dm = DensityModel::fit_points(pts.clone(), Bandwidth::Scott).unwrap().with_combine(combine);
        let x = vec![0.3, -0.2, 1.1, 0.0];
        let (_, g) = dm.log_density_grad(&x).unwrap();
        for k in 0..4 {
            let e = 1e-5;
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += e;
            b[k] -= e;
            let fd = (dm.log_density(&a).unwrap() - dm.log_density(&b).unwrap()) / (2.0 * e);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{combine:?} {k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn joint_isotropic_against_brute_force() {
    let pts = cloud(40, 3, 6);
    let h = 0.5;
    let dm = DensityModel::fit_points(pts.clone(), Bandwidth::Fixed(h)).unwrap().with_combine(Combine::JointIsotropic);
    let x = [0.1, 0.2, -0.3];
    let s: f64 = pts
        .iter()
        .map(|p| {
            let r2: f64 = p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            (-0.5 * r2 / (h * h)).exp() / (h * (2.0 * PI).sqrt()).powi(3)
        })
        .sum();
    assert!((dm.log_density(&x).unwrap() - (s / 40.0).ln()).abs() < 1e-12);
}

#[test]
fn invalid_inputs() {
    assert!(DensityModel::fit_points(vec![vec![1.0]], Bandwidth::Scott).is_err());
    assert!(DensityModel::fit_points(vec![vec![1.0], vec![1.0, 2.0]], Bandwidth::Scott).is_err());
    assert!(DensityModel::fit_points(vec![vec![1.0], vec![2.0]], Bandwidth::Fixed(0.0)).is_err());
    let dm = DensityModel::fit_points(vec![vec![1.0], vec![2.0]], Bandwidth::Scott).unwrap();
    assert!(dm.log_density(&[f64::NAN]).is_err());
    assert!(dm.log_density(&[1.0, 2.0]).is_err());
}

#[test]
fn percentiles_and_medians() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 2.0), 50.0);
    let pts = cloud(50, 2, 7);
    let dm = DensityModel::fit_points(pts, Bandwidth::Scott).unwrap();
    let rows = density_report(&dm, &[(9, "XTI".into(), "(16, 'down', 0)".into(), vec![0.0, 0.0])]).unwrap();
    assert!(rows.iter().any(|r| r.group == "natural"));
    let x = rows.iter().find(|r| r.group == "XTI").unwrap();
    assert!((0.0..=100.0).contains(&x.percentile));
}
