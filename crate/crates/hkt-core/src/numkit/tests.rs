use super::*;
use crate::gradcore::Tensor;

#[test]
fn prng_is_deterministic_and_streams_differ() {
    let mut a = Prng::new(1);
    let mut b = Prng::new(1);
    for _ in 0..100 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut c = Prng::new(2);
    assert_ne!(a.next_u64(), c.next_u64());
}

#[test]
fn prng_uniform_and_normal_moments() {
    let mut p = Prng::new(3);
    let n = 200_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let u = p.next_f64();
        assert!((0.0..1.0).contains(&u));
        sum += u;
        sumsq += u * u;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    assert!((mean - 0.5).abs() < 0.005);
    assert!((var - 1.0 / 12.0).abs() < 0.005);

    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let z = p.next_normal();
        sum += z;
        sumsq += z * z;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    assert!(mean.abs() < 0.01, "normal mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "normal var {var}");
}

#[test]
fn prng_next_below_covers_range() {
    let mut p = Prng::new(4);
    let mut seen = [false; 7];
    for _ in 0..1000 {
        let v = p.next_below(7);
        assert!(v < 7);
        seen[v] = true;
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn eigh_diagonal_matrix() {
    let a = Tensor::matrix(3, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
    let e = eigh(&a).unwrap();
    assert!((e.values[0] - 1.0).abs() < 1e-12);
    assert!((e.values[1] - 2.0).abs() < 1e-12);
    assert!((e.values[2] - 3.0).abs() < 1e-12);
}

#[test]
fn eigh_exchange_matrix() {
    let a = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let e = eigh(&a).unwrap();
    assert!((e.values[0] + 1.0).abs() < 1e-12);
    assert!((e.values[1] - 1.0).abs() < 1e-12);
    // eigenvector for +1 is (1,1)/sqrt(2) up to sign
    let v = (e.vectors.at(0, 1), e.vectors.at(1, 1));
    assert!((v.0.abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
    assert!((v.0 - v.1).abs() < 1e-10);
}

#[test]
fn eigh_reconstructs_random_symmetric() {
    let mut p = Prng::new(5);
    let n = 8;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = p.next_normal();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    let a = Tensor::matrix(n, n, data).unwrap();
    let e = eigh(&a).unwrap();
    // A = V diag(w) V^T and V^T V = I
    for i in 0..n {
        for j in 0..n {
            let mut recon = 0.0;
            let mut ortho = 0.0;
            for k in 0..n {
                recon += e.vectors.at(i, k) * e.values[k] * e.vectors.at(j, k);
                ortho += e.vectors.at(k, i) * e.vectors.at(k, j);
            }
            assert!((recon - a.at(i, j)).abs() < 1e-9, "recon ({i},{j})");
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((ortho - expect).abs() < 1e-10, "ortho ({i},{j})");
        }
    }
    // eigenvalues ascending
    for k in 1..n {
        assert!(e.values[k] >= e.values[k - 1]);
    }
}

#[test]
fn cholesky_roundtrip_and_solve() {
    let mut p = Prng::new(6);
    let n = 6;
    // A = B B^T + I is SPD
    let b = Tensor::randn(vec![n, n], 1.0, &mut p);
    let mut a = b.matmul(&b.transpose()).unwrap();
    for i in 0..n {
        let v = a.at(i, i) + 1.0;
        a.set(i, i, v);
    }
    let l = cholesky(&a).unwrap();
    let recon = l.matmul(&l.transpose()).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert!((recon.at(i, j) - a.at(i, j)).abs() < 1e-10);
        }
        for j in (i + 1)..n {
            assert_eq!(l.at(i, j), 0.0);
        }
    }

    let x_true: Vec<f64> = (0..n).map(|i| (i as f64) - 2.5).collect();
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            rhs[i] += a.at(i, j) * x_true[j];
        }
    }
    let x = solve_spd(&a, &rhs).unwrap();
    for (got, want) in x.iter().zip(x_true.iter()) {
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn cholesky_rejects_indefinite() {
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
    assert!(cholesky(&a).is_err());
}

#[test]
fn pca_preserves_variance_with_full_rank() {
    let mut p = Prng::new(7);
    let x = Tensor::randn(vec![300, 5], 1.0, &mut p);
    let fit = pca(&x, 5).unwrap();
    // total variance = trace of covariance = sum of explained variances
    let mut total = 0.0;
    let mean: Vec<f64> = (0..5)
        .map(|j| (0..300).map(|i| x.at(i, j)).sum::<f64>() / 300.0)
        .collect();
    for j in 0..5 {
        total += (0..300)
            .map(|i| (x.at(i, j) - mean[j]).powi(2))
            .sum::<f64>()
            / 300.0;
    }
    let explained: f64 = fit.explained.iter().sum();
    assert!((total - explained).abs() < 1e-9);
    // explained variances descending
    for k in 1..5 {
        assert!(fit.explained[k] <= fit.explained[k - 1] + 1e-12);
    }
    // projected coordinates reproduce the explained variances
    let z = fit.project(&x).unwrap();
    for k in 0..5 {
        let zm: f64 = (0..300).map(|i| z.at(i, k)).sum::<f64>() / 300.0;
        let zv: f64 = (0..300).map(|i| (z.at(i, k) - zm).powi(2)).sum::<f64>() / 300.0;
        assert!((zv - fit.explained[k]).abs() < 1e-9);
    }
}

#[test]
fn pca_finds_dominant_direction() {
    let mut p = Prng::new(8);
    // y = 3 * t * (1, 1)/sqrt(2) + noise
    let n = 500;
    let mut data = vec![0.0; n * 2];
    for i in 0..n {
        let t = p.next_normal() * 3.0;
        data[i * 2] = t / std::f64::consts::SQRT_2 + 0.05 * p.next_normal();
        data[i * 2 + 1] = t / std::f64::consts::SQRT_2 + 0.05 * p.next_normal();
    }
    let x = Tensor::matrix(n, 2, data).unwrap();
    let fit = pca(&x, 1).unwrap();
    let c = (fit.components.at(0, 0), fit.components.at(0, 1));
    assert!((c.0.abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01);
    assert!((c.0 - c.1).abs() < 0.02);
}

#[test]
fn ridge_r2_recovers_linear_signal_and_decreases_in_lambda() {
    let mut p = Prng::new(9);
    let n = 200;
    let mut feats = vec![0.0; n * 3];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let (a, b, c) = (p.next_normal(), p.next_normal(), p.next_normal());
        feats[i * 3] = a;
        feats[i * 3 + 1] = b;
        feats[i * 3 + 2] = c;
        y[i] = 2.0 * a - b + 0.01 * p.next_normal();
    }
    let x = Tensor::matrix(n, 3, feats).unwrap();
    let r2_small = ridge_r2(&x, &y, 1e-6).unwrap();
    assert!(r2_small > 0.999, "r2 {r2_small}");
    let r2_mid = ridge_r2(&x, &y, 10.0).unwrap();
    let r2_big = ridge_r2(&x, &y, 1000.0).unwrap();
    assert!(r2_small >= r2_mid && r2_mid >= r2_big);
    assert!(r2_big < r2_small);

    let flat = vec![1.0; n];
    assert!(matches!(
        ridge_r2(&x, &flat, 1.0),
        Err(crate::HktError::DegenerateTarget)
    ));
}

#[test]
fn ridge_r2_independent_target_is_near_zero() {
    let mut p = Prng::new(10);
    let n = 2000;
    let x = Tensor::randn(vec![n, 4], 1.0, &mut p);
    let y: Vec<f64> = (0..n).map(|_| p.next_normal()).collect();
    let r2 = ridge_r2(&x, &y, 1.0).unwrap();
    assert!(r2 < 0.01, "r2 {r2}");
}

#[test]
fn mardia_gaussian_kappa_near_one() {
    let mut p = Prng::new(11);
    let n = 4000;
    let d = 5;
    let x = Tensor::randn(vec![n, d], 1.0, &mut p);
    let (b2p, kappa) = mardia_classical(&x).unwrap();
    assert!((kappa - 1.0).abs() < 0.1, "kappa {kappa}");
    assert!((b2p - (d * (d + 2)) as f64).abs() < 3.5, "b2p {b2p}");
}

#[test]
fn mardia_heavy_tails_exceed_one() {
    let mut p = Prng::new(12);
    let n = 3000;
    let d = 3;
    // scale mixture of Gaussians has excess kurtosis
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        let scale = if p.next_f64() < 0.1 { 4.0 } else { 0.5 };
        for j in 0..d {
            data[i * d + j] = scale * p.next_normal();
        }
    }
    let x = Tensor::matrix(n, d, data).unwrap();
    let (_, kappa) = mardia_classical(&x).unwrap();
    assert!(kappa > 1.5, "kappa {kappa}");
}

#[test]
fn mardia_offdiag_saturates_at_n_times_p() {
    let mut p = Prng::new(13);
    for &(n, d) in &[(50usize, 3usize), (200, 6)] {
        let x = Tensor::randn(vec![n, d], 2.0, &mut p);
        let stat = mardia_offdiag(&x).unwrap();
        assert!(
            (stat - (n * d) as f64).abs() < 1e-6 * (n * d) as f64,
            "stat {stat} vs {}",
            n * d
        );
    }
}

#[test]
fn mahalanobis_diag_matches_direct_computation() {
    let mut p = Prng::new(14);
    let n = 60;
    let d = 4;
    let x = Tensor::randn(vec![n, d], 1.5, &mut p);
    let dm = mahalanobis_sq_all(&x).unwrap();
    // symmetry of the generalised inner product matrix
    for i in 0..n {
        for j in 0..n {
            assert!((dm.at(i, j) - dm.at(j, i)).abs() < 1e-8);
        }
    }
    // mean of the diagonal equals p exactly (trace identity)
    let mean_diag: f64 = (0..n).map(|i| dm.at(i, i)).sum::<f64>() / n as f64;
    assert!((mean_diag - d as f64).abs() < 1e-9);
}
