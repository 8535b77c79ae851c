use commlab::analysis::pca;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Anisotropic cloud with well separated variances so components are unique.
fn cloud(rng: &mut ChaCha8Rng, m: usize, scales: &[f64]) -> Vec<Vec<f64>> {
    let d = scales.len();
    // Random rotation from the QR of a Gaussian-ish matrix.
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let q = a.qr().q();
    (0..m)
        .map(|_| {
            let z: Vec<f64> = scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect();
            (0..d).map(|i| 1.5 + (0..d).map(|j| q[(i, j)] * z[j]).sum::<f64>()).collect()
        })
        .collect()
}

#[test]
fn agrees_with_svd_of_centered_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let scales = [5.0, 2.5, 1.2, 0.6, 0.2];
        let data = cloud(&mut rng, 200, &scales);
        let (m, d) = (data.len(), scales.len());
        let p = pca(&data).unwrap();

        let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|v| v[j]).sum::<f64>() / m as f64).collect();
        let x = DMatrix::from_fn(m, d, |i, j| data[i][j] - mean[j]);
        let svd = x.clone().svd(true, true);
        let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
        sv.sort_by(|a, b| b.0.total_cmp(&a.0));
        let vt = svd.v_t.unwrap();
        let total: f64 = sv.iter().map(|(s, _)| s * s).sum();

        for (k, &(s, row)) in sv.iter().enumerate() {
            let eig = s * s / (m as f64 - 1.0);
            assert!((p.eigenvalues[k] - eig).abs() < 1e-9 * eig.max(1.0), "trial {trial} eigenvalue {k}");
            assert!((p.explained_variance_ratio[k] - s * s / total).abs() < 1e-10);
            // Components agree up to sign.
            let dot: f64 = (0..d).map(|j| p.components[k][j] * vt[(row, j)]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "trial {trial} component {k}: |dot| = {}", dot.abs());
        }
        let rec = p.reconstruct();
        for (a, b) in rec.iter().zip(&data) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let ratio_sum: f64 = p.explained_variance_ratio.iter().sum();
        assert!((ratio_sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sign_convention_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = cloud(&mut rng, 50, &[3.0, 1.0, 0.3]);
    let p = pca(&data).unwrap();
    for c in &p.components {
        let lead = c.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        assert!(lead > 0.0);
    }
    let negated: Vec<Vec<f64>> = data.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
    let q = pca(&negated).unwrap();
    for (a, b) in p.components.iter().zip(&q.components) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
