use nalgebra::SymmetricEigen;

use super::{symmetrize, Mat};

/// Nearest (Frobenius) PSD matrix of rank at most `k`.
///
/// Keeps the `k` largest eigenvalues clipped at zero and drops the rest.
/// Input is symmetrized first.
pub fn project_psd_rank(m: &Mat, k: usize) -> Mat {
    let d = m.nrows();
    if d == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut out = Mat::zeros(d, d);
    for &i in order.iter().take(k) {
        let lambda = eig.eigenvalues[i];
        if lambda <= 0.0 {
            break;
        }
        let v = eig.eigenvectors.column(i);
        out += lambda * v * v.transpose();
    }
    symmetrize(&out)
}

/// Nearest PSD matrix (no rank bound).
pub fn project_psd(m: &Mat) -> Mat {
    project_psd_rank(m, m.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_point_for_low_rank_psd() {
        let v = Mat::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        assert!((project_psd_rank(&m, 1) - &m).norm() < 1e-12);
        assert!((project_psd_rank(&m, 3) - &m).norm() < 1e-12);
    }

    #[test]
    fn truncation_and_clipping() {
        let m = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let p = project_psd_rank(&m, 1);
        assert!((p - Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.0]))).norm() < 1e-14);

        let m = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -1.0]));
        let p = project_psd_rank(&m, 2);
        assert!((p - Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]))).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn output_is_psd_with_bounded_rank(
            entries in proptest::collection::vec(-5.0f64..5.0, 36),
            k in 0usize..6,
        ) {
            let raw = Mat::from_column_slice(6, 6, &entries);
            let m = symmetrize(&raw);
            let p = project_psd_rank(&m, k);
            let mut ev: Vec<f64> = p.clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            let scale = m.norm().max(1.0);
            prop_assert!(ev[5] >= -1e-12 * scale);
            if k < 6 {
                prop_assert!(ev[k].abs() <= 1e-12 * scale);
            }
        }
    }
}
