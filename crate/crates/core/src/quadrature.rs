use nalgebra::DMatrix;

/// Gauss–Hermite nodes and weights for `∫ e^{−x²} f(x) dx`, via Golub–Welsch.
pub(crate) fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], sqrt_pi * v0 * v0)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

/// Pairwise (cascade) summation; fixed reduction tree for a given length.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_even_moments() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let nodes = gauss_hermite(64);
        let m = |p: i32| nodes.iter().map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - sqrt_pi).abs() < 1e-12);
        assert!((m(2) - sqrt_pi / 2.0).abs() < 1e-12);
        assert!((m(4) - 3.0 * sqrt_pi / 4.0).abs() < 1e-11);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn gaussian_characteristic_function() {
        // ∫ e^{−x²} cos(kx) dx = √π e^{−k²/4}
        let nodes = gauss_hermite(64);
        let k = 3.0f64;
        let q: f64 = nodes.iter().map(|(x, w)| w * (k * x).cos()).sum();
        assert!((q - std::f64::consts::PI.sqrt() * (-k * k / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
