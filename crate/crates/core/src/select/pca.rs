use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{dot, norm, Tensor};

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

/// Principal components found by power iteration with deflation.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `k × d`, orthonormal rows, largest-magnitude entry of each row positive.
    pub components: Tensor,
    /// Variance captured by each component, non-increasing.
    pub variances: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Tensor, k: usize) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::Domain("PCA needs at least two points".into()));
        }
        if k > d {
            return Err(Error::Config(format!("PCA target dim {k} exceeds input dim {d}")));
        }
        let mean: Vec<f64> = x.sum_rows().into_iter().map(|s| s / n as f64).collect();
        let mut centered = x.clone();
        for i in 0..n {
            centered.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
        let mut cov = centered.t_matmul(&centered)?;
        cov.scale(1.0 / (n - 1) as f64);
        cov.ensure_finite("covariance")?;

        let (components, variances) = top_eigenvectors(&cov, k)?;
        Ok(Self {
            components,
            variances,
            mean,
        })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let mut centered = x.clone();
        for i in 0..x.rows() {
            centered
                .row_mut(i)
                .iter_mut()
                .zip(&self.mean)
                .for_each(|(v, m)| *v -= m);
        }
        centered.matmul_t(&self.components)
    }
}

/// `(components k×d, projected n×k)` of the mean-centered data.
pub fn pca_reduce(x: &Tensor, k: usize) -> Result<(Tensor, Tensor)> {
    let pca = Pca::fit(x, k)?;
    let projected = pca.transform(x)?;
    Ok((pca.components, projected))
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| dot(m.row(i), v)).collect()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
}

fn top_eigenvectors(cov: &Tensor, k: usize) -> Result<(Tensor, Vec<f64>)> {
    let d = cov.rows();
    let scale = (0..d).map(|i| cov.get(i, i)).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut rng = seeded(0x5eed_0bca);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);

    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &found);
        let mut nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        let mut converged = false;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = mat_vec(cov, &v);
            orthogonalize(&mut w, &found);
            let nw = norm(&w);
            if nw <= 1e-13 * scale {
                // The deflated matrix is numerically zero: any orthonormal
                // completion spans the remaining (zero-variance) directions.
                v = completion(&found, d);
                converged = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            let mut cw = mat_vec(cov, &w);
            orthogonalize(&mut cw, &found);
            let lambda = dot(&w, &cw);
            let residual = cw
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt();
            v = w;
            if residual <= PCA_TOLERANCE * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "power iteration for component {c} did not converge in {PCA_MAX_ITERATIONS} iterations"
            )));
        }
        orthogonalize(&mut v, &found);
        nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let lambda = dot(&v, &mat_vec(cov, &v)).max(0.0);
        found.push(v);
        values.push(lambda);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut data = Vec::with_capacity(k * d);
    let mut sorted_values = Vec::with_capacity(k);
    for &i in &order {
        let mut v = found[i].clone();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        data.extend(v);
        sorted_values.push(values[i]);
    }
    Ok((Tensor::matrix(k, d, data)?, sorted_values))
}

fn completion(found: &[Vec<f64>], d: usize) -> Vec<f64> {
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        orthogonalize(&mut e, found);
        let n = norm(&e);
        if n > 1e-6 {
            e.iter_mut().for_each(|x| *x /= n);
            return e;
        }
    }
    unreachable!("fewer than d components always leave a free direction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::distance;

    #[test]
    fn points_on_a_line() {
        let dir = [0.6, 0.8];
        let x = Tensor::from_rows(
            &[-2.0, -0.5, 0.0, 1.0, 3.5]
                .iter()
                .map(|t| [1.0 + t * dir[0], -2.0 + t * dir[1]])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let pca = Pca::fit(&x, 1).unwrap();
        let c = pca.components.row(0);
        assert!((c[0] - 0.6).abs() < 1e-9 && (c[1] - 0.8).abs() < 1e-9);
        let projected = pca.transform(&x).unwrap();
        let var_proj: f64 = projected.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var_proj - pca.variances[0]).abs() < 1e-9);
        // Total variance is the sum of per-coordinate variances.
        let total: f64 = (0..2)
            .map(|j| {
                let col: Vec<f64> = (0..5).map(|i| x.get(i, j)).collect();
                let m = col.iter().sum::<f64>() / 5.0;
                col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0
            })
            .sum();
        assert!((var_proj - total).abs() < 1e-9);
    }

    #[test]
    fn full_rank_projection_is_isometry() {
        let x = Tensor::from_rows(&[
            [0.1, 2.0, -1.0],
            [1.5, -0.3, 0.2],
            [-0.7, 0.9, 1.1],
            [2.2, 0.0, -0.4],
            [0.3, 0.3, 0.3],
        ])
        .unwrap();
        let (_, p) = pca_reduce(&x, 3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((distance(x.row(i), x.row(j)) - distance(p.row(i), p.row(j))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_deficient_input_still_orthonormal() {
        let x = Tensor::from_rows(&[[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [3.0, 3.0, 0.0]]).unwrap();
        let pca = Pca::fit(&x, 3).unwrap();
        let g = pca.components.matmul_t(&pca.components).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - e).abs() < 1e-9);
            }
        }
        assert!(pca.variances[1].abs() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let x = Tensor::from_rows(&[[0.0, -1.0], [0.0, 1.0], [0.1, 3.0], [-0.1, -3.0]]).unwrap();
        let pca = Pca::fit(&x, 2).unwrap();
        for i in 0..2 {
            let r = pca.components.row(i);
            let lead = if r[0].abs() > r[1].abs() { r[0] } else { r[1] };
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn bad_inputs() {
        let x = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(Pca::fit(&x, 1).is_err());
        let x = Tensor::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(Pca::fit(&x, 3), Err(Error::Config(_))));
    }
}
