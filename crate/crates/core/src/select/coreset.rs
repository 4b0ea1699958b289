use super::SelectionResult;
use crate::error::{Error, Result};
use crate::tensor::{distance, squared_distance, Tensor};

/// Greedy k-center (farthest-point) selection.
///
/// Each step picks the pool point farthest from its nearest center, where
/// centers are the labeled points plus everything picked so far; the
/// maximized distance is recorded as that step's `δ`. Ties go to the lowest
/// index. With no labeled points the first pick is the pool point farthest
/// from the pool centroid, and its `δ` is `+∞`.
pub fn coreset_select(embeddings: &Tensor, labeled: &[usize], count: usize) -> Result<SelectionResult> {
    let n = embeddings.rows();
    let mut is_center = vec![false; n];
    for &i in labeled {
        if i >= n {
            return Err(Error::Index(format!("labeled index {i} with {n} points")));
        }
        is_center[i] = true;
    }
    let pool = is_center.iter().filter(|&&c| !c).count();
    if count > pool {
        return Err(Error::Budget(format!("cannot pick {count} from a pool of {pool}")));
    }

    let mut min_sq = vec![f64::INFINITY; n];
    for &c in labeled {
        update(embeddings, c, &mut min_sq);
    }

    let mut result = SelectionResult::default();
    for step in 0..count {
        let pick = if step == 0 && labeled.is_empty() {
            let pool_idx: Vec<usize> = (0..n).filter(|&i| !is_center[i]).collect();
            let centroid = centroid(embeddings, &pool_idx);
            farthest(&pool_idx, |i| squared_distance(embeddings.row(i), &centroid))
        } else {
            farthest(&(0..n).filter(|&i| !is_center[i]).collect::<Vec<_>>(), |i| min_sq[i])
        };
        result.deltas.push(min_sq[pick].sqrt());
        result.indices.push(pick);
        is_center[pick] = true;
        update(embeddings, pick, &mut min_sq);
    }
    Ok(result)
}

fn update(embeddings: &Tensor, center: usize, min_sq: &mut [f64]) {
    let c = embeddings.row(center);
    for (i, m) in min_sq.iter_mut().enumerate() {
        let d = squared_distance(embeddings.row(i), c);
        if d < *m {
            *m = d;
        }
    }
}

fn farthest(candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &i in &candidates[1..] {
        let s = score(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

fn centroid(embeddings: &Tensor, idx: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; embeddings.cols()];
    for &i in idx {
        c.iter_mut().zip(embeddings.row(i)).for_each(|(a, b)| *a += b);
    }
    c.iter_mut().for_each(|a| *a /= idx.len() as f64);
    c
}

/// `δ = max_i min_c ‖x_i − x_c‖` over all points.
pub fn coverage_radius(embeddings: &Tensor, centers: &[usize]) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Domain("coverage radius needs at least one center".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..embeddings.rows() {
        let nearest = centers
            .iter()
            .map(|&c| distance(embeddings.row(i), embeddings.row(c)))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Tensor {
        Tensor::matrix(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn hand_traced_line() {
        let x = line(&[0.0, 1.0, 5.0, 9.0]);
        let r = coreset_select(&x, &[0], 2).unwrap();
        assert_eq!(r.indices, vec![3, 2]);
        assert_eq!(r.deltas, vec![9.0, 4.0]);
    }

    #[test]
    fn zero_count_and_exhaustion() {
        let x = line(&[0.0, 1.0, 5.0, 9.0]);
        let r = coreset_select(&x, &[0], 0).unwrap();
        assert!(r.indices.is_empty() && r.deltas.is_empty());
        let r = coreset_select(&x, &[0], 3).unwrap();
        let mut all = r.indices.clone();
        all.push(0);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(coverage_radius(&x, &all).unwrap(), 0.0);
        assert!(matches!(coreset_select(&x, &[0], 4), Err(Error::Budget(_))));
    }

    #[test]
    fn ties_take_lowest_index() {
        let x = line(&[0.0, -2.0, 2.0]);
        assert_eq!(coreset_select(&x, &[0], 1).unwrap().indices, vec![1]);
    }

    #[test]
    fn empty_labeled_set_starts_far_from_centroid() {
        let x = line(&[0.0, 1.0, 2.0, 10.0]);
        let r = coreset_select(&x, &[], 2).unwrap();
        assert_eq!(r.indices, vec![3, 0]);
        assert!(r.deltas[0].is_infinite());
        assert_eq!(r.deltas[1], 10.0);
    }

    #[test]
    fn coverage_examples() {
        let x = line(&[0.0, 10.0]);
        assert_eq!(coverage_radius(&x, &[0]).unwrap(), 10.0);
        assert_eq!(coverage_radius(&x, &[0, 1]).unwrap(), 0.0);
        assert!(matches!(coverage_radius(&x, &[]), Err(Error::Domain(_))));
    }
}
