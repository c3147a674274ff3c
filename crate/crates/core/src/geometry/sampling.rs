use super::Point3;
use crate::error::{Error, Result};

pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min sampling of `m` indices starting from `start`.
///
/// Each step picks the point farthest from everything chosen so far; equal
/// distances go to the smaller index. The result is in selection order.
pub fn farthest_point_sampling(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 || m == 0 || m > n {
        return Err(Error::Argument(format!("farthest point sampling of {m} from {n} points")));
    }
    if start >= n {
        return Err(Error::Argument(format!("start index {start} out of {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = start;
    loop {
        chosen.push(cur);
        taken[cur] = true;
        if chosen.len() == m {
            break;
        }
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = sq_dist(&points[i], &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(chosen)
}

/// The `k` nearest `points` of every query, ordered by (distance, index).
pub fn knn_group(queries: &[Point3], points: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > points.len() {
        return Err(Error::Argument(format!("k-NN with k={k} over {} points", points.len())));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    Ok(queries
        .iter()
        .map(|q| {
            order.clear();
            order.extend(points.iter().enumerate().map(|(i, p)| (sq_dist(q, p), i)));
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                order.truncate(k);
            }
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.iter().map(|&(_, i)| i).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_hand_cases() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 2, 0).unwrap(), vec![0, 2]);
        assert_eq!(farthest_point_sampling(&pts, 3, 0).unwrap(), vec![0, 2, 1]);
        assert_eq!(farthest_point_sampling(&pts, 1, 1).unwrap(), vec![1]);
    }

    #[test]
    fn fps_duplicates_pick_unchosen_smallest() {
        let pts = [[1.0, 1.0, 1.0]; 4];
        assert_eq!(farthest_point_sampling(&pts, 4, 2).unwrap(), vec![2, 0, 1, 3]);
    }

    #[test]
    fn fps_errors() {
        let pts = [[0.0; 3]; 2];
        assert!(farthest_point_sampling(&pts, 3, 0).is_err());
        assert!(farthest_point_sampling(&[], 1, 0).is_err());
        assert!(farthest_point_sampling(&pts, 1, 5).is_err());
    }

    #[test]
    fn knn_hand_cases() {
        let pts = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let q = [[0.0; 3]];
        assert_eq!(knn_group(&q, &pts, 2).unwrap(), vec![vec![0, 1]]);
        assert_eq!(knn_group(&q, &pts, 3).unwrap(), vec![vec![0, 1, 2]]);
        let sym = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(knn_group(&q, &sym, 1).unwrap(), vec![vec![0]]);
        assert!(knn_group(&q, &sym, 3).is_err());
    }
}
