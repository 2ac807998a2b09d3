//! DBSCAN over 2-D points with a uniform-grid neighbour index.

use std::collections::HashMap;

/// Cluster label per point; `None` is noise.
///
/// Neighbourhoods are closed balls (`dist <= eps`) that include the point
/// itself, and a point is core when its neighbourhood has at least `min_pts`
/// members. Points are scanned in index order, so clusters are numbered by
/// their lowest-index core point and a border point reachable from several
/// clusters joins the lowest-numbered one.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let index = GridIndex::new(points, eps);
    let mut labels: Vec<State> = vec![State::Unvisited; points.len()];
    let mut next = 0usize;
    let mut neighbours = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for i in 0..points.len() {
        if labels[i] != State::Unvisited {
            continue;
        }
        index.region(points, i, &mut neighbours);
        if neighbours.len() < min_pts {
            labels[i] = State::Noise;
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = State::Cluster(cluster);
        queue.clear();
        queue.extend(neighbours.iter().copied().filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                State::Noise => {
                    labels[j] = State::Cluster(cluster);
                    continue;
                }
                State::Cluster(_) => continue,
                State::Unvisited => {}
            }
            labels[j] = State::Cluster(cluster);
            index.region(points, j, &mut neighbours);
            if neighbours.len() >= min_pts {
                queue.extend(neighbours.iter().copied());
            }
        }
    }
    labels
        .into_iter()
        .map(|s| match s {
            State::Cluster(c) => Some(c),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Unvisited,
    Noise,
    Cluster(usize),
}

struct GridIndex {
    cell: f64,
    eps2: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(points: &[[f64; 2]], eps: f64) -> Self {
        let cell = if eps > 0.0 { eps } else { 1.0 };
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self {
            cell,
            eps2: eps * eps,
            buckets,
        }
    }

    fn key(cell: f64, p: &[f64; 2]) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Indices within `eps` of point `i`, in ascending order.
    fn region(&self, points: &[[f64; 2]], i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = points[i];
        let (kx, ky) = Self::key(self.cell, &p);
        for by in ky - 1..=ky + 1 {
            for bx in kx - 1..=kx + 1 {
                if let Some(bucket) = self.buckets.get(&(bx, by)) {
                    for &j in bucket {
                        let q = points[j];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 <= self.eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_and_noise() {
        let pts = [
            [0.0, 0.0],
            [0.5, 0.0],
            [0.0, 0.5],
            [10.0, 10.0],
            [10.5, 10.0],
            [10.0, 10.5],
            [50.0, 50.0],
        ];
        let l = dbscan(&pts, 1.0, 3);
        assert_eq!(
            l,
            vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None]
        );
    }

    #[test]
    fn min_pts_one_makes_everything_a_cluster() {
        let pts = [[0.0, 0.0], [5.0, 5.0]];
        assert_eq!(dbscan(&pts, 1.0, 1), vec![Some(0), Some(1)]);
    }

    #[test]
    fn empty_input() {
        assert!(dbscan(&[], 1.0, 3).is_empty());
    }
}
