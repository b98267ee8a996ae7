//! Cluster validity indices: silhouette, Calinski-Harabasz, C-index.

use crate::cluster::Clustering;
use crate::error::{Error, Result};
use crate::matrix::{distance, squared_distance, Matrix};

/// Condensed upper-triangle Euclidean distances.
pub struct PairwiseDistances {
    n: usize,
    d: Vec<f64>,
}

impl PairwiseDistances {
    pub fn new(data: &Matrix) -> Self {
        let n = data.rows();
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(distance(data.row(i), data.row(j)));
            }
        }
        PairwiseDistances { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // offset of row i in the condensed layout
        let off = i * (2 * self.n - i - 1) / 2;
        self.d[off + (j - i - 1)]
    }
}

fn check(n: usize, clustering: &Clustering) -> Result<()> {
    if clustering.k < 2 {
        return Err(Error::invalid("validity indices need k >= 2"));
    }
    if clustering.assignment.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: clustering.assignment.len() });
    }
    Ok(())
}

pub fn silhouette(data: &Matrix, clustering: &Clustering) -> Result<f64> {
    silhouette_with(&PairwiseDistances::new(data), clustering)
}

pub fn silhouette_with(pd: &PairwiseDistances, clustering: &Clustering) -> Result<f64> {
    let n = pd.len();
    check(n, clustering)?;
    let k = clustering.k;
    let sizes = clustering.sizes();
    let a_of = &clustering.assignment;
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = a_of[i];
        if sizes[own] <= 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[a_of[j]] += pd.get(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && m.is_finite() {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Returns `f64::INFINITY` when `n == k` (zero within-cluster degrees of freedom)
/// or when the clusters are internally tight but apart.
pub fn calinski_harabasz(data: &Matrix, clustering: &Clustering) -> Result<f64> {
    let n = data.rows();
    check(n, clustering)?;
    let k = clustering.k;
    let d = data.cols();
    let mut grand = vec![0.0; d];
    for row in data.iter_rows() {
        for (g, x) in grand.iter_mut().zip(row) {
            *g += x;
        }
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    let sizes = clustering.sizes();
    let ssb: f64 = (0..k).map(|c| sizes[c] as f64 * squared_distance(clustering.centroids.row(c), &grand)).sum();
    let ssw = clustering.twcv;
    if ssb == 0.0 {
        return Ok(0.0);
    }
    if n == k || ssw == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((ssb / (k - 1) as f64) / (ssw / (n - k) as f64))
}

pub fn c_index(data: &Matrix, clustering: &Clustering) -> Result<f64> {
    c_index_with(&PairwiseDistances::new(data), clustering)
}

pub fn c_index_with(pd: &PairwiseDistances, clustering: &Clustering) -> Result<f64> {
    let n = pd.len();
    check(n, clustering)?;
    let a = &clustering.assignment;
    let mut s = 0.0;
    let mut nw = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if a[i] == a[j] {
                s += pd.get(i, j);
                nw += 1;
            }
        }
    }
    if nw == 0 {
        return Ok(0.0);
    }
    let mut all = pd.d.clone();
    all.sort_by(f64::total_cmp);
    let s_min: f64 = all[..nw].iter().sum();
    let s_max: f64 = all[all.len() - nw..].iter().sum();
    if s_max - s_min <= 1e-12 * s_max {
        return Ok(0.0);
    }
    Ok(((s - s_min) / (s_max - s_min)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    fn cl(data: &Matrix, k: usize, a: &[usize]) -> Clustering {
        Clustering::from_assignment(data, k, a.to_vec()).unwrap()
    }

    #[test]
    fn condensed_indexing() {
        let m = line(&[0.0, 1.0, 3.0, 7.0]);
        let pd = PairwiseDistances::new(&m);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(pd.get(i, j), distance(m.row(i), m.row(j)));
            }
        }
    }

    #[test]
    fn silhouette_fixtures() {
        let eps = 1e-3;
        let m = line(&[0.0, eps, 100.0, 100.0 + eps]);
        assert!(silhouette(&m, &cl(&m, 2, &[0, 0, 1, 1])).unwrap() > 0.99);

        // one blob of 10 points, alternate assignment
        let blob: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let m = Matrix::from_rows(&blob).unwrap();
        let a: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert!(silhouette(&m, &cl(&m, 2, &a)).unwrap() <= 0.1);

        // singleton contributes 0: {0,1} | {10}
        let m = line(&[0.0, 1.0, 10.0]);
        let s = silhouette(&m, &cl(&m, 2, &[0, 0, 1])).unwrap();
        let s0 = (10.0 - 1.0) / 10.0;
        let s1 = (9.0 - 1.0) / 9.0;
        assert!((s - (s0 + s1 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ch_fixtures() {
        let m = line(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = cl(&m, 2, &[0, 0, 0, 1, 1, 1]);
        assert!((calinski_harabasz(&m, &c).unwrap() - 13.5).abs() < 1e-12);
        // symmetric clusters around the grand mean on the other axis
        let m = Matrix::from_rows(&[[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(calinski_harabasz(&m, &cl(&m, 2, &[0, 0, 1, 1])).unwrap(), 0.0);
        let m = line(&[0.0, 5.0]);
        assert_eq!(calinski_harabasz(&m, &cl(&m, 2, &[0, 1])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn c_index_fixtures() {
        let m = line(&[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(c_index(&m, &cl(&m, 2, &[0, 0, 1, 1])).unwrap(), 0.0);
        // distances: 1,10,11,9,10,1. Within {0,10},{1,11}: 10 + 10 = 20.
        // smallest two: 1+1 = 2, largest two: 11+10 = 21.
        let c = c_index(&m, &cl(&m, 2, &[0, 1, 0, 1])).unwrap();
        assert!((c - (20.0 - 2.0) / (21.0 - 2.0)).abs() < 1e-12);
        // {0,11},{1,10}: within 11 + 9 = 20 as well
        let c = c_index(&m, &cl(&m, 2, &[0, 1, 1, 0])).unwrap();
        assert!((c - 18.0 / 19.0).abs() < 1e-12);
        // worst: within pairs are exactly the largest
        let m = line(&[0.0, 1.0, 2.0]);
        assert_eq!(c_index(&m, &cl(&m, 2, &[0, 1, 0])).unwrap(), 1.0);
        // equilateral triangle: all distances equal
        let m = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap();
        assert_eq!(c_index(&m, &cl(&m, 2, &[0, 0, 1])).unwrap(), 0.0);
    }

    #[test]
    fn k_below_two_rejected() {
        let m = line(&[0.0, 1.0]);
        let c = Clustering { k: 1, centroids: line(&[0.5]), assignment: vec![0, 0], twcv: 0.5 };
        assert!(silhouette(&m, &c).is_err());
        assert!(calinski_harabasz(&m, &c).is_err());
        assert!(c_index(&m, &c).is_err());
    }

    proptest! {
        #[test]
        fn relabel_and_scale_invariance(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 6..20),
            scale in 0.1f64..50.0,
        ) {
            let data = Matrix::from_rows(&pts).unwrap();
            let n = data.rows();
            let a: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let c = cl(&data, 3, &a);
            let perm = [2usize, 0, 1];
            let rel = cl(&data, 3, &a.iter().map(|&x| perm[x]).collect::<Vec<_>>());
            let scaled = data.map(|x| x * scale);
            let cs = cl(&scaled, 3, &a);
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
            let s = silhouette(&data, &c).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!(close(s, silhouette(&data, &rel).unwrap()));
            prop_assert!(close(s, silhouette(&scaled, &cs).unwrap()));
            let ch = calinski_harabasz(&data, &c).unwrap();
            prop_assert!(close(ch, calinski_harabasz(&data, &rel).unwrap()));
            prop_assert!(close(ch, calinski_harabasz(&scaled, &cs).unwrap()));
            let ci = c_index(&data, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&ci));
            prop_assert!(close(ci, c_index(&data, &rel).unwrap()));
            prop_assert!(close(ci, c_index(&scaled, &cs).unwrap()));
        }
    }
}
