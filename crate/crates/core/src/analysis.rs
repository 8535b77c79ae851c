//! PCA, grouped variance decomposition with F-values, and t-tests for
//! message and Q-matrix archives.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{contract, Error, Result};
use crate::gridworld::Task;
use crate::scalar::Scalar;

/// Principal components of a point cloud.
#[derive(Debug, Clone)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<T>,
    /// Eigenvalues normalized to sum to one.
    pub explained_variance_ratio: Vec<T>,
    /// Unit components, one per row, matching `eigenvalues`.
    pub components: Vec<Vec<T>>,
    /// Centered data expressed in the component basis, one row per point.
    pub projections: Vec<Vec<T>>,
}

impl<T: Scalar> Pca<T> {
    /// Maps projections back to the original coordinates.
    pub fn reconstruct(&self) -> Vec<Vec<T>> {
        self.projections
            .iter()
            .map(|p| {
                let mut x = self.mean.clone();
                for (coef, comp) in p.iter().zip(&self.components) {
                    for (xi, ci) in x.iter_mut().zip(comp) {
                        *xi = *xi + *coef * *ci;
                    }
                }
                x
            })
            .collect()
    }
}

/// Eigendecomposition of the sample covariance of `vectors` (rows are
/// points). Each component's largest-magnitude entry is made positive.
pub fn pca<T: Scalar>(vectors: &[Vec<T>]) -> Result<Pca<T>> {
    let m = vectors.len();
    if m < 2 {
        return Err(contract(format!("PCA needs at least two points, got {m}")));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(contract("PCA on zero-dimensional points"));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::Shape { expected: d, actual: bad.len() });
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (mu, x) in mean.iter_mut().zip(v) {
            *mu += x.as_f64();
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= m as f64);
    let centered = DMatrix::from_fn(m, d, |i, j| vectors[i][j].as_f64() - mean[j]);
    let cov = (centered.transpose() * &centered) / (m as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(contract("PCA of a degenerate point cloud (zero total variance)"));
    }
    let components: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = c.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();
    let projections = (0..m)
        .map(|i| components.iter().map(|c| T::c((0..d).map(|j| centered[(i, j)] * c[j]).sum())).collect())
        .collect();
    let conv = |v: &[f64]| v.iter().map(|&x| T::c(x)).collect::<Vec<T>>();
    Ok(Pca {
        mean: conv(&mean),
        explained_variance_ratio: eigenvalues.iter().map(|&e| T::c(e / total)).collect(),
        eigenvalues: conv(&eigenvalues),
        components: components.iter().map(|c| conv(c)).collect(),
        projections,
    })
}

/// Points with a group label each.
#[derive(Debug, Clone)]
pub struct GroupedData<T> {
    pub vectors: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> GroupedData<T> {
    pub fn new(vectors: Vec<Vec<T>>, labels: Vec<usize>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Shape { expected: vectors.len(), actual: labels.len() });
        }
        if let Some(d) = vectors.first().map(Vec::len) {
            if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
                return Err(Error::Shape { expected: d, actual: bad.len() });
            }
        }
        Ok(GroupedData { vectors, labels })
    }

    /// Distinct labels in ascending order with their member indices.
    pub fn groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map.into_iter().collect()
    }
}

/// Task attribute used to label message groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Wall,
    Goal,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Wall => "wall",
            Grouping::Goal => "goal",
        }
    }
}

/// Groups one-wall tasks by wall position or goal location. Tasks in the
/// wall-free maze are left out, so both groupings share the same points.
pub fn group_tasks<T: Scalar>(tasks: &[Task], vectors: &[Vec<T>], grouping: Grouping) -> Result<GroupedData<T>> {
    if tasks.len() != vectors.len() {
        return Err(Error::Shape { expected: tasks.len(), actual: vectors.len() });
    }
    let (mut pts, mut labels) = (Vec::new(), Vec::new());
    for (t, v) in tasks.iter().zip(vectors) {
        let n = t.maze.size;
        let label = match (grouping, t.maze.walls.as_slice()) {
            (_, []) => continue,
            (Grouping::Wall, [w]) => w.index(n),
            (Grouping::Goal, [_]) => t.goal.index(n),
            _ => return Err(contract(format!("task {} has more than one wall", t.task_id))),
        };
        pts.push(v.clone());
        labels.push(label);
    }
    GroupedData::new(pts, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult<T> {
    pub var_within: T,
    pub var_between: T,
    pub beta: T,
    /// `None` when `M == N` (no within-group degrees of freedom) or every
    /// point coincides.
    pub f_value: Option<T>,
    pub df: (usize, usize),
    /// Compared with the tabulated 5% critical value when one exists for `df`.
    pub significant_05: Option<bool>,
}

fn mean_of<T: Scalar>(vectors: &[Vec<T>], idx: &[usize]) -> Vec<T> {
    let d = vectors[idx[0]].len();
    let mut mu = vec![T::zero(); d];
    for &i in idx {
        for (m, x) in mu.iter_mut().zip(&vectors[i]) {
            *m = *m + *x;
        }
    }
    let count = T::from_usize_lossy(idx.len());
    mu.into_iter().map(|m| m / count).collect()
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Within- and between-group sums of squared Euclidean distances, their
/// share `beta`, and `F = (between / (N - 1)) / (within / (M - N))`.
pub fn anova<T: Scalar>(data: &GroupedData<T>) -> Result<AnovaResult<T>> {
    let groups = data.groups();
    let (m, n) = (data.vectors.len(), groups.len());
    if n < 2 {
        return Err(contract(format!("F-test needs at least two groups, got {n}")));
    }
    let all: Vec<usize> = (0..m).collect();
    let grand = mean_of(&data.vectors, &all);
    let mut within = T::zero();
    let mut between = T::zero();
    for (_, idx) in &groups {
        let mu = mean_of(&data.vectors, idx);
        for &i in idx {
            within = within + sq_dist(&data.vectors[i], &mu);
        }
        between = between + T::from_usize_lossy(idx.len()) * sq_dist(&mu, &grand);
    }
    let total = within + between;
    let beta = if total > T::zero() { between / total } else { T::zero() };
    let df = (n - 1, m - n);
    let f_value = if df.1 == 0 || total == T::zero() {
        None
    } else if within == T::zero() {
        Some(T::infinity())
    } else {
        let ms_b = between / T::from_usize_lossy(df.0);
        let ms_w = within / T::from_usize_lossy(df.1);
        Some(ms_b / ms_w)
    };
    let significant_05 = match (f_value, f_critical(0.05, df)) {
        (Some(f), Ok(crit)) => Some(f.as_f64() > crit),
        _ => None,
    };
    Ok(AnovaResult { var_within: within, var_between: between, beta, f_value, df, significant_05 })
}

/// Tabulated critical F-values for `df = (14, 195)`.
pub const F_TABLE_14_195: [(f64, f64); 5] = [(0.1, 1.54), (0.05, 1.74), (0.01, 2.17), (0.005, 2.35), (0.001, 2.74)];

pub fn f_critical(p: f64, df: (usize, usize)) -> Result<f64> {
    let err = Error::FTable { p, df1: df.0, df2: df.1 };
    if df != (14, 195) {
        return Err(err);
    }
    F_TABLE_14_195.iter().find(|(q, _)| *q == p).map(|(_, f)| *f).ok_or(err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

fn mean_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    // Identical observations get an exact mean and zero variance, free of summation rounding.
    if sample.iter().all(|&x| x == sample[0]) {
        return (sample[0], 0.0);
    }
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn finish(diff: f64, se: f64, df: f64) -> Result<TTest> {
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, df, p: 0.0 }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| contract(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, df, p: p.clamp(0.0, 1.0) })
}

/// One-sample t-test of `sample` against `reference`.
pub fn t_test_one_sample<T: Scalar>(sample: &[T], reference: T) -> Result<TTest> {
    if sample.len() < 2 {
        return Err(contract("t-test needs at least two observations"));
    }
    let s: Vec<f64> = sample.iter().map(|x| x.as_f64()).collect();
    let (mean, var) = mean_var(&s);
    let n = s.len() as f64;
    finish(mean - reference.as_f64(), (var / n).sqrt(), n - 1.0)
}

/// Welch two-sample t-test of `a` against `b`.
pub fn t_test_welch<T: Scalar>(a: &[T], b: &[T]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(contract("t-test needs at least two observations per sample"));
    }
    let fa: Vec<f64> = a.iter().map(|x| x.as_f64()).collect();
    let fb: Vec<f64> = b.iter().map(|x| x.as_f64()).collect();
    let (ma, va) = mean_var(&fa);
    let (mb, vb) = mean_var(&fb);
    let (na, nb) = (fa.len() as f64, fb.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    let df = if se2 == 0.0 { na + nb - 2.0 } else { se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0)) };
    finish(ma - mb, se2.sqrt(), df)
}

/// Reference for a t-test: a constant or a second sample.
pub enum Reference<'a, T> {
    Mean(T),
    Sample(&'a [T]),
}

pub fn t_test<T: Scalar>(sample: &[T], reference: Reference<'_, T>) -> Result<TTest> {
    match reference {
        Reference::Mean(mu) => t_test_one_sample(sample, mu),
        Reference::Sample(other) => t_test_welch(sample, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_have_one_component() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let p = pca(&pts).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.components[0].iter().all(|&c| c > 0.0));
    }

    #[test]
    fn pca_rejects_degenerate_input() {
        assert!(pca::<f64>(&[vec![1.0, 2.0]]).is_err());
        assert!(pca::<f64>(&[vec![], vec![]]).is_err());
        assert!(pca::<f64>(&[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn anova_hand_example() {
        let data = GroupedData::new(vec![vec![1.0], vec![2.0], vec![4.0], vec![6.0]], vec![0, 0, 1, 1]).unwrap();
        let r = anova::<f64>(&data).unwrap();
        assert!((r.var_within - 2.5).abs() < 1e-12);
        assert!((r.var_between - 12.25).abs() < 1e-12);
        assert!((r.beta - 12.25 / 14.75).abs() < 1e-12);
        assert_eq!(r.df, (1, 2));
        assert!((r.f_value.unwrap() - 12.25 / 1.25).abs() < 1e-12);
        assert_eq!(r.significant_05, None);
    }

    #[test]
    fn anova_limits() {
        let same_means = GroupedData::new(vec![vec![0.0], vec![2.0], vec![1.0], vec![1.0]], vec![0, 0, 1, 1]).unwrap();
        let r = anova(&same_means).unwrap();
        assert_eq!(r.var_between, 0.0);
        assert_eq!(r.beta, 0.0);

        let singletons = GroupedData::new(vec![vec![0.0], vec![2.0], vec![5.0]], vec![0, 1, 2]).unwrap();
        let r = anova(&singletons).unwrap();
        assert_eq!(r.var_within, 0.0);
        assert_eq!(r.beta, 1.0);
        assert_eq!(r.f_value, None);

        let one_group = GroupedData::new(vec![vec![0.0], vec![2.0]], vec![3, 3]).unwrap();
        assert!(anova(&one_group).is_err());
    }

    #[test]
    fn f_table() {
        assert_eq!(f_critical(0.05, (14, 195)).unwrap(), 1.74);
        assert_eq!(f_critical(0.001, (14, 195)).unwrap(), 2.74);
        assert_eq!(f_critical(0.1, (14, 195)).unwrap(), 1.54);
        assert!(f_critical(0.05, (3, 10)).is_err());
        assert!(f_critical(0.2, (14, 195)).is_err());
    }

    #[test]
    fn t_test_examples() {
        let s = [1.0, 2.0, 3.0];
        assert_eq!(t_test_one_sample(&s, 2.0).unwrap().t, 0.0);
        let r = t_test_one_sample(&s, 0.0).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2.0);

        let constant = [0.4, 0.4, 0.4];
        let r = t_test_one_sample(&constant, 0.4).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(!r.significant(0.05));
        let r = t_test_one_sample(&constant, 0.1).unwrap();
        assert_eq!((r.t, r.p), (f64::INFINITY, 0.0));
        assert!(t_test_one_sample(&[1.0], 0.0).is_err());
    }

    #[test]
    fn t_test_p_values() {
        // t = 2*sqrt(3), df = 2; reference two-sided p from an independent t-distribution routine.
        let r = t_test_one_sample(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!((r.p - 0.07417990022744854).abs() < 1e-10);
        // Welch with one zero-variance sample reduces to the one-sample test.
        let w = t_test_welch(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((w.t - r.t).abs() < 1e-12 && (w.df - 2.0).abs() < 1e-12);
    }
}
