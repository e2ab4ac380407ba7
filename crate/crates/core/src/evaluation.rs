//! Accuracy, the class separation ratio and 2-D PCA projections.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::dataset::{common_dimension, LabeledInstance, Score, NUM_CLASSES};
use crate::error::{self, Result};

pub fn accuracy(predicted: &[Score], given: &[Score]) -> Result<f64> {
    if predicted.len() != given.len() {
        return error::validation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            given.len()
        ));
    }
    if given.is_empty() {
        return error::validation("accuracy of an empty set is undefined");
    }
    let hits = predicted.iter().zip(given).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / given.len() as f64)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSpread {
    pub class: Score,
    pub count: usize,
    /// Sum of distances over unordered same-class pairs.
    pub ssw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSeparation {
    pub i: Score,
    pub j: Score,
    /// Sum of distances over all cross-class pairs.
    pub ssb: f64,
    /// `(SSW_i + SSW_j) / SSB_ij`; null in JSON when `ssb` is zero.
    #[serde(serialize_with = "finite_or_null")]
    pub term: f64,
}

/// Within/between class distance sums and their ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationBreakdown {
    pub classes: Vec<ClassSpread>,
    pub pairs: Vec<PairSeparation>,
    /// Sum of the pair terms; infinite (null in JSON) if any pair has
    /// coincident classes.
    #[serde(serialize_with = "finite_or_null")]
    pub rho: f64,
    /// Class pairs whose between-class sum is zero.
    pub infinite_pairs: Vec<(Score, Score)>,
    /// Pair counting convention; the ordered convention doubles every sum
    /// and leaves `rho` unchanged.
    pub convention: &'static str,
}

impl SeparationBreakdown {
    pub fn is_finite(&self) -> bool {
        self.rho.is_finite()
    }
}

pub fn separation_ratio(data: &[LabeledInstance]) -> Result<SeparationBreakdown> {
    common_dimension(data)?;
    let mut counts = [0usize; NUM_CLASSES];
    for x in data {
        counts[x.label.index()] += 1;
    }
    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return error::validation("class separation needs at least two classes");
    }

    // Row i accumulates its pairs with every j > i into a class-pair table.
    // Rows are combined in index order so the result does not depend on the
    // thread count.
    type Table = [[KahanSum; NUM_CLASSES]; NUM_CLASSES];
    let rows: Vec<Table> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut t: Table = Default::default();
            let a = &data[i];
            for b in &data[i + 1..] {
                let (ci, cj) = (a.label.index(), b.label.index());
                let (lo, hi) = (ci.min(cj), ci.max(cj));
                t[lo][hi].add(euclidean(&a.features, &b.features));
            }
            t
        })
        .collect();
    let mut total: Table = Default::default();
    for t in &rows {
        for lo in 0..NUM_CLASSES {
            for hi in lo..NUM_CLASSES {
                total[lo][hi].add(t[lo][hi].value());
            }
        }
    }

    let ssw = |c: usize| total[c][c].value();
    let classes = present
        .iter()
        .map(|&c| ClassSpread {
            class: Score::new(c as i64).unwrap(),
            count: counts[c],
            ssw: ssw(c),
        })
        .collect();
    let mut pairs = Vec::new();
    let mut infinite_pairs = Vec::new();
    let mut rho = KahanSum::default();
    for (k, &i) in present.iter().enumerate() {
        for &j in &present[k + 1..] {
            let ssb = total[i][j].value();
            let (si, sj) = (Score::new(i as i64).unwrap(), Score::new(j as i64).unwrap());
            let term = if ssb > 0.0 {
                (ssw(i) + ssw(j)) / ssb
            } else {
                infinite_pairs.push((si, sj));
                f64::INFINITY
            };
            rho.add(term);
            pairs.push(PairSeparation { i: si, j: sj, ssb, term });
        }
    }
    let rho = if infinite_pairs.is_empty() { rho.value() } else { f64::INFINITY };
    Ok(SeparationBreakdown {
        classes,
        pairs,
        rho,
        infinite_pairs,
        convention: "unordered pairs i<j, self-pairs excluded",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub label: Score,
    pub source: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Scores on the first two principal directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
    /// Fraction of total variance captured by each component.
    pub explained_variance: [f64; 2],
    /// Unit-norm principal directions in feature space.
    #[serde(skip)]
    pub components: [Vec<f64>; 2],
    /// The centered data has rank below two; missing components are zero.
    pub rank_deficient: bool,
}

/// Projects mean-centered data onto the top two eigenvectors of its
/// covariance. The eigenproblem is solved on whichever of the `n x n` Gram
/// matrix or the `p x p` scatter matrix is smaller.
pub fn pca_project(data: &[LabeledInstance]) -> Result<Projection2D> {
    let p = common_dimension(data)?;
    let n = data.len();
    if n < 3 {
        return error::validation(format!("PCA needs at least 3 instances, got {n}"));
    }
    if p < 2 {
        return error::validation("PCA needs at least 2 features");
    }
    let mut mean = vec![0.0; p];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x.features.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|x| x.features.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut directions: [Vec<f64>; 2] = [vec![0.0; p], vec![0.0; p]];
    let mut lambdas = [0.0f64; 2];
    let total_var;
    if n <= p {
        let gram = SymMatrix::from_fn(n, |i, j| dot(&centered[i], &centered[j]));
        total_var = gram.trace();
        let (vals, vecs) = jacobi_eigen(gram);
        for k in 0..2 {
            lambdas[k] = vals[k].max(0.0);
            if lambdas[k] > 0.0 {
                let s = lambdas[k].sqrt();
                for (row, &u) in centered.iter().zip(&vecs[k]) {
                    for (d, v) in directions[k].iter_mut().zip(row) {
                        *d += u * v / s;
                    }
                }
            }
        }
    } else {
        let scatter = SymMatrix::from_fn(p, |a, b| centered.iter().map(|r| r[a] * r[b]).sum());
        total_var = scatter.trace();
        let (vals, vecs) = jacobi_eigen(scatter);
        for k in 0..2 {
            lambdas[k] = vals[k].max(0.0);
            directions[k] = vecs[k].clone();
        }
    }

    let tol = 1e-12 * total_var.max(f64::MIN_POSITIVE);
    let mut rank_deficient = false;
    for k in 0..2 {
        if lambdas[k] <= tol {
            lambdas[k] = 0.0;
            directions[k].iter_mut().for_each(|d| *d = 0.0);
            rank_deficient = true;
        } else {
            normalize(&mut directions[k]);
            orient(&mut directions[k]);
        }
    }

    let points = data
        .iter()
        .zip(&centered)
        .map(|(x, c)| ProjectedPoint {
            id: x.id.clone(),
            label: x.label,
            source: x.source.clone(),
            pc1: dot(c, &directions[0]),
            pc2: dot(c, &directions[1]),
        })
        .collect();
    let frac = |l: f64| if total_var > 0.0 { l / total_var } else { 0.0 };
    Ok(Projection2D {
        points,
        explained_variance: [frac(lambdas[0]), frac(lambdas[1])],
        components: directions,
        rank_deficient,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Flips `v` so its largest-magnitude entry is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dense symmetric matrix, row-major.
struct SymMatrix {
    n: usize,
    a: Vec<f64>,
}

impl SymMatrix {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if j >= i { f(i, j) } else { 0.0 }).collect())
            .collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                a[i * n + j] = rows[i][j];
                a[j * n + i] = rows[i][j];
            }
        }
        SymMatrix { n, a }
    }

    fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i * self.n + i]).sum()
    }
}

/// Cyclic Jacobi eigensolver. Returns eigenvalues in descending order with
/// the matching unit eigenvectors.
fn jacobi_eigen(m: SymMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.n;
    let mut a = m.a;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (vals, vecs)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One-sided exact sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // log C(n, k) accumulated incrementally
    let mut log_c = 0.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (log_c - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: &[f64], l: i64) -> LabeledInstance {
        LabeledInstance::new("p", x.to_vec(), Score::new(l).unwrap(), "s")
    }

    #[test]
    fn sign_test_matches_binomial_tail() {
        // P(X >= 15 | n = 20) = 21700 / 2^20
        assert!((sign_test(15, 5) - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!((sign_test(0, 4) - 1.0).abs() < 1e-12);
        assert!((sign_test(3, 0) - 0.125).abs() < 1e-12);
        assert_eq!(sign_test(0, 0), 1.0);
    }

    #[test]
    fn mean_std_small() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn accuracy_examples() {
        let s = |v: &[i64]| v.iter().map(|&x| Score::new(x).unwrap()).collect::<Vec<_>>();
        assert_eq!(accuracy(&s(&[1, 2, 3]), &s(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(accuracy(&s(&[1, 2, 3]), &s(&[0, 0, 0])).unwrap(), 0.0);
        assert_eq!(accuracy(&s(&[1, 2, 3, 0]), &s(&[1, 2, 0, 0])).unwrap(), 0.75);
        assert!(accuracy(&s(&[1]), &s(&[1, 2])).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn singleton_classes_have_zero_rho() {
        let b = separation_ratio(&[pt(&[0.0, 3.0], 0), pt(&[5.0, -1.0], 2)]).unwrap();
        assert_eq!(b.rho, 0.0);
        assert!(b.classes.iter().all(|c| c.ssw == 0.0));
    }

    #[test]
    fn two_by_two_hand_example() {
        let data = [pt(&[0.0, 0.0], 0), pt(&[0.0, 1.0], 0), pt(&[10.0, 0.0], 1), pt(&[10.0, 1.0], 1)];
        let b = separation_ratio(&data).unwrap();
        let ssb = 20.0 + 2.0 * 101f64.sqrt();
        assert!((b.classes[0].ssw - 1.0).abs() < 1e-14);
        assert!((b.pairs[0].ssb - ssb).abs() < 1e-12);
        assert!((b.rho - 2.0 / ssb).abs() < 1e-14);
        assert!((b.rho - 0.049875).abs() < 1e-6);
    }

    #[test]
    fn coincident_classes_are_flagged() {
        let data = [pt(&[1.0, 1.0], 0), pt(&[1.0, 1.0], 1), pt(&[1.0, 1.0], 1)];
        let b = separation_ratio(&data).unwrap();
        assert!(b.rho.is_infinite());
        assert_eq!(b.infinite_pairs.len(), 1);
        let json = serde_json::to_value(&b).unwrap();
        assert!(json["rho"].is_null());
    }

    #[test]
    fn one_class_is_rejected() {
        assert!(separation_ratio(&[pt(&[0.0], 1), pt(&[1.0], 1)]).is_err());
    }

    #[test]
    fn collinear_points_leave_pc2_empty() {
        let data: Vec<_> = (0..6).map(|i| pt(&[i as f64, 2.0 * i as f64], 0)).collect();
        let proj = pca_project(&data).unwrap();
        assert!(proj.rank_deficient);
        assert!((proj.explained_variance[0] - 1.0).abs() < 1e-12);
        assert!(proj.points.iter().all(|p| p.pc2 == 0.0));
        // direction (1, 2)/sqrt(5), oriented positive
        assert!((proj.components[0][1] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pca_rejects_small_inputs() {
        assert!(pca_project(&[pt(&[0.0, 1.0], 0), pt(&[1.0, 0.0], 0)]).is_err());
        assert!(pca_project(&[pt(&[0.0], 0), pt(&[1.0], 0), pt(&[2.0], 0)]).is_err());
    }

    #[test]
    fn jacobi_diagonalizes_small_matrix() {
        let m = SymMatrix::from_fn(3, |i, j| [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]][i][j]);
        let (vals, vecs) = jacobi_eigen(m);
        // characteristic roots of the tridiagonal matrix: 3, 3 +- sqrt(3)
        assert!((vals[0] - (3.0 + 3f64.sqrt())).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - (3.0 - 3f64.sqrt())).abs() < 1e-12);
        assert!((dot(&vecs[0], &vecs[1])).abs() < 1e-12);
    }
}
