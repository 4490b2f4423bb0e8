use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{add_gaussian_noise, estimate_lipschitz, Lipschitz, Problem};
use crate::error::{Error, Result};

/// Labelled samples. `targets` carries the regression response; for CSV
/// imports it is the label cast to a real.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Number of classes, taken as `max label + 1`.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Label-balanced Gaussian clusters: sample `s` has label `s % classes`,
    /// features `μ_label + N(0, I)` with cluster means `N(0, 3² I)`, and a
    /// linear regression target `wᵀa + 0.1 ε`.
    pub fn gaussian_clusters(samples: usize, classes: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..features).map(|_| 3.0 * normal()).collect())
            .collect();
        let w: Vec<f64> = (0..features).map(|_| normal()).collect();
        let mut ds = Dataset {
            features: Vec::with_capacity(samples),
            labels: Vec::with_capacity(samples),
            targets: Vec::with_capacity(samples),
        };
        for s in 0..samples {
            let label = s % classes.max(1);
            let a: Vec<f64> = means[label].iter().map(|m| m + normal()).collect();
            let y = a.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() + 0.1 * normal();
            ds.features.push(a);
            ds.labels.push(label);
            ds.targets.push(y);
        }
        ds
    }

    /// Reads a CSV with a header row: feature columns, then an integer label
    /// column.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path)?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(bad("need at least one feature column and a label column".into()));
        }
        let mut ds = Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            targets: Vec::new(),
        };
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(bad(format!("row {}: expected {width} fields", row + 1)));
            }
            let features = record
                .iter()
                .take(width - 1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
            let label: usize = record[width - 1]
                .trim()
                .parse()
                .map_err(|e| bad(format!("row {}: label: {e}", row + 1)))?;
            ds.features.push(features);
            ds.labels.push(label);
            ds.targets.push(label as f64);
        }
        if ds.is_empty() {
            return Err(bad("no samples".into()));
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Every worker samples from the full dataset.
    Identical,
    /// Workers hold disjoint, contiguous blocks of classes.
    #[default]
    NonIdentical,
}

/// Splits sample indices across `workers`.
///
/// In non-identical mode samples are grouped by label and each worker gets a
/// contiguous block of `⌈m/N⌉` or `⌊m/N⌋` classes (the first `m mod N`
/// workers get the larger blocks).
pub fn make_partition(dataset: &Dataset, workers: usize, mode: PartitionMode) -> Result<Vec<Vec<usize>>> {
    if dataset.is_empty() {
        return Err(Error::Partition("dataset is empty".into()));
    }
    if workers == 0 {
        return Err(Error::Partition("need at least one worker".into()));
    }
    match mode {
        PartitionMode::Identical => Ok(vec![(0..dataset.len()).collect(); workers]),
        PartitionMode::NonIdentical => {
            let mut classes: Vec<usize> = dataset.labels.clone();
            classes.sort_unstable();
            classes.dedup();
            let m = classes.len();
            if workers > m {
                return Err(Error::Partition(format!(
                    "{workers} workers but only {m} classes"
                )));
            }
            let (base, extra) = (m / workers, m % workers);
            let mut owner = vec![0usize; dataset.class_count()];
            let mut next = 0;
            for w in 0..workers {
                let size = base + usize::from(w < extra);
                for &c in &classes[next..next + size] {
                    owner[c] = w;
                }
                next += size;
            }
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.sort_by_key(|&s| dataset.labels[s]);
            let mut shards = vec![Vec::new(); workers];
            for s in order {
                shards[owner[dataset.labels[s]]].push(s);
            }
            Ok(shards)
        }
    }
}

fn check_shards(dataset: &Dataset, shards: &[Vec<usize>]) -> Result<()> {
    if shards.is_empty() {
        return Err(Error::Partition("no shards".into()));
    }
    for (w, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Partition(format!("shard {w} is empty")));
        }
        if let Some(&s) = shard.iter().find(|&&s| s >= dataset.len()) {
            return Err(Error::Partition(format!("shard {w} references sample {s}")));
        }
    }
    Ok(())
}

fn draw_index(shard: &[usize], rng: &mut dyn RngCore) -> usize {
    let pick = Uniform::new(0, shard.len()).expect("non-empty shard");
    shard[pick.sample(rng)]
}

/// Linear least squares `f_i(x) = mean_{s ∈ S_i} ½ (wᵀa_s + w_0 - y_s)²`,
/// parameters laid out as `[w, w_0]`.
#[derive(Debug, Clone)]
pub struct PartitionedLeastSquares {
    data: Dataset,
    shards: Vec<Vec<usize>>,
    sigma: f64,
    lipschitz: f64,
}

impl PartitionedLeastSquares {
    pub fn new(data: Dataset, shards: Vec<Vec<usize>>, sigma: f64) -> Result<Self> {
        check_shards(&data, &shards)?;
        let mut p = Self {
            data,
            shards,
            sigma,
            lipschitz: 0.0,
        };
        p.lipschitz = estimate_lipschitz(&p, 2, 1.0, 0x5eed);
        Ok(p)
    }

    fn residual(&self, s: usize, x: &[f64]) -> f64 {
        let a = &self.data.features[s];
        let p = a.len();
        a.iter().zip(x).map(|(a, w)| a * w).sum::<f64>() + x[p] - self.data.targets[s]
    }

    fn add_sample_gradient(&self, s: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let r = self.residual(s, x) * scale;
        let a = &self.data.features[s];
        for (o, a) in out.iter_mut().zip(a) {
            *o += r * a;
        }
        out[a.len()] += r;
    }
}

impl Problem for PartitionedLeastSquares {
    fn name(&self) -> &str {
        "lsq"
    }

    fn dim(&self) -> usize {
        self.data.feature_dim() + 1
    }

    fn worker_count(&self) -> usize {
        self.shards.len()
    }

    fn local_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let shard = &self.shards[worker];
        shard.iter().map(|&s| 0.5 * self.residual(s, x).powi(2)).sum::<f64>() / shard.len() as f64
    }

    fn local_gradient(&self, worker: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let shard = &self.shards[worker];
        let scale = 1.0 / shard.len() as f64;
        for &s in shard {
            self.add_sample_gradient(s, x, scale, out);
        }
    }

    fn sample_gradient(&self, worker: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        out.fill(0.0);
        let s = draw_index(&self.shards[worker], rng);
        self.add_sample_gradient(s, x, 1.0, out);
        add_gaussian_noise(self.sigma, rng, out);
    }

    fn lipschitz(&self) -> Option<Lipschitz> {
        Some(Lipschitz::Estimated(self.lipschitz))
    }

    fn sample_count(&self) -> Option<usize> {
        Some(self.data.len())
    }
}

/// Multinomial logistic regression with L2 penalty `λ/2 ‖W‖²`; parameters
/// are `classes` rows of `[w_c, b_c]`.
#[derive(Debug, Clone)]
pub struct PartitionedLogistic {
    data: Dataset,
    shards: Vec<Vec<usize>>,
    classes: usize,
    reg: f64,
    sigma: f64,
    lipschitz: f64,
}

impl PartitionedLogistic {
    pub fn new(data: Dataset, shards: Vec<Vec<usize>>, reg: f64, sigma: f64) -> Result<Self> {
        check_shards(&data, &shards)?;
        let classes = data.class_count().max(2);
        let mut p = Self {
            data,
            shards,
            classes,
            reg,
            sigma,
            lipschitz: 0.0,
        };
        p.lipschitz = estimate_lipschitz(&p, 2, 0.5, 0x5eed);
        Ok(p)
    }

    fn row(&self) -> usize {
        self.data.feature_dim() + 1
    }

    /// Class logits for sample `s`, stabilised softmax probabilities.
    fn probabilities(&self, s: usize, x: &[f64]) -> Vec<f64> {
        let a = &self.data.features[s];
        let row = self.row();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let w = &x[c * row..(c + 1) * row];
                a.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() + w[row - 1]
            })
            .collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    fn sample_loss(&self, s: usize, x: &[f64]) -> f64 {
        -self.probabilities(s, x)[self.data.labels[s]].max(f64::MIN_POSITIVE).ln()
    }

    fn add_sample_gradient(&self, s: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let prob = self.probabilities(s, x);
        let a = &self.data.features[s];
        let row = self.row();
        for (c, pc) in prob.iter().enumerate() {
            let err = (pc - f64::from(u8::from(c == self.data.labels[s]))) * scale;
            let o = &mut out[c * row..(c + 1) * row];
            for (oj, aj) in o.iter_mut().zip(a) {
                *oj += err * aj;
            }
            o[row - 1] += err;
        }
    }

    fn penalty(&self, x: &[f64]) -> f64 {
        0.5 * self.reg * x.iter().map(|v| v * v).sum::<f64>()
    }
}

impl Problem for PartitionedLogistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.classes * self.row()
    }

    fn worker_count(&self) -> usize {
        self.shards.len()
    }

    fn local_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let shard = &self.shards[worker];
        shard.iter().map(|&s| self.sample_loss(s, x)).sum::<f64>() / shard.len() as f64
            + self.penalty(x)
    }

    fn local_gradient(&self, worker: usize, x: &[f64], out: &mut [f64]) {
        for (o, xv) in out.iter_mut().zip(x) {
            *o = self.reg * xv;
        }
        let shard = &self.shards[worker];
        let scale = 1.0 / shard.len() as f64;
        for &s in shard {
            self.add_sample_gradient(s, x, scale, out);
        }
    }

    fn sample_gradient(&self, worker: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        for (o, xv) in out.iter_mut().zip(x) {
            *o = self.reg * xv;
        }
        let s = draw_index(&self.shards[worker], rng);
        self.add_sample_gradient(s, x, 1.0, out);
        add_gaussian_noise(self.sigma, rng, out);
    }

    fn lipschitz(&self) -> Option<Lipschitz> {
        Some(Lipschitz::Estimated(self.lipschitz))
    }

    fn sample_count(&self) -> Option<usize> {
        Some(self.data.len())
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;
    use crate::objectives::testing::assert_gradients_match_finite_differences;
    use crate::objectives::{average_gradient, full_gradient, stochastic_gradient};
    use crate::rng::WorkerRng;
    use crate::vector::ModelVector;

    fn labels_of(ds: &Dataset, shard: &[usize]) -> Vec<usize> {
        let mut l: Vec<usize> = shard.iter().map(|&s| ds.labels[s]).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    #[test]
    fn ten_classes_five_workers_get_pairs() {
        let ds = Dataset::gaussian_clusters(200, 10, 3, 1);
        let shards = make_partition(&ds, 5, PartitionMode::NonIdentical).unwrap();
        for (i, shard) in shards.iter().enumerate() {
            assert_eq!(labels_of(&ds, shard), vec![2 * i, 2 * i + 1]);
        }
    }

    #[test]
    fn non_identical_shards_are_disjoint_and_covering() {
        for (n, m, workers) in [(97, 7, 3), (50, 10, 4), (33, 3, 3), (40, 5, 1)] {
            let ds = Dataset::gaussian_clusters(n, m, 2, 4);
            let shards = make_partition(&ds, workers, PartitionMode::NonIdentical).unwrap();
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = shards.iter().map(|s| labels_of(&ds, s).len()).collect();
            let (lo, hi) = (m / workers, m.div_ceil(workers));
            assert!(sizes.iter().all(|&c| c == lo || c == hi), "{sizes:?}");
        }
    }

    #[test]
    fn identical_and_single_worker() {
        let ds = Dataset::gaussian_clusters(30, 3, 2, 0);
        let all: Vec<usize> = (0..30).collect();
        let shards = make_partition(&ds, 8, PartitionMode::Identical).unwrap();
        assert_eq!(shards.len(), 8);
        assert!(shards.iter().all(|s| *s == all));
        for mode in [PartitionMode::Identical, PartitionMode::NonIdentical] {
            let mut one = make_partition(&ds, 1, mode).unwrap();
            one[0].sort_unstable();
            assert_eq!(one, vec![all.clone()]);
        }
    }

    #[test]
    fn too_many_workers_for_classes() {
        let ds = Dataset::gaussian_clusters(30, 3, 2, 0);
        assert!(matches!(
            make_partition(&ds, 4, PartitionMode::NonIdentical),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn finite_differences_on_dataset_problems() {
        let ds = Dataset::gaussian_clusters(60, 4, 3, 2);
        let shards = make_partition(&ds, 2, PartitionMode::NonIdentical).unwrap();
        let lsq = PartitionedLeastSquares::new(ds.clone(), shards.clone(), 0.0).unwrap();
        assert_gradients_match_finite_differences(&lsq, 0, 1e-5);
        let lr = PartitionedLogistic::new(ds, shards, 1e-2, 0.0).unwrap();
        assert_gradients_match_finite_differences(&lr, 0, 1e-5);
        assert!(matches!(lr.lipschitz(), Some(Lipschitz::Estimated(l)) if l > 0.0));
    }

    #[test]
    fn dataset_stochastic_gradients_are_unbiased() {
        let ds = Dataset::gaussian_clusters(12, 2, 2, 5);
        let shards = make_partition(&ds, 2, PartitionMode::NonIdentical).unwrap();
        let p = PartitionedLeastSquares::new(ds, shards, 0.0).unwrap();
        let x = ModelVector::from(vec![0.3, -0.2, 0.1]);
        let exact = full_gradient(&p, 1, &x).unwrap();
        let r = WorkerRng::new(3, 1);
        let m = 60_000;
        let mut mean = ModelVector::zeros(3);
        for t in 0..m {
            let g = stochastic_gradient(&p, 1, &x, &mut r.at(t), 1).unwrap();
            crate::vector::mean_update(mean.as_mut_slice(), g.as_slice(), t as usize + 1);
        }
        let err = mean.sub(&exact).unwrap().max_abs();
        assert!(err < 0.05 * (1.0 + exact.max_abs()), "{err}");
    }

    #[test]
    fn heterogeneous_gradients_at_the_optimum() {
        // least squares optimum by plain gradient descent on f
        let ds = Dataset::gaussian_clusters(80, 4, 2, 8);
        let shards = make_partition(&ds, 2, PartitionMode::NonIdentical).unwrap();
        let p = PartitionedLeastSquares::new(ds, shards, 0.0).unwrap();
        let step = 1.0 / p.lipschitz().unwrap().value();
        let mut x = ModelVector::zeros(p.dim());
        for _ in 0..200_000 {
            let g = average_gradient(&p, &x).unwrap();
            if g.max_abs() < 1e-11 {
                break;
            }
            x = crate::vector::vec_axpy(-step, &g, &x).unwrap();
        }
        assert!(average_gradient(&p, &x).unwrap().max_abs() < 1e-9);
        for w in 0..2 {
            assert!(full_gradient(&p, w, &x).unwrap().norm() > 1e-3);
        }
    }

    #[test]
    fn csv_import() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,b,label\n1.0,2.0,0\n-1,0.5,1\n3,3,2").unwrap();
        let ds = Dataset::from_csv(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.features[1], vec![-1.0, 0.5]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "a,label\n1.0,x").unwrap();
        assert!(matches!(Dataset::from_csv(bad.path()), Err(Error::Dataset { .. })));
    }
}
