//! In-memory datasets: images, attribute tables, labels and splits.

use ndarray::{s, Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::phantom::{assign_classes, DiseaseClass, LabeledSample, ATTRIBUTE_NAMES};
use crate::rng::substream;

/// Train/validation/test partition of sample indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks disjointness and coverage of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            ensure!(i < n, Data, "split index {i} out of range for {n} samples");
            ensure!(!seen[i], Data, "split index {i} appears twice");
            seen[i] = true;
        }
        ensure!(seen.iter().all(|&s| s), Data, "split does not cover all {n} samples");
        Ok(())
    }
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    ensure!(
        ratios.iter().all(|r| r.is_finite() && *r > 0.0),
        Config,
        "split ratios must be positive, got {ratios:?}"
    );
    let sum: f64 = ratios.iter().sum();
    ensure!((sum - 1.0).abs() <= 1e-9, Config, "split ratios must sum to 1, got {sum}");
    Ok(())
}

fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    validate_ratios(ratios)?;
    ensure!(n >= 3, Data, "cannot split {n} samples into 3 non-empty parts");
    let val = ((n as f64 * ratios[1]).round() as usize).max(1);
    let test = ((n as f64 * ratios[2]).round() as usize).max(1);
    ensure!(val + test < n, Data, "split ratios {ratios:?} leave no training samples out of {n}");
    Ok([n - val - test, val, test])
}

/// Deterministic random split of `0..n`.
pub fn split_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sizes = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split", 0));
    let (train, rest) = order.split_at(sizes[0]);
    let (val, test) = rest.split_at(sizes[1]);
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    Ok(DatasetSplit {
        train: sorted(train),
        val: sorted(val),
        test: sorted(test),
        ratios,
        seed,
    })
}

/// Split with the same global sizes as [`split_dataset`] that also keeps the
/// class proportions of every part close to the overall ones.
pub fn split_stratified(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let n = labels.len();
    let sizes = split_sizes(n, ratios)?;
    let mut rng = substream(seed, "split.stratified", 0);
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut order = Vec::with_capacity(n);
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    // Walk the class-grouped order and hand each index to the part that is
    // furthest behind its quota, so every class is spread proportionally.
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (pos, &idx) in order.iter().enumerate() {
        let progress = (pos + 1) as f64 / n as f64;
        let part = (0..3)
            .filter(|&p| parts[p].len() < sizes[p])
            .max_by(|&a, &b| {
                let da = sizes[a] as f64 * progress - parts[a].len() as f64;
                let db = sizes[b] as f64 * progress - parts[b].len() as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("quotas sum to n");
        parts[part].push(idx);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(DatasetSplit {
        train,
        val,
        test,
        ratios,
        seed,
    })
}

/// Named continuous attributes, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        ensure!(
            names.len() == values.ncols(),
            Contract,
            "{} attribute names for {} columns",
            names.len(),
            values.ncols()
        );
        Ok(AttributeTable { names, values })
    }

    pub fn n_attributes(&self) -> usize {
        self.values.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> AttributeTable {
        AttributeTable {
            names: self.names.clone(),
            values: self.values.select(Axis(0), rows),
        }
    }

    /// Column means and standard deviations of the given rows.
    pub fn moments(&self, rows: &[usize]) -> Standardizer {
        let sub = self.values.select(Axis(0), rows);
        Standardizer::fit(&sub)
    }
}

/// Per-column affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(values: &Array2<f64>) -> Self {
        let n = values.nrows().max(1) as f64;
        let mean: Vec<f64> = values.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let std = values
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    /// Leaves values unchanged.
    pub fn identity(columns: usize) -> Self {
        Standardizer {
            mean: vec![0.0; columns],
            std: vec![1.0; columns],
        }
    }

    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        out
    }
}

/// Samples plus their split and optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub split: DatasetSplit,
    pub attribute_names: Vec<String>,
    /// Five-class labels (`DiseaseClass` indices), when known.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Wraps phantom samples, labelling them with the attribute rules and
    /// splitting stratified by class.
    pub fn from_phantoms(samples: Vec<LabeledSample>, ratios: [f64; 3], seed: u64) -> Result<Self> {
        let areas: Vec<_> = samples.iter().map(|s| s.attributes).collect();
        let labels: Vec<usize> = assign_classes(&areas).into_iter().map(DiseaseClass::index).collect();
        let split = split_stratified(&labels, ratios, seed)?;
        Ok(Dataset {
            samples,
            split,
            attribute_names: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.image.dim())
    }

    /// Stacks the selected images into an N×1×H×W batch.
    pub fn images(&self, rows: &[usize]) -> Result<Array4<f32>> {
        let (h, w) = self
            .image_size()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let mut out = Array4::<f32>::zeros((rows.len(), 1, h, w));
        for (o, &r) in rows.iter().enumerate() {
            let img = &self
                .samples
                .get(r)
                .ok_or_else(|| Error::Contract(format!("row {r} out of range")))?
                .image;
            ensure!(img.dim() == (h, w), Data, "sample {r} has shape {:?}, expected {:?}", img.dim(), (h, w));
            out.slice_mut(s![o, 0, .., ..]).assign(img);
        }
        Ok(out)
    }

    pub fn attributes(&self) -> AttributeTable {
        let mut values = Array2::zeros((self.len(), 3));
        for (i, s) in self.samples.iter().enumerate() {
            values.row_mut(i).assign(&Array1::from(s.attributes.to_array().to_vec()));
        }
        AttributeTable {
            names: self.attribute_names.clone(),
            values,
        }
    }

    /// Labels for the requested task: `classes == 5` keeps the disease
    /// classes, `classes == 2` collapses them to normal vs. pathological.
    pub fn task_labels(&self, classes: usize) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("dataset carries no class labels".into()))?;
        match classes {
            5 => Ok(labels.clone()),
            2 => Ok(labels.iter().map(|&l| usize::from(l != DiseaseClass::Nor.index())).collect()),
            k => Err(Error::Config(format!("unsupported task cardinality {k}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_split_sizes() {
        let s = split_dataset(10, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_dataset(10, [0.8, 0.1, 0.1], 3).unwrap());
        s.validate(10).unwrap();
    }

    #[test]
    fn large_split_is_disjoint_and_covering() {
        let s = split_dataset(1000, [0.7, 0.15, 0.15], 11).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 150, 150));
        let a: HashSet<_> = s.train.iter().collect();
        let b: HashSet<_> = s.val.iter().collect();
        let c: HashSet<_> = s.test.iter().collect();
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let all: HashSet<_> = a.union(&b).chain(c.iter()).copied().copied().collect();
        assert_eq!(all, (0..1000).collect());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_dataset(2, [0.8, 0.1, 0.1], 0), Err(Error::Data(_))));
        assert!(matches!(split_dataset(10, [0.8, 0.1, 0.2], 0), Err(Error::Config(_))));
        assert!(matches!(split_dataset(10, [1.0, 0.0, 0.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn stratified_split_balances_classes() {
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i % 5 == 0)).collect();
        let s = split_stratified(&labels, [0.7, 0.15, 0.15], 5).unwrap();
        s.validate(1000).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 150, 150));
        let minority = |part: &[usize]| part.iter().filter(|&&i| labels[i] == 1).count();
        assert!((minority(&s.test) as i64 - 30).abs() <= 1);
        assert!((minority(&s.val) as i64 - 30).abs() <= 1);
        assert_eq!(s, split_stratified(&labels, [0.7, 0.15, 0.15], 5).unwrap());
    }

    #[test]
    fn standardizer_gives_zero_mean_unit_variance() {
        let values = Array2::from_shape_fn((50, 2), |(i, j)| (i * (j + 1)) as f64 + 3.0);
        let z = Standardizer::fit(&values).apply(&values);
        for col in z.axis_iter(Axis(1)) {
            assert!(col.mean().unwrap().abs() < 1e-12);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 50.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
