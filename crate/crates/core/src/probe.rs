//! Linear evaluation of frozen features: labels from category maps, a
//! multinomial logistic regression probe, and per-mode aggregation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::render::CategoryMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Smallest share of pixels a category needs to name the view.
    pub min_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 64,
            min_fraction: 0.15,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("probe: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.min_fraction > 0.0 && self.min_fraction < 1.0) {
            return bad("min_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub frame: usize,
    pub label: usize,
}

/// Majority category of one view, or `categories` (background) when no
/// category covers at least `min_fraction` of the pixels. Ties go to the
/// smaller id.
pub fn label_view(map: &CategoryMap, categories: usize, min_fraction: f64) -> Result<usize> {
    let total = map.width * map.height;
    if total == 0 || map.ids.len() != total {
        return Err(Error::Format {
            what: "category map".into(),
            detail: format!("{} ids for a {}x{} view", map.ids.len(), map.width, map.height),
        });
    }
    let mut counts = vec![0usize; categories];
    for &id in &map.ids {
        if id >= 0 {
            let id = id as usize;
            if id >= categories {
                return Err(Error::Format {
                    what: "category map".into(),
                    detail: format!("category {id} outside 0..{categories}"),
                });
            }
            counts[id] += 1;
        }
    }
    let (best, count) = counts
        .iter()
        .enumerate()
        .fold((categories, 0), |acc, (c, &n)| if n > acc.1 { (c, n) } else { acc });
    if count == 0 || (count as f64) < min_fraction * total as f64 {
        Ok(categories)
    } else {
        Ok(best)
    }
}

pub fn derive_labels(dataset: &Dataset, categories: usize, min_fraction: f64) -> Result<Vec<LabeledExample>> {
    if !(min_fraction > 0.0 && min_fraction < 1.0) {
        return Err(Error::Config("probe: min_fraction must lie in (0, 1)".into()));
    }
    dataset
        .frames
        .iter()
        .enumerate()
        .map(|(frame, f)| {
            Ok(LabeledExample {
                frame,
                label: label_view(&f.labels, categories, min_fraction)?,
            })
        })
        .collect()
}

/// Per-dimension mean and standard deviation of the training features.
fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for row in x {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    (mean, std)
}

fn scores(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Train softmax regression on `train` and return test top-1 accuracy in
/// percent. Features are standardized with training statistics.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Config("probe: empty split".into()));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::ShapeMismatch("probe: feature and label counts differ".into()));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("probe: ragged feature rows".into()));
    }
    let mut present = vec![false; num_classes];
    for &y in train_y.iter().chain(test_y) {
        if y >= num_classes {
            return Err(Error::Config(format!("probe: label {y} outside 0..{num_classes}")));
        }
    }
    for &y in train_y {
        present[y] = true;
    }
    if let Some(&class) = test_y.iter().find(|&&y| !present[y]) {
        return Err(Error::ClassAbsent { class });
    }

    let (mean, std) = standardizer(train_x);
    let norm = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
            .collect()
    };
    let xs = norm(train_x);
    let ts = norm(test_x);

    let k = num_classes;
    let mut w = vec![0.0; k * d];
    let mut b = vec![0.0; k];
    let mut vw = vec![0.0; k * d];
    let mut vb = vec![0.0; k];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut s = vec![0.0; k];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                scores(&w, &b, &xs[i], &mut s);
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
                for c in 0..k {
                    let p = (s[c] - max).exp() / z - if c == train_y[i] { 1.0 } else { 0.0 };
                    gb[c] += p * inv;
                    for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(&xs[i]) {
                        *g += p * v * inv;
                    }
                }
            }
            for ((p, v), g) in w.iter_mut().zip(&mut vw).zip(&gw).chain(b.iter_mut().zip(&mut vb).zip(&gb)) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
        }
    }

    let correct = ts
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            scores(&w, &b, x, &mut s);
            // first maximum wins
            let pred = s
                .iter()
                .enumerate()
                .fold(0, |best, (c, v)| if *v > s[best] { c } else { best });
            pred == y
        })
        .count();
    Ok(100.0 * correct as f64 / ts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub model: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub runs: Vec<f64>,
    pub single_run: bool,
}

impl ProbeResult {
    /// Mean and sample standard deviation; a single run reports 0.
    pub fn from_runs(model: &str, runs: Vec<f64>) -> Result<Self> {
        let n = runs.len();
        if n == 0 {
            return Err(Error::Config("probe: at least one run is required".into()));
        }
        let mean = runs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            model: model.to_string(),
            n,
            top1_mean: mean,
            top1_std: std,
            runs,
            single_run: n == 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub rows: Vec<ProbeResult>,
}

pub fn results_table(rows: &[ProbeResult]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>3}  {:>13}  {:>7}", "Model", "N", "top-1 acc.", "Std Dev");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>13.2}  {:>7.2}",
            r.model, r.n, r.top1_mean, r.top1_std
        );
    }
    out
}
