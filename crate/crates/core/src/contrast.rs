//! Momentum contrast with navigational positives.
//!
//! Each step: pick a positive frame j(i) per query frame i, encode an
//! augmented view of i with the query encoder and an augmented view of j(i)
//! with the momentum (key) encoder, score the query against its positive and
//! against every queued key that is *not* similar to it, update the query
//! encoder by SGD, move the key encoder toward it, then enqueue the new keys
//! with the metadata of the frame they were computed from.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, view_rng, AugmentConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, read_checkpoint, write_checkpoint, EncoderArch, ParamSet, Scalar};
use crate::pairing::{negative_mask, FrameMeta, PairAssignment, PairingMode, PositiveIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry<T> {
    pub key: Vec<T>,
    pub meta: FrameMeta,
}

/// Fixed-capacity FIFO of keys with their frame metadata. Enqueuing past
/// capacity evicts the oldest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue<T> {
    capacity: usize,
    entries: VecDeque<QueueEntry<T>>,
}

impl<T: Clone> KeyQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn enqueue(&mut self, key: Vec<T>, meta: FrameMeta) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry { key, meta });
    }

    /// Oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = &QueueEntry<T>> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.entries.iter().map(|e| e.key.as_slice())
    }

    pub fn metas(&self) -> impl ExactSizeIterator<Item = &FrameMeta> {
        self.entries.iter().map(|e| &e.meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Only the masked-in queue negatives, as in the loss with the positive
    /// appearing solely in the numerator.
    NegativesOnly,
    /// Conventional InfoNCE: the positive is also in the denominator.
    WithPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub denominator: DenominatorMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    /// Mean over the batch.
    pub loss: T,
    pub per_query: Vec<T>,
    /// Gradient of `loss` with respect to each query feature.
    pub grad_q: Vec<Vec<T>>,
    /// Gradient of `loss` with respect to each positive key.
    pub grad_k: Vec<Vec<T>>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Contrastive loss per query `i`:
/// `-s(i, j(i)) + logsumexp({ s(i, a) : mask_i[a] } [+ s(i, j(i))])`
/// with `s(x, y) = x . y / tau`, averaged over the batch.
pub fn info_nce<T: Scalar>(
    q: &[Vec<T>],
    k_pos: &[Vec<T>],
    queue: &[&[T]],
    masks: &[Vec<bool>],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    if !(cfg.tau > 0.0) {
        return Err(Error::Config("loss: tau must be positive".into()));
    }
    if k_pos.len() != q.len() || masks.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} queries, {} positives, {} masks",
            q.len(),
            k_pos.len(),
            masks.len()
        )));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != queue.len()) {
        return Err(Error::ShapeMismatch(format!(
            "mask of length {} for a queue of {}",
            m.len(),
            queue.len()
        )));
    }
    let b = q.len();
    let inv_tau = T::one() / T::lit(cfg.tau);
    let scale = T::one() / T::lit(b as f64);
    let with_pos = cfg.denominator == DenominatorMode::WithPositive;

    let mut per_query = Vec::with_capacity(b);
    let mut grad_q = Vec::with_capacity(b);
    let mut grad_k = Vec::with_capacity(b);
    for i in 0..b {
        let qi = &q[i];
        let s_pos = dot(qi, &k_pos[i]) * inv_tau;
        let negs: Vec<(usize, T)> = masks[i]
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(a, _)| (a, dot(qi, queue[a]) * inv_tau))
            .collect();
        if negs.is_empty() {
            return Err(Error::DegenerateBatch { query: i });
        }
        let mut max = negs.iter().map(|(_, s)| *s).fold(T::neg_infinity(), T::max);
        if with_pos {
            max = max.max(s_pos);
        }
        let mut sum: T = negs.iter().map(|(_, s)| (*s - max).exp()).sum();
        if with_pos {
            sum = sum + (s_pos - max).exp();
        }
        let lse = max + sum.ln();
        per_query.push(lse - s_pos);

        // d/dq = (-k_pos + sum_D p_a k_a) / tau ; d/dk_pos = (-q + [pos] p_pos q) / tau
        let mut gq: Vec<T> = k_pos[i].iter().map(|v| -*v).collect();
        for (a, s) in &negs {
            let p = (*s - lse).exp();
            for (g, k) in gq.iter_mut().zip(queue[*a]) {
                *g = *g + p * *k;
            }
        }
        let p_pos = if with_pos { (s_pos - lse).exp() } else { T::zero() };
        if with_pos {
            for (g, k) in gq.iter_mut().zip(&k_pos[i]) {
                *g = *g + p_pos * *k;
            }
        }
        grad_q.push(gq.into_iter().map(|g| g * inv_tau * scale).collect());
        grad_k.push(
            qi.iter()
                .map(|v| (p_pos - T::one()) * *v * inv_tau * scale)
                .collect(),
        );
    }
    let loss = per_query.iter().copied().sum::<T>() * scale;
    Ok(LossOutput {
        loss,
        per_query,
        grad_q,
        grad_k,
    })
}

/// `theta_k <- m * theta_k + (1 - m) * theta_q`, elementwise.
pub fn momentum_update<T: Scalar>(theta_k: &mut ParamSet<T>, theta_q: &ParamSet<T>, m: T) -> Result<()> {
    theta_k.check_shape(theta_q)?;
    if !(m > T::zero() && m < T::one()) {
        return Err(Error::Config("key momentum must lie in (0, 1)".into()));
    }
    let rest = T::one() - m;
    for (k, q) in theta_k.values_mut().zip(theta_q.values()) {
        *k = m * *k + rest * *q;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub key_momentum: f64,
    pub queue_size: usize,
    pub tau: f64,
    pub denominator: DenominatorMode,
    pub mode: PairingMode,
    pub augment: AugmentConfig,
    pub encoder: EncoderArch,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 0.05,
            sgd_momentum: 0.9,
            key_momentum: 0.99,
            queue_size: 1024,
            tau: 0.2,
            denominator: DenominatorMode::NegativesOnly,
            mode: PairingMode::Standard,
            augment: AugmentConfig::default(),
            encoder: EncoderArch::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.epochs == 0 || self.batch_size == 0 || self.queue_size == 0 {
            return bad("epochs, batch_size and queue_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return bad("lr and tau must be positive");
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("sgd_momentum must lie in [0, 1)");
        }
        if !(self.key_momentum > 0.0 && self.key_momentum < 1.0) {
            return bad("key_momentum must lie in (0, 1)");
        }
        if self.augment.output_size != self.encoder.input_size {
            return bad("augment.output_size must equal encoder.input_size");
        }
        self.mode.validate()?;
        self.augment.validate()?;
        self.encoder.validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            denominator: self.denominator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub pos_sim: f64,
    pub fallback_frac: f64,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    step: u64,
    epoch: usize,
}

/// All mutable training state. Owned by one task; batch work fans out
/// internally.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a Dataset,
    metas: Vec<FrameMeta>,
    positives: PositiveIndex,
    pub query: ParamSet<f32>,
    pub key: ParamSet<f32>,
    pub velocity: ParamSet<f32>,
    pub queue: KeyQueue<f32>,
    step: u64,
    epoch: usize,
}

const PAIR_STREAM: u64 = 1 << 40;
const WARMUP_STEP: u64 = u64::MAX;

impl<'a> Trainer<'a> {
    /// Fresh state: `theta_k = theta_q`, queue warmed with `min(K, n)` keys.
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Config("train: dataset has no frames".into()));
        }
        let query = ParamSet::<f32>::init(&cfg.encoder, cfg.seed);
        let metas = dataset.metas();
        let positives = PositiveIndex::build(cfg.mode, &metas);
        let mut trainer = Self {
            key: query.clone(),
            velocity: query.zeros_like(),
            queue: KeyQueue::new(cfg.queue_size),
            query,
            metas,
            positives,
            dataset,
            cfg,
            step: 0,
            epoch: 0,
        };
        trainer.warm_up()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn metas(&self) -> &[FrameMeta] {
        &self.metas
    }

    fn warm_up(&mut self) -> Result<()> {
        let n = self.dataset.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(3);
        order.shuffle(&mut rng);
        order.truncate(self.cfg.queue_size.min(n));
        let mut slot = 0u64;
        for chunk in order.chunks(self.cfg.batch_size) {
            let views: Vec<Vec<f32>> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut r = view_rng(self.cfg.seed, WARMUP_STEP, slot + k as u64);
                    augment(&self.dataset.frames[i].image, &self.cfg.augment, &mut r).data
                })
                .collect();
            slot += chunk.len() as u64;
            let refs: Vec<&[f32]> = views.iter().map(|v| v.as_slice()).collect();
            let (_, keys) = nn::encode(&self.cfg.encoder, &self.key, &refs)?;
            for (key, &i) in keys.into_iter().zip(chunk) {
                self.queue.enqueue(key, self.metas[i].clone());
            }
        }
        Ok(())
    }

    fn pair_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(PAIR_STREAM + self.step);
        rng
    }

    /// Frame order for an epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(4 + 2 * epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// One optimization step over the given query frames.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<(StepMetrics, Vec<PairAssignment>)> {
        if self.queue.is_empty() {
            return Err(Error::Config("train: queue must be warmed before training".into()));
        }
        let mut rng = self.pair_rng();
        let pairs: Vec<PairAssignment> = batch.iter().map(|&i| self.positives.select(i, &mut rng)).collect();

        let seed = self.cfg.seed;
        let step = self.step;
        let frames = &self.dataset.frames;
        let aug = &self.cfg.augment;
        let (q_views, k_views): (Vec<Vec<f32>>, Vec<Vec<f32>>) = pairs
            .par_iter()
            .enumerate()
            .map(|(slot, p)| {
                let slot = slot as u64;
                let q = augment(&frames[p.query_index].image, aug, &mut view_rng(seed, step, 2 * slot)).data;
                let k = augment(&frames[p.positive_index].image, aug, &mut view_rng(seed, step, 2 * slot + 1)).data;
                (q, k)
            })
            .unzip();
        let q_refs: Vec<&[f32]> = q_views.iter().map(|v| v.as_slice()).collect();
        let k_refs: Vec<&[f32]> = k_views.iter().map(|v| v.as_slice()).collect();

        let arch = &self.cfg.encoder;
        let fwd = nn::forward(arch, &self.query, &q_refs)?;
        let (_, keys) = nn::encode(arch, &self.key, &k_refs)?;

        let queue_keys: Vec<&[f32]> = self.queue.keys().collect();
        let masks: Vec<Vec<bool>> = pairs
            .iter()
            .map(|p| negative_mask(&self.cfg.mode, &self.metas[p.query_index], self.queue.metas()))
            .collect();
        let loss = info_nce(&fwd.features, &keys, &queue_keys, &masks, &self.cfg.loss())?;
        let grads = nn::backward(arch, &self.query, &fwd.tape, &loss.grad_q)?;
        nn::sgd_step(
            &mut self.query,
            &grads,
            self.cfg.lr as f32,
            self.cfg.sgd_momentum as f32,
            &mut self.velocity,
        )?;
        momentum_update(&mut self.key, &self.query, self.cfg.key_momentum as f32)?;

        let pos_sim = fwd
            .features
            .iter()
            .zip(&keys)
            .map(|(q, k)| dot(q, k) as f64)
            .sum::<f64>()
            / batch.len() as f64;
        let fallbacks = pairs.iter().filter(|p| p.fallback_used).count();
        for (key, p) in keys.into_iter().zip(&pairs) {
            self.queue.enqueue(key, self.metas[p.positive_index].clone());
        }
        self.step += 1;
        Ok((
            StepMetrics {
                step: self.step,
                loss: loss.loss as f64,
                pos_sim,
                fallback_frac: fallbacks as f64 / batch.len() as f64,
            },
            pairs,
        ))
    }

    /// Train one epoch; `on_step` sees every step's metrics and pairs.
    pub fn run_epoch<F>(&mut self, mut on_step: F) -> Result<()>
    where
        F: FnMut(&StepMetrics, &[PairAssignment]) -> Result<()>,
    {
        let order = self.epoch_order(self.epoch);
        for batch in order.chunks(self.cfg.batch_size) {
            let (m, pairs) = self.train_step(batch)?;
            on_step(&m, &pairs)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Train until `cfg.epochs` epochs have completed.
    pub fn run<F>(&mut self, mut on_step: F) -> Result<()>
    where
        F: FnMut(usize, &StepMetrics, &[PairAssignment]) -> Result<()>,
    {
        while self.epoch < self.cfg.epochs {
            let epoch = self.epoch;
            self.run_epoch(|m, p| on_step(epoch, m, p))?;
        }
        Ok(())
    }

    /// Write query/key/velocity checkpoints, the queue dump and counters.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let arch = &self.cfg.encoder;
        for (name, p) in [("query", &self.query), ("key", &self.key), ("velocity", &self.velocity)] {
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, arch, p)?;
            fs::write(dir.join(format!("{name}.ckpt")), buf)?;
        }
        fs::write(dir.join("queue.bin"), encode_queue(&self.queue)?)?;
        let state = TrainerState {
            step: self.step,
            epoch: self.epoch,
        };
        fs::write(dir.join("state.json"), serde_json::to_string(&state)?)?;
        Ok(())
    }

    /// Restore a state written by [`Trainer::save`] for exact continuation.
    pub fn resume(dataset: &'a Dataset, cfg: TrainConfig, dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let load = |name: &str| -> Result<ParamSet<f32>> {
            let path = dir.join(format!("{name}.ckpt"));
            if !path.exists() {
                return Err(Error::MissingInput(path));
            }
            let (arch, p) = read_checkpoint::<f32, _>(fs::File::open(path)?)?;
            if arch != cfg.encoder {
                return Err(Error::Config("checkpoint architecture differs from config".into()));
            }
            Ok(p)
        };
        let state: TrainerState = serde_json::from_str(&crate::dataset::read_text(&dir.join("state.json"))?)?;
        let queue = decode_queue(&fs::read(dir.join("queue.bin"))?)?;
        let metas = dataset.metas();
        Ok(Self {
            query: load("query")?,
            key: load("key")?,
            velocity: load("velocity")?,
            queue,
            positives: PositiveIndex::build(cfg.mode, &metas),
            metas,
            dataset,
            cfg,
            step: state.step,
            epoch: state.epoch,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QueueHeader {
    capacity: usize,
    dim: usize,
    dtype: String,
    endianness: String,
    metas: Vec<FrameMeta>,
}

/// Queue dump: u64 LE header length, JSON header (capacity, key dim,
/// metadata oldest first), then the keys as little-endian f32 in order.
pub fn encode_queue(queue: &KeyQueue<f32>) -> Result<Vec<u8>> {
    let dim = queue.keys().next().map_or(0, |k| k.len());
    let header = QueueHeader {
        capacity: queue.capacity(),
        dim,
        dtype: "f32".into(),
        endianness: "little".into(),
        metas: queue.metas().cloned().collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header.len() + queue.len() * dim * 4);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for k in queue.keys() {
        for v in k {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn decode_queue(bytes: &[u8]) -> Result<KeyQueue<f32>> {
    let bad = |d: &str| Error::Format {
        what: "queue dump".into(),
        detail: d.into(),
    };
    let len = bytes
        .get(..8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| bad("truncated header"))?;
    let header: QueueHeader =
        serde_json::from_slice(bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?)?;
    let payload = &bytes[8 + len..];
    if payload.len() != header.metas.len() * header.dim * 4 || header.capacity == 0 {
        return Err(bad("payload size does not match header"));
    }
    let mut queue = KeyQueue::new(header.capacity);
    for (meta, chunk) in header.metas.into_iter().zip(payload.chunks_exact((header.dim * 4).max(1))) {
        queue.enqueue(chunk.chunks_exact(4).map(f32::read_le).collect(), meta);
    }
    Ok(queue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Pose;

    fn meta(i: usize) -> FrameMeta {
        FrameMeta {
            instance: i,
            pose: Pose {
                step: i as u64,
                t: i as f64,
                ..Pose::default()
            },
        }
    }

    #[test]
    fn queue_keeps_most_recent() {
        let mut q = KeyQueue::new(4);
        for i in 0..7 {
            q.enqueue(vec![i as f32], meta(i));
        }
        let ids: Vec<usize> = q.metas().map(|m| m.instance).collect();
        assert_eq!(ids, vec![3, 4, 5, 6]);
        assert_eq!(q.len(), 4);
    }

    #[test]
    fn queue_dump_round_trip() {
        let mut q = KeyQueue::new(3);
        for i in 0..5 {
            q.enqueue(vec![i as f32, -0.5 * i as f32], meta(i));
        }
        assert_eq!(decode_queue(&encode_queue(&q).unwrap()).unwrap(), q);
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn equal_similarities_give_log_count() {
        let q = vec![unit(&[1.0, 0.0])];
        let k = vec![unit(&[0.0, 1.0])];
        let negs: Vec<Vec<f64>> = (0..10).map(|_| unit(&[0.0, 1.0])).collect();
        let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        let masks = vec![vec![true; 10]];
        let cfg = LossConfig {
            tau: 0.2,
            denominator: DenominatorMode::NegativesOnly,
        };
        let out = info_nce(&q, &k, &refs, &masks, &cfg).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);

        let refs7 = &refs[..7];
        let masks7 = vec![vec![true; 7]];
        let cfg = LossConfig {
            tau: 0.2,
            denominator: DenominatorMode::WithPositive,
        };
        let out = info_nce(&q, &k, refs7, &masks7, &cfg).unwrap();
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_degenerate() {
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let k = q.clone();
        let negs = [vec![1.0, 0.0]];
        let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        let masks = vec![vec![true], vec![false]];
        let cfg = LossConfig {
            tau: 0.2,
            denominator: DenominatorMode::NegativesOnly,
        };
        assert!(matches!(
            info_nce(&q, &k, &refs, &masks, &cfg),
            Err(Error::DegenerateBatch { query: 1 })
        ));
    }

    #[test]
    fn extreme_temperature_stays_finite() {
        let q = vec![vec![1.0f64, 0.0]];
        let k = vec![vec![-1.0, 0.0]];
        let negs = [vec![1.0, 0.0], vec![-1.0, 0.0]];
        let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        for denominator in [DenominatorMode::NegativesOnly, DenominatorMode::WithPositive] {
            let cfg = LossConfig { tau: 0.01, denominator };
            let out = info_nce(&q, &k, &refs, &[vec![true, true]], &cfg).unwrap();
            assert!(out.loss.is_finite());
            assert!(out.grad_q[0].iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn momentum_examples() {
        let arch = EncoderArch {
            input_size: 4,
            in_channels: 1,
            conv_channels: vec![1],
            hidden_dim: 1,
            feat_dim: 2,
        };
        let mut k = ParamSet::<f64>::zeros(&arch);
        let mut q = k.clone();
        q.values_mut().for_each(|v| *v = 1.0);
        momentum_update(&mut k, &q, 0.999).unwrap();
        assert!(k.values().all(|v| (*v - 0.001).abs() < 1e-15));
        let before = q.clone();
        let mut same = q.clone();
        momentum_update(&mut same, &before, 0.999).unwrap();
        assert_eq!(same, before);

        let mut k2 = ParamSet::<f64>::zeros(&arch);
        k2.tensors[0].data[0] = 0.0;
        k2.tensors[1].data[0] = 2.0;
        let mut q2 = k2.zeros_like();
        q2.tensors[0].data[0] = 1.0;
        momentum_update(&mut k2, &q2, 0.999).unwrap();
        assert!((k2.tensors[0].data[0] - 0.001).abs() < 1e-15);
        assert!((k2.tensors[1].data[0] - 1.998).abs() < 1e-12);
    }
}
