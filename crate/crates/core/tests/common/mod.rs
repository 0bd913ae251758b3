//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

use navmoco::config::ExperimentConfig;
use navmoco::contrast::{info_nce, DenominatorMode, LossConfig, TrainConfig};
use navmoco::dataset::Dataset;
use navmoco::experiment::walk;
use navmoco::geom::Vec3;
use navmoco::nn::{self, EncoderArch, ParamSet};
use navmoco::pairing::{FrameMeta, PairingMode};
use navmoco::scene::{generate_scene, Scene, Shape};
use navmoco::trajectory::{replay, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------- pairing

/// Heading difference folded into `[0, 180]` by repeated wrapping.
pub fn wrapped_heading_gap(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    while d > 180.0 {
        d -= 360.0;
    }
    while d < -180.0 {
        d += 360.0;
    }
    d.abs()
}

pub fn oracle_similar(mode: &PairingMode, a: &FrameMeta, b: &FrameMeta) -> bool {
    match *mode {
        PairingMode::Standard => a.instance == b.instance,
        PairingMode::Time { t_max } => {
            let dt = if a.pose.t > b.pose.t {
                a.pose.t - b.pose.t
            } else {
                b.pose.t - a.pose.t
            };
            dt <= t_max
        }
        PairingMode::Space { d_max, a_max } => {
            let (p, q) = (a.pose.position, b.pose.position);
            let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
            let close = (dx * dx + dy * dy + dz * dz).sqrt() <= d_max;
            close && wrapped_heading_gap(a.pose.yaw, b.pose.yaw) <= a_max
        }
    }
}

/// Poses on a coarse lattice so threshold ties are common.
pub fn lattice_meta(rng: &mut impl Rng, instances: usize) -> FrameMeta {
    let step = rng.random_range(0..400u64);
    FrameMeta {
        instance: rng.random_range(0..instances),
        pose: Pose {
            step,
            t: step as f64 * 0.1,
            position: Vec3::new(
                rng.random_range(0..8) as f64 * 0.1,
                rng.random_range(0..8) as f64 * 0.1,
                1.5,
            ),
            yaw: rng.random_range(0..360) as f64,
            jump_phase: 0,
        },
    }
}

pub fn meta_at(instance: usize, step: u64, pos: [f64; 3], yaw: f64) -> FrameMeta {
    FrameMeta {
        instance,
        pose: Pose {
            step,
            t: step as f64 * 0.1,
            position: Vec3::new(pos[0], pos[1], pos[2]),
            yaw,
            jump_phase: 0,
        },
    }
}

/// Pairs sitting exactly on, just inside and just outside each threshold.
pub fn boundary_pairs() -> Vec<(FrameMeta, FrameMeta)> {
    let base = meta_at(0, 0, [1.0, 1.0, 1.5], 0.0);
    vec![
        (base.clone(), meta_at(1, 100, [5.0, 5.0, 1.5], 90.0)),
        (base.clone(), meta_at(1, 101, [5.0, 5.0, 1.5], 90.0)),
        (base.clone(), meta_at(1, 99, [5.0, 5.0, 1.5], 90.0)),
        (base.clone(), meta_at(1, 7, [1.2, 1.0, 1.5], 0.0)),
        (base.clone(), meta_at(1, 7, [1.0, 1.2, 1.5], 3.0)),
        (base.clone(), meta_at(1, 7, [1.0, 1.0, 1.7], 357.0)),
        (base.clone(), meta_at(1, 7, [1.2001, 1.0, 1.5], 0.0)),
        (base.clone(), meta_at(1, 7, [1.0, 1.0, 1.5], 3.0001)),
        (base.clone(), meta_at(1, 7, [1.0, 1.0, 1.5], 356.9999)),
        (meta_at(0, 0, [0.0, 0.0, 1.5], 358.0), meta_at(1, 0, [0.0, 0.0, 1.5], 1.0)),
        (meta_at(0, 0, [0.0, 0.0, 1.5], 359.0), meta_at(1, 0, [0.0, 0.0, 1.5], 3.0)),
        (base.clone(), base.clone()),
    ]
}

// ---------------------------------------------------------------- loss

/// Loss by exponentiating similarities directly, no shifting, per query.
pub fn naive_info_nce(
    q: &[Vec<f64>],
    k_pos: &[Vec<f64>],
    queue: &[Vec<f64>],
    masks: &[Vec<bool>],
    tau: f64,
    with_positive: bool,
) -> (f64, Vec<f64>) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let per: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            let pos = (dot(qi, &k_pos[i]) / tau).exp();
            let mut denom = 0.0;
            for (a, key) in queue.iter().enumerate() {
                if masks[i][a] {
                    denom += (dot(qi, key) / tau).exp();
                }
            }
            if with_positive {
                denom += pos;
            }
            -(pos / denom).ln()
        })
        .collect();
    (per.iter().sum::<f64>() / per.len() as f64, per)
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Random masks with at least one negative per query.
pub fn random_masks(rng: &mut impl Rng, queries: usize, queue: usize) -> Vec<Vec<bool>> {
    (0..queries)
        .map(|_| {
            let mut m: Vec<bool> = (0..queue).map(|_| rng.random_bool(0.7)).collect();
            let force = rng.random_range(0..queue);
            m[force] = true;
            m
        })
        .collect()
}

pub fn loss_config(tau: f64, with_positive: bool) -> LossConfig {
    LossConfig {
        tau,
        denominator: if with_positive {
            DenominatorMode::WithPositive
        } else {
            DenominatorMode::NegativesOnly
        },
    }
}

/// Worst absolute difference between `info_nce` and the naive oracle over
/// `batches` random batches in one denominator mode.
pub fn loss_oracle_gap(seed: u64, batches: usize, with_positive: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let b = rng.random_range(1..6);
        let k = rng.random_range(1..12);
        let dim = rng.random_range(2..9);
        let tau = rng.random_range(0.05..1.0);
        let q: Vec<Vec<f64>> = (0..b).map(|_| unit_vector(&mut rng, dim)).collect();
        let kp: Vec<Vec<f64>> = (0..b).map(|_| unit_vector(&mut rng, dim)).collect();
        let queue: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(&mut rng, dim)).collect();
        let masks = random_masks(&mut rng, b, k);
        let refs: Vec<&[f64]> = queue.iter().map(|v| v.as_slice()).collect();
        let out = info_nce(&q, &kp, &refs, &masks, &loss_config(tau, with_positive)).unwrap();
        let (loss, per) = naive_info_nce(&q, &kp, &queue, &masks, tau, with_positive);
        worst = worst.max((out.loss - loss).abs());
        for (a, b) in out.per_query.iter().zip(&per) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// The two closed-form examples: q.k+ = 0.9, negatives {0.1, -0.3}, tau 0.2.
pub fn closed_form_losses() -> (f64, f64) {
    let q = vec![vec![1.0]];
    let kp = vec![vec![0.9]];
    let negs: [&[f64]; 2] = [&[0.1], &[-0.3]];
    let masks = vec![vec![true, true]];
    let a = info_nce(&q, &kp, &negs, &masks, &loss_config(0.2, false)).unwrap().loss;
    let b = info_nce(&q, &kp, &negs, &masks, &loss_config(0.2, true)).unwrap().loss;
    (a, b)
}

// ---------------------------------------------------------------- gradients

pub fn gradcheck_arch() -> EncoderArch {
    EncoderArch {
        input_size: 8,
        in_channels: 3,
        conv_channels: vec![3, 4],
        hidden_dim: 6,
        feat_dim: 5,
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub max_rel_params: f64,
    pub max_rel_inputs: f64,
    pub params_checked: usize,
    /// Parameters whose analytic gradient is not exactly zero.
    pub params_live: usize,
    pub inputs_checked: usize,
    /// Coordinates where a ReLU flipped even at the smallest step.
    pub unresolved: usize,
    /// Coordinates that needed a step below the nominal one.
    pub refined: usize,
}

pub const FD_EPS: f64 = 1e-4;

/// Five-point central difference from `f(x+2h), f(x+h), f(x-h), f(x-2h)`.
pub fn central5(p2: f64, p1: f64, m1: f64, m2: f64, h: f64) -> f64 {
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

struct GradProblem {
    arch: EncoderArch,
    inputs: Vec<Vec<f64>>,
    k_pos: Vec<Vec<f64>>,
    queue: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    cfg: LossConfig,
}

impl GradProblem {
    fn new(seed: u64) -> Self {
        let arch = gradcheck_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let batch = 3;
        let inputs = (0..batch)
            .map(|_| (0..arch.input_len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let k_pos = (0..batch).map(|_| unit_vector(&mut rng, arch.feat_dim)).collect();
        let queue: Vec<Vec<f64>> = (0..6).map(|_| unit_vector(&mut rng, arch.feat_dim)).collect();
        let masks = random_masks(&mut rng, batch, queue.len());
        let cfg = loss_config(0.2, seed % 2 == 1);
        Self {
            arch,
            inputs,
            k_pos,
            queue,
            masks,
            cfg,
        }
    }

    fn loss(&self, params: &ParamSet<f64>) -> (f64, Vec<Vec<bool>>) {
        let refs: Vec<&[f64]> = self.inputs.iter().map(|v| v.as_slice()).collect();
        let fwd = nn::forward(&self.arch, params, &refs).unwrap();
        let q_refs: Vec<&[f64]> = self.queue.iter().map(|v| v.as_slice()).collect();
        let out = info_nce(&fwd.features, &self.k_pos, &q_refs, &self.masks, &self.cfg).unwrap();
        let pattern = fwd.tape.samples.iter().map(|s| s.relu_pattern()).collect();
        (out.loss, pattern)
    }
}

fn nudge(params: &ParamSet<f64>, index: usize, delta: f64) -> ParamSet<f64> {
    let mut p = params.clone();
    *p.values_mut().nth(index).unwrap() += delta;
    p
}

/// Central differences of the end-to-end loss for every encoder parameter,
/// plus the loss inputs (queries and positive keys).
pub fn gradcheck(seed: u64) -> GradReport {
    let prob = GradProblem::new(seed);
    let params = ParamSet::<f64>::init(&prob.arch, seed);
    let refs: Vec<&[f64]> = prob.inputs.iter().map(|v| v.as_slice()).collect();
    let fwd = nn::forward(&prob.arch, &params, &refs).unwrap();
    let q_refs: Vec<&[f64]> = prob.queue.iter().map(|v| v.as_slice()).collect();
    let out = info_nce(&fwd.features, &prob.k_pos, &q_refs, &prob.masks, &prob.cfg).unwrap();
    let grads = nn::backward(&prob.arch, &params, &fwd.tape, &out.grad_q).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();
    let mut report = GradReport::default();

    for (i, &a) in analytic.iter().enumerate() {
        let mut eps = FD_EPS;
        let mut numeric = None;
        for attempt in 0..4 {
            let probes: Vec<(f64, Vec<Vec<bool>>)> = [2.0, 1.0, -1.0, -2.0]
                .iter()
                .map(|k| prob.loss(&nudge(&params, i, k * eps)))
                .collect();
            if probes.iter().all(|(_, p)| *p == probes[0].1) {
                numeric = Some(central5(probes[0].0, probes[1].0, probes[2].0, probes[3].0, eps));
                if attempt > 0 {
                    report.refined += 1;
                }
                break;
            }
            eps /= 10.0;
        }
        match numeric {
            Some(n) => {
                report.max_rel_params = report.max_rel_params.max(rel_err(a, n));
                report.params_checked += 1;
                report.params_live += (a != 0.0) as usize;
            }
            None => report.unresolved += 1,
        }
    }

    // Loss inputs: the normalized queries and the positive keys.
    let q = fwd.features.clone();
    let kp = prob.k_pos.clone();
    let eval = |q: &[Vec<f64>], kp: &[Vec<f64>]| info_nce(q, kp, &q_refs, &prob.masks, &prob.cfg).unwrap().loss;
    for b in 0..q.len() {
        for d in 0..q[b].len() {
            let at = |k: f64| {
                let mut v = q.clone();
                v[b][d] += k * FD_EPS;
                eval(&v, &kp)
            };
            let n = central5(at(2.0), at(1.0), at(-1.0), at(-2.0), FD_EPS);
            report.max_rel_inputs = report.max_rel_inputs.max(rel_err(out.grad_q[b][d], n));
            let at = |k: f64| {
                let mut v = kp.clone();
                v[b][d] += k * FD_EPS;
                eval(&q, &v)
            };
            let n = central5(at(2.0), at(1.0), at(-1.0), at(-2.0), FD_EPS);
            report.max_rel_inputs = report.max_rel_inputs.max(rel_err(out.grad_k[b][d], n));
            report.inputs_checked += 2;
        }
    }
    report
}

// ---------------------------------------------------------------- geometry

#[derive(Debug, Clone, Copy)]
enum OracleSolid {
    Cuboid { lo: [f64; 3], hi: [f64; 3] },
    Column { c: [f64; 2], r: f64, z0: f64, z1: f64 },
}

impl OracleSolid {
    fn dist(&self, p: [f64; 3]) -> f64 {
        match *self {
            OracleSolid::Cuboid { lo, hi } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for i in 0..3 {
                    let d = (lo[i] - p[i]).max(p[i] - hi[i]);
                    if d > 0.0 {
                        outside += d * d;
                    }
                    inside = inside.max(d);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
            OracleSolid::Column { c, r, z0, z1 } => {
                let radial = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - r;
                let vertical = (z0 - p[2]).max(p[2] - z1);
                if radial > 0.0 || vertical > 0.0 {
                    (radial.max(0.0).powi(2) + vertical.max(0.0).powi(2)).sqrt()
                } else {
                    radial.max(vertical)
                }
            }
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.dist(p) <= 0.0
    }
}

/// The scene's walls and furnishings rebuilt from the raw scene fields,
/// tagged with the category a hit on them reports.
pub struct OracleScene {
    solids: Vec<(OracleSolid, i32)>,
    bounds: ([f64; 2], [f64; 2]),
}

impl OracleScene {
    pub fn new(scene: &Scene) -> Self {
        let mut solids = Vec::new();
        for w in &scene.walls {
            let h = w.thickness / 2.0;
            let lo = [w.start[0].min(w.end[0]) - h, w.start[1].min(w.end[1]) - h, 0.0];
            let hi = [w.start[0].max(w.end[0]) + h, w.start[1].max(w.end[1]) + h, w.height];
            solids.push((OracleSolid::Cuboid { lo, hi }, -1));
        }
        for o in &scene.objects {
            let (p, s) = (o.position, o.size);
            let solid = match o.shape {
                Shape::Box => OracleSolid::Cuboid {
                    lo: [p.x - s.x / 2.0, p.y - s.y / 2.0, p.z - s.z / 2.0],
                    hi: [p.x + s.x / 2.0, p.y + s.y / 2.0, p.z + s.z / 2.0],
                },
                Shape::Cylinder => OracleSolid::Column {
                    c: [p.x, p.y],
                    r: s.x / 2.0,
                    z0: p.z - s.z / 2.0,
                    z1: p.z + s.z / 2.0,
                },
            };
            solids.push((solid, o.category_id as i32));
        }
        Self {
            solids,
            bounds: (scene.bounds.min, scene.bounds.max),
        }
    }

    /// Distance to the nearest solid or the floor, and what that is.
    fn nearest(&self, p: [f64; 3]) -> (f64, i32, f64) {
        let mut best = (p[2], -1, f64::INFINITY);
        for &(s, cat) in &self.solids {
            let d = s.dist(p);
            if d < best.0 {
                best = (d, cat, best.0);
            } else if d < best.2 {
                best.2 = d;
            }
        }
        best
    }

    pub fn clearance(&self, p: [f64; 3]) -> f64 {
        self.nearest(p).0
    }

    fn in_bounds(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = self.bounds;
        p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1]
    }

    /// Sphere tracing: `(distance, category, margin)` of the first surface
    /// along the unit direction, where `margin` is how much farther the
    /// runner-up surface was at the hit point.
    pub fn march(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, i32, f64)> {
        let mut t = 0.0;
        for _ in 0..200_000 {
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            if !self.in_bounds(p) || p[2] > 20.0 {
                return None;
            }
            let (dist, cat, runner_up) = self.nearest(p);
            if dist < 1e-9 {
                return Some((t, cat, runner_up - dist));
            }
            t += dist;
        }
        panic!("ray march did not converge from {o:?} along {d:?}");
    }

    /// Lattice test: whether any sample point with spacing `h` inside the
    /// ball `(p, r)` lies in a solid, below the floor or outside the bounds.
    pub fn lattice_blocked(&self, p: [f64; 3], r: f64, h: f64) -> bool {
        let n = (r / h).ceil() as i64;
        for i in -n..=n {
            for j in -n..=n {
                for k in -n..=n {
                    let off = [i as f64 * h, j as f64 * h, k as f64 * h];
                    if off[0] * off[0] + off[1] * off[1] + off[2] * off[2] > r * r {
                        continue;
                    }
                    let x = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
                    if x[2] < 0.0 || !self.in_bounds(x) {
                        return true;
                    }
                    if self.solids.iter().any(|(s, _)| s.contains(x)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

pub fn random_direction(rng: &mut impl Rng) -> [f64; 3] {
    let v = unit_vector(rng, 3);
    [v[0], v[1], v[2]]
}

/// A point at least `margin` from every surface, in free space.
pub fn random_free_point(rng: &mut impl Rng, scene: &Scene, oracle: &OracleScene, margin: f64) -> [f64; 3] {
    let b = scene.bounds;
    loop {
        let p = [
            rng.random_range(b.min[0]..b.max[0]),
            rng.random_range(b.min[1]..b.max[1]),
            rng.random_range(0.05..2.4),
        ];
        if oracle.clearance(p) > margin {
            return p;
        }
    }
}

// ---------------------------------------------------------------- fixtures

/// Small but complete experiment config for fast end-to-end runs.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.trajectory.steps = 120;
    cfg.trajectory.test_steps = 60;
    cfg.trajectory.test_seed = 7;
    cfg.render.width = 16;
    cfg.render.height = 16;
    cfg.train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        queue_size: 32,
        ..TrainConfig::default()
    };
    cfg.train.augment.output_size = 16;
    cfg.train.encoder = EncoderArch {
        input_size: 16,
        in_channels: 3,
        conv_channels: vec![4, 8],
        hidden_dim: 16,
        feat_dim: 8,
    };
    cfg.probe.epochs = 5;
    cfg.validate().unwrap();
    cfg
}

pub fn tiny_dataset(cfg: &ExperimentConfig) -> Dataset {
    let scene = generate_scene(cfg.scene_seed, &cfg.scene).unwrap();
    let traj = walk(&scene, cfg, cfg.trajectory.seed, cfg.trajectory.steps).unwrap();
    replay(&scene, &traj, &cfg.render).unwrap()
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- probe

pub struct ProbeSanity {
    pub separable: f64,
    pub shuffled: f64,
    /// Chance accuracy in percent and its binomial standard deviation.
    pub chance: f64,
    pub sigma: f64,
}

/// Linear probe on well separated class clusters, then on the same
/// features with labels permuted so they carry no information.
pub fn probe_sanity(classes: usize, seed: u64) -> ProbeSanity {
    use navmoco::probe::{linear_probe, ProbeConfig};
    use rand::seq::SliceRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 16;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| unit_vector(&mut rng, dim).into_iter().map(|x| 6.0 * x).collect())
        .collect();
    let split = |rng: &mut ChaCha8Rng, per_class: usize| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                x.push(center.iter().map(|m| m + 0.5 * gaussian(rng)).collect::<Vec<f64>>());
                y.push(c);
            }
        }
        (x, y)
    };
    let (train_x, train_y) = split(&mut rng, 200);
    let (test_x, test_y) = split(&mut rng, 300);
    let cfg = ProbeConfig::default();
    let separable = linear_probe(&train_x, &train_y, &test_x, &test_y, classes, &cfg, seed).unwrap();

    let mut shuffled_train = train_y.clone();
    shuffled_train.shuffle(&mut rng);
    let mut shuffled_test = test_y.clone();
    shuffled_test.shuffle(&mut rng);
    let shuffled = linear_probe(&train_x, &shuffled_train, &test_x, &shuffled_test, classes, &cfg, seed).unwrap();
    let p = 1.0 / classes as f64;
    ProbeSanity {
        separable,
        shuffled,
        chance: 100.0 * p,
        sigma: 100.0 * (p * (1.0 - p) / test_y.len() as f64).sqrt(),
    }
}
