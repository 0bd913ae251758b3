//! Positive/negative relations between frames from navigational metadata.
//!
//! Three rules are supported. `Standard` treats only the same frame as
//! similar (instance discrimination). `Time` treats frames within `t_max`
//! seconds as similar. `Space` requires both position within `d_max` meters
//! and heading within `a_max` degrees. All thresholds are inclusive.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairingMode {
    Standard,
    Time { t_max: f64 },
    Space { d_max: f64, a_max: f64 },
}

impl PairingMode {
    pub const TIME_DEFAULT: f64 = 10.0;
    pub const DISTANCE_DEFAULT: f64 = 0.2;
    pub const ANGLE_DEFAULT: f64 = 3.0;

    pub fn time() -> Self {
        PairingMode::Time {
            t_max: Self::TIME_DEFAULT,
        }
    }

    pub fn space() -> Self {
        PairingMode::Space {
            d_max: Self::DISTANCE_DEFAULT,
            a_max: Self::ANGLE_DEFAULT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PairingMode::Standard => "standard",
            PairingMode::Time { .. } => "time",
            PairingMode::Space { .. } => "space",
        }
    }

    /// Row label used in result tables.
    pub fn model_name(&self) -> &'static str {
        match self {
            PairingMode::Standard => "Standard MoCo",
            PairingMode::Time { .. } => "Time MoCo",
            PairingMode::Space { .. } => "Space MoCo",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PairingMode::Standard => true,
            PairingMode::Time { t_max } => t_max > 0.0,
            PairingMode::Space { d_max, a_max } => d_max > 0.0 && a_max > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("pairing: {} thresholds must be positive", self.name())))
        }
    }
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pose of a frame together with the frame (instance) it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub instance: usize,
    pub pose: Pose,
}

/// Smallest absolute angle between two headings, in `[0, 180]` degrees.
pub fn circular_yaw_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn is_similar(mode: &PairingMode, a: &FrameMeta, b: &FrameMeta) -> bool {
    match *mode {
        PairingMode::Standard => a.instance == b.instance,
        PairingMode::Time { t_max } => (a.pose.t - b.pose.t).abs() <= t_max,
        PairingMode::Space { d_max, a_max } => {
            a.pose.position.distance(b.pose.position) <= d_max
                && circular_yaw_distance(a.pose.yaw, b.pose.yaw) <= a_max
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAssignment {
    pub query_index: usize,
    pub positive_index: usize,
    pub fallback_used: bool,
}

/// Pick the single positive partner for a query: itself under `Standard`,
/// otherwise a uniform draw among the other similar frames, falling back to
/// itself when there are none.
pub fn select_positive<R: Rng + ?Sized>(
    mode: &PairingMode,
    query_index: usize,
    records: &[FrameMeta],
    rng: &mut R,
) -> PairAssignment {
    if *mode == PairingMode::Standard {
        return PairAssignment {
            query_index,
            positive_index: query_index,
            fallback_used: false,
        };
    }
    let query = &records[query_index];
    let candidates: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|&(j, r)| j != query_index && is_similar(mode, query, r))
        .map(|(j, _)| j)
        .collect();
    pick(query_index, &candidates, rng)
}

fn pick<R: Rng + ?Sized>(query_index: usize, candidates: &[usize], rng: &mut R) -> PairAssignment {
    if candidates.is_empty() {
        PairAssignment {
            query_index,
            positive_index: query_index,
            fallback_used: true,
        }
    } else {
        PairAssignment {
            query_index,
            positive_index: candidates[rng.random_range(0..candidates.len())],
            fallback_used: false,
        }
    }
}

/// Candidate positives for every frame, computed once per dataset. Gives the
/// same draws as [`select_positive`] for the same rng state.
#[derive(Debug, Clone)]
pub struct PositiveIndex {
    mode: PairingMode,
    candidates: Vec<Vec<usize>>,
}

impl PositiveIndex {
    pub fn build(mode: PairingMode, records: &[FrameMeta]) -> Self {
        let candidates = if mode == PairingMode::Standard {
            vec![Vec::new(); records.len()]
        } else {
            records
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    records
                        .iter()
                        .enumerate()
                        .filter(|&(j, r)| j != i && is_similar(&mode, q, r))
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect()
        };
        Self { mode, candidates }
    }

    pub fn mode(&self) -> PairingMode {
        self.mode
    }

    pub fn candidates(&self, query_index: usize) -> &[usize] {
        &self.candidates[query_index]
    }

    pub fn select<R: Rng + ?Sized>(&self, query_index: usize, rng: &mut R) -> PairAssignment {
        if self.mode == PairingMode::Standard {
            return PairAssignment {
                query_index,
                positive_index: query_index,
                fallback_used: false,
            };
        }
        pick(query_index, &self.candidates[query_index], rng)
    }
}

/// `mask[k]` is true iff queue entry `k` is a negative for `query`. Entries
/// within threshold are left out entirely.
pub fn negative_mask<'a, I>(mode: &PairingMode, query: &FrameMeta, queue_meta: I) -> Vec<bool>
where
    I: IntoIterator<Item = &'a FrameMeta>,
{
    queue_meta
        .into_iter()
        .map(|m| !is_similar(mode, query, m))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairLine<'a> {
    i: usize,
    j: usize,
    mode: &'a str,
    fallback: bool,
}

/// JSON-lines pair manifest: `{"i","j","mode","fallback"}` per assignment.
pub fn pair_manifest(mode: &PairingMode, pairs: &[PairAssignment]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(&PairLine {
            i: p.query_index,
            j: p.positive_index,
            mode: mode.name(),
            fallback: p.fallback_used,
        })?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub mode: String,
    pub fallback: bool,
}

pub fn parse_pair_manifest(text: &str) -> Result<Vec<PairRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
