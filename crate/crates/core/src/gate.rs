//! Submission limits: artifact size, feature dimension and per-image latency.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BYTES_PER_MB: f64 = (1u64 << 20) as f64;
pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_REPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtrackRules {
    pub name: String,
    pub max_size_mb: f64,
    pub max_feat_dim: u32,
    pub max_ms_per_image: f64,
}

impl SubtrackRules {
    pub fn ms1m() -> Self {
        SubtrackRules {
            name: "ms1m".into(),
            max_size_mb: 1024.0,
            max_feat_dim: 512,
            max_ms_per_image: 10.0,
        }
    }

    pub fn glint360k() -> Self {
        SubtrackRules {
            name: "glint360k".into(),
            max_size_mb: 1024.0,
            max_feat_dim: 1024,
            max_ms_per_image: 20.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ms1m" => Some(Self::ms1m()),
            "glint360k" => Some(Self::glint360k()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.max_size_mb) || !finite_pos(self.max_ms_per_image) || self.max_feat_dim == 0 {
            return Err(Error::Rules(format!("bounds of {:?} must be positive", self.name)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: SubtrackRules = serde_json::from_str(text)?;
        rules.validate()?;
        Ok(rules)
    }

    /// Reads a rules file, or resolves a preset name when no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if !path.exists() {
            if let Some(r) = Self::preset(spec) {
                return Ok(r);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionMeta {
    pub participant: String,
    pub declared_dim: u32,
    pub model_bytes: u64,
    #[serde(default)]
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredProfile {
    pub ms_per_image: f64,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub reps: usize,
}

fn one() -> usize {
    1
}

impl MeasuredProfile {
    /// A profile carrying a latency that was measured elsewhere.
    pub fn reported(ms_per_image: f64) -> Self {
        MeasuredProfile {
            ms_per_image,
            batch_size: 1,
            warmup: 0,
            reps: 0,
        }
    }
}

pub const REASON_SIZE: &str = "model_size";
pub const REASON_DIM: &str = "feat_dim";
pub const REASON_LATENCY: &str = "latency";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub reasons: Vec<String>,
}

/// Size and latency must be strictly below their bounds; the dimension may
/// equal its bound.
pub fn gate_submission(meta: &SubmissionMeta, profile: &MeasuredProfile, rules: &SubtrackRules) -> Verdict {
    let mut reasons = Vec::new();
    if !((meta.model_bytes as f64) < rules.max_size_mb * BYTES_PER_MB) {
        reasons.push(REASON_SIZE.to_string());
    }
    if meta.declared_dim > rules.max_feat_dim {
        reasons.push(REASON_DIM.to_string());
    }
    if !(profile.ms_per_image < rules.max_ms_per_image) {
        reasons.push(REASON_LATENCY.to_string());
    }
    Verdict {
        pass: reasons.is_empty(),
        reasons,
    }
}

/// Bytes in, one embedding out.
pub trait Extractor: Send {
    fn declared_dim(&self) -> usize;
    fn extract(&mut self, input: &[u8]) -> std::result::Result<Vec<f32>, String>;
}

impl<E: Extractor + ?Sized> Extractor for Box<E> {
    fn declared_dim(&self) -> usize {
        (**self).declared_dim()
    }

    fn extract(&mut self, input: &[u8]) -> std::result::Result<Vec<f32>, String> {
        (**self).extract(input)
    }
}

/// Runs `extractor` serially on a dedicated thread. `warmup` passes over the
/// batch are discarded, then each of `reps` passes is timed; the profile
/// holds the median per-image time.
pub fn measure_latency<E: Extractor>(
    extractor: &mut E,
    batch: &[Vec<u8>],
    warmup: usize,
    reps: usize,
) -> Result<MeasuredProfile> {
    if reps < 3 {
        return Err(Error::Measurement(format!("need at least 3 reps, got {reps}")));
    }
    if batch.is_empty() {
        return Err(Error::Measurement("empty probe batch".into()));
    }
    let declared = extractor.declared_dim();
    std::thread::scope(|s| {
        s.spawn(move || {
            let mut run = |timed: bool| -> Result<Option<f64>> {
                let start = Instant::now();
                for (index, input) in batch.iter().enumerate() {
                    let out = extractor
                        .extract(input)
                        .map_err(|message| Error::Extractor { index, message })?;
                    if out.len() != declared {
                        return Err(Error::ExtractorDim {
                            declared,
                            emitted: out.len(),
                        });
                    }
                }
                Ok(timed.then(|| start.elapsed().as_secs_f64() * 1e3 / batch.len() as f64))
            };
            for _ in 0..warmup {
                run(false)?;
            }
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                times.extend(run(true)?);
            }
            Ok(MeasuredProfile {
                ms_per_image: median(&mut times),
                batch_size: batch.len(),
                warmup,
                reps,
            })
        })
        .join()
        .map_err(|_| Error::Measurement("extractor panicked".into()))?
    })
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
