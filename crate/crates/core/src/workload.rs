//! The deterministic staged toy workload.
//!
//! A workload is an ordered list of named stages, each a fixed number of
//! steps. Every step folds its coordinates into a 64-bit hash chain:
//!
//! ```text
//! acc_0       = fmix64(seed ^ 0x5350_4f54_4f4e_5744)
//! acc_{n + 1} = fmix64(((acc_n ^ rotl(seed, 29)) + ((stage << 40) ^ step)) * 0x9e37_79b9_7f4a_7c15)
//!
//! fmix64(x):  x ^= x >> 30; x *= 0xbf58_476d_1ce4_e5b9;
//!             x ^= x >> 27; x *= 0x94d0_49bb_1331_11eb;
//!             x ^= x >> 31
//! ```
//!
//! `stage` and `step` are the zero-based indices of the step being taken and
//! all arithmetic wraps at 2^64.
//! Stage names never enter the chain, so renaming stages cannot change a
//! digest. The final accumulator, as 16 lowercase hex digits, is the digest.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use thiserror::Error;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_SALT: u64 = 0x5350_4f54_4f4e_5744;

/// Stage names used when none are given.
pub const DEFAULT_STAGE_NAMES: [&str; 5] = ["K33", "K55", "K77", "K99", "K127"];

const PAYLOAD_MAGIC: &[u8; 8] = b"SPOTWLS\0";
const PAYLOAD_VERSION: u16 = 1;
const PAYLOAD_LEN: usize = 8 + 2 + 8 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("workload already finished")]
    Finished,
    #[error("workload not finished (stage {stage_index}, step {step_index})")]
    NotFinished { stage_index: usize, step_index: u64 },
    #[error("duplicate stage name `{0}`")]
    DuplicateStage(String),
    #[error("empty stage name")]
    EmptyStageName,
    #[error("malformed stage list entry `{0}` (expected NAME:STEPS)")]
    MalformedStage(String),
    #[error("payload is not a workload snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u16),
    #[error("snapshot truncated: {0} bytes")]
    Truncated(usize),
    #[error("snapshot belongs to a different workload")]
    SpecMismatch,
    #[error("snapshot position out of bounds")]
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub steps: u64,
}

/// What to run: the stage list, the seed, and optional per-step pacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    stages: Vec<Stage>,
    pub seed: u64,
    /// Wall time each step is paced to. Never affects results.
    pub step_cost: Option<Duration>,
}

impl WorkloadSpec {
    pub fn new(stages: Vec<Stage>, seed: u64) -> Result<Self, WorkloadError> {
        for (i, stage) in stages.iter().enumerate() {
            if stage.name.trim().is_empty() {
                return Err(WorkloadError::EmptyStageName);
            }
            // names travel as single tokens in stage lists and protocol lines
            if stage.name.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(WorkloadError::MalformedStage(stage.name.clone()));
            }
            if stages[..i].iter().any(|s| s.name == stage.name) {
                return Err(WorkloadError::DuplicateStage(stage.name.clone()));
            }
        }
        Ok(WorkloadSpec { stages, seed, step_cost: None })
    }

    /// The five default stages, `steps_per_stage` steps each.
    pub fn uniform_default(steps_per_stage: u64, seed: u64) -> Self {
        let stages = DEFAULT_STAGE_NAMES
            .iter()
            .map(|n| Stage { name: n.to_string(), steps: steps_per_stage })
            .collect();
        WorkloadSpec { stages, seed, step_cost: None }
    }

    pub fn with_step_cost(mut self, cost: Option<Duration>) -> Self {
        self.step_cost = cost;
        self
    }

    /// Parses `NAME:STEPS[,NAME:STEPS...]`. An empty string is an empty workload.
    pub fn parse_stages(text: &str) -> Result<Vec<Stage>, WorkloadError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|entry| {
                let (name, steps) = entry
                    .rsplit_once(':')
                    .ok_or_else(|| WorkloadError::MalformedStage(entry.to_string()))?;
                let steps = steps
                    .trim()
                    .parse()
                    .map_err(|_| WorkloadError::MalformedStage(entry.to_string()))?;
                Ok(Stage { name: name.trim().to_string(), steps })
            })
            .collect()
    }

    pub fn stages_string(&self) -> String {
        let parts: Vec<String> = self.stages.iter().map(|s| format!("{}:{}", s.name, s.steps)).collect();
        parts.join(",")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Identity of the step structure and seed; names are excluded.
    pub fn fingerprint(&self) -> u64 {
        use core::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write_u64(self.stages.len() as u64);
        for s in &self.stages {
            h.write_u64(s.steps);
        }
        h.write_u64(self.seed);
        h.finish()
    }

    pub fn initial_state(&self) -> WorkloadState {
        let mut state = WorkloadState {
            stage_index: 0,
            step_index: 0,
            accumulator: initial_accumulator(self.seed),
            seed: self.seed,
        };
        state.skip_empty_stages(self);
        state
    }

    /// The state after `global_step` steps from the start (clamped to the end).
    pub fn state_at(&self, global_step: u64) -> WorkloadState {
        let mut state = self.initial_state();
        let mut remaining = global_step.min(self.total_steps());
        while remaining > 0 {
            state.step(self).expect("bounded by total_steps");
            remaining -= 1;
        }
        state
    }

    /// Runs a fresh workload to completion and returns its digest.
    pub fn reference_digest(&self) -> String {
        let mut state = self.initial_state();
        while !state.is_finished(self) {
            state.step(self).expect("not finished");
        }
        state.digest(self).expect("finished")
    }
}

/// Position and hash-chain value of a workload. Fully determines the future.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkloadState {
    pub stage_index: usize,
    pub step_index: u64,
    pub accumulator: u64,
    pub seed: u64,
}

fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn initial_accumulator(seed: u64) -> u64 {
    fmix64(seed ^ INIT_SALT)
}

/// The per-step mixing function.
pub fn mix(accumulator: u64, stage_index: u64, step_index: u64, seed: u64) -> u64 {
    let x = (accumulator ^ seed.rotate_left(29)).wrapping_add((stage_index << 40) ^ step_index);
    fmix64(x.wrapping_mul(GOLDEN))
}

impl WorkloadState {
    fn skip_empty_stages(&mut self, spec: &WorkloadSpec) {
        while self.stage_index < spec.stages.len() && self.step_index >= spec.stages[self.stage_index].steps {
            self.stage_index += 1;
            self.step_index = 0;
        }
    }

    pub fn is_finished(&self, spec: &WorkloadSpec) -> bool {
        self.stage_index >= spec.stages.len()
    }

    /// Advances by one step.
    pub fn step(&mut self, spec: &WorkloadSpec) -> Result<(), WorkloadError> {
        if self.is_finished(spec) {
            return Err(WorkloadError::Finished);
        }
        self.accumulator = mix(self.accumulator, self.stage_index as u64, self.step_index, self.seed);
        self.step_index += 1;
        self.skip_empty_stages(spec);
        Ok(())
    }

    /// Native (application) checkpoints are only possible here.
    pub fn at_stage_boundary(&self, spec: &WorkloadSpec) -> bool {
        self.step_index == 0 || self.is_finished(spec)
    }

    pub fn global_step(&self, spec: &WorkloadSpec) -> u64 {
        let done: u64 = spec.stages.iter().take(self.stage_index).map(|s| s.steps).sum();
        done + self.step_index
    }

    /// Name of the current stage, or of the last stage once finished.
    pub fn stage_name<'a>(&self, spec: &'a WorkloadSpec) -> Option<&'a str> {
        spec.stages
            .get(self.stage_index)
            .or_else(|| spec.stages.last())
            .map(|s| s.name.as_str())
    }

    /// Sixteen lowercase hex digits of the final accumulator.
    pub fn digest(&self, spec: &WorkloadSpec) -> Result<String, WorkloadError> {
        if !self.is_finished(spec) {
            return Err(WorkloadError::NotFinished {
                stage_index: self.stage_index,
                step_index: self.step_index,
            });
        }
        Ok(format!("{:016x}", self.accumulator))
    }

    /// Fixed 46-byte little-endian snapshot:
    /// magic `SPOTWLS\0`, version u16, spec fingerprint u64, stage u32,
    /// step u64, accumulator u64, seed u64.
    pub fn serialize(&self, spec: &WorkloadSpec) -> Vec<u8> {
        let mut out = Vec::with_capacity(PAYLOAD_LEN);
        out.extend_from_slice(PAYLOAD_MAGIC);
        out.extend_from_slice(&PAYLOAD_VERSION.to_le_bytes());
        out.extend_from_slice(&spec.fingerprint().to_le_bytes());
        out.extend_from_slice(&(self.stage_index as u32).to_le_bytes());
        out.extend_from_slice(&self.step_index.to_le_bytes());
        out.extend_from_slice(&self.accumulator.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn deserialize(payload: &[u8], spec: &WorkloadSpec) -> Result<Self, WorkloadError> {
        if payload.len() < PAYLOAD_MAGIC.len() {
            return Err(WorkloadError::Truncated(payload.len()));
        }
        if &payload[..8] != PAYLOAD_MAGIC {
            return Err(WorkloadError::BadMagic);
        }
        if payload.len() < 10 {
            return Err(WorkloadError::Truncated(payload.len()));
        }
        let version = u16::from_le_bytes([payload[8], payload[9]]);
        if version != PAYLOAD_VERSION {
            return Err(WorkloadError::UnsupportedVersion(version));
        }
        if payload.len() != PAYLOAD_LEN {
            return Err(WorkloadError::Truncated(payload.len()));
        }
        let u64_at = |at: usize| u64::from_le_bytes(payload[at..at + 8].try_into().expect("8 bytes"));
        if u64_at(10) != spec.fingerprint() {
            return Err(WorkloadError::SpecMismatch);
        }
        let stage_index = u32::from_le_bytes(payload[18..22].try_into().expect("4 bytes")) as usize;
        let state = WorkloadState {
            stage_index,
            step_index: u64_at(22),
            accumulator: u64_at(30),
            seed: u64_at(38),
        };
        if state.seed != spec.seed {
            return Err(WorkloadError::SpecMismatch);
        }
        let in_bounds = match spec.stages.get(stage_index) {
            Some(stage) => state.step_index < stage.steps,
            None => stage_index == spec.stages.len() && state.step_index == 0,
        };
        if !in_bounds {
            return Err(WorkloadError::OutOfBounds);
        }
        Ok(state)
    }
}
