//! Deterministic synthetic videos and candidate traces.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `seed_from_u64`, so a
//! `(seed, parameters)` pair reproduces the same bytes on every platform.
//!
//! Videos are built from `shots` cluster centres. Shot `k` (0-based) starts at
//! frame `1 + floor(k * T / shots)`. Every patch of a shot has a fixed base
//! embedding near the shot centre; frames inside a shot repeat those bases,
//! optionally perturbed by `motion_jitter`. With zero jitter, frames within a
//! shot are byte-identical and their inter-frame distance is exactly zero.
//!
//! Candidate traces spread a fixed visual mass over frames according to a
//! [`CollapseProfile`] with optional multiplicative jitter, and set the text
//! attention so each step's visual/text ratio follows a given plan.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CandidateTrace, Grid, StepRecord, VideoContext};

/// Relative per-value jitter applied to generated attention by default.
pub const DEFAULT_JITTER: f64 = 1e-3;

/// Fraction of each step's attention row given to visual plus text tokens.
const ROW_MASS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub shots: usize,
    /// Standard deviation of the per-frame perturbation added to each patch
    /// embedding before normalisation. Zero keeps shots static.
    pub motion_jitter: f64,
}

impl VideoSpec {
    pub fn new(frames: usize, patches: usize, dim: usize, shots: usize) -> Self {
        Self {
            frames,
            patches,
            dim,
            shots,
            motion_jitter: 0.0,
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidShape(m));
        if self.frames == 0 || self.patches == 0 {
            return bad("frames and patches must be at least 1".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.shots == 0 || self.shots > self.frames {
            return bad(format!(
                "shots must be in 1..={} (frames), got {}",
                self.frames, self.shots
            ));
        }
        if !(self.motion_jitter >= 0.0 && self.motion_jitter.is_finite()) {
            return bad(format!("motion_jitter must be >= 0, got {}", self.motion_jitter));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<VideoContext, SynthError> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let m = self.patches;
        let centers = shot_centers(&mut rng, self.shots, d);

        // Base embedding of every (shot, patch).
        let mut bases = Vec::with_capacity(self.shots);
        for center in &centers {
            let mut shot = Vec::with_capacity(m * d);
            for _ in 0..m {
                let noise = gaussian(&mut rng, d);
                let scale = 0.5 / (d as f64).sqrt();
                let v: Vec<f64> = center.iter().zip(&noise).map(|(c, n)| c + scale * n).collect();
                shot.extend(normalize(&v));
            }
            bases.push(shot);
        }

        let starts = shot_starts(self.frames, self.shots);
        let mut emb: Vec<f32> = Vec::with_capacity(self.frames * m * d);
        for t in 1..=self.frames {
            let shot = starts.iter().rposition(|&s| s <= t).expect("first shot starts at 1");
            let base = &bases[shot];
            if self.motion_jitter == 0.0 {
                emb.extend(base.iter().map(|&x| x as f32));
            } else {
                for p in 0..m {
                    let noise = gaussian(&mut rng, d);
                    let s = self.motion_jitter / (d as f64).sqrt();
                    let v: Vec<f64> = base[p * d..(p + 1) * d]
                        .iter()
                        .zip(&noise)
                        .map(|(b, n)| b + s * n)
                        .collect();
                    emb.extend(normalize(&v).into_iter().map(|x| x as f32));
                }
            }
        }
        VideoContext::with_grid_coords(self.frames, d, Grid::for_patches(m), emb)
            .map_err(|e| SynthError::InvalidShape(e.to_string()))
    }
}

/// Static-shot video with `shots` evenly spaced shots.
pub fn generate_video(
    seed: u64,
    frames: usize,
    patches: usize,
    dim: usize,
    shots: usize,
) -> Result<VideoContext, SynthError> {
    VideoSpec::new(frames, patches, dim, shots).generate(seed)
}

/// 1-based first frame of each shot.
pub fn shot_starts(frames: usize, shots: usize) -> Vec<usize> {
    (0..shots).map(|k| 1 + k * frames / shots).collect()
}

/// Inclusive 1-based frame range of each shot.
pub fn shot_ranges(frames: usize, shots: usize) -> Vec<(usize, usize)> {
    let starts = shot_starts(frames, shots);
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).map_or(frames, |n| n - 1)))
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Random unit centres, mutually orthogonal while `shots <= dim`.
fn shot_centers(rng: &mut ChaCha8Rng, shots: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(shots);
    while out.len() < shots {
        let mut v = gaussian(rng, d);
        if out.len() < d {
            for c in &out {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Shape of a candidate's attention over frames. Frame and segment
/// indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollapseProfile {
    Uniform,
    /// `mass` on one frame, the remaining `1 - mass` spread over all frames.
    FrameCollapse { frame: usize, mass: f64 },
    /// `mass` spread over the inclusive frame range, the rest over all frames.
    SegmentCollapse { start: usize, end: usize, mass: f64 },
    /// Explicit non-negative per-frame weights.
    Mixed { weights: Vec<f64> },
}

impl CollapseProfile {
    /// Per-frame distribution (sums to 1) for a `frames`-frame video.
    pub fn distribution(&self, frames: usize) -> Result<Vec<f64>, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        let check_mass = |mass: f64| {
            if mass > 0.0 && mass <= 1.0 {
                Ok(())
            } else {
                Err(SynthError::InvalidProfile(format!("mass must be in (0, 1], got {mass}")))
            }
        };
        let base = 1.0 / frames as f64;
        match self {
            CollapseProfile::Uniform => Ok(vec![base; frames]),
            &CollapseProfile::FrameCollapse { frame, mass } => {
                check_mass(mass)?;
                if frame == 0 || frame > frames {
                    return bad(format!("frame {frame} outside 1..={frames}"));
                }
                let mut p = vec![(1.0 - mass) * base; frames];
                p[frame - 1] += mass;
                Ok(p)
            }
            &CollapseProfile::SegmentCollapse { start, end, mass } => {
                check_mass(mass)?;
                if start == 0 || end < start || end > frames {
                    return bad(format!("segment ({start}, {end}) outside 1..={frames}"));
                }
                let len = (end - start + 1) as f64;
                let mut p = vec![(1.0 - mass) * base; frames];
                p[start - 1..end].iter_mut().for_each(|x| *x += mass / len);
                Ok(p)
            }
            CollapseProfile::Mixed { weights } => {
                if weights.len() != frames {
                    return bad(format!("{} weights for {frames} frames", weights.len()));
                }
                if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return bad("weights must be finite and non-negative".into());
                }
                let s: f64 = weights.iter().sum();
                if !(s > 0.0) {
                    return bad("weights sum to zero".into());
                }
                Ok(weights.iter().map(|w| w / s).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub candidate_id: u32,
    pub profile: CollapseProfile,
    pub length: usize,
    /// Target visual/text ratio per step; `+inf` means zero text attention.
    pub ratio_plan: Vec<f64>,
    /// Relative multiplicative jitter on every frame value.
    pub jitter: f64,
    pub finished: bool,
}

impl CandidateSpec {
    pub fn new(candidate_id: u32, profile: CollapseProfile, ratio_plan: Vec<f64>) -> Self {
        Self {
            candidate_id,
            profile,
            length: ratio_plan.len(),
            ratio_plan,
            jitter: DEFAULT_JITTER,
            finished: true,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn generate(&self, seed: u64, video: &VideoContext) -> Result<CandidateTrace, SynthError> {
        if self.ratio_plan.len() < self.length {
            return Err(SynthError::InvalidProfile(format!(
                "ratio plan has {} entries for length {}",
                self.ratio_plan.len(),
                self.length
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter < 1.0) {
            return Err(SynthError::InvalidProfile(format!(
                "jitter must be in [0, 1), got {}",
                self.jitter
            )));
        }
        if let Some(r) = self.ratio_plan[..self.length].iter().find(|r| !(**r > 0.0)) {
            return Err(SynthError::InvalidProfile(format!("ratio {r} must be positive")));
        }
        let frames = video.frames();
        let dist = self.profile.distribution(frames)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps = Vec::with_capacity(self.length);
        for &ratio in &self.ratio_plan[..self.length] {
            let vis_target = if ratio.is_infinite() {
                ROW_MASS
            } else {
                ROW_MASS * ratio / (1.0 + ratio)
            };
            let frame_attention: Vec<f64> = dist
                .iter()
                .map(|&p| {
                    let u: f64 = if self.jitter > 0.0 {
                        rng.random_range(-1.0..=1.0)
                    } else {
                        0.0
                    };
                    // Rounded through f32 so the trace can be written losslessly.
                    (vis_target * p * (1.0 + self.jitter * u)) as f32 as f64
                })
                .collect();
            let vis: f64 = frame_attention.iter().sum();
            let text_attention = if ratio.is_infinite() {
                0.0
            } else {
                (vis / ratio) as f32 as f64
            };
            let token_id = rng.random_range(0..32_000u32);
            steps.push(StepRecord::new(token_id, frame_attention, text_attention));
        }
        Ok(CandidateTrace {
            candidate_id: self.candidate_id,
            steps,
            finished: self.finished,
        })
    }
}

/// Convenience wrapper over [`CandidateSpec::generate`].
pub fn generate_candidate(
    seed: u64,
    video: &VideoContext,
    candidate_id: u32,
    profile: CollapseProfile,
    length: usize,
    ratio_plan: &[f64],
    jitter: f64,
) -> Result<CandidateTrace, SynthError> {
    let mut spec = CandidateSpec::new(candidate_id, profile, ratio_plan.to_vec()).with_jitter(jitter);
    spec.length = length;
    spec.generate(seed, video)
}

/// Ratio plan of `length` steps whose vanishing point under window `window`
/// and any `alpha` in `(low, high]` is exactly `trigger`: `high` for steps
/// before `trigger - window + 1`, `low` from there on. `None` keeps every
/// step at `high`.
pub fn ratio_plan(length: usize, trigger: Option<usize>, window: usize, high: f64, low: f64) -> Vec<f64> {
    let first_low = match trigger {
        Some(j) => j.saturating_sub(window) + 1,
        None => usize::MAX,
    };
    (1..=length)
        .map(|j| if j >= first_low { low } else { high })
        .collect()
}

/// Profile entry of a [`Scenario`]: either fixed or drawn from the scenario
/// seed.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileChoice {
    Fixed(CollapseProfile),
    /// Frame or shot collapse with mass in `[0.5, 1]`, picked at random.
    Random,
}

impl std::str::FromStr for ProfileChoice {
    type Err = SynthError;

    /// Parses `uniform`, `random`, `frame:F:MASS`, `segment:START:END:MASS`
    /// or `mixed:W1/W2/...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::InvalidProfile(format!("cannot parse profile {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |x: &str| x.parse::<usize>().map_err(|_| bad());
        let real = |x: &str| x.parse::<f64>().map_err(|_| bad());
        let p = match parts.as_slice() {
            ["uniform"] => CollapseProfile::Uniform,
            ["random"] => return Ok(ProfileChoice::Random),
            ["frame", f, m] => CollapseProfile::FrameCollapse {
                frame: int(f)?,
                mass: real(m)?,
            },
            ["segment", a, b, m] => CollapseProfile::SegmentCollapse {
                start: int(a)?,
                end: int(b)?,
                mass: real(m)?,
            },
            ["mixed", w] => CollapseProfile::Mixed {
                weights: w.split('/').map(real).collect::<Result<_, _>>()?,
            },
            _ => return Err(bad()),
        };
        Ok(ProfileChoice::Fixed(p))
    }
}

/// Collapsed profile drawn from `rng`: a single frame or one whole shot
/// receives mass in `[0.5, 1]`.
pub fn random_collapsed_profile<R: Rng>(rng: &mut R, frames: usize, shots: usize) -> CollapseProfile {
    let mass = rng.random_range(0.5..=1.0);
    if rng.random_bool(0.5) {
        CollapseProfile::FrameCollapse {
            frame: rng.random_range(1..=frames),
            mass,
        }
    } else {
        let ranges = shot_ranges(frames, shots);
        let (start, end) = ranges[rng.random_range(0..ranges.len())];
        CollapseProfile::SegmentCollapse { start, end, mass }
    }
}

/// A complete synthetic run: one video plus `candidates` traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub video: VideoSpec,
    pub candidates: usize,
    pub length: usize,
    /// One entry per candidate; a shorter list repeats its last entry.
    pub profiles: Vec<ProfileChoice>,
    /// Planted vanishing point shared by all candidates, if any.
    pub vav_at: Option<usize>,
    pub window: usize,
    /// Ratio before and after the planted vanishing point.
    pub ratio_high: f64,
    pub ratio_low: f64,
    pub jitter: f64,
}

impl Scenario {
    pub fn new(video: VideoSpec, candidates: usize, length: usize) -> Self {
        Self {
            video,
            candidates,
            length,
            profiles: vec![ProfileChoice::Fixed(CollapseProfile::Uniform), ProfileChoice::Random],
            vav_at: None,
            window: 10,
            ratio_high: 1.5,
            ratio_low: 1.0,
            jitter: DEFAULT_JITTER,
        }
    }

    /// Video seed and per-candidate seeds are drawn in order from one
    /// `ChaCha8Rng` seeded with `seed`; random profiles come from the same
    /// stream just before each candidate seed. Zero candidates yields the
    /// video alone, which is what `serve` sessions open.
    pub fn generate(&self, seed: u64) -> Result<(VideoContext, Vec<CandidateTrace>), SynthError> {
        if self.candidates > 0 && (self.profiles.is_empty() || self.profiles.len() > self.candidates) {
            return Err(SynthError::InvalidProfile(format!(
                "{} profiles for {} candidates",
                self.profiles.len(),
                self.candidates
            )));
        }
        if let Some(j) = self.vav_at {
            if j < self.window.max(1) || j > self.length {
                return Err(SynthError::InvalidProfile(format!(
                    "vanishing point {j} outside {}..={}",
                    self.window.max(1),
                    self.length
                )));
            }
        }
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let video = self.video.generate(master.next_u64())?;
        let plan = ratio_plan(self.length, self.vav_at, self.window, self.ratio_high, self.ratio_low);
        let last = self.profiles.len() - 1;
        let mut out = Vec::with_capacity(self.candidates);
        for i in 0..self.candidates {
            let profile = match &self.profiles[i.min(last)] {
                ProfileChoice::Fixed(p) => p.clone(),
                ProfileChoice::Random => {
                    random_collapsed_profile(&mut master, self.video.frames, self.video.shots)
                }
            };
            let spec = CandidateSpec {
                candidate_id: i as u32,
                profile,
                length: self.length,
                ratio_plan: plan.clone(),
                jitter: self.jitter,
                finished: true,
            };
            out.push(spec.generate(master.next_u64(), &video)?);
        }
        Ok((video, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{inter_frame_distances, resolve_gamma, segment_video};
    use crate::tac::frame_collapse_score;
    use crate::trace::GammaMode;

    #[test]
    fn zero_candidates_gives_video_only() {
        let s = Scenario::new(VideoSpec::new(4, 4, 8, 2), 0, 16);
        let (v, c) = s.generate(3).unwrap();
        assert_eq!(v.frames(), 4);
        assert!(c.is_empty());
    }

    #[test]
    fn single_shot_yields_one_segment() {
        let v = generate_video(1, 8, 9, 8, 1).unwrap();
        let d = inter_frame_distances(&v).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
        let g = resolve_gamma(&d, &GammaMode::Auto { c: 1.0 }).unwrap();
        assert_eq!(segment_video(&d, g).k, 1);
    }

    #[test]
    fn two_shots_split_at_frame_five() {
        let v = generate_video(2, 8, 9, 8, 2).unwrap();
        let d = inter_frame_distances(&v).unwrap();
        let spikes: Vec<usize> = d.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, _)| i + 2).collect();
        assert_eq!(spikes, vec![5]);
        let g = resolve_gamma(&d, &GammaMode::Auto { c: 1.0 }).unwrap();
        let s = segment_video(&d, g);
        assert_eq!((s.k, s.boundaries), (2, vec![5]));
    }

    #[test]
    fn deterministic() {
        let a = generate_video(7, 6, 4, 5, 3).unwrap();
        let b = generate_video(7, 6, 4, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_video(8, 6, 4, 5, 3).unwrap());

        let spec = VideoSpec { motion_jitter: 0.05, ..VideoSpec::new(6, 4, 5, 2) };
        assert_eq!(spec.generate(3).unwrap(), spec.generate(3).unwrap());
    }

    #[test]
    fn shapes_are_checked() {
        assert!(matches!(generate_video(0, 4, 4, 4, 5), Err(SynthError::InvalidShape(_))));
        assert!(matches!(generate_video(0, 4, 4, 1, 1), Err(SynthError::InvalidShape(_))));
        assert_eq!(shot_starts(8, 2), vec![1, 5]);
        assert_eq!(shot_ranges(32, 3), vec![(1, 10), (11, 21), (22, 32)]);
    }

    #[test]
    fn uniform_profile_without_jitter_is_max_entropy() {
        let v = generate_video(0, 6, 4, 4, 1).unwrap();
        let c = generate_candidate(0, &v, 0, CollapseProfile::Uniform, 5, &[1.0; 5], 0.0).unwrap();
        let a = crate::tac::frame_attention_profile(&c.steps, 6, 4).unwrap();
        assert!((frame_collapse_score(&a).unwrap() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ratio_plan_matches_offline_scan() {
        let plan = ratio_plan(30, Some(11), 10, 1.5, 1.0);
        assert_eq!(plan[0], 1.5);
        assert!(plan[1..].iter().all(|&r| r == 1.0));
        let v = generate_video(0, 4, 4, 4, 1).unwrap();
        let c = generate_candidate(9, &v, 0, CollapseProfile::Uniform, 30, &plan, DEFAULT_JITTER).unwrap();
        let cfg = crate::trace::RunConfig::default();
        assert_eq!(crate::vav::vav_offline(&c.steps, &cfg).unwrap(), Some(11));
        assert_eq!(crate::vav::first_window_below(&plan, 1.2, 10), Some(11));
    }

    #[test]
    fn profile_errors() {
        let bad = [
            CollapseProfile::FrameCollapse { frame: 0, mass: 0.5 },
            CollapseProfile::FrameCollapse { frame: 2, mass: 0.0 },
            CollapseProfile::SegmentCollapse { start: 3, end: 9, mass: 0.5 },
            CollapseProfile::Mixed { weights: vec![0.0; 4] },
        ];
        for p in bad {
            assert!(matches!(p.distribution(4), Err(SynthError::InvalidProfile(_))), "{p:?}");
        }
        let v = generate_video(0, 4, 4, 4, 1).unwrap();
        assert!(generate_candidate(0, &v, 0, CollapseProfile::Uniform, 5, &[1.0; 3], 0.0).is_err());
    }

    #[test]
    fn infinite_ratio_means_zero_text() {
        let v = generate_video(0, 4, 4, 4, 1).unwrap();
        let c = generate_candidate(0, &v, 0, CollapseProfile::Uniform, 2, &[f64::INFINITY, 1.0], 0.0).unwrap();
        assert_eq!(c.steps[0].text_attention, 0.0);
        assert!(c.steps[1].text_attention > 0.0);
    }
}
