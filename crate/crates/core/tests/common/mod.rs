//! Independent reference implementations and fixture builders shared by the
//! integration tests. Nothing here calls the scoring code it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sstr_core::trace::{CandidateTrace, Grid, StepRecord, VideoContext};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shannon entropy of `w / sum(w)`, term by term, `0 ln 0 = 0`.
pub fn entropy_oracle(w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let mut h = 0.0;
    for &x in w {
        if x > 0.0 {
            let p = x / total;
            h -= p * p.ln();
        }
    }
    h
}

/// Per-frame attention summed over steps, without any averaging constant.
pub fn raw_frame_totals(steps: &[StepRecord], frames: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames];
    for s in steps {
        for (o, &b) in out.iter_mut().zip(&s.frame_attention) {
            *o += b;
        }
    }
    out
}

/// Minimum of `sum_i cost[i][perm[i]]` over all permutations, by Heap's
/// algorithm.
pub fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// First 1-based step ending `window` consecutive ratios below `alpha`,
/// found by counting runs.
pub fn vav_oracle(ratios: &[f64], alpha: f64, window: usize) -> Option<usize> {
    let mut run = 0;
    for (i, &r) in ratios.iter().enumerate() {
        run = if r < alpha { run + 1 } else { 0 };
        if run == window {
            return Some(i + 1);
        }
    }
    None
}

/// Records whose visual/text ratio equals `ratios` (text fixed, `inf` as
/// zero text attention).
pub fn records_for_ratios(ratios: &[f64], frames: usize) -> Vec<StepRecord> {
    ratios
        .iter()
        .map(|&r| {
            if r.is_infinite() {
                StepRecord::new(0, vec![0.25; frames], 0.0)
            } else {
                StepRecord::new(0, vec![r / frames as f64; frames], 1.0)
            }
        })
        .collect()
}

/// Ratio sequence mixing runs below and above `alpha`, with occasional
/// zero-text steps.
pub fn random_ratios<R: Rng>(rng: &mut R, len: usize, alpha: f64) -> Vec<f64> {
    let p_low = rng.random_range(0.3..0.95);
    let mut low = rng.random_bool(0.5);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.15) {
                low = rng.random_bool(p_low);
            }
            if rng.random_bool(0.01) {
                f64::INFINITY
            } else if low {
                alpha * rng.random_range(0.1..0.999)
            } else {
                alpha * rng.random_range(1.0..3.0)
            }
        })
        .collect()
}

/// Video with random unit embeddings and jittered in-cell coordinates.
pub fn random_video<R: Rng>(rng: &mut R, frames: usize, patches: usize, dim: usize) -> VideoContext {
    let grid = Grid::for_patches(patches);
    let mut emb = Vec::with_capacity(frames * patches * dim);
    for _ in 0..frames * patches {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
        emb.extend(v.iter().map(|x| (x / n) as f32));
    }
    let mut coords = Vec::with_capacity(frames * patches * 2);
    for _ in 0..frames * patches {
        coords.push(rng.random_range(0.0f32..=1.0));
        coords.push(rng.random_range(0.0f32..=1.0));
    }
    VideoContext::new(frames, dim, grid, emb, coords).unwrap()
}

/// Candidate with random non-negative attention; about one value in eight
/// is exactly zero. Values are drawn as `f32` so the trace can be written.
pub fn random_candidate<R: Rng>(rng: &mut R, id: u32, frames: usize, len: usize) -> CandidateTrace {
    let steps = (0..len)
        .map(|_| {
            let mut fa: Vec<f64> = (0..frames)
                .map(|_| if rng.random_bool(0.125) { 0.0 } else { f64::from(rng.random_range(0.0f32..1.0)) })
                .collect();
            if fa.iter().all(|&x| x == 0.0) {
                fa[0] = 0.5;
            }
            StepRecord::new(rng.random(), fa, f64::from(rng.random_range(0.0f32..1.0)))
        })
        .collect();
    CandidateTrace {
        candidate_id: id,
        steps,
        finished: rng.random_bool(0.5),
    }
}

pub fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn bits_equal_f64(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
