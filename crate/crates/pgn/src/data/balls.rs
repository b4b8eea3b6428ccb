//! Bouncing-balls simulator and renderer.
//!
//! Three equal balls in a square box; elastic wall bounces and equal-mass
//! pairwise collisions; Euler stepping with substeps. All simulation runs
//! in f64; frames are rendered to f32.

use rand::Rng;

use crate::error::Result;

use super::{copy_baseline, seq_rng, VideoDataset};

pub const BOX_L: f64 = 10.0;
pub const BALL_R: f64 = 1.2;
pub const BALL_SPEED: f64 = 0.5; // units per frame step
pub const SUBSTEPS: usize = 10;
pub const N_BALLS: usize = 3;

/// Positions/velocities in box units; all balls share radius `r` inside a
/// square box of side `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallState {
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    pub r: f64,
    pub l: f64,
}

impl BallState {
    /// Total kinetic energy proxy Σ|v|² (unit masses).
    pub fn energy(&self) -> f64 {
        self.vel.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum()
    }

    pub fn contained(&self) -> bool {
        self.pos.iter().all(|p| {
            p[0] >= self.r && p[0] <= self.l - self.r && p[1] >= self.r && p[1] <= self.l - self.r
        })
    }
}

/// Random non-overlapping initial state; every ball moves at `BALL_SPEED`
/// in a uniformly random direction.
fn init_balls<R: Rng>(rng: &mut R) -> BallState {
    let (l, r) = (BOX_L, BALL_R);
    let mut pos: Vec<[f64; 2]> = Vec::with_capacity(N_BALLS);
    while pos.len() < N_BALLS {
        let cand = [rng.gen_range(r..l - r), rng.gen_range(r..l - r)];
        let ok = pos.iter().all(|p| {
            let (dx, dy) = (p[0] - cand[0], p[1] - cand[1]);
            dx * dx + dy * dy >= (2.0 * r) * (2.0 * r)
        });
        if ok {
            pos.push(cand);
        }
    }
    let vel = (0..N_BALLS)
        .map(|_| {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            [BALL_SPEED * a.cos(), BALL_SPEED * a.sin()]
        })
        .collect();
    BallState { pos, vel, r, l }
}

/// Advance one frame step (SUBSTEPS Euler substeps with wall reflection and
/// equal-mass elastic pair collisions).
pub fn step_balls(state: &mut BallState, substeps: usize) {
    let dt = 1.0 / substeps as f64;
    let n = state.pos.len();
    for _ in 0..substeps {
        for i in 0..n {
            state.pos[i][0] += state.vel[i][0] * dt;
            state.pos[i][1] += state.vel[i][1] * dt;
            for ax in 0..2 {
                let lo = state.r;
                let hi = state.l - state.r;
                if state.pos[i][ax] < lo {
                    state.pos[i][ax] = 2.0 * lo - state.pos[i][ax];
                    state.vel[i][ax] = -state.vel[i][ax];
                } else if state.pos[i][ax] > hi {
                    state.pos[i][ax] = 2.0 * hi - state.pos[i][ax];
                    state.vel[i][ax] = -state.vel[i][ax];
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let dx = state.pos[j][0] - state.pos[i][0];
                let dy = state.pos[j][1] - state.pos[i][1];
                let d2 = dx * dx + dy * dy;
                let min_d = 2.0 * state.r;
                if d2 >= min_d * min_d || d2 == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                let nx = dx / d;
                let ny = dy / d;
                let vni = state.vel[i][0] * nx + state.vel[i][1] * ny;
                let vnj = state.vel[j][0] * nx + state.vel[j][1] * ny;
                // only resolve approaching pairs so a single contact is not
                // re-resolved on consecutive substeps
                if vni - vnj <= 0.0 {
                    continue;
                }
                // equal masses: exchange normal components
                let diff = vnj - vni;
                state.vel[i][0] += diff * nx;
                state.vel[i][1] += diff * ny;
                state.vel[j][0] -= diff * nx;
                state.vel[j][1] -= diff * ny;
                // symmetric positional separation (does not affect energy)
                let overlap = min_d - d;
                state.pos[i][0] -= 0.5 * overlap * nx;
                state.pos[i][1] -= 0.5 * overlap * ny;
                state.pos[j][0] += 0.5 * overlap * nx;
                state.pos[j][1] += 0.5 * overlap * ny;
            }
        }
        // positional separation may nudge a ball past a wall; clamp back
        // (position-only, so energy is unaffected)
        for p in state.pos.iter_mut() {
            p[0] = p[0].clamp(state.r, state.l - state.r);
            p[1] = p[1].clamp(state.r, state.l - state.r);
        }
    }
}

/// Deterministic trajectory of `t` states for the given seed.
pub fn simulate_balls(seed: u64, t: usize) -> Vec<BallState> {
    let mut rng = seq_rng(seed, 0);
    simulate_balls_with(&mut rng, t)
}

pub fn simulate_balls_with<R: Rng>(rng: &mut R, t: usize) -> Vec<BallState> {
    let mut state = init_balls(rng);
    let mut out = Vec::with_capacity(t);
    out.push(state.clone());
    for _ in 1..t {
        step_balls(&mut state, SUBSTEPS);
        out.push(state.clone());
    }
    out
}

/// Anti-aliased disc rendering: clip01(Σ_balls max(0, 1 − (dist/r)⁴)) sampled
/// at pixel centers on a uniform grid over the box.
pub fn render_balls(state: &BallState, h: usize, w: usize) -> Vec<f32> {
    let mut frame = vec![0.0f32; h * w];
    for (i, px) in frame.iter_mut().enumerate() {
        let row = i / w;
        let col = i % w;
        let x = (col as f64 + 0.5) * state.l / w as f64;
        let y = (row as f64 + 0.5) * state.l / h as f64;
        let mut v = 0.0f64;
        for p in &state.pos {
            let d2 = (x - p[0]) * (x - p[0]) + (y - p[1]) * (y - p[1]);
            let q = d2 / (state.r * state.r);
            v += (1.0 - q * q).max(0.0);
        }
        *px = v.clamp(0.0, 1.0) as f32;
    }
    frame
}

/// Layout of the 64-byte constants block for balls datasets: six little-endian
/// f64 values (L, r, speed, substeps, copy-baseline mean, copy-baseline std),
/// zero-padded.
pub fn encode_balls_constants(baseline: Option<(f64, f64)>) -> [u8; 64] {
    let (bm, bs) = baseline.unwrap_or((0.0, 0.0));
    let vals = [BOX_L, BALL_R, BALL_SPEED, SUBSTEPS as f64, bm, bs];
    let mut out = [0u8; 64];
    for (i, v) in vals.iter().enumerate() {
        out[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_constants_f64(block: &[u8; 64], idx: usize) -> f64 {
    f64::from_le_bytes(block[idx * 8..(idx + 1) * 8].try_into().unwrap())
}

/// Evaluation window used for the copy baseline and for eval_prediction_error:
/// predictions start after this many context frames.
pub const EVAL_WINDOW: usize = 10;

fn gen_split(split: &str, n_seq: usize, t: usize, h: usize, w: usize, seed: u64, first_stream: u64) -> VideoDataset {
    let mut frames = Vec::with_capacity(n_seq * t * h * w);
    for s in 0..n_seq {
        let mut rng = seq_rng(seed, first_stream + s as u64);
        for state in simulate_balls_with(&mut rng, t) {
            frames.extend_from_slice(&render_balls(&state, h, w));
        }
    }
    let mut ds = VideoDataset {
        split: split.to_string(),
        n_seq,
        t,
        h,
        w,
        channels: 1,
        constants: encode_balls_constants(None),
        frames,
        latents: None,
    };
    let baseline = if t > EVAL_WINDOW {
        copy_baseline(&ds, EVAL_WINDOW).ok()
    } else {
        None
    };
    ds.constants = encode_balls_constants(baseline);
    ds
}

/// Train/val/test splits with disjoint per-sequence RNG streams derived from
/// the master seed. The copy-last-frame baseline of each split is recorded in
/// its constants block.
pub fn gen_balls_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<(VideoDataset, VideoDataset, VideoDataset)> {
    let train = gen_split("train", n_train, t, h, w, seed, 0);
    let val = gen_split("val", n_val, t, h, w, seed, n_train as u64);
    let test = gen_split("test", n_test, t, h, w, seed, (n_train + n_val) as u64);
    for ds in [&train, &val, &test] {
        ds.validate()?;
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lone_ball(pos: [f64; 2], vel: [f64; 2]) -> BallState {
        BallState {
            pos: vec![pos],
            vel: vec![vel],
            r: BALL_R,
            l: BOX_L,
        }
    }

    #[test]
    fn free_motion_advances_linearly() {
        let mut s = lone_ball([5.0, 5.0], [0.5, 0.0]);
        step_balls(&mut s, SUBSTEPS);
        assert!((s.pos[0][0] - 5.5).abs() < 1e-12);
        assert!((s.pos[0][1] - 5.0).abs() < 1e-12);
        assert_eq!(s.vel[0], [0.5, 0.0]);
    }

    #[test]
    fn wall_bounce_reflects_normal_component() {
        let mut s = lone_ball([BOX_L - BALL_R - 0.1, 5.0], [0.5, 0.0]);
        step_balls(&mut s, SUBSTEPS);
        assert!(s.vel[0][0] < 0.0);
        assert!((s.vel[0][0] + 0.5).abs() < 1e-12);
        assert!(s.contained());
    }

    #[test]
    fn head_on_equal_speed_collision_exchanges_velocities() {
        let mut s = BallState {
            pos: vec![[4.0, 5.0], [6.0, 5.0]],
            vel: vec![[0.5, 0.0], [-0.5, 0.0]],
            r: BALL_R,
            l: BOX_L,
        };
        step_balls(&mut s, SUBSTEPS);
        assert!((s.vel[0][0] + 0.5).abs() < 1e-12, "{:?}", s.vel);
        assert!((s.vel[1][0] - 0.5).abs() < 1e-12);
        assert_eq!(s.vel[0][1], 0.0);
        assert_eq!(s.vel[1][1], 0.0);
    }

    #[test]
    fn energy_conserved_and_contained_over_100_steps_100_seeds() {
        for seed in 0..100u64 {
            let traj = simulate_balls(seed, 101);
            let e0 = traj[0].energy();
            for st in &traj {
                assert!(
                    (st.energy() - e0).abs() <= 1e-9,
                    "seed {} drift {}",
                    seed,
                    (st.energy() - e0).abs()
                );
                assert!(st.contained(), "seed {} escaped box", seed);
            }
        }
    }

    #[test]
    fn no_persistent_interpenetration() {
        for seed in 0..20u64 {
            let traj = simulate_balls(seed, 50);
            for st in &traj {
                for i in 0..st.pos.len() {
                    for j in i + 1..st.pos.len() {
                        let dx = st.pos[i][0] - st.pos[j][0];
                        let dy = st.pos[i][1] - st.pos[j][1];
                        let d = (dx * dx + dy * dy).sqrt();
                        assert!(d >= 2.0 * st.r - 1e-6, "seed {} overlap {}", seed, d);
                    }
                }
            }
        }
    }

    #[test]
    fn render_no_balls_is_zero() {
        let s = BallState {
            pos: vec![],
            vel: vec![],
            r: BALL_R,
            l: BOX_L,
        };
        assert!(render_balls(&s, 30, 30).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn render_centered_ball_peaks_at_center_and_decays() {
        // place the ball exactly on pixel (15,15)'s center
        let cx = (15.0 + 0.5) * BOX_L / 30.0;
        let s = lone_ball([cx, cx], [0.0, 0.0]);
        let f = render_balls(&s, 30, 30);
        assert_eq!(f[15 * 30 + 15], 1.0);
        // monotone non-increasing moving right along the center row until 0
        let row = &f[15 * 30..16 * 30];
        for j in 15..29 {
            assert!(row[j + 1] <= row[j], "j={} {} {}", j, row[j], row[j + 1]);
        }
        assert_eq!(row[29], 0.0);
    }

    #[test]
    fn dataset_sizes_ranges_and_determinism() {
        let (tr, va, te) = gen_balls_dataset(3, 2, 2, 12, 30, 30, 99).unwrap();
        assert_eq!(tr.n_seq, 3);
        assert_eq!(va.n_seq, 2);
        assert_eq!(te.n_seq, 2);
        assert_eq!(tr.frames.len(), 3 * 12 * 30 * 30);
        assert!(tr.frames.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (tr2, _, te2) = gen_balls_dataset(3, 2, 2, 12, 30, 30, 99).unwrap();
        assert_eq!(tr.frames, tr2.frames);
        assert_eq!(te.frames, te2.frames);
        // val/test streams disjoint from train
        assert_ne!(tr.frame(0, 0), va.frame(0, 0));
    }

    #[test]
    fn baseline_recorded_in_constants_matches_recompute() {
        let (_, _, te) = gen_balls_dataset(0, 0, 5, 20, 30, 30, 123).unwrap();
        let (m, s) = copy_baseline(&te, EVAL_WINDOW).unwrap();
        assert!(m > 0.0);
        assert_eq!(decode_constants_f64(&te.constants, 4), m);
        assert_eq!(decode_constants_f64(&te.constants, 5), s);
        assert_eq!(decode_constants_f64(&te.constants, 0), BOX_L);
    }
}
