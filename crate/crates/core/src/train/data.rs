//! Dataset generation and storage.
//!
//! Samples are distilled from privileged rollouts driven by the scripted
//! planner stack under a zero-delay link, so the executed trajectory *is*
//! expert behaviour. Labels are read back off the executed path: the chunk
//! anchored at an observation holds the robot's actual positions one chunk
//! period apart, expressed in that observation's frame. Sampling by time
//! (not arc length) keeps waiting visible — a robot that yields produces
//! stationary steps, which is exactly what the refiner must learn to output.

use super::{SampleDomain, TrainError, TrainSample, D_TH_DEFAULT_M, W_UP_DEFAULT};
use crate::geom::{relative_to, ActionChunk, Pose2, CHUNK_LEN, CHUNK_PERIOD_S};
use crate::planner::RefineParams;
use crate::runtime::{vclock_run, DelayModel, EpisodeLog, OracleBase, OracleEdge, RunConfig};
use crate::scenario::Scenario;
use crate::util::{crc32, ByteReader, ByteWriter};
use crate::world::{CollisionKind, Directive, GoalSpec, ObservationFrame, Termination, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// File identity for serialized datasets.
pub const DATASET_MAGIC: [u8; 4] = *b"AVDS";
pub const DATASET_VERSION: u8 = 1;

/// Seed bands, kept distinct so generation, shuffling, and subsampling never
/// share a stream.
const GEN_ROLL_MIX: u64 = 0xA076_1D64_78BD_642F;
const SUBSAMPLE_MIX: u64 = 0xE703_7ED1_A0B4_28DB;

/// How long a parked robot keeps contributing anchors after its last motion.
const PARKED_TAIL_S: f64 = 5.0;

/// Samples whose label window comes within this margin of a wall strike are
/// dropped: scraping the map is never behaviour worth imitating. Pedestrian
/// brushes do *not* excise — a three-times-faster pedestrian can clip even a
/// perfect dodge, and the dodge itself is exactly the reactive behaviour the
/// re-weighting machinery exists to find.
const CONTACT_EXCLUDE_S: f64 = 1.0;

/// Knobs for [`gen_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// Hard cap on returned samples; generation may produce fewer. When
    /// generation overshoots, a seeded uniform subsample preserves the mix.
    pub count: usize,
    /// Largest delay, in edge ticks, between the two frames of a sample.
    pub k_max: u32,
    /// Master seed for rollouts, delay draws, and subsampling.
    pub seed: u64,
    /// Independent rollouts per scenario.
    pub rolls_per_scenario: usize,
    /// Keep every n-th edge tick as an anchor.
    pub anchor_stride: usize,
    /// Fraction of directive-scenario samples supervised endpoint-only.
    pub final_only_fraction: f64,
    /// Reactive divergence threshold, metres.
    pub d_th: f64,
    /// Loss multiplier for reactive samples.
    pub w_up: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 4000,
            // Deployment staleness tops out near 40 edge ticks (5 s); the
            // wider training range also reaches the long straight run-ups
            // that make reactive windows detectable.
            k_max: 60,
            seed: 0,
            rolls_per_scenario: 6,
            anchor_stride: 1,
            final_only_fraction: 0.5,
            d_th: D_TH_DEFAULT_M,
            w_up: W_UP_DEFAULT,
        }
    }
}

/// A bag of samples plus save/load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
}

/// What [`gen_dataset`] produced.
#[derive(Debug)]
pub struct GenOutput {
    pub dataset: Dataset,
    /// Rollouts attempted.
    pub episodes: usize,
    /// Rollouts dropped whole (abort, or an unexplained timeout).
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples carrying a weight above one.
    pub fn upweighted_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].weight > 1.0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&DATASET_MAGIC);
        w.u8(DATASET_VERSION);
        w.u32(self.samples.len() as u32);
        for s in &self.samples {
            write_obs(&mut w, &s.obs_delayed);
            write_obs(&mut w, &s.obs_now);
            w.u32(s.k_steps);
            write_goal(&mut w, &s.goal);
            write_chunk(&mut w, &s.ref_chunk_t);
            write_chunk(&mut w, &s.ref_chunk_tk);
            w.f64(s.weight);
            let flags = (s.final_only as u8) | ((s.from_ped_episode as u8) << 1);
            w.u8(flags);
        }
        w.finish_crc()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Dataset, TrainError> {
        if buf.len() < DATASET_MAGIC.len() + 1 + 4 + 4 {
            return Err(TrainError::Truncated);
        }
        let (body, trailer) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("four trailer bytes"));
        if crc32(body) != stored {
            return Err(TrainError::BadCrc);
        }
        let mut r = ByteReader::new(body);
        if r.bytes(4).map_err(|_| TrainError::Truncated)? != DATASET_MAGIC {
            return Err(TrainError::BadMagic);
        }
        let version = r.u8().map_err(|_| TrainError::Truncated)?;
        if version != DATASET_VERSION {
            return Err(TrainError::BadVersion(version));
        }
        let count = r.u32().map_err(|_| TrainError::Truncated)? as usize;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let obs_delayed = read_obs(&mut r)?;
            let obs_now = read_obs(&mut r)?;
            let k_steps = r.u32().map_err(|_| TrainError::Truncated)?;
            let goal = read_goal(&mut r)?;
            let ref_chunk_t = read_chunk(&mut r)?;
            let ref_chunk_tk = read_chunk(&mut r)?;
            let weight = r.f64().map_err(|_| TrainError::Truncated)?;
            let flags = r.u8().map_err(|_| TrainError::Truncated)?;
            samples.push(TrainSample {
                obs_delayed,
                obs_now,
                k_steps,
                goal,
                ref_chunk_t,
                ref_chunk_tk,
                weight,
                final_only: flags & 1 != 0,
                from_ped_episode: flags & 2 != 0,
            });
        }
        if !r.is_empty() {
            return Err(TrainError::Truncated);
        }
        Ok(Dataset { samples })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrainError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Dataset, TrainError> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }

    /// Count of samples per domain: (plain, pedestrian, directive-goal).
    pub fn domain_mix(&self) -> (usize, usize, usize) {
        let mut mix = (0, 0, 0);
        for s in &self.samples {
            match s.domain() {
                SampleDomain::Plain => mix.0 += 1,
                SampleDomain::Pedestrian => mix.1 += 1,
                SampleDomain::DirectiveGoal => mix.2 += 1,
            }
        }
        mix
    }
}

fn write_obs(w: &mut ByteWriter, obs: &ObservationFrame) {
    w.u64(obs.stamp);
    w.u16(obs.scan.len() as u16);
    for &r in &obs.scan {
        w.f32(r);
    }
    write_pose(w, &obs.odom);
    write_goal(w, &obs.goal);
}

fn read_obs(r: &mut ByteReader) -> Result<ObservationFrame, TrainError> {
    let stamp = r.u64().map_err(|_| TrainError::Truncated)?;
    let n = r.u16().map_err(|_| TrainError::Truncated)? as usize;
    let mut scan = Vec::with_capacity(n);
    for _ in 0..n {
        scan.push(r.f32().map_err(|_| TrainError::Truncated)?);
    }
    let odom = read_pose(r)?;
    let goal = read_goal(r)?;
    Ok(ObservationFrame { stamp, scan, odom, goal })
}

fn write_pose(w: &mut ByteWriter, p: &Pose2) {
    w.f64(p.x);
    w.f64(p.y);
    w.f64(p.theta);
}

fn read_pose(r: &mut ByteReader) -> Result<Pose2, TrainError> {
    let x = r.f64().map_err(|_| TrainError::Truncated)?;
    let y = r.f64().map_err(|_| TrainError::Truncated)?;
    let theta = r.f64().map_err(|_| TrainError::Truncated)?;
    Ok(Pose2 { x, y, theta })
}

fn write_goal(w: &mut ByteWriter, g: &GoalSpec) {
    write_pose(w, &g.pose);
    w.u8(g.directive.index() as u8);
}

fn read_goal(r: &mut ByteReader) -> Result<GoalSpec, TrainError> {
    let pose = read_pose(r)?;
    let idx = r.u8().map_err(|_| TrainError::Truncated)?;
    let directive = match idx {
        0 => Directive::None,
        1 => Directive::PassLeft,
        2 => Directive::PassRight,
        3 => Directive::HugWall,
        4 => Directive::StopShort,
        _ => return Err(TrainError::Truncated),
    };
    Ok(GoalSpec { pose, directive })
}

fn write_chunk(w: &mut ByteWriter, c: &ActionChunk) {
    w.u64(c.frame_stamp);
    w.u8(c.waypoints.len() as u8);
    for p in &c.waypoints {
        write_pose(w, p);
    }
}

fn read_chunk(r: &mut ByteReader) -> Result<ActionChunk, TrainError> {
    let stamp = r.u64().map_err(|_| TrainError::Truncated)?;
    let n = r.u8().map_err(|_| TrainError::Truncated)? as usize;
    let mut waypoints = Vec::with_capacity(n);
    for _ in 0..n {
        waypoints.push(read_pose(r)?);
    }
    Ok(ActionChunk::from_waypoints(stamp, waypoints)?)
}

/// Does this sample's executed future diverge enough from the delayed
/// frame's to count as reactive? Strictly greater than the threshold.
pub fn upweight_mask(sample: &TrainSample, d_th: f64) -> bool {
    sample.divergence() > d_th
}

/// The executed path of one episode, sampled at arbitrary times by linear
/// interpolation between logged poses.
struct PathSampler {
    ts: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// End of the usable window: episode end, or shortly after the robot
    /// parked for good.
    end: f64,
}

impl PathSampler {
    fn from_log(log: &EpisodeLog) -> PathSampler {
        let (mut ts, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for row in &log.rows {
            if ts.last().is_some_and(|&t| t >= row.t_s) {
                continue;
            }
            ts.push(row.t_s);
            xs.push(row.x);
            ys.push(row.y);
        }
        let episode_end = ts.last().copied().unwrap_or(0.0);
        // Find the last instant the robot actually moved; a long motionless
        // tail (a deliberate park) contributes a grace window and no more.
        let mut last_move = 0.0;
        for i in 1..ts.len() {
            let d = ((xs[i] - xs[i - 1]).powi(2) + (ys[i] - ys[i - 1]).powi(2)).sqrt();
            if d > 1e-9 {
                last_move = ts[i];
            }
        }
        let end = episode_end.min(last_move + PARKED_TAIL_S);
        PathSampler { ts, xs, ys, end }
    }

    fn position(&self, t: f64) -> (f64, f64) {
        match self.ts.binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times")) {
            Ok(i) => (self.xs[i], self.ys[i]),
            Err(0) => (self.xs[0], self.ys[0]),
            Err(i) if i == self.ts.len() => (*self.xs.last().unwrap(), *self.ys.last().unwrap()),
            Err(i) => {
                let f = (t - self.ts[i - 1]) / (self.ts[i] - self.ts[i - 1]);
                (
                    self.xs[i - 1] + f * (self.xs[i] - self.xs[i - 1]),
                    self.ys[i - 1] + f * (self.ys[i] - self.ys[i - 1]),
                )
            }
        }
    }
}

/// Read the executed future off the path as a chunk anchored at `anchor`:
/// positions one chunk period apart, expressed in the anchor frame.
fn executed_chunk(path: &PathSampler, anchor: &ObservationFrame) -> Result<ActionChunk, TrainError> {
    let t0 = anchor.stamp as f64 * 1e-6;
    let mut steps = Vec::with_capacity(CHUNK_LEN);
    let mut prev = (0.0, 0.0);
    for j in 1..=CHUNK_LEN {
        let (wx, wy) = path.position(t0 + j as f64 * CHUNK_PERIOD_S);
        let local = relative_to(&anchor.odom, &Pose2::new(wx, wy, 0.0));
        steps.push((local.x - prev.0, local.y - prev.1));
        prev = (local.x, local.y);
    }
    Ok(ActionChunk::from_planar_steps(anchor.stamp, &steps)?)
}

/// Generate samples by rolling the privileged stack through `scenarios`.
///
/// Rollouts run under a zero-delay link so the executed trajectory is expert
/// behaviour. A rollout is kept if it reaches the goal; a timeout is also
/// kept for stop-short directives, where parking without reaching the goal
/// is the commanded terminal state. Other rollouts are skipped whole and
/// counted. Within a kept rollout, samples whose label window lies near a
/// wall strike are dropped individually; pedestrian brushes keep their
/// samples, because the dodge around a faster pedestrian is precisely the
/// reactive behaviour worth learning.
///
/// Generation parallelizes across scenarios; results are deterministic in
/// `cfg.seed` regardless of thread scheduling.
pub fn gen_dataset(scenarios: &[Scenario], cfg: &DatasetConfig) -> Result<GenOutput, TrainError> {
    let per_scenario: Vec<Result<(Vec<TrainSample>, usize), TrainError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = scenarios
                .iter()
                .map(|scn| scope.spawn(move || scenario_samples(scn, cfg)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("rollout thread panicked")).collect()
        });

    let mut samples = Vec::new();
    let mut skipped = 0;
    for res in per_scenario {
        let (mut s, sk) = res?;
        samples.append(&mut s);
        skipped += sk;
    }
    let episodes = scenarios.len() * cfg.rolls_per_scenario;

    if cfg.count > 0 && samples.len() > cfg.count {
        // Reactive samples are rare and the whole point of the re-weighting
        // machinery: the cap never discards them. Plain samples fill the
        // remaining budget by a seeded uniform draw, and the kept set stays
        // in rollout order.
        let reactive: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].weight > 1.0).collect();
        let mut plain: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].weight <= 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SUBSAMPLE_MIX);
        for i in (1..plain.len()).rev() {
            plain.swap(i, rng.gen_range(0..=i));
        }
        let budget = cfg.count.saturating_sub(reactive.len());
        let mut keep = reactive;
        keep.extend_from_slice(&plain[..budget.min(plain.len())]);
        keep.sort_unstable();
        samples = keep.into_iter().map(|i| samples[i].clone()).collect();
    }

    Ok(GenOutput { dataset: Dataset { samples }, episodes, skipped })
}

fn scenario_samples(
    scn: &Scenario,
    cfg: &DatasetConfig,
) -> Result<(Vec<TrainSample>, usize), TrainError> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for roll in 0..cfg.rolls_per_scenario {
        let rng_seed = cfg.seed
            ^ ((crc32(scn.id.as_bytes()) as u64) << 16)
            ^ (roll as u64).wrapping_mul(GEN_ROLL_MIX);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        // Rollout worlds live in their own seed band so training data never
        // replays an evaluation episode.
        let world_seed = cfg.seed.wrapping_add(101).wrapping_add(roll as u64);
        match rollout_samples(scn, world_seed, cfg, &mut rng)? {
            Some(mut s) => out.append(&mut s),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

fn rollout_samples(
    scn: &Scenario,
    world_seed: u64,
    cfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<TrainSample>>, TrainError> {
    let mut world = WorldState::spawn(scn, world_seed)?;
    let run_cfg = RunConfig {
        edge_hz: 8.0,
        base_hz: 8.0,
        pd_hz: 10.0,
        inference_s: 0.0,
        delay: DelayModel::Fixed(0.0),
        seed: world_seed,
        record_edge: true,
    };
    let mut base = OracleBase;
    let mut edge = OracleEdge { params: RefineParams::default() };
    let outcome = vclock_run(&mut world, &mut base, &mut edge, &run_cfg);

    let directive = scn.goal_spec().directive;
    let acceptable = match outcome.termination {
        Termination::Success => true,
        // Parking short of the goal is the *commanded* end state here.
        Termination::Timeout => directive == Directive::StopShort,
        Termination::Unsafe => false,
    };
    if !acceptable {
        return Ok(None);
    }
    let wall_strikes: Vec<f64> = outcome
        .collisions
        .iter()
        .filter(|c| c.kind == CollisionKind::Static)
        .map(|c| c.time_s)
        .collect();

    let path = PathSampler::from_log(&outcome.log);
    let horizon = CHUNK_LEN as f64 * CHUNK_PERIOD_S;
    let is_ped = !scn.pedestrians.is_empty();
    let is_directive = directive != Directive::None;
    let stride = cfg.anchor_stride.max(1);

    let mut samples = Vec::new();
    let records = &outcome.edge_records;
    let mut i = 0;
    while i < records.len() {
        let anchor = &records[i].obs;
        let t0 = anchor.stamp as f64 * 1e-6;
        if t0 + horizon > path.end {
            break;
        }
        let k = (rng.gen_range(0..=cfg.k_max) as usize).min(i);
        let delayed = &records[i - k].obs;
        // Skip any sample whose label window brushes a wall strike: those
        // seconds are not expert behaviour worth copying.
        if wall_strikes
            .iter()
            .any(|&tc| tc + CONTACT_EXCLUDE_S >= t0 && tc - CONTACT_EXCLUDE_S <= t0 + horizon)
        {
            i += stride;
            continue;
        }
        let ref_chunk_t = executed_chunk(&path, anchor)?;
        let ref_chunk_tk = executed_chunk(&path, delayed)?;
        let final_only = is_directive && rng.gen_bool(cfg.final_only_fraction);
        let mut sample = TrainSample {
            obs_delayed: delayed.clone(),
            obs_now: anchor.clone(),
            k_steps: k as u32,
            goal: anchor.goal,
            ref_chunk_t,
            ref_chunk_tk,
            weight: 1.0,
            final_only,
            from_ped_episode: is_ped,
        };
        if upweight_mask(&sample, cfg.d_th) {
            sample.weight = cfg.w_up;
        }
        samples.push(sample);
        i += stride;
    }
    Ok(Some(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::endpoint_divergence;
    use crate::scenario;

    fn straight_chunk(step: (f64, f64)) -> ActionChunk {
        ActionChunk::from_planar_steps(0, &vec![step; CHUNK_LEN]).unwrap()
    }

    fn sample_with_chunks(a: ActionChunk, b: ActionChunk) -> TrainSample {
        let obs = ObservationFrame {
            stamp: 0,
            scan: vec![5.0; 8],
            odom: Pose2::identity(),
            goal: GoalSpec { pose: Pose2::new(5.0, 0.0, 0.0), directive: Directive::None },
        };
        TrainSample {
            obs_delayed: obs.clone(),
            obs_now: obs,
            k_steps: 0,
            goal: GoalSpec { pose: Pose2::new(5.0, 0.0, 0.0), directive: Directive::None },
            ref_chunk_t: a,
            ref_chunk_tk: b,
            weight: 1.0,
            final_only: false,
            from_ped_episode: false,
        }
    }

    #[test]
    fn reweight_fires_only_beyond_the_threshold() {
        // A quarter-turn's worth of endpoint separation: |(0.8,0)-(0,0.8)|.
        let turn = sample_with_chunks(straight_chunk((0.1, 0.0)), straight_chunk((0.0, 0.1)));
        assert!((turn.divergence() - 1.131_370_849_898_476).abs() < 1e-12);
        assert!(upweight_mask(&turn, D_TH_DEFAULT_M));

        // 0.8 m of separation stays below the threshold.
        let mild = sample_with_chunks(
            straight_chunk((0.1, 0.0)),
            ActionChunk::from_waypoints(
                0,
                (1..=CHUNK_LEN).map(|i| Pose2::new(0.1 * i as f64, 0.8, 0.0)).collect(),
            )
            .unwrap(),
        );
        assert!((mild.divergence() - 0.8).abs() < 1e-12);
        assert!(!upweight_mask(&mild, D_TH_DEFAULT_M));

        // Exactly at the threshold does not fire: the test is strict.
        let edge_case = sample_with_chunks(
            straight_chunk((0.1, 0.0)),
            ActionChunk::from_waypoints(
                0,
                (1..=CHUNK_LEN).map(|i| Pose2::new(0.1 * i as f64, 1.0, 0.0)).collect(),
            )
            .unwrap(),
        );
        assert!((edge_case.divergence() - 1.0).abs() < 1e-15);
        assert!(!upweight_mask(&edge_case, D_TH_DEFAULT_M));
    }

    #[test]
    fn corridor_rollouts_are_shift_invariant_and_never_reweighted() {
        // An empty straight run: the robot launches, cruises at constant
        // velocity, and stops only when the episode ends.
        let scn = scenario::find("open_empty").unwrap();
        let cfg = DatasetConfig {
            count: 0,
            rolls_per_scenario: 1,
            anchor_stride: 1,
            ..DatasetConfig::default()
        };
        let out = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap();
        assert_eq!(out.skipped, 0, "the straight corridor must roll out cleanly");
        let data = out.dataset;
        assert!(data.len() > 50, "expected a full corridor's worth of anchors, got {}", data.len());
        for s in &data.samples {
            // Launch transients leave sub-centimetre wobble; what matters is
            // that nothing comes anywhere near the reactive threshold.
            assert!(
                s.divergence() < 0.05,
                "constant-velocity window should be shift-invariant, divergence {}",
                s.divergence()
            );
            assert_eq!(s.weight, 1.0);
        }
        assert!(data.upweighted_indices().is_empty());
    }

    #[test]
    fn zero_delay_samples_degenerate_to_identical_frames() {
        let scn = scenario::find("open_empty").unwrap();
        let cfg = DatasetConfig {
            count: 0,
            rolls_per_scenario: 1,
            anchor_stride: 1,
            ..DatasetConfig::default()
        };
        let data = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap().dataset;
        let zero_k: Vec<&TrainSample> =
            data.samples.iter().filter(|s| s.k_steps == 0).collect();
        assert!(!zero_k.is_empty(), "the first anchor always clamps its delay to zero");
        for s in zero_k {
            assert_eq!(s.obs_delayed, s.obs_now);
            assert_eq!(s.ref_chunk_t, s.ref_chunk_tk);
            assert_eq!(endpoint_divergence(&s.ref_chunk_t, &s.ref_chunk_tk), 0.0);
        }
    }

    #[test]
    fn cruise_labels_step_a_tenth_of_a_metre() {
        let scn = scenario::find("open_empty").unwrap();
        let cfg = DatasetConfig {
            count: 0,
            rolls_per_scenario: 1,
            anchor_stride: 1,
            ..DatasetConfig::default()
        };
        let data = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap().dataset;
        // Mid-corridor the robot cruises at 0.3 m/s, so one chunk period
        // covers 0.1 m. Examine a sample from the middle of the run.
        let mid = &data.samples[data.len() / 2];
        for w in mid.ref_chunk_t.waypoints.windows(2) {
            let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            assert!((d - 0.1).abs() < 1e-3, "cruise step was {d}");
        }
    }

    #[test]
    fn pedestrian_crossings_produce_reactive_samples() {
        let scn = scenario::find("ped_cross_front").unwrap();
        let cfg = DatasetConfig {
            count: 0,
            rolls_per_scenario: 2,
            anchor_stride: 1,
            ..DatasetConfig::default()
        };
        let out = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap();
        let data = out.dataset;
        assert!(!data.is_empty(), "crossing rollouts were all skipped");
        let max_div =
            data.samples.iter().map(|s| s.divergence()).fold(0.0f64, f64::max);
        assert!(
            max_div > D_TH_DEFAULT_M,
            "a crossing must force at least one reactive window, max divergence {max_div}"
        );
        assert!(!data.upweighted_indices().is_empty());
        assert!(data.samples.iter().all(|s| s.from_ped_episode));
    }

    #[test]
    fn dataset_files_round_trip_and_reject_corruption() {
        let scn = scenario::find("corridor_12m").unwrap().without_pedestrians();
        let cfg = DatasetConfig {
            count: 20,
            rolls_per_scenario: 1,
            anchor_stride: 4,
            ..DatasetConfig::default()
        };
        let data = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap().dataset;
        assert_eq!(data.len(), 20);
        let bytes = data.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, data);

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(Dataset::from_bytes(&flipped), Err(TrainError::BadCrc)));

        assert!(matches!(
            Dataset::from_bytes(&bytes[..bytes.len() - 9]),
            Err(TrainError::BadCrc) | Err(TrainError::Truncated)
        ));

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        let fixed = {
            let body_len = wrong_magic.len() - 4;
            let crc = crc32(&wrong_magic[..body_len]).to_le_bytes();
            wrong_magic[body_len..].copy_from_slice(&crc);
            wrong_magic
        };
        assert!(matches!(Dataset::from_bytes(&fixed), Err(TrainError::BadMagic)));
    }

    #[test]
    fn generation_is_deterministic() {
        let scn = scenario::find("ped_cross_front").unwrap();
        let cfg = DatasetConfig {
            count: 0,
            rolls_per_scenario: 1,
            anchor_stride: 2,
            ..DatasetConfig::default()
        };
        let a = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap().dataset;
        let b = gen_dataset(std::slice::from_ref(&scn), &cfg).unwrap().dataset;
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
