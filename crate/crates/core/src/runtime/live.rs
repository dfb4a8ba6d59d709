//! Wall-clock loopback runtime: the same edge and base loops that the
//! virtual clock interleaves deterministically, here running as two real
//! tasks that talk over a length-framed TCP byte stream. This path trades
//! bit-reproducibility for realism (real sockets, real sleeps); it powers
//! the `serve-base` / `run-edge` binaries and the loopback smoke test.
//!
//! Framing: each codec frame is prefixed with its length as a `u32` little
//! endian. The CRC inside the codec frame still guards payload integrity;
//! the length prefix only delimits frames on the stream.

use super::buffer::ObsBuffer;
use super::codec::{self, GuidanceMessage, WireMessage};
use super::delay::{DelayModel, DelaySampler};
use super::policy::{BaseContext, BasePolicy, EdgePolicy};
use super::{episode_meta, EpisodeOutcome, RunConfig, Tracker};
use crate::geom::ActionChunk;
use crate::pd::ChunkFollower;
use crate::world::{GridMap, ObservationFrame, Termination, WorldState, TIME_LIMIT_S};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

/// Upper bound on a single frame; real frames are a few hundred bytes.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

/// Write one length-prefixed frame.
pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Read one length-prefixed frame, blocking until it is complete.
pub fn read_frame(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_le_bytes(len) as usize;
    if n > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "oversized frame"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Incremental parser for length-prefixed frames on a non-blocking stream.
#[derive(Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    peer_closed: bool,
}

impl FrameReader {
    pub fn new() -> Self {
        FrameReader::default()
    }

    pub fn peer_closed(&self) -> bool {
        self.peer_closed
    }

    /// Pull whatever bytes are available without blocking and return every
    /// complete frame received so far.
    pub fn drain(&mut self, stream: &mut TcpStream) -> io::Result<Vec<Vec<u8>>> {
        let mut chunk = [0u8; 4096];
        while !self.peer_closed {
            match stream.read(&mut chunk) {
                Ok(0) => self.peer_closed = true,
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
        let mut frames = Vec::new();
        loop {
            if self.buf.len() < 4 {
                break;
            }
            let n = u32::from_le_bytes(self.buf[..4].try_into().unwrap()) as usize;
            if n > MAX_FRAME_BYTES {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "oversized frame"));
            }
            if self.buf.len() < 4 + n {
                break;
            }
            frames.push(self.buf[4..4 + n].to_vec());
            self.buf.drain(..4 + n);
        }
        Ok(frames)
    }
}

/// Configuration for the base server side of a live link.
#[derive(Debug, Clone)]
pub struct BaseServerConfig {
    /// Artificial reply latency, sampled per service (simulated seconds).
    pub delay: DelayModel,
    /// Seed for the latency sampler.
    pub seed: u64,
    /// Minimum service period in simulated seconds (1 / base rate).
    pub service_period_s: f64,
    /// Wall seconds per simulated second; scales every sleep so demos and
    /// tests can run the same protocol faster than real time.
    pub time_scale: f64,
}

impl Default for BaseServerConfig {
    fn default() -> Self {
        BaseServerConfig {
            delay: DelayModel::Fixed(0.0),
            seed: 0,
            service_period_s: 0.2,
            time_scale: 1.0,
        }
    }
}

/// Serve one edge connection until the peer disconnects. Queued
/// observations are drained latest-wins before each service; the reply for
/// the consumed observation is sent by a writer thread after the sampled
/// artificial latency, so a long delay does not block the next service.
/// Returns the number of guidance replies scheduled.
pub fn serve_base(
    stream: &mut TcpStream,
    base: &mut dyn BasePolicy,
    map: &GridMap,
    cfg: &BaseServerConfig,
) -> io::Result<usize> {
    stream.set_nodelay(true)?;
    let mut sampler = DelaySampler::new(cfg.delay.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ super::vclock::DELAY_SEED_MIX);

    // Dedicated writer: receives (deadline, frame) and writes in deadline
    // order as it sleeps past each one. mpsc keeps arrival order, which is
    // exactly delivery order for fixed delays; good enough for a demo path.
    let writer_stream = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    let writer = thread::spawn(move || {
        let mut out = writer_stream;
        for (deadline, frame) in rx {
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            }
            if write_frame(&mut out, &frame).is_err() {
                break; // peer gone; drain and exit
            }
        }
    });

    let mut reader = FrameReader::new();
    let mut served = 0usize;
    let mut next_free = Instant::now();
    'serve: loop {
        // Block for at least one frame, then drain to the newest.
        let first = match read_frame(stream) {
            Ok(f) => f,
            Err(e)
                if e.kind() == io::ErrorKind::UnexpectedEof
                    || e.kind() == io::ErrorKind::ConnectionReset =>
            {
                break 'serve;
            }
            Err(e) => {
                drop(tx);
                let _ = writer.join();
                return Err(e);
            }
        };
        let mut latest = Some(first);
        stream.set_nonblocking(true)?;
        for f in reader.drain(stream)? {
            latest = Some(f);
        }
        stream.set_nonblocking(false)?;
        let closed_after_drain = reader.peer_closed();

        let consumed_at = Instant::now().max(next_free);
        if let Some(bytes) = latest {
            match codec::decode(&bytes) {
                Ok(WireMessage::Obs(m)) => {
                    let ctx = BaseContext { map, ped_discs: &[] };
                    if let Some(g) = base.guide(&m, &ctx) {
                        let delay_s = sampler.sample(&mut rng);
                        let deadline =
                            consumed_at + Duration::from_secs_f64(delay_s * cfg.time_scale);
                        let frame = codec::encode(&WireMessage::Guidance(g));
                        if tx.send((deadline, frame)).is_err() {
                            break 'serve;
                        }
                        served += 1;
                    }
                }
                // Anything else on the uplink is logged by dropping it.
                Ok(_) | Err(_) => {}
            }
        }
        // Hold the service rate: pickups at most once per service period.
        next_free = consumed_at + Duration::from_secs_f64(cfg.service_period_s * cfg.time_scale);
        let now = Instant::now();
        if next_free > now {
            thread::sleep(next_free - now);
        }
        if closed_after_drain {
            break 'serve;
        }
    }
    drop(tx);
    let _ = writer.join();
    Ok(served)
}

/// Drive one episode from the edge side of a live link, pacing simulated
/// time by `time_scale` wall seconds per simulated second. The loop never
/// blocks on the network: each tick uses only local state, adopting
/// whatever guidance frames have arrived since the last tick.
pub fn run_edge(
    world: &mut WorldState,
    edge: &mut dyn EdgePolicy,
    stream: &mut TcpStream,
    cfg: &RunConfig,
    time_scale: f64,
) -> io::Result<EpisodeOutcome> {
    let meta = episode_meta(world, cfg, "live_edge");
    stream.set_nodelay(true)?;
    stream.set_nonblocking(true)?;
    let edge_period = cfg.edge_period_us();
    let pd_period = cfg.pd_period_us();
    let pd_dt = pd_period as f64 * 1e-6;

    let mut tracker = Tracker::new();
    let mut buffer = ObsBuffer::new();
    let mut reader = FrameReader::new();
    let mut current: Option<(GuidanceMessage, ObservationFrame)> = None;
    let mut follower = ChunkFollower::new(ActionChunk::safe_stop(0), world.robot);
    let mut link_up = true;

    let start = Instant::now();
    let mut t_sense: u64 = 0;
    let mut t_act: u64 = 0;
    let mut t_pd: u64 = 0;

    loop {
        let t = t_sense.min(t_act).min(t_pd);
        let wall_target = Duration::from_secs_f64(t as f64 * 1e-6 * time_scale);
        let elapsed = start.elapsed();
        if wall_target > elapsed {
            thread::sleep(wall_target - elapsed);
        }

        world.advance_to(t);
        tracker.poll_collisions(world);
        if let Some(term) = world.check_termination() {
            return Ok(tracker.finish(world, term, meta));
        }
        if t > ((TIME_LIMIT_S + 10.0) * 1e6) as u64 {
            return Ok(tracker.finish(world, Termination::Timeout, meta));
        }

        if t_sense == t {
            let obs = world.sense();
            let msg = WireMessage::Obs(codec::ObsMessage {
                stamp: obs.stamp,
                odom: obs.odom,
                scan: obs.scan.clone(),
                goal: obs.goal,
            });
            buffer.push(obs).expect("edge stamps strictly increase");
            if link_up {
                let bytes = codec::encode(&msg);
                match write_frame(stream, &bytes) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
                    Err(_) => link_up = false, // base gone; keep flying local
                }
            }
            t_sense += edge_period;
        }

        // Adopt everything that arrived since the last wake, in arrival
        // order — mirrors guidance-delivery priority in the virtual clock.
        if link_up {
            match reader.drain(stream) {
                Ok(frames) => {
                    for bytes in frames {
                        match codec::decode(&bytes) {
                            Ok(WireMessage::Guidance(g)) => {
                                if tracker.guidance_count > 0
                                    && g.echo_stamp <= tracker.last_echo
                                {
                                    tracker.row(world, "old_guidance");
                                } else {
                                    match buffer.match_stamp(g.echo_stamp) {
                                        Ok(frame) => {
                                            let frame = frame.clone();
                                            tracker.guidance_count += 1;
                                            tracker.last_echo = g.echo_stamp;
                                            current = Some((g, frame));
                                            tracker.row(world, "guidance");
                                        }
                                        Err(_) => {
                                            tracker.stale_events += 1;
                                            tracker.row(world, "stale_guidance");
                                        }
                                    }
                                }
                            }
                            // Corrupt or unexpected frames are dropped.
                            Ok(_) | Err(_) => tracker.row(world, "bad_frame"),
                        }
                    }
                    if reader.peer_closed() {
                        link_up = false;
                    }
                }
                Err(_) => link_up = false,
            }
        }

        if t_act == t {
            if let Some((g, then)) = &current {
                let now = buffer.latest().expect("sense precedes act").clone();
                let chunk = match edge.refine(g, then, &now) {
                    Ok(c) => c,
                    Err(_) => return Ok(tracker.finish(world, Termination::Unsafe, meta)),
                };
                follower.swap_chunk(chunk, now.odom);
            }
            t_act += edge_period;
        }

        if t_pd == t {
            let tw = follower.tick(world.robot, pd_dt);
            world.set_command(tw).expect("follower commands are finite");
            tracker.last_twist = tw;
            tracker.row(world, "pd");
            t_pd += pd_period;
        }
    }
}
