//! Deterministic asynchronous episode runner. All recurring activities —
//! edge sensing, uplink delivery, base service, downlink delivery, edge
//! action, and the PD tick — are events on one microsecond virtual clock.
//! Events at the same instant execute in a fixed priority order, chosen so
//! that a zero-delay configuration reduces exactly to a monolithic
//! sense-plan-refine-act loop.

use super::buffer::ObsBuffer;
use super::codec::{self, GuidanceMessage, ObsMessage, WireMessage};
use super::delay::DelaySampler;
use super::policy::{BaseContext, BasePolicy, EdgePolicy};
use super::{episode_meta, EdgeRecord, EpisodeOutcome, RunConfig, Tracker};
use crate::geom::ActionChunk;
use crate::pd::ChunkFollower;
use crate::world::{ObservationFrame, Termination, WorldState, TIME_LIMIT_S};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

const PRIO_EDGE_SENSE: u8 = 0;
const PRIO_DELIVER_OBS: u8 = 1;
const PRIO_SERVER_FREE: u8 = 2;
const PRIO_DELIVER_GUIDANCE: u8 = 3;
const PRIO_EDGE_ACT: u8 = 4;
const PRIO_PD_TICK: u8 = 5;

/// Seed offset separating the link-delay stream from the world's noise
/// stream (the 64-bit golden-ratio constant, a common stream splitter).
pub const DELAY_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug)]
enum Payload {
    EdgeSense,
    DeliverObs(Vec<u8>),
    ServerFree,
    DeliverGuidance(Vec<u8>),
    EdgeAct,
    PdTick,
}

struct Ev {
    t: u64,
    prio: u8,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.prio, self.seq) == (other.t, other.prio, other.seq)
    }
}
impl Eq for Ev {}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest event first; seq
        // breaks remaining ties in insertion order.
        (other.t, other.prio, other.seq).cmp(&(self.t, self.prio, self.seq))
    }
}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sched(heap: &mut BinaryHeap<Ev>, seq: &mut u64, t: u64, prio: u8, payload: Payload) {
    heap.push(Ev { t, prio, seq: *seq, payload });
    *seq += 1;
}

/// Run one episode under the asynchronous virtual clock.
///
/// The base policy serves at most one request at a time: while busy, the
/// newest delivered observation waits in a one-slot mailbox and older ones
/// are discarded (latest wins). Guidance is matched to the observation it
/// echoes via the edge's ring buffer; unmatchable guidance is dropped and
/// the edge keeps refining its previous plan.
pub fn vclock_run(
    world: &mut WorldState,
    base: &mut dyn BasePolicy,
    edge: &mut dyn EdgePolicy,
    cfg: &RunConfig,
) -> EpisodeOutcome {
    let meta = episode_meta(world, cfg, "vclock");
    let edge_period = cfg.edge_period_us();
    let busy_period = cfg.base_busy_us();
    let pd_period = cfg.pd_period_us();
    let pd_dt = pd_period as f64 * 1e-6;
    let inference_us = (cfg.inference_s * 1e6).round() as u64;

    let mut heap: BinaryHeap<Ev> = BinaryHeap::new();
    let mut seq: u64 = 0;
    sched(&mut heap, &mut seq, 0, PRIO_EDGE_SENSE, Payload::EdgeSense);
    sched(&mut heap, &mut seq, 0, PRIO_EDGE_ACT, Payload::EdgeAct);
    sched(&mut heap, &mut seq, 0, PRIO_PD_TICK, Payload::PdTick);

    let mut tracker = Tracker::new();
    let mut buffer = ObsBuffer::new();
    // Pedestrian discs snapshotted at each sense stamp, so a privileged
    // base plans against the world as it was when the observation was taken.
    let mut discs_at: HashMap<u64, Vec<([f64; 2], f64)>> = HashMap::new();
    let mut pending_obs: Option<Vec<u8>> = None;
    let mut server_busy = false;
    // Latest adopted guidance and the observation it echoes.
    let mut current: Option<(GuidanceMessage, ObservationFrame)> = None;
    let mut follower = ChunkFollower::new(ActionChunk::safe_stop(0), world.robot);
    let mut delay_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DELAY_SEED_MIX);
    let mut sampler = DelaySampler::new(cfg.delay.clone());

    loop {
        let ev = heap.pop().expect("recurring events keep the heap non-empty");
        world.advance_to(ev.t);
        tracker.poll_collisions(world);
        if let Some(term) = world.check_termination() {
            return tracker.finish(world, term, meta);
        }

        match ev.payload {
            Payload::EdgeSense => {
                let obs = world.sense();
                discs_at.insert(obs.stamp, world.ped_discs());
                if cfg.record_edge {
                    tracker
                        .records
                        .push(EdgeRecord { obs: obs.clone(), ped_discs: world.ped_discs() });
                }
                let msg = WireMessage::Obs(ObsMessage {
                    stamp: obs.stamp,
                    odom: obs.odom,
                    scan: obs.scan.clone(),
                    goal: obs.goal,
                });
                buffer.push(obs).expect("edge stamps strictly increase");
                let bytes = codec::encode(&msg);
                sched(&mut heap, &mut seq, ev.t, PRIO_DELIVER_OBS, Payload::DeliverObs(bytes));
                sched(
                    &mut heap,
                    &mut seq,
                    ev.t + edge_period,
                    PRIO_EDGE_SENSE,
                    Payload::EdgeSense,
                );
            }
            Payload::DeliverObs(bytes) => {
                // Latest wins: an observation still waiting for service is
                // replaced by the newer one.
                pending_obs = Some(bytes);
                if !server_busy {
                    serve_pending(
                        world,
                        base,
                        &discs_at,
                        &mut pending_obs,
                        &mut server_busy,
                        &mut sampler,
                        &mut delay_rng,
                        inference_us,
                        busy_period,
                        ev.t,
                        &mut heap,
                        &mut seq,
                    );
                }
            }
            Payload::ServerFree => {
                server_busy = false;
                if pending_obs.is_some() {
                    serve_pending(
                        world,
                        base,
                        &discs_at,
                        &mut pending_obs,
                        &mut server_busy,
                        &mut sampler,
                        &mut delay_rng,
                        inference_us,
                        busy_period,
                        ev.t,
                        &mut heap,
                        &mut seq,
                    );
                }
            }
            Payload::DeliverGuidance(bytes) => {
                let msg = codec::decode(&bytes).expect("in-process frames are well-formed");
                let WireMessage::Guidance(g) = msg else {
                    unreachable!("downlink only carries guidance")
                };
                if tracker.guidance_count > 0 && g.echo_stamp <= tracker.last_echo {
                    // A slower reply overtaken by a newer one: drop it so
                    // the applied echo sequence stays monotone.
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
                            // Unmatchable echo: keep acting on the previous
                            // pair rather than adopting an unanchored plan.
                            tracker.stale_events += 1;
                            tracker.row(world, "stale_guidance");
                        }
                    }
                }
            }
            Payload::EdgeAct => {
                if let Some((g, then)) = &current {
                    let now = buffer.latest().expect("sense precedes act").clone();
                    let chunk = match edge.refine(g, then, &now) {
                        Ok(c) => c,
                        Err(_) => return tracker.finish(world, Termination::Unsafe, meta),
                    };
                    // The refined chunk is local to the frame it was
                    // refined against, which is this instant's sense pose.
                    follower.swap_chunk(chunk, now.odom);
                }
                sched(&mut heap, &mut seq, ev.t + edge_period, PRIO_EDGE_ACT, Payload::EdgeAct);
            }
            Payload::PdTick => {
                let tw = follower.tick(world.robot, pd_dt);
                world.set_command(tw).expect("follower commands are finite");
                tracker.last_twist = tw;
                tracker.row(world, "pd");
                sched(&mut heap, &mut seq, ev.t + pd_period, PRIO_PD_TICK, Payload::PdTick);
            }
        }

        // Belt and braces: the world's own timeout must have fired by now.
        if ev.t > ((TIME_LIMIT_S + 10.0) * 1e6) as u64 {
            return tracker.finish(world, Termination::Timeout, meta);
        }
    }
}

/// Start one base service: take the mailbox observation, compute guidance,
/// and schedule its delivery after inference time plus a sampled link delay.
/// The server stays busy for one service period regardless of the reply.
#[allow(clippy::too_many_arguments)]
fn serve_pending(
    world: &WorldState,
    base: &mut dyn BasePolicy,
    discs_at: &HashMap<u64, Vec<([f64; 2], f64)>>,
    pending_obs: &mut Option<Vec<u8>>,
    server_busy: &mut bool,
    sampler: &mut DelaySampler,
    delay_rng: &mut ChaCha8Rng,
    inference_us: u64,
    busy_period: u64,
    now: u64,
    heap: &mut BinaryHeap<Ev>,
    seq: &mut u64,
) {
    let bytes = pending_obs.take().expect("caller checked the mailbox");
    let msg = codec::decode(&bytes).expect("in-process frames are well-formed");
    let WireMessage::Obs(m) = msg else { unreachable!("uplink only carries observations") };
    let empty: Vec<([f64; 2], f64)> = Vec::new();
    let discs = discs_at.get(&m.stamp).unwrap_or(&empty);
    let ctx = BaseContext { map: &world.map, ped_discs: discs };
    let reply = base.guide(&m, &ctx);
    *server_busy = true;
    sched(heap, seq, now + busy_period, PRIO_SERVER_FREE, Payload::ServerFree);
    if let Some(g) = reply {
        let delay_us = (sampler.sample(delay_rng) * 1e6).round() as u64;
        let bytes = codec::encode(&WireMessage::Guidance(g));
        sched(
            heap,
            seq,
            now + inference_us + delay_us,
            PRIO_DELIVER_GUIDANCE,
            Payload::DeliverGuidance(bytes),
        );
    }
}
