//! Synchronous reference runner: one loop senses, computes a full action
//! chunk in zero simulated time, and hands it to the PD follower. This is
//! the wiring every asynchronous configuration is measured against — with
//! all delays at zero the virtual-clock runner must reproduce it bitwise.

use super::{episode_meta, EdgeRecord, EpisodeOutcome, RunConfig, Tracker};
use crate::geom::ActionChunk;
use crate::pd::ChunkFollower;
use crate::world::{ObservationFrame, Termination, WorldState, TIME_LIMIT_S};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

const PRIO_EDGE: u8 = 0;
const PRIO_PD: u8 = 5;

/// Run one episode with a synchronous chunk source called at the edge rate.
///
/// `chunk_fn` receives each fresh observation and returns the chunk to
/// follow until the next edge tick; it runs instantaneously in sim time.
pub fn monolithic_run(
    world: &mut WorldState,
    chunk_fn: &mut dyn FnMut(&ObservationFrame, &WorldState) -> ActionChunk,
    cfg: &RunConfig,
) -> EpisodeOutcome {
    let meta = episode_meta(world, cfg, "monolithic");
    let edge_period = cfg.edge_period_us();
    let pd_period = cfg.pd_period_us();
    let pd_dt = pd_period as f64 * 1e-6;

    // (time, priority, insertion order) — Reverse turns the max-heap into
    // the earliest-event-first queue the loop needs.
    let mut heap: BinaryHeap<Reverse<(u64, u8, u64)>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    heap.push(Reverse((0, PRIO_EDGE, seq)));
    seq += 1;
    heap.push(Reverse((0, PRIO_PD, seq)));
    seq += 1;

    let mut tracker = Tracker::new();
    let mut follower = ChunkFollower::new(ActionChunk::safe_stop(0), world.robot);

    loop {
        let Reverse((t, prio, _)) = heap.pop().expect("recurring events keep the heap non-empty");
        world.advance_to(t);
        tracker.poll_collisions(world);
        if let Some(term) = world.check_termination() {
            return tracker.finish(world, term, meta);
        }

        match prio {
            PRIO_EDGE => {
                let obs = world.sense();
                if cfg.record_edge {
                    tracker
                        .records
                        .push(EdgeRecord { obs: obs.clone(), ped_discs: world.ped_discs() });
                }
                let chunk = chunk_fn(&obs, world);
                follower.swap_chunk(chunk, world.robot);
                tracker.last_echo = obs.stamp;
                heap.push(Reverse((t + edge_period, PRIO_EDGE, seq)));
                seq += 1;
            }
            _ => {
                let tw = follower.tick(world.robot, pd_dt);
                world.set_command(tw).expect("follower commands are finite");
                tracker.last_twist = tw;
                tracker.row(world, "pd");
                heap.push(Reverse((t + pd_period, PRIO_PD, seq)));
                seq += 1;
            }
        }

        if t > ((TIME_LIMIT_S + 10.0) * 1e6) as u64 {
            return tracker.finish(world, Termination::Timeout, meta);
        }
    }
}
