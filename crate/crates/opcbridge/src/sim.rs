//! Single-threaded discrete-event scheduler plus the activity/spawner
//! abstraction that lets the same component code run either under the
//! scheduler (deterministic tests, the demo) or on real threads
//! (`serve-opc`, `run-node`).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};

use crate::clock::{Clock, SimClock};

/// What an activity wants after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Wake me again at this time (>= now).
    NextAt(u64),
    /// Finished; drop me.
    Done,
}

/// A time-driven component: wrapper polling loops, generator updates, the
/// deploy scanner, scenario players. Steps never block.
pub trait Activity: Send {
    fn step(&mut self, now_ms: u64) -> Step;
}

/// Tie-break order for events scheduled at the same instant. Lower runs
/// first; within one class, spawn order decides. Server-side cache updates
/// run before wrapper polls so a poll at t sees the cache as of t.
pub mod priority {
    pub const SERVER: u8 = 0;
    pub const SCENARIO: u8 = 1;
    pub const WRAPPER: u8 = 2;
    pub const DEPLOY: u8 = 3;
}

/// Starts an activity with its first wake-up time.
pub trait Spawner: Send + Sync {
    fn spawn(&self, name: &str, prio: u8, first_due_ms: u64, activity: Box<dyn Activity>);
}

/// Runs each activity on its own OS thread against the given clock.
pub struct ThreadSpawner {
    clock: Arc<dyn Clock>,
}

impl ThreadSpawner {
    pub fn new(clock: Arc<dyn Clock>) -> ThreadSpawner {
        ThreadSpawner { clock }
    }
}

impl Spawner for ThreadSpawner {
    fn spawn(&self, name: &str, _prio: u8, first_due_ms: u64, mut activity: Box<dyn Activity>) {
        let clock = Arc::clone(&self.clock);
        std::thread::Builder::new()
            .name(name.to_owned())
            .spawn(move || {
                let mut due = first_due_ms;
                loop {
                    clock.sleep_until(due);
                    match activity.step(clock.now_ms()) {
                        Step::NextAt(t) => due = t,
                        Step::Done => break,
                    }
                }
            })
            .expect("spawn activity thread");
    }
}

struct Spawn {
    name: String,
    prio: u8,
    due: u64,
    activity: Box<dyn Activity>,
}

#[derive(Default)]
struct Inbox {
    spawns: Vec<Spawn>,
}

/// Feeds newly spawned activities into a running [`Scheduler`]. The deploy
/// loop uses this to start wrappers mid-simulation.
#[derive(Clone)]
pub struct SimSpawner {
    inbox: Arc<Mutex<Inbox>>,
}

impl Spawner for SimSpawner {
    fn spawn(&self, name: &str, prio: u8, first_due_ms: u64, activity: Box<dyn Activity>) {
        self.inbox.lock().unwrap().spawns.push(Spawn {
            name: name.to_owned(),
            prio,
            due: first_due_ms,
            activity,
        });
    }
}

/// Deterministic event loop: events execute in `(time, priority, spawn
/// order)` order and the simulated clock jumps instantly between them.
pub struct Scheduler {
    clock: Arc<SimClock>,
    spawner: SimSpawner,
    queue: BinaryHeap<Reverse<(u64, u8, u64)>>,
    activities: HashMap<u64, (String, u8, Box<dyn Activity>)>,
    next_id: u64,
}

impl Scheduler {
    pub fn new() -> Scheduler {
        Scheduler {
            clock: Arc::new(SimClock::new(0)),
            spawner: SimSpawner { inbox: Arc::new(Mutex::new(Inbox::default())) },
            queue: BinaryHeap::new(),
            activities: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn clock(&self) -> Arc<SimClock> {
        Arc::clone(&self.clock)
    }

    pub fn spawner(&self) -> SimSpawner {
        self.spawner.clone()
    }

    pub fn spawn(&mut self, name: &str, prio: u8, first_due_ms: u64, activity: Box<dyn Activity>) {
        let id = self.next_id;
        self.next_id += 1;
        self.activities.insert(id, (name.to_owned(), prio, activity));
        self.queue.push(Reverse((first_due_ms, prio, id)));
    }

    fn drain_inbox(&mut self) {
        let spawns = std::mem::take(&mut self.spawner.inbox.lock().unwrap().spawns);
        for s in spawns {
            self.spawn(&s.name, s.prio, s.due, s.activity);
        }
    }

    /// Runs every event due at or before `t_end_ms` (a closed window), then
    /// leaves the clock at `t_end_ms`.
    pub fn run_until(&mut self, t_end_ms: u64) {
        loop {
            self.drain_inbox();
            let due = match self.queue.peek() {
                Some(Reverse((due, _, _))) if *due <= t_end_ms => *due,
                _ => break,
            };
            let Reverse((_, _, id)) = self.queue.pop().unwrap();
            let Some((name, prio, mut activity)) = self.activities.remove(&id) else {
                continue;
            };
            self.clock.advance_to(due);
            match activity.step(due) {
                Step::NextAt(t) => {
                    let t = t.max(due);
                    self.activities.insert(id, (name, prio, activity));
                    self.queue.push(Reverse((t, prio, id)));
                }
                Step::Done => {}
            }
        }
        self.clock.advance_to(t_end_ms);
    }

    /// Number of live activities (for tests).
    pub fn live_activities(&self) -> usize {
        self.activities.len()
    }
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler::new()
    }
}
