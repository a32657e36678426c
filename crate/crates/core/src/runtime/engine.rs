//! Persistent worker pool with FIFO work-stealing or priority dispatch, a
//! ready-task throttle, and help-while-waiting task groups.

use std::cmp::{Ordering as CmpOrdering, Reverse};
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crossbeam::deque::{Injector, Steal, Stealer, Worker};
use parking_lot::{Condvar, Mutex};

use crate::trace::{Kind, Label, TraceEvent, Tracer};

pub type TaskFn = Box<dyn FnOnce(&mut WorkerCtx<'_>) + Send>;

pub struct Task {
    pub kind: Kind,
    pub priority: u64,
    pub label: Label,
    seq: u64,
    group: Option<Arc<TaskGroup>>,
    run: TaskFn,
}

struct Ranked(Task);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (self.0.priority, Reverse(self.0.seq)).cmp(&(other.0.priority, Reverse(other.0.seq)))
    }
}

/// Counts outstanding tasks; waiting on it is the local-step barrier.
#[derive(Debug, Default)]
pub struct TaskGroup {
    pending: AtomicUsize,
}

impl TaskGroup {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn is_done(&self) -> bool {
        self.pending.load(Ordering::Acquire) == 0
    }
}

/// One entry of the task start-order log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StartRecord {
    pub label: Label,
    pub priority: u64,
    pub worker: u32,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub rank: u32,
    pub workers: usize,
    pub priority_mode: bool,
    pub throttle: usize,
    pub tracing: bool,
    /// Log the start order of compute tasks.
    pub record_order: bool,
    pub t0: Instant,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { rank: 0, workers: 1, priority_mode: false, throttle: 256, tracing: false, record_order: false, t0: Instant::now() }
    }
}

struct Shared {
    priority_mode: bool,
    throttle: usize,
    injector: Injector<Task>,
    stealers: Vec<Stealer<Task>>,
    heap: Mutex<BinaryHeap<Ranked>>,
    /// Tasks admitted to a queue and not yet started.
    queued: AtomicUsize,
    seq: AtomicU64,
    sleep: Mutex<u64>,
    wake: Condvar,
    shutdown: AtomicBool,
    t_end: AtomicU64,
    order_log: Option<Mutex<Vec<StartRecord>>>,
    panic: Mutex<Option<String>>,
}

impl Shared {
    fn bump(&self, all: bool) {
        let mut g = self.sleep.lock();
        *g = g.wrapping_add(1);
        drop(g);
        if all {
            self.wake.notify_all();
        } else {
            self.wake.notify_one();
        }
    }

    fn make(&self, kind: Kind, priority: u64, label: Label, group: Option<&Arc<TaskGroup>>, run: TaskFn) -> Task {
        if let Some(g) = group {
            g.pending.fetch_add(1, Ordering::AcqRel);
        }
        Task { kind, priority, label, seq: self.seq.fetch_add(1, Ordering::Relaxed), group: group.cloned(), run }
    }

    fn finish(&self, group: Option<Arc<TaskGroup>>) {
        if let Some(g) = group {
            if g.pending.fetch_sub(1, Ordering::AcqRel) == 1 {
                self.bump(true);
            }
        }
    }

    fn steal(&self, local: &Worker<Task>) -> Option<Task> {
        if self.priority_mode {
            return self.heap.lock().pop().map(|r| r.0);
        }
        if let Some(t) = local.pop() {
            return Some(t);
        }
        loop {
            let mut retry = false;
            match self.injector.steal_batch_and_pop(local) {
                Steal::Success(t) => return Some(t),
                Steal::Retry => retry = true,
                Steal::Empty => {}
            }
            for s in &self.stealers {
                match s.steal() {
                    Steal::Success(t) => return Some(t),
                    Steal::Retry => retry = true,
                    Steal::Empty => {}
                }
            }
            if !retry {
                return None;
            }
        }
    }

    fn take(&self, local: &Worker<Task>) -> Option<Task> {
        let t = self.steal(local)?;
        self.queued.fetch_sub(1, Ordering::AcqRel);
        Some(t)
    }
}

/// Handle given to running tasks: spawn, wait and trace from inside a worker.
pub struct WorkerCtx<'a> {
    pub worker: u32,
    shared: &'a Shared,
    local: &'a Worker<Task>,
    pub tracer: &'a mut Tracer,
}

impl WorkerCtx<'_> {
    /// Queue a task. Past the throttle, run queued work inline until there is
    /// room again.
    pub fn spawn(
        &mut self,
        group: &Arc<TaskGroup>,
        kind: Kind,
        priority: u64,
        label: Label,
        f: impl FnOnce(&mut WorkerCtx<'_>) + Send + 'static,
    ) {
        let sh = self.shared;
        while sh.queued.load(Ordering::Acquire) >= sh.throttle {
            match sh.take(self.local) {
                Some(t) => self.execute(t),
                None => break,
            }
        }
        let task = sh.make(kind, priority, label, Some(group), Box::new(f));
        sh.queued.fetch_add(1, Ordering::AcqRel);
        if sh.priority_mode {
            sh.heap.lock().push(Ranked(task));
        } else {
            self.local.push(task);
        }
        sh.bump(false);
    }

    /// Run queued tasks until `group` drains; sleep (as idle) when none are
    /// available.
    pub fn wait(&mut self, group: &TaskGroup) {
        let sh = self.shared;
        while !group.is_done() {
            if let Some(t) = sh.take(self.local) {
                self.execute(t);
                continue;
            }
            let mut g = sh.sleep.lock();
            if group.is_done() || sh.queued.load(Ordering::Acquire) > 0 {
                continue;
            }
            self.tracer.push(Kind::Idle, Label::None);
            sh.wake.wait(&mut g);
            drop(g);
            self.tracer.pop();
        }
    }

    pub fn mark(&mut self, kind: Kind, label: Label) {
        self.tracer.mark(kind, label);
    }

    fn execute(&mut self, task: Task) {
        let Task { kind, priority, label, group, run, .. } = task;
        if kind == Kind::Compute {
            if let Some(log) = &self.shared.order_log {
                log.lock().push(StartRecord { label, priority, worker: self.worker });
            }
        }
        self.tracer.push(kind, label);
        let res = catch_unwind(AssertUnwindSafe(|| run(self)));
        self.tracer.pop();
        if let Err(p) = res {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "task panicked".into());
            self.shared.panic.lock().get_or_insert(msg);
        }
        self.shared.finish(group);
    }
}

fn worker_loop(shared: Arc<Shared>, local: Worker<Task>, mut tracer: Tracer, worker: u32) -> Vec<TraceEvent> {
    loop {
        if let Some(t) = shared.take(&local) {
            let mut ctx = WorkerCtx { worker, shared: &shared, local: &local, tracer: &mut tracer };
            ctx.execute(t);
            continue;
        }
        let mut g = shared.sleep.lock();
        if shared.shutdown.load(Ordering::Acquire) {
            break;
        }
        if shared.queued.load(Ordering::Acquire) > 0 {
            continue;
        }
        shared.wake.wait(&mut g);
    }
    tracer.finish(shared.t_end.load(Ordering::Acquire))
}

/// Per-rank task engine. The owning thread submits work but does not execute
/// it.
pub struct TaskEngine {
    shared: Arc<Shared>,
    handles: Vec<JoinHandle<Vec<TraceEvent>>>,
    t0: Instant,
}

impl TaskEngine {
    pub fn new(cfg: &EngineConfig) -> Self {
        let workers: Vec<Worker<Task>> = (0..cfg.workers.max(1)).map(|_| Worker::new_fifo()).collect();
        let shared = Arc::new(Shared {
            priority_mode: cfg.priority_mode,
            throttle: cfg.throttle.max(1),
            injector: Injector::new(),
            stealers: workers.iter().map(Worker::stealer).collect(),
            heap: Mutex::new(BinaryHeap::new()),
            queued: AtomicUsize::new(0),
            seq: AtomicU64::new(0),
            sleep: Mutex::new(0),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
            t_end: AtomicU64::new(0),
            order_log: cfg.record_order.then(|| Mutex::new(Vec::new())),
            panic: Mutex::new(None),
        });
        let handles = workers
            .into_iter()
            .enumerate()
            .map(|(w, local)| {
                let shared = shared.clone();
                let tracer = Tracer::new(cfg.tracing, cfg.rank, w as u32, cfg.t0);
                thread::Builder::new()
                    .name(format!("r{}w{w}", cfg.rank))
                    .spawn(move || worker_loop(shared, local, tracer, w as u32))
                    .expect("spawn worker thread")
            })
            .collect();
        Self { shared, handles, t0: cfg.t0 }
    }

    pub fn workers(&self) -> usize {
        self.handles.len()
    }

    /// Submit from outside the pool.
    pub fn submit(
        &self,
        group: &Arc<TaskGroup>,
        kind: Kind,
        priority: u64,
        label: Label,
        f: impl FnOnce(&mut WorkerCtx<'_>) + Send + 'static,
    ) {
        let sh = &*self.shared;
        let task = sh.make(kind, priority, label, Some(group), Box::new(f));
        sh.queued.fetch_add(1, Ordering::AcqRel);
        if sh.priority_mode {
            sh.heap.lock().push(Ranked(task));
        } else {
            sh.injector.push(task);
        }
        sh.bump(false);
    }

    /// Block (without executing tasks) until `group` drains.
    pub fn wait(&self, group: &TaskGroup) {
        let mut g = self.shared.sleep.lock();
        while !group.is_done() {
            self.shared.wake.wait(&mut g);
        }
    }

    /// Message of the first task panic, if any.
    pub fn take_panic(&self) -> Option<String> {
        self.shared.panic.lock().take()
    }

    pub fn take_order_log(&self) -> Vec<StartRecord> {
        self.shared.order_log.as_ref().map(|l| std::mem::take(&mut *l.lock())).unwrap_or_default()
    }

    /// Stop the workers; their traces are closed at the current time.
    pub fn shutdown(mut self) -> (Vec<TraceEvent>, u64) {
        let t_end = self.t0.elapsed().as_nanos() as u64;
        (self.stop(t_end), t_end)
    }

    fn stop(&mut self, t_end: u64) -> Vec<TraceEvent> {
        self.shared.t_end.store(t_end, Ordering::Release);
        {
            let _g = self.shared.sleep.lock();
            self.shared.shutdown.store(true, Ordering::Release);
        }
        self.shared.wake.notify_all();
        let mut out = Vec::new();
        for h in self.handles.drain(..) {
            if let Ok(evs) = h.join() {
                out.extend(evs);
            }
        }
        out
    }
}

impl Drop for TaskEngine {
    fn drop(&mut self) {
        if !self.handles.is_empty() {
            let t = self.t0.elapsed().as_nanos() as u64;
            self.stop(t);
        }
    }
}

/// Number of pairs started in the wrong order (a smaller priority before a
/// larger one).
pub fn count_inversions(priorities: &[u64]) -> u64 {
    fn sort(v: &mut [u64], buf: &mut Vec<u64>) -> u64 {
        let n = v.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let mut inv = sort(&mut v[..mid], buf) + sort(&mut v[mid..], buf);
        buf.clear();
        let (mut i, mut j) = (0, mid);
        // Descending merge: taking from the right while the left holds a
        // smaller value means every remaining left entry was started too early.
        while i < mid && j < n {
            if v[i] >= v[j] {
                buf.push(v[i]);
                i += 1;
            } else {
                buf.push(v[j]);
                inv += (mid - i) as u64;
                j += 1;
            }
        }
        buf.extend_from_slice(&v[i..mid]);
        buf.extend_from_slice(&v[j..n]);
        v.copy_from_slice(buf);
        inv
    }
    let mut v = priorities.to_vec();
    let mut buf = Vec::with_capacity(v.len());
    sort(&mut v, &mut buf)
}
