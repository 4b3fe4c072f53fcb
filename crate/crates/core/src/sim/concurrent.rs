//! Concurrent bounded-FIFO simulation of a kernel state.
//!
//! Every weakly connected component executes as an independent sequential
//! process. Pushes block when a FIFO is at capacity, pops block when it is
//! empty. The scheduler is a deterministic round-robin over processing
//! elements, each advancing by one externally visible step (push, pop, or
//! tasklet evaluation) per turn. The run ends when all PEs complete, when
//! every unfinished PE is blocked (deadlock), or at the step limit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use serde::Serialize;

use super::reference::{compute_assigns, guard_passes, unflatten};
use super::schedule::{build_schedule, CopyOp, Step, TaskOp};
use super::{point_indices, stream_instance, SimError, TensorStore, Value};
use crate::analysis::{connected_components, pe_instance_names};
use crate::ir::{ContainerKind, Sdfg, StateId};
use crate::symbolic::SymBinding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PeStatus {
    Completed,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum TraceEvent {
    Push {
        stream: String,
        instance: usize,
        count: u64,
    },
    Pop {
        stream: String,
        instance: usize,
        count: u64,
    },
    Compute {
        count: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct PeTrace {
    pub pe: usize,
    pub name: String,
    pub status: PeStatus,
    pub events: Vec<TraceEvent>,
}

impl PeTrace {
    /// Total pushes this PE performed into a stream instance.
    pub fn pushes_to(&self, stream: &str, instance: usize) -> u64 {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Push {
                    stream: s,
                    instance: i,
                    count,
                } if s == stream && *i == instance => *count,
                _ => 0,
            })
            .sum()
    }

    pub fn pops_from(&self, stream: &str, instance: usize) -> u64 {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Pop {
                    stream: s,
                    instance: i,
                    count,
                } if s == stream && *i == instance => *count,
                _ => 0,
            })
            .sum()
    }

    fn record(&mut self, event: TraceEvent) {
        if let (Some(last), new) = (self.events.last_mut(), &event) {
            match (last, new) {
                (
                    TraceEvent::Push {
                        stream: a,
                        instance: ia,
                        count,
                    },
                    TraceEvent::Push {
                        stream: b,
                        instance: ib,
                        ..
                    },
                ) if a == b && ia == ib => {
                    *count += 1;
                    return;
                }
                (
                    TraceEvent::Pop {
                        stream: a,
                        instance: ia,
                        count,
                    },
                    TraceEvent::Pop {
                        stream: b,
                        instance: ib,
                        ..
                    },
                ) if a == b && ia == ib => {
                    *count += 1;
                    return;
                }
                (TraceEvent::Compute { count }, TraceEvent::Compute { .. }) => {
                    *count += 1;
                    return;
                }
                _ => {}
            }
        }
        self.events.push(event);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    PushOnFull,
    PopOnEmpty,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockedPe {
    pub pe: usize,
    pub name: String,
    pub stream: String,
    pub instance: usize,
    pub op: BlockKind,
}

/// Emitted only when every unfinished PE is blocked.
#[derive(Debug, Clone, Serialize)]
pub struct DeadlockReport {
    pub blocked: Vec<BlockedPe>,
    /// A cycle of blocking dependencies (PE indices), if one exists.
    pub cycle: Option<Vec<usize>>,
}

#[derive(Debug)]
pub enum ConcurrentOutcome {
    Completed {
        store: TensorStore,
        traces: Vec<PeTrace>,
    },
    Deadlock(DeadlockReport),
}

impl ConcurrentOutcome {
    pub fn completed(self) -> Result<(TensorStore, Vec<PeTrace>), DeadlockReport> {
        match self {
            ConcurrentOutcome::Completed { store, traces } => Ok((store, traces)),
            ConcurrentOutcome::Deadlock(report) => Err(report),
        }
    }

    pub fn is_deadlock(&self) -> bool {
        matches!(self, ConcurrentOutcome::Deadlock(_))
    }

    /// Total pushes into a stream instance across all PEs.
    pub fn pushes_to(&self, stream: &str, instance: usize) -> u64 {
        match self {
            ConcurrentOutcome::Completed { traces, .. } => {
                traces.iter().map(|t| t.pushes_to(stream, instance)).sum()
            }
            ConcurrentOutcome::Deadlock(_) => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// The per-PE virtual machine
// ---------------------------------------------------------------------------

/// How a completed body frame continues in its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BodyDone {
    /// Root program: the PE is finished.
    Program,
    /// One loop iteration: the enclosing loop frame decides what is next.
    LoopIter,
}

enum Frame {
    Body {
        steps: Rc<Vec<Step>>,
        pc: usize,
        done: BodyDone,
    },
    Loop {
        param: String,
        /// Next iteration value to run.
        next: i128,
        end: i128,
        stride: i128,
        shadow: Option<i128>,
        body: Rc<Vec<Step>>,
    },
}

struct TaskProgress {
    op: Rc<TaskOp>,
    connectors: BTreeMap<String, Value>,
    next_input: usize,
    computed: Option<BTreeMap<String, Option<Value>>>,
    next_output: usize,
}

struct CopyProgress {
    op: CopyOp,
    pending: VecDeque<Value>,
    popped: Vec<Value>,
    remaining_pops: u64,
}

enum Work {
    Task(TaskProgress),
    Copy(CopyProgress),
}

struct Pe {
    index: usize,
    binding: SymBinding,
    frames: Vec<Frame>,
    work: Option<Work>,
    trace: PeTrace,
    blocked_on: Option<(String, usize, BlockKind)>,
    done: bool,
}

enum StepOutcome {
    Progressed,
    Blocked,
    Finished,
}

struct Fifos {
    queues: BTreeMap<String, Vec<VecDeque<Value>>>,
    capacities: BTreeMap<String, usize>,
}

impl Fifos {
    fn capacity(&self, stream: &str) -> usize {
        self.capacities.get(stream).copied().unwrap_or(1)
    }
}

/// Runs a device kernel state concurrently. `store` provides the starting
/// contents of device memory; `depth_override` replaces FIFO capacities per
/// stream container.
pub fn run_concurrent(
    sdfg: &Sdfg,
    state_id: StateId,
    store: TensorStore,
    binding: &SymBinding,
    depth_override: Option<&BTreeMap<String, u32>>,
    step_limit: u64,
) -> Result<ConcurrentOutcome, SimError> {
    if !sdfg.is_device_kernel_state(state_id) {
        return Err(SimError::Graph(format!(
            "state `{}` is not a device kernel state",
            sdfg.state(state_id).name
        )));
    }
    let state = sdfg.state(state_id);
    let pes = connected_components(sdfg, state_id);
    let names = pe_instance_names(sdfg, &pes);

    // FIFO state, with capacities from descriptors or the override.
    let mut fifos = Fifos {
        queues: BTreeMap::new(),
        capacities: BTreeMap::new(),
    };
    for desc in sdfg.containers.values() {
        if desc.kind != ContainerKind::Stream {
            continue;
        }
        let capacity = depth_override
            .and_then(|m| m.get(&desc.name).copied())
            .unwrap_or_else(|| sdfg.stream_capacity(&desc.name));
        if capacity < 1 {
            return Err(SimError::BadCapacity(desc.name.clone()));
        }
        let count = desc.element_count(binding)?.max(1) as usize;
        fifos
            .queues
            .insert(desc.name.clone(), vec![VecDeque::new(); count]);
        fifos.capacities.insert(desc.name.clone(), capacity as usize);
    }

    let mut store = store;
    // Per-machine programs: a component whose whole schedule is a top-level
    // unrolled map splits into one machine per instance, with the map
    // parameter bound per instance. Static stream push/pop sets back the
    // deadlock diagnosis.
    let mut static_pushes: Vec<BTreeSet<String>> = Vec::new();
    let mut static_pops: Vec<BTreeSet<String>> = Vec::new();
    let mut machines: Vec<Pe> = Vec::new();
    let mut instance_counter: BTreeMap<usize, i128> = BTreeMap::new();
    for (machine_idx, (comp_idx, name)) in names.iter().enumerate() {
        let comp = &pes.components[*comp_idx];
        let members: BTreeSet<crate::ir::NodeId> = comp.nodes.iter().copied().collect();
        let steps = build_schedule(sdfg, state, Some(&members))?;
        let mut machine_binding = binding.clone();
        let steps = match unrolled_top(&steps) {
            Some((param, begin, stride, body)) if comp.instances > 1 => {
                let inst = instance_counter.entry(*comp_idx).or_insert(0);
                machine_binding.set(param, begin + *inst * stride);
                *inst += 1;
                Rc::new(body)
            }
            _ => Rc::new(steps),
        };
        let (pushes, pops) = stream_sets(&steps);
        static_pushes.push(pushes);
        static_pops.push(pops);
        machines.push(Pe {
            index: machine_idx,
            binding: machine_binding,
            frames: vec![Frame::Body {
                steps: steps.clone(),
                pc: 0,
                done: BodyDone::Program,
            }],
            work: None,
            trace: PeTrace {
                pe: machine_idx,
                name: name.clone(),
                status: PeStatus::Completed,
                events: Vec::new(),
            },
            blocked_on: None,
            done: false,
        });
    }

    let mut steps_taken: u64 = 0;
    loop {
        let mut any_progress = false;
        let mut all_done = true;
        for pe in machines.iter_mut() {
            if pe.done {
                continue;
            }
            all_done = false;
            match pe.step(sdfg, &mut store, &mut fifos)? {
                StepOutcome::Progressed => {
                    any_progress = true;
                    steps_taken += 1;
                    if steps_taken > step_limit {
                        return Err(SimError::StepLimit(step_limit));
                    }
                }
                StepOutcome::Blocked => {}
                StepOutcome::Finished => {
                    pe.done = true;
                    any_progress = true;
                }
            }
        }
        if all_done {
            let traces = machines.into_iter().map(|m| m.trace).collect();
            return Ok(ConcurrentOutcome::Completed { store, traces });
        }
        if !any_progress {
            return Ok(ConcurrentOutcome::Deadlock(build_deadlock_report(
                &machines,
                &static_pushes,
                &static_pops,
            )));
        }
    }
}

fn stream_sets(steps: &[Step]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut pushes = BTreeSet::new();
    let mut pops = BTreeSet::new();
    fn walk(steps: &[Step], pushes: &mut BTreeSet<String>, pops: &mut BTreeSet<String>) {
        for step in steps {
            match step {
                Step::Loop { body, .. } => walk(body, pushes, pops),
                Step::Task(op) => {
                    for i in &op.inputs {
                        if i.stream {
                            pops.insert(i.data.clone());
                        }
                    }
                    for o in &op.outputs {
                        if o.stream {
                            pushes.insert(o.data.clone());
                        }
                    }
                }
                Step::Copy(op) => {
                    pops.insert(op.src.clone());
                    pushes.insert(op.dst.clone());
                }
                _ => {}
            }
        }
    }
    walk(steps, &mut pushes, &mut pops);
    (pushes, pops)
}

/// Destructures a schedule that is exactly one top-level unrolled map.
/// Returns (param, begin, stride, body).
fn unrolled_top(steps: &[Step]) -> Option<(String, i128, i128, Vec<Step>)> {
    if steps.len() != 1 {
        return None;
    }
    let Step::Loop {
        params,
        ranges,
        schedule: crate::ir::MapSchedule::Unrolled,
        body,
    } = &steps[0]
    else {
        return None;
    };
    if params.len() != 1 {
        return None;
    }
    let begin = ranges[0].begin.as_int()?;
    let stride = ranges[0].stride.as_int()?;
    Some((params[0].clone(), begin, stride, body.clone()))
}

fn build_deadlock_report(
    machines: &[Pe],
    static_pushes: &[BTreeSet<String>],
    static_pops: &[BTreeSet<String>],
) -> DeadlockReport {
    let mut blocked = Vec::new();
    for pe in machines {
        if pe.done {
            continue;
        }
        if let Some((stream, instance, op)) = &pe.blocked_on {
            blocked.push(BlockedPe {
                pe: pe.index,
                name: pe.trace.name.clone(),
                stream: stream.clone(),
                instance: *instance,
                op: *op,
            });
        }
    }
    // Blocking dependency edges: a pop-blocked PE waits on the producers of
    // the stream; a push-blocked PE waits on its consumers.
    let blocked_set: BTreeSet<usize> = blocked.iter().map(|b| b.pe).collect();
    let mut edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for b in &blocked {
        let candidates: Vec<usize> = machines
            .iter()
            .map(|m| m.index)
            .filter(|idx| {
                *idx != b.pe
                    && match b.op {
                        BlockKind::PopOnEmpty => static_pushes[*idx].contains(&b.stream),
                        BlockKind::PushOnFull => static_pops[*idx].contains(&b.stream),
                    }
            })
            .collect();
        edges.insert(b.pe, candidates);
    }
    // Find a cycle within the blocked set.
    let cycle = find_cycle(&blocked_set, &edges);
    DeadlockReport { blocked, cycle }
}

fn find_cycle(
    blocked: &BTreeSet<usize>,
    edges: &BTreeMap<usize, Vec<usize>>,
) -> Option<Vec<usize>> {
    for &start in blocked {
        let mut path = vec![start];
        let mut seen = BTreeSet::new();
        seen.insert(start);
        if dfs(start, start, blocked, edges, &mut path, &mut seen) {
            return Some(path);
        }
    }
    None
}

fn dfs(
    start: usize,
    current: usize,
    blocked: &BTreeSet<usize>,
    edges: &BTreeMap<usize, Vec<usize>>,
    path: &mut Vec<usize>,
    seen: &mut BTreeSet<usize>,
) -> bool {
    for &next in edges.get(&current).into_iter().flatten() {
        if next == start && path.len() > 1 {
            return true;
        }
        if blocked.contains(&next) && seen.insert(next) {
            path.push(next);
            if dfs(start, next, blocked, edges, path, seen) {
                return true;
            }
            path.pop();
        }
    }
    false
}

// Internal bookkeeping budget per visible step; prevents spinning on
// degenerate empty loops inside a single turn.
const INTERNAL_BUDGET: u32 = 65536;

impl Pe {
    fn step(
        &mut self,
        sdfg: &Sdfg,
        store: &mut TensorStore,
        fifos: &mut Fifos,
    ) -> Result<StepOutcome, SimError> {
        let mut budget = INTERNAL_BUDGET;
        loop {
            if budget == 0 {
                return Ok(StepOutcome::Progressed);
            }
            budget -= 1;

            if self.work.is_some() {
                match self.resume_work(sdfg, store, fifos)? {
                    WorkOutcome::Visible => {
                        self.blocked_on = None;
                        return Ok(StepOutcome::Progressed);
                    }
                    WorkOutcome::Blocked(stream, instance, kind) => {
                        self.blocked_on = Some((stream, instance, kind));
                        self.trace.status = PeStatus::Blocked;
                        return Ok(StepOutcome::Blocked);
                    }
                    WorkOutcome::Done => {
                        self.work = None;
                        self.bump_pc();
                        continue;
                    }
                }
            }

            let Some(frame) = self.frames.last_mut() else {
                self.trace.status = PeStatus::Completed;
                self.blocked_on = None;
                return Ok(StepOutcome::Finished);
            };
            match frame {
                Frame::Body { steps, pc, done } => {
                    if *pc >= steps.len() {
                        let done = *done;
                        self.frames.pop();
                        match done {
                            BodyDone::Program => {
                                self.trace.status = PeStatus::Completed;
                                self.blocked_on = None;
                                return Ok(StepOutcome::Finished);
                            }
                            BodyDone::LoopIter => continue,
                        }
                    }
                    let step = steps[*pc].clone();
                    match step {
                        Step::Loop {
                            params,
                            ranges,
                            body,
                            ..
                        } => {
                            self.enter_loop(&params, &ranges, Rc::new(body))?;
                            continue;
                        }
                        Step::Task(op) => {
                            self.work = Some(Work::Task(TaskProgress {
                                op: Rc::new(op),
                                connectors: BTreeMap::new(),
                                next_input: 0,
                                computed: None,
                                next_output: 0,
                            }));
                            continue;
                        }
                        Step::Copy(op) => {
                            self.start_copy(sdfg, store, op)?;
                            continue;
                        }
                        Step::Library(_) => {
                            return Err(SimError::Graph(
                                "library nodes must be expanded before concurrent simulation"
                                    .to_string(),
                            ))
                        }
                        Step::Nested(_) => {
                            return Err(SimError::Graph(
                                "nested graphs are not supported by the concurrent engine"
                                    .to_string(),
                            ))
                        }
                    }
                }
                Frame::Loop {
                    param,
                    next,
                    end,
                    stride,
                    body,
                    ..
                } => {
                    if *next <= *end {
                        let value = *next;
                        *next += *stride;
                        let param = param.clone();
                        let body = body.clone();
                        self.binding.set(param, value);
                        self.frames.push(Frame::Body {
                            steps: body,
                            pc: 0,
                            done: BodyDone::LoopIter,
                        });
                    } else {
                        self.pop_loop_frame();
                        self.bump_pc();
                    }
                    continue;
                }
            }
        }
    }

    /// Dispatches a (possibly multi-parameter) map step: the outermost level
    /// becomes a loop frame; deeper levels nest as synthetic loop steps so
    /// their ranges are evaluated with outer parameters bound.
    fn enter_loop(
        &mut self,
        params: &[String],
        ranges: &[crate::ir::RangeExpr],
        body: Rc<Vec<Step>>,
    ) -> Result<(), SimError> {
        if params.is_empty() {
            // Degenerate map: run the body once as a loop iteration and
            // advance past the step immediately.
            self.bump_pc();
            self.frames.push(Frame::Body {
                steps: body,
                pc: 0,
                done: BodyDone::LoopIter,
            });
            return Ok(());
        }
        let range = &ranges[0];
        let begin = range.begin.evaluate(&self.binding)?;
        let end = range.end.evaluate(&self.binding)?;
        let stride = range.stride.evaluate(&self.binding)?;
        if stride <= 0 {
            return Err(SimError::Graph(format!(
                "map range stride must be positive, got {stride}"
            )));
        }
        let inner_body = if params.len() == 1 {
            body
        } else {
            Rc::new(vec![Step::Loop {
                params: params[1..].to_vec(),
                ranges: ranges[1..].to_vec(),
                schedule: crate::ir::MapSchedule::Pipelined,
                body: body.as_ref().clone(),
            }])
        };
        let shadow = self.binding.remove(&params[0]);
        self.frames.push(Frame::Loop {
            param: params[0].clone(),
            next: begin,
            end,
            stride,
            shadow,
            body: inner_body,
        });
        Ok(())
    }

    fn pop_loop_frame(&mut self) {
        if let Some(Frame::Loop { param, shadow, .. }) = self.frames.pop() {
            match shadow {
                Some(v) => self.binding.set(param, v),
                None => {
                    self.binding.remove(&param);
                }
            }
        }
    }

    /// Advances past the step that just completed in the innermost body.
    fn bump_pc(&mut self) {
        if let Some(Frame::Body { pc, .. }) = self.frames.last_mut() {
            *pc += 1;
        }
    }

    fn start_copy(
        &mut self,
        sdfg: &Sdfg,
        store: &mut TensorStore,
        op: CopyOp,
    ) -> Result<(), SimError> {
        let src_is_stream = sdfg
            .container(&op.src)
            .map(|d| d.kind == ContainerKind::Stream)
            .unwrap_or(false);
        let dst_is_stream = sdfg
            .container(&op.dst)
            .map(|d| d.kind == ContainerKind::Stream)
            .unwrap_or(false);
        let mut progress = CopyProgress {
            pending: VecDeque::new(),
            popped: Vec::new(),
            remaining_pops: 0,
            op,
        };
        if src_is_stream && dst_is_stream {
            return Err(SimError::Graph(
                "stream-to-stream copies are not defined".to_string(),
            ));
        }
        if src_is_stream {
            progress.remaining_pops = store.tensor(&progress.op.dst)?.element_count();
        } else if dst_is_stream {
            let tensor = store.tensor(&progress.op.src)?.clone();
            let shape = tensor.shape.clone();
            for flat in 0..tensor.element_count() {
                let idx = unflatten(flat, &shape);
                progress.pending.push_back(tensor.read(&progress.op.src, &idx)?);
            }
        }
        self.work = Some(Work::Copy(progress));
        Ok(())
    }

    fn resume_work(
        &mut self,
        sdfg: &Sdfg,
        store: &mut TensorStore,
        fifos: &mut Fifos,
    ) -> Result<WorkOutcome, SimError> {
        let Some(work) = self.work.as_mut() else {
            return Ok(WorkOutcome::Done);
        };
        match work {
            Work::Task(task) => {
                // Input phase: one pop per visible step.
                while task.next_input < task.op.inputs.len() {
                    let bind = &task.op.inputs[task.next_input];
                    if !guard_passes(&bind.guard, &self.binding)? {
                        task.connectors
                            .insert(bind.connector.clone(), Value::zero_of(bind.elem));
                        task.next_input += 1;
                        continue;
                    }
                    if bind.stream {
                        let desc = sdfg
                            .container(&bind.data)
                            .ok_or_else(|| SimError::UnknownContainer(bind.data.clone()))?;
                        let instance = stream_instance(desc, &bind.subset, &self.binding)?;
                        let queue = fifos
                            .queues
                            .get_mut(&bind.data)
                            .ok_or_else(|| SimError::UnknownContainer(bind.data.clone()))?
                            .get_mut(instance)
                            .ok_or_else(|| SimError::OutOfBounds {
                                name: bind.data.clone(),
                                index: vec![instance as i64],
                                shape: vec![],
                            })?;
                        let Some(value) = queue.pop_front() else {
                            return Ok(WorkOutcome::Blocked(
                                bind.data.clone(),
                                instance,
                                BlockKind::PopOnEmpty,
                            ));
                        };
                        self.trace.record(TraceEvent::Pop {
                            stream: bind.data.clone(),
                            instance,
                            count: 1,
                        });
                        task.connectors.insert(bind.connector.clone(), value);
                        task.next_input += 1;
                        return Ok(WorkOutcome::Visible);
                    }
                    let idx = point_indices(&bind.data, &bind.subset, &self.binding)?;
                    let value = store.tensor(&bind.data)?.read(&bind.data, &idx)?;
                    task.connectors.insert(bind.connector.clone(), value);
                    task.next_input += 1;
                }
                // Compute phase: one visible step; array writes happen here.
                if task.computed.is_none() {
                    let values =
                        compute_assigns(&task.op, std::mem::take(&mut task.connectors), &self.binding)?;
                    for out in &task.op.outputs {
                        if out.stream {
                            continue;
                        }
                        let Some(Some(value)) = values.get(&out.connector) else {
                            continue;
                        };
                        let idx = point_indices(&out.data, &out.subset, &self.binding)?;
                        store
                            .tensor_mut(&out.data)?
                            .write(&out.data, &idx, value, out.wcr)?;
                    }
                    task.computed = Some(values);
                    self.trace.record(TraceEvent::Compute { count: 1 });
                    return Ok(WorkOutcome::Visible);
                }
                // Output phase: one push per visible step.
                let values = task.computed.as_ref().unwrap();
                while task.next_output < task.op.outputs.len() {
                    let out = &task.op.outputs[task.next_output];
                    if !out.stream {
                        task.next_output += 1;
                        continue;
                    }
                    let Some(Some(value)) = values.get(&out.connector) else {
                        task.next_output += 1;
                        continue;
                    };
                    let desc = sdfg
                        .container(&out.data)
                        .ok_or_else(|| SimError::UnknownContainer(out.data.clone()))?;
                    let instance = stream_instance(desc, &out.subset, &self.binding)?;
                    let capacity = fifos.capacity(&out.data);
                    let queue = fifos
                        .queues
                        .get_mut(&out.data)
                        .ok_or_else(|| SimError::UnknownContainer(out.data.clone()))?
                        .get_mut(instance)
                        .ok_or_else(|| SimError::OutOfBounds {
                            name: out.data.clone(),
                            index: vec![instance as i64],
                            shape: vec![],
                        })?;
                    if queue.len() >= capacity {
                        return Ok(WorkOutcome::Blocked(
                            out.data.clone(),
                            instance,
                            BlockKind::PushOnFull,
                        ));
                    }
                    queue.push_back(value.clone());
                    self.trace.record(TraceEvent::Push {
                        stream: out.data.clone(),
                        instance,
                        count: 1,
                    });
                    task.next_output += 1;
                    return Ok(WorkOutcome::Visible);
                }
                Ok(WorkOutcome::Done)
            }
            Work::Copy(copy) => {
                // Stream-to-array: pop one element per step, then write out.
                if copy.remaining_pops > 0 {
                    let queue = fifos
                        .queues
                        .get_mut(&copy.op.src)
                        .ok_or_else(|| SimError::UnknownContainer(copy.op.src.clone()))?
                        .get_mut(0)
                        .unwrap();
                    let Some(value) = queue.pop_front() else {
                        return Ok(WorkOutcome::Blocked(
                            copy.op.src.clone(),
                            0,
                            BlockKind::PopOnEmpty,
                        ));
                    };
                    self.trace.record(TraceEvent::Pop {
                        stream: copy.op.src.clone(),
                        instance: 0,
                        count: 1,
                    });
                    copy.popped.push(value);
                    copy.remaining_pops -= 1;
                    if copy.remaining_pops == 0 {
                        let tensor = store.tensor_mut(&copy.op.dst)?;
                        let shape = tensor.shape.clone();
                        for (flat, value) in copy.popped.iter().enumerate() {
                            let idx = unflatten(flat as u64, &shape);
                            tensor.write(&copy.op.dst, &idx, value, None)?;
                        }
                    }
                    return Ok(WorkOutcome::Visible);
                }
                // Array-to-stream: push one element per step.
                if let Some(value) = copy.pending.front().cloned() {
                    let capacity = fifos.capacity(&copy.op.dst);
                    let queue = fifos
                        .queues
                        .get_mut(&copy.op.dst)
                        .ok_or_else(|| SimError::UnknownContainer(copy.op.dst.clone()))?
                        .get_mut(0)
                        .unwrap();
                    if queue.len() >= capacity {
                        return Ok(WorkOutcome::Blocked(
                            copy.op.dst.clone(),
                            0,
                            BlockKind::PushOnFull,
                        ));
                    }
                    queue.push_back(value);
                    copy.pending.pop_front();
                    self.trace.record(TraceEvent::Push {
                        stream: copy.op.dst.clone(),
                        instance: 0,
                        count: 1,
                    });
                    return Ok(WorkOutcome::Visible);
                }
                // Array-to-array: the whole copy is one visible step.
                if !copy.pending.is_empty() || copy.remaining_pops > 0 {
                    return Ok(WorkOutcome::Done);
                }
                let src_is_stream = sdfg
                    .container(&copy.op.src)
                    .map(|d| d.kind == ContainerKind::Stream)
                    .unwrap_or(false);
                let dst_is_stream = sdfg
                    .container(&copy.op.dst)
                    .map(|d| d.kind == ContainerKind::Stream)
                    .unwrap_or(false);
                if !src_is_stream && !dst_is_stream {
                    let data = store.tensor(&copy.op.src)?.data.clone();
                    let dst = store.tensor_mut(&copy.op.dst)?;
                    dst.data = data;
                    self.trace.record(TraceEvent::Compute { count: 1 });
                    self.work = None;
                    self.bump_pc();
                    return Ok(WorkOutcome::Visible);
                }
                Ok(WorkOutcome::Done)
            }
        }
    }
}

enum WorkOutcome {
    Visible,
    Blocked(String, usize, BlockKind),
    Done,
}
