//! Discrete-event loop driving the scheduler, rebalancer and garbage
//! collector over a scripted scenario.
//!
//! Each [`Engine::step`] advances the clock to the next activation and runs,
//! in this order: initial setup (first step only), due timers (delayed
//! bindings and migration landings), external events in input order, a
//! scheduler cycle, a rebalancer step and a GC sweep.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::cluster::{
    validate_state, ClusterState, DeletionMode, ImageSpec, NodeSpec, Phase, PriorityClass, ServiceSpec, Violation,
};
use crate::error::ClusterError;
use crate::gc::{clear_finalizer, delete_object, gc_sweep, DeleteOutcome, GcConfig};
use crate::journal::{EvictionCause, Journal, LogRecord, Mutation};
use crate::metrics::{metrics_summary, MetricsReport};
use crate::rebalancer::{
    land_migration, plan_rebalance, start_migration, ManualMove, Migration, RebalanceConfig, Strategy,
};
use crate::scheduler::{run_cycle, SchedulerOptions, SchedulingQueue};
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    SubmitService {
        spec: ServiceSpec,
        /// Binds straight to this node instead of going through the queue.
        initial_node: Option<String>,
    },
    CompleteService {
        service: String,
        phase: Phase,
    },
    NodeDown {
        node: String,
    },
    NodeUp {
        node: String,
    },
    DeleteObject {
        object: String,
        mode: DeletionMode,
    },
    UpdatePriorityClass {
        class: PriorityClass,
    },
    ManualRebalance {
        moves: Vec<ManualMove>,
    },
    /// No effect beyond making the time an activation.
    Tick,
    /// Evicts every running service and sends it back to the queue.
    FullClusterRestart,
    ClearFinalizer {
        object: String,
        finalizer: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SubmitService { .. } => "submit-service",
            EventKind::CompleteService { .. } => "complete-service",
            EventKind::NodeDown { .. } => "node-down",
            EventKind::NodeUp { .. } => "node-up",
            EventKind::DeleteObject { .. } => "delete-object",
            EventKind::UpdatePriorityClass { .. } => "update-priority-class",
            EventKind::ManualRebalance { .. } => "manual-rebalance",
            EventKind::Tick => "tick",
            EventKind::FullClusterRestart => "full-cluster-restart",
            EventKind::ClearFinalizer { .. } => "clear-finalizer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub kind: EventKind,
}

/// Objects present before the first event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Setup {
    pub nodes: Vec<NodeSpec>,
    pub priority_classes: Vec<PriorityClass>,
    pub images: Vec<ImageSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// 0 runs a scheduler cycle at every activation.
    pub scheduler_period_secs: SimTime,
    /// 0 disables periodic sweeps.
    pub gc_sweep_period_secs: SimTime,
    pub eviction_delay_secs: SimTime,
    pub rebalance: RebalanceConfig,
    pub gc: GcConfig,
    /// Only used by randomized scenario generators; the engine is
    /// deterministic.
    pub seed: u64,
    /// Runs [`validate_state`] after every step.
    pub check_invariants: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scheduler_period_secs: 0,
            gc_sweep_period_secs: 60,
            eviction_delay_secs: 1,
            rebalance: RebalanceConfig::default(),
            gc: GcConfig::default(),
            seed: 0,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("at t={time}: {error}")]
    Cluster { time: SimTime, error: ClusterError },
    #[error("at t={time}: invariant violated: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invariant { time: SimTime, violations: Vec<Violation> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Timer {
    Bind { service: String, node: String },
    Land(Migration),
}

/// What one [`Engine::step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub time: SimTime,
    /// Number of log records this step appended.
    pub emitted: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ClusterState,
    pub queue: SchedulingQueue,
    pub log: Vec<LogRecord>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Engine {
    journal: Journal,
    config: EngineConfig,
    setup: Option<Setup>,
    events: VecDeque<SimEvent>,
    timers: BTreeMap<SimTime, Vec<Timer>>,
    manual: VecDeque<ManualMove>,
    in_flight: BTreeSet<String>,
    window_starts: BTreeSet<SimTime>,
    horizon: SimTime,
    next_scheduler: Option<SimTime>,
    next_gc: Option<SimTime>,
    stepped: bool,
}

impl Engine {
    /// Events must be sorted by time; equal times keep their input order.
    pub fn new(setup: Setup, events: Vec<SimEvent>, config: EngineConfig) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].time <= w[1].time));
        let horizon = events.last().map_or(0, |e| e.time);
        let window_starts = config.rebalance.windows.iter().map(|w| w.start).collect();
        let manual = match &config.rebalance.strategy {
            Strategy::Manual(moves) => moves.iter().cloned().collect(),
            Strategy::Automatic => VecDeque::new(),
        };
        let empty = setup == Setup::default() && events.is_empty();
        Self {
            journal: Journal::default(),
            next_scheduler: (config.scheduler_period_secs > 0 && !empty).then_some(0),
            next_gc: (config.gc_sweep_period_secs > 0 && !empty).then_some(0),
            config,
            setup: (!empty).then_some(setup),
            events: events.into(),
            timers: BTreeMap::new(),
            manual,
            in_flight: BTreeSet::new(),
            window_starts,
            horizon,
            stepped: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.journal.now()
    }

    pub fn state(&self) -> &ClusterState {
        &self.journal.state
    }

    pub fn queue(&self) -> &SchedulingQueue {
        &self.journal.queue
    }

    pub fn log(&self) -> &[LogRecord] {
        self.journal.records()
    }

    /// Time of the next activation, or `None` once the run is over.
    pub fn next_activation(&self) -> Option<SimTime> {
        let now = self.now();
        let mut next: Option<SimTime> = None;
        let mut consider = |t: Option<SimTime>| {
            if let Some(t) = t {
                next = Some(next.map_or(t, |n| n.min(t)));
            }
        };
        if self.setup.is_some() {
            consider(Some(0));
        }
        consider(self.timers.keys().next().copied());
        consider(self.events.front().map(|e| e.time));
        let periodic = |t: Option<SimTime>| t.filter(|&t| t <= self.horizon);
        consider(periodic(self.next_scheduler));
        consider(periodic(self.next_gc));
        let pending_start = if self.stepped {
            self.window_starts.range(now + 1..).next()
        } else {
            self.window_starts.range(now..).next()
        };
        consider(pending_start.copied());
        next
    }

    pub fn is_finished(&self) -> bool {
        self.next_activation().is_none()
    }

    /// Advances to the next activation and runs everything due then.
    pub fn step(&mut self) -> Result<Option<StepReport>, EngineError> {
        let Some(time) = self.next_activation() else {
            return Ok(None);
        };
        let before = self.journal.records().len();
        self.journal.set_now(time);
        self.stepped = true;
        self.run_step(time)
            .map_err(|error| EngineError::Cluster { time, error })?;
        if self.config.check_invariants {
            let violations = validate_state(&self.journal.state);
            if !violations.is_empty() {
                return Err(EngineError::Invariant { time, violations });
            }
        }
        Ok(Some(StepReport {
            time,
            emitted: self.journal.records().len() - before,
        }))
    }

    /// Runs every activation strictly before `until` (all of them if `None`).
    pub fn run_until(&mut self, until: Option<SimTime>) -> Result<(), EngineError> {
        while let Some(t) = self.next_activation() {
            if until.is_some_and(|u| t >= u) {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        let (state, queue, log) = self.journal.into_parts();
        let report = metrics_summary(&log).expect("engine logs always replay");
        RunOutput {
            state,
            queue,
            log,
            report,
        }
    }

    pub fn run(mut self, until: Option<SimTime>) -> Result<RunOutput, EngineError> {
        self.run_until(until)?;
        Ok(self.finish())
    }

    fn run_step(&mut self, now: SimTime) -> Result<(), ClusterError> {
        if let Some(setup) = self.setup.take() {
            self.apply_setup(setup)?;
        }

        if let Some(due) = self.timers.remove(&now) {
            for timer in due {
                self.fire(timer)?;
            }
        }

        while self.events.front().is_some_and(|e| e.time == now) {
            let event = self.events.pop_front().expect("checked");
            self.external(event.kind)?;
        }

        let period = self.config.scheduler_period_secs;
        let scheduler_due = if period == 0 {
            true
        } else if self.next_scheduler == Some(now) {
            self.next_scheduler = now.checked_add(period);
            true
        } else {
            false
        };
        if scheduler_due && !self.journal.queue.is_empty() {
            self.schedule()?;
        }

        self.rebalance(now)?;

        if self.next_gc == Some(now) {
            self.next_gc = now.checked_add(self.config.gc_sweep_period_secs);
            gc_sweep(&mut self.journal, &self.config.gc)?;
        }
        Ok(())
    }

    fn apply_setup(&mut self, setup: Setup) -> Result<(), ClusterError> {
        for class in setup.priority_classes {
            self.journal.emit(Mutation::PriorityClassRegistered { class })?;
        }
        for node in setup.nodes {
            self.journal.emit(Mutation::NodeRegistered { node })?;
        }
        for image in setup.images {
            self.journal.emit(Mutation::ImageRegistered { image })?;
        }
        Ok(())
    }

    fn fire(&mut self, timer: Timer) -> Result<(), ClusterError> {
        match timer {
            Timer::Bind { service, node } => {
                let held = self
                    .journal
                    .state
                    .nodes
                    .get(&node)
                    .is_some_and(|n| n.reserved.contains_key(&service));
                if held {
                    self.journal.emit(Mutation::Placed { service, node })?;
                }
            }
            Timer::Land(mv) => {
                self.in_flight.remove(&mv.service);
                land_migration(&mut self.journal, &mv)?;
            }
        }
        Ok(())
    }

    fn reject(&mut self, event: &EventKind, reason: impl ToString) -> Result<(), ClusterError> {
        self.journal.emit(Mutation::Rejected {
            event: event.name().to_string(),
            reason: reason.to_string(),
        })
    }

    fn external(&mut self, event: EventKind) -> Result<(), ClusterError> {
        let outcome = self.try_external(&event);
        match outcome {
            Ok(()) => Ok(()),
            Err(e) => self.reject(&event, e),
        }
    }

    /// Applies one external event. An error means nothing was changed and
    /// the event is logged as rejected.
    fn try_external(&mut self, event: &EventKind) -> Result<(), ClusterError> {
        match event {
            EventKind::SubmitService { spec, initial_node } => {
                self.journal.emit(Mutation::Submitted { spec: spec.clone() })?;
                if let Some(node) = initial_node {
                    let direct = Mutation::Placed {
                        service: spec.id.clone(),
                        node: node.clone(),
                    };
                    if let Err(e) = self.journal.emit(direct) {
                        self.reject(event, format!("{}: initial placement failed: {e}", spec.id))?;
                        self.journal.enqueue(&spec.id)?;
                    }
                } else {
                    self.journal.enqueue(&spec.id)?;
                }
            }
            EventKind::CompleteService { service, phase } => {
                self.release_hold(service)?;
                self.journal.emit(Mutation::Finished {
                    service: service.clone(),
                    phase: *phase,
                })?;
            }
            EventKind::NodeDown { node } => {
                let n = self.journal.state.node(node)?;
                if !n.is_up() {
                    return Err(ClusterError::NodeUnavailable(node.clone()));
                }
                self.evict_node(node, EvictionCause::NodeDown)?;
                self.journal.emit(Mutation::NodeDown { node: node.clone() })?;
            }
            EventKind::NodeUp { node } => {
                self.journal.emit(Mutation::NodeUp { node: node.clone() })?;
            }
            EventKind::DeleteObject { object, mode } => {
                self.release_hold(object)?;
                let (outcome, _) = delete_object(&mut self.journal, object, *mode)?;
                if outcome == DeleteOutcome::AlreadyDeleting {
                    return Err(ClusterError::AlreadyDeleting(object.clone()));
                }
            }
            EventKind::UpdatePriorityClass { class } => {
                let m = if self.journal.state.priority_classes.contains_key(&class.name) {
                    Mutation::PriorityClassUpdated { class: class.clone() }
                } else {
                    Mutation::PriorityClassRegistered { class: class.clone() }
                };
                self.journal.emit(m)?;
            }
            EventKind::ManualRebalance { moves } => {
                self.manual.extend(moves.iter().cloned());
            }
            EventKind::Tick => {}
            EventKind::FullClusterRestart => {
                let nodes: Vec<String> = self.journal.state.up_nodes().map(|n| n.id.clone()).collect();
                for node in nodes {
                    self.evict_node(&node, EvictionCause::Restart)?;
                }
            }
            EventKind::ClearFinalizer { object, finalizer } => {
                clear_finalizer(&mut self.journal, object, finalizer)?;
            }
        }
        Ok(())
    }

    /// Cancels a pending delayed binding or in-flight migration for a
    /// service about to leave the scheduler's hands.
    fn release_hold(&mut self, service: &str) -> Result<(), ClusterError> {
        self.in_flight.remove(service);
        for timers in self.timers.values_mut() {
            timers.retain(|t| match t {
                Timer::Bind { service: s, .. } => s != service,
                Timer::Land(m) => m.service != service,
            });
        }
        self.timers.retain(|_, v| !v.is_empty());
        Ok(())
    }

    /// Evicts everything on `node` and returns it all to the queue.
    fn evict_node(&mut self, node: &str, cause: EvictionCause) -> Result<(), ClusterError> {
        let n = self.journal.state.node(node)?;
        let placed: Vec<String> = n.placed.iter().cloned().collect();
        let reserved: Vec<String> = n.reserved.keys().cloned().collect();
        for service in reserved {
            self.release_hold(&service)?;
            self.journal.emit(Mutation::Unreserved {
                service: service.clone(),
                node: node.to_string(),
            })?;
            self.journal.enqueue(&service)?;
        }
        for service in placed {
            self.journal.emit(Mutation::Evicted {
                service: service.clone(),
                node: node.to_string(),
                cause,
            })?;
            self.journal.enqueue(&service)?;
        }
        Ok(())
    }

    fn schedule(&mut self) -> Result<(), ClusterError> {
        let opts = SchedulerOptions {
            eviction_delay_secs: self.config.eviction_delay_secs,
        };
        let report = run_cycle(&mut self.journal, &opts)?;
        let at = self.now() + self.config.eviction_delay_secs;
        for b in report.bindings {
            self.timers.entry(at).or_default().push(Timer::Bind {
                service: b.service,
                node: b.node,
            });
        }
        Ok(())
    }

    fn rebalance(&mut self, now: SimTime) -> Result<(), ClusterError> {
        if !self.in_flight.is_empty() {
            return Ok(());
        }
        let manual = !self.manual.is_empty();
        let mut config = self.config.rebalance.clone();
        config.strategy = if manual {
            Strategy::Manual(self.manual.iter().cloned().collect())
        } else if matches!(self.config.rebalance.strategy, Strategy::Manual(_)) {
            return Ok(());
        } else {
            Strategy::Automatic
        };

        let plan = loop {
            match plan_rebalance(&self.journal.state, &config, now) {
                Ok(plan) => break plan,
                Err(ClusterError::InvalidMove {
                    service,
                    target,
                    reason,
                }) => {
                    let pos = self
                        .manual
                        .iter()
                        .position(|m| m.service == service && m.target == target)
                        .expect("invalid move comes from the manual queue");
                    self.manual.remove(pos);
                    self.journal.emit(Mutation::Rejected {
                        event: "manual-rebalance".into(),
                        reason: ClusterError::InvalidMove {
                            service,
                            target,
                            reason,
                        }
                        .to_string(),
                    })?;
                    config.strategy = Strategy::Manual(self.manual.iter().cloned().collect());
                }
                Err(e) => return Err(e),
            }
        };

        if manual {
            for _ in 0..plan.moves.len() {
                self.manual.pop_front();
            }
        }
        for mv in plan.moves {
            start_migration(&mut self.journal, &mv)?;
            if self.config.eviction_delay_secs == 0 {
                land_migration(&mut self.journal, &mv)?;
            } else {
                self.in_flight.insert(mv.service.clone());
                let at = now + self.config.eviction_delay_secs;
                self.timers.entry(at).or_default().push(Timer::Land(mv));
            }
        }
        Ok(())
    }
}
