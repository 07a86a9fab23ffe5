//! Per-instance property checks. Each returns a description of the first
//! violation found.

use std::collections::BTreeSet;

use orchsim_core::builder::{svc, ClusterBuilder};
use orchsim_core::gc::{clear_finalizer, default_policy, delete_object, gc_sweep};
use orchsim_core::labels::has_no_reschedule;
use orchsim_core::rebalancer::in_maintenance_window;
use orchsim_core::scheduler::resolve_priority;
use orchsim_core::units::Seconds;
use orchsim_core::{
    replay, validate_state, DeletionCategory, DeletionMode, Engine, EngineConfig, EvictionCause, GcConfig, Journal,
    LogRecord, Mutation, ObjectKind, Phase, ResourceVector, RunOutput, TtlConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gen, oracle};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Steps through a log, handing each record to `f` together with the state
/// just before it.
fn walk(log: &[LogRecord], mut f: impl FnMut(usize, &Journal, &LogRecord) -> Check) -> Check {
    let mut j = Journal::default();
    for (i, rec) in log.iter().enumerate() {
        f(i, &j, rec)?;
        j.set_now(rec.time);
        j.emit(rec.mutation.clone())
            .map_err(|e| format!("record {i} does not replay: {e}"))?;
    }
    Ok(())
}

pub fn run_case(seed: u64) -> Result<(gen::EngineCase, RunOutput), String> {
    let case = gen::engine_case(&mut rng(seed));
    let out = Engine::new(case.setup.clone(), case.events.clone(), case.config.clone())
        .run(None)
        .map_err(|e| format!("engine failed: {e}"))?;
    Ok((case, out))
}

pub fn capacity_safety(out: &RunOutput) -> Check {
    let v = validate_state(&out.state);
    ensure!(v.is_empty(), "final state violates invariants: {v:?}");
    Ok(())
}

pub fn strict_priority_eviction(out: &RunOutput) -> Check {
    let log = &out.log;
    walk(log, |i, j, rec| {
        let Mutation::Evicted {
            service,
            cause: EvictionCause::Preempted,
            ..
        } = &rec.mutation
        else {
            return Ok(());
        };
        let preemptor = log[i..]
            .iter()
            .find_map(|r| match &r.mutation {
                Mutation::Nominated { service, .. } | Mutation::Placed { service, .. } => Some(service),
                _ => None,
            })
            .ok_or("eviction without a preemptor")?;
        let classes = &j.state.priority_classes;
        let victim = resolve_priority(&j.state.services[service].spec, classes).map_err(|e| e.to_string())?;
        let by = resolve_priority(&j.state.services[preemptor].spec, classes).map_err(|e| e.to_string())?;
        ensure!(victim < by, "{service}@{victim} evicted for {preemptor}@{by}");
        Ok(())
    })
}

pub fn conservation(out: &RunOutput) -> Check {
    for rec in &out.log {
        let Mutation::Submitted { spec } = &rec.mutation else {
            continue;
        };
        let id = &spec.id;
        match out.state.services.get(id) {
            None => ensure!(out.state.tombstones.contains_key(id), "{id} vanished"),
            Some(s) => {
                let queued = out.queue.contains(id);
                match s.status.phase {
                    Phase::Running => {
                        let node = s.status.node_id.as_ref().ok_or(format!("{id} running nowhere"))?;
                        ensure!(out.state.nodes[node].placed.contains(id), "{id} not on {node}");
                        ensure!(!queued, "running {id} is queued");
                    }
                    Phase::Pending => ensure!(queued, "pending {id} is not queued"),
                    _ => ensure!(!queued, "finished {id} is queued"),
                }
            }
        }
    }
    Ok(())
}

pub fn window_gating_and_pins(case: &gen::EngineCase, out: &RunOutput) -> Check {
    walk(&out.log, |_, j, rec| {
        if let Mutation::MigrationStarted { service, .. } = &rec.mutation {
            ensure!(
                in_maintenance_window(rec.time, &case.config.rebalance.windows),
                "migration of {service} at {} outside every window",
                rec.time
            );
            ensure!(
                !has_no_reschedule(&j.state.services[service].spec.labels),
                "pinned {service} migrated"
            );
        }
        Ok(())
    })
}

pub fn clock_monotone(out: &RunOutput) -> Check {
    ensure!(out.log.windows(2).all(|w| w[0].time <= w[1].time), "log time decreases");
    Ok(())
}

pub fn replay_matches(out: &RunOutput) -> Check {
    let rebuilt = replay(&out.log).map_err(|e| format!("{e:?}"))?;
    ensure!(rebuilt.state == out.state, "replayed state differs");
    ensure!(rebuilt.queue == out.queue, "replayed queue differs");
    Ok(())
}

pub fn metrics_match(out: &RunOutput) -> Check {
    let r = &out.report;
    let again = orchsim_core::metrics_summary(&out.log).map_err(|e| format!("{e:?}"))?;
    ensure!(again == *r, "report fold differs from run-time report");
    let lines: Vec<String> = out.log.iter().map(|r| r.to_json_line()).collect();
    let f = oracle::read_log(&lines);
    ensure!(f.records == r.records, "records {} vs {}", f.records, r.records);
    ensure!(
        f.evictions == r.evictions,
        "evictions {:?} vs {:?}",
        f.evictions,
        r.evictions
    );
    ensure!(
        f.migrations == r.migrations,
        "migrations {} vs {}",
        f.migrations,
        r.migrations
    );
    ensure!(f.fallbacks == r.migration_fallbacks, "fallbacks differ");
    ensure!(
        f.deletions == r.gc_deletions,
        "deletions {:?} vs {:?}",
        f.deletions,
        r.gc_deletions
    );
    ensure!(f.rejected == r.rejected, "rejected differ");
    ensure!(f.progress_lost == r.progress_lost_total, "progress lost differs");
    ensure!(
        f.placement == r.final_placement,
        "placement {:?} vs {:?}",
        f.placement,
        r.final_placement
    );
    ensure!(f.latency == r.queue_latency, "latency differs");
    match (f.final_imbalance, r.final_imbalance) {
        (Some(a), Some(b)) => ensure!((a - b).abs() < 1e-12, "imbalance {a} vs {b}"),
        (a, b) => ensure!(a == b, "imbalance {a:?} vs {b:?}"),
    }
    Ok(())
}

/// Every engine-level property at once.
pub fn engine_invariants(case: &gen::EngineCase, out: &RunOutput) -> Check {
    capacity_safety(out)?;
    strict_priority_eviction(out)?;
    conservation(out)?;
    window_gating_and_pins(case, out)?;
    clock_monotone(out)?;
    replay_matches(out)
}

/// Runs a compiled scenario with invariant checking switched on.
pub fn checked_run(
    setup: orchsim_core::Setup,
    events: Vec<orchsim_core::SimEvent>,
    mut config: EngineConfig,
) -> Result<RunOutput, String> {
    config.check_invariants = true;
    Engine::new(setup, events, config).run(None).map_err(|e| e.to_string())
}

pub fn foreground_order(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut world = gen::gc_world(&mut rng);
    let target = world.ids[rng.random_range(0..world.ids.len())].clone();
    let from = world.journal.records().len();
    let _ = delete_object(&mut world.journal, &target, DeletionMode::Foreground);
    let records = world.journal.records();
    let mut j = replay(&records[..from]).map_err(|e| format!("{e:?}"))?;
    for rec in &records[from..] {
        if let Mutation::Deleted { object, .. } = &rec.mutation {
            let st = &j.state;
            if st.services[object].status.deletion.map(|d| d.mode) == Some(DeletionMode::Foreground) {
                for dep in st.dependents_of(object) {
                    ensure!(
                        st.services[&dep].status.phase != Phase::Deleting,
                        "{object} removed before {dep}"
                    );
                }
            }
        }
        j.set_now(rec.time);
        j.emit(rec.mutation.clone()).map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub fn finalizer_safety(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut world = gen::gc_world(&mut rng);
    let j = &mut world.journal;
    let gated: Vec<String> = j
        .state
        .services
        .values()
        .filter(|s| !s.spec.finalizers.is_empty())
        .map(|s| s.spec.id.clone())
        .collect();
    for id in &world.ids {
        if j.state.is_live(id) {
            let _ = delete_object(j, id, gen::random_mode(&mut rng));
        }
    }
    j.set_now(10);
    gc_sweep(j, &GcConfig::default()).map_err(|e| e.to_string())?;
    for id in &gated {
        let phase = j.state.services.get(id).map(|s| s.status.phase);
        ensure!(phase == Some(Phase::Deleting), "{id} with finalizers is {phase:?}");
    }
    for id in &gated {
        for f in j.state.services[id].spec.finalizers.clone() {
            clear_finalizer(j, id, &f).map_err(|e| e.to_string())?;
        }
    }
    for t in 11..30 {
        j.set_now(t);
        gc_sweep(j, &GcConfig::default()).map_err(|e| e.to_string())?;
    }
    ensure!(
        j.state.services.is_empty(),
        "left behind: {:?}",
        j.state.services.keys()
    );
    Ok(())
}

fn ttl_config(retention: u64) -> GcConfig {
    GcConfig {
        ttl: TtlConfig {
            terminated_service_retention: Some(Seconds(retention)),
            job_retention: Some(Seconds(retention * 2)),
            unused_image_retention: Some(Seconds(retention * 3)),
        },
        policy: Vec::new(),
    }
}

pub fn never_delete_in_use(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut world = gen::gc_world(&mut rng);
    let j = &mut world.journal;
    let from = j.records().len();
    let running: BTreeSet<String> = j
        .state
        .services
        .values()
        .filter(|s| matches!(s.status.phase, Phase::Running | Phase::Pending))
        .map(|s| s.spec.id.clone())
        .collect();
    let in_use: BTreeSet<String> = j
        .state
        .images
        .values()
        .filter(|i| !i.in_use_by.is_empty())
        .map(|i| i.id.clone())
        .collect();
    j.set_now(rng.random_range(0..1000));
    let mut cfg = ttl_config(rng.random_range(0..500));
    cfg.policy = default_policy();
    gc_sweep(j, &cfg).map_err(|e| e.to_string())?;
    for rec in &j.records()[from..] {
        match &rec.mutation {
            Mutation::DeletionStarted { object, category, .. } => {
                ensure!(
                    matches!(category, DeletionCategory::TtlService | DeletionCategory::TtlJob),
                    "unexpected {category:?} deletion of {object}"
                );
                ensure!(!running.contains(object), "unfinished {object} expired");
            }
            Mutation::ImageDeleted { image, .. } => ensure!(!in_use.contains(image), "in-use {image} deleted"),
            _ => {}
        }
    }
    Ok(())
}

pub fn sweep_idempotent(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut world = gen::gc_world(&mut rng);
    let j = &mut world.journal;
    for _ in 0..rng.random_range(0..3) {
        let id = world.ids[rng.random_range(0..world.ids.len())].clone();
        if j.state.is_live(&id) {
            let _ = delete_object(j, &id, gen::random_mode(&mut rng));
        }
    }
    let mut cfg = ttl_config(rng.random_range(0..50));
    cfg.policy = default_policy();
    for t in [rng.random_range(1..100), rng.random_range(100..400)] {
        j.set_now(t);
        gc_sweep(j, &cfg).map_err(|e| e.to_string())?;
        let len = j.records().len();
        let again = gc_sweep(j, &cfg).map_err(|e| e.to_string())?;
        ensure!(again.is_empty(), "second sweep at {t} did {again:?}");
        ensure!(j.records().len() == len, "second sweep at {t} logged records");
    }
    Ok(())
}

pub fn orphans_bounded(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut world = gen::gc_world(&mut rng);
    let j = &mut world.journal;
    let victim = world.ids[rng.random_range(0..world.ids.len())].clone();
    let _ = delete_object(j, &victim, DeletionMode::Background);
    for t in 1..=world.ids.len() as u64 {
        j.set_now(t);
        gc_sweep(j, &GcConfig::default()).map_err(|e| e.to_string())?;
    }
    for s in j.state.services.values() {
        let orphaned =
            !s.spec.owner_refs.is_empty() && s.spec.owner_refs.iter().all(|o| j.state.tombstones.contains_key(o));
        if orphaned {
            ensure!(
                s.status.phase == Phase::Deleting && !s.spec.finalizers.is_empty(),
                "orphan {} survived",
                s.spec.id
            );
        }
    }
    Ok(())
}

pub fn ttl_exact(seed: u64) -> Check {
    let mut rng = rng(seed);
    let retention = rng.random_range(1..10_000);
    let finish = rng.random_range(0..10_000);
    let job = rng.random_bool(0.5);
    let own = rng.random_bool(0.3);
    let mut spec = svc("x", ResourceVector::ZERO, None);
    if job {
        spec.kind = ObjectKind::Job;
    }
    if own {
        spec.ttl_after_finished_secs = Some(retention);
    }
    let mut j = ClusterBuilder::new().pending(spec).at(finish).journal();
    j.emit(Mutation::Finished {
        service: "x".into(),
        phase: Phase::Completed,
    })
    .map_err(|e| e.to_string())?;
    let global = Some(Seconds(if own { 1 } else { retention }));
    let cfg = GcConfig {
        ttl: TtlConfig {
            terminated_service_retention: global,
            job_retention: global,
            unused_image_retention: None,
        },
        policy: Vec::new(),
    };
    j.set_now(finish + retention - 1);
    let early = gc_sweep(&mut j, &cfg).map_err(|e| e.to_string())?;
    ensure!(early.is_empty(), "deleted one second early");
    j.set_now(finish + retention);
    let report = gc_sweep(&mut j, &cfg).map_err(|e| e.to_string())?;
    let want = if job {
        DeletionCategory::TtlJob
    } else {
        DeletionCategory::TtlService
    };
    ensure!(
        report.objects == vec![("x".to_string(), want)],
        "on time: {:?}",
        report.objects
    );
    Ok(())
}

/// Applies `check` to `count` seeds from `base` and collects failures.
pub fn over_seeds(base: u64, count: u64, check: impl Fn(u64) -> Check) -> Vec<String> {
    (base..base + count)
        .filter_map(|seed| check(seed).err().map(|e| format!("seed {seed}: {e}")))
        .collect()
}
