use thiserror::Error;

use crate::resources::ResourceVector;
use crate::SimTime;

/// Errors raised by state transitions and planning operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("resource subtraction would go negative: {lhs} - {rhs}")]
    NegativeResources { lhs: ResourceVector, rhs: ResourceVector },
    #[error("zero capacity in a dimension with nonzero allocation")]
    ZeroCapacity,
    #[error("node unavailable: {0}")]
    NodeUnavailable(String),
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("unknown object: {0}")]
    UnknownObject(String),
    #[error("unknown image: {0}")]
    UnknownImage(String),
    #[error("unknown priority class: {0}")]
    UnknownPriorityClass(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("id {0} was deleted and cannot be reused")]
    Tombstoned(String),
    #[error("priority class {name}: value {value} exceeds 1000000000")]
    PriorityTooLarge { name: String, value: i64 },
    #[error("priority class {0} would be a second global default (existing: {1})")]
    SecondGlobalDefault(String, String),
    #[error("owner {owner} of {object} does not exist")]
    MissingOwner { object: String, owner: String },
    #[error("object {0} cannot own itself")]
    SelfOwnership(String),
    #[error("{0} is not running")]
    NotRunning(String),
    #[error("{0} is not pending")]
    NotPending(String),
    #[error("{0} is not deleting")]
    NotDeleting(String),
    #[error("{0} is already deleting")]
    AlreadyDeleting(String),
    #[error("{object} has no finalizer {finalizer}")]
    UnknownFinalizer { object: String, finalizer: String },
    #[error("{object} still has finalizers {finalizers:?}")]
    FinalizersPending { object: String, finalizers: Vec<String> },
    #[error("{service} does not fit on node {node}")]
    DoesNotFit { service: String, node: String },
    #[error("{service} constraints do not match node {node}")]
    ConstraintMismatch { service: String, node: String },
    #[error("invalid move {service} -> {target}: {reason}")]
    InvalidMove {
        service: String,
        target: String,
        reason: String,
    },
    #[error("{0} is already queued")]
    AlreadyQueued(String),
    #[error("clock went backwards: {now} < {clock}")]
    ClockWentBackwards { now: SimTime, clock: SimTime },
    #[error("no Up nodes")]
    NoUpNodes,
    #[error("invalid state transition for {object}: {reason}")]
    InvalidTransition { object: String, reason: String },
}
