//! Function-as-subtask registration and commit-time validation.
//!
//! A subtask is registered as a plain function together with the topics its
//! arguments come from and its return values go to. The function never sees
//! a channel, so it cannot emit anything before it returns, and the builder
//! has no operation that publishes or rewires at run time. Construction ends
//! with [`finish_create_dags`], which validates every DAG and freezes it.
//!
//! ```
//! use fass::builder::{create_dag, finish_create_dags};
//! use fass::model::Attributes;
//! use fass::time::DurationNs;
//!
//! let mut dag = create_dag();
//! dag.register_periodic_subtask::<_, (i32,)>(
//!     || (1,),
//!     vec!["topic0"],
//!     DurationNs::from_millis(25),
//!     Attributes::default(),
//! )?;
//! dag.register_subtask::<_, (i32,), (i32, i32)>(
//!     |(x,)| (x, x * 2),
//!     vec!["topic0"],
//!     vec!["topic1", "topic2"],
//!     Attributes::default(),
//! )?;
//! dag.register_sink_subtask::<_, (i32, i32)>(
//!     |(_a, _b)| {},
//!     vec!["topic1", "topic2"],
//!     Attributes::default(),
//! )?;
//! let committed = finish_create_dags(&mut [dag]).expect("valid DAG");
//! assert_eq!(committed[0].topological_order().len(), 3);
//! # Ok::<(), fass::builder::RegistrationError>(())
//! ```
//!
//! A subtask body has no way to reach a publisher:
//!
//! ```compile_fail
//! use fass::builder::create_dag;
//! use fass::model::Attributes;
//!
//! let mut dag = create_dag();
//! dag.register_subtask::<_, (i32,), (i32,)>(
//!     |(x,)| {
//!         dag.publish("topic1", x);
//!         (x,)
//!     },
//!     vec!["topic0"],
//!     vec!["topic1"],
//!     Attributes::default(),
//! );
//! ```

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    wire_edges, Attributes, DagId, DagSpec, Edge, SpecError, SubtaskId, SubtaskKind,
    SubtaskSpec, TopicId, TypeTag, Value,
};
use crate::time::DurationNs;
use crate::trace::{DagInfo, JoinInput, JoinPoint};

/// Type-erased subtask body: input payloads in, output payloads out.
pub type SubtaskFn = Arc<dyn Fn(&[Value]) -> Vec<Value> + Send + Sync>;

/// Argument tuple of a subtask function.
pub trait Inputs: Sized + 'static {
    fn type_tags() -> Vec<TypeTag>;
    fn from_values(values: &[Value]) -> Option<Self>;
}

/// Return tuple of a subtask function.
pub trait Outputs: 'static {
    fn type_tags() -> Vec<TypeTag>;
    fn into_values(self) -> Vec<Value>;
}

impl Outputs for () {
    fn type_tags() -> Vec<TypeTag> {
        Vec::new()
    }

    fn into_values(self) -> Vec<Value> {
        Vec::new()
    }
}

macro_rules! tuple_impls {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: Clone + Send + Sync + 'static),+> Inputs for ($($name,)+) {
            fn type_tags() -> Vec<TypeTag> {
                vec![$(TypeTag::of::<$name>()),+]
            }

            fn from_values(values: &[Value]) -> Option<Self> {
                if values.len() != [$($idx),+].len() {
                    return None;
                }
                Some(($(values[$idx].downcast_ref::<$name>()?.clone(),)+))
            }
        }

        impl<$($name: Clone + Send + Sync + 'static),+> Outputs for ($($name,)+) {
            fn type_tags() -> Vec<TypeTag> {
                vec![$(TypeTag::of::<$name>()),+]
            }

            fn into_values(self) -> Vec<Value> {
                vec![$(Value::new(self.$idx)),+]
            }
        }
    };
}

tuple_impls!(A 0);
tuple_impls!(A 0, B 1);
tuple_impls!(A 0, B 1, C 2);
tuple_impls!(A 0, B 1, C 2, D 3);
tuple_impls!(A 0, B 1, C 2, D 3, E 4);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7, I 8);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7, I 8, J 9);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7, I 8, J 9, K 10);
tuple_impls!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7, I 8, J 9, K 10, L 11);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistrationError {
    #[error("{0} is already committed")]
    AlreadyCommitted(DagId),
    #[error("function has {function} {side} but {topics} topics are listed")]
    ArityMismatch {
        side: &'static str,
        function: usize,
        topics: usize,
    },
    #[error("period must be positive")]
    BadPeriod,
    #[error("topic {topic} carries {existing}, not {requested}")]
    TypeMismatch {
        topic: String,
        existing: &'static str,
        requested: &'static str,
    },
    #[error("{0}")]
    InvalidShape(String),
}

impl From<SpecError> for RegistrationError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::TypeMismatch {
                topic,
                existing,
                requested,
            } => RegistrationError::TypeMismatch {
                topic,
                existing,
                requested,
            },
            shape @ SpecError::Shape { .. } => RegistrationError::InvalidShape(shape.to_string()),
        }
    }
}

/// Which sink structures a commit accepts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CommitPolicy {
    /// Exactly one source and exactly one sink.
    #[default]
    Strict,
    /// Exactly one source; every subtask without successors counts as a sink.
    MultiSinkAllowed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValidationErrorKind {
    Cycle,
    MultiPublisher,
    NoSource,
    MultipleSources,
    NoSink,
    MultipleSinks,
    UnknownTopic,
    TypeMismatch,
    DanglingTopic,
    BadPeriod,
}

/// One structural problem found at commit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValidationError {
    pub kind: ValidationErrorKind,
    pub dag: DagId,
    /// Offending subtasks by name, sorted.
    pub subtasks: Vec<String>,
    /// Offending topics, sorted.
    pub topics: Vec<String>,
}

impl ValidationError {
    fn new(
        kind: ValidationErrorKind,
        dag: DagId,
        subtasks: impl IntoIterator<Item = String>,
        topics: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut subtasks: Vec<String> = subtasks.into_iter().collect();
        let mut topics: Vec<String> = topics.into_iter().collect();
        subtasks.sort();
        subtasks.dedup();
        topics.sort();
        topics.dedup();
        ValidationError {
            kind,
            dag,
            subtasks,
            topics,
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}", self.dag, self.kind)?;
        if !self.subtasks.is_empty() {
            write!(f, " subtasks [{}]", self.subtasks.join(", "))?;
        }
        if !self.topics.is_empty() {
            write!(f, " topics [{}]", self.topics.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitError {
    #[error("{0} was already committed")]
    AlreadyCommitted(DagId),
    #[error("{} validation error(s): {}", .0.len(), join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn join_errors(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl CommitError {
    pub fn errors(&self) -> &[ValidationError] {
        match self {
            CommitError::Invalid(errors) => errors,
            CommitError::AlreadyCommitted(_) => &[],
        }
    }
}

/// A DAG under construction.
pub struct DagBuilder {
    id: DagId,
    spec: DagSpec,
    functions: Vec<SubtaskFn>,
    policy: CommitPolicy,
    committed: bool,
}

/// Starts a new, empty DAG.
pub fn create_dag() -> DagBuilder {
    DagBuilder {
        id: DagId::fresh(),
        spec: DagSpec::new(),
        functions: Vec::new(),
        policy: CommitPolicy::default(),
        committed: false,
    }
}

impl fmt::Debug for DagBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DagBuilder")
            .field("id", &self.id)
            .field("spec", &self.spec)
            .field("policy", &self.policy)
            .field("committed", &self.committed)
            .finish()
    }
}

impl DagBuilder {
    pub fn id(&self) -> DagId {
        self.id
    }

    pub fn spec(&self) -> &DagSpec {
        &self.spec
    }

    pub fn policy(&self) -> CommitPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: CommitPolicy) {
        self.policy = policy;
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    /// Registers the periodic source. `f` takes no arguments; each returned
    /// value goes to the matching entry of `out_topics`.
    pub fn register_periodic_subtask<F, Ret>(
        &mut self,
        f: F,
        out_topics: Vec<&str>,
        period: DurationNs,
        attributes: Attributes,
    ) -> Result<SubtaskId, RegistrationError>
    where
        F: Fn() -> Ret + Send + Sync + 'static,
        Ret: Outputs,
    {
        let outputs = typed_topics("outputs", &out_topics, Ret::type_tags())?;
        let body: SubtaskFn = Arc::new(move |_| f().into_values());
        self.register_untyped(
            SubtaskKind::Source,
            body,
            &[],
            &outputs,
            Some(period),
            attributes,
        )
    }

    /// Registers an intermediate subtask.
    pub fn register_subtask<F, Args, Ret>(
        &mut self,
        f: F,
        in_topics: Vec<&str>,
        out_topics: Vec<&str>,
        attributes: Attributes,
    ) -> Result<SubtaskId, RegistrationError>
    where
        F: Fn(Args) -> Ret + Send + Sync + 'static,
        Args: Inputs,
        Ret: Outputs,
    {
        let inputs = typed_topics("inputs", &in_topics, Args::type_tags())?;
        let outputs = typed_topics("outputs", &out_topics, Ret::type_tags())?;
        let body: SubtaskFn = Arc::new(move |values| {
            let args = Args::from_values(values).expect("input types are fixed at commit");
            f(args).into_values()
        });
        self.register_untyped(
            SubtaskKind::Intermediate,
            body,
            &inputs,
            &outputs,
            None,
            attributes,
        )
    }

    /// Registers a sink subtask.
    pub fn register_sink_subtask<F, Args>(
        &mut self,
        f: F,
        in_topics: Vec<&str>,
        attributes: Attributes,
    ) -> Result<SubtaskId, RegistrationError>
    where
        F: Fn(Args) + Send + Sync + 'static,
        Args: Inputs,
    {
        let inputs = typed_topics("inputs", &in_topics, Args::type_tags())?;
        let body: SubtaskFn = Arc::new(move |values| {
            let args = Args::from_values(values).expect("input types are fixed at commit");
            f(args);
            Vec::new()
        });
        self.register_untyped(SubtaskKind::Sink, body, &inputs, &[], None, attributes)
    }

    /// Registers a subtask from an erased body and explicit type tags.
    ///
    /// The body receives one value per input topic and must return one value
    /// per output topic, each of the declared type.
    pub fn register_untyped(
        &mut self,
        kind: SubtaskKind,
        body: SubtaskFn,
        inputs: &[(&str, TypeTag)],
        outputs: &[(&str, TypeTag)],
        period: Option<DurationNs>,
        attributes: Attributes,
    ) -> Result<SubtaskId, RegistrationError> {
        if self.committed {
            return Err(RegistrationError::AlreadyCommitted(self.id));
        }
        if kind == SubtaskKind::Source && period.is_none_or(DurationNs::is_zero) {
            return Err(RegistrationError::BadPeriod);
        }
        let needs_inputs = kind != SubtaskKind::Source;
        let needs_outputs = kind != SubtaskKind::Sink;
        if needs_inputs && inputs.is_empty() {
            return Err(RegistrationError::ArityMismatch {
                side: "inputs",
                function: 0,
                topics: 0,
            });
        }
        if needs_outputs && outputs.is_empty() {
            return Err(RegistrationError::ArityMismatch {
                side: "outputs",
                function: 0,
                topics: 0,
            });
        }

        // Work on a copy so a failed registration leaves the builder untouched.
        let mut spec = self.spec.clone();
        let declare = |spec: &mut DagSpec, list: &[(&str, TypeTag)]| {
            list.iter()
                .map(|(name, tag)| spec.declare_topic(name, *tag))
                .collect::<Result<Vec<TopicId>, SpecError>>()
        };
        let in_topics = declare(&mut spec, inputs)?;
        let out_topics = declare(&mut spec, outputs)?;
        let id = spec.add_subtask(kind, in_topics, out_topics, period, attributes)?;
        self.spec = spec;
        self.functions.push(body);
        Ok(id)
    }
}

fn typed_topics<'a>(
    side: &'static str,
    names: &[&'a str],
    tags: Vec<TypeTag>,
) -> Result<Vec<(&'a str, TypeTag)>, RegistrationError> {
    if names.len() != tags.len() {
        return Err(RegistrationError::ArityMismatch {
            side,
            function: tags.len(),
            topics: names.len(),
        });
    }
    Ok(names.iter().copied().zip(tags).collect())
}

/// Result of a successful structural check.
#[derive(Clone, Debug)]
pub struct Validated {
    pub edges: Vec<Edge>,
    pub dangling: Vec<String>,
    pub topological_order: Vec<SubtaskId>,
    pub source: SubtaskId,
    pub sinks: Vec<SubtaskId>,
}

/// Checks one DAG description and reports every violation found.
pub fn validate(
    dag: DagId,
    spec: &DagSpec,
    policy: CommitPolicy,
) -> Result<Validated, Vec<ValidationError>> {
    use ValidationErrorKind as K;

    let name = |id: SubtaskId| spec.subtasks()[id.index()].name().to_string();
    let mut errors = Vec::new();

    for st in spec.subtasks() {
        for t in st.in_topics().iter().chain(st.out_topics()) {
            match spec.topic_type(t.name()) {
                None => errors.push(ValidationError::new(
                    K::UnknownTopic,
                    dag,
                    [st.name().to_string()],
                    [t.name().to_string()],
                )),
                Some(tag) if tag != t.payload_type() => errors.push(ValidationError::new(
                    K::TypeMismatch,
                    dag,
                    [st.name().to_string()],
                    [t.name().to_string()],
                )),
                Some(_) => {}
            }
        }
        if st.kind() == SubtaskKind::Source && st.period().is_none_or(DurationNs::is_zero) {
            errors.push(ValidationError::new(
                K::BadPeriod,
                dag,
                [st.name().to_string()],
                [],
            ));
        }
    }

    let mut publishers: BTreeMap<&str, Vec<SubtaskId>> = BTreeMap::new();
    for st in spec.subtasks() {
        for t in st.out_topics() {
            publishers.entry(t.name()).or_default().push(st.id());
        }
    }
    for (topic, pubs) in &publishers {
        if pubs.len() > 1 {
            errors.push(ValidationError::new(
                K::MultiPublisher,
                dag,
                pubs.iter().map(|&p| name(p)),
                [topic.to_string()],
            ));
        }
    }
    for st in spec.subtasks() {
        for t in st.in_topics() {
            if !publishers.contains_key(t.name()) {
                errors.push(ValidationError::new(
                    K::DanglingTopic,
                    dag,
                    [st.name().to_string()],
                    [t.name().to_string()],
                ));
            }
        }
    }

    let sources: Vec<SubtaskId> = spec
        .subtasks()
        .iter()
        .filter(|s| s.kind() == SubtaskKind::Source)
        .map(SubtaskSpec::id)
        .collect();
    match sources.len() {
        0 => errors.push(ValidationError::new(
            K::NoSource,
            dag,
            spec.subtasks().iter().map(|s| s.name().to_string()),
            [],
        )),
        1 => {}
        _ => errors.push(ValidationError::new(
            K::MultipleSources,
            dag,
            sources.iter().map(|&s| name(s)),
            [],
        )),
    }

    let wiring = wire_edges(spec);
    let n = spec.len();

    // Kahn's algorithm; whatever never reaches in-degree zero is on or behind a cycle.
    let mut indegree = vec![0usize; n];
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &wiring.edges {
        indegree[e.to.index()] += 1;
        successors[e.from.index()].push(e.to.index());
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(SubtaskId::new(v as u32));
        for &w in &successors[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.push(Reverse(w));
            }
        }
    }
    if order.len() < n {
        let placed: BTreeSet<usize> = order.iter().map(|s| s.index()).collect();
        errors.push(ValidationError::new(
            K::Cycle,
            dag,
            (0..n)
                .filter(|v| !placed.contains(v))
                .map(|v| name(SubtaskId::new(v as u32))),
            [],
        ));
    }

    let leaves: Vec<SubtaskId> = (0..n)
        .filter(|&v| successors[v].is_empty())
        .map(|v| SubtaskId::new(v as u32))
        .collect();
    let sink_kinds = spec
        .subtasks()
        .iter()
        .filter(|s| s.kind() == SubtaskKind::Sink)
        .count();
    if sink_kinds == 0 {
        errors.push(ValidationError::new(
            K::NoSink,
            dag,
            spec.subtasks().iter().map(|s| s.name().to_string()),
            [],
        ));
    } else if policy == CommitPolicy::Strict && leaves.len() > 1 {
        errors.push(ValidationError::new(
            K::MultipleSinks,
            dag,
            leaves.iter().map(|&s| name(s)),
            [],
        ));
    }

    if !errors.is_empty() {
        errors.sort();
        errors.dedup();
        return Err(errors);
    }
    Ok(Validated {
        edges: wiring.edges,
        dangling: wiring.dangling,
        topological_order: order,
        source: sources[0],
        sinks: leaves,
    })
}

/// Validates and freezes every builder, or none of them.
///
/// On error the builders stay uncommitted and may be extended and
/// committed again.
pub fn finish_create_dags(builders: &mut [DagBuilder]) -> Result<Vec<CommittedDag>, CommitError> {
    if let Some(b) = builders.iter().find(|b| b.committed) {
        return Err(CommitError::AlreadyCommitted(b.id));
    }

    let mut errors = Vec::new();
    let mut validated = Vec::with_capacity(builders.len());
    for b in builders.iter() {
        match validate(b.id, &b.spec, b.policy) {
            Ok(v) => validated.push(Some(v)),
            Err(mut e) => {
                errors.append(&mut e);
                validated.push(None);
            }
        }
    }

    // A topic name belongs to one DAG; two DAGs publishing it would merge them.
    let mut owners: BTreeMap<&str, Vec<(DagId, &str)>> = BTreeMap::new();
    for b in builders.iter() {
        for st in b.spec.subtasks() {
            for t in st.out_topics() {
                owners.entry(t.name()).or_default().push((b.id, st.name()));
            }
        }
    }
    for (topic, pubs) in owners {
        let first = pubs[0].0;
        if pubs.iter().any(|(d, _)| *d != first) {
            errors.push(ValidationError::new(
                ValidationErrorKind::MultiPublisher,
                first,
                pubs.iter().map(|(d, s)| format!("{d}/{s}")),
                [topic.to_string()],
            ));
        }
    }

    if !errors.is_empty() {
        errors.sort();
        return Err(CommitError::Invalid(errors));
    }

    let committed = builders
        .iter_mut()
        .zip(validated)
        .map(|(b, v)| {
            b.committed = true;
            let v = v.expect("validated");
            CommittedDag {
                inner: Arc::new(CommittedInner {
                    id: b.id,
                    spec: b.spec.clone(),
                    functions: b.functions.clone(),
                    policy: b.policy,
                    validated: v,
                    running: AtomicBool::new(false),
                }),
            }
        })
        .collect();
    Ok(committed)
}

struct CommittedInner {
    id: DagId,
    spec: DagSpec,
    functions: Vec<SubtaskFn>,
    policy: CommitPolicy,
    validated: Validated,
    running: AtomicBool,
}

/// A validated, immutable DAG ready to run. Cloning shares it.
#[derive(Clone)]
pub struct CommittedDag {
    inner: Arc<CommittedInner>,
}

impl fmt::Debug for CommittedDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommittedDag")
            .field("id", &self.inner.id)
            .field("policy", &self.inner.policy)
            .field("edges", &self.inner.validated.edges)
            .finish()
    }
}

impl CommittedDag {
    pub fn id(&self) -> DagId {
        self.inner.id
    }

    pub fn spec(&self) -> &DagSpec {
        &self.inner.spec
    }

    pub fn subtasks(&self) -> &[SubtaskSpec] {
        self.inner.spec.subtasks()
    }

    pub fn subtask(&self, id: SubtaskId) -> &SubtaskSpec {
        &self.inner.spec.subtasks()[id.index()]
    }

    pub fn policy(&self) -> CommitPolicy {
        self.inner.policy
    }

    pub fn edges(&self) -> &[Edge] {
        &self.inner.validated.edges
    }

    /// Published topics without subscribers.
    pub fn dangling_topics(&self) -> &[String] {
        &self.inner.validated.dangling
    }

    pub fn topological_order(&self) -> &[SubtaskId] {
        &self.inner.validated.topological_order
    }

    pub fn source(&self) -> SubtaskId {
        self.inner.validated.source
    }

    pub fn sinks(&self) -> &[SubtaskId] {
        &self.inner.validated.sinks
    }

    pub fn period(&self) -> DurationNs {
        self.subtask(self.source())
            .period()
            .expect("validated source has a period")
    }

    /// The DAG's relative deadline; the source period unless set explicitly.
    pub fn relative_deadline(&self) -> DurationNs {
        self.subtask(self.source())
            .relative_deadline()
            .unwrap_or_else(|| self.period())
    }

    /// The unique publisher of `topic`.
    pub fn publisher(&self, topic: &str) -> Option<SubtaskId> {
        self.subtasks()
            .iter()
            .find(|s| s.out_topics().iter().any(|t| t.name() == topic))
            .map(SubtaskSpec::id)
    }

    pub(crate) fn function(&self, id: SubtaskId) -> &SubtaskFn {
        &self.inner.functions[id.index()]
    }

    pub(crate) fn try_claim(&self) -> bool {
        !self.inner.running.swap(true, Ordering::AcqRel)
    }

    pub(crate) fn unclaim(&self) {
        self.inner.running.store(false, Ordering::Release);
    }

    /// Trace-facing description of this DAG.
    pub fn info(&self) -> DagInfo {
        let joins = self
            .subtasks()
            .iter()
            .filter(|s| s.in_topics().len() > 1)
            .map(|s| JoinPoint {
                subtask: s.id(),
                inputs: s
                    .in_topics()
                    .iter()
                    .map(|t| JoinInput {
                        producer: self.publisher(t.name()).expect("validated wiring"),
                        topic: t.name().to_string(),
                    })
                    .collect(),
            })
            .collect();
        DagInfo {
            id: Some(self.id()),
            names: self.subtasks().iter().map(|s| s.name().to_string()).collect(),
            source: Some(self.source()),
            sinks: self.sinks().to_vec(),
            edges: self.edges().to_vec(),
            joins,
            relative_deadline: Some(self.relative_deadline()),
        }
    }

    /// Graphviz rendering of the committed graph.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", self.id());
        let _ = writeln!(out, "  rankdir=LR;");
        for s in self.subtasks() {
            let mut label = format!("{}\\n{} prio={}", s.name(), s.kind(), s.priority());
            if let Some(p) = s.period() {
                let _ = write!(label, " period={}ms", p.as_millis_f64());
            }
            let _ = writeln!(out, "  \"{}\" [label=\"{}\"];", s.name(), label);
        }
        for e in self.edges() {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                self.subtask(e.from).name(),
                self.subtask(e.to).name(),
                e.topic
            );
        }
        out.push_str("}\n");
        out
    }
}
