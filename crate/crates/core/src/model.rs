//! Graph vocabulary shared by the builder, the runtimes and the trace.

use std::any::{Any, TypeId};
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::time::{DurationNs, TimePoint};

/// Identifies one DAG within a process.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct DagId(u64);

impl DagId {
    /// Allocates a process-unique id. Ids increase in allocation order.
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        DagId(NEXT.fetch_add(1, Ordering::Relaxed))
    }

    pub const fn from_raw(raw: u64) -> Self {
        DagId(raw)
    }

    pub const fn as_raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for DagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dag{}", self.0)
    }
}

/// Position of a subtask in its DAG's registration order.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SubtaskId(u32);

impl SubtaskId {
    pub const fn new(index: u32) -> Self {
        SubtaskId(index)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// The `k` of the k-th job of a DAG. The source assigns 0, 1, 2, ...
#[derive(
    Clone,
    Copy,
    Debug,
    Default,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
)]
#[serde(transparent)]
pub struct JobIndex(pub u64);

impl JobIndex {
    pub const fn next(self) -> JobIndex {
        JobIndex(self.0 + 1)
    }
}

impl fmt::Display for JobIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Runtime tag of a payload type. Two tags are equal iff the types are.
#[derive(Clone, Copy, Debug)]
pub struct TypeTag {
    id: TypeId,
    name: &'static str,
}

impl TypeTag {
    pub fn of<T: Any>() -> Self {
        TypeTag {
            id: TypeId::of::<T>(),
            name: std::any::type_name::<T>(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }
}

impl PartialEq for TypeTag {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for TypeTag {}

impl Hash for TypeTag {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl Serialize for TypeTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name)
    }
}

/// A type-erased payload. Cloning shares the underlying value.
#[derive(Clone)]
pub struct Value {
    tag: TypeTag,
    inner: Arc<dyn Any + Send + Sync>,
}

impl Value {
    pub fn new<T: Any + Send + Sync>(value: T) -> Self {
        Value {
            tag: TypeTag::of::<T>(),
            inner: Arc::new(value),
        }
    }

    pub fn tag(&self) -> TypeTag {
        self.tag
    }

    pub fn downcast_ref<T: Any>(&self) -> Option<&T> {
        self.inner.downcast_ref()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value<{}>", self.tag)
    }
}

/// A named, typed data channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TopicId {
    name: Arc<str>,
    payload_type: TypeTag,
}

impl TopicId {
    pub fn new(name: &str, payload_type: TypeTag) -> Self {
        TopicId {
            name: Arc::from(name),
            payload_type,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn payload_type(&self) -> TypeTag {
        self.payload_type
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for TopicId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    Source,
    Intermediate,
    Sink,
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubtaskKind::Source => "source",
            SubtaskKind::Intermediate => "intermediate",
            SubtaskKind::Sink => "sink",
        })
    }
}

/// Scheduler-facing parameters of a subtask.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attributes {
    /// Static priority; lower values are more urgent.
    pub priority: i32,
    /// Declared execution time, used when no duration table is supplied.
    pub exec_time: DurationNs,
    /// Relative deadline of the whole DAG. Read from the source only.
    pub relative_deadline: Option<DurationNs>,
    /// Display name. Defaults to `f<index>`.
    pub name: Option<String>,
    /// Extra scheduler parameters. The runtime attaches no meaning to them.
    pub extra: BTreeMap<String, f64>,
}

impl Attributes {
    pub fn with_priority(priority: i32) -> Self {
        Attributes {
            priority,
            ..Default::default()
        }
    }

    pub fn exec_time(mut self, d: DurationNs) -> Self {
        self.exec_time = d;
        self
    }

    pub fn relative_deadline(mut self, d: DurationNs) -> Self {
        self.relative_deadline = Some(d);
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn extra(mut self, key: impl Into<String>, value: f64) -> Self {
        self.extra.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("{kind} subtask {name}: {detail}")]
    Shape {
        name: String,
        kind: SubtaskKind,
        detail: &'static str,
    },
    #[error("topic {topic} is typed {existing}, not {requested}")]
    TypeMismatch {
        topic: String,
        existing: &'static str,
        requested: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("subtask {subtask} references unregistered topic {topic}")]
    UnknownTopic { subtask: String, topic: String },
}

/// One vertex of a DAG as declared at registration.
#[derive(Clone, Debug)]
pub struct SubtaskSpec {
    id: SubtaskId,
    name: String,
    kind: SubtaskKind,
    in_topics: Vec<TopicId>,
    out_topics: Vec<TopicId>,
    period: Option<DurationNs>,
    attributes: Attributes,
}

impl SubtaskSpec {
    pub fn id(&self) -> SubtaskId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SubtaskKind {
        self.kind
    }

    pub fn in_topics(&self) -> &[TopicId] {
        &self.in_topics
    }

    pub fn out_topics(&self) -> &[TopicId] {
        &self.out_topics
    }

    pub fn priority(&self) -> i32 {
        self.attributes.priority
    }

    pub fn period(&self) -> Option<DurationNs> {
        self.period
    }

    pub fn relative_deadline(&self) -> Option<DurationNs> {
        self.attributes.relative_deadline
    }

    pub fn attributes(&self) -> &Attributes {
        &self.attributes
    }
}

/// The mutable description of a DAG: subtasks plus the topic table.
#[derive(Clone, Debug, Default)]
pub struct DagSpec {
    topics: BTreeMap<String, TypeTag>,
    subtasks: Vec<SubtaskSpec>,
}

impl DagSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `name` to the topic table, or checks it against the existing entry.
    pub fn declare_topic(&mut self, name: &str, tag: TypeTag) -> Result<TopicId, SpecError> {
        match self.topics.get(name) {
            Some(existing) if *existing != tag => Err(SpecError::TypeMismatch {
                topic: name.to_string(),
                existing: existing.name(),
                requested: tag.name(),
            }),
            Some(_) => Ok(TopicId::new(name, tag)),
            None => {
                self.topics.insert(name.to_string(), tag);
                Ok(TopicId::new(name, tag))
            }
        }
    }

    /// Type the topic table assigns to `name`, if any.
    pub fn topic_type(&self, name: &str) -> Option<TypeTag> {
        self.topics.get(name).copied()
    }

    pub fn topics(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.topics.iter().map(|(n, t)| TopicId::new(n, *t))
    }

    pub fn subtasks(&self) -> &[SubtaskSpec] {
        &self.subtasks
    }

    pub fn subtask(&self, id: SubtaskId) -> Option<&SubtaskSpec> {
        self.subtasks.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    /// Appends a subtask. Topic lists must match the kind's shape: sources
    /// only publish, sinks only subscribe, intermediates do both. Topics are
    /// not checked against the table here; validation reports that.
    pub fn add_subtask(
        &mut self,
        kind: SubtaskKind,
        in_topics: Vec<TopicId>,
        out_topics: Vec<TopicId>,
        period: Option<DurationNs>,
        attributes: Attributes,
    ) -> Result<SubtaskId, SpecError> {
        let index = u32::try_from(self.subtasks.len()).expect("too many subtasks");
        let id = SubtaskId::new(index);
        let name = attributes
            .name
            .clone()
            .unwrap_or_else(|| format!("f{index}"));
        let shape = |detail| SpecError::Shape {
            name: name.clone(),
            kind,
            detail,
        };
        match kind {
            SubtaskKind::Source => {
                if !in_topics.is_empty() {
                    return Err(shape("a source has no input topics"));
                }
                if out_topics.is_empty() {
                    return Err(shape("a source needs at least one output topic"));
                }
            }
            SubtaskKind::Intermediate => {
                if in_topics.is_empty() || out_topics.is_empty() {
                    return Err(shape("an intermediate needs input and output topics"));
                }
            }
            SubtaskKind::Sink => {
                if in_topics.is_empty() {
                    return Err(shape("a sink needs at least one input topic"));
                }
                if !out_topics.is_empty() {
                    return Err(shape("a sink has no output topics"));
                }
            }
        }
        if kind != SubtaskKind::Source && period.is_some() {
            return Err(shape("only sources are periodic"));
        }
        for list in [&in_topics, &out_topics] {
            for (i, t) in list.iter().enumerate() {
                if list[..i].iter().any(|u| u.name() == t.name()) {
                    return Err(shape("a topic is listed twice"));
                }
            }
        }
        self.subtasks.push(SubtaskSpec {
            id,
            name,
            kind,
            in_topics,
            out_topics,
            period,
            attributes,
        });
        Ok(id)
    }
}

/// A precedence edge realized by one topic.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: SubtaskId,
    pub to: SubtaskId,
    pub topic: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
    /// Published topics nobody subscribes to.
    pub dangling: Vec<String>,
}

/// Materializes the edge set implied by topic wiring.
///
/// One edge per (publisher of t, subscriber of t) pair, ordered by
/// subscriber registration, then input position, then publisher registration.
pub fn derive_edges(dag: &DagSpec) -> Result<EdgeSet, ModelError> {
    for st in dag.subtasks() {
        for t in st.in_topics().iter().chain(st.out_topics()) {
            if dag.topic_type(t.name()).is_none() {
                return Err(ModelError::UnknownTopic {
                    subtask: st.name().to_string(),
                    topic: t.name().to_string(),
                });
            }
        }
    }

    Ok(wire_edges(dag))
}

/// Edge wiring by topic name alone; unknown topics simply wire by name.
pub(crate) fn wire_edges(dag: &DagSpec) -> EdgeSet {
    let mut publishers: BTreeMap<&str, Vec<SubtaskId>> = BTreeMap::new();
    for st in dag.subtasks() {
        for t in st.out_topics() {
            publishers.entry(t.name()).or_default().push(st.id());
        }
    }

    let mut edges = Vec::new();
    let mut subscribed: BTreeMap<&str, ()> = BTreeMap::new();
    for st in dag.subtasks() {
        for t in st.in_topics() {
            subscribed.insert(t.name(), ());
            for &from in publishers.get(t.name()).into_iter().flatten() {
                edges.push(Edge {
                    from,
                    to: st.id(),
                    topic: t.name().to_string(),
                });
            }
        }
    }

    let mut dangling = Vec::new();
    for st in dag.subtasks() {
        for t in st.out_topics() {
            let name = t.name().to_string();
            if !subscribed.contains_key(t.name()) && !dangling.contains(&name) {
                dangling.push(name);
            }
        }
    }

    EdgeSet { edges, dangling }
}

/// The unit flowing over a topic.
#[derive(Clone, Debug)]
pub struct Message {
    pub topic: TopicId,
    pub job: JobIndex,
    /// Matching key; its meaning belongs to the delivery policy.
    pub stamp: TimePoint,
    pub payload: Value,
    /// When the emitting runtime released the message.
    pub publish_time: TimePoint,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int() -> TypeTag {
        TypeTag::of::<i32>()
    }

    fn topic(dag: &mut DagSpec, name: &str) -> TopicId {
        dag.declare_topic(name, int()).unwrap()
    }

    fn edge(from: u32, to: u32, topic: &str) -> Edge {
        Edge {
            from: SubtaskId::new(from),
            to: SubtaskId::new(to),
            topic: topic.to_string(),
        }
    }

    fn split_chain() -> DagSpec {
        let mut dag = DagSpec::new();
        let t0 = topic(&mut dag, "topic0");
        let t1 = topic(&mut dag, "topic1");
        let t2 = topic(&mut dag, "topic2");
        let p = Some(DurationNs::from_millis(25));
        dag.add_subtask(SubtaskKind::Source, vec![], vec![t0.clone()], p, Attributes::default())
            .unwrap();
        dag.add_subtask(
            SubtaskKind::Intermediate,
            vec![t0],
            vec![t1.clone(), t2.clone()],
            None,
            Attributes::default(),
        )
        .unwrap();
        dag.add_subtask(SubtaskKind::Sink, vec![t1, t2], vec![], None, Attributes::default())
            .unwrap();
        dag
    }

    #[test]
    fn split_chain_wiring_edges() {
        let set = derive_edges(&split_chain()).unwrap();
        assert_eq!(
            set.edges,
            vec![edge(0, 1, "topic0"), edge(1, 2, "topic1"), edge(1, 2, "topic2")]
        );
        assert!(set.dangling.is_empty());
    }

    #[test]
    fn lone_source_has_dangling_topic() {
        let mut dag = DagSpec::new();
        let t = topic(&mut dag, "out");
        dag.add_subtask(
            SubtaskKind::Source,
            vec![],
            vec![t],
            Some(DurationNs::from_millis(1)),
            Attributes::default(),
        )
        .unwrap();
        let set = derive_edges(&dag).unwrap();
        assert!(set.edges.is_empty());
        assert_eq!(set.dangling, vec!["out".to_string()]);
    }

    #[test]
    fn diamond_matches_hand_drawn_adjacency() {
        // f0 -> a -> f1 -> c -> f3
        // f0 -> b -> f2 -> d -> f3
        let mut dag = DagSpec::new();
        let [a, b, c, d] = ["a", "b", "c", "d"].map(|n| topic(&mut dag, n));
        let p = Some(DurationNs::from_millis(10));
        let attrs = Attributes::default;
        dag.add_subtask(SubtaskKind::Source, vec![], vec![a.clone(), b.clone()], p, attrs())
            .unwrap();
        dag.add_subtask(SubtaskKind::Intermediate, vec![a], vec![c.clone()], None, attrs())
            .unwrap();
        dag.add_subtask(SubtaskKind::Intermediate, vec![b], vec![d.clone()], None, attrs())
            .unwrap();
        dag.add_subtask(SubtaskKind::Sink, vec![c, d], vec![], None, attrs())
            .unwrap();

        let set = derive_edges(&dag).unwrap();
        let mut adjacency = [[false; 4]; 4];
        for e in &set.edges {
            adjacency[e.from.index()][e.to.index()] = true;
        }
        let expected = [
            [false, true, true, false],
            [false, false, false, true],
            [false, false, false, true],
            [false, false, false, false],
        ];
        assert_eq!(set.edges.len(), 4);
        assert_eq!(adjacency, expected);
    }

    #[test]
    fn unknown_topic_is_reported() {
        let mut dag = DagSpec::new();
        let ghost = TopicId::new("ghost", int());
        dag.add_subtask(
            SubtaskKind::Source,
            vec![],
            vec![ghost],
            Some(DurationNs::from_millis(1)),
            Attributes::default(),
        )
        .unwrap();
        assert_eq!(
            derive_edges(&dag),
            Err(ModelError::UnknownTopic {
                subtask: "f0".into(),
                topic: "ghost".into()
            })
        );
    }

    #[test]
    fn edge_derivation_is_pure() {
        let dag = split_chain();
        assert_eq!(derive_edges(&dag).unwrap(), derive_edges(&dag.clone()).unwrap());
    }

    #[test]
    fn topic_types_are_fixed() {
        let mut dag = DagSpec::new();
        dag.declare_topic("t", int()).unwrap();
        assert!(dag.declare_topic("t", int()).is_ok());
        assert!(matches!(
            dag.declare_topic("t", TypeTag::of::<f32>()),
            Err(SpecError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn shapes_are_enforced() {
        let mut dag = DagSpec::new();
        let t = topic(&mut dag, "t");
        let err = dag
            .add_subtask(SubtaskKind::Sink, vec![], vec![], None, Attributes::default())
            .unwrap_err();
        assert!(matches!(err, SpecError::Shape { kind: SubtaskKind::Sink, .. }));
        let err = dag
            .add_subtask(
                SubtaskKind::Intermediate,
                vec![t.clone()],
                vec![t],
                Some(DurationNs::from_millis(1)),
                Attributes::default(),
            )
            .unwrap_err();
        assert!(matches!(err, SpecError::Shape { .. }));
        assert!(dag.is_empty());
    }

    #[test]
    fn values_downcast() {
        let v = Value::new(7i32);
        assert_eq!(v.tag(), TypeTag::of::<i32>());
        assert_eq!(v.downcast_ref::<i32>(), Some(&7));
        assert_eq!(v.downcast_ref::<u32>(), None);
    }
}
