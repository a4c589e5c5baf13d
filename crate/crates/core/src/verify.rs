//! Serializability checking of committed histories.
//!
//! A committed history is read from the commit log. Because every version
//! is the commit sequence number that wrote it, the version order of each
//! item is known exactly and the conflict graph can be built without
//! guessing:
//!
//! * `wr`: the writer of the version a transaction read precedes the reader;
//! * `ww`: consecutive writers of an item are ordered by version;
//! * `rw`: a reader precedes the next writer after the version it read.
//!
//! An acyclic graph means the history is conflict serializable. The serial
//! replay oracle then re-runs the committed transactions one at a time in a
//! serialization order and checks that they compute exactly what was logged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::TransactionInfoRegistry;
use crate::logic::{LogicResult, TransactionLogic};
use crate::model::{DataItemId, InstanceId, Params, SiteId, TxnTypeId, Value, Version};
use crate::store::{CommitLog, Store, StoreError};

/// What the workload asked an instance to do.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub site: SiteId,
    pub txn_type_id: TxnTypeId,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("inconsistent history: {0}")]
    InconsistentHistory(String),
    #[error("conflict cycle {}", fmt_cycle(.cycle))]
    CycleFound { cycle: Vec<InstanceId> },
    #[error("serial replay diverges at {instance}: {detail}")]
    ReplayDivergence { instance: InstanceId, detail: String },
    #[error("no intent recorded for {0}")]
    MissingIntent(InstanceId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn fmt_cycle(cycle: &[InstanceId]) -> String {
    cycle
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTxn {
    pub instance: InstanceId,
    pub commit_seq: u64,
    pub reads: BTreeMap<DataItemId, Version>,
    pub writes: BTreeMap<DataItemId, Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedHistory {
    /// In commit order.
    pub txns: Vec<CommittedTxn>,
}

impl CommittedHistory {
    pub fn from_log(log: &CommitLog) -> Self {
        CommittedHistory {
            txns: log
                .iter()
                .map(|e| CommittedTxn {
                    instance: e.instance_id,
                    commit_seq: e.commit_seq,
                    reads: e.read_versions.clone(),
                    writes: e.writes.iter().map(|(id, w)| (id.clone(), w.after)).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.txns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txns.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Wr,
    Ww,
    Rw,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: InstanceId,
    pub to: InstanceId,
    pub kind: EdgeKind,
    pub item: DataItemId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictGraph {
    pub nodes: Vec<InstanceId>,
    pub edges: BTreeSet<Edge>,
}

impl ConflictGraph {
    fn successors(&self) -> BTreeMap<InstanceId, BTreeSet<InstanceId>> {
        let mut succ: BTreeMap<InstanceId, BTreeSet<InstanceId>> =
            self.nodes.iter().map(|n| (*n, BTreeSet::new())).collect();
        for e in &self.edges {
            succ.entry(e.from).or_default().insert(e.to);
        }
        succ
    }

    /// A topological order, smallest ready node first, or a cycle.
    pub fn topological_order(&self) -> Result<Vec<InstanceId>, Vec<InstanceId>> {
        let succ = self.successors();
        let mut indegree: BTreeMap<InstanceId, usize> = succ.keys().map(|n| (*n, 0)).collect();
        for targets in succ.values() {
            for t in targets {
                *indegree.entry(*t).or_default() += 1;
            }
        }
        let mut ready: BTreeSet<InstanceId> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for t in &succ[&n] {
                let d = indegree.get_mut(t).expect("every target is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*t);
                }
            }
        }
        if order.len() == indegree.len() {
            Ok(order)
        } else {
            let left: BTreeSet<InstanceId> =
                indegree.iter().filter(|(_, d)| **d > 0).map(|(n, _)| *n).collect();
            Err(find_cycle(&succ, &left))
        }
    }
}

/// Walks backwards-free successors inside `left` until a node repeats.
/// Every node left over by Kahn's algorithm lies on or leads to a cycle.
fn find_cycle(
    succ: &BTreeMap<InstanceId, BTreeSet<InstanceId>>,
    left: &BTreeSet<InstanceId>,
) -> Vec<InstanceId> {
    let Some(&start) = left.first() else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut seen = BTreeMap::from([(start, 0usize)]);
    let mut cur = start;
    loop {
        let next = *succ[&cur]
            .iter()
            .find(|n| left.contains(n))
            .expect("a leftover node always has a leftover successor");
        if let Some(&i) = seen.get(&next) {
            let mut cycle = path.split_off(i);
            cycle.push(next);
            return cycle;
        }
        seen.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

pub fn build_conflict_graph(history: &CommittedHistory) -> Result<ConflictGraph, VerifyError> {
    let mut by_seq: BTreeMap<u64, InstanceId> = BTreeMap::new();
    let mut writers: BTreeMap<&DataItemId, Vec<(u64, InstanceId)>> = BTreeMap::new();
    let mut nodes = Vec::with_capacity(history.len());
    let mut seen = BTreeSet::new();
    for t in &history.txns {
        if !seen.insert(t.instance) {
            return Err(VerifyError::InconsistentHistory(format!(
                "{} committed twice",
                t.instance
            )));
        }
        if by_seq.insert(t.commit_seq, t.instance).is_some() {
            return Err(VerifyError::InconsistentHistory(format!(
                "commit sequence {} used twice",
                t.commit_seq
            )));
        }
        nodes.push(t.instance);
        for item in t.writes.keys() {
            writers.entry(item).or_default().push((t.commit_seq, t.instance));
        }
    }
    for w in writers.values_mut() {
        w.sort();
    }

    let mut edges = BTreeSet::new();
    for (item, ws) in &writers {
        for pair in ws.windows(2) {
            edges.insert(Edge {
                from: pair[0].1,
                to: pair[1].1,
                kind: EdgeKind::Ww,
                item: (*item).clone(),
            });
        }
    }
    for t in &history.txns {
        for (item, &v) in &t.reads {
            let ws = writers.get(item).map_or(&[][..], Vec::as_slice);
            if v >= t.commit_seq && v != 0 {
                return Err(VerifyError::InconsistentHistory(format!(
                    "{} read {item} at version {v}, not before its own commit {}",
                    t.instance, t.commit_seq
                )));
            }
            if v != 0 {
                let Ok(i) = ws.binary_search_by_key(&v, |(s, _)| *s) else {
                    return Err(VerifyError::InconsistentHistory(format!(
                        "{} read {item} at version {v}, which no commit wrote",
                        t.instance
                    )));
                };
                let writer = ws[i].1;
                if writer != t.instance {
                    edges.insert(Edge {
                        from: writer,
                        to: t.instance,
                        kind: EdgeKind::Wr,
                        item: item.clone(),
                    });
                }
            }
            let next = ws.partition_point(|(s, _)| *s <= v);
            if let Some(&(_, overwriter)) = ws.get(next) {
                if overwriter != t.instance {
                    edges.insert(Edge {
                        from: t.instance,
                        to: overwriter,
                        kind: EdgeKind::Rw,
                        item: item.clone(),
                    });
                }
            }
        }
    }
    Ok(ConflictGraph { nodes, edges })
}

/// Serializable histories yield a serialization order. When every edge goes
/// forward in commit order, that order is commit order itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerialOrder {
    pub order: Vec<InstanceId>,
    pub commit_order_is_witness: bool,
    pub edges: usize,
}

pub fn assert_serializable(history: &CommittedHistory) -> Result<SerialOrder, VerifyError> {
    let graph = build_conflict_graph(history)?;
    let seq: BTreeMap<InstanceId, u64> =
        history.txns.iter().map(|t| (t.instance, t.commit_seq)).collect();
    let commit_order_is_witness = graph.edges.iter().all(|e| seq[&e.from] < seq[&e.to]);
    if commit_order_is_witness {
        return Ok(SerialOrder {
            order: history.txns.iter().map(|t| t.instance).collect(),
            commit_order_is_witness,
            edges: graph.edges.len(),
        });
    }
    match graph.topological_order() {
        Ok(order) => Ok(SerialOrder {
            order,
            commit_order_is_witness,
            edges: graph.edges.len(),
        }),
        Err(cycle) => Err(VerifyError::CycleFound { cycle }),
    }
}

/// Re-executes the committed transactions serially from the initial state
/// in `order` and compares each write set and the final state with what
/// the run produced.
pub fn serial_replay_oracle(
    final_store: &Store,
    registry: &TransactionInfoRegistry,
    intents: &BTreeMap<InstanceId, Intent>,
    order: &[InstanceId],
) -> Result<(), VerifyError> {
    let logic = TransactionLogic::from_registry(registry).map_err(|t| {
        VerifyError::InconsistentHistory(format!("catalog entry {} has no operation", t.name))
    })?;
    let history = CommittedHistory::from_log(final_store.log());
    let logged: BTreeMap<InstanceId, &CommittedTxn> =
        history.txns.iter().map(|t| (t.instance, t)).collect();
    let mut replay = final_store.initial();
    for id in order {
        let intent = intents.get(id).ok_or(VerifyError::MissingIntent(*id))?;
        let txn = logged.get(id).ok_or_else(|| {
            VerifyError::InconsistentHistory(format!("{id} is not in the commit log"))
        })?;
        let ty = registry.get(&intent.txn_type_id).ok_or_else(|| {
            VerifyError::InconsistentHistory(format!("unknown type {}", intent.txn_type_id))
        })?;
        let key_attr = replay
            .relation(&ty.relation)
            .ok_or_else(|| VerifyError::Store(StoreError::UnknownRelation(ty.relation.clone())))?
            .key_attribute()
            .to_string();
        let footprint = ty.data_items(intent.params.row_key, &key_attr);
        let fragment = replay.extract_fragment(&footprint)?;
        let expected = match logic.execute(&intent.txn_type_id, &fragment, &intent.params) {
            Some(LogicResult::WriteSet(ws)) => ws,
            Some(LogicResult::LocalFailure(reason)) => {
                return Err(VerifyError::ReplayDivergence {
                    instance: *id,
                    detail: format!("fails serially ({reason}) but committed"),
                })
            }
            None => unreachable!("logic covers the registry"),
        };
        if expected != txn.writes {
            return Err(VerifyError::ReplayDivergence {
                instance: *id,
                detail: format!("wrote {:?}, serial execution writes {:?}", txn.writes, expected),
            });
        }
        replay.apply_commit(*id, BTreeMap::new(), &expected, txn_time(final_store, txn.commit_seq))?;
    }
    let values = |s: &Store| -> BTreeMap<DataItemId, Value> {
        s.state().into_iter().map(|(k, v)| (k, v.value)).collect()
    };
    if values(&replay) != values(final_store) {
        let last = order.last().copied().unwrap_or(InstanceId(0));
        return Err(VerifyError::ReplayDivergence {
            instance: last,
            detail: "final state differs from the serial execution".into(),
        });
    }
    Ok(())
}

fn txn_time(store: &Store, seq: u64) -> crate::model::Timestamp {
    store
        .log()
        .iter()
        .find(|e| e.commit_seq == seq)
        .map(|e| e.timestamp)
        .unwrap_or_default()
}

/// Summary of checking one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub commits: usize,
    pub edges: usize,
    pub serializable: bool,
    pub commit_order_is_witness: bool,
    pub replay_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<InstanceId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.serializable && self.replay_ok
    }
}

pub fn verify_run(
    store: &Store,
    registry: &TransactionInfoRegistry,
    intents: &BTreeMap<InstanceId, Intent>,
) -> Verdict {
    let history = CommittedHistory::from_log(store.log());
    let mut v = Verdict {
        commits: history.len(),
        edges: 0,
        serializable: false,
        commit_order_is_witness: false,
        replay_ok: false,
        cycle: None,
        error: None,
    };
    match assert_serializable(&history) {
        Ok(order) => {
            v.serializable = true;
            v.edges = order.edges;
            v.commit_order_is_witness = order.commit_order_is_witness;
            match serial_replay_oracle(store, registry, intents, &order.order) {
                Ok(()) => v.replay_ok = true,
                Err(e) => v.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            if let VerifyError::CycleFound { cycle } = &e {
                v.cycle = Some(cycle.clone());
            }
            v.error = Some(e.to_string());
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;
    use crate::store::Relation;

    fn x() -> DataItemId {
        DataItemId::new("Account", 103, "Amount")
    }

    fn y() -> DataItemId {
        DataItemId::new("Account", 101, "Amount")
    }

    fn txn(id: u64, seq: u64, reads: &[(DataItemId, u64)], writes: &[(DataItemId, i64)]) -> CommittedTxn {
        CommittedTxn {
            instance: InstanceId(id),
            commit_seq: seq,
            reads: reads.iter().cloned().collect(),
            writes: writes.iter().cloned().collect(),
        }
    }

    #[test]
    fn write_skew_cycle_is_found() {
        // Each reads both items at the initial version and writes one.
        let h = CommittedHistory {
            txns: vec![
                txn(1, 1, &[(x(), 0), (y(), 0)], &[(x(), 1)]),
                txn(2, 2, &[(x(), 0), (y(), 0)], &[(y(), 1)]),
            ],
        };
        let g = build_conflict_graph(&h).unwrap();
        assert!(g.edges.iter().any(|e| e.kind == EdgeKind::Rw && e.from == InstanceId(2)));
        match assert_serializable(&h) {
            Err(VerifyError::CycleFound { cycle }) => {
                assert_eq!(cycle.first(), cycle.last());
                assert_eq!(cycle.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lost_update_is_a_cycle() {
        let h = CommittedHistory {
            txns: vec![
                txn(1, 1, &[(x(), 0)], &[(x(), 12500)]),
                txn(2, 2, &[(x(), 0)], &[(x(), 11000)]),
            ],
        };
        assert!(matches!(assert_serializable(&h), Err(VerifyError::CycleFound { .. })));
    }

    #[test]
    fn validated_chain_uses_commit_order() {
        let h = CommittedHistory {
            txns: vec![
                txn(1, 1, &[(x(), 0)], &[(x(), 12500)]),
                txn(2, 2, &[(x(), 1)], &[(x(), 12000)]),
                txn(3, 3, &[(x(), 2)], &[]),
            ],
        };
        let g = build_conflict_graph(&h).unwrap();
        let kinds: BTreeSet<_> = g.edges.iter().map(|e| (e.from.0, e.to.0, e.kind)).collect();
        assert_eq!(
            kinds,
            BTreeSet::from([(1, 2, EdgeKind::Ww), (1, 2, EdgeKind::Wr), (2, 3, EdgeKind::Wr)])
        );
        let order = assert_serializable(&h).unwrap();
        assert!(order.commit_order_is_witness);
        assert_eq!(order.order, [InstanceId(1), InstanceId(2), InstanceId(3)]);
    }

    #[test]
    fn read_only_before_writer_is_serializable_out_of_commit_order() {
        // tx2 read the initial version but committed after tx1 overwrote it.
        let h = CommittedHistory {
            txns: vec![
                txn(1, 1, &[(x(), 0)], &[(x(), 5)]),
                txn(2, 2, &[(x(), 0)], &[]),
            ],
        };
        let order = assert_serializable(&h).unwrap();
        assert!(!order.commit_order_is_witness);
        assert_eq!(order.order, [InstanceId(2), InstanceId(1)]);
    }

    #[test]
    fn phantom_version_is_inconsistent() {
        let h = CommittedHistory {
            txns: vec![txn(1, 1, &[(x(), 7)], &[])],
        };
        assert!(matches!(
            build_conflict_graph(&h),
            Err(VerifyError::InconsistentHistory(_))
        ));
    }

    fn bank() -> Store {
        Store::load_initial([Relation::from_rows(
            "Account",
            &["Account_no", "Amount"],
            [(101, vec![10000]), (102, vec![12300]), (103, vec![11500])],
        )
        .unwrap()])
        .unwrap()
    }

    fn intents() -> BTreeMap<InstanceId, Intent> {
        BTreeMap::from([
            (
                InstanceId(1),
                Intent {
                    site: SiteId(1),
                    txn_type_id: TxnTypeId::new("T1"),
                    params: Params::new(103, 1000),
                },
            ),
            (
                InstanceId(2),
                Intent {
                    site: SiteId(2),
                    txn_type_id: TxnTypeId::new("T2"),
                    params: Params::new(103, 500),
                },
            ),
        ])
    }

    #[test]
    fn replay_accepts_validated_run() {
        let mut s = bank();
        s.apply_commit(InstanceId(1), [(x(), 0)].into(), &[(x(), 12500)].into(), Timestamp(1))
            .unwrap();
        s.apply_commit(InstanceId(2), [(x(), 1)].into(), &[(x(), 12000)].into(), Timestamp(2))
            .unwrap();
        let v = verify_run(&s, &TransactionInfoRegistry::banking(), &intents());
        assert!(v.passed(), "{v:?}");
        assert_eq!(s.read(&x()).unwrap().value, 12000);
    }

    #[test]
    fn replay_rejects_lost_update_even_without_graph() {
        let mut s = bank();
        s.apply_commit(InstanceId(1), [(x(), 0)].into(), &[(x(), 12500)].into(), Timestamp(1))
            .unwrap();
        s.apply_commit(InstanceId(2), [(x(), 0)].into(), &[(x(), 11000)].into(), Timestamp(2))
            .unwrap();
        let order = [InstanceId(1), InstanceId(2)];
        let err = serial_replay_oracle(&s, &TransactionInfoRegistry::banking(), &intents(), &order)
            .unwrap_err();
        assert!(matches!(err, VerifyError::ReplayDivergence { instance: InstanceId(2), .. }));
        let v = verify_run(&s, &TransactionInfoRegistry::banking(), &intents());
        assert!(!v.passed());
        assert!(v.cycle.is_some());
    }
}
