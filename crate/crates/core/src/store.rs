//! The fixed-host database server: authoritative versioned relations and the
//! commit log.
//!
//! Every stored value carries the commit sequence number of the write that
//! produced it (0 for the initial load). The log keeps before-images so that
//! the history can be audited independently of the coordinators.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DataItemId, Fragment, InstanceId, RowKey, Timestamp, Value, Version, VersionedValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("duplicate relation {0}")]
    DuplicateRelation(String),
    #[error("duplicate row key {key} in relation {relation}")]
    DuplicateRowKey { relation: String, key: RowKey },
    #[error("relation {relation} expects {expected} values per row, got {got}")]
    RowArity {
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error("relation {0} needs a primary key and at least one attribute")]
    EmptySchema(String),
    #[error("unknown data item {0}")]
    UnknownDataItem(DataItemId),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
}

/// A relation with a primary key. The key attribute is `schema[0]`; only the
/// remaining attributes are stored as versioned cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub schema: Vec<String>,
    pub rows: BTreeMap<RowKey, BTreeMap<String, VersionedValue>>,
}

impl Relation {
    pub fn new(name: impl Into<String>, schema: &[&str]) -> Result<Self, StoreError> {
        let name = name.into();
        if schema.len() < 2 {
            return Err(StoreError::EmptySchema(name));
        }
        Ok(Relation {
            name,
            schema: schema.iter().map(|s| s.to_string()).collect(),
            rows: BTreeMap::new(),
        })
    }

    /// Builds a relation from `(key, non-key values in schema order)` rows.
    pub fn from_rows(
        name: impl Into<String>,
        schema: &[&str],
        rows: impl IntoIterator<Item = (RowKey, Vec<Value>)>,
    ) -> Result<Self, StoreError> {
        let mut rel = Relation::new(name, schema)?;
        for (key, values) in rows {
            rel.insert_row(key, &values)?;
        }
        Ok(rel)
    }

    pub fn key_attribute(&self) -> &str {
        &self.schema[0]
    }

    pub fn value_attributes(&self) -> &[String] {
        &self.schema[1..]
    }

    pub fn insert_row(&mut self, key: RowKey, values: &[Value]) -> Result<(), StoreError> {
        let attrs = self.value_attributes();
        if values.len() != attrs.len() {
            return Err(StoreError::RowArity {
                relation: self.name.clone(),
                expected: attrs.len(),
                got: values.len(),
            });
        }
        if self.rows.contains_key(&key) {
            return Err(StoreError::DuplicateRowKey {
                relation: self.name.clone(),
                key,
            });
        }
        let row = attrs
            .iter()
            .cloned()
            .zip(values.iter().map(|v| VersionedValue::initial(*v)))
            .collect();
        self.rows.insert(key, row);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRecord {
    pub before: VersionedValue,
    pub after: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub commit_seq: u64,
    pub instance_id: InstanceId,
    pub timestamp: Timestamp,
    pub read_versions: BTreeMap<DataItemId, Version>,
    pub writes: BTreeMap<DataItemId, WriteRecord>,
}

/// Gapless, strictly increasing sequence of commits starting at 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitLog {
    pub entries: Vec<CommitEntry>,
}

impl CommitLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.commit_seq)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CommitEntry> {
        self.entries.iter()
    }
}

/// Opaque copy of the whole store, as kept by a mirror.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreSnapshot(Store);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Store {
    relations: BTreeMap<String, Relation>,
    log: CommitLog,
}

impl Store {
    pub fn load_initial(relations: impl IntoIterator<Item = Relation>) -> Result<Self, StoreError> {
        let mut map = BTreeMap::new();
        for mut rel in relations {
            if map.contains_key(&rel.name) {
                return Err(StoreError::DuplicateRelation(rel.name));
            }
            for row in rel.rows.values_mut() {
                for vv in row.values_mut() {
                    vv.version = 0;
                }
            }
            map.insert(rel.name.clone(), rel);
        }
        Ok(Store {
            relations: map,
            log: CommitLog::default(),
        })
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn log(&self) -> &CommitLog {
        &self.log
    }

    pub fn read(&self, item: &DataItemId) -> Result<VersionedValue, StoreError> {
        self.relations
            .get(&item.relation)
            .and_then(|r| r.rows.get(&item.row_key))
            .and_then(|row| row.get(&item.attribute))
            .copied()
            .ok_or_else(|| StoreError::UnknownDataItem(item.clone()))
    }

    fn cell_mut(&mut self, item: &DataItemId) -> Result<&mut VersionedValue, StoreError> {
        self.relations
            .get_mut(&item.relation)
            .and_then(|r| r.rows.get_mut(&item.row_key))
            .and_then(|row| row.get_mut(&item.attribute))
            .ok_or_else(|| StoreError::UnknownDataItem(item.clone()))
    }

    /// Current values and versions of `items`. Read-only.
    pub fn extract_fragment<'a>(
        &self,
        items: impl IntoIterator<Item = &'a DataItemId>,
    ) -> Result<Fragment, StoreError> {
        items
            .into_iter()
            .map(|id| Ok((id.clone(), self.read(id)?)))
            .collect()
    }

    pub fn latest_version(&self, item: &DataItemId) -> Result<Version, StoreError> {
        Ok(self.read(item)?.version)
    }

    /// Installs `write_set` under the next commit sequence number and logs it.
    ///
    /// Nothing is modified when any written item is unknown. An empty write
    /// set still consumes a sequence number.
    pub fn apply_commit(
        &mut self,
        instance_id: InstanceId,
        read_versions: BTreeMap<DataItemId, Version>,
        write_set: &BTreeMap<DataItemId, Value>,
        now: Timestamp,
    ) -> Result<u64, StoreError> {
        let mut writes = BTreeMap::new();
        for (id, after) in write_set {
            writes.insert(
                id.clone(),
                WriteRecord {
                    before: self.read(id)?,
                    after: *after,
                },
            );
        }
        let seq = self.log.last_seq() + 1;
        for (id, rec) in &writes {
            *self.cell_mut(id)? = VersionedValue::new(rec.after, seq);
        }
        self.log.entries.push(CommitEntry {
            commit_seq: seq,
            instance_id,
            timestamp: now,
            read_versions,
            writes,
        });
        Ok(seq)
    }

    /// Items written by commits after `seq`, with the newest version of each.
    pub fn changes_since(&self, seq: u64) -> BTreeMap<DataItemId, Version> {
        let start = self.log.entries.partition_point(|e| e.commit_seq <= seq);
        let mut out = BTreeMap::new();
        for e in &self.log.entries[start..] {
            for id in e.writes.keys() {
                out.insert(id.clone(), e.commit_seq);
            }
        }
        out
    }

    /// Every stored cell in canonical order.
    pub fn state(&self) -> BTreeMap<DataItemId, VersionedValue> {
        let mut out = BTreeMap::new();
        for rel in self.relations.values() {
            for (key, row) in &rel.rows {
                for (attr, vv) in row {
                    out.insert(DataItemId::new(rel.name.clone(), *key, attr.clone()), *vv);
                }
            }
        }
        out
    }

    pub fn items(&self) -> BTreeSet<DataItemId> {
        self.state().into_keys().collect()
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot(self.clone())
    }

    pub fn restore(&mut self, snapshot: &StoreSnapshot) {
        *self = snapshot.0.clone();
    }

    /// The store as it was before any commit: current relations with every
    /// logged write rolled back through its before-image.
    pub fn initial(&self) -> Store {
        let mut s = Store {
            relations: self.relations.clone(),
            log: CommitLog::default(),
        };
        for e in self.log.entries.iter().rev() {
            for (id, rec) in &e.writes {
                if let Ok(cell) = s.cell_mut(id) {
                    *cell = rec.before;
                }
            }
        }
        s
    }

    /// Re-applies a commit log on top of `self`, reproducing versions exactly.
    pub fn replay(&mut self, log: &CommitLog) -> Result<(), StoreError> {
        for e in &log.entries {
            let write_set = e.writes.iter().map(|(id, w)| (id.clone(), w.after)).collect();
            self.apply_commit(e.instance_id, e.read_versions.clone(), &write_set, e.timestamp)?;
        }
        Ok(())
    }
}
