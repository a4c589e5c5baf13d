use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    DataItemId, InstanceId, SiteId, Timestamp, TransactionType, TxnTypeId, Version,
};

use super::CoordinatorError;

/// The `Transaction_Info` relation: which items each transaction type needs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionInfoRegistry {
    entries: BTreeMap<TxnTypeId, TransactionType>,
}

impl TransactionInfoRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, txn: TransactionType) -> Result<(), CoordinatorError> {
        if txn.items.is_empty() {
            return Err(CoordinatorError::EmptyTransactionType(txn.id));
        }
        if self.entries.contains_key(&txn.id) {
            return Err(CoordinatorError::DuplicateTransactionType(txn.id));
        }
        self.entries.insert(txn.id.clone(), txn);
        Ok(())
    }

    pub fn from_types(
        types: impl IntoIterator<Item = TransactionType>,
    ) -> Result<Self, CoordinatorError> {
        let mut reg = Self::new();
        for t in types {
            reg.register(t)?;
        }
        Ok(reg)
    }

    /// Deposit, Withdraw and Enquiry over `Account{Account_no, Amount}`.
    pub fn banking() -> Self {
        Self::from_types([
            TransactionType::new("T1", "Deposit", "Account", &["Account_no", "Amount"]),
            TransactionType::new("T2", "Withdraw", "Account", &["Account_no", "Amount"]),
            TransactionType::new("T3", "Enquiry", "Account", &["Amount"]),
        ])
        .expect("static catalog is valid")
    }

    pub fn get(&self, id: &TxnTypeId) -> Option<&TransactionType> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransactionType> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One row of the `Current Transactions` relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentTxnRow {
    pub site: SiteId,
    pub instance_id: InstanceId,
    pub txn_type_id: TxnTypeId,
    pub data_items: BTreeSet<DataItemId>,
    pub arrival_time: Timestamp,
    /// Versions most recently shipped to the host for this instance.
    pub shipped_versions: BTreeMap<DataItemId, Version>,
    /// Restarting reports sent so far.
    pub restarts: u32,
}

impl CurrentTxnRow {
    pub fn intersects<'a>(&self, mut items: impl Iterator<Item = &'a DataItemId>) -> bool {
        items.any(|i| self.data_items.contains(i))
    }
}

/// In-flight transactions known to one coordinator, keyed by instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentTransactionsTable {
    rows: BTreeMap<InstanceId, CurrentTxnRow>,
}

impl CurrentTransactionsTable {
    /// Inserts a row, replacing any previous row for the same instance.
    pub fn upsert(&mut self, row: CurrentTxnRow) -> Option<CurrentTxnRow> {
        self.rows.insert(row.instance_id, row)
    }

    pub fn remove(&mut self, id: InstanceId) -> Option<CurrentTxnRow> {
        self.rows.remove(&id)
    }

    pub fn get(&self, id: InstanceId) -> Option<&CurrentTxnRow> {
        self.rows.get(&id)
    }

    pub fn get_mut(&mut self, id: InstanceId) -> Option<&mut CurrentTxnRow> {
        self.rows.get_mut(&id)
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.rows.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CurrentTxnRow> {
        self.rows.values()
    }

    /// Rows other than `except` that share at least one item with `items`,
    /// in instance order.
    pub fn intersecting<'a>(
        &'a self,
        items: &'a BTreeSet<DataItemId>,
        except: InstanceId,
    ) -> impl Iterator<Item = &'a CurrentTxnRow> + 'a {
        self.rows
            .values()
            .filter(move |r| r.instance_id != except && r.intersects(items.iter()))
    }

    pub fn earliest_intersecting(
        &self,
        items: &BTreeSet<DataItemId>,
        except: InstanceId,
    ) -> Option<Timestamp> {
        self.intersecting(items, except).map(|r| r.arrival_time).min()
    }
}
