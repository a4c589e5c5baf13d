//! Domain types shared by every actor in the simulation: identifiers,
//! simulated time, versioned values, the transaction catalog and live
//! transaction instances with their lifecycle state machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in milliseconds since the start of a run.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_ms(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub fn ms(self) -> u64 {
        self.0
    }

    /// Saturating addition of a millisecond duration.
    pub fn after(self, delta_ms: u64) -> Self {
        Timestamp(self.0.saturating_add(delta_ms))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

macro_rules! small_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

small_id!(
    /// A mobile host. Displayed as `M1`, `M2`, ...
    SiteId,
    "M"
);
small_id!(
    /// A base station, which also acts as the commit coordinator for the
    /// transactions that started in its cell.
    BaseStationId,
    "BS"
);
small_id!(
    /// A radio cell. Cell `n` is served by base station `n`.
    CellId,
    "cell"
);

impl BaseStationId {
    pub fn cell(self) -> CellId {
        CellId(self.0)
    }
}

impl CellId {
    pub fn base_station(self) -> BaseStationId {
        BaseStationId(self.0)
    }
}

/// Globally unique identifier of one transaction instance.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx{}", self.0)
    }
}

/// Catalog identifier of a transaction type, e.g. `T1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnTypeId(pub String);

impl TxnTypeId {
    pub fn new(id: impl Into<String>) -> Self {
        TxnTypeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TxnTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Primary-key value of a row.
pub type RowKey = i64;

/// Scalar cell value. Monetary amounts are whole units.
pub type Value = i64;

/// Commit sequence number that produced a value; 0 is the initial load.
pub type Version = u64;

/// One attribute of one row of one relation: the unit of conflict.
///
/// The derived ordering is lexicographic over `(relation, row_key, attribute)`.
///
/// Serialized as its display form, `Relation.row_key.Attribute`, so that it
/// can key JSON objects.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct DataItemId {
    pub relation: String,
    pub row_key: RowKey,
    pub attribute: String,
}

impl DataItemId {
    pub fn new(relation: impl Into<String>, row_key: RowKey, attribute: impl Into<String>) -> Self {
        DataItemId {
            relation: relation.into(),
            row_key,
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for DataItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.relation, self.row_key, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed data item {0:?}, expected Relation.key.Attribute")]
pub struct ParseDataItemError(String);

impl std::str::FromStr for DataItemId {
    type Err = ParseDataItemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseDataItemError(s.to_string());
        let (relation, rest) = s.split_once('.').ok_or_else(err)?;
        let (key, attribute) = rest.split_once('.').ok_or_else(err)?;
        if relation.is_empty() || attribute.is_empty() {
            return Err(err());
        }
        let row_key = key.parse().map_err(|_| err())?;
        Ok(DataItemId::new(relation, row_key, attribute))
    }
}

impl From<DataItemId> for String {
    fn from(id: DataItemId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for DataItemId {
    type Error = ParseDataItemError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionedValue {
    pub value: Value,
    pub version: Version,
}

impl VersionedValue {
    pub fn new(value: Value, version: Version) -> Self {
        VersionedValue { value, version }
    }

    pub fn initial(value: Value) -> Self {
        VersionedValue { value, version: 0 }
    }
}

impl fmt::Display for VersionedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@v{}", self.value, self.version)
    }
}

/// A snapshot or fragment: items with the value and version that was read.
pub type Fragment = BTreeMap<DataItemId, VersionedValue>;

/// A row of the `Transaction_Info` catalog.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionType {
    pub id: TxnTypeId,
    pub name: String,
    pub relation: String,
    /// Attribute names the transaction touches, parameterized by a row key.
    pub items: Vec<String>,
}

impl TransactionType {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        relation: impl Into<String>,
        items: &[&str],
    ) -> Self {
        TransactionType {
            id: TxnTypeId::new(id),
            name: name.into(),
            relation: relation.into(),
            items: items.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Instantiates the type's items for one row.
    ///
    /// The relation's primary-key attribute is never part of the result:
    /// keys are immutable and cannot conflict.
    pub fn data_items(&self, row_key: RowKey, key_attribute: &str) -> BTreeSet<DataItemId> {
        self.items
            .iter()
            .filter(|a| a.as_str() != key_attribute)
            .map(|a| DataItemId::new(self.relation.clone(), row_key, a.clone()))
            .collect()
    }
}

/// Arguments of a transaction instance: which row, and the operation amount.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Params {
    pub row_key: RowKey,
    pub amount: Value,
}

impl Params {
    pub fn new(row_key: RowKey, amount: Value) -> Self {
        Params { row_key, amount }
    }
}

/// Lifecycle of a transaction instance at its mobile host.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxnState {
    Created,
    Requested,
    Tentative,
    LocallyCommitted,
    AwaitingGlobal,
    Restarting,
    GloballyCommitted,
    LocallyFailed,
    Aborted,
}

impl TxnState {
    pub const ALL: [TxnState; 9] = [
        TxnState::Created,
        TxnState::Requested,
        TxnState::Tentative,
        TxnState::LocallyCommitted,
        TxnState::AwaitingGlobal,
        TxnState::Restarting,
        TxnState::GloballyCommitted,
        TxnState::LocallyFailed,
        TxnState::Aborted,
    ];

    pub fn can_transition_to(self, next: TxnState) -> bool {
        use TxnState::*;
        matches!(
            (self, next),
            (Created, Requested)
                | (Requested, Tentative)
                | (Tentative, LocallyCommitted)
                | (Tentative, LocallyFailed)
                | (LocallyCommitted, AwaitingGlobal)
                | (AwaitingGlobal, GloballyCommitted)
                | (AwaitingGlobal, Restarting)
                | (AwaitingGlobal, Aborted)
                | (Tentative, Restarting)
                | (Restarting, Tentative)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TxnState::GloballyCommitted | TxnState::LocallyFailed | TxnState::Aborted
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal transition {from:?} -> {to:?} for {instance}")]
pub struct IllegalTransition {
    pub instance: InstanceId,
    pub from: TxnState,
    pub to: TxnState,
}

/// A live execution attempt of a transaction type at a mobile host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionInstance {
    pub instance_id: InstanceId,
    pub site: SiteId,
    pub txn_type_id: TxnTypeId,
    pub params: Params,
    pub state: TxnState,
    pub arrival_time: Timestamp,
    pub snapshot: Fragment,
    pub restart_count: u32,
    pub coordinator_of_record: BaseStationId,
    /// When the instance was begun at the host; commit latency is measured from here.
    pub began_at: Timestamp,
}

impl TransactionInstance {
    pub fn new(
        instance_id: InstanceId,
        site: SiteId,
        txn_type_id: TxnTypeId,
        params: Params,
        coordinator_of_record: BaseStationId,
        now: Timestamp,
    ) -> Self {
        TransactionInstance {
            instance_id,
            site,
            txn_type_id,
            params,
            state: TxnState::Created,
            arrival_time: now,
            snapshot: Fragment::new(),
            restart_count: 0,
            coordinator_of_record,
            began_at: now,
        }
    }

    /// Moves to `next`, rejecting anything outside the lifecycle graph.
    pub fn transition(&mut self, next: TxnState) -> Result<(), IllegalTransition> {
        if !self.state.can_transition_to(next) {
            return Err(IllegalTransition {
                instance: self.instance_id,
                from: self.state,
                to: next,
            });
        }
        self.state = next;
        Ok(())
    }

    pub fn read_versions(&self) -> BTreeMap<DataItemId, Version> {
        self.snapshot
            .iter()
            .map(|(id, vv)| (id.clone(), vv.version))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn data_item_string_round_trip() {
        let id = DataItemId::new("Account", -7, "Amount");
        assert_eq!(id.to_string().parse::<DataItemId>().unwrap(), id);
        let json = serde_json::to_string(&BTreeMap::from([(id.clone(), 1u64)])).unwrap();
        assert_eq!(json, r#"{"Account.-7.Amount":1}"#);
        assert!("Account.x.Amount".parse::<DataItemId>().is_err());
        assert!("Account.1".parse::<DataItemId>().is_err());
    }

    #[test]
    fn data_items_skip_primary_key() {
        let t1 = TransactionType::new("T1", "Deposit", "Account", &["Account_no", "Amount"]);
        let items = t1.data_items(103, "Account_no");
        assert_eq!(items.len(), 1);
        assert_eq!(
            items.into_iter().next().unwrap(),
            DataItemId::new("Account", 103, "Amount")
        );
    }

    #[test]
    fn data_item_order_is_lexicographic() {
        let a = DataItemId::new("Account", 2, "Amount");
        let b = DataItemId::new("Account", 10, "Amount");
        let c = DataItemId::new("Account", 10, "Owner");
        let d = DataItemId::new("Branch", 1, "Amount");
        assert!(a < b && b < c && c < d);
    }

    #[test]
    fn illegal_transition_is_rejected() {
        let mut inst = TransactionInstance::new(
            InstanceId(1),
            SiteId(1),
            TxnTypeId::new("T1"),
            Params::new(103, 1000),
            BaseStationId(1),
            Timestamp::ZERO,
        );
        let err = inst.transition(TxnState::GloballyCommitted).unwrap_err();
        assert_eq!(err.from, TxnState::Created);
        assert_eq!(inst.state, TxnState::Created);
        inst.transition(TxnState::Requested).unwrap();
        inst.transition(TxnState::Tentative).unwrap();
        inst.transition(TxnState::Restarting).unwrap();
        inst.transition(TxnState::Tentative).unwrap();
    }

    #[test]
    fn terminal_states_have_no_exits() {
        for from in TxnState::ALL.iter().filter(|s| s.is_terminal()) {
            for to in TxnState::ALL {
                assert!(!from.can_transition_to(to), "{from:?} -> {to:?}");
            }
        }
    }

    fn arb_item() -> impl Strategy<Value = DataItemId> {
        (
            prop::sample::select(vec!["Account", "Branch", "Loan"]),
            -5i64..50,
            prop::sample::select(vec!["Amount", "Owner", "Limit"]),
        )
            .prop_map(|(r, k, a)| DataItemId::new(r, k, a))
    }

    proptest! {
        #[test]
        fn sorting_items_is_canonical(mut items in prop::collection::vec(arb_item(), 0..40)) {
            let mut again = items.clone();
            again.reverse();
            items.sort();
            again.sort();
            prop_assert_eq!(&items, &again);
            let mut thrice = items.clone();
            thrice.sort();
            prop_assert_eq!(items, thrice);
        }

        // Random walks over the lifecycle graph: every step taken is legal and
        // every step rejected leaves the state untouched.
        #[test]
        fn lifecycle_walks_stay_legal(choices in prop::collection::vec(0usize..9, 1..60)) {
            let mut inst = TransactionInstance::new(
                InstanceId(7), SiteId(2), TxnTypeId::new("T2"),
                Params::new(1, 1), BaseStationId(1), Timestamp::ZERO,
            );
            for c in choices {
                let before = inst.state;
                let next = TxnState::ALL[c];
                match inst.transition(next) {
                    Ok(()) => prop_assert!(before.can_transition_to(next)),
                    Err(e) => {
                        prop_assert!(!before.can_transition_to(next));
                        prop_assert_eq!(e.from, before);
                        prop_assert_eq!(inst.state, before);
                    }
                }
            }
        }
    }
}
