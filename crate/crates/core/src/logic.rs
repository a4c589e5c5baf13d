//! Application semantics of the transaction catalog.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coordinator::TransactionInfoRegistry;
use crate::model::{DataItemId, Fragment, Params, TransactionType, TxnTypeId, Value};

pub type WriteSet = BTreeMap<DataItemId, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Deposit,
    Withdraw,
    Enquiry,
}

impl Operation {
    /// Looks an operation up by catalog name, case-insensitively.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "deposit" => Some(Operation::Deposit),
            "withdraw" | "withdrawal" => Some(Operation::Withdraw),
            "enquiry" | "inquiry" | "balance" => Some(Operation::Enquiry),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogicResult {
    WriteSet(WriteSet),
    LocalFailure(String),
}

impl Operation {
    /// Runs the operation over every item of the snapshot.
    pub fn execute(self, snapshot: &Fragment, params: &Params) -> LogicResult {
        match self {
            Operation::Enquiry => LogicResult::WriteSet(WriteSet::new()),
            Operation::Deposit => LogicResult::WriteSet(
                snapshot
                    .iter()
                    .map(|(id, vv)| (id.clone(), vv.value + params.amount))
                    .collect(),
            ),
            Operation::Withdraw => {
                if let Some((id, vv)) = snapshot.iter().find(|(_, vv)| vv.value < params.amount) {
                    return LogicResult::LocalFailure(format!(
                        "insufficient funds in {id}: {} < {}",
                        vv.value, params.amount
                    ));
                }
                LogicResult::WriteSet(
                    snapshot
                        .iter()
                        .map(|(id, vv)| (id.clone(), vv.value - params.amount))
                        .collect(),
                )
            }
        }
    }
}

/// Operation for every registered transaction type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransactionLogic {
    ops: BTreeMap<TxnTypeId, Operation>,
}

impl TransactionLogic {
    /// Maps each catalog entry to an operation by its name. Returns the first
    /// entry whose name is not a known operation as the error.
    pub fn from_registry(registry: &TransactionInfoRegistry) -> Result<Self, TransactionType> {
        let mut ops = BTreeMap::new();
        for t in registry.iter() {
            let op = Operation::from_name(&t.name).ok_or_else(|| t.clone())?;
            ops.insert(t.id.clone(), op);
        }
        Ok(TransactionLogic { ops })
    }

    pub fn operation(&self, id: &TxnTypeId) -> Option<Operation> {
        self.ops.get(id).copied()
    }

    pub fn execute(&self, id: &TxnTypeId, snapshot: &Fragment, params: &Params) -> Option<LogicResult> {
        self.operation(id).map(|op| op.execute(snapshot, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VersionedValue;
    use proptest::prelude::*;

    fn snap(v: Value) -> Fragment {
        [(DataItemId::new("Account", 103, "Amount"), VersionedValue::new(v, 0))].into()
    }

    fn amount(ws: &LogicResult) -> Value {
        match ws {
            LogicResult::WriteSet(w) => *w.values().next().unwrap(),
            LogicResult::LocalFailure(e) => panic!("{e}"),
        }
    }

    #[test]
    fn deposit_and_withdraw() {
        assert_eq!(amount(&Operation::Deposit.execute(&snap(11500), &Params::new(103, 1000))), 12500);
        assert_eq!(amount(&Operation::Withdraw.execute(&snap(11500), &Params::new(103, 500))), 11000);
        assert_eq!(amount(&Operation::Withdraw.execute(&snap(12500), &Params::new(103, 500))), 12000);
        assert_eq!(amount(&Operation::Deposit.execute(&snap(11000), &Params::new(103, 1000))), 12000);
    }

    #[test]
    fn overdraft_fails_locally() {
        let r = Operation::Withdraw.execute(&snap(300), &Params::new(103, 500));
        assert!(matches!(r, LogicResult::LocalFailure(_)));
    }

    #[test]
    fn enquiry_writes_nothing() {
        assert_eq!(
            Operation::Enquiry.execute(&snap(5), &Params::new(103, 0)),
            LogicResult::WriteSet(WriteSet::new())
        );
    }

    #[test]
    fn banking_registry_maps_all_types() {
        let logic = TransactionLogic::from_registry(&TransactionInfoRegistry::banking()).unwrap();
        assert_eq!(logic.operation(&TxnTypeId::new("T1")), Some(Operation::Deposit));
        assert_eq!(logic.operation(&TxnTypeId::new("T2")), Some(Operation::Withdraw));
        assert_eq!(logic.operation(&TxnTypeId::new("T3")), Some(Operation::Enquiry));
    }

    proptest! {
        #[test]
        fn execution_is_deterministic(v in -1_000_000i64..1_000_000, p in 0i64..100_000, op in 0usize..3) {
            let op = [Operation::Deposit, Operation::Withdraw, Operation::Enquiry][op];
            let s = snap(v);
            prop_assert_eq!(op.execute(&s, &Params::new(103, p)), op.execute(&s, &Params::new(103, p)));
        }
    }
}
