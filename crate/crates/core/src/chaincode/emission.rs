use std::sync::Arc;

use super::record::{quantize, validate_record, EmissionRecord};
use super::{ChaincodeError, Contract, ExecutionContext, Invocation, KeyRead, KeyWrite, WriteSet};
use crate::codec::Canonical;

pub const EMISSION_CODE_ID: &str = "aqms-emission/1";

/// Hook for deriving the stored penalty from a submitted record.
pub trait PenaltyRule: Send + Sync {
    fn assess(&self, record: &EmissionRecord) -> f64;
}

/// Keeps the submitted penalty unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPenalty;

impl PenaltyRule for IdentityPenalty {
    fn assess(&self, record: &EmissionRecord) -> f64 {
        record.penalty_value
    }
}

/// Records validated emission measurements under `<site>/<timestamp>`.
#[derive(Clone)]
pub struct EmissionContract {
    penalty: Arc<dyn PenaltyRule>,
}

impl Default for EmissionContract {
    fn default() -> Self {
        Self::with_penalty_rule(Arc::new(IdentityPenalty))
    }
}

impl EmissionContract {
    pub fn with_penalty_rule(penalty: Arc<dyn PenaltyRule>) -> Self {
        Self { penalty }
    }

    pub fn invoke_record_emission(
        &self,
        ctx: &ExecutionContext<'_>,
        record: &EmissionRecord,
    ) -> Result<Invocation, ChaincodeError> {
        validate_record(record).map_err(ChaincodeError::Validation)?;
        let mut stored = record.clone();
        stored.penalty_value = quantize(self.penalty.assess(record));
        validate_record(&stored).map_err(ChaincodeError::Validation)?;

        let key = stored.state_key();
        let existing = ctx.state.version(&key);
        let mut warnings = Vec::new();
        if let Some(v) = existing {
            warnings.push(format!("duplicate key {key}: superseding version {v}"));
        }
        Ok(Invocation {
            write_set: WriteSet {
                reads: vec![KeyRead {
                    key: key.clone(),
                    version: existing,
                }],
                writes: vec![KeyWrite {
                    key,
                    value: stored.to_canonical_bytes(),
                }],
            },
            warnings,
        })
    }

    pub fn query_emission(
        &self,
        ctx: &ExecutionContext<'_>,
        key: &str,
    ) -> Result<Option<EmissionRecord>, ChaincodeError> {
        match ctx.state.get(key) {
            None => Ok(None),
            Some(bytes) => EmissionRecord::from_canonical_bytes(bytes)
                .map(Some)
                .map_err(|source| ChaincodeError::Corrupt {
                    key: key.to_owned(),
                    source,
                }),
        }
    }
}

impl Contract for EmissionContract {
    fn code_id(&self) -> &str {
        EMISSION_CODE_ID
    }

    fn invoke(&self, ctx: &ExecutionContext<'_>, args: &[u8]) -> Result<Invocation, ChaincodeError> {
        let record = EmissionRecord::from_canonical_bytes(args).map_err(ChaincodeError::BadArguments)?;
        self.invoke_record_emission(ctx, &record)
    }

    fn query(&self, ctx: &ExecutionContext<'_>, key: &str) -> Result<Option<Vec<u8>>, ChaincodeError> {
        Ok(self
            .query_emission(ctx, key)?
            .map(|r| r.to_canonical_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::chaincode::{arb_record, sample_record, Rule};
    use crate::ledger::{Version, WorldState};

    fn ctx(state: &WorldState) -> ExecutionContext<'_> {
        ExecutionContext {
            channel: "fibchannel",
            state,
        }
    }

    fn apply(state: &mut WorldState, ws: &WriteSet, version: Version) {
        for w in &ws.writes {
            state.put(w.key.clone(), w.value.clone(), version);
        }
    }

    #[test]
    fn valid_record_produces_keyed_write() {
        let state = WorldState::new();
        let mut r = sample_record();
        r.monitoring_location = "KTYM-01".into();
        r.timestamp = 1_700_000_000_000;
        let inv = EmissionContract::default()
            .invoke_record_emission(&ctx(&state), &r)
            .unwrap();
        assert_eq!(inv.write_set.writes.len(), 1);
        assert_eq!(inv.write_set.writes[0].key, "KTYM-01/1700000000000");
        assert_eq!(inv.write_set.reads[0].version, None);
        assert!(inv.warnings.is_empty());
    }

    #[test]
    fn invalid_record_yields_no_write_set() {
        let state = WorldState::new();
        let mut r = sample_record();
        r.so2 = -1.0;
        match EmissionContract::default().invoke_record_emission(&ctx(&state), &r) {
            Err(ChaincodeError::Validation(v)) => assert_eq!(v[0].rule, Rule::NonNegative),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_versioned_with_a_warning() {
        let mut state = WorldState::new();
        let c = EmissionContract::default();
        let r = sample_record();
        let first = c.invoke_record_emission(&ctx(&state), &r).unwrap();
        apply(&mut state, &first.write_set, Version::new(1, 0));
        let second = c.invoke_record_emission(&ctx(&state), &r).unwrap();
        assert_eq!(second.write_set.reads[0].version, Some(Version::new(1, 0)));
        assert_eq!(second.warnings.len(), 1);
    }

    #[test]
    fn query_returns_what_invoke_wrote() {
        let mut state = WorldState::new();
        let c = EmissionContract::default();
        let r = sample_record();
        let inv = c.invoke_record_emission(&ctx(&state), &r).unwrap();
        apply(&mut state, &inv.write_set, Version::new(1, 0));
        assert_eq!(c.query_emission(&ctx(&state), &r.state_key()).unwrap(), Some(r));
        assert_eq!(c.query_emission(&ctx(&state), "KTYM-01/0").unwrap(), None);
    }

    #[test]
    fn corrupt_state_value_is_a_decode_error() {
        let mut state = WorldState::new();
        state.put("k".into(), vec![1, 2, 3], Version::new(1, 0));
        assert!(matches!(
            EmissionContract::default().query_emission(&ctx(&state), "k"),
            Err(ChaincodeError::Corrupt { .. })
        ));
    }

    struct Doubling;

    impl PenaltyRule for Doubling {
        fn assess(&self, record: &EmissionRecord) -> f64 {
            record.penalty_value * 2.0
        }
    }

    #[test]
    fn penalty_hook_is_applied() {
        let state = WorldState::new();
        let mut r = sample_record();
        r.penalty_value = 5.0;
        let c = EmissionContract::with_penalty_rule(Arc::new(Doubling));
        let inv = c.invoke_record_emission(&ctx(&state), &r).unwrap();
        let stored = EmissionRecord::from_canonical_bytes(&inv.write_set.writes[0].value).unwrap();
        assert_eq!(stored.penalty_value, 10.0);
    }

    #[test]
    fn validation_and_invocation_do_not_touch_state() {
        let state = WorldState::new();
        let c = EmissionContract::default();
        let _ = c.invoke_record_emission(&ctx(&state), &sample_record());
        let _ = validate_record(&sample_record());
        assert!(state.is_empty());
    }

    proptest! {
        #[test]
        fn distinct_site_timestamps_give_distinct_keys(
            records in proptest::collection::vec(arb_record(), 1..20)
        ) {
            // Oracle: key -> last record, built by plain map insertion.
            let mut oracle = BTreeMap::new();
            let mut state = WorldState::new();
            let c = EmissionContract::default();
            for (i, r) in records.iter().enumerate() {
                let inv = c.invoke_record_emission(&ctx(&state), r).unwrap();
                apply(&mut state, &inv.write_set, Version::new(i as u64 + 1, 0));
                oracle.insert(format!("{}/{}", r.monitoring_location, r.timestamp), r.clone());
            }
            prop_assert_eq!(state.len(), oracle.len());
            for (k, r) in &oracle {
                let got = c.query_emission(&ctx(&state), k).unwrap();
                prop_assert_eq!(got.as_ref(), Some(r));
            }
        }
    }
}
