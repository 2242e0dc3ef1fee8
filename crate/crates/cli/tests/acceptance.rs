//! Acceptance runner. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aqms_cli::pipeline::{run_pipeline, DataSource, RunConfig, RunOutcome};
use aqms_cli::timing::{ClockKind, Phase};
use aqms_core::chaincode::{ChaincodePackage, EmissionRecord, LifecycleError, LocationType};
use aqms_core::codec::Canonical;
use aqms_core::config::NetworkConfig;
use aqms_core::digest::Digest;
use aqms_core::ingestion::{format_dataset, parse_sensor_csv, SENSOR_SAMPLES_CSV};
use aqms_core::ledger::{ByteEdit, CachingValidator, Ledger, Version};
use aqms_core::network::{
    establish_network, Endorsed, EndorsementValidator, Message, Network, NetworkError, NetworkOptions, Rejection,
};
use aqms_core::policy::PolicyMember;
use aqms_core::tx::{EndorsedTransaction, Proposal, Transaction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const ACTOR: &str = "gateway-1";
const ORG1_ENDORSER: &str = "peer0.iiitkottayam.com";
const ORG2_ENDORSER: &str = "peer0.aic.com";
const ORG1_COMMITTER: &str = "peer1.iiitkottayam.com";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// Raw block bytes of one replica, plus its tip digest.
type Chain = (Vec<Vec<u8>>, Digest);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("tamper evidence", tamper_evidence),
        ("replication", replication),
        ("endorsement policy", endorsement_policy),
        ("oracle equivalence", oracle_equivalence),
        ("sensor table fidelity", sensor_fixture_fidelity),
        ("lifecycle ordering", lifecycle_ordering),
        ("timing report shape", timing_report_shape),
        ("determinism", determinism),
        ("signature soundness fuzz", signature_fuzz),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name} ({detail}; {secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn record(i: u64) -> EmissionRecord {
    EmissionRecord {
        timestamp: 1_580_000_000_000 + i * 60_000,
        location_type: LocationType::ALL[(i % 4) as usize],
        so2: 2.0 + (i % 7) as f64,
        no2: 11.5 + (i % 5) as f64,
        rspm: 40.0 + (i % 11) as f64,
        co: 0.25 * (1 + i % 3) as f64,
        industry_names: vec!["Kottayam Rubber Works".into()],
        monitoring_location: format!("site-{}", i % 3),
        penalty_value: 0.0,
        reporting_agency: "KSPCB".into(),
    }
}

/// `n` random records. About one in eight reuses an earlier record's key so
/// that some submissions collide.
fn generated_records(n: usize, seed: u64) -> Vec<EmissionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let micros = |rng: &mut ChaCha8Rng, max: u32| f64::from(rng.gen_range(0..max * 100)) / 100.0;
    let mut out: Vec<EmissionRecord> = Vec::with_capacity(n);
    for i in 0..n {
        let (timestamp, location) = if i > 0 && rng.gen_ratio(1, 8) {
            let earlier = &out[rng.gen_range(0..i)];
            (earlier.timestamp, earlier.monitoring_location.clone())
        } else {
            (1_600_000_000_000 + i as u64 * 900_000, format!("station-{}", rng.gen_range(0..5)))
        };
        out.push(EmissionRecord {
            timestamp,
            location_type: LocationType::ALL[rng.gen_range(0..4)],
            so2: micros(&mut rng, 120),
            no2: micros(&mut rng, 120),
            rspm: micros(&mut rng, 400),
            co: micros(&mut rng, 10),
            industry_names: vec![format!("Unit {}", rng.gen_range(0..20))],
            monitoring_location: location,
            penalty_value: micros(&mut rng, 50),
            reporting_agency: "KSPCB".into(),
        });
    }
    out
}

fn unique_records(n: usize, seed: u64) -> Vec<EmissionRecord> {
    let mut seen = BTreeSet::new();
    generated_records(n * 2, seed)
        .into_iter()
        .filter(|r| seen.insert(r.state_key()))
        .take(n)
        .collect()
}

/// Runs the whole pipeline on the simulated clock over `records`.
fn pipeline_over(dir: &Path, records: &[EmissionRecord], seed: u64) -> Result<RunOutcome, String> {
    let path = dir.join(format!("dataset-{seed}-{}.csv", records.len()));
    std::fs::write(&path, format_dataset(records)).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::simulated(seed);
    cfg.source = DataSource::File(path);
    run_pipeline(&cfg).map_err(|e| e.to_string())
}

fn validator_of(outcome: &RunOutcome) -> EndorsementValidator {
    let a = &outcome.artifacts;
    EndorsementValidator::new(&a.instantiation, a.roots.clone())
}

fn ready_network(seed: u64) -> Result<Network, NetworkError> {
    let mut net = establish_network(NetworkConfig::fibchannel(), NetworkOptions::seeded(seed))?;
    let pkg = ChaincodePackage::emission();
    net.install_everywhere(&pkg)?;
    net.instantiate_default(&pkg)?;
    Ok(net)
}

fn tamper_evidence() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let outcome = pipeline_over(dir.path(), &unique_records(36, 101), 101)?;
    let validator = validator_of(&outcome);
    let mut ledgers = Vec::new();
    for dump in outcome.artifacts.ledgers.values() {
        ledgers.push(Ledger::from_dump(dump, &validator).map_err(|e| e.to_string())?);
    }
    let mut ledger = ledgers[0].clone();
    ensure!(ledger.len() == 10, "expected a 10-block ledger, built {}", ledger.len());

    let started = Instant::now();
    let validator = CachingValidator::new(&validator);
    let mut clean_checks = 0;
    for l in &ledgers {
        ensure!(l.verify_chain(&validator).valid, "false positive on an untouched replica");
        clean_checks += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 1200;
    for trial in 0..trials {
        let height = (trial % 10) as u64;
        let len = ledger.raw_block(height).map_or(0, <[u8]>::len);
        let edit = ByteEdit {
            offset: rng.gen_range(0..len),
            mask: rng.gen_range(1..=u8::MAX),
        };
        ledger.tamper(height, &[edit]).map_err(|e| e.to_string())?;
        let report = ledger.verify_chain(&validator);
        ensure!(
            !report.valid && report.first_mismatch() == Some(height),
            "missed mutation {edit:?} at height {height} (first mismatch {:?})",
            report.first_mismatch()
        );
        ledger.tamper(height, &[edit]).map_err(|e| e.to_string())?;
        if trial % 100 == 99 {
            ensure!(ledger.verify_chain(&validator).valid, "false positive after undoing {edit:?}");
            clean_checks += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{trials}/{trials} mutations detected, 0 of {clean_checks} clean checks flagged, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn replication() -> Outcome {
    let mut net = ready_network(6).map_err(|e| e.to_string())?;
    for r in net.submit_many(ACTOR, (0..50).map(record)).map_err(|e| e.to_string())? {
        r.map_err(|e| e.to_string())?;
    }
    let statuses = net.statuses().map_err(|e| e.to_string())?;
    ensure!(statuses.len() == 4, "{} peers answered", statuses.len());
    let tips: BTreeSet<Digest> = statuses.values().map(|s| s.tip_digest).collect();
    let lens: BTreeSet<u64> = statuses.values().map(|s| s.chain_len).collect();
    ensure!(tips.len() == 1, "{} distinct tips", tips.len());
    ensure!(lens.len() == 1, "chain lengths {lens:?}");
    let valid: usize = net.commit_events(ORG1_ENDORSER).iter().map(|e| e.valid_count()).sum();
    ensure!(valid == 50, "{valid} valid transactions");
    Ok(format!("4 peers, length {}, tip {}", lens.first().unwrap(), tips.first().unwrap()))
}

fn endorse_via_harness(net: &mut Network, proposal: &Proposal) -> BTreeMap<String, Result<Endorsed, Rejection>> {
    for peer in [ORG1_ENDORSER, ORG2_ENDORSER] {
        net.send_raw(peer, &Message::Proposal { proposal: proposal.clone() });
    }
    net.run_until_quiet()
        .into_iter()
        .filter_map(|i| match i.message {
            Message::ProposalResponse { tx_id, result } if tx_id == proposal.tx_id() => Some((i.from, result)),
            _ => None,
        })
        .collect()
}

fn endorsement_policy() -> Outcome {
    let mut net = ready_network(5).map_err(|e| e.to_string())?;
    let mut expected = Vec::new();
    for mask in 0u8..4 {
        let proposal = net
            .sign_proposal(ACTOR, record(u64::from(mask)), [mask; 16])
            .map_err(|e| e.to_string())?;
        let responses = endorse_via_harness(&mut net, &proposal);
        let mut endorsements = Vec::new();
        let mut write_set = None;
        for (bit, peer) in [ORG1_ENDORSER, ORG2_ENDORSER].into_iter().enumerate() {
            let endorsed = responses
                .get(peer)
                .cloned()
                .ok_or(format!("{peer} did not answer"))?
                .map_err(|e| e.to_string())?;
            write_set.get_or_insert(endorsed.write_set);
            if mask & (1 << bit) != 0 {
                endorsements.push(endorsed.endorsement);
            }
        }
        let tx = EndorsedTransaction {
            proposal: proposal.clone(),
            write_set: write_set.unwrap_or_default(),
            endorsements,
        };
        net.submit_transaction(Transaction::from(tx));
        net.run_until_quiet();
        expected.push((proposal.tx_id(), mask == 0b11));
    }
    for peer in net.peer_ids() {
        let got: Vec<_> = net.commit_events(&peer).into_iter().flat_map(|e| e.tx_status).collect();
        ensure!(got.len() == 4, "{peer} committed {} transactions", got.len());
        for ((id, validity), (want_id, want_valid)) in got.iter().zip(&expected) {
            ensure!(id == want_id, "{peer} committed out of order");
            ensure!(
                validity.is_valid() == *want_valid,
                "{peer}: {validity:?}, expected valid = {want_valid}"
            );
        }
    }
    Ok("subsets {}, {org1}, {org2}, {org1, org2} -> only the pair commits as valid on all 4 peers".into())
}

fn oracle_equivalence() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let records = generated_records(100, 202);
    let outcome = pipeline_over(dir.path(), &records, 202)?;
    ensure!(outcome.summary.records_loaded == 100, "loaded {}", outcome.summary.records_loaded);
    let validator = validator_of(&outcome);
    let mut applied_total = 0;
    for (peer, dump) in &outcome.artifacts.ledgers {
        let ledger = Ledger::from_dump(dump, &validator).map_err(|e| e.to_string())?;
        // Brute force: walk committed transactions in order, apply a
        // transaction iff every key it read still has the version it saw.
        let mut oracle: BTreeMap<String, (Vec<u8>, Version)> = BTreeMap::new();
        let mut applied = 0;
        for height in 1..ledger.len() {
            let block = ledger.block(height).map_err(|e| e.to_string())?;
            let verdicts = ledger.validity(height).unwrap_or_default();
            for (index, tx) in block.transactions.iter().enumerate() {
                let Some(tx) = tx.as_endorsed() else { continue };
                let fresh = tx
                    .write_set
                    .reads
                    .iter()
                    .all(|r| oracle.get(&r.key).map(|(_, v)| *v) == r.version);
                ensure!(
                    verdicts.get(index).map(|v| v.is_valid()) == Some(fresh),
                    "{peer}: block {height} tx {index} verdict {:?} vs oracle {fresh}",
                    verdicts.get(index)
                );
                if fresh {
                    applied += 1;
                    for w in &tx.write_set.writes {
                        oracle.insert(w.key.clone(), (w.value.clone(), Version::new(height, index as u32)));
                    }
                }
            }
        }
        let state: BTreeMap<String, (Vec<u8>, Version)> = ledger
            .state()
            .iter()
            .map(|(k, v)| (k.to_owned(), (v.value.clone(), v.version)))
            .collect();
        ensure!(state == oracle, "{peer}: world state differs from sequential replay");
        applied_total = applied;
    }
    let rejected = outcome.summary.rejected + outcome.summary.invalid_tx;
    ensure!(applied_total > 0 && rejected > 0, "run did not exercise both outcomes");
    Ok(format!(
        "{applied_total} valid of 100 submitted, {rejected} refused or conflicting, 4 peers match key and version"
    ))
}

fn sensor_fixture_fidelity() -> Outcome {
    let parsed = parse_sensor_csv(SENSOR_SAMPLES_CSV);
    ensure!(parsed.errors.is_empty(), "parse errors: {:?}", parsed.errors);
    let s = &parsed.items;
    ensure!(s.len() == 14, "{} samples", s.len());
    let row1 = (s[0].mq7_co, s[0].mq2_smoke, s[0].mq135_co2);
    ensure!(row1 == (379, 375, 381), "row 1 = {row1:?}");
    let max_mq7 = s.iter().map(|x| x.mq7_co).max();
    let min_mq2 = s.iter().map(|x| x.mq2_smoke).min();
    ensure!(max_mq7 == Some(395), "max MQ-7 {max_mq7:?}");
    ensure!(min_mq2 == Some(326), "min MQ2 {min_mq2:?}");
    Ok("14 samples, row 1 (379, 375, 381), max MQ-7 395, min MQ2 326".into())
}

fn lifecycle_ordering() -> Outcome {
    let mut net = establish_network(NetworkConfig::fibchannel(), NetworkOptions::seeded(11)).map_err(|e| e.to_string())?;
    let pkg = ChaincodePackage::emission();
    let early = net.submit_sensor_data(ACTOR, record(0));
    ensure!(
        matches!(&early, Err(e) if e.to_string().contains("not instantiated")),
        "invoke before instantiate gave {early:?}"
    );
    net.install(&[ORG1_ENDORSER.to_owned()], &pkg).map_err(|e| e.to_string())?;
    match net.instantiate_default(&pkg) {
        Err(NetworkError::Lifecycle(LifecycleError::MissingInstallation { peers, .. })) => {
            ensure!(peers == [ORG2_ENDORSER], "named {peers:?}")
        }
        other => return Err(format!("partial install then instantiate gave {other:?}")),
    }
    ensure!(net.instantiation().is_none(), "failed instantiate left a record behind");
    let committer_policy = net.instantiate("aqms", "1", vec![PolicyMember::new("org1", ORG1_COMMITTER)]);
    ensure!(
        matches!(committer_policy, Err(NetworkError::Lifecycle(LifecycleError::InvalidPolicy(_)))),
        "policy naming a committer was accepted"
    );
    net.install_everywhere(&pkg).map_err(|e| e.to_string())?;
    net.instantiate_default(&pkg).map_err(|e| e.to_string())?;
    net.submit_sensor_data(ACTOR, record(0)).map_err(|e| e.to_string())?;
    let stored = net.query(ORG2_ENDORSER, &record(0).state_key()).map_err(|e| e.to_string())?;
    ensure!(stored == Some(record(0)), "record not stored after the proper order");
    Ok(format!("invoke refused before instantiate; instantiate refused naming {ORG2_ENDORSER}"))
}

fn timing_report_shape() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for clock in [ClockKind::Real, ClockKind::Simulated, ClockKind::Simulated] {
        let mut cfg = RunConfig::simulated(42);
        cfg.clock = clock;
        cfg.dump_dir = Some(dir.path().to_owned());
        runs.push(run_pipeline(&cfg).map_err(|e| e.to_string())?);
    }
    for run in &runs {
        let names: Vec<Phase> = run.report.phases().iter().map(|(p, _)| *p).collect();
        ensure!(names == Phase::ALL, "phases {names:?}");
        let csv = run.report.to_csv();
        ensure!(csv.lines().count() == 9, "report has {} lines", csv.lines().count());
        for line in csv.lines().skip(1) {
            let ms: f64 = line.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or(format!("bad row {line}"))?;
            ensure!(ms.total_cmp(&0.0).is_ge(), "negative duration in {line}");
        }
        ensure!(run.summary.block_sizes == [4, 4, 4, 2], "block sizes {:?}", run.summary.block_sizes);
    }
    ensure!(runs[1].report == runs[2].report, "seeded simulated runs differ");
    ensure!(runs[1].report.to_csv() == runs[2].report.to_csv(), "CSV output differs");
    Ok(format!("8 phases on both clocks, simulated total {:?} twice", runs[1].report.total()))
}

fn determinism() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let records = generated_records(30, 303);
    let a = pipeline_over(dir.path(), &records, 9)?;
    let b = pipeline_over(dir.path(), &records, 9)?;
    let c = pipeline_over(dir.path(), &records, 10)?;
    let chains = |o: &RunOutcome| -> Result<Vec<Chain>, String> {
        let v = validator_of(o);
        o.artifacts
            .ledgers
            .values()
            .map(|dump| {
                let l = Ledger::from_dump(dump, &v).map_err(|e| e.to_string())?;
                let blocks = l.raw_blocks().map(<[u8]>::to_vec).collect();
                Ok((blocks, l.tip_digest()))
            })
            .collect()
    };
    let (ca, cb, cc) = (chains(&a)?, chains(&b)?, chains(&c)?);
    let genesis = |c: &[Chain]| c[0].0[0].clone();
    ensure!(genesis(&ca) == genesis(&cb), "genesis differs");
    ensure!(ca == cb, "block sequences or tips differ for equal seeds");
    ensure!(a.artifacts.ledgers == b.artifacts.ledgers, "dumps differ");
    ensure!(ca != cc, "a different seed produced the same chain");
    Ok(format!("{} blocks and tip {} reproduced; seed change alters the chain", ca[0].0.len(), ca[0].1))
}

fn signature_fuzz() -> Outcome {
    let mut net = ready_network(13).map_err(|e| e.to_string())?;
    let proposals: Vec<Proposal> = (0..10u8)
        .map(|i| net.sign_proposal(ACTOR, record(u64::from(i)), [i; 16]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    net.run_until_quiet();
    let nodes = net.shutdown();
    let endorsers: Vec<_> = [ORG1_ENDORSER, ORG2_ENDORSER]
        .iter()
        .map(|id| nodes.get(*id).and_then(|n| n.as_peer()).ok_or(format!("{id} missing")))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut flips = 0;
    for proposal in &proposals {
        let bytes = proposal.to_canonical_bytes();
        for peer in &endorsers {
            ensure!(peer.endorse_bytes(&bytes).is_ok(), "unmodified proposal refused");
        }
        for _ in 0..100 {
            let bit = rng.gen_range(0..bytes.len() * 8);
            let mut flipped = bytes.clone();
            flipped[bit / 8] ^= 1 << (bit % 8);
            for peer in &endorsers {
                ensure!(peer.endorse_bytes(&flipped).is_err(), "flip of bit {bit} was endorsed");
            }
            flips += 1;
        }
    }
    Ok(format!("{flips}/{flips} flipped proposals rejected by both endorsers"))
}
