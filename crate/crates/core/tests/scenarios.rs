use mocc::harness::{run_scenario, scenarios, RunResult};
use mocc::model::{DataItemId, InstanceId};
use mocc::store::CommitEntry;

fn amount() -> DataItemId {
    DataItemId::new("Account", 103, "Amount")
}

/// (site, value written to Account.103.Amount) per commit, in commit order.
fn commits(r: &RunResult) -> Vec<(u32, i64)> {
    r.history
        .store
        .log()
        .iter()
        .map(|e: &CommitEntry| {
            let site = r.history.intents[&e.instance_id].site.0;
            (site, e.writes[&amount()].after)
        })
        .collect()
}

fn assert_clean(r: &RunResult) {
    assert!(r.metrics.verdict.passed(), "{:?}", r.metrics.verdict);
    assert!(r.metrics.verdict.commit_order_is_witness);
    assert!(r.metrics.terminal_identity_holds(&r.outcomes));
    assert_eq!(r.metrics.aborted, 0);
    assert_eq!(r.metrics.orphans, 0);
    assert_eq!(r.metrics.anomalies, 0);
}

#[test]
fn case_i_first_come_commits_then_restart() {
    let r = run_scenario("banking-case-i", 0, true).unwrap();
    assert_eq!(commits(&r), [(1, 12500), (2, 12000)]);
    assert_eq!(r.metrics.restarted, 1);
    assert_eq!(r.metrics.update_reports, 1);
    assert_clean(&r);
}

#[test]
fn case_ii_faster_withdrawal_commits_first() {
    let r = run_scenario("banking-case-ii", 0, true).unwrap();
    assert_eq!(commits(&r), [(2, 11000), (1, 12000)]);
    assert_eq!(r.metrics.restarted, 1);
    assert_clean(&r);
}

#[test]
fn case_iii_tie_goes_to_earlier_arrival() {
    let r = run_scenario("banking-case-iii", 0, true).unwrap();
    assert_eq!(commits(&r), [(1, 12500), (2, 12000)]);
    assert_eq!(r.metrics.restarted, 1);
    assert_clean(&r);
    // Both commit requests were delivered to the station in the same tick.
    let deliveries: Vec<_> = r
        .trace
        .iter()
        .filter(|t| t.kind == "deliver" && t.actor == "BS1" && t.detail.starts_with("CommitRequest"))
        .collect();
    assert!(deliveries.len() >= 2);
    assert_eq!(deliveries[0].time_ms, deliveries[1].time_ms);
    assert_eq!(deliveries[0].instance, Some(1));
}

#[test]
fn conflict_notice_reports_the_earlier_arrival() {
    let r = run_scenario("banking-case-i", 0, true).unwrap();
    let notice = r.trace.iter().find(|t| t.kind == "conflict").unwrap();
    assert_eq!(notice.instance, Some(2));
    assert!(notice.detail.ends_with(&scenarios::M1_ARRIVAL_MS.to_string()));
}

#[test]
fn handoff_commit_is_decided_at_the_original_station() {
    let r = run_scenario("banking-handoff", 0, true).unwrap();
    assert_eq!(commits(&r), [(1, 12500), (2, 12000)]);
    assert_clean(&r);
    let commit = r
        .trace
        .iter()
        .find(|t| t.kind == "commit" && t.instance == Some(1))
        .unwrap();
    assert_eq!(commit.actor, "BS1");
    assert!(r.metrics.backbone_messages > 0);
}

#[test]
fn disconnect_branches_depend_on_the_seed() {
    let (mut hit, mut miss) = (false, false);
    for seed in 0..8 {
        let r = run_scenario("banking-disconnect", seed, true).unwrap();
        assert_clean(&r);
        assert_eq!(r.metrics.committed, 2);
        let m1 = r
            .history
            .store
            .log()
            .iter()
            .find(|e| e.instance_id == InstanceId(1))
            .unwrap();
        if scenarios::disconnect_conflicts(seed) {
            hit = true;
            assert_eq!(r.metrics.restarted, 1);
            assert_eq!(m1.writes[&amount()].after, 12000);
        } else {
            miss = true;
            assert_eq!(r.metrics.restarted, 0);
            assert_eq!(m1.writes[&amount()].after, 12500);
        }
    }
    assert!(hit && miss);
}
