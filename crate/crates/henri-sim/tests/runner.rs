use std::net::TcpListener;

use henri::ids::AgentId;
use henri::protocol::Outcome;
use henri_sim::net::{BrokerClient, BrokerRequest, BrokerResponse};
use henri_sim::{replay, run, Scenario};

/// One product, one seller, one buyer. The bounds pick whether the
/// episode can land: overlapping seller floor / buyer ceiling agree,
/// disjoint ones run out the clock.
fn bilateral(seller_min: f64, seller_max: f64, buyer_min: f64, buyer_max: f64) -> Scenario {
    let v = serde_json::json!({
        "seed": 7,
        "products": [{
            "product_id": "p",
            "product_name": "widget",
            "tree": {"id": "price", "name": "price"}
        }],
        "agents": [
            {
                "agent_id": "seller-1", "kind": "seller", "product_id": "p",
                "max_rounds": 10,
                "valuations": {"per_issue": [{
                    "issue_id": "price", "actual_cost": seller_min,
                    "cost_with_margin": seller_max, "weight": 1.0
                }]}
            },
            {
                "agent_id": "buyer-1", "kind": "buyer", "product_id": "p",
                "max_rounds": 10,
                "valuations": {"aggregate": {"min_cost": buyer_min, "max_cost": buyer_max}}
            }
        ],
        "advertisements": [
            {"agent_id": "seller-1", "product_id": "p", "validity": 5},
            {"agent_id": "buyer-1", "product_id": "p", "validity": 5}
        ]
    });
    Scenario::from_str(&v.to_string()).unwrap()
}

#[test]
fn overlapping_bounds_reach_agreement() {
    let report = run(&bilateral(40.0, 55.0, 30.0, 60.0)).unwrap();
    assert_eq!(report.summaries.len(), 1);
    let s = &report.summaries[0];
    assert_eq!(s.outcome, Outcome::Agreed);
    assert!(s.rounds_used <= 10, "rounds_used = {}", s.rounds_used);
    // the sealed price sits inside both parties' acceptance windows
    assert!(s.total >= 40.0 - 1e-9 && s.total <= 60.0 + 1e-9, "total = {}", s.total);
    assert!(report.agreed());
    // exactly one FINALIZE on the wire
    let finalizes = report
        .transcript
        .messages()
        .filter(|m| m.kind() == "FINALIZE")
        .count();
    assert_eq!(finalizes, 1);
}

#[test]
fn disjoint_bounds_abort_at_the_round_limit() {
    let report = run(&bilateral(100.0, 120.0, 10.0, 40.0)).unwrap();
    let s = &report.summaries[0];
    assert_eq!(s.outcome, Outcome::Aborted);
    assert_eq!(s.rounds_used, 10);
    assert!(!report.agreed());
}

#[test]
fn transcripts_replay_without_divergence() {
    for report in [
        run(&bilateral(40.0, 55.0, 30.0, 60.0)).unwrap(),
        run(&bilateral(100.0, 120.0, 10.0, 40.0)).unwrap(),
    ] {
        let text = report.render_transcript();
        let replayed = replay(&text).unwrap();
        assert!(replayed.is_clean(), "divergence: {:?}", replayed.first_divergence);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let scenario = bilateral(40.0, 55.0, 30.0, 60.0);
    let a = run(&scenario).unwrap().render_transcript();
    let b = run(&scenario).unwrap().render_transcript();
    assert_eq!(a, b);
}

#[test]
fn tcp_transport_matches_inproc_summaries() {
    let mut inproc = bilateral(40.0, 55.0, 30.0, 60.0);
    let mut tcp = inproc.clone();
    inproc.transport = henri_sim::Transport::Inproc;
    tcp.transport = henri_sim::Transport::Tcp;
    let a = run(&inproc).unwrap();
    let b = run(&tcp).unwrap();
    assert_eq!(a.summaries, b.summaries);
    assert_eq!(a.decisions, b.decisions);
}

#[test]
fn aborted_episodes_keep_their_advertisements() {
    let report = run(&bilateral(100.0, 120.0, 10.0, 40.0)).unwrap();
    assert_eq!(report.repository.ad_ids().count(), 2);
    let report = run(&bilateral(40.0, 55.0, 30.0, 60.0)).unwrap();
    assert_eq!(report.repository.ad_ids().count(), 0);
}

#[test]
fn broker_server_round_trips_requests() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = std::thread::spawn(move || {
        henri_sim::net::serve_broker(listener, henri::broker::Repository::new(), 1).unwrap()
    });

    let mut client = BrokerClient::connect(&addr).unwrap();
    let ok = client
        .request(&BrokerRequest::RegisterAgent {
            record: henri::broker::AgentRecord {
                agent_id: AgentId::new("s"),
                name: "s".into(),
                address: "tcp://s".into(),
                kind: henri::ids::AgentKind::Seller,
            },
        })
        .unwrap();
    assert!(matches!(ok, BrokerResponse::Ok(_)), "{ok:?}");
    // duplicate registration comes back as a domain error, not a hangup
    let dup = client
        .request(&BrokerRequest::RegisterAgent {
            record: henri::broker::AgentRecord {
                agent_id: AgentId::new("s"),
                name: "s".into(),
                address: "tcp://s".into(),
                kind: henri::ids::AgentKind::Seller,
            },
        })
        .unwrap();
    assert!(matches!(dup, BrokerResponse::Err(_)), "{dup:?}");
    let tick = client.request(&BrokerRequest::Tick).unwrap();
    assert!(matches!(tick, BrokerResponse::Ok(_)));
    drop(client);

    let repo = server.join().unwrap();
    assert_eq!(repo.agent_ids().count(), 1);
}
