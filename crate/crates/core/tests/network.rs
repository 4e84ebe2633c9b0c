use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use powsim::admin::{AdminError, AdminOptions, AdminServer, SimulationConfig};
use powsim::miner::{run_miner, ExitOutcome, HashpowerChoice, MinerOptions};
use powsim::wire::{read_message, write_message, WireMessage};

fn config(num_miners: usize, duration: f64) -> SimulationConfig {
    SimulationConfig { num_miners, duration, interval: 12.42, seed: 77, time_scale: 100.0, tx_pool_size: 20 }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn three_miners_over_tcp_agree() {
    let server = AdminServer::bind("127.0.0.1:0", AdminOptions::new(config(3, 300.0))).unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let admin = thread::spawn(move || server.run());
    let miners: Vec<_> = [5.0, 10.0, 15.0]
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let opts = MinerOptions::new(addr.clone(), HashpowerChoice::Fixed(h), i as u64);
            thread::spawn(move || run_miner(opts))
        })
        .collect();
    let exits: Vec<_> = miners.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
    let outcome = admin.join().unwrap().unwrap();

    let chain = outcome.final_chain_ids().expect("accepted");
    assert!(chain.len() > 5);
    for e in &exits {
        assert!(matches!(e.outcome, ExitOutcome::Accepted { .. }));
        assert_eq!(e.final_chain, chain);
    }
    assert_eq!(exits.iter().filter(|e| e.served_chain).count(), 1);
    let report = outcome.report.unwrap();
    assert_eq!(report.total_blocks, chain.len() - 1);
    let sum: f64 = report.miners.iter().map(|m| m.block_share_pct).sum();
    assert!((sum - 100.0).abs() < 1e-6);
}

#[test]
fn registration_times_out_when_miners_are_missing() {
    let mut opts = AdminOptions::new(config(2, 100.0));
    opts.registration_timeout = Duration::from_millis(300);
    let mut server = AdminServer::bind("127.0.0.1:0", opts).unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write_message(&mut s, &WireMessage::Register { hashpower: 1.0, ip: "127.0.0.1".into(), port: 9 }).unwrap();
        s
    });
    let err = server.run_registration().unwrap_err();
    assert!(matches!(err, AdminError::RegistrationTimeout { registered: 1, expected: 2 }), "{err}");
    drop(client.join().unwrap());
}

#[test]
fn duplicate_registration_is_answered_with_discard() {
    let mut opts = AdminOptions::new(config(2, 100.0));
    opts.registration_timeout = Duration::from_secs(2);
    let mut server = AdminServer::bind("127.0.0.1:0", opts).unwrap();
    let addr = server.local_addr().unwrap();
    let clients = thread::spawn(move || {
        let register = WireMessage::Register { hashpower: 2.0, ip: "127.0.0.1".into(), port: 4444 };
        let mut first = TcpStream::connect(addr).unwrap();
        write_message(&mut first, &register).unwrap();
        thread::sleep(Duration::from_millis(50));
        let mut second = TcpStream::connect(addr).unwrap();
        write_message(&mut second, &register).unwrap();
        let reply = read_message(&mut second).unwrap().map(|(m, _)| m);
        (first, reply)
    });
    assert!(server.run_registration().is_err());
    let (_first, reply) = clients.join().unwrap();
    assert!(matches!(reply, Some(WireMessage::Discard { .. })), "{reply:?}");
}

#[test]
fn garbage_on_a_peer_connection_does_not_break_the_run() {
    let server = AdminServer::bind("127.0.0.1:0", AdminOptions::new(config(2, 300.0))).unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let admin = thread::spawn(move || server.run());
    let ports = [free_port(), free_port()];
    let miners: Vec<_> = ports
        .iter()
        .enumerate()
        .map(|(i, &port)| {
            let mut opts = MinerOptions::new(addr.clone(), HashpowerChoice::Fixed(10.0), 40 + i as u64);
            opts.listen_port = port;
            thread::spawn(move || run_miner(opts))
        })
        .collect();

    thread::sleep(Duration::from_millis(800));
    if let Ok(mut s) = TcpStream::connect(("127.0.0.1", ports[0])) {
        let _ = s.write_all(&[0, 0, 0, 5, b'h', b'e', b'l', b'l', b'o']);
        let _ = s.write_all(&[0xff; 64]);
    }

    let exits: Vec<_> = miners.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
    let outcome = admin.join().unwrap().unwrap();
    let chain = outcome.final_chain_ids().expect("accepted");
    assert!(exits.iter().all(|e| e.final_chain == chain));
}

#[test]
fn miner_gives_up_without_an_admin() {
    let mut opts = MinerOptions::new(format!("127.0.0.1:{}", free_port()), HashpowerChoice::Random, 1);
    opts.connect_timeout = Duration::from_millis(300);
    assert!(run_miner(opts).is_err());
}
