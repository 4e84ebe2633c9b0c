use std::net::TcpListener;
use std::process::{Command, Stdio};

use powsim::admin::{AdminOutcome, DISCARD_EXIT_CODE};
use powsim::miner::MinerExit;

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn admin_and_miner_binaries_complete_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let report = dir.path().join("report.json");
    let report_arg = report.clone();
    let admin = std::thread::spawn(move || {
        Command::new(env!("CARGO_BIN_EXE_admin"))
            .args(["--port", &port.to_string(), "--num-miners", "2", "--sim-time", "200"])
            .args(["--block-interval", "12.42", "--seed", "5", "--time-scale", "100", "--tx-pool-size", "10"])
            .args(["--registration-timeout-secs", "20"])
            .arg("--report-out")
            .arg(report_arg)
            .output()
    });

    let miners: Vec<_> = ["--hashpower=3", "--hashpower-random"]
        .into_iter()
        .enumerate()
        .map(|(i, hp)| {
            Command::new(env!("CARGO_BIN_EXE_miner"))
                .args(["--admin", &format!("127.0.0.1:{port}"), "--listen-port", "0", hp])
                .args(["--seed", &i.to_string(), "--extra-delay-ms", "5"])
                .arg("--stats-out")
                .arg(dir.path().join(format!("m{i}.json")))
                .stderr(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    for mut m in miners {
        assert!(m.wait().unwrap().success());
    }
    let out = admin.join().unwrap().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("block %"));

    let outcome: AdminOutcome = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let chain = outcome.final_chain_ids().unwrap();
    for i in 0..2 {
        let exit: MinerExit = serde_json::from_slice(&std::fs::read(dir.path().join(format!("m{i}.json"))).unwrap()).unwrap();
        assert_eq!(exit.final_chain, chain);
        assert!(exit.hashpower > 0.0 && exit.hashpower <= 30.0);
    }
}

#[test]
fn miner_requires_a_hashpower_choice() {
    let out = Command::new(env!("CARGO_BIN_EXE_miner"))
        .args(["--admin", "127.0.0.1:1", "--listen-port", "0", "--seed", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn discard_exit_code_is_distinct() {
    assert_ne!(DISCARD_EXIT_CODE, 0);
    assert_ne!(DISCARD_EXIT_CODE, 1);
}

#[test]
fn harness_run_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let spec = serde_json::json!({
        "config": {"num_miners": 3, "duration": 600, "interval": 12.42, "seed": 3},
        "hashpowers": [1.0, 2.0, 3.0],
        "runs": 4,
        "out_dir": out_dir,
        "clock": "logical"
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_harness")).args(["run", "--spec"]).arg(&spec_path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["aggregate.json", "table.txt", "shares.csv", "run_000.json", "run_003.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let check = |tol: &str| {
        Command::new(env!("CARGO_BIN_EXE_harness"))
            .args(["check", "--aggregate"])
            .arg(out_dir.join("aggregate.json"))
            .args(["--tolerance-pp", tol])
            .output()
            .unwrap()
    };
    let loose = check("100");
    assert!(loose.status.success());
    assert_eq!(String::from_utf8_lossy(&loose.stdout).matches("PASS").count(), 3);
    assert!(!check("0").status.success());
}
