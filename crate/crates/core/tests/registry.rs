use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use vidpriv_core::registry::is_uuid_v4;
use vidpriv_core::Registry;

#[derive(Debug, Clone)]
enum Op {
    Assign(u8),
    Reopen,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![4 => (0u8..12).prop_map(Op::Assign), 1 => Just(Op::Reopen)]
}

fn assert_bijection(reg: &Registry) {
    let mut seen_p = HashMap::new();
    let mut seen_u = HashMap::new();
    for r in reg.records() {
        assert!(is_uuid_v4(&r.pseudonym));
        assert!(seen_p.insert(r.patient_id.clone(), r.pseudonym.clone()).is_none());
        assert!(seen_u.insert(r.pseudonym.clone(), r.patient_id.clone()).is_none());
        assert_eq!(reg.lookup(&r.pseudonym), Some(r.patient_id.as_str()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_sequences_keep_a_stable_bijection(ops in prop::collection::vec(op(), 1..30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        let mut reg = Registry::open(&path).unwrap();
        let mut model: HashMap<String, String> = HashMap::new();
        for op in ops {
            match op {
                Op::Assign(n) => {
                    let patient = format!("patient, \"{n}\"");
                    let rec = reg.assign(&patient).unwrap();
                    let expected = model.entry(patient).or_insert_with(|| rec.pseudonym.clone());
                    prop_assert_eq!(&rec.pseudonym, expected);
                }
                Op::Reopen => reg = Registry::open(&path).unwrap(),
            }
            prop_assert_eq!(reg.len(), model.len());
            assert_bijection(&reg);
        }
        let reopened = Registry::open(&path).unwrap();
        for (p, u) in &model {
            prop_assert_eq!(reopened.lookup(u), Some(p.as_str()));
        }
    }
}

#[test]
fn two_handles_agree_on_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.csv");
    let mut a = Registry::open(&path).unwrap();
    let mut b = Registry::open(&path).unwrap();
    let pa = a.assign("P-1").unwrap();
    let pb = b.assign("P-1").unwrap();
    assert_eq!(pa.pseudonym, pb.pseudonym);
    b.assign("P-2").unwrap();
    a.refresh().unwrap();
    assert_eq!(a.len(), 2);
}

#[test]
fn concurrent_threads_never_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.csv");
    Registry::open(&path).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let path = path.clone();
            std::thread::spawn(move || {
                let mut reg = Registry::open(&path).unwrap();
                (0..10).map(|i| (i, reg.assign(&format!("P-{}", (i + t) % 8)).unwrap().pseudonym)).collect::<Vec<_>>()
            })
        })
        .collect();
    let mut by_patient: HashMap<String, String> = HashMap::new();
    for (t, h) in handles.into_iter().enumerate() {
        for (i, u) in h.join().unwrap() {
            let p = format!("P-{}", (i + t) % 8);
            assert_eq!(by_patient.entry(p).or_insert_with(|| u.clone()), &u);
        }
    }
    let reg = Registry::open(&path).unwrap();
    assert_eq!(reg.len(), 8);
    assert_bijection(&reg);
}

const CRASH_CHILD: &str = "VIDPRIV_REGISTRY_CRASH_PATH";

/// Kill a writer at random points; acknowledged rows survive and the file stays well formed.
pub fn crash_rounds(rounds: usize) {
    let exe = std::env::current_exe().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.csv");
    let mut acknowledged: HashMap<String, String> = HashMap::new();
    for round in 0..rounds {
        let mut child = Command::new(&exe)
            .args(["killed_writer_leaves_a_consistent_registry", "--exact", "--nocapture", "--test-threads=1"])
            .env(CRASH_CHILD, &path)
            .env("VIDPRIV_ROUND", round.to_string())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let stdout = child.stdout.take().unwrap();
        let reader = std::thread::spawn(move || {
            BufReader::new(stdout).lines().map_while(Result::ok).filter_map(|l| {
                let rest = l.strip_prefix("ack ")?;
                let (p, u) = rest.split_once(' ')?;
                Some((p.to_string(), u.to_string()))
            }).collect::<Vec<_>>()
        });
        let wait = Duration::from_millis(100 + (round as u64 * 37) % 400);
        let t0 = Instant::now();
        while t0.elapsed() < wait {
            std::thread::sleep(Duration::from_millis(5));
        }
        child.kill().unwrap();
        child.wait().unwrap();
        acknowledged.extend(reader.join().unwrap());

        let reg = Registry::open(&path).expect("registry unreadable after a crash");
        assert_bijection(&reg);
        for (p, u) in &acknowledged {
            assert_eq!(reg.lookup(u), Some(p.as_str()), "acknowledged assignment lost");
        }
    }
    assert!(!acknowledged.is_empty());
}

#[test]
fn killed_writer_leaves_a_consistent_registry() {
    if let Ok(path) = std::env::var(CRASH_CHILD) {
        let round = std::env::var("VIDPRIV_ROUND").unwrap();
        let mut reg = Registry::open(&path).unwrap();
        for i in 0.. {
            let patient = format!("R{round}-P{i}");
            let rec = reg.assign(&patient).unwrap();
            println!("ack {patient} {}", rec.pseudonym);
        }
        return;
    }
    crash_rounds(6);
}
