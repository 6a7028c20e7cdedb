use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use vidpriv_core::registry::is_uuid_v4;
use vidpriv_core::synth::{generate_segmented_case, generate_synthetic_video, SyntheticSpec};
use vidpriv_core::MediaTool;

fn vidpriv(ws: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vidpriv"));
    c.arg("--workspace").arg(ws).env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn stdout_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stdout).lines().map(str::to_string).collect()
}

fn tool() -> MediaTool {
    MediaTool::discover(None).unwrap()
}

fn case(dir: &Path, seconds: f64) -> PathBuf {
    let spec = SyntheticSpec { duration_s: seconds, oob_intervals: vec![(1.0, 2.0)], seed: 5, ..Default::default() };
    generate_segmented_case(&tool(), &spec, 2, dir).unwrap();
    dir.to_path_buf()
}

fn job_doc(path: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn process_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let input = case(&dir.path().join("case"), 4.0);

    let o = run(vidpriv(&ws).args(["process", "--patient", "MRN-77"]).arg("--input").arg(&input));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_lines(&o);
    let output = PathBuf::from(&lines[0]);
    assert!(output.is_absolute() && output.is_file());
    assert_eq!(output.extension().unwrap(), "mp4");
    assert!(is_uuid_v4(output.file_stem().unwrap().to_str().unwrap()));
    let doc = job_doc(&lines[1]);
    assert_eq!(doc["case"]["mode"], "fast", "default mode");
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(!all.contains("MRN-77"));

    let o = run(vidpriv(&ws).arg("verify").arg(&output));
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);

    let tagged = dir.path().join("tagged.mp4");
    let spec = SyntheticSpec {
        duration_s: 2.0,
        tags: vec![("title".into(), "MRN-77 colonoscopy".into())],
        ..Default::default()
    };
    generate_synthetic_video(&tool(), &spec, &tagged).unwrap();
    let o = run(vidpriv(&ws).arg("verify").arg(&tagged));
    assert_eq!(o.status.code(), Some(4));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["metadata_ok"], false);
    assert_eq!(report["filename_ok"], false);

    // Same patient again is refused rather than overwriting.
    let o = run(vidpriv(&ws).args(["process", "--patient", "MRN-77"]).arg("--input").arg(&input));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let o = run(vidpriv(&ws).args(["process", "--patient", "P"]).arg("--input").arg(dir.path().join("missing")));
    assert_eq!(o.status.code(), Some(2));
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let o = run(vidpriv(&ws).args(["process", "--patient", "P"]).arg("--input").arg(dir.path().join("empty")));
    assert_eq!(o.status.code(), Some(2));
    let o = run(vidpriv(&ws).args(["process", "--patient", "P", "--input", ".", "--mode", "turbo"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(vidpriv(&ws).args(["--set", "theta_on=0.1", "--set", "theta_off=0.5", "config"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(vidpriv(&ws).arg("--config").arg(dir.path().join("nope.conf")).arg("config"));
    assert_eq!(o.status.code(), Some(2));
    let o = run(vidpriv(&ws).arg("verify").arg(dir.path().join("nope.mp4")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let conf = dir.path().join("vidpriv.conf");
    std::fs::write(&conf, "# test\nport=9000\ndefault_mode=advanced\nprofile_width=320\nprofile_height=180\n").unwrap();

    let o = run(vidpriv(&ws).arg("--config").arg(&conf).arg("config"));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.contains("\nport=9000\n") && text.contains("\ndefault_mode=advanced\n"));
    let o = run(vidpriv(&ws).arg("--config").arg(&conf).args(["--set", "port=9100", "config"]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\nport=9100\n"));
    // The file is also found in the working directory.
    let o = run(vidpriv(&ws).current_dir(dir.path()).arg("config"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\nport=9000\n"));

    let input = case(&dir.path().join("case"), 3.0);
    let o = run(vidpriv(&ws).arg("--config").arg(&conf).args(["process", "--patient", "A"]).arg("--input").arg(&input));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = job_doc(&stdout_lines(&o)[1]);
    assert_eq!(doc["case"]["mode"], "advanced");
    assert_eq!(doc["case"]["profile"]["width"], 320);

    let o = run(
        vidpriv(&ws)
            .arg("--config")
            .arg(&conf)
            .args(["process", "--patient", "B", "--mode", "fast", "--profile", "256x144@20"])
            .arg("--input")
            .arg(&input),
    );
    assert_eq!(o.status.code(), Some(0));
    let doc = job_doc(&stdout_lines(&o)[1]);
    assert_eq!(doc["case"]["mode"], "fast");
    assert_eq!(doc["case"]["profile"]["width"], 256);
    assert_eq!(doc["case"]["profile"]["fps"], 20.0);
}

#[test]
fn serve_answers_and_stops_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let mut child = vidpriv(&ws)
        .current_dir(dir.path())
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    assert!(base.starts_with("http://127.0.0.1:"));

    let resp = reqwest::blocking::get(format!("{base}/jobs")).unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.json::<serde_json::Value>().unwrap(), serde_json::json!([]));

    let occupied = base.rsplit(':').next().unwrap().to_string();
    let o = run(vidpriv(&dir.path().join("ws2")).args(["serve", "--port", &occupied]));
    assert_eq!(o.status.code(), Some(2));

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let deadline = std::time::Instant::now() + Duration::from_secs(20);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(std::time::Instant::now() < deadline, "serve did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}

#[test]
fn non_loopback_serve_needs_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(vidpriv(&dir.path().join("ws")).args(["--set", "bind=0.0.0.0", "serve", "--port", "0"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_writes_records_and_a_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = run(vidpriv(&dir.path().join("ws")).args(["bench", "--reps", "1", "--durations", "2,3,4"]).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_lines(&o);
    assert_eq!(lines.len(), 3);
    let records = vidpriv_bench::read_records(Path::new(&lines[0])).unwrap();
    assert_eq!(records.len(), 6);
    let summary = std::fs::read_to_string(&lines[2]).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6, "2 modes x 3 durations");
    let first = std::fs::read(&lines[1]).unwrap();

    let again = dir.path().join("again");
    let o = run(vidpriv(&dir.path().join("ws")).args(["bench", "--from-csv", &lines[0]]).arg("--out").arg(&again));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(again.join("bench_report.md")).unwrap(), first);
}

fn help(args: &[&str]) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_vidpriv")).args(args).arg("--help").output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

fn flags(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
        .filter(|w| w.starts_with("--") && w.len() > 2 && w.as_bytes()[2].is_ascii_lowercase())
        .map(str::to_string)
        .collect();
    out.sort();
    out.dedup();
    out
}

#[test]
fn help_lists_every_documented_flag() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let doc = std::fs::read_to_string(root.join("docs/cli.md")).unwrap();
    let mut sections = doc.split("\n## ").skip(1);
    let global = sections.next().unwrap();
    let top = help(&[]);
    for f in flags(global) {
        assert!(top.contains(&f), "global flag {f} missing from --help");
    }
    let mut documented = flags(global);
    for section in sections {
        let cmd = section.lines().next().unwrap().trim().strip_prefix("vidpriv ").unwrap();
        let text = help(&[cmd]);
        for f in flags(section) {
            assert!(text.contains(&format!("{f} ")) || text.contains(&format!("{f}\n")), "{cmd}: {f} missing from --help");
            documented.push(f);
        }
        for f in flags(&text) {
            if f != "--help" && f != "--version" {
                assert!(documented.contains(&f), "{cmd}: {f} undocumented");
            }
        }
    }

    // Command lines in the README use only real flags.
    let readme = std::fs::read_to_string(root.join("README.md")).unwrap();
    for line in readme.lines().map(str::trim).filter(|l| l.starts_with("vidpriv ")) {
        let cmd = line.split_whitespace().find(|w| ["process", "serve", "verify", "bench", "config"].contains(w));
        let text = help(&cmd.map(|c| vec![c]).unwrap_or_default());
        for f in flags(line) {
            assert!(text.contains(&f), "README uses {f}, unknown to `{line}`");
        }
    }
}
