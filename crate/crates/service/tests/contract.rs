use std::io::{BufRead, BufReader};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};
use vidpriv_core::orchestrator::{MediaPipeline, OrchestratorConfig};
use vidpriv_core::synth::{generate_segmented_case, SyntheticSpec};
use vidpriv_core::{AppConfig, MediaTool, Orchestrator, Workspace};
use vidpriv_service::{bind, AppState, BackgroundService, ServiceConfig, ServiceError};

const PATIENT: &str = "MRN-4242-ZETA";

struct Harness {
    _dir: tempfile::TempDir,
    root: PathBuf,
    service: BackgroundService,
    client: Client,
    /// Every body received, for the privacy check.
    bodies: Mutex<Vec<String>>,
}

impl Harness {
    fn start(workers: usize, ui: Option<PathBuf>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let ws = Workspace::open(root.join("ws")).unwrap();
        let tool = MediaTool::discover(None).unwrap();
        let orch = Orchestrator::start(
            ws.clone(),
            Arc::new(MediaPipeline::new(tool.clone())),
            OrchestratorConfig { workers, retain_intermediate_hours: 72 },
        )
        .unwrap();
        let mut app = AppConfig { port: 0, ui_dir: ui, ..AppConfig::default() };
        app.fs_roots = vec![root.join("input")];
        std::fs::create_dir_all(root.join("input")).unwrap();
        let cfg = ServiceConfig::from_app(&app, ws.input_dir());
        let listener = bind(&cfg).unwrap();
        let service = BackgroundService::spawn(listener, AppState::new(Arc::new(orch), tool, cfg)).unwrap();
        Self { _dir: dir, root, service, client: Client::new(), bodies: Mutex::new(Vec::new()) }
    }

    fn url(&self, path: &str) -> String {
        self.service.url(path)
    }

    fn record(&self, resp: Response) -> (StatusCode, Value) {
        let status = resp.status();
        let text = resp.text().unwrap();
        self.bodies.lock().unwrap().push(text.clone());
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (StatusCode, Value) {
        self.record(self.client.get(self.url(path)).send().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.record(self.client.post(self.url(path)).json(&body).send().unwrap())
    }

    fn case_folder(&self, name: &str, clips: u32, oob: Vec<(f64, f64)>) -> PathBuf {
        let folder = self.root.join("input").join(name);
        let spec = SyntheticSpec { duration_s: 10.0, oob_intervals: oob, seed: 21, ..Default::default() };
        generate_segmented_case(&MediaTool::discover(None).unwrap(), &spec, clips, &folder).unwrap();
        folder
    }

    /// Follow the event stream to its end.
    fn events(&self, job: &str) -> Vec<Value> {
        let resp = self.client.get(self.url(&format!("/jobs/{job}/events"))).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
        let mut out = Vec::new();
        for line in BufReader::new(resp).lines() {
            let line = line.unwrap();
            self.bodies.lock().unwrap().push(line.clone());
            if let Some(data) = line.strip_prefix("data:") {
                out.push(serde_json::from_str::<Value>(data.trim()).unwrap());
            }
        }
        out
    }

    fn png(&self, job: &str, t: f64, variant: &str) -> image::RgbImage {
        let resp = self.client.get(self.url(&format!("/cases/{job}/preview?t={t}&variant={variant}"))).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "image/png");
        image::load_from_memory(&resp.bytes().unwrap()).unwrap().to_rgb8()
    }

    fn assert_no_patient_ids(&self) {
        for b in self.bodies.lock().unwrap().iter() {
            assert!(!b.contains(PATIENT), "patient id leaked: {b}");
        }
    }
}

fn wait_done(h: &Harness, job: &str) -> Value {
    let events = h.events(job);
    let last = events.last().unwrap();
    assert_eq!(last["status"], "done", "{events:?}");
    assert_eq!(last["percent"], 100.0);
    let (s, detail) = h.get(&format!("/jobs/{job}"));
    assert_eq!(s, StatusCode::OK);
    detail
}

fn mean_abs_diff(a: &image::RgbImage, b: &image::RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let sum: u64 = a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| x.abs_diff(*y) as u64).sum();
    sum as f64 / a.as_raw().len() as f64
}

#[test]
fn intake_validation_and_listing() {
    let h = Harness::start(0, None);
    let (s, v) = h.get("/health");
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));
    assert_eq!(h.get("/jobs"), (StatusCode::OK, json!([])));

    let folder = h.case_folder(&format!("{PATIENT}_visit"), 3, vec![]);
    let (s, v) = h.post("/cases", json!({"patient_id": PATIENT, "folder": folder}));
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["status"], "queued");
    assert_eq!(v["segment_count"], 3);
    let id = v["job_id"].as_str().unwrap().to_string();

    let (s, jobs) = h.get("/jobs");
    assert_eq!(s, StatusCode::OK);
    assert_eq!(jobs.as_array().unwrap().len(), 1);
    assert_eq!(jobs[0]["id"], id.as_str());
    let (_, detail) = h.get(&format!("/jobs/{id}"));
    assert_eq!(detail["status"], "queued");
    assert_eq!(detail["stage"], Value::Null);
    assert_eq!(detail["segment_count"], 3);

    std::fs::create_dir_all(h.root.join("input/empty")).unwrap();
    let (s, v) = h.post("/cases", json!({"patient_id": "P-2", "folder": h.root.join("input/empty")}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));
    let (s, v) = h.post("/cases", json!({"patient_id": "P-2", "folder": h.root.join("nope")}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (s, _) = h.post("/cases", json!({"patient_id": " ", "folder": folder}));
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = h.post("/cases", json!({"patient_id": 5}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));
    let (s, v) = h.post("/cases", json!({"patient_id": "P", "folder": folder, "mode": "turbo"}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));

    for path in ["/jobs/0123456789abcdef0123456789abcdef", "/jobs/not-a-job", "/cases/0123456789abcdef0123456789abcdef/intervals"] {
        let (s, v) = h.get(path);
        assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")), "{path}");
    }

    // Queued jobs are not reviewable yet.
    let (s, v) = h.get(&format!("/cases/{id}/intervals"));
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
    let (s, _) = h.post(&format!("/cases/{id}/overrides"), json!({"overrides": []}));
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, v) = h.post(&format!("/jobs/{id}/cancel"), json!({}));
    assert_eq!((s, v["status"].as_str()), (StatusCode::ACCEPTED, Some("cancelled")));
    let events = h.events(&id);
    assert_eq!(events.last().unwrap()["status"], "cancelled");
    h.assert_no_patient_ids();
}

#[test]
fn review_flow_previews_intervals_and_overrides() {
    let h = Harness::start(1, None);
    let folder = h.case_folder("case_a", 2, vec![(3.0, 5.0)]);
    let (s, v) = h.post("/cases", json!({"patient_id": PATIENT, "folder": folder, "mode": "fast"}));
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap().to_string();

    let detail = wait_done(&h, &id);
    assert_eq!(detail["status"], "done");
    let pseudonym = detail["pseudonym"].as_str().unwrap();
    assert_eq!(detail["report"]["output_file"], format!("{pseudonym}.mp4"));
    assert_eq!(detail["report"]["verification"]["pass"], true);
    let percents: Vec<f64> = detail["events"].as_array().unwrap().iter().map(|e| e["percent"].as_f64().unwrap()).collect();
    assert!(percents.windows(2).all(|w| w[0] <= w[1]));

    // Replay of a finished job ends at 100%.
    let replay = h.events(&id);
    assert_eq!(replay.len(), detail["events"].as_array().unwrap().len());
    assert_eq!(replay.last().unwrap()["percent"], 100.0);

    let (s, iv) = h.get(&format!("/cases/{id}/intervals"));
    assert_eq!(s, StatusCode::OK);
    assert_eq!(iv["intervals"], json!([{"start_s": 2.5, "end_s": 5.5, "source": "auto", "label": "out_of_body"}]));
    let duration = iv["duration_s"].as_f64().unwrap();
    assert!((duration - 10.0).abs() < 0.1);

    let original = h.png(&id, 4.0, "original");
    let redacted = h.png(&id, 4.0, "redacted");
    assert!(mean_abs_diff(&original, &redacted) >= 30.0);
    let clean_o = h.png(&id, 8.0, "original");
    let clean_r = h.png(&id, 8.0, "redacted");
    assert!(mean_abs_diff(&clean_o, &clean_r) < 5.0);
    let first = h.png(&id, 0.0, "original");
    assert_eq!(first.dimensions(), (640, 360));
    let _ = h.png(&id, duration, "redacted");
    for bad in ["t=11", "t=-1", "t=abc", "variant=original", "t=1&variant=sepia"] {
        let (s, v) = h.get(&format!("/cases/{id}/preview?{bad}"));
        assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")), "{bad}");
    }

    let (s, v) = h.post(&format!("/cases/{id}/overrides"), json!({"overrides": [{"start_s": 9.0, "end_s": 12.0, "action": "redact"}]}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));
    let (s, v) = h.post(&format!("/cases/{id}/overrides"), json!({"overrides": "all"}));
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));

    let (s, v) = h.post(&format!("/cases/{id}/overrides"), json!({"overrides": [{"start_s": 0.0, "end_s": duration, "action": "keep"}]}));
    assert_eq!(s, StatusCode::ACCEPTED);
    let keep = v["job_id"].as_str().unwrap().to_string();
    let kept = wait_done(&h, &keep);
    assert_eq!(kept["intervals"], json!([]));
    assert_eq!(kept["rerun_of"], id.as_str());
    assert_eq!(kept["pseudonym"], pseudonym);
    let o = h.png(&keep, 4.0, "original");
    let r = h.png(&keep, 4.0, "redacted");
    assert!(mean_abs_diff(&o, &r) < 5.0);

    let (s, v) = h.post(
        &format!("/cases/{id}/overrides"),
        json!({"overrides": [
            {"start_s": 6.0, "end_s": 7.5, "action": "redact"},
            {"start_s": 7.0, "end_s": 8.0, "action": "redact"}
        ]}),
    );
    assert_eq!(s, StatusCode::ACCEPTED);
    let merged = v["job_id"].as_str().unwrap().to_string();
    let (_, pending) = h.get(&format!("/jobs/{merged}"));
    let spans: Vec<(f64, f64)> = pending["intervals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| (i["start_s"].as_f64().unwrap(), i["end_s"].as_f64().unwrap()))
        .collect();
    assert_eq!(spans, vec![(2.5, 5.5), (6.0, 8.0)]);
    let done = wait_done(&h, &merged);
    assert_eq!(done["intervals"].as_array().unwrap()[1]["source"], "manual");

    // Concurrent readers see consistent listings.
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                let (st, jobs) = h.get("/jobs");
                assert_eq!(st, StatusCode::OK);
                assert_eq!(jobs.as_array().unwrap().len(), 3);
            });
        }
    });
    h.assert_no_patient_ids();
}

#[test]
fn fs_listing_is_confined_to_roots() {
    let h = Harness::start(0, None);
    h.case_folder("case_b", 2, vec![]);
    let (s, top) = h.get("/fs/list");
    assert_eq!(s, StatusCode::OK);
    assert_eq!(top["entries"].as_array().unwrap().len(), 1);
    let input = top["entries"][0]["path"].as_str().unwrap().to_string();
    let (s, l) = h.get(&format!("/fs/list?path={input}"));
    assert_eq!(s, StatusCode::OK);
    assert_eq!(l["entries"][0]["name"], "case_b");
    assert_eq!(l["entries"][0]["video_count"], 2);
    let (s, _) = h.get(&format!("/fs/list?path={}", h.root.display()));
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.get("/fs/list?path=/etc");
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[test]
fn cors_only_admits_the_service_origin() {
    let h = Harness::start(0, None);
    let own = format!("http://{}", h.service.addr());
    let ok = h.client.get(h.url("/jobs")).header("Origin", &own).send().unwrap();
    assert_eq!(ok.headers().get("access-control-allow-origin").unwrap(), own.as_str());
    let foreign = h.client.get(h.url("/jobs")).header("Origin", "http://evil.example").send().unwrap();
    assert!(foreign.headers().get("access-control-allow-origin").is_none());
}

#[test]
fn static_ui_is_served_with_index_fallback() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let h = Harness::start(0, Some(ui.path().to_path_buf()));
    let page = h.client.get(h.url("/")).send().unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert!(page.text().unwrap().contains("<title>ui</title>"));
    assert_eq!(h.client.get(h.url("/app.js")).send().unwrap().text().unwrap(), "console.log(1)");
    assert!(h.client.get(h.url("/review/abc")).send().unwrap().text().unwrap().contains("<title>ui</title>"));
    // API routes still win.
    assert_eq!(h.get("/jobs").1, json!([]));
}

#[test]
fn non_loopback_bind_needs_opt_in() {
    let mut cfg = ServiceConfig::from_app(&AppConfig { port: 0, ..AppConfig::default() }, Path::new("/tmp").into());
    assert!(bind(&cfg).unwrap().local_addr().unwrap().ip().is_loopback());
    cfg.bind = IpAddr::from([0, 0, 0, 0]);
    assert!(matches!(bind(&cfg), Err(ServiceError::NonLoopback(_))));
    cfg.allow_non_loopback = true;
    assert!(bind(&cfg).is_ok());
}

#[test]
fn occupied_port_is_a_bind_error() {
    let first = bind(&ServiceConfig::from_app(&AppConfig { port: 0, ..AppConfig::default() }, "/tmp".into())).unwrap();
    let port = first.local_addr().unwrap().port();
    let cfg = ServiceConfig::from_app(&AppConfig { port, ..AppConfig::default() }, "/tmp".into());
    assert!(matches!(bind(&cfg), Err(ServiceError::Bind { .. })));
}
