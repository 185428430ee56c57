use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use divernet::dataset::{build_dataset, SceneStyle};
use divernet::model::load_weights;
use divernet::{NetworkConfig, NetworkWeights};
use serde_json::Value;

fn divernet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divernet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn zero_epoch_training_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let o = divernet(
        &[
            "train",
            "--arch",
            "tiny",
            "--synthetic",
            "4",
            "--epochs",
            "0",
            "--seed",
            "5",
            "--out-dir",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = load_weights(&dir.path().join("out/weights.dnwt"), None).unwrap();
    let fresh = NetworkWeights::<f32>::build(NetworkConfig::tiny(2, 64), 5).unwrap();
    assert_eq!(saved, fresh);
    let curve = std::fs::read_to_string(dir.path().join("out/loss.csv")).unwrap();
    assert_eq!(curve.trim(), "epoch,class_loss,box_loss,region_loss,train_accuracy");
}

#[test]
fn short_training_writes_one_curve_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = divernet(
        &["train", "--arch", "tiny", "--synthetic", "6", "--epochs", "2", "--batch-size", "3"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("2,"));
    assert!(dir.path().join("weights.dnwt").exists());
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = divernet(
        &["train", "--arch", "tiny", "--synthetic", "8", "--epochs", "3", "--lr", "1e30"],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["simulate", "--script", "spiral"][..],
        &["train", "--manifest", "missing.tsv"],
        &["train", "--synthetic", "4", "--lr", "-1"],
        &["eval", "--synthetic", "4"],
        &["eval", "--synthetic", "4", "--classes", "background", "--detections", "none.txt"],
        &["eval", "--synthetic", "4", "--detections", "none.txt", "--min-overlap", "2"],
        &["simulate", "--detector", "model"],
        &["frobnicate"],
    ] {
        let o = divernet(args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&divernet(&["--help"], dir.path())), 0);
}

#[test]
fn eval_scores_a_detection_file() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = build_dataset(4, 4, &["diver"], 3, &SceneStyle::default()).unwrap();
    let mut perfect = String::new();
    for f in &test {
        let b = f.objects[0].bbox;
        perfect += &format!("{} diver 0.9 {} {} {} {}\n", f.source_id, b.xmin, b.ymin, b.xmax, b.ymax);
    }
    std::fs::write(dir.path().join("perfect.txt"), perfect).unwrap();
    std::fs::write(dir.path().join("empty.txt"), "").unwrap();
    let base = ["eval", "--synthetic", "4", "--classes", "diver", "--seed", "3", "--detections"];

    let o = divernet(&[&base[..], &["perfect.txt", "--out", "m.json"]].concat(), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(
        text.contains("map=1\n") && text.contains("mean_iou=1\n") && text.contains("tp=4\n"),
        "{text}"
    );
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(json["map"], 1.0);

    let o = divernet(&[&base[..], &["empty.txt"]].concat(), dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("map=0\n"));
}

#[test]
fn bench_reports_both_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let o = divernet(&["bench", "--arch", "tiny", "--frames", "10", "--warmup", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for key in ["f32_fps_mean=", "f32_fps_std=", "f64_fps_mean=", "f64_fps_std=", "frames=10"] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
}

#[test]
fn one_tick_simulation_logs_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = divernet(&["simulate", "--duration", "0.05", "--script", "straight"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(dir.path().join("episode.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split('\t').count(), 27);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ticks"], 1);
    assert_eq!(serde_json::from_str::<Value>(&stdout(&o)).unwrap(), summary);
}

#[test]
fn config_file_sets_flags_and_gains() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "duration=1\nscript=circle\nyaw.kp=0.3\n").unwrap();
    let o = divernet(&["simulate", "--config", "run.cfg", "--duration", "0.5"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["ticks"], 10);

    std::fs::write(dir.path().join("bad.cfg"), "yaw.kq=0.3\n").unwrap();
    assert_eq!(code(&divernet(&["simulate", "--config", "bad.cfg"], dir.path())), 2);
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start() -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_divernet"))
            .args(["serve", "--port", "0", "--once", "--frame-every", "5", "--tick-rate", "50"])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening=").expect("address line").to_string();
        Server { child, addr }
    }

    fn finish(mut self) -> i32 {
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s.code().unwrap();
            }
            assert!(Instant::now() < deadline, "server did not exit after its session");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

fn read_json(reader: &mut impl BufRead) -> Value {
    let mut line = String::new();
    assert!(reader.read_line(&mut line).unwrap() > 0, "connection closed");
    serde_json::from_str(&line).unwrap()
}

#[test]
fn tcp_session_steers_the_diver_and_turns_away_a_second_client() {
    let server = Server::start();
    let mut client = TcpStream::connect(&server.addr).unwrap();
    client.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut reader = BufReader::new(client.try_clone().unwrap());
    let first = read_json(&mut reader);
    assert_eq!(first["type"], "state");
    for key in ["t", "robot", "diver", "detection", "command", "mode"] {
        assert!(first.get(key).is_some(), "{key} missing: {first}");
    }

    let other = TcpStream::connect(&server.addr).unwrap();
    other.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let busy = read_json(&mut BufReader::new(other));
    assert_eq!(busy, serde_json::json!({"type": "error", "message": "busy"}));

    client
        .write_all(b"{\"type\":\"steer\",\"vx\":0.5,\"vy\":-0.25,\"vz\":0}\n")
        .unwrap();
    let (mut steered, mut framed) = (false, false);
    for _ in 0..200 {
        let m = read_json(&mut reader);
        if m["type"] != "state" {
            continue;
        }
        framed |= m["frame_png_b64"].is_string();
        if m["diver"]["vx"] == 0.5 && m["diver"]["vy"] == -0.25 {
            steered = true;
        }
        if steered && framed {
            break;
        }
    }
    assert!(steered && framed);

    client.write_all(b"not json\n").unwrap();
    let err = (0..200)
        .map(|_| read_json(&mut reader))
        .find(|m| m["type"] == "error")
        .expect("error reply");
    assert!(err["message"].as_str().unwrap().starts_with("bad message"));

    drop(reader);
    drop(client);
    assert_eq!(server.finish(), 0);
}

#[test]
fn websocket_clients_get_the_same_messages() {
    let server = Server::start();
    let (mut ws, _) = tungstenite::connect(format!("ws://{}/", server.addr)).unwrap();
    let mut state = || loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str::<Value>(&t).unwrap();
        }
    };
    let m = state();
    assert_eq!(m["type"], "state");
    assert!(m["robot"]["yaw"].is_number());
    drop(state);
    ws.send(tungstenite::Message::text(r#"{"type":"steer","vx":0,"vy":0.3,"vz":0}"#))
        .unwrap();
    let mut seen = false;
    for _ in 0..200 {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            let m: Value = serde_json::from_str(&t).unwrap();
            if m["diver"]["vy"] == 0.3 {
                seen = true;
                break;
            }
        }
    }
    assert!(seen);
    ws.close(None).unwrap();
    let _ = ws.flush();
    drop(ws);
    assert_eq!(server.finish(), 0);
}
