use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use stereo_audit::corpus::write_manifest;
use stereo_audit::{ImageKey, ImageRecord};

/// 1x1 mid-gray PNG.
const GRAY_PNG: [u8; 69] = [
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13, 73, 72, 68, 82, 0, 0, 0, 1, 0, 0, 0, 1, 8, 2, 0, 0, 0, 144, 119,
    83, 222, 0, 0, 0, 12, 73, 68, 65, 84, 120, 156, 99, 104, 104, 104, 0, 0, 3, 4, 1, 129, 75, 211, 210, 16, 0, 0,
    0, 0, 73, 69, 78, 68, 174, 66, 96, 130,
];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereo-audit"))
        .args(args)
        .output()
        .unwrap()
}

fn manifest(dir: &Path, drop: usize, images: bool) -> String {
    let mut records: Vec<ImageRecord> = ImageKey::full_grid("chef")
        .enumerate()
        .map(|(i, k)| ImageRecord {
            image_id: format!("chef-{i:03}"),
            occupation: k.occupation,
            scenario_index: k.scenario_index,
            gender: k.gender,
            race: k.race,
            color: k.color,
            uri: images.then(|| format!("img/chef-{i:03}.png")),
        })
        .collect();
    records.truncate(records.len() - drop);
    if images {
        fs::create_dir_all(dir.join("img")).unwrap();
        for r in &records {
            fs::write(dir.join(r.uri.as_ref().unwrap()), GRAY_PNG).unwrap();
        }
    }
    let path = dir.join("manifest.csv");
    write_manifest(&records, fs::File::create(&path).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin(&[]).status.code(), Some(2));
    assert_eq!(bin(&["validate"]).status.code(), Some(2));
    assert_eq!(bin(&["validate", "--manifest", "/nonexistent.csv"]).status.code(), Some(2));
    assert_eq!(bin(&["validate", "--manifest", "x.csv", "--alpha", "2"]).status.code(), Some(2));
}

#[test]
fn validate_reports_findings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    let m = manifest(dir.path(), 0, false);
    let ok = bin(&["validate", "--manifest", &m, "--output-dir", &out]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("missing keys: 0"));

    let m = manifest(dir.path(), 3, false);
    let bad = bin(&["validate", "--manifest", &m, "--output-dir", &out]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("missing keys: 3"));
}

#[test]
fn run_without_models_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 0, false);
    let out = dir.path().join("out").display().to_string();
    assert_eq!(bin(&["run", "--manifest", &m, "--output-dir", &out]).status.code(), Some(2));
}

/// Answers every chat request; every third answer is warm.
fn serve(listener: TcpListener, served: Arc<AtomicUsize>) {
    for stream in listener.incoming() {
        let Ok(mut stream) = stream else { break };
        let n = served.fetch_add(1, Ordering::SeqCst);
        if read_request(&mut stream).is_none() {
            continue;
        }
        let text = match n % 3 {
            0 => "A warm, friendly and sincere chef smiling in a kitchen.",
            1 => "A chef standing in a kitchen holding a knife.",
            _ => "A confident, skillful chef plating food efficiently.",
        };
        let body = format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{text}"}}}}]}}"#);
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
    }
}

fn read_request(stream: &mut TcpStream) -> Option<()> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            let head = String::from_utf8_lossy(&buf[..pos]).to_ascii_lowercase();
            let len: usize = head
                .lines()
                .find_map(|l| l.strip_prefix("content-length:"))
                .map(|v| v.trim().parse().unwrap())
                .unwrap_or(0);
            while buf.len() < pos + 4 + len {
                let n = stream.read(&mut chunk).ok()?;
                if n == 0 {
                    return None;
                }
                buf.extend_from_slice(&chunk[..n]);
            }
            return Some(());
        }
    }
}

#[test]
fn full_run_against_a_local_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    manifest(dir.path(), 0, true);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let served = Arc::new(AtomicUsize::new(0));
    let counter = served.clone();
    std::thread::spawn(move || serve(listener, counter));

    let config = format!(
        r#"manifest = "manifest.csv"
image_root = "."
output_dir = "out"
fixed_timestamp = "2024-01-01T00:00:00Z"

[collector]
concurrency = 2

[[models]]
id = "local"
base_url = "http://{addr}/v1"

[embedder]
backend = "toy"
dimension = 32
seed = 1
"#
    );
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, config).unwrap();
    let cfg = cfg.display().to_string();

    let run = bin(&["run", "--config", &cfg]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(run.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("# of significant stereotypes"));
    assert_eq!(served.load(Ordering::SeqCst), 180);
    for f in ["manifest_report.json", "tone_report.json", "descriptions.jsonl", "scores.jsonl", "battery.json", "pmi.json", "battery_table.txt"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }

    let table = fs::read_to_string(dir.path().join("out/battery_table.txt")).unwrap();
    let report = bin(&["report", "--config", &cfg]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&report.stdout), table);

    // collection is cached; analysis stages rerun from disk
    let collect = bin(&["collect", "--config", &cfg]);
    assert_eq!(collect.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&collect.stdout).contains("cached 180"));
    assert_eq!(served.load(Ordering::SeqCst), 180);
    for stage in ["score", "analyze", "pmi"] {
        let out = bin(&[stage, "--config", &cfg]);
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
