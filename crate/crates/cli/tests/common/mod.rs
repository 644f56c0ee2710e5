#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_posecraft"));
    for (k, _) in std::env::vars() {
        if k.starts_with("POSECRAFT_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A `serve-mock` child on an ephemeral port, killed on drop.
pub struct Mock {
    child: Child,
    pub addr: String,
}

impl Mock {
    pub fn start(extra: &[&str]) -> Self {
        let mut child = bin()
            .args(["serve-mock", "--port", "0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("mock starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
        Mock { child, addr }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 exchange; returns status and raw body bytes.
pub fn http(addr: &str, method: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    let head = format!(
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        body.len()
    );
    s.write_all(head.as_bytes()).unwrap();
    s.write_all(body).unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header end");
    let headers = String::from_utf8_lossy(&raw[..split]).to_string();
    let status = headers.split_whitespace().nth(1).unwrap().parse().unwrap();
    let mut payload = raw[split + 4..].to_vec();
    if headers.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        payload = dechunk(&payload);
    }
    (status, payload)
}

fn dechunk(mut b: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
        let n = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.extend_from_slice(&b[eol + 2..eol + 2 + n]);
        b = &b[eol + 4 + n..];
    }
}

/// Writes a small-scene suite and a config matching its frame size.
pub fn small_suite(dir: &Path, pairs: usize, seed: u64) -> std::path::PathBuf {
    let o = run(&["synth-suite", dir.to_str().unwrap(), "--pairs", &pairs.to_string(), "--seed", &seed.to_string(), "--small"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, "[pipeline]\ntarget_width = 64\ntarget_height = 40\n").unwrap();
    cfg
}

pub mod protocol {
    use std::path::PathBuf;

    use posecraft_core::backends::{
        decode_image, encode_image, InterpolateRequest, InterpolateResponse, NvsRequest, PairSuiteConfig, PoseRequest,
        PoseResponse, RelayFrame, SceneConfig, SyntheticSuite,
    };
    use posecraft_core::features::Provenance;
    use posecraft_core::geometry::interpolate_trajectory;

    use super::http;

    pub fn golden_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
    }

    pub struct Exchange {
        pub name: &'static str,
        pub request: Vec<u8>,
        pub status: u16,
        pub response: Vec<u8>,
    }

    fn post(addr: &str, name: &'static str, path: &str, request: Vec<u8>) -> Exchange {
        let (status, response) = http(addr, "POST", path, &request);
        Exchange { name, request, status, response }
    }

    /// Health, then interpolate → pose on the relays → nvs along the
    /// trajectory, each request built from the previous response.
    pub fn round_trip(addr: &str) -> Vec<Exchange> {
        let suite = SyntheticSuite::pairs(&PairSuiteConfig { pairs: 1, seed: 0, scene: SceneConfig::small(0), ..Default::default() });
        let (_, frames) = suite.backend(0.0).unwrap();
        let (status, response) = http(addr, "GET", "/v1/health", b"");
        let mut out = vec![Exchange { name: "health", request: Vec::new(), status, response }];

        let req = InterpolateRequest { start: encode_image(&frames[0]), end: encode_image(&frames[1]), frame_count: 16, prompt: None };
        let ex = post(addr, "interpolate", "/v1/interpolate", serde_json::to_vec(&req).unwrap());
        let interp: InterpolateResponse = serde_json::from_slice(&ex.response).expect("interpolate response");
        out.push(ex);

        let relays = [0usize, 1, 14, 15];
        let req = PoseRequest { frames: relays.iter().map(|&i| interp.frames[i].clone()).collect() };
        let ex = post(addr, "pose", "/v1/pose", serde_json::to_vec(&req).unwrap());
        let pose: PoseResponse = serde_json::from_slice(&ex.response).expect("pose response");
        out.push(ex);

        let keys = [0usize, 2, 22, 24];
        let keyed: Vec<_> = keys.iter().copied().zip(pose.poses.iter().copied()).collect();
        let trajectory = interpolate_trajectory(&keyed, 24).unwrap().into_poses();
        let req = NvsRequest {
            relays: keys
                .iter()
                .zip(&relays)
                .zip(&pose.poses)
                .map(|((&index, &i), p)| RelayFrame { index, image: interp.frames[i].clone(), pose: *p })
                .collect(),
            trajectory,
        };
        out.push(post(addr, "nvs", "/v1/nvs", serde_json::to_vec(&req).unwrap()));
        // sanity: frames decode
        let _ = decode_image(&interp.frames[1], 1, Provenance::DcInterpolated).unwrap();
        out
    }

    /// Compares every request and response with the golden files, or
    /// rewrites them when `POSECRAFT_BLESS=1`. Returns mismatch descriptions.
    pub fn check_golden(exchanges: &[Exchange]) -> Vec<String> {
        let dir = golden_dir();
        let bless = std::env::var("POSECRAFT_BLESS").is_ok_and(|v| v == "1");
        let mut bad = Vec::new();
        for ex in exchanges {
            if ex.status != 200 {
                bad.push(format!("{}: status {}: {}", ex.name, ex.status, String::from_utf8_lossy(&ex.response)));
                continue;
            }
            for (kind, bytes) in [("request", &ex.request), ("response", &ex.response)] {
                if ex.name == "health" && kind == "request" {
                    continue;
                }
                let path = dir.join(format!("{}.{kind}.json", ex.name));
                if bless {
                    std::fs::create_dir_all(&dir).unwrap();
                    std::fs::write(&path, bytes).unwrap();
                    continue;
                }
                match std::fs::read(&path) {
                    Ok(g) if &g == bytes => {}
                    Ok(g) => bad.push(format!("{}: {} bytes differ from golden {} bytes", path.display(), bytes.len(), g.len())),
                    Err(e) => bad.push(format!("{}: {e}", path.display())),
                }
            }
        }
        bad
    }
}

/// Serves canned `(status, body)` replies in order, one per connection.
pub fn canned_server(replies: Vec<(u16, String)>) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for ((status, body), stream) in replies.into_iter().zip(listener.incoming()) {
            let mut s = stream.unwrap();
            let mut got = Vec::new();
            let mut buf = vec![0u8; 1 << 16];
            loop {
                let k = s.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..k]);
                if k == 0 {
                    break;
                }
                if let Some(end) = got.windows(4).position(|w| w == b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&got[..end]).to_ascii_lowercase();
                    let len = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if got.len() >= end + 4 + len {
                        break;
                    }
                }
            }
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = s.write_all(resp.as_bytes());
        }
    });
    format!("http://{addr}")
}
