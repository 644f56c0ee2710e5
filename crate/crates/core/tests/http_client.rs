use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use posecraft_core::backends::{
    encode_image, BackendError, HttpBackend, HttpConfig, InterpolateRequest, Interpolator, PoseEstimator, PoseRequest,
    Role,
};
use posecraft_core::features::{Frame, Provenance};

/// Answers `n` connections with a fixed status and body.
fn stub(status: &str, body: String, n: usize, delay: Duration) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let status = status.to_string();
    thread::spawn(move || {
        for stream in listener.incoming().take(n) {
            let mut s = stream.unwrap();
            let mut buf = vec![0u8; 1 << 20];
            let mut got = Vec::new();
            // read headers plus the declared body
            loop {
                let k = s.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..k]);
                let text = String::from_utf8_lossy(&got);
                if let Some(end) = text.find("\r\n\r\n") {
                    let len = text[..end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if got.len() >= end + 4 + len {
                        break;
                    }
                }
                if k == 0 {
                    break;
                }
            }
            thread::sleep(delay);
            let resp = format!(
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = s.write_all(resp.as_bytes());
        }
    });
    format!("http://{addr}")
}

fn frame(v: u8) -> Frame {
    Frame::from_gray(32, 32, vec![v; 1024], 0, Provenance::Input).unwrap()
}

#[test]
fn unreachable_endpoint_retries_then_reports_transport() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let be = HttpBackend::new(HttpConfig::all(&format!("http://127.0.0.1:{port}")));
    let t0 = Instant::now();
    let err = be.estimate(&PoseRequest { frames: vec![] }).unwrap_err();
    let waited = t0.elapsed();
    assert!(matches!(err, BackendError::Transport { role: Role::Pose, attempts: 3, .. }), "{err:?}");
    assert!(waited >= Duration::from_millis(2500), "{waited:?}");
}

#[test]
fn short_interpolation_over_http_is_a_violation() {
    let (a, b) = (encode_image(&frame(10)), encode_image(&frame(20)));
    let body = serde_json::json!({ "frames": vec![a.clone(); 15] }).to_string();
    let be = HttpBackend::new(HttpConfig::all(&stub("200 OK", body, 1, Duration::ZERO)));
    let req = InterpolateRequest { start: a, end: b, frame_count: 16, prompt: None };
    let err = be.interpolate(&req).unwrap_err();
    assert!(matches!(err, BackendError::ProtocolViolation { role: Role::Interpolate, .. }), "{err:?}");
}

#[test]
fn error_status_is_not_retried() {
    let body = serde_json::json!({ "error": "model not loaded" }).to_string();
    let be = HttpBackend::new(HttpConfig::all(&stub("503 Service Unavailable", body, 1, Duration::ZERO)));
    let err = be.estimate(&PoseRequest { frames: vec![] }).unwrap_err();
    match err {
        BackendError::Status { role: Role::Pose, status: 503, body } => assert!(body.contains("model not loaded")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn slow_backend_times_out() {
    let url = stub("200 OK", "{}".into(), 1, Duration::from_millis(1500));
    let be = HttpBackend::new(HttpConfig { timeout_secs: 0.3, ..HttpConfig::all(&url) });
    let err = be.estimate(&PoseRequest { frames: vec![] }).unwrap_err();
    assert_eq!(err, BackendError::Timeout { role: Role::Pose });
}
