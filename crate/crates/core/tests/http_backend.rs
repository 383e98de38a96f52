//! The HTTP backend against an in-process mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use image::{Rgb, RgbImage};
use thoughtchain::chain_model::{PromptSpec, TextualThought};
use thoughtchain::gateway::http::HttpGateway;
use thoughtchain::gateway::{BackendConfig, BackendKind, Gateway};
use thoughtchain::Error;

#[derive(Clone)]
enum Reply {
    Json(u16, String),
    Hang(Duration),
}

#[derive(Debug, Clone)]
struct Seen {
    request_line: String,
    headers: Vec<String>,
    body: Vec<u8>,
}

struct Mock {
    base: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn mock(replies: Vec<Reply>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (stream, reply) in listener.incoming().zip(
            replies
                .into_iter()
                .chain(std::iter::repeat(Reply::Json(500, "{}".into()))),
        ) {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end().to_string();
                if h.is_empty() {
                    break;
                }
                if let Some(v) = h.to_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(h);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                request_line: request_line.trim_end().into(),
                headers,
                body,
            });
            match reply {
                Reply::Hang(d) => std::thread::sleep(d),
                Reply::Json(status, body) => {
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                }
            }
        }
    });
    Mock { base, seen }
}

fn gateway(m: &Mock, retries: u32, timeout_s: f64) -> HttpGateway {
    std::env::set_var("THOUGHTCHAIN_TEST_KEY", "sk-test-secret");
    HttpGateway::from_config(&BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some(m.base.clone()),
        api_key_env: Some("THOUGHTCHAIN_TEST_KEY".into()),
        max_retries: retries,
        timeout_s,
        ..Default::default()
    })
    .unwrap()
}

fn chat_reply(content: &str) -> Reply {
    Reply::Json(
        200,
        serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string(),
    )
}

const FIRST: &str = r#"{"thoughts": "t", "context_frame": "c", "concise_prompt": "p", "consequences": "q"}"#;

fn prompt() -> PromptSpec {
    PromptSpec::new("A cat pushes a glass of water off a table.", "cat_glass").unwrap()
}

#[test]
fn first_frame_request_shape() {
    let m = mock(vec![chat_reply(FIRST)]);
    let r = gateway(&m, 0, 5.0).chat_first_frame(&prompt()).unwrap();
    assert_eq!(r.concise_prompt, "p");
    let seen = m.seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen[0]
        .headers
        .iter()
        .any(|h| h.to_lowercase() == "authorization: bearer sk-test-secret"));
    let body: serde_json::Value = serde_json::from_slice(&seen[0].body).unwrap();
    assert!(body["messages"][0]["content"]
        .as_str()
        .unwrap()
        .starts_with("You are given a text prompt"));
    assert_eq!(
        body["messages"][1]["content"],
        "Input Prompt: \"A cat pushes a glass of water off a table.\""
    );
    assert_eq!(body["response_format"]["json_schema"]["strict"], true);
}

#[test]
fn transient_errors_are_retried() {
    let m = mock(vec![
        Reply::Json(503, "{}".into()),
        Reply::Json(429, "{}".into()),
        chat_reply(FIRST),
    ]);
    gateway(&m, 2, 5.0).chat_first_frame(&prompt()).unwrap();
    assert_eq!(m.seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_exhausted_is_gateway_error() {
    let m = mock(vec![]);
    let err = gateway(&m, 1, 5.0).chat_first_frame(&prompt()).unwrap_err();
    assert!(matches!(err, Error::Gateway(_)), "{err}");
    assert_eq!(m.seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let m = mock(vec![Reply::Json(400, "{\"error\": \"bad\"}".into())]);
    assert!(gateway(&m, 3, 5.0).chat_first_frame(&prompt()).is_err());
    assert_eq!(m.seen.lock().unwrap().len(), 1);
}

#[test]
fn schema_failure_rerequests_once() {
    let m = mock(vec![chat_reply("{\"thoughts\": 1}"), chat_reply(FIRST)]);
    gateway(&m, 0, 5.0).chat_first_frame(&prompt()).unwrap();
    let m = mock(vec![
        chat_reply("not json"),
        chat_reply("{\"edit_instruction\": \"\", \"is_last\": true}"),
    ]);
    let g = gateway(&m, 0, 5.0);
    let img = RgbImage::new(16, 16);
    let txt = [TextualThought {
        index: 0,
        text: "A cat on a table.".into(),
    }];
    match g.perceive_next(&img, "It spills.", &prompt(), &txt) {
        Err(Error::Schema { raw, .. }) => assert!(raw.contains("edit_instruction")),
        other => panic!("{other:?}"),
    }
    assert_eq!(m.seen.lock().unwrap().len(), 2);
}

#[test]
fn perception_sends_composite_and_captions() {
    let m = mock(vec![chat_reply(
        r#"{"edit_instruction": "The cat's paw is touching the glass of water sitting on the table.", "is_last": false}"#,
    )]);
    let img = RgbImage::new(32, 16);
    let txt = [TextualThought {
        index: 0,
        text: "A cat on a table.".into(),
    }];
    let r = gateway(&m, 0, 5.0)
        .perceive_next(&img, "It spills.", &prompt(), &txt)
        .unwrap();
    assert!(!r.is_last);
    let seen = m.seen.lock().unwrap();
    let body: serde_json::Value = serde_json::from_slice(&seen[0].body).unwrap();
    let parts = &body["messages"][1]["content"];
    assert!(parts[0]["text"]
        .as_str()
        .unwrap()
        .contains("Keyframe 1: [A cat on a table.]"));
    assert!(parts[1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
}

fn b64_png(img: &RgbImage) -> String {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
    base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
}

#[test]
fn images_are_decoded_and_sized() {
    let src = RgbImage::from_pixel(32, 32, Rgb([9, 8, 7]));
    let reply = Reply::Json(
        200,
        serde_json::json!({"data": [{"b64_json": b64_png(&src)}]}).to_string(),
    );
    let m = mock(vec![reply.clone(), reply]);
    let g = gateway(&m, 0, 5.0);
    let img = g.generate_image("a red ball", (64, 48)).unwrap();
    assert_eq!((img.height(), img.width()), (64, 48));
    assert_eq!(img.get_pixel(3, 3), &Rgb([9, 8, 7]));
    let e = g.edit_image(&RgbImage::new(64, 32), "move it", (32, 32)).unwrap();
    assert_eq!(e.dimensions(), (32, 32));
    let seen = m.seen.lock().unwrap();
    assert!(seen[1].request_line.contains("/v1/images/edits"));
    assert!(seen[1]
        .headers
        .iter()
        .any(|h| h.to_lowercase().contains("multipart/form-data")));
    assert!(String::from_utf8_lossy(&seen[1].body).contains("move it"));
}

#[test]
fn calls_are_time_bounded() {
    let m = mock(vec![
        Reply::Hang(Duration::from_secs(10)),
        Reply::Hang(Duration::from_secs(10)),
    ]);
    let g = gateway(&m, 1, 0.4);
    let t = Instant::now();
    assert!(g.chat_first_frame(&prompt()).is_err());
    assert!(t.elapsed() <= Duration::from_millis(800 + 300), "{:?}", t.elapsed());
}

#[test]
fn key_is_not_in_debug_output() {
    let m = mock(vec![]);
    assert!(!format!("{:?}", gateway(&m, 0, 1.0)).contains("sk-test-secret"));
}

#[test]
fn missing_key_variable_is_config_error() {
    let err = HttpGateway::from_config(&BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some("http://127.0.0.1:9".into()),
        api_key_env: Some("THOUGHTCHAIN_UNSET_VARIABLE".into()),
        ..Default::default()
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
