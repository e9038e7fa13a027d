//! Local stand-in for a segmentation service, speaking the same protocol as
//! [`crate::segmenter::HttpBackend`]. Used by the protocol tests and by the
//! `mock-server` CLI command.

use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use tiny_http::{Header, Response, Server};

use crate::error::{Error, Result};
use crate::pnm::{GrayImage, RgbImage};
use crate::segmenter::{ErrorResponse, SegmentRequest, SegmentResponse};

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Each mask holds this gray level inside its box and 0 elsewhere.
    BoxFill(u8),
    /// Each mask holds this gray level everywhere.
    Constant(u8),
    /// One mask fewer than there are boxes.
    DropMask,
    /// Masks one column narrower than the patch.
    WrongSize,
    /// 16-bit PGM masks (maxval 65535).
    WideMaxval,
    /// Scores of 1.5.
    ScoreOutOfRange,
    /// The given status with an `{"error": ...}` body.
    Status(u16),
    /// A 200 response that is not JSON.
    Garbage,
    /// Status 503 for the first `n` requests, then `BoxFill(255)`.
    FailFirst(usize),
    /// Sleep before answering with `BoxFill(255)`.
    Delay(Duration),
}

impl FromStr for MockBehavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let bad = || Error::InvalidArgument(format!("bad mock behaviour '{s}'"));
        let num = |default: u64| -> Result<u64> {
            if arg.is_empty() {
                Ok(default)
            } else {
                arg.parse().map_err(|_| bad())
            }
        };
        Ok(match name {
            "box-fill" => MockBehavior::BoxFill(u8::try_from(num(255)?).map_err(|_| bad())?),
            "constant" => MockBehavior::Constant(u8::try_from(num(255)?).map_err(|_| bad())?),
            "drop-mask" => MockBehavior::DropMask,
            "wrong-size" => MockBehavior::WrongSize,
            "wide-maxval" => MockBehavior::WideMaxval,
            "score-out-of-range" => MockBehavior::ScoreOutOfRange,
            "status" => MockBehavior::Status(u16::try_from(num(500)?).map_err(|_| bad())?),
            "garbage" => MockBehavior::Garbage,
            "fail-first" => MockBehavior::FailFirst(num(1)? as usize),
            "delay-ms" => MockBehavior::Delay(Duration::from_millis(num(100)?)),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Default)]
pub struct MockStats {
    pub requests: AtomicUsize,
    active: AtomicUsize,
    pub max_active: AtomicUsize,
}

pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<MockStats>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Listen on an ephemeral localhost port.
    pub fn start(behavior: MockBehavior) -> Result<Self> {
        Self::bind("127.0.0.1:0", behavior)
    }

    pub fn bind(addr: &str, behavior: MockBehavior) -> Result<Self> {
        let server = Server::http(addr)
            .map_err(|e| Error::InvalidArgument(format!("cannot listen on {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::InvalidArgument(format!("{addr} is not an IP address")))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(MockStats::default());
        let handle = {
            let stop = Arc::clone(&stop);
            let stats = Arc::clone(&stats);
            thread::spawn(move || {
                let mut workers = Vec::new();
                while !stop.load(Ordering::Relaxed) {
                    let request = match server.recv_timeout(Duration::from_millis(20)) {
                        Ok(Some(r)) => r,
                        Ok(None) => continue,
                        Err(_) => break,
                    };
                    let behavior = behavior.clone();
                    let stats = Arc::clone(&stats);
                    workers.push(thread::spawn(move || handle(request, &behavior, &stats)));
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };
        Ok(MockServer {
            addr,
            stop,
            stats,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    /// Serve until the process exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("content-type", "application/json").expect("static header"))
}

fn error_body(message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse {
        error: message.into(),
    })
    .expect("error body serializes")
}

fn handle(mut request: tiny_http::Request, behavior: &MockBehavior, stats: &MockStats) {
    let seq = stats.requests.fetch_add(1, Ordering::SeqCst);
    let active = stats.active.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_active.fetch_max(active, Ordering::SeqCst);

    let response = if request.url().trim_end_matches('/') != "/segment" {
        json_response(404, error_body(format!("no route {}", request.url())))
    } else {
        let mut body = String::new();
        match request.as_reader().read_to_string(&mut body) {
            Ok(_) => answer(&body, behavior, seq),
            Err(e) => json_response(400, error_body(e.to_string())),
        }
    };
    stats.active.fetch_sub(1, Ordering::SeqCst);
    let _ = request.respond(response);
}

fn answer(body: &str, behavior: &MockBehavior, seq: usize) -> Response<std::io::Cursor<Vec<u8>>> {
    let req: SegmentRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return json_response(400, error_body(format!("bad request: {e}"))),
    };
    let image = match B64
        .decode(&req.image_ppm_b64)
        .map_err(|e| e.to_string())
        .and_then(|b| RgbImage::decode_ppm(&b).map_err(|e| e.to_string()))
    {
        Ok(img) => img,
        Err(e) => return json_response(400, error_body(format!("bad image: {e}"))),
    };
    let (w, h) = (image.width(), image.height());

    let fill = |level: u8, whole: bool| -> Vec<String> {
        req.boxes
            .iter()
            .map(|&[x0, y0, x1, y1]| {
                let mut data = vec![0u8; w * h];
                for r in 0..h {
                    for c in 0..w {
                        if whole || (c >= x0 && c < x1 && r >= y0 && r < y1) {
                            data[r * w + c] = level;
                        }
                    }
                }
                B64.encode(GrayImage::new(w, h, data).expect("sized").encode_pgm())
            })
            .collect()
    };
    let n = req.boxes.len();
    let ok = |masks: Vec<String>, scores: Vec<f64>| {
        json_response(
            200,
            serde_json::to_string(&SegmentResponse {
                masks_pgm_b64: masks,
                scores,
            })
            .expect("response serializes"),
        )
    };

    match *behavior {
        MockBehavior::BoxFill(level) => ok(fill(level, false), vec![1.0; n]),
        MockBehavior::Constant(level) => ok(fill(level, true), vec![f64::from(level) / 255.0; n]),
        MockBehavior::DropMask => {
            let mut masks = fill(255, false);
            masks.pop();
            ok(masks, vec![1.0; n.saturating_sub(1)])
        }
        MockBehavior::WrongSize => {
            let narrow = GrayImage::new(w - 1, h, vec![255; (w - 1) * h]).expect("sized");
            ok(vec![B64.encode(narrow.encode_pgm()); n], vec![1.0; n])
        }
        MockBehavior::WideMaxval => {
            let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
            bytes.extend(std::iter::repeat_n(0xffu8, w * h * 2));
            ok(vec![B64.encode(&bytes); n], vec![1.0; n])
        }
        MockBehavior::ScoreOutOfRange => ok(fill(255, false), vec![1.5; n]),
        MockBehavior::Status(code) => json_response(code, error_body("mock failure")),
        MockBehavior::Garbage => Response::from_string("not json at all").with_status_code(200),
        MockBehavior::FailFirst(k) if seq < k => json_response(503, error_body("warming up")),
        MockBehavior::FailFirst(_) => ok(fill(255, false), vec![1.0; n]),
        MockBehavior::Delay(d) => {
            thread::sleep(d);
            ok(fill(255, false), vec![1.0; n])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn behaviour_parsing() {
        assert_eq!("box-fill:128".parse::<MockBehavior>().unwrap(), MockBehavior::BoxFill(128));
        assert_eq!("box-fill".parse::<MockBehavior>().unwrap(), MockBehavior::BoxFill(255));
        assert_eq!("status:404".parse::<MockBehavior>().unwrap(), MockBehavior::Status(404));
        assert!("constant:300".parse::<MockBehavior>().is_err());
        assert!("nope".parse::<MockBehavior>().is_err());
    }
}
