//! Scripted HTTP stub for backend tests.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

/// Answers requests with the scripted `(status, body)` pairs in order; the
/// last entry repeats once the script runs out.
pub struct StubServer {
    pub url: String,
    server: Arc<Server>,
    requests: Arc<Mutex<Vec<Recorded>>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub"));
        let url = format!("http://{}/v1", server.server_addr().to_ip().expect("ip listener"));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                let mut step = 0;
                while let Ok(mut request) = server.recv() {
                    let mut body = String::new();
                    request.as_reader().read_to_string(&mut body).expect("read body");
                    requests.lock().unwrap().push(Recorded {
                        method: request.method().to_string(),
                        url: request.url().to_string(),
                        headers: request
                            .headers()
                            .iter()
                            .map(|h| (h.field.to_string(), h.value.to_string()))
                            .collect(),
                        body,
                    });
                    let (status, reply) = &script[step.min(script.len() - 1)];
                    step += 1;
                    let response = Response::from_string(reply.clone())
                        .with_status_code(*status)
                        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
                    let _ = request.respond(response);
                }
            })
        };
        StubServer {
            url,
            server,
            requests,
            worker: Some(worker),
        }
    }

    pub fn always(status: u16, body: &str) -> Self {
        StubServer::start(vec![(status, body.to_string())])
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
