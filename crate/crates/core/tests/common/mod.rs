#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use halluguard::crosscheck::Verifiers;
use halluguard::gateway::fixture::{FixtureScenario, SceneFixture, TextGenFixture};
use halluguard::pipeline::{Bindings, Mode, Pipeline, PipelineOptions};
use halluguard::synth::SynthWorld;
use halluguard::{BackendEndpoint, BackendRole, Endpoint};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: &str) -> Self {
        Self { status: 200, body: body.to_string(), delay: Duration::ZERO }
    }

    pub fn status(status: u16) -> Self {
        Self { status, body: r#"{"error":"stub"}"#.to_string(), delay: Duration::ZERO }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// One-connection-at-a-time HTTP/1.1 server replaying scripted replies.
/// The last reply repeats once the script runs out.
pub struct StubServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(replies: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { break };
                let reply = replies[n.min(replies.len() - 1)].clone();
                if let Some(req) = serve(stream, &reply) {
                    log.lock().unwrap().push(req);
                }
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }

    pub fn hits(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, reply: &Reply) -> Option<Recorded> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).ok()?;
    let recorded = Recorded { path, body };
    thread::sleep(reply.delay);
    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reply.body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.body.as_bytes());
    let _ = stream.flush();
    Some(recorded)
}

pub fn scene_endpoint(id: &str, role: BackendRole, fx: &Arc<SceneFixture>) -> Endpoint {
    Endpoint::new(BackendEndpoint::fixture(id, role, "inline"), fx.clone())
}

/// Fixture bindings for a synthetic world; verifier A reads `scenes_a`.
pub fn world_bindings(world: &SynthWorld, scenes_a: Vec<FixtureScenario>) -> Bindings {
    let exact = Arc::new(SceneFixture::new(world.scenarios()).unwrap());
    let noisy = Arc::new(SceneFixture::new(scenes_a).unwrap());
    Bindings {
        verifiers: Some(Verifiers {
            primary_a: scene_endpoint("verifier-a", BackendRole::BinaryVqa, &noisy),
            primary_b: scene_endpoint("verifier-b", BackendRole::BinaryVqa, &exact),
            tie_breaker: scene_endpoint("tie-breaker", BackendRole::BinaryVqa, &exact),
        }),
        textgen: Some(textgen(world)),
        tagger: Some(scene_endpoint("tagger", BackendRole::Tagger, &exact)),
        detector: Some(scene_endpoint("detector", BackendRole::Detector, &exact)),
        captioner: Some(scene_endpoint("captioner", BackendRole::Captioner, &exact)),
    }
}

pub fn textgen(world: &SynthWorld) -> Endpoint {
    Endpoint::new(
        BackendEndpoint::fixture("llm", BackendRole::TextGen, "inline"),
        Arc::new(TextGenFixture::new(world.textgen_script())),
    )
}

pub fn world_pipeline(world: &SynthWorld, mode: Mode) -> Pipeline {
    Pipeline::new(mode, world_bindings(world, world.scenarios()), PipelineOptions::default()).unwrap()
}
