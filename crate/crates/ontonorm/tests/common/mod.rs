//! Shared helpers for the integration tests: a deterministic RNG, synthetic
//! retrieval fixtures, an in-memory embedding provider, and a scripted HTTP
//! stub server.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use ontonorm::embed::{EmbedError, EmbeddingMatrix, EmbeddingProvider, Vector};
use ontonorm::ontology::{build_entry_table, ConceptRecord, EntryTable, OntoId};

/// SplitMix64: tiny, seedable, good enough for fixture generation.
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform-ish in [-1, 1).
    pub fn next_f32(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    }

    pub fn vector(&mut self, dim: usize) -> Vec<f32> {
        let mut v: Vec<f32> = (0..dim).map(|_| self.next_f32()).collect();
        if v.iter().all(|x| x.abs() < 1e-3) {
            v[0] = 0.5;
        }
        v
    }
}

pub fn onto_id(n: u32) -> OntoId {
    OntoId::parse(&format!("HP:{n:07}")).unwrap()
}

/// Builds a label-only entry table plus aligned matrix from raw vectors.
/// `dup_surface_every`, when nonzero, reuses an earlier surface to exercise
/// tie-breaking; `dup_vector_every` copies an earlier raw vector.
pub fn synthetic_index(
    rng: &mut SplitMix64,
    n: usize,
    dim: usize,
    dup_surface_every: usize,
    dup_vector_every: usize,
) -> (EntryTable, EmbeddingMatrix) {
    let mut concepts = Vec::with_capacity(n);
    let mut raw_rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let surface = if dup_surface_every > 0 && i > 0 && i % dup_surface_every == 0 {
            format!("entry {:05}", i - 1)
        } else {
            format!("entry {i:05}")
        };
        concepts.push(ConceptRecord::new(onto_id(i as u32 + 1), &surface, vec![]).unwrap());
        let row = if dup_vector_every > 0 && i > 0 && i % dup_vector_every == 0 {
            raw_rows[i - 1].clone()
        } else {
            rng.vector(dim)
        };
        raw_rows.push(row);
    }
    let table = build_entry_table(&concepts).unwrap();
    let rows: Vec<Vector> = raw_rows
        .into_iter()
        .map(|v| Vector::new(v).unwrap())
        .collect();
    let matrix = EmbeddingMatrix::from_rows(rows, "synthetic").unwrap();
    (table, matrix)
}

/// In-memory embedding provider keyed by exact term string.
pub struct MapProvider {
    pub map: HashMap<String, Vec<f32>>,
    pub id: String,
}

impl MapProvider {
    pub fn new(id: &str) -> Self {
        MapProvider {
            map: HashMap::new(),
            id: id.to_string(),
        }
    }
}

impl EmbeddingProvider for MapProvider {
    fn provider_id(&self) -> String {
        self.id.clone()
    }

    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        terms
            .iter()
            .map(|t| {
                self.map
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbedError::Provider {
                        provider: self.id.clone(),
                        message: format!("unknown term {t:?}"),
                    })
            })
            .collect()
    }
}

#[derive(Clone)]
pub struct StubResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubResponse {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            headers: vec![("content-type".to_string(), "application/json".to_string())],
            body: body.into(),
        }
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }
}

/// Minimal scripted HTTP server. Serves the staged responses in order, then
/// repeats the last one; records request bodies and paths.
pub struct StubServer {
    addr: std::net::SocketAddr,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubServer {
    pub fn spawn(responses: Vec<StubResponse>) -> Self {
        assert!(!responses.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        listener.set_nonblocking(true).unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));

        let thread_hits = hits.clone();
        let thread_requests = requests.clone();
        let thread_shutdown = shutdown.clone();
        let handle = std::thread::spawn(move || {
            while !thread_shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let n = thread_hits.fetch_add(1, Ordering::SeqCst);
                        let response = responses[n.min(responses.len() - 1)].clone();
                        let _ = serve_one(stream, &response, &thread_requests);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });

        StubServer {
            addr,
            hits,
            requests,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(
    mut stream: TcpStream,
    response: &StubResponse,
    requests: &Mutex<Vec<RecordedRequest>>,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        buffer.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buffer) {
            header_end = pos;
            break;
        }
        if buffer.len() > 1 << 20 {
            return Ok(());
        }
    }
    let head = String::from_utf8_lossy(&buffer[..header_end]).to_string();
    let mut lines = head.split("\r\n");
    let request_line = lines.next().unwrap_or("");
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    for line in lines {
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_lowercase();
            let value = value.trim().to_string();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            }
            headers.push((name, value));
        }
    }
    let mut body = buffer[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    requests.lock().unwrap().push(RecordedRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).to_string(),
    });

    let mut out = format!(
        "HTTP/1.1 {} Stub\r\ncontent-length: {}\r\nconnection: close\r\n",
        response.status,
        response.body.len()
    );
    for (name, value) in &response.headers {
        out.push_str(&format!("{name}: {value}\r\n"));
    }
    out.push_str("\r\n");
    stream.write_all(out.as_bytes())?;
    stream.write_all(response.body.as_bytes())?;
    stream.flush()?;
    Ok(())
}

fn find_header_end(buffer: &[u8]) -> Option<usize> {
    buffer.windows(4).position(|w| w == b"\r\n\r\n")
}
