//! TCP and WebSocket transports. Both carry the same JSON messages; a
//! connection whose first bytes are an HTTP `GET` is upgraded to WebSocket.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;
use tungstenite::Message;

use super::{Request, Response, Service};
use crate::error::Result;

/// Keeps only the newest pending suggest of each session, preserving the
/// order of everything else.
pub fn coalesce(reqs: Vec<Request>) -> Vec<Request> {
    let mut newest: HashMap<String, u64> = HashMap::new();
    for r in &reqs {
        if let Request::Suggest(s) = r {
            let e = newest.entry(s.session.clone()).or_insert(s.seq);
            *e = (*e).max(s.seq);
        }
    }
    reqs.into_iter()
        .filter(|r| match r {
            Request::Suggest(s) => newest.get(&s.session) == Some(&s.seq),
            _ => true,
        })
        .collect()
}

fn respond_all(service: &Service, batch: Vec<Request>, out: &mut dyn FnMut(Response) -> io::Result<()>) -> io::Result<()> {
    for req in coalesce(batch) {
        if let Some(resp) = service.handle(&req) {
            out(resp)?;
        }
    }
    Ok(())
}

fn parse(service: &Service, line: &str) -> std::result::Result<Request, Response> {
    let req: Request =
        serde_json::from_str(line).map_err(|e| Response::error(format!("bad request: {e}"), None))?;
    if let Request::Suggest(s) = &req {
        service.note_seq(&s.session, s.seq);
    }
    Ok(req)
}

fn handle_tcp(service: Arc<Service>, stream: TcpStream) -> io::Result<()> {
    let (tx, rx) = unbounded::<std::result::Result<Request, Response>>();
    let reader = BufReader::new(stream.try_clone()?);
    let svc = service.clone();
    let read_thread = thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            if tx.send(parse(&svc, &line)).is_err() {
                break;
            }
        }
    });
    let mut w = io::BufWriter::new(stream);
    while let Ok(first) = rx.recv() {
        let mut pending = vec![first];
        pending.extend(rx.try_iter());
        let mut batch = Vec::new();
        for p in pending {
            match p {
                Ok(r) => batch.push(r),
                Err(resp) => {
                    respond_all(&service, std::mem::take(&mut batch), &mut |r| w.write_all(r.to_line().as_bytes()))?;
                    w.write_all(resp.to_line().as_bytes())?;
                }
            }
        }
        respond_all(&service, batch, &mut |r| w.write_all(r.to_line().as_bytes()))?;
        w.flush()?;
    }
    let _ = read_thread.join();
    Ok(())
}

fn handle_ws(service: Arc<Service>, stream: TcpStream) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    loop {
        ws.get_ref().set_read_timeout(None)?;
        let mut texts = Vec::new();
        match ws.read() {
            Ok(Message::Text(t)) => texts.push(t.to_string()),
            Ok(Message::Close(_)) | Err(_) => return Ok(()),
            Ok(_) => continue,
        }
        // drain what is already buffered so stale keystrokes can be skipped
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(1)))?;
        loop {
            match ws.read() {
                Ok(Message::Text(t)) => texts.push(t.to_string()),
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                {
                    break
                }
                Err(_) => return Ok(()),
            }
        }
        ws.get_ref().set_read_timeout(None)?;
        let mut out = Vec::new();
        let mut batch = Vec::new();
        for line in texts.iter().flat_map(|t| t.lines()).filter(|l| !l.trim().is_empty()) {
            match parse(&service, line) {
                Ok(r) => batch.push(r),
                Err(resp) => {
                    respond_all(&service, std::mem::take(&mut batch), &mut |r| {
                        out.push(r);
                        Ok(())
                    })?;
                    out.push(resp);
                }
            }
        }
        respond_all(&service, batch, &mut |r| {
            out.push(r);
            Ok(())
        })?;
        for r in out {
            let line = r.to_line();
            ws.send(Message::text(line.trim_end()))
                .map_err(|e| io::Error::other(e.to_string()))?;
        }
    }
}

fn handle_conn(service: Arc<Service>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let mut head = [0u8; 4];
    let is_ws = matches!(stream.peek(&mut head), Ok(4) if &head == b"GET ");
    let res = if is_ws {
        handle_ws(service, stream)
    } else {
        handle_tcp(service, stream)
    };
    if let Err(e) = res {
        log::debug!("connection closed: {e}");
    }
}

/// A running server; dropping it does not stop it, call `shutdown`.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<thread::JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Listens on `addr` and serves each connection on its own thread. Idle
/// sessions are evicted in the background.
pub fn serve(service: Arc<Service>, addr: impl ToSocketAddrs) -> Result<Server> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let janitor_svc = Arc::downgrade(&service);
    let janitor_stop = stop.clone();
    let every = (service.config().session_ttl / 4).clamp(Duration::from_millis(50), Duration::from_secs(30));
    thread::spawn(move || {
        let mut last = Instant::now();
        while !janitor_stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(50).min(every));
            if last.elapsed() < every {
                continue;
            }
            last = Instant::now();
            match janitor_svc.upgrade() {
                Some(s) => {
                    let n = s.evict_idle_at(Instant::now());
                    if n > 0 {
                        log::info!("evicted {n} idle sessions");
                    }
                }
                None => break,
            }
        }
    });

    let s = stop.clone();
    let accept = thread::spawn(move || {
        for conn in listener.incoming() {
            if s.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let svc = service.clone();
                    thread::spawn(move || handle_conn(svc, stream));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    Ok(Server {
        addr,
        stop,
        accept: Some(accept),
    })
}
