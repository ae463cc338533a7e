use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::LibraryCorpus;
use crate::error::EvalError;
use crate::protocol::{
    encode_error, encode_hits, ParseStep, RequestParser, SearchRequest, ERR_BAD_REQUEST,
    ERR_NO_DATABASE, ERR_UNSUPPORTED, MAX_LINE,
};

/// Idle connections are dropped after this long without a request line.
const IDLE_TIMEOUT: Duration = Duration::from_secs(120);

/// Answers one decoded request against `corpus`.
pub fn respond(corpus: &LibraryCorpus, req: &SearchRequest) -> String {
    if req.db_id != corpus.db_id() {
        return encode_error(ERR_NO_DATABASE, &format!("unknown database {}", req.db_id));
    }
    match corpus.evaluate(&req.query, req.max) {
        Ok(hits) => encode_hits(&hits),
        Err(EvalError::Unsupported(attr)) => encode_error(ERR_UNSUPPORTED, attr.as_str()),
    }
}

enum LineRead {
    Line(String),
    Eof,
    TooLong,
    NotUtf8,
}

fn read_line_limited<R: BufRead>(reader: &mut R) -> io::Result<LineRead> {
    let mut buf = Vec::new();
    let n = reader
        .by_ref()
        .take(MAX_LINE as u64 + 1)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(LineRead::Eof);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    } else if buf.len() > MAX_LINE {
        return Ok(LineRead::TooLong);
    }
    match String::from_utf8(buf) {
        Ok(s) => Ok(LineRead::Line(s)),
        Err(_) => Ok(LineRead::NotUtf8),
    }
}

/// Serves requests from one connection until the peer closes it.
pub fn handle_connection<S: Read + Write>(corpus: &LibraryCorpus, stream: S) -> io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut parser = RequestParser::new();
    loop {
        let reply = match read_line_limited(&mut reader)? {
            LineRead::Eof => return Ok(()),
            LineRead::TooLong => {
                let out = reader.get_mut();
                out.write_all(encode_error(ERR_BAD_REQUEST, "line too long").as_bytes())?;
                return out.flush();
            }
            LineRead::NotUtf8 => {
                if parser.in_request() {
                    parser = RequestParser::new();
                }
                Some(encode_error(ERR_BAD_REQUEST, "request is not valid UTF-8"))
            }
            LineRead::Line(line) => match parser.feed(&line) {
                ParseStep::NeedMore => None,
                ParseStep::Request(req) => Some(respond(corpus, &req)),
                ParseStep::Invalid(e) => Some(encode_error(ERR_BAD_REQUEST, &e.message)),
            },
        };
        if let Some(reply) = reply {
            let out = reader.get_mut();
            out.write_all(reply.as_bytes())?;
            out.flush()?;
        }
    }
}

/// A running simulated server. Dropping it (or calling [`SimServer::shutdown`])
/// stops accepting new connections.
#[derive(Debug)]
pub struct SimServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl SimServer {
    pub fn serve(corpus: LibraryCorpus, address: impl ToSocketAddrs) -> io::Result<Self> {
        Self::serve_shared(Arc::new(corpus), address)
    }

    pub fn serve_shared(corpus: Arc<LibraryCorpus>, address: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(address)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let accept = thread::Builder::new()
            .name(format!("sim-{}", corpus.db_id()))
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop_flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let corpus = Arc::clone(&corpus);
                    thread::spawn(move || {
                        let _ = stream.set_read_timeout(Some(IDLE_TIMEOUT));
                        if let Err(e) = handle_connection(&corpus, &stream) {
                            debug!("connection closed: {e}");
                        }
                    });
                }
            })?;
        Ok(SimServer {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks the caller until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = h.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}
