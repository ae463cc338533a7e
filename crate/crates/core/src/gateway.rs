//! Client side of the search protocol: submits a query to a remote library
//! server and parses the records it returns. One connection per request.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::error::{EvalError, GatewayError, ProtocolError};
use crate::model::ConjunctiveQuery;
use crate::protocol::{encode_request, Response, ResponseDecoder, SearchHits, SearchRequest, ERR_UNSUPPORTED};
use crate::sim::LibraryCorpus;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Anything a sampler or broker can send a conjunctive query to.
pub trait SearchTarget: Send + Sync {
    fn db_id(&self) -> &str;
    fn search(&self, q: &ConjunctiveQuery, max: usize) -> Result<SearchHits, GatewayError>;
}

/// A database reachable over the network.
#[derive(Debug, Clone)]
pub struct RemoteDatabase {
    pub db_id: String,
    pub address: String,
    pub timeout: Duration,
}

impl RemoteDatabase {
    pub fn new(db_id: impl Into<String>, address: impl Into<String>) -> Self {
        RemoteDatabase {
            db_id: db_id.into(),
            address: address.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl SearchTarget for RemoteDatabase {
    fn db_id(&self) -> &str {
        &self.db_id
    }

    fn search(&self, q: &ConjunctiveQuery, max: usize) -> Result<SearchHits, GatewayError> {
        search(&self.address, &self.db_id, q, max, self.timeout)
    }
}

/// In-process evaluation, used by tests and offline tools.
impl SearchTarget for LibraryCorpus {
    fn db_id(&self) -> &str {
        LibraryCorpus::db_id(self)
    }

    fn search(&self, q: &ConjunctiveQuery, max: usize) -> Result<SearchHits, GatewayError> {
        self.evaluate(q, max).map_err(|EvalError::Unsupported(attr)| GatewayError::Server {
            code: ERR_UNSUPPORTED.to_string(),
            message: attr.as_str().to_string(),
        })
    }
}

fn resolve(address: &str) -> Result<SocketAddr, GatewayError> {
    address
        .to_socket_addrs()
        .map_err(GatewayError::Io)?
        .next()
        .ok_or_else(|| {
            GatewayError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no address for {address}"),
            ))
        })
}

fn remaining(deadline: Instant) -> Result<Duration, GatewayError> {
    deadline
        .checked_duration_since(Instant::now())
        .filter(|d| !d.is_zero())
        .ok_or(GatewayError::Timeout)
}

/// Sends one search request and waits at most `timeout` overall.
pub fn search(
    address: &str,
    db_id: &str,
    q: &ConjunctiveQuery,
    max: usize,
    timeout: Duration,
) -> Result<SearchHits, GatewayError> {
    let deadline = Instant::now() + timeout;
    let addr = resolve(address)?;
    let stream = TcpStream::connect_timeout(&addr, remaining(deadline)?).map_err(GatewayError::from_io)?;
    let _ = stream.set_nodelay(true);
    stream
        .set_write_timeout(Some(remaining(deadline)?))
        .map_err(GatewayError::from_io)?;
    let request = encode_request(&SearchRequest {
        db_id: db_id.to_string(),
        max,
        query: q.clone(),
    });
    (&stream)
        .write_all(request.as_bytes())
        .map_err(GatewayError::from_io)?;

    let mut reader = BufReader::new(&stream);
    let mut decoder = ResponseDecoder::new();
    let mut line = String::new();
    let mut last = String::new();
    loop {
        stream
            .set_read_timeout(Some(remaining(deadline)?))
            .map_err(GatewayError::from_io)?;
        line.clear();
        let n = reader.read_line(&mut line).map_err(GatewayError::from_io)?;
        if n == 0 || !line.ends_with('\n') {
            let offending = if line.is_empty() { last } else { line };
            return Err(ProtocolError::new(offending, "truncated response").into());
        }
        let text = line.trim_end_matches('\n');
        match decoder.feed(text)? {
            Some(Response::Hits(hits)) => return Ok(hits),
            Some(Response::Error { code, message }) => return Err(GatewayError::Server { code, message }),
            None => last = text.to_string(),
        }
    }
}
