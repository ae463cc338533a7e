//! Replays the protocol fixtures against the simulated server and the client.

use std::fs;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use catroute_core::error::GatewayError;
use catroute_core::gateway;
use catroute_core::model::Attribute;
use catroute_core::protocol::{decode_request, decode_response, encode_request, Response};
use catroute_core::sim::server::SimServer;
use catroute_core::sim::LibraryCorpus;

use super::{fixtures, Check};

const TIMEOUT: Duration = Duration::from_secs(5);

fn dir() -> PathBuf {
    fixtures().join("protocol")
}

fn corpus() -> LibraryCorpus {
    LibraryCorpus::load_as(&fixtures().join("three.corpus"), "three").unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    out
}

fn stem(p: &Path) -> String {
    p.file_stem().unwrap().to_string_lossy().into_owned()
}

/// Sends raw bytes on one connection, half-closes it and reads everything back.
fn exchange(addr: &str, request: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut s = TcpStream::connect(addr)?;
    s.set_read_timeout(Some(TIMEOUT))?;
    s.write_all(request)?;
    s.shutdown(Shutdown::Write)?;
    let mut out = Vec::new();
    s.read_to_end(&mut out)?;
    Ok(out)
}

fn compare(expected: &[u8], got: &[u8]) -> Result<(), String> {
    if expected == got {
        Ok(())
    } else {
        Err(format!(
            "expected {:?}, got {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(got)
        ))
    }
}

/// Server replies to every request fixture byte for byte.
fn server_replies(sub: &Path, server: &str, tag: &str) -> Vec<Check> {
    files(sub, "request")
        .into_iter()
        .map(|req| {
            let expected = fs::read(req.with_extension("response")).unwrap();
            let outcome = exchange(server, &fs::read(&req).unwrap())
                .map_err(|e| e.to_string())
                .and_then(|got| compare(&expected, &got));
            Check::new(format!("{tag} {}", stem(&req)), outcome)
        })
        .collect()
}

/// Well-formed requests re-encode to themselves and the client decodes the
/// golden response into the same hits the server produced.
fn client_round_trips(server: &str) -> Vec<Check> {
    files(&dir(), "request")
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).unwrap();
            let golden = fs::read_to_string(path.with_extension("response")).unwrap();
            let outcome = (|| {
                let req = decode_request(&text).map_err(|e| e.to_string())?;
                compare(text.as_bytes(), encode_request(&req).as_bytes())?;
                let expected = decode_response(&golden).map_err(|e| e.to_string())?;
                let got = gateway::search(server, &req.db_id, &req.query, req.max, TIMEOUT);
                match (expected, got) {
                    (Response::Hits(a), Ok(b)) if a == b => Ok(()),
                    (Response::Error { code, message }, Err(GatewayError::Server { code: c, message: m }))
                        if code == c && message == m =>
                    {
                        Ok(())
                    }
                    (e, g) => Err(format!("expected {e:?}, got {g:?}")),
                }
            })();
            Check::new(format!("client {}", stem(&path)), outcome)
        })
        .collect()
}

/// Serves one canned reply on a fresh port and closes the connection.
fn canned(reply: Vec<u8>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        if let Ok((mut s, _)) = listener.accept() {
            let mut buf = [0u8; 1024];
            let _ = s.read(&mut buf);
            let _ = s.write_all(&reply);
        }
    });
    addr
}

/// The client rejects each bad response with the expected error kind and
/// offending line.
fn client_rejections() -> Vec<Check> {
    let q = decode_request("SEARCH x MAX=5\nQ title=a\nEND\n").unwrap().query;
    files(&dir().join("bad_responses"), "response")
        .into_iter()
        .map(|path| {
            let expected = fs::read_to_string(path.with_extension("expected")).unwrap();
            let (kind, detail) = expected.trim_end_matches('\n').split_once('\t').unwrap();
            let addr = canned(fs::read(&path).unwrap());
            let outcome = match (kind, gateway::search(&addr, "x", &q, 5, TIMEOUT)) {
                ("protocol", Err(GatewayError::Protocol(e))) if e.line == detail => Ok(()),
                ("server", Err(GatewayError::Server { code, .. })) if code == detail => Ok(()),
                (_, other) => Err(format!("expected {kind} `{detail}`, got {other:?}")),
            };
            Check::new(format!("reject {}", stem(&path)), outcome)
        })
        .collect()
}

/// A server without author support answers a title+author query with UNSUPPORTED.
fn unsupported_attribute() -> Check {
    let server = SimServer::serve(
        corpus().with_capabilities([Attribute::Title].into_iter().collect()),
        "127.0.0.1:0",
    )
    .unwrap();
    let req = fs::read(dir().join("title_and_author.request")).unwrap();
    let outcome = exchange(&server.local_addr().to_string(), &req)
        .map_err(|e| e.to_string())
        .and_then(|got| compare(b"ERR UNSUPPORTED author\n", &got));
    Check::new("server unsupported_attribute", outcome)
}

pub fn protocol_checks() -> Vec<Check> {
    let server = SimServer::serve(corpus(), "127.0.0.1:0").unwrap();
    let addr = server.local_addr().to_string();
    let mut checks = server_replies(&dir(), &addr, "server");
    checks.extend(server_replies(&dir().join("malformed"), &addr, "malformed"));
    checks.extend(client_round_trips(&addr));
    checks.extend(client_rejections());
    checks.push(unsupported_attribute());
    checks
}
