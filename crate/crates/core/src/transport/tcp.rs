//! TCP transport. Frame format: 4-byte little-endian payload length, then
//! the payload. Parties find each other through a hosts file with one
//! `party_id host:port` line per party.

use super::{Duplex, PartyId, Session};
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

pub struct TcpDuplex {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpDuplex {
    fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(TcpDuplex { reader, writer })
    }
}

impl Duplex for TcpDuplex {
    fn send(&mut self, payload: &[u8]) -> Result<()> {
        let len = payload.len() as u32;
        self.writer.write_all(&len.to_le_bytes())?;
        self.writer.write_all(payload)?;
        self.writer.flush()?;
        Ok(())
    }
    fn recv(&mut self) -> Result<Vec<u8>> {
        let mut len_bytes = [0u8; 4];
        self.reader
            .read_exact(&mut len_bytes)
            .map_err(|e| Error::Transport(format!("peer disconnect: {e}")))?;
        let len = u32::from_le_bytes(len_bytes) as usize;
        let mut payload = vec![0u8; len];
        self.reader
            .read_exact(&mut payload)
            .map_err(|e| Error::Transport(format!("peer disconnect: {e}")))?;
        Ok(payload)
    }
}

/// Parse a hosts file: one `party_id host:port` line per party, `#` comments.
pub fn parse_hosts(text: &str) -> Result<[String; 3]> {
    let mut endpoints: [Option<String>; 3] = [None, None, None];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad hosts line `{line}`")))?;
        let addr = parts
            .next()
            .ok_or_else(|| Error::Config(format!("bad hosts line `{line}`")))?;
        if id > 2 {
            return Err(Error::Config(format!("party id {id} out of range")));
        }
        if endpoints[id].is_some() {
            return Err(Error::Config(format!("duplicate entry for party {id}")));
        }
        endpoints[id] = Some(addr.to_string());
    }
    let endpoints: Vec<String> = endpoints
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.ok_or_else(|| Error::Config(format!("missing endpoint for party {i}"))))
        .collect::<Result<_>>()?;
    let distinct: std::collections::HashSet<&String> = endpoints.iter().collect();
    if distinct.len() != 3 {
        return Err(Error::Config("endpoints must be distinct".into()));
    }
    Ok(endpoints.try_into().ok().unwrap())
}

const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

/// Establish the two neighbor connections for `me`. Lower ids accept from
/// higher ids; higher ids dial lower ids, retrying until the listener is up.
/// A one-byte id handshake catches duplicate-id launches.
pub fn setup_tcp_session(
    me: PartyId,
    endpoints: &[String; 3],
    session_seed: [u8; 32],
) -> Result<Session> {
    let listener = TcpListener::bind(&endpoints[me.index()])
        .map_err(|e| Error::Transport(format!("bind {}: {e}", endpoints[me.index()])))?;

    let dial = |peer: PartyId| -> Result<TcpStream> {
        let start = Instant::now();
        loop {
            match TcpStream::connect(&endpoints[peer.index()]) {
                Ok(mut stream) => {
                    stream.write_all(&[me.0])?;
                    stream.flush()?;
                    return Ok(stream);
                }
                Err(e) => {
                    if start.elapsed() > CONNECT_TIMEOUT {
                        return Err(Error::Transport(format!("connect timeout to {peer}: {e}")));
                    }
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        }
    };
    let accept = |listener: &TcpListener, expect: PartyId| -> Result<TcpStream> {
        let (mut stream, _) = listener.accept()?;
        let mut id = [0u8; 1];
        stream.read_exact(&mut id)?;
        if id[0] == me.0 {
            return Err(Error::Transport(format!(
                "id collision: two parties claim {}",
                me
            )));
        }
        if id[0] != expect.0 {
            return Err(Error::Transport(format!(
                "expected {expect} on this socket, got P{}",
                id[0]
            )));
        }
        Ok(stream)
    };

    // Between me and peer: the smaller id accepts, the larger dials.
    let connect_peer = |peer: PartyId| -> Result<TcpDuplex> {
        let stream = if me.0 < peer.0 {
            accept(&listener, peer)?
        } else {
            dial(peer)?
        };
        TcpDuplex::new(stream)
    };

    // Deterministic global order avoids accept/dial deadlock: handle the
    // lower-numbered peer first.
    let (first, second) = if me.next().0 < me.prev().0 {
        (me.next(), me.prev())
    } else {
        (me.prev(), me.next())
    };
    let c_first = connect_peer(first)?;
    let c_second = connect_peer(second)?;
    let (next, prev) = if first == me.next() {
        (c_first, c_second)
    } else {
        (c_second, c_first)
    };
    Ok(Session::new(
        me,
        Box::new(next),
        Box::new(prev),
        session_seed,
    ))
}
