//! In-process loopback transport: three parties as threads connected by
//! unbounded channels. Used by tests and single-machine runs.

use super::{Duplex, PartyId, Session};
use crate::{Error, Result};
use std::sync::mpsc::{channel, Receiver, Sender};

pub struct LoopbackDuplex {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Duplex for LoopbackDuplex {
    fn send(&mut self, payload: &[u8]) -> Result<()> {
        self.tx
            .send(payload.to_vec())
            .map_err(|_| Error::Transport("peer disconnected".into()))
    }
    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx
            .recv()
            .map_err(|_| Error::Transport("peer disconnected".into()))
    }
}

/// Build the three fully connected loopback sessions. Element i of the
/// result belongs to party i.
pub fn loopback_sessions(session_seed: [u8; 32]) -> [Session; 3] {
    // pipes[i][j] = duplex endpoint at party i talking to party j.
    let mut slots: Vec<Vec<Option<LoopbackDuplex>>> = (0..3)
        .map(|_| (0..3).map(|_| None).collect())
        .collect();
    for i in 0..3usize {
        for j in (i + 1)..3usize {
            let (tx_ij, rx_ij) = channel();
            let (tx_ji, rx_ji) = channel();
            slots[i][j] = Some(LoopbackDuplex {
                tx: tx_ij,
                rx: rx_ji,
            });
            slots[j][i] = Some(LoopbackDuplex {
                tx: tx_ji,
                rx: rx_ij,
            });
        }
    }
    let mut sessions = Vec::with_capacity(3);
    for (i, mut row) in slots.into_iter().enumerate() {
        let me = PartyId(i as u8);
        let next = row[me.next().index()].take().unwrap();
        let prev = row[me.prev().index()].take().unwrap();
        sessions.push(Session::new(me, Box::new(next), Box::new(prev), session_seed));
    }
    sessions.try_into().ok().unwrap()
}

/// Run one closure per party on its own thread and collect the results in
/// party order, propagating panics.
pub fn run_parties<T, F>(session_seed: [u8; 32], f: F) -> [T; 3]
where
    T: Send + 'static,
    F: Fn(Session) -> T + Send + Sync + 'static,
{
    let f = std::sync::Arc::new(f);
    let sessions = loopback_sessions(session_seed);
    let mut handles = Vec::new();
    for session in sessions {
        let f = f.clone();
        handles.push(std::thread::spawn(move || f(session)));
    }
    let mut out = Vec::new();
    for h in handles {
        out.push(h.join().expect("party thread panicked"));
    }
    out.try_into().ok().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_parties_two_channels_each() {
        let out = run_parties([1u8; 32], |mut s| {
            let me = s.me;
            // Tagged message ordering: send two messages to next, expect the
            // same order from prev.
            s.send_to(me.next(), &[me.0, 1]).unwrap();
            s.send_to(me.next(), &[me.0, 2]).unwrap();
            let a = s.recv_from(me.prev(), 2).unwrap();
            let b = s.recv_from(me.prev(), 2).unwrap();
            assert_eq!(a, vec![me.prev().0, 1]);
            assert_eq!(b, vec![me.prev().0, 2]);
            s.comm_snapshot()
        });
        for stats in out {
            assert_eq!(stats.bits_sent, 32);
        }
    }

    #[test]
    fn fresh_session_counters_zero() {
        let sessions = loopback_sessions([0u8; 32]);
        for s in &sessions {
            assert_eq!(s.comm_snapshot().bits_sent, 0);
            assert_eq!(s.comm_snapshot().rounds, 0);
        }
    }

    #[test]
    fn empty_payload_costs_nothing() {
        let out = run_parties([2u8; 32], |mut s| {
            s.exchange(&[], 0).unwrap();
            s.comm_snapshot()
        });
        for stats in out {
            assert_eq!(stats.bits_sent, 0);
            assert_eq!(stats.rounds, 1);
        }
    }
}
