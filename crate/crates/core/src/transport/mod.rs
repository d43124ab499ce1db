//! Pairwise ordered channels among the three parties, shared-PRG setup,
//! and exact accounting of payload bits and communication rounds.
//!
//! Wire frame: 4-byte little-endian payload length, then the payload.
//! Ring elements travel little-endian. Only payload bits are counted, so a
//! single 8-byte element costs exactly 64 bits.

pub mod loopback;
pub mod tcp;

use crate::ring::Ring;
use crate::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// One of the three computing parties. Neighbor arithmetic is modulo three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PartyId(pub u8);

impl PartyId {
    pub fn new(id: u8) -> Result<Self> {
        if id > 2 {
            return Err(Error::Config(format!("party id {id} not in 0..3")));
        }
        Ok(PartyId(id))
    }
    #[inline]
    pub fn next(self) -> PartyId {
        PartyId((self.0 + 1) % 3)
    }
    #[inline]
    pub fn prev(self) -> PartyId {
        PartyId((self.0 + 2) % 3)
    }
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Monotonic per-party counters of payload bits sent and protocol rounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub bits_sent: u64,
    pub rounds: u64,
}

impl CommStats {
    pub fn delta(self, earlier: CommStats) -> CommStats {
        CommStats {
            bits_sent: self.bits_sent - earlier.bits_sent,
            rounds: self.rounds - earlier.rounds,
        }
    }
}

/// An ordered, reliable, full-duplex byte channel to one peer.
pub trait Duplex: Send {
    fn send(&mut self, payload: &[u8]) -> Result<()>;
    fn recv(&mut self) -> Result<Vec<u8>>;
}

/// Seeds for the pseudorandom streams shared with the two neighbors, plus a
/// session-wide stream every party can derive.
///
/// In test mode all streams are derived from a single `session_seed`, which
/// is deliberately insecure: any holder of the seed can reproduce every
/// stream. Real pairwise key agreement is out of scope; the contract the
/// protocols rely on is determinism per key and independence across keys.
pub struct SessionPrgs {
    /// Arithmetic-element stream shared with the next neighbor (pair key i).
    pub next_arith: ChaCha12Rng,
    /// Bit stream shared with the next neighbor.
    pub next_bits: ChaCha12Rng,
    /// Arithmetic-element stream shared with the previous neighbor (pair key i-1).
    pub prev_arith: ChaCha12Rng,
    /// Bit stream shared with the previous neighbor.
    pub prev_bits: ChaCha12Rng,
    /// Stream shared by all three parties (public randomness: shuffles, init).
    pub common: ChaCha12Rng,
}

/// Derive the full deterministic key table from the session seed and pick
/// the streams party `me` holds. Pair key i is shared by P_i and P_{i+1}.
pub fn derive_prgs(session_seed: [u8; 32], me: PartyId) -> SessionPrgs {
    let mut master = ChaCha12Rng::from_seed(session_seed);
    // Fixed derivation order: (pair 0 arith, pair 0 bits, pair 1 ..., common).
    let mut keys = [[0u8; 32]; 7];
    for key in keys.iter_mut() {
        master.fill_bytes(key);
    }
    let pair = |p: usize, bits: bool| -> ChaCha12Rng {
        ChaCha12Rng::from_seed(keys[p * 2 + bits as usize])
    };
    SessionPrgs {
        next_arith: pair(me.index(), false),
        next_bits: pair(me.index(), true),
        prev_arith: pair(me.prev().index(), false),
        prev_bits: pair(me.prev().index(), true),
        common: ChaCha12Rng::from_seed(keys[6]),
    }
}

/// A party's established session: channels to both neighbors, PRG streams,
/// and communication counters.
pub struct Session {
    pub me: PartyId,
    next: Box<dyn Duplex>,
    prev: Box<dyn Duplex>,
    pub prgs: SessionPrgs,
    stats: CommStats,
    /// Optional log of received payloads, used by the privacy smoke tests.
    capture: Option<Vec<(PartyId, Vec<u8>)>>,
}

impl Session {
    pub fn new(
        me: PartyId,
        next: Box<dyn Duplex>,
        prev: Box<dyn Duplex>,
        session_seed: [u8; 32],
    ) -> Self {
        Session {
            me,
            next,
            prev,
            prgs: derive_prgs(session_seed, me),
            stats: CommStats::default(),
            capture: None,
        }
    }

    /// Start recording received payloads.
    pub fn capture_received(&mut self) {
        self.capture = Some(Vec::new());
    }

    /// Drain the recorded transcript.
    pub fn take_transcript(&mut self) -> Vec<(PartyId, Vec<u8>)> {
        self.capture.take().unwrap_or_default()
    }

    pub fn send_to(&mut self, to: PartyId, payload: &[u8]) -> Result<()> {
        self.stats.bits_sent += 8 * payload.len() as u64;
        if to == self.me.next() {
            self.next.send(payload)
        } else if to == self.me.prev() {
            self.prev.send(payload)
        } else {
            Err(Error::Transport(format!("{} cannot send to {to}", self.me)))
        }
    }

    pub fn recv_from(&mut self, from: PartyId, expect_len: usize) -> Result<Vec<u8>> {
        let payload = if from == self.me.next() {
            self.next.recv()?
        } else if from == self.me.prev() {
            self.prev.recv()?
        } else {
            return Err(Error::Transport(format!(
                "{} cannot receive from {from}",
                self.me
            )));
        };
        if payload.len() != expect_len {
            return Err(Error::Transport(format!(
                "length mismatch from {from}: got {} expected {expect_len}",
                payload.len()
            )));
        }
        if let Some(log) = &mut self.capture {
            log.push((from, payload.clone()));
        }
        Ok(payload)
    }

    /// Send to the next neighbor and receive from the previous one; a
    /// completed exchange where every party both sent and received counts as
    /// one round.
    pub fn exchange(&mut self, to_next: &[u8], expect_from_prev: usize) -> Result<Vec<u8>> {
        self.send_to(self.me.next(), to_next)?;
        let got = self.recv_from(self.me.prev(), expect_from_prev)?;
        self.stats.rounds += 1;
        Ok(got)
    }

    /// Mirror-image exchange: send to the previous neighbor, receive from next.
    pub fn exchange_prev(&mut self, to_prev: &[u8], expect_from_next: usize) -> Result<Vec<u8>> {
        self.send_to(self.me.prev(), to_prev)?;
        let got = self.recv_from(self.me.next(), expect_from_next)?;
        self.stats.rounds += 1;
        Ok(got)
    }

    /// Count one flush boundary for asymmetric protocol phases.
    pub fn bump_round(&mut self) {
        self.stats.rounds += 1;
    }

    pub fn comm_snapshot(&self) -> CommStats {
        self.stats
    }
}

/// Serialize a slice of ring elements little-endian.
pub fn elems_to_bytes<R: Ring>(elems: &[R]) -> Vec<u8> {
    let mut out = Vec::with_capacity(elems.len() * R::BYTES);
    for &e in elems {
        e.write_le(&mut out);
    }
    out
}

/// Parse a little-endian byte buffer into ring elements.
pub fn bytes_to_elems<R: Ring>(bytes: &[u8]) -> Vec<R> {
    bytes.chunks_exact(R::BYTES).map(R::read_le).collect()
}

/// Pack a bit-per-entry buffer into bytes, LSB first.
pub fn pack_bits(bits: &[u64], n_bits: usize) -> Vec<u8> {
    let n_bytes = n_bits.div_ceil(8);
    let mut out = vec![0u8; n_bytes];
    for (i, byte) in out.iter_mut().enumerate() {
        let word = bits[i / 8];
        *byte = (word >> (8 * (i % 8))) as u8;
    }
    out
}

/// Unpack bytes into 64-bit words of bits, LSB first.
pub fn unpack_bits(bytes: &[u8], n_bits: usize) -> Vec<u64> {
    let n_words = n_bits.div_ceil(64);
    let mut out = vec![0u64; n_words];
    for (i, &byte) in bytes.iter().enumerate() {
        out[i / 8] |= (byte as u64) << (8 * (i % 8));
    }
    // Clear any slack beyond n_bits.
    let tail = n_bits % 64;
    if tail != 0 {
        if let Some(last) = out.last_mut() {
            *last &= (1u64 << tail) - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_neighbors_mod_three() {
        assert_eq!(PartyId(2).next(), PartyId(0));
        assert_eq!(PartyId(0).prev(), PartyId(2));
        assert!(PartyId::new(3).is_err());
    }

    #[test]
    fn prg_pair_agreement() {
        let seed = [42u8; 32];
        let mut p0 = derive_prgs(seed, PartyId(0));
        let mut p1 = derive_prgs(seed, PartyId(1));
        let mut p2 = derive_prgs(seed, PartyId(2));
        // Pair key 0 is shared by P0 (next) and P1 (prev).
        assert_eq!(p0.next_arith.next_u64(), p1.prev_arith.next_u64());
        // Pair key 1: P1 (next) and P2 (prev).
        assert_eq!(p1.next_bits.next_u64(), p2.prev_bits.next_u64());
        // Pair key 2: P2 (next) and P0 (prev).
        assert_eq!(p2.next_arith.next_u64(), p0.prev_arith.next_u64());
        // Common stream agrees for all.
        assert_eq!(p0.common.next_u64(), p1.common.next_u64());
    }

    #[test]
    fn bit_packing_roundtrip() {
        let bits = vec![0xdead_beef_cafe_f00du64, 0x0123_4567_89ab_cdefu64];
        for n in [1usize, 7, 8, 63, 64, 65, 100, 128] {
            let packed = pack_bits(&bits, n);
            assert_eq!(packed.len(), n.div_ceil(8));
            let unpacked = unpack_bits(&packed, n);
            for i in 0..n {
                assert_eq!(
                    (unpacked[i / 64] >> (i % 64)) & 1,
                    (bits[i / 64] >> (i % 64)) & 1,
                    "bit {i} of {n}"
                );
            }
        }
    }
}
