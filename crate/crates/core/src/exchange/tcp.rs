//! Full TCP mesh: one persistent duplex connection per rank pair.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{decode_header, frame_len, Hello, HEADER_BYTES, HELLO_BYTES, PROTOCOL_VERSION};
use super::{ExchangeError, Transport};

#[derive(Clone, Debug)]
pub struct MeshOptions {
    /// Deadline for the whole mesh to come up.
    pub connect_timeout: Duration,
    /// Advertised protocol version; only tests change this.
    pub version: u32,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self { connect_timeout: Duration::from_secs(30), version: PROTOCOL_VERSION }
    }
}

pub struct TcpTransport {
    rank: usize,
    peers: Vec<Option<TcpStream>>,
    sent: u64,
}

fn resolve(addr: &str) -> Result<SocketAddr, ExchangeError> {
    addr.to_socket_addrs()
        .map_err(|e| ExchangeError::Handshake(format!("cannot resolve `{addr}`: {e}")))?
        .next()
        .ok_or_else(|| ExchangeError::Handshake(format!("`{addr}` resolves to nothing")))
}

/// Bind `addresses[rank]` and connect to every other rank.
pub fn connect_mesh(addresses: &[String], rank: usize, opts: &MeshOptions) -> Result<TcpTransport, ExchangeError> {
    let own = addresses
        .get(rank)
        .ok_or_else(|| ExchangeError::Handshake(format!("rank {rank} outside a {}-rank address list", addresses.len())))?;
    let listener = TcpListener::bind(resolve(own)?).map_err(|source| ExchangeError::Io { rank, source })?;
    connect_mesh_on(listener, addresses, rank, opts)
}

/// Like [`connect_mesh`] but with an already-bound listener for this rank.
pub fn connect_mesh_on(
    listener: TcpListener,
    addresses: &[String],
    rank: usize,
    opts: &MeshOptions,
) -> Result<TcpTransport, ExchangeError> {
    let ranks = addresses.len();
    if rank >= ranks {
        return Err(ExchangeError::Handshake(format!("rank {rank} outside a {ranks}-rank mesh")));
    }
    let deadline = Instant::now() + opts.connect_timeout;
    let me = Hello { version: opts.version, rank: rank as u32, ranks: ranks as u32 };
    let targets: Vec<SocketAddr> = addresses[rank + 1..].iter().map(|a| resolve(a)).collect::<Result<_, _>>()?;

    let (accepted, dialed) = thread::scope(|s| {
        let acc = s.spawn(|| accept_lower(&listener, me, deadline));
        let dialed = targets
            .iter()
            .enumerate()
            .map(|(k, addr)| dial(*addr, rank + 1 + k, me, deadline))
            .collect::<Result<Vec<_>, _>>();
        (acc.join().expect("accept thread panicked"), dialed)
    });
    let mut peers: Vec<Option<TcpStream>> = (0..ranks).map(|_| None).collect();
    for (r, s) in accepted? {
        peers[r] = Some(s);
    }
    for (k, s) in dialed?.into_iter().enumerate() {
        peers[rank + 1 + k] = Some(s);
    }
    for (r, s) in peers.iter().enumerate() {
        if let Some(s) = s {
            s.set_read_timeout(None).map_err(|source| ExchangeError::Io { rank: r, source })?;
            s.set_nodelay(true).map_err(|source| ExchangeError::Io { rank: r, source })?;
        }
    }
    Ok(TcpTransport { rank, peers, sent: 0 })
}

fn remaining(deadline: Instant, what: &str) -> Result<Duration, ExchangeError> {
    deadline
        .checked_duration_since(Instant::now())
        .filter(|d| !d.is_zero())
        .ok_or_else(|| ExchangeError::Timeout(what.to_string()))
}

fn read_hello(s: &mut TcpStream, peer: usize) -> Result<Hello, ExchangeError> {
    let mut buf = [0u8; HELLO_BYTES];
    s.read_exact(&mut buf).map_err(|e| io_err(peer, e))?;
    Hello::decode(&buf)
}

fn check_version(me: Hello, peer: Hello, rank: usize) -> Result<(), ExchangeError> {
    if peer.version != me.version {
        return Err(ExchangeError::Version { local: me.version, peer: peer.version, rank });
    }
    if peer.ranks != me.ranks {
        return Err(ExchangeError::Handshake(format!("rank {rank} believes in {} ranks, we have {}", peer.ranks, me.ranks)));
    }
    Ok(())
}

/// Accept one connection from every rank below ours.
fn accept_lower(listener: &TcpListener, me: Hello, deadline: Instant) -> Result<Vec<(usize, TcpStream)>, ExchangeError> {
    let want = me.rank as usize;
    let own = want;
    let mut got: Vec<(usize, TcpStream)> = Vec::with_capacity(want);
    listener.set_nonblocking(true).map_err(|source| ExchangeError::Io { rank: own, source })?;
    while got.len() < want {
        let mut s = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                remaining(deadline, &format!("rank {own} waiting for {} lower ranks", want - got.len()))?;
                thread::sleep(Duration::from_millis(5));
                continue;
            }
            Err(source) => return Err(ExchangeError::Io { rank: own, source }),
        };
        s.set_nonblocking(false).map_err(|source| ExchangeError::Io { rank: own, source })?;
        s.set_read_timeout(Some(remaining(deadline, "handshake")?)).map_err(|source| ExchangeError::Io { rank: own, source })?;
        let peer = read_hello(&mut s, usize::MAX)?;
        let r = peer.rank as usize;
        // Always answer so the dialer can report the mismatch too.
        s.write_all(&me.encode()).map_err(|e| io_err(r, e))?;
        check_version(me, peer, r)?;
        if r >= want {
            return Err(ExchangeError::Handshake(format!("rank {r} dialed rank {own}; only lower ranks dial")));
        }
        if got.iter().any(|(g, _)| *g == r) {
            return Err(ExchangeError::DuplicateRank(r));
        }
        got.push((r, s));
    }
    Ok(got)
}

fn dial(addr: SocketAddr, peer: usize, me: Hello, deadline: Instant) -> Result<TcpStream, ExchangeError> {
    let mut s = loop {
        let left = remaining(deadline, &format!("connecting to rank {peer} at {addr}"))?;
        match TcpStream::connect_timeout(&addr, left.min(Duration::from_millis(500))) {
            Ok(s) => break s,
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    };
    s.set_read_timeout(Some(remaining(deadline, "handshake")?)).map_err(|e| io_err(peer, e))?;
    s.write_all(&me.encode()).map_err(|e| io_err(peer, e))?;
    let theirs = read_hello(&mut s, peer)?;
    check_version(me, theirs, peer)?;
    if theirs.rank as usize != peer {
        return Err(ExchangeError::Handshake(format!("expected rank {peer} at {addr}, found rank {}", theirs.rank)));
    }
    Ok(s)
}

fn io_err(rank: usize, e: std::io::Error) -> ExchangeError {
    match e.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe | ErrorKind::ConnectionAborted => {
            ExchangeError::PeerDisconnected { rank, reason: e.to_string() }
        }
        ErrorKind::WouldBlock | ErrorKind::TimedOut => ExchangeError::Timeout(format!("rank {rank}: {e}")),
        _ => ExchangeError::Io { rank, source: e },
    }
}

fn read_frame(mut s: &TcpStream, peer: usize, max_frame: usize) -> Result<Arc<[u8]>, ExchangeError> {
    let mut header = [0u8; HEADER_BYTES];
    s.read_exact(&mut header).map_err(|e| io_err(peer, e))?;
    let (_, _, count) = decode_header(&header)?;
    let len = frame_len(count);
    if len > max_frame {
        return Err(ExchangeError::Oversize { bytes: len, limit: max_frame });
    }
    let mut buf = vec![0u8; len];
    buf[..HEADER_BYTES].copy_from_slice(&header);
    s.read_exact(&mut buf[HEADER_BYTES..]).map_err(|e| io_err(peer, e))?;
    Ok(buf.into())
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn ranks(&self) -> usize {
        self.peers.len()
    }

    fn exchange(&mut self, frame: Arc<[u8]>, max_frame: usize) -> Result<Vec<Arc<[u8]>>, ExchangeError> {
        let me = self.rank;
        let peers = &self.peers;
        let (sent, received) = thread::scope(|s| {
            let writers: Vec<_> = peers
                .iter()
                .enumerate()
                .filter_map(|(r, p)| p.as_ref().map(|p| (r, p)))
                .map(|(r, mut p)| {
                    let frame = &frame;
                    s.spawn(move || p.write_all(frame).map_err(|e| io_err(r, e)))
                })
                .collect();
            let received: Vec<Result<Arc<[u8]>, ExchangeError>> = peers
                .iter()
                .enumerate()
                .map(|(r, p)| match p {
                    Some(p) => read_frame(p, r, max_frame),
                    None => Ok(frame.clone()),
                })
                .collect();
            let sent: Result<usize, ExchangeError> = writers
                .into_iter()
                .map(|w| w.join().expect("writer thread panicked"))
                .try_fold(0usize, |n, r| r.map(|()| n + 1));
            (sent, received)
        });
        let received: Vec<Arc<[u8]>> = received.into_iter().collect::<Result<_, _>>()?;
        let sent = sent?;
        debug_assert_eq!(received[me].len(), frame.len());
        self.sent += (sent * frame.len()) as u64;
        Ok(received)
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }
}
