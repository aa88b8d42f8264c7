//! Replicas as threads exchanging length-prefixed messages over localhost
//! TCP. Timings here are wall-clock and not reproducible.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::codec::Canonical;
use crate::crypto::KeyPair;
use crate::ledger::{BatchReport, GlobalLedger};
use crate::pbft::{ConsensusConfig, Dest, Directory, MsgKind, NodeId, Outbound, PbftMessage, Replica, ReplyCollector, SigCache};
use crate::records::Batch;
use crate::sync::{client_key, replica_key};

const MAX_FRAME: usize = 64 << 20;
const IDLE_TICK: Duration = Duration::from_millis(20);
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Done {
    id: NodeId,
    report: BatchReport,
    ledger: Option<Box<GlobalLedger>>,
    busy_s: f64,
}

enum Event {
    Msg(PbftMessage),
    Propose(Batch),
    Done(Done),
    Stop,
}

fn write_frame(s: &mut TcpStream, msg: &PbftMessage) -> io::Result<()> {
    let body = msg.to_bytes();
    let mut buf = Vec::with_capacity(body.len() + 4);
    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
    buf.extend_from_slice(&body);
    s.write_all(&buf)
}

fn read_frame(s: &mut TcpStream) -> io::Result<PbftMessage> {
    let mut len = [0u8; 4];
    s.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    s.read_exact(&mut body)?;
    PbftMessage::from_bytes(&body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn spawn_acceptor(listener: TcpListener, inbox: Sender<Event>, stop: Arc<AtomicBool>) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let inbox = inbox.clone();
                    thread::spawn(move || {
                        while let Ok(m) = read_frame(&mut stream) {
                            if inbox.send(Event::Msg(m)).is_err() {
                                break;
                            }
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                Err(_) => break,
            }
        }
    }))
}

/// Outgoing side of one node.
struct Links {
    me: NodeId,
    replicas: usize,
    addrs: Vec<SocketAddr>,
    conns: Vec<Option<TcpStream>>,
    own: Sender<Event>,
}

impl Links {
    fn send(&mut self, to: NodeId, msg: PbftMessage) {
        if to == self.me {
            let _ = self.own.send(Event::Msg(msg));
            return;
        }
        let i = to as usize;
        if self.conns[i].is_none() {
            if let Ok(s) = TcpStream::connect(self.addrs[i]) {
                let _ = s.set_nodelay(true);
                self.conns[i] = Some(s);
            }
        }
        if let Some(s) = &mut self.conns[i] {
            if write_frame(s, &msg).is_err() {
                self.conns[i] = None;
            }
        }
    }

    fn route(&mut self, out: Vec<Outbound>) {
        for o in out {
            match o.dest {
                Dest::To(to) => self.send(to, o.msg),
                Dest::All => {
                    for to in 0..self.replicas as NodeId {
                        self.send(to, o.msg.clone());
                    }
                }
            }
        }
    }
}

fn replica_loop(mut replica: Replica, mut links: Links, rx: Receiver<Event>, coordinator: Sender<Event>) {
    let mut reported = replica.reports.len();
    let mut busy = Duration::ZERO;
    loop {
        let ev = match rx.recv_timeout(IDLE_TICK) {
            Ok(ev) => ev,
            Err(RecvTimeoutError::Timeout) => {
                let out = replica.on_idle();
                links.route(out);
                continue;
            }
            Err(RecvTimeoutError::Disconnected) => return,
        };
        let t = Instant::now();
        let out = match ev {
            Event::Msg(m) => replica.step(&m).out,
            Event::Propose(b) => replica.propose(&b).out,
            Event::Stop => return,
            Event::Done(_) => Vec::new(),
        };
        busy += t.elapsed();
        links.route(out);
        while reported < replica.reports.len() {
            let done = Done {
                id: links.me,
                report: replica.reports[reported].clone(),
                ledger: (links.me == 0).then(|| Box::new(replica.ledger.clone())),
                busy_s: busy.as_secs_f64(),
            };
            reported += 1;
            if coordinator.send(Event::Done(done)).is_err() {
                return;
            }
        }
    }
}

/// `n` replica threads plus a client endpoint owned by the caller.
pub struct TcpCluster {
    cfg: ConsensusConfig,
    inboxes: Vec<Sender<Event>>,
    rx: Receiver<Event>,
    collector: ReplyCollector,
    ledger: GlobalLedger,
    executed: usize,
    busy: Vec<f64>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    pub timeout: Duration,
}

impl TcpCluster {
    /// Binds `port_base..port_base+n` for replicas and the next port for
    /// the client. A zero base picks free ports.
    pub fn start(n: usize, port_base: u16, genesis: &GlobalLedger) -> io::Result<TcpCluster> {
        let cfg = ConsensusConfig::new(n);
        let mut keys: Vec<KeyPair> = (0..n).map(replica_key).collect();
        keys.push(client_key(0));
        let dir = Arc::new(Directory { keys: keys.iter().map(|k| k.public_key()).collect() });
        let cache = Arc::new(SigCache::default());
        let stop = Arc::new(AtomicBool::new(false));

        let mut listeners = Vec::new();
        for i in 0..=n {
            let port = if port_base == 0 { 0 } else { port_base.checked_add(i as u16).ok_or_else(|| io::Error::other("port overflow"))? };
            listeners.push(TcpListener::bind(("127.0.0.1", port))?);
        }
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr()).collect::<io::Result<_>>()?;
        let chans: Vec<(Sender<Event>, Receiver<Event>)> = (0..=n).map(|_| channel()).collect();
        let senders: Vec<Sender<Event>> = chans.iter().map(|(s, _)| s.clone()).collect();
        let mut threads = Vec::new();
        for (l, s) in listeners.into_iter().zip(&senders) {
            threads.push(spawn_acceptor(l, s.clone(), stop.clone())?);
        }
        let mut rxs: Vec<Receiver<Event>> = chans.into_iter().map(|(_, r)| r).collect();
        let client_rx = rxs.pop().expect("client channel");
        for (i, rx) in rxs.into_iter().enumerate() {
            let replica = Replica::new(i as NodeId, cfg, keys[i].clone(), dir.clone(), cache.clone(), genesis.clone());
            let links = Links { me: i as NodeId, replicas: n, addrs: addrs.clone(), conns: (0..=n).map(|_| None).collect(), own: senders[i].clone() };
            let coordinator = senders[n].clone();
            threads.push(thread::spawn(move || replica_loop(replica, links, rx, coordinator)));
        }
        Ok(TcpCluster {
            cfg,
            inboxes: senders[..n].to_vec(),
            rx: client_rx,
            collector: ReplyCollector::new(cfg, dir, cache),
            ledger: genesis.clone(),
            executed: 0,
            busy: vec![0.0; n],
            stop,
            threads,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn ledger(&self) -> &GlobalLedger {
        &self.ledger
    }

    /// Proposes `batch` at the primary and waits until every replica has
    /// executed it and the client holds f+1 matching replies. Returns the
    /// report, elapsed seconds and the busiest replica's handler time.
    pub fn execute(&mut self, batch: &Batch) -> Result<(BatchReport, f64, f64), String> {
        let start = Instant::now();
        let digest = batch.digest();
        let target = self.executed + 1;
        let mut done = vec![false; self.cfg.n];
        let mut report = None;
        let busy_before = self.busy.clone();
        self.inboxes[self.cfg.primary].send(Event::Propose(batch.clone())).map_err(|_| "primary stopped".to_string())?;
        let mut accepted = false;
        while !(accepted && done.iter().all(|d| *d)) {
            let left = self.timeout.checked_sub(start.elapsed()).ok_or("timeout")?;
            match self.rx.recv_timeout(left) {
                Ok(Event::Msg(m)) if m.kind == MsgKind::Reply => {
                    if self.collector.on_reply(&m) == Some(digest) {
                        accepted = true;
                    }
                }
                Ok(Event::Done(d)) => {
                    let i = d.id as usize;
                    self.busy[i] = d.busy_s;
                    done[i] = true;
                    if let Some(l) = d.ledger {
                        self.ledger = *l;
                        report = Some(d.report);
                    }
                }
                Ok(_) => {}
                Err(_) => return Err("timeout".into()),
            }
        }
        self.executed = target;
        let busiest = (0..self.cfg.n).map(|i| self.busy[i] - busy_before[i]).fold(0.0, f64::max);
        Ok((report.unwrap_or_default(), start.elapsed().as_secs_f64(), busiest))
    }
}

impl Drop for TcpCluster {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for s in &self.inboxes {
            let _ = s.send(Event::Stop);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Wall-clock sync time of one synthetic batch over localhost TCP.
pub fn measure_sync_tcp(nodes: usize, batch_tx: usize, seed: u64, port_base: u16) -> io::Result<f64> {
    let batch = crate::sync::synthetic_batch(batch_tx, seed, 1, Some(nodes as NodeId));
    measure_batch_tcp(nodes, &batch, port_base)
}

pub fn measure_batch_tcp(nodes: usize, batch: &Batch, port_base: u16) -> io::Result<f64> {
    let genesis = GlobalLedger::new(Default::default());
    let mut c = TcpCluster::start(nodes, port_base, &genesis)?;
    c.execute(batch).map(|(_, s, _)| s).map_err(io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{basic_scenario, run_scenario, Mode};

    #[test]
    fn one_batch_over_localhost() {
        let s = measure_sync_tcp(4, 20, 1, 0).unwrap();
        assert!(s > 0.0 && s < 30.0, "{s}");
    }

    #[test]
    fn scenario_over_localhost_matches_direct() {
        let mut s = basic_scenario(6);
        s.mode = Mode::LocalhostTcp;
        s.port_base = 0;
        let tcp = run_scenario(&s, true, false).unwrap();
        let direct = run_scenario(&s, false, false).unwrap();
        assert_eq!(tcp.ledger.state_root(), direct.ledger.state_root());
        assert_eq!(tcp.winners(), direct.winners());
    }
}
