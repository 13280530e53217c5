//! TCP relay that records both directions and can flip a bit in transit. Used
//! to inspect what actually crosses the wire and to inject faults.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    /// Bytes from the connecting client towards the target.
    Upstream,
    /// Bytes from the target back to the client.
    Downstream,
}

/// Flip `mask` into byte `offset` of the given leg, counted across the relay's
/// lifetime.
#[derive(Debug, Clone, Copy)]
pub struct BitFlip {
    pub leg: Leg,
    pub offset: u64,
    pub mask: u8,
}

#[derive(Default)]
struct Shared {
    up: Mutex<Vec<u8>>,
    down: Mutex<Vec<u8>>,
    fired: AtomicUsize,
    stop: AtomicBool,
}

pub struct Relay {
    pub addr: String,
    shared: Arc<Shared>,
}

impl Relay {
    /// Listens on an ephemeral loopback port and forwards every connection to `target`.
    pub fn start(target: &str, flip: Option<BitFlip>) -> io::Result<Relay> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?.to_string();
        let shared = Arc::new(Shared::default());
        let target = target.to_string();
        let sh = Arc::clone(&shared);
        thread::spawn(move || {
            while !sh.stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((client, _)) => {
                        let _ = client.set_nonblocking(false);
                        if let Ok(server) = TcpStream::connect(&target) {
                            pump(client.try_clone().unwrap(), server.try_clone().unwrap(), Leg::Upstream, flip, &sh);
                            pump(server, client, Leg::Downstream, flip, &sh);
                        }
                    }
                    Err(_) => thread::sleep(Duration::from_millis(10)),
                }
            }
        });
        Ok(Relay { addr, shared })
    }

    pub fn upstream(&self) -> Vec<u8> {
        self.shared.up.lock().unwrap().clone()
    }

    pub fn downstream(&self) -> Vec<u8> {
        self.shared.down.lock().unwrap().clone()
    }

    pub fn fired(&self) -> bool {
        self.shared.fired.load(Ordering::SeqCst) > 0
    }
}

impl Drop for Relay {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

fn pump(mut from: TcpStream, mut to: TcpStream, leg: Leg, flip: Option<BitFlip>, sh: &Arc<Shared>) {
    let sh = Arc::clone(sh);
    thread::spawn(move || {
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = match from.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            let chunk = &mut buf[..n];
            {
                let mut log = match leg {
                    Leg::Upstream => sh.up.lock().unwrap(),
                    Leg::Downstream => sh.down.lock().unwrap(),
                };
                let start = log.len() as u64;
                if let Some(f) = flip.filter(|f| f.leg == leg && f.offset >= start && f.offset < start + n as u64) {
                    chunk[(f.offset - start) as usize] ^= f.mask;
                    sh.fired.fetch_add(1, Ordering::SeqCst);
                }
                log.extend_from_slice(chunk);
            }
            if to.write_all(chunk).is_err() {
                break;
            }
        }
        let _ = to.shutdown(Shutdown::Write);
    });
}
