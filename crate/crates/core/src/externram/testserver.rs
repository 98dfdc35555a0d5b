// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! A small in-process server speaking the subset of the memcached text
//! protocol the page store uses (`set`, `get`/`gets`, `delete`,
//! `flush_all`, `version`, `quit`). Used by tests and by the CLI when no
//! real server is available.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

#[derive(Default)]
struct Shared {
    items: Mutex<HashMap<String, (u32, Vec<u8>)>>,
    conns: Mutex<Vec<TcpStream>>,
    stop: AtomicBool,
    commands: AtomicU64,
}

pub struct MemcachedTestServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl MemcachedTestServer {
    /// Binds an ephemeral localhost port and starts serving.
    pub fn start() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let acceptor = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("memcached-test-accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        Ok(Self {
            addr,
            shared,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stored keys, sorted.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<_> = self.shared.items.lock().unwrap().keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn len(&self) -> usize {
        self.shared.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total commands processed.
    pub fn commands(&self) -> u64 {
        self.shared.commands.load(Ordering::Relaxed)
    }

    /// Closes every open client connection but keeps accepting new ones.
    pub fn drop_connections(&self) {
        for conn in self.shared.conns.lock().unwrap().drain(..) {
            let _ = conn.shutdown(Shutdown::Both);
        }
    }

    /// Stops accepting and closes all connections.
    pub fn stop(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
        self.drop_connections();
    }
}

impl Drop for MemcachedTestServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        if let Ok(clone) = stream.try_clone() {
            shared.conns.lock().unwrap().push(clone);
        }
        let shared = Arc::clone(&shared);
        let _ = thread::Builder::new()
            .name("memcached-test-conn".into())
            .spawn(move || {
                let _ = serve(stream, &shared);
            });
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        shared.commands.fetch_add(1, Ordering::Relaxed);
        let tokens: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(' ').filter(|t| !t.is_empty()).collect();
        match tokens.as_slice() {
            ["set", key, flags, _exptime, len, rest @ ..] => {
                let noreply = rest.first() == Some(&"noreply");
                let (Ok(flags), Ok(len)) = (flags.parse::<u32>(), len.parse::<usize>()) else {
                    writer.write_all(b"CLIENT_ERROR bad command line format\r\n")?;
                    writer.flush()?;
                    continue;
                };
                let mut data = vec![0u8; len + 2];
                reader.read_exact(&mut data)?;
                if &data[len..] != b"\r\n" {
                    writer.write_all(b"CLIENT_ERROR bad data chunk\r\n")?;
                } else {
                    data.truncate(len);
                    shared.items.lock().unwrap().insert(key.to_string(), (flags, data));
                    if !noreply {
                        writer.write_all(b"STORED\r\n")?;
                    }
                }
            }
            ["get" | "gets", keys @ ..] if !keys.is_empty() => {
                let items = shared.items.lock().unwrap();
                for key in keys {
                    if let Some((flags, data)) = items.get(*key) {
                        write!(writer, "VALUE {key} {flags} {}\r\n", data.len())?;
                        writer.write_all(data)?;
                        writer.write_all(b"\r\n")?;
                    }
                }
                writer.write_all(b"END\r\n")?;
            }
            ["delete", key, ..] => {
                let removed = shared.items.lock().unwrap().remove(*key).is_some();
                writer.write_all(if removed { b"DELETED\r\n" } else { b"NOT_FOUND\r\n" })?;
            }
            ["flush_all", ..] => {
                shared.items.lock().unwrap().clear();
                writer.write_all(b"OK\r\n")?;
            }
            ["version"] => writer.write_all(b"VERSION 1.6.0-test\r\n")?,
            ["quit"] => return Ok(()),
            _ => writer.write_all(b"ERROR\r\n")?,
        }
        // Flush only once the pipelined input is drained.
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speaks_raw_protocol() {
        let server = MemcachedTestServer::start().unwrap();
        let mut conn = TcpStream::connect(server.addr()).unwrap();
        conn.write_all(b"set a 5 0 3\r\nxyz\r\nget a b\r\ndelete a\r\ndelete a\r\nbogus\r\n")
            .unwrap();
        let mut reader = BufReader::new(conn);
        let mut out = String::new();
        for _ in 0..7 {
            reader.read_line(&mut out).unwrap();
        }
        assert_eq!(
            out,
            "STORED\r\nVALUE a 5 3\r\nxyz\r\nEND\r\nDELETED\r\nNOT_FOUND\r\nERROR\r\n"
        );
    }
}
