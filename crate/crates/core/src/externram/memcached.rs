// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Client for the memcached text protocol.
//!
//! Keys are `<region hex>:<page offset hex>`, values are the raw 4096 page
//! bytes stored with flags 0 and no expiry. Batched writes are pipelined
//! `set` commands; batched reads are `get` commands carrying many keys.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use super::{StoreBackend, StoreError, StoreResult};
use crate::page::{PageBuffer, PageKey, PAGE_SIZE};

pub const DEFAULT_RETRIES: u32 = 3;

const IO_TIMEOUT: Duration = Duration::from_secs(5);
// Keeps each `get` line well under server line-length limits.
const KEYS_PER_GET: usize = 32;

/// Wire form of a page key.
pub fn encode_key(key: &PageKey) -> String {
    format!("{:x}:{:x}", key.region_id, key.page_addr())
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    fn open(addr: &str) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::with_capacity(64 * 1024, stream),
        })
    }

    fn read_line(&mut self) -> StoreResult<String> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed connection").into());
        }
        if !line.ends_with("\r\n") {
            return Err(StoreError::Protocol(format!("unterminated reply line {line:?}")));
        }
        line.truncate(line.len() - 2);
        Ok(line)
    }

    fn send_set(&mut self, key: &PageKey, buf: &PageBuffer) -> io::Result<()> {
        write!(self.writer, "set {} 0 0 {}\r\n", encode_key(key), PAGE_SIZE)?;
        self.writer.write_all(buf.as_bytes())?;
        self.writer.write_all(b"\r\n")
    }

    fn expect_stored(&mut self) -> StoreResult<()> {
        let line = self.read_line()?;
        match line.as_str() {
            "STORED" => Ok(()),
            other => Err(StoreError::Protocol(format!("set replied {other:?}"))),
        }
    }

    fn get(&mut self, keys: &[PageKey]) -> StoreResult<HashMap<String, PageBuffer>> {
        let mut found = HashMap::new();
        for chunk in keys.chunks(KEYS_PER_GET) {
            self.writer.write_all(b"get")?;
            for key in chunk {
                write!(self.writer, " {}", encode_key(key))?;
            }
            self.writer.write_all(b"\r\n")?;
        }
        self.writer.flush()?;
        let mut ends = keys.chunks(KEYS_PER_GET).count();
        while ends > 0 {
            let line = self.read_line()?;
            if line == "END" {
                ends -= 1;
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some("VALUE"), Some(key), Some(_flags), Some(len)) => {
                    let len: usize = len
                        .parse()
                        .map_err(|_| StoreError::Protocol(format!("bad VALUE line {line:?}")))?;
                    let mut data = vec![0u8; len + 2];
                    self.reader.read_exact(&mut data)?;
                    if &data[len..] != b"\r\n" {
                        return Err(StoreError::Protocol("value not terminated by CRLF".into()));
                    }
                    let page = PageBuffer::from_slice(&data[..len]).ok_or_else(|| {
                        StoreError::Protocol(format!("value for {key} is {len} bytes, not a page"))
                    })?;
                    found.insert(key.to_string(), page);
                }
                _ => return Err(StoreError::Protocol(format!("unexpected get reply {line:?}"))),
            }
        }
        Ok(found)
    }
}

/// A memcached-protocol page store over one TCP connection.
///
/// Calls are serialized on the connection. Transport failures reconnect and
/// retry up to the configured count before surfacing.
pub struct MemcachedStore {
    addr: String,
    retries: u32,
    conn: Mutex<Option<Connection>>,
}

impl MemcachedStore {
    pub fn connect(addr: impl Into<String>, retries: u32) -> StoreResult<Self> {
        let addr = addr.into();
        let conn = Connection::open(&addr)?;
        Ok(Self {
            addr,
            retries,
            conn: Mutex::new(Some(conn)),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn with_retry<T>(&self, mut op: impl FnMut(&mut Connection) -> StoreResult<T>) -> StoreResult<T> {
        let mut guard = self.conn.lock().unwrap();
        let mut attempt = 0;
        loop {
            let result = match guard.as_mut() {
                Some(conn) => op(conn),
                None => match Connection::open(&self.addr) {
                    Ok(conn) => op(guard.insert(conn)),
                    Err(e) => Err(e.into()),
                },
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) => {
                    // The stream position is unknown after any failure.
                    *guard = None;
                    if !e.is_retryable() || attempt >= self.retries {
                        return Err(e);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

impl StoreBackend for MemcachedStore {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>> {
        let wire = encode_key(&key);
        self.with_retry(|c| Ok(c.get(std::slice::from_ref(&key))?.remove(&wire)))
    }

    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()> {
        self.with_retry(|c| {
            c.send_set(&key, buf)?;
            c.writer.flush()?;
            c.expect_stored()
        })
    }

    fn remove(&self, key: PageKey) -> StoreResult<()> {
        self.with_retry(|c| {
            write!(c.writer, "delete {}\r\n", encode_key(&key))?;
            c.writer.flush()?;
            match c.read_line()?.as_str() {
                "DELETED" | "NOT_FOUND" => Ok(()),
                other => Err(StoreError::Protocol(format!("delete replied {other:?}"))),
            }
        })
    }

    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>> {
        if keys.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        let found = self.with_retry(|c| c.get(keys))?;
        Ok(keys.iter().map(|k| found.get(&encode_key(k)).cloned()).collect())
    }

    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()> {
        if batch.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        // Replies arrive in command order, so the count of leading STORED
        // replies is the applied prefix. Retries resume after that prefix.
        let mut applied = 0usize;
        let result = self.with_retry(|c| {
            let rest = &batch[applied..];
            let sent = (|| -> io::Result<()> {
                for (key, buf) in rest {
                    c.send_set(key, buf)?;
                }
                c.writer.flush()
            })();
            if let Err(e) = sent {
                return Err(StoreError::Transport(e));
            }
            for _ in rest {
                c.expect_stored()?;
                applied += 1;
            }
            Ok(())
        });
        result.map_err(|e| StoreError::PartialBatch {
            applied,
            total: batch.len(),
            source: Box::new(e),
        })
    }

    fn name(&self) -> &str {
        "memcached"
    }
}
