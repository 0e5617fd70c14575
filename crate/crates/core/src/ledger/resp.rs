//! Counter store client for an external key-value server speaking the Redis
//! serialization protocol. Only `INCRBY`, `DECRBY` and `GET` are used.
//!
//! The server offers increment-and-get but no conditional increment, so
//! `increment_within` increments first and compensates with a decrement when
//! the result lands above the ceiling. The counter may exceed the ceiling
//! between the two commands; it never stays there once the call returns.

use std::time::Duration;

use async_trait::async_trait;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio::sync::Mutex;

use super::{CounterStore, StoreUnavailable};

#[derive(Debug)]
pub struct RespCounterStore {
    addr: String,
    conn: Mutex<Option<BufReader<TcpStream>>>,
    timeout: Duration,
}

#[derive(Debug, PartialEq, Eq)]
enum Reply {
    Integer(i64),
    Bulk(Option<Vec<u8>>),
    Simple(String),
    Error(String),
}

impl RespCounterStore {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: Mutex::new(None),
            timeout: Duration::from_secs(1),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    async fn command(&self, args: &[&str]) -> Result<Reply, StoreUnavailable> {
        let mut guard = self.conn.lock().await;
        let result = tokio::time::timeout(self.timeout, async {
            if guard.is_none() {
                let stream = TcpStream::connect(&self.addr).await?;
                stream.set_nodelay(true)?;
                *guard = Some(BufReader::new(stream));
            }
            let conn = guard.as_mut().expect("connected");
            conn.get_mut().write_all(&encode(args)).await?;
            read_reply(conn).await
        })
        .await;
        match result {
            Ok(Ok(Reply::Error(msg))) => {
                tracing::warn!(%msg, "counter store error reply");
                Err(StoreUnavailable)
            }
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(err)) => {
                tracing::warn!(%err, addr = %self.addr, "counter store unreachable");
                *guard = None;
                Err(StoreUnavailable)
            }
            Err(_) => {
                tracing::warn!(addr = %self.addr, "counter store timed out");
                *guard = None;
                Err(StoreUnavailable)
            }
        }
    }

    async fn integer(&self, args: &[&str]) -> Result<i64, StoreUnavailable> {
        match self.command(args).await? {
            Reply::Integer(n) => Ok(n),
            other => {
                tracing::warn!(?other, "unexpected counter store reply");
                Err(StoreUnavailable)
            }
        }
    }
}

fn encode(args: &[&str]) -> Vec<u8> {
    let mut out = format!("*{}\r\n", args.len()).into_bytes();
    for arg in args {
        out.extend_from_slice(format!("${}\r\n", arg.len()).as_bytes());
        out.extend_from_slice(arg.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out
}

async fn read_line(conn: &mut BufReader<TcpStream>) -> std::io::Result<String> {
    let mut line = String::new();
    if conn.read_line(&mut line).await? == 0 {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

async fn read_reply(conn: &mut BufReader<TcpStream>) -> std::io::Result<Reply> {
    let line = read_line(conn).await?;
    let invalid = || std::io::Error::new(std::io::ErrorKind::InvalidData, "bad reply");
    let (tag, rest) = line.split_at_checked(1).ok_or_else(invalid)?;
    match tag {
        ":" => rest.parse().map(Reply::Integer).map_err(|_| invalid()),
        "+" => Ok(Reply::Simple(rest.to_string())),
        "-" => Ok(Reply::Error(rest.to_string())),
        "$" => {
            let len: i64 = rest.parse().map_err(|_| invalid())?;
            if len < 0 {
                return Ok(Reply::Bulk(None));
            }
            let mut buf = vec![0u8; len as usize + 2];
            conn.read_exact(&mut buf).await?;
            buf.truncate(len as usize);
            Ok(Reply::Bulk(Some(buf)))
        }
        _ => Err(invalid()),
    }
}

#[async_trait]
impl CounterStore for RespCounterStore {
    async fn increment_within(
        &self,
        key: &str,
        delta: u64,
        ceiling: u64,
    ) -> Result<Option<u64>, StoreUnavailable> {
        let delta_s = delta.to_string();
        let value = self.integer(&["INCRBY", key, &delta_s]).await?;
        if value > ceiling as i64 {
            self.integer(&["DECRBY", key, &delta_s]).await?;
            return Ok(None);
        }
        Ok(Some(value.max(0) as u64))
    }

    async fn decrement_floored(
        &self,
        key: &str,
        delta: u64,
    ) -> Result<(u64, bool), StoreUnavailable> {
        let value = self.integer(&["DECRBY", key, &delta.to_string()]).await?;
        if value < 0 {
            let repaired = self
                .integer(&["INCRBY", key, &(-value).to_string()])
                .await?;
            return Ok((repaired.max(0) as u64, true));
        }
        Ok((value as u64, false))
    }

    async fn get(&self, key: &str) -> Result<u64, StoreUnavailable> {
        match self.command(&["GET", key]).await? {
            Reply::Bulk(None) => Ok(0),
            Reply::Bulk(Some(raw)) => std::str::from_utf8(&raw)
                .ok()
                .and_then(|s| s.parse::<i64>().ok())
                .map(|n| n.max(0) as u64)
                .ok_or(StoreUnavailable),
            Reply::Integer(n) => Ok(n.max(0) as u64),
            Reply::Simple(_) | Reply::Error(_) => Err(StoreUnavailable),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::Arc;

    use parking_lot::Mutex as SyncMutex;
    use tokio::net::TcpListener;

    use super::*;
    use crate::ledger::{Acquire, FairnessConfig, FairnessLedger};

    /// Just enough of a RESP server for INCRBY/DECRBY/GET.
    async fn spawn_server() -> String {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let data: Arc<SyncMutex<HashMap<String, i64>>> = Arc::default();
        tokio::spawn(async move {
            loop {
                let (stream, _) = listener.accept().await.unwrap();
                let data = data.clone();
                tokio::spawn(async move {
                    let mut conn = BufReader::new(stream);
                    loop {
                        let Ok(header) = read_line(&mut conn).await else { return };
                        let n: usize = header[1..].parse().unwrap();
                        let mut args = Vec::new();
                        for _ in 0..n {
                            let len: usize = read_line(&mut conn).await.unwrap()[1..].parse().unwrap();
                            let mut buf = vec![0; len + 2];
                            conn.read_exact(&mut buf).await.unwrap();
                            buf.truncate(len);
                            args.push(String::from_utf8(buf).unwrap());
                        }
                        let reply = {
                            let mut map = data.lock();
                            match args[0].as_str() {
                                "INCRBY" | "DECRBY" => {
                                    let d: i64 = args[2].parse().unwrap();
                                    let v = map.entry(args[1].clone()).or_insert(0);
                                    *v += if args[0] == "INCRBY" { d } else { -d };
                                    format!(":{v}\r\n")
                                }
                                "GET" => match map.get(&args[1]) {
                                    Some(v) => format!("${}\r\n{v}\r\n", v.to_string().len()),
                                    None => "$-1\r\n".to_string(),
                                },
                                _ => "-ERR unknown command\r\n".to_string(),
                            }
                        };
                        conn.get_mut().write_all(reply.as_bytes()).await.unwrap();
                    }
                });
            }
        });
        addr
    }

    #[test]
    fn encodes_bulk_array() {
        assert_eq!(
            encode(&["GET", "fairness:u"]),
            b"*2\r\n$3\r\nGET\r\n$10\r\nfairness:u\r\n".to_vec()
        );
    }

    #[tokio::test]
    async fn ledger_semantics_over_resp() {
        let addr = spawn_server().await;
        let ledger = FairnessLedger::new(
            Arc::new(RespCounterStore::new(addr)),
            FairnessConfig::default(),
        );
        assert_eq!(ledger.read("u").await.unwrap(), 0);
        assert_eq!(ledger.try_acquire("u", 2_400_000).await, Acquire::Acquired);
        assert_eq!(ledger.try_acquire("u", 100_000).await, Acquire::Acquired);
        assert_eq!(ledger.try_acquire("u", 1).await, Acquire::OverLimit);
        assert_eq!(ledger.read("u").await.unwrap(), 2_500_000);
        assert_eq!(ledger.release("u", 2_600_000).await.unwrap(), 0);
        assert_eq!(ledger.read("u").await.unwrap(), 0);
    }

    #[tokio::test]
    async fn unreachable_server_is_unavailable() {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let store = RespCounterStore::new(addr).with_timeout(Duration::from_millis(200));
        assert_eq!(store.get("k").await, Err(StoreUnavailable));
        let ledger = FairnessLedger::new(Arc::new(store), FairnessConfig::default());
        assert_eq!(ledger.try_acquire("u", 5).await, Acquire::StoreUnavailable);
    }
}
