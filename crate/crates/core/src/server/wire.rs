//! Line-delimited JSON protocol over TCP.
//!
//! Each request is one JSON object on one line, tagged by `type`; the server
//! answers each with exactly one line. Times are optional on the wire: when a
//! request carries no `now`, the server uses the latest simulated time it has
//! seen.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use super::{
    AbuseCaseResult, AuthorReport, BatchEntry, CashingServer, CashingService, GrantOutcome,
    GrantRecord, ManagerCredential, Payout, PopularApps, RedeemOutcome, RedeemRequest,
    RefuseReason, RejectReason, ServiceError, UnredeemedReport, VendorReport,
};
use crate::coupon::{Coupon, CouponKey, SecureId};
use crate::ids::{AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use crate::money::Money;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Redeem {
        coupon: Coupon,
        author: AuthorId,
        credential: ManagerCredential,
        user: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        now: Option<u64>,
    },
    Grant {
        secure_id: SecureId,
        credential: ManagerCredential,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        manager: Option<ManagerId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        now: Option<u64>,
    },
    Abuse {
        accused: AuthorId,
        reporter: String,
        credential: ManagerCredential,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        now: Option<u64>,
    },
    Register {
        credential: ManagerCredential,
        entries: Vec<BatchEntry>,
        #[serde(default)]
        grants: Vec<GrantRecord>,
    },
    Settle {
        credential: ManagerCredential,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        now: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holding_period: Option<u64>,
    },
    ReportVendor {
        vendor: VendorId,
    },
    ReportAuthor {
        author: AuthorId,
    },
    ReportUnredeemed,
    PopularApps {
        accessory_type: AccessoryType,
    },
    Shutdown {
        credential: ManagerCredential,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Accepted { credited_udollars: u64 },
    Rejected { reason: RejectReason },
    Granted { key: CouponKey },
    Refused { reason: RefuseReason },
    Registered { count: usize },
    Settled { moved: Vec<Payout> },
    AbuseResult(AbuseCaseResult),
    VendorReport(VendorReport),
    AuthorReport(AuthorReport),
    Unredeemed(UnredeemedReport),
    PopularApps(PopularApps),
    ShuttingDown,
    Error { message: String },
}

impl From<RedeemOutcome> for Response {
    fn from(o: RedeemOutcome) -> Self {
        match o {
            RedeemOutcome::Accepted { credited } => Response::Accepted {
                credited_udollars: credited.udollars(),
            },
            RedeemOutcome::Rejected { reason } => Response::Rejected { reason },
        }
    }
}

impl From<GrantOutcome> for Response {
    fn from(o: GrantOutcome) -> Self {
        match o {
            GrantOutcome::Granted { key } => Response::Granted { key },
            GrantOutcome::Refused { reason } => Response::Refused { reason },
        }
    }
}

/// Applies one request. The flag is set when the request asks the listener
/// to stop.
pub fn handle_request(server: &CashingServer, holding_period: u64, req: Request) -> (Response, bool) {
    let bad_credential = Response::Rejected { reason: RejectReason::BadCredential };
    let now_or_clock = |now: Option<u64>| now.unwrap_or_else(|| server.clock());
    let response = match req {
        Request::Redeem { coupon, author, credential, user, now } => server
            .redeem(&RedeemRequest { coupon, author, credential, user, now: now_or_clock(now) })
            .into(),
        Request::Grant { secure_id, credential, manager, now } => server
            .grant_key(&secure_id, &credential, manager.as_ref(), now_or_clock(now))
            .into(),
        Request::Abuse { accused, reporter, credential, now } => {
            if !server.verify_credential(&credential) {
                bad_credential
            } else {
                Response::AbuseResult(server.handle_abuse_report(&accused, &reporter, now_or_clock(now)))
            }
        }
        Request::Register { credential, entries, grants } => {
            if !server.verify_credential(&credential) {
                bad_credential
            } else {
                match server.register_batch(entries, grants) {
                    Ok(count) => Response::Registered { count },
                    Err(e) => Response::Error { message: e.to_string() },
                }
            }
        }
        Request::Settle { credential, now, holding_period: hp } => {
            if !server.verify_credential(&credential) {
                bad_credential
            } else {
                Response::Settled {
                    moved: server.settle(now_or_clock(now), hp.unwrap_or(holding_period)),
                }
            }
        }
        Request::ReportVendor { vendor } => Response::VendorReport(server.report_vendor(&vendor)),
        Request::ReportAuthor { author } => Response::AuthorReport(server.report_author(&author)),
        Request::ReportUnredeemed => Response::Unredeemed(server.report_unredeemed()),
        Request::PopularApps { accessory_type } => {
            Response::PopularApps(server.popular_apps(&accessory_type))
        }
        Request::Shutdown { credential } => {
            if !server.verify_credential(&credential) {
                bad_credential
            } else {
                return (Response::ShuttingDown, true);
            }
        }
    };
    (response, false)
}

/// A running listener. Dropping the handle leaves the listener running;
/// call [`ServerHandle::shutdown`] or [`ServerHandle::wait`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Sessions already open run until their
    /// client disconnects.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until a client sends a `shutdown` request.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `server` on `listener`, one thread per session.
pub fn serve(listener: TcpListener, server: Arc<CashingServer>, holding_period: u64) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let server = Arc::clone(&server);
            let stop_flag = Arc::clone(&stop_flag);
            thread::spawn(move || {
                if let Ok(true) = session(stream, &server, holding_period) {
                    stop_flag.store(true, Ordering::SeqCst);
                    let _ = TcpStream::connect(addr);
                }
            });
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

/// Runs one client session; returns whether shutdown was requested.
fn session(stream: TcpStream, server: &CashingServer, holding_period: u64) -> io::Result<bool> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(false);
        }
        if line.trim().is_empty() {
            continue;
        }
        let (response, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle_request(server, holding_period, req),
            Err(e) => (Response::Error { message: format!("malformed request: {e}") }, false),
        };
        let response = match server.journal_error() {
            Some(e) => Response::Error { message: format!("ledger unavailable: {e}") },
            None => response,
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if stop {
            return Ok(true);
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Client side of the protocol. Reconnects lazily after a transport error.
pub struct WireClient {
    addr: SocketAddr,
    conn: Mutex<Option<Connection>>,
}

impl WireClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let client = WireClient { addr, conn: Mutex::new(None) };
        *client.conn.lock().expect("fresh mutex") = Some(client.open()?);
        Ok(client)
    }

    fn open(&self) -> io::Result<Connection> {
        let stream = TcpStream::connect(self.addr)?;
        stream.set_nodelay(true)?;
        Ok(Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn call(&self, req: &Request) -> Result<Response, ServiceError> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.open().map_err(|e| ServiceError::Transport(e.to_string()))?);
        }
        let conn = guard.as_mut().expect("connected above");
        let result = (|| -> io::Result<String> {
            serde_json::to_writer(&mut conn.writer, req)?;
            conn.writer.write_all(b"\n")?;
            conn.writer.flush()?;
            let mut line = String::new();
            if conn.reader.read_line(&mut line)? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the session"));
            }
            Ok(line)
        })();
        match result {
            Ok(line) => serde_json::from_str(&line).map_err(|e| ServiceError::Protocol(e.to_string())),
            Err(e) => {
                *guard = None;
                Err(ServiceError::Transport(e.to_string()))
            }
        }
    }
}

fn unexpected(r: Response) -> ServiceError {
    match r {
        Response::Error { message } => ServiceError::Protocol(message),
        other => ServiceError::Protocol(format!("unexpected response {other:?}")),
    }
}

impl CashingService for WireClient {
    fn redeem(&self, req: &RedeemRequest) -> Result<RedeemOutcome, ServiceError> {
        match self.call(&Request::Redeem {
            coupon: req.coupon,
            author: req.author.clone(),
            credential: req.credential,
            user: req.user.clone(),
            now: Some(req.now),
        })? {
            Response::Accepted { credited_udollars } => Ok(RedeemOutcome::Accepted {
                credited: Money::from_udollars(credited_udollars),
            }),
            Response::Rejected { reason } => Ok(RedeemOutcome::Rejected { reason }),
            other => Err(unexpected(other)),
        }
    }

    fn grant_key(&self, secure_id: &SecureId, credential: &ManagerCredential, manager: &ManagerId, now: u64) -> Result<GrantOutcome, ServiceError> {
        match self.call(&Request::Grant {
            secure_id: *secure_id,
            credential: *credential,
            manager: Some(manager.clone()),
            now: Some(now),
        })? {
            Response::Granted { key } => Ok(GrantOutcome::Granted { key }),
            Response::Refused { reason } => Ok(GrantOutcome::Refused { reason }),
            other => Err(unexpected(other)),
        }
    }

    fn report_abuse(&self, accused: &AuthorId, reporter: &UserId, credential: &ManagerCredential, now: u64) -> Result<AbuseCaseResult, ServiceError> {
        match self.call(&Request::Abuse {
            accused: accused.clone(),
            reporter: reporter.as_str().to_owned(),
            credential: *credential,
            now: Some(now),
        })? {
            Response::AbuseResult(r) => Ok(r),
            Response::Rejected { reason: RejectReason::BadCredential } => Err(ServiceError::BadCredential),
            other => Err(unexpected(other)),
        }
    }
}
