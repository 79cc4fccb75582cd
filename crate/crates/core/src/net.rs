//! Session handling over any byte stream, TCP transport and the offline file exchange.
//!
//! A client sends HELLO (params digest) and QUERY back to back; the server answers with a
//! single RESPONSE or ERROR frame and closes.

use std::io::{self, Cursor, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore};

use crate::bloom::BloomFilter;
use crate::crypto::{PublicKey, SecretKey};
use crate::gram::GramDictionary;
use crate::protocol::{
    build_filter, client_prepare, client_verdict, server_eval_filter, ClientState, MatchQuery,
    MatchResponse, ProtocolError, ProtocolParams, Verdict, VerdictMode,
};
use crate::wire::{
    decode_hello, decode_query, decode_response, encode_error, encode_query, encode_response,
    ErrorCode, Frame, WireError, MSG_ERROR, MSG_HELLO, MSG_QUERY, MSG_RESPONSE,
};

/// Everything a server needs per session, prepared once.
#[derive(Debug, Clone)]
pub struct ServerContext {
    params: ProtocolParams,
    params_digest: [u8; 32],
    filter: BloomFilter,
}

impl ServerContext {
    pub fn new(
        sequence: &[u8],
        dict: &GramDictionary,
        params: ProtocolParams,
    ) -> Result<Self, ProtocolError> {
        let filter = build_filter(sequence, dict, &params)?;
        Ok(ServerContext {
            params_digest: params.digest(),
            params,
            filter,
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn filter(&self) -> &BloomFilter {
        &self.filter
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    Responded { bytes_in: usize, bytes_out: usize },
    Rejected { code: ErrorCode, reason: String },
    /// The peer went away before a complete frame arrived, or the reply could not be sent.
    Disconnected(String),
}

impl SessionOutcome {
    pub fn is_responded(&self) -> bool {
        matches!(self, SessionOutcome::Responded { .. })
    }
}

const DRAIN_LIMIT: u64 = 2 * crate::wire::MAX_BODY_LEN;

struct Rejection(ErrorCode, String);

fn read_expected<S: Read>(
    stream: &mut S,
    expected: u8,
    bytes_in: &mut usize,
) -> Result<Frame, Rejection> {
    let frame = Frame::read_from(stream).map_err(|e| match e {
        WireError::Io(ref io) if is_timeout(io) => {
            Rejection(ErrorCode::Malformed, format!("timed out: {io}"))
        }
        other => Rejection(ErrorCode::Malformed, other.to_string()),
    })?;
    *bytes_in += frame.encoded_len();
    if frame.msg_type != expected {
        return Err(Rejection(
            ErrorCode::UnexpectedMessage,
            format!("expected message type {expected}, got {}", frame.msg_type),
        ));
    }
    Ok(frame)
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn evaluate<S: Read, R: RngCore + CryptoRng>(
    stream: &mut S,
    ctx: &ServerContext,
    rng: &mut R,
    bytes_in: &mut usize,
) -> Result<Vec<u8>, Rejection> {
    let hello = read_expected(stream, MSG_HELLO, bytes_in)?;
    let digest =
        decode_hello(&hello.body).map_err(|e| Rejection(ErrorCode::Malformed, e.to_string()))?;
    if digest != ctx.params_digest {
        return Err(Rejection(
            ErrorCode::ParamsMismatch,
            "params digest differs".into(),
        ));
    }
    let frame = read_expected(stream, MSG_QUERY, bytes_in)?;
    let query =
        decode_query(&frame.body).map_err(|e| Rejection(ErrorCode::Malformed, e.to_string()))?;
    if query.params != ctx.params {
        return Err(Rejection(
            ErrorCode::ParamsMismatch,
            "query parameters differ from the announced digest".into(),
        ));
    }
    if encode_query(&query) != frame.body {
        return Err(Rejection(ErrorCode::Malformed, "non-canonical query encoding".into()));
    }
    let resp = server_eval_filter(&query, &ctx.filter, rng)
        .map_err(|e| Rejection(ErrorCode::EvaluationFailed, e.to_string()))?;
    Ok(Frame::new(MSG_RESPONSE, encode_response(&resp, &query.pk)).to_bytes())
}

/// Runs one server session. Never panics on peer input.
pub fn handle_session<S: Read + Write, R: RngCore + CryptoRng>(
    stream: &mut S,
    ctx: &ServerContext,
    rng: &mut R,
) -> SessionOutcome {
    let mut bytes_in = 0;
    let (reply, outcome) = match evaluate(stream, ctx, rng, &mut bytes_in) {
        Ok(bytes) => {
            let n = bytes.len();
            (
                bytes,
                SessionOutcome::Responded {
                    bytes_in,
                    bytes_out: n,
                },
            )
        }
        Err(Rejection(code, reason)) => (
            Frame::new(MSG_ERROR, encode_error(code, &reason)).to_bytes(),
            SessionOutcome::Rejected { code, reason },
        ),
    };
    if let Err(e) = stream.write_all(&reply).and_then(|_| stream.flush()) {
        return SessionOutcome::Disconnected(e.to_string());
    }
    if !outcome.is_responded() {
        // Let a client that is still writing finish, so it gets to read the ERROR frame.
        let _ = io::copy(&mut stream.take(DRAIN_LIMIT), &mut io::sink());
    }
    outcome
}

/// In-memory duplex: reads from a fixed request, collects whatever is written.
#[derive(Debug)]
pub struct MemoryStream {
    input: Cursor<Vec<u8>>,
    pub output: Vec<u8>,
}

impl MemoryStream {
    pub fn new(input: Vec<u8>) -> Self {
        MemoryStream {
            input: Cursor::new(input),
            output: Vec::new(),
        }
    }
}

impl Read for MemoryStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.input.read(buf)
    }
}

impl Write for MemoryStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.output.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Serves a request file, returning the exact bytes a socket session would have sent back.
pub fn serve_offline<R: RngCore + CryptoRng>(
    request: &[u8],
    ctx: &ServerContext,
    rng: &mut R,
) -> (Vec<u8>, SessionOutcome) {
    let mut stream = MemoryStream::new(request.to_vec());
    let outcome = handle_session(&mut stream, ctx, rng);
    (stream.output, outcome)
}

/// Accepts connections and runs each session on its own thread. Stops after `max_sessions`
/// connections when given. `make_rng` is called once per accepted connection, in order.
pub fn serve<R, F, L>(
    listener: TcpListener,
    ctx: Arc<ServerContext>,
    timeout: Option<Duration>,
    max_sessions: Option<usize>,
    mut make_rng: F,
    log: L,
) -> io::Result<()>
where
    R: RngCore + CryptoRng + Send + 'static,
    F: FnMut() -> R,
    L: Fn(std::net::SocketAddr, &SessionOutcome) + Send + Sync + 'static,
{
    let log = Arc::new(log);
    let mut handles = Vec::new();
    let mut served = 0usize;
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(_) => continue,
        };
        let mut rng = make_rng();
        let ctx = Arc::clone(&ctx);
        let log = Arc::clone(&log);
        handles.push(thread::spawn(move || {
            let peer = match stream.peer_addr() {
                Ok(p) => p,
                Err(_) => return,
            };
            let mut stream = stream;
            if stream.set_read_timeout(timeout).is_err() || stream.set_write_timeout(timeout).is_err()
            {
                return;
            }
            let outcome = handle_session(&mut stream, &ctx, &mut rng);
            log(peer, &outcome);
        }));
        handles.retain(|h| !h.is_finished());
        served += 1;
        if max_sessions.is_some_and(|m| served >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

/// HELLO followed by QUERY, exactly as written to the socket or the request file.
pub fn request_bytes(query: &MatchQuery) -> Vec<u8> {
    let mut out = Frame::new(MSG_HELLO, query.params.digest().to_vec()).to_bytes();
    out.extend(Frame::new(MSG_QUERY, encode_query(query)).to_bytes());
    out
}

/// Decodes a request produced by [`request_bytes`].
pub fn parse_request(bytes: &[u8]) -> Result<MatchQuery, WireError> {
    let (hello, used) = Frame::parse(bytes)?;
    if hello.msg_type != MSG_HELLO {
        return Err(WireError::UnexpectedType(hello.msg_type));
    }
    let digest = decode_hello(&hello.body)?;
    let (frame, used2) = Frame::parse(&bytes[used..])?;
    if frame.msg_type != MSG_QUERY {
        return Err(WireError::UnexpectedType(frame.msg_type));
    }
    if used + used2 != bytes.len() {
        return Err(crate::codec::DecodeError::TrailingBytes(bytes.len() - used - used2).into());
    }
    let query = decode_query(&frame.body)?;
    if query.params.digest() != digest {
        return Err(WireError::Remote {
            code: ErrorCode::ParamsMismatch,
            message: "HELLO digest does not match the query parameters".into(),
        });
    }
    Ok(query)
}

fn response_from_frame(frame: Frame, pk: &PublicKey) -> Result<MatchResponse, WireError> {
    match frame.msg_type {
        MSG_RESPONSE => Ok(decode_response(&frame.body, pk)?),
        MSG_ERROR => {
            let (code, message) = crate::wire::decode_error(&frame.body)?;
            Err(WireError::Remote { code, message })
        }
        other => Err(WireError::UnexpectedType(other)),
    }
}

/// Reads the server's single reply frame. ERROR frames become [`WireError::Remote`].
pub fn read_response<S: Read>(
    stream: &mut S,
    pk: &PublicKey,
) -> Result<(MatchResponse, usize), WireError> {
    let frame = Frame::read_from(stream)?;
    let n = frame.encoded_len();
    Ok((response_from_frame(frame, pk)?, n))
}

/// Decodes a response file.
pub fn parse_response(bytes: &[u8], pk: &PublicKey) -> Result<MatchResponse, WireError> {
    let (frame, used) = Frame::parse(bytes)?;
    if used != bytes.len() {
        return Err(crate::codec::DecodeError::TrailingBytes(bytes.len() - used).into());
    }
    response_from_frame(frame, pk)
}

#[derive(Debug, Clone)]
pub struct Exchange {
    pub response: MatchResponse,
    pub bytes_sent: usize,
    pub bytes_received: usize,
    pub elapsed: Duration,
}

/// Sends a prepared request and waits for the reply.
pub fn exchange_tcp<A: ToSocketAddrs>(
    addr: A,
    request: &[u8],
    pk: &PublicKey,
    timeout: Option<Duration>,
) -> Result<Exchange, WireError> {
    let start = Instant::now();
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(timeout)?;
    stream.set_write_timeout(timeout)?;
    stream.set_nodelay(true)?;
    stream.write_all(request)?;
    stream.flush()?;
    let (response, bytes_received) = read_response(&mut stream, pk)?;
    Ok(Exchange {
        response,
        bytes_sent: request.len(),
        bytes_received,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Client-side measurements for one query.
#[derive(Debug, Clone)]
pub struct QueryReport {
    pub verdict: Verdict,
    pub bytes_sent: usize,
    pub bytes_received: usize,
    pub query_ciphertexts: usize,
    pub response_ciphertexts: usize,
    pub encrypt: Duration,
    pub transfer: Duration,
    pub decrypt: Duration,
}

/// Prepared client request plus the state to interpret its reply.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub request: Vec<u8>,
    pub state: ClientState,
    pub pk: PublicKey,
    pub query_ciphertexts: usize,
    pub encrypt: Duration,
}

pub fn prepare_query<R: RngCore + CryptoRng>(
    sequence: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<PreparedQuery, ProtocolError> {
    let start = Instant::now();
    let (query, state) = client_prepare(sequence, dict, params, sk, rng)?;
    let request = request_bytes(&query);
    Ok(PreparedQuery {
        request,
        state,
        query_ciphertexts: query.filter.cells.len() + 1,
        pk: query.pk,
        encrypt: start.elapsed(),
    })
}

/// Full client run over TCP.
#[allow(clippy::too_many_arguments)]
pub fn run_query<A: ToSocketAddrs, R: RngCore + CryptoRng>(
    addr: A,
    sequence: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    sk: &SecretKey,
    rng: &mut R,
    timeout: Option<Duration>,
    mode: VerdictMode,
) -> Result<QueryReport, QueryError> {
    let prepared = prepare_query(sequence, dict, params, sk, rng)?;
    let ex = exchange_tcp(addr, &prepared.request, &prepared.pk, timeout)?;
    finish_query(&prepared, ex, mode)
}

/// Interprets a reply obtained by any transport.
pub fn finish_query(
    prepared: &PreparedQuery,
    ex: Exchange,
    mode: VerdictMode,
) -> Result<QueryReport, QueryError> {
    let start = Instant::now();
    let verdict = client_verdict(&ex.response, &prepared.state, mode)?;
    Ok(QueryReport {
        verdict,
        bytes_sent: ex.bytes_sent,
        bytes_received: ex.bytes_received,
        query_ciphertexts: prepared.query_ciphertexts,
        response_ciphertexts: ex.response.masked.len(),
        encrypt: prepared.encrypt,
        transfer: ex.elapsed,
        decrypt: start.elapsed(),
    })
}
