//! WebSocket transport for live sessions.
//!
//! Connections are served one at a time, each with a fresh session. Client
//! messages are drained between ticks, so the control loop only ever sees
//! commands at cycle boundaries.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use shapeservo::session::{ServerMessage, Session};
use tungstenite::{Message, WebSocket};

use crate::{CliError, CliResult};

/// Longest idle sleep between polls.
const POLL: Duration = Duration::from_millis(1);

fn ws_err(e: tungstenite::Error) -> CliError {
    CliError::WebSocket(e.to_string())
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if io.kind() == ErrorKind::WouldBlock)
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> CliResult<()> {
    let text = serde_json::to_string(msg).map_err(shapeservo::Error::from)?;
    match ws.send(Message::text(text)) {
        Ok(()) => Ok(()),
        Err(e) if would_block(&e) => Ok(()),
        Err(e) => Err(ws_err(e)),
    }
}

/// Accepts connections until `max_connections` have been served.
pub fn serve<F>(
    listener: TcpListener,
    new_session: F,
    tick: Duration,
    max_connections: Option<usize>,
) -> CliResult<()>
where
    F: Fn() -> CliResult<Session>,
{
    for (served, stream) in (1..).zip(listener.incoming()) {
        let stream = stream?;
        let peer = stream.peer_addr().ok();
        log::info!("session opened for {peer:?}");
        match serve_connection(stream, new_session()?, tick) {
            Ok(()) => log::info!("session closed for {peer:?}"),
            Err(e) => log::warn!("session for {peer:?} ended: {e}"),
        }
        if max_connections.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

/// Runs one session until the client disconnects.
pub fn serve_connection(stream: TcpStream, mut session: Session, tick: Duration) -> CliResult<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| CliError::WebSocket(e.to_string()))?;
    send(&mut ws, &session.hello())?;
    ws.get_ref().set_nonblocking(true)?;
    let mut next_tick = Instant::now() + tick;
    loop {
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    for reply in session.handle_text(&text) {
                        send(&mut ws, &reply)?;
                    }
                }
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(e) if would_block(&e) => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Ok(())
                }
                Err(e) => return Err(ws_err(e)),
            }
        }
        let now = Instant::now();
        if now >= next_tick {
            for msg in session.tick() {
                send(&mut ws, &msg)?;
            }
            next_tick += tick;
            if next_tick < now {
                next_tick = now + tick;
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(e) if would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(ws_err(e)),
        }
        std::thread::sleep(
            next_tick
                .saturating_duration_since(Instant::now())
                .min(POLL),
        );
    }
}
