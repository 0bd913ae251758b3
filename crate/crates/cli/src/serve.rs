//! WebSocket transport for the recorder session at `/session`.
//!
//! One client at a time. A second connection during a live session is
//! closed with code 1013 and reason `busy`. The session (pose, light and
//! any recording in progress) survives disconnects, so a client that
//! reconnects carries on where it left off.

use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use navmoco::recorder::{parse_client_message, RecorderSession, ServerMessage};
use navmoco::render::RenderConfig;
use navmoco::scene::Scene;
use navmoco::trajectory::MotionParams;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::{Failure, EXIT_NETWORK};

pub struct ServeOptions {
    pub scene: Scene,
    pub motion: MotionParams,
    pub render: RenderConfig,
    pub out: PathBuf,
    pub host: String,
    pub port: u16,
    pub seed: u64,
    pub once: bool,
}

fn network(what: &str, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_NETWORK,
        message: format!("{what}: {e}"),
    }
}

pub fn serve(opts: ServeOptions) -> Result<(), Failure> {
    let session = RecorderSession::new(opts.scene, opts.motion, opts.render, &opts.out, opts.seed)?;
    std::fs::create_dir_all(&opts.out)?;
    let listener = TcpListener::bind((opts.host.as_str(), opts.port))
        .map_err(|e| network(&format!("cannot bind {}:{}", opts.host, opts.port), e))?;
    let addr = listener.local_addr().map_err(|e| network("local address", e))?;
    println!("listening on ws://{addr}/session");
    let _ = std::io::stdout().flush();

    let session = Arc::new(Mutex::new(session));
    let busy = Arc::new(AtomicBool::new(false));
    let mut workers = Vec::new();
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let Some(ws) = handshake(stream) else {
            continue;
        };
        if busy.swap(true, Ordering::SeqCst) {
            refuse(ws);
            continue;
        }
        let session = Arc::clone(&session);
        let busy_flag = Arc::clone(&busy);
        let worker = thread::spawn(move || {
            let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
            if let Err(e) = run_session(ws, &mut s) {
                eprintln!("session ended: {e}");
            }
            match s.flush() {
                Ok(Some(path)) => eprintln!("recording saved to {}", path.display()),
                Ok(None) => {}
                Err(e) => eprintln!("failed to save recording: {e}"),
            }
            drop(s);
            busy_flag.store(false, Ordering::SeqCst);
        });
        if opts.once {
            let _ = worker.join();
            break;
        }
        workers.retain(|w: &thread::JoinHandle<()>| !w.is_finished());
        workers.push(worker);
    }
    if opts.once {
        let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
        s.finish()?;
    }
    Ok(())
}

fn handshake(stream: TcpStream) -> Option<WebSocket<TcpStream>> {
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == "/session" {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some("only /session is served".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    match tungstenite::accept_hdr(stream, check_path) {
        Ok(ws) => Some(ws),
        Err(e) => {
            eprintln!("handshake failed: {e}");
            None
        }
    }
}

fn refuse(mut ws: WebSocket<TcpStream>) {
    let frame = CloseFrame {
        code: CloseCode::Again,
        reason: "busy".into(),
    };
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_secs(2)));
    let _ = ws.close(Some(frame));
    // Drain until the peer acknowledges the close.
    while ws.read().is_ok() {}
}

fn send(ws: &mut WebSocket<TcpStream>, msgs: &[ServerMessage]) -> tungstenite::Result<()> {
    for m in msgs {
        ws.write(Message::text(m.to_line()))?;
    }
    ws.flush()
}

fn run_session(mut ws: WebSocket<TcpStream>, session: &mut RecorderSession) -> Result<(), Box<dyn std::error::Error>> {
    send(&mut ws, &session.hello()?)?;
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(tungstenite::Error::Protocol(_)) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let text = match &msg {
            Message::Text(t) => t.as_str(),
            Message::Close(_) => {
                // Let tungstenite complete the closing handshake.
                continue;
            }
            _ => continue,
        };
        let replies = match parse_client_message(text) {
            Ok(m) => session.handle(m)?,
            Err(e) => vec![ServerMessage::Error { message: e.to_string() }],
        };
        send(&mut ws, &replies)?;
    }
}
