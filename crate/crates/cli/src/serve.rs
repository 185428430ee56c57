//! Single-session steering server.
//!
//! A client connects over plain TCP or a WebSocket (detected from the first
//! bytes it sends) and exchanges newline-delimited JSON. The session runs
//! on one thread with non-blocking I/O; outgoing state messages queue in a
//! small buffer that drops its oldest entry when the client falls behind.

use std::collections::VecDeque;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use divernet::dataset::to_rgb8;
use divernet::sim::{render_frame, SimConfig, SimLogRecord, Simulation, Vec3};
use divernet::NetworkWeights;
use serde::Deserialize;
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use crate::args::ServeArgs;
use crate::commands::{sim_config, sim_weights};
use crate::error::CliError;

/// Seconds without any client message before steering starts to fade.
pub const WATCHDOG: f64 = 5.0;
/// Time constant of the fade, seconds.
const FADE: f64 = 0.5;
const OUTBOX_CAP: usize = 16;
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ClientMsg {
    Steer { vx: f64, vy: f64, vz: f64 },
    Reset { seed: u64 },
    Pause,
    Resume,
}

pub fn serve(a: &ServeArgs, servo_text: &str) -> Result<(), CliError> {
    if !(a.tick_rate > 0.0 && a.tick_rate <= 1000.0) {
        return Err(CliError::usage("--tick-rate must be in (0, 1000]"));
    }
    let config = sim_config(&a.sim, servo_text)?;
    let weights = sim_weights(&a.sim)?;
    let listener = TcpListener::bind((a.bind.as_str(), a.port))
        .map_err(|e| CliError::usage(format!("cannot listen on {}:{}: {e}", a.bind, a.port)))?;
    listener.set_nonblocking(true)?;
    println!("listening={}", listener.local_addr()?);
    io::stdout().flush()?;

    let busy = AtomicBool::new(false);
    let finished = AtomicBool::new(false);
    let opts = SessionOptions {
        tick: Duration::from_secs_f64(1.0 / a.tick_rate),
        frame_every: a.frame_every,
    };
    thread::scope(|s| -> Result<(), CliError> {
        loop {
            if a.once && finished.load(Ordering::Acquire) {
                return Ok(());
            }
            let stream = match listener.accept() {
                Ok((stream, _)) => stream,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(10));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            if busy.swap(true, Ordering::AcqRel) {
                refuse(stream);
                continue;
            }
            let (config, weights, opts, busy, finished) = (&config, weights.as_ref(), &opts, &busy, &finished);
            s.spawn(move || {
                if let Err(e) = run_session(stream, config, weights, opts) {
                    eprintln!("session ended: {e}");
                }
                busy.store(false, Ordering::Release);
                finished.store(true, Ordering::Release);
            });
        }
    })
}

fn refuse(mut stream: TcpStream) {
    let msg = error_msg("busy");
    if looks_like_websocket(&stream) {
        if let Ok(mut ws) = tungstenite::accept(stream) {
            let _ = ws.send(Message::text(msg));
            let _ = ws.close(None);
            let _ = ws.flush();
        }
    } else {
        let _ = stream.write_all(format!("{msg}\n").as_bytes());
    }
}

fn error_msg(message: &str) -> String {
    json!({"type": "error", "message": message}).to_string()
}

fn looks_like_websocket(stream: &TcpStream) -> bool {
    // plain clients may wait for the first state message, so do not block long
    let _ = stream.set_read_timeout(Some(Duration::from_millis(300)));
    let mut head = [0u8; 4];
    let ws = matches!(stream.peek(&mut head), Ok(4) if &head == b"GET ");
    let _ = stream.set_read_timeout(None);
    ws
}

struct SessionOptions {
    tick: Duration,
    frame_every: u64,
}

enum Conn {
    Tcp {
        stream: TcpStream,
        inbuf: Vec<u8>,
        pending: Vec<u8>,
    },
    Ws {
        ws: Box<WebSocket<TcpStream>>,
        flushing: bool,
    },
}

fn would_block(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted)
}

fn ws_io(e: tungstenite::Error) -> io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => ErrorKind::ConnectionAborted.into(),
        other => io::Error::other(other),
    }
}

impl Conn {
    fn open(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let conn = if looks_like_websocket(&stream) {
            let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
            ws.get_ref().set_nonblocking(true)?;
            Conn::Ws {
                ws: Box::new(ws),
                flushing: false,
            }
        } else {
            stream.set_nonblocking(true)?;
            Conn::Tcp {
                stream,
                inbuf: Vec::new(),
                pending: Vec::new(),
            }
        };
        Ok(conn)
    }

    /// Complete lines received so far. Errors when the peer has gone.
    fn poll_lines(&mut self) -> io::Result<Vec<String>> {
        let mut lines = Vec::new();
        match self {
            Conn::Tcp { stream, inbuf, .. } => {
                let mut chunk = [0u8; 4096];
                loop {
                    match stream.read(&mut chunk) {
                        Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
                        Ok(n) => inbuf.extend_from_slice(&chunk[..n]),
                        Err(e) if would_block(&e) => break,
                        Err(e) => return Err(e),
                    }
                }
                while let Some(i) = inbuf.iter().position(|&b| b == b'\n') {
                    let line: Vec<u8> = inbuf.drain(..=i).collect();
                    lines.push(String::from_utf8_lossy(&line).trim().to_string());
                }
            }
            Conn::Ws { ws, .. } => loop {
                match ws.read() {
                    Ok(Message::Text(t)) => lines.extend(t.lines().map(|l| l.trim().to_string())),
                    Ok(Message::Binary(b)) => lines.extend(String::from_utf8_lossy(&b).lines().map(|l| l.trim().to_string())),
                    Ok(Message::Close(_)) => return Err(ErrorKind::ConnectionAborted.into()),
                    Ok(_) => {}
                    Err(tungstenite::Error::Io(e)) if would_block(&e) => break,
                    Err(e) => return Err(ws_io(e)),
                }
            },
        }
        lines.retain(|l| !l.is_empty());
        Ok(lines)
    }

    /// Sends as much of the outbox as the socket accepts without blocking.
    fn pump(&mut self, outbox: &mut VecDeque<String>) -> io::Result<()> {
        match self {
            Conn::Tcp { stream, pending, .. } => loop {
                if pending.is_empty() {
                    match outbox.pop_front() {
                        Some(m) => {
                            pending.extend_from_slice(m.as_bytes());
                            pending.push(b'\n');
                        }
                        None => return Ok(()),
                    }
                }
                match stream.write(pending) {
                    Ok(0) => return Err(ErrorKind::WriteZero.into()),
                    Ok(n) => {
                        pending.drain(..n);
                    }
                    Err(e) if would_block(&e) => return Ok(()),
                    Err(e) => return Err(e),
                }
            },
            Conn::Ws { ws, flushing } => loop {
                if *flushing {
                    match ws.flush() {
                        Ok(()) => *flushing = false,
                        Err(tungstenite::Error::Io(e)) if would_block(&e) => return Ok(()),
                        Err(e) => return Err(ws_io(e)),
                    }
                }
                let Some(m) = outbox.pop_front() else {
                    return Ok(());
                };
                match ws.send(Message::text(m)) {
                    Ok(()) => {}
                    Err(tungstenite::Error::Io(e)) if would_block(&e) => *flushing = true,
                    Err(e) => return Err(ws_io(e)),
                }
            },
        }
    }
}

fn push_dropping_oldest(outbox: &mut VecDeque<String>, msg: String) {
    if outbox.len() >= OUTBOX_CAP {
        outbox.pop_front();
    }
    outbox.push_back(msg);
}

/// Latest-value steering input with the silence watchdog.
struct Mailbox {
    steer: Vec3,
    last_heard: Instant,
}

impl Mailbox {
    /// Velocity to apply this tick; fades toward zero once the client has
    /// been silent longer than the watchdog.
    fn velocity(&mut self, now: Instant, dt: f64) -> Vec3 {
        if now.duration_since(self.last_heard).as_secs_f64() > WATCHDOG {
            let k = (-dt / FADE).exp();
            self.steer = self.steer.map(|v| v * k);
            if self.steer.iter().all(|v| v.abs() < 1e-3) {
                self.steer = [0.0; 3];
            }
        }
        self.steer
    }
}

fn run_session(stream: TcpStream, config: &SimConfig, weights: Option<&NetworkWeights<f32>>, opts: &SessionOptions) -> io::Result<()> {
    let mut conn = Conn::open(stream)?;
    let new_sim = |seed: u64| Simulation::new(SimConfig { seed, ..config.clone() }, weights).map_err(|e| io::Error::other(e.to_string()));
    let mut sim = new_sim(config.seed)?;
    let mut outbox = VecDeque::new();
    let mut mailbox = Mailbox {
        steer: [0.0; 3],
        last_heard: Instant::now(),
    };
    let mut paused = false;
    let mut next_tick = Instant::now();
    loop {
        for line in conn.poll_lines()? {
            mailbox.last_heard = Instant::now();
            match serde_json::from_str::<ClientMsg>(&line) {
                Ok(ClientMsg::Steer { vx, vy, vz }) if [vx, vy, vz].iter().all(|v| v.is_finite()) => {
                    mailbox.steer = [vx, vy, vz];
                }
                Ok(ClientMsg::Steer { .. }) => push_dropping_oldest(&mut outbox, error_msg("velocity must be finite")),
                Ok(ClientMsg::Reset { seed }) => sim = new_sim(seed)?,
                Ok(ClientMsg::Pause) => paused = true,
                Ok(ClientMsg::Resume) => {
                    paused = false;
                    next_tick = Instant::now();
                }
                Err(e) => push_dropping_oldest(&mut outbox, error_msg(&format!("bad message: {e}"))),
            }
        }
        let now = Instant::now();
        if !paused && now >= next_tick {
            let v = mailbox.velocity(now, config.dt);
            let record = sim.tick(Some(v)).map_err(|e| io::Error::other(e.to_string()))?;
            let with_frame = opts.frame_every > 0 && sim.state.tick % opts.frame_every == 0;
            push_dropping_oldest(&mut outbox, state_message(&sim, &record, with_frame).to_string());
            next_tick += opts.tick;
            if next_tick < now {
                next_tick = now + opts.tick;
            }
        }
        conn.pump(&mut outbox)?;
        thread::sleep(POLL);
    }
}

fn state_message(sim: &Simulation, record: &SimLogRecord, with_frame: bool) -> Value {
    let (r, d, v) = (sim.state.robot, sim.state.diver, sim.state.diver_velocity);
    let detection = record.detection.as_ref().map(|det| {
        json!({
            "xmin": det.bbox.xmin, "ymin": det.bbox.ymin,
            "xmax": det.bbox.xmax, "ymax": det.bbox.ymax,
            "conf": det.confidence,
        })
    });
    let mut msg = json!({
        "type": "state",
        "t": sim.state.time,
        "robot": {"x": r.position[0], "y": r.position[1], "z": r.position[2], "yaw": r.yaw, "pitch": r.pitch},
        "diver": {"x": d.position[0], "y": d.position[1], "z": d.position[2], "vx": v[0], "vy": v[1], "vz": v[2]},
        "detection": detection,
        "command": {
            "yaw_rate": record.command.yaw_rate,
            "pitch_rate": record.command.pitch_rate,
            "forward": record.command.forward_speed,
        },
        "mode": record.status.mode.to_string(),
    });
    if with_frame {
        if let Some(png) = frame_png(sim) {
            msg["frame_png_b64"] = Value::String(base64::engine::general_purpose::STANDARD.encode(png));
        }
    }
    msg
}

fn frame_png(sim: &Simulation) -> Option<Vec<u8>> {
    let img = render_frame(&sim.state, sim.config.render_noise);
    let (h, w) = (img.dims()[0] as u32, img.dims()[1] as u32);
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().ok()?;
    writer.write_image_data(&to_rgb8(&img)).ok()?;
    writer.finish().ok()?;
    Some(out)
}
