//! Live two-person session bridge.
//!
//! UI clients connect over WebSocket and exchange the binary wire messages,
//! one message per binary WebSocket frame. The server runs one engine per
//! client on a wall-clock frame loop, bridges each client's touch frames to
//! the other engine in process, and streams every client its own
//! stimulation mask each frame as a TOUCH message.
//!
//! Session flow per client: HELLO (answered with the server's HELLO and a
//! CALIB report), CALIB raise/lower/propose (each answered with a CALIB
//! report), CALIB confirm (goes live), then TOUCH frames until BYE.
//!
//! The frame loop never waits on a client: outbound frames go through a
//! small bounded queue and are dropped and counted when it is full.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message as WsMessage;

use teledge_core::engine::{CalibrationCommand, Engine, Phase};
use teledge_core::layout::ElectrodeLayout;
use teledge_core::mask::TouchMask;
use teledge_core::stim::StimParams;
use teledge_core::wire::{self, Calib, CalibAction, Hello, Message, TouchFrame};
use teledge_core::Error as CoreError;

/// Reason sent to a client refused because two clients are already connected.
pub const REASON_SESSION_FULL: &str = "session-full";
pub const REASON_PROTOCOL_VIOLATION: &str = "protocol-violation";
pub const REASON_LAYOUT_MISMATCH: &str = "layout-mismatch";
pub const REASON_VERSION_MISMATCH: &str = "version-mismatch";
pub const REASON_BYE: &str = "bye";

/// Outbound frames a slow client may have queued before new ones are dropped.
const OUTBOUND_QUEUE: usize = 8;
const MAX_CLIENTS: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct ServeConfig {
    pub layout: ElectrodeLayout,
    pub params: StimParams,
}

type ConnId = u64;

enum Inbound {
    Join {
        conn: ConnId,
        peer: SocketAddr,
        outbound: mpsc::Sender<WsMessage>,
        close: oneshot::Sender<String>,
        reply: oneshot::Sender<Result<(), &'static str>>,
    },
    Wire {
        conn: ConnId,
        message: Message,
    },
    Left {
        conn: ConnId,
    },
}

struct Client {
    peer: SocketAddr,
    engine: Engine,
    touch: TouchMask,
    outbound: mpsc::Sender<WsMessage>,
    close: Option<oneshot::Sender<String>>,
    dropped: u64,
}

impl Client {
    /// Queues a message without waiting; returns false when it was dropped.
    fn offer(&mut self, message: &Message) -> bool {
        let Ok(bytes) = wire::encode(message) else {
            return false;
        };
        match self.outbound.try_send(WsMessage::Binary(bytes.into())) {
            Ok(()) => true,
            Err(_) => {
                self.dropped += 1;
                false
            }
        }
    }

    fn report_intensity(&mut self) {
        let intensity = self.engine.intensity();
        self.offer(&Message::Calib(Calib {
            action: CalibAction::Propose,
            intensity,
        }));
    }

    fn disconnect(&mut self, reason: &str) {
        if let Some(close) = self.close.take() {
            let _ = close.send(reason.to_owned());
        }
    }
}

/// Runs the bridge on `listener` until the process ends.
pub async fn serve(listener: TcpListener, config: ServeConfig) -> std::io::Result<()> {
    let (inbound_tx, inbound_rx) = mpsc::unbounded_channel();
    tokio::spawn(frame_loop(inbound_rx, config));
    let mut next_conn: ConnId = 0;
    loop {
        let (stream, peer) = listener.accept().await?;
        next_conn += 1;
        let conn = next_conn;
        let inbound = inbound_tx.clone();
        tokio::spawn(async move {
            if let Err(e) = connection(stream, peer, conn, inbound, config.layout).await {
                debug!("connection {conn} ({peer}) ended: {e}");
            }
        });
    }
}

async fn connection(
    stream: TcpStream,
    peer: SocketAddr,
    conn: ConnId,
    inbound: mpsc::UnboundedSender<Inbound>,
    layout: ElectrodeLayout,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let _ = stream.set_nodelay(true);
    let mut ws = tokio_tungstenite::accept_async(stream).await?;
    let (out_tx, mut out_rx) = mpsc::channel(OUTBOUND_QUEUE);
    let (close_tx, mut close_rx) = oneshot::channel();
    let (reply_tx, reply_rx) = oneshot::channel();
    let joined = inbound
        .send(Inbound::Join {
            conn,
            peer,
            outbound: out_tx,
            close: close_tx,
            reply: reply_tx,
        })
        .is_ok();
    let admitted = match reply_rx.await {
        Ok(result) if joined => result,
        _ => Err("server-shutdown"),
    };
    if let Err(reason) = admitted {
        info!("refusing {peer}: {reason}");
        return close_with(&mut ws, reason).await;
    }
    info!("client {conn} connected from {peer}");

    let result = loop {
        tokio::select! {
            reason = &mut close_rx => {
                let reason = reason.unwrap_or_else(|_| REASON_PROTOCOL_VIOLATION.to_owned());
                break close_with(&mut ws, &reason).await;
            }
            Some(out) = out_rx.recv() => {
                if let Err(e) = ws.send(out).await {
                    break Err(e);
                }
            }
            incoming = ws.next() => match incoming {
                Some(Ok(WsMessage::Binary(bytes))) => match wire::decode_with_layout(&bytes, &layout) {
                    Ok(message) => {
                        let _ = inbound.send(Inbound::Wire { conn, message });
                    }
                    Err(e) => {
                        warn!("client {conn}: {e}");
                        break close_with(&mut ws, &format!("{REASON_PROTOCOL_VIOLATION}:{}", e.code())).await;
                    }
                },
                Some(Ok(WsMessage::Text(_))) => {
                    break close_with(&mut ws, &format!("{REASON_PROTOCOL_VIOLATION}:text-frame")).await;
                }
                Some(Ok(WsMessage::Close(_))) | None => break Ok(()),
                Some(Ok(_)) => {}
                Some(Err(e)) => break Err(e),
            },
        }
    };
    let _ = inbound.send(Inbound::Left { conn });
    result
}

async fn close_with(
    ws: &mut tokio_tungstenite::WebSocketStream<TcpStream>,
    reason: &str,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let frame = CloseFrame {
        code: CloseCode::Policy,
        reason: reason.to_owned().into(),
    };
    ws.close(Some(frame)).await?;
    // let the peer acknowledge the close before the socket drops
    let _ = tokio::time::timeout(Duration::from_millis(500), async {
        while let Some(Ok(_)) = ws.next().await {}
    })
    .await;
    Ok(())
}

async fn frame_loop(mut inbound: mpsc::UnboundedReceiver<Inbound>, config: ServeConfig) {
    let period = Duration::from_micros(config.params.frame_period_us() as u64);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let started = Instant::now();
    let mut clients: BTreeMap<ConnId, Client> = BTreeMap::new();
    loop {
        ticker.tick().await;
        loop {
            match inbound.try_recv() {
                Ok(event) => handle(event, &mut clients, &config),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        let now_us = started.elapsed().as_micros() as u32;
        run_frame(&mut clients, now_us);
    }
}

fn handle(event: Inbound, clients: &mut BTreeMap<ConnId, Client>, config: &ServeConfig) {
    match event {
        Inbound::Join {
            conn,
            peer,
            outbound,
            close,
            reply,
        } => {
            if clients.len() >= MAX_CLIENTS {
                let _ = reply.send(Err(REASON_SESSION_FULL));
                return;
            }
            let engine = match Engine::new(config.layout, config.params) {
                Ok(engine) => engine,
                Err(_) => {
                    let _ = reply.send(Err("server-misconfigured"));
                    return;
                }
            };
            if reply.send(Ok(())).is_ok() {
                clients.insert(
                    conn,
                    Client {
                        peer,
                        engine,
                        touch: TouchMask::for_layout(&config.layout),
                        outbound,
                        close: Some(close),
                        dropped: 0,
                    },
                );
            }
        }
        Inbound::Wire { conn, message } => {
            let Some(client) = clients.get_mut(&conn) else {
                return;
            };
            if let Err(reason) = on_message(client, message, &config.layout) {
                warn!("client {conn} ({}): disconnecting, {reason}", client.peer);
                client.disconnect(&reason);
                remove(clients, conn);
            } else if client.engine.phase() == Phase::Closed {
                client.disconnect(REASON_BYE);
                remove(clients, conn);
            }
        }
        Inbound::Left { conn } => remove(clients, conn),
    }
}

fn remove(clients: &mut BTreeMap<ConnId, Client>, conn: ConnId) {
    if let Some(client) = clients.remove(&conn) {
        info!(
            "client {conn} ({}) left after {} frames, {} outbound frames dropped",
            client.peer,
            client.engine.frame_index(),
            client.dropped
        );
    }
}

fn on_message(
    client: &mut Client,
    message: Message,
    layout: &ElectrodeLayout,
) -> Result<(), String> {
    let phase = client.engine.phase();
    let violation = |what: &str| format!("{REASON_PROTOCOL_VIOLATION}:{what}-during-{phase}");
    match message {
        Message::Hello(hello) => {
            client.engine.accept_hello(&hello).map_err(|e| match e {
                CoreError::Refused(_) if hello.version != wire::PROTOCOL_VERSION => {
                    REASON_VERSION_MISMATCH.to_owned()
                }
                CoreError::Refused(_) => REASON_LAYOUT_MISMATCH.to_owned(),
                _ => violation("hello"),
            })?;
            if let Ok(ours) = Hello::for_layout(layout) {
                client.offer(&Message::Hello(ours));
            }
            client.report_intensity();
        }
        Message::Calib(calib) => {
            let result = match calib.action {
                CalibAction::Propose => client.engine.propose_intensity(calib.intensity),
                CalibAction::Raise => client.engine.calibrate(CalibrationCommand::Raise),
                CalibAction::Lower => client.engine.calibrate(CalibrationCommand::Lower),
                CalibAction::Confirm => client.engine.calibrate(CalibrationCommand::Confirm),
            };
            result.map_err(|_| violation("calib"))?;
            client.report_intensity();
        }
        Message::Touch(frame) => match phase {
            Phase::Live => client.touch = frame.mask,
            // touches while calibrating are ignored
            Phase::Calibrating => {}
            _ => return Err(violation("touch")),
        },
        Message::Bye => client.engine.close(),
    }
    Ok(())
}

fn run_frame(clients: &mut BTreeMap<ConnId, Client>, now_us: u32) {
    let mut sent: Vec<(ConnId, TouchFrame)> = Vec::with_capacity(MAX_CLIENTS);
    for (&conn, client) in clients.iter_mut() {
        if client.engine.phase() != Phase::Live {
            continue;
        }
        if let Ok(frame) = client.engine.begin_frame(client.touch, now_us) {
            sent.push((conn, frame));
        }
    }
    // in-process bridge: each engine receives the other's frame of this frame
    for (from, frame) in &sent {
        for (&conn, client) in clients.iter_mut() {
            if conn != *from && client.engine.phase() == Phase::Live {
                client.engine.apply_remote_frame(frame);
            }
        }
    }
    for (conn, frame) in sent {
        let Some(client) = clients.get_mut(&conn) else {
            continue;
        };
        if client.engine.finish_frame().is_err() {
            continue;
        }
        let stim = TouchFrame {
            seq: frame.seq,
            timestamp_us: now_us,
            mask: *client.engine.stim_mask(),
            intensity: client.engine.intensity(),
        };
        if !client.offer(&Message::Touch(stim)) && client.dropped % 60 == 1 {
            warn!(
                "client {conn} ({}) is congested, {} frames dropped",
                client.peer, client.dropped
            );
        }
    }
}
