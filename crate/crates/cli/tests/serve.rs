use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{Sink, SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use teledge_cli::serve::{serve, ServeConfig, REASON_SESSION_FULL};
use teledge_core::layout::ElectrodeLayout;
use teledge_core::mask::TouchMask;
use teledge_core::seq::Seq16;
use teledge_core::stim::StimParams;
use teledge_core::wire::{self, Calib, CalibAction, Hello, Message, TouchFrame};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(5);

async fn start() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let config = ServeConfig {
        layout: ElectrodeLayout::default(),
        params: StimParams::default(),
    };
    tokio::spawn(serve(listener, config));
    format!("ws://{addr}")
}

async fn send<S>(ws: &mut S, message: &Message)
where
    S: Sink<WsMessage> + Unpin,
    S::Error: std::fmt::Debug,
{
    let bytes = wire::encode(message).unwrap();
    ws.send(WsMessage::Binary(bytes.into())).await.unwrap();
}

async fn recv(ws: &mut Client) -> Message {
    loop {
        let next = tokio::time::timeout(WAIT, ws.next())
            .await
            .expect("server answers in time");
        match next.expect("stream open").expect("no socket error") {
            WsMessage::Binary(bytes) => return wire::decode(&bytes).unwrap(),
            WsMessage::Close(frame) => panic!("closed: {frame:?}"),
            _ => {}
        }
    }
}

async fn close_reason(ws: &mut Client) -> String {
    loop {
        let next = tokio::time::timeout(WAIT, ws.next())
            .await
            .expect("server closes in time");
        match next {
            Some(Ok(WsMessage::Close(Some(frame)))) => return frame.reason.to_string(),
            Some(Ok(WsMessage::Close(None))) | None => return String::new(),
            Some(Ok(_)) => {}
            Some(Err(e)) => panic!("socket error: {e}"),
        }
    }
}

async fn go_live(url: &str) -> Client {
    let (mut ws, _) = connect_async(url).await.unwrap();
    let hello = Hello::for_layout(&ElectrodeLayout::default()).unwrap();
    send(&mut ws, &Message::Hello(hello)).await;
    assert_eq!(recv(&mut ws).await, Message::Hello(hello));
    let Message::Calib(report) = recv(&mut ws).await else {
        panic!("expected a calibration report");
    };
    assert_eq!(report.intensity, 64);
    send(
        &mut ws,
        &Message::Calib(Calib {
            action: CalibAction::Raise,
            intensity: 0,
        }),
    )
    .await;
    let Message::Calib(raised) = recv(&mut ws).await else {
        panic!("expected a calibration report");
    };
    assert_eq!(raised.intensity, 69);
    send(
        &mut ws,
        &Message::Calib(Calib {
            action: CalibAction::Confirm,
            intensity: 0,
        }),
    )
    .await;
    ws
}

fn touch(indices: &[usize]) -> Message {
    Message::Touch(TouchFrame {
        seq: Seq16(0),
        timestamp_us: 0,
        mask: TouchMask::from_indices(53, indices.iter().copied()).unwrap(),
        intensity: 0,
    })
}

/// Reads stimulation frames in the background so none queue up unread.
fn spawn_reader(
    mut stream: futures_util::stream::SplitStream<Client>,
) -> Arc<Mutex<Vec<TouchFrame>>> {
    let frames = Arc::new(Mutex::new(Vec::new()));
    let sink = frames.clone();
    tokio::spawn(async move {
        while let Some(Ok(WsMessage::Binary(bytes))) = stream.next().await {
            if let Ok(Message::Touch(frame)) = wire::decode(&bytes) {
                sink.lock().unwrap().push(frame);
            }
        }
    });
    frames
}

async fn wait_for(
    frames: &Mutex<Vec<TouchFrame>>,
    from: usize,
    mask: &TouchMask,
) -> (TouchFrame, Vec<TouchFrame>) {
    tokio::time::timeout(WAIT, async {
        loop {
            {
                let frames = frames.lock().unwrap();
                if let Some(pos) = frames[from..].iter().position(|f| f.mask == *mask) {
                    return (frames[from + pos], frames[from..from + pos].to_vec());
                }
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    })
    .await
    .expect("stimulation arrives")
}

#[tokio::test(flavor = "multi_thread")]
async fn overlapping_touch_stimulates_both_clients() {
    let url = start().await;
    let (mut a_tx, a_rx) = go_live(&url).await.split();
    let (mut b_tx, b_rx) = go_live(&url).await.split();
    let (a_frames, b_frames) = (spawn_reader(a_rx), spawn_reader(b_rx));
    // both stream empty stimulation at the confirmed intensity before anyone touches
    let idle = TouchMask::for_layout(&ElectrodeLayout::default());
    for frames in [&a_frames, &b_frames] {
        let (frame, _) = wait_for(frames, 0, &idle).await;
        assert_eq!(frame.intensity, 69);
    }

    send(&mut a_tx, &touch(&[4, 5])).await;
    send(&mut b_tx, &touch(&[5, 6])).await;
    let marks: Vec<(usize, Option<u16>)> = [&a_frames, &b_frames]
        .iter()
        .map(|f| {
            let f = f.lock().unwrap();
            (f.len(), f.last().map(|fr| fr.seq.0))
        })
        .collect();

    let expected = TouchMask::from_indices(53, [5]).unwrap();
    for (frames, (from, last_seq)) in [&a_frames, &b_frames].into_iter().zip(marks) {
        let (stim, before) = wait_for(frames, from, &expected).await;
        assert!(
            before.iter().all(|f| f.mask.is_empty()),
            "unexpected stimulation before overlap"
        );
        let waited = stim.seq.0.wrapping_sub(last_seq.unwrap());
        assert!(
            waited <= 2,
            "stimulation arrived {waited} frames after the touches were sent"
        );
    }

    send(&mut a_tx, &Message::Bye).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn third_client_is_refused() {
    let url = start().await;
    let _a = go_live(&url).await;
    let _b = go_live(&url).await;
    let (mut c, _) = connect_async(&url).await.unwrap();
    assert_eq!(close_reason(&mut c).await, REASON_SESSION_FULL);
}

#[tokio::test(flavor = "multi_thread")]
async fn garbage_frame_is_a_protocol_violation() {
    let url = start().await;
    let (mut ws, _) = connect_async(&url).await.unwrap();
    ws.send(WsMessage::Binary(vec![0x00, 0x01, 0x02].into()))
        .await
        .unwrap();
    assert_eq!(
        close_reason(&mut ws).await,
        "protocol-violation:not-our-protocol"
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn touch_before_handshake_is_a_protocol_violation() {
    let url = start().await;
    let (mut ws, _) = connect_async(&url).await.unwrap();
    send(&mut ws, &touch(&[1])).await;
    let reason = close_reason(&mut ws).await;
    assert!(reason.starts_with("protocol-violation:touch"), "{reason}");
}

#[tokio::test(flavor = "multi_thread")]
async fn mismatched_layout_is_refused() {
    let url = start().await;
    let (mut ws, _) = connect_async(&url).await.unwrap();
    let hello = Hello::for_layout(&ElectrodeLayout::new(20, 32).unwrap()).unwrap();
    send(&mut ws, &Message::Hello(hello)).await;
    assert_eq!(close_reason(&mut ws).await, "layout-mismatch");
}
