//! Serve mode: one engine thread owns the gateway and advances the virtual
//! clock with wall time; axum handlers talk to it over a command queue.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc as std_mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use log::{debug, warn};
use tokio::sync::{mpsc, oneshot};

use momex_core::testbed::TestbedError;

use crate::channel::{ChannelId, ClientEvent, CloseReason, ServerEvent};
use crate::error::ApiError;
use crate::gateway::{Gateway, GatewayConfig, HttpRequest, HttpResponse};

type Opened = Result<(ChannelId, mpsc::UnboundedReceiver<ServerEvent>), ApiError>;

enum EngineMsg {
    Http(HttpRequest, oneshot::Sender<HttpResponse>),
    Open {
        token: Option<String>,
        schedule: String,
        reply: oneshot::Sender<Opened>,
    },
    Input(ChannelId, ClientEvent),
    Drop(ChannelId),
}

/// Handle to the engine thread. Cloned into every request handler.
#[derive(Clone)]
pub struct Engine {
    tx: std_mpsc::Sender<EngineMsg>,
}

/// Longest the engine sleeps between clock updates.
const MAX_IDLE: Duration = Duration::from_millis(50);

impl Engine {
    /// Boots the gateway on its own thread with a wall-clock driven
    /// virtual clock.
    pub fn spawn(config: GatewayConfig) -> Result<(Engine, JoinHandle<()>), TestbedError> {
        let (tx, rx) = std_mpsc::channel();
        let (boot_tx, boot_rx) = std_mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("momex-engine".into())
            .spawn(move || match Gateway::new(config) {
                Ok(gw) => {
                    let _ = boot_tx.send(Ok(()));
                    run(gw, rx);
                }
                Err(e) => {
                    let _ = boot_tx.send(Err(e));
                }
            })
            .expect("engine thread");
        boot_rx.recv().expect("engine reports boot")?;
        Ok((Engine { tx }, handle))
    }

    pub async fn request(&self, req: HttpRequest) -> HttpResponse {
        let (reply, rx) = oneshot::channel();
        if self.tx.send(EngineMsg::Http(req, reply)).is_err() {
            return engine_gone();
        }
        rx.await.unwrap_or_else(|_| engine_gone())
    }

    async fn open(&self, token: Option<String>, schedule: String) -> Opened {
        let (reply, rx) = oneshot::channel();
        let gone = || ApiError::new(503, "EngineStopped", "engine stopped");
        self.tx
            .send(EngineMsg::Open {
                token,
                schedule,
                reply,
            })
            .map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    fn input(&self, id: ChannelId, ev: ClientEvent) {
        let _ = self.tx.send(EngineMsg::Input(id, ev));
    }

    fn drop_channel(&self, id: ChannelId) {
        let _ = self.tx.send(EngineMsg::Drop(id));
    }
}

fn engine_gone() -> HttpResponse {
    HttpResponse {
        status: 503,
        body: serde_json::json!({ "error": ApiError::new(503, "EngineStopped", "engine stopped") }),
    }
}

fn run(mut gw: Gateway, rx: std_mpsc::Receiver<EngineMsg>) {
    let start = Instant::now();
    let wall = || start.elapsed().as_millis() as u64;
    let mut subscribers: BTreeMap<ChannelId, mpsc::UnboundedSender<ServerEvent>> = BTreeMap::new();
    loop {
        gw.advance_to(wall().max(gw.now()));
        forward(&mut gw, &mut subscribers);
        let wait = gw.next_wakeup().saturating_sub(wall());
        let wait = Duration::from_millis(wait.max(1)).min(MAX_IDLE);
        let msg = match rx.recv_timeout(wait) {
            Ok(m) => m,
            Err(std_mpsc::RecvTimeoutError::Timeout) => continue,
            Err(std_mpsc::RecvTimeoutError::Disconnected) => return,
        };
        gw.advance_to(wall().max(gw.now()));
        match msg {
            EngineMsg::Http(req, reply) => {
                debug!("{} {}", req.method, req.path);
                let _ = reply.send(gw.handle(&req));
            }
            EngineMsg::Open {
                token,
                schedule,
                reply,
            } => {
                let opened = gw.open_channel(token.as_deref(), &schedule).map(|id| {
                    let (tx, rx) = mpsc::unbounded_channel();
                    subscribers.insert(id, tx);
                    (id, rx)
                });
                let _ = reply.send(opened);
            }
            EngineMsg::Input(id, ev) => gw.channel_input(id, ev),
            EngineMsg::Drop(id) => {
                subscribers.remove(&id);
                gw.drop_channel(id);
            }
        }
        forward(&mut gw, &mut subscribers);
    }
}

fn forward(
    gw: &mut Gateway,
    subscribers: &mut BTreeMap<ChannelId, mpsc::UnboundedSender<ServerEvent>>,
) {
    let ids: Vec<ChannelId> = subscribers.keys().copied().collect();
    for id in ids {
        for ev in gw.take_events(id) {
            let terminal = ev.is_terminal();
            if subscribers[&id].send(ev).is_err() {
                gw.drop_channel(id);
                subscribers.remove(&id);
                break;
            }
            if terminal {
                subscribers.remove(&id);
                break;
            }
        }
    }
}

// ---- axum layer ----

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/api/exam/{schedule}/channel", get(channel_handler))
        .fallback(api_handler)
        .with_state(engine)
}

/// Binds and serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, engine: Engine) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_owned())
}

fn to_response(r: HttpResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(r.body)).into_response()
}

async fn api_handler(
    State(engine): State<Engine>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let req = HttpRequest {
        method: method.as_str().to_owned(),
        path: uri.path().to_owned(),
        token: bearer(&headers),
        body: body.to_vec(),
    };
    to_response(engine.request(req).await)
}

async fn channel_handler(
    State(engine): State<Engine>,
    Path(schedule): Path<String>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
    uri: Uri,
    ws: Result<WebSocketUpgrade, axum::extract::ws::rejection::WebSocketUpgradeRejection>,
) -> Response {
    let token = query
        .ok()
        .and_then(|Query(q)| q.get("token").cloned())
        .or_else(|| bearer(&headers));
    let Ok(ws) = ws else {
        // plain GET: the engine answers with the documented error
        let req = HttpRequest {
            method: "GET".into(),
            path: uri.path().to_owned(),
            token,
            body: Vec::new(),
        };
        return to_response(engine.request(req).await);
    };
    ws.on_upgrade(move |socket| channel_session(socket, engine, token, schedule))
}

async fn send_event(socket: &mut WebSocket, ev: &ServerEvent) -> bool {
    let text = serde_json::to_string(ev).expect("event serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn channel_session(
    mut socket: WebSocket,
    engine: Engine,
    token: Option<String>,
    schedule: String,
) {
    let (id, mut events) = match engine.open(token, schedule).await {
        Ok(opened) => opened,
        Err(e) => {
            let reason = match e.code.as_str() {
                "DuplicateChannel" => CloseReason::DuplicateChannel,
                "Unauthorized" => CloseReason::Unauthorized,
                _ => CloseReason::Rejected,
            };
            let closed = ServerEvent::Closed {
                reason,
                code: Some(e.code),
            };
            send_event(&mut socket, &closed).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    };
    loop {
        tokio::select! {
            ev = events.recv() => {
                let Some(ev) = ev else { break };
                if !send_event(&mut socket, &ev).await {
                    engine.drop_channel(id);
                    break;
                }
                if ev.is_terminal() {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientEvent>(&text) {
                    Ok(ev) => engine.input(id, ev),
                    Err(e) => warn!("channel {id}: ignoring malformed client event: {e}"),
                },
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => {
                    engine.drop_channel(id);
                    break;
                }
                Some(Ok(_)) => {}
            },
        }
    }
}
