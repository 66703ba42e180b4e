//! A minimal protocol client, used by the script runner and tests.

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::protocol::{ClientMessage, ClientRole, ServerMessage};

pub type ClientError = tokio_tungstenite::tungstenite::Error;

pub struct WsClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl WsClient {
    /// Connects and sends the hello. The reply (welcome or refused) is the
    /// first message returned by `recv`.
    pub async fn connect(url: &str, role: ClientRole) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            let _ = s.set_nodelay(true);
        }
        let mut c = WsClient { ws };
        c.send(&ClientMessage::Hello {
            role,
            client_info: None,
        })
        .await?;
        Ok(c)
    }

    pub async fn send(&mut self, msg: &ClientMessage) -> Result<(), ClientError> {
        let json = serde_json::to_string(msg).expect("client messages always serialize");
        self.ws.send(Message::text(json)).await
    }

    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::text(text.to_string())).await
    }

    /// Next server message; `None` once the connection is closed.
    pub async fn recv(&mut self) -> Option<ServerMessage> {
        while let Some(frame) = self.ws.next().await {
            match frame.ok()? {
                Message::Text(t) => {
                    if let Ok(m) = serde_json::from_str(&t) {
                        return Some(m);
                    }
                }
                Message::Close(_) => return None,
                _ => {}
            }
        }
        None
    }

    pub async fn recv_timeout(&mut self, d: Duration) -> Option<ServerMessage> {
        tokio::time::timeout(d, self.recv()).await.ok().flatten()
    }

    /// Reads until `pred` matches or `d` elapses.
    pub async fn wait_for(&mut self, d: Duration, mut pred: impl FnMut(&ServerMessage) -> bool) -> Option<ServerMessage> {
        let deadline = tokio::time::Instant::now() + d;
        loop {
            let m = tokio::time::timeout_at(deadline, self.recv()).await.ok()??;
            if pred(&m) {
                return Some(m);
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}
