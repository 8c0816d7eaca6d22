//! TCP transport: a per-episode responder served over a socket, and a
//! standalone broker server speaking line-delimited JSON requests.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use henri::agent::Coordinator;
use henri::broker::{
    AdvertisementRecord, AgentRecord, AttributeRecord, MatchProposal, ProductRecord, Repository,
};
use henri::ids::{AgentId, EpisodeId, ProductId};
use henri::protocol::{self, NegotiationMessage};

use crate::runner::{Peer, ResponderState};
use crate::SimError;

/// Session framing for the episode link. Anything that is not a
/// negotiation message travels as one of these control lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
enum LinkControl {
    OpenRound,
    NoOffer,
    EndTurn,
    Tick,
    Close,
}

fn write_line(stream: &mut TcpStream, line: &str) -> Result<(), SimError> {
    stream.write_all(line.as_bytes())?;
    if !line.ends_with('\n') {
        stream.write_all(b"\n")?;
    }
    Ok(())
}

fn control_line(ctl: &LinkControl) -> String {
    serde_json::to_string(ctl).expect("control lines serialize")
}

enum LinkLine {
    Message(NegotiationMessage),
    Control(LinkControl),
}

fn parse_link_line(raw: &str) -> Result<LinkLine, SimError> {
    let probe: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| SimError::Transport(format!("bad link line: {e}")))?;
    if probe.get("link").is_some() {
        let ctl = serde_json::from_value(probe)
            .map_err(|e| SimError::Transport(format!("bad control line: {e}")))?;
        Ok(LinkLine::Control(ctl))
    } else {
        Ok(LinkLine::Message(protocol::decode(raw)?))
    }
}

/// Driver-side proxy for a responder living behind a socket.
pub(crate) struct TcpPeer {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
    handle: Option<JoinHandle<Result<(), SimError>>>,
}

impl TcpPeer {
    /// Binds an ephemeral loopback port, moves the coordinator into a
    /// responder thread, and connects to it.
    pub fn spawn(coord: Coordinator) -> Result<TcpPeer, SimError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let handle = std::thread::spawn(move || -> Result<(), SimError> {
            let (stream, _) = listener.accept()?;
            responder_loop(stream, coord)
        });
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(TcpPeer {
            stream,
            reader,
            handle: Some(handle),
        })
    }

    fn read_until_end_turn(&mut self) -> Result<Vec<NegotiationMessage>, SimError> {
        let mut out = Vec::new();
        loop {
            let mut line = String::new();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(SimError::Transport("peer hung up mid-turn".into()));
            }
            match parse_link_line(&line)? {
                LinkLine::Message(msg) => out.push(msg),
                LinkLine::Control(LinkControl::NoOffer) => {}
                LinkLine::Control(LinkControl::EndTurn) => return Ok(out),
                LinkLine::Control(other) => {
                    return Err(SimError::Transport(format!(
                        "unexpected control line {other:?}"
                    )))
                }
            }
        }
    }
}

impl Peer for TcpPeer {
    fn open_round(&mut self) -> Result<Option<NegotiationMessage>, SimError> {
        write_line(&mut self.stream, &control_line(&LinkControl::OpenRound))?;
        Ok(self.read_until_end_turn()?.into_iter().next())
    }

    fn deliver(&mut self, msg: &NegotiationMessage) -> Result<Vec<NegotiationMessage>, SimError> {
        write_line(&mut self.stream, &protocol::encode(msg))?;
        self.read_until_end_turn()
    }

    fn tick(&mut self) -> Result<(), SimError> {
        write_line(&mut self.stream, &control_line(&LinkControl::Tick))?;
        Ok(())
    }

    fn close(mut self: Box<Self>) -> Result<Option<Coordinator>, SimError> {
        write_line(&mut self.stream, &control_line(&LinkControl::Close))?;
        if let Some(handle) = self.handle.take() {
            handle
                .join()
                .map_err(|_| SimError::Transport("responder thread panicked".into()))??;
        }
        Ok(None)
    }
}

/// Remote end of the episode link: runs the shared responder logic
/// against lines arriving on the socket.
fn responder_loop(stream: TcpStream, coord: Coordinator) -> Result<(), SimError> {
    let mut responder = ResponderState::new(coord);
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(()); // driver vanished; nothing left to do
        }
        match parse_link_line(&line)? {
            LinkLine::Control(LinkControl::OpenRound) => {
                match responder.open_round()? {
                    Some(offer) => write_line(&mut writer, &protocol::encode(&offer))?,
                    None => write_line(&mut writer, &control_line(&LinkControl::NoOffer))?,
                }
                write_line(&mut writer, &control_line(&LinkControl::EndTurn))?;
            }
            LinkLine::Control(LinkControl::Tick) => responder.tick()?,
            LinkLine::Control(LinkControl::Close) => return Ok(()),
            LinkLine::Control(other) => {
                return Err(SimError::Transport(format!(
                    "unexpected control line {other:?}"
                )))
            }
            LinkLine::Message(msg) => {
                for reply in responder.deliver(&msg)? {
                    write_line(&mut writer, &protocol::encode(&reply))?;
                }
                write_line(&mut writer, &control_line(&LinkControl::EndTurn))?;
            }
        }
    }
}

/// Requests accepted by the standalone broker server, one JSON object
/// per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BrokerRequest {
    RegisterAgent { record: AgentRecord },
    RegisterProduct { record: ProductRecord, attributes: AttributeRecord },
    SubmitAdvertisement { record: AdvertisementRecord },
    Tick,
    Match,
    JoinOngoing { agent_id: AgentId, product_id: ProductId },
    RecordOffer { episode_id: EpisodeId },
    OpenEpisode { product_id: ProductId, participants: Vec<AgentId> },
    CloseEpisode { episode_id: EpisodeId, retire_ads: bool },
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrokerResponse {
    Ok(serde_json::Value),
    Err(String),
}

fn handle_request(repo: &mut Repository, req: BrokerRequest) -> BrokerResponse {
    fn ok<T: Serialize>(value: T) -> BrokerResponse {
        BrokerResponse::Ok(serde_json::to_value(value).expect("responses serialize"))
    }
    let result: Result<BrokerResponse, henri::broker::BrokerError> = (|| {
        Ok(match req {
            BrokerRequest::RegisterAgent { record } => ok(repo.register_agent(record)?),
            BrokerRequest::RegisterProduct { record, attributes } => {
                ok(repo.register_product(record, attributes)?)
            }
            BrokerRequest::SubmitAdvertisement { record } => {
                ok(repo.submit_advertisement(record)?)
            }
            BrokerRequest::Tick => ok(repo.tick()),
            BrokerRequest::Match => {
                let proposals: Vec<MatchProposal> = repo.match_advertisements();
                ok(proposals)
            }
            BrokerRequest::JoinOngoing { agent_id, product_id } => {
                ok(repo.join_ongoing(&agent_id, &product_id)?)
            }
            BrokerRequest::RecordOffer { episode_id } => ok(repo.record_offer(&episode_id)?),
            BrokerRequest::OpenEpisode { product_id, participants } => {
                ok(repo.open_episode(&product_id, participants)?)
            }
            BrokerRequest::CloseEpisode { episode_id, retire_ads } => {
                repo.close_episode(&episode_id, retire_ads)?;
                ok(())
            }
            BrokerRequest::Snapshot => {
                let mut buf = Vec::new();
                repo.snapshot(&mut buf).expect("in-memory write");
                ok(String::from_utf8(buf).expect("snapshot is utf-8"))
            }
        })
    })();
    result.unwrap_or_else(|e| BrokerResponse::Err(e.to_string()))
}

/// Serves the repository over a listener. Requests across all
/// connections are applied in accept-then-arrival order, giving the
/// serialized history the repository contract asks for. Processes
/// `max_connections` connections and returns (pass `usize::MAX` to
/// serve forever).
pub fn serve_broker(
    listener: TcpListener,
    mut repo: Repository,
    max_connections: usize,
) -> Result<Repository, SimError> {
    let mut served = 0;
    while served < max_connections {
        let (stream, _) = listener.accept()?;
        served += 1;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            let response = match serde_json::from_str::<BrokerRequest>(&line) {
                Ok(req) => handle_request(&mut repo, req),
                Err(e) => BrokerResponse::Err(format!("bad request: {e}")),
            };
            let encoded = serde_json::to_string(&response).expect("responses serialize");
            write_line(&mut writer, &encoded)?;
        }
    }
    Ok(repo)
}

/// Line-oriented client for [`serve_broker`].
pub struct BrokerClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl BrokerClient {
    pub fn connect(addr: &str) -> Result<BrokerClient, SimError> {
        let stream = TcpStream::connect(addr)?;
        Ok(BrokerClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    pub fn request(&mut self, req: &BrokerRequest) -> Result<BrokerResponse, SimError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        write_line(&mut self.writer, &line)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(SimError::Transport("broker hung up".into()));
        }
        serde_json::from_str(&reply)
            .map_err(|e| SimError::Transport(format!("bad broker response: {e}")))
    }
}
