use std::io::{Cursor, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chanprune::fitness::remote::{self, Message, RemoteEvaluator, RemoteOptions};
use chanprune::fitness::NegL1Evaluator;
use chanprune::{EvalError, Evaluator, StructureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SERVER_IN: &str = include_str!("fixtures/server_session.in.jsonl");
const SERVER_OUT: &str = include_str!("fixtures/server_session.out.jsonl");
const CLIENT_SENT: &str = include_str!("fixtures/client_session.sent.jsonl");
const CLIENT_RECEIVED: &str = include_str!("fixtures/client_session.received.jsonl");

#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn opts() -> RemoteOptions {
    RemoteOptions {
        timeout: Duration::from_secs(10),
        ..Default::default()
    }
}

#[test]
fn server_replays_fixture_byte_for_byte() {
    let mut out = Vec::new();
    let stats = remote::serve(
        &mut NegL1Evaluator::new(3),
        Cursor::new(SERVER_IN),
        &mut out,
    )
    .unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), SERVER_OUT);
    assert_eq!(stats.evaluated, 2);
    assert_eq!(stats.errors, 2);
}

#[test]
fn client_replays_fixture_byte_for_byte() {
    let sink = Sink::default();
    let mut client =
        RemoteEvaluator::from_streams(Cursor::new(CLIENT_RECEIVED), sink.clone(), opts()).unwrap();
    client.check_dimension(3).unwrap();
    let a = client.evaluate(&StructureVector(vec![1, -2, 3])).unwrap();
    let b = client.evaluate(&StructureVector(vec![4, 0, -4])).unwrap();
    assert_eq!((a.value(), b.value()), (-6.0, -8.0));
    client.close();
    let sent = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
    assert_eq!(sent, CLIENT_SENT);
}

#[test]
fn fixture_lines_are_valid_messages() {
    for line in [CLIENT_SENT, CLIENT_RECEIVED, SERVER_OUT].concat().lines() {
        let msg = Message::parse(line).unwrap();
        assert_eq!(msg.to_line().trim_end(), line);
    }
}

fn loopback(pipelined: bool, n: usize) -> (usize, usize) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = thread::spawn(move || {
        remote::serve_tcp_once(&mut NegL1Evaluator::new(4), &listener).unwrap()
    });
    let mut client = RemoteEvaluator::connect(
        &addr,
        RemoteOptions {
            pipelined,
            ..opts()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch: Vec<StructureVector> = (0..n)
        .map(|_| StructureVector((0..4).map(|_| rng.gen_range(-1000..1000)).collect()))
        .collect();
    let got = client.evaluate_batch(&batch).unwrap();
    let exact = batch
        .iter()
        .zip(&got)
        .filter(|(s, f)| f.value() == -(s.0.iter().map(|v| v.abs()).sum::<i64>() as f64))
        .count();
    client.close();
    let stats = server.join().unwrap();
    (exact, stats.evaluated as usize)
}

#[test]
fn tcp_loopback_thousand_serial() {
    assert_eq!(loopback(false, 1000), (1000, 1000));
}

#[test]
fn tcp_loopback_thousand_pipelined() {
    assert_eq!(loopback(true, 1000), (1000, 1000));
}

#[test]
fn spawned_child_over_stdio() {
    let cmd = format!(
        "{} serve --evaluator neg-l1 --dims 2",
        env!("CARGO_BIN_EXE_chanprune")
    );
    let mut client = RemoteEvaluator::spawn(&cmd, opts()).unwrap();
    assert_eq!(client.descriptor().name, "neg-l1");
    let f = client.evaluate(&StructureVector(vec![-3, 4])).unwrap();
    assert_eq!(f.value(), -7.0);
    match client.evaluate(&StructureVector(vec![1])) {
        Err(EvalError::LengthMismatch {
            expected: 2,
            got: 1,
        }) => {}
        other => panic!("{other:?}"),
    }
    client.close();
}

#[test]
fn server_error_surfaces_with_id() {
    let replies = [
        Message::Descriptor(NegL1Evaluator::new(1).descriptor().clone()).to_line(),
        Message::Error {
            id: 0,
            message: "out of memory".into(),
        }
        .to_line(),
    ]
    .concat();
    let mut client =
        RemoteEvaluator::from_streams(Cursor::new(replies), Sink::default(), opts()).unwrap();
    match client.evaluate(&StructureVector(vec![1])) {
        Err(EvalError::Server { id: 0, message }) => assert_eq!(message, "out of memory"),
        other => panic!("{other:?}"),
    }
}
