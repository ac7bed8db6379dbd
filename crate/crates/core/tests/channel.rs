//! Wire format round trips, corruption detection and both transports.

use std::net::TcpListener;
use std::thread;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitlab::channel::{
    decode, encode, in_process_pair, read_frame, ChannelMessage, CodecError, MessageKind, Socket, Transport,
};
use splitlab::Error;

fn random_message(rng: &mut ChaCha8Rng, kind: MessageKind) -> ChannelMessage {
    let ndim = rng.gen_range(0..5);
    let shape: Vec<u32> = (0..ndim).map(|_| rng.gen_range(1..7)).collect();
    let len = if ndim == 0 {
        0
    } else {
        shape.iter().product::<u32>() as usize
    };
    // Arbitrary bit patterns, including NaN payloads, must survive unchanged.
    let payload = (0..len).map(|_| f32::from_bits(rng.gen())).collect();
    ChannelMessage::new(kind, rng.gen(), shape, payload).unwrap()
}

#[test]
fn thousand_random_frames_per_kind_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for kind in MessageKind::ALL {
        for _ in 0..1000 {
            let msg = random_message(&mut rng, kind);
            let bytes = encode(&msg);
            assert_eq!(bytes.len(), msg.encoded_len());
            let back = decode(&bytes).unwrap();
            assert_eq!(back.kind, msg.kind);
            assert_eq!(back.batch_id, msg.batch_id);
            assert_eq!(back.shape(), msg.shape());
            assert_eq!(encode(&back), bytes);
        }
    }
}

#[test]
fn every_single_byte_corruption_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in MessageKind::ALL {
        for _ in 0..50 {
            let msg = random_message(&mut rng, kind);
            let bytes = encode(&msg);
            for pos in 0..bytes.len() {
                let mut bad = bytes.clone();
                bad[pos] ^= rng.gen_range(1..=255u8);
                assert!(
                    matches!(decode(&bad), Err(CodecError::Crc { .. })),
                    "corruption at byte {pos} of {} went unnoticed",
                    bytes.len()
                );
            }
        }
    }
}

#[test]
fn truncated_frames_are_rejected() {
    let msg = ChannelMessage::new(MessageKind::ForwardActivation, 3, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let bytes = encode(&msg);
    for cut in 0..bytes.len() {
        assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
}

#[test]
fn stream_reader_reads_consecutive_frames_then_reports_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let msgs: Vec<ChannelMessage> = MessageKind::ALL.iter().map(|&k| random_message(&mut rng, k)).collect();
    let stream: Vec<u8> = msgs.iter().flat_map(encode).collect();
    let mut cursor = std::io::Cursor::new(stream);
    for m in &msgs {
        assert_eq!(encode(&read_frame(&mut cursor).unwrap()), encode(m));
    }
    assert!(matches!(read_frame(&mut cursor), Err(Error::Closed)));
}

fn exchange(mut a: impl Transport, mut b: impl Transport + 'static) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let msgs: Vec<ChannelMessage> = (0..40)
        .map(|i| random_message(&mut rng, MessageKind::ALL[i % 4]))
        .collect();
    let expected: Vec<Vec<u8>> = msgs.iter().map(encode).collect();
    let echo = thread::spawn(move || {
        for _ in 0..40 {
            let m = b.recv().unwrap();
            b.send(&m).unwrap();
        }
    });
    for (m, bytes) in msgs.iter().zip(&expected) {
        a.send(m).unwrap();
        assert_eq!(&encode(&a.recv().unwrap()), bytes);
    }
    echo.join().unwrap();
}

#[test]
fn in_process_echo() {
    let (a, b) = in_process_pair();
    exchange(a, b);
}

#[test]
fn socket_loopback_echo() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || Socket::accept(&listener).unwrap());
    let client = Socket::connect(addr).unwrap();
    exchange(client, server.join().unwrap());
}

#[test]
fn dropped_peer_is_reported_as_closed() {
    let (mut a, b) = in_process_pair();
    drop(b);
    assert!(matches!(a.recv(), Err(Error::Closed)));
}

proptest! {
    #[test]
    fn finite_payloads_round_trip_exactly(
        kind in 0usize..4,
        batch_id in any::<u64>(),
        dims in proptest::collection::vec(1u32..5, 1..4),
        seed in any::<u64>(),
    ) {
        let len = dims.iter().product::<u32>() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let payload: Vec<f32> = (0..len).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let msg = ChannelMessage::new(MessageKind::ALL[kind], batch_id, dims, payload).unwrap();
        prop_assert_eq!(decode(&encode(&msg)).unwrap(), msg);
    }
}
