mod common;

use common::*;
use fedtherm_core::wire::{
    decode_frame, decode_payload, deserialize_model, encode_frame, encode_payload, serialize_model, Frame, Message,
    MsgType,
};
use proptest::prelude::*;

#[test]
fn random_messages_round_trip_bit_exactly() {
    let mut r = rng(2024);
    for _ in 0..2000 {
        let msg = random_message(&mut r);
        let bytes = msg.encode().unwrap();
        let back = Message::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.msg_type(), msg.msg_type());
    }
}

#[test]
fn payloads_and_models_round_trip_bit_exactly() {
    let mut r = rng(7);
    for _ in 0..500 {
        let p = random_payload(&mut r);
        let bytes = encode_payload(&p).unwrap();
        assert_eq!(encode_payload(&decode_payload(&bytes).unwrap()).unwrap(), bytes);
        let m = random_model(&mut r);
        let bytes = serialize_model(&m).unwrap();
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(serialize_model(&back).unwrap(), bytes);
        assert_eq!(back.frozen_mask(), m.frozen_mask());
    }
}

#[test]
fn empty_hello_frame_has_the_documented_bytes() {
    let bytes = encode_frame(&Frame { msg_type: MsgType::Hello, payload: Vec::new() }).unwrap();
    assert_eq!(bytes, [0x46, 0x54, 0x4C, 0x31, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]);
    let hello = Message::Hello { client_id: String::new(), reference: None };
    assert_eq!(hello.encode().unwrap(), bytes);
}

#[test]
fn corrupted_frames_are_rejected() {
    let msg = Message::ClientError { round: 3, message: "disk full".into() };
    let good = msg.encode().unwrap();
    for i in 0..good.len() {
        let mut bad = good.clone();
        bad[i] ^= 0x40;
        assert!(Message::decode(&bad).is_err(), "flip at byte {i} accepted");
    }
    assert!(decode_frame(&good[..good.len() - 1]).is_err());
    let mut longer = good.clone();
    longer.push(0);
    assert!(decode_frame(&longer).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn arbitrary_bytes_never_panic_the_decoder(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = Message::decode(&bytes);
        let _ = decode_payload(&bytes);
        let _ = deserialize_model(&bytes);
    }

    #[test]
    fn valid_headers_with_junk_payloads_never_panic(ty in 1u8..=6, body in proptest::collection::vec(any::<u8>(), 0..48)) {
        let frame = Frame { msg_type: MsgType::from_u8(ty).unwrap(), payload: body };
        let _ = Message::decode(&encode_frame(&frame).unwrap());
    }
}
