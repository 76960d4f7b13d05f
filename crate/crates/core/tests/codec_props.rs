use peershare_core::model::redact_for_viewer;
use peershare_core::protocol::{decode_request, decode_response, encode_request, encode_response, CodecError};
use peershare_testkit::strategies;
use proptest::prelude::*;
use serde_json::Value;

fn with_extra_fields(bytes: &[u8]) -> Vec<u8> {
    let mut value: Value = serde_json::from_slice(bytes).unwrap();
    let object = value.as_object_mut().unwrap();
    object.insert("x_future".into(), Value::from(42));
    for key in ["body", "result"] {
        if let Some(Value::Object(inner)) = object.get_mut(key) {
            inner.insert("x_future".into(), Value::from("ignored"));
        }
    }
    serde_json::to_vec(&value).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn request_round_trip(request in strategies::request()) {
        let bytes = encode_request(&request);
        prop_assert_eq!(decode_request(&bytes).unwrap(), request.clone());
        prop_assert_eq!(decode_request(&with_extra_fields(&bytes)).unwrap(), request);
    }

    #[test]
    fn response_round_trip((method, response) in strategies::response()) {
        let bytes = encode_response(&response);
        prop_assert_eq!(decode_response(method, &bytes).unwrap(), response.clone());
        prop_assert_eq!(decode_response(method, &with_extra_fields(&bytes)).unwrap(), response);
    }

    #[test]
    fn encoding_is_deterministic(request in strategies::request()) {
        let once = encode_request(&request);
        let twice = encode_request(&decode_request(&once).unwrap());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn dropping_a_required_field_is_named(request in strategies::request(), pick in any::<prop::sample::Index>()) {
        let mut value: Value = serde_json::from_slice(&encode_request(&request)).unwrap();
        let required = ["v", "method", "token", "identity", "body"];
        let field = required[pick.index(required.len())];
        value.as_object_mut().unwrap().remove(field);
        let err = decode_request(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        prop_assert!(matches!(err, CodecError::Malformed(_) | CodecError::Schema(_)));
        prop_assert!(err.to_string().contains(&format!("`{field}`")), "{err}");
    }

    #[test]
    fn non_owner_views_never_carry_owner_fields(item in strategies::stored_item(), viewer in "ps-[0-9a-f]{4}") {
        let view = redact_for_viewer(&item, &viewer);
        let bytes = serde_json::to_string(&view).unwrap();
        if viewer == item.owner_peershare_id {
            prop_assert!(bytes.contains("\"object_id\""));
            prop_assert!(bytes.contains("\"sharing_policy\""));
        } else {
            prop_assert!(!bytes.contains("\"object_id\""), "{bytes}");
            prop_assert!(!bytes.contains("\"sharing_policy\""), "{bytes}");
            prop_assert!(!bytes.contains("\"policy_source\""), "{bytes}");
            prop_assert!(!view.is_owner);
        }
        prop_assert_eq!(redact_for_viewer(&item, &viewer).strip_private(), view.clone().strip_private());
    }
}

#[test]
fn truncated_input_is_malformed() {
    let err = decode_request(br#"{"v":1,"method":"download""#).unwrap_err();
    assert!(matches!(err, CodecError::Malformed(_)));
}
