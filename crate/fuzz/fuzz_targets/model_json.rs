#![no_main]

use libfuzzer_sys::fuzz_target;
use wearnet::StateSpaceModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = StateSpaceModel::from_json(text) else {
        return;
    };
    let json = model.to_json().expect("accepted model serializes");
    assert_eq!(
        StateSpaceModel::from_json(&json).expect("written model parses"),
        model
    );
    let _ = model.prognose_online(&[0.5, 1.0, 1.5], 8);
});
