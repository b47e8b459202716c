#![no_main]

use libfuzzer_sys::fuzz_target;
use wearnet::CellParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(params) = CellParams::from_json(text) else {
        return;
    };
    let json = params.to_json().expect("accepted params serialize");
    assert_eq!(
        CellParams::from_json(&json).expect("written params parse"),
        params
    );
    let x = wearnet::Vector::zeros(params.input_dim);
    wearnet::step(&params, &wearnet::zero_state(&params), &x).expect("validated params step");
});
