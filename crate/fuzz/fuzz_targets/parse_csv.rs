#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(seqs) = wearnet::data::read_csv(data) else {
        return;
    };
    // Anything accepted must survive a write/read round trip unchanged.
    let text = wearnet::data::to_csv_string(&seqs).expect("accepted data serializes");
    let again = wearnet::parse_csv(&text).expect("written data parses");
    assert_eq!(seqs, again);
});
