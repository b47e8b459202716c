#![no_main]

use libfuzzer_sys::fuzz_target;
use wearnet::SynthConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut cfg) = SynthConfig::from_json(text) else {
        return;
    };
    // Bound the work per input.
    cfg.n_sequences = cfg.n_sequences.min(4);
    cfg.length = cfg.length.min(64);
    if let Ok(seqs) = wearnet::synth_generate(&cfg) {
        let text = wearnet::data::to_csv_string(&seqs).expect("generated data serializes");
        assert_eq!(
            wearnet::parse_csv(&text).expect("generated data parses"),
            seqs
        );
    }
});
