#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsers must reject arbitrary input with an error, never a panic or an
// oversized allocation.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = nfnav::formats::parse_pairing(text);
    }
});
