#![no_main]

use lanetopo::eval::FuseRule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rule) = text.parse::<FuseRule>() {
            let shown = rule.to_string();
            assert_eq!(shown.parse::<FuseRule>().ok(), Some(rule));
        }
    }
});
