//! Manifest parsing never panics, and accepted manifests render back to text
//! that parses to the same entries.
//!
//! ```bash
//! cargo +nightly fuzz run manifest_parse
//! ```

#![no_main]

use hcct::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(manifest) = Manifest::parse(text) else {
        return;
    };
    let rendered = manifest.render().expect("accepted manifest renders");
    let again = Manifest::parse(&rendered).expect("rendered manifest parses");
    assert_eq!(again.entries, manifest.entries);
});
