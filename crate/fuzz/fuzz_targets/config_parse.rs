//! `key = value` parsing never panics; accepted text round-trips through
//! render, and typed config reads return values or errors, never panics.
//!
//! ```bash
//! cargo +nightly fuzz run config_parse
//! ```

#![no_main]

use hcct::config::KeyValues;
use hcct::model::ModelConfig;
use hcct::train::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(kv) = KeyValues::parse(text) else {
        return;
    };
    let again = KeyValues::parse(&kv.render()).expect("rendered config parses");
    assert_eq!(again, kv);
    if let Ok(model) = ModelConfig::read_from(&kv, &ModelConfig::desk()) {
        let _ = model.validate().and_then(|()| model.shapes());
    }
    if let Ok(train) = TrainConfig::read_from(&kv, &TrainConfig::desk()) {
        let _ = train.validate();
    }
});
