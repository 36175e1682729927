//! Checkpoint decoding never panics; accepted checkpoints survive an
//! encode/decode round trip, and rebuilding a model from them either
//! succeeds or reports an error.
//!
//! ```bash
//! cargo +nightly fuzz run checkpoint_decode
//! ```

#![no_main]

use hcct::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::decode(data) else {
        return;
    };
    let again = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
    assert_eq!(again, ckpt);
    // keep model construction cheap: skip configs that would allocate large tensors
    if let Ok(cfg) = ckpt.model_config() {
        if cfg.input_extent <= 32 && cfg.embed_dim <= 64 && cfg.conv_channels.iter().all(|&c| c <= 64) {
            let _ = ckpt.to_model::<f32>();
        }
    }
});
