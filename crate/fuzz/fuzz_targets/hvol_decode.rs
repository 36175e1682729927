//! HVOL decoding never panics, and anything it accepts re-encodes to the
//! same bytes.
//!
//! ```bash
//! cargo +nightly fuzz run hvol_decode
//! ```

#![no_main]

use hcct::data::{decode_hvol, encode_hvol, Volume};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((extents, voxels)) = decode_hvol(data) {
        assert_eq!(encode_hvol(extents, &voxels), data);
    }
    if let Ok(volume) = Volume::decode(data, "fuzz") {
        assert_eq!(volume.encode(), data);
    }
});
