#![no_main]

use libfuzzer_sys::fuzz_target;
use metagen::evaluation::TargetSpec;
use metagen::geometry::GridSpec;
use metagen::scattering::{AngleGrid, Illumination};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = TargetSpec::parse(text) {
        let _ = t.resolve(&GridSpec::default(), &AngleGrid::default(), &Illumination::default());
    }
});
