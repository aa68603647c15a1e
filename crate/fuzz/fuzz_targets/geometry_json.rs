#![no_main]

use libfuzzer_sys::fuzz_target;
use metagen::geometry::{decode, validate, GeometryFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = GeometryFile::parse(text) {
        assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(validate(&decode(&v)).is_empty());
        let again = GeometryFile::parse(&GeometryFile::from_vector(&v).to_json()).expect("roundtrip");
        assert_eq!(again, v);
    }
});
