#![no_main]

use libfuzzer_sys::fuzz_target;
use metagen::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::<f32>::from_bytes(data) {
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
    let _ = Checkpoint::<f64>::from_bytes(data);
});
