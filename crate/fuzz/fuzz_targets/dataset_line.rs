#![no_main]

use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use metagen::dataset::{generate, parse_record, DatasetMeta, SplitSpec};
use metagen::geometry::GridSpec;
use metagen::scattering::{AngleGrid, Illumination};

static META: LazyLock<DatasetMeta> = LazyLock::new(|| {
    let (grid, angles, ill) = (GridSpec::default(), AngleGrid::default(), Illumination::default());
    let records = generate(4, 0, &grid, &angles, &ill).unwrap();
    let split = SplitSpec {
        fractions: vec![0.5, 0.5],
        seed: 0,
    };
    DatasetMeta::build(&records, 0, grid, angles, ill, split).unwrap()
});

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_record(line, 1, &META) {
        assert_eq!(r.dscs.len(), META.angles.len());
    }
});
