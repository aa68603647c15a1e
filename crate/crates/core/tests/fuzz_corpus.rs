//! Replays the checked-in fuzz corpus, plus truncations and byte flips of
//! every seed, through the parser entry points the fuzz targets cover.

use std::fs;
use std::path::PathBuf;

use metagen::cli::RunConfig;
use metagen::dataset::{generate, parse_record, DatasetMeta, SplitSpec};
use metagen::evaluation::TargetSpec;
use metagen::geometry::{GeometryFile, GridSpec};
use metagen::nn::Checkpoint;
use metagen::scattering::{AngleGrid, Illumination};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.into_iter().map(|p| fs::read(p).unwrap()).collect()
}

fn variants(seed: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![seed.to_vec()];
    for cut in [0, 1, seed.len() / 3, seed.len() / 2, seed.len().saturating_sub(1)] {
        out.push(seed[..cut.min(seed.len())].to_vec());
    }
    for i in (0..seed.len()).step_by(7.max(seed.len() / 64)) {
        for flip in [0x01u8, 0x80, 0xff] {
            let mut v = seed.to_vec();
            v[i] ^= flip;
            out.push(v);
        }
    }
    out
}

fn text_inputs(target: &str) -> Vec<String> {
    seeds(target)
        .iter()
        .flat_map(|s| variants(s))
        .map(|v| String::from_utf8_lossy(&v).into_owned())
        .collect()
}

#[test]
fn geometry_seeds() {
    let parsed: Vec<_> = seeds("geometry_json")
        .iter()
        .map(|s| GeometryFile::parse(std::str::from_utf8(s).unwrap()))
        .collect();
    assert!(parsed.iter().any(|r| r.is_ok()) && parsed.iter().any(|r| r.is_err()));
    for text in text_inputs("geometry_json") {
        if let Ok(v) = GeometryFile::parse(&text) {
            assert_eq!(
                GeometryFile::parse(&GeometryFile::from_vector(&v).to_json()).unwrap(),
                v
            );
        }
    }
}

#[test]
fn dataset_meta_seeds() {
    for s in seeds("dataset_meta") {
        DatasetMeta::parse(std::str::from_utf8(&s).unwrap()).unwrap();
    }
    for text in text_inputs("dataset_meta") {
        let _ = DatasetMeta::parse(&text);
    }
}

#[test]
fn dataset_line_seeds() {
    let (grid, angles, ill) = (GridSpec::default(), AngleGrid::default(), Illumination::default());
    let records = generate(4, 0, &grid, &angles, &ill).unwrap();
    let split = SplitSpec {
        fractions: vec![0.5, 0.5],
        seed: 0,
    };
    let meta = DatasetMeta::build(&records, 0, grid, angles, ill, split).unwrap();
    let first = seeds("dataset_line").remove(0);
    parse_record(std::str::from_utf8(&first).unwrap().trim(), 1, &meta).unwrap();
    for text in text_inputs("dataset_line") {
        let _ = parse_record(&text, 1, &meta);
    }
}

#[test]
fn checkpoint_seeds() {
    let all = seeds("checkpoint");
    assert!(all.iter().any(|s| Checkpoint::<f32>::from_bytes(s).is_ok()));
    assert!(all.iter().any(|s| Checkpoint::<f64>::from_bytes(s).is_ok()));
    for s in &all {
        for v in variants(s) {
            if let Ok(c) = Checkpoint::<f32>::from_bytes(&v) {
                assert_eq!(
                    Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap().to_bytes(),
                    c.to_bytes()
                );
            }
            let _ = Checkpoint::<f64>::from_bytes(&v);
        }
    }
}

#[test]
fn run_config_seeds() {
    for s in seeds("run_config") {
        RunConfig::parse(std::str::from_utf8(&s).unwrap()).unwrap();
    }
    for text in text_inputs("run_config") {
        let _ = RunConfig::parse(&text);
    }
}

#[test]
fn target_seeds() {
    let (grid, angles, ill) = (GridSpec::default(), AngleGrid::default(), Illumination::default());
    for s in seeds("target_json") {
        TargetSpec::parse(std::str::from_utf8(&s).unwrap())
            .unwrap()
            .resolve(&grid, &angles, &ill)
            .unwrap();
    }
    for text in text_inputs("target_json") {
        if let Ok(t) = TargetSpec::parse(&text) {
            let _ = t.resolve(&grid, &angles, &ill);
        }
    }
}
