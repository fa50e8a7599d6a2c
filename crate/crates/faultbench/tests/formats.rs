use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use faultbench::config::{DataName, ExperimentConfig};
use faultbench::datasets::{fashion_mnist, prepare};
use faultbench::fetch::{fetch, sha256_hex, FetchError, FILES};
use faultbench::io::{load_idx, load_model, read_maybe_gz, save_model, IoError};
use faultbench::Error;
use faultbench_core::{Network, StreamRng};
use flate2::write::GzEncoder;
use flate2::Compression;

fn idx_images(count: usize, side: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803u32, count as u32, side as u32, side as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..count * side * side).map(|i| (i * 37 % 256) as u8));
    b
}

fn idx_labels(count: usize) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0x0801u32.to_be_bytes());
    b.extend_from_slice(&(count as u32).to_be_bytes());
    b.extend((0..count).map(|i| (i % 10) as u8));
    b
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

/// Writes a miniature FashionMNIST (60 train, 20 test, 4x4 pixels).
fn write_mirror(dir: &Path) -> BTreeMap<String, String> {
    fs::create_dir_all(dir).unwrap();
    let parts = [idx_images(60, 4), idx_labels(60), idx_images(20, 4), idx_labels(20)];
    let mut digests = BTreeMap::new();
    for (name, raw) in FILES.iter().zip(parts) {
        let bytes = gz(&raw);
        digests.insert(name.to_string(), sha256_hex(&bytes));
        fs::write(dir.join(name), bytes).unwrap();
    }
    digests
}

#[test]
fn gzip_is_detected_by_magic() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = idx_labels(5);
    fs::write(tmp.path().join("plain"), &raw).unwrap();
    fs::write(tmp.path().join("packed"), gz(&raw)).unwrap();
    assert_eq!(read_maybe_gz(&tmp.path().join("plain")).unwrap(), raw);
    assert_eq!(read_maybe_gz(&tmp.path().join("packed")).unwrap(), raw);
}

#[test]
fn idx_pair_loads_and_scales() {
    let tmp = tempfile::tempdir().unwrap();
    let (img, lab) = (tmp.path().join("img"), tmp.path().join("lab"));
    fs::write(&img, gz(&idx_images(3, 2))).unwrap();
    fs::write(&lab, idx_labels(3)).unwrap();
    let d = load_idx(&img, &lab, "tiny").unwrap();
    assert_eq!((d.len(), d.dim(), d.num_classes()), (3, 4, 10));
    assert_eq!(d.labels(), &[0, 1, 2]);
    // pixel 1 of the fixture is 37
    assert_eq!(d.inputs().get(0, 1), 37.0 / 255.0);
}

#[test]
fn idx_errors_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (img, lab) = (tmp.path().join("img"), tmp.path().join("lab"));
    fs::write(&img, idx_images(3, 2)).unwrap();
    let mut short = idx_labels(3);
    short.pop();
    fs::write(&lab, short).unwrap();
    match load_idx(&img, &lab, "tiny") {
        Err(IoError::Format { path, .. }) => assert_eq!(path, lab),
        other => panic!("expected a label format error, got {other:?}"),
    }
    let mut bad = idx_images(3, 2);
    bad[3] = 0x01;
    fs::write(&img, bad).unwrap();
    fs::write(&lab, idx_labels(3)).unwrap();
    match load_idx(&img, &lab, "tiny") {
        Err(e @ IoError::Format { .. }) => assert!(e.to_string().contains("magic"), "{e}"),
        other => panic!("expected an image format error, got {other:?}"),
    }
}

#[test]
fn model_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let net = Network::init(&[5, 7, 3], &mut StreamRng::new(4, "init")).unwrap();
    let path = tmp.path().join("m.fbn1");
    save_model(&path, &net).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, net);
    fs::write(&path, b"FBN2").unwrap();
    assert!(matches!(load_model(&path), Err(IoError::Format { .. })));
}

#[test]
fn fetch_from_file_mirror_verifies_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let mirror = tmp.path().join("mirror");
    let digests = write_mirror(&mirror);
    let url = format!("file://{}", mirror.display());
    let dest = tmp.path().join("data");

    let got = fetch(&url, &dest, &digests).unwrap();
    assert!(got.iter().all(|f| f.verified && !f.cached));
    for f in FILES {
        assert_eq!(fs::read(dest.join(f)).unwrap(), fs::read(mirror.join(f)).unwrap());
    }
    // second fetch keeps the verified files
    assert!(fetch(&url, &dest, &digests).unwrap().iter().all(|f| f.cached));

    // unpinned downloads are accepted and report their digest
    let loose = fetch(&url, &tmp.path().join("loose"), &BTreeMap::new()).unwrap();
    assert!(loose.iter().all(|f| !f.verified && f.sha256 == digests[&f.file]));

    let mut wrong = digests.clone();
    wrong.insert(FILES[2].into(), "00".repeat(32));
    match fetch(&url, &tmp.path().join("bad"), &wrong) {
        Err(FetchError::Digest { file, .. }) => assert_eq!(file, FILES[2]),
        other => panic!("expected a digest mismatch, got {other:?}"),
    }
    assert!(!tmp.path().join("bad").join(FILES[2]).exists());
}

#[test]
fn fetched_fixture_feeds_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    write_mirror(tmp.path());
    let (train, test) = &*fashion_mnist(tmp.path()).unwrap();
    assert_eq!((train.len(), test.len(), train.dim()), (60, 20, 16));

    let cfg = ExperimentConfig::parse(&format!(
        "regime=natural\ndata.name=fashion_mnist\ndata.train_size=30\ndata.test_size=10\ndata.cache_dir={}\n",
        tmp.path().display()
    ))
    .unwrap();
    assert_eq!(cfg.data.name, DataName::FashionMnist);
    let (tr, te) = prepare(&cfg.data, 3).unwrap();
    assert_eq!((tr.len(), te.len()), (30, 10));
    assert_eq!(tr.class_counts(), vec![3; 10]);
    let (tr2, _) = prepare(&cfg.data, 3).unwrap();
    assert_eq!(tr.inputs(), tr2.inputs());
}

#[test]
fn missing_data_says_how_to_fetch() {
    let tmp = tempfile::tempdir().unwrap();
    match fashion_mnist(&tmp.path().join("nowhere")) {
        Err(Error::MissingData(msg)) => {
            assert!(msg.contains("faultbench fetch") && msg.contains("FAULTBENCH_DATA_DIR"), "{msg}")
        }
        other => panic!("expected missing data, got {:?}", other.map(|_| ())),
    }
}
