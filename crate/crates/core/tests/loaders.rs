use std::fs;

use tract::data::{load_cifar10_bin, load_idx};
use tract::harness::{load_splits, DatasetKind, RunConfig};
use tract::Error;

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 3];
    for d in [count, rows, cols] {
        v.extend_from_slice(&d.to_be_bytes());
    }
    v.extend_from_slice(pixels);
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 1];
    v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

#[test]
fn idx_files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (im, lb) = (dir.path().join("im"), dir.path().join("lb"));
    fs::write(&im, idx_images(2, 2, 2, &[0, 1, 2, 3, 255, 254, 253, 252])).unwrap();
    fs::write(&lb, idx_labels(&[7, 2])).unwrap();
    let ds = load_idx(&im, &lb).unwrap();
    assert_eq!((ds.count, ds.c, ds.h, ds.w), (2, 1, 2, 2));
    assert_eq!(ds.image(1), &[255, 254, 253, 252]);
    assert_eq!(ds.labels, vec![7, 2]);

    fs::write(&im, idx_images(2, 2, 2, &[0, 1, 2])).unwrap();
    match load_idx(&im, &lb) {
        Err(Error::Format { msg, .. }) => assert!(msg.contains('8') && msg.contains('3'), "{msg}"),
        other => panic!("expected a format error, got {other:?}"),
    }
    assert!(matches!(load_idx(&dir.path().join("missing"), &lb), Err(Error::Io(_))));
}

#[test]
fn cifar_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let mut bytes = vec![3u8];
    bytes.extend((0..3072).map(|i| (i % 251) as u8));
    bytes.push(9);
    bytes.extend(std::iter::repeat_n(17u8, 3072));
    fs::write(&path, &bytes).unwrap();
    let ds = load_cifar10_bin(&path).unwrap();
    assert_eq!(ds.labels, vec![3, 9]);
    assert_eq!(ds.image(0)[1024], (1024 % 251) as u8);
    assert!(ds.image(1).iter().all(|&v| v == 17));

    fs::write(&path, &bytes[..3072]).unwrap();
    assert!(matches!(load_cifar10_bin(&path), Err(Error::Format { .. })));
}

#[test]
fn mnist_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i * 7 % 256) as u8).collect();
    for (im, lb) in [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")] {
        fs::write(dir.path().join(im), idx_images(3, 28, 28, &pixels)).unwrap();
        fs::write(dir.path().join(lb), idx_labels(&[0, 1, 2])).unwrap();
    }
    let cfg = RunConfig {
        dataset: DatasetKind::Mnist,
        data_dir: Some(dir.path().to_path_buf()),
        train_size: Some(2),
        ..RunConfig::default()
    };
    let s = load_splits(&cfg).unwrap();
    assert_eq!((s.train.count, s.test.count), (2, 3));
    assert_eq!(s.train.classes, 10);
}
