mod common;

use std::fs;
use std::io::BufWriter;

use fatigue_core::data::{load_directory, read_image, stratified_split, write_pgm, Label};
use fatigue_core::{Error, GrayImage, Rng};

#[test]
fn adding_a_file_adds_one_item() {
    let dir = tempfile::tempdir().unwrap();
    common::write_blob_corpus(dir.path(), 5, 16, 1);
    let before = load_directory(dir.path()).unwrap();
    assert_eq!(before.counts(), [5, 5]);
    let img = GrayImage::filled(16, 16, 10.0).unwrap();
    write_pgm(&img, &dir.path().join("open/extra.pgm")).unwrap();
    fs::write(dir.path().join("open/notes.txt"), "ignored").unwrap();
    let after = load_directory(dir.path()).unwrap();
    assert_eq!(after.len(), before.len() + 1);
    assert_eq!(after.counts(), [5, 6]);
}

#[test]
fn empty_class_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    common::write_blob_corpus(dir.path(), 3, 8, 2);
    for entry in fs::read_dir(dir.path().join("closed")).unwrap() {
        fs::remove_file(entry.unwrap().path()).unwrap();
    }
    assert!(matches!(
        load_directory(dir.path()),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn png_rgb_is_read_as_luminance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.png");
    let file = fs::File::create(&path).unwrap();
    let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()
        .unwrap()
        .write_image_data(&[255, 0, 0, 10, 20, 30])
        .unwrap();
    let img = read_image(&path).unwrap();
    assert_eq!((img.width(), img.height()), (2, 1));
    assert!((img.get(0, 0) - 76.245).abs() < 1e-3);
    let expected = 0.299 * 10.0 + 0.587 * 20.0 + 0.114 * 30.0;
    assert!((img.get(0, 1) as f64 - expected).abs() < 1e-3);
}

#[test]
fn pgm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let mut rng = Rng::new(9, 0);
    let img = GrayImage::new(
        7,
        5,
        (0..35).map(|_| rng.uniform(0u8, 255) as f32).collect(),
    )
    .unwrap();
    write_pgm(&img, &path).unwrap();
    assert_eq!(read_image(&path).unwrap(), img);
}

#[test]
fn split_is_stratified_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    common::write_blob_corpus(dir.path(), 11, 8, 3);
    let ds = load_directory(dir.path()).unwrap();
    let (train, test) = stratified_split(&ds, 0.8, 42).unwrap();
    assert_eq!(train.counts(), [9, 9]);
    assert_eq!(test.counts(), [2, 2]);
    for item in test.items() {
        assert!(train.items().iter().all(|t| t.source != item.source));
    }
    let (again, _) = stratified_split(&ds, 0.8, 42).unwrap();
    assert_eq!(again.labels(), train.labels());
    assert!(
        train
            .items()
            .iter()
            .filter(|i| i.label == Label::Open)
            .count()
            == 9
    );
}
