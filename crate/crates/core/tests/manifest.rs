use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use irbseg::datamodel::{self, ClassSet, DatasetManifest, Domain, SampleRecord, Split};
use irbseg::Error;
use serde_json::json;

fn write_pair(dir: &Path, id: &str, mask: &GrayImage) {
    let img = RgbImage::from_pixel(mask.width(), mask.height(), Rgb([10, 20, 30]));
    img.save(dir.join(format!("{id}.png"))).unwrap();
    mask.save(dir.join(format!("{id}_mask.png"))).unwrap();
}

fn manifest_doc(samples: serde_json::Value) -> serde_json::Value {
    json!({
        "name": "t",
        "domain": "target_real",
        "split": "val",
        "class_set": [
            {"id": 0, "name": "BG", "is_foreground": false},
            {"id": 1, "name": "GL", "is_foreground": true},
            {"id": 2, "name": "EP", "is_foreground": true},
            {"id": 3, "name": "UV", "is_foreground": true}
        ],
        "samples": samples
    })
}

fn write_doc(dir: &Path, doc: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}

#[test]
fn empty_manifest_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_doc(dir.path(), &manifest_doc(json!([])));
    let m = datamodel::load_manifest(&path).unwrap();
    assert!(m.is_empty());
    assert_eq!(m.class_set, ClassSet::oropharyngeal());
}

#[test]
fn background_masks_give_full_background_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (5u32, 3u32);
    let mask = GrayImage::new(w, h);
    let mut samples = Vec::new();
    for i in 0..3 {
        let id = format!("bg{i}");
        write_pair(dir.path(), &id, &mask);
        samples.push(json!({"sample_id": id, "image": format!("{id}.png"), "mask": format!("{id}_mask.png")}));
    }
    let m = datamodel::load_manifest(&write_doc(dir.path(), &manifest_doc(json!(samples)))).unwrap();
    for s in &m.samples {
        // pixel-scan oracle over the mask file
        let raw = image::open(&s.mask_path).unwrap().to_luma8();
        let bg = raw.pixels().filter(|p| p.0[0] == 0).count() as u64;
        assert_eq!(bg, u64::from(w * h));
        assert_eq!(s.class_histogram[&0], bg);
        assert!((1..4u8).all(|k| s.class_histogram[&k] == 0));
        assert_eq!(datamodel::dominant_foreground_class(s, &m.class_set), None);
    }
}

#[test]
fn out_of_range_mask_value_names_sample_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut mask = GrayImage::new(4, 4);
    mask.put_pixel(2, 1, Luma([7]));
    write_pair(dir.path(), "bad", &mask);
    let doc = manifest_doc(json!([{"sample_id": "bad", "image": "bad.png", "mask": "bad_mask.png"}]));
    match datamodel::load_manifest(&write_doc(dir.path(), &doc)) {
        Err(Error::Validation { sample_id, reason }) => {
            assert_eq!(sample_id, "bad");
            assert!(reason.contains('7'), "{reason}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn size_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::new(4, 4).save(dir.path().join("a.png")).unwrap();
    GrayImage::new(4, 5).save(dir.path().join("a_mask.png")).unwrap();
    let doc = manifest_doc(json!([{"sample_id": "a", "image": "a.png", "mask": "a_mask.png"}]));
    assert!(matches!(
        datamodel::load_manifest(&write_doc(dir.path(), &doc)),
        Err(Error::Validation { sample_id, .. }) if sample_id == "a"
    ));
}

#[test]
fn missing_files_are_load_errors_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    match datamodel::load_manifest(&missing) {
        Err(Error::Io { path, .. }) | Err(Error::Load { path, .. }) => assert_eq!(path, missing),
        other => panic!("{other:?}"),
    }
    let doc = manifest_doc(json!([{"sample_id": "x", "image": "x.png", "mask": "x_mask.png"}]));
    match datamodel::load_manifest(&write_doc(dir.path(), &doc)) {
        Err(Error::Load { path, .. }) => assert!(path.ends_with("x.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stale_cached_histogram_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "a", &GrayImage::new(2, 2));
    let doc = manifest_doc(json!([{
        "sample_id": "a", "image": "a.png", "mask": "a_mask.png",
        "class_histogram": {"0": 3, "1": 1}
    }]));
    assert!(matches!(
        datamodel::load_manifest(&write_doc(dir.path(), &doc)),
        Err(Error::Validation { .. })
    ));
}

#[test]
fn rgba_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::new(2, 2).save(dir.path().join("a.png")).unwrap();
    RgbImage::new(2, 2).save(dir.path().join("a_mask.png")).unwrap();
    let doc = manifest_doc(json!([{"sample_id": "a", "image": "a.png", "mask": "a_mask.png"}]));
    assert!(datamodel::load_manifest(&write_doc(dir.path(), &doc)).is_err());
}

#[test]
fn save_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    let mut mask = GrayImage::new(6, 4);
    for x in 0..3 {
        mask.put_pixel(x, 1, Luma([2]));
    }
    mask.put_pixel(5, 3, Luma([3]));
    write_pair(&data, "s0", &mask);
    write_pair(&data, "s1", &GrayImage::new(6, 4));

    let cs = ClassSet::oropharyngeal();
    let record = |id: &str| {
        let mask = image::open(data.join(format!("{id}_mask.png"))).unwrap().to_luma8();
        SampleRecord {
            sample_id: id.into(),
            image_path: data.join(format!("{id}.png")),
            mask_path: data.join(format!("{id}_mask.png")),
            domain: Domain::TargetReal,
            class_histogram: datamodel::mask_histogram(&mask, &cs).unwrap(),
        }
    };
    let mut sim = DatasetManifest::empty("blend", Domain::SourceSim, Split::Train, cs.clone());
    sim.samples = vec![record("s0"), record("s1")];

    // manifest in a sibling directory so paths need `..`
    let path = dir.path().join("manifests").join("m.json");
    datamodel::save_manifest(&sim, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("../data/s0.png"), "{text}");
    let loaded = datamodel::load_manifest(&path).unwrap();
    assert_eq!(loaded, sim);
    assert_eq!(loaded.samples[0].class_histogram[&2], 3);
    assert_eq!(datamodel::dominant_foreground_class(&loaded.samples[0], &cs), Some(2));
}

#[test]
fn splits_are_disjoint_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = Vec::new();
    for i in 0..23 {
        let id = format!("s{i:02}");
        let mut mask = GrayImage::new(4, 4);
        mask.put_pixel(0, 0, Luma([(i % 3 + 1) as u8]));
        write_pair(dir.path(), &id, &mask);
        samples.push(json!({"sample_id": id, "image": format!("{id}.png"), "mask": format!("{id}_mask.png")}));
    }
    let m = datamodel::load_manifest(&write_doc(dir.path(), &manifest_doc(json!(samples)))).unwrap();
    for split in [datamodel::split_dataset, datamodel::split_dataset_stratified] {
        let a = split(&m, [0.6, 0.2, 0.2], 11).unwrap();
        let b = split(&m, [0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a, b);
        datamodel::check_disjoint(&[&a[0], &a[1], &a[2]]).unwrap();
        let total: usize = a.iter().map(DatasetManifest::len).sum();
        assert_eq!(total, 23);
    }
    let dup = m.clone();
    assert!(datamodel::check_disjoint(&[&m, &dup]).is_err());
}
