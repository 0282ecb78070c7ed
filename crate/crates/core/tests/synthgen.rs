use std::path::Path;

use irbseg::datamodel::{self, ClassSet, Domain};
use irbseg::synthgen::{self, generate_domain_pair, SceneGeometry, SceneSpec, EP, GL, UV};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn tree_digest(root: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&f).unwrap());
    }
    format!("{:x}", hasher.finalize())
}

fn spec(seed: u64) -> SceneSpec {
    SceneSpec {
        image_size: (32, 40),
        seed,
        ..Default::default()
    }
}

#[test]
fn generation_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    generate_domain_pair(&spec(4), 9, 6, a.path()).unwrap();
    generate_domain_pair(&spec(4), 9, 6, b.path()).unwrap();
    generate_domain_pair(&spec(5), 9, 6, c.path()).unwrap();
    assert_eq!(tree_digest(a.path()), tree_digest(b.path()));
    assert_ne!(tree_digest(a.path()), tree_digest(c.path()));
}

#[test]
fn counts_domains_and_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, real) = generate_domain_pair(&spec(1), 7, 5, dir.path()).unwrap();
    assert_eq!((sim.len(), real.len()), (7, 5));
    assert!(sim.samples.iter().all(|s| s.domain == Domain::SourceSim));
    assert!(real.samples.iter().all(|s| s.domain == Domain::TargetReal));
    datamodel::check_disjoint(&[&sim, &real]).unwrap();
    for s in sim.samples.iter().chain(&real.samples) {
        let img = irbseg::util::read_rgb(&s.image_path).unwrap();
        // image_size is (height, width)
        assert_eq!(img.dimensions(), (40, 32));
    }
    // manifests on disk validate and match the returned ones
    assert_eq!(datamodel::load_manifest(&dir.path().join("sim/manifest.json")).unwrap(), sim);
    assert_eq!(datamodel::load_manifest(&dir.path().join("real/manifest.json")).unwrap(), real);
}

#[test]
fn full_presence_puts_every_class_in_every_mask() {
    let dir = tempfile::tempdir().unwrap();
    let s = SceneSpec {
        class_presence_probabilities: [1.0; 3],
        ..spec(2)
    };
    let (sim, real) = generate_domain_pair(&s, 12, 12, dir.path()).unwrap();
    for sample in sim.samples.iter().chain(&real.samples) {
        // pixel-scan oracle over the written mask
        let mask = image::open(&sample.mask_path).unwrap().to_luma8();
        let mut counts = [0u64; 4];
        for p in mask.pixels() {
            counts[usize::from(p.0[0])] += 1;
        }
        for k in 0..4u8 {
            assert_eq!(sample.class_histogram[&k], counts[usize::from(k)], "{}", sample.sample_id);
        }
        assert!(counts[1..].iter().all(|&c| c > 0), "{}: {counts:?}", sample.sample_id);
    }
}

#[test]
fn low_presence_yields_varied_class_content() {
    let dir = tempfile::tempdir().unwrap();
    let s = SceneSpec {
        class_presence_probabilities: [0.3; 3],
        ..spec(3)
    };
    let (sim, _) = generate_domain_pair(&s, 30, 3, dir.path()).unwrap();
    let partial = sim
        .samples
        .iter()
        .filter(|x| (1..4u8).any(|k| x.class_histogram[&k] == 0))
        .count();
    assert!(partial > 5, "{partial}");
    // the focus class cycles GL, EP, UV and always dominates
    for (i, x) in sim.samples.iter().enumerate() {
        let dominant = datamodel::dominant_foreground_class(x, &sim.class_set);
        assert_eq!(dominant, Some([GL, EP, UV][i % 3]), "{}", x.sample_id);
    }
}

#[test]
fn both_domains_share_the_label_space_but_not_the_look() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, real) = generate_domain_pair(&spec(6), 6, 6, dir.path()).unwrap();
    assert_eq!(sim.class_set, ClassSet::oropharyngeal());
    assert_eq!(real.class_set, sim.class_set);
    let mean = |m: &datamodel::DatasetManifest| {
        let mut acc = [0f64; 3];
        let mut n = 0f64;
        for s in &m.samples {
            for p in irbseg::util::read_rgb(&s.image_path).unwrap().pixels() {
                for c in 0..3 {
                    acc[c] += f64::from(p.0[c]);
                }
                n += 1.0;
            }
        }
        acc.map(|a| a / n)
    };
    let (ms, mr) = (mean(&sim), mean(&real));
    let dist = ms.iter().zip(&mr).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 10.0, "{ms:?} vs {mr:?}");
}

/// Independent containment tests: the ellipse via its implicit quadratic form,
/// the triangle via barycentric coordinates.
fn oracle_class(g: &SceneGeometry, x: f64, y: f64) -> u8 {
    let in_triangle = g.uvula.is_some_and(|t| {
        let [(x1, y1), (x2, y2), (x3, y3)] = t.vertices;
        let det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
        let l1 = ((y2 - y3) * (x - x3) + (x3 - x2) * (y - y3)) / det;
        let l2 = ((y3 - y1) * (x - x3) + (x1 - x3) * (y - y3)) / det;
        let l3 = 1.0 - l1 - l2;
        let eps = 1e-12;
        l1 >= -eps && l2 >= -eps && l3 >= -eps
    });
    let in_crescent = g.epiglottis.is_some_and(|c| {
        let d_out = (x - c.cx).powi(2) + (y - c.cy).powi(2);
        let d_in = (x - c.inner_cx).powi(2) + (y - c.inner_cy).powi(2);
        d_out <= c.outer_radius.powi(2) && d_in > c.inner_radius.powi(2)
    });
    let in_ellipse = g.glottis.is_some_and(|e| {
        let (a2, b2) = (e.semi_major.powi(2), e.semi_minor.powi(2));
        let (s, c) = e.rotation.sin_cos();
        let qa = c * c / a2 + s * s / b2;
        let qb = 2.0 * s * c * (1.0 / a2 - 1.0 / b2);
        let qc = s * s / a2 + c * c / b2;
        let (dx, dy) = (x - e.cx, y - e.cy);
        qa * dx * dx + qb * dx * dy + qc * dy * dy <= 1.0
    });
    if in_triangle {
        UV
    } else if in_crescent {
        EP
    } else if in_ellipse {
        GL
    } else {
        0
    }
}

#[test]
fn rasterization_matches_independent_geometry_oracle() {
    let cs = ClassSet::oropharyngeal();
    let s = SceneSpec {
        class_presence_probabilities: [0.6; 3],
        ..spec(9)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..40 {
        let g = synthgen::sample_geometry(&s, [GL, EP, UV][i % 3], &mut rng).unwrap();
        let mask = g.rasterize();
        let mut expected = [0u64; 4];
        let mut disagreements = 0;
        for y in 0..g.height {
            for x in 0..g.width {
                let k = oracle_class(&g, f64::from(x) + 0.5, f64::from(y) + 0.5);
                expected[usize::from(k)] += 1;
                if mask.get_pixel(x, y).0[0] != k {
                    disagreements += 1;
                }
            }
        }
        // boundary pixels may flip under different rounding of the same inequality
        assert!(disagreements <= 2, "scene {i}: {disagreements} pixels differ");
        let hist = datamodel::mask_histogram(&mask, &cs).unwrap();
        for k in 0..4u8 {
            let diff = hist[&k].abs_diff(expected[usize::from(k)]);
            assert!(diff <= 2, "scene {i} class {k}: {} vs {}", hist[&k], expected[usize::from(k)]);
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = SceneSpec {
        image_size: (4, 4),
        ..Default::default()
    };
    assert!(generate_domain_pair(&tiny, 1, 1, dir.path()).unwrap_err().is_config());
    assert!(generate_domain_pair(&spec(0), 0, 1, dir.path()).is_err());
}
