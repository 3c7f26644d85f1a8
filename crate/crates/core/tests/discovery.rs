//! Prototype discovery on small generated samples.

use scenefit::dataset::make_example;
use scenefit::generator::{builtin_bank, BuiltinShape, GenConfig};
use scenefit::optimize::FitConfig;
use scenefit::prototypes::{discover_from_images, shape_distance, DiscoveryConfig};
use scenefit::{Image, RenderConfig};

/// One square per image, so no fitted object can merge two neighbors.
fn square_images(n: u64) -> Vec<Image> {
    let gen = GenConfig {
        n_objects_range: [1, 1],
        shapes: vec![BuiltinShape::Square],
        seed: 5,
        ..GenConfig::default()
    };
    (0..n)
        .map(|i| make_example(&gen, &RenderConfig::default(), i).unwrap().image.quantized())
        .collect()
}

#[test]
fn single_class_collapses_to_near_identical_prototypes() {
    let images = square_images(20);
    let cfg = DiscoveryConfig::default();
    let run = || {
        discover_from_images(&images, &builtin_bank(), &RenderConfig::default(), &FitConfig::default(), &cfg, 8, 11).unwrap()
    };
    let report = run();
    let shapes = report.bank.shapes();
    for (i, a) in shapes.iter().enumerate() {
        for b in &shapes[i + 1..] {
            let d = shape_distance(a, b, cfg.raster).unwrap();
            assert!(d < 0.02, "medoid distance {d} in {:?}", report.rounds);
        }
    }
    assert_eq!(run(), report, "discovery is deterministic");
}
