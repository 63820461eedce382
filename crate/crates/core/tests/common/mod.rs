#![allow(dead_code)]

use ffn_core::elf16::{Elf16Config, Elf16Extractor};
use ffn_core::ffn::TrainingSet;
use ffn_core::imaging::ImageTensor;
use ffn_core::nn::Tensor;
use ffn_core::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A 32×32 RGB image per sample: an identity-specific 4×4 colour layout
/// upsampled to 8×8 blocks, plus per-sample pixel noise.
pub fn identity_images(
    ids: usize,
    per_id: usize,
    noise: f64,
    seed: u64,
) -> Vec<(usize, ImageTensor)> {
    let mut rng = stream(seed, Purpose::Probe, 1);
    let normal = Normal::new(0.0, noise).unwrap();
    let layouts: Vec<Vec<f64>> = (0..ids)
        .map(|_| (0..4 * 4 * 3).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let mut out = Vec::new();
    for (id, layout) in layouts.iter().enumerate() {
        for _ in 0..per_id {
            let img = ImageTensor::from_fn(32, 32, 3, |y, x, c| {
                let v = layout[((y / 8) * 4 + x / 8) * 3 + c] + normal.sample(&mut rng);
                v.clamp(0.0, 1.0)
            });
            out.push((id, img));
        }
    }
    out
}

/// A compact ELF16 variant: 4 stripes, 8 bins, RGB and HSV only.
pub fn small_elf16() -> Elf16Config {
    use ffn_core::imaging::ColorSpace;
    Elf16Config {
        stripes: 4,
        bins: 8,
        color_spaces: vec![ColorSpace::Rgb, ColorSpace::Hsv],
        gabor_bank: vec![],
        schmid_bank: vec![],
        lbp: true,
    }
}

pub fn training_set(samples: &[(usize, ImageTensor)], cfg: &Elf16Config) -> TrainingSet {
    let ex = Elf16Extractor::new(cfg.clone()).unwrap();
    let mut set = TrainingSet::new([3, 32, 32], ex.descriptor_dim());
    for (id, img) in samples {
        let d = ex.extract(img).unwrap();
        set.push(&img.to_planar(), &d.values, *id).unwrap();
    }
    set
}

pub fn random_batch(n: usize, hc: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = stream(seed, Purpose::Probe, 2);
    let imgs = Tensor::new(
        vec![n, 3, 32, 32],
        (0..n * 3 * 32 * 32).map(|_| rng.gen::<f64>()).collect(),
    )
    .unwrap();
    let descs = Tensor::new(vec![n, hc], (0..n * hc).map(|_| rng.gen::<f64>()).collect()).unwrap();
    (imgs, descs)
}

/// Writes `ids × per_view` PNG images per view in the two-directory layout
/// and returns the manifest rows `(path, id, view)` describing the same files.
pub fn write_two_dir(
    root: &std::path::Path,
    ids: usize,
    per_view: usize,
    seed: u64,
) -> Vec<(String, String, String)> {
    let samples = identity_images(ids, 2 * per_view, 0.05, seed);
    let mut rows = Vec::new();
    for (n, (id, img)) in samples.iter().enumerate() {
        let k = n % (2 * per_view);
        let (dir, view) = if k < per_view {
            ("cam_a", "1")
        } else {
            ("cam_b", "2")
        };
        std::fs::create_dir_all(root.join(dir)).unwrap();
        let rel = format!("{dir}/{:03}_{}.png", id + 1, k % per_view);
        save_png(&root.join(&rel), img);
        rows.push((rel, format!("{:03}", id + 1), view.to_string()));
    }
    rows
}

pub fn save_png(path: &std::path::Path, img: &ImageTensor) {
    let buf = image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let px = |c| (img.get(y as usize, x as usize, c) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).unwrap();
}

/// Five identities with scalar features: gallery (view 1) at 0, 10, .., 40,
/// probes (view 2) at 2, 16, 10, 45, 25. Under L1 the true matches rank
/// 1, 2, 3, 2, 4 once ties go to the smaller gallery id.
pub fn five_id_fixture() -> (ffn_core::eval::ReidDataset, ffn_core::eval::FeatureTable) {
    use ffn_core::elf16::ConfigDigest;
    use ffn_core::eval::{FeatureTable, ImageRecord, ReidDataset, View};
    let gallery = [0.0, 10.0, 20.0, 30.0, 40.0];
    let probes = [2.0, 16.0, 10.0, 45.0, 25.0];
    let mut images = Vec::new();
    let mut table = FeatureTable::new(1, ConfigDigest::of_bytes(b"five"));
    for id in 0..5 {
        for (view, value, dir) in [
            (View::One, gallery[id], "cam_a"),
            (View::Two, probes[id], "cam_b"),
        ] {
            let key = format!("{dir}/{id}_0.png");
            table.insert(key.clone(), vec![value]).unwrap();
            images.push(ImageRecord {
                id,
                view,
                index: 0,
                path: key.clone().into(),
                key,
            });
        }
    }
    let ds = ReidDataset {
        identities: (0..5).map(|i| i.to_string()).collect(),
        images,
    };
    (ds, table)
}

/// The CMC of [`five_id_fixture`], counted by hand from ranks 1, 2, 3, 2, 4.
pub const FIVE_ID_CMC: [f64; 5] = [0.2, 0.6, 0.8, 1.0, 1.0];
