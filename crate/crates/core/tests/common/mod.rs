use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use iqa_core::eval::DatasetRecord;
use iqa_core::provider::SplitMix64;

/// Writes `n` small noisy PNGs plus a `manifest.csv` with made-up MOS values.
pub fn synthetic_dataset(dir: &Path, n: usize) -> Vec<DatasetRecord> {
    let mut manifest = String::from("image_name,MOS\n");
    let mut records = Vec::new();
    for i in 0..n {
        let mut rng = SplitMix64::new(i as u64);
        let img = RgbImage::from_fn(48, 32, |_, _| {
            let v = rng.next_u64();
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        });
        let name = format!("img_{i:03}.png");
        let path = dir.join(&name);
        img.save_with_format(&path, ImageFormat::Png).unwrap();
        let mos = 1.0 + (i * 37 % 41) as f64 / 10.0;
        manifest.push_str(&format!("{name},{mos}\n"));
        records.push(DatasetRecord {
            image_id: name,
            image_path: path,
            mos,
        });
    }
    std::fs::write(dir.join("manifest.csv"), manifest).unwrap();
    records
}
