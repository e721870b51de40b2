#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{ImageFormat, Rgb, RgbImage};
use iqa_core::provider::SplitMix64;

pub fn iqa() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iqa"));
    cmd.env_remove("IQA_CACHE_DIR");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to launch iqa")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Writes `n` noisy `side×side` PNGs `img_NNN.png` and a `manifest.csv`
/// with made-up MOS values.
pub fn synthetic_dataset(dir: &Path, n: usize, side: u32) -> PathBuf {
    let mut manifest = String::from("image_name,MOS\n");
    for i in 0..n {
        let mut rng = SplitMix64::new(1000 + i as u64);
        let img = RgbImage::from_fn(side, side, |_, _| {
            let v = rng.next_u64();
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        });
        let name = format!("img_{i:03}.png");
        img.save_with_format(dir.join(&name), ImageFormat::Png).unwrap();
        let mos = 1.0 + (i * 37 % 41) as f64 / 10.0;
        manifest.push_str(&format!("{name},{mos}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn neural_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../neural/tests/fixtures")
        .join(name)
}
