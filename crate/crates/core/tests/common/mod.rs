#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use stereo_audit::collector::{ChatRequest, EndpointError};
use stereo_audit::corpus::write_manifest;
use stereo_audit::{Color, Gender, ImageKey, ImageRecord};

pub fn fixture<T: for<'de> Deserialize<'de>>(name: &str) -> T {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

#[derive(Deserialize)]
pub struct TTestCase {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub p: f64,
}

#[derive(Deserialize)]
pub struct PearsonCase {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
    pub p: f64,
}

#[derive(Deserialize)]
pub struct VaderCase {
    pub text: String,
    #[serde(default)]
    pub neg: f64,
    #[serde(default)]
    pub neu: f64,
    #[serde(default)]
    pub pos: f64,
    pub compound: f64,
}

pub fn grid(occupation: &str) -> Vec<ImageRecord> {
    ImageKey::full_grid(occupation)
        .enumerate()
        .map(|(i, k)| ImageRecord {
            image_id: format!("{occupation}-{i:03}"),
            occupation: k.occupation,
            scenario_index: k.scenario_index,
            gender: k.gender,
            race: k.race,
            color: k.color,
            uri: None,
        })
        .collect()
}

pub fn seeded(label: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(label.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

fn clothing(color: Color) -> [u8; 3] {
    match color {
        Color::Red => [200, 40, 40],
        Color::Blue => [40, 60, 200],
        Color::White => [240, 240, 240],
    }
}

/// Writes a manifest for `occupations`, with a 4x4 PNG per image when
/// `images` is set. Returns the manifest path.
pub fn write_corpus(dir: &Path, occupations: &[&str], images: bool) -> PathBuf {
    let mut records = Vec::new();
    for occ in occupations {
        records.extend(grid(occ));
    }
    if images {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).unwrap();
        for r in &mut records {
            let mut rng = seeded(&r.image_id);
            let base = clothing(r.color);
            let img = image::RgbImage::from_fn(4, 4, |_, _| {
                image::Rgb(base.map(|c| c.saturating_add(rng.gen_range(0..10))))
            });
            let name = format!("images/{}.png", r.image_id);
            img.save(dir.join(&name)).unwrap();
            r.uri = Some(name);
        }
    }
    let path = dir.join("manifest.csv");
    write_manifest(&records, fs::File::create(&path).unwrap()).unwrap();
    path
}

const FILLER: &[&str] = &[
    "stands", "near", "table", "holding", "tools", "looking", "toward", "camera", "background", "shows",
    "room", "light", "window", "equipment", "shelf", "jacket", "hair", "short", "dark", "posture",
    "upright", "hands", "visible", "setting", "indoor", "outdoor", "street", "desk", "papers", "uniform",
];

const WARM: &[&str] = &["warm", "friendly", "sincere", "trustworthy", "good-natured"];

/// Canned description keyed by the image attributes. Female images get
/// three extra warmth words.
pub fn describe(image: &ImageRecord, model_id: &str) -> String {
    let mut rng = seeded(&format!("{model_id}/{}", image.image_id));
    let mut words: Vec<&str> = (0..10).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
    if image.gender == Gender::Female {
        words.extend(WARM.choose_multiple(&mut rng, 3));
    } else {
        words.extend((0..3).map(|_| *FILLER.choose(&mut rng).unwrap()));
    }
    words.shuffle(&mut rng);
    format!(
        "A {} {} person working as a {} wearing {} clothes. The person {}.",
        image.race.token().replace('_', " "),
        image.gender.token(),
        image.occupation,
        image.color.token(),
        words.join(" ")
    )
}

pub fn mock_lvlm(image: &ImageRecord, request: &ChatRequest) -> Result<String, EndpointError> {
    Ok(describe(image, &request.model_id))
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
