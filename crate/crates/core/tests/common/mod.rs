#![allow(dead_code)]

use std::path::Path;

use facade_loc::pipeline::{MatchSource, PairManifest, PairSpec, RunConfig};
use facade_loc::synth::{self, generate_scene, SceneConfig, SynthScene};

/// Write a scene into `dir/<name>/` and return a pair spec pointing at it
/// (paths relative to `dir`).
pub fn write_scene(dir: &Path, name: &str, cfg: &SceneConfig, matches: Option<&str>) -> (SynthScene, PairSpec) {
    let scene = generate_scene(cfg).unwrap();
    scene.write(&dir.join(name)).unwrap();
    let spec = PairSpec {
        pair_id: name.to_string(),
        gml: format!("{name}/{}", synth::GML_FILE),
        face_id: synth::FACE_ID.to_string(),
        camera_image: format!("{name}/{}", synth::VIEW_FILE),
        camera: format!("{name}/{}", synth::CAMERA_FILE),
        matches: match matches {
            None => MatchSource::Builtin,
            Some(f) => MatchSource::File(format!("{name}/{f}")),
        },
        method: None,
    };
    (scene, spec)
}

pub fn manifest(pairs: Vec<PairSpec>) -> PairManifest {
    PairManifest {
        pairs,
        ..Default::default()
    }
}

pub fn quiet_config() -> RunConfig {
    RunConfig {
        timing: false,
        ..Default::default()
    }
}

pub fn fixture(rel: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
