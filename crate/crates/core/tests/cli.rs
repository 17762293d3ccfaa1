use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cit3d::pipeline::files;
use cit3d::ply::PlyTable;

const TINY: &str = "# small smoke run\n\
                    field.resolution = 16\n\
                    camera.resolution = 32\n\
                    coarse.steps = 10\n\
                    refine.steps = 10\n\
                    refine.eval_every = 5\n\
                    extract.spacing = 0.06\n";

fn cit3d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cit3d"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("CIT3D_THREADS", "1")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn failure_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn negative_guidance_weight_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "guidance.lambda_ss2d = -1\n");
    let line = failure_line(&cit3d(dir.path(), &["synth", "--config", &cfg]));
    assert!(line.starts_with("error kind=config "), "{line}");
    assert!(line.contains("guidance.lambda_ss2d"), "{line}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "coarse.stepz = 10\n");
    let line = failure_line(&cit3d(dir.path(), &["coarse", "--config", &cfg]));
    assert!(line.contains("kind=config") && line.contains("coarse.stepz"), "{line}");
}

#[test]
fn missing_inputs_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let line = failure_line(&cit3d(dir.path(), &["coarse", "--config", &cfg]));
    assert!(line.contains("kind=io") && line.contains(files::REFERENCE_RGB), "{line}");
    let line = failure_line(&cit3d(dir.path(), &["export", "--config", &cfg]));
    assert!(line.contains("kind=io") && line.contains(files::REFINED), "{line}");
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}paths.workdir = out\n"));
    for stage in ["synth", "coarse", "refine", "export"] {
        let out = cit3d(dir.path(), &[stage, "--config", &cfg, "--seed", "1"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = dir.path().join("out");
    for name in [
        files::REFERENCE_RGB,
        files::REFERENCE_MASK,
        files::REFERENCE_DEPTH,
        files::REFERENCE_NORMAL,
        files::SCENE,
        files::FIELD,
        files::COARSE_LOG,
        files::COARSE_METRICS,
        files::MESH,
        files::SURFACE,
        files::TEXTURED,
        files::REFINED,
        files::REFINED_CKPT,
        files::REFINE_LOG,
        files::REFINE_METRICS,
        files::EXPORT,
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    for k in 0..files::TURNTABLE_FRAMES {
        assert!(out.join(files::turntable(k)).is_file());
    }
    let log = fs::read_to_string(out.join(files::COARSE_LOG)).unwrap();
    assert_eq!(log.lines().count(), 11);
    let export = PlyTable::load(&out.join(files::EXPORT)).unwrap();
    let names: Vec<&str> = export.properties.iter().map(|p| p.0.as_str()).collect();
    assert_eq!(names, ["x", "y", "z", "red", "green", "blue"]);
    assert!(!export.rows.is_empty());
}

#[test]
fn artifacts_round_trip_byte_identically() {
    use cit3d::extract::Mesh;
    use cit3d::field::Checkpoint;
    use cit3d::pipeline::{load_depth, load_png, save_depth, save_png};

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    for stage in ["synth", "coarse", "refine"] {
        assert!(cit3d(dir.path(), &[stage, "--config", &cfg]).status.success());
    }
    let d = dir.path();
    let again = d.join("again");
    for name in [files::REFERENCE_RGB, files::REFERENCE_MASK, &files::turntable(3)] {
        save_png(&again, &load_png(&d.join(name)).unwrap()).unwrap();
        assert_eq!(fs::read(&again).unwrap(), fs::read(d.join(name)).unwrap(), "{name}");
    }
    save_depth(&again, &load_depth(&d.join(files::REFERENCE_DEPTH)).unwrap()).unwrap();
    assert_eq!(fs::read(&again).unwrap(), fs::read(d.join(files::REFERENCE_DEPTH)).unwrap());
    for name in [files::FIELD, files::REFINED_CKPT] {
        Checkpoint::load(&d.join(name)).unwrap().save(&again).unwrap();
        assert_eq!(fs::read(&again).unwrap(), fs::read(d.join(name)).unwrap(), "{name}");
    }
    for name in [files::SURFACE, files::TEXTURED, files::REFINED] {
        PlyTable::load(&d.join(name)).unwrap().save(&again).unwrap();
        assert_eq!(fs::read(&again).unwrap(), fs::read(d.join(name)).unwrap(), "{name}");
    }
    Mesh::load_obj(&d.join(files::MESH)).unwrap().save_obj(&again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), fs::read(d.join(files::MESH)).unwrap());
}
