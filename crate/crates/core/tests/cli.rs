use std::path::Path;
use std::process::{Command, Output};

use posecue::feature_flow::read_flow;
use posecue::image_io::load_ppm;

fn posecue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posecue")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, frames: &str) {
    let o = posecue(&["synth", "--out", dir.to_str().unwrap(), "--frames", frames, "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(posecue(&[]).status.code(), Some(2));
    assert_eq!(posecue(&["selftest", "--bogus"]).status.code(), Some(2));
    assert_eq!(posecue(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(posecue(&["eval-odometry", "--mode", "sideways", "a", "b"]).status.code(), Some(2));
}

#[test]
fn config_violations_exit_with_three_and_name_the_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = posecue(&["train", "--out", out.to_str().unwrap(), "--set", "window=4"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config") && err.contains("window"), "{err}");

    let o = posecue(&["synth", "--out", out.to_str().unwrap(), "--set", "height=30"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("height"), "{}", stderr(&o));

    let o = posecue(&["synth", "--out", out.to_str().unwrap(), "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("colour"));

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = -1\n").unwrap();
    let o = posecue(&["train", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn runtime_failures_are_single_machine_readable_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.txt");
    let o = posecue(&["eval-odometry", missing.to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=argument message="), "{err}");

    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
    let o = posecue(&["eval-odometry", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=parse"), "{}", stderr(&o));
}

#[test]
fn flow_of_identical_frames_is_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "2");
    let frame = tmp.path().join("frame_0000.ppm");
    let (flow_path, conf_path) = (tmp.path().join("f.flow"), tmp.path().join("c.pgm"));
    let f = frame.to_str().unwrap();
    let o = posecue(&["flow", f, f, "--out", flow_path.to_str().unwrap(), "--confidence", conf_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let flow = read_flow(std::fs::File::open(&flow_path).unwrap()).unwrap();
    assert_eq!(flow.shape(), &[4, 12, 2]);
    assert!(flow.max_abs() < 0.05, "{}", flow.max_abs());
    assert!(std::fs::read(&conf_path).unwrap().starts_with(b"P5"));
}

#[test]
fn synthesized_sequence_feeds_pose_inference_and_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "6");
    assert_eq!(load_ppm(&tmp.path().join("frame_0005.ppm")).unwrap().shape(), &[3, 64, 192]);

    let (a, b) = (tmp.path().join("frame_0001.ppm"), tmp.path().join("frame_0002.ppm"));
    let k = tmp.path().join("intrinsics.txt");
    let args = ["infer-pose", a.to_str().unwrap(), b.to_str().unwrap(), "--intrinsics", k.to_str().unwrap()];
    let first = posecue(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].strip_prefix("vector=").unwrap().split(' ').count(), 6);
    assert!(lines[1..].iter().all(|l| l.split(' ').count() == 4));
    assert_eq!(posecue(&args).stdout, first.stdout);

    let poses = tmp.path().join("poses.txt");
    let p = poses.to_str().unwrap();
    let o = posecue(&["eval-odometry", p, p, "--segments", "0.2,0.4", "--table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("e_t=0\n") && text.contains("ate=0\n") && text.contains("deg/100m"), "{text}");
}

#[test]
fn synth_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "3");
    synth(b.path(), "3");
    for name in ["frame_0000.ppm", "frame_0002.ppm", "depth_0001.bin", "poses.txt", "manifest.txt", "intrinsics.txt"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn short_training_run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = [
        "train", "--out", out.to_str().unwrap(), "--held-out", "2", "--set", "steps=3", "--set", "height=32", "--set", "width=96",
    ];
    let o = posecue(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("steps=3\n") && report.contains("photometric_ratio="), "{report}");
    assert_eq!(std::fs::read_to_string(out.join("losses.txt")).unwrap().lines().count(), 3);
    let ckpt = out.join("checkpoint.scpd");
    assert!(std::fs::read(&ckpt).unwrap().starts_with(b"SCPD"));

    // the written config reproduces the run's model
    let cfg = out.join("config.txt");
    let frame = tmp.path().join("f.ppm");
    posecue::image_io::save_ppm(&posecue_tensor::Tensor::<f32>::full(&[3, 32, 96], 0.5), &frame).unwrap();
    let f = frame.to_str().unwrap();
    let o = posecue(&["infer-pose", f, f, "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let o = posecue(&["gradcheck", "--seed", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")));
}
