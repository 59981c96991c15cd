use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hwfuzz(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwfuzz")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn fuzz_writes_artifacts_and_crash_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&hwfuzz(&["fuzz", "-n", "2", "-m", "4", "--seed", "3", "-o", "run"], dir.path()));
    assert!(out.contains("first_crash: assertion=unlocked"), "{out}");
    let run = dir.path().join("run");
    assert!(run.join("queue/id000000.hwf").exists());
    assert!(run.join("trajectory.csv").exists());
    let crash = run.join("crashes/id000000.hwf");
    let cycle = out.lines().find_map(|l| l.split("cycle=").nth(1)).unwrap().split(' ').next().unwrap().to_string();

    let replay = stdout(&hwfuzz(&["replay", crash.to_str().unwrap(), "-n", "2", "-m", "4"], dir.path()));
    assert!(replay.contains(&format!("status: crash assertion=unlocked cycle={cycle}")), "{replay}");
    assert!(replay.contains("fsm_states_visited: 4/4"));
}

#[test]
fn crv_crash_replays_through_generic_harness() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&hwfuzz(&["crv", "-n", "1", "-m", "2", "--seed", "5", "-o", "c"], dir.path()));
    assert!(out.contains("crashes: 1"), "{out}");
    let crash = dir.path().join("c/crashes/id000000.hwf");
    let replay = stdout(&hwfuzz(&["replay", crash.to_str().unwrap(), "-n", "1", "-m", "2"], dir.path()));
    assert!(replay.contains("status: crash assertion=unlocked"), "{replay}");
}

#[test]
fn seed_compile_then_replay_on_bus() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("seed.txt"), "# arm\nwrite 0x0 0x1\nwait\nread 0x18\n").unwrap();
    let out = stdout(&hwfuzz(&["seed-compile", "seed.txt", "-o", "seed.hwf", "--encoding", "mapped_fixed"], dir.path()));
    assert!(out.contains("bytes written"));
    let bytes = fs::read(dir.path().join("seed.hwf")).unwrap();
    assert!(!bytes.is_empty());
    let replay = stdout(&hwfuzz(&["replay", "seed.hwf", "--device", "timer", "--encoding", "mapped_fixed"], dir.path()));
    assert!(replay.contains("status: ok"));
    assert!(replay.contains("decoded_instructions: 3"), "{replay}");
}

#[test]
fn seed_compile_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "wait\njump 0x4\n").unwrap();
    let o = hwfuzz(&["seed-compile", "bad.txt", "-o", "bad.hwf"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn regmap_prints_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&hwfuzz(&["regmap", "lock"], dir.path()));
    assert!(out.starts_with("| Offset | Name | Access | Description |"));
    assert!(out.contains("| 0x04 | CODE |"));
    assert!(!hwfuzz(&["regmap", "uart"], dir.path()).status.success());
}

#[test]
fn experiment_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "kind = \"fuzz_vs_crv\"\noutput_dir = \"from_file\"\ntrials = 0\n[crv]\nmax_sim_cycles = 50000\n",
    )
    .unwrap();
    let out = stdout(&hwfuzz(&["experiment", "exp.toml", "-o", "res", "--trials", "2", "--base-seed", "9"], dir.path()));
    assert!(out.contains("16 trials written"), "{out}");
    let res = dir.path().join("res");
    assert!(!dir.path().join("from_file").exists());
    for f in ["config.toml", "trials.csv", "trajectories.csv", "heatmap_fuzz.csv", "heatmap_crv.csv", "heatmap_ratio.csv", "stats.csv", "summary.md"] {
        assert!(res.join(f).exists(), "{f}");
    }
    let echo = fs::read_to_string(res.join("config.toml")).unwrap();
    assert!(echo.contains("trials = 2") && echo.contains("base_seed = 9"), "{echo}");
}

#[test]
fn invalid_experiment_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), "kind = \"fuzz_vs_crv\"\nstate_bits = [40]\n").unwrap();
    let o = hwfuzz(&["experiment", "exp.toml"], dir.path());
    assert!(!o.status.success());
}
