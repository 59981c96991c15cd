//! Acceptance checks. Each test prints one `PASS`/`FAIL` line to stderr
//! (uncaptured) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hwfuzz::coverage::ScopeFilter;
use hwfuzz::dut::LockConfig;
use hwfuzz::experiments::{
    run_experiment, run_trials, Device, ExperimentConfig, ExperimentKind, Metric, Target, TrialRecord,
};
use hwfuzz::fuzzer::{crv_campaign, fuzz_campaign, Budget, CrvConfig, FuzzerConfig};
use hwfuzz::grammar::{decode_opcode, decode_stream, encode_instructions, Encoding, FrameFormat, Instruction, OpcodeFormat};
use hwfuzz::harness::{ForkPoint, Harness};
use hwfuzz::stats::{mann_whitney_u, mann_whitney_u_with, median, PValueMethod};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {id} {name}: {verdict} ({detail})");
}

fn cell_values(trials: &[TrialRecord], cond: &str, n: u32, m: u32, metric: Metric) -> Vec<f64> {
    trials
        .iter()
        .filter(|t| t.condition == cond && t.state_bits == Some(n) && t.code_width == Some(m))
        .map(|t| metric.value(&t.result).0)
        .collect()
}

#[test]
fn criterion_1_fuzz_beats_crv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::FuzzVsCrv, dir.path());
    cfg.trials = 20;
    cfg.state_bits = vec![2, 4];
    cfg.code_widths = vec![2, 4];
    cfg.crv.max_sim_cycles = Some(2_000_000);
    let report_ = run_experiment(&cfg).unwrap();

    let fuzz = cell_values(&report_.trials, "fuzz", 4, 4, Metric::SimCyclesToUnlock);
    let crv = cell_values(&report_.trials, "crv", 4, 4, Metric::SimCyclesToUnlock);
    assert_eq!((fuzz.len(), crv.len()), (20, 20));
    let (mf, mc) = (median(&fuzz).unwrap(), median(&crv).unwrap());
    let fuzz_censored = report_.heatmap("fuzz").unwrap().cell(4, 4).unwrap().censored;
    let crv_censored = report_.heatmap("crv").unwrap().cell(4, 4).unwrap().censored;
    let small_f = median(&cell_values(&report_.trials, "fuzz", 2, 2, Metric::SimCyclesToUnlock)).unwrap();
    let small_c = median(&cell_values(&report_.trials, "crv", 2, 2, Metric::SimCyclesToUnlock)).unwrap();

    // heatmap cells are the mean of exactly `trials` rows of trials.csv
    let csv = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    for cond in ["fuzz", "crv"] {
        let h = report_.heatmap(cond).unwrap();
        for &n in &cfg.state_bits {
            for &m in &cfg.code_widths {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r[2] == cond && r[3] == n.to_string() && r[4] == m.to_string())
                    .map(|r| if r[12].is_empty() { r[8].parse().unwrap() } else { r[12].parse().unwrap() })
                    .collect();
                assert_eq!(vals.len(), 20);
                let mean = vals.iter().sum::<f64>() / 20.0;
                assert!((h.cell(n, m).unwrap().mean - mean).abs() < 1e-9 * mean.max(1.0));
            }
        }
    }

    let pass = fuzz_censored == 0 && mc >= 10.0 * mf;
    report(
        1,
        "fuzz vs crv (N=4, M=4)",
        pass,
        &format!(
            "median cycles fuzz {mf} vs crv {mc} (crv censored {crv_censored}/20, ratio >= {:.0}); N=2,M=2: fuzz {small_f} vs crv {small_c}",
            mc / mf
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_crv_matches_geometric_mean() {
    let mut details = Vec::new();
    let mut pass = true;
    for m in 1..=3u32 {
        let lock = LockConfig::new(1, m, 17).unwrap();
        let trials = 10_000u64;
        let total: u64 = (0..trials)
            .map(|seed| {
                let r = crv_campaign(&lock, &CrvConfig::new(seed, Budget::execs(10_000))).unwrap();
                r.execs_to_first_crash().expect("unlocks well within budget")
            })
            .sum();
        let mean = total as f64 / trials as f64;
        let expected = f64::from(1u32 << m);
        pass &= (mean - expected).abs() <= 0.1 * expected;
        details.push(format!("M={m}: {mean:.3} vs {expected}"));
    }
    report(2, "crv analytic oracle (N=1)", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_3_grammar_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut round_trips = 0;
    for enc in Encoding::ALL {
        for _ in 0..10_000 {
            let prog: Vec<Instruction> = (0..rng.gen_range(0..40))
                .map(|_| match rng.gen_range(0..3) {
                    0 => Instruction::Wait,
                    1 => Instruction::Read { address: rng.gen() },
                    _ => Instruction::Write { address: rng.gen(), data: rng.gen() },
                })
                .collect();
            let bytes = encode_instructions(&prog, enc.opcode, enc.frame);
            if decode_stream(&bytes, enc.opcode, enc.frame) == prog {
                round_trips += 1;
            }
        }
    }
    let mapped = (0..=255u8).filter(|&b| decode_opcode(b, OpcodeFormat::Mapped).is_some()).count();
    let constant = (0..=255u8).filter(|&b| decode_opcode(b, OpcodeFormat::Constant).is_some()).count();
    let pass = round_trips == 40_000 && mapped == 256 && constant == 3;
    report(
        3,
        "grammar",
        pass,
        &format!("{round_trips}/40000 round trips, mapped decodes {mapped}/256, constant decodes {constant}/256"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_variable_frames_reach_fsm_coverage_sooner() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::GrammarAblation, dir.path());
    cfg.trials = 20;
    cfg.device = Some(Device::LockPeriph);
    cfg.state_bits = vec![3];
    cfg.code_widths = vec![4];
    cfg.opcode_formats = vec![OpcodeFormat::Constant, OpcodeFormat::Mapped];
    cfg.frame_formats = vec![FrameFormat::Fixed, FrameFormat::Variable];
    cfg.fuzzer.max_execs = Some(300_000);
    let trials = run_trials(&cfg).unwrap();

    let execs_to = |label: &str, fraction: f64| -> Vec<f64> {
        trials
            .iter()
            .filter(|t| t.condition == label)
            .map(|t| t.result.fsm_reached(fraction).map_or(t.result.execs, |p| p.execs) as f64)
            .collect()
    };
    let mut pass = true;
    let mut details = Vec::new();
    for opcode in ["constant", "mapped"] {
        for fraction in [0.25, 0.5, 0.75, 1.0] {
            let fixed = median(&execs_to(&format!("{opcode}_fixed"), fraction)).unwrap();
            let variable = median(&execs_to(&format!("{opcode}_variable"), fraction)).unwrap();
            pass &= variable <= fixed;
            details.push(format!("{opcode} {:.0}%: var {variable} / fixed {fixed}", fraction * 100.0));
        }
    }
    let censored = trials.iter().filter(|t| t.result.fsm_fraction() != Some(1.0)).count();
    details.push(format!("{censored} runs without full FSM"));
    report(4, "grammar ablation (lock_periph N=3, M=4)", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_5_dut_only_scope_is_not_worse() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::InstrumentationScope, dir.path());
    cfg.trials = 20;
    cfg.state_bits = vec![4, 5, 6];
    cfg.code_widths = vec![4];
    cfg.fuzzer.max_execs = Some(500_000);
    let r = run_experiment(&cfg).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for t in &r.tests {
        let worse = t.test.significant && t.median_a > t.median_b;
        pass &= !worse && t.censored_a == 0;
        details.push(format!(
            "N={}: dut_only {} vs all {} (p={:.3})",
            t.state_bits.unwrap(),
            t.median_a,
            t.median_b,
            t.test.p_value
        ));
    }
    assert_eq!(r.tests.len(), 3);
    report(5, "instrumentation scope", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_6_fork_point_is_transparent_and_cheaper() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tests: Vec<Vec<u8>> = (0..1000)
        .map(|_| {
            let len = rng.gen_range(0..64);
            (0..len).map(|_| rng.gen()).collect()
        })
        .collect();

    let lock = LockConfig::new(3, 4, 1).unwrap();
    let targets = [
        Target::lock(lock),
        Target::lock(lock).with_scope(ScopeFilter::All),
        Target::lock_periph(lock, Encoding::new(OpcodeFormat::Mapped, FrameFormat::Variable)),
        Target::timer(Encoding::new(OpcodeFormat::Mapped, FrameFormat::Fixed)).with_scope(ScopeFilter::All),
    ];
    let mut identical = true;
    for t in targets {
        let mut cold = t.with_fork_point(ForkPoint::AtStart).build();
        let mut warm = t.with_fork_point(ForkPoint::AfterReset).build();
        for input in &tests {
            identical &= cold.run(input) == warm.run(input);
        }
    }

    // smallest lock; alternate the order of the two modes to cancel drift
    let smallest = Target::lock(LockConfig::new(1, 1, 1).unwrap());
    let mut cold = smallest.with_fork_point(ForkPoint::AtStart).build();
    let mut warm = smallest.with_fork_point(ForkPoint::AfterReset).build();
    let (mut t_cold, mut t_warm) = (Duration::ZERO, Duration::ZERO);
    let time = |h: &mut Box<dyn Harness + Send>| {
        let start = Instant::now();
        for input in &tests {
            std::hint::black_box(h.execute(input));
        }
        start.elapsed()
    };
    for round in 0..20 {
        if round % 2 == 0 {
            t_cold += time(&mut cold);
            t_warm += time(&mut warm);
        } else {
            t_warm += time(&mut warm);
            t_cold += time(&mut cold);
        }
    }
    let pass = identical && t_warm <= t_cold;
    report(
        6,
        "fork point",
        pass,
        &format!(
            "outcomes identical: {identical}; 20x1000 tests after_reset {:.1} ms vs at_start {:.1} ms",
            t_warm.as_secs_f64() * 1e3,
            t_cold.as_secs_f64() * 1e3
        ),
    );
    assert!(pass);
}

/// Two-sided p from every split of `n1 + n2` distinct ranks.
fn permutation_p(u: f64, n1: usize, n2: usize) -> f64 {
    let n = n1 + n2;
    let mean = (n1 * n2) as f64 / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        let uu = rank_sum as f64 - (n1 * (n1 + 1)) as f64 / 2.0;
        total += 1;
        hits += u64::from((uu - mean).abs() >= (u - mean).abs() - 1e-9);
    }
    hits as f64 / total as f64
}

#[test]
fn criterion_7_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut worst_normal: f64 = 0.0;
    for n1 in 1..=7 {
        for n2 in 1..=7 {
            for _ in 0..20 {
                let mut pool: Vec<f64> = (0..n1 + n2).map(|i| i as f64 * 1.5 + 0.25).collect();
                pool.shuffle(&mut rng);
                let (a, b) = pool.split_at(n1);
                let r = mann_whitney_u(a, b).unwrap();
                let oracle = permutation_p(r.u_statistic, n1, n2);
                worst = worst.max((r.p_value - oracle).abs());
                let normal = mann_whitney_u_with(a, b, PValueMethod::Normal).unwrap();
                worst_normal = worst_normal.max((normal.p_value - oracle).abs());
            }
        }
    }
    let mut complementary = 0;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..rng.gen_range(1..25)).map(|_| f64::from(rng.gen_range(0..50))).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..25)).map(|_| f64::from(rng.gen_range(0..50))).collect();
        let ab = mann_whitney_u(&a, &b).unwrap().u_statistic;
        let ba = mann_whitney_u(&b, &a).unwrap().u_statistic;
        complementary += usize::from(ab + ba == (a.len() * b.len()) as f64);
    }
    let pass = worst <= 0.05 && complementary == 1000;
    report(
        7,
        "mann-whitney",
        pass,
        &format!(
            "max |p - exact| = {worst:.2e} (normal approximation alone: {worst_normal:.3}); U(a,b)+U(b,a)=n1*n2 on {complementary}/1000"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_empty_seed_coverage() {
    let started = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (device, n, execs) in [(Device::Timer, None, 400_000), (Device::LockPeriph, Some(4), 2_000_000)] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::EmptySeedCoverage, dir.path());
        cfg.device = Some(device);
        cfg.trials = 3;
        cfg.state_bits = vec![n.unwrap_or(1)];
        cfg.code_widths = vec![4];
        cfg.opcode_formats = vec![OpcodeFormat::Constant, OpcodeFormat::Mapped];
        cfg.frame_formats = vec![FrameFormat::Variable];
        cfg.fuzzer.max_execs = Some(execs);
        let r = run_experiment(&cfg).unwrap();
        for s in &r.reachable {
            let min = s.fractions.iter().copied().fold(1.0, f64::min);
            let fsm_ok = device == Device::Timer || s.full_fsm_trials == s.trials;
            pass &= min >= 0.9 && fsm_ok;
            let fsm = if device == Device::Timer {
                "no FSM".to_string()
            } else {
                format!("full FSM {}/{}", s.full_fsm_trials, s.trials)
            };
            details.push(format!("{device}/{}: min {:.1}% of {} edges, {fsm}", s.condition, min * 100.0, s.reachable_edges));
        }
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    details.push(format!("{:.0} s", elapsed.as_secs_f64()));
    report(8, "empty-seed coverage", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_9_determinism_and_replay() {
    let lock = LockConfig::new(3, 4, 9).unwrap();
    let targets = [
        Target::lock(lock),
        Target::lock(lock).with_fork_point(ForkPoint::AtStart),
        Target::lock_periph(lock, Encoding::new(OpcodeFormat::Constant, FrameFormat::Fixed)),
        Target::timer(Encoding::new(OpcodeFormat::Mapped, FrameFormat::Variable)),
    ];
    let mut identical = true;
    let (mut crashes, mut replayed) = (0, 0);
    for (i, t) in targets.into_iter().enumerate() {
        let cfg = FuzzerConfig { stop_on_first_crash: false, ..FuzzerConfig::new(90 + i as u64, Budget::execs(20_000)) };
        let seeds = [Vec::new(), vec![0x02, 0x04, 0, 0, 0, 1, 0, 0, 0]];
        let a = fuzz_campaign(&mut t.build(), &seeds, &cfg).unwrap();
        let b = fuzz_campaign(&mut t.build(), &seeds, &cfg).unwrap();
        identical &= a.without_wall_time() == b.without_wall_time();
        let mut h = t.build();
        for c in &a.crashes {
            crashes += 1;
            replayed += usize::from(
                h.execute(&c.input).status == hwfuzz::harness::Status::Crash { assertion: c.assertion, cycle: c.cycle },
            );
        }
    }

    let crv_cfg = CrvConfig::new(5, Budget::sim_cycles(200_000));
    let c1 = crv_campaign(&LockConfig::new(2, 3, 1).unwrap(), &crv_cfg).unwrap();
    let c2 = crv_campaign(&LockConfig::new(2, 3, 1).unwrap(), &crv_cfg).unwrap();
    identical &= c1.without_wall_time() == c2.without_wall_time();
    let mut generic = Target::lock(LockConfig::new(2, 3, 1).unwrap()).build();
    for c in &c1.crashes {
        crashes += 1;
        replayed += usize::from(
            generic.execute(&c.input).status == hwfuzz::harness::Status::Crash { assertion: c.assertion, cycle: c.cycle },
        );
    }

    let mut exp = ExperimentConfig::new(ExperimentKind::FuzzVsCrv, "unused");
    exp.trials = 3;
    exp.crv.max_sim_cycles = Some(100_000);
    let strip = |v: Vec<TrialRecord>| -> Vec<_> { v.into_iter().map(|t| t.result.without_wall_time()).collect() };
    identical &= strip(run_trials(&exp).unwrap()) == strip(run_trials(&exp).unwrap());

    let pass = identical && crashes > 0 && replayed == crashes;
    report(9, "determinism", pass, &format!("reruns identical: {identical}; {replayed}/{crashes} crashes replay"));
    assert!(pass);
}
