use super::*;
use crate::agent::Checkpoint;
use crate::envs::EnvConfig;
use crate::error::Error;
use crate::losses::RiskKind;

fn quick(preset: &str, total: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(preset).unwrap();
    cfg.agent.random_steps = 200;
    cfg.agent.hidden = vec![8, 8];
    cfg.run.total_steps = total;
    cfg.run.eval_every = 250;
    cfg.run.eval_episodes = 1;
    cfg.replay.capacity = 10_000;
    cfg
}

#[test]
fn cube_preset_matches_published_hyperparameters() {
    let cfg = RunConfig::from_toml_str("preset = \"cube-uaddpg\"").unwrap();
    let a = &cfg.agent;
    assert_eq!(a.gamma, 0.99);
    assert_eq!(a.polyak, 0.8);
    assert_eq!(a.init_std, 1.0);
    assert_eq!(a.exploration_steps, 1e5);
    assert_eq!(a.min_exploration, 0.1);
    assert_eq!(a.action_noise_std, 0.005);
    assert_eq!(a.batch_size, 24);
    assert_eq!(cfg.replay.capacity, 400_000);
    assert_eq!(a.hidden, vec![30, 30]);
    assert_eq!((a.actor_lr, a.critic_lr), (1e-3, 1e-3));
    assert_eq!(a.random_steps, 5000);
    assert_eq!((a.quantiles, a.critics, a.actors, a.suspension_period), (1, 3, 4, Some(8)));
    assert!(cfg.replay.prioritized);
    assert_eq!(cfg.run.total_steps, 400_000);
}

#[test]
fn ddpg_preset_is_degenerate() {
    let cfg = RunConfig::preset("cube-ddpg").unwrap();
    let a = &cfg.agent;
    assert_eq!((a.quantiles, a.critics, a.actors), (1, 1, 1));
    assert_eq!((a.exploration_steps, a.min_exploration), (0.0, 0.0));
    assert_eq!(a.suspension_period, None);
}

#[test]
fn cvar_risk_string_resolves_to_lower_tail() {
    let cfg = RunConfig::from_toml_str("[agent]\nquantiles = 12\nrisk = \"cvar:0.25\"\n").unwrap();
    let p = cfg.agent.risk.resolve(12).unwrap();
    assert_eq!(p.kind(), RiskKind::Cvar(0.25));
    for (i, b) in p.betas().iter().enumerate() {
        let want = if i < 3 { 1.0 / 3.0 } else { 0.0 };
        assert!((b - want).abs() < 1e-15);
    }
}

#[test]
fn empty_seed_list_is_rejected() {
    let err = RunConfig::from_toml_str("[run]\nseeds = []\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("run.seeds")), "{err}");
}

#[test]
fn unknown_keys_report_their_path() {
    let err = RunConfig::from_toml_str("[agent]\ncritcs = 3\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("agent") && m.contains("critcs")), "{err}");
    let err = RunConfig::from_toml_str("[replay]\ncapacity = \"big\"\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("replay.capacity")), "{err}");
    assert!(RunConfig::from_toml_str("preset = \"nope\"").is_err());
    assert!(RunConfig::from_toml_str("[agent]\ncritics = 0\n").is_err());
}

#[test]
fn resolved_config_round_trips() {
    for name in PRESETS {
        let cfg = RunConfig::preset(name).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
    }
    let mut cfg = RunConfig::preset("cube-uaddpg").unwrap();
    cfg.agent.risk = crate::losses::RiskSpec::Weights(vec![0.5, 0.5]);
    cfg.agent.quantiles = 2;
    cfg.run.log_format = LogFormat::Jsonl;
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn env_override_switches_variant() {
    let cfg = RunConfig::from_toml_str("preset = \"cube-ddpg\"\n[env]\nid = \"quantile-oracle\"\n[env.reward]\nlaw = \"point\"\nvalue = 2.0\n").unwrap();
    assert_eq!(cfg.env.id(), "quantile-oracle");
}

#[test]
fn random_phase_only_run_takes_no_gradient_steps() {
    let mut cfg = quick("cube-uaddpg", 200);
    cfg.run.eval_every = 0;
    let mut t = Trainer::new(&cfg, 1).unwrap();
    while !t.is_done() {
        let out = t.step().unwrap();
        assert_eq!(out.kind, crate::agent::ActionKind::Random);
        assert!(out.updates.is_empty());
    }
    assert_eq!(t.gradient_steps(), 0);
    assert_eq!(t.buffer().len(), 200);
    assert!(t.agent().normalizer().is_some());
}

#[test]
fn normalizer_stays_frozen_during_training() {
    let cfg = quick("cube-uaddpg", 400);
    let mut t = Trainer::new(&cfg, 2).unwrap();
    for _ in 0..200 {
        t.step().unwrap();
    }
    let frozen = t.agent().normalizer().cloned().unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    assert_eq!(t.agent().normalizer(), Some(&frozen));
    assert_eq!(t.gradient_steps(), 200);
}

#[test]
fn evaluation_leaves_training_state_alone() {
    let cfg = quick("cube-uaddpg", 300);
    let mut t = Trainer::new(&cfg, 3).unwrap();
    while t.steps() < 250 {
        t.step().unwrap();
    }
    let seqs = t.buffer().sequence_numbers();
    let steps = t.steps();
    let ckpt = t.checkpoint().to_bytes().unwrap();
    t.evaluate(3).unwrap();
    assert_eq!(t.buffer().sequence_numbers(), seqs);
    assert_eq!(t.steps(), steps);
    assert_eq!(t.checkpoint().to_bytes().unwrap(), ckpt);
}

#[test]
fn metric_steps_increase_within_each_kind() {
    let cfg = quick("cube-uaddpg", 1200);
    let mut t = Trainer::new(&cfg, 4).unwrap();
    let mut recs = Vec::new();
    while !t.is_done() {
        recs.extend(t.step().unwrap().records);
    }
    assert!(recs.iter().any(|r| r.kind == RecordKind::Eval));
    for kind in [RecordKind::Train, RecordKind::Eval] {
        let steps: Vec<u64> = recs.iter().filter(|r| r.kind == kind).map(|r| r.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }
    assert!(recs.windows(2).all(|w| w[0].step <= w[1].step));
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("cube-uaddpg", 600);
    let a = run_training(&cfg, 9, &dir.path().join("a")).unwrap();
    let b = run_training(&cfg, 9, &dir.path().join("b")).unwrap();
    assert_eq!(std::fs::read(&a.metrics).unwrap(), std::fs::read(&b.metrics).unwrap());
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    let c = run_training(&cfg, 10, &dir.path().join("c")).unwrap();
    assert_ne!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&c.checkpoint).unwrap());
}

#[test]
fn metrics_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    for fmt in [LogFormat::Csv, LogFormat::Jsonl] {
        let mut cfg = quick("cube-ddpg", 500);
        cfg.run.log_format = fmt;
        let mut t = Trainer::new(&cfg, 5).unwrap();
        let mut recs = Vec::new();
        while !t.is_done() {
            recs.extend(t.step().unwrap().records);
        }
        let path = dir.path().join(format!("m.{}", fmt.extension()));
        let mut w = MetricWriter::create(&path, fmt).unwrap();
        for r in &recs {
            w.write(r).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), recs);
    }
    let dir2 = tempfile::tempdir().unwrap();
    let out = run_training(&quick("cube-ddpg", 300), 0, dir2.path()).unwrap();
    let header = std::fs::read_to_string(out.metrics).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "seed,step,kind,return,ep_len,actor_loss,critic_loss,eu_mean,explore_frac,wall_ms"
    );
}

fn eval_rec(step: u64, ret: f64) -> MetricRecord {
    MetricRecord {
        seed: 0,
        step,
        kind: RecordKind::Eval,
        ret,
        ep_len: 1.0,
        actor_loss: None,
        critic_loss: None,
        eu_mean: None,
        explore_frac: None,
        wall_ms: None,
    }
}

#[test]
fn seed_summary_uses_final_tenth_and_threshold() {
    let recs: Vec<MetricRecord> = (1..=10).map(|i| eval_rec(i * 100, -20.0 + i as f64)).collect();
    let s = summarize_seed(0, &recs, 1000, -10.0);
    assert_eq!(s.final_return, -10.0);
    assert_eq!(s.steps_to_threshold, None);
    let s = summarize_seed(0, &recs, 1000, -12.0);
    assert_eq!(s.steps_to_threshold, Some(900));
}

#[test]
fn single_seed_variant_has_zero_std() {
    let cfg = RunConfig::preset("cube-ddpg").unwrap();
    let seed = summarize_seed(0, &[eval_rec(400_000, -7.5)], 400_000, -10.0);
    let v = summarize_variant(&cfg, vec![seed]);
    assert_eq!((v.mean_return, v.std_return), (-7.5, 0.0));
    let table = summary_table(&[v]);
    assert!(table.contains("cube-ddpg") && table.contains("-7.50 ± 0.00"));
    let never = summarize_variant(&cfg, vec![summarize_seed(0, &[eval_rec(400_000, -30.0)], 400_000, -10.0)]);
    assert!(summary_table(&[never]).contains("not reached"));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick("cube-uaddpg", 300);
    cfg.run.seeds = vec![0, 1];
    let rows = run_sweep(&[cfg], dir.path()).unwrap();
    assert_eq!(rows[0].seeds.len(), 2);
    assert!(dir.path().join("summary.json").exists());
    assert!(dir.path().join("summary.txt").exists());
}

fn trained_checkpoint() -> Checkpoint {
    let cfg = quick("cube-uaddpg", 400);
    let mut t = Trainer::new(&cfg, 6).unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    t.checkpoint()
}

#[test]
fn inference_warning_thresholds() {
    let ck = trained_checkpoint();
    let env = EnvConfig::Cube;
    let none = run_inference(&ck, &env, 2, Some(f64::INFINITY), 0).unwrap();
    assert_eq!(none.warned_steps, 0);
    let all = run_inference(&ck, &env, 2, Some(0.0), 0).unwrap();
    assert_eq!(all.warned_steps, all.total_steps);
    assert_eq!(run_inference(&ck, &env, 2, Some(0.0), 0).unwrap(), all);
}

#[test]
fn inference_rejects_mismatched_env() {
    let ck = trained_checkpoint();
    let env = EnvConfig::from_id("oracle-gaussian").unwrap();
    assert!(matches!(run_inference(&ck, &env, 1, None, 0), Err(Error::Usage(_))));
}
