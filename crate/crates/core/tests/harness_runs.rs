mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use enas_lab::cellspace::{random_architecture, Architecture};
use enas_lab::childnet::ChildDims;
use enas_lab::controller::{teacher_forced_trace, ControllerDims, ControllerParams};
use enas_lab::harness::*;
use enas_lab::numkit::{Matrix, Rng};
use enas_lab::replay::ReplayBuffer;
use enas_lab::simlab::{collapse_score, read_records_csv, CorrelationTable, TrainType, TABLE_HEADER};

fn smoke_config(mode: TrainType, seed: u64, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        mode,
        seed,
        space: common::space(4),
        epochs: 6,
        final_epochs: 2,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.replay.divisor = 10;
    cfg.replay.schedule.warmup_epochs = 2;
    cfg.replay.schedule.supervise_start_epoch = 4;
    cfg
}

fn quick_config(mode: TrainType, dir: &Path) -> ExperimentConfig {
    let mut cfg = smoke_config(mode, 3, dir);
    cfg.space = common::space(3);
    cfg.epochs = 2;
    cfg.controller_steps_per_epoch = 3;
    cfg.eval_samples = 12;
    cfg.child.dims = ChildDims {
        embed_dim: 8,
        hidden_dim: 16,
    };
    cfg.replay.schedule.warmup_epochs = 0;
    cfg.replay.schedule.supervise_start_epoch = 1;
    cfg
}

struct Smoke {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    summary: RunSummary,
}

fn smoke() -> &'static Smoke {
    static RUN: OnceLock<Smoke> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("supervised");
        let summary = run_search(&smoke_config(TrainType::Supervised, 1, &dir), &mut |_| {}).unwrap();
        Smoke {
            _tmp: tmp,
            dir,
            summary,
        }
    })
}

#[test]
fn smoke_run_emits_every_artifact() {
    let s = smoke();
    for name in CSV_ARTIFACTS.iter().chain(&[MANIFEST, CONTROLLER_CKPT, POOL_CKPT, REPLAY_BUFFER]) {
        assert!(s.dir.join(name).is_file(), "missing {name}");
    }
    for name in CSV_ARTIFACTS {
        let text = fs::read_to_string(s.dir.join(name)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.chars().any(char::is_alphabetic), "{name} header {header:?}");
    }
    let m = Manifest::load(&s.dir).unwrap();
    assert_eq!(m.mode, TrainType::Supervised);
    assert_eq!(m.seed, 1);
    assert_eq!(m.controller_updates, 6 * 50);
    assert_eq!(s.summary.controller_updates, 6 * 50);
}

#[test]
fn smoke_csvs_round_trip() {
    let s = smoke();
    let cfg = &Manifest::load(&s.dir).unwrap().config;

    let log = read_training_log(&s.dir.join(TRAINING_LOG)).unwrap();
    assert_eq!(log, s.summary.log);
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("log.csv");
    write_training_log(&p, &log).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(s.dir.join(TRAINING_LOG)).unwrap());

    let (names, argmax) = read_argmax_profile(&s.dir.join(ARGMAX_PROFILE)).unwrap();
    assert_eq!(names, step_names(&cfg.space));
    assert_eq!(argmax.shape(), (100, 7));
    assert!(argmax.as_slice().iter().all(|&p| (0.0..=1.0).contains(&p)));

    let ppl = read_ppl_distribution(&s.dir.join(PPL_DISTRIBUTION), &cfg.space).unwrap();
    assert_eq!(ppl.len(), cfg.eval_samples);
    assert!(ppl.iter().all(|(_, p)| *p >= 1.0));

    let (hidden, score) = read_hidden_states(&s.dir.join(HIDDEN_STATES)).unwrap();
    assert_eq!(hidden.shape(), (100, 64));
    assert_eq!(collapse_score(&hidden).unwrap(), score);
    assert_eq!(score, s.summary.collapse_score);
    let p = tmp.path().join("hidden.csv");
    write_hidden_states(&p, &hidden, score).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(s.dir.join(HIDDEN_STATES)).unwrap());

    let records = read_records_csv(&s.dir.join(SIMILARITY_RECORDS)).unwrap();
    assert_eq!(records.len(), 4950);
    assert!(records.iter().all(|r| r.pair_a < r.pair_b && r.ged_exact && r.ged >= 0.0 && r.perf_diff >= 0.0));

    let table = CorrelationTable::read_csv(&s.dir.join(CORRELATION_TABLE)).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].train_type, TrainType::Supervised);

    let buffer = ReplayBuffer::read_csv(&s.dir.join(REPLAY_BUFFER), &cfg.space, cfg.replay_schedule().unwrap()).unwrap();
    assert_eq!(buffer.len(), *log.last().map(|l| &l.buffer_size).unwrap());
}

#[test]
fn supervised_buffer_follows_the_schedule() {
    let s = smoke();
    let m = Manifest::load(&s.dir).unwrap();
    let schedule = m.config.replay_schedule().unwrap();
    let want: Vec<usize> = (0..6).map(|e| schedule.size_after(e)).collect();
    assert_eq!(want, vec![0, 0, 100, 200, 300, 400]);
    assert_eq!(m.buffer_sizes, want);
    let logged: Vec<usize> = s.summary.log.iter().map(|l| l.buffer_size).collect();
    assert_eq!(logged, want);
    for l in &s.summary.log {
        assert_eq!(l.sup_loss.is_some(), l.epoch >= 4, "epoch {}", l.epoch);
    }
}

#[test]
fn analyze_regenerates_identical_files() {
    let s = smoke();
    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("run");
    fs::create_dir(&copy).unwrap();
    for entry in fs::read_dir(&s.dir).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), copy.join(entry.file_name())).unwrap();
    }
    for (which, file) in [
        (Analysis::Argmax, ARGMAX_PROFILE),
        (Analysis::PplDist, PPL_DISTRIBUTION),
        (Analysis::Hidden, HIDDEN_STATES),
    ] {
        fs::remove_file(copy.join(file)).unwrap();
        assert_eq!(analyze(&copy, which).unwrap(), copy.join(file));
        assert_eq!(fs::read(copy.join(file)).unwrap(), fs::read(s.dir.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn derive_final_improves_on_initialization() {
    let s = smoke();
    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("run");
    fs::create_dir(&copy).unwrap();
    for entry in fs::read_dir(&s.dir).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), copy.join(entry.file_name())).unwrap();
    }
    let result = derive_final(&copy).unwrap();
    assert!(result.final_ppl <= result.initial_ppl, "{result:?}");
    let m = Manifest::load(&copy).unwrap();
    assert_eq!(m.best_arch.as_deref(), Some(result.best_arch.canonical().as_str()));
    assert!(fs::read_to_string(copy.join(MANIFEST)).unwrap().contains(&result.best_arch.canonical()));
    assert!(copy.join(FINAL_MODEL_CKPT).is_file());

    let entries = read_ppl_distribution(&copy.join(PPL_DISTRIBUTION), &m.config.space).unwrap();
    let best = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let tied: Vec<String> = entries.iter().filter(|e| e.1 == best).map(|e| e.0.canonical()).collect();
    assert_eq!(&result.best_arch.canonical(), tied.iter().min().unwrap());
}

#[test]
fn random_mode_never_updates_the_controller() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(TrainType::Random, &tmp.path().join("random"));
    let summary = run_search(&cfg, &mut |_| {}).unwrap();
    assert_eq!(summary.controller_updates, 0);
    assert!(summary.log.iter().all(|l| l.controller_updates == 0 && l.pg_loss.is_none()));
    let saved = ControllerParams::load(&cfg.output_dir.join(CONTROLLER_CKPT)).unwrap();
    assert_eq!(saved, initial_controller(&cfg).unwrap());
    assert!(!cfg.output_dir.join(REPLAY_BUFFER).exists());
}

#[test]
fn training_log_repeats_for_equal_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let a = quick_config(TrainType::Unsupervised, &tmp.path().join("a"));
    let b = quick_config(TrainType::Unsupervised, &tmp.path().join("b"));
    run_search(&a, &mut |_| {}).unwrap();
    run_search(&b, &mut |_| {}).unwrap();
    for name in CSV_ARTIFACTS {
        assert_eq!(fs::read(a.output_dir.join(name)).unwrap(), fs::read(b.output_dir.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn correlate_builds_one_row_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for mode in [TrainType::Unsupervised, TrainType::Random, TrainType::Supervised] {
        let cfg = quick_config(mode, &tmp.path().join(mode.name()));
        run_search(&cfg, &mut |_| {}).unwrap();
        dirs.push(cfg.output_dir);
    }
    let out = tmp.path().join("table.csv");
    let table = correlate(&dirs, &out).unwrap();
    let order: Vec<TrainType> = table.rows.iter().map(|r| r.train_type).collect();
    assert_eq!(order, vec![TrainType::Random, TrainType::Supervised, TrainType::Unsupervised]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), TABLE_HEADER.join(","));
    assert_eq!(CorrelationTable::read_csv(&out).unwrap(), table);
    for r in &table.rows {
        for rho in [r.common_act, r.common_conn, r.ged, r.perf_diff] {
            assert!((-1.0..=1.0).contains(&rho));
        }
    }
    assert!(correlate(&[dirs[0].clone(), dirs[0].clone()], &out).is_err());
}

#[test]
fn hidden_spread_reflects_input_conditioning() {
    let space = common::space(4);
    let mut rng = Rng::new(2);
    let archs: Vec<Architecture> = (0..30).map(|_| random_architecture(&mut rng, &space)).collect();
    let hiddens = |p: &ControllerParams| {
        let rows: Vec<Vec<f64>> = archs.iter().map(|a| teacher_forced_trace(p, a).unwrap().final_hidden).collect();
        Matrix::from_vec(rows.len(), rows[0].len(), rows.concat()).unwrap()
    };
    let zero = ControllerParams::zeros(space, ControllerDims::default());
    assert_eq!(collapse_score(&hiddens(&zero)).unwrap(), 0.0);
    let cfg = ExperimentConfig {
        space,
        ..ExperimentConfig::default()
    };
    assert!(collapse_score(&hiddens(&initial_controller(&cfg).unwrap())).unwrap() > 0.0);
}
