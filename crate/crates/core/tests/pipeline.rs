mod common;

use std::fs;

use drivesim::Termination;
use wmdrive::controller::ControllerParams;
use wmdrive::pipeline::artifacts::HASH_KEY;
use wmdrive::pipeline::{
    collect, mean_abs_error, rollout, Agent, Collector, Condition, LatentMode, Pipeline, Policy, RolloutOptions,
    RunConfig, Stage,
};
use wmdrive::seqmodel::{lstm_step, RnnState};
use wmdrive::vae::{encode, reconstruct};
use wmdrive::Error;

fn trained(dir: &std::path::Path, cfg: RunConfig) -> Pipeline {
    let p = Pipeline::new(dir, cfg).unwrap();
    p.collect().unwrap();
    p.train_vae().unwrap();
    p.train_rnn().unwrap();
    p.train_controller().unwrap();
    p
}

#[test]
fn collection_is_deterministic() {
    let cfg = common::tiny_config();
    let a = collect(&cfg, &Collector::Scripted, 2).unwrap();
    let b = collect(&cfg, &Collector::Scripted, 2).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a, collect(&other, &Collector::Scripted, 2).unwrap());
}

#[test]
fn scripted_driver_reaches_the_goal() {
    let cfg = common::tiny_config();
    let eps = collect(&cfg, &Collector::Scripted, 50).unwrap();
    let ok = eps.iter().filter(|e| e.termination == Termination::Success).count();
    assert!(ok >= 45, "{ok}/50 successful");
}

#[test]
fn random_driver_dataset_is_well_formed() {
    let eps = collect(&common::tiny_config(), &Collector::Random, 6).unwrap();
    for e in &eps {
        e.validate().unwrap();
        assert_ne!(e.termination, Termination::Running);
        assert_eq!(e.frames.len(), e.steps() + 1);
    }
    assert!(collect(&common::tiny_config(), &Collector::Random, 0).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(dir.path(), common::tiny_config()).unwrap();
    let eps = p.collect().unwrap();
    assert_eq!(p.load_dataset().unwrap(), eps);
    let manifest = fs::read_to_string(dir.path().join("dataset/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 2 + eps.len());
}

#[test]
fn missing_prerequisites_are_dependency_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(dir.path(), common::tiny_config()).unwrap();
    let vae_err = p.train_vae().unwrap_err();
    assert!(matches!(&vae_err, Error::Dependency(m) if m.contains("collect")), "{vae_err}");
    p.collect().unwrap();
    let rnn_err = p.train_rnn().unwrap_err();
    assert!(matches!(&rnn_err, Error::Dependency(m) if m.contains("vae")), "{rnn_err}");
    assert_eq!(rnn_err.exit_code(), 3);
    let ctrl_err = p.train_controller().unwrap_err();
    assert!(matches!(ctrl_err, Error::Dependency(_)));
    p.train_vae().unwrap();
    let ctrl_err = p.train_controller().unwrap_err();
    assert!(matches!(&ctrl_err, Error::Dependency(m) if m.contains("rnn")), "{ctrl_err}");
    assert!(matches!(p.evaluate(Condition::Train, 1), Err(Error::Dependency(_))));
}

#[test]
fn artifacts_carry_their_config_hash_and_reject_others() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config();
    trained(dir.path(), cfg.clone());
    for (file, stage) in [
        ("vae.ckpt", Stage::Vae),
        ("rnn.ckpt", Stage::Rnn),
        ("controller.ckpt", Stage::Controller),
        ("dataset/episode_0000.arrays", Stage::Collect),
    ] {
        let a = ndgrad::read_arrays(dir.path().join(file)).unwrap();
        let stamp: Vec<u8> = a.get(HASH_KEY).unwrap().data().iter().map(|&v| v as u8).collect();
        assert_eq!(stamp, cfg.hash(stage), "{file}");
    }
    assert!(!dir.path().join("es_state.ckpt").exists());
    assert!(fs::read_to_string(dir.path().join("fitness.csv")).unwrap().lines().count() == 3);

    let mut changed = cfg.clone();
    changed.set("vae.kl_weight", "0.5").unwrap();
    let q = Pipeline::new(dir.path(), changed).unwrap();
    assert!(q.load_dataset().is_ok(), "collect does not depend on vae keys");
    assert!(matches!(q.load_vae(), Err(Error::Dependency(_))));
    assert!(matches!(q.load_rnn(), Err(Error::Dependency(_))));
    assert!(matches!(q.evaluate(Condition::Train, 1), Err(Error::Dependency(_))));

    // eval keys leave every checkpoint valid
    let mut more_pairs = cfg;
    more_pairs.set("eval.pairs", "3").unwrap();
    assert!(Pipeline::new(dir.path(), more_pairs).unwrap().load_agent_parts().is_ok());
}

#[test]
fn zero_controller_never_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config();
    let p = Pipeline::new(dir.path(), cfg.clone()).unwrap();
    p.collect().unwrap();
    let (vae, _) = p.train_vae().unwrap();
    let (rnn, _) = p.train_rnn().unwrap();
    let zero = ControllerParams::zeros(cfg.latent_dim, cfg.hidden);
    let r = p.evaluate_with(&vae, &rnn, &zero, Condition::Train, 3).unwrap();
    assert_eq!(r.episodes, 3);
    assert_eq!(r.successes, 0);
    assert_eq!(r.timeouts, 3);
    assert_eq!(r.success_pct(), 0.0);
}

#[test]
fn controller_acts_on_previous_hidden_state() {
    let dir = tempfile::tempdir().unwrap();
    let p = trained(dir.path(), common::tiny_config());
    let (vae, rnn, ctrl) = p.load_agent_parts().unwrap();
    let sc = p.eval_scenario(Condition::Train, 0);
    let sim = sc.simulator(p.config.frame_size).unwrap();
    let agent = Agent {
        vae: &vae,
        rnn: &rnn,
        controller: &ctrl,
        latent: LatentMode::Mean,
    };
    let opts = RolloutOptions {
        trace: true,
        record_frames: true,
        stall_steps: None,
    };
    let r = rollout(&sim, sc.start_offset, &Policy::Agent(agent), &p.config.reward, opts).unwrap();
    assert_eq!(r.trace.len() as u64, r.steps);
    let mut state = RnnState::zeros(p.config.hidden);
    for (t, (e, rec)) in r.trace.iter().zip(&r.records).enumerate() {
        assert_eq!(e.step, t as u64);
        assert_eq!(e.h_in, state.h, "step {t} read a hidden state other than h_(t-1)");
        let z = encode(&rec.frame, &vae).unwrap().mu;
        assert_eq!(e.z, z);
        assert_eq!(e.action, ctrl.act(&z, &state.h).unwrap());
        assert_eq!(rec.action, e.action);
        state = lstm_step(&state, &z, e.action, &rnn).unwrap().0;
        assert_eq!(e.h_out, state.h);
    }
}

#[test]
fn evaluation_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let p = trained(dir.path(), common::tiny_config());
    let a = p.report().unwrap();
    let b = p.report().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.conditions.len(), 4);
    for r in &a.conditions {
        assert_eq!(r.episodes, 2);
        assert_eq!(r.successes + r.collisions + r.timeouts, 2);
        assert!((0.0..=100.0).contains(&r.success_pct()));
    }
    let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("new_town") && text.contains("scripted"));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn render_dumps_paired_frames() {
    let dir = tempfile::tempdir().unwrap();
    let p = trained(dir.path(), common::tiny_config());
    let out = dir.path().join("render");
    let s = p.render(Condition::Train, 1, &out).unwrap();
    assert_eq!(s.frames as u64, s.steps);
    let obs = wmdrive::pipeline::dataset::read_frames(&out.join("obs.frames")).unwrap();
    let recon = wmdrive::pipeline::dataset::read_frames(&out.join("recon.frames")).unwrap();
    assert_eq!(obs.len(), s.frames);
    assert_eq!(recon.len(), s.frames);
    assert!(recon.iter().all(|f| f.width == 32 && f.height == 32));

    // reconstruction error on a train track stays near the training-set error
    let vae = p.load_vae().unwrap();
    let data: Vec<_> = p.load_dataset().unwrap().into_iter().flat_map(|e| e.frames).collect();
    let train_mae = data
        .iter()
        .map(|f| mean_abs_error(f, &reconstruct(f, &vae).unwrap()))
        .sum::<f64>()
        / data.len() as f64;
    assert!(s.mean_abs_error < 1.5 * train_mae, "{} vs {}", s.mean_abs_error, train_mae);
}

#[test]
fn whole_run_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        trained(d.path(), common::tiny_config()).report().unwrap();
    }
    for f in ["vae.ckpt", "rnn.ckpt", "controller.ckpt", "fitness.csv", "report.txt", "report.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
