use remqa::dataset::{audit_episode, build_dataset, ground_truth_answer, GenConfig};
use remqa::language::{parse_question, realize_question, QType};
use remqa::pipeline::{run_all, AgentConfig, Answer};
use std::collections::BTreeMap;

fn small() -> (remqa::dataset::Dataset, BTreeMap<(String, u32), remqa::World>) {
    let cfg = GenConfig { seed: 11, scale: 4, configs_per_scene: 2, episodes_per_scene: 12, train_fraction: 0.75 };
    let (ds, set) = build_dataset(&cfg).unwrap();
    let worlds = set.scenes.into_iter().flatten().map(|w| ((w.scene_id.clone(), w.config_id), w)).collect();
    (ds, worlds)
}

#[test]
fn every_episode_passes_its_audit() {
    let (ds, worlds) = small();
    assert!(!ds.episodes.is_empty());
    for e in &ds.episodes {
        let w = &worlds[&(e.scene_id.clone(), e.config_id)];
        audit_episode(w, e).unwrap_or_else(|m| panic!("{}: {m}", e.episode_id));
        assert_eq!(ground_truth_answer(w, e), e.truth);
        assert_eq!(parse_question(&e.question).unwrap(), e.question_ast);
        assert_eq!(realize_question(&e.question_ast), e.question);
    }
}

#[test]
fn results_do_not_depend_on_episode_order() {
    let (ds, worlds) = small();
    let config = AgentConfig { noise_sigma: 0.05, label_flip: 0.05, seed: 4, ..AgentConfig::default() };
    let forward = run_all(&ds.episodes, &worlds, &config).unwrap();
    let mut reversed = ds.episodes.clone();
    reversed.reverse();
    assert_eq!(forward, run_all(&reversed, &worlds, &config).unwrap());
}

#[test]
fn tighter_budget_never_helps() {
    let (ds, worlds) = small();
    let at = |budget| run_all(&ds.episodes, &worlds, &AgentConfig { budget, ..AgentConfig::default() }).unwrap();
    let (wide, tight) = (at(50), at(25));
    for (w, t) in wide.iter().zip(&tight) {
        assert!(t.nav.spl_term() <= w.nav.spl_term());
        assert!(!t.navigated || w.navigated);
    }
    let tiny = at(1);
    assert!(tiny.iter().all(|r| !r.navigated && r.answer == Answer::default_for(r.qtype)));
}

#[test]
fn skipping_manipulation_answers_defaults_on_receptacle_questions() {
    let (ds, worlds) = small();
    let results = run_all(&ds.episodes, &worlds, &AgentConfig { manipulate: false, ..AgentConfig::default() }).unwrap();
    for r in results.iter().filter(|r| r.qtype != QType::Spatial) {
        assert_eq!(r.answer, Answer::default_for(r.qtype), "{}", r.episode_id);
    }
}
