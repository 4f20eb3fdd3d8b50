mod common;

use std::path::Path;

use common::*;
use interact_core::compose::{
    build_decomposition_prompt, build_interaction_prompt, draft_bundles, parse_llm_descriptions, Composer, Expected,
    FixtureClient, LengthEstimator, LlmClient, Parsed, ProceduralSource, PromptBundle, SinglePersonSource,
    ThemeSpec,
};
use interact_core::diffusion::{cosine_schedule, ConditionMode, SamplerConfig, COSINE_OFFSET};
use interact_core::eval::{Evaluator, EvaluatorConfig};
use interact_core::losses::Denormalizer;
use interact_core::motion::representation_width;
use interact_core::net::{Denoiser, ModelConfig};
use interact_core::text::{encode, StubEmbedder};
use interact_core::workbench::{generate_toy_samples, RunConfig, ToyConfig};
use interact_core::{Error, Provenance};

fn repo() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn interaction_prompt_matches_golden() {
    let (theme, tags, examples, m) = golden_interaction_inputs();
    let got = build_interaction_prompt(theme, &tags, &examples, m).unwrap();
    assert_eq!(got, include_str!("golden/interaction_prompt.txt"));
}

#[test]
fn decomposition_prompt_matches_golden() {
    let got = build_decomposition_prompt(GOLDEN_TWO_PERSON_TEXT).unwrap();
    assert_eq!(got, include_str!("golden/decomposition_prompt.txt"));
    assert!(build_decomposition_prompt("").is_err());
}

#[test]
fn replies_parse_strictly() {
    let pair = r#"{"1": {"person1": "The person leans back with arms outstretched.", "person2": "The person steps forward, hands on hips."}}"#;
    assert_eq!(
        parse_llm_descriptions(pair, Expected::PersonPair).unwrap(),
        Parsed::Pair(
            "The person leans back with arms outstretched.".into(),
            "The person steps forward, hands on hips.".into()
        )
    );
    let fenced = "```json\n[\"a b\", \"c d\"]\n```";
    assert_eq!(
        parse_llm_descriptions(fenced, Expected::ArrayOfStrings).unwrap(),
        Parsed::Descriptions(vec!["a b".into(), "c d".into()])
    );
    let bad = [
        ("[]", Expected::ArrayOfStrings),
        ("[1, 2]", Expected::ArrayOfStrings),
        ("[\"ok\", \"  \"]", Expected::ArrayOfStrings),
        ("not json", Expected::ArrayOfStrings),
        (r#"{"1": {"person1": "x"}}"#, Expected::PersonPair),
        (r#"{"2": {"person1": "x", "person2": "y"}}"#, Expected::PersonPair),
        (r#"["x", "y"]"#, Expected::PersonPair),
    ];
    for (raw, e) in bad {
        assert!(matches!(parse_llm_descriptions(raw, e), Err(Error::MalformedResponse(_))), "{raw}");
    }
}

#[test]
fn recorded_session_replays_offline() {
    let cfg = RunConfig::load(&repo().join("configs/toy.toml")).unwrap();
    let client = FixtureClient::load(&repo().join("crates/cli/tests/fixtures/compose.jsonl")).unwrap();
    let bundles = draft_bundles(&client, &cfg.compose.themes, &cfg.compose.examples, cfg.compose.per_theme).unwrap();
    assert_eq!(bundles.len(), cfg.compose.themes.len() * cfg.compose.per_theme);
    assert!(bundles.iter().all(|b| b.person1_text.starts_with("The person")));
    let unseen = ThemeSpec {
        theme: "farewell".into(),
        tags: vec![],
    };
    let err = draft_bundles(&client, &[unseen], &cfg.compose.examples, 3).unwrap_err();
    assert!(matches!(err, Error::FixtureMissing(_)));
    assert!(client.complete("anything else").is_err());
}

fn fitted_estimator(embedder: &StubEmbedder) -> LengthEstimator {
    let samples = generate_toy_samples(2, 64, &ToyConfig::default()).unwrap();
    let prompts: Vec<_> = samples.iter().map(|s| encode(s.caption(), embedder).unwrap()).collect();
    let frames: Vec<usize> = samples.iter().map(|s| s.frames()).collect();
    let mut est = LengthEstimator::new(24, 64, 1.0).unwrap();
    est.fit(&prompts, &frames).unwrap();
    est
}

#[test]
fn length_estimator_beats_the_mean() {
    let embedder = StubEmbedder::new(32);
    let est = fitted_estimator(&embedder);
    let test = generate_toy_samples(99, 64, &ToyConfig::default()).unwrap();
    let mean = 64.0f64.min(
        generate_toy_samples(2, 64, &ToyConfig::default())
            .unwrap()
            .iter()
            .map(|s| s.frames() as f64)
            .sum::<f64>()
            / 64.0,
    );
    let (mut mae, mut base) = (0.0, 0.0);
    for s in &test {
        let f = s.frames() as f64;
        mae += (est.estimate(&encode(s.caption(), &embedder).unwrap()).unwrap() as f64 - f).abs();
        base += (mean - f).abs();
    }
    assert!(mae <= base, "estimator {mae} vs mean {base}");
    assert!(LengthEstimator::new(24, 64, 1.0)
        .unwrap()
        .estimate(&encode("x", &embedder).unwrap())
        .is_err());
}

#[test]
fn composition_is_seeded_and_keeps_the_source_motion() {
    let embedder = StubEmbedder::new(32);
    let est = fitted_estimator(&embedder);
    let model_cfg = ModelConfig {
        text_width: 32,
        ..ModelConfig::toy()
    };
    let model = Denoiser::new(model_cfg, 0).unwrap();
    let schedule = cosine_schedule(1000, COSINE_OFFSET).unwrap();
    let denorm = Denormalizer::identity(representation_width(22));
    let source = ProceduralSource::default();
    let composer = Composer {
        source: &source,
        model: &model,
        estimator: &est,
        embedder: &embedder,
        sampler: SamplerConfig {
            ddim_steps: 4,
            ..SamplerConfig::default()
        },
        schedule: &schedule,
        denorm: &denorm,
        condition: ConditionMode::Clean,
    };
    let theme = ThemeSpec {
        theme: "greeting".into(),
        tags: vec!["friendly".into()],
    };
    let bundle = PromptBundle::new(
        &theme,
        "one person walks toward the other person, and the other person waves",
        "The person walks forward.",
        "The person waves the right hand.",
    )
    .unwrap();
    let a = composer.compose(&bundle, 7).unwrap();
    let b = composer.compose(&bundle, 7).unwrap();
    assert_eq!(a, b);
    let frames = est.estimate(&encode(&bundle.two_person_text, &embedder).unwrap()).unwrap();
    assert_eq!(a.frames(), frames);
    assert_eq!(a.agents[0], source.generate(&bundle.person1_text, frames, 7).unwrap());
    assert_eq!(a.metadata["theme"], "greeting");
    assert_eq!(a.provenance, Provenance::SyntheticRaw);
    let all = composer.compose_all(&[bundle.clone(), bundle], 7).unwrap();
    assert_eq!(all[0], a);
    assert_ne!(all[1].agents[1], a.agents[1]);
}

#[test]
fn evaluator_embeds_toy_samples() {
    let samples = generate_toy_samples(4, 8, &ToyConfig::default()).unwrap();
    let cfg = RunConfig::default();
    let embedder = cfg.text.build().unwrap();
    let ev = Evaluator::new(EvaluatorConfig::toy(), Denormalizer::identity(representation_width(22)), 0).unwrap();
    let m = ev.encode_motions(&samples).unwrap();
    let prompts: Vec<_> = samples.iter().map(|s| encode(s.caption(), embedder.as_ref()).unwrap()).collect();
    let t = ev.encode_texts(&prompts).unwrap();
    assert_eq!(m.dim(), t.dim());
    assert_eq!(m.nrows(), 8);
    assert!(m.iter().chain(t.iter()).all(|v| v.is_finite()));
}
