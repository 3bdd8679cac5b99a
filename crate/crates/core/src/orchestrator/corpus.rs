//! Seeded prompts from the controlled grammar and the integrated scenes they
//! render to. Used as the robustness benchmark corpus.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Backends, Engine, OrchestratorError};
use crate::clock::FixedClock;
use crate::config::PipelineConfig;
use crate::image::Image;
use crate::planner::lexicon::ENTITIES;
use crate::planner::{GridCell, HueTag, Lighting, Pose, RelationKind, SizeTag, Style};
use crate::prompt::PromptText;
use crate::protector::WatermarkSalt;
use crate::session::SessionState;

/// Random prompt of one to three clauses with distinct nouns. Clauses joined
/// by "and" may carry a grid anchor; related clauses never do, so the layout
/// is always satisfiable.
pub fn random_prompt(rng: &mut impl Rng) -> PromptText {
    let k = rng.random_range(1..=3);
    let mut nouns = ENTITIES.to_vec();
    nouns.shuffle(rng);
    let joins: Vec<Option<RelationKind>> = (1..k)
        .map(|_| {
            rng.random_bool(0.6)
                .then(|| *RelationKind::ALL.choose(rng).expect("nonempty"))
        })
        .collect();
    let mut cells = GridCell::ALL.to_vec();
    cells.shuffle(rng);

    let mut words: Vec<String> = Vec::new();
    for (i, noun) in nouns.iter().take(k).enumerate() {
        if i > 0 {
            words.push(match joins[i - 1] {
                Some(r) => r.word().replace('-', " "),
                None => "and".into(),
            });
        }
        words.push("a".into());
        if rng.random_bool(0.7) {
            words.push(HueTag::ALL.choose(rng).expect("nonempty").word().into());
        }
        if rng.random_bool(0.4) {
            words.push(SizeTag::ALL.choose(rng).expect("nonempty").word().into());
        }
        if rng.random_bool(0.2) {
            words.push(Style::ALL.choose(rng).expect("nonempty").word().into());
        }
        words.push((*noun).into());
        if rng.random_bool(0.2) {
            words.push(Pose::ALL.choose(rng).expect("nonempty").word().into());
        }
        let related =
            (i > 0 && joins[i - 1].is_some()) || joins.get(i).is_some_and(Option::is_some);
        if !related && rng.random_bool(0.3) {
            words.push(format!("in the {}", cells.pop().expect("nine cells")));
        }
    }
    let lighting = Lighting::ALL.choose(rng).expect("nonempty");
    if *lighting != Lighting::Neutral {
        words.push(format!("at {lighting}"));
    }
    PromptText::new(words.join(" ")).expect("prompt has words")
}

/// Seed of corpus entry `index`.
pub fn entry_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Prompt of corpus entry `index`.
pub fn corpus_prompt(seed: u64, index: usize) -> PromptText {
    random_prompt(&mut ChaCha8Rng::seed_from_u64(entry_seed(seed, index)))
}

/// Renders one prompt up to the integrated, unprotected scene.
pub fn render_scene(
    prompt: PromptText,
    seed: u64,
    size: usize,
) -> Result<Image, OrchestratorError> {
    let config = PipelineConfig {
        seed,
        scene_size: size,
        ..PipelineConfig::default()
    };
    let epoch = Utc.timestamp_opt(0, 0).single().expect("epoch");
    let backends =
        Backends::local(WatermarkSalt::new("corpus")).with_clock(Arc::new(FixedClock(epoch)));
    let mut engine = Engine::create(
        format!("corpus-{seed}"),
        prompt,
        config,
        "corpus",
        backends,
        None,
    )?;
    while engine.state() != SessionState::Integrating {
        if engine.state().is_terminal() {
            return Err(OrchestratorError::NotReady(engine.state()));
        }
        engine.advance()?;
    }
    Ok(engine.scene().expect("integrated").image.clone())
}

/// `n` integrated scenes of `size x size`, deterministic in `seed`.
pub fn scene_corpus(n: usize, seed: u64, size: usize) -> Result<Vec<Image>, OrchestratorError> {
    (0..n)
        .into_par_iter()
        .map(|i| render_scene(corpus_prompt(seed, i), entry_seed(seed, i), size))
        .collect()
}
