//! Synthetic captioning corpus with held-out nouns.
//!
//! Sentences follow `det color noun verb prep the place`, e.g. "two red dogs
//! sit on the grass". The context vector one-hot encodes the noun group,
//! color and place plus a plural flag, with a little uniform noise. Four noun
//! groups never appear in complete captions; they reach training only as
//! label groups in the partial file.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{write_jsonl, RawRecord};

pub const NOUNS: [(&str, &str); 12] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("bird", "birds"),
    ("horse", "horses"),
    ("car", "cars"),
    ("boat", "boats"),
    ("ball", "balls"),
    ("man", "men"),
    ("zebra", "zebras"),
    ("cake", "cakes"),
    ("kite", "kites"),
    ("train", "trains"),
];
/// Indices into [`NOUNS`] that are removed from the complete captions.
pub const HELD_OUT: [usize; 4] = [8, 9, 10, 11];
pub const COLORS: [&str; 6] = ["red", "blue", "green", "white", "black", "brown"];
pub const PLACES: [&str; 5] = ["grass", "beach", "road", "table", "field"];
const SINGULAR_DETS: [&str; 2] = ["a", "the"];
const PLURAL_DETS: [&str; 2] = ["two", "some"];
const VERBS: [(&str, &str); 2] = [("sits", "sit"), ("stands", "stand")];
const PREPS: [&str; 3] = ["on", "near", "in"];

pub fn context_dim() -> usize {
    NOUNS.len() + COLORS.len() + PLACES.len() + 1
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_complete: usize,
    pub train_partial: usize,
    /// Fraction of partial records whose noun is held out.
    pub partial_heldout_fraction: f64,
    pub eval_heldout: usize,
    pub eval_indomain: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_complete: 2000,
            train_partial: 1000,
            partial_heldout_fraction: 0.5,
            eval_heldout: 200,
            eval_indomain: 200,
            noise: 0.1,
        }
    }
}

pub fn vocabulary_words() -> Vec<String> {
    let mut words: Vec<&str> = Vec::new();
    words.extend(SINGULAR_DETS);
    words.extend(PLURAL_DETS);
    words.extend(COLORS);
    for (s, p) in NOUNS {
        words.push(s);
        words.push(p);
    }
    for (s, p) in VERBS {
        words.push(s);
        words.push(p);
    }
    words.extend(PREPS);
    // "the" is already in the list; it also precedes the place.
    words.extend(PLACES);
    words.iter().map(|w| w.to_string()).collect()
}

#[derive(Debug, Clone, Copy)]
struct Scene {
    noun: usize,
    color: usize,
    place: usize,
    plural: bool,
}

impl Scene {
    fn draw(rng: &mut ChaCha8Rng, nouns: &[usize]) -> Self {
        Self {
            noun: *nouns.choose(rng).expect("non-empty noun pool"),
            color: rng.gen_range(0..COLORS.len()),
            place: rng.gen_range(0..PLACES.len()),
            plural: rng.gen_bool(0.5),
        }
    }

    fn context(&self, rng: &mut ChaCha8Rng, noise: f64) -> Vec<f64> {
        let mut ctx = vec![0.0; context_dim()];
        ctx[self.noun] = 1.0;
        ctx[NOUNS.len() + self.color] = 1.0;
        ctx[NOUNS.len() + COLORS.len() + self.place] = 1.0;
        ctx[context_dim() - 1] = if self.plural { 1.0 } else { 0.0 };
        for x in &mut ctx {
            *x += rng.gen_range(-noise..=noise);
        }
        ctx
    }

    fn caption(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let (det, noun, verb) = if self.plural {
            (
                *PLURAL_DETS.choose(rng).unwrap(),
                NOUNS[self.noun].1,
                VERBS.choose(rng).unwrap().1,
            )
        } else {
            (
                *SINGULAR_DETS.choose(rng).unwrap(),
                NOUNS[self.noun].0,
                VERBS.choose(rng).unwrap().0,
            )
        };
        [
            det,
            COLORS[self.color],
            noun,
            verb,
            PREPS.choose(rng).unwrap(),
            "the",
            PLACES[self.place],
        ]
        .iter()
        .map(|w| w.to_string())
        .collect()
    }

    fn labels(&self) -> Vec<Vec<String>> {
        let (s, p) = NOUNS[self.noun];
        vec![
            vec![s.to_string(), p.to_string()],
            vec![COLORS[self.color].to_string()],
            vec![PLACES[self.place].to_string()],
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConceptEntry {
    pub name: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vec<String>,
    pub groups: Vec<Vec<String>>,
    pub train_complete: Vec<RawRecord>,
    pub train_partial: Vec<RawRecord>,
    pub eval_heldout: Vec<RawRecord>,
    pub eval_indomain: Vec<RawRecord>,
    pub mentions: Vec<ConceptEntry>,
}

fn record(id: String, context: Vec<f64>) -> RawRecord {
    RawRecord {
        id,
        context: Some(context),
        caption: None,
        labels: None,
        min_mentions: None,
        fsa: None,
        concepts: None,
    }
}

pub fn generate(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let in_domain: Vec<usize> = (0..NOUNS.len()).filter(|i| !HELD_OUT.contains(i)).collect();

    let captioned = |prefix: &str, n: usize, pool: &dyn Fn(usize) -> Vec<usize>, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| {
                let scene = Scene::draw(rng, &pool(i));
                let mut r = record(format!("{prefix}{i:05}"), scene.context(rng, cfg.noise));
                r.caption = Some(scene.caption(rng));
                (scene, r)
            })
            .collect::<Vec<_>>()
    };

    let train_complete = captioned("tc", cfg.train_complete, &|_| in_domain.clone(), &mut rng)
        .into_iter()
        .map(|(_, r)| r)
        .collect();

    let n_heldout = (cfg.train_partial as f64 * cfg.partial_heldout_fraction).round() as usize;
    let train_partial = (0..cfg.train_partial)
        .map(|i| {
            let pool: &[usize] = if i < n_heldout { &HELD_OUT } else { &in_domain };
            let scene = Scene::draw(&mut rng, pool);
            let mut r = record(format!("tp{i:05}"), scene.context(&mut rng, cfg.noise));
            r.labels = Some(scene.labels());
            r.min_mentions = Some(3);
            r
        })
        .collect();

    let half = cfg.eval_heldout / 2;
    let eval_heldout = captioned(
        "eh",
        cfg.eval_heldout,
        &|i| if i < half { HELD_OUT.to_vec() } else { in_domain.clone() },
        &mut rng,
    )
    .into_iter()
    .map(|(scene, mut r)| {
        let present: Vec<String> = HELD_OUT
            .iter()
            .filter(|&&h| h == scene.noun)
            .map(|&h| NOUNS[h].0.to_string())
            .collect();
        r.concepts = Some(present);
        r
    })
    .collect();

    let eval_indomain = captioned("ei", cfg.eval_indomain, &|_| in_domain.clone(), &mut rng)
        .into_iter()
        .map(|(_, r)| r)
        .collect();

    Corpus {
        vocab: vocabulary_words(),
        groups: NOUNS.iter().map(|(s, p)| vec![s.to_string(), p.to_string()]).collect(),
        train_complete,
        train_partial,
        eval_heldout,
        eval_indomain,
        mentions: HELD_OUT
            .iter()
            .map(|&h| ConceptEntry {
                name: NOUNS[h].0.to_string(),
                words: vec![NOUNS[h].0.to_string(), NOUNS[h].1.to_string()],
            })
            .collect(),
    }
}

/// Word forms of the held-out noun groups.
pub fn held_out_words() -> BTreeSet<&'static str> {
    HELD_OUT.iter().flat_map(|&h| [NOUNS[h].0, NOUNS[h].1]).collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl Corpus {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("vocab.json"), &self.vocab)?;
        write_json(&dir.join("groups.json"), &self.groups)?;
        write_json(&dir.join("mentions.json"), &self.mentions)?;
        for (name, rows) in [
            ("train_complete.jsonl", &self.train_complete),
            ("train_partial.jsonl", &self.train_partial),
            ("eval_heldout.jsonl", &self.eval_heldout),
            ("eval_indomain.jsonl", &self.eval_indomain),
        ] {
            let path = dir.join(name);
            write_jsonl(&path, rows).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 3,
            train_complete: 300,
            train_partial: 100,
            eval_heldout: 40,
            eval_indomain: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn vocabulary_is_valid_and_small() {
        let words = vocabulary_words();
        let v = ps3_core::Vocabulary::new(&words).unwrap();
        assert!((40..=50).contains(&v.content_size()));
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small());
        let b = generate(&small());
        let ser = |c: &Corpus| serde_json::to_string(&(&c.train_complete, &c.train_partial, &c.eval_heldout)).unwrap();
        assert_eq!(ser(&a), ser(&b));
        let c = generate(&SynthConfig { seed: 4, ..small() });
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn complete_captions_never_mention_held_out_nouns() {
        let held = held_out_words();
        let corpus = generate(&small());
        for r in &corpus.train_complete {
            assert!(r.caption.as_ref().unwrap().iter().all(|w| !held.contains(w.as_str())));
        }
    }

    #[test]
    fn partial_file_references_held_out_groups() {
        let held = held_out_words();
        let corpus = generate(&small());
        let hits = corpus
            .train_partial
            .iter()
            .filter(|r| {
                r.labels
                    .as_ref()
                    .unwrap()
                    .iter()
                    .flatten()
                    .any(|w| held.contains(w.as_str()))
            })
            .count();
        assert!(hits as f64 >= 0.3 * corpus.train_partial.len() as f64);
    }

    #[test]
    fn contexts_encode_the_scene() {
        let corpus = generate(&small());
        let r = &corpus.eval_heldout[0];
        let ctx = r.context.as_ref().unwrap();
        assert_eq!(ctx.len(), context_dim());
        let noun = (0..NOUNS.len()).max_by(|&a, &b| ctx[a].total_cmp(&ctx[b])).unwrap();
        let caption = r.caption.as_ref().unwrap();
        assert!(caption.contains(&NOUNS[noun].0.to_string()) || caption.contains(&NOUNS[noun].1.to_string()));
        assert_eq!(r.concepts.as_ref().unwrap(), &vec![NOUNS[noun].0.to_string()]);
    }
}
