//! Deterministic synthetic review generator. Emits parsed sentences in the
//! dataset JSONL format with the exact per-split polarity counts of the
//! four benchmarks, plus a word-vector file for the generated lexicon.
//!
//! Sentences are built from templates whose dependency trees place the
//! aspect's real sentiment cue one hop away while distractor cues sit two
//! hops away (and often closer in surface order), so syntax-aware
//! attention genuinely outperforms sequence proximity. A per-class flip
//! rate makes a controlled fraction of labels contradict their text,
//! which caps attainable test accuracy.

use crate::corpus::{Polarity, RawExample};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct Lexicon {
    aspects: &'static [&'static str],
    compound_aspects: &'static [(&'static str, &'static str)],
    /// Head nouns for the distractor prepositional phrase.
    pp_nouns: &'static [&'static str],
    /// Attribute nouns that take the aspect as an "of" complement.
    holder_nouns: &'static [&'static str],
    pos_adj: &'static [&'static str],
    neg_adj: &'static [&'static str],
    neu_adj: &'static [&'static str],
    factual_verbs: &'static [&'static str],
}

static RESTAURANT: Lexicon = Lexicon {
    aspects: &[
        "food", "service", "staff", "menu", "pizza", "pasta", "wine", "dessert", "atmosphere",
        "waiter", "decor", "sushi", "portions", "prices", "coffee", "bread", "salad", "soup",
        "chef", "bar",
    ],
    compound_aspects: &[
        ("wine", "list"),
        ("fish", "tacos"),
        ("spring", "rolls"),
        ("dining", "room"),
    ],
    pp_nouns: &["place", "corner", "room", "street", "block", "neighborhood"],
    holder_nouns: &["flavor", "texture", "portion", "presentation", "aroma"],
    pos_adj: &[
        "great",
        "excellent",
        "delicious",
        "friendly",
        "amazing",
        "wonderful",
        "fantastic",
        "tasty",
        "helpful",
        "superb",
        "outstanding",
        "charming",
    ],
    neg_adj: &[
        "terrible",
        "awful",
        "bland",
        "rude",
        "disappointing",
        "horrible",
        "slow",
        "overpriced",
        "stale",
        "mediocre",
        "greasy",
        "noisy",
    ],
    neu_adj: &[
        "average", "ordinary", "standard", "typical", "plain", "usual", "routine", "common",
    ],
    factual_verbs: &["ordered", "tried", "mentioned", "noticed"],
};

static LAPTOP: Lexicon = Lexicon {
    aspects: &[
        "battery", "screen", "keyboard", "trackpad", "performance", "speakers", "design",
        "software", "warranty", "fan", "memory", "display", "price", "storage", "webcam",
        "hinge", "charger", "cooling", "setup", "chassis",
    ],
    compound_aspects: &[
        ("battery", "life"),
        ("screen", "resolution"),
        ("build", "quality"),
        ("boot", "time"),
    ],
    pp_nouns: &["box", "store", "shelf", "office", "desk", "bag"],
    holder_nouns: &["build", "layout", "finish", "speed", "feel"],
    pos_adj: &[
        "fast",
        "sturdy",
        "bright",
        "responsive",
        "reliable",
        "excellent",
        "crisp",
        "solid",
        "quiet",
        "smooth",
        "superb",
        "great",
    ],
    neg_adj: &[
        "slow",
        "flimsy",
        "dim",
        "unresponsive",
        "unreliable",
        "terrible",
        "mushy",
        "loud",
        "buggy",
        "awful",
        "fragile",
        "weak",
    ],
    neu_adj: &[
        "standard", "typical", "average", "ordinary", "usual", "common", "plain", "regular",
    ],
    factual_verbs: &["tested", "tried", "mentioned", "noticed"],
};

static TWITTER: Lexicon = Lexicon {
    aspects: &[
        "phone", "app", "movie", "game", "show", "album", "team", "car", "city", "brand",
        "coach", "singer", "actor", "camera", "update", "trailer", "concert", "match",
        "interview", "stadium",
    ],
    compound_aspects: &[("video", "game"), ("talk", "show"), ("race", "car")],
    pp_nouns: &["feed", "thread", "post", "clip", "photo", "stream"],
    holder_nouns: &["plot", "pace", "sound", "style", "vibe"],
    pos_adj: &[
        "awesome", "great", "brilliant", "fun", "amazing", "solid", "smooth", "fresh",
        "catchy", "sharp", "superb", "lovely",
    ],
    neg_adj: &[
        "awful", "boring", "broken", "laggy", "terrible", "messy", "dull", "weak",
        "annoying", "rough", "shaky", "bleak",
    ],
    neu_adj: &[
        "average", "typical", "standard", "usual", "ordinary", "normal", "plain", "common",
    ],
    factual_verbs: &["watched", "tried", "mentioned", "noticed"],
};

/// Exact Table-1-shaped dataset profile: counts are positive/negative/
/// neutral per split, flips are the per-class text-contradiction rates.
#[derive(Debug)]
pub struct Profile {
    pub name: &'static str,
    pub train: [usize; 3],
    pub test: [usize; 3],
    flip: [f64; 3],
    lexicon: &'static Lexicon,
}

pub static PROFILES: [Profile; 4] = [
    Profile {
        name: "rest14",
        train: [2164, 807, 637],
        test: [727, 196, 196],
        flip: [0.06, 0.22, 0.40],
        lexicon: &RESTAURANT,
    },
    Profile {
        name: "laptop14",
        train: [976, 851, 455],
        test: [337, 128, 167],
        flip: [0.12, 0.18, 0.28],
        lexicon: &LAPTOP,
    },
    Profile {
        name: "twitter",
        train: [1507, 1528, 3016],
        test: [172, 169, 336],
        flip: [0.15, 0.17, 0.20],
        lexicon: &TWITTER,
    },
    Profile {
        name: "rest16",
        train: [1321, 488, 73],
        test: [487, 136, 32],
        flip: [0.08, 0.18, 0.30],
        lexicon: &RESTAURANT,
    },
];

pub fn profile(name: &str) -> Option<&'static Profile> {
    PROFILES.iter().find(|p| p.name == name)
}

fn sub_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn pick<'a>(rng: &mut ChaCha12Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn adj_list(lex: &Lexicon, class: Polarity) -> &'static [&'static str] {
    match class {
        Polarity::Positive => lex.pos_adj,
        Polarity::Negative => lex.neg_adj,
        Polarity::Neutral => lex.neu_adj,
    }
}

/// A sentiment class whose cue words contradict `class`.
fn opposing(rng: &mut ChaCha12Rng, class: Polarity) -> Polarity {
    match class {
        Polarity::Positive => Polarity::Negative,
        Polarity::Negative => Polarity::Positive,
        Polarity::Neutral => {
            if rng.gen::<f64>() < 0.5 {
                Polarity::Positive
            } else {
                Polarity::Negative
            }
        }
    }
}

struct Sentence {
    tokens: Vec<String>,
    pos: Vec<String>,
    heads: Vec<i64>,
    deps: Vec<String>,
    aspect_from: usize,
    aspect_to: usize,
}

impl Sentence {
    fn into_example(self, polarity: Polarity) -> RawExample {
        RawExample {
            tokens: self.tokens,
            pos_tags: self.pos,
            aspect_from: self.aspect_from,
            aspect_to: self.aspect_to,
            polarity,
            heads: self.heads,
            dep_labels: self.deps,
        }
    }
}

/// Aspect phrase: usually one noun, sometimes a two-token compound.
fn pick_aspect(rng: &mut ChaCha12Rng, lex: &Lexicon) -> Vec<&'static str> {
    if !lex.compound_aspects.is_empty() && rng.gen::<f64>() < 0.18 {
        let (a, b) = lex.compound_aspects[rng.gen_range(0..lex.compound_aspects.len())];
        vec![a, b]
    } else {
        vec![pick(rng, lex.aspects)]
    }
}

const COPULAS: [&str; 3] = ["was", "seemed", "looked"];
const ADVERBS: [&str; 4] = ["today", "overall", "honestly", "lately"];
const INTENSIFIERS: [&str; 4] = ["really", "quite", "rather", "truly"];

/// "the ASPECT was ADJ [and ADJ] [ADV]": cue adjacent to the aspect in the
/// tree, sometimes doubled as a same-class conjoined pair.
fn copular(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let verb = pick(rng, &COPULAS);
    let adj = pick(rng, adj_list(lex, cue));
    let adj_idx = (m + 2) as i64;
    let mut tokens = vec!["the".to_string()];
    let mut pos = vec!["DT".to_string()];
    let mut heads = vec![m as i64];
    let mut deps = vec!["det".to_string()];
    for (i, w) in aspect.iter().enumerate() {
        tokens.push(w.to_string());
        pos.push("NN".to_string());
        if i + 1 < m {
            heads.push(m as i64);
            deps.push("compound".to_string());
        } else {
            heads.push(adj_idx);
            deps.push("nsubj".to_string());
        }
    }
    tokens.push(verb.to_string());
    pos.push("VBD".to_string());
    heads.push(adj_idx);
    deps.push("cop".to_string());
    tokens.push(adj.to_string());
    pos.push("JJ".to_string());
    heads.push(-1);
    deps.push("root".to_string());
    if rng.gen::<f64>() < 0.25 {
        let adj2 = pick(rng, adj_list(lex, cue));
        tokens.push("and".to_string());
        pos.push("CC".to_string());
        heads.push(adj_idx + 2);
        deps.push("cc".to_string());
        tokens.push(adj2.to_string());
        pos.push("JJ".to_string());
        heads.push(adj_idx);
        deps.push("conj".to_string());
    }
    if rng.gen::<f64>() < 0.3 {
        tokens.push(pick(rng, &ADVERBS).to_string());
        pos.push("RB".to_string());
        heads.push(adj_idx);
        deps.push("advmod".to_string());
    }
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 1,
        aspect_to: 1 + m,
    }
}

/// "we VERB the ASPECT [ADV]": no sentiment cue at all.
fn factual(rng: &mut ChaCha12Rng, lex: &Lexicon) -> Sentence {
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let verb = pick(rng, lex.factual_verbs);
    let last_aspect = (2 + m) as i64;
    let mut tokens = vec!["we".to_string(), verb.to_string(), "the".to_string()];
    let mut pos = vec!["PRP".to_string(), "VBD".to_string(), "DT".to_string()];
    let mut heads = vec![1, -1, last_aspect];
    let mut deps = vec!["nsubj".to_string(), "root".to_string(), "det".to_string()];
    for (i, w) in aspect.iter().enumerate() {
        tokens.push(w.to_string());
        pos.push("NN".to_string());
        if i + 1 < m {
            heads.push(last_aspect);
            deps.push("compound".to_string());
        } else {
            heads.push(1);
            deps.push("obj".to_string());
        }
    }
    if rng.gen::<f64>() < 0.4 {
        tokens.push("yesterday".to_string());
        pos.push("NN".to_string());
        heads.push(1);
        deps.push("advmod".to_string());
    }
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 3,
        aspect_to: 3 + m,
    }
}

/// Two conjoined clauses with opposite cues. The aspect's own cue is one
/// hop away; the other clause's cue is two hops (via the conj edge).
fn contrast(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let other_cue = opposing(rng, cue);
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj_cue = pick(rng, adj_list(lex, cue));
    let adj_other = pick(rng, adj_list(lex, other_cue));
    let mut other_noun = pick(rng, lex.aspects);
    while aspect.contains(&other_noun) {
        other_noun = pick(rng, lex.aspects);
    }
    let target_first = rng.gen::<f64>() < 0.5;
    if target_first {
        // the ASPECT was ADJ_cue but the OTHER was ADJ_other
        let root = (m + 2) as i64;
        let conj = (m + 7) as i64;
        let mut tokens = vec!["the".to_string()];
        let mut pos = vec!["DT".to_string()];
        let mut heads = vec![m as i64];
        let mut deps = vec!["det".to_string()];
        for (i, w) in aspect.iter().enumerate() {
            tokens.push(w.to_string());
            pos.push("NN".to_string());
            if i + 1 < m {
                heads.push(m as i64);
                deps.push("compound".to_string());
            } else {
                heads.push(root);
                deps.push("nsubj".to_string());
            }
        }
        let tail = [
            ("was", "VBD", root, "cop"),
            (adj_cue, "JJ", -1, "root"),
            ("but", "CC", conj, "cc"),
            ("the", "DT", (m + 5) as i64, "det"),
            (other_noun, "NN", conj, "nsubj"),
            ("was", "VBD", conj, "cop"),
            (adj_other, "JJ", root, "conj"),
        ];
        for (t, p, h, d) in tail {
            tokens.push(t.to_string());
            pos.push(p.to_string());
            heads.push(h);
            deps.push(d.to_string());
        }
        Sentence {
            tokens,
            pos,
            heads,
            deps,
            aspect_from: 1,
            aspect_to: 1 + m,
        }
    } else {
        // the OTHER was ADJ_other but the ASPECT was ADJ_cue
        let conj = (7 + m) as i64;
        let mut tokens: Vec<String> = ["the", other_noun, "was", adj_other, "but", "the"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut pos: Vec<String> = ["DT", "NN", "VBD", "JJ", "CC", "DT"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut heads: Vec<i64> = vec![1, 3, 3, -1, conj, (5 + m) as i64];
        let mut deps: Vec<String> = ["det", "nsubj", "cop", "root", "cc", "det"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (i, w) in aspect.iter().enumerate() {
            tokens.push(w.to_string());
            pos.push("NN".to_string());
            if i + 1 < m {
                heads.push((5 + m) as i64);
                deps.push("compound".to_string());
            } else {
                heads.push(conj);
                deps.push("nsubj".to_string());
            }
        }
        tokens.push("was".to_string());
        pos.push("VBD".to_string());
        heads.push(conj);
        deps.push("cop".to_string());
        tokens.push(adj_cue.to_string());
        pos.push("JJ".to_string());
        heads.push(3);
        deps.push("conj".to_string());
        Sentence {
            tokens,
            pos,
            heads,
            deps,
            aspect_from: 6,
            aspect_to: 6 + m,
        }
    }
}

/// "the ASPECT in the ADJ_other NOUN was ADJ_cue": the misleading cue is
/// closer in surface order but two hops away in the tree.
fn distractor(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let other_cue = opposing(rng, cue);
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj_cue = pick(rng, adj_list(lex, cue));
    let adj_other = pick(rng, adj_list(lex, other_cue));
    let noun = pick(rng, lex.pp_nouns);
    let root = (m + 6) as i64;
    let pp_noun_idx = (m + 4) as i64;
    let mut tokens = vec!["the".to_string()];
    let mut pos = vec!["DT".to_string()];
    let mut heads = vec![m as i64];
    let mut deps = vec!["det".to_string()];
    for (i, w) in aspect.iter().enumerate() {
        tokens.push(w.to_string());
        pos.push("NN".to_string());
        if i + 1 < m {
            heads.push(m as i64);
            deps.push("compound".to_string());
        } else {
            heads.push(root);
            deps.push("nsubj".to_string());
        }
    }
    let tail = [
        ("in", "IN", pp_noun_idx, "case"),
        ("the", "DT", pp_noun_idx, "det"),
        (adj_other, "JJ", pp_noun_idx, "amod"),
        (noun, "NN", m as i64, "nmod"),
        ("was", "VBD", root, "cop"),
        (adj_cue, "JJ", -1, "root"),
    ];
    for (t, p, h, d) in tail {
        tokens.push(t.to_string());
        pos.push(p.to_string());
        heads.push(h);
        deps.push(d.to_string());
    }
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 1,
        aspect_to: 1 + m,
    }
}

/// "my friend said the ASPECT was ADJ": cue still one hop from the aspect,
/// embedded under a speech verb.
fn attribution(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj = pick(rng, adj_list(lex, cue));
    let adj_idx = (5 + m) as i64;
    let last_aspect = (3 + m) as i64;
    let mut tokens: Vec<String> = ["my", "friend", "said", "the"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut pos: Vec<String> = ["PRP$", "NN", "VBD", "DT"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut heads: Vec<i64> = vec![1, 2, -1, last_aspect];
    let mut deps: Vec<String> = ["poss", "nsubj", "root", "det"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (i, w) in aspect.iter().enumerate() {
        tokens.push(w.to_string());
        pos.push("NN".to_string());
        if i + 1 < m {
            heads.push(last_aspect);
            deps.push("compound".to_string());
        } else {
            heads.push(adj_idx);
            deps.push("nsubj".to_string());
        }
    }
    tokens.push("was".to_string());
    pos.push("VBD".to_string());
    heads.push(adj_idx);
    deps.push("cop".to_string());
    tokens.push(adj.to_string());
    pos.push("JJ".to_string());
    heads.push(2);
    deps.push("ccomp".to_string());
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 4,
        aspect_to: 4 + m,
    }
}

/// Conjoined clauses where the aspect's clause also carries a misleading
/// adjective inside a PP: "the ASPECT in the ADJ_x NOUN was [INT] ADJ_cue
/// but the OTHER was ADJ_x". Both misleading adjectives share one wrong
/// class and sit two hops from the aspect; the cue stays at one hop. No
/// single surface rule survives: the nearest adjective is wrong, both
/// clauses contain a copula, and the intensifier jitters the cue offset.
fn tangle(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let wrong = opposing(rng, cue);
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj_cue = pick(rng, adj_list(lex, cue));
    let adj_np = pick(rng, adj_list(lex, wrong));
    let adj_clause = pick(rng, adj_list(lex, wrong));
    let noun = pick(rng, lex.pp_nouns);
    let mut other_noun = pick(rng, lex.pp_nouns);
    while other_noun == noun {
        other_noun = pick(rng, lex.pp_nouns);
    }
    let intensify = rng.gen::<f64>() < 0.4;
    let target_first = rng.gen::<f64>() < 0.5;

    let mut tokens: Vec<String> = Vec::new();
    let mut pos: Vec<String> = Vec::new();
    let mut heads: Vec<i64> = Vec::new();
    let mut deps: Vec<String> = Vec::new();
    let push = |tokens: &mut Vec<String>,
                    pos: &mut Vec<String>,
                    heads: &mut Vec<i64>,
                    deps: &mut Vec<String>,
                    t: &str,
                    p: &str,
                    h: i64,
                    d: &str| {
        tokens.push(t.to_string());
        pos.push(p.to_string());
        heads.push(h);
        deps.push(d.to_string());
    };

    if target_first {
        // the ASP in the ADJ_x NOUN was [INT] ADJ_cue but the OTHER was ADJ_x
        let pad = intensify as usize;
        let noun_idx = (m + 4) as i64;
        let root = (m + 6 + pad) as i64;
        let conj = (m + 11 + pad) as i64;
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", m as i64, "det");
        for (i, w) in aspect.iter().enumerate() {
            let (h, d) = if i + 1 < m {
                (m as i64, "compound")
            } else {
                (root, "nsubj")
            };
            push(&mut tokens, &mut pos, &mut heads, &mut deps, w, "NN", h, d);
        }
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "in", "IN", noun_idx, "case");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", noun_idx, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_np, "JJ", noun_idx, "amod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, noun, "NN", m as i64, "nmod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", root, "cop");
        if intensify {
            let int = pick(rng, &INTENSIFIERS);
            push(&mut tokens, &mut pos, &mut heads, &mut deps, int, "RB", root, "advmod");
        }
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_cue, "JJ", -1, "root");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "but", "CC", conj, "cc");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", conj - 2, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, other_noun, "NN", conj, "nsubj");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", conj, "cop");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_clause, "JJ", root, "conj");
        Sentence {
            tokens,
            pos,
            heads,
            deps,
            aspect_from: 1,
            aspect_to: 1 + m,
        }
    } else {
        // the OTHER was ADJ_x but the ASP in the ADJ_x NOUN was [INT] ADJ_cue
        let pad = intensify as usize;
        let aspect_last = (5 + m) as i64;
        let noun_idx = (9 + m) as i64;
        let root_t = (11 + m + pad) as i64;
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", 1, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, other_noun, "NN", 3, "nsubj");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", 3, "cop");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_clause, "JJ", -1, "root");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "but", "CC", root_t, "cc");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", aspect_last, "det");
        for (i, w) in aspect.iter().enumerate() {
            let (h, d) = if i + 1 < m {
                (aspect_last, "compound")
            } else {
                (root_t, "nsubj")
            };
            push(&mut tokens, &mut pos, &mut heads, &mut deps, w, "NN", h, d);
        }
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "in", "IN", noun_idx, "case");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", noun_idx, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_np, "JJ", noun_idx, "amod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, noun, "NN", aspect_last, "nmod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", root_t, "cop");
        if intensify {
            let int = pick(rng, &INTENSIFIERS);
            push(&mut tokens, &mut pos, &mut heads, &mut deps, int, "RB", root_t, "advmod");
        }
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_cue, "JJ", 3, "conj");
        Sentence {
            tokens,
            pos,
            heads,
            deps,
            aspect_from: 6,
            aspect_to: 6 + m,
        }
    }
}

/// The cue describes an attribute of the aspect, so it sits two hops out
/// ("the HNOUN of the ASPECT ... was [INT] ADJ_cue"), past the reach of
/// both the one-hop view and the type matrix. Two wrong-class adjectives
/// hang off a with-phrase on the attribute noun at hops three and four,
/// either premodifying its object or inside a relative clause on it, so
/// the wide views are poisoned and no clause boundary separates cue from
/// bait. Whether the sentiment after "was" is trustworthy depends on the
/// parse alone.
fn holder(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let wrong = opposing(rng, cue);
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj_cue = pick(rng, adj_list(lex, cue));
    let adj_a = pick(rng, adj_list(lex, wrong));
    let adj_b = pick(rng, adj_list(lex, wrong));
    let hnoun = pick(rng, lex.holder_nouns);
    let other = pick(rng, lex.pp_nouns);
    let intensify = rng.gen::<f64>() < 0.4;
    let pad = intensify as usize;
    let relcl = rng.gen::<f64>() < 0.5;

    let mut tokens: Vec<String> = Vec::new();
    let mut pos: Vec<String> = Vec::new();
    let mut heads: Vec<i64> = Vec::new();
    let mut deps: Vec<String> = Vec::new();
    let push = |tokens: &mut Vec<String>,
                pos: &mut Vec<String>,
                heads: &mut Vec<i64>,
                deps: &mut Vec<String>,
                t: &str,
                p: &str,
                h: i64,
                d: &str| {
        tokens.push(t.to_string());
        pos.push(p.to_string());
        heads.push(h);
        deps.push(d.to_string());
    };

    let aspect_last = (3 + m) as i64;
    let root = (if relcl { 13 + m + pad } else { 11 + m + pad }) as i64;
    push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", 1, "det");
    push(&mut tokens, &mut pos, &mut heads, &mut deps, hnoun, "NN", root, "nsubj");
    push(&mut tokens, &mut pos, &mut heads, &mut deps, "of", "IN", aspect_last, "case");
    push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", aspect_last, "det");
    for (i, w) in aspect.iter().enumerate() {
        let (h, d) = if i + 1 < m {
            (aspect_last, "compound")
        } else {
            (1, "nmod")
        };
        push(&mut tokens, &mut pos, &mut heads, &mut deps, w, "NN", h, d);
    }
    if relcl {
        // with the OTHER that was ADJ_x and ADJ_x
        let other_idx = (6 + m) as i64;
        let rel = (9 + m) as i64;
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "with", "IN", other_idx, "case");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", other_idx, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, other, "NN", 1, "nmod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "that", "WDT", rel, "nsubj");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", rel, "cop");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_a, "JJ", other_idx, "acl");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "and", "CC", rel + 2, "cc");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_b, "JJ", rel, "conj");
    } else {
        // with the ADJ_x and ADJ_x OTHER
        let first = (6 + m) as i64;
        let other_idx = (9 + m) as i64;
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "with", "IN", other_idx, "case");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "the", "DT", other_idx, "det");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_a, "JJ", other_idx, "amod");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, "and", "CC", first + 2, "cc");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_b, "JJ", first, "conj");
        push(&mut tokens, &mut pos, &mut heads, &mut deps, other, "NN", 1, "nmod");
    }
    push(&mut tokens, &mut pos, &mut heads, &mut deps, "was", "VBD", root, "cop");
    if intensify {
        let int = pick(rng, &INTENSIFIERS);
        push(&mut tokens, &mut pos, &mut heads, &mut deps, int, "RB", root, "advmod");
    }
    push(&mut tokens, &mut pos, &mut heads, &mut deps, adj_cue, "JJ", -1, "root");
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 4,
        aspect_to: 4 + m,
    }
}


/// The aspect sits inside the subject NP with its cue as a premodifier:
/// "the NOUN with the ADJ_cue ASPECT was ADJ_x and ADJ_x". The copular
/// adjectives describe the outer noun and carry one wrong class, so the
/// "adjective after the copula" rule fails here while the tree still puts
/// the cue one hop from the aspect and the poison two and three hops out.
fn mirror(rng: &mut ChaCha12Rng, lex: &Lexicon, cue: Polarity) -> Sentence {
    let wrong = opposing(rng, cue);
    let aspect = pick_aspect(rng, lex);
    let m = aspect.len();
    let adj_cue = pick(rng, adj_list(lex, cue));
    let adj_head = pick(rng, adj_list(lex, wrong));
    let adj_conj = pick(rng, adj_list(lex, wrong));
    let noun = pick(rng, lex.pp_nouns);
    let aspect_last = (4 + m) as i64;
    let root = (6 + m) as i64;

    let mut tokens: Vec<String> = Vec::new();
    let mut pos: Vec<String> = Vec::new();
    let mut heads: Vec<i64> = Vec::new();
    let mut deps: Vec<String> = Vec::new();
    let mut push = |t: &str, p: &str, h: i64, d: &str| {
        tokens.push(t.to_string());
        pos.push(p.to_string());
        heads.push(h);
        deps.push(d.to_string());
    };
    push("the", "DT", 1, "det");
    push(noun, "NN", root, "nsubj");
    push("with", "IN", aspect_last, "case");
    push("the", "DT", aspect_last, "det");
    push(adj_cue, "JJ", aspect_last, "amod");
    for (i, w) in aspect.iter().enumerate() {
        let (h, d) = if i + 1 < m {
            (aspect_last, "compound")
        } else {
            (1, "nmod")
        };
        push(w, "NN", h, d);
    }
    push("was", "VBD", root, "cop");
    push(adj_head, "JJ", -1, "root");
    push("and", "CC", root + 2, "cc");
    push(adj_conj, "JJ", root, "conj");
    Sentence {
        tokens,
        pos,
        heads,
        deps,
        aspect_from: 5,
        aspect_to: 5 + m,
    }
}

fn gen_example(profile: &Profile, gold: Polarity, rng: &mut ChaCha12Rng) -> RawExample {
    let lex = profile.lexicon;
    let cue = if rng.gen::<f64>() < profile.flip[gold.id() as usize] {
        opposing(rng, gold)
    } else {
        gold
    };
    let roll: f64 = rng.gen();
    let sentence = if cue == Polarity::Neutral {
        if roll < 0.27 {
            factual(rng, lex)
        } else if roll < 0.44 {
            copular(rng, lex, cue)
        } else if roll < 0.56 {
            contrast(rng, lex, cue)
        } else if roll < 0.68 {
            distractor(rng, lex, cue)
        } else if roll < 0.78 {
            tangle(rng, lex, cue)
        } else if roll < 0.85 {
            mirror(rng, lex, cue)
        } else {
            holder(rng, lex, cue)
        }
    } else if roll < 0.18 {
        copular(rng, lex, cue)
    } else if roll < 0.33 {
        contrast(rng, lex, cue)
    } else if roll < 0.44 {
        distractor(rng, lex, cue)
    } else if roll < 0.52 {
        attribution(rng, lex, cue)
    } else if roll < 0.66 {
        tangle(rng, lex, cue)
    } else if roll < 0.77 {
        mirror(rng, lex, cue)
    } else {
        holder(rng, lex, cue)
    };
    sentence.into_example(gold)
}

/// One split with exactly the profile's per-class counts, shuffled into a
/// stable order. Fully determined by (profile, split name, seed).
pub fn generate(profile: &Profile, split: &str, seed: u64) -> Vec<RawExample> {
    let counts = match split {
        "train" => profile.train,
        _ => profile.test,
    };
    let mut examples = Vec::with_capacity(counts.iter().sum());
    for (class_id, &count) in counts.iter().enumerate() {
        let gold = Polarity::from_id(class_id as u32).unwrap();
        for i in 0..count {
            let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(
                seed,
                &[
                    profile.name.as_bytes(),
                    split.as_bytes(),
                    &(class_id as u64).to_le_bytes(),
                    &(i as u64).to_le_bytes(),
                ],
            ));
            examples.push(gen_example(profile, gold, &mut rng));
        }
    }
    let mut order_rng = ChaCha12Rng::seed_from_u64(sub_seed(
        seed,
        &[profile.name.as_bytes(), split.as_bytes(), b"order"],
    ));
    examples.shuffle(&mut order_rng);
    examples
}

fn example_json(ex: &RawExample) -> String {
    serde_json::json!({
        "token": ex.tokens,
        "pos": ex.pos_tags,
        "head": ex.heads,
        "deprel": ex.dep_labels,
        "aspect_from": ex.aspect_from,
        "aspect_to": ex.aspect_to,
        "polarity": ex.polarity.name(),
    })
    .to_string()
}

pub fn write_jsonl(path: &Path, examples: &[RawExample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for ex in examples {
        writeln!(f, "{}", example_json(ex)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Every surface form the generator can emit for this lexicon.
pub fn lexicon_words(lex: &Lexicon) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    let fixed = [
        "the", "was", "seemed", "looked", "but", "in", "with", "and", "of", "that", "we",
        "my", "friend", "said", "yesterday",
    ];
    for w in fixed {
        words.insert(w.to_string());
    }
    for w in ADVERBS.iter().chain(&INTENSIFIERS) {
        words.insert(w.to_string());
    }
    for group in [
        lex.aspects,
        lex.pp_nouns,
        lex.holder_nouns,
        lex.pos_adj,
        lex.neg_adj,
        lex.neu_adj,
        lex.factual_verbs,
    ] {
        for w in group {
            words.insert(w.to_string());
        }
    }
    for (a, b) in lex.compound_aspects {
        words.insert(a.to_string());
        words.insert(b.to_string());
    }
    words
}

/// Three mutually orthogonal unit vectors (Gram-Schmidt over random draws).
fn class_directions(rng: &mut ChaCha12Rng, dim: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 3, "need at least 3 dimensions for class directions");
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    while dirs.len() < 3 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for prev in &dirs {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // essentially parallel draw; try again
        }
        for x in &mut v {
            *x /= norm;
        }
        dirs.push(v);
    }
    dirs
}

/// Writes word vectors for the lexicon: stable per-word noise plus a
/// shared class direction for sentiment and neutral adjectives, so frozen
/// embeddings carry a learnable polarity signal the way distributional
/// vectors do.
pub fn write_vectors(path: &Path, lex: &Lexicon, dim: usize, seed: u64) -> Result<()> {
    let mut dir_rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, &[b"class-directions"]));
    let dirs = class_directions(&mut dir_rng, dim);
    let class_of = |w: &str| -> Option<usize> {
        if lex.pos_adj.contains(&w) {
            Some(0)
        } else if lex.neg_adj.contains(&w) {
            Some(1)
        } else if lex.neu_adj.contains(&w) {
            Some(2)
        } else {
            None
        }
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for word in lexicon_words(lex) {
        let mut rng =
            ChaCha12Rng::seed_from_u64(sub_seed(seed, &[b"vec", word.as_bytes()]));
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.4..0.4)).collect();
        if let Some(c) = class_of(&word) {
            let scale = 2.0;
            for (x, d) in v.iter_mut().zip(&dirs[c]) {
                *x += scale * d;
            }
        }
        let mut line = word.clone();
        for x in &v {
            line.push(' ');
            line.push_str(&format!("{:.6}", x));
        }
        writeln!(f, "{}", line).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub vectors: PathBuf,
}

/// Generates train.jsonl, test.jsonl and vectors.txt under `out_dir`.
pub fn write_dataset(
    profile: &Profile,
    seed: u64,
    dim: usize,
    out_dir: &Path,
) -> Result<DatasetPaths> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = DatasetPaths {
        train: out_dir.join("train.jsonl"),
        test: out_dir.join("test.jsonl"),
        vectors: out_dir.join("vectors.txt"),
    };
    write_jsonl(&paths.train, &generate(profile, "train", seed))?;
    write_jsonl(&paths.test, &generate(profile, "test", seed))?;
    write_vectors(&paths.vectors, profile.lexicon, dim, seed)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{self, Split};
    use crate::syntax;

    #[test]
    fn profiles_reproduce_all_counts() {
        for p in &PROFILES {
            let train = generate(p, "train", 7);
            let test = generate(p, "test", 7);
            assert_eq!(corpus::polarity_counts(&train), p.train, "{} train", p.name);
            assert_eq!(corpus::polarity_counts(&test), p.test, "{} test", p.name);
        }
    }

    #[test]
    fn every_example_is_a_valid_tree_with_a_sane_span() {
        for p in &PROFILES {
            for split in ["train", "test"] {
                for (i, ex) in generate(p, split, 3).iter().enumerate() {
                    let n = ex.tokens.len();
                    assert_eq!(ex.pos_tags.len(), n, "{}/{}/{}", p.name, split, i);
                    assert_eq!(ex.heads.len(), n);
                    assert_eq!(ex.dep_labels.len(), n);
                    assert!(ex.aspect_from < ex.aspect_to && ex.aspect_to <= n);
                    syntax::validate_tree(&ex.heads)
                        .unwrap_or_else(|e| panic!("{}/{}/{}: {}", p.name, split, i, e));
                }
            }
        }
    }

    #[test]
    fn generated_files_load_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let p = profile("rest14").unwrap();
        let paths = write_dataset(p, 11, 8, dir.path()).unwrap();
        let train = corpus::load_dataset(&paths.train, Split::Train).unwrap();
        let test = corpus::load_dataset(&paths.test, Split::Test).unwrap();
        assert_eq!(corpus::polarity_counts(&train), p.train);
        assert_eq!(corpus::polarity_counts(&test), p.test);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let p = profile("laptop14").unwrap();
        let a = generate(p, "test", 5);
        let b = generate(p, "test", 5);
        let c = generate(p, "test", 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn vectors_cover_vocabulary_and_separate_classes() {
        let dir = tempfile::tempdir().unwrap();
        let p = profile("rest14").unwrap();
        let dim = 24;
        let paths = write_dataset(p, 13, dim, dir.path()).unwrap();
        let train = corpus::load_dataset(&paths.train, Split::Train).unwrap();
        let vocabs = corpus::build_vocabularies(&train).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (table, coverage) =
            crate::encoder::load_pretrained_vectors(&paths.vectors, &vocabs.word, dim, &mut rng)
                .unwrap();
        assert_eq!(coverage, 1.0, "generator lexicon must cover its own vocab");

        let mean_of = |words: &[&str]| -> Vec<f64> {
            let mut m = vec![0.0; dim];
            let mut hit = 0;
            for w in words {
                if let Some(id) = vocabs.word.id_of(w) {
                    hit += 1;
                    for (j, v) in m.iter_mut().enumerate() {
                        *v += table[(id as usize, j)];
                    }
                }
            }
            assert!(hit > 3);
            m.iter().map(|v| v / hit as f64).collect()
        };
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let pos = mean_of(RESTAURANT.pos_adj);
        let neg = mean_of(RESTAURANT.neg_adj);
        let pos2 = mean_of(&RESTAURANT.pos_adj[..6]);
        assert!(
            cos(&pos, &pos2) > 0.8,
            "within-class agreement too weak: {}",
            cos(&pos, &pos2)
        );
        assert!(
            cos(&pos, &neg) < 0.5,
            "classes not separated: {}",
            cos(&pos, &neg)
        );
    }

    #[test]
    fn distractors_put_conflicting_cue_two_hops_away() {
        let p = profile("rest14").unwrap();
        let train = generate(p, "train", 7);
        let is_class = |w: &str, list: &[&str]| list.contains(&w);
        let mut found = 0;
        for ex in &train {
            let dist = syntax::distances(&ex.heads).unwrap();
            let aspect_last = ex.aspect_to - 1;
            let mut near_cue = None;
            let mut far_conflict = false;
            for (i, w) in ex.tokens.iter().enumerate() {
                let class = if is_class(w, RESTAURANT.pos_adj) {
                    Some(Polarity::Positive)
                } else if is_class(w, RESTAURANT.neg_adj) {
                    Some(Polarity::Negative)
                } else {
                    None
                };
                if let Some(c) = class {
                    let d = dist.d[(aspect_last, i)];
                    if d == 1 {
                        near_cue = Some(c);
                    } else if d == 2 {
                        far_conflict = true;
                    }
                }
            }
            if let (Some(_), true) = (near_cue, far_conflict) {
                found += 1;
            }
        }
        assert!(
            found > 200,
            "expected many hop-2 conflict sentences, found {}",
            found
        );
    }
}
